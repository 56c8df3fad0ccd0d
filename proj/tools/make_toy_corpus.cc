// Copyright 2026 The nar-accent Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Writes the synthetic corpus plus a matching experiment config.

#include <iostream>

#include <CLI11.hpp>

#include "accent/toy_corpus.h"
#include "accent/util.h"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic native/accented corpus"};
  std::string root, config_out;
  accent::ToyCorpusConfig cfg;
  app.add_option("root", root, "Output directory")->required();
  app.add_option("--config-out", config_out,
                 "Where to write the experiment config (default root/toy.json)");
  app.add_option("--native", cfg.native_speakers);
  app.add_option("--accented", cfg.accented_speakers);
  app.add_option("--sentences", cfg.sentences);
  app.add_option("--seed", cfg.seed);
  CLI11_PARSE(app, argc, argv);
  try {
    const auto info = accent::write_toy_corpus(root, cfg);
    const auto config = accent::toy_experiment_config(info, cfg);
    const std::filesystem::path out =
        config_out.empty() ? info.root / "toy.json" : std::filesystem::path(config_out);
    accent::write_file(out, config.dump(2) + "\n");
    std::cout << info.utterances << " utterances in " << info.root.string()
              << "; config " << out.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
