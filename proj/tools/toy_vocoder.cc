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

// Stand-in for a neural vocoder behind the adapter contract
// "toy_vocoder MEL.acft OUT.wav": one sinusoid per mel band at the band
// centre, amplitude following exp(log-mel), interpolated between frames.
// Intelligibility is not the point; it produces a valid waveform of the
// right length.

#include <cmath>
#include <iostream>
#include <numbers>

#include <CLI11.hpp>

#include "accent/features.h"
#include "accent/wav.h"

int main(int argc, char** argv) {
  CLI::App app{"Additive-synthesis stub vocoder"};
  std::string in, out;
  accent::MelConfig mel;
  mel.sample_rate_hz = 16000;
  mel.hop_length = 200;
  app.add_option("mel", in)->required();
  app.add_option("wav", out)->required();
  app.add_option("--sample-rate", mel.sample_rate_hz);
  app.add_option("--hop", mel.hop_length);
  app.add_option("--fmin", mel.fmin_hz);
  app.add_option("--fmax", mel.fmax_hz);
  CLI11_PARSE(app, argc, argv);
  try {
    const accent::Matrix m = accent::load_matrix(in);
    if (m.rows() == 0 || m.cols() == 0) throw std::runtime_error("empty mel");
    const auto bands = m.cols();
    const double lo = accent::hz_to_mel(mel.fmin_hz);
    const double hi = accent::hz_to_mel(std::min(mel.fmax_hz, mel.sample_rate_hz / 2.0));
    std::vector<double> freq(bands);
    for (Eigen::Index b = 0; b < bands; ++b) {
      freq[b] = accent::mel_to_hz(lo + (hi - lo) * (b + 1.0) / (bands + 1.0));
    }
    const std::size_t n = static_cast<std::size_t>(m.rows()) * mel.hop_length;
    std::vector<double> y(n, 0.0);
    for (Eigen::Index b = 0; b < bands; ++b) {
      const double w = 2.0 * std::numbers::pi * freq[b] / mel.sample_rate_hz;
      for (std::size_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i) / mel.hop_length;
        const auto t0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(pos), m.rows() - 1);
        const auto t1 = std::min<Eigen::Index>(t0 + 1, m.rows() - 1);
        const double f = pos - static_cast<double>(t0);
        const double a = (1.0 - f) * std::exp(m(t0, b)) + f * std::exp(m(t1, b));
        y[i] += a * std::sin(w * static_cast<double>(i) + b);
      }
    }
    double peak = 1e-12;
    for (double v : y) peak = std::max(peak, std::abs(v));
    accent::Waveform wave;
    wave.sample_rate_hz = mel.sample_rate_hz;
    wave.samples.reserve(n);
    for (double v : y) wave.samples.push_back(static_cast<float>(0.5 * v / peak));
    accent::write_wav(out, wave);
  } catch (const std::exception& e) {
    std::cerr << "toy_vocoder: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
