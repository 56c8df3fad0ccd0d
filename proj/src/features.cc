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

#include "accent/features.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "accent/error.h"
#include "accent/tensor_file.h"

namespace accent {

namespace {

// Slaney mel scale constants.
constexpr double kMelLinearStep = 200.0 / 3.0;
constexpr double kMelLogStartHz = 1000.0;
constexpr double kMelLogStart = kMelLogStartHz / kMelLinearStep;
const double kMelLogStep = std::log(6.4) / 27.0;

// FFTW's planner is not thread-safe, execution on fresh arrays is. Plans are
// created once per size under a lock and shared afterwards.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    if (!plan_) throw Error("fftw planning failed for n=" + std::to_string(n));
  }
  ~RealFft() { fftw_destroy_plan(plan_); }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void execute(double* in, fftw_complex* out) const {
    fftw_execute_dft_r2c(plan_, in, out);
  }
  int size() const { return n_; }

 private:
  int n_;
  fftw_plan plan_;
};

const RealFft& fft_for(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<RealFft>> plans;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = plans[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

std::vector<double> periodic_hann(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

// Sample at original index i, zero outside [0, len).
double sample_at(const Waveform& wave, long i) {
  if (i < 0 || i >= static_cast<long>(wave.samples.size())) return 0.0;
  return wave.samples[static_cast<std::size_t>(i)];
}

// Original-signal index of the first sample of frame t's n_fft block.
long frame_start(const MelConfig& cfg, int t) {
  const long start = static_cast<long>(t) * cfg.hop_length;
  return cfg.center ? start - cfg.n_fft / 2 : start;
}

void check_wave_for(const Waveform& wave, const MelConfig& cfg) {
  wave.validate();
  cfg.validate();
  if (wave.sample_rate_hz != cfg.sample_rate_hz) {
    throw Error("sample rate mismatch: waveform " +
                std::to_string(wave.sample_rate_hz) + " Hz, config " +
                std::to_string(cfg.sample_rate_hz) + " Hz");
  }
  const std::size_t need =
      cfg.center ? static_cast<std::size_t>(cfg.win_length)
                 : static_cast<std::size_t>(cfg.n_fft);
  if (wave.samples.size() < need) {
    throw Error("input too short: " + std::to_string(wave.samples.size()) +
                " samples, need at least " + std::to_string(need));
  }
}

// YIN period estimate for one frame; returns 0 for unvoiced.
double yin_pitch(const std::vector<double>& seg, int window, int tau_min,
                 int tau_max, double threshold, int sample_rate) {
  double power = 0.0;
  for (int j = 0; j < window; ++j) power += seg[j] * seg[j];
  if (power / window < 1e-14) return 0.0;

  std::vector<double> diff(tau_max + 2, 0.0);
  for (int tau = 1; tau <= tau_max + 1; ++tau) {
    double acc = 0.0;
    for (int j = 0; j < window; ++j) {
      const double d = seg[j] - seg[j + tau];
      acc += d * d;
    }
    diff[tau] = acc;
  }
  std::vector<double> cmnd(tau_max + 2, 1.0);
  double running = 0.0;
  for (int tau = 1; tau <= tau_max + 1; ++tau) {
    running += diff[tau];
    cmnd[tau] = running > 0.0 ? diff[tau] * tau / running : 1.0;
  }

  int best = -1;
  for (int tau = tau_min; tau <= tau_max; ++tau) {
    if (cmnd[tau] < threshold) {
      while (tau + 1 <= tau_max && cmnd[tau + 1] < cmnd[tau]) ++tau;
      best = tau;
      break;
    }
  }
  if (best < 0) return 0.0;

  double period = best;
  if (best > 1 && best + 1 <= tau_max + 1) {
    const double a = cmnd[best - 1];
    const double b = cmnd[best];
    const double c = cmnd[best + 1];
    const double denom = a - 2.0 * b + c;
    if (denom > 0.0) period = best + 0.5 * (a - c) / denom;
  }
  return static_cast<double>(sample_rate) / period;
}

}  // namespace

void Waveform::validate() const {
  if (sample_rate_hz <= 0) throw Error("waveform sample rate must be > 0");
  if (samples.empty()) throw Error("waveform is empty");
  for (float s : samples) {
    if (!std::isfinite(s)) throw Error("waveform contains non-finite samples");
  }
}

void MelConfig::validate() const {
  if (sample_rate_hz <= 0 || n_fft <= 0 || hop_length <= 0 ||
      win_length <= 0 || n_mels <= 0) {
    throw Error("mel config: sizes and rates must be positive");
  }
  if (!(hop_length <= win_length && win_length <= n_fft)) {
    throw Error("mel config: need hop_length <= win_length <= n_fft");
  }
  if (!(0.0 <= fmin_hz && fmin_hz < fmax_hz &&
        fmax_hz <= sample_rate_hz / 2.0)) {
    throw Error("mel config: need 0 <= fmin < fmax <= sample_rate/2");
  }
  if (!(log_floor > 0.0)) throw Error("mel config: log_floor must be > 0");
}

int MelConfig::num_frames(std::size_t num_samples) const {
  const auto len = static_cast<long>(num_samples);
  if (center) return static_cast<int>(1 + len / hop_length);
  if (len < n_fft) return 0;
  return static_cast<int>(1 + (len - n_fft) / hop_length);
}

std::string_view to_string(FeatureKind kind) {
  return kind == FeatureKind::kMel ? "mel" : "pretrained";
}

FeatureKind feature_kind_from_string(std::string_view name) {
  if (name == "mel") return FeatureKind::kMel;
  if (name == "pretrained") return FeatureKind::kPretrained;
  throw Error("unknown feature kind '" + std::string(name) +
              "' (expected mel or pretrained)");
}

double hz_to_mel(double hz) {
  if (hz < kMelLogStartHz) return hz / kMelLinearStep;
  return kMelLogStart + std::log(hz / kMelLogStartHz) / kMelLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMelLogStart) return mel * kMelLinearStep;
  return kMelLogStartHz * std::exp(kMelLogStep * (mel - kMelLogStart));
}

Matrix mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const int bins = cfg.n_fft / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  }
  Matrix fb = Matrix::Zero(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], mid = edges[m + 1], right = edges[m + 2];
    const double norm = 2.0 / (right - left);
    for (int k = 0; k < bins; ++k) {
      const double f =
          static_cast<double>(k) * cfg.sample_rate_hz / cfg.n_fft;
      const double up = (f - left) / (mid - left);
      const double down = (right - f) / (right - mid);
      fb(m, k) = std::max(0.0, std::min(up, down)) * norm;
    }
  }
  return fb;
}

Matrix stft_magnitude(const Waveform& wave, const MelConfig& cfg) {
  check_wave_for(wave, cfg);
  const int frames = cfg.num_frames(wave.samples.size());
  const int bins = cfg.n_fft / 2 + 1;
  const int offset = (cfg.n_fft - cfg.win_length) / 2;
  const std::vector<double> window = periodic_hann(cfg.win_length);
  const RealFft& fft = fft_for(cfg.n_fft);

  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(cfg.n_fft));
  std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(bins));
  Matrix mag(frames, bins);
  for (int t = 0; t < frames; ++t) {
    const long start = frame_start(cfg, t);
    std::fill(in.get(), in.get() + cfg.n_fft, 0.0);
    for (int j = 0; j < cfg.win_length; ++j) {
      in.get()[offset + j] = window[j] * sample_at(wave, start + offset + j);
    }
    fft.execute(in.get(), out.get());
    for (int k = 0; k < bins; ++k) {
      mag(t, k) = std::hypot(out.get()[k][0], out.get()[k][1]);
    }
  }
  return mag;
}

AcousticFeatures compute_mel(const Waveform& wave, const MelConfig& cfg) {
  const Matrix mag = stft_magnitude(wave, cfg);
  const Matrix fb = mel_filterbank(cfg);
  Matrix mel(mag.rows(), cfg.n_mels);
  mel.noalias() = mag * fb.transpose();
  mel = mel.cwiseMax(cfg.log_floor).array().log().matrix();
  return {std::move(mel), FeatureKind::kMel, cfg.frame_rate_hz()};
}

ProsodyContours extract_prosody(const Waveform& wave, const MelConfig& cfg,
                                const ProsodyConfig& pcfg) {
  if (!(0.0 < pcfg.f0_min_hz && pcfg.f0_min_hz < pcfg.f0_max_hz)) {
    throw Error("prosody config: need 0 < f0_min < f0_max");
  }
  const Matrix mag = stft_magnitude(wave, cfg);
  const int frames = static_cast<int>(mag.rows());

  ProsodyContours out;
  out.energy.resize(frames);
  for (int t = 0; t < frames; ++t) out.energy[t] = mag.row(t).norm();

  const int sr = cfg.sample_rate_hz;
  const int tau_min =
      std::max(2, static_cast<int>(std::floor(sr / pcfg.f0_max_hz)));
  const int tau_max = static_cast<int>(std::ceil(sr / pcfg.f0_min_hz));
  const int window = cfg.win_length;
  std::vector<double> seg(window + tau_max + 2);
  out.pitch.resize(frames);
  for (int t = 0; t < frames; ++t) {
    const long centre = frame_start(cfg, t) + cfg.n_fft / 2;
    const long start = centre - window / 2;
    for (std::size_t j = 0; j < seg.size(); ++j) {
      seg[j] = sample_at(wave, start + static_cast<long>(j));
    }
    double f0 = yin_pitch(seg, window, tau_min, tau_max,
                          pcfg.voicing_threshold, sr);
    if (f0 > 0.0 && (f0 < 0.9 * pcfg.f0_min_hz || f0 > 1.1 * pcfg.f0_max_hz)) {
      f0 = 0.0;
    }
    out.pitch[t] = f0;
  }
  return out;
}

Matrix resample_frames(const Matrix& frames, Eigen::Index target_frames) {
  if (target_frames < 1) throw Error("resample target must be >= 1 frame");
  const Eigen::Index src_frames = frames.rows();
  if (src_frames < 1) throw Error("cannot resample an empty matrix");
  if (src_frames == target_frames) return frames;
  Matrix out(target_frames, frames.cols());
  const double ratio =
      static_cast<double>(src_frames) / static_cast<double>(target_frames);
  for (Eigen::Index j = 0; j < target_frames; ++j) {
    double pos = (static_cast<double>(j) + 0.5) * ratio - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src_frames - 1));
    const auto i0 = static_cast<Eigen::Index>(std::floor(pos));
    const Eigen::Index i1 = std::min(i0 + 1, src_frames - 1);
    const double w = pos - static_cast<double>(i0);
    out.row(j) = (1.0 - w) * frames.row(i0) + w * frames.row(i1);
  }
  return out;
}

AcousticFeatures load_pretrained_features(const std::filesystem::path& path,
                                          Eigen::Index target_frames,
                                          Eigen::Index expected_dim,
                                          double frame_rate_hz) {
  if (target_frames < 1) throw Error("target frame count must be >= 1");
  const FloatTensor t = load_tensor(path);
  if (t.dims.size() != 2 || t.dims[0] == 0 || t.dims[1] == 0) {
    throw Error("bad feature file: expected a non-empty 2-D tensor in " +
                path.string());
  }
  if (static_cast<Eigen::Index>(t.dims[1]) != expected_dim) {
    throw Error("feature dim mismatch: " + path.string() + " has D=" +
                std::to_string(t.dims[1]) + ", configured " +
                std::to_string(expected_dim));
  }
  Matrix stored(t.dims[0], t.dims[1]);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (!std::isfinite(t.data[i])) {
      throw Error("bad feature file: non-finite value in " + path.string());
    }
    stored.data()[i] = t.data[i];
  }
  return {resample_frames(stored, target_frames), FeatureKind::kPretrained,
          frame_rate_hz};
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  FloatTensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()),
            static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    t.data[i] = static_cast<float>(m.data()[i]);
  }
  save_tensor(path, t);
}

Matrix load_matrix(const std::filesystem::path& path) {
  const FloatTensor t = load_tensor(path);
  if (t.dims.size() != 2) {
    throw Error("bad feature file: expected 2-D tensor in " + path.string());
  }
  Matrix m(t.dims[0], t.dims[1]);
  for (std::size_t i = 0; i < t.data.size(); ++i) m.data()[i] = t.data[i];
  return m;
}

void save_vector(const std::filesystem::path& path,
                 const std::vector<double>& v) {
  FloatTensor t;
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.data.assign(v.begin(), v.end());
  save_tensor(path, t);
}

std::vector<double> load_vector(const std::filesystem::path& path) {
  const FloatTensor t = load_tensor(path);
  if (t.dims.size() != 1) {
    throw Error("bad feature file: expected 1-D tensor in " + path.string());
  }
  return {t.data.begin(), t.data.end()};
}

}  // namespace accent
