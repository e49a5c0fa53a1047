#include "mtfa/features.hpp"

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "mtfa/common.hpp"

namespace mtfa {

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

int next_pow2_at_least(int n) {
  int p = 1;
  while (p < n) p *= 2;
  return p;
}

// One-shot r2c power spectrum for a fixed FFT size.
class PowerSpectrum {
 public:
  explicit PowerSpectrum(int n_fft) : n_fft_(n_fft) {
    in_ = fftw_alloc_real(static_cast<std::size_t>(n_fft));
    out_ = fftw_alloc_complex(static_cast<std::size_t>(n_fft / 2 + 1));
    plan_ = fftw_plan_dft_r2c_1d(n_fft, in_, out_, FFTW_ESTIMATE);
  }
  ~PowerSpectrum() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  PowerSpectrum(const PowerSpectrum&) = delete;
  PowerSpectrum& operator=(const PowerSpectrum&) = delete;

  // windowed must hold n_valid samples; the rest is zero-padded.
  void compute(const double* windowed, int n_valid, std::vector<double>& power) {
    std::memcpy(in_, windowed, sizeof(double) * static_cast<std::size_t>(n_valid));
    std::memset(in_ + n_valid, 0, sizeof(double) * static_cast<std::size_t>(n_fft_ - n_valid));
    fftw_execute(plan_);
    power.resize(static_cast<std::size_t>(n_fft_ / 2 + 1));
    for (int i = 0; i <= n_fft_ / 2; ++i)
      power[static_cast<std::size_t>(i)] = out_[i][0] * out_[i][0] + out_[i][1] * out_[i][1];
  }

 private:
  int n_fft_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

static_assert(std::endian::native == std::endian::little, "spectrogram cache assumes a little-endian host");

}  // namespace

std::int64_t frame_count(std::int64_t n_samples, int sample_rate, double hop_seconds) {
  MTFA_REQUIRE(sample_rate > 0, "frame_count: sample rate must be positive");
  const auto hop = static_cast<std::int64_t>(std::lround(hop_seconds * sample_rate));
  MTFA_REQUIRE(hop > 0, "frame_count: hop must be at least one sample");
  return n_samples / hop + 1;
}

Tensor mel_filterbank(int n_fft_bins, int n_mels, int sample_rate) {
  MTFA_REQUIRE(n_fft_bins > 1 && n_mels > 0 && sample_rate > 0, "mel_filterbank: invalid arguments");
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  // n_mels + 2 boundary points: each filter i peaks at point i+1 and spans
  // points i .. i+2.
  std::vector<double> hz_points(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    hz_points[static_cast<std::size_t>(i)] = mel_to_hz(mel_max * i / (n_mels + 1));

  // bin i corresponds to frequency i * nyquist / (n_fft_bins - 1)
  const double bin_hz = nyquist / (n_fft_bins - 1);
  Tensor fb({n_mels, n_fft_bins});
  for (int m = 0; m < n_mels; ++m) {
    const double lo = hz_points[static_cast<std::size_t>(m)];
    const double center = hz_points[static_cast<std::size_t>(m) + 1];
    const double hi = hz_points[static_cast<std::size_t>(m) + 2];
    double peak = 0.0;
    for (int b = 0; b < n_fft_bins; ++b) {
      const double f = b * bin_hz;
      double w = 0.0;
      if (f > lo && f < center)
        w = (f - lo) / (center - lo);
      else if (f >= center && f < hi)
        w = (hi - f) / (hi - center);
      fb.at2(m, b) = static_cast<real>(w);
      peak = std::max(peak, w);
    }
    if (peak <= 0.0)
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " has no positive FFT bin; reduce n_mels or increase FFT size");
    for (int b = 0; b < n_fft_bins; ++b) fb.at2(m, b) = static_cast<real>(fb.at2(m, b) / peak);
  }
  return fb;
}

Spectrogram logmel(const AudioClip& clip, const FeatureConfig& cfg) {
  MTFA_REQUIRE(clip.sample_rate > 0, "logmel: clip has no sample rate");
  const int rate = clip.sample_rate;
  const auto hop = static_cast<std::int64_t>(std::lround(cfg.hop_seconds * rate));
  const auto window = static_cast<std::int64_t>(std::lround(cfg.window_seconds * rate));
  MTFA_REQUIRE(hop > 0 && window > 0, "logmel: hop and window must be at least one sample");
  const std::int64_t t_total = frame_count(static_cast<std::int64_t>(clip.samples.size()), rate, cfg.hop_seconds);
  const int n_fft = next_pow2_at_least(static_cast<int>(window));
  const int n_bins = n_fft / 2 + 1;

  std::vector<double> hamming(static_cast<std::size_t>(window));
  for (std::int64_t i = 0; i < window; ++i)
    hamming[static_cast<std::size_t>(i)] =
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(window - 1));

  const Tensor fb = mel_filterbank(n_bins, cfg.n_mels, rate);
  PowerSpectrum fft(n_fft);

  Spectrogram spec;
  spec.hop_seconds = static_cast<double>(hop) / rate;
  spec.window_seconds = static_cast<double>(window) / rate;
  spec.frames = Tensor({t_total, cfg.n_mels});

  std::vector<double> frame(static_cast<std::size_t>(window));
  std::vector<double> power;
  const std::int64_t n = static_cast<std::int64_t>(clip.samples.size());
  for (std::int64_t t = 0; t < t_total; ++t) {
    const std::int64_t start = t * hop;
    for (std::int64_t i = 0; i < window; ++i) {
      const std::int64_t s = start + i;
      frame[static_cast<std::size_t>(i)] =
          (s < n ? clip.samples[static_cast<std::size_t>(s)] : 0.0) * hamming[static_cast<std::size_t>(i)];
    }
    fft.compute(frame.data(), static_cast<int>(window), power);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const real* w = fb.data() + static_cast<std::int64_t>(m) * n_bins;
      for (int b = 0; b < n_bins; ++b) e += static_cast<double>(w[b]) * power[static_cast<std::size_t>(b)];
      spec.frames.at2(t, m) = static_cast<real>(std::log(std::max(e, cfg.log_floor)));
    }
  }
  return spec;
}

void save_spectrogram(const std::string& path, const Spectrogram& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write("MTFASPEC", 8);
  const std::uint32_t version = 1;
  const auto t = static_cast<std::uint32_t>(spec.num_frames());
  const auto d = static_cast<std::uint32_t>(spec.num_mels());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  out.write(reinterpret_cast<const char*>(&spec.hop_seconds), 8);
  for (std::int64_t i = 0; i < spec.frames.numel(); ++i) {
    const float v = static_cast<float>(spec.frames[i]);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (!out) throw IoError(path + ": write failed");
}

Spectrogram load_spectrogram(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "MTFASPEC", 8) != 0)
    throw IoError(path + ": not a spectrogram cache file");
  std::uint32_t version = 0, t = 0, d = 0;
  double hop = 0.0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  in.read(reinterpret_cast<char*>(&hop), 8);
  if (!in) throw IoError(path + ": truncated header");
  if (version != 1) throw IoError(path + ": unsupported cache version " + std::to_string(version));
  Spectrogram spec;
  spec.hop_seconds = hop;
  spec.window_seconds = 2.0 * hop;
  spec.frames = Tensor({static_cast<std::int64_t>(t), static_cast<std::int64_t>(d)});
  for (std::int64_t i = 0; i < spec.frames.numel(); ++i) {
    float v;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError(path + ": truncated data");
    spec.frames[i] = static_cast<real>(v);
  }
  return spec;
}

}  // namespace mtfa
