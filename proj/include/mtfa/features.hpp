#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtfa/tensor.hpp"
#include "mtfa/wav.hpp"

namespace mtfa {

// T x D log-mel energies. Frame t covers [t*hop, t*hop + window) seconds.
struct Spectrogram {
  Tensor frames;  // T x D
  double hop_seconds = 0.020;
  double window_seconds = 0.040;

  std::int64_t num_frames() const { return frames.rank() == 2 ? frames.dim(0) : 0; }
  std::int64_t num_mels() const { return frames.rank() == 2 ? frames.dim(1) : 0; }
};

struct FeatureConfig {
  double hop_seconds = 0.020;
  double window_seconds = 0.040;
  int n_mels = 128;
  double log_floor = 1e-10;
};

// floor(n_samples / hop) + 1; the tail is zero-padded so every frame is
// complete. 30 s at 44.1 kHz gives 1501 frames.
std::int64_t frame_count(std::int64_t n_samples, int sample_rate, double hop_seconds = 0.020);

// Triangular filters with peaks at mel-equally-spaced centers spanning
// 0 .. rate/2, amplitude-normalized so each row's maximum is exactly 1.
// Throws ConfigError naming the first empty filter if resolution is too low.
Tensor mel_filterbank(int n_fft_bins, int n_mels, int sample_rate);

Spectrogram logmel(const AudioClip& clip, const FeatureConfig& cfg = {});

// Binary cache: magic "MTFASPEC", version u32, T u32, D u32, hop f64,
// then T*D little-endian f32 row-major.
void save_spectrogram(const std::string& path, const Spectrogram& spec);
Spectrogram load_spectrogram(const std::string& path);

}  // namespace mtfa
