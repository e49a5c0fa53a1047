#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtfa {

// Mono audio in [-1, 1]; stereo sources are averaged at load time.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
  double rms() const;
};

// RIFF/WAVE reader: PCM 16-bit or IEEE float 32-bit, 1 or 2 channels.
// 16-bit samples are scaled by 1/32768.
AudioClip load_wav(const std::string& path);

// 16-bit PCM writer (values clamped to [-1, 1]).
void save_wav(const std::string& path, const AudioClip& clip);

}  // namespace mtfa
