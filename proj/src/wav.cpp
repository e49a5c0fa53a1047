#include "mtfa/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mtfa/common.hpp"

namespace mtfa {

namespace {

static_assert(std::endian::native == std::endian::little, "wav i/o assumes a little-endian host");

template <typename T>
T read_le(std::istream& in, const std::string& path, const char* what) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError(path + ": truncated while reading " + what);
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

double AudioClip::rms() const {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (double x : samples) s += x * x;
  return std::sqrt(s / static_cast<double>(samples.size()));
}

AudioClip load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");

  char tag[4];
  if (!in.read(tag, 4) || std::memcmp(tag, "RIFF", 4) != 0) throw IoError(path + ": not a RIFF file");
  read_le<std::uint32_t>(in, path, "RIFF size");
  if (!in.read(tag, 4) || std::memcmp(tag, "WAVE", 4) != 0) throw IoError(path + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<char> data;
  bool have_data = false;

  while (in.read(tag, 4)) {
    const std::uint32_t size = read_le<std::uint32_t>(in, path, "chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) throw IoError(path + ": fmt chunk too small");
      format = read_le<std::uint16_t>(in, path, "format");
      channels = read_le<std::uint16_t>(in, path, "channels");
      rate = read_le<std::uint32_t>(in, path, "sample rate");
      read_le<std::uint32_t>(in, path, "byte rate");
      read_le<std::uint16_t>(in, path, "block align");
      bits = read_le<std::uint16_t>(in, path, "bits per sample");
      in.ignore(size - 16);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(size);
      if (!in.read(data.data(), size)) throw IoError(path + ": truncated data chunk");
      have_data = true;
    } else {
      in.ignore(size);
    }
    if (size % 2) in.ignore(1);  // chunk padding
  }
  if (!have_fmt) throw IoError(path + ": missing fmt chunk");
  if (!have_data) throw IoError(path + ": missing data chunk");
  if (channels != 1 && channels != 2) throw IoError(path + ": unsupported channel count " + std::to_string(channels));
  if (rate == 0) throw IoError(path + ": zero sample rate");

  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw IoError(path + ": unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                  " bits); expected PCM16 or float32");

  const std::size_t bytes_per_sample = pcm16 ? 2 : 4;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t n_frames = data.size() / frame_bytes;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t ch = 0; ch < channels; ++ch) {
      const char* p = data.data() + i * frame_bytes + ch * bytes_per_sample;
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        acc += static_cast<double>(s) / 32768.0;
      } else {
        float f;
        std::memcpy(&f, p, 4);
        acc += static_cast<double>(f);
      }
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

void save_wav(const std::string& path, const AudioClip& clip) {
  MTFA_REQUIRE(clip.sample_rate > 0, "save_wav: sample rate must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, 1);  // PCM
  write_le<std::uint16_t>(out, 1);  // mono
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate * 2));
  write_le<std::uint16_t>(out, 2);
  write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_bytes);
  for (double x : clip.samples) {
    const double clamped = std::clamp(x, -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::lrint(clamped * 32767.0));
    write_le<std::int16_t>(out, s);
  }
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace mtfa
