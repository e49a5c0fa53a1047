#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "mtfa/features.hpp"
#include "mtfa/wav.hpp"

using namespace mtfa;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mtfa_feature_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ofstream& out, std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); }

// hand-rolled writer so the reader can be tested against stereo/float inputs
void write_raw_wav(const std::string& path, std::uint16_t format, std::uint16_t channels, std::uint16_t bits,
                   std::uint32_t rate, const std::vector<char>& payload) {
  std::ofstream out(path, std::ios::binary);
  out.write("RIFF", 4);
  put_u32(out, 36 + static_cast<std::uint32_t>(payload.size()));
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, format);
  put_u16(out, channels);
  put_u32(out, rate);
  put_u32(out, rate * channels * bits / 8);
  put_u16(out, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(out, bits);
  out.write("data", 4);
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

AudioClip sine(double freq, double seconds, int rate, double amp = 0.5) {
  AudioClip clip;
  clip.sample_rate = rate;
  const auto n = static_cast<std::size_t>(seconds * rate);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    clip.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate);
  return clip;
}

}  // namespace

TEST_CASE("load_wav scales 16-bit samples by 1/32768") {
  std::vector<char> payload(4);
  const std::int16_t vals[2] = {16384, -16384};
  std::memcpy(payload.data(), vals, 4);
  const auto path = temp_file("pcm16.wav");
  write_raw_wav(path.string(), 1, 1, 16, 8000, payload);
  AudioClip clip = load_wav(path.string());
  REQUIRE(clip.samples.size() == 2);
  CHECK(clip.samples[0] == doctest::Approx(0.5));
  CHECK(clip.samples[1] == doctest::Approx(-0.5));
  CHECK(clip.sample_rate == 8000);
}

TEST_CASE("load_wav averages stereo frames") {
  std::vector<char> payload(8);
  const float vals[2] = {0.2f, 0.4f};
  std::memcpy(payload.data(), vals, 8);
  const auto path = temp_file("stereo_f32.wav");
  write_raw_wav(path.string(), 3, 2, 32, 16000, payload);
  AudioClip clip = load_wav(path.string());
  REQUIRE(clip.samples.size() == 1);
  CHECK(clip.samples[0] == doctest::Approx(0.3));
}

TEST_CASE("load_wav rejects malformed input") {
  const auto trunc = temp_file("trunc.wav");
  {
    std::ofstream out(trunc, std::ios::binary);
    out.write("RIFF\x10\x00\x00\x00WA", 10);  // cut mid-header
  }
  CHECK_THROWS_AS(load_wav(trunc.string()), IoError);

  std::vector<char> payload(4, 0);
  const auto bad = temp_file("pcm8.wav");
  write_raw_wav(bad.string(), 1, 1, 8, 8000, payload);  // unsupported depth
  CHECK_THROWS_AS(load_wav(bad.string()), IoError);

  CHECK_THROWS_AS(load_wav(temp_file("missing.wav").string()), IoError);
}

TEST_CASE("save_wav / load_wav round trip") {
  AudioClip clip = sine(440.0, 0.05, 16000, 0.8);
  const auto path = temp_file("roundtrip.wav");
  save_wav(path.string(), clip);
  AudioClip back = load_wav(path.string());
  REQUIRE(back.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    CHECK(back.samples[i] == doctest::Approx(clip.samples[i]).epsilon(1e-3));
}

TEST_CASE("frame_count matches the framing convention") {
  CHECK(frame_count(1323000, 44100) == 1501);  // 30 s at 44.1 kHz
  CHECK(frame_count(176400, 44100) == 201);    // 4 s
  CHECK(frame_count(882, 44100) == 2);         // exactly one hop
  CHECK(frame_count(0, 44100) == 1);           // empty signal
}

TEST_CASE("frame_count is monotone and adds at most one frame per sub-hop step") {
  const int rate = 16000;
  const std::int64_t hop = 320;
  std::int64_t prev = frame_count(0, rate);
  for (std::int64_t n = 1; n < 5 * hop; n += 37) {
    const std::int64_t t = frame_count(n, rate);
    CHECK(t >= prev);
    const std::int64_t t_plus = frame_count(n + hop - 1, rate);
    CHECK(t_plus - t <= 1);
    prev = t;
  }
}

TEST_CASE("mel_filterbank peaks at 1 and has no empty filters at the default geometry") {
  Tensor fb = mel_filterbank(1025, 128, 44100);
  REQUIRE(fb.shape() == std::vector<std::int64_t>{128, 1025});
  for (int m = 0; m < 128; ++m) {
    real peak = 0;
    real row_sum = 0;
    for (int b = 0; b < 1025; ++b) {
      const real w = fb.at2(m, b);
      CHECK(w >= 0);
      peak = std::max(peak, w);
      row_sum += w;
    }
    CHECK(peak == doctest::Approx(1.0));
    CHECK(row_sum > 0);
  }
}

TEST_CASE("mel_filterbank reports the failing filter when resolution is too low") {
  try {
    mel_filterbank(33, 128, 44100);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("filter") != std::string::npos);
  }
}

TEST_CASE("logmel of digital silence is the log floor everywhere") {
  AudioClip clip;
  clip.sample_rate = 44100;
  clip.samples.assign(44100, 0.0);
  Spectrogram spec = logmel(clip);
  CHECK(spec.num_mels() == 128);
  const real floor_val = static_cast<real>(std::log(1e-10));
  for (std::int64_t i = 0; i < spec.frames.numel(); ++i) CHECK(spec.frames[i] == doctest::Approx(floor_val));
}

TEST_CASE("logmel of a 30 s clip at 44.1 kHz is 1501 x 128") {
  AudioClip clip;
  clip.sample_rate = 44100;
  clip.samples.assign(1323000, 0.0);
  Spectrogram spec = logmel(clip);
  CHECK(spec.num_frames() == 1501);
  CHECK(spec.num_mels() == 128);
  CHECK(spec.hop_seconds == doctest::Approx(0.02));
}

TEST_CASE("pure tone has a stationary mel argmax over complete frames") {
  AudioClip clip = sine(1000.0, 2.0, 44100);
  Spectrogram spec = logmel(clip);
  // complete frames have their full window inside the signal
  const std::int64_t complete =
      (static_cast<std::int64_t>(clip.samples.size()) - 1764) / 882;  // window 1764, hop 882
  REQUIRE(complete > 10);
  std::int64_t ref_argmax = 0;
  for (std::int64_t m = 1; m < spec.num_mels(); ++m)
    if (spec.frames.at2(0, m) > spec.frames.at2(0, ref_argmax)) ref_argmax = m;
  for (std::int64_t t = 1; t <= complete; ++t) {
    std::int64_t am = 0;
    for (std::int64_t m = 1; m < spec.num_mels(); ++m)
      if (spec.frames.at2(t, m) > spec.frames.at2(t, am)) am = m;
    CHECK(am == ref_argmax);
  }
}

TEST_CASE("scaling the waveform shifts log-mel cells by 2 ln alpha") {
  AudioClip clip = sine(523.0, 0.8, 16000, 0.2);
  AudioClip scaled = clip;
  const double alpha = 3.5;
  for (double& s : scaled.samples) s *= alpha;
  Spectrogram a = logmel(clip), b = logmel(scaled);
  const double shift = 2.0 * std::log(alpha);
  const real floor_val = static_cast<real>(std::log(1e-10));
  std::int64_t checked = 0;
  for (std::int64_t i = 0; i < a.frames.numel(); ++i) {
    if (a.frames[i] <= floor_val + real(1) || b.frames[i] <= floor_val + real(1)) continue;
    CHECK(static_cast<double>(b.frames[i] - a.frames[i]) == doctest::Approx(shift).epsilon(1e-6));
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("logmel is invariant to appended silence except for the appended rows") {
  AudioClip clip = sine(440.0, 0.5, 16000, 0.4);
  AudioClip padded = clip;
  padded.samples.resize(clip.samples.size() + 3 * 320, 0.0);  // 3 hops of silence
  Spectrogram a = logmel(clip), b = logmel(padded);
  CHECK(b.num_frames() == a.num_frames() + 3);
  for (std::int64_t t = 0; t < a.num_frames(); ++t)
    for (std::int64_t m = 0; m < a.num_mels(); ++m) CHECK(b.frames.at2(t, m) == a.frames.at2(t, m));
  const real floor_val = static_cast<real>(std::log(1e-10));
  for (std::int64_t t = a.num_frames(); t < b.num_frames(); ++t)
    for (std::int64_t m = 0; m < b.num_mels(); ++m) CHECK(b.frames.at2(t, m) == doctest::Approx(floor_val));
}

TEST_CASE("spectrogram cache round trip is exact at f32 and idempotent on disk") {
  AudioClip clip = sine(700.0, 0.3, 16000, 0.6);
  Spectrogram spec = logmel(clip);
  const auto path = temp_file("cache.spec");
  save_spectrogram(path.string(), spec);
  Spectrogram back = load_spectrogram(path.string());
  CHECK(back.num_frames() == spec.num_frames());
  CHECK(back.num_mels() == spec.num_mels());
  CHECK(back.hop_seconds == spec.hop_seconds);
  for (std::int64_t i = 0; i < spec.frames.numel(); ++i)
    CHECK(back.frames[i] == static_cast<real>(static_cast<float>(spec.frames[i])));

  const auto path2 = temp_file("cache2.spec");
  save_spectrogram(path2.string(), spec);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  CHECK_THROWS_AS(load_spectrogram(temp_file("nonexistent.spec").string()), IoError);
}
