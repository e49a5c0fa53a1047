#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mtfa/synthesis.hpp"

using namespace mtfa;
using namespace mtfa::synthesis;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mtfa_synth_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::map<std::string, std::vector<SourceClip>> tiny_event_pools(int rate) {
  std::map<std::string, std::vector<SourceClip>> pools;
  pools["beep"] = {{"beep0.wav", synth_event(EventKind::beep, 0.4, rate, 1)},
                   {"beep1.wav", synth_event(EventKind::beep, 0.5, rate, 2)}};
  pools["burst"] = {{"burst0.wav", synth_event(EventKind::burst, 0.3, rate, 3)}};
  return pools;
}

std::vector<SourceClip> tiny_backgrounds(int rate) {
  return {{"bg0.wav", synth_background(2.0, rate, 10)}, {"bg1.wav", synth_background(1.5, rate, 11)}};
}

}  // namespace

TEST_CASE("synthetic events have their configured durations and 0.9 peak") {
  const int rate = 16000;
  for (EventKind kind : {EventKind::beep, EventKind::burst, EventKind::sweep}) {
    AudioClip clip = synth_event(kind, default_event_duration(kind), rate, 42);
    CHECK(clip.duration_seconds() == doctest::Approx(default_event_duration(kind)).epsilon(1e-3));
    double peak = 0;
    for (double s : clip.samples) peak = std::max(peak, std::abs(s));
    CHECK(peak == doctest::Approx(0.9));
  }
  CHECK(default_event_duration(EventKind::beep) == doctest::Approx(2.25));
  CHECK(default_event_duration(EventKind::burst) == doctest::Approx(1.32));
  CHECK(default_event_duration(EventKind::sweep) == doctest::Approx(1.16));
}

TEST_CASE("burst energy decays below 1% of its initial level") {
  AudioClip burst = synth_event(EventKind::burst, 1.32, 16000, 7);
  const std::size_t head = burst.samples.size() / 20;
  double head_energy = 0, tail_energy = 0;
  for (std::size_t i = 0; i < head; ++i) {
    head_energy += burst.samples[i] * burst.samples[i];
    const std::size_t j = burst.samples.size() - 1 - i;
    tail_energy += burst.samples[j] * burst.samples[j];
  }
  CHECK(tail_energy < 0.01 * head_energy);
}

TEST_CASE("synthetic background hits its RMS target and decorrelates across seeds") {
  AudioClip a = synth_background(2.0, 16000, 1);
  AudioClip b = synth_background(2.0, 16000, 2);
  CHECK(a.rms() > 0.045);
  CHECK(a.rms() < 0.055);
  double dot = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) dot += a.samples[i] * b.samples[i];
  const double corr = dot / (a.samples.size() * a.rms() * b.rms());
  CHECK(std::abs(corr) < 0.1);
}

TEST_CASE("synth output is deterministic per seed") {
  AudioClip a = synth_event(EventKind::sweep, 1.0, 16000, 5);
  AudioClip b = synth_event(EventKind::sweep, 1.0, 16000, 5);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i] == b.samples[i]);
}

TEST_CASE("mix reaches the requested event-to-background ratio") {
  const int rate = 16000;
  AudioClip event = synth_event(EventKind::beep, 0.5, rate, 3);
  AudioClip bg = synth_background(2.0, rate, 4);

  SUBCASE("0 dB equalizes the RMS") {
    MixResult r = mix(event, bg, 0.0, 0.25, "beep");
    AudioClip scaled = event;
    for (double& s : scaled.samples) s *= r.scale;
    CHECK(scaled.rms() == doctest::Approx(bg.rms()).epsilon(1e-9));
  }
  SUBCASE("-6 dB scales the event RMS by 10^-0.3") {
    MixResult r = mix(event, bg, -6.0, 0.25, "beep");
    CHECK(r.scale * event.rms() == doctest::Approx(bg.rms() * std::pow(10.0, -0.3)).epsilon(1e-9));
  }
  SUBCASE("annotation matches the placement exactly") {
    MixResult r = mix(event, bg, 6.0, 0.75, "beep");
    CHECK(r.annotation.onset == doctest::Approx(0.75));
    CHECK(r.annotation.offset - r.annotation.onset == doctest::Approx(event.duration_seconds()));
    CHECK(r.annotation.label == "beep");
  }
  SUBCASE("events that do not fit are rejected") {
    CHECK_THROWS_AS(mix(event, bg, 0.0, 1.8, "beep"), ContractError);
  }
}

TEST_CASE("mixture onsets are uniform over the feasible range") {
  DatasetSpec spec;
  spec.seed = 77;
  spec.presence_prob = 1.0;
  const std::vector<double> ev_dur = {0.5};
  const std::vector<double> bg_dur = {2.0};
  const double feasible = bg_dur[0] - ev_dur[0];
  double sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto plan = plan_mixture(spec, "beep", 0, i, 1, ev_dur, bg_dur);
    CHECK(plan.onset_s >= 0.0);
    CHECK(plan.onset_s <= feasible);
    sum += plan.onset_s;
  }
  const double mean = sum / n;
  const double se = feasible / std::sqrt(12.0) / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mean - feasible / 2.0) < 3.0 * se);
}

TEST_CASE("presence probability controls event-free mixtures") {
  DatasetSpec spec;
  spec.seed = 5;
  spec.presence_prob = 0.99;
  int absent = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    if (!plan_mixture(spec, "beep", 0, i, 2, {0.4, 0.5}, {2.0}).present) ++absent;
  const double sigma = std::sqrt(n * 0.99 * 0.01);
  CHECK(std::abs(absent - n * 0.01) < 3.0 * sigma);

  spec.presence_prob = 1.0;
  for (int i = 0; i < 500; ++i) CHECK(plan_mixture(spec, "beep", 0, i, 2, {0.4, 0.5}, {2.0}).present);
}

TEST_CASE("generate_dataset audit: stored scale factors reproduce the EBR") {
  const int rate = 16000;
  const auto dir = temp_dir("audit");
  DatasetSpec spec;
  spec.seed = 123;
  auto result = generate_dataset(tiny_event_pools(rate), tiny_backgrounds(rate), 40, spec, dir.string());
  int audited = 0;
  for (const auto& m : result.mixtures) {
    if (!m.present || m.clipped) continue;
    const double ebr_back = 20.0 * std::log10(m.scale * m.event_rms / m.background_rms);
    CHECK(std::abs(ebr_back - m.ebr_db) < 1e-9);
    ++audited;
  }
  CHECK(audited > 50);
}

TEST_CASE("generate_dataset is byte-identical for identical seeds") {
  const int rate = 16000;
  DatasetSpec spec;
  spec.seed = 321;
  const auto d1 = temp_dir("det1");
  const auto d2 = temp_dir("det2");
  auto r1 = generate_dataset(tiny_event_pools(rate), tiny_backgrounds(rate), 6, spec, d1.string());
  auto r2 = generate_dataset(tiny_event_pools(rate), tiny_backgrounds(rate), 6, spec, d2.string());
  REQUIRE(r1.mixtures.size() == r2.mixtures.size());
  CHECK(slurp(d1 / "annotations.tsv") == slurp(d2 / "annotations.tsv"));
  CHECK(slurp(d1 / "mixtures.json") == slurp(d2 / "mixtures.json"));
  for (const auto& m : r1.mixtures)
    CHECK(slurp(d1 / "audio" / m.file_name) == slurp(d2 / "audio" / m.file_name));

  // and a different seed changes the content
  DatasetSpec other = spec;
  other.seed = 322;
  const auto d3 = temp_dir("det3");
  auto r3 = generate_dataset(tiny_event_pools(rate), tiny_backgrounds(rate), 6, other, d3.string());
  CHECK(slurp(d1 / "mixtures.json") != slurp(d3 / "mixtures.json"));
}

TEST_CASE("generate_dataset rejects empty pools") {
  DatasetSpec spec;
  CHECK_THROWS_AS(generate_dataset({}, tiny_backgrounds(8000), 2, spec, temp_dir("e1").string()), ConfigError);
  CHECK_THROWS_AS(generate_dataset(tiny_event_pools(8000), {}, 2, spec, temp_dir("e2").string()), ConfigError);
}
