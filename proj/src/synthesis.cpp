#include "mtfa/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "mtfa/common.hpp"
#include "mtfa/rng.hpp"

#include <json.hpp>

namespace mtfa::synthesis {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void normalize_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m <= 0.0) return;
  const double s = peak / m;
  for (double& v : x) v *= s;
}

}  // namespace

std::optional<EventKind> parse_event_kind(const std::string& name) {
  if (name == "beep") return EventKind::beep;
  if (name == "burst") return EventKind::burst;
  if (name == "sweep") return EventKind::sweep;
  return std::nullopt;
}

std::string event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::beep: return "beep";
    case EventKind::burst: return "burst";
    case EventKind::sweep: return "sweep";
  }
  return "?";
}

double default_event_duration(EventKind kind) {
  switch (kind) {
    case EventKind::beep: return 2.25;
    case EventKind::burst: return 1.32;
    case EventKind::sweep: return 1.16;
  }
  return 1.0;
}

std::optional<EventKind> kind_for_class(const std::string& class_name) {
  if (class_name == "babycry") return EventKind::beep;
  if (class_name == "glassbreak") return EventKind::sweep;
  if (class_name == "gunshot") return EventKind::burst;
  return parse_event_kind(class_name);
}

AudioClip synth_event(EventKind kind, double duration_s, int sample_rate, std::uint64_t seed) {
  MTFA_REQUIRE(duration_s > 0 && sample_rate > 0, "synth_event: invalid duration or rate");
  Rng rng(seed, 17);
  const auto n = static_cast<std::size_t>(std::lround(duration_s * sample_rate));
  std::vector<double> x(n, 0.0);
  const double dt = 1.0 / sample_rate;
  switch (kind) {
    case EventKind::beep: {
      // amplitude-modulated narrowband tone
      const double f0 = rng.uniform(500.0, 900.0);
      const double fam = rng.uniform(3.0, 7.0);
      const double phase = rng.uniform(0.0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        x[i] = std::sin(kTwoPi * f0 * t + phase) * (0.55 + 0.45 * std::sin(kTwoPi * fam * t));
      }
      break;
    }
    case EventKind::burst: {
      // white-noise transient; amplitude decays to 1% (energy to 0.01%)
      const double tau = duration_s / std::log(100.0);
      for (std::size_t i = 0; i < n; ++i) x[i] = rng.normal() * std::exp(-(i * dt) / tau);
      break;
    }
    case EventKind::sweep: {
      // fast broadband downward chirp with a little noise
      const double f_hi = rng.uniform(5000.0, 7000.0);
      const double f_lo = rng.uniform(800.0, 1200.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        const double phase = kTwoPi * (f_hi * t + (f_lo - f_hi) / (2.0 * duration_s) * t * t);
        x[i] = std::sin(phase) + 0.05 * rng.normal();
      }
      break;
    }
  }
  normalize_peak(x, 0.9);
  return AudioClip{std::move(x), sample_rate};
}

AudioClip synth_background(double duration_s, int sample_rate, std::uint64_t seed) {
  MTFA_REQUIRE(duration_s > 0 && sample_rate > 0, "synth_background: invalid duration or rate");
  Rng rng(seed, 29);
  const auto n = static_cast<std::size_t>(std::lround(duration_s * sample_rate));
  std::vector<double> x(n, 0.0);
  const double dt = 1.0 / sample_rate;
  const int n_tones = 30;
  for (int k = 0; k < n_tones; ++k) {
    const double f = std::exp(rng.uniform(std::log(20.0), std::log(500.0)));
    const double amp = 1.0 / std::sqrt(f);
    const double phase = rng.uniform(0.0, kTwoPi);
    for (std::size_t i = 0; i < n; ++i) x[i] += amp * std::sin(kTwoPi * f * (i * dt) + phase);
  }
  for (std::size_t i = 0; i < n; ++i) x[i] += 0.05 * rng.normal();
  // exact RMS target
  double s = 0.0;
  for (double v : x) s += v * v;
  const double rms = std::sqrt(s / static_cast<double>(n));
  const double gain = 0.05 / rms;
  for (double& v : x) v *= gain;
  return AudioClip{std::move(x), sample_rate};
}

MixResult mix(const AudioClip& event, const AudioClip& background, double ebr_db, double onset_s,
              const std::string& label) {
  MTFA_REQUIRE(event.sample_rate == background.sample_rate, "mix: sample rates differ");
  MTFA_REQUIRE(onset_s >= 0.0, "mix: onset must be non-negative");
  const int rate = background.sample_rate;
  const auto onset_sample = static_cast<std::size_t>(std::lround(onset_s * rate));
  MTFA_REQUIRE(onset_sample + event.samples.size() <= background.samples.size(),
               "mix: event does not fit in the background after onset " + std::to_string(onset_s));
  const double rms_event = event.rms();
  const double rms_bg = background.rms();
  MTFA_REQUIRE(rms_event > 0.0, "mix: event is silent");
  MTFA_REQUIRE(rms_bg > 0.0, "mix: background is silent");

  const double scale = rms_bg / rms_event * std::pow(10.0, ebr_db / 20.0);
  MixResult result;
  result.mixture.sample_rate = rate;
  result.mixture.samples = background.samples;
  bool clipped = false;
  for (std::size_t i = 0; i < event.samples.size(); ++i) {
    double& v = result.mixture.samples[onset_sample + i];
    v += scale * event.samples[i];
    if (v > 1.0 || v < -1.0) {
      v = std::clamp(v, -1.0, 1.0);
      clipped = true;
    }
  }
  result.scale = scale;
  result.clipped = clipped;
  result.annotation = {label, onset_s, onset_s + event.duration_seconds()};
  return result;
}

MixturePlan plan_mixture(const DatasetSpec& spec, const std::string& class_name, int class_index, int mixture_index,
                         int n_events, const std::vector<double>& event_durations,
                         const std::vector<double>& background_durations) {
  MTFA_REQUIRE(n_events > 0 && !background_durations.empty(), "plan_mixture: empty source pool");
  MTFA_REQUIRE(spec.presence_prob >= 0.0 && spec.presence_prob <= 1.0, "plan_mixture: presence must be in [0, 1]");
  MTFA_REQUIRE(!spec.ebr_choices.empty(), "plan_mixture: no EBR choices");
  MixturePlan plan;
  plan.class_name = class_name;
  plan.index = mixture_index;
  plan.stream = static_cast<std::uint64_t>(class_index) * 1000000ULL + static_cast<std::uint64_t>(mixture_index);
  Rng rng(spec.seed, plan.stream);
  plan.present = rng.uniform() < spec.presence_prob;
  plan.background_idx = static_cast<int>(rng.below(background_durations.size()));
  if (!plan.present) return plan;
  plan.event_idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_events)));
  plan.ebr_db = spec.ebr_choices[static_cast<std::size_t>(rng.below(spec.ebr_choices.size()))];
  const double bg_dur = background_durations[static_cast<std::size_t>(plan.background_idx)];
  const double ev_dur = event_durations[static_cast<std::size_t>(plan.event_idx)];
  MTFA_REQUIRE(ev_dur <= bg_dur, "plan_mixture: event longer than background");
  plan.onset_s = rng.uniform() * (bg_dur - ev_dur);
  return plan;
}

DatasetResult generate_dataset(const std::map<std::string, std::vector<SourceClip>>& events,
                               const std::vector<SourceClip>& backgrounds, int count_per_class,
                               const DatasetSpec& spec, const std::string& out_dir) {
  if (events.empty() || backgrounds.empty())
    throw ConfigError("generate_dataset: event and background pools must be non-empty");
  for (const auto& [cls, pool] : events)
    if (pool.empty()) throw ConfigError("generate_dataset: empty event pool for class " + cls);
  MTFA_REQUIRE(count_per_class > 0, "generate_dataset: count must be positive");

  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  fs::create_directories(root / "audio");

  std::vector<double> bg_durations;
  bg_durations.reserve(backgrounds.size());
  for (const auto& b : backgrounds) bg_durations.push_back(b.clip.duration_seconds());

  DatasetResult result;
  int class_index = 0;
  for (const auto& [cls, pool] : events) {
    std::vector<double> ev_durations;
    ev_durations.reserve(pool.size());
    for (const auto& e : pool) ev_durations.push_back(e.clip.duration_seconds());

    for (int i = 0; i < count_per_class; ++i) {
      const MixturePlan plan =
          plan_mixture(spec, cls, class_index, i, static_cast<int>(pool.size()), ev_durations, bg_durations);
      char name[128];
      std::snprintf(name, sizeof(name), "mix_%s_%04d.wav", cls.c_str(), i);

      GeneratedMixture rec;
      rec.file_name = name;
      rec.class_name = cls;
      rec.stream = plan.stream;
      rec.present = plan.present;
      const SourceClip& bg = backgrounds[static_cast<std::size_t>(plan.background_idx)];
      rec.background_name = bg.name;
      rec.background_rms = bg.clip.rms();

      if (plan.present) {
        const SourceClip& ev = pool[static_cast<std::size_t>(plan.event_idx)];
        MixResult mixed = mix(ev.clip, bg.clip, plan.ebr_db, plan.onset_s, cls);
        save_wav((root / "audio" / name).string(), mixed.mixture);
        rec.event_name = ev.name;
        rec.event_rms = ev.clip.rms();
        rec.ebr_db = plan.ebr_db;
        rec.onset_s = plan.onset_s;
        rec.scale = mixed.scale;
        rec.clipped = mixed.clipped;
        result.annotations.push_back({name, mixed.annotation});
      } else {
        save_wav((root / "audio" / name).string(), bg.clip);
      }
      result.mixtures.push_back(std::move(rec));
    }
    ++class_index;
  }

  postproc::write_event_tsv((root / "annotations.tsv").string(), result.annotations);

  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const GeneratedMixture& m : result.mixtures) {
    nlohmann::ordered_json j{{"file", m.file_name},       {"class", m.class_name}, {"stream", m.stream},
                             {"present", m.present},      {"event", m.event_name}, {"background", m.background_name},
                             {"ebr_db", m.ebr_db},        {"onset", m.onset_s},    {"scale", m.scale},
                             {"event_rms", m.event_rms},  {"background_rms", m.background_rms},
                             {"clipped", m.clipped}};
    manifest.push_back(std::move(j));
  }
  std::ofstream mf(root / "mixtures.json");
  if (!mf) throw IoError((root / "mixtures.json").string() + ": cannot open for writing");
  mf << manifest.dump(2) << '\n';

  return result;
}

}  // namespace mtfa::synthesis
