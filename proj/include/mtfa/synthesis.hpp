#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtfa/postproc.hpp"
#include "mtfa/wav.hpp"

namespace mtfa::synthesis {

// Desk-scale stand-in events: narrowband sustained (beep), decaying noise
// impulse (burst), fast broadband chirp (sweep).
enum class EventKind { beep, burst, sweep };

std::optional<EventKind> parse_event_kind(const std::string& name);
std::string event_kind_name(EventKind kind);
// Default duration per kind, mirroring the average target-event lengths
// (2.25 s / 1.32 s / 1.16 s).
double default_event_duration(EventKind kind);
// Stand-in kind for the three target classes (babycry/glassbreak/gunshot).
std::optional<EventKind> kind_for_class(const std::string& class_name);

AudioClip synth_event(EventKind kind, double duration_s, int sample_rate, std::uint64_t seed);
// Pink-ish scene noise, RMS normalized to 0.05.
AudioClip synth_background(double duration_s, int sample_rate, std::uint64_t seed);

struct MixResult {
  AudioClip mixture;
  EventAnnotation annotation;
  double scale = 0.0;  // gain applied to the event
  bool clipped = false;
};

// Scales the event so 20*log10(rms_event_scaled / rms_background) == ebr_db
// (RMS over full extents) and adds it at onset_s. Samples that leave [-1, 1]
// are clamped and flagged.
MixResult mix(const AudioClip& event, const AudioClip& background, double ebr_db, double onset_s,
              const std::string& label);

struct SourceClip {
  std::string name;
  AudioClip clip;
};

struct DatasetSpec {
  std::vector<double> ebr_choices{-6.0, 0.0, 6.0};
  double presence_prob = 0.99;
  std::uint64_t seed = 0;
};

struct MixturePlan {
  std::string class_name;
  int index = 0;
  std::uint64_t stream = 0;
  bool present = false;
  int background_idx = 0;
  int event_idx = 0;
  double ebr_db = 0.0;
  double onset_s = 0.0;
};

// The per-mixture random decisions, separated from rendering so audits can
// replay them cheaply. Draw order: presence, background, event, EBR, onset.
MixturePlan plan_mixture(const DatasetSpec& spec, const std::string& class_name, int class_index, int mixture_index,
                         int n_events, const std::vector<double>& event_durations,
                         const std::vector<double>& background_durations);

struct GeneratedMixture {
  std::string file_name;
  std::string class_name;
  std::uint64_t stream = 0;
  bool present = false;
  std::string event_name;
  std::string background_name;
  double ebr_db = 0.0;
  double onset_s = 0.0;
  double scale = 0.0;
  double event_rms = 0.0;
  double background_rms = 0.0;
  bool clipped = false;
};

struct DatasetResult {
  std::vector<EventRow> annotations;
  std::vector<GeneratedMixture> mixtures;
};

// Renders count_per_class mixtures per event class into <out_dir>/audio/,
// writes <out_dir>/annotations.tsv and <out_dir>/mixtures.json. Byte-identical
// outputs for identical inputs and seed.
DatasetResult generate_dataset(const std::map<std::string, std::vector<SourceClip>>& events,
                               const std::vector<SourceClip>& backgrounds, int count_per_class,
                               const DatasetSpec& spec, const std::string& out_dir);

}  // namespace mtfa::synthesis
