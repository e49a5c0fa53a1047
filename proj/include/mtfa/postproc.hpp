#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtfa/features.hpp"

namespace mtfa {

// One ground-truth or predicted event within a clip.
struct EventAnnotation {
  std::string label;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, > onset
};

// A detection/reference row: event plus its owning audio file.
struct EventRow {
  std::string audio_file;
  EventAnnotation event;
};

namespace postproc {

// Appends copies of the final frame until T divides `multiple`; returns the
// original frame count for cropping the predictions afterwards.
std::pair<Spectrogram, std::int64_t> pad_time_axis(const Spectrogram& spec, std::int64_t multiple = 8);

// 1 iff prob >= threshold.
std::vector<std::uint8_t> binarize(const std::vector<real>& probs, double threshold);

// Majority vote in a centered odd-width window with edge replication.
std::vector<std::uint8_t> median_filter(const std::vector<std::uint8_t>& binary, int width_frames = 27);

// Each maximal run of 1s over frames [a, b] becomes an event with
// onset a*hop and offset (b+1)*hop.
std::vector<EventAnnotation> extract_events(const std::vector<std::uint8_t>& binary, double hop_seconds,
                                            const std::string& label);

// Tab-separated `audio_file<TAB>onset<TAB>offset<TAB>label`, 6 decimals.
void write_event_tsv(const std::string& path, const std::vector<EventRow>& rows);
std::vector<EventRow> read_event_tsv(const std::string& path);

}  // namespace postproc
}  // namespace mtfa
