#include "mtfa/postproc.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mtfa/common.hpp"

namespace mtfa::postproc {

std::pair<Spectrogram, std::int64_t> pad_time_axis(const Spectrogram& spec, std::int64_t multiple) {
  MTFA_REQUIRE(multiple >= 1, "pad_time_axis: multiple must be positive");
  const std::int64_t t = spec.num_frames(), d = spec.num_mels();
  MTFA_REQUIRE(t >= 1, "pad_time_axis: empty spectrogram");
  const std::int64_t padded_t = (t + multiple - 1) / multiple * multiple;
  if (padded_t == t) return {spec, t};
  Spectrogram out;
  out.hop_seconds = spec.hop_seconds;
  out.window_seconds = spec.window_seconds;
  out.frames = Tensor({padded_t, d});
  for (std::int64_t r = 0; r < padded_t; ++r) {
    const std::int64_t src = r < t ? r : t - 1;
    for (std::int64_t c = 0; c < d; ++c) out.frames.at2(r, c) = spec.frames.at2(src, c);
  }
  return {std::move(out), t};
}

std::vector<std::uint8_t> binarize(const std::vector<real>& probs, double threshold) {
  MTFA_REQUIRE(threshold > 0.0 && threshold < 1.0, "binarize: threshold must be in (0, 1)");
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= static_cast<real>(threshold) ? 1 : 0;
  return out;
}

std::vector<std::uint8_t> median_filter(const std::vector<std::uint8_t>& binary, int width_frames) {
  MTFA_REQUIRE(width_frames >= 1 && width_frames % 2 == 1, "median_filter: width must be odd, got " +
                                                               std::to_string(width_frames));
  const auto n = static_cast<std::int64_t>(binary.size());
  if (n == 0) return {};
  const int half = width_frames / 2;
  std::vector<std::uint8_t> out(binary.size());
  // running count of ones in the clamped window (edge replication)
  for (std::int64_t i = 0; i < n; ++i) {
    int ones = 0;
    for (int k = -half; k <= half; ++k) {
      std::int64_t j = i + k;
      if (j < 0) j = 0;
      if (j >= n) j = n - 1;
      ones += binary[static_cast<std::size_t>(j)];
    }
    out[static_cast<std::size_t>(i)] = ones > half ? 1 : 0;
  }
  return out;
}

std::vector<EventAnnotation> extract_events(const std::vector<std::uint8_t>& binary, double hop_seconds,
                                            const std::string& label) {
  std::vector<EventAnnotation> events;
  const auto n = static_cast<std::int64_t>(binary.size());
  std::int64_t run_start = -1;
  for (std::int64_t i = 0; i <= n; ++i) {
    const bool on = i < n && binary[static_cast<std::size_t>(i)] != 0;
    if (on && run_start < 0) run_start = i;
    if (!on && run_start >= 0) {
      events.push_back({label, run_start * hop_seconds, i * hop_seconds});
      run_start = -1;
    }
  }
  return events;
}

void write_event_tsv(const std::string& path, const std::vector<EventRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  char buf[64];
  for (const EventRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f\t%.6f", r.event.onset, r.event.offset);
    out << r.audio_file << '\t' << buf << '\t' << r.event.label << '\n';
  }
  if (!out) throw IoError(path + ": write failed");
}

std::vector<EventRow> read_event_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::vector<EventRow> rows;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    EventRow r;
    std::string onset_s, offset_s;
    if (!std::getline(ss, r.audio_file, '\t') || !std::getline(ss, onset_s, '\t') ||
        !std::getline(ss, offset_s, '\t') || !std::getline(ss, r.event.label))
      throw IoError(path + ":" + std::to_string(line_no) + ": expected audio_file\\tonset\\toffset\\tlabel");
    try {
      r.event.onset = std::stod(onset_s);
      r.event.offset = std::stod(offset_s);
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(line_no) + ": non-numeric onset/offset");
    }
    if (r.event.offset <= r.event.onset)
      throw IoError(path + ":" + std::to_string(line_no) + ": offset must exceed onset");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mtfa::postproc
