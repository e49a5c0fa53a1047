#pragma once

#include <string>
#include <vector>

#include "mtfa/postproc.hpp"

namespace mtfa::evaluation {

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (ref index, pred index)
  std::vector<int> unmatched_refs;
  std::vector<int> unmatched_preds;
};

// Onset-only matching within one clip and one class: a prediction can match a
// reference iff |onset_pred - onset_ref| <= collar. Pairs form a
// maximum-cardinality one-to-one matching, built by scanning references in
// onset order (nearest unmatched prediction first) and repairing with
// augmenting paths, so the TP count always equals the optimum.
MatchResult match_events(const std::vector<EventAnnotation>& refs, const std::vector<EventAnnotation>& preds,
                         double collar_seconds = 0.5);

struct ClassMetrics {
  std::string class_name;
  std::int64_t n_ref = 0;
  std::int64_t n_pred = 0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;  // insertions
  std::int64_t fn = 0;  // deletions
  double error_rate = 0.0;
  double f1 = 0.0;           // fraction in [0, 1]
  bool er_defined = true;    // false when n_ref == 0
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  ClassMetrics average;  // unweighted mean over classes with defined ER
};

// Micro-averages per class over all clips (grouped by audio_file), then an
// unweighted average row across classes.
EvalReport score(const std::vector<EventRow>& refs, const std::vector<EventRow>& preds, double collar_seconds = 0.5);

// Per-class `class Nref TP FP FN ER F1` rows plus an `average` row, with the
// ER|F1 pair layout used for reporting.
std::string render_report(const EvalReport& report);

}  // namespace mtfa::evaluation
