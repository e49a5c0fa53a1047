#include "mtfa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace mtfa::evaluation {

namespace {

// Kuhn's augmenting-path step over the collar graph.
bool try_augment(int ref, const std::vector<std::vector<int>>& adj, std::vector<char>& visited,
                 std::vector<int>& pred_owner) {
  for (int p : adj[static_cast<std::size_t>(ref)]) {
    if (visited[static_cast<std::size_t>(p)]) continue;
    visited[static_cast<std::size_t>(p)] = 1;
    if (pred_owner[static_cast<std::size_t>(p)] < 0 ||
        try_augment(pred_owner[static_cast<std::size_t>(p)], adj, visited, pred_owner)) {
      pred_owner[static_cast<std::size_t>(p)] = ref;
      return true;
    }
  }
  return false;
}

}  // namespace

MatchResult match_events(const std::vector<EventAnnotation>& refs, const std::vector<EventAnnotation>& preds,
                         double collar_seconds) {
  const int nr = static_cast<int>(refs.size());
  const int np = static_cast<int>(preds.size());

  // candidate predictions per reference, nearest onset first
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(nr));
  for (int r = 0; r < nr; ++r) {
    for (int p = 0; p < np; ++p)
      if (std::abs(preds[static_cast<std::size_t>(p)].onset - refs[static_cast<std::size_t>(r)].onset) <=
          collar_seconds)
        adj[static_cast<std::size_t>(r)].push_back(p);
    std::sort(adj[static_cast<std::size_t>(r)].begin(), adj[static_cast<std::size_t>(r)].end(), [&](int a, int b) {
      const double da = std::abs(preds[static_cast<std::size_t>(a)].onset - refs[static_cast<std::size_t>(r)].onset);
      const double db = std::abs(preds[static_cast<std::size_t>(b)].onset - refs[static_cast<std::size_t>(r)].onset);
      if (da != db) return da < db;
      if (preds[static_cast<std::size_t>(a)].onset != preds[static_cast<std::size_t>(b)].onset)
        return preds[static_cast<std::size_t>(a)].onset < preds[static_cast<std::size_t>(b)].onset;
      return a < b;
    });
  }

  std::vector<int> ref_order(static_cast<std::size_t>(nr));
  for (int r = 0; r < nr; ++r) ref_order[static_cast<std::size_t>(r)] = r;
  std::stable_sort(ref_order.begin(), ref_order.end(),
                   [&](int a, int b) { return refs[static_cast<std::size_t>(a)].onset < refs[static_cast<std::size_t>(b)].onset; });

  std::vector<int> pred_owner(static_cast<std::size_t>(np), -1);
  for (int r : ref_order) {
    std::vector<char> visited(static_cast<std::size_t>(np), 0);
    try_augment(r, adj, visited, pred_owner);
  }

  MatchResult result;
  std::vector<int> ref_match(static_cast<std::size_t>(nr), -1);
  for (int p = 0; p < np; ++p) {
    const int r = pred_owner[static_cast<std::size_t>(p)];
    if (r >= 0) ref_match[static_cast<std::size_t>(r)] = p;
  }
  for (int r : ref_order)
    if (ref_match[static_cast<std::size_t>(r)] >= 0) result.pairs.emplace_back(r, ref_match[static_cast<std::size_t>(r)]);
  for (int r = 0; r < nr; ++r)
    if (ref_match[static_cast<std::size_t>(r)] < 0) result.unmatched_refs.push_back(r);
  for (int p = 0; p < np; ++p)
    if (pred_owner[static_cast<std::size_t>(p)] < 0) result.unmatched_preds.push_back(p);
  return result;
}

EvalReport score(const std::vector<EventRow>& refs, const std::vector<EventRow>& preds, double collar_seconds) {
  std::set<std::string> classes;
  for (const auto& r : refs) classes.insert(r.event.label);
  for (const auto& p : preds) classes.insert(p.event.label);

  // (class, clip) -> events
  using Key = std::pair<std::string, std::string>;
  std::map<Key, std::vector<EventAnnotation>> ref_by, pred_by;
  std::set<std::string> clips;
  for (const auto& r : refs) {
    ref_by[{r.event.label, r.audio_file}].push_back(r.event);
    clips.insert(r.audio_file);
  }
  for (const auto& p : preds) {
    pred_by[{p.event.label, p.audio_file}].push_back(p.event);
    clips.insert(p.audio_file);
  }

  EvalReport report;
  for (const std::string& cls : classes) {
    ClassMetrics m;
    m.class_name = cls;
    for (const std::string& clip : clips) {
      auto ri = ref_by.find({cls, clip});
      auto pi = pred_by.find({cls, clip});
      static const std::vector<EventAnnotation> empty;
      const auto& r = ri == ref_by.end() ? empty : ri->second;
      const auto& p = pi == pred_by.end() ? empty : pi->second;
      if (r.empty() && p.empty()) continue;
      MatchResult mr = match_events(r, p, collar_seconds);
      m.n_ref += static_cast<std::int64_t>(r.size());
      m.n_pred += static_cast<std::int64_t>(p.size());
      m.tp += static_cast<std::int64_t>(mr.pairs.size());
      m.fn += static_cast<std::int64_t>(mr.unmatched_refs.size());
      m.fp += static_cast<std::int64_t>(mr.unmatched_preds.size());
    }
    m.er_defined = m.n_ref > 0;
    m.error_rate = m.er_defined ? static_cast<double>(m.fn + m.fp) / static_cast<double>(m.n_ref) : 0.0;
    const std::int64_t denom = 2 * m.tp + m.fp + m.fn;
    m.f1 = denom > 0 ? 2.0 * static_cast<double>(m.tp) / static_cast<double>(denom) : 0.0;
    report.per_class.push_back(std::move(m));
  }

  ClassMetrics& avg = report.average;
  avg.class_name = "average";
  int defined = 0;
  for (const ClassMetrics& m : report.per_class) {
    avg.n_ref += m.n_ref;
    avg.n_pred += m.n_pred;
    avg.tp += m.tp;
    avg.fp += m.fp;
    avg.fn += m.fn;
    if (m.er_defined) {
      avg.error_rate += m.error_rate;
      avg.f1 += m.f1;
      ++defined;
    }
  }
  avg.er_defined = defined > 0;
  if (defined > 0) {
    avg.error_rate /= defined;
    avg.f1 /= defined;
  }
  return report;
}

std::string render_report(const EvalReport& report) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-14s %6s %6s %5s %5s %5s %8s %7s\n", "class", "Nref", "Npred", "TP", "FP", "FN",
                "ER", "F1");
  os << buf;
  const auto row = [&](const ClassMetrics& m) {
    if (m.er_defined)
      std::snprintf(buf, sizeof(buf), "%-14s %6lld %6lld %5lld %5lld %5lld %8.2f %7.1f\n", m.class_name.c_str(),
                    static_cast<long long>(m.n_ref), static_cast<long long>(m.n_pred), static_cast<long long>(m.tp),
                    static_cast<long long>(m.fp), static_cast<long long>(m.fn), m.error_rate, 100.0 * m.f1);
    else
      std::snprintf(buf, sizeof(buf), "%-14s %6lld %6lld %5lld %5lld %5lld %8s %7.1f\n", m.class_name.c_str(),
                    static_cast<long long>(m.n_ref), static_cast<long long>(m.n_pred), static_cast<long long>(m.tp),
                    static_cast<long long>(m.fp), static_cast<long long>(m.fn), "n/a", 100.0 * m.f1);
    os << buf;
  };
  for (const ClassMetrics& m : report.per_class) row(m);
  row(report.average);
  if (report.average.er_defined) {
    std::snprintf(buf, sizeof(buf), "average ER|F1: %.2f|%.1f\n", report.average.error_rate,
                  100.0 * report.average.f1);
    os << buf;
  }
  return os.str();
}

}  // namespace mtfa::evaluation
