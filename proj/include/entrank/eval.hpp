#pragma once

// Entity rankings, the metric suite (MAP, MRR, NDCG@k, pair swaps), paired
// significance testing and query-level cross-validation protocols.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "aggregators.hpp"
#include "corpus.hpp"
#include "rng.hpp"

namespace entrank {

/// Entities ordered by descending score, ties broken by ascending id.
struct Ranking {
  std::string query_id;
  std::vector<EntityScore> entries;
};

inline Ranking make_ranking(std::string query_id, std::vector<EntityScore> scores) {
  std::sort(scores.begin(), scores.end(), [](const EntityScore& a, const EntityScore& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.entity_id < b.entity_id;
  });
  std::set<std::string> seen;
  for (const auto& s : scores)
    if (!seen.insert(s.entity_id).second)
      throw std::invalid_argument("duplicate entity '" + s.entity_id + "' in ranking");
  return Ranking{std::move(query_id), std::move(scores)};
}

struct Metrics {
  double ap = 0.0;
  double rr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  double pairswap = 0.0;
};

inline constexpr const char* kMetricNames[] = {"MAP", "MRR", "NDCG@5", "NDCG@10", "PAIRSWAP"};

inline double metric_value(const Metrics& m, std::size_t k) {
  switch (k) {
    case 0: return m.ap;
    case 1: return m.rr;
    case 2: return m.ndcg5;
    case 3: return m.ndcg10;
    default: return m.pairswap;
  }
}

inline double ndcg_at(const std::vector<bool>& relevant_at, std::size_t num_good, std::size_t k) {
  double dcg = 0.0, ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant_at.size()); ++r)
    if (relevant_at[r]) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  for (std::size_t r = 0; r < std::min(k, num_good); ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return ideal > 0.0 ? dcg / ideal : 0.0;
}

/// Metrics of one ranking against binary judgments.
///
/// Judged good entities that were not retrieved count as misses for AP and
/// NDCG. For pair swaps an un-retrieved entity sits below every retrieved
/// one; a pair where both are missing counts one half. With no judged bad
/// entity the pair-swap fraction is 0.
inline Metrics compute_metrics(const Ranking& ranking, const QueryJudgment& judgment) {
  if (judgment.good.empty())
    throw std::invalid_argument("query " + ranking.query_id + " has no good entity");
  const auto& entries = ranking.entries;
  std::vector<bool> rel(entries.size());
  for (std::size_t r = 0; r < entries.size(); ++r) rel[r] = judgment.good.count(entries[r].entity_id) > 0;

  Metrics m;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < entries.size(); ++r) {
    if (!rel[r]) continue;
    ++hits;
    m.ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    if (hits == 1) m.rr = 1.0 / static_cast<double>(r + 1);
  }
  m.ap /= static_cast<double>(judgment.good.size());
  m.ndcg5 = ndcg_at(rel, judgment.good.size(), 5);
  m.ndcg10 = ndcg_at(rel, judgment.good.size(), 10);

  if (!judgment.bad.empty()) {
    // Walk down the ranking counting retrieved goods seen so far: every bad
    // entity at a position is preceded by `goods_above` concordant goods.
    std::size_t goods_above = 0, retrieved_good = 0, retrieved_bad = 0;
    double concordant = 0.0;
    for (const auto& e : entries) {
      if (judgment.good.count(e.entity_id)) {
        ++goods_above;
        ++retrieved_good;
      } else if (judgment.bad.count(e.entity_id)) {
        concordant += static_cast<double>(goods_above);
        ++retrieved_bad;
      }
    }
    const double g = static_cast<double>(judgment.good.size());
    const double b = static_cast<double>(judgment.bad.size());
    const double missing_bad = b - static_cast<double>(retrieved_bad);
    const double missing_good = g - static_cast<double>(retrieved_good);
    concordant += static_cast<double>(retrieved_good) * missing_bad;  // g retrieved, b not
    concordant += 0.5 * missing_good * missing_bad;                   // neither retrieved
    m.pairswap = 1.0 - concordant / (g * b);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Significance

/// Two-sided paired t-test on per-query differences A - B.
inline double paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test needs equal-length vectors");
  if (a.size() < 2) throw std::invalid_argument("paired t-test needs at least two pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  // Rounding noise on constant differences is treated as zero variance.
  if (sd == 0.0 || sd <= 1e-12 * std::abs(mean)) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(n - 1.0);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

// ---------------------------------------------------------------------------
// Reports

struct QueryResult {
  std::string query_id;
  Metrics metrics;
};

struct EvalReport {
  std::string system;
  std::vector<QueryResult> queries;  // ordered by query id

  Metrics macro() const {
    Metrics m;
    if (queries.empty()) return m;
    for (const auto& q : queries) {
      m.ap += q.metrics.ap;
      m.rr += q.metrics.rr;
      m.ndcg5 += q.metrics.ndcg5;
      m.ndcg10 += q.metrics.ndcg10;
      m.pairswap += q.metrics.pairswap;
    }
    const double n = static_cast<double>(queries.size());
    m.ap /= n, m.rr /= n, m.ndcg5 /= n, m.ndcg10 /= n, m.pairswap /= n;
    return m;
  }

  std::vector<double> per_query(std::size_t metric) const {
    std::vector<double> out;
    for (const auto& q : queries) out.push_back(metric_value(q.metrics, metric));
    return out;
  }

  void sort_by_query() {
    std::sort(queries.begin(), queries.end(),
              [](const QueryResult& a, const QueryResult& b) { return a.query_id < b.query_id; });
  }
};

inline constexpr const char* kMacroRow = "all";

/// Evaluates rankings against judgments. Every judged query with at least
/// one good entity is reported; a query with no ranking gets an empty one.
inline EvalReport evaluate(std::string system, const std::map<std::string, Ranking>& runs,
                           const Judgments& judgments) {
  EvalReport report{std::move(system), {}};
  for (const auto& [qid, j] : judgments) {
    if (j.good.empty()) continue;
    auto it = runs.find(qid);
    const Ranking ranking = it != runs.end() ? it->second : Ranking{qid, {}};
    report.queries.push_back({qid, compute_metrics(ranking, j)});
  }
  return report;
}

inline std::string format_number(double v, int precision = 12) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

inline std::string report_header() {
  std::string h = "system\tquery_id";
  for (auto* name : kMetricNames) h += std::string("\t") + name;
  return h;
}

/// Tab-separated rows per (system, query) and one macro row per system.
inline void write_report(std::ostream& out, std::span<const EvalReport> reports) {
  out << report_header() << '\n';
  for (const auto& r : reports) {
    auto row = [&](const std::string& qid, const Metrics& m) {
      out << r.system << '\t' << qid;
      for (std::size_t k = 0; k < 5; ++k) out << '\t' << format_number(metric_value(m, k));
      out << '\n';
    };
    for (const auto& q : r.queries) row(q.query_id, q.metrics);
    row(kMacroRow, r.macro());
  }
}

inline std::vector<EvalReport> read_report(std::istream& in) {
  std::vector<EvalReport> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == report_header()) continue;
    std::istringstream fields(line);
    std::string system, qid;
    Metrics m;
    if (!std::getline(fields, system, '\t') || !std::getline(fields, qid, '\t') ||
        !(fields >> m.ap >> m.rr >> m.ndcg5 >> m.ndcg10 >> m.pairswap))
      throw FormatError("malformed report row", lineno);
    if (qid == kMacroRow) continue;
    if (out.empty() || out.back().system != system) out.push_back(EvalReport{system, {}});
    out.back().queries.push_back({qid, m});
  }
  return out;
}

/// p-values of paired t-tests over one per-query metric, for every ordered
/// pair of systems. Systems must cover the same queries.
inline std::vector<std::vector<double>> significance_matrix(std::span<const EvalReport> reports,
                                                            std::size_t metric = 0) {
  const std::size_t n = reports.size();
  std::vector<std::vector<double>> p(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (reports[i].queries.size() != reports[j].queries.size())
        throw std::invalid_argument("systems " + reports[i].system + " and " + reports[j].system +
                                    " were evaluated on different queries");
      for (std::size_t q = 0; q < reports[i].queries.size(); ++q)
        if (reports[i].queries[q].query_id != reports[j].queries[q].query_id)
          throw std::invalid_argument("query mismatch between systems");
      p[i][j] = paired_ttest(reports[i].per_query(metric), reports[j].per_query(metric));
    }
  }
  return p;
}

/// Matrix of p-values; a trailing '*' marks p < alpha.
inline void write_significance(std::ostream& out, std::span<const EvalReport> reports,
                               const std::vector<std::vector<double>>& p, double alpha = 0.05) {
  out << "system";
  for (const auto& r : reports) out << '\t' << r.system;
  out << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out << reports[i].system;
    for (std::size_t j = 0; j < reports.size(); ++j) {
      out << '\t';
      if (i == j) {
        out << '-';
        continue;
      }
      out << format_number(p[i][j]);
      if (p[i][j] < alpha) out << '*';
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// TREC run files: query_id Q0 entity_id rank score tag

inline void write_run(std::ostream& out, const Ranking& ranking, const std::string& tag) {
  for (std::size_t r = 0; r < ranking.entries.size(); ++r)
    out << ranking.query_id << " Q0 " << ranking.entries[r].entity_id << ' ' << (r + 1) << ' '
        << format_number(ranking.entries[r].value, 17) << ' ' << tag << '\n';
}

inline std::map<std::string, Ranking> read_run(std::istream& in) {
  std::map<std::string, std::vector<EntityScore>> scores;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string qid, q0, eid, tag;
    long rank = 0;
    double score = 0;
    if (!(fields >> qid)) continue;
    if (!(fields >> q0 >> eid >> rank >> score >> tag))
      throw FormatError("expected 'query_id Q0 entity_id rank score tag'", lineno);
    scores[qid].push_back({eid, score});
  }
  std::map<std::string, Ranking> out;
  for (auto& [qid, s] : scores) out.emplace(qid, make_ranking(qid, std::move(s)));
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct Protocol {
  enum class Kind { LeaveOneOut, KFold } kind = Kind::LeaveOneOut;
  std::size_t folds = 5;

  static Protocol parse(const std::string& s) {
    if (s == "loocv") return {};
    if (s.rfind("kfold:", 0) == 0) {
      const auto k = std::stoul(s.substr(6));
      if (k < 2) throw std::invalid_argument("k-fold needs k >= 2");
      return {Kind::KFold, k};
    }
    throw std::invalid_argument("unknown protocol '" + s + "' (loocv | kfold:k)");
  }
  std::string name() const {
    return kind == Kind::LeaveOneOut ? "loocv" : "kfold:" + std::to_string(folds);
  }
};

/// Test folds over query indices 0..n-1. Leave-one-out keeps query order;
/// k-fold deals a seeded shuffle round-robin into k folds.
inline std::vector<std::vector<std::size_t>> make_folds(std::size_t n, const Protocol& protocol,
                                                        std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("cross-validation needs at least two queries");
  std::vector<std::vector<std::size_t>> folds;
  if (protocol.kind == Protocol::Kind::LeaveOneOut) {
    for (std::size_t i = 0; i < n; ++i) folds.push_back({i});
    return folds;
  }
  if (n < protocol.folds)
    throw std::invalid_argument("fewer queries (" + std::to_string(n) + ") than folds (" +
                                std::to_string(protocol.folds) + ")");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, "folds");
  std::shuffle(order.begin(), order.end(), rng);
  folds.resize(protocol.folds);
  for (std::size_t i = 0; i < n; ++i) folds[i % protocol.folds].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

/// Runs a protocol over `n` queries. `fit(train)` returns a ranker callable
/// `rank(test_index) -> Ranking`; `judgment(i)` gives the judgments of query i.
template <class Fit, class JudgmentOf>
EvalReport cross_validate(std::string system, std::size_t n, Fit&& fit, JudgmentOf&& judgment,
                          const Protocol& protocol, std::uint64_t seed) {
  const auto folds = make_folds(n, protocol, seed);
  EvalReport report{std::move(system), {}};
  for (const auto& test : folds) {
    std::vector<std::size_t> train;
    std::set<std::size_t> held(test.begin(), test.end());
    for (std::size_t i = 0; i < n; ++i)
      if (!held.count(i)) train.push_back(i);
    auto rank = fit(std::span<const std::size_t>(train));
    for (auto q : test) {
      const Ranking r = rank(q);
      report.queries.push_back({r.query_id, compute_metrics(r, judgment(q))});
    }
  }
  report.sort_by_query();
  return report;
}

}  // namespace entrank
