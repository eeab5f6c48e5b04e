#pragma once

// Entity scoring: V(e) = AGG { T(w . f(x, e)) : x in S_e }, with analytic
// gradients for training, plus the three fixed baseline scorers (voting
// aggregates, sum-product language model, kernel positional language model).

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "features.hpp"

namespace entrank {

// ---------------------------------------------------------------------------
// Transforms

enum class TransformKind { Identity, Exp, Log1p, Indicator };

struct TransformValue {
  double value;
  double derivative;
};

inline constexpr double kExpClamp = 500.0;

inline double transform_value(TransformKind kind, double a, double exp_clamp = kExpClamp) {
  switch (kind) {
    case TransformKind::Identity: return a;
    case TransformKind::Exp: return std::exp(std::clamp(a, -exp_clamp, exp_clamp));
    case TransformKind::Log1p:
      if (!(a > -1.0)) throw std::domain_error("log1p transform needs a > -1");
      return std::log1p(a);
    case TransformKind::Indicator: return a > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

/// T(a) and T'(a). The indicator is evaluation-only and has no derivative.
inline TransformValue transform_eval(TransformKind kind, double a, double exp_clamp = kExpClamp) {
  switch (kind) {
    case TransformKind::Identity: return {a, 1.0};
    case TransformKind::Exp: {
      const double v = transform_value(kind, a, exp_clamp);
      return {v, std::abs(a) < exp_clamp ? v : 0.0};
    }
    case TransformKind::Log1p: return {transform_value(kind, a), 1.0 / (1.0 + a)};
    case TransformKind::Indicator:
      throw std::invalid_argument("indicator transform is not differentiable");
  }
  return {0.0, 0.0};
}

inline double sigmoid(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

/// log(1 + e^a) without overflow.
inline double softplus(double a) {
  return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
}

// ---------------------------------------------------------------------------
// Aggregator specification

enum class Operator { Sum, Avg, SoftOr, SoftCutoff };

inline constexpr std::size_t kDeciles = 10;

/// Rank-decile decay D(0..9) learned on top of a fixed context model.
struct CutoffModel {
  std::array<double, kDeciles> decay{};
  double lambda = 1.0;
};

struct AggregatorSpec {
  Operator op = Operator::Sum;
  TransformKind transform = TransformKind::Identity;
  CutoffModel cutoff{};  // SoftCutoff only

  static AggregatorSpec sum() { return {Operator::Sum, TransformKind::Identity}; }
  static AggregatorSpec avg() { return {Operator::Avg, TransformKind::Identity}; }
  static AggregatorSpec softmax() { return {Operator::Sum, TransformKind::Exp}; }
  static AggregatorSpec softcount() { return {Operator::Sum, TransformKind::Log1p}; }
  static AggregatorSpec softor() { return {Operator::SoftOr, TransformKind::Identity}; }
  static AggregatorSpec count() { return {Operator::Sum, TransformKind::Indicator}; }
  static AggregatorSpec softcutoff(CutoffModel m = {}) {
    return {Operator::SoftCutoff, TransformKind::Identity, m};
  }

  bool differentiable() const { return transform != TransformKind::Indicator || op == Operator::SoftOr; }

  std::string name() const {
    switch (op) {
      case Operator::Avg: return "avg";
      case Operator::SoftOr: return "softor";
      case Operator::SoftCutoff: return "softcutoff";
      case Operator::Sum: break;
    }
    switch (transform) {
      case TransformKind::Exp: return "softmax";
      case TransformKind::Log1p: return "softcount";
      case TransformKind::Indicator: return "count";
      case TransformKind::Identity: break;
    }
    return "sum";
  }

  static AggregatorSpec parse(const std::string& name) {
    if (name == "sum") return sum();
    if (name == "avg") return avg();
    if (name == "softmax") return softmax();
    if (name == "softcount") return softcount();
    if (name == "softor") return softor();
    if (name == "count") return count();
    if (name == "softcutoff") return softcutoff();
    throw std::invalid_argument("unknown aggregator '" + name + "'");
  }
};

struct EntityScore {
  std::string entity_id;
  double value = 0.0;
};

/// Decile of a 0-based rank position within a support set of size n.
inline std::size_t rank_decile(std::size_t position, std::size_t n) {
  return std::min(kDeciles - 1, (kDeciles * position) / n);
}

/// Decile of each context when ranked by descending raw score (stable).
inline std::vector<std::size_t> context_deciles(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> decile(scores.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    decile[order[pos]] = rank_decile(pos, order.size());
  return decile;
}

namespace detail {
// log(1 - V) for SoftOr: -sum softplus(s). Terms are summed in sorted order so
// the result does not depend on the order of the support set.
inline double softor_log_miss(std::span<const double> scores) {
  std::vector<double> terms;
  terms.reserve(scores.size());
  for (double a : scores) terms.push_back(softplus(a));
  std::sort(terms.begin(), terms.end());
  double log_miss = 0.0;
  for (double t : terms) log_miss -= t;
  return log_miss;
}
}  // namespace detail

/// V(e) from the raw context scores w . f(x, e).
inline double aggregate_raw(const AggregatorSpec& spec, std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("empty support set");
  switch (spec.op) {
    case Operator::Sum:
    case Operator::Avg: {
      double s = 0.0;
      for (double a : scores) s += transform_value(spec.transform, a);
      return spec.op == Operator::Avg ? s / static_cast<double>(scores.size()) : s;
    }
    case Operator::SoftOr: {
      return -std::expm1(detail::softor_log_miss(scores));
    }
    case Operator::SoftCutoff: {
      const auto decile = context_deciles(scores);
      double s = 0.0;
      for (std::size_t x = 0; x < scores.size(); ++x) s += spec.cutoff.decay[decile[x]] * scores[x];
      return s;
    }
  }
  return 0.0;
}

inline std::vector<double> raw_scores(std::span<const double> w,
                                      std::span<const FeatureVector> contexts) {
  std::vector<double> s;
  s.reserve(contexts.size());
  for (const auto& f : contexts) s.push_back(f.dot(w));
  return s;
}

inline double aggregate_score(const AggregatorSpec& spec, std::span<const double> w,
                              std::span<const FeatureVector> contexts) {
  if (contexts.empty()) throw std::invalid_argument("empty support set");
  return aggregate_raw(spec, raw_scores(w, contexts));
}

/// dV/dw accumulated into `out` scaled by `scale` (out += scale * dV/dw).
inline void accumulate_gradient(const AggregatorSpec& spec, std::span<const FeatureVector> contexts,
                                std::span<const double> scores, double scale,
                                std::span<double> out) {
  if (contexts.empty()) throw std::invalid_argument("empty support set");
  switch (spec.op) {
    case Operator::Sum:
    case Operator::Avg: {
      const double norm = spec.op == Operator::Avg ? 1.0 / static_cast<double>(contexts.size()) : 1.0;
      for (std::size_t x = 0; x < contexts.size(); ++x)
        contexts[x].axpy(scale * norm * transform_eval(spec.transform, scores[x]).derivative, out);
      return;
    }
    case Operator::SoftOr: {
      // sum_x sig(s_x)(1 - sig(s_x)) f_x prod_{x' != x}(1 - sig(s_x'))
      //   = (1 - V) sum_x sig(s_x) f_x
      const double miss = std::exp(detail::softor_log_miss(scores));
      for (std::size_t x = 0; x < contexts.size(); ++x)
        contexts[x].axpy(scale * miss * sigmoid(scores[x]), out);
      return;
    }
    case Operator::SoftCutoff: {
      const auto decile = context_deciles(scores);
      for (std::size_t x = 0; x < contexts.size(); ++x)
        contexts[x].axpy(scale * spec.cutoff.decay[decile[x]], out);
      return;
    }
  }
}

inline std::vector<double> aggregate_gradient(const AggregatorSpec& spec, std::span<const double> w,
                                              std::span<const FeatureVector> contexts) {
  std::vector<double> grad(w.size(), 0.0);
  const auto scores = raw_scores(w, contexts);
  accumulate_gradient(spec, contexts, scores, 1.0, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Voting aggregates over fixed context scores

struct VotingAggregates {
  double comb_sum = 0, comb_max = 0, comb_min = 0, comb_anz = 0;
  double votes = 0, comb_mnz = 0, exp_comb_mnz = 0;

  static constexpr std::uint32_t kWidth = 7;

  FeatureVector to_features() const {
    FeatureVector fv;
    const double v[kWidth] = {comb_sum, comb_max, comb_min, comb_anz, votes, comb_mnz, exp_comb_mnz};
    for (std::uint32_t i = 0; i < kWidth; ++i)
      if (v[i] > 0) fv.add(i, v[i]);
    return fv;
  }
};

inline VotingAggregates voting_aggregates(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("voting aggregates of an empty score list");
  VotingAggregates a;
  const double n = static_cast<double>(scores.size());
  double exp_sum = 0.0;
  a.comb_max = -std::numeric_limits<double>::infinity();
  a.comb_min = std::numeric_limits<double>::infinity();
  for (double s : scores) {
    a.comb_sum += s;
    a.comb_max = std::max(a.comb_max, s);
    a.comb_min = std::min(a.comb_min, s);
    exp_sum += std::exp(s);
  }
  a.comb_anz = a.comb_sum / n;
  a.votes = n;
  a.comb_mnz = n * a.comb_sum;
  a.exp_comb_mnz = n * exp_sum;
  return a;
}

// ---------------------------------------------------------------------------
// Language-model baselines

/// Jelinek-Mercer smoothed term probability.
inline double jm_smooth(double p_doc, double p_collection, double lambda) {
  return (1.0 - lambda) * p_doc + lambda * p_collection;
}

inline double collection_prob(const CorpusIndex& index, const QueryTerm& t) {
  if (index.collection_length() == 0) return 0.0;
  return static_cast<double>(index.term_stats(t).cf) / static_cast<double>(index.collection_length());
}

/// prod_t Pr(t | doc)^n(t,q) for one document, evaluated in log space.
inline double document_likelihood(const CorpusIndex& index, std::uint32_t doc, const Query& query,
                                  double lambda) {
  const double len = static_cast<double>(index.doc_length(doc));
  double log_p = 0.0;
  for (const auto& t : query.terms) {
    const double tf = static_cast<double>(index.occurrences(doc, t).size());
    const double p = jm_smooth(len > 0 ? tf / len : 0.0, collection_prob(index, t), lambda);
    if (p <= 0.0) return 0.0;
    log_p += t.count * std::log(p);
  }
  return std::exp(log_p);
}

/// Sum-product entity score from per-document likelihoods.
inline double sum_of_likelihoods(std::span<const double> likelihoods) {
  if (likelihoods.empty()) throw std::invalid_argument("empty support set");
  return std::accumulate(likelihoods.begin(), likelihoods.end(), 0.0);
}

/// Sum over distinct supporting documents of the smoothed query likelihood.
/// Each document counts once regardless of how many mentions it carries.
inline double balog2_score(const CorpusIndex& index, const Query& query,
                           std::span<const Context> support, double lambda = 0.5) {
  if (support.empty()) throw std::invalid_argument("empty support set");
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("smoothing weight must lie in [0, 1]");
  std::set<std::uint32_t> docs;
  for (const auto& c : support) docs.insert(c.doc);
  std::vector<double> likelihoods;
  for (auto d : docs) likelihoods.push_back(document_likelihood(index, d, query, lambda));
  return sum_of_likelihoods(likelihoods);
}

inline double gaussian_kernel(double position, double center, double width) {
  const double d = position - center;
  return std::exp(-(d * d) / (2.0 * width * width));
}

/// Unsmoothed position-sensitive language model of a context: for each query
/// term, kernel-weighted occurrence mass in the window divided by the total
/// kernel mass of the window.
inline std::vector<double> positional_lm(const CorpusIndex& index, const Context& ctx,
                                         const Query& query, double width) {
  if (!(width > 0.0)) throw std::invalid_argument("kernel width must be positive");
  const double center = 0.5 * (static_cast<double>(ctx.mention_start) + ctx.mention_end - 1);
  double mass = 0.0;
  for (auto i = ctx.window_begin; i < ctx.window_end; ++i) mass += gaussian_kernel(i, center, width);
  std::vector<double> p(query.terms.size(), 0.0);
  if (mass <= 0.0) return p;
  for (std::size_t t = 0; t < query.terms.size(); ++t) {
    const auto len = query.terms[t].words.size();
    for (auto pos : index.occurrences(ctx.doc, query.terms[t])) {
      if (pos < ctx.window_begin || pos + len > ctx.window_end) continue;
      p[t] += gaussian_kernel(pos + 0.5 * static_cast<double>(len - 1), center, width);
    }
    p[t] /= mass;
  }
  return p;
}

/// Product over query terms of the entity model, itself the average of the
/// smoothed positional models of its contexts.
inline double petkova_score(const CorpusIndex& index, const Query& query,
                            std::span<const Context> support, double width = 25.0,
                            double lambda = 0.5) {
  if (!(width > 0.0)) throw std::invalid_argument("kernel width must be positive");
  if (support.empty()) throw std::invalid_argument("empty support set");
  std::vector<double> entity(query.terms.size(), 0.0);
  for (const auto& ctx : support) {
    const auto p = positional_lm(index, ctx, query, width);
    for (std::size_t t = 0; t < p.size(); ++t)
      entity[t] += jm_smooth(p[t], collection_prob(index, query.terms[t]), lambda);
  }
  double log_v = 0.0;
  for (std::size_t t = 0; t < entity.size(); ++t) {
    const double pt = entity[t] / static_cast<double>(support.size());
    if (pt <= 0.0) return 0.0;
    log_v += query.terms[t].count * std::log(pt);
  }
  return std::exp(log_v);
}

}  // namespace entrank
