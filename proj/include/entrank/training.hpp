#pragma once

// Pairwise training of the context model w through an aggregator, and the
// rank-decile soft cutoff learned by linear programming on top of a fixed w.
//
// Loss per query q over sampled good/bad pairs P_q:
//
//   (1/|P_q|) sum_{(g,b)} SH(1 + V(b) - V(g)),   SH(a) = log(1 + e^a)
//
// plus w.w/(2 lambda^2) and, over grid and rectangle blocks, a smoothness
// penalty on differences between neighbouring cells with the same scaling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aggregators.hpp"
#include "eval.hpp"
#include "features.hpp"
#include "rng.hpp"
#include "simplex.hpp"

namespace entrank {

struct SoftHinge {
  double value;
  double derivative;
};

/// SH(a) = log(1 + e^a) and SH'(a) = sigmoid(a), overflow-safe.
inline SoftHinge soft_hinge(double a) { return {softplus(a), sigmoid(a)}; }

// ---------------------------------------------------------------------------
// Training data

struct EntitySupport {
  std::string entity_id;
  std::vector<FeatureVector> contexts;  // non-empty
};

struct TrainingQuery {
  std::string query_id;
  std::vector<EntitySupport> entities;  // every candidate
  std::vector<std::size_t> good;        // judged-good candidates (indices into entities)
  std::vector<std::size_t> bad;         // judged-bad candidates
  QueryJudgment judgment;               // full judgments, including un-retrieved entities
};

using Dataset = std::vector<TrainingQuery>;

struct TrainConfig {
  double lambda = 1.0;
  double smoothness = 1.0;  // multiplier on the grid smoothness term
  double init = 0.01;
  std::size_t max_iterations = 300;
  double tolerance = 1e-7;  // relative objective change
  double initial_step = 1.0;
  double backtrack = 0.5;
  double armijo = 1e-4;
  std::size_t pair_cap = 10000;
  std::uint64_t seed = 0;
  std::vector<double> lambda_grid{0.1, 1.0, 10.0, 100.0};
  std::size_t lambda_folds = 3;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Pair = std::pair<std::size_t, std::size_t>;  // (good, bad) entity indices

/// All (g, b) pairs of a query, uniformly subsampled without replacement when
/// there are more than `cap`. The sample depends only on the seed and the
/// query id.
inline std::vector<Pair> sample_pairs(const TrainingQuery& q, std::size_t cap, std::uint64_t seed) {
  const std::size_t total = q.good.size() * q.bad.size();
  std::vector<std::size_t> pick(total);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  if (cap > 0 && total > cap) {
    std::vector<std::size_t> chosen;
    chosen.reserve(cap);
    auto rng = make_rng(seed, "pairs/" + q.query_id);
    std::sample(pick.begin(), pick.end(), std::back_inserter(chosen), cap, rng);
    pick = std::move(chosen);
  }
  std::vector<Pair> pairs;
  pairs.reserve(pick.size());
  for (auto k : pick) pairs.emplace_back(q.good[k / q.bad.size()], q.bad[k % q.bad.size()]);
  return pairs;
}

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Regularized pairwise soft-hinge objective over a dataset.
class PairwiseObjective {
 public:
  PairwiseObjective(const Dataset& data, std::span<const std::size_t> queries, AggregatorSpec spec,
                    FeatureLayout layout, TrainConfig config)
      : data_(data), spec_(spec), layout_(std::move(layout)), config_(std::move(config)) {
    if (!spec_.differentiable())
      throw std::invalid_argument("aggregator '" + spec_.name() + "' is not trainable");
    if (!(config_.lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    for (auto q : queries) {
      const auto& tq = data.at(q);
      if (tq.good.empty() || tq.bad.empty()) {
        std::cerr << "warning: query " << tq.query_id
                  << " has no retrieved good/bad pair; skipped in training\n";
        continue;
      }
      queries_.push_back(q);
      pairs_.push_back(sample_pairs(tq, config_.pair_cap, config_.seed));
    }
  }

  std::size_t dimension() const { return layout_.dimension(); }
  std::size_t num_queries() const { return queries_.size(); }

  double regularizer(std::span<const double> w, std::span<double> grad = {}) const {
    const double scale = 1.0 / (2.0 * config_.lambda * config_.lambda);
    double r = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      r += scale * w[i] * w[i];
      if (!grad.empty()) grad[i] += 2.0 * scale * w[i];
    }
    const double s = scale * config_.smoothness;
    auto smooth_block = [&](std::uint32_t base) {
      const auto rows = layout_.rows(), cols = layout_.cols();
      for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j) {
          const auto c = base + i * cols + j;
          for (std::uint32_t nb : {i > 0 ? c - cols : c, j > 0 ? c - 1 : c}) {
            if (nb == c) continue;
            const double d = w[c] - w[nb];
            r += s * d * d;
            if (!grad.empty()) {
              grad[c] += 2.0 * s * d;
              grad[nb] -= 2.0 * s * d;
            }
          }
        }
      }
    };
    if (s > 0.0) {
      if (layout_.grid) smooth_block(layout_.grid_offset());
      if (layout_.rectangle) smooth_block(layout_.rectangle_offset());
    }
    return r;
  }

  /// Loss at w; writes the gradient into `grad` when it is non-empty.
  double evaluate(std::span<const double> w, std::span<double> grad = {}) const {
    if (w.size() != dimension()) throw std::invalid_argument("weight dimension mismatch");
    const bool want_grad = !grad.empty();
    std::vector<double> losses(queries_.size(), 0.0);
    std::vector<std::vector<double>> grads(want_grad ? queries_.size() : 0);
    detail::parallel_for(queries_.size(), [&](std::size_t k) {
      const auto& q = data_[queries_[k]];
      const auto& pairs = pairs_[k];
      std::vector<double> value(q.entities.size(), 0.0);
      std::vector<std::vector<double>> scores(q.entities.size());
      std::vector<char> needed(q.entities.size(), 0);
      for (const auto& [g, b] : pairs) needed[g] = needed[b] = 1;
      for (std::size_t e = 0; e < q.entities.size(); ++e) {
        if (!needed[e]) continue;
        scores[e] = raw_scores(w, q.entities[e].contexts);
        value[e] = aggregate_raw(spec_, scores[e]);
      }
      const double norm = 1.0 / static_cast<double>(pairs.size());
      std::vector<double> coef(q.entities.size(), 0.0);
      double loss = 0.0;
      for (const auto& [g, b] : pairs) {
        const auto sh = soft_hinge(1.0 + value[b] - value[g]);
        loss += sh.value;
        coef[b] += sh.derivative * norm;
        coef[g] -= sh.derivative * norm;
      }
      losses[k] = loss * norm;
      if (want_grad) {
        grads[k].assign(w.size(), 0.0);
        for (std::size_t e = 0; e < q.entities.size(); ++e)
          if (coef[e] != 0.0) accumulate_gradient(spec_, q.entities[e].contexts, scores[e], coef[e], grads[k]);
      }
    });
    double total = 0.0;
    if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t k = 0; k < queries_.size(); ++k) {
      total += losses[k];
      if (want_grad)
        for (std::size_t i = 0; i < w.size(); ++i) grad[i] += grads[k][i];
    }
    return total + regularizer(w, grad);
  }

 private:
  const Dataset& data_;
  AggregatorSpec spec_;
  FeatureLayout layout_;
  TrainConfig config_;
  std::vector<std::size_t> queries_;
  std::vector<std::vector<Pair>> pairs_;
};

// ---------------------------------------------------------------------------
// Model

struct Model {
  std::vector<double> weights;
  FeatureLayout layout;
  AggregatorSpec aggregator;
  TrainConfig config;
  std::size_t iterations = 0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> objective_trace;  // accepted objective values, not serialized

  double score(const EntitySupport& e) const { return aggregate_score(aggregator, weights, e.contexts); }
};

inline Ranking rank_query(const Model& model, const TrainingQuery& q) {
  std::vector<EntityScore> scores;
  scores.reserve(q.entities.size());
  for (const auto& e : q.entities) scores.push_back({e.entity_id, model.score(e)});
  return make_ranking(q.query_id, std::move(scores));
}

inline std::vector<std::size_t> all_queries(const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

/// Projected gradient descent on w >= 0 with Barzilai-Borwein trial steps and
/// Armijo backtracking. Accepted steps never increase the objective.
inline Model train_model(const Dataset& data, std::span<const std::size_t> queries,
                         const AggregatorSpec& spec, const FeatureLayout& layout,
                         const TrainConfig& config) {
  layout.validate();
  PairwiseObjective objective(data, queries, spec, layout, config);
  Model model{std::vector<double>(layout.dimension(), config.init), layout, spec, config, 0,
              std::numeric_limits<double>::quiet_NaN(), {}};
  if (config.max_iterations == 0 || objective.num_queries() == 0) return model;

  const std::size_t m = layout.dimension();
  std::vector<double> w = model.weights, grad(m), trial(m), trial_grad(m);
  double f = objective.evaluate(w, grad);
  if (!std::isfinite(f)) throw DivergenceError("objective is not finite at the initial point");
  model.objective_trace.push_back(f);
  double step = config.initial_step;

  std::size_t it = 0;
  while (it < config.max_iterations) {
    ++it;
    double f_trial = 0.0;
    bool accepted = false, moved = false;
    for (int tries = 0; tries < 60; ++tries) {
      double decrease = 0.0;
      moved = false;
      for (std::size_t i = 0; i < m; ++i) {
        trial[i] = std::max(0.0, w[i] - step * grad[i]);
        decrease += grad[i] * (trial[i] - w[i]);
        moved = moved || trial[i] != w[i];
      }
      if (!moved) break;
      f_trial = objective.evaluate(trial, trial_grad);
      if (std::isfinite(f_trial) && f_trial <= f + config.armijo * decrease) {
        accepted = true;
        break;
      }
      if (!std::isfinite(f_trial) && step < 1e-300)
        throw DivergenceError("objective diverged at iteration " + std::to_string(it) +
                              " with step size " + format_number(step));
      step *= config.backtrack;
    }
    if (!moved || !accepted) break;  // projected gradient vanished or no descent possible

    double ss = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = trial[i] - w[i], y = trial_grad[i] - grad[i];
      ss += s * s;
      sy += s * y;
    }
    const double rel = (f - f_trial) / std::max(1.0, std::abs(f));
    w.swap(trial);
    grad.swap(trial_grad);
    f = f_trial;
    model.objective_trace.push_back(f);
    step = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e10) : std::min(step * 2.0, 1e10);
    if (rel < config.tolerance) break;
  }
  model.weights = std::move(w);
  model.iterations = it;
  model.objective = f;
  return model;
}

inline Model train_model(const Dataset& data, const AggregatorSpec& spec, const FeatureLayout& layout,
                         const TrainConfig& config) {
  const auto idx = all_queries(data);
  return train_model(data, idx, spec, layout, config);
}

/// Picks lambda from the configured ladder by inner k-fold MAP over the given
/// training queries; ties go to the earlier (smaller) value.
inline double select_lambda(const Dataset& data, std::span<const std::size_t> queries,
                            const AggregatorSpec& spec, const FeatureLayout& layout,
                            const TrainConfig& config) {
  if (config.lambda_grid.empty()) return config.lambda;
  if (config.lambda_grid.size() == 1 || queries.size() < 2) return config.lambda_grid.front();
  const std::size_t k = std::min(config.lambda_folds, queries.size());
  const Protocol protocol{k == queries.size() ? Protocol::Kind::LeaveOneOut : Protocol::Kind::KFold, k};
  double best_lambda = config.lambda_grid.front(), best_map = -1.0;
  for (double lambda : config.lambda_grid) {
    TrainConfig c = config;
    c.lambda = lambda;
    auto fit = [&](std::span<const std::size_t> train) {
      std::vector<std::size_t> ids;
      for (auto t : train) ids.push_back(queries[t]);
      auto model = std::make_shared<Model>(train_model(data, ids, spec, layout, c));
      return [&, model](std::size_t q) { return rank_query(*model, data[queries[q]]); };
    };
    auto judgment = [&](std::size_t q) -> const QueryJudgment& { return data[queries[q]].judgment; };
    const double map = cross_validate("lambda", queries.size(), fit, judgment, protocol,
                                      substream_seed(config.seed, "lambda"))
                           .macro()
                           .ap;
    if (map > best_map) best_map = map, best_lambda = lambda;
  }
  return best_lambda;
}

// ---------------------------------------------------------------------------
// Soft cutoff by rank decile

/// One sampled pair of the cutoff problem: margin V(g) - V(b) is
/// sum_r D(r) * diff[r], where diff[r] is the difference of the per-decile
/// sums of raw context scores.
struct CutoffPair {
  std::array<double, kDeciles> diff{};
  double weight = 1.0;  // 1 / |P_q|
};

inline std::array<double, kDeciles> decile_sums(std::span<const double> scores) {
  std::array<double, kDeciles> sums{};
  const auto decile = context_deciles(scores);
  for (std::size_t x = 0; x < scores.size(); ++x) sums[decile[x]] += scores[x];
  return sums;
}

inline std::vector<CutoffPair> cutoff_pairs(std::span<const double> w, const Dataset& data,
                                            std::span<const std::size_t> queries,
                                            const TrainConfig& config) {
  std::vector<CutoffPair> out;
  for (auto qi : queries) {
    const auto& q = data.at(qi);
    if (q.good.empty() || q.bad.empty()) continue;
    const auto pairs = sample_pairs(q, config.pair_cap, config.seed);
    std::vector<std::array<double, kDeciles>> sums(q.entities.size());
    for (std::size_t e = 0; e < q.entities.size(); ++e)
      sums[e] = decile_sums(raw_scores(w, q.entities[e].contexts));
    const double weight = 1.0 / static_cast<double>(pairs.size());
    for (const auto& [g, b] : pairs) {
      CutoffPair p;
      p.weight = weight;
      for (std::size_t r = 0; r < kDeciles; ++r) p.diff[r] = sums[g][r] - sums[b][r];
      out.push_back(p);
    }
  }
  return out;
}

/// D(0)/lambda + sum_p weight_p * max(0, 1 - margin_p(D)).
inline double cutoff_objective(const std::array<double, kDeciles>& decay,
                               std::span<const CutoffPair> pairs, double lambda) {
  double obj = decay[0] / lambda;
  for (const auto& p : pairs) {
    double margin = 0.0;
    for (std::size_t r = 0; r < kDeciles; ++r) margin += decay[r] * p.diff[r];
    obj += p.weight * std::max(0.0, 1.0 - margin);
  }
  return obj;
}

/// Exact LP for the decile decay. With D(r) = sum_{k >= r} u_k and u >= 0 the
/// ordering constraints hold by construction; the problem is solved through
/// its dual
///
///   max sum_p y_p  s.t.  sum_p y_p C_pk <= 1/lambda (k = 0..9),  0 <= y_p <= weight_p
///
/// where C_pk = sum_{r <= k} diff_pr, and u is read off the row prices.
inline CutoffModel solve_soft_cutoff(std::span<const CutoffPair> pairs, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("cutoff regularization width must be positive");
  CutoffModel model;
  model.lambda = lambda;
  if (pairs.empty()) return model;

  BoundedLp lp;
  lp.rows = kDeciles;
  lp.cols = pairs.size();
  lp.a.assign(lp.rows * lp.cols, 0.0);
  lp.b.assign(kDeciles, 1.0 / lambda);
  lp.c.assign(lp.cols, 1.0);
  lp.upper.resize(lp.cols);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    double cumulative = 0.0;
    for (std::size_t k = 0; k < kDeciles; ++k) {
      cumulative += pairs[p].diff[k];
      lp.at(k, p) = cumulative;
    }
    lp.upper[p] = pairs[p].weight;
  }
  LpSolution sol;
  try {
    sol = solve_bounded_lp(lp);
  } catch (const LpError& e) {
    throw std::runtime_error(std::string("soft cutoff LP failed: ") + e.what());
  }
  double tail = 0.0;
  for (std::size_t r = kDeciles; r-- > 0;) {
    tail += sol.duals[r];
    model.decay[r] = tail;
  }
  return model;
}

inline CutoffModel train_soft_cutoff(const Model& model, const Dataset& data,
                                     std::span<const std::size_t> queries, double lambda) {
  const auto pairs = cutoff_pairs(model.weights, data, queries, model.config);
  return solve_soft_cutoff(pairs, lambda);
}

// ---------------------------------------------------------------------------
// Model files

inline nlohmann::json layout_to_json(const FeatureLayout& l) {
  return {{"pad", l.pad},
          {"noprox", l.noprox},
          {"idfupto", l.idfupto},
          {"grid", l.grid},
          {"rectangle", l.rectangle},
          {"voting", l.voting},
          {"distance_bounds", l.distance_bounds},
          {"idf_bounds", l.idf_bounds},
          {"offsets",
           {{"pad", l.pad_offset()},
            {"noprox", l.noprox_offset()},
            {"idfupto", l.idfupto_offset()},
            {"grid", l.grid_offset()},
            {"rectangle", l.rectangle_offset()},
            {"dimension", l.dimension()}}}};
}

inline FeatureLayout layout_from_json(const nlohmann::json& j) {
  FeatureLayout l;
  l.pad = j.at("pad").get<bool>();
  l.noprox = j.at("noprox").get<bool>();
  l.idfupto = j.at("idfupto").get<bool>();
  l.grid = j.at("grid").get<bool>();
  l.rectangle = j.at("rectangle").get<bool>();
  l.voting = j.value("voting", false);
  l.distance_bounds = j.at("distance_bounds").get<std::vector<std::uint32_t>>();
  l.idf_bounds = j.at("idf_bounds").get<std::vector<double>>();
  l.validate();
  return l;
}

inline nlohmann::json model_to_json(const Model& m) {
  const auto& c = m.config;
  nlohmann::json agg = {{"name", m.aggregator.name()}};
  if (m.aggregator.op == Operator::SoftCutoff)
    agg["cutoff"] = {{"decay", m.aggregator.cutoff.decay}, {"lambda", m.aggregator.cutoff.lambda}};
  return {{"format", "entrank-model/1"},
          {"layout", layout_to_json(m.layout)},
          {"aggregator", agg},
          {"weights", m.weights},
          {"train_config",
           {{"lambda", c.lambda},
            {"smoothness", c.smoothness},
            {"init", c.init},
            {"max_iterations", c.max_iterations},
            {"tolerance", c.tolerance},
            {"initial_step", c.initial_step},
            {"backtrack", c.backtrack},
            {"armijo", c.armijo},
            {"pair_cap", c.pair_cap},
            {"seed", c.seed},
            {"lambda_grid", c.lambda_grid},
            {"lambda_folds", c.lambda_folds}}},
          {"iterations", m.iterations},
          {"objective", std::isfinite(m.objective) ? nlohmann::json(m.objective) : nlohmann::json()}};
}

inline Model model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "entrank-model/1") throw FormatError("not an entrank model file");
  Model m;
  m.layout = layout_from_json(j.at("layout"));
  const auto& agg = j.at("aggregator");
  m.aggregator = AggregatorSpec::parse(agg.at("name").get<std::string>());
  if (agg.contains("cutoff")) {
    m.aggregator.cutoff.decay = agg.at("cutoff").at("decay").get<std::array<double, kDeciles>>();
    m.aggregator.cutoff.lambda = agg.at("cutoff").at("lambda").get<double>();
  }
  m.weights = j.at("weights").get<std::vector<double>>();
  if (m.weights.size() != m.layout.dimension())
    throw FormatError("model has " + std::to_string(m.weights.size()) + " weights, layout needs " +
                      std::to_string(m.layout.dimension()));
  const auto& c = j.at("train_config");
  m.config.lambda = c.at("lambda").get<double>();
  m.config.smoothness = c.at("smoothness").get<double>();
  m.config.init = c.at("init").get<double>();
  m.config.max_iterations = c.at("max_iterations").get<std::size_t>();
  m.config.tolerance = c.at("tolerance").get<double>();
  m.config.initial_step = c.at("initial_step").get<double>();
  m.config.backtrack = c.at("backtrack").get<double>();
  m.config.armijo = c.at("armijo").get<double>();
  m.config.pair_cap = c.at("pair_cap").get<std::size_t>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  m.config.lambda_grid = c.at("lambda_grid").get<std::vector<double>>();
  m.config.lambda_folds = c.at("lambda_folds").get<std::size_t>();
  m.iterations = j.at("iterations").get<std::size_t>();
  if (!j.at("objective").is_null()) m.objective = j.at("objective").get<double>();
  return m;
}

}  // namespace entrank
