#pragma once

// End-to-end systems: candidate retrieval -> features -> trained or baseline
// entity scoring -> rankings, and query-level cross-validation over them.

#include <algorithm>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aggregators.hpp"
#include "corpus.hpp"
#include "eval.hpp"
#include "features.hpp"
#include "training.hpp"

namespace entrank {

enum class Baseline { None, Balog2, Macdonald, Petkova };

inline Baseline parse_baseline(const std::string& s) {
  if (s.empty() || s == "none") return Baseline::None;
  if (s == "balog2") return Baseline::Balog2;
  if (s == "macdonald") return Baseline::Macdonald;
  if (s == "petkova") return Baseline::Petkova;
  throw std::invalid_argument("unknown baseline '" + s + "' (balog2 | macdonald | petkova)");
}

inline std::string baseline_name(Baseline b) {
  switch (b) {
    case Baseline::Balog2: return "balog2";
    case Baseline::Macdonald: return "macdonald";
    case Baseline::Petkova: return "petkova";
    case Baseline::None: break;
  }
  return "none";
}

struct SystemConfig {
  FeatureLayout layout = FeatureLayout::parse("pad,noprox,rect");
  AggregatorSpec aggregator = AggregatorSpec::sum();
  Baseline baseline = Baseline::None;
  RetrievalConfig retrieval{};
  Bm25Params bm25{};
  TrainConfig train{};
  bool tune_lambda = false;
  double lm_smoothing = 0.5;
  double kernel_width = 25.0;
  double cutoff_lambda = 1.0;

  std::string tag() const {
    if (baseline != Baseline::None) return baseline_name(baseline);
    return aggregator.name() + ":" + layout.families();
  }
};

/// Scales each voting aggregate by its maximum over the query's candidates,
/// so that the entity-level linear model sees features in [0, 1].
inline void normalize_voting(TrainingQuery& q) {
  std::vector<double> top(FeatureLayout::kVotingWidth, 0.0);
  for (const auto& e : q.entities)
    for (const auto& [i, v] : e.contexts.front().entries()) top[i] = std::max(top[i], v);
  for (auto& e : q.entities) {
    FeatureVector scaled;
    for (const auto& [i, v] : e.contexts.front().entries()) scaled.add(i, top[i] > 0 ? v / top[i] : 0.0);
    e.contexts.front() = std::move(scaled);
  }
}

/// Per-query feature vectors for every candidate, with judged-candidate
/// indices. Queries without any judged good entity are dropped.
inline Dataset build_dataset(const CorpusIndex& index, std::span<const Query> queries,
                             std::span<const CandidateSet> candidates, const Judgments& judgments,
                             const FeatureLayout& layout, const Bm25Params& bm25_params = {}) {
  Dataset data;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& query = queries[qi];
    auto jt = judgments.find(query.query_id);
    TrainingQuery tq;
    tq.query_id = query.query_id;
    if (jt != judgments.end()) tq.judgment = jt->second;
    const QueryIdf idf = QueryIdf::compute(index, query);
    for (const auto& [entity, contexts] : candidates[qi].support) {
      EntitySupport es{entity, {}};
      if (layout.voting) {
        std::vector<double> scores;
        for (const auto& ctx : contexts) scores.push_back(bm25(index, ctx.doc, query, bm25_params));
        es.contexts.push_back(voting_aggregates(scores).to_features());
      } else {
        for (const auto& ctx : contexts)
          es.contexts.push_back(build_feature_vector(index, ctx, query, idf, layout, bm25_params));
      }
      if (tq.judgment.good.count(entity)) tq.good.push_back(tq.entities.size());
      if (tq.judgment.bad.count(entity)) tq.bad.push_back(tq.entities.size());
      tq.entities.push_back(std::move(es));
    }
    if (layout.voting) normalize_voting(tq);
    data.push_back(std::move(tq));
  }
  return data;
}

inline bool is_lm_baseline(Baseline b) { return b == Baseline::Balog2 || b == Baseline::Petkova; }

/// Ranks a query's candidates with a language-model baseline.
inline Ranking baseline_ranking(const CorpusIndex& index, const Query& query,
                                const CandidateSet& candidates, const SystemConfig& config) {
  if (!is_lm_baseline(config.baseline))
    throw std::invalid_argument("'" + baseline_name(config.baseline) + "' is not a language-model baseline");
  std::vector<EntityScore> scores;
  for (const auto& [entity, contexts] : candidates.support) {
    const double v = config.baseline == Baseline::Balog2
                         ? balog2_score(index, query, contexts, config.lm_smoothing)
                         : petkova_score(index, query, contexts, config.kernel_width, config.lm_smoothing);
    scores.push_back({entity, v});
  }
  return make_ranking(query.query_id, std::move(scores));
}

/// A trained or fixed system over a fixed set of judged queries.
class Experiment {
 public:
  Experiment(const CorpusIndex& index, std::vector<Query> queries, const Judgments& judgments,
             SystemConfig config)
      : index_(index), config_(std::move(config)) {
    if (config_.baseline == Baseline::Macdonald) {
      config_.layout = FeatureLayout::parse("voting");
      config_.aggregator = AggregatorSpec::sum();
    }
    config_.layout.validate();
    std::sort(queries.begin(), queries.end(),
              [](const Query& a, const Query& b) { return a.query_id < b.query_id; });
    for (auto& q : queries) {
      auto it = judgments.find(q.query_id);
      if (it == judgments.end() || it->second.good.empty()) continue;
      queries_.push_back(std::move(q));
    }
    for (const auto& q : queries_) candidates_.push_back(find_candidates(index_, q, config_.retrieval));
    const FeatureLayout layout = is_lm_baseline(config_.baseline) ? FeatureLayout::parse("pad") : config_.layout;
    data_ = build_dataset(index_, queries_, candidates_, judgments, layout, config_.bm25);
  }

  std::size_t size() const { return queries_.size(); }
  const Dataset& dataset() const { return data_; }
  const std::vector<Query>& queries() const { return queries_; }
  const std::vector<CandidateSet>& candidates() const { return candidates_; }
  const SystemConfig& config() const { return config_; }

  bool trainable() const {
    return config_.baseline == Baseline::None || config_.baseline == Baseline::Macdonald;
  }

  /// Fits the system on the given query indices. Fixed systems (LM
  /// baselines, the support-count ranker) return an untrained model.
  Model fit(std::span<const std::size_t> train) const {
    if (!trainable()) return Model{{}, FeatureLayout::parse("pad"), config_.aggregator, config_.train, 0, std::numeric_limits<double>::quiet_NaN(), {}};
    const auto& layout = config_.layout;
    if (config_.aggregator.transform == TransformKind::Indicator && config_.aggregator.op == Operator::Sum) {
      if (!layout.pad) throw std::invalid_argument("support-count ranker needs the pad feature");
      Model m{std::vector<double>(layout.dimension(), 0.0), layout, config_.aggregator, config_.train, 0, std::numeric_limits<double>::quiet_NaN(), {}};
      m.weights[layout.pad_offset()] = 1.0;
      return m;
    }
    TrainConfig tc = config_.train;
    const bool cutoff = config_.aggregator.op == Operator::SoftCutoff;
    const AggregatorSpec base = cutoff ? AggregatorSpec::sum() : config_.aggregator;
    if (config_.tune_lambda) tc.lambda = select_lambda(data_, train, base, layout, tc);
    Model model = train_model(data_, train, base, layout, tc);
    if (cutoff) model.aggregator = AggregatorSpec::softcutoff(
                    train_soft_cutoff(model, data_, train, config_.cutoff_lambda));
    return model;
  }

  Model fit_all() const {
    const auto idx = all_queries(data_);
    return fit(idx);
  }

  Ranking rank(const Model& model, std::size_t q) const {
    const auto& query = queries_.at(q);
    const auto& cands = candidates_.at(q);
    if (is_lm_baseline(config_.baseline)) return baseline_ranking(index_, query, cands, config_);
    if (model.weights.size() != model.layout.dimension() || !(model.layout == config_.layout))
      throw std::invalid_argument("model layout '" + model.layout.families() +
                                  "' does not match the experiment layout '" +
                                  config_.layout.families() + "'");
    return rank_query(model, data_.at(q));
  }

  /// Held-out evaluation. Optionally collects the per-fold models and the
  /// held-out rankings (in query order).
  EvalReport cross_validate(const Protocol& protocol, std::uint64_t seed,
                            std::vector<Model>* models = nullptr,
                            std::vector<Ranking>* rankings = nullptr) const {
    auto fit_fn = [&](std::span<const std::size_t> train) {
      auto model = std::make_shared<Model>(fit(train));
      if (models) models->push_back(*model);
      return [this, model, rankings](std::size_t q) {
        Ranking r = rank(*model, q);
        if (rankings) rankings->push_back(r);
        return r;
      };
    };
    auto judgment = [&](std::size_t q) -> const QueryJudgment& { return data_[q].judgment; };
    auto report = entrank::cross_validate(config_.tag(), size(), fit_fn, judgment, protocol, seed);
    if (rankings)
      std::sort(rankings->begin(), rankings->end(),
                [](const Ranking& a, const Ranking& b) { return a.query_id < b.query_id; });
    return report;
  }

  /// Rankings of every query under one model.
  std::vector<Ranking> rank_all(const Model& model) const {
    std::vector<Ranking> out;
    for (std::size_t q = 0; q < size(); ++q) out.push_back(rank(model, q));
    return out;
  }

 private:
  const CorpusIndex& index_;
  SystemConfig config_;
  std::vector<Query> queries_;
  std::vector<CandidateSet> candidates_;
  Dataset data_;
};

}  // namespace entrank
