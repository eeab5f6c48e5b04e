#pragma once

// Synthetic annotated corpus with planted relevance signal.
//
// Each query owns a few rare terms plus one common topic word. Every judged
// entity gets a number of supporting documents; in each one the query terms
// are placed either close to the entity mention or far from it, and the rare
// terms are either present or absent. Good and bad entities differ only in
// the probabilities of these draws and in their expected support count, so
// each signal can be switched on independently (0 = good and bad identical).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "rng.hpp"

namespace entrank {

struct SyntheticParams {
  std::size_t num_queries = 20;
  std::size_t num_entities = 400;    // entity pool; judged and filler mentions draw from it
  std::size_t good_per_query = 4;
  std::size_t bad_per_query = 12;
  std::size_t rare_terms_per_query = 2;
  std::size_t common_vocab = 30;     // topic words shared across queries
  std::size_t background_vocab = 2000;
  std::size_t filler_docs = 300;
  std::size_t doc_length = 120;
  double common_rate = 0.3;          // chance a filler doc carries a given topic word
  double base_support = 3.0;         // mean supporting documents of a bad entity
  double count_skew = 2.0;           // good mean = base * (1 + count_skew * count_signal)
  double count_signal = 0.0;
  double proximity_signal = 0.0;
  double rarity_signal = 0.0;
  double comention_rate = 0.5;       // chance a support doc also mentions another judged entity
  std::uint32_t near_max = 4;        // close placements: distance in [1, near_max]
  std::uint32_t far_min = 12;        // far placements: distance in [far_min, far_max]
  std::uint32_t far_max = 40;
};

struct SyntheticCorpus {
  std::vector<Document> documents;
  EntityCatalog catalog;
  std::vector<Query> queries;
  Judgments judgments;
};

namespace detail {

inline std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

class DocumentBuilder {
 public:
  DocumentBuilder(std::size_t length, std::mt19937_64& rng, std::size_t vocab)
      : tokens_(length), used_(length, 0) {
    // Zipf-like background: index ~ floor(vocab^u) - 1.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& t : tokens_) {
      const auto k = static_cast<std::size_t>(std::pow(static_cast<double>(vocab), u(rng))) - 1;
      t = numbered("w", std::min(k, vocab - 1), 4);
    }
  }

  std::size_t size() const { return tokens_.size(); }
  bool free(std::size_t p) const { return p < tokens_.size() && !used_[p]; }

  void put(std::size_t p, std::string token) {
    tokens_[p] = std::move(token);
    used_[p] = 1;
  }

  Document finish(std::string id, std::vector<Mention> mentions) {
    return Document{std::move(id), std::move(tokens_), std::move(mentions)};
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<char> used_;
};

}  // namespace detail

inline void validate(const SyntheticParams& p) {
  if (p.num_queries == 0) throw std::invalid_argument("synthetic corpus needs at least one query");
  if (p.num_entities == 0) throw std::invalid_argument("synthetic corpus needs at least one entity");
  if (p.good_per_query == 0 || p.bad_per_query == 0)
    throw std::invalid_argument("every query needs good and bad entities");
  if (p.good_per_query + p.bad_per_query > p.num_entities)
    throw std::invalid_argument("entity pool smaller than the judged set of a query");
  if (p.common_vocab == 0 || p.background_vocab == 0)
    throw std::invalid_argument("vocabulary sizes must be positive");
  if (p.near_max == 0 || p.far_min <= p.near_max || p.far_max < p.far_min)
    throw std::invalid_argument("distance ranges must satisfy 1 <= near_max < far_min <= far_max");
  if (p.doc_length < 2 * (p.far_max + 2) + 1)
    throw std::invalid_argument("documents too short for the far placement range");
  for (double s : {p.count_signal, p.proximity_signal, p.rarity_signal, p.common_rate, p.comention_rate})
    if (s < 0.0 || s > 1.0) throw std::invalid_argument("signal strengths and rates must lie in [0, 1]");
}

inline SyntheticCorpus generate_synthetic(const SyntheticParams& params, std::uint64_t seed) {
  validate(params);
  auto rng = make_rng(seed, "synth");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto coin = [&](double p) { return unit(rng) < p; };
  auto uniform = [&](std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  SyntheticCorpus out;
  auto entity = [](std::size_t i) { return detail::numbered("e", i, 4); };
  for (std::size_t e = 0; e < params.num_entities; ++e)
    out.catalog[entity(e)] = {e % 2 ? "organization" : "person"};

  std::size_t next_doc = 0;
  auto doc_id = [&] { return detail::numbered("d", next_doc++, 6); };

  // Filler documents give the common topic words realistic document
  // frequencies and introduce unjudged candidate entities.
  for (std::size_t f = 0; f < params.filler_docs; ++f) {
    detail::DocumentBuilder b(params.doc_length, rng, params.background_vocab);
    for (std::size_t c = 0; c < params.common_vocab; ++c) {
      if (!coin(params.common_rate)) continue;
      auto p = uniform(0, b.size() - 1);
      if (b.free(p)) b.put(p, detail::numbered("topic", c, 2));
    }
    std::vector<Mention> mentions;
    const auto e = uniform(0, params.num_entities - 1);
    auto p = static_cast<std::uint32_t>(uniform(0, b.size() - 1));
    if (b.free(p)) {
      b.put(p, entity(e));
      mentions.push_back({entity(e), p, p + 1});
    }
    out.documents.push_back(b.finish(doc_id(), std::move(mentions)));
  }

  const double good_mean = params.base_support * (1.0 + params.count_skew * params.count_signal);
  const double close_good = 0.5 + 0.4 * params.proximity_signal;
  const double close_bad = 0.5 - 0.4 * params.proximity_signal;
  const double rare_good = 0.5 + 0.4 * params.rarity_signal;
  const double rare_bad = 0.5 - 0.4 * params.rarity_signal;

  for (std::size_t qi = 0; qi < params.num_queries; ++qi) {
    const std::string qid = detail::numbered("q", qi, 3);
    std::vector<std::string> rare;
    for (std::size_t r = 0; r < params.rare_terms_per_query; ++r)
      rare.push_back(qid + "x" + std::to_string(r));
    const std::string common = detail::numbered("topic", uniform(0, params.common_vocab - 1), 2);

    std::vector<std::pair<std::string, bool>> raw;
    for (const auto& r : rare) raw.emplace_back(r, false);
    raw.emplace_back(common, false);
    out.queries.push_back(make_query(qid, raw));

    std::vector<std::size_t> pool(params.num_entities);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    std::vector<std::size_t> judged;
    std::sample(pool.begin(), pool.end(), std::back_inserter(judged),
                params.good_per_query + params.bad_per_query, rng);
    std::shuffle(judged.begin(), judged.end(), rng);
    auto& j = out.judgments[qid];
    for (std::size_t k = 0; k < judged.size(); ++k)
      (k < params.good_per_query ? j.good : j.bad).insert(entity(judged[k]));

    for (std::size_t k = 0; k < judged.size(); ++k) {
      const bool good = k < params.good_per_query;
      std::poisson_distribution<int> support(good ? good_mean : params.base_support);
      const int n_docs = 1 + support(rng);
      for (int d = 0; d < n_docs; ++d) {
        detail::DocumentBuilder b(params.doc_length, rng, params.background_vocab);
        const auto margin = params.far_max + 1;
        const auto at = static_cast<std::uint32_t>(uniform(margin, b.size() - 1 - margin));
        b.put(at, entity(judged[k]));
        std::vector<Mention> mentions{{entity(judged[k]), at, at + 1}};

        const bool close = coin(good ? close_good : close_bad);
        const bool with_rare = coin(good ? rare_good : rare_bad);
        std::vector<std::string> words{common};
        if (with_rare) words.insert(words.end(), rare.begin(), rare.end());
        std::vector<std::uint32_t> placed;
        for (const auto& w : words) {
          for (int attempt = 0; attempt < 100; ++attempt) {
            const auto dist = static_cast<std::uint32_t>(
                close ? uniform(1, params.near_max) : uniform(params.far_min, params.far_max));
            const auto p = coin(0.5) ? at - dist : at + dist;
            if (!b.free(p)) continue;
            b.put(p, w);
            placed.push_back(p);
            break;
          }
        }
        if (coin(params.comention_rate) && judged.size() > 1) {
          auto other = uniform(0, judged.size() - 2);
          if (other >= k) ++other;
          for (int attempt = 0; attempt < 100; ++attempt) {
            const auto p = static_cast<std::uint32_t>(uniform(0, b.size() - 1));
            if (!b.free(p)) continue;
            const bool clear = std::all_of(placed.begin(), placed.end(), [&](std::uint32_t t) {
              return (t > p ? t - p : p - t) >= params.far_min;
            });
            if (!clear) continue;
            b.put(p, entity(judged[other]));
            mentions.push_back({entity(judged[other]), p, p + 1});
            break;
          }
        }
        out.documents.push_back(b.finish(doc_id(), std::move(mentions)));
      }
    }
  }
  return out;
}

}  // namespace entrank
