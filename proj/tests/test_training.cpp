#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "entrank/training.hpp"
#include "oracles.hpp"

using namespace entrank;

namespace {

TrainingQuery random_query(std::mt19937& rng, const std::string& id, std::uint32_t dim, std::size_t goods,
                           std::size_t bads, std::size_t max_support = 10) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TrainingQuery q;
  q.query_id = id;
  for (std::size_t e = 0; e < goods + bads; ++e) {
    EntitySupport es{id + "/e" + std::to_string(e), {}};
    const std::size_t n = 1 + rng() % max_support;
    for (std::size_t x = 0; x < n; ++x) {
      FeatureVector f;
      f.add(0, 1.0);
      for (std::uint32_t i = 1; i < dim; ++i)
        if (u(rng) < 0.4) f.add(i, u(rng));
      es.contexts.push_back(f);
    }
    (e < goods ? q.good : q.bad).push_back(q.entities.size());
    (e < goods ? q.judgment.good : q.judgment.bad).insert(es.entity_id);
    q.entities.push_back(std::move(es));
  }
  return q;
}

Dataset random_dataset(std::uint32_t seed, std::size_t queries, std::uint32_t dim) {
  std::mt19937 rng(seed);
  Dataset d;
  for (std::size_t q = 0; q < queries; ++q) d.push_back(random_query(rng, "q" + std::to_string(q), dim, 2 + rng() % 3, 2 + rng() % 4));
  return d;
}

// Pad plus a 3x3 rectangle block: dimension 10.
FeatureLayout small_grid_layout() {
  FeatureLayout l = FeatureLayout::parse("pad,rect");
  l.distance_bounds = {2, 4, 8};
  l.idf_bounds = {0.3, 0.6, 1.0};
  l.validate();
  return l;
}

const std::vector<AggregatorSpec> kDifferentiable{AggregatorSpec::sum(), AggregatorSpec::avg(),
                                                  AggregatorSpec::softmax(), AggregatorSpec::softcount(),
                                                  AggregatorSpec::softor()};

}  // namespace

TEST(SoftHinge, ClosedFormsAndAsymptotes) {
  auto z = soft_hinge(0.0);
  EXPECT_NEAR(z.value, std::log(2.0), 1e-15);
  EXPECT_EQ(z.derivative, 0.5);
  auto big = soft_hinge(40.0);
  EXPECT_NEAR(big.value, 40.0, 1e-12);
  EXPECT_NEAR(big.derivative, 1.0, 1e-15);
  auto small = soft_hinge(-40.0);
  EXPECT_LT(small.value, 1e-17);
  EXPECT_LT(small.derivative, 1e-17);
  EXPECT_TRUE(std::isfinite(soft_hinge(1e4).value));
}

TEST(Objective, ZeroWeightsGiveSoftHingeOfOnePerQuery) {
  auto data = random_dataset(1, 4, 10);
  auto layout = small_grid_layout();
  TrainConfig cfg;
  PairwiseObjective obj(data, all_queries(data), AggregatorSpec::sum(), layout, cfg);
  std::vector<double> w(layout.dimension(), 0.0);
  EXPECT_NEAR(obj.evaluate(w), 4.0 * std::log1p(std::exp(1.0)), 1e-12);
}

TEST(Objective, RegularizerShrinksWithLambda) {
  auto data = random_dataset(2, 2, 10);
  auto layout = small_grid_layout();
  std::vector<double> w(layout.dimension());
  std::mt19937 rng(3);
  for (auto& x : w) x = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
  double previous = INFINITY;
  for (double lambda : {0.5, 1.0, 2.0, 4.0}) {
    TrainConfig cfg;
    cfg.lambda = lambda;
    PairwiseObjective obj(data, all_queries(data), AggregatorSpec::sum(), layout, cfg);
    const double r = obj.regularizer(w);
    EXPECT_LT(r, previous);
    previous = r;
  }
}

TEST(Objective, RegularizerMatchesDefinition) {
  auto layout = small_grid_layout();
  Dataset empty;
  TrainConfig cfg;
  cfg.lambda = 2.0;
  cfg.smoothness = 1.0;
  PairwiseObjective obj(empty, {}, AggregatorSpec::sum(), layout, cfg);
  std::vector<double> w(layout.dimension());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * static_cast<double>(i * i % 7);
  double ridge = 0, smooth = 0;
  for (double x : w) ridge += x * x;
  const auto base = layout.rectangle_offset();
  for (std::uint32_t i = 0; i < 3; ++i)
    for (std::uint32_t j = 0; j < 3; ++j) {
      const double c = w[base + i * 3 + j];
      if (i > 0) smooth += (c - w[base + (i - 1) * 3 + j]) * (c - w[base + (i - 1) * 3 + j]);
      if (j > 0) smooth += (c - w[base + i * 3 + j - 1]) * (c - w[base + i * 3 + j - 1]);
    }
  EXPECT_NEAR(obj.regularizer(w), (ridge + smooth) / (2 * 4.0), 1e-14);
}

TEST(Objective, SkipsQueriesWithoutPairs) {
  auto data = random_dataset(4, 3, 10);
  data[1].bad.clear();
  PairwiseObjective obj(data, all_queries(data), AggregatorSpec::sum(), small_grid_layout(), {});
  EXPECT_EQ(obj.num_queries(), 2u);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  std::mt19937 rng(5);
  auto layout = small_grid_layout();
  const auto dim = layout.dimension();
  for (const auto& spec : kDifferentiable) {
    for (int trial = 0; trial < 10; ++trial) {
      Dataset data{random_query(rng, "q0", dim, 2, 3), random_query(rng, "q1", dim, 1, 4)};
      PairwiseObjective obj(data, all_queries(data), spec, layout, {});
      std::vector<double> w(dim);
      for (auto& x : w) x = std::uniform_real_distribution<double>(0.0, 0.8)(rng);
      std::vector<double> grad(dim);
      obj.evaluate(w, grad);
      auto fd = oracle::fd_gradient([&](const std::vector<double>& p) { return obj.evaluate(p); }, w);
      EXPECT_LT(oracle::relative_error(grad, fd), 1e-4) << spec.name();
    }
  }
}

TEST(Objective, SumIdentityIsMidpointConvex) {
  auto data = random_dataset(6, 5, 10);
  auto layout = small_grid_layout();
  PairwiseObjective obj(data, all_queries(data), AggregatorSpec::sum(), layout, {});
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(layout.dimension()), b(a.size()), mid(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = u(rng), b[i] = u(rng), mid[i] = 0.5 * (a[i] + b[i]);
    EXPECT_LE(obj.evaluate(mid), 0.5 * (obj.evaluate(a) + obj.evaluate(b)) + 1e-9);
  }
}

TEST(Objective, InvariantUnderReordering) {
  auto data = random_dataset(8, 4, 10);
  auto layout = small_grid_layout();
  std::vector<double> w(layout.dimension(), 0.3);
  const double base = PairwiseObjective(data, all_queries(data), AggregatorSpec::sum(), layout, {}).evaluate(w);
  Dataset shuffled = data;
  std::reverse(shuffled.begin(), shuffled.end());
  for (auto& q : shuffled) {
    for (auto& e : q.entities) std::reverse(e.contexts.begin(), e.contexts.end());
    std::reverse(q.entities.begin(), q.entities.end());
    const auto n = q.entities.size();
    for (auto& i : q.good) i = n - 1 - i;
    for (auto& i : q.bad) i = n - 1 - i;
  }
  const double moved = PairwiseObjective(shuffled, all_queries(shuffled), AggregatorSpec::sum(), layout, {}).evaluate(w);
  EXPECT_NEAR(moved, base, 1e-12 * std::abs(base));
}

TEST(PairSampling, CapIsSeededPerQuery) {
  std::mt19937 rng(9);
  auto q = random_query(rng, "q", 4, 20, 30, 1);
  EXPECT_EQ(sample_pairs(q, 0, 1).size(), 600u);
  EXPECT_EQ(sample_pairs(q, 10000, 1).size(), 600u);
  auto a = sample_pairs(q, 50, 1);
  EXPECT_EQ(a.size(), 50u);
  EXPECT_EQ(a, sample_pairs(q, 50, 1));
  EXPECT_NE(a, sample_pairs(q, 50, 2));
  std::set<Pair> unique(a.begin(), a.end());
  EXPECT_EQ(unique.size(), a.size());
}

TEST(Train, SeparableDataHasNoTrainingSwaps) {
  // Feature 1 fires on good entities only.
  std::mt19937 rng(10);
  Dataset data;
  for (int qi = 0; qi < 4; ++qi) {
    TrainingQuery q;
    q.query_id = "q" + std::to_string(qi);
    for (int e = 0; e < 8; ++e) {
      const bool good = e < 3;
      EntitySupport es{"e" + std::to_string(e), {}};
      for (std::size_t x = 0, n = 1 + rng() % 4; x < n; ++x) {
        FeatureVector f;
        f.add(0, 1.0);
        if (good) f.add(1, 1.0);
        f.add(2, std::uniform_real_distribution<double>(0, 1)(rng));
        es.contexts.push_back(f);
      }
      (good ? q.good : q.bad).push_back(q.entities.size());
      (good ? q.judgment.good : q.judgment.bad).insert(es.entity_id);
      q.entities.push_back(std::move(es));
    }
    data.push_back(std::move(q));
  }
  FeatureLayout l = FeatureLayout::parse("pad,noprox");
  TrainConfig cfg;
  cfg.lambda = 100;
  auto model = train_model(data, AggregatorSpec::sum(), l, cfg);
  for (const auto& q : data) EXPECT_EQ(compute_metrics(rank_query(model, q), q.judgment).pairswap, 0.0);
  for (double w : model.weights) EXPECT_GE(w, 0.0);
}

TEST(Train, ZeroIterationsReturnsInitialModel) {
  auto data = random_dataset(11, 3, 10);
  TrainConfig cfg;
  cfg.max_iterations = 0;
  auto model = train_model(data, AggregatorSpec::sum(), small_grid_layout(), cfg);
  EXPECT_EQ(model.weights, std::vector<double>(small_grid_layout().dimension(), cfg.init));
  EXPECT_EQ(model.iterations, 0u);
}

TEST(Train, DeterministicAndMonotone) {
  auto data = random_dataset(12, 5, 10);
  for (const auto& spec : kDifferentiable) {
    auto a = train_model(data, spec, small_grid_layout(), {});
    auto b = train_model(data, spec, small_grid_layout(), {});
    EXPECT_EQ(a.weights, b.weights) << spec.name();
    for (std::size_t i = 1; i < a.objective_trace.size(); ++i)
      EXPECT_LE(a.objective_trace[i], a.objective_trace[i - 1]) << spec.name();
    for (double w : a.weights) EXPECT_GE(w, 0.0);
    EXPECT_LT(a.objective, a.objective_trace.front()) << spec.name();
  }
}

TEST(Train, RejectsIndicatorAndBadLambda) {
  auto data = random_dataset(13, 2, 10);
  EXPECT_THROW(train_model(data, AggregatorSpec::count(), small_grid_layout(), {}), std::invalid_argument);
  TrainConfig cfg;
  cfg.lambda = 0;
  EXPECT_THROW(train_model(data, AggregatorSpec::sum(), small_grid_layout(), cfg), std::invalid_argument);
}

TEST(Train, SelectLambdaReturnsGridValue) {
  auto data = random_dataset(14, 6, 10);
  TrainConfig cfg;
  cfg.max_iterations = 30;
  const double lambda = select_lambda(data, all_queries(data), AggregatorSpec::sum(), small_grid_layout(), cfg);
  EXPECT_NE(std::find(cfg.lambda_grid.begin(), cfg.lambda_grid.end(), lambda), cfg.lambda_grid.end());
}

TEST(ModelFile, RoundTripsExactly) {
  auto data = random_dataset(15, 3, 10);
  auto model = train_model(data, AggregatorSpec::softmax(), small_grid_layout(), {});
  auto back = model_from_json(nlohmann::json::parse(model_to_json(model).dump()));
  EXPECT_EQ(back.weights, model.weights);
  EXPECT_EQ(back.layout, model.layout);
  EXPECT_EQ(back.aggregator.name(), model.aggregator.name());
  EXPECT_EQ(back.objective, model.objective);
  EXPECT_EQ(back.iterations, model.iterations);
  EXPECT_EQ(back.config.lambda_grid, model.config.lambda_grid);
  EXPECT_EQ(model_to_json(back).dump(), model_to_json(model).dump());

  Model cut = model;
  cut.aggregator = AggregatorSpec::softcutoff({{1, 0.9, 0.5, 0.5, 0.3, 0.1, 0.1, 0, 0, 0}, 2.0});
  auto cut_back = model_from_json(model_to_json(cut));
  EXPECT_EQ(cut_back.aggregator.cutoff.decay, cut.aggregator.cutoff.decay);
  EXPECT_THROW(model_from_json(nlohmann::json{{"format", "other"}}), FormatError);
}

// ---------------------------------------------------------------------------
// Soft cutoff

namespace {

std::vector<CutoffPair> random_pairs(std::mt19937& rng, std::size_t n) {
  std::normal_distribution<double> g(0.2, 1.0);
  std::vector<CutoffPair> pairs(n);
  for (auto& p : pairs) {
    for (auto& d : p.diff) d = g(rng);
    p.weight = 1.0 / static_cast<double>(1 + rng() % 4);
  }
  return pairs;
}

}  // namespace

TEST(SoftCutoff, ConstraintsHoldAndBeatZero) {
  std::mt19937 rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    auto pairs = random_pairs(rng, 1 + rng() % 30);
    const double lambda = std::pow(10.0, std::uniform_real_distribution<double>(-1, 2)(rng));
    auto m = solve_soft_cutoff(pairs, lambda);
    for (std::size_t r = 0; r < kDeciles; ++r) {
      EXPECT_GE(m.decay[r], 0.0);
      if (r + 1 < kDeciles) {
        EXPECT_GE(m.decay[r], m.decay[r + 1]);
      }
    }
    const std::array<double, kDeciles> zero{};
    EXPECT_LE(cutoff_objective(m.decay, pairs, lambda), cutoff_objective(zero, pairs, lambda) + 1e-9);
  }
}

TEST(SoftCutoff, HeavyRegularizationDrivesDecayToZero) {
  std::mt19937 rng(17);
  auto pairs = random_pairs(rng, 10);
  auto m = solve_soft_cutoff(pairs, 1e-6);
  for (double d : m.decay) EXPECT_EQ(d, 0.0);
  double total = 0;
  for (const auto& p : pairs) total += p.weight;
  EXPECT_NEAR(cutoff_objective(m.decay, pairs, 1e-6), total, 1e-12);
}

TEST(SoftCutoff, TwoEntityInstanceMatchesGridSearch) {
  // Good entity contexts outscore the bad entity at every decile.
  CutoffPair p;
  p.diff = {0.9, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.2, 0.1, 0.1};
  p.weight = 1.0;
  const std::vector<CutoffPair> pairs{p};
  const double lambda = 2.0;
  auto m = solve_soft_cutoff(pairs, lambda);
  const double lp = cutoff_objective(m.decay, pairs, lambda);
  EXPECT_LT(lp, 1.0);

  // Every non-increasing D with values on a 0.05 grid over [0, 1].
  const int levels = 20;
  const double step = 1.0 / levels;
  double best = INFINITY;
  std::array<double, kDeciles> d{};
  std::function<void(std::size_t, int)> search = [&](std::size_t r, int cap) {
    if (r == kDeciles) {
      best = std::min(best, cutoff_objective(d, pairs, lambda));
      return;
    }
    for (int k = 0; k <= cap; ++k) {
      d[r] = k * step;
      search(r + 1, k);
    }
  };
  search(0, levels);
  EXPECT_LE(lp, best + 1e-12);
  // Objective slope in D is at most 1/lambda + sum|diff| per unit step.
  double slope = 1.0 / lambda;
  for (double x : p.diff) slope += std::abs(x);
  EXPECT_GE(lp, best - slope * step);
}

TEST(SoftCutoff, TrainedFromModel) {
  auto data = random_dataset(18, 4, 10);
  auto model = train_model(data, AggregatorSpec::sum(), small_grid_layout(), {});
  auto cut = train_soft_cutoff(model, data, all_queries(data), 1.0);
  for (std::size_t r = 0; r + 1 < kDeciles; ++r) EXPECT_GE(cut.decay[r], cut.decay[r + 1]);
  EXPECT_GE(cut.decay[kDeciles - 1], 0.0);
}
