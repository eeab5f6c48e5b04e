// Command-line experiment runner: synth, ingest, train, rank, eval, xval, compare.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "entrank/entrank.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace entrank;

namespace {

/// Tracks the current stage and the artifacts written, and records both in
/// manifest.json whether the run succeeds or fails.
class Run {
 public:
  Run(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {}

  void stage(std::string name) { stage_ = std::move(name); }
  const fs::path& out() const { return out_; }

  void write(const std::string& name, const std::string& contents) {
    const fs::path path = out_ / name;
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    f << contents;
    if (!f) throw std::runtime_error("cannot write " + path.string());
    artifacts_.push_back(name);
  }

  void finish(const json& config, std::uint64_t seed, const std::string* error) const {
    json m;
    m["command"] = command_;
    m["config"] = config;
    m["seed"] = seed;
    m["version"] = ENTRANK_VERSION;
    m["artifacts"] = artifacts_;
    m["status"] = error ? "partial" : "complete";
    if (error) {
      m["failed_stage"] = stage_;
      m["error"] = *error;
    }
    std::error_code ec;
    fs::create_directories(out_, ec);
    std::ofstream f(out_ / "manifest.json", std::ios::binary);
    f << m.dump(2) << '\n';
  }

  const std::string& current_stage() const { return stage_; }
  const std::string& command() const { return command_; }

 private:
  std::string command_;
  fs::path out_;
  std::string stage_ = "setup";
  std::vector<std::string> artifacts_;
};

std::ifstream open_input(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return f;
}

std::string slurp(const std::string& path) {
  auto f = open_input(path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct DataOptions {
  std::string corpus, catalog, queries, qrels;

  void add(CLI::App& app, bool need_qrels) {
    app.add_option("--corpus", corpus, "Documents (JSON lines)")->required()->check(CLI::ExistingFile);
    app.add_option("--catalog", catalog, "Entity catalog (JSON lines)")->check(CLI::ExistingFile);
    app.add_option("--queries", queries, "Queries (JSON lines)")->required()->check(CLI::ExistingFile);
    auto* q = app.add_option("--qrels", qrels, "Judgments (TREC qrels)")->check(CLI::ExistingFile);
    if (need_qrels) q->required();
  }

  json to_json() const {
    return {{"corpus", corpus}, {"catalog", catalog}, {"queries", queries}, {"qrels", qrels}};
  }
};

struct SystemOptions {
  std::string layout = "pad,noprox,rect";
  std::string aggregator = "sum";
  std::string baseline = "none";
  std::string granularity = "mention";
  std::uint32_t window = 50;
  double lambda = 1.0;
  bool tune_lambda = false;
  std::size_t max_iterations = 300;
  std::size_t pair_cap = 10000;
  double cutoff_lambda = 1.0;
  double lm_smoothing = 0.5;
  double kernel_width = 25.0;

  void add(CLI::App& app) {
    app.add_option("--layout", layout, "Feature families, comma-separated")->capture_default_str();
    app.add_option("--aggregator", aggregator,
                   "sum | avg | softmax | softor | softcount | count | softcutoff")
        ->capture_default_str();
    app.add_option("--baseline", baseline, "none | balog2 | macdonald | petkova")->capture_default_str();
    app.add_option("--granularity", granularity, "mention | document")->capture_default_str();
    app.add_option("--window", window, "Context window radius in tokens")->capture_default_str();
    app.add_option("--lambda", lambda, "Regularization strength")->capture_default_str();
    app.add_flag("--tune-lambda", tune_lambda, "Select lambda by inner cross-validation");
    app.add_option("--max-iterations", max_iterations)->capture_default_str();
    app.add_option("--pair-cap", pair_cap, "Maximum (good, bad) pairs per query")->capture_default_str();
    app.add_option("--cutoff-lambda", cutoff_lambda, "Regularization of the decile decay")
        ->capture_default_str();
    app.add_option("--lm-smoothing", lm_smoothing, "Jelinek-Mercer weight of the document model")
        ->capture_default_str();
    app.add_option("--kernel-width", kernel_width, "Gaussian kernel width in tokens")->capture_default_str();
  }

  SystemConfig build(std::uint64_t seed) const {
    SystemConfig c;
    c.layout = FeatureLayout::parse(layout);
    c.aggregator = AggregatorSpec::parse(aggregator);
    c.baseline = parse_baseline(baseline);
    if (granularity == "mention") c.retrieval.granularity = Granularity::PerMention;
    else if (granularity == "document") c.retrieval.granularity = Granularity::BestPerDocument;
    else throw std::invalid_argument("unknown granularity '" + granularity + "' (mention | document)");
    c.retrieval.window = window;
    c.train.lambda = lambda;
    c.train.max_iterations = max_iterations;
    c.train.pair_cap = pair_cap;
    c.train.seed = seed;
    c.tune_lambda = tune_lambda;
    c.cutoff_lambda = cutoff_lambda;
    c.lm_smoothing = lm_smoothing;
    c.kernel_width = kernel_width;
    return c;
  }

  json to_json() const {
    return {{"layout", layout},       {"aggregator", aggregator},   {"baseline", baseline},
            {"granularity", granularity}, {"window", window},       {"lambda", lambda},
            {"tune_lambda", tune_lambda}, {"max_iterations", max_iterations}, {"pair_cap", pair_cap},
            {"cutoff_lambda", cutoff_lambda}, {"lm_smoothing", lm_smoothing},
            {"kernel_width", kernel_width}};
  }
};

struct LoadedData {
  CorpusIndex index;
  std::vector<Query> queries;
  Judgments judgments;
};

LoadedData load(Run& run, const DataOptions& d) {
  run.stage("ingest");
  auto docs = open_input(d.corpus);
  std::ifstream catalog;
  if (!d.catalog.empty()) catalog = open_input(d.catalog);
  LoadedData out{ingest_corpus(docs, d.catalog.empty() ? nullptr : &catalog), {}, {}};
  run.stage("read-queries");
  auto q = open_input(d.queries);
  out.queries = read_queries(q);
  if (!d.qrels.empty()) {
    run.stage("read-qrels");
    auto r = open_input(d.qrels);
    out.judgments = read_qrels(r);
  }
  return out;
}

std::string render_runs(const std::vector<Ranking>& rankings, const std::string& tag) {
  std::ostringstream out;
  for (const auto& r : rankings) write_run(out, r, tag);
  return out.str();
}

std::string render_report(const EvalReport& report) {
  std::ostringstream out;
  write_report(out, std::span<const EvalReport>(&report, 1));
  return out.str();
}

// Ranks every query (judged or not) with a trained model or an LM baseline.
std::vector<Ranking> rank_queries(const LoadedData& data, const SystemConfig& config,
                                  const Model* model) {
  std::vector<Query> queries = data.queries;
  std::sort(queries.begin(), queries.end(),
            [](const Query& a, const Query& b) { return a.query_id < b.query_id; });
  std::vector<CandidateSet> candidates;
  for (const auto& q : queries) candidates.push_back(find_candidates(data.index, q, config.retrieval));
  std::vector<Ranking> out;
  if (is_lm_baseline(config.baseline)) {
    for (std::size_t i = 0; i < queries.size(); ++i)
      out.push_back(baseline_ranking(data.index, queries[i], candidates[i], config));
    return out;
  }
  if (!model) throw std::invalid_argument("a model file is required unless the baseline is balog2 or petkova");
  if (model->weights.size() != model->layout.dimension())
    throw std::invalid_argument("model weights do not match its feature layout");
  const Dataset dataset = build_dataset(data.index, queries, candidates, {}, model->layout, config.bm25);
  for (const auto& tq : dataset) out.push_back(rank_query(*model, tq));
  return out;
}

void cmd_synth(Run& run, const SyntheticParams& params, std::uint64_t seed) {
  run.stage("generate");
  const auto corpus = generate_synthetic(params, seed);
  run.stage("write");
  std::ostringstream docs, catalog, queries, qrels;
  for (const auto& d : corpus.documents) write_document(docs, d);
  write_catalog(catalog, corpus.catalog);
  for (const auto& q : corpus.queries) write_query(queries, q);
  write_qrels(qrels, corpus.judgments);
  run.write("corpus.jsonl", docs.str());
  run.write("catalog.jsonl", catalog.str());
  run.write("queries.jsonl", queries.str());
  run.write("qrels.txt", qrels.str());
}

void cmd_ingest(Run& run, const DataOptions& d) {
  run.stage("ingest");
  auto docs = open_input(d.corpus);
  std::ifstream catalog;
  if (!d.catalog.empty()) catalog = open_input(d.catalog);
  const auto index = ingest_corpus(docs, d.catalog.empty() ? nullptr : &catalog);
  json stats = {{"documents", index.num_docs()},
                {"vocabulary", index.vocabulary_size()},
                {"tokens", index.collection_length()},
                {"average_length", index.average_doc_length()},
                {"entities", index.num_entities()}};
  run.stage("write");
  run.write("stats.json", stats.dump(2) + "\n");
}

void cmd_train(Run& run, const DataOptions& d, const SystemOptions& s, std::uint64_t seed) {
  const auto config = s.build(seed);
  if (is_lm_baseline(config.baseline))
    throw std::invalid_argument("baseline " + baseline_name(config.baseline) + " has no trainable parameters");
  const auto data = load(run, d);
  run.stage("features");
  const Experiment exp(data.index, data.queries, data.judgments, config);
  if (exp.size() == 0) throw std::invalid_argument("no query has a judged good entity");
  run.stage("train");
  const Model model = exp.fit_all();
  run.stage("write");
  run.write("model.json", model_to_json(model).dump(2) + "\n");
}

void cmd_rank(Run& run, const DataOptions& d, const SystemOptions& s, const std::string& model_path,
              std::uint64_t seed) {
  SystemConfig config = s.build(seed);
  std::optional<Model> model;
  if (!model_path.empty()) {
    run.stage("read-model");
    model = model_from_json(json::parse(slurp(model_path)));
    config.layout = model->layout;
    config.aggregator = model->aggregator;
    if (model->layout.voting) config.baseline = Baseline::Macdonald;
  }
  const auto data = load(run, d);
  run.stage("rank");
  const auto rankings = rank_queries(data, config, model ? &*model : nullptr);
  run.stage("write");
  run.write("run.txt", render_runs(rankings, config.tag()));
}

void cmd_eval(Run& run, const std::string& run_path, const std::string& qrels_path,
              const std::string& system) {
  run.stage("read-run");
  auto rf = open_input(run_path);
  const auto runs = read_run(rf);
  run.stage("read-qrels");
  auto qf = open_input(qrels_path);
  const auto judgments = read_qrels(qf);
  run.stage("evaluate");
  const auto report = evaluate(system, runs, judgments);
  run.stage("write");
  run.write("report.tsv", render_report(report));
}

void cmd_xval(Run& run, const DataOptions& d, const SystemOptions& s, const std::string& protocol_name,
              std::uint64_t seed) {
  const auto config = s.build(seed);
  const auto protocol = Protocol::parse(protocol_name);
  const auto data = load(run, d);
  run.stage("features");
  const Experiment exp(data.index, data.queries, data.judgments, config);
  run.stage("cross-validate");
  std::vector<Model> models;
  std::vector<Ranking> rankings;
  const auto report = exp.cross_validate(protocol, seed, &models, &rankings);
  run.stage("write");
  run.write("report.tsv", render_report(report));
  run.write("run.txt", render_runs(rankings, config.tag()));
  if (exp.trainable()) {
    for (std::size_t f = 0; f < models.size(); ++f) {
      char name[32];
      std::snprintf(name, sizeof name, "models/fold-%03zu.json", f);
      run.write(name, model_to_json(models[f]).dump(2) + "\n");
    }
  }
}

void cmd_compare(Run& run, const std::vector<std::string>& paths, const std::string& metric) {
  run.stage("read-reports");
  std::vector<EvalReport> reports;
  for (const auto& p : paths) {
    auto f = open_input(p);
    for (auto& r : read_report(f)) reports.push_back(std::move(r));
  }
  if (reports.size() < 2) throw std::invalid_argument("compare needs at least two systems");
  std::size_t k = 0;
  while (k < 5 && metric != kMetricNames[k]) ++k;
  if (k == 5) throw std::invalid_argument("unknown metric '" + metric + "'");
  run.stage("significance");
  const auto p = significance_matrix(reports, k);
  run.stage("write");
  std::ostringstream sig, merged;
  write_significance(sig, reports, p);
  write_report(merged, reports);
  run.write("significance.tsv", sig.str());
  run.write("report.tsv", merged.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity ranking from proximity-aware support contexts"};
  app.set_version_flag("--version", ENTRANK_VERSION);
  app.require_subcommand(1);

  std::string out;
  std::uint64_t seed = 1;
  DataOptions data;
  SystemOptions system;
  SyntheticParams synth_params;
  std::string model_path, run_path, qrels_path, system_name = "system", protocol = "loocv",
                                                metric = "MAP";
  std::vector<std::string> report_paths;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--out", out, "Output directory")->required();
    sub->add_option("--seed", seed, "Run seed")->capture_default_str();
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted signals");
  common(synth);
  synth->add_option("--num-queries", synth_params.num_queries)->capture_default_str();
  synth->add_option("--num-entities", synth_params.num_entities)->capture_default_str();
  synth->add_option("--filler-docs", synth_params.filler_docs)->capture_default_str();
  synth->add_option("--count-signal", synth_params.count_signal)->capture_default_str();
  synth->add_option("--proximity-signal", synth_params.proximity_signal)->capture_default_str();
  synth->add_option("--rarity-signal", synth_params.rarity_signal)->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "Validate a corpus and report its statistics");
  common(ingest);
  ingest->add_option("--corpus", data.corpus)->required()->check(CLI::ExistingFile);
  ingest->add_option("--catalog", data.catalog)->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "Train a model on every judged query");
  common(train);
  data.add(*train, true);
  system.add(*train);

  auto* rank = app.add_subcommand("rank", "Rank candidates of every query into a TREC run");
  common(rank);
  data.add(*rank, false);
  system.add(*rank);
  rank->add_option("--model", model_path, "Model file from train")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Evaluate a TREC run against qrels");
  common(eval);
  eval->add_option("--run", run_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--qrels", qrels_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--system", system_name, "System name in the report")->capture_default_str();

  auto* xval = app.add_subcommand("xval", "Cross-validate a system");
  common(xval);
  data.add(*xval, true);
  system.add(*xval);
  xval->add_option("--protocol", protocol, "loocv | kfold:k")->capture_default_str();

  auto* compare = app.add_subcommand("compare", "Paired t-tests between systems in report files");
  common(compare);
  compare->add_option("reports", report_paths, "Report files")->required()->check(CLI::ExistingFile);
  compare->add_option("--metric", metric, "MAP | MRR | NDCG@5 | NDCG@10 | PAIRSWAP")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  const auto* sub = app.get_subcommands().front();
  Run run(sub->get_name(), out);
  json config;
  try {
    if (sub == synth) {
      config = {{"num_queries", synth_params.num_queries},
                {"num_entities", synth_params.num_entities},
                {"filler_docs", synth_params.filler_docs},
                {"count_signal", synth_params.count_signal},
                {"proximity_signal", synth_params.proximity_signal},
                {"rarity_signal", synth_params.rarity_signal}};
      cmd_synth(run, synth_params, seed);
    } else if (sub == ingest) {
      config = {{"corpus", data.corpus}, {"catalog", data.catalog}};
      cmd_ingest(run, data);
    } else if (sub == train) {
      config = {{"data", data.to_json()}, {"system", system.to_json()}};
      cmd_train(run, data, system, seed);
    } else if (sub == rank) {
      config = {{"data", data.to_json()}, {"system", system.to_json()}, {"model", model_path}};
      cmd_rank(run, data, system, model_path, seed);
    } else if (sub == eval) {
      config = {{"run", run_path}, {"qrels", qrels_path}, {"system", system_name}};
      cmd_eval(run, run_path, qrels_path, system_name);
    } else if (sub == xval) {
      config = {{"data", data.to_json()}, {"system", system.to_json()}, {"protocol", protocol}};
      cmd_xval(run, data, system, protocol, seed);
    } else if (sub == compare) {
      config = {{"reports", report_paths}, {"metric", metric}};
      cmd_compare(run, report_paths, metric);
    }
  } catch (const std::exception& e) {
    const std::string what = e.what();
    std::cerr << "entrank " << run.command() << ": stage '" << run.current_stage() << "' failed: " << what
              << '\n';
    run.finish(config, seed, &what);
    return 1;
  }
  run.finish(config, seed, nullptr);
  return 0;
}
