#include "cli.hpp"

#include "apitrace/error.hpp"
#include "apitrace/eval.hpp"
#include "apitrace/featurize.hpp"
#include "apitrace/forest.hpp"
#include "apitrace/ingest.hpp"
#include "apitrace/parallel.hpp"
#include "apitrace/synth.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>

namespace apitrace::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct corpus_args {
  std::string corpus;
  std::string families;
  std::string benign;
  std::string functions;
};

struct forest_args {
  std::size_t trees = 100;
  std::size_t max_depth = 0;
  std::size_t min_samples_split = 2;
  std::string features = "sqrt";
  bool no_bootstrap = false;
  std::uint64_t seed = 7;
  std::string class_weight = "none";
};

struct options {
  unsigned workers = default_workers();
  std::string run_manifest;

  std::string out;
  corpus_args corpus;
  forest_args forest;

  // synth
  std::size_t n_malware = 660;
  std::size_t n_benign = 20;
  std::size_t n_families = 1;
  double separation = 0.6;
  std::uint64_t synth_seed = 7;
  std::size_t min_length = 100;
  std::size_t max_length = 5000;

  // vocab / featurize / train
  std::string order = "unigram";
  std::size_t k = 0; // 0 = all calls
  std::string bigram_vocab;
  std::string trigram_vocab;

  // predict / evaluate
  std::string model;
  std::vector<std::string> traces;
  std::string trace_dir;
  double threshold = 0.5;
  std::vector<std::string> vocab_files;

  // sweep
  std::vector<std::string> orders = {"unigram", "bigram", "trigram", "combined"};
  std::vector<std::size_t> ks = eval::k_default_max_call_counts;
  std::size_t runs = 4;
  double split = 0.8;
  std::size_t curve_k = 0;
};

void add_corpus_options(CLI::App* cmd, corpus_args& a, bool functions_required = true) {
  cmd->add_option("--corpus", a.corpus, "Directory of <sha>.json trace files")->required();
  cmd->add_option("--families", a.families, "Family manifest (family -> SHAs)")->required();
  cmd->add_option("--benign", a.benign, "Benign SHA list (JSON array or one per line)")->required();
  auto* fn = cmd->add_option("--functions", a.functions, "Traced-function vocabulary (JSON array)");
  if (functions_required) {
    fn->required();
  }
}

void add_forest_options(CLI::App* cmd, forest_args& a) {
  cmd->add_option("--trees", a.trees, "Number of trees")->check(CLI::PositiveNumber);
  cmd->add_option("--max-depth", a.max_depth, "Depth limit, 0 = unlimited");
  cmd->add_option("--min-samples-split", a.min_samples_split, "Minimum rows to split a node")
      ->check(CLI::Range(std::size_t{2}, std::numeric_limits<std::size_t>::max()));
  cmd->add_option("--features", a.features, "Candidate features per split: sqrt, all or a count");
  cmd->add_flag("--no-bootstrap", a.no_bootstrap, "Train every tree on the full training set");
  cmd->add_option("--seed", a.seed, "Random seed");
  cmd->add_option("--class-weight", a.class_weight, "none or balanced")
      ->check(CLI::IsMember({"none", "balanced"}));
}

forest::forest_params make_forest_params(const forest_args& a) {
  forest::forest_params p;
  p.n_trees = a.trees;
  p.max_depth = a.max_depth;
  p.min_samples_split = a.min_samples_split;
  if (a.features == "sqrt") {
    p.features.kind = forest::features_per_split::rule::sqrt;
  } else if (a.features == "all") {
    p.features.kind = forest::features_per_split::rule::all;
  } else {
    std::size_t used = 0;
    std::size_t k = 0;
    try {
      k = std::stoul(a.features, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != a.features.size() || k == 0) {
      throw CLI::ValidationError("--features", "expected sqrt, all or a positive count");
    }
    p.features = {forest::features_per_split::rule::fixed, k};
  }
  p.bootstrap = !a.no_bootstrap;
  p.seed = a.seed;
  p.balanced_class_weight = a.class_weight == "balanced";
  return p;
}

json forest_params_json(const forest::forest_params& p) {
  return {{"n_trees", p.n_trees},
          {"max_depth", p.max_depth},
          {"min_samples_split", p.min_samples_split},
          {"features_per_split", p.features.kind == forest::features_per_split::rule::fixed
                                     ? json(p.features.count)
                                     : json(p.features.kind == forest::features_per_split::rule::sqrt ? "sqrt" : "all")},
          {"bootstrap", p.bootstrap},
          {"seed", p.seed},
          {"class_weight", p.balanced_class_weight ? "balanced" : "none"}};
}

std::size_t max_calls_of(std::size_t k) { return k == 0 ? featurize::k_all_calls : k; }

void write_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& args,
                    json effective) {
  json doc;
  doc["command"] = command;
  doc["argv"] = args;
  doc["effective"] = std::move(effective);
  std::ofstream out(path, std::ios::binary);
  out << doc.dump(2) << '\n';
  if (!out) {
    throw error(error_kind::io, "cannot write run manifest " + path.string());
  }
}

fs::path manifest_path(const options& o, const fs::path& fallback) {
  return o.run_manifest.empty() ? fallback : fs::path(o.run_manifest);
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw error(error_kind::io, "cannot write " + path.string());
  }
  return out;
}

struct loaded_corpus {
  function_vocabulary vocab;
  label_manifest manifest;
  ingest::corpus data;
};

loaded_corpus load(const corpus_args& a, std::size_t max_calls, unsigned workers, std::ostream& err,
                   const function_vocabulary* vocab = nullptr) {
  loaded_corpus c{vocab ? *vocab : ingest::load_function_vocabulary(a.functions),
                  ingest::load_label_manifest(a.families, a.benign), {}};
  c.data = ingest::load_corpus(a.corpus, c.manifest, c.vocab, {max_calls, workers});
  if (c.data.uncovered_files > 0) {
    err << "warning: skipped " << c.data.uncovered_files << " trace files not listed in the manifests\n";
  }
  if (c.data.skipped_lines > 0) {
    err << "warning: skipped " << c.data.skipped_lines << " unparseable trace lines\n";
  }
  return c;
}

std::vector<std::span<const function_id>> id_spans(const ingest::corpus& data) {
  std::vector<std::span<const function_id>> spans;
  spans.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    spans.emplace_back(s.sequence.ids);
  }
  return spans;
}

std::vector<binary_label> labels_of(const ingest::corpus& data) {
  std::vector<binary_label> labels;
  labels.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    labels.push_back(s.label);
  }
  return labels;
}

// Uses supplied vocabulary files where given and discovers the rest on `ids`.
featurize::feature_space build_space(featurize::model_order order, std::size_t function_count,
                                     std::span<const std::span<const function_id>> ids, std::size_t max_calls,
                                     const options& o, json& effective) {
  auto discovered = featurize::feature_space::discover(order, function_count, ids, max_calls);
  auto vocabs = discovered.vocabularies();
  for (auto& v : vocabs) {
    const std::string& file = v.order() == 2 ? o.bigram_vocab : v.order() == 3 ? o.trigram_vocab : std::string();
    if (!file.empty()) {
      v = featurize::load_ngram_vocabulary(file);
      effective["vocabularies"].push_back({{"order", v.order()}, {"source", file}, {"size", v.size()}});
    } else if (v.order() > 1) {
      effective["vocabularies"].push_back({{"order", v.order()}, {"source", "discovered"}, {"size", v.size()}});
    }
  }
  return featurize::feature_space(order, std::move(vocabs));
}

int cmd_synth(const options& o, const std::vector<std::string>& args, std::ostream& out) {
  synth::synth_spec spec;
  spec.n_malware = o.n_malware;
  spec.n_benign = o.n_benign;
  spec.n_families = o.n_families;
  spec.separation = o.separation;
  spec.seed = o.synth_seed;
  spec.malware_length = {o.min_length, o.max_length};
  spec.benign_length = {o.min_length, o.max_length};
  if (!o.corpus.functions.empty()) {
    spec.functions = ingest::load_function_vocabulary(o.corpus.functions).names();
  }
  const auto result = synth::generate_corpus(spec, o.out);
  write_manifest(manifest_path(o, fs::path(o.out) / "run_manifest.json"), "synth", args,
                 {{"n_malware", spec.n_malware},
                  {"n_benign", spec.n_benign},
                  {"n_families", spec.n_families},
                  {"separation", spec.separation},
                  {"seed", spec.seed},
                  {"length", {spec.malware_length.min, spec.malware_length.max}},
                  {"functions", spec.functions.size()}});
  out << "wrote " << result.malware_shas.size() + result.benign_shas.size() << " traces to "
      << result.traces_dir.string() << '\n';
  return k_exit_ok;
}

int cmd_vocab(const options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto order = featurize::parse_model_order(o.order);
  const int n = order == featurize::model_order::bigram ? 2 : order == featurize::model_order::trigram ? 3 : 0;
  if (n == 0) {
    throw CLI::ValidationError("--order", "vocab discovery needs bigram or trigram");
  }
  const auto c = load(o.corpus, max_calls_of(o.k), o.workers, err);
  const auto ids = id_spans(c.data);
  if (ids.empty()) {
    throw error(error_kind::empty_discovery_corpus, "empty discovery corpus");
  }
  featurize::ngram_vocabulary vocab(n);
  for (auto s : ids) {
    vocab.observe(s, max_calls_of(o.k));
  }
  featurize::save_ngram_vocabulary(vocab, o.out);
  write_manifest(manifest_path(o, o.out + ".run.json"), "vocab", args,
                 {{"order", n}, {"k", o.k}, {"samples", ids.size()}, {"size", vocab.size()},
                  {"fingerprint", forest::fingerprint_hex(vocab.fingerprint())}});
  out << "discovered " << vocab.size() << " distinct " << featurize::to_string(order) << "s over " << ids.size()
      << " samples\n";
  return k_exit_ok;
}

int cmd_featurize(const options& o, const std::vector<std::string>& args, std::ostream& err) {
  const auto order = featurize::parse_model_order(o.order);
  const auto c = load(o.corpus, max_calls_of(o.k), o.workers, err);
  const auto ids = id_spans(c.data);
  json effective{{"order", featurize::to_string(order)}, {"k", o.k}, {"samples", ids.size()}};
  const auto space = build_space(order, c.vocab.size(), ids, max_calls_of(o.k), o, effective);
  const auto rows = space.featurize_rows(ids, max_calls_of(o.k));
  std::vector<std::string> shas;
  for (const auto& s : c.data.samples) {
    shas.push_back(s.sequence.sha);
  }
  auto file = open_output(o.out);
  featurize::write_feature_csv(file, shas, labels_of(c.data), rows);
  effective["dimension"] = space.dimension();
  write_manifest(manifest_path(o, o.out + ".run.json"), "featurize", args, std::move(effective));
  return k_exit_ok;
}

int cmd_train(const options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto order = featurize::parse_model_order(o.order);
  const auto params = make_forest_params(o.forest);
  const auto c = load(o.corpus, max_calls_of(o.k), o.workers, err);
  const auto ids = id_spans(c.data);
  json effective{{"order", featurize::to_string(order)}, {"k", o.k}, {"samples", ids.size()},
                 {"forest", forest_params_json(params)}, {"workers", o.workers}};
  const auto space = build_space(order, c.vocab.size(), ids, max_calls_of(o.k), o, effective);
  const auto rows = space.featurize_rows(ids, max_calls_of(o.k));

  auto model = forest::train_forest(rows, labels_of(c.data), params, o.workers);
  model.pipeline = {order, c.vocab.names(), space.vocabularies(), max_calls_of(o.k)};
  forest::save_model(model, o.out);
  effective["dimension"] = space.dimension();
  write_manifest(manifest_path(o, o.out + ".run.json"), "train", args, std::move(effective));
  out << "trained " << model.trees.size() << " trees on " << rows.rows() << " samples x " << rows.cols()
      << " features\n";
  return k_exit_ok;
}

forest::random_forest_model load_checked_model(const options& o) {
  forest::expected_fingerprints expected;
  if (!o.corpus.functions.empty()) {
    expected.functions = ingest::load_function_vocabulary(o.corpus.functions).fingerprint();
  }
  for (const auto& file : o.vocab_files) {
    expected.vocabularies.push_back(featurize::load_ngram_vocabulary(file).fingerprint());
  }
  return forest::load_model(o.model, expected);
}

int cmd_predict(const options& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto model = load_checked_model(o);
  const function_vocabulary vocab(model.pipeline.function_names);
  const featurize::feature_space space(model.pipeline.order, model.pipeline.vocabularies);

  std::vector<fs::path> paths(o.traces.begin(), o.traces.end());
  if (!o.trace_dir.empty()) {
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(o.trace_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        found.push_back(entry.path());
      }
    }
    std::sort(found.begin(), found.end(),
              [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });
    paths.insert(paths.end(), found.begin(), found.end());
  }
  if (paths.empty()) {
    throw CLI::ValidationError("predict", "give --trace or --traces-dir");
  }

  std::ofstream file;
  std::ostream* sink = &out;
  if (!o.out.empty()) {
    file = open_output(o.out);
    sink = &file;
  }
  *sink << "sha,score,label\n";
  std::vector<float> row(space.dimension());
  for (const auto& path : paths) {
    const auto seq = ingest::encode_sequence(ingest::load_trace_file(path), vocab);
    std::fill(row.begin(), row.end(), 0.0f);
    space.fill_row(seq.ids, model.pipeline.max_calls, row);
    const double score = forest::predict_score(model, row);
    *sink << seq.sha << ',' << fmt::format("{:.3f}", score) << ',' << (score > o.threshold ? 1 : 0) << '\n';
  }
  write_manifest(manifest_path(o, o.out.empty() ? fs::path("run_manifest.json") : fs::path(o.out + ".run.json")),
                 "predict", args,
                 {{"model", o.model}, {"threshold", o.threshold}, {"samples", paths.size()},
                  {"order", featurize::to_string(model.pipeline.order)}});
  return k_exit_ok;
}

int cmd_evaluate(const options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto model = load_checked_model(o);
  const function_vocabulary vocab(model.pipeline.function_names);
  const featurize::feature_space space(model.pipeline.order, model.pipeline.vocabularies);
  const auto c = load(o.corpus, model.pipeline.max_calls, o.workers, err, &vocab);
  const auto ids = id_spans(c.data);
  if (ids.empty()) {
    throw error(error_kind::empty_input, "no labeled samples to evaluate");
  }
  const auto rows = space.featurize_rows(ids, model.pipeline.max_calls);
  const auto truth = labels_of(c.data);
  std::vector<double> scores(rows.rows());
  std::vector<binary_label> predicted(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    scores[r] = forest::predict_score(model, rows.row(r));
    predicted[r] = scores[r] > o.threshold ? binary_label::benign : binary_label::malware;
  }
  const auto cm = eval::confusion(predicted, truth);
  const auto m = eval::compute_metrics(cm, scores, truth);

  std::ofstream file;
  std::ostream* sink = &out;
  if (!o.out.empty()) {
    file = open_output(o.out);
    sink = &file;
  }
  *sink << "n,tp,fp,tn,fn,accuracy,precision,recall,f1,roc_auc\n"
        << fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", cm.total(), cm.tp, cm.fp, cm.tn, cm.fn,
                       m.accuracy, m.precision, m.recall, m.f1, m.roc_auc);
  if (!m.precision_defined || !m.recall_defined || !m.roc_auc_defined) {
    err << "warning: some metrics are undefined on this split and were reported as 0\n";
  }
  write_manifest(manifest_path(o, o.out.empty() ? fs::path("run_manifest.json") : fs::path(o.out + ".run.json")),
                 "evaluate", args, {{"model", o.model}, {"threshold", o.threshold}, {"samples", ids.size()}});
  return k_exit_ok;
}

int cmd_sweep(const options& o, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  eval::sweep_config config;
  config.orders.clear();
  for (const auto& name : o.orders) {
    config.orders.push_back(featurize::parse_model_order(name));
  }
  config.max_call_counts = o.ks;
  config.n_runs = o.runs;
  config.split_fraction = o.split;
  config.base_seed = o.forest.seed;
  config.threshold = o.threshold;
  if (o.curve_k != 0) {
    config.curve_k = o.curve_k;
  }
  config.validate();
  const auto params = make_forest_params(o.forest);

  const auto c = load(o.corpus, config.max_call_counts.back(), o.workers, err);
  const auto report = eval::run_sweep(c.data.samples, c.vocab.size(), config, params, o.workers);

  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  fs::create_directories(dir);
  {
    auto f = open_output(dir / "sweep_report.csv");
    eval::write_report_csv(f, report);
  }
  {
    auto f = open_output(dir / "pr_curve.csv");
    eval::write_pr_csv(f, report);
  }
  {
    auto f = open_output(dir / "roc_curve.csv");
    eval::write_roc_csv(f, report);
  }

  json orders = json::array();
  for (auto order : config.orders) {
    orders.push_back(featurize::to_string(order));
  }
  write_manifest(manifest_path(o, dir / "run_manifest.json"), "sweep", args,
                 {{"orders", orders},
                  {"k", config.max_call_counts},
                  {"runs", config.n_runs},
                  {"split_fraction", config.split_fraction},
                  {"base_seed", config.base_seed},
                  {"curve_k", config.effective_curve_k()},
                  {"threshold", config.threshold},
                  {"forest", forest_params_json(params)},
                  {"samples", c.data.samples.size()},
                  {"workers", o.workers}});
  out << "wrote " << report.rows.size() << " per-run rows to " << (dir / "sweep_report.csv").string() << '\n';
  return k_exit_ok;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  options o;
  CLI::App app{"Order-invariant API-call malware detection toolkit", "apitrace"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--workers", o.workers, "Worker threads (env APITRACE_WORKERS)")->check(CLI::PositiveNumber);
    cmd->add_option("--run-manifest", o.run_manifest, "Where to record the effective parameters");
  };

  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted synthetic trace corpus");
  synth_cmd->add_option("--out", o.out, "Output directory")->required();
  synth_cmd->add_option("--malware", o.n_malware, "Malware samples")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--benign", o.n_benign, "Benign samples")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--families-count", o.n_families, "Malware families")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--separation", o.separation, "Class profile divergence")->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--seed", o.synth_seed, "Random seed");
  synth_cmd->add_option("--min-length", o.min_length, "Shortest trace")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--max-length", o.max_length, "Longest trace")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--functions", o.corpus.functions, "Function vocabulary to draw from");
  common(synth_cmd);

  auto* vocab_cmd = app.add_subcommand("vocab", "Discover and save an n-gram vocabulary");
  add_corpus_options(vocab_cmd, o.corpus);
  vocab_cmd->add_option("--order", o.order, "bigram or trigram")->required();
  vocab_cmd->add_option("--k", o.k, "Maximum calls per trace, 0 = all");
  vocab_cmd->add_option("--out", o.out, "Vocabulary file")->required();
  common(vocab_cmd);

  auto* feat_cmd = app.add_subcommand("featurize", "Export the feature matrix as CSV");
  add_corpus_options(feat_cmd, o.corpus);
  feat_cmd->add_option("--order", o.order, "unigram, bigram, trigram or combined");
  feat_cmd->add_option("--k", o.k, "Maximum calls per trace, 0 = all");
  feat_cmd->add_option("--bigram-vocab", o.bigram_vocab, "Saved bigram vocabulary");
  feat_cmd->add_option("--trigram-vocab", o.trigram_vocab, "Saved trigram vocabulary");
  feat_cmd->add_option("--out", o.out, "CSV file")->required();
  common(feat_cmd);

  auto* train_cmd = app.add_subcommand("train", "Fit a random forest and save it");
  add_corpus_options(train_cmd, o.corpus);
  train_cmd->add_option("--order", o.order, "unigram, bigram, trigram or combined");
  o.k = 0;
  train_cmd->add_option("--k", o.k, "Maximum calls per trace, 0 = all");
  train_cmd->add_option("--bigram-vocab", o.bigram_vocab, "Saved bigram vocabulary");
  train_cmd->add_option("--trigram-vocab", o.trigram_vocab, "Saved trigram vocabulary");
  train_cmd->add_option("--out", o.out, "Model file")->required();
  add_forest_options(train_cmd, o.forest);
  common(train_cmd);

  auto* predict_cmd = app.add_subcommand("predict", "Score traces with a saved model");
  predict_cmd->add_option("--model", o.model, "Model file")->required();
  predict_cmd->add_option("--trace", o.traces, "Trace file (repeatable)");
  predict_cmd->add_option("--traces-dir", o.trace_dir, "Score every <sha>.json in a directory");
  predict_cmd->add_option("--threshold", o.threshold, "Benign iff score > threshold");
  predict_cmd->add_option("--functions", o.corpus.functions, "Check the model against this function vocabulary");
  predict_cmd->add_option("--vocab", o.vocab_files, "Check the model against these n-gram vocabularies");
  predict_cmd->add_option("--out", o.out, "CSV file (default stdout)");
  common(predict_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics of a saved model on a labeled corpus");
  eval_cmd->add_option("--model", o.model, "Model file")->required();
  add_corpus_options(eval_cmd, o.corpus, false);
  eval_cmd->add_option("--threshold", o.threshold, "Benign iff score > threshold");
  eval_cmd->add_option("--vocab", o.vocab_files, "Check the model against these n-gram vocabularies");
  eval_cmd->add_option("--out", o.out, "CSV file (default stdout)");
  common(eval_cmd);

  auto* sweep_cmd = app.add_subcommand("sweep", "F1 versus maximum call count over repeated holdout runs");
  add_corpus_options(sweep_cmd, o.corpus);
  sweep_cmd->add_option("--orders", o.orders, "Model orders")->delimiter(',');
  sweep_cmd->add_option("--k", o.ks, "Maximum call counts, strictly increasing")->delimiter(',');
  sweep_cmd->add_option("--runs", o.runs, "Runs per cell")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--split", o.split, "Training fraction")->check(CLI::Range(0.0, 1.0));
  sweep_cmd->add_option("--curve-k", o.curve_k, "K whose PR/ROC curves are written");
  sweep_cmd->add_option("--threshold", o.threshold, "Benign iff score > threshold");
  sweep_cmd->add_option("--out", o.out, "Output directory (default .)");
  add_forest_options(sweep_cmd, o.forest);
  common(sweep_cmd);

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return k_exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return k_exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return k_exit_usage;
  }

  try {
    if (*synth_cmd) return cmd_synth(o, args, out);
    if (*vocab_cmd) return cmd_vocab(o, args, out, err);
    if (*feat_cmd) return cmd_featurize(o, args, err);
    if (*train_cmd) return cmd_train(o, args, out, err);
    if (*predict_cmd) return cmd_predict(o, args, out);
    if (*eval_cmd) return cmd_evaluate(o, args, out, err);
    if (*sweep_cmd) return cmd_sweep(o, args, out, err);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return k_exit_usage;
  } catch (const error& e) {
    if (e.kind() == error_kind::invalid_argument) {
      err << "usage error: " << e.what() << '\n';
      return k_exit_usage;
    }
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return k_exit_data;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return k_exit_data;
  }
  return k_exit_usage;
}

} // namespace apitrace::cli
