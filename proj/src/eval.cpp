#include "apitrace/eval.hpp"

#include "apitrace/error.hpp"
#include "apitrace/parallel.hpp"
#include "apitrace/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace apitrace::eval {

namespace {

double ratio(std::size_t num, std::size_t den, bool& defined) {
  defined = den != 0;
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void check_lengths(std::span<const double> scores, std::span<const binary_label> truth) {
  if (scores.size() != truth.size()) {
    throw error(error_kind::length_mismatch, "scores and truth differ in length");
  }
}

struct threshold_sweep {
  std::vector<double> thresholds;
  std::vector<std::size_t> tp; // cumulative counts predicted benign at each threshold
  std::vector<std::size_t> fp;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

threshold_sweep sweep_thresholds(std::span<const double> scores, std::span<const binary_label> truth) {
  check_lengths(scores, truth);
  threshold_sweep out;
  for (auto t : truth) {
    (t == binary_label::benign ? out.positives : out.negatives) += 1;
  }
  if (out.positives == 0 || out.negatives == 0) {
    throw error(error_kind::single_class, "curve needs both benign and malware samples");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double score = scores[order[i]];
    while (i < order.size() && scores[order[i]] == score) {
      (truth[order[i]] == binary_label::benign ? tp : fp) += 1;
      ++i;
    }
    double threshold = score - 1.0;
    if (!(threshold < score)) {
      threshold = std::nextafter(score, -std::numeric_limits<double>::infinity());
    }
    if (i < order.size()) {
      const double lower = scores[order[i]];
      threshold = lower + (score - lower) / 2.0;
      if (!(threshold < score)) {
        threshold = lower;
      }
    }
    out.thresholds.push_back(threshold);
    out.tp.push_back(tp);
    out.fp.push_back(fp);
  }
  return out;
}

std::string format_metric(double v) { return fmt::format("{:.6f}", v); }

} // namespace

confusion_matrix confusion(std::span<const binary_label> predictions, std::span<const binary_label> truth) {
  if (predictions.size() != truth.size()) {
    throw error(error_kind::length_mismatch, "predictions and truth differ in length");
  }
  if (predictions.empty()) {
    throw error(error_kind::empty_input, "no predictions to compare");
  }
  confusion_matrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool predicted_benign = predictions[i] == binary_label::benign;
    const bool benign = truth[i] == binary_label::benign;
    if (predicted_benign) {
      (benign ? cm.tp : cm.fp) += 1;
    } else {
      (benign ? cm.fn : cm.tn) += 1;
    }
  }
  return cm;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const binary_label> truth) {
  check_lengths(scores, truth);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mann-Whitney: average 1-based ranks over tied groups.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t group_positives = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_positives += truth[order[j]] == binary_label::benign ? 1 : 0;
      ++j;
    }
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    positive_rank_sum += mean_rank * static_cast<double>(group_positives);
    positives += group_positives;
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    return std::nullopt;
  }
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

metrics compute_metrics(const confusion_matrix& cm, std::span<const double> scores,
                        std::span<const binary_label> truth) {
  if (cm.total() == 0) {
    throw error(error_kind::empty_input, "cannot compute metrics on zero samples");
  }
  check_lengths(scores, truth);

  metrics m;
  bool defined = true;
  m.accuracy = ratio(cm.tp + cm.tn, cm.total(), defined);
  m.precision = ratio(cm.tp, cm.tp + cm.fp, m.precision_defined);
  m.recall = ratio(cm.tp, cm.tp + cm.fn, m.recall_defined);
  const double pr_sum = m.precision + m.recall;
  m.f1_defined = m.precision_defined && m.recall_defined && pr_sum > 0.0;
  m.f1 = m.f1_defined ? 2.0 * m.precision * m.recall / pr_sum : 0.0;

  const auto auc = roc_auc(scores, truth);
  m.roc_auc_defined = auc.has_value();
  m.roc_auc = auc.value_or(0.0);
  return m;
}

std::vector<pr_point> pr_curve(std::span<const double> scores, std::span<const binary_label> truth) {
  const auto s = sweep_thresholds(scores, truth);
  std::vector<pr_point> curve;
  curve.reserve(s.thresholds.size());
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    curve.push_back({static_cast<double>(s.tp[i]) / static_cast<double>(s.tp[i] + s.fp[i]),
                     static_cast<double>(s.tp[i]) / static_cast<double>(s.positives), s.thresholds[i]});
  }
  return curve;
}

std::vector<roc_point> roc_curve(std::span<const double> scores, std::span<const binary_label> truth) {
  const auto s = sweep_thresholds(scores, truth);
  std::vector<roc_point> curve;
  curve.reserve(s.thresholds.size() + 1);
  curve.push_back({0.0, 0.0, *std::max_element(scores.begin(), scores.end())});
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    curve.push_back({static_cast<double>(s.fp[i]) / static_cast<double>(s.negatives),
                     static_cast<double>(s.tp[i]) / static_cast<double>(s.positives), s.thresholds[i]});
  }
  return curve;
}

split_indices stratified_split(std::span<const binary_label> labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw error(error_kind::invalid_argument, "train fraction must lie in (0, 1)");
  }
  random_stream rng(seed);
  split_indices out;
  for (auto cls : {binary_label::malware, binary_label::benign}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) {
        members.push_back(i);
      }
    }
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[rng.uniform_index(i)]);
    }
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    if (members.size() >= 2) {
      n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    }
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

void sweep_config::validate() const {
  if (max_call_counts.empty() || orders.empty()) {
    throw error(error_kind::invalid_argument, "sweep needs at least one K value and one model order");
  }
  for (std::size_t i = 0; i < max_call_counts.size(); ++i) {
    if (max_call_counts[i] == 0 || (i > 0 && max_call_counts[i] <= max_call_counts[i - 1])) {
      throw error(error_kind::invalid_argument, "K values must be positive and strictly increasing");
    }
  }
  if (n_runs == 0) {
    throw error(error_kind::invalid_argument, "sweep needs at least one run");
  }
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw error(error_kind::invalid_argument, "split fraction must lie in (0, 1)");
  }
}

std::size_t sweep_config::effective_curve_k() const {
  if (curve_k) {
    return *curve_k;
  }
  if (std::find(max_call_counts.begin(), max_call_counts.end(), 2500) != max_call_counts.end()) {
    return 2500;
  }
  return max_call_counts.back();
}

std::uint64_t split_seed(std::uint64_t base_seed, std::size_t run) { return mix_seed(base_seed, {1, run}); }

std::uint64_t cell_seed(std::uint64_t base_seed, std::size_t run, featurize::model_order order, std::size_t k) {
  return mix_seed(base_seed, {2, run, static_cast<std::uint64_t>(order), k});
}

const sweep_aggregate* sweep_report::aggregate(featurize::model_order order, std::size_t k) const {
  for (const auto& a : aggregates) {
    if (a.order == order && a.k == k) {
      return &a;
    }
  }
  return nullptr;
}

sweep_report run_sweep(std::span<const ingest::labeled_sequence> corpus, std::size_t function_count,
                       const sweep_config& config, const forest::forest_params& forest_params, unsigned workers) {
  config.validate();
  std::vector<binary_label> labels;
  labels.reserve(corpus.size());
  for (const auto& s : corpus) {
    labels.push_back(s.label);
  }

  std::vector<split_indices> splits;
  for (std::size_t run = 0; run < config.n_runs; ++run) {
    auto split = stratified_split(labels, config.split_fraction, split_seed(config.base_seed, run));
    for (const auto* side : {&split.train, &split.test}) {
      const bool has_benign = std::any_of(side->begin(), side->end(),
                                          [&](std::size_t i) { return labels[i] == binary_label::benign; });
      const bool has_malware = std::any_of(side->begin(), side->end(),
                                           [&](std::size_t i) { return labels[i] == binary_label::malware; });
      if (!has_benign || !has_malware) {
        throw error(error_kind::missing_class, "run " + std::to_string(run) + ": the " +
                                                   (side == &split.train ? "training" : "test") +
                                                   " split lacks a class");
      }
    }
    splits.push_back(std::move(split));
  }

  const std::size_t n_orders = config.orders.size();
  const std::size_t n_k = config.max_call_counts.size();
  const std::size_t n_runs = config.n_runs;
  const std::size_t curve_k = config.effective_curve_k();

  struct cell_result {
    sweep_row row;
    std::optional<curve_set> curves;
  };
  std::vector<cell_result> cells(n_orders * n_k * n_runs);

  parallel_for(cells.size(), workers, [&](std::size_t job) {
    const std::size_t run = job % n_runs;
    const std::size_t ki = (job / n_runs) % n_k;
    const std::size_t oi = job / (n_runs * n_k);
    const auto order = config.orders[oi];
    const std::size_t k = config.max_call_counts[ki];
    const auto& split = splits[run];

    std::vector<std::span<const function_id>> train_ids;
    std::vector<std::span<const function_id>> test_ids;
    std::vector<binary_label> train_labels;
    std::vector<binary_label> test_labels;
    for (auto i : split.train) {
      train_ids.emplace_back(corpus[i].sequence.ids);
      train_labels.push_back(labels[i]);
    }
    for (auto i : split.test) {
      test_ids.emplace_back(corpus[i].sequence.ids);
      test_labels.push_back(labels[i]);
    }

    const auto space = featurize::feature_space::discover(order, function_count, train_ids, k);
    const auto train_rows = space.featurize_rows(train_ids, k);
    const auto test_rows = space.featurize_rows(test_ids, k);

    auto params = forest_params;
    params.seed = cell_seed(config.base_seed, run, order, k);
    const auto model = forest::train_forest(train_rows, train_labels, params, 1);

    std::vector<double> scores(test_rows.rows());
    std::vector<binary_label> predicted(test_rows.rows());
    for (std::size_t r = 0; r < test_rows.rows(); ++r) {
      scores[r] = forest::predict_score(model, test_rows.row(r));
      predicted[r] = scores[r] > config.threshold ? binary_label::benign : binary_label::malware;
    }

    auto& cell = cells[job];
    cell.row = {order, k, run, compute_metrics(confusion(predicted, test_labels), scores, test_labels),
                space.dimension()};
    if (k == curve_k) {
      cell.curves = curve_set{order, k, run, pr_curve(scores, test_labels), roc_curve(scores, test_labels)};
    }
  });

  sweep_report report;
  for (auto& cell : cells) {
    report.rows.push_back(cell.row);
    if (cell.curves) {
      report.curves.push_back(std::move(*cell.curves));
    }
  }

  for (std::size_t group = 0; group < n_orders * n_k; ++group) {
    std::span<const sweep_row> runs(report.rows.data() + group * n_runs, n_runs);
    sweep_aggregate agg;
    agg.order = runs.front().order;
    agg.k = runs.front().k;
    auto summarize = [&](double metrics::*field) {
      double sum = 0.0;
      for (const auto& r : runs) {
        sum += r.values.*field;
      }
      const double mean = sum / static_cast<double>(n_runs);
      double sq = 0.0;
      for (const auto& r : runs) {
        sq += (r.values.*field - mean) * (r.values.*field - mean);
      }
      agg.mean.*field = mean;
      agg.stddev.*field = n_runs > 1 ? std::sqrt(sq / static_cast<double>(n_runs - 1)) : 0.0;
    };
    for (auto field : {&metrics::accuracy, &metrics::precision, &metrics::recall, &metrics::f1, &metrics::roc_auc}) {
      summarize(field);
    }
    for (const auto& r : runs) {
      agg.mean.precision_defined = agg.mean.precision_defined && r.values.precision_defined;
      agg.mean.recall_defined = agg.mean.recall_defined && r.values.recall_defined;
      agg.mean.f1_defined = agg.mean.f1_defined && r.values.f1_defined;
      agg.mean.roc_auc_defined = agg.mean.roc_auc_defined && r.values.roc_auc_defined;
    }
    report.aggregates.push_back(agg);
  }
  return report;
}

sweep_report run_sweep(const std::filesystem::path& corpus_dir, const label_manifest& manifest,
                       const function_vocabulary& vocab, const sweep_config& config,
                       const forest::forest_params& forest_params, unsigned workers) {
  config.validate();
  ingest::scan_options options;
  options.max_calls = config.max_call_counts.back();
  options.workers = workers;
  const auto data = ingest::load_corpus(corpus_dir, manifest, vocab, options);
  return run_sweep(data.samples, vocab.size(), config, forest_params, workers);
}

void write_report_csv(std::ostream& out, const sweep_report& report) {
  out << "model,K,run,accuracy,precision,recall,f1,roc_auc\n";
  auto line = [&](const auto& head, const std::string& run, const metrics& m) {
    out << featurize::to_string(head.order) << ',' << head.k << ',' << run << ',' << format_metric(m.accuracy)
        << ',' << format_metric(m.precision) << ',' << format_metric(m.recall) << ',' << format_metric(m.f1)
        << ',' << format_metric(m.roc_auc) << '\n';
  };
  for (const auto& row : report.rows) {
    line(row, std::to_string(row.run), row.values);
  }
  for (const auto& agg : report.aggregates) {
    line(agg, "mean", agg.mean);
    line(agg, "std", agg.stddev);
  }
}

void write_pr_csv(std::ostream& out, const sweep_report& report) {
  out << "model,K,run,threshold,precision,recall\n";
  for (const auto& c : report.curves) {
    for (const auto& p : c.pr) {
      out << featurize::to_string(c.order) << ',' << c.k << ',' << c.run << ',' << format_metric(p.threshold) << ','
          << format_metric(p.precision) << ',' << format_metric(p.recall) << '\n';
    }
  }
}

void write_roc_csv(std::ostream& out, const sweep_report& report) {
  out << "model,K,run,threshold,fpr,tpr\n";
  for (const auto& c : report.curves) {
    for (const auto& p : c.roc) {
      out << featurize::to_string(c.order) << ',' << c.k << ',' << c.run << ',' << format_metric(p.threshold) << ','
          << format_metric(p.false_positive_rate) << ',' << format_metric(p.true_positive_rate) << '\n';
    }
  }
}

} // namespace apitrace::eval
