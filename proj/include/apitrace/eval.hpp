#pragma once

#include "apitrace/featurize.hpp"
#include "apitrace/forest.hpp"
#include "apitrace/ingest.hpp"
#include "apitrace/trace_model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace apitrace::eval {

/// Positive class is benign (label 1).
struct confusion_matrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  [[nodiscard]] std::size_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const confusion_matrix&) const = default;
};

/// Ratios with a zero denominator are reported as 0 and flagged undefined.
struct metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double roc_auc = 0.0;
  bool precision_defined = true;
  bool recall_defined = true;
  bool f1_defined = true;
  bool roc_auc_defined = true;
};

confusion_matrix confusion(std::span<const binary_label> predictions, std::span<const binary_label> truth);

/// Probability that a random positive outscores a random negative, ties
/// counting one half. nullopt when either class is absent.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const binary_label> truth);

/// Threshold metrics from `cm`, AUC from `scores`. Throws empty_input when
/// cm is empty, length_mismatch when scores and truth disagree.
metrics compute_metrics(const confusion_matrix& cm, std::span<const double> scores,
                        std::span<const binary_label> truth);

struct pr_point {
  double precision = 0.0;
  double recall = 0.0;
  double threshold = 0.0;
};

struct roc_point {
  double false_positive_rate = 0.0;
  double true_positive_rate = 0.0;
  double threshold = 0.0;
};

/// One point per distinct score, thresholds descending. Each threshold sits
/// halfway between that score and the next lower one (lowest score minus
/// one for the last point), and samples with score > threshold count as benign.
/// Throws single_class when truth lacks a class.
std::vector<pr_point> pr_curve(std::span<const double> scores, std::span<const binary_label> truth);

/// Same thresholds as pr_curve, preceded by the (0, 0) point.
std::vector<roc_point> roc_curve(std::span<const double> scores, std::span<const binary_label> truth);

struct split_indices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class shuffle with round(train_fraction * class size) rows to train,
/// clamped so each class with two or more rows lands in both sides. Indices
/// come back sorted.
split_indices stratified_split(std::span<const binary_label> labels, double train_fraction, std::uint64_t seed);

inline const std::vector<std::size_t> k_default_max_call_counts = {50,   100,  150,  200,   250,   500,   750,
                                                                   1000, 2500, 5000, 7500, 10000, 20000, 100000};

struct sweep_config {
  std::vector<std::size_t> max_call_counts = k_default_max_call_counts;
  std::vector<featurize::model_order> orders = {featurize::model_order::unigram, featurize::model_order::bigram,
                                                featurize::model_order::trigram, featurize::model_order::combined};
  std::size_t n_runs = 4;
  double split_fraction = 0.8;
  std::uint64_t base_seed = 0;
  /// K whose PR/ROC curves are kept. Defaults to 2500 when swept, else the largest K.
  std::optional<std::size_t> curve_k;
  double threshold = 0.5;

  /// Throws invalid_argument when counts are not strictly increasing and
  /// positive, the fraction is outside (0, 1), or a list is empty.
  void validate() const;
  [[nodiscard]] std::size_t effective_curve_k() const;
};

std::uint64_t split_seed(std::uint64_t base_seed, std::size_t run);
std::uint64_t cell_seed(std::uint64_t base_seed, std::size_t run, featurize::model_order order, std::size_t k);

struct sweep_row {
  featurize::model_order order = featurize::model_order::unigram;
  std::size_t k = 0;
  std::size_t run = 0;
  metrics values;
  std::size_t dimension = 0;
};

struct sweep_aggregate {
  featurize::model_order order = featurize::model_order::unigram;
  std::size_t k = 0;
  metrics mean;
  metrics stddev; // sample standard deviation across runs; 0 for a single run
};

struct curve_set {
  featurize::model_order order = featurize::model_order::unigram;
  std::size_t k = 0;
  std::size_t run = 0;
  std::vector<pr_point> pr;
  std::vector<roc_point> roc;
};

/// Rows are ordered by (order, K, run) following the config lists.
struct sweep_report {
  std::vector<sweep_row> rows;
  std::vector<sweep_aggregate> aggregates;
  std::vector<curve_set> curves;

  [[nodiscard]] const sweep_aggregate* aggregate(featurize::model_order order, std::size_t k) const;
};

/// Repeated stratified holdout: per run a split seeded by split_seed, per
/// (order, K) vocabularies discovered on the training split, a forest seeded
/// by cell_seed, metrics on the test split. Cells run on `workers` threads
/// and the report does not depend on the worker count.
sweep_report run_sweep(std::span<const ingest::labeled_sequence> corpus, std::size_t function_count,
                       const sweep_config& config, const forest::forest_params& forest_params,
                       unsigned workers = 1);

sweep_report run_sweep(const std::filesystem::path& corpus_dir, const label_manifest& manifest,
                       const function_vocabulary& vocab, const sweep_config& config,
                       const forest::forest_params& forest_params, unsigned workers = 1);

/// model,K,run,accuracy,precision,recall,f1,roc_auc; aggregate rows use run
/// "mean" and "std".
void write_report_csv(std::ostream& out, const sweep_report& report);
/// model,K,run,threshold,precision,recall
void write_pr_csv(std::ostream& out, const sweep_report& report);
/// model,K,run,threshold,fpr,tpr
void write_roc_csv(std::ostream& out, const sweep_report& report);

} // namespace apitrace::eval
