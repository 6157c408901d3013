#pragma once

#include "apitrace/feature_matrix.hpp"
#include "apitrace/featurize.hpp"
#include "apitrace/trace_model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace apitrace::forest {

struct features_per_split {
  enum class rule { sqrt, all, fixed };
  rule kind = rule::sqrt;
  std::size_t count = 0; // used by rule::fixed

  /// Number of candidate features for a node, in [1, dimensionality].
  [[nodiscard]] std::size_t resolve(std::size_t dimensionality) const;

  bool operator==(const features_per_split&) const = default;
};

struct forest_params {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0; // 0 = unlimited
  std::size_t min_samples_split = 2;
  features_per_split features;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  /// Reweights classes to equal total weight. Off by default.
  bool balanced_class_weight = false;

  bool operator==(const forest_params&) const = default;
};

/// Flattened CART tree. Node 0 is the root; leaves have feature == -1.
struct decision_tree {
  std::vector<std::int32_t> feature;
  std::vector<double> threshold;
  std::vector<std::int32_t> left;
  std::vector<std::int32_t> right;
  std::vector<double> value; // benign fraction of the training rows reaching the node
  std::vector<std::uint32_t> samples;

  [[nodiscard]] std::size_t node_count() const noexcept { return feature.size(); }
  [[nodiscard]] double predict(std::span<const float> row) const;

  bool operator==(const decision_tree&) const = default;
};

/// Everything needed to turn a raw trace into the model's feature vector.
struct feature_pipeline {
  featurize::model_order order = featurize::model_order::unigram;
  std::vector<std::string> function_names;
  std::vector<featurize::ngram_vocabulary> vocabularies;
  std::size_t max_calls = featurize::k_all_calls;

  bool operator==(const feature_pipeline&) const = default;
};

struct random_forest_model {
  forest_params params;
  std::vector<decision_tree> trees;
  std::size_t dimensionality = 0;
  feature_pipeline pipeline;

  bool operator==(const random_forest_model&) const = default;
};

double gini_impurity(std::span<const binary_label> labels);

/// Grows params.n_trees CART trees. Tree t draws its bootstrap sample and
/// candidate features from mix_seed(params.seed, t), so the result does not
/// depend on `workers`. Throws degenerate_training_set for fewer than two rows
/// or a single class, length_mismatch when labels and rows disagree.
random_forest_model train_forest(const feature_matrix& rows, std::span<const binary_label> labels,
                                 const forest_params& params, unsigned workers = 1);

/// Mean over trees of the benign fraction at the leaf reached by `row`.
double predict_score(const random_forest_model& model, std::span<const float> row);

/// Benign iff the score is strictly above the threshold.
binary_label predict_label(const random_forest_model& model, std::span<const float> row,
                           double threshold = 0.5);

inline constexpr int k_model_format_version = 1;

std::string serialize_model(const random_forest_model& model);

/// Fingerprints the caller expects; absent entries are not checked.
struct expected_fingerprints {
  std::optional<std::uint64_t> functions;
  std::vector<std::uint64_t> vocabularies;
};

/// Throws model_corrupt, model_version or fingerprint_mismatch.
random_forest_model deserialize_model(std::string_view text, const expected_fingerprints& expected = {});

void save_model(const random_forest_model& model, const std::filesystem::path& path);
random_forest_model load_model(const std::filesystem::path& path, const expected_fingerprints& expected = {});

std::string fingerprint_hex(std::uint64_t fingerprint);

} // namespace apitrace::forest
