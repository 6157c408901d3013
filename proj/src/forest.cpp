#include "apitrace/forest.hpp"

#include "apitrace/error.hpp"
#include "apitrace/parallel.hpp"
#include "apitrace/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace apitrace::forest {

using json = nlohmann::json;

namespace {

double gini_from_weights(double benign, double malware) {
  const double total = benign + malware;
  if (total <= 0.0) {
    return 0.0;
  }
  // 1 - pb^2 - pm^2, written so that swapping the classes is exact.
  return 2.0 * (benign * malware) / (total * total);
}

struct split_candidate {
  double impurity = 0.0;
  std::size_t feature = 0;
  double threshold = 0.0;
};

bool better(const split_candidate& a, const split_candidate& b) {
  if (a.impurity != b.impurity) {
    return a.impurity < b.impurity;
  }
  if (a.feature != b.feature) {
    return a.feature < b.feature;
  }
  return a.threshold < b.threshold;
}

class tree_builder {
public:
  tree_builder(const feature_matrix& rows, std::span<const binary_label> labels,
               const forest_params& params, std::span<const double> class_weight, std::uint64_t seed)
      : rows_(rows), labels_(labels), params_(params), class_weight_(class_weight), rng_(seed),
        mtry_(params.features.resolve(rows.cols())) {
    feature_order_.resize(rows.cols());
    std::iota(feature_order_.begin(), feature_order_.end(), std::size_t{0});
  }

  decision_tree build() {
    const std::size_t n = rows_.rows();
    std::vector<std::uint32_t> samples(n);
    if (params_.bootstrap) {
      for (auto& s : samples) {
        s = static_cast<std::uint32_t>(rng_.uniform_index(n));
      }
      std::sort(samples.begin(), samples.end());
    } else {
      std::iota(samples.begin(), samples.end(), 0u);
    }

    struct pending {
      std::size_t begin, end, depth;
      std::int32_t node;
    };
    std::vector<pending> stack;
    stack.push_back({0, samples.size(), 0, add_node()});

    while (!stack.empty()) {
      const pending job = stack.back();
      stack.pop_back();
      std::span<std::uint32_t> node_samples(samples.data() + job.begin, job.end - job.begin);

      double benign = 0.0;
      double malware = 0.0;
      for (auto s : node_samples) {
        (labels_[s] == binary_label::benign ? benign : malware) += class_weight_[to_int(labels_[s])];
      }
      const auto node = static_cast<std::size_t>(job.node);
      tree_.value[node] = benign / (benign + malware);
      tree_.samples[node] = static_cast<std::uint32_t>(node_samples.size());

      const bool pure = benign == 0.0 || malware == 0.0;
      const bool depth_limited = params_.max_depth != 0 && job.depth >= params_.max_depth;
      if (pure || depth_limited || node_samples.size() < params_.min_samples_split) {
        continue;
      }

      auto split = find_split(node_samples, benign, malware);
      if (!split) {
        continue;
      }

      // Partition so rows routed left come first; stable keeps bootstrap order.
      auto mid = std::stable_partition(node_samples.begin(), node_samples.end(), [&](std::uint32_t s) {
        return static_cast<double>(rows_(s, split->feature)) <= split->threshold;
      });
      const std::size_t left_size = static_cast<std::size_t>(mid - node_samples.begin());

      const std::int32_t left = add_node();
      const std::int32_t right = add_node();
      tree_.feature[node] = static_cast<std::int32_t>(split->feature);
      tree_.threshold[node] = split->threshold;
      tree_.left[node] = left;
      tree_.right[node] = right;
      stack.push_back({job.begin + left_size, job.end, job.depth + 1, right});
      stack.push_back({job.begin, job.begin + left_size, job.depth + 1, left});
    }
    return std::move(tree_);
  }

private:
  std::int32_t add_node() {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.value.push_back(0.0);
    tree_.samples.push_back(0);
    return static_cast<std::int32_t>(tree_.feature.size() - 1);
  }

  // Draws candidate features without replacement until mtry non-constant ones
  // have been evaluated or the features run out. Splits are accepted even
  // when they do not lower impurity, so an impure node is only a leaf when
  // every drawn feature is constant on it.
  std::optional<split_candidate> find_split(std::span<const std::uint32_t> node_samples, double benign,
                                            double malware) {
    const double total = benign + malware;
    std::optional<split_candidate> best;
    std::size_t evaluated = 0;
    const std::size_t d = feature_order_.size();
    for (std::size_t i = 0; i < d && evaluated < mtry_; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_.uniform_index(d - i));
      std::swap(feature_order_[i], feature_order_[j]);
      const std::size_t f = feature_order_[i];

      column_.clear();
      for (auto s : node_samples) {
        column_.push_back({rows_(s, f), s});
      }
      std::sort(column_.begin(), column_.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      if (column_.front().first == column_.back().first) {
        continue;
      }
      ++evaluated;

      double left_benign = 0.0;
      double left_malware = 0.0;
      for (std::size_t k = 0; k + 1 < column_.size(); ++k) {
        const auto s = column_[k].second;
        (labels_[s] == binary_label::benign ? left_benign : left_malware) += class_weight_[to_int(labels_[s])];
        if (column_[k].first == column_[k + 1].first) {
          continue;
        }
        const double left_total = left_benign + left_malware;
        const double right_benign = benign - left_benign;
        const double right_malware = malware - left_malware;
        const double impurity = (left_total * gini_from_weights(left_benign, left_malware) +
                                 (total - left_total) * gini_from_weights(right_benign, right_malware)) /
                                total;
        const double threshold =
            (static_cast<double>(column_[k].first) + static_cast<double>(column_[k + 1].first)) / 2.0;
        split_candidate candidate{impurity, f, threshold};
        if (!best || better(candidate, *best)) {
          best = candidate;
        }
      }
    }
    return best;
  }

  const feature_matrix& rows_;
  std::span<const binary_label> labels_;
  const forest_params& params_;
  std::span<const double> class_weight_;
  random_stream rng_;
  std::size_t mtry_;
  std::vector<std::size_t> feature_order_;
  std::vector<std::pair<float, std::uint32_t>> column_;
  decision_tree tree_;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

[[noreturn]] void corrupt(const std::string& what) {
  throw error(error_kind::model_corrupt, "corrupt model file: " + what);
}

json params_to_json(const forest_params& p) {
  json j;
  j["n_trees"] = p.n_trees;
  j["max_depth"] = p.max_depth == 0 ? json(nullptr) : json(p.max_depth);
  j["min_samples_split"] = p.min_samples_split;
  switch (p.features.kind) {
  case features_per_split::rule::sqrt: j["features_per_split"] = "sqrt"; break;
  case features_per_split::rule::all: j["features_per_split"] = "all"; break;
  case features_per_split::rule::fixed: j["features_per_split"] = p.features.count; break;
  }
  j["bootstrap"] = p.bootstrap;
  j["seed"] = p.seed;
  j["class_weight"] = p.balanced_class_weight ? "balanced" : "none";
  return j;
}

forest_params params_from_json(const json& j) {
  forest_params p;
  p.n_trees = j.at("n_trees").get<std::size_t>();
  p.max_depth = j.at("max_depth").is_null() ? 0 : j.at("max_depth").get<std::size_t>();
  p.min_samples_split = j.at("min_samples_split").get<std::size_t>();
  const auto& fps = j.at("features_per_split");
  if (fps.is_string()) {
    const auto rule = fps.get<std::string>();
    if (rule == "sqrt") {
      p.features.kind = features_per_split::rule::sqrt;
    } else if (rule == "all") {
      p.features.kind = features_per_split::rule::all;
    } else {
      corrupt("unknown features_per_split rule '" + rule + "'");
    }
  } else {
    p.features = {features_per_split::rule::fixed, fps.get<std::size_t>()};
  }
  p.bootstrap = j.at("bootstrap").get<bool>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.balanced_class_weight = j.at("class_weight").get<std::string>() == "balanced";
  return p;
}

std::uint64_t parse_hex64(const std::string& text) {
  if (text.size() != 16) {
    corrupt("fingerprint '" + text + "' is not 16 hex digits");
  }
  std::size_t used = 0;
  const auto v = std::stoull(text, &used, 16);
  if (used != text.size()) {
    corrupt("fingerprint '" + text + "' is not hexadecimal");
  }
  return v;
}

} // namespace

std::size_t features_per_split::resolve(std::size_t dimensionality) const {
  std::size_t k = dimensionality;
  switch (kind) {
  case rule::sqrt: k = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(dimensionality)))); break;
  case rule::all: break;
  case rule::fixed: k = count; break;
  }
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(1, dimensionality));
}

double decision_tree::predict(std::span<const float> row) const {
  std::size_t node = 0;
  while (feature[node] >= 0) {
    const auto f = static_cast<std::size_t>(feature[node]);
    node = static_cast<std::size_t>(static_cast<double>(row[f]) <= threshold[node] ? left[node] : right[node]);
  }
  return value[node];
}

double gini_impurity(std::span<const binary_label> labels) {
  double benign = 0.0;
  for (auto l : labels) {
    benign += l == binary_label::benign ? 1.0 : 0.0;
  }
  return gini_from_weights(benign, static_cast<double>(labels.size()) - benign);
}

random_forest_model train_forest(const feature_matrix& rows, std::span<const binary_label> labels,
                                 const forest_params& params, unsigned workers) {
  if (rows.rows() != labels.size()) {
    throw error(error_kind::length_mismatch, "training rows and labels differ in length");
  }
  if (params.n_trees == 0) {
    throw error(error_kind::invalid_argument, "n_trees must be positive");
  }
  if (params.min_samples_split < 2) {
    throw error(error_kind::invalid_argument, "min_samples_split must be at least 2");
  }
  if (rows.cols() == 0) {
    throw error(error_kind::dimension_mismatch, "training rows have no features");
  }
  const auto benign = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), binary_label::benign));
  if (rows.rows() < 2 || benign == 0 || benign == labels.size()) {
    throw error(error_kind::degenerate_training_set,
                "degenerate training set: need at least two rows covering both classes");
  }

  std::array<double, 2> class_weight{1.0, 1.0};
  if (params.balanced_class_weight) {
    const double n = static_cast<double>(labels.size());
    class_weight[0] = n / (2.0 * static_cast<double>(labels.size() - benign));
    class_weight[1] = n / (2.0 * static_cast<double>(benign));
  }

  random_forest_model model;
  model.params = params;
  model.dimensionality = rows.cols();
  model.trees.resize(params.n_trees);
  parallel_for(params.n_trees, workers, [&](std::size_t t) {
    tree_builder builder(rows, labels, params, class_weight, mix_seed(params.seed, t));
    model.trees[t] = builder.build();
  });
  return model;
}

double predict_score(const random_forest_model& model, std::span<const float> row) {
  if (row.size() != model.dimensionality) {
    throw error(error_kind::dimension_mismatch, "feature vector has " + std::to_string(row.size()) +
                                                    " entries, model expects " +
                                                    std::to_string(model.dimensionality));
  }
  if (model.trees.empty()) {
    throw error(error_kind::model_corrupt, "model has no trees");
  }
  double sum = 0.0;
  for (const auto& tree : model.trees) {
    sum += tree.predict(row);
  }
  return sum / static_cast<double>(model.trees.size());
}

binary_label predict_label(const random_forest_model& model, std::span<const float> row, double threshold) {
  return predict_score(model, row) > threshold ? binary_label::benign : binary_label::malware;
}

std::string fingerprint_hex(std::uint64_t fingerprint) { return hex64(fingerprint); }

std::string serialize_model(const random_forest_model& model) {
  json doc;
  doc["format"] = "apitrace-random-forest";
  doc["version"] = k_model_format_version;
  doc["seed_mixing"] = std::string(k_seed_mixing_rule);
  doc["params"] = params_to_json(model.params);
  doc["dimensionality"] = model.dimensionality;

  const auto& pipe = model.pipeline;
  json pipeline;
  pipeline["model_order"] = std::string(featurize::to_string(pipe.order));
  pipeline["max_calls"] = pipe.max_calls == featurize::k_all_calls ? json(nullptr) : json(pipe.max_calls);
  pipeline["functions"] = pipe.function_names;
  json vocabs = json::array();
  json vocab_prints = json::array();
  for (const auto& v : pipe.vocabularies) {
    vocabs.push_back({{"order", v.order()}, {"entries", v.entries()}});
    vocab_prints.push_back(hex64(v.fingerprint()));
  }
  pipeline["vocabularies"] = std::move(vocabs);
  doc["pipeline"] = std::move(pipeline);
  doc["fingerprints"] = {{"functions", hex64(function_vocabulary(pipe.function_names).fingerprint())},
                         {"vocabularies", std::move(vocab_prints)}};

  json trees = json::array();
  for (const auto& t : model.trees) {
    trees.push_back({{"feature", t.feature},
                     {"threshold", t.threshold},
                     {"left", t.left},
                     {"right", t.right},
                     {"value", t.value},
                     {"samples", t.samples}});
  }
  doc["trees"] = std::move(trees);
  return doc.dump();
}

random_forest_model deserialize_model(std::string_view text, const expected_fingerprints& expected) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    corrupt(e.what());
  }

  random_forest_model model;
  std::uint64_t function_print = 0;
  std::vector<std::uint64_t> vocab_prints;
  try {
    if (!doc.is_object() || doc.value("format", "") != "apitrace-random-forest") {
      corrupt("not a random forest model");
    }
    const int version = doc.at("version").get<int>();
    if (version != k_model_format_version) {
      throw error(error_kind::model_version, "model format version " + std::to_string(version) +
                                                 " is not supported (expected " +
                                                 std::to_string(k_model_format_version) + ")");
    }
    model.params = params_from_json(doc.at("params"));
    model.dimensionality = doc.at("dimensionality").get<std::size_t>();

    const auto& pipeline = doc.at("pipeline");
    model.pipeline.order = featurize::parse_model_order(pipeline.at("model_order").get<std::string>());
    model.pipeline.max_calls =
        pipeline.at("max_calls").is_null() ? featurize::k_all_calls : pipeline.at("max_calls").get<std::size_t>();
    model.pipeline.function_names = pipeline.at("functions").get<std::vector<std::string>>();
    for (const auto& v : pipeline.at("vocabularies")) {
      model.pipeline.vocabularies.emplace_back(v.at("order").get<int>(),
                                               v.at("entries").get<std::vector<featurize::ngram>>());
    }

    function_print = parse_hex64(doc.at("fingerprints").at("functions").get<std::string>());
    for (const auto& p : doc.at("fingerprints").at("vocabularies")) {
      vocab_prints.push_back(parse_hex64(p.get<std::string>()));
    }

    for (const auto& t : doc.at("trees")) {
      decision_tree tree;
      tree.feature = t.at("feature").get<std::vector<std::int32_t>>();
      tree.threshold = t.at("threshold").get<std::vector<double>>();
      tree.left = t.at("left").get<std::vector<std::int32_t>>();
      tree.right = t.at("right").get<std::vector<std::int32_t>>();
      tree.value = t.at("value").get<std::vector<double>>();
      tree.samples = t.at("samples").get<std::vector<std::uint32_t>>();
      model.trees.push_back(std::move(tree));
    }
  } catch (const json::exception& e) {
    corrupt(e.what());
  } catch (const error& e) {
    if (e.kind() == error_kind::model_version || e.kind() == error_kind::model_corrupt) {
      throw;
    }
    corrupt(e.what());
  }

  if (model.trees.size() != model.params.n_trees || model.trees.empty()) {
    corrupt("tree count does not match n_trees");
  }
  for (const auto& t : model.trees) {
    const std::size_t n = t.feature.size();
    if (n == 0 || t.threshold.size() != n || t.left.size() != n || t.right.size() != n ||
        t.value.size() != n || t.samples.size() != n) {
      corrupt("tree arrays have inconsistent lengths");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (t.feature[i] < 0) {
        continue;
      }
      if (static_cast<std::size_t>(t.feature[i]) >= model.dimensionality || t.left[i] <= static_cast<std::int32_t>(i) ||
          t.right[i] <= static_cast<std::int32_t>(i) || static_cast<std::size_t>(t.left[i]) >= n ||
          static_cast<std::size_t>(t.right[i]) >= n) {
        corrupt("tree node " + std::to_string(i) + " is out of range");
      }
    }
  }

  // The embedded pipeline must match the fingerprints recorded next to it.
  std::size_t pipeline_dim = 0;
  for (const auto& v : model.pipeline.vocabularies) {
    pipeline_dim += v.size();
  }
  if (function_vocabulary(model.pipeline.function_names).fingerprint() != function_print ||
      vocab_prints.size() != model.pipeline.vocabularies.size()) {
    corrupt("embedded function list does not match its fingerprint");
  }
  for (std::size_t i = 0; i < vocab_prints.size(); ++i) {
    if (model.pipeline.vocabularies[i].fingerprint() != vocab_prints[i]) {
      corrupt("embedded n-gram vocabulary does not match its fingerprint");
    }
  }
  if (!model.pipeline.vocabularies.empty() && pipeline_dim != model.dimensionality) {
    corrupt("pipeline dimension does not match the model dimensionality");
  }

  if (expected.functions && *expected.functions != function_print) {
    throw error(error_kind::fingerprint_mismatch,
                "function vocabulary fingerprint " + hex64(*expected.functions) +
                    " does not match the model's " + hex64(function_print));
  }
  for (auto want : expected.vocabularies) {
    if (std::find(vocab_prints.begin(), vocab_prints.end(), want) == vocab_prints.end()) {
      throw error(error_kind::fingerprint_mismatch,
                  "n-gram vocabulary fingerprint " + hex64(want) + " is not part of the model");
    }
  }
  return model;
}

void save_model(const random_forest_model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << serialize_model(model) << '\n';
  if (!out) {
    throw error(error_kind::io, "cannot write " + path.string());
  }
}

random_forest_model load_model(const std::filesystem::path& path, const expected_fingerprints& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw error(error_kind::io, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_model(buffer.str(), expected);
}

} // namespace apitrace::forest
