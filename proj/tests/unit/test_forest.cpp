#include "apitrace/error.hpp"
#include "apitrace/forest.hpp"
#include "apitrace/random.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <functional>

#include <fstream>

using namespace apitrace;
using namespace apitrace::forest;

namespace {

constexpr auto M = binary_label::malware;
constexpr auto B = binary_label::benign;

error_kind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return error_kind::io;
}

forest_params single_tree() {
  forest_params p;
  p.n_trees = 1;
  p.bootstrap = false;
  p.features.kind = features_per_split::rule::all;
  return p;
}

feature_matrix matrix(const std::vector<std::vector<float>>& rows) {
  feature_matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

struct noisy_problem {
  feature_matrix rows;
  std::vector<binary_label> labels;
};

noisy_problem make_problem(std::uint64_t seed, std::size_t n, std::size_t d) {
  random_stream rng(seed);
  noisy_problem p{feature_matrix(n, d), std::vector<binary_label>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      p.rows(r, c) = static_cast<float>(rng.uniform_index(8));
    }
    p.labels[r] = p.rows(r, 0) > 4 ? B : M;
  }
  return p;
}

random_forest_model model_with_leaves(std::vector<double> leaf_values, std::size_t dim) {
  random_forest_model m;
  m.params.n_trees = leaf_values.size();
  m.dimensionality = dim;
  for (double v : leaf_values) {
    m.trees.push_back({{-1}, {0.0}, {-1}, {-1}, {v}, {1}});
  }
  return m;
}

} // namespace

TEST_CASE("gini impurity") {
  CHECK(gini_impurity(std::vector{M, M, M, M}) == 0.0);
  CHECK(gini_impurity(std::vector{M, B}) == 0.5);
  CHECK(gini_impurity(std::vector{B, B, B, M}) == doctest::Approx(0.375).epsilon(1e-15));
  CHECK(gini_impurity(std::vector<binary_label>{}) == 0.0);
  CHECK(gini_impurity(std::vector{B, M, M}) == gini_impurity(std::vector{M, B, B}));
}

TEST_CASE("two-point problem splits at the midpoint") {
  const auto rows = matrix({{0}, {1}});
  const std::vector labels{M, B};
  const auto model = train_forest(rows, labels, single_tree());
  REQUIRE(model.trees.size() == 1);
  const auto& t = model.trees[0];
  CHECK(t.feature[0] == 0);
  CHECK(t.threshold[0] == 0.5);
  CHECK(t.node_count() == 3);
  const float zero[1] = {0};
  const float one[1] = {1};
  CHECK(predict_score(model, zero) == 0.0);
  CHECK(predict_score(model, one) == 1.0);
  CHECK(predict_label(model, zero) == M);
  CHECK(predict_label(model, one) == B);
}

TEST_CASE("ties prefer the lower feature index") {
  // Features 0 and 1 separate equally well.
  const auto rows = matrix({{0, 0}, {1, 1}});
  const auto model = train_forest(rows, std::vector{M, B}, single_tree());
  CHECK(model.trees[0].feature[0] == 0);
}

TEST_CASE("XOR is memorized through a zero-gain first split") {
  const auto rows = matrix({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  const std::vector labels{M, B, B, M};
  const auto model = train_forest(rows, labels, single_tree());
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(predict_label(model, rows.row(r)) == labels[r]);
  }
}

TEST_CASE("scores average the trees' leaves") {
  const float v[1] = {0};
  CHECK(predict_score(model_with_leaves({1.0, 1.0, 1.0}, 1), v) == 1.0);
  CHECK(predict_score(model_with_leaves({1.0, 0.0}, 1), v) == 0.5);
}

TEST_CASE("threshold rule is strict") {
  const float v[1] = {0};
  CHECK(predict_label(model_with_leaves({0.9}, 1), v) == B);
  CHECK(predict_label(model_with_leaves({0.5}, 1), v) == M);
  CHECK(predict_label(model_with_leaves({0.2}, 1), v) == M);
  CHECK(predict_label(model_with_leaves({0.9}, 1), v, 0.95) == M);
}

TEST_CASE("training errors") {
  const auto rows = matrix({{0}, {1}});
  CHECK(kind_of([&] { train_forest(rows, std::vector{M, M}, {}); }) == error_kind::degenerate_training_set);
  CHECK(kind_of([&] { train_forest(matrix({{0}}), std::vector{M}, {}); }) == error_kind::degenerate_training_set);
  CHECK(kind_of([&] { train_forest(rows, std::vector{M}, {}); }) == error_kind::length_mismatch);
  forest_params zero;
  zero.n_trees = 0;
  CHECK(kind_of([&] { train_forest(rows, std::vector{M, B}, zero); }) == error_kind::invalid_argument);
  forest_params split1;
  split1.min_samples_split = 1;
  CHECK(kind_of([&] { train_forest(rows, std::vector{M, B}, split1); }) == error_kind::invalid_argument);

  const auto model = train_forest(rows, std::vector{M, B}, single_tree());
  const float wide[2] = {0, 0};
  CHECK(kind_of([&] { (void)predict_score(model, wide); }) == error_kind::dimension_mismatch);
}

TEST_CASE("training is deterministic and independent of worker count") {
  const auto p = make_problem(1, 150, 12);
  forest_params params;
  params.n_trees = 20;
  params.seed = 5;
  const auto a = serialize_model(train_forest(p.rows, p.labels, params, 1));
  CHECK(a == serialize_model(train_forest(p.rows, p.labels, params, 1)));
  CHECK(a == serialize_model(train_forest(p.rows, p.labels, params, 3)));
  params.seed = 6;
  CHECK(a != serialize_model(train_forest(p.rows, p.labels, params, 1)));
}

TEST_CASE("structural invariants and score bounds") {
  const auto p = make_problem(2, 200, 10);
  forest_params params;
  params.n_trees = 15;
  params.max_depth = 3;
  const auto model = train_forest(p.rows, p.labels, params);
  CHECK(model.trees.size() == 15);
  CHECK(model.dimensionality == 10);
  for (const auto& t : model.trees) {
    for (std::size_t i = 0; i < t.node_count(); ++i) {
      CHECK(t.value[i] >= 0.0);
      CHECK(t.value[i] <= 1.0);
      if (t.feature[i] >= 0) {
        CHECK(static_cast<std::size_t>(t.feature[i]) < 10);
      }
    }
  }
  for (std::size_t r = 0; r < p.rows.rows(); ++r) {
    const double s = predict_score(model, p.rows.row(r));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    // Raising the threshold never turns malware into benign.
    if (predict_label(model, p.rows.row(r), 0.7) == B) {
      CHECK(predict_label(model, p.rows.row(r), 0.3) == B);
    }
  }
}

TEST_CASE("leaf values are the benign fraction of training rows") {
  // Identical rows with mixed labels cannot be split.
  const auto rows = matrix({{1}, {1}, {1}, {1}});
  const auto model = train_forest(rows, std::vector{B, M, M, M}, single_tree());
  REQUIRE(model.trees[0].node_count() == 1);
  CHECK(model.trees[0].value[0] == 0.25);
  CHECK(model.trees[0].samples[0] == 4);
}

TEST_CASE("balanced class weights change an imbalanced leaf") {
  const auto rows = matrix({{1}, {1}, {1}, {1}});
  auto params = single_tree();
  params.balanced_class_weight = true;
  const auto model = train_forest(rows, std::vector{B, M, M, M}, params);
  CHECK(model.trees[0].value[0] == doctest::Approx(0.5));
}

TEST_CASE("features per split") {
  CHECK(features_per_split{}.resolve(2540) == 50);
  CHECK(features_per_split{}.resolve(1) == 1);
  CHECK(features_per_split{features_per_split::rule::all, 0}.resolve(9) == 9);
  CHECK(features_per_split{features_per_split::rule::fixed, 30}.resolve(9) == 9);
  CHECK(features_per_split{features_per_split::rule::fixed, 0}.resolve(9) == 1);
}

TEST_CASE("single tree memorizes random consistent datasets") {
  random_stream rng(9);
  int checked = 0;
  while (checked < 25) {
    const std::size_t n = 2 + rng.uniform_index(80);
    const std::size_t d = 1 + rng.uniform_index(8);
    std::vector<std::vector<float>> raw(n, std::vector<float>(d));
    std::vector<binary_label> y(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (auto& v : raw[r]) {
        v = static_cast<float>(rng.uniform_index(3));
      }
      y[r] = rng.uniform_index(2) ? B : M;
    }
    if (!testing::is_consistent(raw, y) || std::count(y.begin(), y.end(), B) == 0 ||
        std::count(y.begin(), y.end(), M) == 0) {
      continue;
    }
    ++checked;
    const auto m = matrix(raw);
    const auto model = train_forest(m, y, single_tree());
    for (std::size_t r = 0; r < n; ++r) {
      CHECK(predict_label(model, m.row(r)) == y[r]);
    }
  }
}

TEST_CASE("model persistence") {
  const auto p = make_problem(3, 120, 6);
  forest_params params;
  params.n_trees = 10;
  params.seed = 77;
  auto model = train_forest(p.rows, p.labels, params);
  model.pipeline.order = featurize::model_order::unigram;
  model.pipeline.function_names = {"NtA", "NtB", "NtC", "NtD", "NtE", "NtF"};
  model.pipeline.vocabularies = {featurize::ngram_vocabulary::unigram(6)};
  model.pipeline.max_calls = 2500;

  testing::temp_dir dir("model");
  const auto path = dir / "m.json";
  save_model(model, path);

  SUBCASE("round trip keeps the model and its predictions") {
    const auto loaded = load_model(path);
    CHECK(loaded == model);
    random_stream rng(4);
    for (int i = 0; i < 100; ++i) {
      float v[6];
      for (auto& x : v) {
        x = static_cast<float>(rng.uniform_index(10));
      }
      CHECK(predict_score(loaded, v) == predict_score(model, v));
    }
    CHECK(serialize_model(loaded) == serialize_model(model));
  }
  SUBCASE("truncated file") {
    const auto text = serialize_model(model);
    testing::write_file(dir / "cut.json", text.substr(0, text.size() / 2));
    CHECK(kind_of([&] { load_model(dir / "cut.json"); }) == error_kind::model_corrupt);
  }
  SUBCASE("version mismatch") {
    auto text = serialize_model(model);
    const auto at = text.find("\"version\":1");
    REQUIRE(at != std::string::npos);
    text.replace(at, 11, "\"version\":9");
    CHECK(kind_of([&] { deserialize_model(text); }) == error_kind::model_version);
  }
  SUBCASE("fingerprint mismatch") {
    expected_fingerprints other;
    other.functions = function_vocabulary({"NtA", "NtB", "NtC", "NtD", "NtE", "NtX"}).fingerprint();
    CHECK(kind_of([&] { load_model(path, other); }) == error_kind::fingerprint_mismatch);

    expected_fingerprints other_vocab;
    other_vocab.vocabularies = {featurize::ngram_vocabulary(2, {{0, 1}}).fingerprint()};
    CHECK(kind_of([&] { load_model(path, other_vocab); }) == error_kind::fingerprint_mismatch);

    expected_fingerprints same;
    same.functions = function_vocabulary(model.pipeline.function_names).fingerprint();
    same.vocabularies = {model.pipeline.vocabularies[0].fingerprint()};
    CHECK(load_model(path, same) == model);
  }
  SUBCASE("tampered embedded vocabulary") {
    auto text = serialize_model(model);
    const auto at = text.find("\"NtF\"");
    REQUIRE(at != std::string::npos);
    text.replace(at, 5, "\"NtZ\"");
    CHECK(kind_of([&] { deserialize_model(text); }) == error_kind::model_corrupt);
  }
  SUBCASE("not a model") {
    CHECK(kind_of([&] { deserialize_model("{\"hello\": 1}"); }) == error_kind::model_corrupt);
    CHECK(kind_of([&] { load_model(dir / "absent.json"); }) == error_kind::io);
  }
}

TEST_CASE("fingerprint hex") { CHECK(fingerprint_hex(0xabcULL) == "0000000000000abc"); }
