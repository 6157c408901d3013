#include "apitrace/error.hpp"
#include "apitrace/eval.hpp"
#include "apitrace/ingest.hpp"
#include "apitrace/synth.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <functional>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace apitrace;
using namespace apitrace::synth;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

synth_spec small_spec() {
  synth_spec s;
  s.n_malware = 40;
  s.n_benign = 10;
  s.malware_length = {50, 400};
  s.benign_length = {50, 400};
  return s;
}

bool rows_sum_to_one(const class_profile& p) {
  auto ok = [](const std::vector<double>& row) {
    double sum = 0.0;
    for (double v : row) {
      if (v < 0.0) {
        return false;
      }
      sum += v;
    }
    return std::abs(sum - 1.0) < 1e-12;
  };
  return ok(p.initial) && std::all_of(p.transition.begin(), p.transition.end(), ok);
}

} // namespace

TEST_CASE("default spec") {
  const synth_spec s;
  CHECK(s.n_malware == 660);
  CHECK(s.n_benign == 20);
  CHECK(s.separation == 0.6);
  CHECK(s.seed == 7);
  CHECK(s.malware_length.min == 100);
  CHECK(s.malware_length.max == 5000);
  CHECK(s.functions.size() == 59);
  CHECK_NOTHROW(function_vocabulary(s.functions));
}

TEST_CASE("spec validation") {
  auto bad = small_spec();
  bad.separation = 1.5;
  CHECK_THROWS_AS(bad.validate(), error);
  bad = small_spec();
  bad.n_benign = 0;
  CHECK_THROWS_AS(bad.validate(), error);
  bad = small_spec();
  bad.benign_length = {10, 5};
  CHECK_THROWS_AS(bad.validate(), error);
}

TEST_CASE("profiles are stochastic and collapse at zero separation") {
  const auto p = make_profiles(small_spec());
  CHECK(rows_sum_to_one(p.malware));
  CHECK(rows_sum_to_one(p.benign));
  CHECK(p.malware.transition.size() == 59);
  CHECK(p.malware.initial != p.benign.initial);

  auto same = small_spec();
  same.separation = 0.0;
  const auto q = make_profiles(same);
  CHECK(q.malware.initial == q.benign.initial);
  CHECK(q.malware.transition == q.benign.transition);
}

TEST_CASE("sampling follows the chain") {
  const auto p = make_profiles(small_spec());
  random_stream rng(1);
  const auto ids = sample_sequence(p.benign, 500, rng);
  CHECK(ids.size() == 500);
  CHECK(p.benign.initial[ids[0]] > 0.0);
  for (std::size_t i = 1; i < ids.size(); ++i) {
    CHECK(p.benign.transition[ids[i - 1]][ids[i]] > 0.0);
  }
  CHECK(sample_sequence(p.benign, 0, rng).empty());
}

TEST_CASE("SHAs are 64 hex digits and distinct") {
  const auto a = sample_sha(7, 0);
  CHECK(a.size() == 64);
  CHECK(a.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(a == sample_sha(7, 0));
  CHECK(a != sample_sha(7, 1));
  CHECK(a != sample_sha(8, 0));
}

TEST_CASE("tiny corpus layout") {
  testing::temp_dir dir("synth");
  auto spec = small_spec();
  spec.n_malware = 2;
  spec.n_benign = 1;
  const auto out = generate_corpus(spec, dir.path());
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& f : std::filesystem::directory_iterator(out.traces_dir)) {
    ++files;
  }
  CHECK(files == 3);
  const auto manifest = ingest::load_label_manifest(out.families_path, out.benign_path);
  CHECK(manifest.families().size() == 1);
  CHECK(manifest.malware_count() == 2);
  CHECK(manifest.benign_shas().size() == 1);
}

TEST_CASE("corpus round-trips through ingest and is byte-identical on regeneration") {
  testing::temp_dir a("synth-a");
  testing::temp_dir b("synth-b");
  auto spec = small_spec();
  spec.n_families = 3;
  const auto out_a = generate_corpus(spec, a.path());
  const auto out_b = generate_corpus(spec, b.path());

  for (const auto& sha : out_a.malware_shas) {
    CHECK(slurp(out_a.traces_dir / (sha + ".json")) == slurp(out_b.traces_dir / (sha + ".json")));
  }
  CHECK(slurp(out_a.profiles_path) == slurp(out_b.profiles_path));
  CHECK(slurp(out_a.families_path) == slurp(out_b.families_path));

  const auto vocab = ingest::load_function_vocabulary(out_a.functions_path);
  const auto manifest = ingest::load_label_manifest(out_a.families_path, out_a.benign_path);
  CHECK(manifest.families().size() == 3);
  const auto corpus = ingest::load_corpus(out_a.traces_dir, manifest, vocab);
  CHECK(corpus.samples.size() == 50);
  CHECK(corpus.skipped_lines == 0);
  CHECK(corpus.uncovered_files == 0);
  for (const auto& s : corpus.samples) {
    CHECK(s.sequence.dropped == 0);
    CHECK(s.sequence.ids.size() >= 50);
    CHECK(s.sequence.ids.size() <= 400);
  }

  // Every line of a generated trace carries the full field set.
  const auto first = ingest::load_trace_file(out_a.traces_dir / (out_a.benign_shas[0] + ".json"));
  const auto& r = first.calls[0];
  CHECK(r.module_name == "ntdll.dll");
  CHECK_FALSE(r.logger_ts.empty());
  CHECK_FALSE(r.vmi_ts.empty());
  CHECK_FALSE(r.process_dtb.empty());
  CHECK_FALSE(r.process_teb.empty());
  CHECK_FALSE(r.parameters.empty());

  const auto profiles = load_profiles(out_a.profiles_path);
  const auto expected = make_profiles(spec);
  CHECK(profiles.functions == expected.functions);
  CHECK(profiles.seed == spec.seed);
  for (std::size_t i = 0; i < 59; ++i) {
    CHECK(profiles.malware.initial[i] == expected.malware.initial[i]);
  }
}

TEST_CASE("Bayes classifier on the known profiles separates the default corpus") {
  // Oracle check on a quarter-size corpus at the default separation: the
  // likelihood-ratio rule must reach F1 >= 0.99 on benign.
  testing::temp_dir dir("synth-oracle");
  synth_spec spec;
  spec.n_malware = 165;
  spec.n_benign = 20;
  const auto out = generate_corpus(spec, dir.path());
  const auto vocab = ingest::load_function_vocabulary(out.functions_path);
  const auto manifest = ingest::load_label_manifest(out.families_path, out.benign_path);
  const auto corpus = ingest::load_corpus(out.traces_dir, manifest, vocab);
  const auto profiles = load_profiles(out.profiles_path);

  std::vector<binary_label> pred;
  std::vector<binary_label> truth;
  std::vector<double> scores;
  for (const auto& s : corpus.samples) {
    pred.push_back(testing::bayes_label(profiles, s.sequence.ids, 20.0 / 185.0));
    truth.push_back(s.label);
    scores.push_back(pred.back() == binary_label::benign ? 1.0 : 0.0);
  }
  const auto m = eval::compute_metrics(eval::confusion(pred, truth), scores, truth);
  CHECK(m.f1 >= 0.99);
}
