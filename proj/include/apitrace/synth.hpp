#pragma once

#include "apitrace/random.hpp"
#include "apitrace/trace_model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace apitrace::synth {

/// 59 ntdll.dll functions used when no vocabulary is supplied.
const std::vector<std::string>& default_function_names();

struct length_range {
  std::size_t min = 100;
  std::size_t max = 5000;
};

struct synth_spec {
  std::size_t n_malware = 660;
  std::size_t n_benign = 20;
  length_range malware_length;
  length_range benign_length;
  double separation = 0.6;
  std::uint64_t seed = 7;
  std::size_t n_families = 1;
  std::vector<std::string> functions = default_function_names();

  /// Throws invalid_argument on out-of-range fields.
  void validate() const;
};

/// First-order Markov chain over function ids.
struct class_profile {
  std::vector<double> initial;
  std::vector<std::vector<double>> transition; // transition[from][to]
};

/// The generating distributions of a planted corpus.
///
/// Functions are split into a common block and two small exclusive blocks
/// (one per class). Every row is (1 - separation) * shared + separation *
/// class_specific, where the shared part covers the common block only and
/// the class-specific part puts a fixed share of its mass on the class's own
/// exclusive block. separation = 0 therefore makes the classes identical.
struct planted_profiles {
  std::vector<std::string> functions;
  class_profile malware;
  class_profile benign;
  double separation = 0.0;
  std::uint64_t seed = 0;

  [[nodiscard]] const class_profile& of(binary_label label) const {
    return label == binary_label::benign ? benign : malware;
  }
};

planted_profiles make_profiles(const synth_spec& spec);

std::vector<function_id> sample_sequence(const class_profile& profile, std::size_t length, random_stream& rng);

/// 64 hex digits derived from (seed, index).
std::string sample_sha(std::uint64_t seed, std::size_t index);

struct generated_corpus {
  std::filesystem::path traces_dir;
  std::filesystem::path families_path;
  std::filesystem::path benign_path;
  std::filesystem::path functions_path;
  std::filesystem::path profiles_path;
  std::vector<std::string> malware_shas;
  std::vector<std::string> benign_shas;
};

/// Writes out_dir/traces/<sha>.json plus shas_by_families.json,
/// benign_shas.json, functions.json and profiles.json. Identical specs give
/// byte-identical output.
generated_corpus generate_corpus(const synth_spec& spec, const std::filesystem::path& out_dir);

std::string profiles_to_json(const planted_profiles& profiles);
planted_profiles load_profiles(const std::filesystem::path& path);

} // namespace apitrace::synth
