#include "apitrace/trace_model.hpp"

#include "apitrace/error.hpp"

#include <algorithm>
#include <cctype>

namespace apitrace {

std::string_view to_string(error_kind kind) noexcept {
  switch (kind) {
  case error_kind::io: return "io error";
  case error_kind::parse: return "parse error";
  case error_kind::schema: return "schema error";
  case error_kind::invalid_argument: return "invalid argument";
  case error_kind::unlabeled_sample: return "unlabeled sample";
  case error_kind::duplicate_family_membership: return "duplicate family membership";
  case error_kind::contradictory_label: return "contradictory label";
  case error_kind::empty_trace: return "empty trace";
  case error_kind::empty_discovery_corpus: return "empty discovery corpus";
  case error_kind::degenerate_training_set: return "degenerate training set";
  case error_kind::dimension_mismatch: return "dimension mismatch";
  case error_kind::length_mismatch: return "length mismatch";
  case error_kind::empty_input: return "empty input";
  case error_kind::single_class: return "single class";
  case error_kind::missing_class: return "missing class";
  case error_kind::model_version: return "model version mismatch";
  case error_kind::model_corrupt: return "corrupt model file";
  case error_kind::fingerprint_mismatch: return "fingerprint mismatch";
  }
  return "unknown error";
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state) noexcept {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 0x100000001b3ULL;
  }
  return state;
}

function_vocabulary::function_vocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  lookup_.reserve(names_.size());
  for (function_id id = 0; id < names_.size(); ++id) {
    if (names_[id].empty()) {
      throw error(error_kind::invalid_argument, "function vocabulary contains an empty name");
    }
    auto [it, inserted] = lookup_.emplace(to_lower(names_[id]), id);
    if (!inserted) {
      throw error(error_kind::invalid_argument,
                  "function vocabulary lists '" + names_[id] + "' more than once");
    }
  }
}

std::optional<function_id> function_vocabulary::id_of(std::string_view name) const {
  auto it = lookup_.find(to_lower(name));
  if (it == lookup_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::uint64_t function_vocabulary::fingerprint() const noexcept {
  std::uint64_t h = fnv1a64("functions");
  for (const auto& name : names_) {
    h = fnv1a64("\n", h);
    h = fnv1a64(name, h);
  }
  return h;
}

label_manifest::label_manifest(std::map<std::string, std::set<std::string>> families,
                               std::set<std::string> benign_shas)
    : families_(std::move(families)), benign_(std::move(benign_shas)) {
  for (const auto& [family, shas] : families_) {
    for (const auto& sha : shas) {
      auto [it, inserted] = family_of_.emplace(sha, family);
      if (!inserted) {
        throw error(error_kind::duplicate_family_membership,
                    "sample " + sha + " is listed in families '" + it->second + "' and '" + family + "'");
      }
      if (benign_.contains(sha)) {
        throw error(error_kind::contradictory_label,
                    "sample " + sha + " is both benign and in family '" + family + "'");
      }
    }
  }
}

bool label_manifest::covers(std::string_view sha) const {
  return family_of_.find(sha) != family_of_.end() || benign_.find(std::string(sha)) != benign_.end();
}

std::optional<std::string> label_manifest::family_of(std::string_view sha) const {
  auto it = family_of_.find(sha);
  if (it == family_of_.end()) {
    return std::nullopt;
  }
  return it->second;
}

binary_label label_of(std::string_view sha, const label_manifest& manifest) {
  if (manifest.benign_shas().contains(std::string(sha))) {
    return binary_label::benign;
  }
  if (manifest.family_of(sha)) {
    return binary_label::malware;
  }
  throw error(error_kind::unlabeled_sample, "unlabeled sample " + std::string(sha));
}

} // namespace apitrace
