#pragma once

#include "apitrace/feature_matrix.hpp"
#include "apitrace/trace_model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace apitrace::featurize {

inline constexpr std::size_t k_all_calls = std::numeric_limits<std::size_t>::max();

enum class model_order { unigram, bigram, trigram, combined };

std::string_view to_string(model_order order) noexcept;
/// Accepts "unigram", "bigram", "trigram", "combined" (any case).
model_order parse_model_order(std::string_view text);

using ngram = std::vector<function_id>;

/// Injective map from observed n-grams to feature indices. Indices follow
/// first-occurrence order; the unigram vocabulary is the identity over the
/// whole function alphabet.
class ngram_vocabulary {
public:
  /// Empty vocabulary of the given window length (1..3), ready for observe().
  explicit ngram_vocabulary(int order);
  /// Rebuilds a vocabulary from its persisted entries (position = index).
  ngram_vocabulary(int order, const std::vector<ngram>& entries);

  static ngram_vocabulary unigram(std::size_t function_count);

  [[nodiscard]] int order() const noexcept { return order_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const std::vector<ngram>& entries() const noexcept { return entries_; }

  [[nodiscard]] std::optional<std::size_t> index_of(std::span<const function_id> window) const;

  /// Adds every window of the first max_calls ids not seen before.
  void observe(std::span<const function_id> ids, std::size_t max_calls = k_all_calls);

  [[nodiscard]] std::uint64_t fingerprint() const noexcept;

  bool operator==(const ngram_vocabulary& other) const {
    return order_ == other.order_ && entries_ == other.entries_;
  }

private:
  std::size_t insert(std::span<const function_id> window);

  int order_;
  std::vector<ngram> entries_;
  std::unordered_map<std::uint64_t, std::uint32_t> index_;
};

struct feature_vector {
  std::string sha;
  std::vector<std::uint32_t> values;
  /// Windows that had no index in the vocabulary.
  std::size_t skipped_windows = 0;
};

call_sequence truncate(const call_sequence& seq, std::size_t max_calls);

std::vector<ngram> extract_ngrams(std::span<const function_id> ids, int order);

/// Throws empty_discovery_corpus when `corpus` is empty.
ngram_vocabulary discover_ngram_vocabulary(std::span<const call_sequence> corpus, int order,
                                           std::size_t max_calls = k_all_calls);

feature_vector featurize(const call_sequence& seq, const ngram_vocabulary& vocab,
                         std::size_t max_calls = k_all_calls);

feature_vector featurize_combined(const call_sequence& seq, const ngram_vocabulary& uni,
                                  const ngram_vocabulary& bi, const ngram_vocabulary& tri,
                                  std::size_t max_calls = k_all_calls);

/// Adds the window counts of the truncated sequence into `out` (size must be
/// vocab.size()). Returns the number of windows with no index.
std::size_t accumulate_counts(std::span<const function_id> ids, const ngram_vocabulary& vocab,
                              std::size_t max_calls, std::span<float> out);

/// The vocabularies behind one model order. Combined holds all three.
class feature_space {
public:
  feature_space(model_order order, std::vector<ngram_vocabulary> vocabularies);

  /// Discovers the n-gram vocabularies the order needs over `training`,
  /// honouring the same prefix truncation used for featurization.
  static feature_space discover(model_order order, std::size_t function_count,
                                std::span<const std::span<const function_id>> training,
                                std::size_t max_calls);

  [[nodiscard]] model_order order() const noexcept { return order_; }
  [[nodiscard]] std::size_t dimension() const noexcept { return dimension_; }
  [[nodiscard]] const std::vector<ngram_vocabulary>& vocabularies() const noexcept { return vocabularies_; }

  std::size_t fill_row(std::span<const function_id> ids, std::size_t max_calls, std::span<float> row) const;
  [[nodiscard]] feature_matrix featurize_rows(std::span<const std::span<const function_id>> sequences,
                                              std::size_t max_calls) const;

private:
  model_order order_;
  std::vector<ngram_vocabulary> vocabularies_;
  std::size_t dimension_ = 0;
};

// Persisted form: {"order": n, "entries": [[id, ...], ...]}.
std::string ngram_vocabulary_to_json(const ngram_vocabulary& vocab);
ngram_vocabulary ngram_vocabulary_from_json(std::string_view text);
void save_ngram_vocabulary(const ngram_vocabulary& vocab, const std::filesystem::path& path);
ngram_vocabulary load_ngram_vocabulary(const std::filesystem::path& path);

/// CSV with header sha,label,f0..f(d-1).
void write_feature_csv(std::ostream& out, std::span<const std::string> shas,
                       std::span<const binary_label> labels, const feature_matrix& rows);

} // namespace apitrace::featurize
