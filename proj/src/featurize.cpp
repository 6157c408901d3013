#include "apitrace/featurize.hpp"

#include "apitrace/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

namespace apitrace::featurize {

using json = nlohmann::json;

namespace {

constexpr unsigned k_id_bits = 21;
constexpr function_id k_max_id = (function_id{1} << k_id_bits) - 1;

std::uint64_t pack(std::span<const function_id> window) {
  std::uint64_t key = 0;
  for (auto id : window) {
    if (id > k_max_id) {
      throw error(error_kind::invalid_argument, "function id " + std::to_string(id) + " exceeds the n-gram key range");
    }
    key = (key << k_id_bits) | id;
  }
  return key;
}

void check_order(int order) {
  if (order < 1 || order > 3) {
    throw error(error_kind::invalid_argument, "n-gram order must be 1, 2 or 3, got " + std::to_string(order));
  }
}

std::size_t prefix_length(std::span<const function_id> ids, std::size_t max_calls) {
  return std::min(ids.size(), max_calls);
}

} // namespace

std::string_view to_string(model_order order) noexcept {
  switch (order) {
  case model_order::unigram: return "unigram";
  case model_order::bigram: return "bigram";
  case model_order::trigram: return "trigram";
  case model_order::combined: return "combined";
  }
  return "unknown";
}

model_order parse_model_order(std::string_view text) {
  const std::string lower = to_lower(text);
  for (auto order : {model_order::unigram, model_order::bigram, model_order::trigram, model_order::combined}) {
    if (lower == to_string(order)) {
      return order;
    }
  }
  throw error(error_kind::invalid_argument, "unknown model order '" + std::string(text) + "'");
}

ngram_vocabulary::ngram_vocabulary(int order) : order_(order) { check_order(order); }

ngram_vocabulary::ngram_vocabulary(int order, const std::vector<ngram>& entries) : order_(order) {
  check_order(order);
  entries_.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.size() != static_cast<std::size_t>(order)) {
      throw error(error_kind::schema, "n-gram entry length does not match order " + std::to_string(order));
    }
    const auto before = entries_.size();
    insert(e);
    if (entries_.size() == before) {
      throw error(error_kind::schema, "n-gram vocabulary lists an entry twice");
    }
  }
}

ngram_vocabulary ngram_vocabulary::unigram(std::size_t function_count) {
  ngram_vocabulary vocab(1);
  for (function_id id = 0; id < function_count; ++id) {
    const function_id window[1] = {id};
    vocab.insert(window);
  }
  return vocab;
}

std::optional<std::size_t> ngram_vocabulary::index_of(std::span<const function_id> window) const {
  if (window.size() != static_cast<std::size_t>(order_)) {
    return std::nullopt;
  }
  for (auto id : window) {
    if (id > k_max_id) {
      return std::nullopt;
    }
  }
  auto it = index_.find(pack(window));
  if (it == index_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::size_t ngram_vocabulary::insert(std::span<const function_id> window) {
  auto [it, inserted] = index_.emplace(pack(window), static_cast<std::uint32_t>(entries_.size()));
  if (inserted) {
    entries_.emplace_back(window.begin(), window.end());
  }
  return it->second;
}

void ngram_vocabulary::observe(std::span<const function_id> ids, std::size_t max_calls) {
  const std::size_t n = prefix_length(ids, max_calls);
  const auto width = static_cast<std::size_t>(order_);
  for (std::size_t i = 0; i + width <= n; ++i) {
    insert(ids.subspan(i, width));
  }
}

std::uint64_t ngram_vocabulary::fingerprint() const noexcept {
  return fnv1a64(ngram_vocabulary_to_json(*this));
}

call_sequence truncate(const call_sequence& seq, std::size_t max_calls) {
  call_sequence out;
  out.sha = seq.sha;
  out.dropped = seq.dropped;
  const std::size_t n = std::min(seq.ids.size(), max_calls);
  out.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

std::vector<ngram> extract_ngrams(std::span<const function_id> ids, int order) {
  check_order(order);
  const auto width = static_cast<std::size_t>(order);
  std::vector<ngram> windows;
  if (ids.size() < width) {
    return windows;
  }
  windows.reserve(ids.size() - width + 1);
  for (std::size_t i = 0; i + width <= ids.size(); ++i) {
    windows.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                         ids.begin() + static_cast<std::ptrdiff_t>(i + width));
  }
  return windows;
}

ngram_vocabulary discover_ngram_vocabulary(std::span<const call_sequence> corpus, int order,
                                           std::size_t max_calls) {
  if (corpus.empty()) {
    throw error(error_kind::empty_discovery_corpus, "empty discovery corpus");
  }
  ngram_vocabulary vocab(order);
  for (const auto& seq : corpus) {
    vocab.observe(seq.ids, max_calls);
  }
  return vocab;
}

std::size_t accumulate_counts(std::span<const function_id> ids, const ngram_vocabulary& vocab,
                              std::size_t max_calls, std::span<float> out) {
  if (out.size() != vocab.size()) {
    throw error(error_kind::dimension_mismatch, "output span does not match vocabulary size");
  }
  const std::size_t n = prefix_length(ids, max_calls);
  const auto width = static_cast<std::size_t>(vocab.order());
  std::size_t skipped = 0;
  for (std::size_t i = 0; i + width <= n; ++i) {
    if (auto index = vocab.index_of(ids.subspan(i, width))) {
      out[*index] += 1.0f;
    } else {
      ++skipped;
    }
  }
  return skipped;
}

feature_vector featurize(const call_sequence& seq, const ngram_vocabulary& vocab, std::size_t max_calls) {
  std::vector<float> counts(vocab.size(), 0.0f);
  feature_vector fv;
  fv.sha = seq.sha;
  fv.skipped_windows = accumulate_counts(seq.ids, vocab, max_calls, counts);
  fv.values.assign(counts.begin(), counts.end());
  return fv;
}

feature_vector featurize_combined(const call_sequence& seq, const ngram_vocabulary& uni,
                                  const ngram_vocabulary& bi, const ngram_vocabulary& tri,
                                  std::size_t max_calls) {
  feature_vector out;
  out.sha = seq.sha;
  out.values.reserve(uni.size() + bi.size() + tri.size());
  for (const auto* vocab : {&uni, &bi, &tri}) {
    auto part = featurize(seq, *vocab, max_calls);
    out.values.insert(out.values.end(), part.values.begin(), part.values.end());
    out.skipped_windows += part.skipped_windows;
  }
  return out;
}

feature_space::feature_space(model_order order, std::vector<ngram_vocabulary> vocabularies)
    : order_(order), vocabularies_(std::move(vocabularies)) {
  const std::vector<int> expected = [&]() -> std::vector<int> {
    switch (order) {
    case model_order::unigram: return {1};
    case model_order::bigram: return {2};
    case model_order::trigram: return {3};
    case model_order::combined: return {1, 2, 3};
    }
    return {};
  }();
  if (vocabularies_.size() != expected.size()) {
    throw error(error_kind::invalid_argument, std::string(to_string(order)) + " model needs " +
                                                  std::to_string(expected.size()) + " vocabularies");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (vocabularies_[i].order() != expected[i]) {
      throw error(error_kind::invalid_argument, "vocabulary order does not match the model order");
    }
    dimension_ += vocabularies_[i].size();
  }
}

feature_space feature_space::discover(model_order order, std::size_t function_count,
                                      std::span<const std::span<const function_id>> training,
                                      std::size_t max_calls) {
  auto discover_one = [&](int n) {
    if (training.empty()) {
      throw error(error_kind::empty_discovery_corpus, "empty discovery corpus");
    }
    ngram_vocabulary vocab(n);
    for (auto ids : training) {
      vocab.observe(ids, max_calls);
    }
    return vocab;
  };
  std::vector<ngram_vocabulary> vocabs;
  switch (order) {
  case model_order::unigram: vocabs.push_back(ngram_vocabulary::unigram(function_count)); break;
  case model_order::bigram: vocabs.push_back(discover_one(2)); break;
  case model_order::trigram: vocabs.push_back(discover_one(3)); break;
  case model_order::combined:
    vocabs.push_back(ngram_vocabulary::unigram(function_count));
    vocabs.push_back(discover_one(2));
    vocabs.push_back(discover_one(3));
    break;
  }
  return feature_space(order, std::move(vocabs));
}

std::size_t feature_space::fill_row(std::span<const function_id> ids, std::size_t max_calls,
                                    std::span<float> row) const {
  if (row.size() != dimension_) {
    throw error(error_kind::dimension_mismatch, "feature row has the wrong width");
  }
  std::size_t skipped = 0;
  std::size_t offset = 0;
  for (const auto& vocab : vocabularies_) {
    skipped += accumulate_counts(ids, vocab, max_calls, row.subspan(offset, vocab.size()));
    offset += vocab.size();
  }
  return skipped;
}

feature_matrix feature_space::featurize_rows(std::span<const std::span<const function_id>> sequences,
                                             std::size_t max_calls) const {
  feature_matrix m(sequences.size(), dimension_);
  for (std::size_t r = 0; r < sequences.size(); ++r) {
    fill_row(sequences[r], max_calls, m.row(r));
  }
  return m;
}

std::string ngram_vocabulary_to_json(const ngram_vocabulary& vocab) {
  json doc;
  doc["order"] = vocab.order();
  doc["entries"] = vocab.entries();
  return doc.dump();
}

ngram_vocabulary ngram_vocabulary_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw parse_error(e.byte, std::string("n-gram vocabulary: ") + e.what());
  }
  try {
    return ngram_vocabulary(doc.at("order").get<int>(), doc.at("entries").get<std::vector<ngram>>());
  } catch (const json::exception& e) {
    throw error(error_kind::schema, std::string("n-gram vocabulary: ") + e.what());
  }
}

void save_ngram_vocabulary(const ngram_vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << ngram_vocabulary_to_json(vocab) << '\n';
  if (!out) {
    throw error(error_kind::io, "cannot write " + path.string());
  }
}

ngram_vocabulary load_ngram_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw error(error_kind::io, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return ngram_vocabulary_from_json(buffer.str());
}

void write_feature_csv(std::ostream& out, std::span<const std::string> shas,
                       std::span<const binary_label> labels, const feature_matrix& rows) {
  if (shas.size() != rows.rows() || labels.size() != rows.rows()) {
    throw error(error_kind::length_mismatch, "feature CSV inputs differ in length");
  }
  out << "sha,label";
  for (std::size_t c = 0; c < rows.cols(); ++c) {
    out << ",f" << c;
  }
  out << '\n';
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    out << shas[r] << ',' << to_int(labels[r]);
    for (float v : rows.row(r)) {
      out << ',' << static_cast<std::uint64_t>(v);
    }
    out << '\n';
  }
}

} // namespace apitrace::featurize
