#pragma once

#include "apitrace/trace_model.hpp"

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

namespace apitrace::ingest {

inline constexpr std::size_t k_unlimited = std::numeric_limits<std::size_t>::max();
inline constexpr std::string_view k_traced_module = "ntdll.dll";

/// Parses one newline-delimited log object. vmi_Parameterlist may be either a
/// JSON array or a string holding a JSON array. Throws parse_error (with the
/// byte offset) on malformed JSON and error_kind::schema when the object lacks
/// a usable vmi_FunctionName.
api_call_record parse_trace_line(std::string_view line);

/// Reads a whole trace file. Lines that fail to parse are counted in
/// skipped_lines. Throws io on unreadable files and empty_trace when no line
/// parses.
trace_sample load_trace_file(const std::filesystem::path& path);

/// Vocabulary file: JSON array of function names.
function_vocabulary load_function_vocabulary(const std::filesystem::path& path);

/// families_path: JSON object family -> [sha, ...].
/// benign_path: JSON array of SHAs or one SHA per line.
label_manifest load_label_manifest(const std::filesystem::path& families_path,
                                   const std::filesystem::path& benign_path);

/// Maps each call through the vocabulary (case-insensitive), dropping calls
/// outside the vocabulary or outside ntdll.dll. Drops are counted, not raised.
call_sequence encode_sequence(const trace_sample& sample, const function_vocabulary& vocab);

struct scan_options {
  /// Stop reading a trace once this many calls have been encoded. Only the
  /// prefix of a trace is ever featurized, so sweeps never need more.
  std::size_t max_calls = k_unlimited;
  unsigned workers = 1;
};

struct labeled_sequence {
  call_sequence sequence;
  binary_label label = binary_label::malware;
  std::size_t parsed_lines = 0;
  std::size_t skipped_lines = 0;
};

/// Streams one trace file straight into a call sequence without keeping the
/// parsed records. Throws io / empty_trace like load_trace_file.
labeled_sequence read_labeled_sequence(const std::filesystem::path& path, binary_label label,
                                       const function_vocabulary& vocab,
                                       std::size_t max_calls = k_unlimited);

/// Pull-based corpus reader. Files are visited in lexicographic SHA order and
/// only one sample is alive at a time; files whose stem is not in the
/// manifest are skipped and counted.
class corpus_stream {
public:
  corpus_stream(const std::filesystem::path& dir, const label_manifest& manifest,
                const function_vocabulary& vocab, scan_options options = {});

  std::optional<labeled_sequence> next();

  /// Random access to the i-th sample in stream order (used for parallel loads).
  [[nodiscard]] labeled_sequence read(std::size_t index) const;

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] std::size_t uncovered_files() const noexcept { return uncovered_; }

private:
  struct entry {
    std::filesystem::path path;
    binary_label label;
  };

  const function_vocabulary* vocab_;
  scan_options options_;
  std::vector<entry> entries_;
  std::size_t cursor_ = 0;
  std::size_t uncovered_ = 0;
};

struct corpus {
  std::vector<labeled_sequence> samples;
  std::size_t uncovered_files = 0;
  std::size_t parsed_lines = 0;
  std::size_t skipped_lines = 0;
};

/// Materializes the encoded corpus (ids only). Files are parsed across
/// options.workers threads; the result order is the stream order regardless.
corpus load_corpus(const std::filesystem::path& dir, const label_manifest& manifest,
                   const function_vocabulary& vocab, scan_options options = {});

} // namespace apitrace::ingest
