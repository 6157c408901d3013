#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace apitrace {

enum class error_kind {
  io,
  parse,
  schema,
  invalid_argument,
  unlabeled_sample,
  duplicate_family_membership,
  contradictory_label,
  empty_trace,
  empty_discovery_corpus,
  degenerate_training_set,
  dimension_mismatch,
  length_mismatch,
  empty_input,
  single_class,
  missing_class,
  model_version,
  model_corrupt,
  fingerprint_mismatch,
};

std::string_view to_string(error_kind kind) noexcept;

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit status without string matching.
class error : public std::runtime_error {
public:
  error(error_kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  [[nodiscard]] error_kind kind() const noexcept { return kind_; }

private:
  error_kind kind_;
};

class parse_error : public error {
public:
  parse_error(std::size_t byte_offset, const std::string& message)
      : error(error_kind::parse, message), byte_offset_(byte_offset) {}

  [[nodiscard]] std::size_t byte_offset() const noexcept { return byte_offset_; }

private:
  std::size_t byte_offset_;
};

} // namespace apitrace
