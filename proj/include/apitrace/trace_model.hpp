#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace apitrace {

using function_id = std::uint32_t;

struct call_parameter {
  std::string name;
  std::variant<std::int64_t, std::string> value;

  bool operator==(const call_parameter&) const = default;
};

/// One monitored call as written by the tracing logger.
struct api_call_record {
  std::string level;
  std::string function_name;
  std::string module_name;
  std::string logger_ts;
  std::string vmi_ts;
  std::vector<call_parameter> parameters;
  std::string process_dtb;
  std::string process_teb;

  bool operator==(const api_call_record&) const = default;
};

struct trace_sample {
  std::string sha;
  std::vector<api_call_record> calls;
  std::size_t skipped_lines = 0;
};

/// The traced-function alphabet. A name's id is its position in the list the
/// vocabulary was built from; lookups are case-insensitive.
class function_vocabulary {
public:
  function_vocabulary() = default;
  explicit function_vocabulary(std::vector<std::string> names);

  [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
  [[nodiscard]] const std::string& name_of(function_id id) const { return names_.at(id); }
  [[nodiscard]] std::optional<function_id> id_of(std::string_view name) const;

  /// FNV-1a over the newline-joined names; identifies the vocabulary in model files.
  [[nodiscard]] std::uint64_t fingerprint() const noexcept;

private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, function_id> lookup_;
};

struct call_sequence {
  std::string sha;
  std::vector<function_id> ids;
  /// Calls dropped during encoding (out of vocabulary or foreign module).
  std::size_t dropped = 0;
};

enum class binary_label : std::uint8_t { malware = 0, benign = 1 };

constexpr int to_int(binary_label label) noexcept { return static_cast<int>(label); }

class label_manifest {
public:
  label_manifest() = default;
  /// Throws duplicate_family_membership or contradictory_label when the
  /// inputs violate the partition invariants.
  label_manifest(std::map<std::string, std::set<std::string>> families,
                 std::set<std::string> benign_shas);

  [[nodiscard]] const std::map<std::string, std::set<std::string>>& families() const noexcept {
    return families_;
  }
  [[nodiscard]] const std::set<std::string>& benign_shas() const noexcept { return benign_; }

  [[nodiscard]] bool covers(std::string_view sha) const;
  [[nodiscard]] std::size_t malware_count() const noexcept { return family_of_.size(); }
  [[nodiscard]] std::optional<std::string> family_of(std::string_view sha) const;

private:
  std::map<std::string, std::set<std::string>> families_;
  std::set<std::string> benign_;
  std::map<std::string, std::string, std::less<>> family_of_;
};

/// 1 for benign, 0 for malware. Throws unlabeled_sample for unknown SHAs.
binary_label label_of(std::string_view sha, const label_manifest& manifest);

std::string to_lower(std::string_view text);

/// FNV-1a 64-bit.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL) noexcept;

} // namespace apitrace
