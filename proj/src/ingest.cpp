#include "apitrace/ingest.hpp"

#include "apitrace/error.hpp"
#include "apitrace/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace apitrace::ingest {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string text_field(const json& object, const char* key) {
  auto it = object.find(key);
  if (it == object.end() || it->is_null()) {
    return {};
  }
  if (it->is_string()) {
    return it->get<std::string>();
  }
  return it->dump();
}

std::vector<call_parameter> parse_parameters(const json& list) {
  std::vector<call_parameter> params;
  if (!list.is_array()) {
    throw error(error_kind::schema, "vmi_Parameterlist is not an array");
  }
  params.reserve(list.size());
  for (const auto& item : list) {
    if (!item.is_object()) {
      throw error(error_kind::schema, "vmi_Parameterlist entry is not an object");
    }
    for (const auto& [name, value] : item.items()) {
      call_parameter p{name, std::int64_t{0}};
      if (value.is_number_integer() && !(value.is_number_unsigned() &&
                                         value.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))) {
        p.value = value.get<std::int64_t>();
      } else if (value.is_string()) {
        p.value = value.get<std::string>();
      } else {
        p.value = value.dump();
      }
      params.push_back(std::move(p));
    }
  }
  return params;
}

bool is_traced_module(std::string_view module) {
  return module.size() == k_traced_module.size() &&
         std::equal(module.begin(), module.end(), k_traced_module.begin(), [](char a, char b) {
           return std::tolower(static_cast<unsigned char>(a)) == b;
         });
}

std::ifstream open_trace(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw error(error_kind::io, "cannot open " + path.string());
  }
  return in;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw error(error_kind::io, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

json parse_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw parse_error(e.byte, path.string() + ": " + e.what());
  }
}

} // namespace

api_call_record parse_trace_line(std::string_view line) {
  json object;
  try {
    object = json::parse(line);
  } catch (const json::parse_error& e) {
    throw parse_error(e.byte, std::string("malformed trace line at byte ") + std::to_string(e.byte));
  }
  if (!object.is_object()) {
    throw error(error_kind::schema, "trace line is not a JSON object");
  }

  api_call_record record;
  auto fn = object.find("vmi_FunctionName");
  if (fn == object.end() || !fn->is_string() || fn->get_ref<const std::string&>().empty()) {
    throw error(error_kind::schema, "trace line has no vmi_FunctionName");
  }
  record.function_name = fn->get<std::string>();
  record.level = text_field(object, "level");
  record.module_name = text_field(object, "vmi_ModuleName");
  record.logger_ts = text_field(object, "ts");
  record.vmi_ts = text_field(object, "vmi_ts");
  record.process_dtb = text_field(object, "vmi_ProcessDtb");
  record.process_teb = text_field(object, "vmi_ProcessTeb");

  if (auto params = object.find("vmi_Parameterlist"); params != object.end() && !params->is_null()) {
    if (params->is_string()) {
      const auto& embedded = params->get_ref<const std::string&>();
      json inner;
      try {
        inner = json::parse(embedded);
      } catch (const json::parse_error& e) {
        throw error(error_kind::schema, std::string("vmi_Parameterlist string is not JSON: ") + e.what());
      }
      record.parameters = parse_parameters(inner);
    } else {
      record.parameters = parse_parameters(*params);
    }
  }
  return record;
}

trace_sample load_trace_file(const fs::path& path) {
  auto in = open_trace(path);
  trace_sample sample;
  sample.sha = path.stem().string();
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    try {
      sample.calls.push_back(parse_trace_line(line));
    } catch (const error&) {
      ++sample.skipped_lines;
    }
  }
  if (in.bad()) {
    throw error(error_kind::io, "read failure on " + path.string());
  }
  if (sample.calls.empty()) {
    throw error(error_kind::empty_trace, "empty trace " + path.string());
  }
  return sample;
}

function_vocabulary load_function_vocabulary(const fs::path& path) {
  const json doc = parse_json_file(path);
  if (!doc.is_array()) {
    throw error(error_kind::schema, path.string() + ": function vocabulary must be a JSON array");
  }
  std::vector<std::string> names;
  names.reserve(doc.size());
  for (const auto& item : doc) {
    if (!item.is_string()) {
      throw error(error_kind::schema, path.string() + ": function names must be strings");
    }
    names.push_back(item.get<std::string>());
  }
  return function_vocabulary(std::move(names));
}

label_manifest load_label_manifest(const fs::path& families_path, const fs::path& benign_path) {
  const json families_doc = parse_json_file(families_path);
  if (!families_doc.is_object()) {
    throw error(error_kind::schema, families_path.string() + ": expected an object of family -> SHAs");
  }

  std::map<std::string, std::set<std::string>> families;
  for (const auto& [family, shas] : families_doc.items()) {
    if (!shas.is_array()) {
      throw error(error_kind::schema, "family '" + family + "' must map to an array of SHAs");
    }
    auto& members = families[family];
    for (const auto& sha : shas) {
      if (!sha.is_string()) {
        throw error(error_kind::schema, "family '" + family + "' contains a non-string SHA");
      }
      members.insert(sha.get<std::string>());
    }
  }

  std::set<std::string> benign;
  const std::string benign_text = read_file(benign_path);
  const auto first = benign_text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && benign_text[first] == '[') {
    json doc;
    try {
      doc = json::parse(benign_text);
    } catch (const json::parse_error& e) {
      throw parse_error(e.byte, benign_path.string() + ": " + e.what());
    }
    for (const auto& sha : doc) {
      if (!sha.is_string()) {
        throw error(error_kind::schema, benign_path.string() + ": SHAs must be strings");
      }
      benign.insert(sha.get<std::string>());
    }
  } else {
    std::istringstream lines(benign_text);
    std::string line;
    while (std::getline(lines, line)) {
      const auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) {
        continue;
      }
      const auto e = line.find_last_not_of(" \t\r");
      benign.insert(line.substr(b, e - b + 1));
    }
  }

  return label_manifest(std::move(families), std::move(benign));
}

call_sequence encode_sequence(const trace_sample& sample, const function_vocabulary& vocab) {
  call_sequence seq;
  seq.sha = sample.sha;
  seq.ids.reserve(sample.calls.size());
  for (const auto& call : sample.calls) {
    auto id = is_traced_module(call.module_name) ? vocab.id_of(call.function_name) : std::nullopt;
    if (id) {
      seq.ids.push_back(*id);
    } else {
      ++seq.dropped;
    }
  }
  return seq;
}

labeled_sequence read_labeled_sequence(const fs::path& path, binary_label label,
                                       const function_vocabulary& vocab, std::size_t max_calls) {
  auto in = open_trace(path);
  labeled_sequence out;
  out.label = label;
  out.sequence.sha = path.stem().string();
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    api_call_record record;
    try {
      record = parse_trace_line(line);
    } catch (const error&) {
      ++out.skipped_lines;
      continue;
    }
    ++out.parsed_lines;
    auto id = is_traced_module(record.module_name) ? vocab.id_of(record.function_name) : std::nullopt;
    if (id) {
      out.sequence.ids.push_back(*id);
    } else {
      ++out.sequence.dropped;
    }
    if (out.sequence.ids.size() >= max_calls) {
      break;
    }
  }
  if (in.bad()) {
    throw error(error_kind::io, "read failure on " + path.string());
  }
  if (out.parsed_lines == 0) {
    throw error(error_kind::empty_trace, "empty trace " + path.string());
  }
  return out;
}

corpus_stream::corpus_stream(const fs::path& dir, const label_manifest& manifest,
                             const function_vocabulary& vocab, scan_options options)
    : vocab_(&vocab), options_(options) {
  std::error_code ec;
  fs::directory_iterator it(dir, ec);
  if (ec) {
    throw error(error_kind::io, "cannot read corpus directory " + dir.string() + ": " + ec.message());
  }
  for (const auto& file : it) {
    if (!file.is_regular_file() || file.path().extension() != ".json") {
      continue;
    }
    const std::string sha = file.path().stem().string();
    if (!manifest.covers(sha)) {
      ++uncovered_;
      continue;
    }
    entries_.push_back({file.path(), label_of(sha, manifest)});
  }
  std::sort(entries_.begin(), entries_.end(), [](const entry& a, const entry& b) {
    return a.path.stem().string() < b.path.stem().string();
  });
}

std::optional<labeled_sequence> corpus_stream::next() {
  if (cursor_ >= entries_.size()) {
    return std::nullopt;
  }
  return read(cursor_++);
}

labeled_sequence corpus_stream::read(std::size_t index) const {
  const auto& e = entries_.at(index);
  return read_labeled_sequence(e.path, e.label, *vocab_, options_.max_calls);
}

corpus load_corpus(const fs::path& dir, const label_manifest& manifest,
                   const function_vocabulary& vocab, scan_options options) {
  const corpus_stream stream(dir, manifest, vocab, options);
  corpus result;
  result.uncovered_files = stream.uncovered_files();
  result.samples.resize(stream.size());
  parallel_for(result.samples.size(), options.workers,
               [&](std::size_t i) { result.samples[i] = stream.read(i); });
  for (const auto& s : result.samples) {
    result.parsed_lines += s.parsed_lines;
    result.skipped_lines += s.skipped_lines;
  }
  return result;
}

} // namespace apitrace::ingest
