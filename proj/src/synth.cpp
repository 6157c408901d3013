#include "apitrace/synth.hpp"

#include "apitrace/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace apitrace::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Share of a class-specific row that goes to the class's exclusive block.
constexpr double k_exclusive_share = 0.3;

constexpr std::uint64_t k_profile_stream = 0x70726f66696c65ULL;
constexpr std::uint64_t k_sample_stream = 3;
constexpr std::uint64_t k_sha_stream = 4;
constexpr std::uint64_t k_filler_stream = 5;

struct blocks {
  std::size_t common_end;    // [0, common_end)
  std::size_t malware_end;   // [common_end, malware_end)
  std::size_t benign_end;    // [malware_end, benign_end)
};

blocks partition(std::size_t n) {
  const std::size_t exclusive = n >= 20 ? 5 : std::max<std::size_t>(1, n / 6);
  return {n - 2 * exclusive, n - exclusive, n};
}

// Peaky random weights: fourth powers of exponentials give a few dominant entries.
void fill_weights(random_stream& rng, std::vector<double>& row, std::size_t begin, std::size_t end, double mass) {
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double e = -std::log(1.0 - rng.uniform01());
    row[i] = e * e * e * e;
    sum += row[i];
  }
  for (std::size_t i = begin; i < end; ++i) {
    row[i] = row[i] / sum * mass;
  }
}

std::vector<double> shared_row(random_stream& rng, const blocks& b) {
  std::vector<double> row(b.benign_end, 0.0);
  fill_weights(rng, row, 0, b.common_end, 1.0);
  return row;
}

std::vector<double> specific_row(random_stream& rng, const blocks& b, binary_label cls) {
  std::vector<double> row(b.benign_end, 0.0);
  fill_weights(rng, row, 0, b.common_end, 1.0 - k_exclusive_share);
  if (cls == binary_label::malware) {
    fill_weights(rng, row, b.common_end, b.malware_end, k_exclusive_share);
  } else {
    fill_weights(rng, row, b.malware_end, b.benign_end, k_exclusive_share);
  }
  return row;
}

std::vector<double> blend(const std::vector<double>& shared, const std::vector<double>& specific, double s) {
  std::vector<double> out(shared.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (1.0 - s) * shared[i] + s * specific[i];
  }
  return out;
}

function_id draw(const std::vector<double>& row, random_stream& rng) {
  double u = rng.uniform01();
  for (std::size_t i = 0; i < row.size(); ++i) {
    u -= row[i];
    if (u < 0.0) {
      return static_cast<function_id>(i);
    }
  }
  // Rounding left a sliver of mass; fall back to the last non-zero entry.
  for (std::size_t i = row.size(); i > 0; --i) {
    if (row[i - 1] > 0.0) {
      return static_cast<function_id>(i - 1);
    }
  }
  return 0;
}

std::string timestamp(std::uint64_t seconds_after_base) {
  // Base 2023-12-04T09:00:00Z; traces stay well inside one day.
  const std::uint64_t t = 9 * 3600 + seconds_after_base;
  return fmt::format("2023-12-{:02}T{:02}:{:02}:{:02}Z", 4 + t / 86400, (t / 3600) % 24, (t / 60) % 60, t % 60);
}

constexpr const char* k_parameter_names[] = {"Handle", "Buffer", "Length", "Flags", "ReturnLength", "Options"};

void append_line(std::string& buffer, const std::string& function, std::uint64_t filler, std::size_t line,
                 const std::string& dtb, const std::string& teb) {
  const std::uint64_t vmi_seconds = line / 40;
  fmt::format_to(std::back_inserter(buffer),
                 R"({{"level":"info","ts":"{}","msg":"Monitored function called","vmi_ts":"{}",)"
                 R"("vmi_logger":"ApiTracing_FunctionHook","vmi_Parameterlist":[)",
                 timestamp(vmi_seconds + 267), timestamp(vmi_seconds));
  const std::size_t n_params = 1 + filler % 4;
  for (std::size_t p = 0; p < n_params; ++p) {
    const std::uint64_t v = splitmix64(filler + p);
    fmt::format_to(std::back_inserter(buffer), R"({}{{"{}":{}}})", p == 0 ? "" : ",",
                   k_parameter_names[(filler >> 8 >> p) % std::size(k_parameter_names)], v % 2000000);
  }
  fmt::format_to(std::back_inserter(buffer),
                 R"(],"vmi_FunctionName":"{}","vmi_ModuleName":"ntdll.dll","vmi_ProcessDtb":"{}",)"
                 R"("vmi_ProcessTeb":"{}"}})"
                 "\n",
                 function, dtb, teb);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw error(error_kind::io, "cannot write " + path.string());
  }
}

json profile_to_json(const class_profile& p) { return {{"initial", p.initial}, {"transition", p.transition}}; }

class_profile profile_from_json(const json& j) {
  return {j.at("initial").get<std::vector<double>>(), j.at("transition").get<std::vector<std::vector<double>>>()};
}

} // namespace

const std::vector<std::string>& default_function_names() {
  static const std::vector<std::string> names = {
      "NtClose",                   "NtProtectVirtualMemory",    "NtOpenKeyEx",
      "NtQueryValueKey",           "LdrGetDllHandle",           "NtQuerySystemInformation",
      "NtCreateFile",              "NtOpenFile",                "NtReadFile",
      "NtWriteFile",               "NtDeleteFile",              "NtQueryInformationFile",
      "NtSetInformationFile",      "NtQueryDirectoryFile",      "NtQueryAttributesFile",
      "NtCreateKey",               "NtOpenKey",                 "NtSetValueKey",
      "NtDeleteKey",               "NtDeleteValueKey",          "NtEnumerateKey",
      "NtEnumerateValueKey",       "NtQueryKey",                "NtAllocateVirtualMemory",
      "NtFreeVirtualMemory",       "NtReadVirtualMemory",       "NtWriteVirtualMemory",
      "NtQueryVirtualMemory",      "NtMapViewOfSection",        "NtUnmapViewOfSection",
      "NtCreateSection",           "NtOpenSection",             "NtCreateProcessEx",
      "NtCreateUserProcess",       "NtOpenProcess",             "NtTerminateProcess",
      "NtQueryInformationProcess", "NtSetInformationProcess",   "NtCreateThreadEx",
      "NtOpenThread",              "NtResumeThread",            "NtSuspendThread",
      "NtGetContextThread",        "NtSetContextThread",        "NtQueueApcThread",
      "NtSetInformationThread",    "NtCreateMutant",            "NtOpenMutant",
      "NtCreateEvent",             "NtCreateSemaphore",         "NtDelayExecution",
      "NtDeviceIoControlFile",     "NtLoadDriver",              "NtDuplicateObject",
      "NtQueryObject",             "LdrLoadDll",                "LdrGetProcedureAddress",
      "LdrGetProcedureAddressForCaller", "RtlCreateUserThread",
  };
  return names;
}

void synth_spec::validate() const {
  if (n_malware == 0 || n_benign == 0) {
    throw error(error_kind::invalid_argument, "synthetic corpus needs at least one sample per class");
  }
  for (const auto* r : {&malware_length, &benign_length}) {
    if (r->min == 0 || r->min > r->max) {
      throw error(error_kind::invalid_argument, "length range must satisfy 1 <= min <= max");
    }
  }
  if (!(separation >= 0.0 && separation <= 1.0)) {
    throw error(error_kind::invalid_argument, "separation must lie in [0, 1]");
  }
  if (n_families == 0) {
    throw error(error_kind::invalid_argument, "need at least one malware family");
  }
  if (functions.size() < 3) {
    throw error(error_kind::invalid_argument, "need at least three functions");
  }
  (void)function_vocabulary(functions); // uniqueness
}

planted_profiles make_profiles(const synth_spec& spec) {
  spec.validate();
  const blocks b = partition(spec.functions.size());
  random_stream rng(mix_seed(spec.seed, k_profile_stream));

  planted_profiles out;
  out.functions = spec.functions;
  out.separation = spec.separation;
  out.seed = spec.seed;

  const std::size_t n = spec.functions.size();
  // Row n is the initial distribution, rows [0, n) the transitions.
  for (std::size_t row = 0; row <= n; ++row) {
    const auto shared = shared_row(rng, b);
    const auto malware = blend(shared, specific_row(rng, b, binary_label::malware), spec.separation);
    const auto benign = blend(shared, specific_row(rng, b, binary_label::benign), spec.separation);
    if (row == n) {
      out.malware.initial = malware;
      out.benign.initial = benign;
    } else {
      out.malware.transition.push_back(malware);
      out.benign.transition.push_back(benign);
    }
  }
  return out;
}

std::vector<function_id> sample_sequence(const class_profile& profile, std::size_t length, random_stream& rng) {
  std::vector<function_id> ids;
  ids.reserve(length);
  if (length == 0) {
    return ids;
  }
  ids.push_back(draw(profile.initial, rng));
  while (ids.size() < length) {
    ids.push_back(draw(profile.transition[ids.back()], rng));
  }
  return ids;
}

std::string sample_sha(std::uint64_t seed, std::size_t index) {
  std::string sha;
  for (std::uint64_t part = 0; part < 4; ++part) {
    sha += fmt::format("{:016x}", mix_seed(seed, {k_sha_stream, index, part}));
  }
  return sha;
}

generated_corpus generate_corpus(const synth_spec& spec, const fs::path& out_dir) {
  const auto profiles = make_profiles(spec);

  generated_corpus out;
  out.traces_dir = out_dir / "traces";
  out.families_path = out_dir / "shas_by_families.json";
  out.benign_path = out_dir / "benign_shas.json";
  out.functions_path = out_dir / "functions.json";
  out.profiles_path = out_dir / "profiles.json";
  std::error_code ec;
  fs::create_directories(out.traces_dir, ec);
  if (ec) {
    throw error(error_kind::io, "cannot create " + out.traces_dir.string() + ": " + ec.message());
  }

  std::map<std::string, std::vector<std::string>> families;
  std::string buffer;
  const std::size_t total = spec.n_malware + spec.n_benign;
  for (std::size_t index = 0; index < total; ++index) {
    const bool benign = index >= spec.n_malware;
    const auto& range = benign ? spec.benign_length : spec.malware_length;
    random_stream rng(mix_seed(spec.seed, {k_sample_stream, index}));
    const std::size_t length = range.min + static_cast<std::size_t>(rng.uniform_index(range.max - range.min + 1));
    const auto ids = sample_sequence(profiles.of(benign ? binary_label::benign : binary_label::malware), length, rng);

    const std::string sha = sample_sha(spec.seed, index);
    const std::uint64_t process = mix_seed(spec.seed, {k_filler_stream, index});
    const std::string dtb = fmt::format("{:x}", (process & 0xfffff000ULL) | 0x001);
    const std::string teb = fmt::format("{:x}", ((process >> 32) & 0xfff) << 12);

    buffer.clear();
    for (std::size_t line = 0; line < ids.size(); ++line) {
      append_line(buffer, spec.functions[ids[line]], mix_seed(process, line), line, dtb, teb);
    }
    write_text(out.traces_dir / (sha + ".json"), buffer);

    if (benign) {
      out.benign_shas.push_back(sha);
    } else {
      out.malware_shas.push_back(sha);
      families[fmt::format("synthfam{:02}", index % spec.n_families)].push_back(sha);
    }
  }

  write_text(out.families_path, json(families).dump(2) + "\n");
  write_text(out.benign_path, json(out.benign_shas).dump(2) + "\n");
  write_text(out.functions_path, json(spec.functions).dump(2) + "\n");
  write_text(out.profiles_path, profiles_to_json(profiles) + "\n");
  return out;
}

std::string profiles_to_json(const planted_profiles& profiles) {
  json doc;
  doc["functions"] = profiles.functions;
  doc["separation"] = profiles.separation;
  doc["seed"] = profiles.seed;
  doc["classes"] = {{"malware", profile_to_json(profiles.malware)}, {"benign", profile_to_json(profiles.benign)}};
  return doc.dump();
}

planted_profiles load_profiles(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw error(error_kind::io, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    const auto doc = json::parse(buffer.str());
    planted_profiles p;
    p.functions = doc.at("functions").get<std::vector<std::string>>();
    p.separation = doc.at("separation").get<double>();
    p.seed = doc.at("seed").get<std::uint64_t>();
    p.malware = profile_from_json(doc.at("classes").at("malware"));
    p.benign = profile_from_json(doc.at("classes").at("benign"));
    return p;
  } catch (const json::exception& e) {
    throw error(error_kind::schema, path.string() + ": " + e.what());
  }
}

} // namespace apitrace::synth
