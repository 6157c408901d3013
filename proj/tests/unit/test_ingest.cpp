#include "apitrace/error.hpp"
#include "apitrace/ingest.hpp"
#include "apitrace/synth.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <functional>
#include <malloc.h>
#include <new>

using namespace apitrace;
using apitrace::testing::temp_dir;
using apitrace::testing::trace_line;
using apitrace::testing::write_file;

// Allocation accounting for the streaming bound test.
namespace {
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
} // namespace

void* operator new(std::size_t n) {
  void* p = std::malloc(n == 0 ? 1 : n);
  if (p == nullptr) {
    throw std::bad_alloc();
  }
  const auto live = g_live.fetch_add(malloc_usable_size(p)) + malloc_usable_size(p);
  auto peak = g_peak.load();
  while (live > peak && !g_peak.compare_exchange_weak(peak, live)) {
  }
  return p;
}

void operator delete(void* p) noexcept {
  if (p == nullptr) {
    return;
  }
  g_live.fetch_sub(malloc_usable_size(p));
  std::free(p);
}

void operator delete(void* p, std::size_t) noexcept { operator delete(p); }

namespace {

error_kind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return error_kind::io;
}

std::string lines(std::initializer_list<std::string> items) {
  std::string out;
  for (const auto& s : items) {
    out += s + "\n";
  }
  return out;
}

std::string fmt_sha(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(64 - s.size(), '0') + s;
}

const function_vocabulary& small_vocab() {
  static const function_vocabulary v({"NtClose", "NtOpenFile", "NtReadFile"});
  return v;
}

} // namespace

TEST_CASE("sample log line parses to the documented fields") {
  for (const auto* line : {&testing::k_sample_string_params, &testing::k_sample_array_params}) {
    const auto r = ingest::parse_trace_line(*line);
    CHECK(r.function_name == "NtQuerySystemInformation");
    CHECK(r.module_name == "ntdll.dll");
    CHECK(r.level == "info");
    CHECK(r.logger_ts == "2023-12-04T09:23:36Z");
    CHECK(r.vmi_ts == "2023-12-04T09:19:09Z");
    CHECK(r.process_dtb == "65aca001");
    CHECK(r.process_teb == "2e6000");
    REQUIRE(r.parameters.size() == 4);
    CHECK(r.parameters[0].name == "SystemInformationClass");
    CHECK(std::get<std::int64_t>(r.parameters[0].value) == 192);
    CHECK(r.parameters[1].name == "SystemInformation");
    CHECK(std::get<std::int64_t>(r.parameters[1].value) == 1373520);
    CHECK(r.parameters[2].name == "SystemInformationLength");
    CHECK(std::get<std::int64_t>(r.parameters[2].value) == 32);
    CHECK(r.parameters[3].name == "ReturnLength");
    CHECK(std::get<std::int64_t>(r.parameters[3].value) == 0);
  }
}

TEST_CASE("malformed lines") {
  CHECK(kind_of([] { ingest::parse_trace_line("{}"); }) == error_kind::schema);
  CHECK(kind_of([] { ingest::parse_trace_line("{not json"); }) == error_kind::parse);
  CHECK(kind_of([] { ingest::parse_trace_line("[1,2]"); }) == error_kind::schema);
  try {
    ingest::parse_trace_line("{\"a\": tru}");
    FAIL("expected a parse error");
  } catch (const parse_error& e) {
    CHECK(e.byte_offset() > 0);
  }
}

TEST_CASE("parameter values keep integers and strings apart, in order") {
  const auto r = ingest::parse_trace_line(
      R"({"vmi_FunctionName":"NtOpenFile","vmi_Parameterlist":[{"Path":"C:\\x"},{"Flags":-3}]})");
  REQUIRE(r.parameters.size() == 2);
  CHECK(std::get<std::string>(r.parameters[0].value) == "C:\\x");
  CHECK(std::get<std::int64_t>(r.parameters[1].value) == -3);
}

TEST_CASE("load_trace_file counts calls and skipped lines") {
  temp_dir dir("ingest");
  SUBCASE("three valid lines") {
    write_file(dir / "abc.json", lines({trace_line("NtClose"), trace_line("NtOpenFile"), trace_line("NtClose")}));
    const auto s = ingest::load_trace_file(dir / "abc.json");
    CHECK(s.sha == "abc");
    CHECK(s.calls.size() == 3);
    CHECK(s.skipped_lines == 0);
    CHECK(s.calls[1].function_name == "NtOpenFile");
  }
  SUBCASE("two valid and one malformed") {
    write_file(dir / "abc.json", lines({trace_line("NtClose"), "{broken", trace_line("NtOpenFile")}));
    const auto s = ingest::load_trace_file(dir / "abc.json");
    CHECK(s.calls.size() == 2);
    CHECK(s.skipped_lines == 1);
    CHECK(s.calls[0].function_name == "NtClose");
    CHECK(s.calls[1].function_name == "NtOpenFile");
  }
  SUBCASE("empty file") {
    write_file(dir / "e.json", "");
    CHECK(kind_of([&] { ingest::load_trace_file(dir / "e.json"); }) == error_kind::empty_trace);
  }
  SUBCASE("missing file") {
    CHECK(kind_of([&] { ingest::load_trace_file(dir / "missing.json"); }) == error_kind::io);
  }
}

TEST_CASE("label manifest loading") {
  temp_dir dir("manifest");
  write_file(dir / "fam.json", R"({"famA": ["s1", "s2"]})");

  SUBCASE("JSON array benign list") {
    write_file(dir / "benign.json", R"(["s3"])");
    const auto m = ingest::load_label_manifest(dir / "fam.json", dir / "benign.json");
    CHECK(m.malware_count() == 2);
    CHECK(m.benign_shas().size() == 1);
  }
  SUBCASE("newline benign list") {
    write_file(dir / "benign.txt", "s3\n  s4 \n\n");
    const auto m = ingest::load_label_manifest(dir / "fam.json", dir / "benign.txt");
    CHECK(m.benign_shas() == std::set<std::string>{"s3", "s4"});
  }
  SUBCASE("duplicate membership") {
    write_file(dir / "dup.json", R"({"famA": ["s1"], "famB": ["s1"]})");
    write_file(dir / "benign.json", "[]");
    CHECK(kind_of([&] { ingest::load_label_manifest(dir / "dup.json", dir / "benign.json"); }) ==
          error_kind::duplicate_family_membership);
  }
  SUBCASE("contradictory label") {
    write_file(dir / "one.json", R"({"famA": ["s1"]})");
    write_file(dir / "benign.json", R"(["s1"])");
    CHECK(kind_of([&] { ingest::load_label_manifest(dir / "one.json", dir / "benign.json"); }) ==
          error_kind::contradictory_label);
  }
}

TEST_CASE("encode_sequence") {
  trace_sample sample;
  sample.sha = "s";
  for (const auto* line : {R"({"vmi_FunctionName":"ntclose","vmi_ModuleName":"ntdll.dll"})",
                           R"({"vmi_FunctionName":"UnknownFn","vmi_ModuleName":"ntdll.dll"})",
                           R"({"vmi_FunctionName":"NtReadFile","vmi_ModuleName":"NTDLL.DLL"})",
                           R"({"vmi_FunctionName":"NtClose","vmi_ModuleName":"kernel32.dll"})"}) {
    sample.calls.push_back(ingest::parse_trace_line(line));
  }
  const auto seq = ingest::encode_sequence(sample, small_vocab());
  CHECK(seq.ids == std::vector<function_id>{0, 2});
  CHECK(seq.dropped == 2);

  CHECK(ingest::encode_sequence(trace_sample{}, small_vocab()).ids.empty());
}

TEST_CASE("corpus scanning") {
  temp_dir dir("scan");
  const label_manifest manifest({{"f", {"c", "a"}}}, {"b"});

  SUBCASE("covered files stream in SHA order") {
    for (const char* sha : {"c", "a", "b"}) {
      write_file(dir / (std::string("t/") + sha + ".json"), lines({trace_line("NtClose")}));
    }
    ingest::corpus_stream stream(dir / "t", manifest, small_vocab());
    std::vector<std::string> order;
    while (auto s = stream.next()) {
      order.push_back(s->sequence.sha);
    }
    CHECK(order == std::vector<std::string>{"a", "b", "c"});
    CHECK(stream.uncovered_files() == 0);
  }
  SUBCASE("uncovered files are counted") {
    write_file(dir / "t/a.json", lines({trace_line("NtClose")}));
    write_file(dir / "t/zzz.json", lines({trace_line("NtClose")}));
    const auto c = ingest::load_corpus(dir / "t", manifest, small_vocab());
    CHECK(c.samples.size() == 1);
    CHECK(c.uncovered_files == 1);
  }
  SUBCASE("empty directory") {
    std::filesystem::create_directories(dir / "t");
    CHECK(ingest::load_corpus(dir / "t", manifest, small_vocab()).samples.empty());
  }
  SUBCASE("missing directory") {
    CHECK(kind_of([&] { ingest::load_corpus(dir / "nope", manifest, small_vocab()); }) == error_kind::io);
  }
  SUBCASE("labels, prefix limit and parallel load agree with the stream") {
    std::string body;
    for (int i = 0; i < 30; ++i) {
      body += trace_line(i % 2 == 0 ? "NtClose" : "NtReadFile") + "\n";
    }
    for (const char* sha : {"a", "b", "c"}) {
      write_file(dir / (std::string("t/") + sha + ".json"), body);
    }
    ingest::scan_options options;
    options.max_calls = 5;
    options.workers = 3;
    const auto c = ingest::load_corpus(dir / "t", manifest, small_vocab(), options);
    REQUIRE(c.samples.size() == 3);
    CHECK(c.samples[0].label == binary_label::malware);
    CHECK(c.samples[1].label == binary_label::benign);
    CHECK(c.samples[2].sequence.ids == std::vector<function_id>{0, 2, 0, 2, 0});
  }
}

TEST_CASE("streaming scan memory does not grow with file count") {
  // Peak bytes allocated while draining the stream, measured above the level
  // reached once the (name-only) file index is built.
  auto streaming_peak = [](std::size_t files) {
    temp_dir dir("stream");
    const auto& names = synth::default_function_names();
    std::map<std::string, std::set<std::string>> fam;
    std::string body;
    for (int l = 0; l < 20; ++l) {
      body += trace_line(names[static_cast<std::size_t>(l) % names.size()]) + "\n";
    }
    for (std::size_t i = 0; i < files; ++i) {
      const auto sha = fmt_sha(i);
      fam["f"].insert(sha);
      write_file(dir / ("t/" + sha + ".json"), body);
    }
    const label_manifest manifest(std::move(fam), {});
    const function_vocabulary vocab(names);
    ingest::corpus_stream stream(dir / "t", manifest, vocab);
    const std::size_t baseline = g_live.load();
    g_peak.store(baseline);
    std::size_t seen = 0;
    while (auto s = stream.next()) {
      seen += s->sequence.ids.size();
    }
    CHECK(seen == files * 20);
    return g_peak.load() - baseline;
  };
  const auto small = streaming_peak(10);
  const auto large = streaming_peak(10000);
  MESSAGE("streaming high-water mark: 10 files " << small << " B, 10000 files " << large << " B");
  CHECK(large <= small + 1024);
}
