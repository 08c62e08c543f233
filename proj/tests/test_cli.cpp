#include "doctest.h"

#include "asmalign/cli.hpp"
#include "asmalign/error.hpp"
#include "asmalign/jsonl.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace asmalign;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = ASMALIGN_FIXTURE_DIR;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> split(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

// Fresh directory that becomes the working directory until destruction.
struct WorkDir {
  fs::path path;
  fs::path previous;
  explicit WorkDir(const std::string& name) : path(fs::temp_directory_path() / ("asmalign_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
    previous = fs::current_path();
    fs::current_path(path);
  }
  ~WorkDir() {
    fs::current_path(previous);
    fs::remove_all(path);
  }
};

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text_file(e.path());
  }
  return files;
}

// Runs fixtures/pipeline/steps.txt in the current directory against the replay cache.
void run_pipeline() {
  std::ifstream in(kFixtures / "pipeline" / "steps.txt");
  REQUIRE(in);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    replace_all(line, "{fixtures}", kFixtures.string());
    replace_all(line, "{cache}", (kFixtures / "cache").string());
    replace_all(line, "{backend}", "--mode replay");
    const auto r = run(split(line));
    INFO(line);
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
  }
}

void verbatim_run(const std::string& label, const std::string& out) {
  const auto r = run({"eval-bcsd", "--corpus", "corpus.jsonl", "--describe", "verbatim", "--sizes", "4,8", "--label",
                      label, "--out", out});
  INFO(r.err);
  REQUIRE(r.code == kExitOk);
}

void toy_corpus() {
  const auto r = run({"ingest", "--toy", "12", "--min-len", "1", "--out", "corpus.jsonl"});
  REQUIRE(r.code == kExitOk);
}

}  // namespace

TEST_CASE("help exits 0 with usage text") {
  auto r = run({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("Usage") != std::string::npos);
  for (const char* sub : {"ingest", "gen", "train", "ask", "eval-bcsd", "eval-bench", "report", "cost"}) {
    CHECK(r.out.find(sub) != std::string::npos);
    const auto s = run({sub, "--help"});
    CHECK(s.code == kExitOk);
    CHECK(s.out.find("--manifest") != std::string::npos);
  }
  CHECK(run({"--version"}).out == std::string(kVersion) + "\n");
}

TEST_CASE("usage errors exit 2") {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"frobnicate"}, {"ingest", "--bogus"}, {"eval-bcsd", "--corpus"}, {"ingest", "--format", "intel",
                                                                                   "--out", "x"}}) {
    const auto r = run(args);
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("Usage") != std::string::npos);
  }
}

TEST_CASE("stage failure exits 1 and still writes a manifest") {
  WorkDir dir("failure");
  write_text_file("empty.lst", "");
  const auto r = run({"ingest", "--in", "empty.lst", "--out", "corpus.jsonl"});
  CHECK(r.code == kExitStageFailure);
  CHECK(r.err.find("nothing to ingest") != std::string::npos);
  const auto m = load_manifest("corpus.jsonl.manifest.json");
  CHECK(m["status"] == "failed");
  CHECK(m["exit_code"] == 1);
  CHECK(m["error"].get<std::string>().find("nothing to ingest") != std::string::npos);
  CHECK(m["inputs"].contains("empty.lst"));
  CHECK(m["outputs"].empty());
  CHECK(!fs::exists("corpus.jsonl"));

  // Record mode without an endpoint is a stage failure, not a silent fallback.
  toy_corpus();
  const auto g = run({"gen", "--corpus", "corpus.jsonl", "--out", "a.jsonl,b.jsonl", "--mode", "record",
                      "--manifest", "gen.manifest.json"});
  CHECK(g.code == kExitStageFailure);
  CHECK(load_manifest("gen.manifest.json")["status"] == "failed");
}

TEST_CASE("replay with an empty cache fails without network access") {
  WorkDir dir("empty_cache");
  toy_corpus();
  const auto r = run({"eval-bcsd", "--corpus", "corpus.jsonl", "--describe", "chat", "--sizes", "4", "--cache",
                      "nothing", "--backend-url", "http://127.0.0.1:9", "--out", "r.json"});
  // Every description fails, so no pool survives.
  CHECK(r.code == kExitStageFailure);
  CHECK(load_manifest("r.json.manifest.json")["status"] == "failed");
}

TEST_CASE("manifests are deterministic and hash their config") {
  WorkDir dir("manifest");
  toy_corpus();
  const auto first = read_text_file("corpus.jsonl.manifest.json");
  toy_corpus();
  CHECK(read_text_file("corpus.jsonl.manifest.json") == first);

  const auto m = load_manifest("corpus.jsonl.manifest.json");
  CHECK(m["command"] == "ingest");
  CHECK(m["config"].get<std::string>().find("toy=12") != std::string::npos);
  CHECK(m["outputs"]["corpus.jsonl"].get<std::string>().size() == 64);
  CHECK(m["results"]["functions"] == 24);
  CHECK(m["versions"]["asmalign"] == std::string(kVersion));

  REQUIRE(run({"ingest", "--toy", "12", "--min-len", "1", "--seed", "3", "--out", "corpus.jsonl"}).code == 0);
  CHECK(load_manifest("corpus.jsonl.manifest.json")["config_sha256"] != m["config_sha256"]);
}

TEST_CASE("corrupt manifest errors name the missing field") {
  WorkDir dir("corrupt");
  toy_corpus();
  verbatim_run("a", "a.json");
  auto m = load_manifest("a.json.manifest.json");
  m.erase("status");
  write_text_file("bad.json", m.dump());
  CHECK_THROWS_WITH_AS(load_manifest("bad.json"), doctest::Contains("'status'"), SchemaError);

  const auto r = run({"report", "--from", "bad.json", "--out", "report.md"});
  CHECK(r.code == kExitStageFailure);
  CHECK(r.err.find("'status'") != std::string::npos);

  auto m2 = load_manifest("a.json.manifest.json");
  m2["results"].erase("report");
  write_text_file("noreport.json", m2.dump());
  const auto r2 = run({"report", "--from", "noreport.json", "--out", "report.md"});
  CHECK(r2.code == kExitStageFailure);
  CHECK(r2.err.find("results.report") != std::string::npos);

  write_text_file("garbage.json", "{not json");
  CHECK_THROWS_AS(load_manifest("garbage.json"), ParseError);
  write_text_file("v2.json", R"({"schema":"manifest/v2"})");
  CHECK_THROWS_AS(load_manifest("v2.json"), SchemaError);
}

TEST_CASE("report: one run gives one row, two runs two labeled rows") {
  WorkDir dir("report");
  toy_corpus();
  verbatim_run("first", "a.json");

  auto r = run({"report", "--from", "a.json.manifest.json", "--out", "one.md"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("| first |") != std::string::npos);
  CHECK(r.out.find("MRR(Pool size 8)") != std::string::npos);
  CHECK(r.out.find("| Models | 4 | 8 |") != std::string::npos);

  verbatim_run("second", "b.json");
  r = run({"report", "--from", "a.json.manifest.json", "--from", "b.json.manifest.json", "--out", "two.md", "--json",
           "two.json"});
  REQUIRE(r.code == kExitOk);
  const auto first = r.out.find("| first |");
  const auto second = r.out.find("| second |");
  CHECK(first != std::string::npos);
  CHECK(second != std::string::npos);
  CHECK(first < second);
  const auto j = ordered_json::parse(read_text_file("two.json"));
  CHECK(j["schema"] == "summary/v1");
  CHECK(j["bcsd"].size() == 2);

  // Rendering is a pure function of the inputs.
  CHECK(run({"report", "--from", "a.json.manifest.json", "--from", "b.json.manifest.json", "--out",
                          "two_again.md"}).code == kExitOk);
  CHECK(read_text_file("two.md") == read_text_file("two_again.md"));

  CHECK(run({"report", "--out", "empty.md"}).code == kExitStageFailure);
}

TEST_CASE("report renders the reference tables as given") {
  WorkDir dir("reference");
  const auto r = run({"report", "--reference-mrr", (kFixtures / "reference" / "mrr_pool500.json").string(),
                      "--reference-bench", (kFixtures / "reference" / "bench_scores.json").string(), "--out", "r.md"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("MRR(Pool size 500)") != std::string::npos);
  CHECK(r.out.find("| Aligned-13B | 0.208 | 0.258 | 0.242 | 0.261 | 0.158 | 0.200 | 0.202 | 0.218 |") !=
        std::string::npos);
  CHECK(r.out.find("| Models | Conversation | Detail description | Complex reasoning | All |") != std::string::npos);
  CHECK(r.out.find("| Aligned-13B | 90.10 | 85.15 | 86.12 | 87.12 |") != std::string::npos);
}

TEST_CASE("cost merges ledgers") {
  WorkDir dir("cost");
  const auto ledger = (kFixtures / "reference" / "cost_ledger.json").string();
  const auto r = run({"cost", "--ledger", ledger, "--out", "cost.json"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("13.0%") != std::string::npos);
  CHECK(r.out.find("33.0%") != std::string::npos);
  const auto j = ordered_json::parse(read_text_file("cost.json"));
  CHECK(j["total_usd"].get<double>() == doctest::Approx(1035.0));

  const auto twice = run({"cost", "--ledger", ledger, "--ledger", ledger});
  REQUIRE(twice.code == kExitOk);
  CHECK(twice.out.find("2070.0000") != std::string::npos);
}

TEST_CASE("train and ask on replayed datasets") {
  WorkDir dir("ask");
  const auto cache = (kFixtures / "cache").string();
  REQUIRE(run({"ingest", "--in", (kFixtures / "pipeline" / "toy.lst").string(), "--min-len", "1", "--out",
               "corpus.jsonl"}).code == kExitOk);
  REQUIRE(run({"gen", "--corpus", "corpus.jsonl", "--out", "d1.jsonl,d2.jsonl", "--cache", cache}).code == kExitOk);

  const auto refused = run({"train", "--corpus", "corpus.jsonl", "--out", "m.ckpt"});
  CHECK(refused.code == kExitStageFailure);
  CHECK(refused.err.find("stage 1 needs") != std::string::npos);
  CHECK(run({"train", "--corpus", "corpus.jsonl", "--data", "d2.jsonl", "--drop-task", "simp", "--out", "m.ckpt"})
            .code == kExitStageFailure);

  const std::vector<std::string> small{"--base-steps", "5", "--steps1", "3", "--steps2", "3"};
  auto args = std::vector<std::string>{"train", "--corpus", "corpus.jsonl", "--data", "d1.jsonl", "--data",
                                       "d2.jsonl", "--drop-task", "reason", "--out", "m.ckpt"};
  args.insert(args.end(), small.begin(), small.end());
  REQUIRE(run(args).code == kExitOk);
  const auto m = load_manifest("m.ckpt.manifest.json");
  CHECK(m["results"]["stage1"]["steps"] == 3);
  CHECK(m["results"]["stage2"]["steps"] == 3);

  // Stage 2 alone, continuing from the checkpoint.
  REQUIRE(run({"train", "--corpus", "corpus.jsonl", "--data", "d2.jsonl", "--stage", "2", "--steps", "2", "--init",
               "m.ckpt", "--out", "m2.ckpt"}).code == kExitOk);
  CHECK(load_manifest("m2.ckpt.manifest.json")["results"]["stage2"]["steps"] == 2);
  CHECK(!load_manifest("m2.ckpt.manifest.json")["results"].contains("stage1"));

  const auto a = run({"ask", "--model", "m.ckpt", "--corpus", "corpus.jsonl", "--fn", "toy/sub_00/O0", "--q",
                      "describe", "--q", "Which helper does this function call?"});
  REQUIRE(a.code == kExitOk);
  CHECK(a.out.find("Q: describe\nA: ") != std::string::npos);
  CHECK(load_manifest("ask.manifest.json")["results"]["answers"].size() == 2);

  CHECK(run({"ask", "--model", "m.ckpt", "--fn", "toy/sub_00/O0", "--q", "x"}).code == kExitStageFailure);
}

TEST_CASE("full replay pipeline is byte-identical across runs") {
  std::map<std::string, std::string> first;
  {
    WorkDir dir("pipeline_a");
    run_pipeline();
    first = snapshot(dir.path);
  }
  std::map<std::string, std::string> second;
  {
    WorkDir dir("pipeline_b");
    run_pipeline();
    second = snapshot(dir.path);
  }
  REQUIRE(first.size() == second.size());
  for (const auto& [name, text] : first) {
    INFO(name);
    REQUIRE(second.count(name) == 1);
    CHECK(second.at(name) == text);
  }
  for (const char* f : {"corpus.jsonl", "d1.jsonl", "d2.jsonl", "model.ckpt", "answers.jsonl", "bcsd_chat.json",
                        "bcsd_model.json", "bench.json", "bench.verdicts.jsonl", "report.md", "report.json",
                        "cost.json"}) {
    CHECK(first.count(f) == 1);
  }
  const auto bench = ordered_json::parse(first.at("bench.json.manifest.json"));
  CHECK(bench["results"]["cache"]["misses"] == 0);
  CHECK(bench["results"]["quarantined"] == 0);
  CHECK(first.at("report.md").find("| toy-model |") != std::string::npos);
  CHECK(first.at("report.md").find("| gpt-4-turbo |") != std::string::npos);
}
