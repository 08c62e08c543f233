#include "doctest.h"

#include "asmalign/bench.hpp"
#include "asmalign/error.hpp"
#include "asmalign/rng.hpp"
#include "asmalign/rule_backend.hpp"
#include "mock_backends.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <filesystem>

using namespace asmalign;
using namespace asmalign::testing;
namespace fs = std::filesystem;

namespace {

JudgeVerdict verdict_of(std::array<double, kJudgeDims> dims) {
  JudgeVerdict v;
  v.item_id = "x";
  v.dims = dims;
  return v;
}

JudgeVerdict random_verdict(Rng& rng) {
  // Averages of three integer trials, like judge() produces.
  std::array<double, kJudgeDims> dims{};
  for (auto& d : dims) {
    int s = 0;
    for (int t = 0; t < 3; ++t) s += 1 + static_cast<int>(rng.uniform_index(10));
    d = s / 3.0;
  }
  return verdict_of(dims);
}

BenchItem item(std::string id, std::string fn, BenchCategory cat, std::string description = "calls parse buf") {
  return {std::move(id), std::move(fn), cat, {"What does it do?"}, std::move(description), {"push rbp", "call parse_buf"}};
}

BenchPack standard_pack(std::size_t snippets, std::size_t per_snippet) {
  BenchPack pack;
  pack.name = "bench";
  for (std::size_t s = 0; s < snippets; ++s) {
    for (std::size_t q = 0; q < per_snippet; ++q) {
      pack.items.push_back(item(fmt::format("s{:02}-q{}", s, q), fmt::format("fn{:02}", s), kBenchCategories[q % 3],
                                fmt::format("calls helper {}", s)));
    }
  }
  return pack;
}

}  // namespace

TEST_CASE("bench categories match the table columns") {
  CHECK(category_label(BenchCategory::conversation) == "Conversation");
  CHECK(category_label(BenchCategory::detail_description) == "Detail description");
  CHECK(category_label(BenchCategory::complex_reasoning) == "Complex reasoning");
  for (auto c : kBenchCategories) {
    CHECK(parse_bench_category(to_string(c)) == c);
    CHECK(parse_bench_category(category_label(c)) == c);
  }
  CHECK_THROWS_AS(parse_bench_category("vibes"), ValidationError);
}

TEST_CASE("relative_score of a verdict with itself is exactly 100") {
  Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    const auto v = random_verdict(rng);
    CHECK(relative_score(v, v) == 100.0);
  }
}

TEST_CASE("relative_score arithmetic") {
  CHECK(relative_score(verdict_of({8, 8, 8, 8, 8}), verdict_of({10, 10, 10, 10, 10})) == doctest::Approx(80.0));
  CHECK(relative_score(verdict_of({2, 2, 2, 2, 2}), verdict_of({1, 1, 1, 1, 1})) == doctest::Approx(200.0));
  CHECK(relative_score(verdict_of({6, 7, 8, 9, 10}), verdict_of({10, 10, 10, 10, 10})) == doctest::Approx(80.0));
  CHECK_THROWS_AS(relative_score(verdict_of({1, 1, 1, 1, 1}), verdict_of({0, 0, 0, 0, 0})), ValidationError);

  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto ref = random_verdict(rng);
    auto cand = random_verdict(rng);
    const double k = 0.5 + rng.uniform01();
    auto scaled = cand;
    for (auto& d : scaled.dims) d *= k;
    CHECK(relative_score(scaled, ref) == doctest::Approx(k * relative_score(cand, ref)).epsilon(1e-12));
  }
}

TEST_CASE("verdict line parsing") {
  auto [r, c] = parse_verdict_line("10 10 10 10 10 / 10 10 10 10 10");
  CHECK(r == std::array<int, kJudgeDims>{10, 10, 10, 10, 10});
  CHECK(c == r);
  std::tie(r, c) = parse_verdict_line("Scores follow.\n8, 7, 9, 6, 7 / 1 2 3 4 5\nBecause...");
  CHECK(r == std::array<int, kJudgeDims>{8, 7, 9, 6, 7});
  CHECK(c == std::array<int, kJudgeDims>{1, 2, 3, 4, 5});
  CHECK_THROWS_AS(parse_verdict_line("no scores here"), ParseError);
  CHECK_THROWS_AS(parse_verdict_line("1 2 3 4 / 1 2 3 4 5"), ParseError);
  CHECK_THROWS_AS(parse_verdict_line("1 2 3 4 11 / 1 2 3 4 5"), ParseError);
  CHECK_THROWS_AS(parse_verdict_line("0 2 3 4 5 / 1 2 3 4 5"), ParseError);
  CHECK_THROWS_AS(parse_verdict_line("a b c d e / 1 2 3 4 5"), ParseError);
  CHECK_THROWS_AS(parse_verdict_line("1 2 3 4 5 6 / 1 2 3 4 5"), ParseError);
}

TEST_CASE("judge averages independent trials") {
  const auto it = item("i1", "fn", BenchCategory::detail_description);
  FixedBackend tens("10 10 10 10 10 / 10 10 10 10 10\nBoth are fine.");
  const auto v = judge(tens, it, "candidate", "reference");
  CHECK(tens.calls == 3);
  for (std::size_t d = 0; d < kJudgeDims; ++d) {
    CHECK(v.reference.dims[d] == 10.0);
    CHECK(v.candidate.dims[d] == 10.0);
  }
  CHECK(v.reference.rationale == "Both are fine.");
  CHECK(relative_score(v.candidate, v.reference) == 100.0);

  // Trial t answers with candidate scores t+1 (variants 0, 3, 6 with the default parse budget).
  FunctionBackend by_trial([](const std::vector<ChatTurn>&, int variant) {
    const int s = variant / 3 + 1;
    return fmt::format("9 9 9 9 9 / {0} {0} {0} {0} {0}", s);
  });
  const auto avg = judge(by_trial, it, "candidate", "reference");
  CHECK(avg.candidate.dims[0] == doctest::Approx(2.0));

  const auto prompt = judge_prompt(it, "REF", "CAND");
  CHECK(prompt.back().content.find("REF") < prompt.back().content.find("CAND"));
  for (auto name : kJudgeDimNames) CHECK(prompt.back().content.find(name) != std::string::npos);
}

TEST_CASE("judge retries unparseable verdicts, then gives up") {
  const auto it = item("i1", "fn", BenchCategory::conversation);
  FunctionBackend flaky([](const std::vector<ChatTurn>&, int variant) -> std::string {
    return variant % 3 == 0 ? "I liked both" : "5 5 5 5 5 / 4 4 4 4 4";
  });
  const auto v = judge(flaky, it, "c", "r");
  CHECK(v.candidate.dims[0] == 4.0);

  FixedBackend garbage("ten out of ten");
  CHECK_THROWS_AS(judge(garbage, it, "c", "r"), ParseError);
  CHECK(garbage.calls == 3);  // the first trial exhausts its parse budget
  CHECK_THROWS_AS(judge(garbage, it, "", "r"), ValidationError);
}

TEST_CASE("build_reference uses the description, not the code") {
  const auto it = item("i1", "fn", BenchCategory::complex_reasoning, "saves registers and calls parse_buf");
  FixedBackend echo("  the reference answer \n");
  CHECK(build_reference(echo, it) == "the reference answer");
  const auto& sent = echo.last_request.back().content;
  CHECK(sent.find("saves registers and calls parse_buf") != std::string::npos);
  CHECK(sent.find("push rbp") == std::string::npos);
  CHECK(sent.find("What does it do?") != std::string::npos);
  auto missing = it;
  missing.ground_truth_description = " ";
  CHECK_THROWS_AS(build_reference(echo, missing), ValidationError);
}

TEST_CASE("aggregate takes item-weighted means") {
  auto r = aggregate({{"a", BenchCategory::conversation, 90.0}});
  CHECK(r.categories.at(BenchCategory::conversation).score == 90.0);
  CHECK(r.all.score == 90.0);
  r = aggregate({{"a", BenchCategory::conversation, 80.0}, {"b", BenchCategory::complex_reasoning, 100.0}});
  CHECK(r.all.score == doctest::Approx(90.0));
  r = aggregate({{"a", BenchCategory::conversation, 80.0},
                 {"b", BenchCategory::conversation, 80.0},
                 {"c", BenchCategory::complex_reasoning, 110.0}});
  CHECK(r.all.score == doctest::Approx(90.0));
  CHECK(r.all.items == 3);
  CHECK_THROWS_AS(aggregate({}), ValidationError);

  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    std::vector<ScoredItem> items;
    const std::size_t n = 1 + rng.uniform_index(30);
    for (std::size_t i = 0; i < n; ++i) {
      items.push_back({"i" + std::to_string(i), kBenchCategories[rng.uniform_index(3)], 150.0 * rng.uniform01()});
    }
    const auto rep = aggregate(items);
    double lo = 1e300, hi = -1e300;
    for (const auto& [c, s] : rep.categories) {
      lo = std::min(lo, s.score);
      hi = std::max(hi, s.score);
    }
    CHECK(rep.all.score >= lo - 1e-9);
    CHECK(rep.all.score <= hi + 1e-9);
    CHECK(rep.all.score >= 0.0);
  }
}

TEST_CASE("bench packs round-trip and warn on unusual snippet sizes") {
  const auto pack = standard_pack(30, 3);
  CHECK(pack.items.size() == 90);
  const auto text = render_bench_pack(pack);
  const auto back = parse_bench_pack(text);
  CHECK(back == pack);
  CHECK(render_bench_pack(back) == text);
  CHECK(pack_warnings(back).empty());

  const auto short_pack = parse_bench_pack(render_bench_pack(standard_pack(4, 2)));
  CHECK(short_pack.items.size() == 8);
  CHECK(pack_warnings(short_pack).size() == 4);

  CHECK_THROWS_AS(parse_bench_pack("{\"schema\":\"bench-pack/v2\"}\n"), SchemaError);
  CHECK_THROWS_AS(parse_bench_pack("{\"schema\":\"bench-pack/v1\"}\n{\"id\":\"a\"}\n"), SchemaError);
  auto dup = pack;
  dup.items[1].id = dup.items[0].id;
  CHECK_THROWS_AS(parse_bench_pack(render_bench_pack(dup)), IntegrityError);

  const AnswerSet answers{{"a", "one"}, {"b", "two"}};
  CHECK(parse_answers(render_answers(answers, "m")) == answers);
}

TEST_CASE("bench report JSON and table") {
  const auto r = aggregate({{"a", BenchCategory::conversation, 80.0},
                            {"b", BenchCategory::detail_description, 90.0},
                            {"c", BenchCategory::complex_reasoning, 100.0}},
                           "toy model");
  const auto j = bench_report_to_json(r);
  CHECK(j["formula"] == std::string(kScoreFormula));
  const auto back = bench_report_from_json(j);
  CHECK(bench_report_to_json(back) == j);
  const auto table = render_bench_table({r});
  for (auto label : {"Models", "Conversation", "Detail description", "Complex reasoning", "All", "toy model", "90.00"}) {
    CHECK(table.find(label) != std::string::npos);
  }
  auto broken = j;
  broken.erase("All");
  CHECK_THROWS_AS(bench_report_from_json(broken), SchemaError);
}

TEST_CASE("bench run quarantines items and replays byte-identically") {
  auto pack = standard_pack(4, 3);
  AnswerSet answers;
  for (const auto& it : pack.items) answers[it.id] = "It calls the helper " + it.function_id.substr(2);
  answers.erase(pack.items[0].id);

  const auto dir = fs::temp_directory_path() / "asmalign_bench_replay";
  fs::remove_all(dir);
  std::string first;
  {
    auto cache = std::make_shared<CachingTransport>(std::make_shared<RuleBasedTransport>(), dir, CacheMode::record);
    OpenAiChatBackend arbiter(cache);
    const auto run = run_bench(arbiter, pack, answers);
    CHECK(run.report.quarantined == std::vector<std::string>{pack.items[0].id});
    CHECK(run.scored.size() == 11);
    first = bench_report_to_json(run.report).dump();
  }
  auto cache = std::make_shared<CachingTransport>(std::make_shared<OfflineTransport>(), dir, CacheMode::replay);
  OpenAiChatBackend arbiter(cache);
  CHECK(bench_report_to_json(run_bench(arbiter, pack, answers).report).dump() == first);
  fs::remove_all(dir);

  FixedBackend garbage("unparseable");
  // Every verdict unparseable: nothing left to aggregate.
  CHECK_THROWS_AS(run_bench(garbage, standard_pack(1, 3), {{"s00-q0", "x"}, {"s00-q1", "y"}, {"s00-q2", "z"}}),
                  ValidationError);
}
