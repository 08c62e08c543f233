// Regenerates the synthetic pipeline fixtures: a toy listing and a bench
// pack of 30 snippets with one question per category each.
#include "asmalign/bench.hpp"
#include "asmalign/ingest.hpp"
#include "asmalign/jsonl.hpp"
#include "asmalign/toy.hpp"

#include <fmt/format.h>

#include <iostream>

int main(int argc, char** argv) {
  using namespace asmalign;
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <fixtures/pipeline>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  const auto toy = make_toy_corpus(16, 0);
  write_text_file(dir / "toy.lst", render_listing(toy.corpus.functions()));

  const std::array<std::pair<BenchCategory, std::string>, 3> questions{{
      {BenchCategory::conversation, "Which helper does this function call?"},
      {BenchCategory::detail_description, "Describe what this function does in detail."},
      {BenchCategory::complex_reasoning, "What role does this function most likely play in the program?"},
  }};
  BenchPack pack;
  pack.name = "toy-bench";
  const auto& fns = toy.corpus.functions();
  for (std::size_t i = 0; i < 30; ++i) {
    const auto& fn = fns[i];
    for (const auto& [category, question] : questions) {
      BenchItem item;
      item.id = fmt::format("{}#{}", fn.id, to_string(category));
      item.function_id = fn.id;
      item.category = category;
      item.questions = {question};
      item.ground_truth_description = toy.descriptions.at(fn.source_key);
      for (const auto& ins : fn.instructions) item.code.push_back(ins.text);
      pack.items.push_back(std::move(item));
    }
  }
  save_bench_pack(pack, dir / "bench_pack.jsonl");
  std::cout << fmt::format("{} functions, {} bench items -> {}\n", fns.size(), pack.items.size(), dir.string());
  return 0;
}
