#include "asmalign/toy.hpp"

#include "asmalign/error.hpp"
#include "asmalign/rng.hpp"

#include <fmt/format.h>

namespace asmalign {

namespace {

const char* const kVerbs[] = {"init", "parse", "read", "write", "free", "alloc",
                              "hash", "sort", "find", "copy", "scan", "send"};
const char* const kNouns[] = {"buf", "node", "list", "key", "file", "sock", "str", "map"};

std::vector<std::string> o0_body(const std::string& callee, Rng& rng) {
  const char* regs[] = {"rdi", "rsi"};
  std::vector<std::string> v = {"push rbp", "mov rbp, rsp", fmt::format("sub rsp, 0x{:x}", 16 + 8 * rng.uniform_index(5)),
                                fmt::format("mov [rbp-8], {}", regs[rng.uniform_index(2)])};
  const auto filler = rng.uniform_index(3);
  for (std::uint64_t i = 0; i < filler; ++i) {
    switch (rng.uniform_index(3)) {
      case 0: v.push_back(fmt::format("mov eax, {}", rng.uniform_index(64))); break;
      case 1: v.push_back("xor ecx, ecx"); break;
      default: v.push_back("lea rdx, [rbp-16]"); break;
    }
  }
  v.push_back("call " + callee);
  v.push_back("leave");
  v.push_back("retn");
  return v;
}

std::vector<std::string> o3_body(const std::string& callee, Rng& rng) {
  std::vector<std::string> v;
  const auto filler = rng.uniform_index(3);
  for (std::uint64_t i = 0; i < filler; ++i) {
    switch (rng.uniform_index(3)) {
      case 0: v.push_back("mov eax, edi"); break;
      case 1: v.push_back("test edi, edi"); break;
      default: v.push_back("xor eax, eax"); break;
    }
  }
  v.push_back("jmp " + callee);
  return v;
}

AsmFunction make_fn(const std::string& name, OptLevel opt, const std::vector<std::string>& body) {
  AsmFunction fn;
  fn.project = std::string(kToyProject);
  fn.function_name = name;
  fn.opt_level = opt;
  fn.source_key = fmt::format("{}/{}", kToyProject, name);
  fn.id = fmt::format("{}/{}/{}", kToyProject, name, to_string(opt));
  for (std::size_t i = 0; i < body.size(); ++i) fn.instructions.push_back({i, body[i], {}});
  return fn;
}

InstructionSample make_sample(const AsmFunction& fn, TaskType task,
                              const std::vector<std::pair<std::string, std::string>>& rounds) {
  InstructionSample s;
  s.function_id = fn.id;
  s.task = task;
  s.id = sample_id(fn.id, task);
  s.provenance.backend_model = "toy";
  for (const auto& [q, a] : rounds) {
    s.turns.push_back({ChatRole::user, q});
    s.turns.push_back({ChatRole::assistant, a});
  }
  return s;
}

std::string callee_of(const ToyCorpus& toy, const AsmFunction& fn) {
  const auto& d = toy.descriptions.at(fn.source_key);
  return d.substr(d.find(' ') + 1);
}

}  // namespace

ToyCorpus make_toy_corpus(std::size_t n_sources, std::uint64_t seed) {
  std::vector<std::string> helpers;
  for (const char* v : kVerbs) {
    for (const char* n : kNouns) helpers.push_back(fmt::format("{}_{}", v, n));
  }
  if (n_sources == 0 || n_sources > helpers.size()) {
    throw ValidationError(fmt::format("toy corpus supports 1..{} sources", helpers.size()));
  }
  Rng rng(seed);
  const auto picked = rng.sample_without_replacement(helpers.size(), n_sources);
  ToyCorpus toy;
  std::vector<AsmFunction> fns;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const auto& callee = helpers[picked[i]];
    const auto name = fmt::format("sub_{:02d}", i);
    fns.push_back(make_fn(name, OptLevel::O0, o0_body(callee, rng)));
    fns.push_back(make_fn(name, OptLevel::O3, o3_body(callee, rng)));
    auto words = callee;
    words[words.find('_')] = ' ';
    toy.descriptions[fns.back().source_key] = "calls " + words;
  }
  toy.corpus = Corpus(std::move(fns));
  return toy;
}

Dataset toy_d1(const ToyCorpus& toy) {
  std::vector<InstructionSample> samples;
  for (const auto& fn : toy.corpus.functions()) {
    samples.push_back(make_sample(fn, TaskType::simp, {{std::string(kToyQuestion), toy.descriptions.at(fn.source_key)}}));
  }
  return assemble_d1(toy.corpus, std::move(samples));
}

Dataset toy_d2(const ToyCorpus& toy) {
  std::vector<InstructionSample> samples;
  for (const auto& fn : toy.corpus.functions()) {
    const auto callee = callee_of(toy, fn);
    const bool tail = fn.opt_level == OptLevel::O3;
    samples.push_back(make_sample(
        fn, TaskType::detail,
        {{"explain the code in detail",
          tail ? "it jumps to " + callee + " as a tail call" : "it sets up a frame then calls " + callee + " and returns"}}));
    samples.push_back(make_sample(fn, TaskType::conv,
                                  {{"what does it call?", "it calls " + callee},
                                   {"does it use a frame?", tail ? "no" : "yes"},
                                   {"how does it return?", tail ? "through " + callee : "with retn"}}));
    samples.push_back(make_sample(fn, TaskType::reason, {{"why does it exist?", "to delegate to " + callee}}));
  }
  return assemble_d2(toy.corpus, std::move(samples));
}

}  // namespace asmalign
