#pragma once

#include "asmalign/datagen.hpp"

#include <map>
#include <string>

namespace asmalign {

// Synthetic alignment task: every source function calls one uniquely named
// helper. The O0 build sets up a frame and uses `call`; the O3 build is a
// tail `jmp` with different filler, so the two differ syntactically but share
// the callee. Helpers are named <verb>_<noun> and the ground-truth
// description is "calls <verb> <noun>".
struct ToyCorpus {
  Corpus corpus;
  std::map<std::string, std::string> descriptions;  // source_key -> description
};

inline constexpr std::string_view kToyProject = "toy";
inline constexpr std::string_view kToyQuestion = "describe";

// Throws ValidationError when more sources are requested than helper names exist.
ToyCorpus make_toy_corpus(std::size_t n_sources = 64, std::uint64_t seed = 0);

// One simp sample per function: "describe" -> description.
Dataset toy_d1(const ToyCorpus& toy);
// detail, conv (3 rounds) and reason samples per function, all naming the helper.
Dataset toy_d2(const ToyCorpus& toy);

}  // namespace asmalign
