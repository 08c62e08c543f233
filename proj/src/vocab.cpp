#include "asmalign/vocab.hpp"

#include "asmalign/error.hpp"

#include <algorithm>
#include <cctype>
#include <map>

namespace asmalign {

namespace {

const char* const kSpecialGlyphs[kSpecialCount] = {"<pad>",  "<s>",       "</s>",        "<unk>",
                                                   "<inst>", "</inst>", "<inst_code>", "<asm>"};

bool is_word(unsigned char c) { return std::isalnum(c) || c == '_'; }
bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Byte length of the UTF-8 sequence starting at text[i]; 1 for invalid bytes.
std::size_t utf8_len(std::string_view text, std::size_t i) {
  const auto c = static_cast<unsigned char>(text[i]);
  std::size_t n = 1;
  if (c >= 0xF0 && c < 0xF8) n = 4;
  else if (c >= 0xE0) n = 3;
  else if (c >= 0xC0) n = 2;
  if (c >= 0xF8 || (c >= 0x80 && c < 0xC0)) return 1;
  if (i + n > text.size()) return 1;
  for (std::size_t k = 1; k < n; ++k) {
    if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) return 1;
  }
  return n;
}

}  // namespace

std::vector<std::string> split_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == ' ' && i + 1 < text.size() && !is_space(static_cast<unsigned char>(text[i + 1]))) ++i;
    else if (is_space(c)) {
      out.emplace_back(text.substr(i, 1));
      ++i;
      continue;
    }
    if (is_word(static_cast<unsigned char>(text[i]))) {
      while (i < text.size() && is_word(static_cast<unsigned char>(text[i]))) ++i;
    } else {
      i += utf8_len(text, i);
    }
    out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kSpecialCount) throw SchemaError("vocabulary lacks special tokens");
  Vocab v;
  for (int s = 0; s < kSpecialCount; ++s) {
    if (tokens[static_cast<std::size_t>(s)] != kSpecialGlyphs[s]) {
      throw SchemaError("vocabulary id " + std::to_string(s) + " must be " + kSpecialGlyphs[s]);
    }
  }
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw SchemaError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

Vocab Vocab::build(const std::vector<std::string>& texts, std::size_t min_count, std::size_t max_pieces) {
  std::vector<std::string> tokens(kSpecialGlyphs, kSpecialGlyphs + kSpecialCount);
  tokens.emplace_back("\t");
  tokens.emplace_back("\n");
  for (char c = 32; c < 127; ++c) tokens.emplace_back(1, c);

  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& p : split_pieces(t)) ++counts[std::move(p)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [piece, n] : counts) {
    if (n < min_count) continue;
    if (std::find(tokens.begin(), tokens.end(), piece) != tokens.end()) continue;
    ranked.emplace_back(piece, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_pieces != 0 && ranked.size() > max_pieces) ranked.resize(max_pieces);
  for (auto& [piece, n] : ranked) tokens.push_back(piece);
  return from_tokens(std::move(tokens));
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end() || it->second < kSpecialCount) return std::nullopt;
  return it->second;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : split_pieces(text)) {
    if (auto id = find(piece)) {
      ids.push_back(*id);
      continue;
    }
    for (std::size_t i = 0; i < piece.size();) {
      const auto n = utf8_len(piece, i);
      auto id = find(std::string_view(piece).substr(i, n));
      ids.push_back(id ? *id : Vocab::id(Special::unk));
      i += n;
    }
  }
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    const auto& tok = token(id);
    switch (id) {
      case static_cast<int>(Special::pad):
      case static_cast<int>(Special::bos):
      case static_cast<int>(Special::eos): break;
      case static_cast<int>(Special::unk): out += kReplacementChar; break;
      default: out += tok;
    }
  }
  return out;
}

std::vector<int> tokenize_instruction_text(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids{Vocab::id(Special::bos)};
  std::size_t pos = 0;
  while (true) {
    const auto hit = text.find(kPlaceholderGlyph, pos);
    const auto chunk = vocab.encode(text.substr(pos, hit == std::string_view::npos ? std::string_view::npos : hit - pos));
    ids.insert(ids.end(), chunk.begin(), chunk.end());
    if (hit == std::string_view::npos) break;
    ids.push_back(Vocab::id(Special::inst_placeholder));
    pos = hit + kPlaceholderGlyph.size();
  }
  ids.push_back(Vocab::id(Special::eos));
  return ids;
}

std::vector<int> substitute_placeholder(const std::vector<int>& ids, std::size_t m) {
  const auto placeholder = Vocab::id(Special::inst_placeholder);
  if (std::count(ids.begin(), ids.end(), placeholder) != 1) {
    throw ValidationError("expected exactly one code placeholder");
  }
  std::vector<int> out;
  out.reserve(ids.size() + m + 1);
  for (int id : ids) {
    if (id != placeholder) {
      out.push_back(id);
      continue;
    }
    out.push_back(Vocab::id(Special::inst_start));
    out.insert(out.end(), m, Vocab::id(Special::inst_code));
    out.push_back(Vocab::id(Special::inst_end));
  }
  return out;
}

}  // namespace asmalign
