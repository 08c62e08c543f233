#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace asmalign {

// Special token ids are fixed: they occupy ids 0..7 in this order.
enum class Special : int { pad = 0, bos, eos, unk, inst_start, inst_end, inst_code, inst_placeholder };
inline constexpr int kSpecialCount = 8;

// Glyph used in prompt text to mark where the code region goes.
inline constexpr std::string_view kPlaceholderGlyph = "<asm>";
// Detokenized form of unk (U+FFFD).
inline constexpr std::string_view kReplacementChar = "\xEF\xBF\xBD";

// Splits text into word pieces: an optional leading space plus a run of
// [A-Za-z0-9_], an optional leading space plus one other character, or a
// single whitespace character. Concatenating the pieces gives back the text.
std::vector<std::string> split_pieces(std::string_view text);

class Vocab {
 public:
  // Specials, every printable ASCII character plus '\t' and '\n', then pieces
  // seen at least min_count times in `texts` (most frequent first, ties by
  // byte order). max_pieces == 0 means no cap.
  static Vocab build(const std::vector<std::string>& texts, std::size_t min_count = 1, std::size_t max_pieces = 0);

  // Rebuilds from a stored token list; throws SchemaError when the specials
  // are missing or duplicated.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(int id) const;
  std::optional<int> find(std::string_view piece) const;
  static constexpr int id(Special s) { return static_cast<int>(s); }

  // Plain text to ids. Pieces not in the vocabulary fall back to single
  // characters; characters outside it become unk. No bos/eos.
  std::vector<int> encode(std::string_view text) const;

  // Inverse of encode for text without special glyphs. pad/bos/eos are dropped,
  // unk becomes U+FFFD, the placeholder becomes "<asm>". Throws ValidationError
  // on out-of-range ids.
  std::string decode(const std::vector<int>& ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// bos, text with each "<asm>" replaced by the placeholder id, eos.
std::vector<int> tokenize_instruction_text(std::string_view text, const Vocab& vocab);

// Replaces the single placeholder with inst_start, m x inst_code, inst_end.
// Throws ValidationError unless exactly one placeholder is present.
std::vector<int> substitute_placeholder(const std::vector<int>& ids, std::size_t m);

}  // namespace asmalign
