#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace asmalign {

enum class OptLevel { O0, O1, O2, O3 };

std::string_view to_string(OptLevel level);
OptLevel parse_opt_level(std::string_view text);

inline constexpr std::string_view kArchX86_64 = "x86-64";

struct AsmInstruction {
  std::size_t index = 0;
  std::string text;
  // Address as read from the listing; cleared once the function is renumbered.
  std::optional<std::uint64_t> raw_address;

  bool operator==(const AsmInstruction&) const = default;
};

struct AsmFunction {
  std::string id;
  std::string project;
  std::optional<std::string> function_name;
  OptLevel opt_level = OptLevel::O0;
  std::string arch{kArchX86_64};
  std::vector<AsmInstruction> instructions;
  // Identifies the original source function across optimization levels.
  std::string source_key;

  bool operator==(const AsmFunction&) const = default;
};

enum class ListingFormat { indexed, addressed };

ListingFormat parse_listing_format(std::string_view text);

// Metadata applied to functions whose FUNC header omits a field (or that have
// no header at all).
struct ListingDefaults {
  std::string project = "unknown";
  OptLevel opt_level = OptLevel::O0;
};

/// Parses a textual disassembly listing.
///
/// Functions are separated by blank lines or by header lines of the form
///
///   FUNC project=<p> name=<n> opt=<O0..O3> source=<key> id=<id>
///
/// where every key is optional. Instruction lines are "<addr>: <text>", with a
/// decimal position (indexed) or a hexadecimal address (addressed, optional
/// 0x prefix). Lines starting with '#' and the elision marker "..." are
/// skipped. Instruction text is kept verbatim apart from surrounding
/// whitespace. Returned functions still carry their raw addresses; pass them
/// through renumber_addresses before use.
std::vector<AsmFunction> parse_listing(std::string_view text, ListingFormat format,
                                       const ListingDefaults& defaults = {});

// Replaces raw addresses with sequential indices 0..n-1. Idempotent.
AsmFunction renumber_addresses(AsmFunction fn);

// parse_listing followed by renumber_addresses on every function.
std::vector<AsmFunction> ingest_listing(std::string_view text, ListingFormat format,
                                        const ListingDefaults& defaults = {});

// Renders functions back into indexed listing text with FUNC headers.
std::string render_listing(const std::vector<AsmFunction>& functions);

// "0: push rbp\n1: mov rbp, rsp" form used inside prompts.
std::string render_instructions(const AsmFunction& fn);

struct ProjectShare {
  std::size_t count = 0;
  double proportion = 0.0;

  bool operator==(const ProjectShare&) const = default;
};

struct CorpusManifest {
  std::size_t total = 0;
  std::map<std::string, ProjectShare> projects;

  bool operator==(const CorpusManifest&) const = default;
};

class Corpus {
 public:
  Corpus() = default;
  // Throws IntegrityError on duplicate ids or non-sequential instruction indices.
  explicit Corpus(std::vector<AsmFunction> functions);

  const std::vector<AsmFunction>& functions() const noexcept { return functions_; }
  const CorpusManifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return functions_.size(); }
  bool empty() const noexcept { return functions_.empty(); }

  const AsmFunction* find(std::string_view id) const;
  const AsmFunction& at(std::string_view id) const;

  bool operator==(const Corpus& other) const { return functions_ == other.functions_; }

 private:
  std::vector<AsmFunction> functions_;
  CorpusManifest manifest_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

Corpus filter_min_length(const Corpus& corpus, std::size_t min_len = 3);

// Caps every project at per_project_cap functions using seeded uniform sampling
// without replacement. Surviving functions keep their original order.
Corpus balance_sample(const Corpus& corpus, std::size_t per_project_cap, std::uint64_t seed);

std::string render_corpus(const Corpus& corpus);
Corpus parse_corpus(std::string_view text);
void export_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus import_corpus(const std::filesystem::path& path);

}  // namespace asmalign
