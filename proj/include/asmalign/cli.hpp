#pragma once

#include "asmalign/jsonl.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace asmalign {

inline constexpr std::string_view kVersion = "0.1.0";

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitStageFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand (ingest, gen, train, ask, eval-bcsd, eval-bench,
/// report, cost). args excludes the program name. Every run that gets past
/// argument parsing writes a manifest, including failed ones.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Reads a manifest and checks the fields `report` relies on; throws
// SchemaError naming the first missing one.
ordered_json load_manifest(const std::filesystem::path& path);

}  // namespace asmalign
