#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace asmalign {

using ordered_json = nlohmann::ordered_json;

// A JSON-Lines artifact: one header object followed by one record per line.
struct JsonlDocument {
  ordered_json header;
  std::vector<ordered_json> records;
};

JsonlDocument read_jsonl(const std::filesystem::path& path);
JsonlDocument parse_jsonl(std::string_view text);
std::string render_jsonl(const JsonlDocument& doc);
void write_jsonl(const std::filesystem::path& path, const JsonlDocument& doc);

// Checks header["schema"] has the form "<kind>/v<major>" with the expected kind
// and major. Throws SchemaError otherwise.
void require_schema(const ordered_json& header, std::string_view kind, int major);

std::string read_text_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames into place.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace asmalign
