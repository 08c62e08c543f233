#include "asmalign/jsonl.hpp"

#include "asmalign/error.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

namespace asmalign {

JsonlDocument parse_jsonl(std::string_view text) {
  JsonlDocument doc;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    ordered_json value;
    try {
      value = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!value.is_object()) throw ParseError(line_no, "expected a JSON object");
    if (!have_header) {
      doc.header = std::move(value);
      have_header = true;
    } else {
      doc.records.push_back(std::move(value));
    }
    if (end == text.size()) break;
  }
  if (!have_header) throw SchemaError("missing header line");
  return doc;
}

JsonlDocument read_jsonl(const std::filesystem::path& path) { return parse_jsonl(read_text_file(path)); }

std::string render_jsonl(const JsonlDocument& doc) {
  std::string out = doc.header.dump();
  out.push_back('\n');
  for (const auto& r : doc.records) {
    out += r.dump();
    out.push_back('\n');
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const JsonlDocument& doc) {
  write_text_file(path, render_jsonl(doc));
}

void require_schema(const ordered_json& header, std::string_view kind, int major) {
  if (!header.contains("schema") || !header["schema"].is_string()) {
    throw SchemaError("header has no schema field");
  }
  const std::string schema = header["schema"].get<std::string>();
  const std::string prefix = std::string(kind) + "/v";
  if (schema.rfind(prefix, 0) != 0) {
    throw SchemaError("expected schema " + prefix + std::to_string(major) + ", found " + schema);
  }
  int found = 0;
  try {
    found = std::stoi(schema.substr(prefix.size()));
  } catch (const std::exception&) {
    throw SchemaError("unreadable schema version: " + schema);
  }
  if (found != major) {
    throw SchemaError("unsupported schema major version: " + schema);
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  static std::atomic<unsigned long> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace asmalign
