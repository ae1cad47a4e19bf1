#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crowdlabel/core.hpp"

namespace crowdlabel {

using json = nlohmann::json;

inline std::vector<json> parse_jsonl(std::istream& in, const std::string& what = "<stream>") {
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      fail(what, ":", lineno, ": malformed JSON (", e.what(), ")");
    }
  }
  return out;
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open ", path.string());
  return parse_jsonl(in, path.string());
}

inline std::string to_jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot write ", path.string());
  out << text;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  write_text(path, to_jsonl(records));
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Typed field access with a readable error when a record is malformed.
template <typename T>
T field(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) fail(ctx, ": missing field '", key, "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ctx, ": field '", key, "' has wrong type");
  }
}

}  // namespace crowdlabel
