#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace vdn {

// One compact JSON document per line. Blank lines are skipped on read;
// a malformed line raises FormatError naming the file and line number.
std::vector<nlohmann::json> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& records);

nlohmann::json read_json(const std::string& path);
void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace vdn
