#pragma once

#include <map>
#include <string>
#include <vector>

namespace mimo {

// key = value text files (blank lines and # comments ignored)
std::map<std::string, std::string> read_kv_file(const std::string& path);
void write_kv_file(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& entries);

// 64-bit FNV-1a as a short stable fingerprint for effective configs
std::string fnv1a_hex(const std::string& text);

}  // namespace mimo
