#pragma once

#include <filesystem>
#include <string>

inline std::filesystem::path case_file(const std::string& name) {
  return std::filesystem::path(TSCOPF_CASE_DIR) / name;
}
