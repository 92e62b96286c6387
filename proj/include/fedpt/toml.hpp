#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedpt/errors.hpp"

namespace fedpt {

// Minimal flat-TOML reader: `key = value` lines, `#` comments, and scalar
// types string / integer / float / boolean plus single-line arrays of
// scalars. Tables and multi-line syntax are rejected; experiment configs are
// flat by design.
struct TomlValue {
  enum class Type { string, integer, floating, boolean, array };
  Type type = Type::string;
  std::string str;
  int64_t integer = 0;
  double floating = 0.0;
  bool boolean = false;
  std::vector<TomlValue> array;

  double as_number() const {
    if (type == Type::integer) return static_cast<double>(integer);
    if (type == Type::floating) return floating;
    throw FormatError("expected a number");
  }
};

using TomlTable = std::map<std::string, TomlValue>;

TomlTable parse_toml(const std::string& text);
TomlTable parse_toml_file(const std::filesystem::path& path);

// Preserves file order of keys (used by sweep grids).
std::vector<std::pair<std::string, TomlValue>> parse_toml_ordered(const std::string& text);
std::vector<std::pair<std::string, TomlValue>> parse_toml_file_ordered(
    const std::filesystem::path& path);

}  // namespace fedpt
