#include "fedpt/toml.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fedpt {

namespace {

std::string trim(std::string_view s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw FormatError("toml line " + std::to_string(line) + ": " + msg);
}

// Strips a trailing comment, honoring quotes.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  }
  return true;
}

TomlValue parse_scalar(const std::string& raw, int line) {
  TomlValue v;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    v.type = TomlValue::Type::string;
    std::string out;
    for (size_t i = 1; i + 1 < raw.size(); ++i) {
      char c = raw[i];
      if (c == '\\' && i + 2 < raw.size()) {
        char n = raw[++i];
        switch (n) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(line, std::string("unsupported escape \\") + n);
        }
      } else if (c == '"') {
        fail(line, "unexpected quote inside string");
      } else {
        out += c;
      }
    }
    v.str = out;
    return v;
  }
  if (raw == "true" || raw == "false") {
    v.type = TomlValue::Type::boolean;
    v.boolean = raw == "true";
    return v;
  }

  std::string digits;
  digits.reserve(raw.size());
  for (char c : raw) {
    if (c != '_') digits += c;
  }
  const bool looks_float = digits.find_first_of(".eE") != std::string::npos &&
                           digits.find_first_of("0123456789") != std::string::npos;
  if (!looks_float) {
    int64_t iv = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), iv);
    if (ec == std::errc() && p == digits.data() + digits.size()) {
      v.type = TomlValue::Type::integer;
      v.integer = iv;
      return v;
    }
  }
  {
    char* end = nullptr;
    const double dv = std::strtod(digits.c_str(), &end);
    if (end == digits.c_str() + digits.size() && !digits.empty()) {
      v.type = TomlValue::Type::floating;
      v.floating = dv;
      return v;
    }
  }
  fail(line, "cannot parse value: " + raw);
}

TomlValue parse_value(const std::string& raw, int line) {
  if (!raw.empty() && raw.front() == '[') {
    if (raw.back() != ']') fail(line, "arrays must close on the same line");
    TomlValue v;
    v.type = TomlValue::Type::array;
    std::string body = raw.substr(1, raw.size() - 2);
    std::vector<std::string> parts;
    std::string cur;
    bool in_str = false;
    int depth = 0;
    for (size_t i = 0; i < body.size(); ++i) {
      char c = body[i];
      if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_str = !in_str;
      if (!in_str && c == '[') ++depth;
      if (!in_str && c == ']') --depth;
      if (c == ',' && !in_str && depth == 0) {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) parts.push_back(cur);
    for (const auto& p : parts) {
      const std::string t = trim(p);
      if (t.empty()) fail(line, "empty array element");
      if (!t.empty() && t.front() == '[') fail(line, "nested arrays are not supported");
      v.array.push_back(parse_scalar(t, line));
    }
    return v;
  }
  return parse_scalar(raw, line);
}

}  // namespace

std::vector<std::pair<std::string, TomlValue>> parse_toml_ordered(const std::string& text) {
  std::vector<std::pair<std::string, TomlValue>> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') fail(lineno, "tables are not supported; configs are flat");
    const size_t eq = s.find('=');
    if (eq == std::string::npos) fail(lineno, "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (!valid_key(key)) fail(lineno, "bad key: '" + key + "'");
    if (val.empty()) fail(lineno, "missing value for key: " + key);
    for (const auto& [k, unused] : out) {
      if (k == key) fail(lineno, "duplicate key: " + key);
    }
    out.emplace_back(key, parse_value(val, lineno));
  }
  return out;
}

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  for (auto& [k, v] : parse_toml_ordered(text)) table.emplace(std::move(k), std::move(v));
  return table;
}

std::vector<std::pair<std::string, TomlValue>> parse_toml_file_ordered(
    const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_toml_ordered(ss.str());
}

TomlTable parse_toml_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_toml(ss.str());
}

}  // namespace fedpt
