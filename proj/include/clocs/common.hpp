// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace clocs {

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kContract = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Malformed input file contents.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// Bad configuration or command usage.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kUsage, what) {}
};

/// Inconsistent data set (missing frames, misaligned ids, unreadable files).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// Violated internal precondition (mismatched caches, shape mismatches).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ExitCode::kContract, what) {}
};

enum class ClassId : int { kCar = 0, kPedestrian = 1, kCyclist = 2, kOther = 3 };

inline constexpr int kNumClasses = 4;

inline std::string_view class_name(ClassId c) {
  switch (c) {
    case ClassId::kCar: return "Car";
    case ClassId::kPedestrian: return "Pedestrian";
    case ClassId::kCyclist: return "Cyclist";
    case ClassId::kOther: return "Other";
  }
  return "Other";
}

/// Unknown names map to kOther.
inline ClassId class_from_name(std::string_view name) {
  if (name == "Car") return ClassId::kCar;
  if (name == "Pedestrian") return ClassId::kPedestrian;
  if (name == "Cyclist") return ClassId::kCyclist;
  return ClassId::kOther;
}

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

namespace text {

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

/// A content line with its 1-based line number in the source text.
struct Line {
  int number;
  std::string_view content;
};

/// Splits text into non-blank lines, dropping '#' comment lines.
inline std::vector<Line> content_lines(std::string_view text) {
  std::vector<Line> out;
  int number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++number;
    auto t = trim(raw);
    if (!t.empty() && t.front() != '#') out.push_back({number, t});
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

/// Strict decimal parse: the whole token must be consumed and finite.
inline bool parse_double(std::string_view tok, double& out) {
  if (tok.empty()) return false;
  const char* first = tok.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view tok, long long& out) {
  if (tok.empty()) return false;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

/// %.*g formatting; 9 digits for geometry, 17 for exact double round trip.
inline std::string fmt_g(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

}  // namespace text
}  // namespace clocs
