#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "bas/error.hpp"

namespace bas {

using Timestamp = std::chrono::sys_seconds;
using Seconds = std::chrono::duration<double>;

/// Half-open interval [begin, end).
struct TimeRange {
  Timestamp begin;
  Timestamp end;

  bool empty() const noexcept { return end <= begin; }
  bool contains(Timestamp t) const noexcept { return begin <= t && t < end; }
  bool overlaps(const TimeRange& o) const noexcept {
    return begin < o.end && o.begin < end;
  }
  friend bool operator==(const TimeRange&, const TimeRange&) = default;
};

inline Timestamp make_time(int y, unsigned mo, unsigned d, int h = 0, int mi = 0,
                           int s = 0) {
  using namespace std::chrono;
  return sys_days{year{y} / month{mo} / day{d}} + hours{h} + minutes{mi} + seconds{s};
}

inline std::chrono::seconds days(double n) {
  return std::chrono::seconds{static_cast<long long>(n * 86400.0 + (n >= 0 ? 0.5 : -0.5))};
}

/// Formats as `YYYY-MM-DDTHH:MM:SSZ`.
inline std::string to_rfc3339(Timestamp t) {
  using namespace std::chrono;
  const auto dp = floor<std::chrono::days>(t);
  const year_month_day ymd{dp};
  const hh_mm_ss hms{t - dp};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()), int(hms.hours().count()),
                int(hms.minutes().count()), int(hms.seconds().count()));
  return buf;
}

namespace detail {

inline int parse_fixed(std::string_view s, std::size_t pos, std::size_t len,
                       std::string_view whole) {
  int v = 0;
  if (pos + len > s.size())
    throw FormatError("truncated timestamp '" + std::string(whole) + "'");
  const auto* first = s.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + len, v);
  if (ec != std::errc{} || ptr != first + len)
    throw FormatError("bad digits in timestamp '" + std::string(whole) + "'");
  return v;
}

inline void expect_char(std::string_view s, std::size_t pos, char c, std::string_view whole) {
  if (pos >= s.size() || (s[pos] != c && !(c == 'T' && (s[pos] == 't' || s[pos] == ' '))))
    throw FormatError("malformed timestamp '" + std::string(whole) + "'");
}

}  // namespace detail

/// Parses RFC 3339 date-times. Fractional seconds are truncated; offsets are
/// folded into UTC.
inline Timestamp parse_rfc3339(std::string_view s) {
  using detail::expect_char;
  using detail::parse_fixed;
  const int y = parse_fixed(s, 0, 4, s);
  expect_char(s, 4, '-', s);
  const int mo = parse_fixed(s, 5, 2, s);
  expect_char(s, 7, '-', s);
  const int d = parse_fixed(s, 8, 2, s);
  expect_char(s, 10, 'T', s);
  const int h = parse_fixed(s, 11, 2, s);
  expect_char(s, 13, ':', s);
  const int mi = parse_fixed(s, 14, 2, s);
  expect_char(s, 16, ':', s);
  const int sec = parse_fixed(s, 17, 2, s);
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
  }
  int offset_min = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
    const int sign = s[pos] == '-' ? -1 : 1;
    const int oh = parse_fixed(s, pos + 1, 2, s);
    expect_char(s, pos + 3, ':', s);
    const int om = parse_fixed(s, pos + 4, 2, s);
    offset_min = sign * (oh * 60 + om);
    pos += 6;
  } else {
    throw FormatError("timestamp lacks a UTC offset: '" + std::string(s) + "'");
  }
  if (pos != s.size())
    throw FormatError("trailing characters in timestamp '" + std::string(s) + "'");

  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{unsigned(mo)}, day{unsigned(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60)
    throw FormatError("timestamp out of range: '" + std::string(s) + "'");
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec} - minutes{offset_min};
}

}  // namespace bas
