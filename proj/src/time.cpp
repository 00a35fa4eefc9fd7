#include "gridtrade/time.hpp"

#include <array>
#include <charconv>
#include <cstdio>

namespace gridtrade {
namespace {

// Howard Hinnant's civil-date algorithms, on int64 so that any stored
// timestamp (including a corrupted one) formats without overflow.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

struct Split {
  Civil date;
  unsigned hour, minute, second;
};

Split split(Instant t) {
  const std::int64_t s = t.time_since_epoch().count();
  std::int64_t days = s / 86400;
  std::int64_t rem = s % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  return {civil_from_days(days), static_cast<unsigned>(rem / 3600),
          static_cast<unsigned>((rem % 3600) / 60), static_cast<unsigned>(rem % 60)};
}

bool read_fixed(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i)
    if (s[i] < '0' || s[i] > '9') return false;
  auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
  return ec == std::errc{} && p == s.data() + pos + len;
}

bool leap(std::int64_t y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

unsigned days_in_month(std::int64_t y, unsigned m) {
  static constexpr std::array<unsigned, 12> kDays{31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && leap(y) ? 29 : kDays[m - 1];
}

}  // namespace

std::optional<Instant> parse_iso8601(std::string_view s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (!read_fixed(s, 0, 4, y) || s.size() < 16 || s[4] != '-' || !read_fixed(s, 5, 2, mo) ||
      s[7] != '-' || !read_fixed(s, 8, 2, d) || (s[10] != 'T' && s[10] != ' ') ||
      !read_fixed(s, 11, 2, h) || s[13] != ':' || !read_fixed(s, 14, 2, mi))
    return std::nullopt;
  std::size_t pos = 16;
  if (pos < s.size() && s[pos] == ':') {
    if (!read_fixed(s, pos + 1, 2, sec)) return std::nullopt;
    pos += 3;
  }
  std::int64_t offset = 0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      pos += 1;
    } else if ((s[pos] == '+' || s[pos] == '-') && s.size() == pos + 6 && s[pos + 3] == ':') {
      int oh = 0, om = 0;
      if (!read_fixed(s, pos + 1, 2, oh) || !read_fixed(s, pos + 4, 2, om) || oh > 23 || om > 59)
        return std::nullopt;
      offset = (oh * 3600 + om * 60) * (s[pos] == '+' ? 1 : -1);
      pos += 6;
    } else {
      return std::nullopt;
    }
  }
  if (pos != s.size()) return std::nullopt;
  if (mo < 1 || mo > 12 || d < 1 || d > static_cast<int>(days_in_month(y, mo)) || h > 23 ||
      mi > 59 || sec > 59)
    return std::nullopt;
  const std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  return Instant{Seconds{days * 86400 + h * 3600 + mi * 60 + sec - offset}};
}

std::string format_iso8601(Instant t) {
  const auto p = split(t);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02u:%02u:%02uZ",
                static_cast<long long>(p.date.year), p.date.month, p.date.day, p.hour, p.minute,
                p.second);
  return buf;
}

std::string format_display(Instant t) {
  static constexpr std::array<const char*, 12> kMonths{
      "January", "February", "March",     "April",   "May",      "June",
      "July",    "August",   "September", "October", "November", "December"};
  const auto p = split(t);
  char buf[80];
  std::snprintf(buf, sizeof buf, "%u-%s-%lld %u:%02u:%02u", p.date.day, kMonths[p.date.month - 1],
                static_cast<long long>(p.date.year), p.hour, p.minute, p.second);
  return buf;
}

std::string format_date(Instant t) {
  const auto p = split(t);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u", static_cast<long long>(p.date.year),
                p.date.month, p.date.day);
  return buf;
}

Instant start_of_day(Instant t) {
  std::int64_t s = t.time_since_epoch().count();
  std::int64_t rem = s % 86400;
  if (rem < 0) rem += 86400;
  return Instant{Seconds{s - rem}};
}

Instant from_unix(std::int64_t seconds) { return Instant{Seconds{seconds}}; }
std::int64_t to_unix(Instant t) { return t.time_since_epoch().count(); }

}  // namespace gridtrade
