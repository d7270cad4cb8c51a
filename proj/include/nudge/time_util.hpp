#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace nudge {

// All timestamps are Unix seconds (UTC). The log format stores them as
// ISO-8601 "YYYY-MM-DDTHH:MM:SSZ" with second resolution.
using UnixSeconds = std::int64_t;

inline constexpr UnixSeconds kSecondsPerDay = 86400;
inline constexpr UnixSeconds kSecondsPerHour = 3600;
inline constexpr UnixSeconds kSecondsPerWeek = 7 * kSecondsPerDay;

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(int year, unsigned month, unsigned day);
void civil_from_days(std::int64_t days, int& year, unsigned& month, unsigned& day);

// Monday = 0 ... Sunday = 6.
inline int weekday_of_day(std::int64_t days_since_epoch) {
  // 1970-01-01 was a Thursday.
  std::int64_t w = (days_since_epoch + 3) % 7;
  return static_cast<int>(w < 0 ? w + 7 : w);
}

// Strict "YYYY-MM-DDTHH:MM:SSZ". Returns nullopt on any deviation.
std::optional<UnixSeconds> parse_iso8601_utc(const std::string& s);
std::string format_iso8601_utc(UnixSeconds t);

// Strict "YYYY-MM-DD" -> days since epoch.
std::optional<std::int64_t> parse_date(const std::string& s);
std::string format_date(std::int64_t days_since_epoch);

// Weekday name ("monday".."sunday") -> index, nullopt if unknown.
std::optional<int> parse_weekday(const std::string& name);
std::string weekday_name(int weekday);

}  // namespace nudge
