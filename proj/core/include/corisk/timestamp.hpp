#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace corisk {

// Seconds since 1970-01-01T00:00:00 (UTC, no leap seconds).
struct Timestamp {
  std::int64_t seconds = 0;

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

constexpr std::int64_t kSecondsPerDay = 86400;

Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                         int second = 0);

// Accepts "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM[:SS]". Throws InputError otherwise.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

inline double days_between(Timestamp from, Timestamp to) {
  return static_cast<double>(to.seconds - from.seconds) / static_cast<double>(kSecondsPerDay);
}

inline Timestamp add_seconds(Timestamp t, std::int64_t s) { return Timestamp{t.seconds + s}; }

}  // namespace corisk
