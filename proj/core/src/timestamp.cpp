#include "corisk/timestamp.hpp"

#include <chrono>
#include <cstdio>

#include "corisk/error.hpp"

namespace corisk {

Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour, int minute,
                         int second) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                           std::chrono::day{day}};
  if (!ymd.ok()) {
    throw InputError("invalid calendar date");
  }
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return Timestamp{static_cast<std::int64_t>(days) * kSecondsPerDay + hour * 3600LL +
                   minute * 60LL + second};
}

Timestamp parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  const std::string buf(text);
  int consumed = 0;
  bool ok = false;
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s,
                  &consumed) == 6 &&
      consumed == static_cast<int>(buf.size())) {
    ok = true;
  } else if (s = 0; std::sscanf(buf.c_str(), "%4d-%2d-%2dT%2d:%2d%n", &y, &mo, &d, &h, &mi,
                                &consumed) == 5 &&
                    consumed == static_cast<int>(buf.size())) {
    ok = true;
  } else if (h = mi = 0; std::sscanf(buf.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) ==
                             3 &&
                         consumed == static_cast<int>(buf.size())) {
    ok = true;
  }
  if (!ok || mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 ||
      s < 0 || s > 59) {
    throw InputError("malformed timestamp '" + buf + "'");
  }
  return make_timestamp(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi, s);
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  std::int64_t days = t.seconds / kSecondsPerDay;
  std::int64_t rem = t.seconds % kSecondsPerDay;
  if (rem < 0) {
    rem += kSecondsPerDay;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char out[32];
  std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60),
                static_cast<int>(rem % 60));
  return out;
}

}  // namespace corisk
