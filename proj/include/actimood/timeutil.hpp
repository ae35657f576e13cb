#ifndef ACTIMOOD_TIMEUTIL_HPP
#define ACTIMOOD_TIMEUTIL_HPP

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace actimood {
namespace timeutil {

constexpr std::int64_t kMsPerMinute = 60'000;
constexpr std::int64_t kMsPerHour = 3'600'000;
constexpr std::int64_t kMsPerDay = 86'400'000;
constexpr std::int64_t kMsPerWeek = 7 * kMsPerDay;

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
    return a - floor_div(a, b) * b;
}

// Fixed UTC offset, applied uniformly (no DST).
struct LocalCalendar {
    int tz_offset_minutes = 0;

    std::int64_t to_local(std::int64_t utc_ms) const {
        return utc_ms + static_cast<std::int64_t>(tz_offset_minutes) * kMsPerMinute;
    }
    std::int64_t to_utc(std::int64_t local_ms) const {
        return local_ms - static_cast<std::int64_t>(tz_offset_minutes) * kMsPerMinute;
    }
};

// Days since 1970-01-01 for a proleptic Gregorian date.
inline std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2u) / 5u + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

// 0 = Sunday ... 6 = Saturday.
inline int day_of_week(std::int64_t days_since_epoch) {
    return static_cast<int>(floor_mod(days_since_epoch + 4, 7));
}

inline std::int64_t local_day_index(std::int64_t utc_ms, const LocalCalendar& cal) {
    return floor_div(cal.to_local(utc_ms), kMsPerDay);
}

// Most recent local Sunday midnight at or before the given instant, as UTC ms.
inline std::int64_t prev_sunday_midnight(std::int64_t utc_ms, const LocalCalendar& cal) {
    std::int64_t day = local_day_index(utc_ms, cal);
    day -= day_of_week(day);
    return cal.to_utc(day * kMsPerDay);
}

// Local clock time in hours [0, 24).
inline double clock_hours(std::int64_t utc_ms, const LocalCalendar& cal) {
    return static_cast<double>(floor_mod(cal.to_local(utc_ms), kMsPerDay)) / kMsPerHour;
}

inline std::string format_local_date(std::int64_t utc_ms, const LocalCalendar& cal) {
    int y, m, d;
    civil_from_days(local_day_index(utc_ms, cal), y, m, d);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
}

// Parses "YYYY-MM-DD"; returns days since epoch.
inline std::int64_t parse_date(const std::string& s) {
    int y, m, d;
    char tail;
    if (std::sscanf(s.c_str(), "%d-%d-%d%c", &y, &m, &d, &tail) != 3 || m < 1 || m > 12 ||
        d < 1 || d > 31)
        throw std::invalid_argument("invalid ISO date: '" + s + "'");
    return days_from_civil(y, m, d);
}

}  // namespace timeutil
}  // namespace actimood

#endif
