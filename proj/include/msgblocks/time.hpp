#pragma once

// UTC instant helpers: ISO-8601 parsing/formatting on top of epoch seconds,
// proleptic Gregorian civil-date conversion, weekday and seconds-of-day.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

namespace msgblocks {

// days since 1970-01-01 for a civil date (Howard Hinnant's algorithm)
inline std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
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
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yy + (m <= 2));
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

// 0 = Monday .. 6 = Sunday (1970-01-01 was a Thursday)
inline int weekday_utc(std::int64_t epoch_seconds) {
    const std::int64_t days = floor_div(epoch_seconds, 86400);
    return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

inline int seconds_of_day_utc(std::int64_t epoch_seconds) {
    return static_cast<int>(((epoch_seconds % 86400) + 86400) % 86400);
}

inline int hour_of_day_utc(std::int64_t epoch_seconds) {
    return seconds_of_day_utc(epoch_seconds) / 3600;
}

namespace detail {

inline bool read_digits(const std::string& s, std::size_t pos, std::size_t n, int& out) {
    if (pos + n > s.size()) return false;
    int v = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const char c = s[pos + i];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}

inline int days_in_month(int y, int m) {
    static const int dim[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && ((y % 4 == 0 && y % 100 != 0) || y % 400 == 0)) return 29;
    return dim[m - 1];
}

} // namespace detail

// Accepts YYYY-MM-DDTHH:MM:SS with optional fractional seconds (discarded)
// and a zone of Z, +HH:MM, -HH:MM, +HHMM or -HHMM. A missing zone is read
// as UTC. Returns epoch seconds normalized to UTC.
inline std::optional<std::int64_t> parse_iso8601_utc(const std::string& s) {
    int y, mo, d, h, mi, se;
    if (!detail::read_digits(s, 0, 4, y)) return std::nullopt;
    if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != 't') ||
        s[13] != ':' || s[16] != ':')
        return std::nullopt;
    if (!detail::read_digits(s, 5, 2, mo) || !detail::read_digits(s, 8, 2, d) ||
        !detail::read_digits(s, 11, 2, h) || !detail::read_digits(s, 14, 2, mi) ||
        !detail::read_digits(s, 17, 2, se))
        return std::nullopt;
    if (mo < 1 || mo > 12 || d < 1 || d > detail::days_in_month(y, mo) || h > 23 || mi > 59 ||
        se > 59)
        return std::nullopt;

    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        std::size_t start = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
        if (pos == start) return std::nullopt;
    }

    std::int64_t offset = 0;
    if (pos < s.size()) {
        const char c = s[pos];
        if (c == 'Z' || c == 'z') {
            ++pos;
        } else if (c == '+' || c == '-') {
            int oh = 0, om = 0;
            if (!detail::read_digits(s, pos + 1, 2, oh)) return std::nullopt;
            std::size_t p2 = pos + 3;
            if (p2 < s.size() && s[p2] == ':') ++p2;
            if (p2 < s.size()) {
                if (!detail::read_digits(s, p2, 2, om)) return std::nullopt;
                p2 += 2;
            }
            if (oh > 23 || om > 59) return std::nullopt;
            offset = (c == '+' ? 1 : -1) * (oh * 3600 + om * 60);
            pos = p2;
        } else {
            return std::nullopt;
        }
    }
    if (pos != s.size()) return std::nullopt;

    const std::int64_t local = days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
    return local - offset;
}

inline std::string format_iso8601_utc(std::int64_t epoch_seconds) {
    int y, m, d;
    civil_from_days(floor_div(epoch_seconds, 86400), y, m, d);
    const int sod = seconds_of_day_utc(epoch_seconds);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", y, m, d, sod / 3600,
                  (sod / 60) % 60, sod % 60);
    return buf;
}

} // namespace msgblocks
