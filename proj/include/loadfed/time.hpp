#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace loadfed {

/// Wall-clock instant at minute resolution. Meter data lives on a half-hour grid.
using Timestamp = std::chrono::sys_time<std::chrono::minutes>;

inline constexpr std::chrono::minutes kHalfHour{30};

inline Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour = 0, int minute = 0) {
    using namespace std::chrono;
    return sys_days{std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day}} +
           hours{hour} + minutes{minute};
}

namespace detail {

inline bool parse_fixed_int(std::string_view s, int& out) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses "YYYY-MM-DD HH:MM:SS" with an optional all-zero fractional part
/// (".0000000" as in the London smart-meter export). A 'T' separator is also
/// accepted. Only readings on the half-hour grid are valid.
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
    if (s.size() < 19) return std::nullopt;
    if (s[4] != '-' || s[7] != '-' || (s[10] != ' ' && s[10] != 'T') || s[13] != ':' || s[16] != ':')
        return std::nullopt;
    int y, mo, d, h, mi, sec;
    if (!detail::parse_fixed_int(s.substr(0, 4), y) || !detail::parse_fixed_int(s.substr(5, 2), mo) ||
        !detail::parse_fixed_int(s.substr(8, 2), d) || !detail::parse_fixed_int(s.substr(11, 2), h) ||
        !detail::parse_fixed_int(s.substr(14, 2), mi) || !detail::parse_fixed_int(s.substr(17, 2), sec))
        return std::nullopt;
    if (s.size() > 19) {
        if (s[19] != '.' || s.size() == 20) return std::nullopt;
        for (char c : s.substr(20))
            if (c != '0') return std::nullopt;
    }
    if (h > 23 || sec != 0 || (mi != 0 && mi != 30)) return std::nullopt;
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                    std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    return Timestamp{std::chrono::sys_days{ymd}} + std::chrono::hours{h} + std::chrono::minutes{mi};
}

inline std::string format_timestamp(Timestamp t) {
    using namespace std::chrono;
    auto day = floor<days>(t);
    year_month_day ymd{day};
    hh_mm_ss hms{t - day};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:00", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()));
    return buf;
}

/// Calendar month used as a reporting stratum.
struct YearMonth {
    int year = 0;
    unsigned month = 0;

    auto operator<=>(const YearMonth&) const = default;

    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u", year, month);
        return buf;
    }
};

inline YearMonth year_month_of(Timestamp t) {
    std::chrono::year_month_day ymd{std::chrono::floor<std::chrono::days>(t)};
    return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month())};
}

inline std::optional<YearMonth> parse_year_month(std::string_view s) {
    int y, m;
    if (s.size() != 7 || s[4] != '-' || !detail::parse_fixed_int(s.substr(0, 4), y) ||
        !detail::parse_fixed_int(s.substr(5, 2), m) || m < 1 || m > 12)
        return std::nullopt;
    return YearMonth{y, static_cast<unsigned>(m)};
}

}  // namespace loadfed
