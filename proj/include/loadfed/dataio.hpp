#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "loadfed/random.hpp"
#include "loadfed/text.hpp"
#include "loadfed/time.hpp"

namespace loadfed {

enum class Tariff { Standard, Dynamic };

inline std::string_view tariff_code(Tariff t) { return t == Tariff::Standard ? "Std" : "ToU"; }

struct MeterReading {
    Timestamp timestamp;
    double kwh = 0.0;

    bool operator==(const MeterReading&) const = default;
};

/// One household's half-hourly consumption, strictly increasing in time.
struct MeterSeries {
    std::string household_id;
    Tariff tariff = Tariff::Standard;
    std::vector<MeterReading> readings;

    bool operator==(const MeterSeries&) const = default;
};

struct HouseholdStats {
    double mean_hh = 0.0;
    double median_hh = 0.0;
    double total = 0.0;
    double max_hh = 0.0;
    double min_hh = 0.0;
};

struct SplitSeries {
    MeterSeries train;
    MeterSeries test;
};

/// Header names for the four input columns. A header cell matches when it
/// starts with the configured name, so "KWH/hh (per half hour)" resolves to
/// "KWH/hh".
struct CsvSchema {
    std::string tag = "LCLid";
    std::string tariff = "stdorToU";
    std::string timestamp = "DateTime";
    std::string kwh = "KWH/hh";
};

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ParseResult {
    std::vector<MeterSeries> series;  // sorted by household_id
    std::size_t rows_read = 0;
    std::size_t rows_skipped = 0;
    std::size_t duplicates_replaced = 0;
    std::size_t warnings = 0;
};

namespace detail {

inline std::optional<Tariff> parse_tariff(std::string_view s) {
    s = trim(s);
    if (s == "Std") return Tariff::Standard;
    if (s == "ToU") return Tariff::Dynamic;
    return std::nullopt;
}

inline std::size_t find_column(const std::vector<std::string_view>& header, std::string_view name) {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (trim(header[i]).starts_with(name)) return i;
    throw SchemaError("missing column '" + std::string(name) + "' in CSV header");
}

}  // namespace detail

/// Reads the four-column smart-meter export. Rows whose timestamp or kWh value
/// cannot be parsed ("Null", off-grid times, negative values) are skipped and
/// counted. Duplicate timestamps within a household keep the last occurrence.
inline ParseResult parse_meter_csv(std::istream& in, const CsvSchema& schema = {}) {
    ParseResult result;
    std::string line;
    if (!std::getline(in, line) || trim(line).empty()) {
        ++result.warnings;
        return result;
    }
    const auto header = split_csv_line(line);
    const std::size_t c_tag = detail::find_column(header, schema.tag);
    const std::size_t c_tariff = detail::find_column(header, schema.tariff);
    const std::size_t c_time = detail::find_column(header, schema.timestamp);
    const std::size_t c_kwh = detail::find_column(header, schema.kwh);
    const std::size_t needed = std::max({c_tag, c_tariff, c_time, c_kwh}) + 1;

    std::map<std::string, MeterSeries, std::less<>> by_tag;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++result.rows_read;
        const auto cells = split_csv_line(line);
        if (cells.size() < needed) {
            ++result.rows_skipped;
            continue;
        }
        const auto tag = trim(cells[c_tag]);
        const auto tariff = detail::parse_tariff(cells[c_tariff]);
        const auto ts = parse_timestamp(trim(cells[c_time]));
        const auto kwh = parse_double(cells[c_kwh]);
        if (tag.empty() || !tariff || !ts || !kwh || *kwh < 0.0) {
            ++result.rows_skipped;
            continue;
        }
        auto it = by_tag.find(tag);
        if (it == by_tag.end()) {
            it = by_tag.emplace(std::string(tag), MeterSeries{std::string(tag), *tariff, {}}).first;
        }
        it->second.readings.push_back({*ts, *kwh});
    }

    for (auto& [tag, series] : by_tag) {
        auto& r = series.readings;
        std::stable_sort(r.begin(), r.end(),
                         [](const MeterReading& a, const MeterReading& b) { return a.timestamp < b.timestamp; });
        std::vector<MeterReading> dedup;
        dedup.reserve(r.size());
        for (const auto& reading : r) {
            if (!dedup.empty() && dedup.back().timestamp == reading.timestamp) {
                dedup.back() = reading;
                ++result.duplicates_replaced;
            } else {
                dedup.push_back(reading);
            }
        }
        r = std::move(dedup);
        result.series.push_back(std::move(series));
    }
    if (result.series.empty()) ++result.warnings;
    return result;
}

inline void write_meter_csv(std::ostream& out, std::span<const MeterSeries> all, const CsvSchema& schema = {}) {
    out << schema.tag << ',' << schema.tariff << ',' << schema.timestamp << ',' << schema.kwh << '\n';
    for (const auto& s : all)
        for (const auto& r : s.readings)
            out << s.household_id << ',' << tariff_code(s.tariff) << ',' << format_timestamp(r.timestamp) << ','
                << format_double(r.kwh) << '\n';
}

inline HouseholdStats compute_stats(std::span<const MeterReading> readings) {
    if (readings.empty()) throw std::domain_error("compute_stats: empty series");
    std::vector<double> v;
    v.reserve(readings.size());
    for (const auto& r : readings) v.push_back(r.kwh);

    HouseholdStats s;
    s.total = 0.0;
    for (double x : v) s.total += x;
    s.mean_hh = s.total / static_cast<double>(v.size());
    auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    s.min_hh = *mn;
    s.max_hh = *mx;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    s.median_hh = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    // Rounding in the running sum can push the mean a hair outside the range.
    s.mean_hh = std::clamp(s.mean_hh, s.min_hh, s.max_hh);
    return s;
}

inline HouseholdStats compute_stats(const MeterSeries& series) { return compute_stats(series.readings); }

struct OutlierPartition {
    std::vector<MeterSeries> kept;
    std::vector<MeterSeries> removed;
};

inline constexpr double kDefaultLowThreshold = 0.09;
inline constexpr double kDefaultHighThreshold = 1.35;

/// Keeps households whose mean half-hourly consumption lies in [low, high].
/// Empty series carry no evidence of use and are removed.
inline OutlierPartition filter_outliers(std::vector<MeterSeries> all, double low = kDefaultLowThreshold,
                                        double high = kDefaultHighThreshold) {
    if (!(low < high)) throw std::invalid_argument("filter_outliers: low threshold must be below high");
    OutlierPartition out;
    for (auto& s : all) {
        const bool keep = !s.readings.empty() && [&] {
            const double mean = compute_stats(s).mean_hh;
            return low <= mean && mean <= high;
        }();
        (keep ? out.kept : out.removed).push_back(std::move(s));
    }
    return out;
}

/// Readings strictly before `boundary` go to train, the rest to test. Both
/// sides must be non-empty.
inline SplitSeries chronological_split(const MeterSeries& series, Timestamp boundary) {
    const auto& r = series.readings;
    if (r.empty() || boundary <= r.front().timestamp || boundary > r.back().timestamp)
        throw std::domain_error("chronological_split: boundary outside series range for " + series.household_id);
    auto mid = std::lower_bound(r.begin(), r.end(), boundary,
                                [](const MeterReading& a, Timestamp t) { return a.timestamp < t; });
    SplitSeries out;
    out.train = {series.household_id, series.tariff, {r.begin(), mid}};
    out.test = {series.household_id, series.tariff, {mid, r.end()}};
    return out;
}

/// Desk-scale stand-in for the real meter dataset: daily cycle with an evening
/// peak, weekly modulation, seasonal trend, and bounded uniform noise.
struct SyntheticSpec {
    std::size_t households = 5;
    std::size_t days = 30;
    std::uint64_t seed = 0;
    Timestamp start = make_timestamp(2012, 1, 1);
    double noise_amplitude = 0.15;     // relative to household scale
    double seasonal_amplitude = 0.2;   // winter peak
};

inline std::vector<MeterSeries> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.households < 1 || spec.days < 1) throw std::invalid_argument("generate_synthetic: need households, days >= 1");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    constexpr std::size_t per_day = 48;
    constexpr std::size_t per_week = 7 * per_day;
    const std::size_t n = spec.days * per_day;

    std::vector<MeterSeries> out;
    out.reserve(spec.households);
    for (std::size_t h = 0; h < spec.households; ++h) {
        Rng rng(derive_seed(spec.seed, {h}));
        const double scale = rng.uniform(0.12, 0.7);
        const double daily_amp = rng.uniform(0.3, 0.7);
        const double phase_h = rng.uniform(-2.0, 2.0);
        const double peak_amp = rng.uniform(0.2, 0.8);
        const double weekly_amp = rng.uniform(0.0, 0.3);
        const Tariff tariff = rng.uniform01() < 0.2 ? Tariff::Dynamic : Tariff::Standard;

        char id[32];
        std::snprintf(id, sizeof id, "SYN%05zu", h + 1);
        MeterSeries s{id, tariff, {}};
        s.readings.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Timestamp t = spec.start + static_cast<int>(i) * kHalfHour;
            const double hour = static_cast<double>(i % per_day) / 2.0;
            double peak_dist = std::fmod(std::abs(hour - 19.0 - phase_h), 24.0);
            peak_dist = std::min(peak_dist, 24.0 - peak_dist);
            const double daily = 1.0 + daily_amp * std::sin(two_pi * (hour - 9.0 - phase_h) / 24.0) +
                                 peak_amp * std::exp(-peak_dist * peak_dist / 4.5);
            const double weekly =
                1.0 + weekly_amp * 0.5 * (1.0 - std::cos(two_pi * static_cast<double>(i % per_week) / per_week));
            double seasonal = 1.0;
            if (spec.seasonal_amplitude != 0.0) {
                const auto day = std::chrono::floor<std::chrono::days>(t);
                const std::chrono::year_month_day ymd{day};
                const auto jan1 = std::chrono::sys_days{ymd.year() / std::chrono::January / 1};
                const double doy = static_cast<double>((day - jan1).count());
                seasonal += spec.seasonal_amplitude * std::cos(two_pi * (doy - 15.0) / 365.25);
            }
            const double noise = spec.noise_amplitude * scale * rng.uniform(-1.0, 1.0);
            s.readings.push_back({t, std::max(0.0, scale * daily * weekly * seasonal + noise)});
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace loadfed
