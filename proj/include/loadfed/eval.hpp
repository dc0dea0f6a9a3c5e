#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "loadfed/features.hpp"
#include "loadfed/nn.hpp"
#include "loadfed/text.hpp"
#include "loadfed/time.hpp"

namespace loadfed {

/// One forecast: X = actual kWh, Y = predicted kWh.
struct PredictionRecord {
    std::string household_id;
    Timestamp target_timestamp;
    double actual = 0.0;
    double predicted = 0.0;
};

inline constexpr double kDefaultMapeEpsilon = 1e-6;

inline double mae(std::span<const PredictionRecord> records) {
    if (records.empty()) throw std::domain_error("mae: no records");
    double s = 0.0;
    for (const auto& r : records) s += std::abs(r.actual - r.predicted);
    return s / static_cast<double>(records.size());
}

inline double rmse(std::span<const PredictionRecord> records) {
    if (records.empty()) throw std::domain_error("rmse: no records");
    double s = 0.0;
    for (const auto& r : records) s += (r.actual - r.predicted) * (r.actual - r.predicted);
    return std::sqrt(s / static_cast<double>(records.size()));
}

struct MapeResult {
    double value = 0.0;  // percent
    std::size_t excluded = 0;
};

/// Mean absolute percentage error over records with actual > epsilon; the rest
/// are excluded and counted.
inline MapeResult mape(std::span<const PredictionRecord> records, double epsilon = kDefaultMapeEpsilon) {
    if (records.empty()) throw std::domain_error("mape: no records");
    MapeResult out;
    double s = 0.0;
    std::size_t used = 0;
    for (const auto& r : records) {
        if (r.actual <= epsilon) {
            ++out.excluded;
            continue;
        }
        s += std::abs((r.actual - r.predicted) / r.actual);
        ++used;
    }
    if (used == 0) throw std::domain_error("mape: every record has a near-zero actual value");
    out.value = s / static_cast<double>(used) * 100.0;
    return out;
}

/// Iterated one-step forecast from a window of kWh readings: each prediction is
/// appended and the oldest value dropped. Returns kWh.
inline std::vector<double> rolling_forecast(const ModelParams& model, const Normalizer& norm,
                                            std::span<const double> seed_window, std::size_t steps) {
    if (steps < 1) throw std::invalid_argument("rolling_forecast: steps must be >= 1");
    std::vector<double> window = norm.apply(seed_window);
    Workspace ws(model.spec);
    std::vector<double> out;
    out.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const double y = forward(model, window, ws);
        out.push_back(norm.invert(y));
        std::rotate(window.begin(), window.begin() + 1, window.end());
        window.back() = y;
    }
    return out;
}

/// One-step predictions over every window of a raw (kWh) test set.
inline std::vector<PredictionRecord> predict_one_step(const ModelParams& model, const Normalizer& norm,
                                                      const WindowSet& raw, const std::string& household_id) {
    std::vector<PredictionRecord> out;
    out.reserve(raw.size());
    Workspace ws(model.spec);
    std::vector<double> scaled(raw.window());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto s = raw[i];
        for (std::size_t j = 0; j < scaled.size(); ++j) scaled[j] = norm.apply(s.input[j]);
        out.push_back({household_id, s.target_timestamp, s.target, norm.invert(forward(model, scaled, ws))});
    }
    return out;
}

/// Naive forecaster: the next half-hour equals the last observed one.
inline std::vector<PredictionRecord> persistence_one_step(const WindowSet& raw, const std::string& household_id) {
    std::vector<PredictionRecord> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto s = raw[i];
        out.push_back({household_id, s.target_timestamp, s.target, s.input.back()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratified reporting

enum class HouseholdType { AllUpdates, NonIidHigh, NonIidLow };

inline std::string_view type_name(HouseholdType t) {
    switch (t) {
        case HouseholdType::AllUpdates: return "All-updates";
        case HouseholdType::NonIidHigh: return "Non-iid-high";
        case HouseholdType::NonIidLow: return "Non-iid-low";
    }
    return "?";
}

inline std::optional<HouseholdType> parse_type(std::string_view s) {
    for (auto t : {HouseholdType::AllUpdates, HouseholdType::NonIidHigh, HouseholdType::NonIidLow})
        if (type_name(t) == s) return t;
    return std::nullopt;
}

/// Households that took part in every executed round are All-updates; the
/// others split on mean consumption against the cluster median.
inline HouseholdType classify_household(std::size_t rounds_participated, std::size_t rounds_run, double mean_hh,
                                        double cluster_median_mean) {
    if (rounds_participated >= rounds_run) return HouseholdType::AllUpdates;
    return mean_hh > cluster_median_mean ? HouseholdType::NonIidHigh : HouseholdType::NonIidLow;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw std::domain_error("median_of: empty");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Metrics for one stratum. An unset key means "all".
struct MetricsReport {
    std::optional<std::size_t> cluster;
    std::optional<HouseholdType> type;
    std::optional<YearMonth> month;
    std::size_t n = 0;
    double mae = 0.0;
    double rmse = 0.0;
    double mape = std::numeric_limits<double>::quiet_NaN();  // NaN when every actual is ~0
    std::size_t mape_excluded = 0;
};

namespace detail {

struct MetricAccumulator {
    std::size_t n = 0;
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    double ape_sum = 0.0;
    std::size_t ape_n = 0;
    std::size_t excluded = 0;

    void add(const PredictionRecord& r, double eps) {
        const double e = r.actual - r.predicted;
        ++n;
        abs_sum += std::abs(e);
        sq_sum += e * e;
        if (r.actual > eps) {
            ape_sum += std::abs(e / r.actual);
            ++ape_n;
        } else {
            ++excluded;
        }
    }

    MetricsReport finish() const {
        MetricsReport m;
        m.n = n;
        m.mae = abs_sum / static_cast<double>(n);
        m.rmse = std::sqrt(sq_sum / static_cast<double>(n));
        if (ape_n > 0) m.mape = ape_sum / static_cast<double>(ape_n) * 100.0;
        m.mape_excluded = excluded;
        return m;
    }
};

}  // namespace detail

/// Rows per (cluster, type, month), then pooled rows per month over all
/// clusters and types, then one pooled grand row.
inline std::vector<MetricsReport> stratified_report(std::span<const PredictionRecord> records,
                                                    const std::map<std::string, std::size_t>& clusters,
                                                    const std::map<std::string, HouseholdType>& types,
                                                    double mape_epsilon = kDefaultMapeEpsilon) {
    using Key = std::tuple<std::size_t, HouseholdType, YearMonth>;
    std::map<Key, detail::MetricAccumulator> strata;
    std::map<YearMonth, detail::MetricAccumulator> monthly;
    detail::MetricAccumulator grand;
    for (const auto& r : records) {
        const auto c = clusters.find(r.household_id);
        const auto t = types.find(r.household_id);
        if (c == clusters.end() || t == types.end())
            throw std::invalid_argument("stratified_report: no cluster/type label for " + r.household_id);
        const auto ym = year_month_of(r.target_timestamp);
        strata[{c->second, t->second, ym}].add(r, mape_epsilon);
        monthly[ym].add(r, mape_epsilon);
        grand.add(r, mape_epsilon);
    }
    std::vector<MetricsReport> out;
    for (const auto& [key, acc] : strata) {
        auto m = acc.finish();
        m.cluster = std::get<0>(key);
        m.type = std::get<1>(key);
        m.month = std::get<2>(key);
        out.push_back(m);
    }
    for (const auto& [ym, acc] : monthly) {
        auto m = acc.finish();
        m.month = ym;
        out.push_back(m);
    }
    if (grand.n > 0) out.push_back(grand.finish());
    return out;
}

inline void write_metrics_csv(std::ostream& out, std::span<const MetricsReport> reports) {
    out << "cluster,type,month,n,mae,rmse,mape,mape_excluded\n";
    for (const auto& m : reports) {
        out << (m.cluster ? std::to_string(*m.cluster) : "all") << ','
            << (m.type ? std::string(type_name(*m.type)) : "all") << ',' << (m.month ? m.month->str() : "all") << ','
            << m.n << ',' << format_double(m.mae) << ',' << format_double(m.rmse) << ',' << format_double(m.mape)
            << ',' << m.mape_excluded << '\n';
    }
}

// Published figures for the full smart-meter dataset and the tolerance a
// rerun on that data is allowed before it is flagged as a regression.
struct ReferenceMetrics {
    double rmse = 0.17;
    double mape = 22.01;
    double rmse_tolerance = 0.05;
    double mape_tolerance = 5.0;
};

/// Messages for each grand metric outside its tolerance; empty when within.
inline std::vector<std::string> reference_deviations(const MetricsReport& grand, const ReferenceMetrics& ref = {}) {
    std::vector<std::string> out;
    if (std::abs(grand.rmse - ref.rmse) > ref.rmse_tolerance)
        out.push_back("grand RMSE " + format_double(grand.rmse) + " deviates from reference " + format_double(ref.rmse) +
                      " by more than " + format_double(ref.rmse_tolerance));
    if (std::isnan(grand.mape) || std::abs(grand.mape - ref.mape) > ref.mape_tolerance)
        out.push_back("grand MAPE " + format_double(grand.mape) + "% deviates from reference " +
                      format_double(ref.mape) + "% by more than " + format_double(ref.mape_tolerance) + " points");
    return out;
}

inline nlohmann::json metrics_json(std::span<const MetricsReport> reports) {
    nlohmann::json rows = nlohmann::json::array();
    nlohmann::json grand = nullptr;
    for (const auto& m : reports) {
        nlohmann::json row = {{"cluster", m.cluster ? nlohmann::json(*m.cluster) : nlohmann::json("all")},
                              {"type", m.type ? std::string(type_name(*m.type)) : "all"},
                              {"month", m.month ? m.month->str() : "all"},
                              {"n", m.n},
                              {"mae", m.mae},
                              {"rmse", m.rmse},
                              {"mape", std::isnan(m.mape) ? nlohmann::json(nullptr) : nlohmann::json(m.mape)},
                              {"mape_excluded", m.mape_excluded}};
        if (!m.cluster && !m.type && !m.month) grand = row;
        rows.push_back(std::move(row));
    }
    return {{"grand", grand}, {"rows", rows}};
}

// ---------------------------------------------------------------------------
// Prediction files

/// A prediction record with the labels needed to re-stratify it later.
struct LabeledPrediction {
    PredictionRecord record;
    std::size_t cluster = 0;
    HouseholdType type = HouseholdType::AllUpdates;
};

inline void write_predictions_csv(std::ostream& out, std::span<const LabeledPrediction> rows) {
    out << "household_id,cluster,type,timestamp,actual,predicted\n";
    for (const auto& p : rows)
        out << p.record.household_id << ',' << p.cluster << ',' << type_name(p.type) << ','
            << format_timestamp(p.record.target_timestamp) << ',' << format_double(p.record.actual) << ','
            << format_double(p.record.predicted) << '\n';
}

inline std::vector<LabeledPrediction> read_predictions_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("predictions file is empty");
    if (trim(line) != "household_id,cluster,type,timestamp,actual,predicted")
        throw std::runtime_error("predictions file: unexpected header");
    std::vector<LabeledPrediction> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        auto fail = [&] { throw std::runtime_error("predictions file: bad row at line " + std::to_string(line_no)); };
        if (cells.size() != 6) fail();
        const auto cluster = parse_double(cells[1]);
        const auto type = parse_type(trim(cells[2]));
        const auto ts = parse_timestamp(trim(cells[3]));
        const auto actual = parse_double(cells[4]);
        const auto predicted = parse_double(cells[5]);
        if (!cluster || *cluster < 0 || !type || !ts || !actual || !predicted) fail();
        out.push_back({{std::string(trim(cells[0])), *ts, *actual, *predicted},
                       static_cast<std::size_t>(*cluster),
                       *type});
    }
    return out;
}

/// Re-stratifies labeled predictions (the `report` path).
inline std::vector<MetricsReport> report_from_predictions(std::span<const LabeledPrediction> rows,
                                                          double mape_epsilon = kDefaultMapeEpsilon) {
    std::vector<PredictionRecord> records;
    std::map<std::string, std::size_t> clusters;
    std::map<std::string, HouseholdType> types;
    for (const auto& p : rows) {
        records.push_back(p.record);
        clusters[p.record.household_id] = p.cluster;
        types[p.record.household_id] = p.type;
    }
    return stratified_report(records, clusters, types, mape_epsilon);
}

}  // namespace loadfed
