#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "loadfed/clustering.hpp"
#include "loadfed/dataio.hpp"
#include "loadfed/eval.hpp"
#include "loadfed/fed.hpp"
#include "loadfed/features.hpp"
#include "loadfed/model_io.hpp"
#include "loadfed/nn.hpp"

#ifndef LOADFED_VERSION
#define LOADFED_VERSION "0.1.0"
#endif

namespace loadfed {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class RunMode { Federated, Centralized, Both };

inline std::string_view mode_name(RunMode m) {
    switch (m) {
        case RunMode::Federated: return "federated";
        case RunMode::Centralized: return "centralized";
        case RunMode::Both: return "both";
    }
    return "?";
}

struct DataSource {
    enum class Kind { Synthetic, Csv };
    Kind kind = Kind::Synthetic;
    std::filesystem::path csv_path;
    SyntheticSpec synthetic;
    bool synthetic_seed_set = false;  // otherwise follows the global seed
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    RunMode mode = RunMode::Federated;
    std::filesystem::path output_dir = "runs/latest";

    DataSource data;
    double outlier_low = kDefaultLowThreshold;
    double outlier_high = kDefaultHighThreshold;
    std::optional<Timestamp> split_boundary;
    double train_fraction = 0.6;  // used when no boundary is given
    std::size_t window = kDefaultWindow;
    std::size_t stride = 1;
    std::vector<std::size_t> hidden = {16, 8, 4};
    std::size_t k = 18;
    std::size_t kmeans_max_iters = 300;
    FederationConfig federation;
    std::size_t forecast_steps = 144;
    std::optional<Timestamp> forecast_start;
    double mape_epsilon = kDefaultMapeEpsilon;

    LayerSpec layer_spec() const {
        LayerSpec s;
        s.widths.push_back(window);
        s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
        s.widths.push_back(1);
        return s;
    }
};

struct LoadedConfig {
    ExperimentConfig config;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::optional<Timestamp> parse_config_time(std::string s) {
    if (s.size() == 10) s += " 00:00:00";
    return parse_timestamp(s);
}

/// Reads typed values out of a parsed config and reports problems against the
/// line where the offending key appears in the source text.
class ConfigReader {
public:
    ConfigReader(std::string source_name, std::string text)
        : name_(std::move(source_name)), text_(std::move(text)) {}

    [[noreturn]] void fail(std::string_view section, std::string_view key, const std::string& msg) const {
        std::string path = section.empty() ? std::string(key) : std::string(section) + "." + std::string(key);
        throw ConfigError(name_ + ":" + std::to_string(line_of(section, key)) + ": " + path + ": " + msg);
    }

    void check_keys(const nlohmann::json& obj, std::string_view section, const std::set<std::string>& known,
                    std::vector<std::string>& warnings) const {
        for (const auto& [key, value] : obj.items())
            if (!known.count(key))
                warnings.push_back(name_ + ":" + std::to_string(line_of(section, key)) + ": unknown key '" +
                                   (section.empty() ? key : std::string(section) + "." + key) + "' ignored");
    }

    template <typename T>
    void get(const nlohmann::json& obj, std::string_view section, const std::string& key, T& out) const {
        if (!obj.contains(key)) return;
        const auto& v = obj.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) fail(section, key, "expected a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
                fail(section, key, "expected a non-negative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) fail(section, key, "expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(section, key, "expected a string");
        }
        out = v.get<T>();
    }

    std::optional<Timestamp> get_time(const nlohmann::json& obj, std::string_view section, const std::string& key) const {
        if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
        std::string s;
        get(obj, section, key, s);
        auto t = parse_config_time(s);
        if (!t) fail(section, key, "expected \"YYYY-MM-DD[ HH:MM:SS]\" on the half-hour grid");
        return t;
    }

    const nlohmann::json& section(const nlohmann::json& root, const std::string& name) const {
        static const nlohmann::json empty = nlohmann::json::object();
        if (!root.contains(name)) return empty;
        if (!root.at(name).is_object()) fail("", name, "expected an object");
        return root.at(name);
    }

    int line_of(std::string_view section, std::string_view key) const {
        std::size_t from = 0;
        if (!section.empty()) {
            auto s = text_.find("\"" + std::string(section) + "\"");
            if (s != std::string::npos) from = s;
        }
        auto pos = text_.find("\"" + std::string(key) + "\"", from);
        if (pos == std::string::npos) pos = from;
        return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
    }

private:
    std::string name_;
    std::string text_;
};

}  // namespace detail

/// Parses a JSON experiment config. Missing keys take the defaults of
/// ExperimentConfig; unknown keys produce warnings.
inline LoadedConfig parse_config(const std::string& text, const std::string& source_name = "config") {
    nlohmann::json root;
    try {
        root = text.find_first_not_of(" \t\r\n") == std::string::npos ? nlohmann::json::object()
                                                                         : nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(source_name + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError(source_name + ":1: top level must be a JSON object");

    detail::ConfigReader rd(source_name, text);
    LoadedConfig out;
    auto& c = out.config;
    auto& w = out.warnings;

    rd.check_keys(root, "",
                  {"seed", "mode", "output_dir", "data", "outliers", "split", "window", "model", "clustering",
                   "federation", "forecast", "evaluation"},
                  w);
    rd.get(root, "", "seed", c.seed);
    if (root.contains("mode")) {
        std::string m;
        rd.get(root, "", "mode", m);
        if (m == "federated") c.mode = RunMode::Federated;
        else if (m == "centralized") c.mode = RunMode::Centralized;
        else if (m == "both") c.mode = RunMode::Both;
        else rd.fail("", "mode", "expected federated, centralized or both");
    }
    if (root.contains("output_dir")) {
        std::string d;
        rd.get(root, "", "output_dir", d);
        c.output_dir = d;
    }

    const auto& data = rd.section(root, "data");
    rd.check_keys(data, "data",
                  {"source", "csv_path", "households", "days", "seed", "start", "noise_amplitude", "seasonal_amplitude"}, w);
    if (data.contains("source")) {
        std::string s;
        rd.get(data, "data", "source", s);
        if (s == "synthetic") c.data.kind = DataSource::Kind::Synthetic;
        else if (s == "csv") c.data.kind = DataSource::Kind::Csv;
        else rd.fail("data", "source", "expected synthetic or csv");
    }
    if (data.contains("csv_path")) {
        std::string p;
        rd.get(data, "data", "csv_path", p);
        c.data.csv_path = p;
    }
    rd.get(data, "data", "households", c.data.synthetic.households);
    rd.get(data, "data", "days", c.data.synthetic.days);
    if (data.contains("seed")) {
        rd.get(data, "data", "seed", c.data.synthetic.seed);
        c.data.synthetic_seed_set = true;
    }
    if (auto t = rd.get_time(data, "data", "start")) c.data.synthetic.start = *t;
    rd.get(data, "data", "noise_amplitude", c.data.synthetic.noise_amplitude);
    rd.get(data, "data", "seasonal_amplitude", c.data.synthetic.seasonal_amplitude);

    const auto& outliers = rd.section(root, "outliers");
    rd.check_keys(outliers, "outliers", {"low", "high"}, w);
    rd.get(outliers, "outliers", "low", c.outlier_low);
    rd.get(outliers, "outliers", "high", c.outlier_high);

    const auto& split = rd.section(root, "split");
    rd.check_keys(split, "split", {"boundary", "train_fraction"}, w);
    c.split_boundary = rd.get_time(split, "split", "boundary");
    rd.get(split, "split", "train_fraction", c.train_fraction);

    const auto& window = rd.section(root, "window");
    rd.check_keys(window, "window", {"size", "stride"}, w);
    rd.get(window, "window", "size", c.window);
    rd.get(window, "window", "stride", c.stride);

    const auto& model = rd.section(root, "model");
    rd.check_keys(model, "model", {"hidden"}, w);
    if (model.contains("hidden")) {
        const auto& h = model.at("hidden");
        if (!h.is_array()) rd.fail("model", "hidden", "expected an array of widths");
        c.hidden.clear();
        for (const auto& v : h) {
            if (!v.is_number_integer() || v.get<long long>() < 1) rd.fail("model", "hidden", "widths must be >= 1");
            c.hidden.push_back(v.get<std::size_t>());
        }
    }

    const auto& clustering = rd.section(root, "clustering");
    rd.check_keys(clustering, "clustering", {"k", "max_iters"}, w);
    rd.get(clustering, "clustering", "k", c.k);
    rd.get(clustering, "clustering", "max_iters", c.kmeans_max_iters);

    auto& f = c.federation;
    const auto& fed = rd.section(root, "federation");
    rd.check_keys(fed, "federation",
                  {"rounds", "clients_per_round", "always_connected", "local_epochs", "batch", "client_lr", "server_lr",
                   "averaging", "convergence_epsilon", "convergence_patience", "threads"},
                  w);
    rd.get(fed, "federation", "rounds", f.rounds);
    if (fed.contains("clients_per_round")) {
        const auto& v = fed.at("clients_per_round");
        if (v.is_number_integer() && v.get<long long>() >= 0)
            f.clients_per_round = Participation::count(v.get<std::size_t>());
        else if (v.is_number_float())
            f.clients_per_round = Participation::fraction(v.get<double>());
        else
            rd.fail("federation", "clients_per_round", "expected an integer count or a fraction such as 0.105");
    }
    rd.get(fed, "federation", "always_connected", f.always_connected);
    rd.get(fed, "federation", "local_epochs", f.local_epochs);
    rd.get(fed, "federation", "batch", f.batch);
    rd.get(fed, "federation", "client_lr", f.client_lr);
    rd.get(fed, "federation", "server_lr", f.server_lr);
    if (fed.contains("averaging")) {
        std::string a;
        rd.get(fed, "federation", "averaging", a);
        if (a == "uniform") f.averaging = AveragingMode::Uniform;
        else if (a == "weighted") f.averaging = AveragingMode::Weighted;
        else rd.fail("federation", "averaging", "expected uniform or weighted");
    }
    rd.get(fed, "federation", "convergence_epsilon", f.convergence_epsilon);
    rd.get(fed, "federation", "convergence_patience", f.convergence_patience);
    rd.get(fed, "federation", "threads", f.threads);

    const auto& forecast = rd.section(root, "forecast");
    rd.check_keys(forecast, "forecast", {"steps", "start"}, w);
    rd.get(forecast, "forecast", "steps", c.forecast_steps);
    c.forecast_start = rd.get_time(forecast, "forecast", "start");

    const auto& evaluation = rd.section(root, "evaluation");
    rd.check_keys(evaluation, "evaluation", {"mape_epsilon"}, w);
    rd.get(evaluation, "evaluation", "mape_epsilon", c.mape_epsilon);

    // Semantic checks, reported against the offending key.
    if (c.k < 1) rd.fail("clustering", "k", "must be >= 1");
    if (c.window < 1) rd.fail("window", "size", "must be >= 1");
    if (c.stride < 1) rd.fail("window", "stride", "must be >= 1");
    if (!(c.outlier_low < c.outlier_high)) rd.fail("outliers", "low", "must be below outliers.high");
    if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) rd.fail("split", "train_fraction", "must be in (0, 1)");
    if (f.rounds < 1) rd.fail("federation", "rounds", "must be >= 1");
    if (f.local_epochs < 1) rd.fail("federation", "local_epochs", "must be >= 1");
    if (!(f.server_lr > 0.0)) rd.fail("federation", "server_lr", "must be positive");
    if (!(f.client_lr >= 0.0)) rd.fail("federation", "client_lr", "must be non-negative");
    if (f.clients_per_round.kind == Participation::Kind::Count && f.clients_per_round.value < 1)
        rd.fail("federation", "clients_per_round", "must be >= 1");
    if (f.clients_per_round.kind == Participation::Kind::Fraction &&
        !(f.clients_per_round.value > 0.0 && f.clients_per_round.value <= 1.0))
        rd.fail("federation", "clients_per_round", "fraction must be in (0, 1]");
    if (c.forecast_steps < 1) rd.fail("forecast", "steps", "must be >= 1");
    if (c.data.kind == DataSource::Kind::Synthetic && (c.data.synthetic.households < 1 || c.data.synthetic.days < 1))
        rd.fail("data", "households", "synthetic data needs households >= 1 and days >= 1");
    if (c.data.kind == DataSource::Kind::Csv) {
        if (c.data.csv_path.empty()) rd.fail("data", "csv_path", "required when data.source is csv");
        if (!std::filesystem::exists(c.data.csv_path))
            throw DataError(source_name + ":" + std::to_string(rd.line_of("data", "csv_path")) +
                            ": data.csv_path: file not found: " + c.data.csv_path.string());
    }
    if (!c.data.synthetic_seed_set) c.data.synthetic.seed = c.seed;
    f.seed = c.seed;
    f.spec = c.layer_spec();
    return out;
}

inline LoadedConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

/// Fully resolved configuration, defaults included.
inline nlohmann::json to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    const auto& f = c.federation;
    json data = {{"source", c.data.kind == DataSource::Kind::Csv ? "csv" : "synthetic"}};
    if (c.data.kind == DataSource::Kind::Csv) {
        data["csv_path"] = c.data.csv_path.string();
    } else {
        data["households"] = c.data.synthetic.households;
        data["days"] = c.data.synthetic.days;
        data["seed"] = c.data.synthetic.seed;
        data["start"] = format_timestamp(c.data.synthetic.start);
        data["noise_amplitude"] = c.data.synthetic.noise_amplitude;
        data["seasonal_amplitude"] = c.data.synthetic.seasonal_amplitude;
    }
    json participation = f.clients_per_round.kind == Participation::Kind::Count
                             ? json(static_cast<std::size_t>(f.clients_per_round.value))
                             : json(f.clients_per_round.value);
    return {
        {"seed", c.seed},
        {"mode", mode_name(c.mode)},
        {"output_dir", c.output_dir.string()},
        {"data", data},
        {"outliers", {{"low", c.outlier_low}, {"high", c.outlier_high}}},
        {"split",
         {{"boundary", c.split_boundary ? json(format_timestamp(*c.split_boundary)) : json(nullptr)},
          {"train_fraction", c.train_fraction}}},
        {"window", {{"size", c.window}, {"stride", c.stride}}},
        {"model", {{"hidden", c.hidden}, {"layers", c.layer_spec().widths},
                   {"parameters", parameter_count(c.layer_spec())}, {"macs_per_forward", count_ops(c.layer_spec())}}},
        {"clustering", {{"k", c.k}, {"max_iters", c.kmeans_max_iters}}},
        {"federation",
         {{"rounds", f.rounds},
          {"clients_per_round", participation},
          {"always_connected", f.always_connected},
          {"local_epochs", f.local_epochs},
          {"batch", f.batch},
          {"client_lr", f.client_lr},
          {"server_lr", f.server_lr},
          {"averaging", f.averaging == AveragingMode::Weighted ? "weighted" : "uniform"},
          {"convergence_epsilon", f.convergence_epsilon},
          {"convergence_patience", f.convergence_patience},
          {"threads", f.threads}}},
        {"forecast",
         {{"steps", c.forecast_steps},
          {"start", c.forecast_start ? json(format_timestamp(*c.forecast_start)) : json(nullptr)}}},
        {"evaluation", {{"mape_epsilon", c.mape_epsilon}}},
    };
}

inline std::string fnv1a_hex(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Pipeline

struct RunOptions {
    bool lean = false;                  // skip model checkpoints
    std::size_t parallel_clusters = 1;  // cluster federations run concurrently
};

struct RunSummary {
    std::size_t households_in = 0;
    std::size_t households_kept = 0;
    std::size_t rows_skipped = 0;
    std::size_t households_used = 0;
    std::size_t clusters = 0;
    std::optional<MetricsReport> headline;     // grand row of metrics.csv
    std::optional<MetricsReport> persistence;  // naive baseline, same windows
    double wall_seconds = 0.0;
    std::vector<std::string> warnings;
};

namespace detail {

struct Household {
    std::string id;
    HouseholdStats train_stats;
    Normalizer normalizer;
    WindowSet train;      // normalized
    WindowSet test_raw;   // kWh
    MeterSeries test;     // for rolling forecasts
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << s;
}

inline std::vector<MeterSeries> load_series(const ExperimentConfig& cfg, RunSummary& summary) {
    if (cfg.data.kind == DataSource::Kind::Synthetic) return generate_synthetic(cfg.data.synthetic);
    std::ifstream in(cfg.data.csv_path);
    if (!in) throw DataError("cannot open data file " + cfg.data.csv_path.string());
    try {
        auto parsed = parse_meter_csv(in);
        summary.rows_skipped = parsed.rows_skipped;
        if (parsed.duplicates_replaced)
            summary.warnings.push_back(std::to_string(parsed.duplicates_replaced) + " duplicate timestamps replaced");
        return std::move(parsed.series);
    } catch (const SchemaError& e) {
        throw DataError(cfg.data.csv_path.string() + ": " + e.what());
    }
}

inline Timestamp auto_boundary(const std::vector<MeterSeries>& all, double fraction) {
    Timestamp lo = Timestamp::max(), hi = Timestamp::min();
    for (const auto& s : all) {
        lo = std::min(lo, s.readings.front().timestamp);
        hi = std::max(hi, s.readings.back().timestamp);
    }
    const auto steps = (hi - lo) / kHalfHour;
    return lo + static_cast<long long>(std::floor(fraction * static_cast<double>(steps))) * kHalfHour;
}

struct ClusterOutcome {
    std::optional<FederationResult> fed;
    std::optional<CentralizedResult> central;
};

}  // namespace detail

/// ingest -> filter -> split -> window -> cluster -> train -> evaluate, writing
/// every artifact into cfg.output_dir.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
    namespace fs = std::filesystem;
    using nlohmann::json;
    const auto t_start = std::chrono::steady_clock::now();
    RunSummary summary;
    const fs::path out = cfg.output_dir;
    fs::create_directories(out);

    // Ingest and filter.
    auto series = detail::load_series(cfg, summary);
    summary.households_in = series.size();
    auto partition = filter_outliers(std::move(series), cfg.outlier_low, cfg.outlier_high);
    summary.households_kept = partition.kept.size();
    detail::write_text(out / "audit.json", json{{"households_in", summary.households_in},
                                                {"households_kept", summary.households_kept},
                                                {"rows_skipped", summary.rows_skipped}}
                                               .dump(2) + "\n");
    if (partition.kept.empty()) throw DataError("no households left after outlier filtering");

    // Split and window.
    const Timestamp boundary =
        cfg.split_boundary ? *cfg.split_boundary : detail::auto_boundary(partition.kept, cfg.train_fraction);
    std::vector<detail::Household> homes;
    for (const auto& s : partition.kept) {
        SplitSeries split;
        try {
            split = chronological_split(s, boundary);
        } catch (const std::domain_error&) {
            summary.warnings.push_back(s.household_id + ": split boundary outside its data range, dropped");
            continue;
        }
        auto train_raw = make_windows(split.train, cfg.window, cfg.stride);
        auto test_raw = make_windows(split.test, cfg.window, cfg.stride);
        if (train_raw.empty() || test_raw.empty()) {
            summary.warnings.push_back(s.household_id + ": not enough gap-free data for a window, dropped");
            continue;
        }
        const auto norm = fit_normalizer(train_raw);
        homes.push_back({s.household_id, compute_stats(split.train), norm, normalize(train_raw, norm),
                         std::move(test_raw), std::move(split.test)});
    }
    summary.households_used = homes.size();
    if (homes.empty()) throw DataError("no household has both training and test windows");
    if (cfg.k > homes.size())
        throw DataError("clustering.k = " + std::to_string(cfg.k) + " exceeds the " + std::to_string(homes.size()) +
                        " usable households");

    // Cluster on training-period statistics.
    std::vector<FeatureVector> features;
    for (const auto& h : homes) features.push_back(to_features(h.train_stats));
    std::vector<std::size_t> labels(homes.size(), 0);
    if (cfg.k > 1) {
        auto z = standardize<5>(features);
        auto assignment = kmeans<5>(z.points, {cfg.k, derive_seed(cfg.seed, {0x636c7573ULL}), cfg.kmeans_max_iters});
        labels = assignment.labels;
    }
    summary.clusters = cfg.k;
    {
        std::ostringstream csv;
        csv << "household_id,cluster_id\n";
        for (std::size_t i = 0; i < homes.size(); ++i) csv << homes[i].id << ',' << labels[i] << '\n';
        detail::write_text(out / "clusters.csv", csv.str());
    }
    std::vector<std::vector<std::size_t>> members(cfg.k);
    for (std::size_t i = 0; i < homes.size(); ++i) members[labels[i]].push_back(i);

    // Train every cluster independently.
    const bool run_fed = cfg.mode != RunMode::Centralized;
    const bool run_central = cfg.mode != RunMode::Federated;
    std::vector<detail::ClusterOutcome> outcomes(cfg.k);
    std::vector<std::vector<std::string>> cluster_warnings(cfg.k);
    parallel_for(cfg.k, opts.parallel_clusters, [&](std::size_t c) {
        const fs::path dir = out / ("cluster_" + std::to_string(c));
        fs::create_directories(dir);
        std::vector<ClientData> clients;
        for (std::size_t i : members[c]) clients.push_back({homes[i].id, homes[i].train});

        FederationConfig fc = cfg.federation;
        fc.spec = cfg.layer_spec();
        fc.seed = derive_seed(cfg.seed, {0x66656465ULL, c});
        if (fc.clients_per_round.kind == Participation::Kind::Count && fc.clients_per_round.value > clients.size()) {
            cluster_warnings[c].push_back("cluster " + std::to_string(c) + ": clients_per_round capped at cluster size " +
                                          std::to_string(clients.size()));
            fc.clients_per_round = Participation::count(clients.size());
        }
        const std::size_t per_round = fc.clients_per_round.resolve(clients.size());
        if (fc.always_connected > per_round) {
            cluster_warnings[c].push_back("cluster " + std::to_string(c) + ": always_connected capped at " +
                                          std::to_string(per_round));
            fc.always_connected = per_round;
        }

        if (run_fed) {
            std::ofstream log(dir / "rounds.jsonl", std::ios::binary);
            FederationHooks hooks;
            hooks.on_round = [&](const GlobalModel& g, const RoundReport& r) {
                log << json{{"round", r.round},
                            {"participants", r.participants},
                            {"local_losses", r.local_losses},
                            {"global_loss", r.global_loss},
                            {"wall_seconds", r.wall_seconds}}
                           .dump()
                    << '\n';
                if (!opts.lean) save_model(dir / ("round_" + std::to_string(r.round) + ".model"), g.params, fc.seed, g.round);
            };
            outcomes[c].fed = run_federation(clients, fc, hooks);
        }
        if (run_central) {
            outcomes[c].central = run_centralized(clients, fc);
            std::ostringstream csv;
            csv << "epoch,loss\n";
            for (std::size_t e = 0; e < outcomes[c].central->epoch_losses.size(); ++e)
                csv << e << ',' << format_double(outcomes[c].central->epoch_losses[e]) << '\n';
            detail::write_text(dir / "centralized_epochs.csv", csv.str());
            if (!opts.lean) save_model(dir / "centralized.model", outcomes[c].central->model.params, fc.seed, fc.rounds);
        }
    });
    for (auto& w : cluster_warnings) summary.warnings.insert(summary.warnings.end(), w.begin(), w.end());

    // Household types from participation.
    std::map<std::string, std::size_t> cluster_of;
    std::map<std::string, HouseholdType> type_of;
    for (std::size_t c = 0; c < cfg.k; ++c) {
        std::vector<double> means;
        for (std::size_t i : members[c]) means.push_back(homes[i].train_stats.mean_hh);
        const double median = means.empty() ? 0.0 : median_of(means);
        for (std::size_t i : members[c]) {
            cluster_of[homes[i].id] = c;
            if (outcomes[c].fed) {
                const auto& fr = *outcomes[c].fed;
                const auto it = std::find_if(fr.clients.begin(), fr.clients.end(),
                                             [&](const ClientState& s) { return s.household_id == homes[i].id; });
                type_of[homes[i].id] = classify_household(it->rounds_participated.size(), fr.rounds.size(),
                                                          homes[i].train_stats.mean_hh, median);
            } else {
                type_of[homes[i].id] = HouseholdType::AllUpdates;
            }
        }
    }

    // Predictions.
    std::vector<LabeledPrediction> fed_local, fed_global, central, naive;
    for (std::size_t c = 0; c < cfg.k; ++c) {
        for (std::size_t i : members[c]) {
            const auto& h = homes[i];
            const auto type = type_of[h.id];
            auto label = [&](std::vector<PredictionRecord> recs, std::vector<LabeledPrediction>& into) {
                for (auto& r : recs) into.push_back({std::move(r), c, type});
            };
            if (outcomes[c].fed) {
                const auto& fr = *outcomes[c].fed;
                const auto it = std::find_if(fr.clients.begin(), fr.clients.end(),
                                             [&](const ClientState& s) { return s.household_id == h.id; });
                label(predict_one_step(it->local, h.normalizer, h.test_raw, h.id), fed_local);
                label(predict_one_step(fr.global.params, h.normalizer, h.test_raw, h.id), fed_global);
            }
            if (outcomes[c].central)
                label(predict_one_step(outcomes[c].central->model.params, h.normalizer, h.test_raw, h.id), central);
            label(persistence_one_step(h.test_raw, h.id), naive);
        }
    }

    json metrics_summary = json::object();
    auto emit = [&](const std::vector<LabeledPrediction>& rows, const std::string& stem, const std::string& key) {
        std::ostringstream pred;
        write_predictions_csv(pred, rows);
        detail::write_text(out / ("predictions" + stem + ".csv"), pred.str());
        const auto reports = report_from_predictions(rows, cfg.mape_epsilon);
        std::ostringstream csv;
        write_metrics_csv(csv, reports);
        detail::write_text(out / ("metrics" + stem + ".csv"), csv.str());
        metrics_summary[key] = metrics_json(reports)["grand"];
        return reports;
    };
    std::vector<MetricsReport> headline;
    if (run_fed) {
        headline = emit(fed_local, "", "federated_local");
        emit(fed_global, "_global", "federated_global");
        if (run_central) emit(central, "_centralized", "centralized");
    } else {
        headline = emit(central, "", "centralized");
    }
    {
        std::vector<PredictionRecord> recs;
        for (const auto& p : naive) recs.push_back(p.record);
        MetricsReport m;
        m.n = recs.size();
        m.mae = mae(recs);
        m.rmse = rmse(recs);
        try {
            const auto mp = mape(recs, cfg.mape_epsilon);
            m.mape = mp.value;
            m.mape_excluded = mp.excluded;
        } catch (const std::domain_error&) {
            m.mape_excluded = recs.size();
        }
        summary.persistence = m;
        metrics_summary["persistence"] = {{"n", m.n}, {"mae", m.mae}, {"rmse", m.rmse},
                                          {"mape", std::isnan(m.mape) ? json(nullptr) : json(m.mape)}};
    }
    summary.headline = headline.back();
    if (cfg.data.kind == DataSource::Kind::Csv) {
        // Real meter data: compare against the published averages.
        const auto deviations = reference_deviations(*summary.headline);
        for (const auto& d : deviations) summary.warnings.push_back("regression: " + d);
        metrics_summary["reference_check"] = {{"rmse", ReferenceMetrics{}.rmse},
                                              {"mape", ReferenceMetrics{}.mape},
                                              {"within_tolerance", deviations.empty()},
                                              {"deviations", deviations}};
    }
    detail::write_text(out / "metrics.json", metrics_summary.dump(2) + "\n");

    // Federated vs centralized RMSE per cluster and month.
    if (run_fed && run_central) {
        std::map<std::string, HouseholdType> flat;
        for (const auto& [id, t] : type_of) flat[id] = HouseholdType::AllUpdates;
        auto per_cluster_month = [&](const std::vector<LabeledPrediction>& rows) {
            std::vector<PredictionRecord> recs;
            for (const auto& p : rows) recs.push_back(p.record);
            std::map<std::pair<std::size_t, YearMonth>, double> m;
            for (const auto& r : stratified_report(recs, cluster_of, flat, cfg.mape_epsilon))
                if (r.cluster) m[{*r.cluster, *r.month}] = r.rmse;
            return m;
        };
        const auto f = per_cluster_month(fed_global);
        const auto ce = per_cluster_month(central);
        std::ostringstream csv;
        csv << "cluster,month,federated_rmse,centralized_rmse\n";
        for (const auto& [key, v] : f)
            csv << key.first << ',' << key.second.str() << ',' << format_double(v) << ','
                << format_double(ce.at(key)) << '\n';
        detail::write_text(out / "comparison.csv", csv.str());
    }

    // Rolling multi-step forecasts from the forecasting model of each cluster.
    {
        std::ostringstream csv;
        csv << "cluster,household_id,timestamp,actual,predicted\n";
        for (std::size_t c = 0; c < cfg.k; ++c) {
            const ModelParams* model = outcomes[c].fed ? &outcomes[c].fed->global.params
                                                       : &outcomes[c].central->model.params;
            for (std::size_t i : members[c]) {
                const auto& h = homes[i];
                const auto& r = h.test.readings;
                std::size_t start = cfg.window;
                if (cfg.forecast_start) {
                    auto it = std::find_if(r.begin(), r.end(), [&](const MeterReading& m) {
                        return m.timestamp == *cfg.forecast_start;
                    });
                    if (it == r.end() || static_cast<std::size_t>(it - r.begin()) < cfg.window) continue;
                    start = static_cast<std::size_t>(it - r.begin());
                }
                if (start >= r.size()) continue;
                bool gap_free = true;
                for (std::size_t j = start - cfg.window + 1; j <= start && gap_free; ++j)
                    gap_free = r[j].timestamp - r[j - 1].timestamp == kHalfHour;
                if (!gap_free) continue;
                std::size_t steps = 0;
                while (steps < cfg.forecast_steps && start + steps < r.size() &&
                       (steps == 0 || r[start + steps].timestamp - r[start + steps - 1].timestamp == kHalfHour))
                    ++steps;
                std::vector<double> seed_window;
                for (std::size_t j = start - cfg.window; j < start; ++j) seed_window.push_back(r[j].kwh);
                const auto pred = rolling_forecast(*model, h.normalizer, seed_window, steps);
                for (std::size_t s = 0; s < steps; ++s)
                    csv << c << ',' << h.id << ',' << format_timestamp(r[start + s].timestamp) << ','
                        << format_double(r[start + s].kwh) << ',' << format_double(pred[s]) << '\n';
            }
        }
        detail::write_text(out / "forecast.csv", csv.str());
    }

    summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    const auto resolved = to_json(cfg);
    json manifest = {{"code_version", LOADFED_VERSION},
                     {"config_hash", fnv1a_hex(resolved.dump())},
                     {"config", resolved},
                     {"split_boundary", format_timestamp(boundary)},
                     {"households_used", summary.households_used},
                     {"lean", opts.lean},
                     {"wall_seconds", summary.wall_seconds},
                     {"warnings", summary.warnings}};
    detail::write_text(out / "manifest.json", manifest.dump(2) + "\n");
    return summary;
}

}  // namespace loadfed
