// loadfed: federated short-term load forecasting experiments.
//
//   loadfed run CONFIG [--out DIR] [--seed N] [--lean] [--parallel-clusters N]
//   loadfed validate CONFIG
//   loadfed synth -o FILE [--households N] [--days D] [--seed S] ...
//   loadfed report PREDICTIONS.csv [-o DIR]
//
// Exit codes: 0 ok, 1 config error, 2 data error, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "loadfed/loadfed.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kRuntimeError = 3 };

int cmd_validate(const std::string& config_path) {
    const auto loaded = loadfed::load_config(config_path);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << loadfed::to_json(loaded.config).dump(2) << '\n';
    return kOk;
}

int cmd_run(const std::string& config_path, const std::optional<std::string>& out_dir,
            const std::optional<std::uint64_t>& seed, bool lean, std::size_t parallel_clusters) {
    auto loaded = loadfed::load_config(config_path);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << '\n';
    auto& cfg = loaded.config;
    if (out_dir) cfg.output_dir = *out_dir;
    if (seed) {
        cfg.seed = *seed;
        cfg.federation.seed = *seed;
        if (!cfg.data.synthetic_seed_set) cfg.data.synthetic.seed = *seed;
    }

    const auto summary = loadfed::run_experiment(cfg, {lean, parallel_clusters});
    for (const auto& w : summary.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "households: " << summary.households_in << " read, " << summary.households_kept
              << " kept after outlier filter, " << summary.households_used << " used; rows skipped: "
              << summary.rows_skipped << '\n';
    std::cout << "clusters: " << summary.clusters << '\n';
    if (summary.headline) {
        const auto& m = *summary.headline;
        std::cout << "test (one-step): n=" << m.n << " MAE=" << m.mae << " RMSE=" << m.rmse << " MAPE=" << m.mape
                  << "%\n";
    }
    if (summary.persistence)
        std::cout << "persistence baseline: RMSE=" << summary.persistence->rmse << " MAPE=" << summary.persistence->mape
                  << "%\n";
    std::cout << "output: " << cfg.output_dir.string() << " (" << summary.wall_seconds << " s)\n";
    return kOk;
}

int cmd_synth(const loadfed::SyntheticSpec& spec, const std::string& out_path) {
    const auto series = loadfed::generate_synthetic(spec);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) {
        std::cerr << "error: cannot write " << out_path << '\n';
        return kRuntimeError;
    }
    loadfed::write_meter_csv(out, series);
    std::cout << "wrote " << series.size() << " households x " << spec.days * 48 << " readings to " << out_path
              << '\n';
    return kOk;
}

int cmd_report(const std::string& predictions_path, const std::string& out_dir, double mape_epsilon) {
    std::ifstream in(predictions_path);
    if (!in) throw loadfed::DataError("cannot open " + predictions_path);
    std::vector<loadfed::LabeledPrediction> rows;
    try {
        rows = loadfed::read_predictions_csv(in);
    } catch (const std::runtime_error& e) {
        throw loadfed::DataError(predictions_path + ": " + e.what());
    }
    const auto reports = loadfed::report_from_predictions(rows, mape_epsilon);
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(std::filesystem::path(out_dir) / "metrics.csv", std::ios::binary);
    loadfed::write_metrics_csv(csv, reports);
    std::ofstream json(std::filesystem::path(out_dir) / "metrics.json", std::ios::binary);
    json << loadfed::metrics_json(reports).dump(2) << '\n';
    std::cout << "wrote " << reports.size() << " metric rows to " << out_dir << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated short-term residential load forecasting"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    bool lean = false;
    std::size_t parallel_clusters = 1;
    auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
    run->add_option("config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "Override output directory");
    run->add_option("--seed", seed, "Override the global seed");
    run->add_flag("--lean", lean, "Skip model checkpoints");
    run->add_option("--parallel-clusters", parallel_clusters, "Cluster federations to run concurrently")
        ->check(CLI::PositiveNumber);

    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "Print the fully resolved config without running");
    validate->add_option("config", validate_path, "Experiment config (JSON)")->required();

    loadfed::SyntheticSpec synth_spec;
    std::string synth_out;
    std::string synth_start;
    auto* synth = app.add_subcommand("synth", "Write a synthetic smart-meter CSV");
    synth->add_option("-o,--out", synth_out, "Output CSV path")->required();
    synth->add_option("--households", synth_spec.households, "Number of households")->check(CLI::PositiveNumber);
    synth->add_option("--days", synth_spec.days, "Days of half-hourly data")->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_spec.seed, "Profile seed");
    synth->add_option("--start", synth_start, "First timestamp, YYYY-MM-DD");
    synth->add_option("--noise", synth_spec.noise_amplitude, "Noise amplitude relative to household scale");
    synth->add_option("--seasonal", synth_spec.seasonal_amplitude, "Seasonal amplitude");

    std::string predictions_path;
    std::string report_out = ".";
    double mape_epsilon = loadfed::kDefaultMapeEpsilon;
    auto* report = app.add_subcommand("report", "Recompute stratified metrics from a predictions CSV");
    report->add_option("predictions", predictions_path, "predictions.csv written by run")->required();
    report->add_option("-o,--out", report_out, "Output directory");
    report->add_option("--mape-epsilon", mape_epsilon, "Actual values at or below this are excluded from MAPE");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfigError;
    }

    try {
        if (*run) return cmd_run(config_path, out_dir, seed, lean, parallel_clusters);
        if (*validate) return cmd_validate(validate_path);
        if (*synth) {
            if (!synth_start.empty()) {
                auto t = loadfed::parse_timestamp(synth_start.size() == 10 ? synth_start + " 00:00:00" : synth_start);
                if (!t) {
                    std::cerr << "error: --start must be YYYY-MM-DD\n";
                    return kConfigError;
                }
                synth_spec.start = *t;
            }
            return cmd_synth(synth_spec, synth_out);
        }
        if (*report) return cmd_report(predictions_path, report_out, mape_epsilon);
    } catch (const loadfed::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const loadfed::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kOk;
}
