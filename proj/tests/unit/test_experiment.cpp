#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "loadfed/experiment.hpp"

using namespace loadfed;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("loadfed_test_" + name);
    fs::remove_all(p);
    return p;
}

ExperimentConfig small_config(const fs::path& out) {
    auto loaded = parse_config(R"({
      "seed": 5,
      "mode": "both",
      "data": {"households": 6, "days": 21},
      "split": {"boundary": "2012-01-15"},
      "window": {"size": 48, "stride": 4},
      "clustering": {"k": 2},
      "federation": {"rounds": 3, "clients_per_round": 2, "convergence_epsilon": 0},
      "forecast": {"steps": 12}
    })");
    loaded.config.output_dir = out;
    return loaded.config;
}

}  // namespace

TEST(Config, EmptyGivesDefaults) {
    const auto c = parse_config("").config;
    EXPECT_EQ(c.k, 18u);
    EXPECT_EQ(c.window, 336u);
    EXPECT_EQ(c.hidden, (std::vector<std::size_t>{16, 8, 4}));
    EXPECT_EQ(parameter_count(c.layer_spec()), 5569u);
    EXPECT_EQ(c.federation.rounds, 20u);
    EXPECT_EQ(c.federation.batch, 12u);
    EXPECT_EQ(c.federation.server_lr, 1.0);
    EXPECT_EQ(c.federation.clients_per_round.kind, Participation::Kind::Fraction);
    EXPECT_EQ(c.federation.clients_per_round.value, 0.105);
    EXPECT_EQ(c.outlier_low, 0.09);
    EXPECT_EQ(c.outlier_high, 1.35);
    EXPECT_EQ(c.train_fraction, 0.6);

    const auto j = to_json(c);
    EXPECT_EQ(j["model"]["parameters"], 5569);
    EXPECT_EQ(j["clustering"]["k"], 18);
}

TEST(Config, KZeroIsLineLocatedError) {
    try {
        parse_config("{\n  \"clustering\": {\n    \"k\": 0\n  }\n}", "exp.json");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("exp.json:3: clustering.k"), std::string::npos) << e.what();
    }
}

TEST(Config, UnknownKeyWarns) {
    const auto loaded = parse_config("{\"federation\": {\"rounds\": 2, \"momentum\": 0.9}, \"colour\": 1}");
    EXPECT_EQ(loaded.config.federation.rounds, 2u);
    ASSERT_EQ(loaded.warnings.size(), 2u);
    EXPECT_NE(loaded.warnings[0].find("colour"), std::string::npos);
    EXPECT_NE(loaded.warnings[1].find("federation.momentum"), std::string::npos);
}

TEST(Config, TypeAndSyntaxErrors) {
    EXPECT_THROW(parse_config("{\"seed\": \"x\"}"), ConfigError);
    EXPECT_THROW(parse_config("{\"mode\": \"hybrid\"}"), ConfigError);
    EXPECT_THROW(parse_config("{\"federation\": {\"clients_per_round\": 1.5}}"), ConfigError);
    EXPECT_THROW(parse_config("{\"split\": {\"boundary\": \"2013-01-01 00:10:00\"}}"), ConfigError);
    EXPECT_THROW(parse_config("{\"seed\": 1,"), ConfigError);
    EXPECT_THROW(parse_config("[]"), ConfigError);
    EXPECT_THROW(parse_config("{\"data\": {\"source\": \"csv\", \"csv_path\": \"/nonexistent/x.csv\"}}"), DataError);
}

TEST(Config, ParticipationForms) {
    EXPECT_EQ(parse_config("{\"federation\": {\"clients_per_round\": 4}}").config.federation.clients_per_round.kind,
              Participation::Kind::Count);
    EXPECT_EQ(parse_config("{\"federation\": {\"clients_per_round\": 0.25}}").config.federation.clients_per_round.kind,
              Participation::Kind::Fraction);
}

TEST(RunExperiment, WritesArtifactsAndIsDeterministic) {
    const auto a = scratch("a"), b = scratch("b");
    const auto sa = run_experiment(small_config(a));
    run_experiment(small_config(b));

    for (const char* f : {"metrics.csv", "metrics.json", "predictions.csv", "comparison.csv", "forecast.csv",
                          "clusters.csv", "manifest.json", "audit.json", "metrics_global.csv", "metrics_centralized.csv"})
        EXPECT_TRUE(fs::exists(a / f)) << f;
    EXPECT_TRUE(fs::exists(a / "cluster_0" / "rounds.jsonl"));
    EXPECT_TRUE(fs::exists(a / "cluster_0" / "round_2.model"));
    EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
    EXPECT_EQ(slurp(a / "predictions.csv"), slurp(b / "predictions.csv"));

    ASSERT_TRUE(sa.headline);
    EXPECT_EQ(sa.clusters, 2u);
    EXPECT_GE(sa.headline->rmse, sa.headline->mae);

    // Manifest carries the resolved config.
    const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
    EXPECT_EQ(manifest["config"]["seed"], 5);
    EXPECT_EQ(manifest["config_hash"], fnv1a_hex(manifest["config"].dump()));

    // Round log: one JSON object per executed round.
    std::ifstream rounds(a / "cluster_0" / "rounds.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(rounds, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["round"], n);
        ++n;
    }
    EXPECT_EQ(n, 3u);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(RunExperiment, ReportRecomputesMetrics) {
    const auto dir = scratch("report");
    auto cfg = small_config(dir);
    cfg.mode = RunMode::Federated;
    RunOptions opts;
    opts.lean = true;
    run_experiment(cfg, opts);
    EXPECT_FALSE(fs::exists(dir / "cluster_0" / "round_0.model"));
    std::ifstream pred(dir / "predictions.csv");
    const auto rows = read_predictions_csv(pred);
    std::ostringstream csv;
    write_metrics_csv(csv, report_from_predictions(rows, cfg.mape_epsilon));
    EXPECT_EQ(csv.str(), slurp(dir / "metrics.csv"));
    fs::remove_all(dir);
}

TEST(RunExperiment, ParallelClustersMatchSequential) {
    const auto a = scratch("seq"), b = scratch("par");
    run_experiment(small_config(a));
    run_experiment(small_config(b), {false, 2});
    EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(RunExperiment, CsvInputFlagsReferenceDeviation) {
    const auto dir = scratch("csv");
    fs::create_directories(dir);
    SyntheticSpec spec;
    spec.households = 4;
    spec.days = 21;
    {
        std::ofstream out(dir / "meters.csv");
        write_meter_csv(out, generate_synthetic(spec));
    }
    auto cfg = small_config(dir / "run");
    cfg.data.kind = DataSource::Kind::Csv;
    cfg.data.csv_path = dir / "meters.csv";
    cfg.mode = RunMode::Federated;
    run_experiment(cfg);
    const auto metrics = nlohmann::json::parse(slurp(dir / "run" / "metrics.json"));
    ASSERT_TRUE(metrics.contains("reference_check"));
    EXPECT_EQ(metrics["reference_check"]["rmse"], 0.17);
    fs::remove_all(dir);
}
