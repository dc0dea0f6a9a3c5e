// Minimal library walk-through: synthetic households, one federation, and a
// comparison against the persistence forecaster.

#include <iostream>

#include "loadfed/loadfed.hpp"

int main() {
    using namespace loadfed;

    SyntheticSpec spec;
    spec.households = 8;
    spec.days = 56;
    spec.seed = 3;
    const auto series = generate_synthetic(spec);
    const Timestamp boundary = spec.start + std::chrono::days{42};

    std::vector<ClientData> clients;
    std::vector<PredictionRecord> model_preds, naive_preds;
    std::vector<Normalizer> norms;
    std::vector<WindowSet> tests;
    for (const auto& s : series) {
        auto split = chronological_split(s, boundary);
        auto train = make_windows(split.train);
        const auto norm = fit_normalizer(train);
        clients.push_back({s.household_id, normalize(train, norm)});
        norms.push_back(norm);
        tests.push_back(make_windows(split.test));
    }

    FederationConfig cfg;
    cfg.rounds = 20;
    cfg.clients_per_round = Participation::count(4);
    cfg.convergence_epsilon = 0.0;
    const auto result = run_federation(clients, cfg);
    for (const auto& r : result.rounds)
        std::cout << "round " << r.round << "  global loss " << r.global_loss << '\n';

    for (std::size_t i = 0; i < series.size(); ++i) {
        auto p = predict_one_step(result.global.params, norms[i], tests[i], series[i].household_id);
        auto n = persistence_one_step(tests[i], series[i].household_id);
        model_preds.insert(model_preds.end(), p.begin(), p.end());
        naive_preds.insert(naive_preds.end(), n.begin(), n.end());
    }
    std::cout << "federated RMSE   " << rmse(model_preds) << " kWh\n"
              << "persistence RMSE " << rmse(naive_preds) << " kWh\n";
}
