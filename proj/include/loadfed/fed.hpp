#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "loadfed/features.hpp"
#include "loadfed/nn.hpp"
#include "loadfed/random.hpp"

namespace loadfed {

/// How many cluster members train in a round: an absolute count or a fraction
/// of the cluster (floored, at least one).
struct Participation {
    enum class Kind { Count, Fraction };
    Kind kind = Kind::Fraction;
    double value = 0.105;

    static Participation count(std::size_t n) { return {Kind::Count, static_cast<double>(n)}; }
    static Participation fraction(double f) { return {Kind::Fraction, f}; }

    std::size_t resolve(std::size_t cluster_size) const {
        if (kind == Kind::Count) return static_cast<std::size_t>(value);
        if (!(value > 0.0 && value <= 1.0)) throw std::invalid_argument("participation fraction must be in (0, 1]");
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(value * static_cast<double>(cluster_size))));
    }
};

namespace detail {
inline constexpr std::uint64_t kSampleTag = 0x73616d706c65ULL;
inline constexpr std::uint64_t kAnchorTag = 0x616e63686f72ULL;
inline constexpr std::uint64_t kTrainTag = 0x747261696eULL;
}  // namespace detail

/// Picks `per_round` members for `round`: every anchored member, plus a uniform
/// draw without replacement from the rest, seeded by (seed, round). Returned in
/// member order.
inline std::vector<std::string> sample_clients(std::span<const std::string> members, std::size_t per_round,
                                               std::size_t round, std::uint64_t seed,
                                               std::span<const std::string> anchored = {}) {
    if (per_round > members.size())
        throw std::domain_error("sample_clients: " + std::to_string(per_round) + " clients requested from a cluster of " +
                                std::to_string(members.size()));
    if (anchored.size() > per_round) throw std::domain_error("sample_clients: more anchored clients than slots");

    std::vector<bool> take(members.size(), false);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (std::find(anchored.begin(), anchored.end(), members[i]) != anchored.end())
            take[i] = true;
        else
            pool.push_back(i);
    }
    const std::size_t draws = per_round - anchored.size();
    Rng rng(derive_seed(seed, {detail::kSampleTag, round}));
    for (std::size_t d = 0; d < draws; ++d) {
        const std::size_t j = d + rng.below(pool.size() - d);
        std::swap(pool[d], pool[j]);
        take[pool[d]] = true;
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < members.size(); ++i)
        if (take[i]) out.push_back(members[i]);
    return out;
}

/// Members that connect in every round, drawn once from the seed.
inline std::vector<std::string> choose_anchors(std::span<const std::string> members, std::size_t count,
                                               std::uint64_t seed) {
    if (count > members.size()) throw std::domain_error("choose_anchors: more anchors than members");
    std::vector<std::size_t> idx(members.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, {detail::kAnchorTag}));
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> out;
    for (std::size_t i : idx) out.push_back(members[i]);
    return out;
}

enum class AveragingMode { Uniform, Weighted };

/// Coordinate-wise mean of client models. Each coordinate is reduced over its
/// sorted values, so the result does not depend on client order, reproduces
/// identical inputs exactly, and stays within the inputs' [min, max].
inline ModelParams federated_average(std::span<const ModelParams> locals, std::span<const double> weights = {}) {
    if (locals.empty()) throw std::domain_error("federated_average: no local models");
    const auto& spec = locals.front().spec;
    for (const auto& m : locals)
        if (m.spec != spec || m.values.size() != locals.front().values.size())
            throw std::domain_error("federated_average: layer spec mismatch");
    const bool weighted = !weights.empty();
    if (weighted) {
        if (weights.size() != locals.size()) throw std::domain_error("federated_average: one weight per model");
        for (double w : weights)
            if (!(w > 0.0)) throw std::domain_error("federated_average: weights must be positive");
    }

    const std::size_t n = locals.size();
    ModelParams out{spec, std::vector<double>(locals.front().values.size())};
    std::vector<std::pair<double, double>> column(n);
    std::vector<double> sorted_weights(weights.begin(), weights.end());
    std::sort(sorted_weights.begin(), sorted_weights.end());
    double weight_total = 0.0;
    for (double w : sorted_weights) weight_total += w;

    for (std::size_t j = 0; j < out.values.size(); ++j) {
        for (std::size_t i = 0; i < n; ++i) column[i] = {locals[i].values[j], weighted ? weights[i] : 1.0};
        std::sort(column.begin(), column.end());
        const double lo = column.front().first, hi = column.back().first;
        double acc = 0.0;
        for (const auto& [x, w] : column) acc += w * (x - lo);
        const double mean = lo + acc / (weighted ? weight_total : static_cast<double>(n));
        out.values[j] = std::clamp(mean, lo, hi);
    }
    return out;
}

/// Server-held model W and the number of aggregations applied to it.
struct GlobalModel {
    ModelParams params;
    std::size_t round = 0;
};

/// W <- (1 - server_lr) W + server_lr * aggregate. Exact at server_lr 0 and 1.
inline GlobalModel server_update(const GlobalModel& global, const ModelParams& aggregate, double server_lr) {
    if (global.params.spec != aggregate.spec || global.params.values.size() != aggregate.values.size())
        throw std::domain_error("server_update: layer spec mismatch");
    GlobalModel next{global.params, global.round + 1};
    const double keep = 1.0 - server_lr;
    for (std::size_t j = 0; j < next.params.values.size(); ++j)
        next.params.values[j] = keep * global.params.values[j] + server_lr * aggregate.values[j];
    return next;
}

// ---------------------------------------------------------------------------
// Transfer audit

enum class Direction { ToServer, ToClient };
enum class PayloadKind { ModelParams, ScalarLoss };

struct TransferRecord {
    std::size_t round = 0;
    std::string client_id;
    Direction direction = Direction::ToServer;
    PayloadKind kind = PayloadKind::ModelParams;
    std::size_t length = 0;
    std::vector<double> values;  // filled only when the log captures payloads
};

/// Records every value that crosses the client/server boundary.
class TransferLog {
public:
    explicit TransferLog(bool capture_payloads = false) : capture_(capture_payloads) {}

    void record(std::size_t round, const std::string& client, Direction dir, const ModelParams& params) {
        add({round, client, dir, PayloadKind::ModelParams, params.values.size(),
             capture_ ? params.values : std::vector<double>{}});
    }
    void record(std::size_t round, const std::string& client, Direction dir, double loss) {
        add({round, client, dir, PayloadKind::ScalarLoss, 1, capture_ ? std::vector<double>{loss} : std::vector<double>{}});
    }

    std::vector<TransferRecord> records() const {
        std::lock_guard lock(mutex_);
        return records_;
    }

private:
    void add(TransferRecord r) {
        std::lock_guard lock(mutex_);
        records_.push_back(std::move(r));
    }

    bool capture_;
    mutable std::mutex mutex_;
    std::vector<TransferRecord> records_;
};

// ---------------------------------------------------------------------------
// Clients

/// One household's private training set: max-normalized windows of its
/// training segment.
struct ClientData {
    std::string household_id;
    WindowSet train;
};

struct LocalUpdate {
    ModelParams params;
    double loss = 0.0;
};

/// A household's device. Its windows never leave the object: callers exchange
/// model parameters and scalar losses only.
class ClientNode {
public:
    ClientNode(ClientData data, ModelParams initial)
        : id_(std::move(data.household_id)), data_(std::move(data.train)), samples_(data_.samples()),
          local_(std::move(initial)) {}

    const std::string& id() const { return id_; }
    std::size_t sample_count() const { return samples_.size(); }
    const ModelParams& local_model() const { return local_; }

    void receive(const ModelParams& global) { local_ = global; }

    LocalUpdate train(const TrainOptions& opt) {
        auto result = train_local(local_, samples_, opt);
        local_ = std::move(result.params);
        return {local_, result.final_epoch_loss};
    }

    double evaluate(const ModelParams& params) const { return mean_loss(params, samples_); }

private:
    std::string id_;
    WindowSet data_;
    std::vector<WindowSample> samples_;
    ModelParams local_;
};

/// Seed for a client's local training in a given round. Centralized training
/// uses client index 0 with the epoch as the round.
inline std::uint64_t local_training_seed(std::uint64_t seed, std::size_t round, std::size_t client_index) {
    return derive_seed(seed, {detail::kTrainTag, round, client_index});
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, count); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Orchestration

struct FederationConfig {
    LayerSpec spec = LayerSpec::forecaster();
    std::size_t rounds = 20;
    Participation clients_per_round = Participation::fraction(0.105);
    std::size_t always_connected = 0;  // members selected in every round
    std::size_t local_epochs = 1;
    std::size_t batch = 12;
    double client_lr = 0.01;
    double server_lr = 1.0;
    AveragingMode averaging = AveragingMode::Uniform;
    std::uint64_t seed = 0;
    double convergence_epsilon = 1e-4;  // <= 0 disables early stopping
    std::size_t convergence_patience = 3;
    std::size_t threads = 1;
};

struct ClientState {
    std::string household_id;
    std::size_t sample_count = 0;
    std::vector<std::size_t> rounds_participated;
    ModelParams local;
};

struct RoundReport {
    std::size_t round = 0;
    std::vector<std::string> participants;
    std::vector<double> local_losses;  // aligned with participants
    double global_loss = 0.0;          // aggregated model on the participants' data
    double wall_seconds = 0.0;
};

struct FederationResult {
    GlobalModel global;
    std::vector<RoundReport> rounds;
    std::vector<ClientState> clients;  // sorted by household_id
    bool stopped_early = false;
};

struct FederationHooks {
    TransferLog* transfers = nullptr;
    std::function<void(const GlobalModel&, const RoundReport&)> on_round;
};

namespace detail {

inline void check_cluster(std::vector<ClientData>& cluster) {
    if (cluster.empty()) throw std::domain_error("empty cluster");
    std::sort(cluster.begin(), cluster.end(),
              [](const ClientData& a, const ClientData& b) { return a.household_id < b.household_id; });
    for (const auto& c : cluster)
        if (c.train.empty()) throw std::domain_error("client " + c.household_id + " has no training windows");
}

}  // namespace detail

/// Federated training of one cluster. Each round: sample clients, broadcast W
/// to the selected clients only, train locally, average, apply the server step.
/// Unselected clients keep whatever local model they last trained.
inline FederationResult run_federation(std::vector<ClientData> cluster, const FederationConfig& cfg,
                                       const FederationHooks& hooks = {}) {
    detail::check_cluster(cluster);
    if (cfg.rounds < 1) throw std::invalid_argument("run_federation: rounds must be >= 1");
    if (!(cfg.server_lr > 0.0)) throw std::invalid_argument("run_federation: server_lr must be positive");
    cfg.spec.validate();

    GlobalModel global{init_params(cfg.spec, cfg.seed), 0};
    std::vector<ClientNode> nodes;
    std::vector<std::string> ids;
    for (auto& c : cluster) {
        ids.push_back(c.household_id);
        nodes.emplace_back(std::move(c), global.params);
    }
    const std::size_t per_round = cfg.clients_per_round.resolve(nodes.size());
    const auto anchors = choose_anchors(ids, cfg.always_connected, cfg.seed);

    std::vector<std::vector<std::size_t>> participated(nodes.size());
    FederationResult result;
    double previous_loss = 0.0;
    std::size_t stalled = 0;

    auto log_params = [&](std::size_t r, const std::string& id, Direction d, const ModelParams& p) {
        if (hooks.transfers) hooks.transfers->record(r, id, d, p);
    };
    auto log_loss = [&](std::size_t r, const std::string& id, double loss) {
        if (hooks.transfers) hooks.transfers->record(r, id, Direction::ToServer, loss);
    };

    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto selected_ids = sample_clients(ids, per_round, r, cfg.seed, anchors);
        std::vector<std::size_t> selected;
        for (const auto& id : selected_ids)
            selected.push_back(static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin()));

        for (std::size_t i : selected) {
            log_params(r, ids[i], Direction::ToClient, global.params);
            nodes[i].receive(global.params);
            participated[i].push_back(r);
        }

        std::vector<LocalUpdate> updates(selected.size());
        parallel_for(selected.size(), cfg.threads, [&](std::size_t k) {
            const std::size_t i = selected[k];
            TrainOptions opt{cfg.local_epochs, cfg.batch, cfg.client_lr, local_training_seed(cfg.seed, r, i)};
            updates[k] = nodes[i].train(opt);
        });

        std::vector<ModelParams> locals;
        std::vector<double> weights;
        RoundReport report;
        report.round = r;
        for (std::size_t k = 0; k < selected.size(); ++k) {
            const std::size_t i = selected[k];
            log_params(r, ids[i], Direction::ToServer, updates[k].params);
            log_loss(r, ids[i], updates[k].loss);
            report.participants.push_back(ids[i]);
            report.local_losses.push_back(updates[k].loss);
            locals.push_back(std::move(updates[k].params));
            weights.push_back(static_cast<double>(nodes[i].sample_count()));
        }

        const auto aggregate = cfg.averaging == AveragingMode::Weighted ? federated_average(locals, weights)
                                                                        : federated_average(locals);
        global = server_update(global, aggregate, cfg.server_lr);

        // Global loss: participants evaluate the new W on their own data and
        // report a scalar; their local models are untouched.
        std::vector<double> probe(selected.size());
        parallel_for(selected.size(), cfg.threads,
                     [&](std::size_t k) { probe[k] = nodes[selected[k]].evaluate(global.params); });
        double loss_sum = 0.0;
        for (std::size_t k = 0; k < selected.size(); ++k) {
            log_params(r, ids[selected[k]], Direction::ToClient, global.params);
            log_loss(r, ids[selected[k]], probe[k]);
            loss_sum += probe[k];
        }
        report.global_loss = loss_sum / static_cast<double>(selected.size());
        report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (hooks.on_round) hooks.on_round(global, report);
        result.rounds.push_back(std::move(report));

        if (cfg.convergence_epsilon > 0.0 && r > 0) {
            stalled = previous_loss - result.rounds.back().global_loss < cfg.convergence_epsilon ? stalled + 1 : 0;
            if (stalled >= cfg.convergence_patience) {
                result.stopped_early = r + 1 < cfg.rounds;
                previous_loss = result.rounds.back().global_loss;
                break;
            }
        }
        previous_loss = result.rounds.back().global_loss;
    }

    result.global = std::move(global);
    for (std::size_t i = 0; i < nodes.size(); ++i)
        result.clients.push_back({ids[i], nodes[i].sample_count(), participated[i], nodes[i].local_model()});
    return result;
}

struct CentralizedResult {
    GlobalModel model;
    std::vector<double> epoch_losses;
    std::size_t pooled_samples = 0;
};

/// Baseline: pool every client's windows on the server and train one model of
/// the same shape for cfg.rounds epochs.
inline CentralizedResult run_centralized(std::vector<ClientData> cluster, const FederationConfig& cfg) {
    detail::check_cluster(cluster);
    cfg.spec.validate();
    std::vector<WindowSample> pooled;
    for (const auto& c : cluster) {
        auto s = c.train.samples();
        pooled.insert(pooled.end(), s.begin(), s.end());
    }
    CentralizedResult out;
    out.pooled_samples = pooled.size();
    out.model = {init_params(cfg.spec, cfg.seed), 0};
    for (std::size_t e = 0; e < cfg.rounds; ++e) {
        TrainOptions opt{1, cfg.batch, cfg.client_lr, local_training_seed(cfg.seed, e, 0)};
        auto r = train_local(std::move(out.model.params), pooled, opt);
        out.model.params = std::move(r.params);
        out.model.round = e + 1;
        out.epoch_losses.push_back(r.final_epoch_loss);
    }
    return out;
}

}  // namespace loadfed
