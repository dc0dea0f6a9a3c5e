#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "loadfed/features.hpp"
#include "loadfed/random.hpp"

namespace loadfed {

/// Layer widths from input to output. Every layer, including the output, is
/// followed by a ReLU.
struct LayerSpec {
    std::vector<std::size_t> widths;

    /// The lightweight forecaster: input window followed by [16, 8, 4, 1].
    static LayerSpec forecaster(std::size_t input = kDefaultWindow) { return {{input, 16, 8, 4, 1}}; }

    std::size_t input_size() const { return widths.front(); }
    std::size_t layer_count() const { return widths.size() - 1; }

    void validate() const {
        if (widths.size() < 2) throw std::invalid_argument("LayerSpec: need at least an input and an output width");
        for (std::size_t w : widths)
            if (w < 1) throw std::invalid_argument("LayerSpec: widths must be >= 1");
        if (widths.back() != 1) throw std::invalid_argument("LayerSpec: output width must be 1");
    }

    bool operator==(const LayerSpec&) const = default;
};

/// Sum of (in + 1) * out over consecutive layers: weights plus biases.
inline std::size_t parameter_count(const LayerSpec& spec) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) n += (spec.widths[l] + 1) * spec.widths[l + 1];
    return n;
}

/// Multiply-accumulates in one forward pass; a hardware-independent cost proxy.
inline std::size_t count_ops(const LayerSpec& spec) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) n += spec.widths[l] * spec.widths[l + 1];
    return n;
}

/// Flat parameter vector. For each layer, the out x in weight matrix
/// (row-major, one row per output unit) is followed by the out biases.
struct ModelParams {
    LayerSpec spec;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    bool operator==(const ModelParams&) const = default;
};

inline ModelParams zero_params(const LayerSpec& spec) {
    spec.validate();
    return {spec, std::vector<double>(parameter_count(spec), 0.0)};
}

/// Glorot-uniform weights, zero biases. Attempt 0 is the plain draw for `seed`.
inline ModelParams glorot_params(const LayerSpec& spec, std::uint64_t seed, std::uint64_t attempt = 0) {
    ModelParams p = zero_params(spec);
    Rng rng(attempt == 0 ? derive_seed(seed, {0x696e6974ULL}) : derive_seed(seed, {0x696e6974ULL, attempt}));
    std::size_t off = 0;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t j = 0; j < in * out; ++j) p.values[off + j] = rng.uniform(-limit, limit);
        off += (in + 1) * out;
    }
    return p;
}

enum class LossKind { MSE };

/// Per-sample squared error.
inline double sample_loss(double prediction, double target) {
    const double e = prediction - target;
    return e * e;
}

/// Scratch buffers for one forward/backward pass; reuse across samples.
class Workspace {
public:
    explicit Workspace(const LayerSpec& spec) : spec_(spec) {
        for (std::size_t w : spec.widths) {
            act_.emplace_back(w, 0.0);
            pre_.emplace_back(w, 0.0);
            delta_.emplace_back(w, 0.0);
        }
    }

    const LayerSpec& spec() const { return spec_; }

private:
    friend double forward(const ModelParams&, std::span<const double>, Workspace&);
    friend double accumulate_gradient(const ModelParams&, std::span<const double>, double, std::span<double>,
                                      Workspace&);
    LayerSpec spec_;
    std::vector<std::vector<double>> act_;
    std::vector<std::vector<double>> pre_;
    std::vector<std::vector<double>> delta_;
};

inline double forward(const ModelParams& params, std::span<const double> input, Workspace& ws) {
    const auto& w = params.spec.widths;
    if (input.size() != w.front())
        throw std::domain_error("forward: input length " + std::to_string(input.size()) + " != " +
                                std::to_string(w.front()));
    std::copy(input.begin(), input.end(), ws.act_[0].begin());
    const double* p = params.values.data();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const std::size_t in = w[l], out = w[l + 1];
        const double* bias = p + in * out;
        const double* a = ws.act_[l].data();
        for (std::size_t o = 0; o < out; ++o) {
            const double* row = p + o * in;
            double z = bias[o];
            for (std::size_t i = 0; i < in; ++i) z += row[i] * a[i];
            ws.pre_[l + 1][o] = z;
            ws.act_[l + 1][o] = z > 0.0 ? z : 0.0;
        }
        p += (in + 1) * out;
    }
    return ws.act_.back()[0];
}

inline double forward(const ModelParams& params, std::span<const double> input) {
    Workspace ws(params.spec);
    return forward(params, input, ws);
}

// With non-negative inputs and a ReLU on every layer, roughly half of all
// Glorot draws map every input to exactly 0 and never receive a gradient.
// Redraw until a constant mid-range input gives a positive output.
inline constexpr double kInitProbeValue = 0.5;
inline constexpr std::uint64_t kMaxInitAttempts = 64;

inline ModelParams init_params(const LayerSpec& spec, std::uint64_t seed) {
    const std::vector<double> probe(spec.widths.front(), kInitProbeValue);
    for (std::uint64_t attempt = 0; attempt < kMaxInitAttempts; ++attempt) {
        ModelParams p = glorot_params(spec, seed, attempt);
        if (forward(p, probe) > 0.0) return p;
    }
    return glorot_params(spec, seed, 0);
}

/// Adds the gradient of the squared error for one sample into `grad` and
/// returns the sample loss. ReLU'(0) is taken as 0.
inline double accumulate_gradient(const ModelParams& params, std::span<const double> input, double target,
                                  std::span<double> grad, Workspace& ws) {
    const auto& w = params.spec.widths;
    const double pred = forward(params, input, ws);
    const std::size_t L = w.size() - 1;

    ws.delta_[L][0] = ws.pre_[L][0] > 0.0 ? 2.0 * (pred - target) : 0.0;

    // Parameter offsets per layer, walked from the back.
    std::size_t off = params.values.size();
    for (std::size_t l = L; l >= 1; --l) {
        const std::size_t in = w[l - 1], out = w[l];
        off -= (in + 1) * out;
        const double* W = params.values.data() + off;
        double* gW = grad.data() + off;
        double* gb = gW + in * out;
        const double* a = ws.act_[l - 1].data();
        const double* delta = ws.delta_[l].data();

        bool any = false;
        for (std::size_t o = 0; o < out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            any = true;
            double* row = gW + o * in;
            for (std::size_t i = 0; i < in; ++i) row[i] += d * a[i];
            gb[o] += d;
        }
        if (l == 1) break;
        double* prev = ws.delta_[l - 1].data();
        const double* z = ws.pre_[l - 1].data();
        if (!any) {
            std::fill(prev, prev + in, 0.0);
            continue;
        }
        for (std::size_t i = 0; i < in; ++i) {
            if (z[i] <= 0.0) {
                prev[i] = 0.0;
                continue;
            }
            double s = 0.0;
            for (std::size_t o = 0; o < out; ++o) s += W[o * in + i] * delta[o];
            prev[i] = s;
        }
    }
    return sample_loss(pred, target);
}

/// Exact gradient of the per-sample loss with respect to every parameter.
inline std::vector<double> backward(const ModelParams& params, std::span<const double> input, double target,
                                   LossKind = LossKind::MSE) {
    std::vector<double> grad(params.values.size(), 0.0);
    Workspace ws(params.spec);
    accumulate_gradient(params, input, target, grad, ws);
    return grad;
}

/// Mean per-sample loss over a dataset.
inline double mean_loss(const ModelParams& params, std::span<const WindowSample> samples) {
    if (samples.empty()) throw std::domain_error("mean_loss: no samples");
    Workspace ws(params.spec);
    double total = 0.0;
    for (const auto& s : samples) total += sample_loss(forward(params, s.input, ws), s.target);
    return total / static_cast<double>(samples.size());
}

struct TrainOptions {
    std::size_t epochs = 1;
    std::size_t batch = 12;  // 0 means full batch
    double lr = 0.01;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ModelParams params;
    double final_epoch_loss = 0.0;  // mean sample loss seen during the last epoch
};

/// Mini-batch SGD. Each epoch visits samples in an order shuffled from
/// (seed, epoch); the batch gradient is the mean per-sample gradient and the
/// trailing partial batch is used as-is.
inline TrainResult train_local(ModelParams params, std::span<const WindowSample> samples, const TrainOptions& opt) {
    if (samples.empty()) throw std::domain_error("train_local: no samples");
    if (opt.epochs == 0) {
        const double loss = mean_loss(params, samples);
        return {std::move(params), loss};
    }
    const std::size_t n = samples.size();
    const std::size_t batch = opt.batch == 0 ? n : std::min(opt.batch, n);
    Workspace ws(params.spec);
    std::vector<double> grad(params.values.size());
    std::vector<std::size_t> order(n);
    double epoch_loss = 0.0;

    for (std::size_t e = 0; e < opt.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(opt.seed, {e}));
        rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(start + batch, n);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = start; k < end; ++k) {
                const auto& s = samples[order[k]];
                loss_sum += accumulate_gradient(params, s.input, s.target, grad, ws);
            }
            const double step = opt.lr / static_cast<double>(end - start);
            for (std::size_t j = 0; j < grad.size(); ++j) params.values[j] -= step * grad[j];
        }
        epoch_loss = loss_sum / static_cast<double>(n);
    }
    return {std::move(params), epoch_loss};
}

}  // namespace loadfed
