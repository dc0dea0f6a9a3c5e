#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "loadfed/dataio.hpp"

namespace loadfed {

inline constexpr std::size_t kDefaultWindow = 336;  // one week of half-hours

/// A supervised pair: `input` holds the window of consecutive readings and
/// `target` the reading right after it. The input is a view into the owning
/// WindowSet's buffer.
struct WindowSample {
    std::span<const double> input;
    double target = 0.0;
    Timestamp target_timestamp;
};

/// Sliding windows over one series segment. Windows share a single value
/// buffer, so stride-1 windowing stays linear in memory.
class WindowSet {
public:
    WindowSet() = default;

    WindowSet(std::vector<double> values, std::vector<Timestamp> times, std::size_t window,
              std::vector<std::size_t> starts)
        : data_(std::make_shared<Data>(Data{std::move(values), std::move(times)})),
          window_(window),
          starts_(std::move(starts)) {}

    std::size_t size() const { return starts_.size(); }
    bool empty() const { return starts_.empty(); }
    std::size_t window() const { return window_; }
    std::span<const std::size_t> starts() const { return starts_; }
    std::span<const double> values() const { return data_ ? std::span<const double>(data_->values) : std::span<const double>{}; }
    std::span<const Timestamp> times() const { return data_ ? std::span<const Timestamp>(data_->times) : std::span<const Timestamp>{}; }

    WindowSample operator[](std::size_t i) const {
        const std::size_t s = starts_[i];
        return {std::span<const double>(data_->values).subspan(s, window_), data_->values[s + window_],
                data_->times[s + window_]};
    }

    /// Views for training. They stay valid while this set (or a copy) lives.
    std::vector<WindowSample> samples() const {
        std::vector<WindowSample> out;
        out.reserve(size());
        for (std::size_t i = 0; i < size(); ++i) out.push_back((*this)[i]);
        return out;
    }

private:
    struct Data {
        std::vector<double> values;
        std::vector<Timestamp> times;
    };
    std::shared_ptr<const Data> data_;
    std::size_t window_ = 0;
    std::vector<std::size_t> starts_;
};

/// One sample per stride position whose window and target are gap-free
/// (consecutive readings exactly 30 minutes apart).
inline WindowSet make_windows(const MeterSeries& segment, std::size_t window = kDefaultWindow, std::size_t stride = 1) {
    if (window < 1 || stride < 1) throw std::invalid_argument("make_windows: window and stride must be >= 1");
    const auto& r = segment.readings;
    const std::size_t n = r.size();
    std::vector<double> values(n);
    std::vector<Timestamp> times(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = r[i].kwh;
        times[i] = r[i].timestamp;
    }
    // gaps_before[i] = number of gaps between readings 0..i
    std::vector<std::size_t> gaps_before(n, 0);
    for (std::size_t i = 1; i < n; ++i)
        gaps_before[i] = gaps_before[i - 1] + (times[i] - times[i - 1] > kHalfHour ? 1 : 0);

    std::vector<std::size_t> starts;
    for (std::size_t p = 0; p + window < n; p += stride)
        if (gaps_before[p + window] == gaps_before[p]) starts.push_back(p);
    return WindowSet(std::move(values), std::move(times), window, std::move(starts));
}

/// Per-household divisor mapping kWh into roughly [0, 1].
struct Normalizer {
    double scale = 1.0;

    double apply(double v) const { return v / scale; }
    double invert(double v) const { return v * scale; }

    std::vector<double> apply(std::span<const double> v) const {
        std::vector<double> out(v.begin(), v.end());
        for (double& x : out) x /= scale;
        return out;
    }
    std::vector<double> invert(std::span<const double> v) const {
        std::vector<double> out(v.begin(), v.end());
        for (double& x : out) x *= scale;
        return out;
    }
};

/// Scale = largest value covered by any training input or target; 1 when the
/// data is all zero.
inline Normalizer fit_normalizer(const WindowSet& samples) {
    if (samples.empty()) throw std::domain_error("fit_normalizer: no training samples");
    const auto v = samples.values();
    double mx = 0.0;
    std::size_t covered_until = 0;
    for (std::size_t s : samples.starts()) {
        const std::size_t from = std::max(s, covered_until);
        const std::size_t to = s + samples.window() + 1;
        for (std::size_t i = from; i < to; ++i) mx = std::max(mx, v[i]);
        covered_until = std::max(covered_until, to);
    }
    return {mx > 0.0 ? mx : 1.0};
}

inline Normalizer fit_normalizer(std::span<const WindowSample> samples) {
    if (samples.empty()) throw std::domain_error("fit_normalizer: no training samples");
    double mx = 0.0;
    for (const auto& s : samples) {
        for (double x : s.input) mx = std::max(mx, x);
        mx = std::max(mx, s.target);
    }
    return {mx > 0.0 ? mx : 1.0};
}

inline WindowSet normalize(const WindowSet& set, const Normalizer& n) {
    if (set.values().empty()) return set;
    std::vector<double> v(set.values().begin(), set.values().end());
    for (double& x : v) x = n.apply(x);
    return WindowSet(std::move(v), {set.times().begin(), set.times().end()}, set.window(),
                     {set.starts().begin(), set.starts().end()});
}

}  // namespace loadfed
