#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "dhgcn/autodiff.hpp"
#include "dhgcn/errors.hpp"
#include "dhgcn/rng.hpp"
#include "dhgcn/tensor.hpp"

namespace dhgcn {

/// Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)].
inline Tensor fan_in_init(Shape shape, int fan_in, std::mt19937_64& rng) {
    double bound = std::sqrt(1.0 / fan_in);
    return uniform_tensor(std::move(shape), -bound, bound, rng);
}

/// Variance-preserving uniform init for leaky-ReLU stacks,
/// bound = sqrt(6 / ((1 + slope^2) * fan_in)). Plain fan-in init shrinks
/// activations roughly 3x per layer here, which stalls hop training at the
/// class prior; this keeps the forward signal at scale.
inline Tensor kaiming_init(Shape shape, int fan_in, double slope, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
    return uniform_tensor(std::move(shape), -bound, bound, rng);
}

/// SGD with momentum, weight decay and a per-step cosine learning schedule.
struct OptimizerState {
    double base_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    long step = 0;
    long total_steps = 1;
    std::vector<std::vector<double>> velocity;

    OptimizerState() = default;
    OptimizerState(const ParamStore& params, double lr, double mu, double wd, long total)
        : base_lr(lr), momentum(mu), weight_decay(wd), total_steps(total) {
        if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
        velocity.resize(params.size());
        for (int i = 0; i < params.size(); ++i)
            velocity[i].assign(params.value(i).data.size(), 0.0);
    }

    /// lr(t) = 0.5 * base * (1 + cos(pi * t / T)).
    double learning_rate() const { return learning_rate_at(step); }

    double learning_rate_at(long t) const {
        if (t > total_steps) t = total_steps;
        return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                                               static_cast<double>(total_steps)));
    }
};

/// v <- mu*v + (g + wd*p); p <- p - lr(t)*v. Zeroes gradients, advances step.
inline void sgd_step(ParamStore& params, OptimizerState& state) {
    if (static_cast<int>(state.velocity.size()) != params.size())
        throw ConfigError("optimizer state does not match parameter store");
    const double lr = state.learning_rate();
    for (int i = 0; i < params.size(); ++i) {
        Tensor& p = params.value(i);
        std::vector<double>& g = params.grad(i);
        std::vector<double>& v = state.velocity[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            v[j] = state.momentum * v[j] + (g[j] + state.weight_decay * p.data[j]);
            p.data[j] -= lr * v[j];
            g[j] = 0.0;
        }
    }
    ++state.step;
}

/// Compares analytic gradients against central differences.
///
/// `loss` is called as loss(with_grad): with_grad=true must zero the store
/// gradients, run backward, and leave d(loss)/d(param) in the accumulators;
/// with_grad=false just evaluates the loss. Returns the max over checked
/// coordinates of |analytic - numeric| / max(1, |numeric|). When
/// max_coords_per_param > 0, at most that many coordinates per parameter are
/// sampled (seeded); otherwise every coordinate is checked.
inline double grad_check(const std::function<double(bool)>& loss, ParamStore& params, double eps,
                         int max_coords_per_param = 0, std::uint64_t sample_seed = 0) {
    double base = loss(true);
    if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");
    std::vector<std::vector<double>> analytic(params.size());
    for (int i = 0; i < params.size(); ++i) analytic[i] = params.grad(i);

    auto rng = make_rng({sample_seed, 0x67726164ULL});
    double max_rel = 0.0;
    for (int i = 0; i < params.size(); ++i) {
        Tensor& p = params.value(i);
        const std::int64_t n = p.size();
        std::vector<std::int64_t> coords;
        if (max_coords_per_param > 0 && n > max_coords_per_param) {
            std::uniform_int_distribution<std::int64_t> dist(0, n - 1);
            for (int c = 0; c < max_coords_per_param; ++c) coords.push_back(dist(rng));
        } else {
            coords.resize(n);
            for (std::int64_t c = 0; c < n; ++c) coords[c] = c;
        }
        for (std::int64_t c : coords) {
            const double saved = p.data[c];
            p.data[c] = saved + eps;
            const double up = loss(false);
            p.data[c] = saved - eps;
            const double down = loss(false);
            p.data[c] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite loss under perturbation");
            const double numeric = (up - down) / (2.0 * eps);
            const double rel = std::abs(analytic[i][c] - numeric) / std::max(1.0, std::abs(numeric));
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace dhgcn
