#ifndef MSEMBED_GRADCHECK_HPP
#define MSEMBED_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ops.hpp"

namespace msembed {

/// Output of a differentiable operator together with its backward map.
/// `backward(upstream)` returns one gradient per input, each shaped like
/// that input.
template <typename T>
struct OpGrad {
    Tensor<T> output;
    std::function<std::vector<Tensor<T>>(const Tensor<T>&)> backward;
};

/// A differentiable operator over a list of inputs (data and parameters alike).
template <typename T>
using DifferentiableOp = std::function<OpGrad<T>(const std::vector<Tensor<T>>&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    bool passed = false;
};

/// Denominators of the relative error are clamped to this value, so
/// gradients near zero are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-4;

/**
 * Compares the analytic gradient of `op` with central finite differences.
 *
 * The operator output is contracted with a fixed random weight tensor to a
 * scalar L = sum(w * op(inputs)); the analytic gradient is op.backward(w).
 * Each input element is perturbed by +/- `step`. The relative error of one
 * element is |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
 */
inline GradCheckReport finite_diff_check(const DifferentiableOp<double>& op, std::vector<Tensor<double>> inputs,
                                         double step, double tolerance, std::uint64_t weight_seed = 7) {
    if (!(step > 0.0)) throw ConfigError("finite difference step must be positive");
    for (const auto& t : inputs) require_finite(t, "gradient check input");

    const OpGrad<double> base = op(inputs);
    require_finite(base.output, "operator output");
    Tensor<double> weights(base.output.shape());
    Rng rng(weight_seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (double& w : weights.values()) w = unit(rng);

    const std::vector<Tensor<double>> analytic = base.backward(weights);
    if (analytic.size() != inputs.size()) throw DimensionError("backward returned wrong number of gradients");

    auto objective = [&](const std::vector<Tensor<double>>& in) {
        const Tensor<double> out = op(in).output;
        require_finite(out, "operator output");
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
        return s;
    };

    GradCheckReport report;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (analytic[t].shape() != inputs[t].shape()) throw DimensionError("gradient shape differs from input shape");
        require_finite(analytic[t], "analytic gradient");
        for (std::size_t i = 0; i < inputs[t].size(); ++i) {
            const double original = inputs[t][i];
            inputs[t][i] = original + step;
            const double plus = objective(inputs);
            inputs[t][i] = original - step;
            const double minus = objective(inputs);
            inputs[t][i] = original;
            const double numeric = (plus - minus) / (2.0 * step);
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
            const double rel = std::abs(a - numeric) / denom;
            if (!std::isfinite(rel)) throw NumericError("non-finite finite-difference estimate");
            if (rel > report.max_rel_error) report = {rel, t, i, false};
        }
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

// Adapters exposing each operator as a DifferentiableOp.
namespace diffops {

inline DifferentiableOp<double> conv2d(std::size_t stride, std::size_t padding) {
    return [=](const std::vector<Tensor<double>>& in) {
        return OpGrad<double>{msembed::conv2d(in[0], in[1], in[2], stride, padding),
                              [=](const Tensor<double>& g) {
                                  auto r = conv2d_backward(in[0], in[1], stride, padding, g);
                                  return std::vector{r.input, r.kernels, r.bias};
                              }};
    };
}

inline DifferentiableOp<double> relu() {
    return [](const std::vector<Tensor<double>>& in) {
        return OpGrad<double>{msembed::relu(in[0]),
                              [=](const Tensor<double>& g) { return std::vector{relu_backward(in[0], g)}; }};
    };
}

inline DifferentiableOp<double> maxpool2x2() {
    return [](const std::vector<Tensor<double>>& in) {
        return OpGrad<double>{msembed::maxpool2x2(in[0]),
                              [=](const Tensor<double>& g) { return std::vector{maxpool2x2_backward(in[0], g)}; }};
    };
}

inline DifferentiableOp<double> downsample_avg(std::size_t factor) {
    return [=](const std::vector<Tensor<double>>& in) {
        return OpGrad<double>{msembed::downsample_avg(in[0], factor), [=](const Tensor<double>& g) {
                                  return std::vector{downsample_avg_backward(in[0].shape(), factor, g)};
                              }};
    };
}

inline DifferentiableOp<double> affine() {
    return [](const std::vector<Tensor<double>>& in) {
        return OpGrad<double>{msembed::affine(in[0], in[1], in[2]), [=](const Tensor<double>& g) {
                                  auto r = affine_backward(in[0], in[1], g);
                                  return std::vector{r.input, r.weights, r.bias};
                              }};
    };
}

inline DifferentiableOp<double> l2_normalize(double epsilon) {
    return [=](const std::vector<Tensor<double>>& in) {
        return OpGrad<double>{msembed::l2_normalize(in[0], epsilon), [=](const Tensor<double>& g) {
                                  return std::vector{l2_normalize_backward(in[0], epsilon, g)};
                              }};
    };
}

inline DifferentiableOp<double> concat() {
    return [](const std::vector<Tensor<double>>& in) {
        std::vector<std::size_t> widths;
        for (const auto& t : in) widths.push_back(t.dim(1));
        return OpGrad<double>{msembed::concat<double>(in), [=](const Tensor<double>& g) {
                                  return concat_backward<double>(g, widths);
                              }};
    };
}

/// Dropout with a mask drawn from a fresh generator seeded with `seed` on
/// every call, so repeated evaluations see the same mask.
inline DifferentiableOp<double> dropout(double rate, std::uint64_t seed) {
    return [=](const std::vector<Tensor<double>>& in) {
        Rng rng(seed);
        auto r = msembed::dropout(in[0], rate, rng, true);
        return OpGrad<double>{r.output, [mask = r.mask](const Tensor<double>& g) {
                                  return std::vector{dropout_backward(mask, g)};
                              }};
    };
}

}  // namespace diffops

}  // namespace msembed

#endif  // MSEMBED_GRADCHECK_HPP
