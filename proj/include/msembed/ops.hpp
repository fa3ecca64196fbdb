#ifndef MSEMBED_OPS_HPP
#define MSEMBED_OPS_HPP

// Differentiable operators. Each forward function is paired with a
// `*_backward` function that maps the upstream gradient to gradients with
// respect to every input and parameter. All functions are pure.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace msembed {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// conv2d

struct ConvGeometry {
    std::size_t n, c, h, w;       // input
    std::size_t f, kh, kw;        // kernels
    std::size_t out_h, out_w;
    std::size_t stride, padding;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                           std::size_t padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(kernels, 4, "conv2d kernels");
    if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                   kernels.dim(0), kernels.dim(2), kernels.dim(3), 0, 0, stride, padding};
    if (kernels.dim(1) != g.c) {
        throw DimensionError("conv2d kernel channels " + std::to_string(kernels.dim(1)) +
                             " != input channels " + std::to_string(g.c));
    }
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
        throw DimensionError("conv2d kernel " + shape_string(kernels.shape()) + " larger than padded input " +
                             shape_string(input.shape()));
    }
    g.out_h = (g.h + 2 * padding - g.kh) / stride + 1;
    g.out_w = (g.w + 2 * padding - g.kw) / stride + 1;
    return g;
}

namespace detail {

// Unfolds one sample into a [C*kh*kw, out_h*out_w] column matrix.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* dst = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long long y = static_cast<long long>(oy * g.stride + ki) - static_cast<long long>(g.padding);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long long x =
                            static_cast<long long>(ox * g.stride + kj) - static_cast<long long>(g.padding);
                        const bool inside = y >= 0 && x >= 0 && y < static_cast<long long>(g.h) &&
                                            x < static_cast<long long>(g.w);
                        dst[oy * g.out_w + ox] = inside ? image[(c * g.h + y) * g.w + x] : T{0};
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* src = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long long y = static_cast<long long>(oy * g.stride + ki) - static_cast<long long>(g.padding);
                    if (y < 0 || y >= static_cast<long long>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long long x =
                            static_cast<long long>(ox * g.stride + kj) - static_cast<long long>(g.padding);
                        if (x < 0 || x >= static_cast<long long>(g.w)) continue;
                        image[(c * g.h + y) * g.w + x] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Cross-correlation (no kernel flip) of an N,C,H,W batch with F,C,kh,kw kernels.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
    const ConvGeometry g = conv_geometry(input, kernels, stride, padding);
    if (bias.size() != g.f) throw DimensionError("conv2d bias length must equal filter count");
    const std::size_t patch = g.c * g.kh * g.kw;
    const std::size_t plane = g.out_h * g.out_w;
    Tensor<T> out({g.n, g.f, g.out_h, g.out_w});
    std::vector<T> cols(patch * plane);
    for (std::size_t n = 0; n < g.n; ++n) {
        detail::im2col(input.data() + n * g.c * g.h * g.w, g, cols.data());
        T* o = out.data() + n * g.f * plane;
        for (std::size_t f = 0; f < g.f; ++f) {
            T* of = o + f * plane;
            std::fill(of, of + plane, bias[f]);
            const T* k = kernels.data() + f * patch;
            for (std::size_t p = 0; p < patch; ++p) {
                const T kv = k[p];
                const T* col = cols.data() + p * plane;
                for (std::size_t q = 0; q < plane; ++q) of[q] += kv * col[q];
            }
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> kernels;
    Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                             std::size_t padding, const Tensor<T>& grad_out) {
    const ConvGeometry g = conv_geometry(input, kernels, stride, padding);
    if (grad_out.shape() != Shape{g.n, g.f, g.out_h, g.out_w}) {
        throw DimensionError("conv2d upstream gradient shape mismatch");
    }
    const std::size_t patch = g.c * g.kh * g.kw;
    const std::size_t plane = g.out_h * g.out_w;
    ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernels.shape()), Tensor<T>({g.f})};
    std::vector<T> cols(patch * plane);
    std::vector<T> dcols(patch * plane);
    for (std::size_t n = 0; n < g.n; ++n) {
        detail::im2col(input.data() + n * g.c * g.h * g.w, g, cols.data());
        std::fill(dcols.begin(), dcols.end(), T{0});
        const T* go = grad_out.data() + n * g.f * plane;
        for (std::size_t f = 0; f < g.f; ++f) {
            const T* gf = go + f * plane;
            T bsum{0};
            for (std::size_t q = 0; q < plane; ++q) bsum += gf[q];
            grads.bias[f] += bsum;
            const T* k = kernels.data() + f * patch;
            T* dk = grads.kernels.data() + f * patch;
            for (std::size_t p = 0; p < patch; ++p) {
                const T* col = cols.data() + p * plane;
                T* dcol = dcols.data() + p * plane;
                const T kv = k[p];
                T acc{0};
                for (std::size_t q = 0; q < plane; ++q) {
                    acc += gf[q] * col[q];
                    dcol[q] += kv * gf[q];
                }
                dk[p] += acc;
            }
        }
        detail::col2im(dcols.data(), g, grads.input.data() + n * g.c * g.h * g.w);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (T& v : out.values()) v = v > T{0} ? v : T{0};
    return out;
}

/// Subgradient at exactly zero is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    if (input.shape() != grad_out.shape()) throw DimensionError("relu upstream gradient shape mismatch");
    Tensor<T> grad(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) grad[i] = input[i] > T{0} ? grad_out[i] : T{0};
    return grad;
}

// ---------------------------------------------------------------------------
// maxpool2x2

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input) {
    require_rank(input, 4, "maxpool2x2 input");
    const auto [n, c, h, w] = std::array{input.dim(0), input.dim(1), input.dim(2), input.dim(3)};
    if (h % 2 || w % 2) throw DimensionError("maxpool2x2 needs even spatial dims, got " + shape_string(input.shape()));
    Tensor<T> out({n, c, h / 2, w / 2});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h / 2; ++y)
                for (std::size_t x = 0; x < w / 2; ++x) {
                    T best = input(i, ch, 2 * y, 2 * x);
                    best = std::max(best, input(i, ch, 2 * y, 2 * x + 1));
                    best = std::max(best, input(i, ch, 2 * y + 1, 2 * x));
                    best = std::max(best, input(i, ch, 2 * y + 1, 2 * x + 1));
                    out(i, ch, y, x) = best;
                }
    return out;
}

/// Routes each upstream value to the window's argmax; ties go to the first
/// cell in row-major order.
template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    require_rank(input, 4, "maxpool2x2 input");
    const auto [n, c, h, w] = std::array{input.dim(0), input.dim(1), input.dim(2), input.dim(3)};
    if (grad_out.shape() != Shape{n, c, h / 2, w / 2}) throw DimensionError("maxpool2x2 upstream gradient shape mismatch");
    Tensor<T> grad(input.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h / 2; ++y)
                for (std::size_t x = 0; x < w / 2; ++x) {
                    std::size_t by = 2 * y, bx = 2 * x;
                    T best = input(i, ch, by, bx);
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const T v = input(i, ch, 2 * y + dy, 2 * x + dx);
                            if (v > best) {
                                best = v;
                                by = 2 * y + dy;
                                bx = 2 * x + dx;
                            }
                        }
                    grad(i, ch, by, bx) += grad_out(i, ch, y, x);
                }
    return grad;
}

// ---------------------------------------------------------------------------
// downsample_avg

template <typename T>
Tensor<T> downsample_avg(const Tensor<T>& input, std::size_t factor) {
    require_rank(input, 4, "downsample_avg input");
    const auto [n, c, h, w] = std::array{input.dim(0), input.dim(1), input.dim(2), input.dim(3)};
    if (factor < 1 || h % factor || w % factor) {
        throw DimensionError("downsample factor " + std::to_string(factor) + " does not divide " +
                             shape_string(input.shape()));
    }
    if (factor == 1) return input;
    const T scale = T{1} / static_cast<T>(factor * factor);
    Tensor<T> out({n, c, h / factor, w / factor});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h / factor; ++y)
                for (std::size_t x = 0; x < w / factor; ++x) {
                    T sum{0};
                    for (std::size_t dy = 0; dy < factor; ++dy)
                        for (std::size_t dx = 0; dx < factor; ++dx) sum += input(i, ch, y * factor + dy, x * factor + dx);
                    out(i, ch, y, x) = sum * scale;
                }
    return out;
}

template <typename T>
Tensor<T> downsample_avg_backward(const Shape& input_shape, std::size_t factor, const Tensor<T>& grad_out) {
    if (input_shape.size() != 4 || factor < 1 || input_shape[2] % factor || input_shape[3] % factor) {
        throw DimensionError("downsample_avg_backward: bad input shape or factor");
    }
    if (grad_out.shape() != Shape{input_shape[0], input_shape[1], input_shape[2] / factor, input_shape[3] / factor}) {
        throw DimensionError("downsample_avg upstream gradient shape mismatch");
    }
    if (factor == 1) return grad_out;
    const T scale = T{1} / static_cast<T>(factor * factor);
    Tensor<T> grad(input_shape);
    for (std::size_t i = 0; i < input_shape[0]; ++i)
        for (std::size_t ch = 0; ch < input_shape[1]; ++ch)
            for (std::size_t y = 0; y < input_shape[2]; ++y)
                for (std::size_t x = 0; x < input_shape[3]; ++x)
                    grad(i, ch, y, x) = grad_out(i, ch, y / factor, x / factor) * scale;
    return grad;
}

// ---------------------------------------------------------------------------
// affine

template <typename T>
Tensor<T> affine(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
    require_rank(input, 2, "affine input");
    require_rank(weights, 2, "affine weights");
    const std::size_t n = input.dim(0), d = input.dim(1), e = weights.dim(1);
    if (weights.dim(0) != d || bias.size() != e) {
        throw DimensionError("affine shapes disagree: input " + shape_string(input.shape()) + ", weights " +
                             shape_string(weights.shape()) + ", bias " + shape_string(bias.shape()));
    }
    Tensor<T> out({n, e});
    for (std::size_t i = 0; i < n; ++i) {
        T* o = out.data() + i * e;
        std::copy(bias.data(), bias.data() + e, o);
        for (std::size_t k = 0; k < d; ++k) {
            const T x = input(i, k);
            const T* wk = weights.data() + k * e;
            for (std::size_t j = 0; j < e; ++j) o[j] += x * wk[j];
        }
    }
    return out;
}

template <typename T>
struct AffineGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
AffineGrads<T> affine_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out) {
    const std::size_t n = input.dim(0), d = input.dim(1), e = weights.dim(1);
    if (grad_out.shape() != Shape{n, e} || weights.dim(0) != d) throw DimensionError("affine upstream gradient shape mismatch");
    AffineGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weights.shape()), Tensor<T>({e})};
    for (std::size_t i = 0; i < n; ++i) {
        const T* go = grad_out.data() + i * e;
        for (std::size_t j = 0; j < e; ++j) g.bias[j] += go[j];
        for (std::size_t k = 0; k < d; ++k) {
            const T x = input(i, k);
            const T* wk = weights.data() + k * e;
            T* dwk = g.weights.data() + k * e;
            T acc{0};
            for (std::size_t j = 0; j < e; ++j) {
                acc += wk[j] * go[j];
                dwk[j] += x * go[j];
            }
            g.input(i, k) = acc;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// l2_normalize

/// Divides each row by max(||row||, epsilon).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& input, T epsilon) {
    require_rank(input, 2, "l2_normalize input");
    if (!(epsilon > T{0})) throw ConfigError("l2_normalize epsilon must be positive");
    Tensor<T> out = input;
    for (std::size_t i = 0; i < input.dim(0); ++i) {
        auto r = out.row(i);
        T sq{0};
        for (T v : r) sq += v * v;
        const T denom = std::max(std::sqrt(sq), epsilon);
        for (T& v : r) v /= denom;
    }
    return out;
}

template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& input, T epsilon, const Tensor<T>& grad_out) {
    if (input.shape() != grad_out.shape()) throw DimensionError("l2_normalize upstream gradient shape mismatch");
    Tensor<T> grad(input.shape());
    for (std::size_t i = 0; i < input.dim(0); ++i) {
        auto x = input.row(i);
        auto g = grad_out.row(i);
        auto dx = grad.row(i);
        T sq{0};
        for (T v : x) sq += v * v;
        const T norm = std::sqrt(sq);
        if (norm < epsilon) {
            for (std::size_t j = 0; j < x.size(); ++j) dx[j] = g[j] / epsilon;
            continue;
        }
        T dot{0};
        for (std::size_t j = 0; j < x.size(); ++j) dot += x[j] * g[j];
        const T inv = T{1} / norm;
        const T proj = dot * inv * inv;
        for (std::size_t j = 0; j < x.size(); ++j) dx[j] = (g[j] - x[j] * proj) * inv;
    }
    return grad;
}

// ---------------------------------------------------------------------------
// concat

/// Concatenates N,D_i matrices column-wise in argument order.
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> inputs) {
    if (inputs.empty()) throw DimensionError("concat needs at least one input");
    const std::size_t n = inputs[0].dim(0);
    std::size_t total = 0;
    for (const auto& t : inputs) {
        require_rank(t, 2, "concat input");
        if (t.dim(0) != n) throw DimensionError("concat row counts differ");
        total += t.dim(1);
    }
    Tensor<T> out({n, total});
    for (std::size_t i = 0; i < n; ++i) {
        T* o = out.data() + i * total;
        for (const auto& t : inputs) {
            auto r = t.row(i);
            o = std::copy(r.begin(), r.end(), o);
        }
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_out, std::span<const std::size_t> widths) {
    require_rank(grad_out, 2, "concat upstream gradient");
    std::size_t total = 0;
    for (std::size_t w : widths) total += w;
    if (total != grad_out.dim(1)) throw DimensionError("concat split widths do not sum to gradient width");
    const std::size_t n = grad_out.dim(0);
    std::vector<Tensor<T>> parts;
    std::size_t offset = 0;
    for (std::size_t w : widths) {
        Tensor<T> part({n, w});
        for (std::size_t i = 0; i < n; ++i) {
            const T* src = grad_out.data() + i * total + offset;
            std::copy(src, src + w, part.data() + i * w);
        }
        parts.push_back(std::move(part));
        offset += w;
    }
    return parts;
}

// ---------------------------------------------------------------------------
// dropout

template <typename T>
struct DropoutResult {
    Tensor<T> output;
    /// Per-element multiplier: 0 for dropped cells, 1/(1-rate) for survivors.
    Tensor<T> mask;
};

/// Inverted dropout. Inference mode (or rate 0) is the identity and draws
/// nothing from `rng`.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& input, double rate, Rng& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return {input, Tensor<T>(input.shape(), T{1})};
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::bernoulli_distribution drop(rate);
    DropoutResult<T> r{input, Tensor<T>(input.shape())};
    for (std::size_t i = 0; i < input.size(); ++i) {
        const T m = drop(rng) ? T{0} : keep_scale;
        r.mask[i] = m;
        r.output[i] = input[i] * m;
    }
    return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& grad_out) {
    if (mask.shape() != grad_out.shape()) throw DimensionError("dropout upstream gradient shape mismatch");
    Tensor<T> grad = grad_out;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
    return grad;
}

}  // namespace msembed

#endif  // MSEMBED_OPS_HPP
