#ifndef MSEMBED_NET_HPP
#define MSEMBED_NET_HPP

// Multi-scale embedding network: several convolutional branches, each fed a
// block-averaged copy of the input, whose normalised embeddings are
// concatenated and projected by a final linear layer onto the unit sphere.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "binary_io.hpp"
#include "json_fields.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace msembed {

struct ConvLayerSpec {
    std::size_t filters = 8;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    bool pool_after = false;

    friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

struct BranchSpec {
    /// 1 means full resolution.
    std::size_t input_downsample_factor = 1;
    std::vector<ConvLayerSpec> conv_layers;
    std::size_t branch_embed_dim = 16;

    friend bool operator==(const BranchSpec&, const BranchSpec&) = default;
};

/// Channels, height, width of one image.
using ImageShape = std::array<std::size_t, 3>;

struct MultiScaleNetConfig {
    std::vector<BranchSpec> branches;
    std::size_t final_embed_dim = 64;
    ImageShape input_shape{1, 28, 28};
    double dropout_rate = 0.25;

    /// Desk-scale network: a 4-layer full-resolution branch (64-d) and two
    /// shallow branches on 2x and 4x downsampled input (16-d and 8-d), merged
    /// into a 64-d embedding. Keeps the 4096:1024:512 proportions of the
    /// full-size network.
    static MultiScaleNetConfig desk_scale(ImageShape input_shape = {1, 28, 28}) {
        MultiScaleNetConfig cfg;
        cfg.input_shape = input_shape;
        cfg.branches = {
            BranchSpec{1, {{8, 3, 1, 1, true}, {16, 3, 1, 1, true}, {32, 3, 1, 1, false}, {32, 3, 2, 1, false}}, 64},
            BranchSpec{2, {{8, 3, 1, 1, true}, {16, 3, 2, 1, false}}, 16},
            BranchSpec{4, {{8, 3, 1, 1, false}, {8, 3, 2, 1, false}}, 8},
        };
        cfg.final_embed_dim = 64;
        return cfg;
    }

    /// Full-size dimensions: 4096-d final embedding, 1024-d and 512-d shallow branches.
    static MultiScaleNetConfig full_size(ImageShape input_shape = {3, 224, 224}) {
        MultiScaleNetConfig cfg;
        cfg.input_shape = input_shape;
        std::vector<ConvLayerSpec> deep;
        for (std::size_t filters : {64, 128, 256, 512, 512}) {
            deep.push_back({filters, 3, 1, 1, false});
            deep.push_back({filters, 3, 1, 1, true});
        }
        cfg.branches = {
            BranchSpec{1, deep, 4096},
            BranchSpec{2, {{96, 3, 1, 1, true}, {96, 3, 1, 1, true}, {96, 3, 2, 1, false}}, 1024},
            BranchSpec{4, {{96, 3, 1, 1, true}, {96, 3, 2, 1, false}}, 512},
        };
        cfg.final_embed_dim = 4096;
        cfg.dropout_rate = 0.25;
        return cfg;
    }

    friend bool operator==(const MultiScaleNetConfig&, const MultiScaleNetConfig&) = default;
};

/// Spatial bookkeeping for one branch, derived from the config.
struct BranchGeometry {
    std::vector<ImageShape> layer_outputs;  // after optional pooling
    std::size_t flat_dim = 0;
};

inline std::string branch_name(std::size_t b) { return "branch" + std::to_string(b); }

/// Propagates shapes through every branch; throws ConfigError on any
/// invalid dimension or spatial underflow.
inline std::vector<BranchGeometry> validate(const MultiScaleNetConfig& cfg) {
    const auto [c0, h0, w0] = cfg.input_shape;
    if (c0 == 0 || h0 == 0 || w0 == 0) throw ConfigError("input_shape dimensions must be positive");
    if (cfg.branches.empty()) throw ConfigError("network needs at least one branch");
    if (cfg.final_embed_dim == 0) throw ConfigError("final_embed_dim must be positive");
    if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    const auto full = std::count_if(cfg.branches.begin(), cfg.branches.end(),
                                    [](const BranchSpec& b) { return b.input_downsample_factor == 1; });
    if (full != 1) throw ConfigError("exactly one branch must run at full resolution (downsample factor 1)");

    std::vector<BranchGeometry> out;
    for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
        const BranchSpec& spec = cfg.branches[b];
        const std::string name = branch_name(b);
        const std::size_t f = spec.input_downsample_factor;
        if (f == 0 || h0 % f || w0 % f) {
            throw ConfigError(name + ": downsample factor " + std::to_string(f) + " does not divide the input size");
        }
        if (spec.conv_layers.empty()) throw ConfigError(name + ": conv_layers must not be empty");
        if (spec.branch_embed_dim == 0) throw ConfigError(name + ": branch_embed_dim must be positive");
        ImageShape s{c0, h0 / f, w0 / f};
        BranchGeometry geo;
        for (std::size_t l = 0; l < spec.conv_layers.size(); ++l) {
            const ConvLayerSpec& layer = spec.conv_layers[l];
            const std::string lname = name + ".conv" + std::to_string(l);
            if (layer.filters == 0 || layer.kernel == 0 || layer.stride == 0) {
                throw ConfigError(lname + ": filters, kernel and stride must be positive");
            }
            if (layer.kernel > s[1] + 2 * layer.padding || layer.kernel > s[2] + 2 * layer.padding) {
                throw ConfigError(lname + ": kernel " + std::to_string(layer.kernel) + " exceeds the " +
                                  std::to_string(s[1]) + "x" + std::to_string(s[2]) + " input (spatial underflow)");
            }
            s = {layer.filters, (s[1] + 2 * layer.padding - layer.kernel) / layer.stride + 1,
                 (s[2] + 2 * layer.padding - layer.kernel) / layer.stride + 1};
            if (layer.pool_after) {
                if (s[1] % 2 || s[2] % 2) {
                    throw ConfigError(lname + ": max pooling needs even spatial size, got " + std::to_string(s[1]) + "x" +
                                      std::to_string(s[2]));
                }
                s = {s[0], s[1] / 2, s[2] / 2};
            }
            geo.layer_outputs.push_back(s);
        }
        geo.flat_dim = s[0] * s[1] * s[2];
        out.push_back(std::move(geo));
    }
    return out;
}

// ---------------------------------------------------------------------------
// parameters

template <typename T>
using ParameterSet = std::map<std::string, Tensor<T>>;

inline std::string conv_weight_name(std::size_t b, std::size_t l) {
    return branch_name(b) + ".conv" + std::to_string(l) + ".weight";
}
inline std::string conv_bias_name(std::size_t b, std::size_t l) {
    return branch_name(b) + ".conv" + std::to_string(l) + ".bias";
}
inline std::string embed_weight_name(std::size_t b) { return branch_name(b) + ".embed.weight"; }
inline std::string embed_bias_name(std::size_t b) { return branch_name(b) + ".embed.bias"; }
inline const std::string kFinalWeight = "final.weight";
inline const std::string kFinalBias = "final.bias";

/// Name and shape of every parameter implied by `cfg`.
inline std::map<std::string, Shape> parameter_shapes(const MultiScaleNetConfig& cfg) {
    const auto geometry = validate(cfg);
    std::map<std::string, Shape> shapes;
    std::size_t merged = 0;
    for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
        const BranchSpec& spec = cfg.branches[b];
        std::size_t channels = cfg.input_shape[0];
        for (std::size_t l = 0; l < spec.conv_layers.size(); ++l) {
            const ConvLayerSpec& layer = spec.conv_layers[l];
            shapes[conv_weight_name(b, l)] = {layer.filters, channels, layer.kernel, layer.kernel};
            shapes[conv_bias_name(b, l)] = {layer.filters};
            channels = layer.filters;
        }
        shapes[embed_weight_name(b)] = {geometry[b].flat_dim, spec.branch_embed_dim};
        shapes[embed_bias_name(b)] = {spec.branch_embed_dim};
        merged += spec.branch_embed_dim;
    }
    shapes[kFinalWeight] = {merged, cfg.final_embed_dim};
    shapes[kFinalBias] = {cfg.final_embed_dim};
    return shapes;
}

template <typename To, typename From>
ParameterSet<To> cast_parameters(const ParameterSet<From>& params) {
    ParameterSet<To> out;
    for (const auto& [name, t] : params) out.emplace(name, t.template cast<To>());
    return out;
}

/// Architecture plus learned parameters.
struct Checkpoint {
    MultiScaleNetConfig config;
    ParameterSet<float> parameters;
    std::uint64_t rng_seed = 0;
    std::uint64_t epoch = 0;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// He-normal weights (std sqrt(2 / fan_in)) and zero biases, drawn in
/// parameter-name order from a generator seeded with `seed`.
inline Checkpoint build_network(const MultiScaleNetConfig& cfg, std::uint64_t seed) {
    Checkpoint ckpt{cfg, {}, seed, 0};
    Rng rng(seed);
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
        Tensor<float> t(shape);
        if (shape.size() > 1) {
            const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
            std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            for (float& v : t.values()) v = static_cast<float>(normal(rng));
        }
        ckpt.parameters.emplace(name, std::move(t));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// forward / backward

inline constexpr double kNormalizeEpsilon = 1e-12;

template <typename T>
struct ConvLayerCache {
    Tensor<T> input;
    Tensor<T> pre_activation;
    Tensor<T> activation;
};

template <typename T>
struct BranchCache {
    Tensor<T> downsampled;
    std::vector<ConvLayerCache<T>> layers;
    Shape conv_output_shape;
    Tensor<T> flat;
    Tensor<T> pre_norm;
};

template <typename T>
struct ForwardCache {
    Shape input_shape;
    std::vector<BranchCache<T>> branches;
    Tensor<T> merged;
    Tensor<T> dropout_mask;
    Tensor<T> dropped;
    Tensor<T> final_pre_norm;
};

template <typename T>
struct ForwardResult {
    Tensor<T> embedding;
    ForwardCache<T> cache;
};

namespace detail {

template <typename T>
const Tensor<T>& param(const ParameterSet<T>& params, const std::string& name) {
    const auto it = params.find(name);
    if (it == params.end()) throw LookupError("missing parameter '" + name + "'");
    return it->second;
}

}  // namespace detail

/**
 * Embeds an N,C,H,W batch. Per branch: downsample, conv+relu(+pool) stack,
 * flatten, affine, L2-normalise; then concatenate, dropout (training only),
 * final affine and L2-normalise. Every sample is processed independently,
 * so results do not depend on batch composition.
 */
template <typename T>
ForwardResult<T> forward(const ParameterSet<T>& params, const MultiScaleNetConfig& cfg, const Tensor<T>& images,
                         bool training = false, Rng* rng = nullptr) {
    require_rank(images, 4, "images");
    const auto [c, h, w] = cfg.input_shape;
    if (images.dim(1) != c || images.dim(2) != h || images.dim(3) != w) {
        throw DimensionError("image batch " + shape_string(images.shape()) + " does not match network input [" +
                             std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + "]");
    }
    const std::size_t n = images.dim(0);
    const T eps = static_cast<T>(kNormalizeEpsilon);
    ForwardResult<T> r;
    r.cache.input_shape = images.shape();
    std::vector<Tensor<T>> branch_out;
    for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
        const BranchSpec& spec = cfg.branches[b];
        BranchCache<T> bc;
        bc.downsampled = downsample_avg(images, spec.input_downsample_factor);
        Tensor<T> x = bc.downsampled;
        for (std::size_t l = 0; l < spec.conv_layers.size(); ++l) {
            const ConvLayerSpec& layer = spec.conv_layers[l];
            ConvLayerCache<T> lc;
            lc.pre_activation = conv2d(x, detail::param(params, conv_weight_name(b, l)),
                                       detail::param(params, conv_bias_name(b, l)), layer.stride, layer.padding);
            lc.activation = relu(lc.pre_activation);
            lc.input = std::move(x);
            x = layer.pool_after ? maxpool2x2(lc.activation) : lc.activation;
            bc.layers.push_back(std::move(lc));
        }
        bc.conv_output_shape = x.shape();
        bc.flat = x.reshaped({n, x.size() / n});
        bc.pre_norm = affine(bc.flat, detail::param(params, embed_weight_name(b)), detail::param(params, embed_bias_name(b)));
        branch_out.push_back(l2_normalize(bc.pre_norm, eps));
        r.cache.branches.push_back(std::move(bc));
    }
    r.cache.merged = concat<T>(branch_out);
    if (training && cfg.dropout_rate > 0.0) {
        if (!rng) throw ConfigError("training-mode forward pass needs a random generator for dropout");
        auto d = dropout(r.cache.merged, cfg.dropout_rate, *rng, true);
        r.cache.dropped = std::move(d.output);
        r.cache.dropout_mask = std::move(d.mask);
    } else {
        r.cache.dropped = r.cache.merged;
        r.cache.dropout_mask = Tensor<T>(r.cache.merged.shape(), T{1});
    }
    r.cache.final_pre_norm = affine(r.cache.dropped, detail::param(params, kFinalWeight), detail::param(params, kFinalBias));
    r.embedding = l2_normalize(r.cache.final_pre_norm, eps);
    return r;
}

/// Gradients of sum(grad_embedding * embedding) with respect to every parameter.
template <typename T>
ParameterSet<T> backward(const ParameterSet<T>& params, const MultiScaleNetConfig& cfg, const ForwardCache<T>& cache,
                         const Tensor<T>& grad_embedding) {
    const T eps = static_cast<T>(kNormalizeEpsilon);
    ParameterSet<T> grads;
    Tensor<T> g = l2_normalize_backward(cache.final_pre_norm, eps, grad_embedding);
    auto fin = affine_backward(cache.dropped, detail::param(params, kFinalWeight), g);
    grads[kFinalWeight] = std::move(fin.weights);
    grads[kFinalBias] = std::move(fin.bias);
    const Tensor<T> g_merged = dropout_backward(cache.dropout_mask, fin.input);

    std::vector<std::size_t> widths;
    for (const auto& spec : cfg.branches) widths.push_back(spec.branch_embed_dim);
    const auto g_branches = concat_backward<T>(g_merged, widths);

    for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
        const BranchSpec& spec = cfg.branches[b];
        const BranchCache<T>& bc = cache.branches[b];
        const Tensor<T> g_pre = l2_normalize_backward(bc.pre_norm, eps, g_branches[b]);
        auto emb = affine_backward(bc.flat, detail::param(params, embed_weight_name(b)), g_pre);
        grads[embed_weight_name(b)] = std::move(emb.weights);
        grads[embed_bias_name(b)] = std::move(emb.bias);
        Tensor<T> gx = emb.input.reshaped(bc.conv_output_shape);
        for (std::size_t l = spec.conv_layers.size(); l-- > 0;) {
            const ConvLayerSpec& layer = spec.conv_layers[l];
            const ConvLayerCache<T>& lc = bc.layers[l];
            if (layer.pool_after) gx = maxpool2x2_backward(lc.activation, gx);
            gx = relu_backward(lc.pre_activation, gx);
            auto cg = conv2d_backward(lc.input, detail::param(params, conv_weight_name(b, l)), layer.stride,
                                      layer.padding, gx);
            grads[conv_weight_name(b, l)] = std::move(cg.kernels);
            grads[conv_bias_name(b, l)] = std::move(cg.bias);
            // The first layer's input gradient is not needed.
            if (l > 0) gx = std::move(cg.input);
        }
    }
    return grads;
}

/// Embeds `images` with the checkpoint parameters. Inference mode is a pure
/// function of (parameters, images).
inline Tensor<float> embed(const Checkpoint& ckpt, const Tensor<float>& images, bool training = false,
                           Rng* rng = nullptr) {
    return forward(ckpt.parameters, ckpt.config, images, training, rng).embedding;
}

/**
 * Inference-mode embedding of a large batch in chunks of `chunk` rows on up
 * to `threads` workers. Rows are independent, so the result is bitwise
 * identical for every thread count.
 */
inline Tensor<float> embed_batched(const Checkpoint& ckpt, const Tensor<float>& images, std::size_t chunk = 64,
                                   std::size_t threads = 1) {
    require_rank(images, 4, "images");
    const std::size_t n = images.dim(0);
    const std::size_t per_image = images.size() / n;
    const std::size_t d = ckpt.config.final_embed_dim;
    Tensor<float> out({n, d});
    chunk = std::max<std::size_t>(chunk, 1);
    const std::size_t n_chunks = (n + chunk - 1) / chunk;
    auto run = [&](std::size_t first_chunk, std::size_t step) {
        for (std::size_t ci = first_chunk; ci < n_chunks; ci += step) {
            const std::size_t begin = ci * chunk;
            const std::size_t count = std::min(chunk, n - begin);
            Shape shape = images.shape();
            shape[0] = count;
            Tensor<float> part(shape, std::vector<float>(images.data() + begin * per_image,
                                                         images.data() + (begin + count) * per_image));
            const Tensor<float> e = embed(ckpt, part);
            std::copy(e.data(), e.data() + e.size(), out.data() + begin * d);
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, n_chunks);
    if (threads == 1) {
        run(0, 1);
    } else {
        std::vector<std::jthread> workers;
        for (std::size_t t = 0; t < threads; ++t) workers.emplace_back(run, t, threads);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON form of the architecture

inline Json to_json(const MultiScaleNetConfig& cfg) {
    Json branches = Json::array();
    for (const auto& b : cfg.branches) {
        Json layers = Json::array();
        for (const auto& l : b.conv_layers) {
            layers.push_back({{"filters", l.filters},
                              {"kernel", l.kernel},
                              {"stride", l.stride},
                              {"padding", l.padding},
                              {"pool_after", l.pool_after}});
        }
        branches.push_back(
            {{"downsample", b.input_downsample_factor}, {"conv_layers", layers}, {"embed_dim", b.branch_embed_dim}});
    }
    return {{"branches", branches},
            {"final_embed_dim", cfg.final_embed_dim},
            {"input_shape", {cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]}},
            {"dropout_rate", cfg.dropout_rate}};
}

/// Reads a network config. Absent keys keep their defaults; when "branches"
/// is absent the desk-scale branches for the given input shape are used.
/// Problems are appended to `errors`.
inline MultiScaleNetConfig net_config_from_json(const Json& j, const std::string& path, std::vector<std::string>& errors) {
    JsonFields f(j, path, errors);
    std::vector<std::size_t> shape{1, 28, 28};
    f.get("input_shape", shape);
    MultiScaleNetConfig cfg;
    if (shape.size() != 3) {
        f.error("input_shape", "expected [C,H,W]");
        shape = {1, 28, 28};
    }
    cfg = MultiScaleNetConfig::desk_scale({shape[0], shape[1], shape[2]});
    f.get("final_embed_dim", cfg.final_embed_dim);
    f.get("dropout_rate", cfg.dropout_rate);
    if (const Json* bj = f.child("branches")) {
        if (!bj->is_array()) {
            f.error("branches", "expected an array");
        } else {
            cfg.branches.clear();
            for (std::size_t i = 0; i < bj->size(); ++i) {
                const std::string bpath = f.where("branches") + "[" + std::to_string(i) + "]";
                JsonFields bf((*bj)[i], bpath, errors);
                BranchSpec spec;
                bf.get("downsample", spec.input_downsample_factor);
                bf.get("embed_dim", spec.branch_embed_dim);
                if (const Json* lj = bf.child("conv_layers")) {
                    if (!lj->is_array()) {
                        bf.error("conv_layers", "expected an array");
                    } else {
                        for (std::size_t k = 0; k < lj->size(); ++k) {
                            JsonFields lf((*lj)[k], bpath + ".conv_layers[" + std::to_string(k) + "]", errors);
                            ConvLayerSpec layer;
                            lf.get("filters", layer.filters);
                            lf.get("kernel", layer.kernel);
                            lf.get("stride", layer.stride);
                            lf.get("padding", layer.padding);
                            lf.get("pool_after", layer.pool_after);
                            lf.finish();
                            spec.conv_layers.push_back(layer);
                        }
                    }
                }
                bf.finish();
                cfg.branches.push_back(std::move(spec));
            }
        }
    }
    f.finish();
    return cfg;
}

inline MultiScaleNetConfig net_config_from_json(const Json& j) {
    std::vector<std::string> errors;
    auto cfg = net_config_from_json(j, "", errors);
    throw_if_errors(errors);
    validate(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// checkpoint file

inline constexpr std::string_view kCheckpointMagic = "MSNETCKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/**
 * Layout (little-endian): magic "MSNETCKP", u32 version, u64 length + JSON
 * text {"epoch","net","rng_seed"}, then per parameter in name order:
 * u32 name length, name bytes, u32 rank, rank x u64 dims, float32 values.
 */
inline Bytes encode_checkpoint(const Checkpoint& ckpt) {
    ByteWriter w;
    w.text(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    const Json meta{{"epoch", ckpt.epoch}, {"net", to_json(ckpt.config)}, {"rng_seed", ckpt.rng_seed}};
    const std::string text = meta.dump();
    w.u64(text.size());
    w.text(text);
    for (const auto& [name, t] : ckpt.parameters) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.text(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u64(d);
        for (float v : t.values()) w.f32(v);
    }
    return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic(kCheckpointMagic);
    const std::size_t version_at = r.offset();
    if (const auto v = r.u32("version"); v != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(v), static_cast<long long>(version_at));
    }
    const std::size_t meta_at = r.offset();
    const std::uint64_t len = r.u64("config length");
    Checkpoint ckpt;
    std::map<std::string, Shape> expected;
    try {
        const Json meta = Json::parse(r.text(len, "config"));
        ckpt.epoch = meta.at("epoch").get<std::uint64_t>();
        ckpt.rng_seed = meta.at("rng_seed").get<std::uint64_t>();
        ckpt.config = net_config_from_json(meta.at("net"));
        expected = parameter_shapes(ckpt.config);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint config: ") + e.what(), static_cast<long long>(meta_at));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad checkpoint config: ") + e.what(), static_cast<long long>(meta_at));
    }
    while (!r.at_end()) {
        const std::size_t at = r.offset();
        const std::string name = r.text(r.u32("name length"), "parameter name");
        const auto it = expected.find(name);
        if (it == expected.end()) throw FormatError("unexpected parameter '" + name + "'", static_cast<long long>(at));
        if (ckpt.parameters.count(name)) throw FormatError("duplicate parameter '" + name + "'", static_cast<long long>(at));
        const std::uint32_t rank = r.u32("rank");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64("dimension"));
        if (shape != it->second) {
            throw FormatError("parameter '" + name + "' has shape " + shape_string(shape) + ", config implies " +
                                  shape_string(it->second),
                              static_cast<long long>(at));
        }
        std::vector<float> values(shape_size(shape));
        for (float& v : values) v = r.f32("parameter values");
        ckpt.parameters.emplace(name, Tensor<float>(shape, std::move(values)));
    }
    for (const auto& [name, shape] : expected) {
        if (!ckpt.parameters.count(name)) {
            throw FormatError("checkpoint is missing parameter '" + name + "'", static_cast<long long>(r.offset()));
        }
    }
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace msembed

#endif  // MSEMBED_NET_HPP
