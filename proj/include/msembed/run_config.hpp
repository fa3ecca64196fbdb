#ifndef MSEMBED_RUN_CONFIG_HPP
#define MSEMBED_RUN_CONFIG_HPP

#include <string>
#include <vector>

#include "json_fields.hpp"
#include "net.hpp"
#include "sampling.hpp"
#include "train.hpp"

namespace msembed {

/// Everything a pipeline run needs besides its input files.
struct RunConfig {
    MultiScaleNetConfig net = MultiScaleNetConfig::desk_scale();
    SamplerConfig sampler;
    std::vector<BissScorer> scorers{BissScorer::intensity()};
    TrainConfig train;
    /// Retrieval and evaluation metric.
    DistanceMetric metric = DistanceMetric::fractional();
    std::uint64_t seed = 0;

    /// Propagates one seed to every random stream of the run.
    void apply_seed(std::uint64_t s) {
        seed = s;
        train.seed = s;
        sampler.rng_seed = s;
    }

    void validate() const {
        msembed::validate(net);
        sampler.validate();
        for (const auto& s : scorers) {
            if (s.kind == BissScorer::Kind::embedding_model) throw ConfigError("embedding scorers cannot be configured from a file");
            s.validate();
        }
        train.validate();
        metric.validate();
    }
};

namespace detail {

template <typename E>
bool parse_enum(JsonFields& f, const std::string& key, const std::vector<std::pair<std::string, E>>& names, E& out) {
    std::string value;
    bool present = false;
    if (f.child(key)) {
        present = true;
        f.get(key, value);
    }
    if (!present) return false;
    for (const auto& [name, e] : names) {
        if (name == value) {
            out = e;
            return true;
        }
    }
    std::string allowed;
    for (const auto& [name, e] : names) allowed += (allowed.empty() ? "" : "|") + name;
    f.error(key, "expected one of " + allowed + ", got '" + value + "'");
    return false;
}

inline BissScorer scorer_from_json(const Json& j, const std::string& path, std::vector<std::string>& errors) {
    JsonFields f(j, path, errors);
    BissScorer s;
    parse_enum<BissScorer::Kind>(f, "kind",
                                 {{"intensity_histogram", BissScorer::Kind::intensity_histogram},
                                  {"color_histogram", BissScorer::Kind::color_histogram}},
                                 s.kind);
    f.get("bins", s.bins);
    f.finish();
    return s;
}

inline double metric_k_from(JsonFields& f, const std::string& key, double fallback) {
    double k = fallback;
    f.get(key, k);
    if (!(k > 0.0)) f.error(key, "metric exponent must be positive");
    return k;
}

}  // namespace detail

/**
 * Parses a run configuration document. Every key is optional; unknown keys
 * and type errors are all collected and reported together in one
 * ConfigError, and the result is validated before it is returned.
 */
inline RunConfig run_config_from_json(const Json& doc) {
    std::vector<std::string> errors;
    RunConfig rc;
    JsonFields root(doc, "", errors);
    root.get("seed", rc.seed);
    if (const Json* n = root.child("net")) rc.net = net_config_from_json(*n, "net", errors);

    if (const Json* s = root.child("sampler")) {
        JsonFields f(*s, "sampler", errors);
        f.get("n_candidates", rc.sampler.n_candidates);
        f.get("in_class_fraction", rc.sampler.in_class_fraction);
        f.get("self_pair_fraction", rc.sampler.self_pair_fraction);
        detail::parse_enum<SamplerConfig::Strategy>(
            f, "strategy", {{"biss", SamplerConfig::Strategy::biss}, {"random_baseline", SamplerConfig::Strategy::random_baseline}},
            rc.sampler.strategy);
        if (const Json* sc = f.child("scorers")) {
            if (!sc->is_array() || sc->empty()) {
                f.error("scorers", "expected a non-empty array");
            } else {
                rc.scorers.clear();
                for (std::size_t i = 0; i < sc->size(); ++i)
                    rc.scorers.push_back(detail::scorer_from_json((*sc)[i], "sampler.scorers[" + std::to_string(i) + "]", errors));
            }
        }
        f.finish();
    }

    if (const Json* t = root.child("train")) {
        JsonFields f(*t, "train", errors);
        TrainConfig& tc = rc.train;
        f.get("learning_rate", tc.optimizer.learning_rate);
        f.get("rho", tc.optimizer.rho);
        f.get("epsilon", tc.optimizer.epsilon);
        f.get("weight_decay", tc.optimizer.weight_decay);
        f.get("epochs", tc.epochs);
        f.get("batch_size", tc.batch_size);
        f.get("batches_per_epoch", tc.batches_per_epoch);
        f.get("lr_decay", tc.lr_decay);
        f.get("pos_fraction", tc.pos_fraction);
        f.get("val_pairs", tc.val_pairs);
        f.get("val_triplets", tc.val_triplets);
        tc.loss_metric.k = detail::metric_k_from(f, "loss_metric_k", tc.loss_metric.k);
        if (f.child("augmentation")) {
            std::vector<std::string> names;
            f.get("augmentation", names);
            tc.augmentation.clear();
            for (const auto& name : names) {
                if (name == "hflip") tc.augmentation.insert(Augmentation::hflip);
                else if (name == "shift") tc.augmentation.insert(Augmentation::shift);
                else if (name == "rotate") tc.augmentation.insert(Augmentation::rotate);
                else f.error("augmentation", "unknown transform '" + name + "'");
            }
        }
        if (const Json* l = f.child("loss")) {
            JsonFields lf(*l, "train.loss", errors);
            std::string type = "contrastive";
            lf.get("type", type);
            if (type == "contrastive") {
                ContrastiveConfig c;
                lf.get("margin", c.margin);
                detail::parse_enum<ContrastiveConfig::Hinge>(
                    lf, "hinge",
                    {{"as_written", ContrastiveConfig::Hinge::as_written},
                     {"squared_hinge", ContrastiveConfig::Hinge::squared_hinge}},
                    c.hinge);
                tc.loss = c;
            } else if (type == "angular") {
                AngularConfig c;
                lf.get("alpha_degrees", c.alpha_degrees);
                detail::parse_enum<AngularConfig::Formula>(
                    lf, "formula",
                    {{"negative_to_center", AngularConfig::Formula::negative_to_center},
                     {"as_written", AngularConfig::Formula::as_written}},
                    c.formula);
                tc.loss = c;
            } else {
                lf.error("type", "expected contrastive|angular, got '" + type + "'");
            }
            lf.finish();
        }
        f.finish();
    }

    if (const Json* m = root.child("metric")) {
        JsonFields f(*m, "metric", errors);
        rc.metric.k = detail::metric_k_from(f, "k", rc.metric.k);
        f.finish();
    }
    root.finish();
    throw_if_errors(errors);
    rc.train.eval_metric = rc.metric;
    rc.apply_seed(rc.seed);
    rc.validate();
    return rc;
}

inline RunConfig run_config_from_text(const std::string& text) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return run_config_from_json(doc);
}

}  // namespace msembed

#endif  // MSEMBED_RUN_CONFIG_HPP
