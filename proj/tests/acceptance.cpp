// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "msembed.hpp"

using namespace msembed;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr double kFdStep = 1e-5;
constexpr double kFdTol = 1e-4;
constexpr std::size_t kFdCases = 100;
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kHingeClearance = 1e-3;
constexpr double kHandTol = 1e-12;
constexpr std::size_t kArgsortPairs = 1000;
constexpr std::size_t kContrastPoints = 1000;
constexpr std::size_t kContrastTrials = 20;
constexpr double kContrastPassRate = 0.95;
constexpr double kContrastSeconds = 60.0;
constexpr std::size_t kNegatives = 100;
constexpr std::size_t kNegIn = 30, kNegOut = 70;
constexpr std::size_t kSamplerSeeds = 50;
constexpr double kTrainedAccuracy = 0.70;
constexpr double kBaselineLow = 0.4, kBaselineHigh = 0.6;
constexpr std::size_t kHeldOutTriplets = 1000;
constexpr std::size_t kRecallK = 20;
constexpr double kRecallFactor = 3.0;
constexpr double kEndToEndSeconds = 15.0 * 60.0;
constexpr double kAblationMargin = 0.02;
constexpr std::size_t kAblationSeeds = 3;
constexpr std::size_t kRetrievalRecords = 200;

// Training budget shared by the end-to-end run and the ablation.
TrainConfig desk_train_config(std::uint64_t seed) {
    TrainConfig tc;
    tc.optimizer.learning_rate = 1e-3;
    tc.epochs = 4;
    tc.batch_size = 32;
    tc.val_pairs = 128;
    tc.val_triplets = 200;
    tc.seed = seed;
    return tc;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::filesystem::path data_dir() { return std::filesystem::path(MSEMBED_SOURCE_DIR) / "tests" / "data"; }

Dataset load_fashion(const std::string& split, const std::string& prefix) {
    return parse_idx(read_file(data_dir() / ("fmnist-" + split + "-images-idx3-ubyte.gz")),
                     read_file(data_dir() / ("fmnist-" + split + "-labels-idx1-ubyte.gz")), prefix);
}

Tensor<double> uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.values()) v = u(rng);
    return t;
}

// Plain Minkowski distance, written independently of the library.
double oracle_lk(std::span<const double> a, std::span<const double> b, double k) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(std::abs(a[i] - b[i]), k);
    return std::pow(s, 1.0 / k);
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4}); }

// ---------------------------------------------------------------------------

// Central-difference check of a scalar function of several vectors.
double loss_fd_error(const std::function<double(const std::vector<std::vector<double>>&)>& f,
                     std::vector<std::vector<double>> x, const std::vector<std::vector<double>>& analytic) {
    double worst = 0;
    for (std::size_t v = 0; v < x.size(); ++v) {
        for (std::size_t i = 0; i < x[v].size(); ++i) {
            const double orig = x[v][i];
            x[v][i] = orig + kFdStep;
            const double up = f(x);
            x[v][i] = orig - kFdStep;
            const double down = f(x);
            x[v][i] = orig;
            worst = std::max(worst, rel_err(analytic[v][i], (up - down) / (2 * kFdStep)));
        }
    }
    return worst;
}

// Coordinates of different vectors kept at least `gap` apart so the
// fractional metric is smooth over the difference stencil.
std::vector<double> spaced_vector(std::size_t d, Rng& rng, const std::vector<std::vector<double>>& others, double gap) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) {
        for (;;) {
            const double v = u(rng);
            bool ok = true;
            for (const auto& o : others) ok = ok && std::abs(o[i] - v) >= gap;
            if (ok) {
                out[i] = v;
                break;
            }
        }
    }
    return out;
}

Outcome criterion_gradients() {
    const auto t0 = Clock::now();
    std::map<std::string, double> worst;
    std::map<std::string, std::size_t> cases;
    auto record = [&](const std::string& name, double err) {
        worst[name] = std::max(worst[name], err);
        ++cases[name];
    };

    for (std::uint64_t seed = 0; seed < kFdCases; ++seed) {
        Rng rng(seed);
        auto check = [&](const std::string& name, const DifferentiableOp<double>& op, std::vector<Tensor<double>> in) {
            record(name, finite_diff_check(op, std::move(in), kFdStep, kFdTol, seed + 17).max_rel_error);
        };
        auto relu_in = uniform({3, 5}, rng);
        for (double& v : relu_in.values()) v = v < 0 ? std::min(v, -1e-3) : std::max(v, 1e-3);
        check("relu", diffops::relu(), {relu_in});
        check("conv2d", diffops::conv2d(1 + seed % 2, seed % 2),
              {uniform({2, 2, 5, 5}, rng), uniform({3, 2, 3, 3}, rng), uniform({3}, rng)});
        check("maxpool2x2", diffops::maxpool2x2(), {uniform({2, 2, 4, 4}, rng)});
        check("downsample_avg", diffops::downsample_avg(1 + seed % 3), {uniform({1, 2, 6, 6}, rng)});
        check("affine", diffops::affine(), {uniform({3, 4}, rng), uniform({4, 5}, rng), uniform({5}, rng)});
        check("l2_normalize", diffops::l2_normalize(1e-12), {uniform({3, 6}, rng)});
        check("concat", diffops::concat(), {uniform({2, 3}, rng), uniform({2, 4}, rng)});
        check("dropout", diffops::dropout(0.3, seed), {uniform({4, 5}, rng)});
    }

    // Losses under the Euclidean training metric and the fractional retrieval metric.
    for (double k : {2.0, 0.25}) {
        const DistanceMetric metric{k};
        const double gap = k < 1 ? 0.05 : 0.0;
        const std::string tag = "@k=" + fmt(k);
        for (auto hinge : {ContrastiveConfig::Hinge::as_written, ContrastiveConfig::Hinge::squared_hinge}) {
            for (auto label : {PairLabel::similar, PairLabel::dissimilar}) {
                ContrastiveConfig cfg;
                cfg.hinge = hinge;
                const std::string name = std::string("contrastive/") +
                                         (hinge == ContrastiveConfig::Hinge::as_written ? "as_written" : "squared_hinge") +
                                         (label == PairLabel::similar ? "/Y0" : "/Y1") + tag;
                Rng rng(1000 + static_cast<std::uint64_t>(k * 100));
                std::size_t n = 0;
                while (n < kFdCases) {
                    std::vector<std::vector<double>> x;
                    x.push_back(spaced_vector(4, rng, {}, gap));
                    x.push_back(spaced_vector(4, rng, {x[0]}, gap));
                    const double dist = lk_distance(std::span<const double>(x[0]), std::span<const double>(x[1]), metric);
                    // Margin set so the dissimilar hinge is active and half a margin from its boundary.
                    cfg.margin = 2.0 * (hinge == ContrastiveConfig::Hinge::as_written ? dist * dist : dist);
                    auto f = [&](const std::vector<std::vector<double>>& p) {
                        return contrastive_loss(std::span<const double>(p[0]), std::span<const double>(p[1]), label, cfg, metric)
                            .loss;
                    };
                    const auto l = contrastive_loss(std::span<const double>(x[0]), std::span<const double>(x[1]), label, cfg, metric);
                    record(name, loss_fd_error(f, x, {l.grad_query, l.grad_candidate}));
                    ++n;
                }
            }
        }
        for (auto formula : {AngularConfig::Formula::negative_to_center, AngularConfig::Formula::as_written}) {
            AngularConfig cfg;
            cfg.alpha_degrees = 20.0;
            cfg.formula = formula;
            const std::string name =
                std::string("angular/") + (formula == AngularConfig::Formula::as_written ? "as_written" : "negative_to_center") + tag;
            Rng rng(2000 + static_cast<std::uint64_t>(k * 100));
            std::size_t n = 0;
            while (n < kFdCases) {
                std::vector<std::vector<double>> x;
                x.push_back(spaced_vector(4, rng, {}, gap));
                x.push_back(spaced_vector(4, rng, {x[0]}, gap));
                std::vector<double> c(4);
                for (std::size_t i = 0; i < 4; ++i) c[i] = 0.5 * (x[0][i] + x[1][i]);
                x.push_back(spaced_vector(4, rng, {x[0], x[1], c}, gap));
                auto f = [&](const std::vector<std::vector<double>>& p) {
                    return angular_loss(std::span<const double>(p[0]), std::span<const double>(p[1]),
                                        std::span<const double>(p[2]), cfg, metric)
                        .loss;
                };
                const auto l = angular_loss(std::span<const double>(x[0]), std::span<const double>(x[1]),
                                            std::span<const double>(x[2]), cfg, metric);
                // Inactive hinge (zero loss) or too close to it is not a derivative test.
                if (l.loss < kHingeClearance) continue;
                record(name, loss_fd_error(f, x, {l.grad_anchor, l.grad_positive, l.grad_negative}));
                ++n;
            }
        }
    }

    const double elapsed = seconds_since(t0);
    bool ok = elapsed < kGradSuiteSeconds;
    double overall = 0;
    std::string worst_name;
    for (const auto& [name, err] : worst) {
        ok = ok && err < kFdTol && cases[name] >= kFdCases;
        if (err >= overall) {
            overall = err;
            worst_name = name;
        }
    }
    return {ok, std::to_string(worst.size()) + " gradient families x >=" + std::to_string(kFdCases) +
                    " cases, max rel err " + fmt(overall, 3) + " (" + worst_name + "), " + fmt(elapsed, 3) + " s"};
}

// ---------------------------------------------------------------------------

Outcome criterion_loss_identities() {
    Rng rng(42);
    std::size_t checked = 0;
    bool ok = true;
    std::string why;
    const DistanceMetric euclid = DistanceMetric::euclidean();
    for (std::size_t t = 0; t < 200; ++t) {
        const auto a = uniform({6}, rng), b = uniform({6}, rng);
        const double d = lk_distance(a.values(), b.values(), euclid);
        double sq = 0;
        for (std::size_t i = 0; i < 6; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
        for (auto hinge : {ContrastiveConfig::Hinge::as_written, ContrastiveConfig::Hinge::squared_hinge}) {
            ContrastiveConfig cfg;
            cfg.hinge = hinge;
            const auto sim = contrastive_loss(a.values(), b.values(), PairLabel::similar, cfg, euclid);
            if (sim.loss != 0.5 * d * d || std::abs(sim.loss - 0.5 * sq) > 1e-14 * std::max(1.0, sq)) {
                ok = false;
                why = "Y=0 loss differs from D^2/2";
            }
            // Margin below D (and below D^2) leaves the hinge inactive.
            cfg.margin = 0.5 * std::min(d, d * d);
            const auto dis = contrastive_loss(a.values(), b.values(), PairLabel::dissimilar, cfg, euclid);
            const bool zero_grad = std::all_of(dis.grad_query.begin(), dis.grad_query.end(), [](double g) { return g == 0.0; }) &&
                                   std::all_of(dis.grad_candidate.begin(), dis.grad_candidate.end(), [](double g) { return g == 0.0; });
            if (dis.loss != 0.0 || !zero_grad) {
                ok = false;
                why = "inactive hinge gave nonzero loss or gradient";
            }
            checked += 2;
        }
        for (auto formula : {AngularConfig::Formula::negative_to_center, AngularConfig::Formula::as_written}) {
            AngularConfig cfg;
            cfg.formula = formula;
            const auto n = uniform({6}, rng);
            for (const auto& metric : {euclid, DistanceMetric::fractional()}) {
                const auto l = angular_loss(a.values(), a.values(), n.values(), cfg, metric);
                if (l.loss != 0.0) {
                    ok = false;
                    why = "angular loss nonzero with anchor == positive";
                }
                ++checked;
            }
        }
    }
    return {ok, std::to_string(checked) + " identity checks" + (why.empty() ? "" : "; " + why)};
}

// ---------------------------------------------------------------------------

Outcome criterion_fractional_metric() {
    const std::vector<double> o{0, 0}, e{1, 1}, mid{1, 0};
    const auto D = [](const std::vector<double>& a, const std::vector<double>& b, double k) {
        return lk_distance(std::span<const double>(a), std::span<const double>(b), DistanceMetric{k});
    };
    bool ok = std::abs(D(o, e, 1.0) - 2.0) < kHandTol && std::abs(D(o, e, 2.0) - std::sqrt(2.0)) < kHandTol &&
              std::abs(D(o, e, 0.5) - 4.0) < kHandTol;
    const bool counter = D(o, e, 0.5) > D(o, mid, 0.5) + D(mid, e, 0.5);
    ok = ok && counter;

    std::size_t mismatches = 0;
    for (double k : {0.25, 0.5, 1.0, 2.0, 3.0}) {
        Rng rng(static_cast<std::uint64_t>(k * 1000));
        std::vector<std::pair<double, double>> keyed;
        std::vector<std::size_t> by_dist(kArgsortPairs), by_sum(kArgsortPairs);
        std::vector<double> dist(kArgsortPairs), sum(kArgsortPairs);
        for (std::size_t i = 0; i < kArgsortPairs; ++i) {
            const auto a = uniform({8}, rng, 0, 1), b = uniform({8}, rng, 0, 1);
            dist[i] = lk_distance(a.values(), b.values(), DistanceMetric{k});
            double s = 0;
            for (std::size_t j = 0; j < 8; ++j) s += std::pow(std::abs(a[j] - b[j]), k);
            sum[i] = s;
            by_dist[i] = by_sum[i] = i;
        }
        std::stable_sort(by_dist.begin(), by_dist.end(), [&](std::size_t x, std::size_t y) { return dist[x] < dist[y]; });
        std::stable_sort(by_sum.begin(), by_sum.end(), [&](std::size_t x, std::size_t y) { return sum[x] < sum[y]; });
        mismatches += by_dist != by_sum ? 1 : 0;
    }
    ok = ok && mismatches == 0;
    return {ok, "hand values 2/sqrt2/4, k=0.5 counterexample " + std::string(counter ? "holds" : "FAILS") +
                    ", argsort mismatches " + std::to_string(mismatches) + " over 5 exponents x " +
                    std::to_string(kArgsortPairs) + " pairs"};
}

// ---------------------------------------------------------------------------

Outcome criterion_concentration() {
    const auto t0 = Clock::now();
    const std::vector<std::size_t> dims{2, 100};
    const std::vector<double> ks{0.3, 2.0};
    const auto rows = contrast_table(dims, ks, kContrastPoints, kContrastTrials, 2018);
    auto row = [&](std::size_t d, double k) -> const ContrastRow& {
        return *std::find_if(rows.begin(), rows.end(), [&](const ContrastRow& r) { return r.dimension == d && r.k == k; });
    };
    const auto& low2 = row(2, 2.0);
    const auto& high2 = row(100, 2.0);
    const auto& high03 = row(100, 0.3);
    std::size_t passed = 0;
    for (std::size_t t = 0; t < kContrastTrials; ++t) {
        if (low2.trials[t] > high2.trials[t] && high03.trials[t] > high2.trials[t]) ++passed;
    }
    const double rate = static_cast<double>(passed) / static_cast<double>(kContrastTrials);
    const double elapsed = seconds_since(t0);
    const bool ok = low2.contrast_mean > high2.contrast_mean && high03.contrast_mean > high2.contrast_mean &&
                    rate >= kContrastPassRate && elapsed < kContrastSeconds;
    return {ok, "mean contrast k=2: d=2 " + fmt(low2.contrast_mean) + " -> d=100 " + fmt(high2.contrast_mean) +
                    "; d=100 k=0.3 " + fmt(high03.contrast_mean) + "; trial pass rate " + fmt(rate) + ", " +
                    fmt(elapsed, 3) + " s"};
}

// ---------------------------------------------------------------------------

Outcome criterion_sampler(const Dataset& train_set) {
    PairSampler sampler(train_set, {BissScorer::intensity()}, SamplerConfig{});
    std::size_t good = 0;
    std::string why;
    for (std::uint64_t seed = 0; seed < kSamplerSeeds; ++seed) {
        Rng rng(seed);
        const auto& query = train_set.item(std::uniform_int_distribution<std::size_t>(0, train_set.size() - 1)(rng));
        const auto candidates = sampler.positive_candidates(query.id);
        const std::set<std::string> cand(candidates.begin(), candidates.end());
        const auto draws = sampler.sample_negatives(query.id, kNegatives, rng);
        std::set<std::string> seen;
        std::size_t in = 0, out = 0;
        bool valid = draws.size() == kNegatives;
        for (const auto& d : draws) {
            const auto& item = train_set.at(d.id);
            valid = valid && seen.insert(d.id).second && d.id != query.id;
            if (item.label == query.label) {
                ++in;
                valid = valid && !cand.count(d.id);
            } else {
                ++out;
            }
        }
        if (valid && in == kNegIn && out == kNegOut) ++good;
        else why = "seed " + std::to_string(seed) + ": " + std::to_string(in) + "/" + std::to_string(out);
    }
    return {good == kSamplerSeeds, std::to_string(good) + "/" + std::to_string(kSamplerSeeds) + " seeds gave exactly " +
                                      std::to_string(kNegIn) + " in-class / " + std::to_string(kNegOut) +
                                      " out-of-class distinct negatives" + (why.empty() ? "" : "; last miss " + why)};
}

// ---------------------------------------------------------------------------

struct TrainedRun {
    Checkpoint model;
    double class_accuracy = 0;
};

RunConfig desk_run(std::uint64_t seed, SamplerConfig::Strategy strategy) {
    RunConfig rc;
    rc.train = desk_train_config(seed);
    rc.apply_seed(seed);
    rc.sampler.strategy = strategy;
    rc.validate();
    return rc;
}

// Every tenth training item doubles as the (logging-only) validation split;
// the held-out test split is never seen during training or model selection.
Dataset validation_slice(const Dataset& train_set) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < train_set.size(); i += 10) pos.push_back(i);
    return train_set.subset(pos);
}

TrainedRun train_and_score(const Dataset& train_set, const Dataset& test_set, const std::vector<TripletSample>& triplets,
                           std::uint64_t seed, SamplerConfig::Strategy strategy) {
    const RunConfig rc = desk_run(seed, strategy);
    const auto result = train(train_set, validation_slice(train_set), rc.net, rc.sampler, rc.train, rc.scorers);
    if (result.diverged) throw NumericError("training diverged: " + result.divergence_reason);
    return {result.last, triplet_accuracy(result.last, triplets, test_set, rc.metric)};
}

// Self-retrieval: catalog = clean test images, query = flipped and shifted copy.
double self_retrieval_recall(const Checkpoint& model, const Dataset& catalog_set, const DistanceMetric& metric) {
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& item : catalog_set.items()) {
        ids.push_back(item.id);
        labels.push_back(item.label);
    }
    const auto catalog = build_index(records_from_rows(embed_batched(model, catalog_set.stack_all()), ids, labels), metric);

    Rng rng(7);
    std::uniform_int_distribution<int> offset(-2, 2);
    Dataset queries(catalog_set.image_shape());
    std::vector<GroundTruthQuery> gt;
    for (const auto& item : catalog_set.items()) {
        int dx = 0, dy = 0;
        while (dx == 0 && dy == 0) {
            dx = offset(rng);
            dy = offset(rng);
        }
        queries.add({"q" + item.id, shift(hflip(item.image), dx, dy), item.label});
        gt.push_back({"q" + item.id, {item.id}});
    }
    std::vector<std::string> qids;
    for (const auto& q : queries.items()) qids.push_back(q.id);
    return topk_recall(EmbeddingTable::from_dataset(model, queries, qids), gt, catalog, kRecallK);
}

struct EndToEnd {
    Outcome outcome;
    double biss_seed1_accuracy = 0;
};

EndToEnd criterion_end_to_end(const Dataset& train_set, const Dataset& test_set, const std::vector<TripletSample>& triplets) {
    const auto t0 = Clock::now();
    const RunConfig rc = desk_run(1, SamplerConfig::Strategy::biss);
    const Checkpoint untrained = build_network(rc.net, rc.seed);
    Rng rng(5);
    const auto random_triplets = make_random_triplets(test_set, kHeldOutTriplets, rng);
    const double baseline = triplet_accuracy(untrained, random_triplets, test_set, rc.metric);
    const double untrained_class = triplet_accuracy(untrained, triplets, test_set, rc.metric);
    const double untrained_recall = self_retrieval_recall(untrained, test_set, rc.metric);

    const auto run = train_and_score(train_set, test_set, triplets, 1, SamplerConfig::Strategy::biss);
    const double recall = self_retrieval_recall(run.model, test_set, rc.metric);
    const double random_recall = static_cast<double>(kRecallK) / static_cast<double>(test_set.size());
    const double elapsed = seconds_since(t0);

    const bool ok = run.class_accuracy >= kTrainedAccuracy && baseline >= kBaselineLow && baseline <= kBaselineHigh &&
                    recall >= kRecallFactor * random_recall && elapsed <= kEndToEndSeconds;
    return {{ok, "held-out triplet acc " + fmt(run.class_accuracy) + " (untrained: " + fmt(untrained_class) +
                     " on the same triplets, " + fmt(baseline) + " on label-free random triplets); top" +
                     std::to_string(kRecallK) + " recall " + fmt(recall) + " vs random " + fmt(random_recall) +
                     " (untrained " + fmt(untrained_recall) + "); " + fmt(elapsed, 3) + " s"},
            run.class_accuracy};
}

Outcome criterion_ablation(const Dataset& train_set, const Dataset& test_set, const std::vector<TripletSample>& triplets,
                           double biss_seed1) {
    std::size_t wins = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= kAblationSeeds; ++seed) {
        const double biss = seed == 1 ? biss_seed1
                                      : train_and_score(train_set, test_set, triplets, seed, SamplerConfig::Strategy::biss).class_accuracy;
        const double rnd =
            train_and_score(train_set, test_set, triplets, seed, SamplerConfig::Strategy::random_baseline).class_accuracy;
        const bool ok = biss >= rnd - kAblationMargin;
        wins += ok ? 1 : 0;
        detail += (detail.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " biss " + fmt(biss) +
                  " vs random " + fmt(rnd);
    }
    return {wins * 2 > kAblationSeeds, std::to_string(wins) + "/" + std::to_string(kAblationSeeds) +
                                          " seeds non-inferior within " + fmt(kAblationMargin) + ": " + detail};
}

// ---------------------------------------------------------------------------

Outcome criterion_determinism(const Dataset& test_set) {
    bool ok = true;
    std::vector<std::string> failures;
    auto expect = [&](bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            failures.push_back(what);
        }
    };

    // Small pipeline run twice from identical seeds.
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < test_set.size(); i += 5) pos.push_back(i);
    const Dataset small = test_set.subset(pos);
    auto pipeline = [&]() {
        RunConfig rc;
        rc.train = desk_train_config(11);
        rc.train.epochs = 1;
        rc.train.batches_per_epoch = 3;
        rc.train.val_pairs = 32;
        rc.train.val_triplets = 50;
        rc.apply_seed(11);
        const auto result = train(small, small, rc.net, rc.sampler, rc.train, rc.scorers);
        std::vector<std::string> ids;
        std::vector<int> labels;
        for (const auto& item : small.items()) {
            ids.push_back(item.id);
            labels.push_back(item.label);
        }
        const auto index = build_index(records_from_rows(embed_batched(result.best, small.stack_all(), 16, 2), ids, labels), rc.metric);
        const auto hits = query_topk(index, index.records()[3].vector.values(), 10);
        return std::make_tuple(encode_checkpoint(result.best), encode_embeddings(index), hits);
    };
    const auto first = pipeline();
    const auto second = pipeline();
    expect(std::get<0>(first) == std::get<0>(second), "checkpoint bytes differ between runs");
    expect(std::get<1>(first) == std::get<1>(second), "embedding bytes differ between runs");
    expect(std::get<2>(first) == std::get<2>(second), "query results differ between runs");

    // Round trips.
    const Checkpoint ckpt = decode_checkpoint(std::get<0>(first));
    expect(encode_checkpoint(ckpt) == std::get<0>(first), "checkpoint re-encode differs");
    const EmbeddingIndex index = decode_embeddings(std::get<1>(first));
    expect(encode_embeddings(index) == std::get<1>(first), "embedding re-encode differs");
    const Bytes ds_bytes = encode_dataset(small);
    expect(decode_dataset(ds_bytes) == small && encode_dataset(decode_dataset(ds_bytes)) == ds_bytes, "dataset round trip");

    // Golden fixtures against their generating formulas.
    const auto idx = parse_idx(read_file(data_dir() / "golden-images-idx3-ubyte"), read_file(data_dir() / "golden-labels-idx1-ubyte"));
    const int idx_labels[] = {0, 9, 4};
    expect(idx.size() == 3, "IDX fixture item count");
    for (std::size_t i = 0; i < idx.size() && i < 3; ++i) {
        expect(idx.item(i).label == idx_labels[i], "IDX fixture label");
        for (std::size_t j = 0; j < 6; ++j)
            expect(idx.item(i).image[j] == static_cast<float>((40 * i + 50 * j) % 256) / 255.0f, "IDX fixture pixel");
    }
    const auto cifar = parse_cifar10_bin(read_file(data_dir() / "golden-cifar10.bin"));
    const int cifar_labels[] = {3, 9};
    expect(cifar.size() == 2, "CIFAR fixture item count");
    for (std::size_t i = 0; i < cifar.size() && i < 2; ++i) {
        expect(cifar.item(i).label == cifar_labels[i], "CIFAR fixture label");
        for (std::size_t j = 0; j < 3072; ++j)
            expect(cifar.item(i).image[j] == static_cast<float>((i + 3 * j) % 256) / 255.0f, "CIFAR fixture pixel");
    }
    std::sort(failures.begin(), failures.end());
    failures.erase(std::unique(failures.begin(), failures.end()), failures.end());
    std::string detail = "pipeline rerun, checkpoint/embedding/dataset round trips, IDX and CIFAR golden pixels";
    for (const auto& f : failures) detail += "; " + f;
    return {ok, detail};
}

// ---------------------------------------------------------------------------

Outcome criterion_retrieval() {
    std::size_t comparisons = 0, mismatches = 0;
    for (double k : {0.25, 1.0, 2.0}) {
        Rng rng(static_cast<std::uint64_t>(k * 4000) + 3);
        std::vector<EmbeddingRecord> recs;
        for (std::size_t i = 0; i < kRetrievalRecords; ++i) {
            Tensor<float> v({16});
            std::uniform_real_distribution<float> u(-1, 1);
            for (float& x : v.values()) x = u(rng);
            recs.push_back({make_item_id("r", (i * 37) % kRetrievalRecords), static_cast<int>(i % 5), v});
        }
        const auto index = build_index(recs, DistanceMetric{k});
        for (std::size_t qn = 0; qn < 10; ++qn) {
            std::vector<double> q(16);
            std::uniform_real_distribution<double> u(-1, 1);
            // The index is queried in 32-bit, so the oracle sees the same rounded query.
            for (double& x : q) x = static_cast<float>(u(rng));
            std::vector<std::pair<double, std::string>> full;
            for (const auto& r : recs) {
                std::vector<double> v(r.vector.values().begin(), r.vector.values().end());
                full.emplace_back(oracle_lk(q, v, k), r.id);
            }
            std::sort(full.begin(), full.end());
            std::vector<float> qf(q.begin(), q.end());
            for (std::size_t topk : {std::size_t{1}, std::size_t{5}, std::size_t{20}, kRetrievalRecords}) {
                const auto got = query_topk(index, std::span<const float>(qf), topk);
                ++comparisons;
                bool same = got.size() == topk;
                for (std::size_t i = 0; same && i < topk; ++i)
                    same = got[i].id == full[i].second && std::abs(got[i].distance - full[i].first) <= 1e-9 * full[i].first;
                mismatches += same ? 0 : 1;
            }
        }
    }
    return {mismatches == 0, std::to_string(comparisons - mismatches) + "/" + std::to_string(comparisons) +
                                 " top-k lists equal the full-sort oracle (k in {1,5,20,N}, exponents {0.25,1,2})"};
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    int failed = 0;
    auto report = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
        const auto start = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << "criterion " << id << " [" << title << "]: " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << " ("
                  << fmt(seconds_since(start), 3) << " s)" << std::endl;
    };

    report(1, "gradient suite", criterion_gradients);
    report(2, "loss identities", criterion_loss_identities);
    report(3, "fractional metric", criterion_fractional_metric);
    report(4, "distance concentration", criterion_concentration);

    const Dataset train_set = load_fashion("train", "tr");
    const Dataset test_set = load_fashion("test", "te");
    Rng trng(99);
    const auto held_out = make_class_triplets(test_set, kHeldOutTriplets, trng);

    report(5, "sampler composition", [&] { return criterion_sampler(train_set); });
    double biss_seed1 = -1;
    report(6, "end-to-end training", [&] {
        auto r = criterion_end_to_end(train_set, test_set, held_out);
        biss_seed1 = r.biss_seed1_accuracy;
        return r.outcome;
    });
    report(7, "sampling ablation", [&] {
        if (biss_seed1 < 0) throw std::runtime_error("end-to-end run did not produce a seed-1 model");
        return criterion_ablation(train_set, test_set, held_out, biss_seed1);
    });
    report(8, "determinism", [&] { return criterion_determinism(test_set); });
    report(9, "retrieval exactness", criterion_retrieval);

    std::cout << "summary: " << 9 - failed << "/9 criteria passed in " << fmt(seconds_since(t0), 4) << " s" << std::endl;
    return failed == 0 ? 0 : 1;
}
