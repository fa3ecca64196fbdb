#include <gtest/gtest.h>

#include <cmath>

#include "test_helpers.hpp"

using namespace msembed;
using msembed::testing::random_tensor;

namespace {

using Vec = std::vector<double>;
using Hinge = ContrastiveConfig::Hinge;

PairLoss pair(const Vec& q, const Vec& c, PairLabel y, Hinge h = Hinge::as_written, DistanceMetric m = DistanceMetric::euclidean()) {
    ContrastiveConfig cfg;
    cfg.hinge = h;
    return contrastive_loss(std::span<const double>(q), std::span<const double>(c), y, cfg, m);
}

TripletLoss triplet(const Vec& a, const Vec& p, const Vec& n, AngularConfig cfg = {}, DistanceMetric m = DistanceMetric::euclidean()) {
    return angular_loss(std::span<const double>(a), std::span<const double>(p), std::span<const double>(n), cfg, m);
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4}); }

Vec to_vec(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

// Pushes every coordinate of `x` at least `gap` away from the matching one in each of `others`.
void separate(Vec& x, const std::vector<const Vec*>& others, double gap) {
    for (std::size_t i = 0; i < x.size(); ++i)
        for (const Vec* o : others)
            if (std::abs(x[i] - (*o)[i]) < gap) x[i] = (*o)[i] + 2 * gap;
}

}  // namespace

TEST(Contrastive, HandValues) {
    auto r = pair({1, 2}, {1, 2}, PairLabel::similar);
    EXPECT_EQ(r.loss, 0.0);
    for (double g : r.grad_query) EXPECT_EQ(g, 0.0);

    // Euclidean D = 2: loss = D^2 / 2.
    EXPECT_NEAR(pair({0, 0}, {2, 0}, PairLabel::similar).loss, 2.0, 1e-12);

    // D^2 = 1.5 > m: hinge inactive.
    r = pair({0, 0}, {std::sqrt(1.5), 0}, PairLabel::dissimilar);
    EXPECT_EQ(r.loss, 0.0);
    for (double g : r.grad_query) EXPECT_EQ(g, 0.0);

    EXPECT_NEAR(pair({1, 1}, {1, 1}, PairLabel::dissimilar, Hinge::as_written).loss, 0.5, 1e-12);
    EXPECT_NEAR(pair({1, 1}, {1, 1}, PairLabel::dissimilar, Hinge::squared_hinge).loss, 0.5, 1e-12);

    // The two hinges differ inside the margin: D = 0.5 gives (1-0.25)/2 and (1-0.5)^2/2.
    EXPECT_NEAR(pair({0}, {0.5}, PairLabel::dissimilar, Hinge::as_written).loss, 0.375, 1e-12);
    EXPECT_NEAR(pair({0}, {0.5}, PairLabel::dissimilar, Hinge::squared_hinge).loss, 0.125, 1e-12);
}

TEST(Contrastive, ZeroBeyondMargin) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto q = to_vec(random_tensor<double>({4}, seed, -2, 2)), c = to_vec(random_tensor<double>({4}, seed + 1, -2, 2));
        const double d = lk_distance(std::span<const double>(q), std::span<const double>(c), DistanceMetric::euclidean());
        for (Hinge h : {Hinge::as_written, Hinge::squared_hinge}) {
            const auto r = pair(q, c, PairLabel::dissimilar, h);
            EXPECT_GE(r.loss, 0.0);
            const bool inactive = h == Hinge::as_written ? d * d >= 1.0 : d >= 1.0;
            if (inactive) {
                EXPECT_EQ(r.loss, 0.0);
                for (double g : r.grad_query) EXPECT_EQ(g, 0.0);
                for (double g : r.grad_candidate) EXPECT_EQ(g, 0.0);
            }
        }
        EXPECT_GE(pair(q, c, PairLabel::similar).loss, 0.0);
    }
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
    const double h = 1e-6;
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 100 * 3 * 2 * 2; ++seed) {
        Vec q = to_vec(random_tensor<double>({5}, seed, -0.4, 0.4));
        const Vec c = to_vec(random_tensor<double>({5}, seed + 31, -0.4, 0.4));
        separate(q, {&c}, 0.05);
        for (double k : {0.25, 1.0, 2.0}) {
            const DistanceMetric m{k};
            const double d = lk_distance(std::span<const double>(q), std::span<const double>(c), m);
            for (PairLabel y : {PairLabel::similar, PairLabel::dissimilar}) {
                for (Hinge hv : {Hinge::as_written, Hinge::squared_hinge}) {
                    // Skip points near the hinge boundary.
                    if (y == PairLabel::dissimilar && (std::abs(d - 1.0) < 0.05 || std::abs(d * d - 1.0) < 0.05)) continue;
                    ++checked;
                    const auto r = pair(q, c, y, hv, m);
                    for (std::size_t i = 0; i < q.size(); ++i) {
                        Vec hi = q, lo = q;
                        hi[i] += h;
                        lo[i] -= h;
                        const double num = (pair(hi, c, y, hv, m).loss - pair(lo, c, y, hv, m).loss) / (2 * h);
                        EXPECT_LT(rel_err(r.grad_query[i], num), 1e-4) << "seed " << seed << " k " << k;
                        Vec chi = c, clo = c;
                        chi[i] += h;
                        clo[i] -= h;
                        const double numc = (pair(q, chi, y, hv, m).loss - pair(q, clo, y, hv, m).loss) / (2 * h);
                        EXPECT_LT(rel_err(r.grad_candidate[i], numc), 1e-4) << "seed " << seed << " k " << k;
                    }
                }
            }
        }
    }
}

TEST(Contrastive, FractionalCoincidentCoordinatesStayFinite) {
    const auto r = pair({0.5, 0.0}, {0.5, 0.2}, PairLabel::dissimilar, Hinge::as_written, DistanceMetric::fractional());
    for (double g : r.grad_query) EXPECT_TRUE(std::isfinite(g));
    EXPECT_EQ(r.grad_query[0], 0.0);
}

TEST(Contrastive, InvalidMargin) {
    ContrastiveConfig cfg;
    cfg.margin = 0.0;
    const Vec a{0};
    EXPECT_THROW(contrastive_loss(std::span<const double>(a), std::span<const double>(a), PairLabel::similar, cfg,
                                  DistanceMetric::euclidean()),
                 ConfigError);
}

TEST(Angular, HandValues) {
    EXPECT_EQ(triplet({0.3, 1}, {0.3, 1}, {5, 5}).loss, 0.0);
    // c = (1,0); D(a,p)^2 = 4; D(n,c)^2 = 4; 4 - 4*1*4 < 0.
    EXPECT_EQ(triplet({0, 0}, {2, 0}, {1, 2}).loss, 0.0);
    // D(n,c)^2 = 0.25: 4 - 4*1*0.25 = 3.
    EXPECT_NEAR(triplet({0, 0}, {2, 0}, {1, 0.5}).loss, 3.0, 1e-12);
}

TEST(Angular, AsWrittenIgnoresNegative) {
    AngularConfig cfg;
    cfg.formula = AngularConfig::Formula::as_written;
    cfg.alpha_degrees = 20.0;
    // tan^2(20deg) * 4 * D(a,c)^2 = 4 t2 * 1 vs D(a,p)^2 = 4.
    const double t2 = std::pow(std::tan(20.0 * M_PI / 180.0), 2);
    const auto r1 = triplet({0, 0}, {2, 0}, {1, 0.5}, cfg);
    const auto r2 = triplet({0, 0}, {2, 0}, {9, -3}, cfg);
    EXPECT_NEAR(r1.loss, 4.0 - 4.0 * t2, 1e-12);
    EXPECT_EQ(r1.loss, r2.loss);
    for (double g : r1.grad_negative) EXPECT_EQ(g, 0.0);
}

TEST(Angular, MonotoneInNegativeDistance) {
    double prev = std::numeric_limits<double>::infinity();
    for (double y = 0.0; y < 2.0; y += 0.05) {
        const double loss = triplet({0, 0}, {2, 0}, {1, y}).loss;
        EXPECT_GE(loss, 0.0);
        EXPECT_LE(loss, prev);
        prev = loss;
    }
}

TEST(Angular, LargerAlphaNeverIncreasesLoss) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto a = to_vec(random_tensor<double>({3}, seed)), p = to_vec(random_tensor<double>({3}, seed + 1)),
                   n = to_vec(random_tensor<double>({3}, seed + 2));
        double prev = std::numeric_limits<double>::infinity();
        for (double alpha : {10.0, 25.0, 45.0, 60.0, 80.0}) {
            AngularConfig cfg;
            cfg.alpha_degrees = alpha;
            const double loss = triplet(a, p, n, cfg).loss;
            EXPECT_LE(loss, prev);
            prev = loss;
        }
    }
}

TEST(Angular, GradientMatchesFiniteDifferences) {
    const double h = 1e-6;
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 100 * 3 * 2; ++seed) {
        Vec a = to_vec(random_tensor<double>({4}, seed));
        Vec p = to_vec(random_tensor<double>({4}, seed + 1));
        Vec n = to_vec(random_tensor<double>({4}, seed + 2));
        separate(p, {&a}, 0.05);
        Vec c(4);
        for (std::size_t i = 0; i < 4; ++i) c[i] = 0.5 * (a[i] + p[i]);
        separate(n, {&c}, 0.05);
        for (double k : {0.25, 1.0, 2.0}) {
            for (auto formula : {AngularConfig::Formula::negative_to_center, AngularConfig::Formula::as_written}) {
                AngularConfig cfg;
                cfg.alpha_degrees = 20.0;
                cfg.formula = formula;
                const DistanceMetric m{k};
                const auto r = triplet(a, p, n, cfg, m);
                if (r.loss < 0.05) continue;  // inactive or too close to the hinge
                ++checked;
                const std::vector<std::pair<Vec*, const std::vector<double>*>> arms{
                    {&a, &r.grad_anchor}, {&p, &r.grad_positive}, {&n, &r.grad_negative}};
                for (const auto& [x, g] : arms) {
                    for (std::size_t i = 0; i < 4; ++i) {
                        const double keep = (*x)[i];
                        (*x)[i] = keep + h;
                        const double up = triplet(a, p, n, cfg, m).loss;
                        (*x)[i] = keep - h;
                        const double down = triplet(a, p, n, cfg, m).loss;
                        (*x)[i] = keep;
                        EXPECT_LT(rel_err((*g)[i], (up - down) / (2 * h)), 1e-4) << "seed " << seed << " k " << k;
                    }
                }
            }
        }
    }
}

TEST(Angular, InvalidAlpha) {
    AngularConfig cfg;
    cfg.alpha_degrees = 90.0;
    EXPECT_THROW(triplet({0}, {1}, {2}, cfg), ConfigError);
    cfg.alpha_degrees = 0.0;
    EXPECT_THROW(triplet({0}, {1}, {2}, cfg), ConfigError);
    EXPECT_THROW(triplet({0, 1}, {1}, {2}, AngularConfig{}), DimensionError);
}

TEST(Triplet, IdsMustBeDistinct) {
    EXPECT_THROW((TripletSample{"a", "a", "b"}.validate()), DataError);
    EXPECT_NO_THROW((TripletSample{"a", "b", "c"}.validate()));
}

TEST(BatchLoss, MeanAndErrors) {
    const auto emb = Tensor<double>::matrix({{0, 0}, {2, 0}, {0, std::sqrt(6.0)}});
    const RowLookup rows{{"x", 0}, {"y", 1}, {"z", 2}};
    const ContrastiveConfig cfg;
    const auto m = DistanceMetric::euclidean();

    const std::vector<PairSample> none;
    EXPECT_THROW(batch_loss(emb, rows, std::span<const PairSample>(none), cfg, m), DataError);

    const std::vector<PairSample> one{{"x", "y", PairLabel::similar, false}};
    const auto b1 = batch_loss(emb, rows, std::span<const PairSample>(one), cfg, m);
    const auto single = pair({0, 0}, {2, 0}, PairLabel::similar);
    EXPECT_EQ(b1.mean_loss, single.loss);
    EXPECT_EQ(b1.grad(0, 0), single.grad_query[0]);
    EXPECT_EQ(b1.grad(1, 0), single.grad_candidate[0]);

    // Losses 2 (D=2) and 3 (D^2=6) average to 2.5; add the 1-and-3 case via a third pair.
    const std::vector<PairSample> two{{"x", "y", PairLabel::similar, false}, {"x", "z", PairLabel::similar, false}};
    EXPECT_NEAR(batch_loss(emb, rows, std::span<const PairSample>(two), cfg, m).mean_loss, 2.5, 1e-12);

    const auto emb2 = Tensor<double>::matrix({{0, 0}, {std::sqrt(2.0), 0}, {0, std::sqrt(6.0)}});
    EXPECT_NEAR(batch_loss(emb2, rows, std::span<const PairSample>(two), cfg, m).mean_loss, 2.0, 1e-12);

    const std::vector<PairSample> bad{{"x", "missing", PairLabel::similar, false}};
    EXPECT_THROW(batch_loss(emb, rows, std::span<const PairSample>(bad), cfg, m), LookupError);
}

TEST(BatchLoss, TripletGradientsAccumulate) {
    const auto emb = Tensor<double>::matrix({{0, 0}, {2, 0}, {1, 0.5}});
    const RowLookup rows{{"a", 0}, {"p", 1}, {"n", 2}};
    const std::vector<TripletSample> ts{{"a", "p", "n"}, {"a", "p", "n"}};
    const auto b = batch_loss(emb, rows, std::span<const TripletSample>(ts), AngularConfig{}, DistanceMetric::euclidean());
    const auto r = triplet({0, 0}, {2, 0}, {1, 0.5});
    EXPECT_NEAR(b.mean_loss, 3.0, 1e-12);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(b.grad(0, i), r.grad_anchor[i], 1e-12);
        EXPECT_NEAR(b.grad(1, i), r.grad_positive[i], 1e-12);
        EXPECT_NEAR(b.grad(2, i), r.grad_negative[i], 1e-12);
    }
    const std::vector<TripletSample> none;
    EXPECT_THROW(batch_loss(emb, rows, std::span<const TripletSample>(none), AngularConfig{}, DistanceMetric::euclidean()),
                 DataError);
}
