#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "bagnet/metrics.hpp"

using namespace bagnet;
using testutil::random_mask;

namespace {

Tensor<float> mask2x2(float a, float b, float c, float d) {
    return Tensor<float>({1, 1, 2, 2}, {a, b, c, d});
}

// Pixel-by-pixel counting and the textbook ratios, written without the library.
struct Oracle {
    long tp = 0, fp = 0, tn = 0, fn = 0;

    Oracle(const Tensor<float>& p, const Tensor<float>& g) {
        const Shape s = p.shape();
        for (int r = 0; r < s.h; ++r) {
            for (int c = 0; c < s.w; ++c) {
                const bool pp = p.at(0, 0, r, c) == 1.0f;
                const bool gg = g.at(0, 0, r, c) == 1.0f;
                if (pp && gg) ++tp;
                if (pp && !gg) ++fp;
                if (!pp && gg) ++fn;
                if (!pp && !gg) ++tn;
            }
        }
    }

    static double frac(long num, long den, double if_zero) {
        return den == 0 ? if_zero : static_cast<double>(num) / static_cast<double>(den);
    }

    std::array<double, 6> metrics() const {
        const double both_empty = (tp + fp == 0 && tp + fn == 0) ? 1.0 : 0.0;
        return {frac(tp + tn, tp + fp + tn + fn, 1.0), frac(tp, tp + fp + fn, both_empty),
                frac(tp, tp + fp, both_empty),        frac(tp, tp + fn, both_empty),
                frac(tn, tn + fp, 1.0),               frac(2 * tp, 2 * tp + fp + fn, both_empty)};
    }
};

}  // namespace

TEST_SUITE("threshold") {
    TEST_CASE("ties go to foreground") {
        const Tensor<float> p({1, 1, 1, 4}, {0.5f, 0.4999f, 0.0f, 1.0f});
        CHECK(threshold(p, 0.5) == Tensor<float>({1, 1, 1, 4}, {1.0f, 0.0f, 0.0f, 1.0f}));
    }

    TEST_CASE("idempotent on binary masks") {
        const Tensor<float> m = random_mask<float>({1, 1, 8, 8}, 1);
        CHECK(threshold(m) == m);
        CHECK(threshold(threshold(m)) == m);
    }

    TEST_CASE("threshold outside [0, 1]") {
        CHECK_THROWS_AS(threshold(Tensor<float>({1, 1, 1, 1}), 1.5), ConfigError);
        CHECK_THROWS_AS(threshold(Tensor<float>({1, 1, 1, 1}), -0.1), ConfigError);
    }
}

TEST_SUITE("confusion") {
    TEST_CASE("hand-counted example") {
        const ConfusionCounts c = confusion(mask2x2(1, 0, 0, 0), mask2x2(1, 1, 0, 0));
        CHECK(c == ConfusionCounts{1, 0, 2, 1});
    }

    TEST_CASE("identical and complementary masks") {
        const Tensor<float> g = random_mask<float>({1, 1, 9, 7}, 2);
        const ConfusionCounts same = confusion(g, g);
        CHECK(same.fp == 0);
        CHECK(same.fn == 0);
        Tensor<float> inv(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            inv[i] = 1.0f - g[i];
        }
        const ConfusionCounts comp = confusion(inv, g);
        CHECK(comp.tp == 0);
        CHECK(comp.tn == 0);
        CHECK(comp.total() == g.size());
    }

    TEST_CASE("errors") {
        CHECK_THROWS_AS(confusion(Tensor<float>({1, 1, 2, 2}), Tensor<float>({1, 1, 2, 3})), ShapeError);
        CHECK_THROWS_AS(confusion(mask2x2(1, 0, 0.5f, 0), mask2x2(1, 1, 0, 0)), DataError);
        CHECK_THROWS_AS(confusion(mask2x2(1, 0, 0, 0), mask2x2(1, 2, 0, 0)), DataError);
    }
}

TEST_SUITE("compute_metrics") {
    TEST_CASE("worked example") {
        const MetricsReport r = compute_metrics({1, 0, 2, 1});
        CHECK(r.accuracy == 0.75);
        CHECK(r.jaccard == 0.5);
        CHECK(r.precision == 1.0);
        CHECK(r.recall == 0.5);
        CHECK(r.specificity == 1.0);
        CHECK(r.dice == 2.0 / 3.0);
    }

    TEST_CASE("perfect prediction") {
        const MetricsReport r = compute_metrics({10, 0, 20, 0});
        for (double v : r.values()) {
            CHECK(v == 1.0);
        }
    }

    TEST_CASE("empty prediction and empty truth") {
        const MetricsReport r = compute_metrics(confusion(Tensor<float>({1, 1, 4, 4}), Tensor<float>({1, 1, 4, 4})));
        for (double v : r.values()) {
            CHECK(v == 1.0);
        }
    }

    TEST_CASE("one side empty") {
        const MetricsReport a = compute_metrics({0, 0, 10, 5});  // nothing predicted
        CHECK(a.dice == 0.0);
        CHECK(a.jaccard == 0.0);
        CHECK(a.precision == 0.0);
        CHECK(a.recall == 0.0);
        CHECK(a.specificity == 1.0);
        const MetricsReport b = compute_metrics({0, 5, 10, 0});  // nothing there
        CHECK(b.dice == 0.0);
        CHECK(b.recall == 0.0);
        CHECK(b.specificity == doctest::Approx(10.0 / 15.0));
        const MetricsReport all_fg = compute_metrics({4, 0, 0, 0});
        CHECK(all_fg.specificity == 1.0);
    }

    TEST_CASE("empty image") {
        CHECK_THROWS_AS(compute_metrics({0, 0, 0, 0}), UsageError);
    }

    TEST_CASE("brute-force oracle on random 16x16 pairs") {
        std::mt19937_64 rng(2024);
        std::uniform_real_distribution<double> density(0.0, 1.0);
        for (int trial = 0; trial < 100; ++trial) {
            const Tensor<float> p = random_mask<float>({1, 1, 16, 16}, rng(), trial % 10 == 0 ? 0.0 : density(rng));
            const Tensor<float> g = random_mask<float>({1, 1, 16, 16}, rng(), trial % 7 == 0 ? 0.0 : density(rng));
            const Oracle o(p, g);
            const ConfusionCounts c = confusion(p, g);
            CHECK(c.tp == static_cast<std::uint64_t>(o.tp));
            CHECK(c.fp == static_cast<std::uint64_t>(o.fp));
            CHECK(c.tn == static_cast<std::uint64_t>(o.tn));
            CHECK(c.fn == static_cast<std::uint64_t>(o.fn));
            CHECK(compute_metrics(c).values() == o.metrics());
        }
    }

    TEST_CASE("dice and jaccard agree") {
        std::mt19937_64 rng(7);
        std::uniform_int_distribution<std::uint64_t> count(0, 5000);
        for (int trial = 0; trial < 2000; ++trial) {
            const ConfusionCounts c{count(rng), count(rng), count(rng), count(rng)};
            if (c.tp + c.fp + c.fn == 0) {
                continue;
            }
            const MetricsReport r = compute_metrics(c);
            CHECK(std::abs(r.dice - 2.0 * r.jaccard / (1.0 + r.jaccard)) <= 1e-12);
            for (double v : r.values()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }

    TEST_CASE("symmetries and pixel permutations") {
        std::mt19937_64 rng(8);
        for (int trial = 0; trial < 30; ++trial) {
            const Tensor<float> p = random_mask<float>({1, 1, 12, 12}, rng(), 0.4);
            const Tensor<float> g = random_mask<float>({1, 1, 12, 12}, rng(), 0.3);
            const MetricsReport pg = compute_metrics(confusion(p, g));
            const MetricsReport gp = compute_metrics(confusion(g, p));
            CHECK(pg.accuracy == gp.accuracy);
            CHECK(pg.dice == gp.dice);
            CHECK(pg.jaccard == gp.jaccard);
            CHECK(pg.precision == gp.recall);

            std::vector<std::size_t> perm(p.size());
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            Tensor<float> pp(p.shape());
            Tensor<float> gg(g.shape());
            for (std::size_t i = 0; i < perm.size(); ++i) {
                pp[i] = p[perm[i]];
                gg[i] = g[perm[i]];
            }
            CHECK(compute_metrics(confusion(pp, gg)) == pg);
        }
    }
}

TEST_SUITE("aggregation") {
    MetricsReport dice_only(double d) {
        MetricsReport r;
        r.dice = d;
        return r;
    }

    TEST_CASE("population std across fold means") {
        const FoldAggregate a = aggregate_folds({{dice_only(60)}, {dice_only(70)}, {dice_only(80)}});
        CHECK(a.metrics[5].mean == doctest::Approx(70.0));
        CHECK(a.metrics[5].std == doctest::Approx(8.1650).epsilon(1e-5));
        CHECK(a.fold_means.size() == 3);
    }

    TEST_CASE("images are averaged within a fold first") {
        const FoldAggregate a = aggregate_folds({{dice_only(0.2), dice_only(0.4)}, {dice_only(0.9)}});
        CHECK(a.fold_means[0].dice == doctest::Approx(0.3));
        CHECK(a.metrics[5].mean == doctest::Approx(0.6));
        CHECK(a.metrics[5].std == doctest::Approx(0.3));
    }

    TEST_CASE("identical folds and single fold") {
        const FoldAggregate same = aggregate_folds({{dice_only(0.5)}, {dice_only(0.5)}});
        CHECK(same.metrics[5].std == 0.0);
        const FoldAggregate one = aggregate_folds({{dice_only(0.25), dice_only(0.75)}});
        CHECK(one.metrics[5].mean == 0.5);
        CHECK(one.metrics[5].std == 0.0);
        for (const auto& ms : one.metrics) {
            CHECK(ms.std >= 0.0);
        }
    }

    TEST_CASE("empty inputs") {
        CHECK_THROWS_AS(aggregate_folds({}), UsageError);
        CHECK_THROWS_AS(aggregate_folds({{dice_only(1)}, {}}), UsageError);
    }
}

TEST_SUITE("metrics csv") {
    TEST_CASE("rows and summary block") {
        std::vector<ImageMetrics> rows;
        rows.push_back({"a", 0, compute_metrics({1, 0, 2, 1})});
        rows.push_back({"b", 0, compute_metrics({2, 0, 2, 0})});
        rows.push_back({"c", 1, compute_metrics({0, 1, 3, 0})});
        std::ostringstream os;
        write_metrics_csv(os, rows);
        std::istringstream in(os.str());
        std::vector<std::string> lines;
        for (std::string l; std::getline(in, l);) {
            lines.push_back(l);
        }
        REQUIRE(lines.size() == 1 + 3 + 4 + 4);
        CHECK(lines[0] == "id,fold,accuracy,jaccard,precision,recall,specificity,dice");
        CHECK(lines[1].rfind("a,0,0.75,0.5,1,0.5,1,0.66666666666666663", 0) == 0);
        CHECK(lines[4].rfind("fold_0_mean,0,", 0) == 0);
        CHECK(lines[5].rfind("fold_0_std,0,", 0) == 0);
        CHECK(lines[6].rfind("fold_1_mean,1,", 0) == 0);
        CHECK(lines[8].rfind("overall_folds_mean,,", 0) == 0);
        CHECK(lines[9].rfind("overall_folds_std,,", 0) == 0);
        CHECK(lines[10].rfind("overall_images_mean,,", 0) == 0);
        CHECK(lines[11].rfind("overall_images_std,,", 0) == 0);
    }
}
