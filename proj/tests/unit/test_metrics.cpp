#include <doctest.h>

#include "segnn/errors.hpp"
#include "segnn/metrics.hpp"
#include "segnn/rng.hpp"

using namespace segnn;

namespace {

VecXi vec(std::initializer_list<int> values) {
    VecXi out(static_cast<long>(values.size()));
    long i = 0;
    for (const int v : values) out(i++) = v;
    return out;
}

}  // namespace

TEST_CASE("perfect predictions produce a diagonal confusion and mIoU 1") {
    const VecXi truth = vec({0, 1, 2, 1, 0, 2});
    const ConfusionMatrix conf = confusion(truth, truth, 3);
    CHECK(conf.counts(0, 0) == 2);
    CHECK(conf.counts(1, 1) == 2);
    CHECK(conf.counts(2, 2) == 2);
    CHECK(conf.total() == 6);
    CHECK(conf.counts.sum() == conf.counts.diagonal().sum());
    CHECK(*miou(conf) == doctest::Approx(1.0));
    CHECK(*accuracy(conf) == doctest::Approx(1.0));
}

TEST_CASE("all-background predictions fill a single column") {
    const VecXi truth = vec({0, 1, 2, 1});
    const VecXi pred = vec({0, 0, 0, 0});
    const ConfusionMatrix conf = confusion(pred, truth, 3);
    CHECK(conf.counts.col(0).sum() == 4);
    CHECK(conf.counts.col(1).sum() == 0);
    CHECK(conf.counts.col(2).sum() == 0);
}

TEST_CASE("unlabeled points are skipped and bad ids rejected") {
    const VecXi truth = vec({-1, 1, -1, 0});
    const VecXi pred = vec({1, 1, 0, 0});
    const ConfusionMatrix conf = confusion(pred, truth, 2);
    CHECK(conf.total() == 2);
    CHECK_THROWS_AS(confusion(vec({3}), vec({0}), 2), ArgumentError);
    CHECK_THROWS_AS(confusion(vec({0}), vec({2}), 2), ArgumentError);
    CHECK_THROWS_AS(confusion(vec({0, 1}), vec({0}), 2), ArgumentError);
}

TEST_CASE("confusion matches a counting oracle on random labels") {
    Rng rng(31);
    const int n = 10000;
    VecXi truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
        truth(i) = static_cast<int>(rng.uniform_index(4));
        pred(i) = static_cast<int>(rng.uniform_index(4));
    }
    const ConfusionMatrix conf = confusion(pred, truth, 4);
    Eigen::Matrix<std::int64_t, 4, 4> expected;
    expected.setZero();
    for (int i = 0; i < n; ++i) ++expected(truth(i), pred(i));
    CHECK((conf.counts.array() == expected.array()).all());
}

TEST_CASE("confusion counts are invariant to point order") {
    Rng rng(5);
    const int n = 200;
    VecXi truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
        truth(i) = static_cast<int>(rng.uniform_index(3));
        pred(i) = static_cast<int>(rng.uniform_index(3));
    }
    const ConfusionMatrix base = confusion(pred, truth, 3);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    VecXi truth_p(n), pred_p(n);
    for (int i = 0; i < n; ++i) {
        truth_p(i) = truth(perm[static_cast<std::size_t>(i)]);
        pred_p(i) = pred(perm[static_cast<std::size_t>(i)]);
    }
    const ConfusionMatrix moved = confusion(pred_p, truth_p, 3);
    CHECK((base.counts.array() == moved.counts.array()).all());
}

TEST_CASE("hand-computed IoU example: 0.6 and 0.5 average to 0.55") {
    // class 1: TP=3 FP=1 FN=1 -> 0.6; class 2: TP=2 FP=1 FN=1 -> 0.5
    const VecXi truth = vec({1, 1, 1, 1, 2, 2, 2});
    const VecXi pred = vec({1, 1, 1, 2, 2, 2, 1});
    const ConfusionMatrix conf = confusion(pred, truth, 3);
    const IouReport report = iou(conf);
    CHECK(report.values(1) == doctest::Approx(0.6));
    CHECK(report.values(2) == doctest::Approx(0.5));
    CHECK(*miou(conf) == doctest::Approx(0.55));
}

TEST_CASE("classes with zero union are excluded from the mean") {
    const VecXi truth = vec({1, 1, 0});
    const VecXi pred = vec({1, 1, 0});
    const ConfusionMatrix conf = confusion(pred, truth, 4);  // classes 2,3 never appear
    const IouReport report = iou(conf);
    CHECK_FALSE(report.defined[2]);
    CHECK_FALSE(report.defined[3]);
    CHECK(*miou(conf) == doctest::Approx(1.0));

    // background excluded by default, included on demand
    const VecXi t2 = vec({0, 0, 1});
    const VecXi p2 = vec({0, 1, 1});
    const ConfusionMatrix c2 = confusion(p2, t2, 2);
    CHECK(*miou(c2) == doctest::Approx(0.5));
    CHECK(*miou(c2, true) == doctest::Approx(0.5 * (0.5 + 0.5)));
}

TEST_CASE("mIoU is undefined when nothing is scorable") {
    const ConfusionMatrix conf = make_confusion(3);
    CHECK_FALSE(miou(conf).has_value());
    CHECK_FALSE(accuracy(conf).has_value());
}

TEST_CASE("bounds: mIoU lies within the included per-class range") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 500;
        VecXi truth(n), pred(n);
        for (int i = 0; i < n; ++i) {
            truth(i) = static_cast<int>(rng.uniform_index(4));
            pred(i) = static_cast<int>(rng.uniform_index(4));
        }
        const ConfusionMatrix conf = confusion(pred, truth, 4);
        const IouReport report = iou(conf);
        double lo = 1.0, hi = 0.0;
        for (int c = 1; c < 4; ++c)
            if (report.defined[static_cast<std::size_t>(c)]) {
                lo = std::min(lo, report.values(c));
                hi = std::max(hi, report.values(c));
                CHECK(report.values(c) >= 0.0);
                CHECK(report.values(c) <= 1.0);
            }
        const std::optional<double> mean = miou(conf);
        REQUIRE(mean.has_value());
        CHECK(*mean >= lo - 1e-12);
        CHECK(*mean <= hi + 1e-12);
    }
}

TEST_CASE("episode aggregation: global counts vs per-episode mean") {
    const VecXi truth = vec({1, 1, 1, 1, 2, 2, 2});
    const VecXi pred = vec({1, 1, 1, 2, 2, 2, 1});
    const ConfusionMatrix one = confusion(pred, truth, 3);

    CHECK(*aggregate_miou({one}, Aggregation::kGlobal) == doctest::Approx(*miou(one)));
    CHECK(*aggregate_miou({one, one}, Aggregation::kGlobal) == doctest::Approx(*miou(one)));
    CHECK(*aggregate_miou({one, one}, Aggregation::kPerEpisodeMean) == doctest::Approx(*miou(one)));

    // mixed episodes: global equals the summed-count oracle
    const VecXi t2 = vec({1, 2, 2});
    const VecXi p2 = vec({1, 1, 2});
    const ConfusionMatrix two = confusion(p2, t2, 3);
    ConfusionMatrix total = make_confusion(3);
    total.merge(one);
    total.merge(two);
    CHECK(*aggregate_miou({one, two}, Aggregation::kGlobal) == doctest::Approx(*miou(total)));

    // global aggregation is order-invariant
    CHECK(*aggregate_miou({two, one}, Aggregation::kGlobal) ==
          doctest::Approx(*aggregate_miou({one, two}, Aggregation::kGlobal)));
}

TEST_CASE("metrics report serializes deterministically") {
    const VecXi truth = vec({1, 1, 0});
    const VecXi pred = vec({1, 0, 0});
    const ConfusionMatrix conf = confusion(pred, truth, 2);
    const nlohmann::json a = metrics_report(conf, 1, "cafebabe", Aggregation::kGlobal, {conf});
    const nlohmann::json b = metrics_report(conf, 1, "cafebabe", Aggregation::kGlobal, {conf});
    CHECK(a.dump() == b.dump());
    CHECK(a.contains("miou"));
    CHECK(a.contains("per_class_iou"));
    CHECK(a["config_digest"] == "cafebabe");
    CHECK(a["episodes"] == 1);
}
