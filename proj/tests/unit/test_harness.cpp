#include <doctest.h>

#include <cstdlib>

#include "segnn/harness.hpp"
#include "test_util.hpp"

using namespace segnn;

namespace {

SceneSpec tiny_spec() {
    SceneSpec spec;
    spec.points_per_object = 96;
    spec.floor_points = 128;
    spec.min_total_points = 256;
    spec.min_objects = 2;
    return spec;
}

ClassSplit split() {
    return {{kPlane, kBox, kSphere, kCylinder}, {kWedge, kTorusPatch, kStep, kPole}};
}

}  // namespace

TEST_CASE("the feature cache reproduces the reference encoder within f32 storage") {
    EncoderConfig cfg;
    cfg.d = 3;
    cfg.layers = 2;
    cfg.seed = 3;
    FeatureCache cache(cfg);
    const LabeledCloud cloud = test::random_cloud(32, 9);
    const MatX cached = cache.features(cloud);
    const MatX direct = encode_scene(normalize_cloud(cloud), cfg).data;
    CHECK(cache.size() == 1);
    double worst = 0.0;
    for (int i = 0; i < direct.rows(); ++i)
        for (int j = 0; j < direct.cols(); ++j)
            worst = std::max(worst, std::abs(cached(i, j) - direct(i, j)) /
                                        std::max(1.0, std::abs(direct(i, j))));
    CHECK(worst < 1e-6);

    const MatX again = cache.features(cloud);
    CHECK((again.array() == cached.array()).all());
}

TEST_CASE("stream evaluation is invariant to the worker count") {
    const Corpus corpus = build_corpus(tiny_spec(), 32, split(), 13);
    const std::vector<EpisodeDescriptor> descs = enumerate_test_episodes(corpus, 2, 2, 5);

    SegnnOptions opts;
    opts.encoder.d = 3;
    opts.encoder.layers = 2;
    opts.encoder.seed = 7;
    opts.points_per_cloud = 128;

    FeatureCache cache(opts.encoder);
    const EpisodePredictor predictor = [&](const Episode& episode) {
        return segnn_predict_with(episode, opts, cache.provider());
    };

    const StreamEvalResult serial = evaluate_stream(corpus, descs, 1, 2, predictor, 1);
    const StreamEvalResult threaded = evaluate_stream(corpus, descs, 1, 2, predictor, 4);
    REQUIRE(serial.per_episode.size() == threaded.per_episode.size());
    for (std::size_t i = 0; i < serial.per_episode.size(); ++i)
        CHECK((serial.per_episode[i].counts.array() == threaded.per_episode[i].counts.array())
                  .all());
    CHECK((serial.global.counts.array() == threaded.global.counts.array()).all());
}

TEST_CASE("majority baseline reads the dominant truth row") {
    ConfusionMatrix conf = make_confusion(3);
    conf.counts << 6, 1, 1,   // truth 0: 8 points
                   0, 2, 0,   // truth 1: 2
                   1, 0, 1;   // truth 2: 2
    CHECK(majority_baseline(conf) == doctest::Approx(8.0 / 12.0));
}

TEST_CASE("dominant object label ignores the floor") {
    LabeledCloud cloud;
    cloud.id = "dom";
    cloud.coords = Mat3::Zero(6, 3);
    cloud.labels.emplace(6);
    *cloud.labels << 0, 0, 0, 2, 2, 5;
    CHECK(dominant_object_label(cloud) == 2);
    *cloud.labels << 0, 0, 0, 0, 0, 0;
    CHECK(dominant_object_label(cloud) == -1);
}

TEST_CASE("SEGNN_THREADS caps the worker count") {
    setenv("SEGNN_THREADS", "3", 1);
    CHECK(harness_thread_count() == 3);
    unsetenv("SEGNN_THREADS");
    CHECK(harness_thread_count() >= 1);
}

TEST_CASE("digest strings are stable") {
    CHECK(fnv1a_hex("a=1\nb=2") == fnv1a_hex("a=1\nb=2"));
    CHECK(fnv1a_hex("a=1") != fnv1a_hex("a=2"));
    CHECK(fnv1a_hex("x").size() == 16);
}
