#include <doctest.h>

#include <algorithm>
#include <set>

#include "segnn/errors.hpp"
#include "segnn/synth.hpp"
#include "test_util.hpp"

using namespace segnn;

namespace {

SceneSpec small_spec() {
    SceneSpec spec;
    spec.points_per_object = 128;
    spec.floor_points = 256;
    spec.min_total_points = 512;
    return spec;
}

ClassSplit default_split() {
    return {{kPlane, kBox, kSphere, kCylinder}, {kWedge, kTorusPatch, kStep, kPole}};
}

}  // namespace

TEST_CASE("a floor-only scene is labeled background everywhere") {
    SceneSpec spec = small_spec();
    spec.min_objects = 0;
    spec.max_objects = 0;
    const LabeledCloud scene = generate_scene(spec, 4);
    CHECK(scene.labels->maxCoeff() == 0);
    CHECK(scene.size() >= spec.min_total_points);
}

TEST_CASE("jitter-free spheres sample the exact surface") {
    SceneSpec spec = small_spec();
    spec.classes = {kSphere};
    spec.min_objects = 1;
    spec.max_objects = 1;
    spec.pos_jitter = 0.0;
    const LabeledCloud scene = generate_scene(spec, 9);

    std::vector<int> rows;
    for (int i = 0; i < scene.size(); ++i)
        if ((*scene.labels)(i) == kSphere) rows.push_back(i);
    REQUIRE(rows.size() >= 8);

    // recover center and radius from four spread points:
    // |p|^2 - 2 c.p + (|c|^2 - r^2) = 0 is linear in (c, b)
    Eigen::Matrix4d lhs;
    Eigen::Vector4d rhs;
    const std::size_t picks[4] = {0, rows.size() / 3, 2 * rows.size() / 3, rows.size() - 1};
    for (int k = 0; k < 4; ++k) {
        const int row = rows[picks[static_cast<std::size_t>(k)]];
        const Eigen::Vector3d p = scene.coords.row(row).cast<double>().transpose();
        lhs(k, 0) = -2.0 * p(0);
        lhs(k, 1) = -2.0 * p(1);
        lhs(k, 2) = -2.0 * p(2);
        lhs(k, 3) = 1.0;
        rhs(k) = -p.squaredNorm();
    }
    const Eigen::Vector4d sol = lhs.fullPivLu().solve(rhs);
    const Eigen::Vector3d center = sol.head<3>();
    const double radius = std::sqrt(center.squaredNorm() - sol(3));
    for (const int row : rows) {
        const double dist = (scene.coords.row(row).cast<double>().transpose() - center).norm();
        CHECK(std::abs(dist - radius) < 1e-5);  // f32 storage bounds the residual
    }
}

TEST_CASE("scene generation is bit-identical per seed") {
    const SceneSpec spec = small_spec();
    const LabeledCloud a = generate_scene(spec, 123);
    const LabeledCloud b = generate_scene(spec, 123);
    CHECK((a.coords.array() == b.coords.array()).all());
    CHECK((a.colors->array() == b.colors->array()).all());
    CHECK((a.labels->array() == b.labels->array()).all());
    const LabeledCloud c = generate_scene(spec, 124);
    CHECK_FALSE((a.coords.array() == c.coords.array()).all());
}

TEST_CASE("generate_scene rejects an impossible spec") {
    SceneSpec spec = small_spec();
    spec.classes.clear();
    CHECK_THROWS_AS(generate_scene(spec, 1), ArgumentError);
}

TEST_CASE("default-sized scenes carry at least 2048 points") {
    SceneSpec spec;  // default knobs
    for (std::uint64_t seed = 0; seed < 10; ++seed)
        CHECK(generate_scene(spec, seed).size() >= 2048);
}

TEST_CASE("corpus splits scenes by class without overlap") {
    const Corpus corpus = build_corpus(small_spec(), 24, default_split(), 77);
    CHECK(corpus.clouds.size() == 24);
    std::set<int> train(corpus.train_classes.begin(), corpus.train_classes.end());
    for (const int c : corpus.test_classes) CHECK(train.count(c) == 0);

    // the first half carries train classes only, the second half test only
    for (std::size_t i = 0; i < corpus.clouds.size(); ++i) {
        for (const int cls : corpus.inventory[i]) {
            if (cls == kFloor) continue;
            if (i < corpus.clouds.size() / 2)
                CHECK(train.count(cls) == 1);
            else
                CHECK(train.count(cls) == 0);
        }
    }

    CHECK_THROWS_AS(build_corpus(small_spec(), 10, {{kBox}, {kBox}}, 1), ArgumentError);
}

TEST_CASE("no test-class geometry enters training episodes") {
    const Corpus corpus = build_corpus(small_spec(), 24, default_split(), 31);
    std::set<int> test_classes(corpus.test_classes.begin(), corpus.test_classes.end());

    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const Episode episode = sample_training_episode(corpus, 2, 1, 2, seed);
        std::vector<const LabeledCloud*> clouds;
        for (const LabeledCloud& c : episode.support) clouds.push_back(&c);
        for (const LabeledCloud& c : episode.queries) clouds.push_back(&c);
        for (const LabeledCloud* cloud : clouds) {
            // resolve the original corpus cloud by id and scan its labels
            bool found = false;
            for (std::size_t i = 0; i < corpus.clouds.size(); ++i) {
                if (corpus.clouds[i].id != cloud->id) continue;
                found = true;
                for (const int cls : corpus.inventory[i]) CHECK(test_classes.count(cls) == 0);
            }
            CHECK(found);
        }
    }
}

TEST_CASE("episodes have the right arity and a faithful label remap") {
    const Corpus corpus = build_corpus(small_spec(), 24, default_split(), 5);
    const std::vector<int> ways = {kStep, kWedge};
    const Episode episode = sample_episode(corpus, ways, 1, 3, 99);
    CHECK(episode.n_ways == 2);
    CHECK(episode.k_shots == 1);
    CHECK(episode.support.size() == 2);
    CHECK(episode.queries.size() == 3);
    validate_episode(episode);

    // remap: way class -> way index + 1 everywhere, everything else -> 0
    const auto check_remap = [&](const LabeledCloud& remapped) {
        const LabeledCloud* original = nullptr;
        for (const LabeledCloud& c : corpus.clouds)
            if (c.id == remapped.id) original = &c;
        REQUIRE(original != nullptr);
        for (int i = 0; i < remapped.size(); ++i) {
            const int orig = (*original->labels)(i);
            int expected = 0;
            for (std::size_t w = 0; w < ways.size(); ++w)
                if (orig == ways[w]) expected = static_cast<int>(w) + 1;
            CHECK((*remapped.labels)(i) == expected);
        }
    };
    for (const LabeledCloud& c : episode.support) check_remap(c);
    for (const LabeledCloud& c : episode.queries) check_remap(c);

    // support clouds contain their way's class
    for (int way = 0; way < 2; ++way) {
        bool has_way = false;
        const LabeledCloud& shot = episode.support_at(way, 0);
        for (int i = 0; i < shot.size(); ++i)
            if ((*shot.labels)(i) == way + 1) has_way = true;
        CHECK(has_way);
    }

    // deterministic per seed
    const Episode again = sample_episode(corpus, ways, 1, 3, 99);
    CHECK(again.support[0].id == episode.support[0].id);
    CHECK(again.queries[2].id == episode.queries[2].id);
    const Episode other = sample_episode(corpus, ways, 1, 3, 100);
    const bool all_same = other.support[0].id == episode.support[0].id &&
                          other.queries[0].id == episode.queries[0].id &&
                          other.queries[1].id == episode.queries[1].id;
    CHECK_FALSE(all_same);
}

TEST_CASE("episode sampling names the starved class when infeasible") {
    const Corpus corpus = build_corpus(small_spec(), 8, default_split(), 3);
    try {
        sample_episode(corpus, {kWedge, kPole}, 50, 2, 1);
        FAIL("expected ArgumentError");
    } catch (const ArgumentError& error) {
        const std::string what = error.what();
        const bool names_class = what.find("wedge") != std::string::npos ||
                                 what.find("pole") != std::string::npos;
        CHECK(names_class);
    }
}

TEST_CASE("test episode enumeration covers every combination") {
    const Corpus corpus = build_corpus(small_spec(), 24, default_split(), 11);
    const std::vector<EpisodeDescriptor> all = enumerate_test_episodes(corpus, 2, 100, 7);
    CHECK(all.size() == 600);  // C(4,2) * 100

    const std::vector<EpisodeDescriptor> one_each = enumerate_test_episodes(corpus, 2, 1, 7);
    CHECK(one_each.size() == 6);
    std::set<std::vector<int>> combos;
    for (const EpisodeDescriptor& desc : one_each) combos.insert(desc.way_classes);
    CHECK(combos.size() == 6);

    const std::vector<EpisodeDescriptor> again = enumerate_test_episodes(corpus, 2, 100, 7);
    CHECK(again[123].seed == all[123].seed);
    CHECK(again[123].way_classes == all[123].way_classes);
}

TEST_CASE("corpus manifests round-trip through disk") {
    test::TempDir tmp("corpus");
    const Corpus corpus = build_corpus(small_spec(), 8, default_split(), 21);
    save_corpus(corpus, tmp.dir());
    const Corpus back = load_corpus(tmp.dir());
    CHECK(back.clouds.size() == corpus.clouds.size());
    CHECK(back.train_classes == corpus.train_classes);
    CHECK(back.test_classes == corpus.test_classes);
    for (std::size_t i = 0; i < corpus.clouds.size(); ++i) {
        CHECK(back.clouds[i].id == corpus.clouds[i].id);
        CHECK((back.clouds[i].coords.array() == corpus.clouds[i].coords.array()).all());
        CHECK(back.inventory[i] == corpus.inventory[i]);
    }
}

TEST_CASE("class names map both ways") {
    CHECK(object_class_name(kFloor) == "floor");
    CHECK(object_class_name(kTorusPatch) == "torus_patch");
    CHECK(object_class_from_name("pole") == kPole);
    CHECK_THROWS_AS(object_class_from_name("chair"), ArgumentError);
}
