#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "segnn/encoder.hpp"
#include "segnn/errors.hpp"
#include "segnn/rng.hpp"
#include "test_util.hpp"

using namespace segnn;

namespace {

/// Scalar-loop encoding oracle for one 3-vector.
std::vector<double> encode_oracle(const double* xyz, const FreqBank& bank) {
    const int d = bank.d();
    std::vector<double> out(static_cast<std::size_t>(6 * d));
    for (int axis = 0; axis < 3; ++axis)
        for (int i = 0; i < d; ++i) {
            const double phase = 2.0 * M_PI * bank.values(i) * xyz[axis];
            out[static_cast<std::size_t>(axis * d + i)] = std::sin(phase);
            out[static_cast<std::size_t>(3 * d + axis * d + i)] = std::cos(phase);
        }
    return out;
}

double sqd(const Mat3& a, int i, const Mat3& b, int j) {
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(a(i, c)) - static_cast<double>(b(j, c));
        acc += d * d;
    }
    return acc;
}

}  // namespace

TEST_CASE("log-linear frequencies follow theta^(i/d)") {
    const FreqBank two = log_linear_freqs(2, 30.0);
    CHECK(two.values(0) == doctest::Approx(std::sqrt(30.0)).epsilon(1e-12));
    CHECK(two.values(1) == doctest::Approx(30.0).epsilon(1e-12));

    const FreqBank one = log_linear_freqs(1, 30.0);
    CHECK(one.values(0) == doctest::Approx(30.0));

    const FreqBank twenty = log_linear_freqs(20, 30.0);
    CHECK(twenty.d() == 20);
    for (int i = 1; i < 20; ++i) CHECK(twenty.values(i) > twenty.values(i - 1));
    CHECK(twenty.values(19) == doctest::Approx(30.0));

    CHECK_THROWS_AS(log_linear_freqs(0, 30.0), ArgumentError);
    CHECK_THROWS_AS(log_linear_freqs(3, 0.0), ArgumentError);
}

TEST_CASE("trig encode of the origin is zeros then ones") {
    const FreqBank bank = log_linear_freqs(4, 30.0);
    const VecX enc = trig_encode(Vec3::Zero(), bank);
    REQUIRE(enc.size() == 24);
    CHECK(enc.head(12).cwiseAbs().maxCoeff() == 0.0);
    CHECK((enc.tail(12).array() == 1.0).all());
}

TEST_CASE("trig encode hand example at a quarter period") {
    const FreqBank bank = log_linear_freqs(1, 1.0);  // single frequency u = 1
    const VecX enc = trig_encode(Vec3(0.25, 0.0, 0.0), bank);
    REQUIRE(enc.size() == 6);
    CHECK(enc(0) == doctest::Approx(1.0).epsilon(1e-12));   // sin(pi/2)
    CHECK(enc(1) == doctest::Approx(0.0));
    CHECK(enc(2) == doctest::Approx(0.0));
    CHECK(enc(3) == doctest::Approx(0.0).epsilon(1e-12));   // cos(pi/2)
    CHECK(enc(4) == doctest::Approx(1.0));
    CHECK(enc(5) == doctest::Approx(1.0));
}

TEST_CASE("trig encode with d=20 has 120 channels") {
    const FreqBank bank = log_linear_freqs(20, 30.0);
    CHECK(trig_encode(Vec3(0.3, 0.6, 0.9), bank).size() == 120);
}

TEST_CASE("PE dot products preserve relative positions") {
    // dot(E(p), E(q)) == sum over axes and frequencies of cos(2 pi u (p-q))
    for (const int d : {1, 5, 20}) {
        const FreqBank bank = log_linear_freqs(d, 30.0);
        Rng rng(77 + static_cast<std::uint64_t>(d));
        for (int trial = 0; trial < 200; ++trial) {
            const Vec3 p(rng.uniform(), rng.uniform(), rng.uniform());
            const Vec3 q(rng.uniform(), rng.uniform(), rng.uniform());
            const double got = trig_encode(p, bank).dot(trig_encode(q, bank));
            double expected = 0.0;
            for (int axis = 0; axis < 3; ++axis)
                for (int i = 0; i < d; ++i)
                    expected += std::cos(2.0 * M_PI * bank.values(i) * (p(axis) - q(axis)));
            CHECK(std::abs(got - expected) < 1e-9);
        }
    }
}

TEST_CASE("initial embedding merges position and color terms") {
    const FreqBank bank = log_linear_freqs(3, 30.0);

    LabeledCloud origin;
    origin.id = "origin";
    origin.coords = Mat3::Zero(1, 3);
    origin.colors.emplace(Mat3::Zero(1, 3));
    const PointFeatures merged = initial_embed(origin, bank);
    CHECK(merged.data.row(0).head(9).cwiseAbs().maxCoeff() == 0.0);
    CHECK((merged.data.row(0).tail(9).array() == 2.0).all());

    LabeledCloud colorless = origin;
    colorless.colors.reset();
    const PointFeatures plain = initial_embed(colorless, bank);
    const VecX direct = trig_encode(Vec3::Zero(), bank);
    CHECK((plain.data.row(0).transpose() - direct).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("initial embedding matches the elementwise oracle on random clouds") {
    const FreqBank bank = log_linear_freqs(5, 30.0);
    const LabeledCloud cloud = test::random_cloud(40, 13);
    const PointFeatures feats = initial_embed(cloud, bank);
    for (int i = 0; i < cloud.size(); ++i) {
        double xyz[3], rgb[3];
        for (int c = 0; c < 3; ++c) {
            xyz[c] = static_cast<double>(cloud.coords(i, c));
            rgb[c] = static_cast<double>((*cloud.colors)(i, c));
        }
        const std::vector<double> ep = encode_oracle(xyz, bank);
        const std::vector<double> ec = encode_oracle(rgb, bank);
        for (int j = 0; j < feats.dim(); ++j)
            CHECK(std::abs(feats.data(i, j) -
                           (ep[static_cast<std::size_t>(j)] + ec[static_cast<std::size_t>(j)])) <
                  1e-12);
    }
}

TEST_CASE("filter banks are square, bounded, and seed-deterministic") {
    EncoderConfig cfg;
    cfg.d = 20;
    cfg.seed = 31;
    const FilterBank bank = sample_filter_bank(1, cfg);
    CHECK(bank.weight.rows() == 240);
    CHECK(bank.weight.cols() == 240);
    CHECK(bank.weight.minCoeff() >= -1.0);
    CHECK(bank.weight.maxCoeff() <= 1.0);

    const FilterBank again = sample_filter_bank(1, cfg);
    CHECK((bank.weight.array() == again.weight.array()).all());

    cfg.seed = 32;
    const FilterBank other = sample_filter_bank(1, cfg);
    CHECK_FALSE((bank.weight.array() == other.weight.array()).all());
}

TEST_CASE("filter bank entries reproduce cos(2 pi v k) from the replayed draws") {
    EncoderConfig cfg;
    cfg.d = 2;
    cfg.seed = 7;
    cfg.variance = 1.0;
    const FilterBank bank = sample_filter_bank(2, cfg);
    const int width = cfg.width(2);

    Rng rng(mix_seed(cfg.seed, 2));
    for (int a = 0; a < width; ++a) {
        const double v = std::abs(rng.normal(0.0, 1.0));
        for (int b = 0; b < width; ++b)
            CHECK(bank.weight(a, b) == doctest::Approx(std::cos(2.0 * M_PI * v * (b + 1)))
                                           .epsilon(1e-12));
    }
}

TEST_CASE("gaussian frequency draws have unit variance before the absolute value") {
    Rng rng(99);
    double sum = 0.0, sum_sq = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const double draw = rng.normal(0.0, 1.0);
        sum += draw;
        sum_sq += draw * draw;
    }
    const double mean = sum / n;
    const double variance = sum_sq / n - mean * mean;
    CHECK(variance > 0.9);
    CHECK(variance < 1.1);
}

TEST_CASE("raw and absolute frequency sampling give the same cosine bank") {
    EncoderConfig cfg;
    cfg.d = 3;
    cfg.seed = 5;
    cfg.freq_sampling = FreqSampling::kAbsGaussian;
    const FilterBank abs_bank = sample_filter_bank(1, cfg);
    cfg.freq_sampling = FreqSampling::kRawGaussian;
    const FilterBank raw_bank = sample_filter_bank(1, cfg);
    CHECK((abs_bank.weight - raw_bank.weight).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("manipulation layer halves the cloud and doubles the channels") {
    EncoderConfig cfg;
    cfg.d = 20;
    cfg.seed = 3;
    const FreqBank freqs = log_linear_freqs(cfg.d, cfg.theta);
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(2048, 41));
    EncoderLevel level{cloud, initial_embed(cloud, freqs).data};
    const EncoderLevel next = manipulation_layer(level, sample_filter_bank(1, cfg), freqs, cfg);
    CHECK(next.cloud.size() == 1024);
    CHECK(next.feats.rows() == 1024);
    CHECK(next.feats.cols() == 240);
    CHECK(next.feats.allFinite());
}

TEST_CASE("manipulation layer with a single neighbor skips the pooling") {
    EncoderConfig cfg;
    cfg.d = 2;
    cfg.seed = 11;
    cfg.k_neigh = 1;
    const FreqBank freqs = log_linear_freqs(cfg.d, cfg.theta);
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(16, 5, false));
    EncoderLevel level{cloud, initial_embed(cloud, freqs).data};
    const FilterBank bank = sample_filter_bank(1, cfg);
    const EncoderLevel next = manipulation_layer(level, bank, freqs, cfg);

    // with k=1 the neighborhood is the center itself (distance 0), so the
    // pooled feature is exactly the projected single-neighbor vector
    for (int i = 0; i < next.cloud.size(); ++i) {
        // locate the source row of this center
        int src = -1;
        for (int j = 0; j < cloud.size(); ++j)
            if ((cloud.coords.row(j).array() == next.cloud.coords.row(i).array()).all()) {
                src = j;
                break;
            }
        REQUIRE(src >= 0);
        VecX gathered(level.feats.cols() * 2);
        gathered.head(level.feats.cols()) = level.feats.row(src).transpose();
        gathered.tail(level.feats.cols()) = level.feats.row(src).transpose();
        const VecX delta_enc = trig_encode(Vec3::Zero(), freqs);
        const int tiles = static_cast<int>(gathered.size() / delta_enc.size());
        for (int t = 0; t < tiles; ++t)
            gathered.segment(t * delta_enc.size(), delta_enc.size()) += delta_enc;
        const VecX projected = bank.weight * gathered;
        CHECK((next.feats.row(i).transpose() - projected).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("manipulation layer matches the straight-line oracle on a toy cloud") {
    EncoderConfig cfg;
    cfg.d = 2;
    cfg.seed = 17;
    cfg.k_neigh = 3;
    const FreqBank freqs = log_linear_freqs(cfg.d, cfg.theta);
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(8, 29, true));
    EncoderLevel level{cloud, initial_embed(cloud, freqs).data};
    const FilterBank bank = sample_filter_bank(1, cfg);
    const EncoderLevel got = manipulation_layer(level, bank, freqs, cfg);

    // ---- independent re-derivation with scalar loops
    const int m_prev = cloud.size();
    const int m_next = (m_prev + 1) / 2;
    // greedy FPS from scratch
    std::vector<int> centers = {0};
    while (static_cast<int>(centers.size()) < m_next) {
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < m_prev; ++i) {
            double min_d = 1e300;
            for (const int c : centers) min_d = std::min(min_d, sqd(cloud.coords, i, cloud.coords, c));
            if (min_d > best_d) {
                best_d = min_d;
                best = i;
            }
        }
        centers.push_back(best);
    }
    const int width = 2 * static_cast<int>(level.feats.cols());
    const int six_d = 6 * cfg.d;
    for (int ci = 0; ci < m_next; ++ci) {
        const int center = centers[static_cast<std::size_t>(ci)];
        // neighbors by exhaustive sort
        std::vector<int> order(static_cast<std::size_t>(m_prev));
        for (int i = 0; i < m_prev; ++i) order[static_cast<std::size_t>(i)] = i;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double da = sqd(cloud.coords, center, cloud.coords, a);
            const double db = sqd(cloud.coords, center, cloud.coords, b);
            return da < db || (da == db && a < b);
        });
        std::vector<double> pooled(static_cast<std::size_t>(width), -1e300);
        for (int j = 0; j < cfg.k_neigh; ++j) {
            const int nb = order[static_cast<std::size_t>(j)];
            std::vector<double> gathered(static_cast<std::size_t>(width));
            for (int c = 0; c < width / 2; ++c) {
                gathered[static_cast<std::size_t>(c)] = level.feats(center, c);
                gathered[static_cast<std::size_t>(width / 2 + c)] = level.feats(nb, c);
            }
            double delta[3], color[3];
            for (int c = 0; c < 3; ++c) {
                delta[c] = static_cast<double>(cloud.coords(nb, c)) -
                           static_cast<double>(cloud.coords(center, c));
                color[c] = static_cast<double>((*cloud.colors)(nb, c));
            }
            const std::vector<double> de = encode_oracle(delta, freqs);
            const std::vector<double> ce = encode_oracle(color, freqs);
            for (int t = 0; t < width / six_d; ++t)
                for (int c = 0; c < six_d; ++c)
                    gathered[static_cast<std::size_t>(t * six_d + c)] +=
                        de[static_cast<std::size_t>(c)] + ce[static_cast<std::size_t>(c)];
            for (int row = 0; row < width; ++row) {
                double acc = 0.0;
                for (int col = 0; col < width; ++col)
                    acc += bank.weight(row, col) * gathered[static_cast<std::size_t>(col)];
                pooled[static_cast<std::size_t>(row)] =
                    std::max(pooled[static_cast<std::size_t>(row)], acc);
            }
        }
        for (int c = 0; c < width; ++c)
            CHECK(std::abs(got.feats(ci, c) - pooled[static_cast<std::size_t>(c)]) < 1e-9);
    }
}

TEST_CASE("upsampling reproduces coincident and equidistant cases") {
    EncoderConfig cfg;
    cfg.k_up = 2;
    Mat3 coarse(2, 3);
    coarse << 0, 0, 0, 1, 0, 0;
    MatX feats(2, 2);
    feats << 1, 2, 5, 6;

    Mat3 coincident(1, 3);
    coincident << 0, 0, 0;
    const MatX at_zero = upsample_layer(coarse, feats, coincident, cfg);
    CHECK(at_zero(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(at_zero(0, 1) == doctest::Approx(2.0).epsilon(1e-7));

    Mat3 middle(1, 3);
    middle << 0.5f, 0, 0;
    const MatX at_mid = upsample_layer(coarse, feats, middle, cfg);
    CHECK(at_mid(0, 0) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(at_mid(0, 1) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("upsampling matches the inverse-distance formula oracle") {
    EncoderConfig cfg;
    cfg.k_up = 3;
    const LabeledCloud coarse = test::random_cloud(12, 3);
    const LabeledCloud fine = test::random_cloud(30, 4);
    MatX feats(12, 5);
    Rng rng(8);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 5; ++j) feats(i, j) = rng.uniform(-2.0, 2.0);
    const MatX got = upsample_layer(coarse.coords, feats, fine.coords, cfg);
    for (int i = 0; i < 30; ++i) {
        std::vector<int> order(12);
        for (int j = 0; j < 12; ++j) order[static_cast<std::size_t>(j)] = j;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double da = sqd(fine.coords, i, coarse.coords, a);
            const double db = sqd(fine.coords, i, coarse.coords, b);
            return da < db || (da == db && a < b);
        });
        double wsum = 0.0;
        VecX acc = VecX::Zero(5);
        for (int j = 0; j < 3; ++j) {
            const double dist = std::sqrt(sqd(fine.coords, i, coarse.coords,
                                              order[static_cast<std::size_t>(j)]));
            const double w = 1.0 / (dist + 1e-8);
            wsum += w;
            acc += w * feats.row(order[static_cast<std::size_t>(j)]).transpose();
        }
        acc /= wsum;
        CHECK((got.row(i).transpose() - acc).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(upsample_layer(Mat3(0, 3), MatX(0, 5), fine.coords, cfg), ArgumentError);
}

TEST_CASE("scene encoding dimension schedule") {
    EncoderConfig cfg;
    cfg.d = 10;
    cfg.layers = 3;
    cfg.seed = 2;
    CHECK(cfg.scene_dim() == 900);
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(128, 6));
    const PointFeatures feats = encode_scene(cloud, cfg);
    CHECK(feats.rows() == 128);
    CHECK(feats.dim() == 900);
    REQUIRE(feats.layer_slices.size() == 4);
    CHECK(feats.layer_slices[0] == std::pair<int, int>{0, 60});
    CHECK(feats.layer_slices[1] == std::pair<int, int>{60, 120});
    CHECK(feats.layer_slices[2] == std::pair<int, int>{180, 240});
    CHECK(feats.layer_slices[3] == std::pair<int, int>{420, 480});
    CHECK(feats.data.allFinite());

    EncoderConfig wide;
    wide.d = 20;
    CHECK(wide.scene_dim() == 1800);
    CHECK(wide.global_dim() == 960);
}

TEST_CASE("scene encoding is deterministic and seed-sensitive") {
    EncoderConfig cfg;
    cfg.d = 4;
    cfg.seed = 9;
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(64, 12));
    const PointFeatures a = encode_scene(cloud, cfg);
    const PointFeatures b = encode_scene(cloud, cfg);
    CHECK((a.data.array() == b.data.array()).all());
    cfg.seed = 10;
    const PointFeatures c = encode_scene(cloud, cfg);
    CHECK_FALSE((a.data.array() == c.data.array()).all());
}

TEST_CASE("scene encoding rejects clouds it cannot halve or unnormalized input") {
    EncoderConfig cfg;
    cfg.d = 2;
    cfg.layers = 4;
    CHECK_THROWS_AS(encode_scene(normalize_cloud(test::random_cloud(15, 1)), cfg),
                    ArgumentError);
    LabeledCloud raw = test::random_cloud(32, 2);
    raw.coords.array() += 5.0f;
    CHECK_THROWS_AS(encode_scene(raw, cfg), ArgumentError);
}

TEST_CASE("global encoding pools the coarsest manipulation layer") {
    EncoderConfig cfg;
    cfg.d = 20;
    cfg.layers = 3;
    cfg.seed = 21;
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(64, 31));
    const VecX global = encode_global(cloud, cfg);
    CHECK(global.size() == 960);
    CHECK(global.allFinite());
}

TEST_CASE("global encoding with layers=0 of a single point equals its embedding") {
    EncoderConfig cfg;
    cfg.d = 3;
    cfg.layers = 0;
    LabeledCloud single;
    single.id = "one";
    single.coords.resize(1, 3);
    single.coords << 0.25f, 0.5f, 0.75f;
    const VecX global = encode_global(single, cfg);
    const VecX embed =
        trig_encode(Vec3(0.25, 0.5, 0.75), log_linear_freqs(cfg.d, cfg.theta));
    CHECK((global - embed).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("global max pooling is invariant to duplicated feature rows") {
    EncoderConfig cfg;
    cfg.d = 4;
    cfg.layers = 2;
    cfg.seed = 13;
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(48, 19));
    const PointFeatures feats = encode_scene(cloud, cfg);
    MatX doubled(feats.rows() * 2, feats.dim());
    doubled << feats.data, feats.data;
    const VecX once = feats.data.colwise().maxCoeff().transpose();
    const VecX twice = doubled.colwise().maxCoeff().transpose();
    CHECK((once - twice).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("feature dump round-trips through SNF1") {
    test::TempDir tmp("snf");
    EncoderConfig cfg;
    cfg.d = 2;
    cfg.layers = 1;
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(16, 3));
    const PointFeatures feats = encode_scene(cloud, cfg);
    const std::string path = tmp.file("f.snf");
    save_features(feats.data, path);
    const MatXf back = load_features(path);
    CHECK(back.rows() == feats.rows());
    CHECK(back.cols() == feats.dim());
    CHECK((back.cast<double>() - feats.data).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("the 32-bit fast path tracks the reference encoder to 1e-4") {
    EncoderConfig cfg;
    cfg.d = 5;
    cfg.layers = 3;
    cfg.seed = 77;
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(64, 55));
    const PointFeatures ref = encode_scene(cloud, cfg);
    const PointFeaturesF fast = encode_scene_f32(cloud, cfg);
    REQUIRE(fast.rows() == ref.rows());
    REQUIRE(fast.dim() == ref.dim());
    REQUIRE(fast.layer_slices == ref.layer_slices);
    // layers live at very different magnitudes; compare each against its
    // own scale
    for (const auto& [offset, length] : ref.layer_slices) {
        const MatX r = ref.data.middleCols(offset, length);
        const MatX f = fast.data.middleCols(offset, length).cast<double>();
        const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
        CHECK((r - f).cwiseAbs().maxCoeff() / scale < 1e-4);
    }
}
