#include "segnn/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segnn/errors.hpp"
#include "segnn/rng.hpp"
#include "segnn/sampling.hpp"
#include "wire.hpp"

namespace segnn {
namespace {

constexpr double kTwoPi = 2.0 * M_PI;
constexpr double kUpsampleEps = 1e-8;

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct LevelT {
    LabeledCloud cloud;
    MatRM<S> feats;
};

void check_config(const EncoderConfig& cfg) {
    if (cfg.d < 1) throw ArgumentError("encoder: d must be >= 1");
    if (cfg.theta <= 0.0) throw ArgumentError("encoder: theta must be > 0");
    if (cfg.layers < 0) throw ArgumentError("encoder: layers must be >= 0");
    if (cfg.k_neigh < 1) throw ArgumentError("encoder: k_neigh must be >= 1");
    if (cfg.k_up < 1) throw ArgumentError("encoder: k_up must be >= 1");
    if (cfg.variance <= 0.0) throw ArgumentError("encoder: variance must be > 0");
}

void check_normalized(const LabeledCloud& cloud) {
    validate_cloud(cloud);
    if (cloud.coords.minCoeff() < -1e-6f || cloud.coords.maxCoeff() > 1.0f + 1e-6f)
        throw ArgumentError("cloud '" + cloud.id +
                            "' is not normalized to [0,1]; call normalize_cloud first");
}

/// Row-wise sin/cos encoding of an M x 3 matrix at the bank frequencies.
/// Phases are always evaluated in double: the arguments reach 2*pi*theta
/// where single-precision range reduction alone would cost ~1e-5 of
/// accuracy, more than the whole fast path is allowed.
template <typename S, typename Derived>
MatRM<S> trig_rows_impl(const Eigen::MatrixBase<Derived>& xyz, const FreqBank& bank) {
    const int m = static_cast<int>(xyz.rows());
    const int d = bank.d();
    MatRM<S> out(m, 6 * d);
    for (int axis = 0; axis < 3; ++axis) {
        for (int i = 0; i < d; ++i) {
            const double omega = kTwoPi * bank.values(i);
            const auto phase = (xyz.col(axis).template cast<double>() * omega).eval();
            out.col(axis * d + i) = phase.array().sin().template cast<S>();
            out.col(3 * d + axis * d + i) = phase.array().cos().template cast<S>();
        }
    }
    return out;
}

template <typename S>
MatRM<S> initial_feats(const LabeledCloud& cloud, const FreqBank& bank) {
    MatRM<S> feats = trig_rows_impl<S>(cloud.coords, bank);
    if (cloud.colors) feats += trig_rows_impl<S>(*cloud.colors, bank);
    return feats;
}

template <typename S>
LevelT<S> manipulation_impl(const LevelT<S>& prev, const FilterBank& bank, const FreqBank& freqs,
                            const EncoderConfig& cfg) {
    const int m_prev = prev.cloud.size();
    const int w_prev = static_cast<int>(prev.feats.cols());
    const int width = 2 * w_prev;
    if (bank.weight.rows() != width || bank.weight.cols() != width)
        throw ArgumentError("manipulation_layer: filter bank is " +
                            std::to_string(bank.weight.rows()) + "x" +
                            std::to_string(bank.weight.cols()) + ", features need " +
                            std::to_string(width));
    const int six_d = 6 * freqs.d();
    if (width % six_d != 0)
        throw ArgumentError("manipulation_layer: layer width not a multiple of 6d");

    const int m_next = (m_prev + 1) / 2;
    const std::vector<int> picked = farthest_point_sample(prev.cloud, m_next, 0);
    LevelT<S> next;
    next.cloud = select_points(prev.cloud, picked);

    const int k = std::min(cfg.k_neigh, m_prev);
    const NeighborIndex nn = k_nearest_neighbors(next.cloud.coords, prev.cloud.coords, k);

    // Gather concat(center, neighbor) rows plus relative-position deltas.
    MatRM<S> gathered(m_next * k, width);
    MatRM<S> deltas(m_next * k, 3);
    for (int i = 0; i < m_next; ++i) {
        const int center_src = picked[static_cast<std::size_t>(i)];
        for (int j = 0; j < k; ++j) {
            const int row = i * k + j;
            const int nb = nn.indices(i, j);
            gathered.row(row).head(w_prev) = prev.feats.row(center_src);
            gathered.row(row).tail(w_prev) = prev.feats.row(nb);
            deltas.row(row) = prev.cloud.coords.row(nb).template cast<S>() -
                              next.cloud.coords.row(i).template cast<S>();
        }
    }

    const MatRM<S> delta_enc = trig_rows_impl<S>(deltas, freqs);
    const int tiles = width / six_d;
    for (int t = 0; t < tiles; ++t) gathered.middleCols(t * six_d, six_d) += delta_enc;

    if (prev.cloud.colors) {
        const MatRM<S> color_enc = trig_rows_impl<S>(*prev.cloud.colors, freqs);
        for (int i = 0; i < m_next; ++i)
            for (int j = 0; j < k; ++j) {
                const int nb = nn.indices(i, j);
                for (int t = 0; t < tiles; ++t)
                    gathered.row(i * k + j).segment(t * six_d, six_d) += color_enc.row(nb);
            }
    }

    const MatRM<S> weight = bank.weight.cast<S>();
    const MatRM<S> projected = gathered * weight.transpose();

    next.feats.resize(m_next, width);
    for (int i = 0; i < m_next; ++i)
        next.feats.row(i) = projected.middleRows(i * k, k).colwise().maxCoeff();
    return next;
}

template <typename S>
MatRM<S> upsample_impl(const Mat3& coarse_coords, const MatRM<S>& coarse_feats,
                       const Mat3& fine_coords, const EncoderConfig& cfg) {
    const int m_coarse = static_cast<int>(coarse_coords.rows());
    if (m_coarse < 1) throw ArgumentError("upsample_layer: empty coarse set");
    if (coarse_feats.rows() != m_coarse)
        throw ArgumentError("upsample_layer: coarse feature row count mismatch");

    const int k = std::min(cfg.k_up, m_coarse);
    const NeighborIndex nn = k_nearest_neighbors(fine_coords, coarse_coords, k);

    const int m_fine = static_cast<int>(fine_coords.rows());
    MatRM<S> out = MatRM<S>::Zero(m_fine, coarse_feats.cols());
    std::vector<double> weights(static_cast<std::size_t>(k));
    for (int i = 0; i < m_fine; ++i) {
        double total = 0.0;
        for (int j = 0; j < k; ++j) {
            const int nb = nn.indices(i, j);
            const double dist =
                (fine_coords.row(i).cast<double>() - coarse_coords.row(nb).cast<double>()).norm();
            weights[static_cast<std::size_t>(j)] = 1.0 / (dist + kUpsampleEps);
            total += weights[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < k; ++j)
            out.row(i) += coarse_feats.row(nn.indices(i, j)) *
                          static_cast<S>(weights[static_cast<std::size_t>(j)] / total);
    }
    return out;
}

template <typename S>
std::vector<LevelT<S>> run_hierarchy(const LabeledCloud& cloud, const EncoderConfig& cfg) {
    check_config(cfg);
    check_normalized(cloud);
    if (cloud.size() < (1 << cfg.layers))
        throw ArgumentError("encode: M=" + std::to_string(cloud.size()) +
                            " cannot be halved through " + std::to_string(cfg.layers) +
                            " layers");

    const FreqBank freqs = log_linear_freqs(cfg.d, cfg.theta);
    std::vector<LevelT<S>> levels;
    levels.reserve(static_cast<std::size_t>(cfg.layers) + 1);
    levels.push_back({cloud, initial_feats<S>(cloud, freqs)});
    for (int l = 1; l <= cfg.layers; ++l) {
        const FilterBank bank = sample_filter_bank(l, cfg);
        levels.push_back(manipulation_impl<S>(levels.back(), bank, freqs, cfg));
    }
    return levels;
}

template <typename S>
std::pair<MatRM<S>, std::vector<std::pair<int, int>>> encode_scene_impl(
    const LabeledCloud& cloud, const EncoderConfig& cfg) {
    const std::vector<LevelT<S>> levels = run_hierarchy<S>(cloud, cfg);

    MatRM<S> running = levels.back().feats;
    for (int l = cfg.layers - 1; l >= 0; --l) {
        const auto& fine = levels[static_cast<std::size_t>(l)];
        const MatRM<S> up = upsample_impl<S>(levels[static_cast<std::size_t>(l) + 1].cloud.coords,
                                             running, fine.cloud.coords, cfg);
        MatRM<S> merged(fine.cloud.size(), fine.feats.cols() + up.cols());
        merged << fine.feats, up;
        running = std::move(merged);
    }

    std::vector<std::pair<int, int>> slices;
    int offset = 0;
    for (int l = 0; l <= cfg.layers; ++l) {
        slices.emplace_back(offset, cfg.width(l));
        offset += cfg.width(l);
    }
    return {std::move(running), std::move(slices)};
}

}  // namespace

FreqBank log_linear_freqs(int d, double theta) {
    if (d < 1) throw ArgumentError("log_linear_freqs: d must be >= 1");
    if (theta <= 0.0) throw ArgumentError("log_linear_freqs: theta must be > 0");
    FreqBank bank;
    bank.values.resize(d);
    for (int i = 1; i <= d; ++i)
        bank.values(i - 1) = std::pow(theta, static_cast<double>(i) / static_cast<double>(d));
    return bank;
}

VecX trig_encode(const Vec3& x, const FreqBank& bank) {
    if (!x.allFinite()) throw ArgumentError("trig_encode: non-finite input");
    const int d = bank.d();
    VecX out(6 * d);
    for (int axis = 0; axis < 3; ++axis)
        for (int i = 0; i < d; ++i) {
            const double phase = kTwoPi * bank.values(i) * x(axis);
            out(axis * d + i) = std::sin(phase);
            out(3 * d + axis * d + i) = std::cos(phase);
        }
    return out;
}

MatX trig_encode_rows(const MatX& xyz, const FreqBank& bank) {
    if (xyz.cols() != 3) throw ArgumentError("trig_encode_rows: input must be M x 3");
    return trig_rows_impl<double>(xyz, bank);
}

PointFeatures initial_embed(const LabeledCloud& cloud, const FreqBank& bank) {
    check_normalized(cloud);
    PointFeatures out;
    out.data = initial_feats<double>(cloud, bank);
    out.layer_slices = {{0, 6 * bank.d()}};
    return out;
}

FilterBank sample_filter_bank(int layer, const EncoderConfig& cfg) {
    check_config(cfg);
    if (layer < 1) throw ArgumentError("sample_filter_bank: layer must be >= 1");
    const int width = cfg.width(layer);

    FilterBank bank;
    bank.layer = layer;
    bank.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(layer));
    Rng rng(bank.seed);

    const double stddev = std::sqrt(cfg.variance);
    VecX freqs(width);
    for (int a = 0; a < width; ++a) {
        const double draw = rng.normal(0.0, stddev);
        freqs(a) = cfg.freq_sampling == FreqSampling::kAbsGaussian ? std::abs(draw) : draw;
    }

    bank.weight.resize(width, width);
    for (int a = 0; a < width; ++a) {
        const double omega = kTwoPi * freqs(a);
        for (int b = 0; b < width; ++b) bank.weight(a, b) = std::cos(omega * (b + 1));
    }
    return bank;
}

EncoderLevel manipulation_layer(const EncoderLevel& prev, const FilterBank& bank,
                                const FreqBank& freqs, const EncoderConfig& cfg) {
    LevelT<double> in{prev.cloud, prev.feats};
    LevelT<double> out = manipulation_impl<double>(in, bank, freqs, cfg);
    return {std::move(out.cloud), std::move(out.feats)};
}

MatX upsample_layer(const Mat3& coarse_coords, const MatX& coarse_feats, const Mat3& fine_coords,
                    const EncoderConfig& cfg) {
    return upsample_impl<double>(coarse_coords, coarse_feats, fine_coords, cfg);
}

PointFeatures encode_scene(const LabeledCloud& cloud, const EncoderConfig& cfg) {
    auto [data, slices] = encode_scene_impl<double>(cloud, cfg);
    return {std::move(data), std::move(slices)};
}

PointFeaturesF encode_scene_f32(const LabeledCloud& cloud, const EncoderConfig& cfg) {
    auto [data, slices] = encode_scene_impl<float>(cloud, cfg);
    return {std::move(data), std::move(slices)};
}

VecX encode_global(const LabeledCloud& cloud, const EncoderConfig& cfg) {
    const std::vector<LevelT<double>> levels = run_hierarchy<double>(cloud, cfg);
    return levels.back().feats.colwise().maxCoeff().transpose();
}

void save_features(const MatXf& feats, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write("SNF1", 4);
    wire::write_u32_le(out, static_cast<std::uint32_t>(feats.rows()));
    wire::write_u32_le(out, static_cast<std::uint32_t>(feats.cols()));
    for (int i = 0; i < feats.rows(); ++i)
        for (int j = 0; j < feats.cols(); ++j) wire::write_f32_le(out, feats(i, j));
    if (!out) throw IoError("write failure on '" + path + "'");
}

void save_features(const MatX& feats, const std::string& path) {
    save_features(MatXf(feats.cast<float>()), path);
}

MatXf load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SNF1", 4) != 0)
        throw ParseError("bad magic, expected SNF1", path, 0);
    const std::uint32_t rows = wire::read_u32_le(in);
    const std::uint32_t cols = wire::read_u32_le(in);
    MatXf feats(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) feats(i, j) = wire::read_f32_le(in);
    if (!in) throw ParseError("truncated feature data", path, 12);
    return feats;
}

}  // namespace segnn
