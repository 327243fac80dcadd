#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segnn/cloud.hpp"
#include "segnn/linalg.hpp"

namespace segnn {

/// Log-linear frequency bank u_i = theta^(i/d), i = 1..d.
struct FreqBank {
    VecX values;

    int d() const { return static_cast<int>(values.size()); }
};

enum class FreqSampling {
    kAbsGaussian,  // |N(0, variance)|
    kRawGaussian,  // N(0, variance)
};

struct EncoderConfig {
    int d = 20;              // frequency count of the initial embedding
    double theta = 30.0;     // PE base
    int layers = 3;          // manipulation layer count
    int k_neigh = 16;        // neighborhood size (clamped to available points)
    int k_up = 3;            // upsampling neighbor count
    double variance = 1.0;   // Gaussian variance for filter frequencies
    FreqSampling freq_sampling = FreqSampling::kAbsGaussian;
    std::uint64_t seed = 0;

    /// Channel width of layer l: 2^l * 6d.
    int width(int layer) const { return (1 << layer) * 6 * d; }

    /// Final per-point dimension after upsampling: sum of width(0..layers).
    int scene_dim() const {
        int total = 0;
        for (int l = 0; l <= layers; ++l) total += width(l);
        return total;
    }

    /// Dimension of the pooled global feature: width(layers).
    int global_dim() const { return width(layers); }
};

/// Cosine projection built from sampled low frequencies:
/// weight(a, b) = cos(2*pi * v_a * k_b) with k_b = b + 1, so every entry
/// lies in [-1, 1].
struct FilterBank {
    MatX weight;  // width(layer) x width(layer)
    int layer = 0;
    std::uint64_t seed = 0;
};

/// Per-point features with the hierarchy recorded as (offset, length)
/// channel slices, one per level 0..layers.
struct PointFeatures {
    MatX data;  // M x D
    std::vector<std::pair<int, int>> layer_slices;

    int rows() const { return static_cast<int>(data.rows()); }
    int dim() const { return static_cast<int>(data.cols()); }
};

/// Single-precision variant produced by the fast path.
struct PointFeaturesF {
    MatXf data;
    std::vector<std::pair<int, int>> layer_slices;

    int rows() const { return static_cast<int>(data.rows()); }
    int dim() const { return static_cast<int>(data.cols()); }
};

/// One resolution level of the encoder hierarchy.
struct EncoderLevel {
    LabeledCloud cloud;
    MatX feats;
};

FreqBank log_linear_freqs(int d, double theta);

/// [sin(2*pi*u_i*x), sin(..y), sin(..z) | cos blocks, same order]; length 6d.
VecX trig_encode(const Vec3& x, const FreqBank& bank);

/// Row-wise trig_encode of an M x 3 matrix -> M x 6d.
MatX trig_encode_rows(const MatX& xyz, const FreqBank& bank);

/// Layer-0 embedding: E(p;u) + E(c;u), or E(p;u) alone when colors are
/// absent. The cloud must be normalized (coords in [0,1]).
PointFeatures initial_embed(const LabeledCloud& cloud, const FreqBank& bank);

/// Deterministic filter bank for layer l from (cfg.seed, l).
FilterBank sample_filter_bank(int layer, const EncoderConfig& cfg);

/// One embedding-manipulation step: FPS-halve the cloud, concatenate each
/// center's feature with its k neighbors', add tiled relative-position and
/// color encodings, project through the filter bank, max-pool the
/// neighborhood. Throws ArgumentError on a width mismatch with bank.layer.
EncoderLevel manipulation_layer(const EncoderLevel& prev, const FilterBank& bank,
                                const FreqBank& freqs, const EncoderConfig& cfg);

/// Inverse-distance weighted interpolation of coarse features onto fine
/// points (k_up neighbors, w = 1/(dist + 1e-8), normalized).
MatX upsample_layer(const Mat3& coarse_coords, const MatX& coarse_feats, const Mat3& fine_coords,
                    const EncoderConfig& cfg);

/// Full pipeline: initial embedding, `layers` manipulation layers, then
/// progressive upsampling with channel concatenation back to M points.
/// Output is M x scene_dim(). Throws ArgumentError when M < 2^layers or the
/// cloud is not normalized.
PointFeatures encode_scene(const LabeledCloud& cloud, const EncoderConfig& cfg);

/// encode_scene computed in 32-bit floating point.
PointFeaturesF encode_scene_f32(const LabeledCloud& cloud, const EncoderConfig& cfg);

/// Manipulation layers only, then global max pooling over the coarsest
/// level; length global_dim().
VecX encode_global(const LabeledCloud& cloud, const EncoderConfig& cfg);

/// Feature dump: magic SNF1, u32 rows, u32 dim, row-major f32.
void save_features(const MatXf& feats, const std::string& path);
void save_features(const MatX& feats, const std::string& path);
MatXf load_features(const std::string& path);

}  // namespace segnn
