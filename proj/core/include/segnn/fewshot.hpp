#pragma once

#include <functional>
#include <string>
#include <vector>

#include "segnn/cloud.hpp"
#include "segnn/encoder.hpp"
#include "segnn/linalg.hpp"

namespace segnn {

/// One N-way K-shot task. Support clouds are way-major:
/// support[way * k_shots + shot]. Labels are episode-local: 0 is background,
/// 1..N are the ways; -1 marks unlabeled query points.
struct Episode {
    int n_ways = 0;
    int k_shots = 0;
    std::vector<LabeledCloud> support;
    std::vector<LabeledCloud> queries;
    std::vector<std::string> class_names;

    const LabeledCloud& support_at(int way, int shot) const {
        return support[static_cast<std::size_t>(way * k_shots + shot)];
    }
};

/// Throws ArgumentError on a broken episode: wrong support arity, labels
/// outside [-1, N], or a support cloud without its way's class.
void validate_episode(const Episode& episode);

/// Per-shot class prototypes. Row p is one prototype vector; labels row p is
/// its one-hot class over N+1 classes. At most (N+1)*K rows; classes absent
/// from a shot contribute no row.
struct Prototypes {
    MatX vectors;  // P x D
    MatX labels;   // P x (N+1)

    int count() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
    int n_classes() const { return static_cast<int>(labels.cols()); }
};

/// Per-class masked means of feature rows. `present[c]` is false when no row
/// carries label c (its mean row is zero and must be ignored).
struct ClassMeans {
    MatX means;  // n_classes x D
    std::vector<bool> present;
};

/// Mean feature per class over rows with that label; rows labeled -1 are
/// skipped. Throws ArgumentError when no labeled row exists.
ClassMeans masked_average_prototypes(const MatX& feats, const VecXi& labels, int n_classes);

/// Builds per-shot prototypes from support features. feats_per_cloud and the
/// episode's support clouds are aligned; shot k pools the N way clouds of
/// that shot index.
Prototypes build_prototypes(const Episode& episode, const std::vector<MatX>& feats_per_cloud);

/// Cosine similarity between row-normalized query features and prototype
/// vectors; zero vectors normalize to zero similarity. M x P in [-1, 1].
MatX cosine_similarity(const MatX& query_feats, const Prototypes& protos);

/// Class logits phi(S_cos * L_P) with phi(x) = exp(-gamma * (1 - x)); the
/// label integration sums the K per-prototype similarities per class.
MatX similarity_logits(const MatX& s_cos, const Prototypes& protos, double gamma);

/// Options of the training-free pipeline.
struct SegnnOptions {
    EncoderConfig encoder;
    double gamma = 1000.0;
    int points_per_cloud = 2048;
};

struct CloudPrediction {
    VecXi labels;    // per original query point
    VecX max_logit;  // phi of the winning aggregated similarity
};

struct EpisodePrediction {
    std::vector<CloudPrediction> queries;
};

/// Pluggable encoder path (the harness substitutes a feature cache).
using FeatureProvider = std::function<MatX(const LabeledCloud&)>;

/// End-to-end training-free prediction: clouds resized to points_per_cloud,
/// encoded with one shared seeded encoder, classified against per-shot
/// prototypes by argmax of the aggregated cosine similarity (invariant to
/// gamma). Predictions map back to the original query points.
EpisodePrediction segnn_predict(const Episode& episode, const SegnnOptions& opts);
EpisodePrediction segnn_predict_with(const Episode& episode, const SegnnOptions& opts,
                                     const FeatureProvider& encode);

/// Labeled global-feature memory for training-free classification.
struct FeatureBank {
    MatX feats;   // B x D
    VecXi labels; // B, in [0, n_classes)
    int n_classes = 0;
};

struct ClassScores {
    int label = -1;
    VecX scores;
};

/// Nearest-prototype classification: phi of cosine similarities integrated
/// against one-hot bank labels, argmax class (ties to the lower id).
ClassScores classify_nn(const VecX& global_feat, const FeatureBank& bank, double gamma);

/// Text dump, one line per query point: "index predicted_label max_logit".
void write_prediction_dump(const CloudPrediction& pred, const std::string& path);

}  // namespace segnn
