#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "segnn/encoder.hpp"
#include "segnn/fewshot.hpp"
#include "segnn/metrics.hpp"
#include "segnn/synth.hpp"

namespace segnn {

/// Worker count: SEGNN_THREADS when set (>= 1), hardware concurrency
/// otherwise.
int harness_thread_count();

/// FNV-1a 64 hex digest; used as the config digest of a run.
std::string fnv1a_hex(const std::string& text);

/// Thread-safe per-cloud feature memoization. Features are computed once
/// (64-bit reference encoder, or the 32-bit fast path on request) and held
/// in 32-bit storage; keys combine the cloud id and its point count.
class FeatureCache {
public:
    explicit FeatureCache(const EncoderConfig& cfg, bool fast_path = false)
        : cfg_(cfg), fast_path_(fast_path) {}

    MatX features(const LabeledCloud& normalized_sized_cloud);
    FeatureProvider provider();

    /// Encodes every corpus cloud at the evaluation size in parallel.
    void prewarm(const Corpus& corpus, int points_per_cloud, int threads);

    std::size_t size() const;
    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    bool fast_path_ = false;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::shared_ptr<const MatXf>> cache_;
};

/// Same memoization for global (classification) features.
class GlobalFeatureCache {
public:
    explicit GlobalFeatureCache(const EncoderConfig& cfg) : cfg_(cfg) {}

    /// Resizes the cloud to points_per_cloud, normalizes, encodes globally.
    VecX features(const LabeledCloud& cloud, int points_per_cloud);

private:
    EncoderConfig cfg_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::shared_ptr<const VecXf>> cache_;
};

using EpisodePredictor = std::function<EpisodePrediction(const Episode&)>;

struct StreamEvalResult {
    std::vector<ConfusionMatrix> per_episode;
    ConfusionMatrix global;
};

/// Samples each described episode, predicts, and scores query points against
/// their episode labels. Episodes are independent; work fans out over
/// `threads` workers and reduces in episode order, so results do not depend
/// on the thread count.
StreamEvalResult evaluate_stream(const Corpus& corpus, const std::vector<EpisodeDescriptor>& descs,
                                 int k_shots, int n_query, const EpisodePredictor& predict,
                                 int threads,
                                 const std::function<void(std::size_t, const Episode&,
                                                          const EpisodePrediction&)>& observer =
                                     nullptr);

/// Majority-class baseline accuracy implied by a confusion matrix: the best
/// achievable accuracy of a constant prediction.
double majority_baseline(const ConfusionMatrix& conf);

/// Cloud-level class: the most frequent non-background label (ties to the
/// lower id); -1 when no labeled object point exists.
int dominant_object_label(const LabeledCloud& cloud);

}  // namespace segnn
