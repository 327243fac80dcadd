#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segnn/linalg.hpp"

#include <json.hpp>

namespace segnn {

/// rows = truth, cols = prediction; counts sum to the scored point count.
struct ConfusionMatrix {
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> counts;

    int n_classes() const { return static_cast<int>(counts.rows()); }
    std::int64_t total() const { return counts.sum(); }

    /// Associative, commutative accumulation for parallel scoring.
    void merge(const ConfusionMatrix& other);
};

ConfusionMatrix make_confusion(int n_classes);

/// Counts per (truth, prediction) pair; points with truth -1 are skipped.
/// Throws ArgumentError on length mismatch or an id out of range.
ConfusionMatrix confusion(const VecXi& pred, const VecXi& truth, int n_classes);

/// Per-class intersection over union; defined[c] is false when class c has
/// zero union (absent from truth and prediction).
struct IouReport {
    VecX values;
    std::vector<bool> defined;
};

IouReport iou(const ConfusionMatrix& conf);

/// Mean IoU over the target classes (background class 0 excluded unless
/// include_background); zero-union classes are excluded from the mean.
/// nullopt when no class is scorable.
std::optional<double> miou(const ConfusionMatrix& conf, bool include_background = false);

/// Fraction of correctly predicted points; nullopt for an empty matrix.
std::optional<double> accuracy(const ConfusionMatrix& conf);

enum class Aggregation {
    kGlobal,          // sum confusion counts over episodes, then mIoU
    kPerEpisodeMean,  // mean of per-episode mIoU values
};

std::optional<double> aggregate_miou(const std::vector<ConfusionMatrix>& episodes,
                                     Aggregation mode, bool include_background = false);

/// {per_class_iou, miou, accuracy, episodes, config_digest} with nulls for
/// undefined entries. Key order is lexicographic, so equal inputs always
/// serialize to identical bytes.
nlohmann::json metrics_report(const ConfusionMatrix& global_conf, std::size_t episodes,
                              const std::string& config_digest, Aggregation mode,
                              const std::vector<ConfusionMatrix>& per_episode,
                              bool include_background = false);

}  // namespace segnn
