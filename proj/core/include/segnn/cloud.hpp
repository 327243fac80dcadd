#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segnn/linalg.hpp"

namespace segnn {

/// A point cloud with optional per-point colors and labels.
/// Coordinates are scene units; normalize_cloud maps them to [0,1] per axis
/// before encoding. Label -1 marks an unlabeled point.
struct LabeledCloud {
    Mat3 coords;                       // M x 3
    std::optional<Mat3> colors;        // M x 3 in [0,1]
    std::optional<VecXi> labels;       // M, class ids, -1 = unlabeled
    std::string id;

    int size() const { return static_cast<int>(coords.rows()); }
    bool has_colors() const { return colors.has_value(); }
    bool has_labels() const { return labels.has_value(); }
};

/// Throws ArgumentError if any invariant is broken: M >= 1, finite coords,
/// colors in [0,1] with M rows, labels with M entries.
void validate_cloud(const LabeledCloud& cloud);

/// Affine per-axis map of coords onto [0,1]; a degenerate axis maps to 0.5.
/// Colors are clamped to [0,1]; labels pass through. Idempotent.
LabeledCloud normalize_cloud(const LabeledCloud& cloud);

/// New cloud from a row subset, in the given index order.
LabeledCloud select_points(const LabeledCloud& cloud, const std::vector<int>& indices);

/// m points drawn without replacement by the seeded generator.
/// Throws ArgumentError when m > M or m < 1.
LabeledCloud random_subsample(const LabeledCloud& cloud, int m, std::uint64_t seed);

}  // namespace segnn
