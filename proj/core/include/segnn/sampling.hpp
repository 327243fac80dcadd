#pragma once

#include <vector>

#include "segnn/cloud.hpp"
#include "segnn/linalg.hpp"

namespace segnn {

/// Row q lists the k nearest stored-point indices of query q, ascending
/// distance, ties broken by lower index.
struct NeighborIndex {
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> indices;  // Q x k

    int queries() const { return static_cast<int>(indices.rows()); }
    int k() const { return static_cast<int>(indices.cols()); }
};

/// Greedy farthest point sampling. First pick is `start`; each subsequent
/// pick maximizes the minimum distance to the chosen set, ties broken by
/// lowest index. Returns `count` distinct indices in selection order.
/// Throws ArgumentError when count or start is out of range.
std::vector<int> farthest_point_sample(const LabeledCloud& cloud, int count, int start = 0);

/// Brute-force Euclidean k-NN of each query row against the stored points.
/// A query that coincides with a stored point includes it (distance 0).
/// Throws ArgumentError when k > M or k < 1.
NeighborIndex k_nearest_neighbors(const Mat3& queries, const Mat3& points, int k);

}  // namespace segnn
