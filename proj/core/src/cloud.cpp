#include "segnn/cloud.hpp"

#include <algorithm>
#include <cmath>

#include "segnn/errors.hpp"
#include "segnn/rng.hpp"

namespace segnn {

void validate_cloud(const LabeledCloud& cloud) {
    const int m = cloud.size();
    if (m < 1) throw ArgumentError("cloud '" + cloud.id + "' is empty");
    if (!cloud.coords.allFinite())
        throw ArgumentError("cloud '" + cloud.id + "' has non-finite coordinates");
    if (cloud.colors) {
        if (cloud.colors->rows() != m)
            throw ArgumentError("cloud '" + cloud.id + "' color count differs from point count");
        if (!cloud.colors->allFinite() || cloud.colors->minCoeff() < 0.0f ||
            cloud.colors->maxCoeff() > 1.0f)
            throw ArgumentError("cloud '" + cloud.id + "' has colors outside [0,1]");
    }
    if (cloud.labels && cloud.labels->size() != m)
        throw ArgumentError("cloud '" + cloud.id + "' label count differs from point count");
}

LabeledCloud normalize_cloud(const LabeledCloud& cloud) {
    validate_cloud(cloud);
    LabeledCloud out = cloud;
    for (int axis = 0; axis < 3; ++axis) {
        const float lo = cloud.coords.col(axis).minCoeff();
        const float hi = cloud.coords.col(axis).maxCoeff();
        if (hi > lo) {
            const float span = hi - lo;
            for (int i = 0; i < cloud.size(); ++i)
                out.coords(i, axis) = (cloud.coords(i, axis) - lo) / span;
        } else {
            out.coords.col(axis).setConstant(0.5f);
        }
    }
    if (out.colors)
        *out.colors = out.colors->cwiseMax(0.0f).cwiseMin(1.0f);
    return out;
}

LabeledCloud select_points(const LabeledCloud& cloud, const std::vector<int>& indices) {
    LabeledCloud out;
    out.id = cloud.id;
    const int n = static_cast<int>(indices.size());
    out.coords.resize(n, 3);
    if (cloud.colors) out.colors.emplace(n, 3);
    if (cloud.labels) out.labels.emplace(n);
    for (int i = 0; i < n; ++i) {
        const int src = indices[static_cast<std::size_t>(i)];
        out.coords.row(i) = cloud.coords.row(src);
        if (cloud.colors) out.colors->row(i) = cloud.colors->row(src);
        if (cloud.labels) (*out.labels)(i) = (*cloud.labels)(src);
    }
    return out;
}

LabeledCloud random_subsample(const LabeledCloud& cloud, int m, std::uint64_t seed) {
    if (m < 1 || m > cloud.size())
        throw ArgumentError("random_subsample: m=" + std::to_string(m) + " outside [1, " +
                            std::to_string(cloud.size()) + "]");
    Rng rng(seed);
    return select_points(cloud, rng.sample_without_replacement(cloud.size(), m));
}

}  // namespace segnn
