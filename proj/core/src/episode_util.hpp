#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segnn/cloud.hpp"
#include "segnn/fewshot.hpp"
#include "segnn/rng.hpp"
#include "segnn/sampling.hpp"

namespace segnn::detail {

inline std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t hash = 14695981039346656037ULL;
    for (const char c : text) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 1099511628211ULL;
    }
    return hash;
}

/// Cloud resized to exactly m rows; source_rows maps resized row -> original
/// row. Smaller clouds are padded by seeded sampling with replacement,
/// larger ones subsampled without replacement.
struct ResizedCloud {
    LabeledCloud cloud;
    std::vector<int> source_rows;
};

inline ResizedCloud resize_for_eval(const LabeledCloud& cloud, int m, std::uint64_t seed) {
    const int size = cloud.size();
    ResizedCloud out;
    if (size == m) {
        out.cloud = cloud;
        out.source_rows.resize(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) out.source_rows[static_cast<std::size_t>(i)] = i;
        return out;
    }
    Rng rng(mix_seed(seed, fnv1a64(cloud.id)));
    if (size > m) {
        out.source_rows = rng.sample_without_replacement(size, m);
    } else {
        out.source_rows.resize(static_cast<std::size_t>(m));
        for (int i = 0; i < size; ++i) out.source_rows[static_cast<std::size_t>(i)] = i;
        for (int i = size; i < m; ++i)
            out.source_rows[static_cast<std::size_t>(i)] =
                static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(size)));
    }
    out.cloud = select_points(cloud, out.source_rows);
    return out;
}

/// Spreads per-resized-row predictions back onto the original points; rows
/// never sampled take the prediction of their nearest sampled point.
inline CloudPrediction map_back(const LabeledCloud& original, const ResizedCloud& resized,
                                const VecXi& sampled_label, const VecX& sampled_logit) {
    CloudPrediction pred;
    pred.labels = VecXi::Constant(original.size(), -1);
    pred.max_logit = VecX::Zero(original.size());
    for (int row = 0; row < static_cast<int>(resized.source_rows.size()); ++row) {
        const int orig = resized.source_rows[static_cast<std::size_t>(row)];
        if (pred.labels(orig) == -1) {
            pred.labels(orig) = sampled_label(row);
            pred.max_logit(orig) = sampled_logit(row);
        }
    }
    std::vector<int> missing;
    for (int i = 0; i < original.size(); ++i)
        if (pred.labels(i) == -1) missing.push_back(i);
    if (!missing.empty()) {
        Mat3 coords(static_cast<long>(missing.size()), 3);
        for (std::size_t i = 0; i < missing.size(); ++i)
            coords.row(static_cast<long>(i)) = original.coords.row(missing[i]);
        const NeighborIndex nearest = k_nearest_neighbors(coords, resized.cloud.coords, 1);
        for (std::size_t i = 0; i < missing.size(); ++i) {
            const int src = nearest.indices(static_cast<long>(i), 0);
            pred.labels(missing[i]) = sampled_label(src);
            pred.max_logit(missing[i]) = sampled_logit(src);
        }
    }
    return pred;
}

}  // namespace segnn::detail
