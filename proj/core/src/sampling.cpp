#include "segnn/sampling.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "segnn/errors.hpp"

namespace segnn {
namespace {

inline double sq_dist(const Mat3& a, int i, const Mat3& b, int j) {
    const double dx = static_cast<double>(a(i, 0)) - static_cast<double>(b(j, 0));
    const double dy = static_cast<double>(a(i, 1)) - static_cast<double>(b(j, 1));
    const double dz = static_cast<double>(a(i, 2)) - static_cast<double>(b(j, 2));
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::vector<int> farthest_point_sample(const LabeledCloud& cloud, int count, int start) {
    const int m = cloud.size();
    if (count < 1 || count > m)
        throw ArgumentError("farthest_point_sample: count=" + std::to_string(count) +
                            " outside [1, " + std::to_string(m) + "]");
    if (start < 0 || start >= m)
        throw ArgumentError("farthest_point_sample: start=" + std::to_string(start) +
                            " outside [0, " + std::to_string(m) + ")");

    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(count));
    chosen.push_back(start);

    std::vector<double> min_dist(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
        min_dist[static_cast<std::size_t>(i)] = sq_dist(cloud.coords, i, cloud.coords, start);

    while (static_cast<int>(chosen.size()) < count) {
        int best = -1;
        double best_dist = -1.0;
        for (int i = 0; i < m; ++i) {
            // strict > keeps the lowest index on ties
            if (min_dist[static_cast<std::size_t>(i)] > best_dist) {
                best_dist = min_dist[static_cast<std::size_t>(i)];
                best = i;
            }
        }
        chosen.push_back(best);
        for (int i = 0; i < m; ++i) {
            const double d = sq_dist(cloud.coords, i, cloud.coords, best);
            if (d < min_dist[static_cast<std::size_t>(i)]) min_dist[static_cast<std::size_t>(i)] = d;
        }
    }
    return chosen;
}

NeighborIndex k_nearest_neighbors(const Mat3& queries, const Mat3& points, int k) {
    const int m = static_cast<int>(points.rows());
    const int q = static_cast<int>(queries.rows());
    if (k < 1 || k > m)
        throw ArgumentError("k_nearest_neighbors: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(m) + "]");

    NeighborIndex out;
    out.indices.resize(q, k);

    std::vector<double> dist(static_cast<std::size_t>(m));
    std::vector<int> order(static_cast<std::size_t>(m));
    for (int qi = 0; qi < q; ++qi) {
        for (int i = 0; i < m; ++i)
            dist[static_cast<std::size_t>(i)] = sq_dist(queries, qi, points, i);
        std::iota(order.begin(), order.end(), 0);
        const auto closer = [&dist](int a, int b) {
            const double da = dist[static_cast<std::size_t>(a)];
            const double db = dist[static_cast<std::size_t>(b)];
            return da < db || (da == db && a < b);
        };
        std::partial_sort(order.begin(), order.begin() + k, order.end(), closer);
        for (int j = 0; j < k; ++j) out.indices(qi, j) = order[static_cast<std::size_t>(j)];
    }
    return out;
}

}  // namespace segnn
