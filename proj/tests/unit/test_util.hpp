#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "segnn/cloud.hpp"
#include "segnn/fewshot.hpp"
#include "segnn/rng.hpp"

namespace segnn::test {

inline LabeledCloud random_cloud(int m, std::uint64_t seed, bool colors = true,
                                 bool labels = false, int n_classes = 3) {
    Rng rng(seed);
    LabeledCloud cloud;
    cloud.id = "rand-" + std::to_string(seed);
    cloud.coords.resize(m, 3);
    for (int i = 0; i < m; ++i)
        for (int c = 0; c < 3; ++c) cloud.coords(i, c) = static_cast<float>(rng.uniform());
    if (colors) {
        cloud.colors.emplace(m, 3);
        for (int i = 0; i < m; ++i)
            for (int c = 0; c < 3; ++c) (*cloud.colors)(i, c) = static_cast<float>(rng.uniform());
    }
    if (labels) {
        cloud.labels.emplace(m);
        for (int i = 0; i < m; ++i)
            (*cloud.labels)(i) = static_cast<int>(rng.uniform_index(
                static_cast<std::uint64_t>(n_classes)));
    }
    return cloud;
}

/// Tight, well-separated labeled clusters; one cluster per class id.
inline LabeledCloud cluster_cloud(const std::vector<std::pair<Vec3, int>>& clusters,
                                  int per_cluster, std::uint64_t seed, const std::string& id) {
    Rng rng(seed);
    LabeledCloud cloud;
    cloud.id = id;
    const int m = per_cluster * static_cast<int>(clusters.size());
    cloud.coords.resize(m, 3);
    cloud.colors.emplace(m, 3);
    cloud.labels.emplace(m);
    int at = 0;
    for (const auto& [center, label] : clusters) {
        for (int i = 0; i < per_cluster; ++i) {
            for (int c = 0; c < 3; ++c) {
                cloud.coords(at, c) = static_cast<float>(
                    std::clamp(center(c) + 0.02 * rng.normal(), 0.0, 1.0));
                (*cloud.colors)(at, c) = static_cast<float>(
                    std::clamp(0.2 + 0.6 * label / 3.0 + 0.02 * rng.normal(), 0.0, 1.0));
            }
            (*cloud.labels)(at) = label;
            ++at;
        }
    }
    return cloud;
}

/// N-way 1-shot episode of cluster clouds (class 0 background plus ways).
inline Episode cluster_episode(int n_ways, std::uint64_t seed, int per_cluster = 16) {
    std::vector<std::pair<Vec3, int>> layout = {{Vec3(0.15, 0.15, 0.1), 0}};
    if (n_ways >= 1) layout.push_back({Vec3(0.85, 0.2, 0.6), 1});
    if (n_ways >= 2) layout.push_back({Vec3(0.3, 0.85, 0.9), 2});
    Episode episode;
    episode.n_ways = n_ways;
    episode.k_shots = 1;
    episode.support.push_back(cluster_cloud(layout, per_cluster, seed, "support-0"));
    for (int way = 1; way < n_ways; ++way)
        episode.support.push_back(cluster_cloud(layout, per_cluster,
                                                seed + 10 * static_cast<std::uint64_t>(way),
                                                "support-" + std::to_string(way)));
    episode.queries.push_back(cluster_cloud(layout, per_cluster, seed + 100, "query-0"));
    return episode;
}

/// Generic labeled random episode (well-spread points, no degenerate ties).
inline Episode random_episode(int n_ways, int m, std::uint64_t seed) {
    Episode episode;
    episode.n_ways = n_ways;
    episode.k_shots = 1;
    for (int way = 0; way < n_ways; ++way)
        episode.support.push_back(
            random_cloud(m, seed + static_cast<std::uint64_t>(way), true, true, n_ways + 1));
    episode.queries.push_back(random_cloud(m, seed + 100, true, true, n_ways + 1));
    return episode;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("segnn-test-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    std::string dir() const { return path_.string(); }

private:
    std::filesystem::path path_;
};

}  // namespace segnn::test
