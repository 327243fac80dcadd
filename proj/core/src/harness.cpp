#include "segnn/harness.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>

#include "episode_util.hpp"
#include "segnn/errors.hpp"

namespace segnn {
namespace {

std::string cache_key(const LabeledCloud& cloud) {
    return cloud.id + "#" + std::to_string(cloud.size());
}

/// Runs fn(i) for i in [0, count) on `threads` workers; rethrows the first
/// worker exception.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    const int workers = std::min<int>(threads, static_cast<int>(count));
    for (int t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        });
    for (std::thread& worker : pool) worker.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

int harness_thread_count() {
    if (const char* env = std::getenv("SEGNN_THREADS")) {
        const int parsed = std::atoi(env);
        if (parsed >= 1) return parsed;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::string fnv1a_hex(const std::string& text) {
    const std::uint64_t hash = detail::fnv1a64(text);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

MatX FeatureCache::features(const LabeledCloud& cloud) {
    const std::string key = cache_key(cloud);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto it = cache_.find(key);
        if (it != cache_.end()) return it->second->cast<double>();
    }
    std::shared_ptr<const MatXf> stored;
    if (fast_path_) {
        stored = std::make_shared<const MatXf>(encode_scene_f32(normalize_cloud(cloud), cfg_).data);
    } else {
        stored = std::make_shared<const MatXf>(
            encode_scene(normalize_cloud(cloud), cfg_).data.cast<float>());
    }
    std::lock_guard<std::mutex> lock(mutex_);
    const auto [it, inserted] = cache_.emplace(key, std::move(stored));
    return it->second->cast<double>();
}

FeatureProvider FeatureCache::provider() {
    return [this](const LabeledCloud& cloud) { return features(cloud); };
}

void FeatureCache::prewarm(const Corpus& corpus, int points_per_cloud, int threads) {
    parallel_for(corpus.clouds.size(), threads, [&](std::size_t i) {
        const detail::ResizedCloud resized =
            detail::resize_for_eval(corpus.clouds[i], points_per_cloud, cfg_.seed);
        features(resized.cloud);
    });
}

std::size_t FeatureCache::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return cache_.size();
}

VecX GlobalFeatureCache::features(const LabeledCloud& cloud, int points_per_cloud) {
    const detail::ResizedCloud resized =
        detail::resize_for_eval(cloud, points_per_cloud, cfg_.seed);
    const std::string key = cache_key(resized.cloud);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto it = cache_.find(key);
        if (it != cache_.end()) return it->second->cast<double>();
    }
    const VecX computed = encode_global(normalize_cloud(resized.cloud), cfg_);
    auto stored = std::make_shared<const VecXf>(computed.cast<float>());
    std::lock_guard<std::mutex> lock(mutex_);
    const auto [it, inserted] = cache_.emplace(key, std::move(stored));
    return it->second->cast<double>();
}

StreamEvalResult evaluate_stream(const Corpus& corpus, const std::vector<EpisodeDescriptor>& descs,
                                 int k_shots, int n_query, const EpisodePredictor& predict,
                                 int threads,
                                 const std::function<void(std::size_t, const Episode&,
                                                          const EpisodePrediction&)>& observer) {
    if (descs.empty()) throw ArgumentError("evaluate_stream: no episodes");
    const int n_ways = static_cast<int>(descs.front().way_classes.size());
    const int n_classes = n_ways + 1;

    StreamEvalResult result;
    result.per_episode.assign(descs.size(), make_confusion(n_classes));

    std::mutex observer_mutex;
    parallel_for(descs.size(), threads, [&](std::size_t i) {
        const EpisodeDescriptor& desc = descs[i];
        const Episode episode =
            sample_episode(corpus, desc.way_classes, k_shots, n_query, desc.seed);
        const EpisodePrediction prediction = predict(episode);
        ConfusionMatrix conf = make_confusion(n_classes);
        for (std::size_t q = 0; q < episode.queries.size(); ++q) {
            const LabeledCloud& query = episode.queries[q];
            if (!query.labels) continue;
            conf.merge(confusion(prediction.queries[q].labels, *query.labels, n_classes));
        }
        result.per_episode[i] = std::move(conf);
        if (observer) {
            std::lock_guard<std::mutex> lock(observer_mutex);
            observer(i, episode, prediction);
        }
    });

    result.global = make_confusion(n_classes);
    for (const ConfusionMatrix& conf : result.per_episode) result.global.merge(conf);
    return result;
}

double majority_baseline(const ConfusionMatrix& conf) {
    const std::int64_t total = conf.total();
    if (total == 0) return 0.0;
    std::int64_t best = 0;
    for (int c = 0; c < conf.n_classes(); ++c)
        best = std::max(best, conf.counts.row(c).sum());
    return static_cast<double>(best) / static_cast<double>(total);
}

int dominant_object_label(const LabeledCloud& cloud) {
    if (!cloud.labels) return -1;
    std::unordered_map<int, long> counts;
    for (int i = 0; i < cloud.size(); ++i) {
        const int label = (*cloud.labels)(i);
        if (label > 0) ++counts[label];
    }
    int best = -1;
    long best_count = 0;
    for (const auto& [label, count] : counts)
        if (count > best_count || (count == best_count && best != -1 && label < best)) {
            best = label;
            best_count = count;
        }
    return best;
}

}  // namespace segnn
