#include "segnn/metrics.hpp"

#include "segnn/errors.hpp"

namespace segnn {

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_classes() != n_classes())
        throw ArgumentError("confusion merge: class count mismatch");
    counts += other.counts;
}

ConfusionMatrix make_confusion(int n_classes) {
    if (n_classes < 1) throw ArgumentError("confusion: n_classes must be >= 1");
    ConfusionMatrix conf;
    conf.counts.setZero(n_classes, n_classes);
    return conf;
}

ConfusionMatrix confusion(const VecXi& pred, const VecXi& truth, int n_classes) {
    if (pred.size() != truth.size())
        throw ArgumentError("confusion: prediction/truth length mismatch");
    ConfusionMatrix conf = make_confusion(n_classes);
    for (long i = 0; i < pred.size(); ++i) {
        const int t = truth(i);
        if (t == -1) continue;
        const int p = pred(i);
        if (t < 0 || t >= n_classes)
            throw ArgumentError("confusion: truth id " + std::to_string(t) + " out of range");
        if (p < 0 || p >= n_classes)
            throw ArgumentError("confusion: prediction id " + std::to_string(p) + " out of range");
        ++conf.counts(t, p);
    }
    return conf;
}

IouReport iou(const ConfusionMatrix& conf) {
    const int n = conf.n_classes();
    IouReport report;
    report.values = VecX::Zero(n);
    report.defined.assign(static_cast<std::size_t>(n), false);
    for (int c = 0; c < n; ++c) {
        const std::int64_t tp = conf.counts(c, c);
        const std::int64_t fn = conf.counts.row(c).sum() - tp;
        const std::int64_t fp = conf.counts.col(c).sum() - tp;
        const std::int64_t uni = tp + fp + fn;
        if (uni == 0) continue;
        report.values(c) = static_cast<double>(tp) / static_cast<double>(uni);
        report.defined[static_cast<std::size_t>(c)] = true;
    }
    return report;
}

std::optional<double> miou(const ConfusionMatrix& conf, bool include_background) {
    const IouReport report = iou(conf);
    double sum = 0.0;
    int counted = 0;
    for (int c = include_background ? 0 : 1; c < conf.n_classes(); ++c) {
        if (!report.defined[static_cast<std::size_t>(c)]) continue;
        sum += report.values(c);
        ++counted;
    }
    if (counted == 0) return std::nullopt;
    return sum / counted;
}

std::optional<double> accuracy(const ConfusionMatrix& conf) {
    const std::int64_t total = conf.total();
    if (total == 0) return std::nullopt;
    return static_cast<double>(conf.counts.diagonal().sum()) / static_cast<double>(total);
}

std::optional<double> aggregate_miou(const std::vector<ConfusionMatrix>& episodes,
                                     Aggregation mode, bool include_background) {
    if (episodes.empty()) return std::nullopt;
    if (mode == Aggregation::kGlobal) {
        ConfusionMatrix total = make_confusion(episodes.front().n_classes());
        for (const ConfusionMatrix& conf : episodes) total.merge(conf);
        return miou(total, include_background);
    }
    double sum = 0.0;
    int counted = 0;
    for (const ConfusionMatrix& conf : episodes) {
        const std::optional<double> value = miou(conf, include_background);
        if (!value) continue;
        sum += *value;
        ++counted;
    }
    if (counted == 0) return std::nullopt;
    return sum / counted;
}

nlohmann::json metrics_report(const ConfusionMatrix& global_conf, std::size_t episodes,
                              const std::string& config_digest, Aggregation mode,
                              const std::vector<ConfusionMatrix>& per_episode,
                              bool include_background) {
    nlohmann::json report;
    const IouReport per_class = iou(global_conf);
    nlohmann::json iou_obj = nlohmann::json::object();
    for (int c = 0; c < global_conf.n_classes(); ++c) {
        const std::string key = std::to_string(c);
        if (per_class.defined[static_cast<std::size_t>(c)])
            iou_obj[key] = per_class.values(c);
        else
            iou_obj[key] = nullptr;
    }
    report["per_class_iou"] = iou_obj;

    const std::optional<double> agg = mode == Aggregation::kGlobal
                                          ? miou(global_conf, include_background)
                                          : aggregate_miou(per_episode, mode, include_background);
    report["miou"] = agg ? nlohmann::json(*agg) : nlohmann::json(nullptr);
    const std::optional<double> acc = accuracy(global_conf);
    report["accuracy"] = acc ? nlohmann::json(*acc) : nlohmann::json(nullptr);
    report["episodes"] = episodes;
    report["config_digest"] = config_digest;
    report["aggregation"] = mode == Aggregation::kGlobal ? "global" : "per_episode_mean";
    report["include_background"] = include_background;
    return report;
}

}  // namespace segnn
