#include "segnn/fewshot.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "episode_util.hpp"
#include "segnn/errors.hpp"
#include "segnn/rng.hpp"
#include "segnn/sampling.hpp"

namespace segnn {
namespace {

using detail::ResizedCloud;
using detail::resize_for_eval;

bool has_label(const LabeledCloud& cloud, int label) {
    if (!cloud.labels) return false;
    for (int i = 0; i < cloud.size(); ++i)
        if ((*cloud.labels)(i) == label) return true;
    return false;
}

void check_label_range(const LabeledCloud& cloud, int n_ways, const char* role) {
    if (!cloud.labels) return;
    for (int i = 0; i < cloud.size(); ++i) {
        const int label = (*cloud.labels)(i);
        if (label < -1 || label > n_ways)
            throw ArgumentError(std::string(role) + " cloud '" + cloud.id + "' has label " +
                                std::to_string(label) + " outside [-1, " +
                                std::to_string(n_ways) + "]");
    }
}

MatX row_normalized(const MatX& rows) {
    MatX out = rows;
    for (int i = 0; i < out.rows(); ++i) {
        const double norm = out.row(i).norm();
        if (norm > 0.0) out.row(i) /= norm;
    }
    return out;
}

}  // namespace

void validate_episode(const Episode& episode) {
    if (episode.n_ways < 1) throw ArgumentError("episode: n_ways must be >= 1");
    if (episode.k_shots < 1) throw ArgumentError("episode: k_shots must be >= 1");
    if (static_cast<int>(episode.support.size()) != episode.n_ways * episode.k_shots)
        throw ArgumentError("episode: expected " +
                            std::to_string(episode.n_ways * episode.k_shots) +
                            " support clouds, got " + std::to_string(episode.support.size()));
    for (int way = 0; way < episode.n_ways; ++way)
        for (int shot = 0; shot < episode.k_shots; ++shot) {
            const LabeledCloud& cloud = episode.support_at(way, shot);
            if (!cloud.labels)
                throw ArgumentError("episode: support cloud '" + cloud.id + "' has no labels");
            check_label_range(cloud, episode.n_ways, "support");
            if (!has_label(cloud, way + 1))
                throw ArgumentError("episode: support cloud '" + cloud.id +
                                    "' lacks its way's class " + std::to_string(way + 1));
        }
    for (const LabeledCloud& query : episode.queries)
        check_label_range(query, episode.n_ways, "query");
}

ClassMeans masked_average_prototypes(const MatX& feats, const VecXi& labels, int n_classes) {
    if (labels.size() != feats.rows())
        throw ArgumentError("masked_average_prototypes: labels/features row mismatch");
    if (n_classes < 1) throw ArgumentError("masked_average_prototypes: n_classes must be >= 1");

    ClassMeans out;
    out.means = MatX::Zero(n_classes, feats.cols());
    out.present.assign(static_cast<std::size_t>(n_classes), false);
    VecX counts = VecX::Zero(n_classes);
    for (int i = 0; i < feats.rows(); ++i) {
        const int label = labels(i);
        if (label < 0) continue;
        if (label >= n_classes)
            throw ArgumentError("masked_average_prototypes: label " + std::to_string(label) +
                                " out of range");
        out.means.row(label) += feats.row(i);
        counts(label) += 1.0;
    }
    if (counts.sum() == 0.0)
        throw ArgumentError("masked_average_prototypes: no labeled rows");
    for (int c = 0; c < n_classes; ++c) {
        if (counts(c) > 0.0) {
            out.means.row(c) /= counts(c);
            out.present[static_cast<std::size_t>(c)] = true;
        }
    }
    return out;
}

Prototypes build_prototypes(const Episode& episode, const std::vector<MatX>& feats_per_cloud) {
    const int n_classes = episode.n_ways + 1;
    if (feats_per_cloud.size() != episode.support.size())
        throw ArgumentError("build_prototypes: feature list does not match support set");

    std::vector<VecX> rows;
    std::vector<int> row_class;
    for (int shot = 0; shot < episode.k_shots; ++shot) {
        // Pool the N way clouds of this shot index, then average per class.
        long total = 0;
        for (int way = 0; way < episode.n_ways; ++way)
            total += episode.support_at(way, shot).size();
        MatX feats(total, feats_per_cloud.front().cols());
        VecXi labels(total);
        long at = 0;
        for (int way = 0; way < episode.n_ways; ++way) {
            const LabeledCloud& cloud = episode.support_at(way, shot);
            const MatX& f = feats_per_cloud[static_cast<std::size_t>(way * episode.k_shots + shot)];
            feats.middleRows(at, cloud.size()) = f;
            labels.segment(at, cloud.size()) = *cloud.labels;
            at += cloud.size();
        }
        const ClassMeans means = masked_average_prototypes(feats, labels, n_classes);
        for (int c = 0; c < n_classes; ++c)
            if (means.present[static_cast<std::size_t>(c)]) {
                rows.push_back(means.means.row(c).transpose());
                row_class.push_back(c);
            }
    }

    Prototypes protos;
    protos.vectors.resize(static_cast<long>(rows.size()), feats_per_cloud.front().cols());
    protos.labels = MatX::Zero(static_cast<long>(rows.size()), n_classes);
    for (std::size_t p = 0; p < rows.size(); ++p) {
        protos.vectors.row(static_cast<long>(p)) = rows[p].transpose();
        protos.labels(static_cast<long>(p), row_class[p]) = 1.0;
    }
    return protos;
}

MatX cosine_similarity(const MatX& query_feats, const Prototypes& protos) {
    if (query_feats.cols() != protos.vectors.cols())
        throw ArgumentError("cosine_similarity: dimension mismatch (" +
                            std::to_string(query_feats.cols()) + " vs " +
                            std::to_string(protos.vectors.cols()) + ")");
    return row_normalized(query_feats) * row_normalized(protos.vectors).transpose();
}

MatX similarity_logits(const MatX& s_cos, const Prototypes& protos, double gamma) {
    if (gamma <= 0.0) throw ArgumentError("similarity_logits: gamma must be > 0");
    if (s_cos.cols() != protos.count())
        throw ArgumentError("similarity_logits: similarity/prototype count mismatch");
    const MatX aggregated = s_cos * protos.labels;
    return (-gamma * (1.0 - aggregated.array())).exp().matrix();
}

EpisodePrediction segnn_predict(const Episode& episode, const SegnnOptions& opts) {
    const EncoderConfig cfg = opts.encoder;
    return segnn_predict_with(episode, opts, [&cfg](const LabeledCloud& cloud) {
        return encode_scene(normalize_cloud(cloud), cfg).data;
    });
}

EpisodePrediction segnn_predict_with(const Episode& episode, const SegnnOptions& opts,
                                     const FeatureProvider& encode) {
    if (episode.n_ways < 1 || episode.k_shots < 1)
        throw ArgumentError("segnn_predict: empty episode");
    if (static_cast<int>(episode.support.size()) != episode.n_ways * episode.k_shots)
        throw ArgumentError("segnn_predict: support arity mismatch");
    for (int way = 0; way < episode.n_ways; ++way)
        for (int shot = 0; shot < episode.k_shots; ++shot) {
            const LabeledCloud& cloud = episode.support_at(way, shot);
            if (!cloud.labels)
                throw ArgumentError("segnn_predict: support cloud '" + cloud.id + "' unlabeled");
            check_label_range(cloud, episode.n_ways, "support");
            if (!has_label(cloud, way + 1) && !has_label(cloud, 0))
                throw ArgumentError("segnn_predict: support cloud '" + cloud.id +
                                    "' has neither its way's class nor background");
        }

    // Resize support and queries to a uniform point count, encode, build
    // per-shot prototypes.
    std::vector<MatX> support_feats;
    Episode resized = episode;
    for (std::size_t s = 0; s < episode.support.size(); ++s) {
        ResizedCloud r =
            resize_for_eval(episode.support[s], opts.points_per_cloud, opts.encoder.seed);
        support_feats.push_back(encode(r.cloud));
        resized.support[s] = std::move(r.cloud);
    }
    const Prototypes protos = build_prototypes(resized, support_feats);

    EpisodePrediction out;
    for (const LabeledCloud& query : episode.queries) {
        const ResizedCloud r = resize_for_eval(query, opts.points_per_cloud, opts.encoder.seed);
        const MatX feats = encode(r.cloud);
        const MatX s_cos = cosine_similarity(feats, protos);
        const MatX aggregated = s_cos * protos.labels;

        // argmax of the aggregated similarity; phi is strictly increasing so
        // this matches argmax of the logits at any gamma, without underflow.
        VecXi sampled_label(aggregated.rows());
        VecX sampled_logit(aggregated.rows());
        for (int i = 0; i < aggregated.rows(); ++i) {
            int best = 0;
            for (int c = 1; c < aggregated.cols(); ++c)
                if (aggregated(i, c) > aggregated(i, best)) best = c;
            sampled_label(i) = best;
            sampled_logit(i) = std::exp(-opts.gamma * (1.0 - aggregated(i, best)));
        }

        out.queries.push_back(detail::map_back(query, r, sampled_label, sampled_logit));
    }
    return out;
}

ClassScores classify_nn(const VecX& global_feat, const FeatureBank& bank, double gamma) {
    if (bank.feats.rows() < 1) throw ArgumentError("classify_nn: empty feature bank");
    if (bank.labels.size() != bank.feats.rows())
        throw ArgumentError("classify_nn: bank label/feature mismatch");
    if (bank.n_classes < 1) throw ArgumentError("classify_nn: n_classes must be >= 1");
    if (global_feat.size() != bank.feats.cols())
        throw ArgumentError("classify_nn: feature dimension mismatch");

    VecX query = global_feat;
    const double qnorm = query.norm();
    if (qnorm > 0.0) query /= qnorm;
    const MatX bank_normed = row_normalized(bank.feats);
    const VecX sims = bank_normed * query;

    ClassScores out;
    out.scores = VecX::Zero(bank.n_classes);
    for (int b = 0; b < bank.feats.rows(); ++b) {
        const int label = bank.labels(b);
        if (label < 0 || label >= bank.n_classes)
            throw ArgumentError("classify_nn: bank label out of range");
        out.scores(label) += std::exp(-gamma * (1.0 - sims(b)));
    }
    out.label = 0;
    for (int c = 1; c < bank.n_classes; ++c)
        if (out.scores(c) > out.scores(out.label)) out.label = c;
    return out;
}

void write_prediction_dump(const CloudPrediction& pred, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    char buf[64];
    for (int i = 0; i < pred.labels.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g", pred.max_logit(i));
        out << i << ' ' << pred.labels(i) << ' ' << buf << '\n';
    }
    if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace segnn
