#include "segnn/quest.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "episode_util.hpp"
#include "segnn/errors.hpp"
#include "segnn/rng.hpp"
#include "wire.hpp"

namespace segnn {
namespace {

using detail::ResizedCloud;
using detail::resize_for_eval;

// ---------------------------------------------------------------------------
// refine stack

struct BnCache {
    VecX mean, inv_std;
    MatX x_hat;
};

struct RefineCache {
    BnCache bn0, bn1, bn2;
    MatX r0, r1, refined;  // post-ReLU activations (masks recoverable from > 0)
};

void bn_forward(const MatX& x, const VecX& scale, const VecX& shift, const VecX& run_mean,
                const VecX& run_var, BnMode mode, double eps, MatX& out, BnCache* cache,
                VecX* batch_mean, VecX* batch_var) {
    const long rows = x.rows();
    VecX mean, var;
    if (mode == BnMode::kTrain) {
        mean = x.colwise().mean().transpose();
        MatX centered = x.rowwise() - mean.transpose();
        var = centered.array().square().colwise().mean().transpose();
        if (batch_mean) *batch_mean = mean;
        if (batch_var) *batch_var = var;
        if (cache) {
            cache->mean = mean;
            cache->inv_std = (var.array() + eps).rsqrt();
            cache->x_hat =
                centered.array().rowwise() * cache->inv_std.transpose().array();
            out = (cache->x_hat.array().rowwise() * scale.transpose().array()).matrix();
            out.rowwise() += shift.transpose();
            return;
        }
        const VecX inv_std = (var.array() + eps).rsqrt();
        out = (centered.array().rowwise() * (inv_std.array() * scale.array()).transpose())
                  .matrix();
        out.rowwise() += shift.transpose();
        return;
    }
    (void)rows;
    const VecX inv_std = (run_var.array() + eps).rsqrt();
    MatX centered = x.rowwise() - run_mean.transpose();
    if (cache) {
        cache->mean = run_mean;
        cache->inv_std = inv_std;
        cache->x_hat = centered.array().rowwise() * inv_std.transpose().array();
        out = (cache->x_hat.array().rowwise() * scale.transpose().array()).matrix();
        out.rowwise() += shift.transpose();
        return;
    }
    out = (centered.array().rowwise() * (inv_std.array() * scale.array()).transpose()).matrix();
    out.rowwise() += shift.transpose();
}

/// Backward through y = scale * x_hat + shift with train-mode batch stats.
/// Returns dx; accumulates dscale/dshift. When dx_needed is false only the
/// parameter gradients are produced.
MatX bn_backward(const MatX& dy, const BnCache& cache, const VecX& scale, BnMode mode,
                 Eigen::Map<VecX> dscale, Eigen::Map<VecX> dshift, bool dx_needed) {
    dscale += (dy.array() * cache.x_hat.array()).colwise().sum().transpose().matrix();
    dshift += dy.colwise().sum().transpose();
    if (!dx_needed) return MatX();

    const MatX dx_hat = dy.array().rowwise() * scale.transpose().array();
    if (mode == BnMode::kEval) {
        return dx_hat.array().rowwise() * cache.inv_std.transpose().array();
    }
    // batch statistics participate in the graph
    const Eigen::RowVectorXd mean_dxhat = dx_hat.colwise().mean();
    const Eigen::RowVectorXd mean_dxhat_xhat =
        (dx_hat.array() * cache.x_hat.array()).colwise().mean();
    MatX dx = dx_hat;
    dx.array().rowwise() -= mean_dxhat.array();
    dx.array() -= cache.x_hat.array().rowwise() * mean_dxhat_xhat.array();
    dx.array().rowwise() *= cache.inv_std.transpose().array();
    return dx;
}

struct QuestGradsView {
    VecX* flat;
    const QuestParams* shape;

    Eigen::Map<VecX> bn0_scale() { return {flat->data() + shape->off_bn0_scale(), shape->feature_dim}; }
    Eigen::Map<VecX> bn0_shift() { return {flat->data() + shape->off_bn0_shift(), shape->feature_dim}; }
    Eigen::Map<MatX> lin1_w() { return {flat->data() + shape->off_lin1_w(), shape->feature_dim, shape->hidden}; }
    Eigen::Map<VecX> lin1_b() { return {flat->data() + shape->off_lin1_b(), shape->hidden}; }
    Eigen::Map<VecX> bn1_scale() { return {flat->data() + shape->off_bn1_scale(), shape->hidden}; }
    Eigen::Map<VecX> bn1_shift() { return {flat->data() + shape->off_bn1_shift(), shape->hidden}; }
    Eigen::Map<MatX> lin2_w() { return {flat->data() + shape->off_lin2_w(), shape->hidden, shape->hidden}; }
    Eigen::Map<VecX> lin2_b() { return {flat->data() + shape->off_lin2_b(), shape->hidden}; }
    Eigen::Map<VecX> bn2_scale() { return {flat->data() + shape->off_bn2_scale(), shape->hidden}; }
    Eigen::Map<VecX> bn2_shift() { return {flat->data() + shape->off_bn2_shift(), shape->hidden}; }
    Eigen::Map<MatX> w_shared() { return {flat->data() + shape->off_w_shared(), shape->hidden, shape->hidden}; }
    Eigen::Map<VecX> w_gap() { return {flat->data() + shape->off_w_gap(), shape->hidden}; }
};

MatX refine_forward(const MatX& x, const QuestParams& params, BnMode mode,
                    const QuestConfig& cfg, RefineCache* cache, BnBatchStats* stats) {
    if (x.cols() != params.feature_dim)
        throw ArgumentError("refine_features: expected " + std::to_string(params.feature_dim) +
                            " channels, got " + std::to_string(x.cols()));

    MatX a0;
    bn_forward(x, params.bn0_scale(), params.bn0_shift(), params.bn0_mean, params.bn0_var, mode,
               cfg.bn_eps, a0, cache ? &cache->bn0 : nullptr, stats ? &stats->bn0_mean : nullptr,
               stats ? &stats->bn0_var : nullptr);
    MatX r0 = a0.cwiseMax(0.0);

    MatX z1 = r0 * params.lin1_w();
    z1.rowwise() += params.lin1_b().transpose();
    MatX a1;
    bn_forward(z1, params.bn1_scale(), params.bn1_shift(), params.bn1_mean, params.bn1_var, mode,
               cfg.bn_eps, a1, cache ? &cache->bn1 : nullptr, stats ? &stats->bn1_mean : nullptr,
               stats ? &stats->bn1_var : nullptr);
    MatX r1 = a1.cwiseMax(0.0);

    MatX z2 = r1 * params.lin2_w();
    z2.rowwise() += params.lin2_b().transpose();
    MatX a2;
    bn_forward(z2, params.bn2_scale(), params.bn2_shift(), params.bn2_mean, params.bn2_var, mode,
               cfg.bn_eps, a2, cache ? &cache->bn2 : nullptr, stats ? &stats->bn2_mean : nullptr,
               stats ? &stats->bn2_var : nullptr);
    MatX refined = a2.cwiseMax(0.0);

    if (cache) {
        cache->r0 = std::move(r0);
        cache->r1 = std::move(r1);
        cache->refined = refined;
    }
    return refined;
}

/// Backprop through the refine stack; input gradients are not needed (the
/// encoder is frozen) so the bn0 input chain is skipped.
void refine_backward(const MatX& d_refined, const RefineCache& cache, const QuestParams& params,
                     BnMode mode, QuestGradsView& grads) {
    const MatX da2 =
        (d_refined.array() * (cache.refined.array() > 0.0).cast<double>()).matrix();
    const MatX dz2 = bn_backward(da2, cache.bn2, params.bn2_scale(), mode, grads.bn2_scale(),
                                 grads.bn2_shift(), true);

    grads.lin2_w() += cache.r1.transpose() * dz2;
    grads.lin2_b() += dz2.colwise().sum().transpose();
    const MatX dr1 = dz2 * params.lin2_w().transpose();

    const MatX da1 = (dr1.array() * (cache.r1.array() > 0.0).cast<double>()).matrix();
    const MatX dz1 = bn_backward(da1, cache.bn1, params.bn1_scale(), mode, grads.bn1_scale(),
                                 grads.bn1_shift(), true);

    grads.lin1_w() += cache.r0.transpose() * dz1;
    grads.lin1_b() += dz1.colwise().sum().transpose();
    const MatX dr0 = dz1 * params.lin1_w().transpose();

    const MatX da0 = (dr0.array() * (cache.r0.array() > 0.0).cast<double>()).matrix();
    bn_backward(da0, cache.bn0, params.bn0_scale(), mode, grads.bn0_scale(), grads.bn0_shift(),
                false);
}

// ---------------------------------------------------------------------------
// pooling and correlation pieces

MatX softmax_rows(const MatX& x) {
    MatX out(x.rows(), x.cols());
    for (long i = 0; i < x.rows(); ++i) {
        const double peak = x.row(i).maxCoeff();
        const VecX e = (x.row(i).array() - peak).exp().transpose();
        out.row(i) = (e / e.sum()).transpose();
    }
    return out;
}

/// Statistics of a cloud set: max over the concatenated point dimension with
/// the kernel scaled by the set size, so the output always has
/// ceil(M/kernel) rows regardless of how many clouds the set holds.
struct SetStats {
    MatX pooled;  // M' x H
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_cloud;
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_row;
};

SetStats pool_set(const std::vector<const MatX*>& feats, int kernel) {
    if (kernel < 1) throw ArgumentError("pooled statistics: kernel must be >= 1");
    if (feats.empty()) throw ArgumentError("pooled statistics: empty cloud set");
    const long m = feats.front()->rows();
    const long cols = feats.front()->cols();
    for (const MatX* f : feats)
        if (f->rows() != m || f->cols() != cols)
            throw ArgumentError("pooled statistics: cloud shapes differ within the set");

    const long n = static_cast<long>(feats.size());
    const long total = n * m;
    const long window = static_cast<long>(kernel) * n;
    const long out_rows = (total + window - 1) / window;

    SetStats out;
    out.pooled.resize(out_rows, cols);
    out.argmax_cloud.resize(out_rows, cols);
    out.argmax_row.resize(out_rows, cols);
    for (long w = 0; w < out_rows; ++w) {
        const long begin = w * window;
        const long end = std::min(total, begin + window);
        for (long h = 0; h < cols; ++h) {
            long best = begin;
            double best_value = (*feats[static_cast<std::size_t>(begin / m)])(begin % m, h);
            for (long r = begin + 1; r < end; ++r) {
                const double value = (*feats[static_cast<std::size_t>(r / m)])(r % m, h);
                if (value > best_value) {
                    best_value = value;
                    best = r;
                }
            }
            out.pooled(w, h) = best_value;
            out.argmax_cloud(w, h) = static_cast<int>(best / m);
            out.argmax_row(w, h) = static_cast<int>(best % m);
        }
    }
    return out;
}

/// Per-shot masked-mean prototypes over the shot's way clouds.
struct ShotPrototypes {
    MatX fp;                    // rows = classes present in this shot
    std::vector<int> row_class;
    std::vector<double> row_count;  // points averaged into each row
};

ShotPrototypes shot_prototypes(const std::vector<const MatX*>& feats,
                               const std::vector<const VecXi*>& labels, int n_classes) {
    const long dim = feats.front()->cols();
    MatX sums = MatX::Zero(n_classes, dim);
    VecX counts = VecX::Zero(n_classes);
    for (std::size_t c = 0; c < feats.size(); ++c) {
        const MatX& f = *feats[c];
        const VecXi& y = *labels[c];
        for (long i = 0; i < f.rows(); ++i) {
            const int label = y(i);
            if (label < 0) continue;
            if (label >= n_classes)
                throw ArgumentError("quest: support label " + std::to_string(label) +
                                    " out of range");
            sums.row(label) += f.row(i);
            counts(label) += 1.0;
        }
    }
    ShotPrototypes out;
    long present = 0;
    for (int c = 0; c < n_classes; ++c)
        if (counts(c) > 0.0) ++present;
    out.fp.resize(present, dim);
    long at = 0;
    for (int c = 0; c < n_classes; ++c) {
        if (counts(c) <= 0.0) continue;
        out.fp.row(at) = sums.row(c) / counts(c);
        out.row_class.push_back(c);
        out.row_count.push_back(counts(c));
        ++at;
    }
    return out;
}

// ---------------------------------------------------------------------------
// shared episode plumbing

struct PreparedEpisode {
    std::vector<ResizedCloud> support;  // way-major
    std::vector<ResizedCloud> queries;
    std::vector<MatX> support_raw;      // encoder features
    std::vector<MatX> query_raw;
};

PreparedEpisode prepare_episode(const Episode& episode, const SegpnOptions& opts,
                                const FeatureProvider& encode, bool require_query_labels) {
    if (episode.n_ways < 1 || episode.k_shots < 1)
        throw ArgumentError("segpn: empty episode");
    if (static_cast<int>(episode.support.size()) != episode.n_ways * episode.k_shots)
        throw ArgumentError("segpn: support arity mismatch");
    if (episode.queries.empty()) throw ArgumentError("segpn: episode has no query clouds");

    PreparedEpisode out;
    for (const LabeledCloud& cloud : episode.support) {
        if (!cloud.labels)
            throw ArgumentError("segpn: support cloud '" + cloud.id + "' unlabeled");
        ResizedCloud r = resize_for_eval(cloud, opts.points_per_cloud, opts.encoder.seed);
        out.support_raw.push_back(encode(r.cloud));
        out.support.push_back(std::move(r));
    }
    for (const LabeledCloud& cloud : episode.queries) {
        if (require_query_labels && !cloud.labels)
            throw ArgumentError("segpn: query cloud '" + cloud.id +
                                "' must be labeled for training");
        ResizedCloud r = resize_for_eval(cloud, opts.points_per_cloud, opts.encoder.seed);
        out.query_raw.push_back(encode(r.cloud));
        out.queries.push_back(std::move(r));
    }
    return out;
}

MatX default_encode(const LabeledCloud& cloud, const EncoderConfig& cfg) {
    return encode_scene(normalize_cloud(cloud), cfg).data;
}

}  // namespace

// ---------------------------------------------------------------------------
// public surface

QuestParams init_params(int feature_dim, int hidden, std::uint64_t seed) {
    if (feature_dim < 1 || hidden < 1)
        throw ArgumentError("init_params: dimensions must be >= 1");
    QuestParams p;
    p.feature_dim = feature_dim;
    p.hidden = hidden;
    p.theta = VecX::Zero(p.param_count());
    p.bn0_mean = VecX::Zero(feature_dim);
    p.bn0_var = VecX::Ones(feature_dim);
    p.bn1_mean = VecX::Zero(hidden);
    p.bn1_var = VecX::Ones(hidden);
    p.bn2_mean = VecX::Zero(hidden);
    p.bn2_var = VecX::Ones(hidden);

    p.bn0_scale().setOnes();
    p.bn1_scale().setOnes();
    p.bn2_scale().setOnes();

    const auto fill_uniform = [](Eigen::Map<MatX> w, double fan_in, Rng& rng) {
        const double bound = 1.0 / std::sqrt(fan_in);
        for (long i = 0; i < w.rows(); ++i)
            for (long j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
    };
    Rng rng1(mix_seed(seed, 1));
    fill_uniform(p.lin1_w(), feature_dim, rng1);
    Rng rng2(mix_seed(seed, 2));
    fill_uniform(p.lin2_w(), hidden, rng2);
    Rng rng3(mix_seed(seed, 3));
    fill_uniform(p.w_shared(), hidden, rng3);
    Rng rng4(mix_seed(seed, 4));
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    auto wg = p.w_gap();
    for (long i = 0; i < wg.size(); ++i) wg(i) = rng4.uniform(-bound, bound);
    return p;
}

OptimizerState init_optimizer(const QuestParams& params, double lr, double weight_decay) {
    OptimizerState opt;
    opt.m = VecX::Zero(params.theta.size());
    opt.v = VecX::Zero(params.theta.size());
    opt.lr = lr;
    opt.weight_decay = weight_decay;
    return opt;
}

double scheduled_lr(const OptimizerState& opt, std::int64_t step) {
    const std::int64_t halvings = (step - 1) / opt.halve_every;
    return opt.lr * std::pow(0.5, static_cast<double>(halvings));
}

void adamw_step(QuestParams& params, const VecX& grads, OptimizerState& opt) {
    if (grads.size() != params.theta.size())
        throw ArgumentError("adamw_step: gradient size mismatch");
    if (opt.m.size() != params.theta.size())
        throw ArgumentError("adamw_step: optimizer state size mismatch");
    ++opt.step;
    const double lr_t = scheduled_lr(opt, opt.step);
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grads;
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grads.array().square().matrix();
    const VecX m_hat = opt.m / bc1;
    const VecX v_hat = opt.v / bc2;
    params.theta -=
        lr_t * (m_hat.array() / (v_hat.array().sqrt() + opt.eps) +
                opt.weight_decay * params.theta.array())
                   .matrix();
}

MatX refine_features(const MatX& feats, QuestParams& params, BnMode mode,
                     const QuestConfig& cfg) {
    BnBatchStats stats;
    MatX out = refine_forward(feats, params, mode, cfg, nullptr,
                              mode == BnMode::kTrain ? &stats : nullptr);
    if (mode == BnMode::kTrain) {
        const double mom = cfg.bn_momentum;
        params.bn0_mean = mom * params.bn0_mean + (1.0 - mom) * stats.bn0_mean;
        params.bn0_var = mom * params.bn0_var + (1.0 - mom) * stats.bn0_var;
        params.bn1_mean = mom * params.bn1_mean + (1.0 - mom) * stats.bn1_mean;
        params.bn1_var = mom * params.bn1_var + (1.0 - mom) * stats.bn1_var;
        params.bn2_mean = mom * params.bn2_mean + (1.0 - mom) * stats.bn2_mean;
        params.bn2_var = mom * params.bn2_var + (1.0 - mom) * stats.bn2_var;
    }
    return out;
}

MatX pooled_statistics(const MatX& feats, int kernel) {
    return pool_set({&feats}, kernel).pooled;
}

MatX cross_correlation_adjust(const MatX& fq, const MatX& fs, const MatX& fp) {
    if (fq.cols() != fs.cols() || fp.cols() != fs.cols())
        throw ArgumentError("cross_correlation_adjust: channel mismatch");
    const MatX attn = softmax_rows(fq.transpose() * fs);
    return fp * attn.transpose();
}

MatX self_correlation_adjust(const MatX& fq, const MatX& fs, const MatX& fp, const VecX& w_gap) {
    if (fq.cols() != fs.cols() || fp.cols() != fs.cols() || w_gap.size() != fs.cols())
        throw ArgumentError("self_correlation_adjust: channel mismatch");
    const MatX gram_gap = fq.transpose() * fq - fs.transpose() * fs;
    const VecX gap = gram_gap * w_gap;
    return fp.array().rowwise() * gap.transpose().array();
}

QuestPrototypes quest_forward(const std::vector<MatX>& support_refined,
                              const std::vector<VecXi>& support_labels, int n_ways, int k_shots,
                              const std::vector<MatX>& query_refined, const QuestParams& params,
                              const QuestConfig& cfg) {
    if (support_refined.size() != static_cast<std::size_t>(n_ways * k_shots) ||
        support_labels.size() != support_refined.size())
        throw ArgumentError("quest_forward: support arity mismatch");
    if (query_refined.empty()) throw ArgumentError("quest_forward: no query features");
    const int n_classes = n_ways + 1;
    const int hidden = params.hidden;

    std::vector<const MatX*> query_ptrs;
    for (const MatX& f : query_refined) query_ptrs.push_back(&f);
    const MatX fq = pool_set(query_ptrs, cfg.kernel).pooled * params.w_shared();

    MatX sums = MatX::Zero(n_classes, hidden);
    VecX shot_counts = VecX::Zero(n_classes);
    for (int shot = 0; shot < k_shots; ++shot) {
        std::vector<const MatX*> feats;
        std::vector<const VecXi*> labels;
        for (int way = 0; way < n_ways; ++way) {
            const std::size_t idx = static_cast<std::size_t>(way * k_shots + shot);
            feats.push_back(&support_refined[idx]);
            labels.push_back(&support_labels[idx]);
        }
        const MatX fs = pool_set(feats, cfg.kernel).pooled * params.w_shared();
        const ShotPrototypes protos = shot_prototypes(feats, labels, n_classes);
        const MatX adjusted = protos.fp + self_correlation_adjust(fq, fs, protos.fp, params.w_gap()) +
                              cross_correlation_adjust(fq, fs, protos.fp);
        for (std::size_t r = 0; r < protos.row_class.size(); ++r) {
            sums.row(protos.row_class[r]) += adjusted.row(static_cast<long>(r));
            shot_counts(protos.row_class[r]) += 1.0;
        }
    }

    QuestPrototypes out;
    out.vectors = MatX::Zero(n_classes, hidden);
    out.present.assign(static_cast<std::size_t>(n_classes), false);
    for (int c = 0; c < n_classes; ++c)
        if (shot_counts(c) > 0.0) {
            out.vectors.row(c) = sums.row(c) / shot_counts(c);
            out.present[static_cast<std::size_t>(c)] = true;
        }
    return out;
}

EpisodePrediction segpn_predict(const Episode& episode, const QuestParams& params,
                                const SegpnOptions& opts) {
    const EncoderConfig cfg = opts.encoder;
    return segpn_predict_with(episode, params, opts,
                              [&cfg](const LabeledCloud& c) { return default_encode(c, cfg); });
}

EpisodePrediction segpn_predict_with(const Episode& episode, const QuestParams& params,
                                     const SegpnOptions& opts, const FeatureProvider& encode) {
    PreparedEpisode prep = prepare_episode(episode, opts, encode, false);
    QuestParams frozen = params;  // eval mode leaves running stats untouched

    std::vector<MatX> support_refined;
    std::vector<VecXi> support_labels;
    for (std::size_t s = 0; s < prep.support.size(); ++s) {
        support_refined.push_back(
            refine_features(prep.support_raw[s], frozen, BnMode::kEval, opts.quest));
        support_labels.push_back(*prep.support[s].cloud.labels);
    }
    std::vector<MatX> query_refined;
    for (const MatX& raw : prep.query_raw)
        query_refined.push_back(refine_features(raw, frozen, BnMode::kEval, opts.quest));

    const QuestPrototypes protos =
        quest_forward(support_refined, support_labels, episode.n_ways, episode.k_shots,
                      query_refined, frozen, opts.quest);

    MatX proto_normed = protos.vectors;
    for (long c = 0; c < proto_normed.rows(); ++c) {
        const double norm = proto_normed.row(c).norm();
        if (norm > 0.0) proto_normed.row(c) /= norm;
    }

    EpisodePrediction out;
    for (std::size_t q = 0; q < prep.queries.size(); ++q) {
        MatX feats = query_refined[q];
        for (long i = 0; i < feats.rows(); ++i) {
            const double norm = feats.row(i).norm();
            if (norm > 0.0) feats.row(i) /= norm;
        }
        const MatX sims = feats * proto_normed.transpose();
        VecXi labels(sims.rows());
        VecX logits(sims.rows());
        for (long i = 0; i < sims.rows(); ++i) {
            int best = -1;
            for (int c = 0; c < sims.cols(); ++c) {
                if (!protos.present[static_cast<std::size_t>(c)]) continue;
                if (best == -1 || sims(i, c) > sims(i, best)) best = c;
            }
            labels(i) = best;
            logits(i) = std::exp(-opts.gamma * (1.0 - sims(i, best)));
        }
        out.queries.push_back(
            detail::map_back(episode.queries[q], prep.queries[q], labels, logits));
    }
    return out;
}

LossResult episode_loss(const Episode& episode, const QuestParams& params,
                        const SegpnOptions& opts) {
    const EncoderConfig cfg = opts.encoder;
    return episode_loss_with(episode, params, opts,
                             [&cfg](const LabeledCloud& c) { return default_encode(c, cfg); });
}

LossResult episode_loss_with(const Episode& episode, const QuestParams& params,
                             const SegpnOptions& opts, const FeatureProvider& encode) {
    PreparedEpisode prep = prepare_episode(episode, opts, encode, true);
    const int n_ways = episode.n_ways;
    const int k_shots = episode.k_shots;
    const int n_classes = n_ways + 1;
    const int hidden = params.hidden;
    const int m = opts.points_per_cloud;
    const std::size_t n_support = prep.support.size();
    const std::size_t n_queries = prep.queries.size();
    const std::size_t n_clouds = n_support + n_queries;

    // ---- forward: refine the episode batch (support then queries)
    MatX batch(static_cast<long>(n_clouds) * m, params.feature_dim);
    for (std::size_t s = 0; s < n_support; ++s)
        batch.middleRows(static_cast<long>(s) * m, m) = prep.support_raw[s];
    for (std::size_t q = 0; q < n_queries; ++q)
        batch.middleRows(static_cast<long>(n_support + q) * m, m) = prep.query_raw[q];

    LossResult result;
    RefineCache cache;
    const MatX refined =
        refine_forward(batch, params, BnMode::kTrain, opts.quest, &cache, &result.batch_stats);

    // per-cloud refined feature blocks
    std::vector<MatX> refined_clouds(n_clouds);
    for (std::size_t c = 0; c < n_clouds; ++c)
        refined_clouds[c] = refined.middleRows(static_cast<long>(c) * m, m);

    // ---- query-set statistics (pooled over the concatenated point dim)
    std::vector<const MatX*> query_ptrs;
    for (std::size_t q = 0; q < n_queries; ++q) query_ptrs.push_back(&refined_clouds[n_support + q]);
    const SetStats qpool = pool_set(query_ptrs, opts.quest.kernel);
    const MatX fq = qpool.pooled * params.w_shared();
    const MatX gram_q = fq.transpose() * fq;

    // ---- per-shot prototypes and QUEST rectification
    struct ShotForward {
        ShotPrototypes protos;
        SetStats spool;
        MatX fs;        // projected statistics of the shot's way clouds
        MatX attn;      // softmax rows of fq^T fs
        VecX gap;       // (G_Q - G_S) w_gap
        MatX adjusted;  // fp + fp diag(gap) + fp attn^T
    };
    std::vector<ShotForward> shots(static_cast<std::size_t>(k_shots));
    MatX proto_sum = MatX::Zero(n_classes, hidden);
    VecX shot_counts = VecX::Zero(n_classes);
    for (int shot = 0; shot < k_shots; ++shot) {
        ShotForward& sf = shots[static_cast<std::size_t>(shot)];
        std::vector<const MatX*> feats;
        std::vector<const VecXi*> labels;
        for (int way = 0; way < n_ways; ++way) {
            const std::size_t idx = static_cast<std::size_t>(way * k_shots + shot);
            feats.push_back(&refined_clouds[idx]);
            labels.push_back(prep.support[idx].cloud.labels ? &*prep.support[idx].cloud.labels
                                                            : nullptr);
        }
        sf.spool = pool_set(feats, opts.quest.kernel);
        sf.fs = sf.spool.pooled * params.w_shared();
        sf.protos = shot_prototypes(feats, labels, n_classes);

        sf.attn = softmax_rows(fq.transpose() * sf.fs);
        const MatX gram_s = sf.fs.transpose() * sf.fs;
        sf.gap = (gram_q - gram_s) * params.w_gap();
        sf.adjusted = sf.protos.fp +
                      (sf.protos.fp.array().rowwise() * sf.gap.transpose().array()).matrix() +
                      sf.protos.fp * sf.attn.transpose();
        for (std::size_t r = 0; r < sf.protos.row_class.size(); ++r) {
            proto_sum.row(sf.protos.row_class[r]) += sf.adjusted.row(static_cast<long>(r));
            shot_counts(sf.protos.row_class[r]) += 1.0;
        }
    }

    MatX protos = MatX::Zero(n_classes, hidden);
    std::vector<bool> present(static_cast<std::size_t>(n_classes), false);
    for (int c = 0; c < n_classes; ++c)
        if (shot_counts(c) > 0.0) {
            protos.row(c) = proto_sum.row(c) / shot_counts(c);
            present[static_cast<std::size_t>(c)] = true;
        }

    // ---- cosine scores of all query points
    const long q_points = static_cast<long>(n_queries) * m;
    MatX query_feats(q_points, hidden);
    VecXi query_labels(q_points);
    for (std::size_t q = 0; q < n_queries; ++q) {
        query_feats.middleRows(static_cast<long>(q) * m, m) = refined_clouds[n_support + q];
        query_labels.segment(static_cast<long>(q) * m, m) = *prep.queries[q].cloud.labels;
    }

    VecX q_norms(q_points);
    MatX q_normed = query_feats;
    for (long i = 0; i < q_points; ++i) {
        q_norms(i) = query_feats.row(i).norm();
        if (q_norms(i) > 0.0) q_normed.row(i) /= q_norms(i);
    }
    VecX p_norms(n_classes);
    MatX p_normed = protos;
    for (int c = 0; c < n_classes; ++c) {
        p_norms(c) = protos.row(c).norm();
        if (p_norms(c) > 0.0) p_normed.row(c) /= p_norms(c);
    }

    const MatX sims = q_normed * p_normed.transpose();
    const double temp = opts.quest.temperature;

    // ---- cross-entropy over labeled query points whose class has a prototype
    MatX d_scores = MatX::Zero(q_points, n_classes);
    double loss_sum = 0.0;
    long counted = 0;
    for (long i = 0; i < q_points; ++i) {
        const int truth = query_labels(i);
        if (truth < 0 || truth >= n_classes || !present[static_cast<std::size_t>(truth)])
            continue;
        double peak = -1e300;
        for (int c = 0; c < n_classes; ++c)
            if (present[static_cast<std::size_t>(c)]) peak = std::max(peak, temp * sims(i, c));
        double z = 0.0;
        for (int c = 0; c < n_classes; ++c)
            if (present[static_cast<std::size_t>(c)]) z += std::exp(temp * sims(i, c) - peak);
        loss_sum += -(temp * sims(i, truth) - peak) + std::log(z);
        for (int c = 0; c < n_classes; ++c)
            if (present[static_cast<std::size_t>(c)])
                d_scores(i, c) = std::exp(temp * sims(i, c) - peak) / z;
        d_scores(i, truth) -= 1.0;
        ++counted;
    }
    if (counted == 0)
        throw ArgumentError("episode_loss: no query point has a class with a prototype");
    result.loss = loss_sum / static_cast<double>(counted);
    d_scores *= 1.0 / static_cast<double>(counted);

    // ======================= backward =======================
    result.grads = VecX::Zero(params.theta.size());
    QuestGradsView grads{&result.grads, &params};

    // scores -> cosine inputs
    const MatX d_sims = temp * d_scores;
    MatX d_refined = MatX::Zero(refined.rows(), refined.cols());

    // query side: d q_normed = d_sims * p_normed
    {
        const MatX d_qn = d_sims * p_normed;
        for (std::size_t q = 0; q < n_queries; ++q) {
            for (long r = 0; r < m; ++r) {
                const long i = static_cast<long>(q) * m + r;
                if (q_norms(i) <= 0.0) continue;
                const VecX dn = d_qn.row(i).transpose();
                const VecX un = q_normed.row(i).transpose();
                const VecX du = (dn - dn.dot(un) * un) / q_norms(i);
                d_refined.row(static_cast<long>(n_support + q) * m + r) += du.transpose();
            }
        }
    }

    // prototype side: d p_normed = d_sims^T * q_normed
    MatX d_protos = MatX::Zero(n_classes, hidden);
    {
        const MatX d_pn = d_sims.transpose() * q_normed;
        for (int c = 0; c < n_classes; ++c) {
            if (!present[static_cast<std::size_t>(c)] || p_norms(c) <= 0.0) continue;
            const VecX dn = d_pn.row(c).transpose();
            const VecX pn = p_normed.row(c).transpose();
            d_protos.row(c) = ((dn - dn.dot(pn) * pn) / p_norms(c)).transpose();
        }
    }

    // shot averaging, QUEST, statistics
    MatX d_fq = MatX::Zero(fq.rows(), hidden);
    MatX d_gram_q = MatX::Zero(hidden, hidden);

    // scatters a statistics gradient through the projection, the pooled
    // argmax routing, and back onto the refined rows of the owning clouds
    const auto scatter_stat_grad = [&](const MatX& d_stat, const SetStats& pool,
                                       const std::vector<std::size_t>& cloud_ids,
                                       QuestGradsView& sink, MatX& d_ref) {
        sink.w_shared() += pool.pooled.transpose() * d_stat;
        const MatX d_pooled = d_stat * params.w_shared().transpose();
        for (long w = 0; w < d_pooled.rows(); ++w)
            for (int h = 0; h < hidden; ++h) {
                const std::size_t cloud = cloud_ids[static_cast<std::size_t>(pool.argmax_cloud(w, h))];
                d_ref(static_cast<long>(cloud) * m + pool.argmax_row(w, h), h) +=
                    d_pooled(w, h);
            }
    };

    for (int shot = 0; shot < k_shots; ++shot) {
        ShotForward& sf = shots[static_cast<std::size_t>(shot)];
        const long rows = sf.protos.fp.rows();
        MatX d_adjusted(rows, hidden);
        for (long r = 0; r < rows; ++r) {
            const int cls = sf.protos.row_class[static_cast<std::size_t>(r)];
            d_adjusted.row(r) = d_protos.row(cls) / shot_counts(cls);
        }

        // adjusted = fp (I + diag(gap) + attn^T)
        MatX d_fp = d_adjusted +
                    (d_adjusted.array().rowwise() * sf.gap.transpose().array()).matrix() +
                    d_adjusted * sf.attn;
        const VecX d_gap =
            (sf.protos.fp.array() * d_adjusted.array()).colwise().sum().transpose().matrix();
        const MatX d_attn = d_adjusted.transpose() * sf.protos.fp;

        // softmax rows
        MatX d_corr(hidden, hidden);
        for (int h = 0; h < hidden; ++h) {
            const double inner = d_attn.row(h).dot(sf.attn.row(h));
            d_corr.row(h) =
                (sf.attn.row(h).array() * (d_attn.row(h).array() - inner)).matrix();
        }

        // corr = fq^T fs
        d_fq += sf.fs * d_corr.transpose();
        MatX d_fs = fq * d_corr;

        // gap = (gram_q - gram_s) w_gap
        grads.w_gap() += (gram_q - sf.fs.transpose() * sf.fs).transpose() * d_gap;
        const MatX outer = d_gap * params.w_gap().transpose();
        d_gram_q += outer;
        d_fs -= sf.fs * (outer + outer.transpose());  // d gram_s = -outer

        std::vector<std::size_t> shot_clouds;
        for (int way = 0; way < n_ways; ++way)
            shot_clouds.push_back(static_cast<std::size_t>(way * k_shots + shot));
        scatter_stat_grad(d_fs, sf.spool, shot_clouds, grads, d_refined);

        // prototype rows -> refined support rows (masked mean backward)
        for (int way = 0; way < n_ways; ++way) {
            const std::size_t idx = static_cast<std::size_t>(way * k_shots + shot);
            const VecXi& y = *prep.support[idx].cloud.labels;
            for (long r = 0; r < m; ++r) {
                const int label = y(r);
                if (label < 0) continue;
                long proto_row = -1;
                for (std::size_t pr = 0; pr < sf.protos.row_class.size(); ++pr)
                    if (sf.protos.row_class[pr] == label) {
                        proto_row = static_cast<long>(pr);
                        break;
                    }
                if (proto_row < 0) continue;
                d_refined.row(static_cast<long>(idx) * m + r) +=
                    d_fp.row(proto_row) /
                    sf.protos.row_count[static_cast<std::size_t>(proto_row)];
            }
        }
    }

    d_fq += fq * (d_gram_q + d_gram_q.transpose());
    std::vector<std::size_t> query_cloud_ids;
    for (std::size_t q = 0; q < n_queries; ++q) query_cloud_ids.push_back(n_support + q);
    scatter_stat_grad(d_fq, qpool, query_cloud_ids, grads, d_refined);

    refine_backward(d_refined, cache, params, BnMode::kTrain, grads);
    return result;
}

std::vector<TraceRow> train(const EpisodeSource& source, std::int64_t episodes,
                            QuestParams& params, OptimizerState& opt, const SegpnOptions& opts,
                            const FeatureProvider& encode, std::int64_t checkpoint_every,
                            const CheckpointHook& on_checkpoint) {
    std::vector<TraceRow> trace;
    trace.reserve(static_cast<std::size_t>(episodes));
    const EncoderConfig cfg = opts.encoder;
    const FeatureProvider enc =
        encode ? encode : [&cfg](const LabeledCloud& c) { return default_encode(c, cfg); };
    for (std::int64_t step = 0; step < episodes; ++step) {
        const Episode episode = source(step);
        const LossResult res = episode_loss_with(episode, params, opts, enc);
        if (!std::isfinite(res.loss))
            throw NumericalError("train: non-finite loss at episode " + std::to_string(step) +
                                 " (lr=" + std::to_string(scheduled_lr(opt, opt.step + 1)) + ")");
        const double mom = opts.quest.bn_momentum;
        params.bn0_mean = mom * params.bn0_mean + (1.0 - mom) * res.batch_stats.bn0_mean;
        params.bn0_var = mom * params.bn0_var + (1.0 - mom) * res.batch_stats.bn0_var;
        params.bn1_mean = mom * params.bn1_mean + (1.0 - mom) * res.batch_stats.bn1_mean;
        params.bn1_var = mom * params.bn1_var + (1.0 - mom) * res.batch_stats.bn1_var;
        params.bn2_mean = mom * params.bn2_mean + (1.0 - mom) * res.batch_stats.bn2_mean;
        params.bn2_var = mom * params.bn2_var + (1.0 - mom) * res.batch_stats.bn2_var;
        adamw_step(params, res.grads, opt);
        trace.push_back({opt.step, res.loss, scheduled_lr(opt, opt.step)});
        if (checkpoint_every > 0 && on_checkpoint && (step + 1) % checkpoint_every == 0)
            on_checkpoint(step + 1, params, opt);
    }
    return trace;
}

double gradient_check(const Episode& episode, const QuestParams& params, const SegpnOptions& opts,
                      double fd_step) {
    // encoder features are constant in theta; memoize them across probes
    auto memo = std::make_shared<std::unordered_map<std::string, MatX>>();
    const EncoderConfig cfg = opts.encoder;
    const FeatureProvider encode = [memo, cfg](const LabeledCloud& cloud) -> MatX {
        const std::string key = cloud.id + "#" + std::to_string(cloud.size());
        const auto it = memo->find(key);
        if (it != memo->end()) return it->second;
        return memo->emplace(key, default_encode(cloud, cfg)).first->second;
    };

    const LossResult analytic = episode_loss_with(episode, params, opts, encode);
    QuestParams probe = params;
    const auto central = [&](long i, double h) {
        const double saved = probe.theta(i);
        probe.theta(i) = saved + h;
        const double up = episode_loss_with(episode, probe, opts, encode).loss;
        probe.theta(i) = saved - h;
        const double down = episode_loss_with(episode, probe, opts, encode).loss;
        probe.theta(i) = saved;
        return (up - down) / (2.0 * h);
    };
    const auto rel_err = [&](long i, double fd) {
        // the floor treats sub-1e-5 gradients as zero-scale, comparing them
        // absolutely at 1e-9 resolution (well above central-difference noise)
        const double denom = std::max({std::abs(fd), std::abs(analytic.grads(i)), 1e-5});
        return std::abs(fd - analytic.grads(i)) / denom;
    };

    double max_rel = 0.0;
    for (long i = 0; i < probe.theta.size(); ++i) {
        double rel = rel_err(i, central(i, fd_step));
        // A mismatch can be an artifact of the step straddling a max-pool or
        // ReLU kink rather than a wrong gradient. The discriminator: with a
        // correct gradient the central difference converges to it as the
        // step shrinks past the kink; a wrong gradient never converges.
        if (rel > 1e-4) {
            for (const double shrink : {0.1, 0.01}) {
                rel = std::min(rel, rel_err(i, central(i, fd_step * shrink)));
                if (rel <= 1e-4) break;
            }
        }
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

namespace {

void write_tensor_f32(std::ostream& out, const double* data, long count) {
    for (long i = 0; i < count; ++i) wire::write_f32_le(out, static_cast<float>(data[i]));
}

void read_tensor_f32(std::istream& in, double* data, long count) {
    for (long i = 0; i < count; ++i) data[i] = static_cast<double>(wire::read_f32_le(in));
}

}  // namespace

void save_checkpoint(const QuestParams& params, const OptimizerState& opt,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write("SNQP", 4);
    wire::write_u32_le(out, 1);
    wire::write_u32_le(out, static_cast<std::uint32_t>(params.feature_dim));
    wire::write_u32_le(out, static_cast<std::uint32_t>(params.hidden));

    const long d = params.feature_dim;
    const long h = params.hidden;
    write_tensor_f32(out, params.theta.data() + params.off_bn0_scale(), d);
    write_tensor_f32(out, params.theta.data() + params.off_bn0_shift(), d);
    write_tensor_f32(out, params.bn0_mean.data(), d);
    write_tensor_f32(out, params.bn0_var.data(), d);
    write_tensor_f32(out, params.theta.data() + params.off_lin1_w(), d * h);
    write_tensor_f32(out, params.theta.data() + params.off_lin1_b(), h);
    write_tensor_f32(out, params.theta.data() + params.off_bn1_scale(), h);
    write_tensor_f32(out, params.theta.data() + params.off_bn1_shift(), h);
    write_tensor_f32(out, params.bn1_mean.data(), h);
    write_tensor_f32(out, params.bn1_var.data(), h);
    write_tensor_f32(out, params.theta.data() + params.off_lin2_w(), h * h);
    write_tensor_f32(out, params.theta.data() + params.off_lin2_b(), h);
    write_tensor_f32(out, params.theta.data() + params.off_bn2_scale(), h);
    write_tensor_f32(out, params.theta.data() + params.off_bn2_shift(), h);
    write_tensor_f32(out, params.bn2_mean.data(), h);
    write_tensor_f32(out, params.bn2_var.data(), h);
    write_tensor_f32(out, params.theta.data() + params.off_w_shared(), h * h);
    write_tensor_f32(out, params.theta.data() + params.off_w_gap(), h);

    write_tensor_f32(out, opt.m.data(), opt.m.size());
    write_tensor_f32(out, opt.v.data(), opt.v.size());
    wire::write_u64_le(out, static_cast<std::uint64_t>(opt.step));
    wire::write_f32_le(out, static_cast<float>(opt.lr));
    if (!out) throw IoError("write failure on '" + path + "'");
}

void load_checkpoint(const std::string& path, QuestParams& params, OptimizerState& opt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SNQP", 4) != 0)
        throw ParseError("bad magic, expected SNQP", path, 0);
    const std::uint32_t version = wire::read_u32_le(in);
    if (version != 1)
        throw ParseError("unsupported checkpoint version " + std::to_string(version), path, 4);
    const int d = static_cast<int>(wire::read_u32_le(in));
    const int h = static_cast<int>(wire::read_u32_le(in));
    if (d < 1 || h < 1) throw ParseError("invalid dimensions", path, 8);

    params = init_params(d, h, 0);
    read_tensor_f32(in, params.theta.data() + params.off_bn0_scale(), d);
    read_tensor_f32(in, params.theta.data() + params.off_bn0_shift(), d);
    read_tensor_f32(in, params.bn0_mean.data(), d);
    read_tensor_f32(in, params.bn0_var.data(), d);
    read_tensor_f32(in, params.theta.data() + params.off_lin1_w(), static_cast<long>(d) * h);
    read_tensor_f32(in, params.theta.data() + params.off_lin1_b(), h);
    read_tensor_f32(in, params.theta.data() + params.off_bn1_scale(), h);
    read_tensor_f32(in, params.theta.data() + params.off_bn1_shift(), h);
    read_tensor_f32(in, params.bn1_mean.data(), h);
    read_tensor_f32(in, params.bn1_var.data(), h);
    read_tensor_f32(in, params.theta.data() + params.off_lin2_w(), static_cast<long>(h) * h);
    read_tensor_f32(in, params.theta.data() + params.off_lin2_b(), h);
    read_tensor_f32(in, params.theta.data() + params.off_bn2_scale(), h);
    read_tensor_f32(in, params.theta.data() + params.off_bn2_shift(), h);
    read_tensor_f32(in, params.bn2_mean.data(), h);
    read_tensor_f32(in, params.bn2_var.data(), h);
    read_tensor_f32(in, params.theta.data() + params.off_w_shared(), static_cast<long>(h) * h);
    read_tensor_f32(in, params.theta.data() + params.off_w_gap(), h);

    opt = init_optimizer(params);
    read_tensor_f32(in, opt.m.data(), opt.m.size());
    read_tensor_f32(in, opt.v.data(), opt.v.size());
    opt.step = static_cast<std::int64_t>(wire::read_u64_le(in));
    opt.lr = static_cast<double>(wire::read_f32_le(in));
    if (!in) throw ParseError("truncated checkpoint", path, 12);
}

void save_loss_trace(const std::vector<TraceRow>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "step,loss,lr\n";
    char buf[96];
    for (const TraceRow& row : trace) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g\n", static_cast<long long>(row.step),
                      row.loss, row.lr);
        out << buf;
    }
    if (!out) throw IoError("write failure on '" + path + "'");
}

// temporary debug hook
namespace debug_hooks {
double refine_probe(const MatX& x, const QuestParams& params, const QuestConfig& cfg,
                    const MatX& cot, VecX& grads_out) {
    RefineCache cache;
    BnBatchStats stats;
    const MatX refined = refine_forward(x, params, BnMode::kTrain, cfg, &cache, &stats);
    const double loss = (refined.array() * cot.array()).sum();
    grads_out = VecX::Zero(params.theta.size());
    QuestGradsView g{&grads_out, &params};
    refine_backward(cot, cache, params, BnMode::kTrain, g);
    return loss;
}

double stats_probe(const MatX& x0, const MatX& x1, const QuestParams& params,
                   const QuestConfig& cfg, const MatX& cot, VecX& grads_out) {
    const long m = x0.rows();
    MatX batch(x0.rows() + x1.rows(), x0.cols());
    batch << x0, x1;
    RefineCache cache;
    BnBatchStats stats;
    const MatX refined = refine_forward(batch, params, BnMode::kTrain, cfg, &cache, &stats);
    MatX r0 = refined.topRows(m);
    MatX r1 = refined.bottomRows(m);
    const std::vector<const MatX*> clouds = {&r0, &r1};
    const SetStats pool = pool_set(clouds, cfg.kernel);
    const MatX stat = pool.pooled * params.w_shared();
    const double loss = (stat.array() * cot.array()).sum();

    grads_out = VecX::Zero(params.theta.size());
    QuestGradsView g{&grads_out, &params};
    g.w_shared() += pool.pooled.transpose() * cot;
    const MatX d_pooled = cot * params.w_shared().transpose();
    MatX d_refined = MatX::Zero(refined.rows(), refined.cols());
    for (long w = 0; w < d_pooled.rows(); ++w)
        for (long h = 0; h < d_pooled.cols(); ++h)
            d_refined(pool.argmax_cloud(w, h) * m + pool.argmax_row(w, h), h) +=
                d_pooled(w, h);
    refine_backward(d_refined, cache, params, BnMode::kTrain, g);
    return loss;
}
}  // namespace debug_hooks

}  // namespace segnn
