#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "segnn/fewshot.hpp"
#include "segnn/linalg.hpp"

namespace segnn {

/// Learnable state of the Seg-PN head. The trainable scalars live in one
/// flat vector (`theta`) addressed through Eigen maps, in declared order:
/// bn0 scale/shift, lin1 weight/bias, bn1 scale/shift, lin2 weight/bias,
/// bn2 scale/shift, shared projection W, gap projection W_g. BatchNorm
/// running statistics are carried separately (not trainable).
struct QuestParams {
    int feature_dim = 0;  // D
    int hidden = 0;       // H
    VecX theta;

    VecX bn0_mean, bn0_var;
    VecX bn1_mean, bn1_var;
    VecX bn2_mean, bn2_var;

    using MapVec = Eigen::Map<VecX>;
    using MapMat = Eigen::Map<MatX>;
    using CMapVec = Eigen::Map<const VecX>;
    using CMapMat = Eigen::Map<const MatX>;

    // layout offsets into theta
    long off_bn0_scale() const { return 0; }
    long off_bn0_shift() const { return feature_dim; }
    long off_lin1_w() const { return 2L * feature_dim; }
    long off_lin1_b() const { return off_lin1_w() + static_cast<long>(feature_dim) * hidden; }
    long off_bn1_scale() const { return off_lin1_b() + hidden; }
    long off_bn1_shift() const { return off_bn1_scale() + hidden; }
    long off_lin2_w() const { return off_bn1_shift() + hidden; }
    long off_lin2_b() const { return off_lin2_w() + static_cast<long>(hidden) * hidden; }
    long off_bn2_scale() const { return off_lin2_b() + hidden; }
    long off_bn2_shift() const { return off_bn2_scale() + hidden; }
    long off_w_shared() const { return off_bn2_shift() + hidden; }
    long off_w_gap() const { return off_w_shared() + static_cast<long>(hidden) * hidden; }
    long param_count() const { return off_w_gap() + hidden; }

    MapVec bn0_scale() { return {theta.data() + off_bn0_scale(), feature_dim}; }
    MapVec bn0_shift() { return {theta.data() + off_bn0_shift(), feature_dim}; }
    MapMat lin1_w() { return {theta.data() + off_lin1_w(), feature_dim, hidden}; }
    MapVec lin1_b() { return {theta.data() + off_lin1_b(), hidden}; }
    MapVec bn1_scale() { return {theta.data() + off_bn1_scale(), hidden}; }
    MapVec bn1_shift() { return {theta.data() + off_bn1_shift(), hidden}; }
    MapMat lin2_w() { return {theta.data() + off_lin2_w(), hidden, hidden}; }
    MapVec lin2_b() { return {theta.data() + off_lin2_b(), hidden}; }
    MapVec bn2_scale() { return {theta.data() + off_bn2_scale(), hidden}; }
    MapVec bn2_shift() { return {theta.data() + off_bn2_shift(), hidden}; }
    MapMat w_shared() { return {theta.data() + off_w_shared(), hidden, hidden}; }
    MapVec w_gap() { return {theta.data() + off_w_gap(), hidden}; }

    CMapVec bn0_scale() const { return {theta.data() + off_bn0_scale(), feature_dim}; }
    CMapVec bn0_shift() const { return {theta.data() + off_bn0_shift(), feature_dim}; }
    CMapMat lin1_w() const { return {theta.data() + off_lin1_w(), feature_dim, hidden}; }
    CMapVec lin1_b() const { return {theta.data() + off_lin1_b(), hidden}; }
    CMapVec bn1_scale() const { return {theta.data() + off_bn1_scale(), hidden}; }
    CMapVec bn1_shift() const { return {theta.data() + off_bn1_shift(), hidden}; }
    CMapMat lin2_w() const { return {theta.data() + off_lin2_w(), hidden, hidden}; }
    CMapVec lin2_b() const { return {theta.data() + off_lin2_b(), hidden}; }
    CMapVec bn2_scale() const { return {theta.data() + off_bn2_scale(), hidden}; }
    CMapVec bn2_shift() const { return {theta.data() + off_bn2_shift(), hidden}; }
    CMapMat w_shared() const { return {theta.data() + off_w_shared(), hidden, hidden}; }
    CMapVec w_gap() const { return {theta.data() + off_w_gap(), hidden}; }
};

struct QuestConfig {
    int hidden = 192;
    int kernel = 32;            // local max-pool kernel and stride
    double temperature = 10.0;  // training score scale
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;
};

enum class BnMode { kTrain, kEval };

/// AdamW state with the halving schedule.
struct OptimizerState {
    VecX m, v;
    std::int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    int halve_every = 7000;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight init, zero biases,
/// identity BatchNorm; deterministic by seed.
QuestParams init_params(int feature_dim, int hidden, std::uint64_t seed);

OptimizerState init_optimizer(const QuestParams& params, double lr = 1e-3,
                              double weight_decay = 1e-4);

/// Learning rate used for update number `step` (1-based): halved every
/// `halve_every` updates.
double scheduled_lr(const OptimizerState& opt, std::int64_t step);

/// One decoupled-weight-decay Adam update on params.theta.
void adamw_step(QuestParams& params, const VecX& grads, OptimizerState& opt);

/// (BN+ReLU) + (Linear+BN+ReLU) + (Linear+BN+ReLU). Train mode normalizes
/// with the batch statistics of `feats` and folds them into the running
/// stats; eval mode uses the stored running stats.
MatX refine_features(const MatX& feats, QuestParams& params, BnMode mode,
                     const QuestConfig& cfg);

/// Non-overlapping window max over the point dimension, stride = kernel,
/// ceil(M/kernel) output rows.
MatX pooled_statistics(const MatX& feats, int kernel);

/// Prototype shift from the query/support cross-correlation:
/// softmax_rows(FQ^T FS) applied to the prototype channels.
MatX cross_correlation_adjust(const MatX& fq, const MatX& fs, const MatX& fp);

/// Prototype rectification from the Gram-matrix gap:
/// FP * diag((G_Q - G_S) w_gap).
MatX self_correlation_adjust(const MatX& fq, const MatX& fs, const MatX& fp, const VecX& w_gap);

/// Final adjusted prototypes, one row per class, K-shot results averaged.
struct QuestPrototypes {
    MatX vectors;  // (N+1) x H
    std::vector<bool> present;
};

/// Runs the QUEST head on refined features: per-shot pooled statistics,
/// masked-average prototypes, self/cross rectification, K-shot averaging.
/// support_refined/support_labels are way-major like Episode::support.
QuestPrototypes quest_forward(const std::vector<MatX>& support_refined,
                              const std::vector<VecXi>& support_labels, int n_ways, int k_shots,
                              const std::vector<MatX>& query_refined, const QuestParams& params,
                              const QuestConfig& cfg);

struct SegpnOptions {
    EncoderConfig encoder;
    QuestConfig quest;
    double gamma = 1000.0;
    int points_per_cloud = 2048;

    SegpnOptions() { encoder.d = 10; }
};

/// Eval-mode Seg-PN prediction: encode, refine with running stats, QUEST,
/// cosine argmax against the adjusted prototypes.
EpisodePrediction segpn_predict(const Episode& episode, const QuestParams& params,
                                const SegpnOptions& opts);
EpisodePrediction segpn_predict_with(const Episode& episode, const QuestParams& params,
                                     const SegpnOptions& opts, const FeatureProvider& encode);

/// Batch statistics observed by one training forward; train() folds them
/// into the running stats after each step.
struct BnBatchStats {
    VecX bn0_mean, bn0_var;
    VecX bn1_mean, bn1_var;
    VecX bn2_mean, bn2_var;
};

struct LossResult {
    double loss = 0.0;
    VecX grads;  // aligned with QuestParams::theta
    BnBatchStats batch_stats;
};

/// Cross-entropy episode loss with hand-rolled reverse-mode gradients for
/// every trainable scalar. Pure: params are not mutated (running-stat
/// updates are returned in batch_stats). Throws ArgumentError when a query
/// cloud is unlabeled.
LossResult episode_loss(const Episode& episode, const QuestParams& params,
                        const SegpnOptions& opts);
LossResult episode_loss_with(const Episode& episode, const QuestParams& params,
                             const SegpnOptions& opts, const FeatureProvider& encode);

struct TraceRow {
    std::int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

using EpisodeSource = std::function<Episode(std::int64_t)>;
using CheckpointHook = std::function<void(std::int64_t, const QuestParams&, const OptimizerState&)>;

/// Episodic AdamW training: one episode per step. Aborts with
/// NumericalError on a non-finite loss. checkpoint_every <= 0 disables the
/// hook.
std::vector<TraceRow> train(const EpisodeSource& source, std::int64_t episodes,
                            QuestParams& params, OptimizerState& opt, const SegpnOptions& opts,
                            const FeatureProvider& encode, std::int64_t checkpoint_every = 0,
                            const CheckpointHook& on_checkpoint = nullptr);

/// Central finite-difference check of episode_loss gradients; returns the
/// max relative error over all trainable scalars.
double gradient_check(const Episode& episode, const QuestParams& params, const SegpnOptions& opts,
                      double fd_step = 1e-5);

/// Checkpoint: magic SNQP, u32 version, u32 D, u32 H, parameter tensors in
/// declared field order (running stats included) as f32 row-major, then the
/// optimizer moments, step count, and base learning rate.
void save_checkpoint(const QuestParams& params, const OptimizerState& opt,
                     const std::string& path);
void load_checkpoint(const std::string& path, QuestParams& params, OptimizerState& opt);

void save_loss_trace(const std::vector<TraceRow>& trace, const std::string& path);

}  // namespace segnn
