// scratch probe for the quest determinism/gradient failures
#include <cstdio>
#include <cstdlib>

#include "segnn/quest.hpp"
#include "../tests/unit/test_util.hpp"

using namespace segnn;

int main() {
    SegpnOptions opts;
    opts.encoder.d = 2;
    opts.encoder.layers = 3;
    opts.encoder.k_neigh = 8;
    opts.encoder.seed = 5;
    opts.quest.hidden = 8;
    opts.quest.kernel = 32;
    opts.points_per_cloud = 64;

    const std::uint64_t ep_seed =
        std::getenv("EP_SEED") ? std::strtoull(std::getenv("EP_SEED"), nullptr, 10) : 201;
    Episode episode;
    if (std::getenv("RANDOM_EP")) {
        episode = test::random_episode(2, 64, ep_seed);
    } else {
        episode = test::cluster_episode(2, ep_seed, 22);
    }
    QuestParams params = init_params(opts.encoder.scene_dim(), opts.quest.hidden, 1);
    if (std::getenv("KILL_W")) params.w_shared().setZero();

    const LossResult a = episode_loss(episode, params, opts);
    const LossResult b = episode_loss(episode, params, opts);
    std::printf("loss a=%.17g b=%.17g diff=%g\n", a.loss, b.loss, a.loss - b.loss);
    std::printf("grad diff max=%g\n", (a.grads - b.grads).cwiseAbs().maxCoeff());

    // FD over every parameter; report per-tensor worst relative error
    QuestParams probe = params;
    const double h = 1e-5;
    const char* names[] = {"bn0_scale", "bn0_shift", "lin1_w", "lin1_b", "bn1_scale",
                           "bn1_shift", "lin2_w", "lin2_b", "bn2_scale", "bn2_shift",
                           "w_shared", "w_gap"};
    const long offsets[] = {params.off_bn0_scale(), params.off_bn0_shift(), params.off_lin1_w(),
                            params.off_lin1_b(),   params.off_bn1_scale(), params.off_bn1_shift(),
                            params.off_lin2_w(),   params.off_lin2_b(),    params.off_bn2_scale(),
                            params.off_bn2_shift(), params.off_w_shared(), params.off_w_gap()};
    const long ends[] = {params.off_bn0_shift(),  params.off_lin1_w(),   params.off_lin1_b(),
                         params.off_bn1_scale(),  params.off_bn1_shift(), params.off_lin2_w(),
                         params.off_lin2_b(),     params.off_bn2_scale(), params.off_bn2_shift(),
                         params.off_w_shared(),   params.off_w_gap(),     params.param_count()};
    for (int t = 0; t < 12; ++t) {
        double worst = 0.0;
        long worst_i = -1;
        double worst_fd = 0, worst_an = 0;
        for (long i = offsets[t]; i < ends[t]; ++i) {
            const double saved = probe.theta(i);
            probe.theta(i) = saved + h;
            const double up = episode_loss(episode, probe, opts).loss;
            probe.theta(i) = saved - h;
            const double dn = episode_loss(episode, probe, opts).loss;
            probe.theta(i) = saved;
            const double fd = (up - dn) / (2 * h);
            const double rel =
                std::abs(fd - a.grads(i)) / std::max({std::abs(fd), std::abs(a.grads(i)), 1e-6});
            if (rel > worst) {
                worst = rel;
                worst_i = i;
                worst_fd = fd;
                worst_an = a.grads(i);
            }
        }
        std::printf("%-10s worst_rel=%10.3g at %ld (analytic=%g fd=%g)\n", names[t], worst,
                    worst_i, worst_an, worst_fd);
    }
    return 0;
}
