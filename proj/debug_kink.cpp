#include <cstdio>
#include "segnn/quest.hpp"
#include "../tests/unit/test_util.hpp"
using namespace segnn;
int main() {
    SegpnOptions opts;
    opts.encoder.d = 2; opts.encoder.layers = 3; opts.encoder.k_neigh = 8; opts.encoder.seed = 5;
    opts.quest.hidden = 8; opts.quest.kernel = 32; opts.points_per_cloud = 64;
    const Episode episode = test::random_episode(2, 64, 400);
    QuestParams params = init_params(opts.encoder.scene_dim(), opts.quest.hidden, 1);
    const LossResult a = episode_loss(episode, params, opts);
    for (const long i : {1477L, 1821L}) {
        std::printf("theta[%ld] analytic=%.10g\n", i, a.grads(i));
        for (const double h : {1e-4, 1e-5, 1e-6, 1e-7, 1e-8}) {
            QuestParams p = params;
            p.theta(i) += h;
            const double up = episode_loss(episode, p, opts).loss;
            p.theta(i) = params.theta(i) - h;
            const double dn = episode_loss(episode, p, opts).loss;
            std::printf("  h=%g fd=%.10g\n", h, (up - dn) / (2 * h));
        }
    }
    return 0;
}
