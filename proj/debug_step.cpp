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

    Episode episode;
    episode.n_ways = 2;
    episode.k_shots = 1;
    episode.support.push_back(test::random_cloud(64, 1, true, true, 3));
    episode.support.push_back(test::random_cloud(64, 2, true, true, 3));
    episode.queries.push_back(test::random_cloud(64, 3, true, true, 3));

    QuestParams params = init_params(opts.encoder.scene_dim(), opts.quest.hidden, 1);
    const LossResult a = episode_loss(episode, params, opts);

    const long idx[] = {93, 1745, 1815, 1887, 1903};
    for (const long i : idx) {
        std::printf("theta[%ld] analytic=%.8g\n", i, a.grads(i));
        for (const double h : {1e-4, 1e-5, 1e-6, 1e-7}) {
            QuestParams probe = params;
            probe.theta(i) += h;
            const double up = episode_loss(episode, probe, opts).loss;
            probe.theta(i) = params.theta(i) - h;
            const double dn = episode_loss(episode, probe, opts).loss;
            std::printf("  h=%g fd=%.8g\n", h, (up - dn) / (2 * h));
        }
    }
    return 0;
}
