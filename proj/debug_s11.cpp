#include <cstdio>
#include "segnn/quest.hpp"
#include "../tests/unit/test_util.hpp"
using namespace segnn;
int main() {
    SegpnOptions opts;
    opts.encoder.d = 2; opts.encoder.layers = 3; opts.encoder.k_neigh = 8; opts.encoder.seed = 5;
    opts.quest.hidden = 8; opts.quest.kernel = 32; opts.points_per_cloud = 64;
    const Episode episode = test::random_episode(2, 64, 11000);
    QuestParams params = init_params(opts.encoder.scene_dim(), opts.quest.hidden, 11);
    const LossResult a = episode_loss(episode, params, opts);
    double worst = 0; long wi = -1;
    QuestParams p = params;
    for (long i = 0; i < p.theta.size(); ++i) {
        const double s = p.theta(i);
        p.theta(i) = s + 1e-5; const double up = episode_loss(episode, p, opts).loss;
        p.theta(i) = s - 1e-5; const double dn = episode_loss(episode, p, opts).loss;
        p.theta(i) = s;
        const double fd = (up - dn) / 2e-5;
        const double rel = std::abs(fd - a.grads(i)) / std::max({std::abs(fd), std::abs(a.grads(i)), 1e-6});
        if (rel > worst) { worst = rel; wi = i; }
    }
    std::printf("worst=%g at %ld analytic=%.10g\n", worst, wi, a.grads(wi));
    for (const double h : {1e-5, 1e-6, 1e-7, 1e-8, 1e-9}) {
        const double s = p.theta(wi);
        p.theta(wi) = s + h; const double up = episode_loss(episode, p, opts).loss;
        p.theta(wi) = s - h; const double dn = episode_loss(episode, p, opts).loss;
        p.theta(wi) = s;
        std::printf("h=%g fd=%.10g\n", h, (up - dn) / (2 * h));
    }
    return 0;
}
