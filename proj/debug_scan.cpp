#include <cstdio>
#include "segnn/quest.hpp"
#include "../tests/unit/test_util.hpp"
using namespace segnn;
int main() {
    SegpnOptions opts;
    opts.encoder.d = 2; opts.encoder.layers = 3; opts.encoder.k_neigh = 8; opts.encoder.seed = 5;
    opts.quest.hidden = 8; opts.quest.kernel = 32; opts.points_per_cloud = 64;
    int good = 0;
    for (std::uint64_t seed = 1; seed <= 40 && good < 25; ++seed) {
        const Episode episode = test::random_episode(2, 64, seed * 1000);
        const QuestParams params = init_params(opts.encoder.scene_dim(), opts.quest.hidden, seed);
        const double err = gradient_check(episode, params, opts, 1e-5);
        const bool pass = err <= 1e-4;
        if (pass) ++good;
        std::printf("seed=%llu err=%.3g %s\n", (unsigned long long)seed, err, pass ? "ok" : "KINK");
        std::fflush(stdout);
    }
    return 0;
}
