#include <cstdio>

#include "segnn/quest.hpp"
#include "segnn/rng.hpp"

namespace segnn::debug_hooks {
double stats_probe(const MatX& x0, const MatX& x1, const QuestParams& params,
                   const QuestConfig& cfg, const MatX& cot, VecX& grads_out);
}

using namespace segnn;

int main() {
    const int d = 6, h = 4, m = 64;
    QuestParams params = init_params(d, h, 3);
    QuestConfig cfg;
    cfg.hidden = h;
    cfg.kernel = 32;

    Rng rng(9);
    MatX x0(m, d), x1(m, d);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) {
            x0(i, j) = rng.uniform(-1.0, 1.0);
            x1(i, j) = rng.uniform(-1.0, 1.0);
        }
    MatX cot(1, h);  // M' = ceil(64/32)=2 rows per cloud? set: total=128, window=64 -> 2 rows
    cot.resize(2, h);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < h; ++j) cot(i, j) = rng.uniform(-1.0, 1.0);

    VecX grads;
    debug_hooks::stats_probe(x0, x1, params, cfg, cot, grads);

    QuestParams probe = params;
    const double step = 1e-6;
    double worst = 0.0;
    long worst_i = -1;
    double wa = 0, wf = 0;
    for (long i = 0; i < probe.theta.size(); ++i) {
        const double saved = probe.theta(i);
        VecX dummy;
        probe.theta(i) = saved + step;
        const double up = debug_hooks::stats_probe(x0, x1, probe, cfg, cot, dummy);
        probe.theta(i) = saved - step;
        const double dn = debug_hooks::stats_probe(x0, x1, probe, cfg, cot, dummy);
        probe.theta(i) = saved;
        const double fd = (up - dn) / (2 * step);
        const double rel = std::abs(fd - grads(i)) / std::max({std::abs(fd), std::abs(grads(i)), 1e-6});
        if (rel > worst) {
            worst = rel;
            worst_i = i;
            wa = grads(i);
            wf = fd;
        }
    }
    std::printf("stats-path worst rel err = %g at theta[%ld] (analytic=%g fd=%g)\n", worst,
                worst_i, wa, wf);
    return 0;
}
