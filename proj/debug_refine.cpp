#include <cstdio>

#include "segnn/quest.hpp"
#include "segnn/rng.hpp"

namespace segnn::debug_hooks {
double refine_probe(const MatX& x, const QuestParams& params, const QuestConfig& cfg,
                    const MatX& cot, VecX& grads_out);
}

using namespace segnn;

int main() {
    const int d = 6, h = 4, rows = 48;
    QuestParams params = init_params(d, h, 3);
    QuestConfig cfg;
    cfg.hidden = h;

    Rng rng(9);
    MatX x(rows, d), cot(rows, h);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < d; ++j) x(i, j) = rng.uniform(-1.0, 1.0);
        for (int j = 0; j < h; ++j) cot(i, j) = rng.uniform(-1.0, 1.0);
    }

    VecX grads;
    debug_hooks::refine_probe(x, params, cfg, cot, grads);

    QuestParams probe = params;
    const double step = 1e-6;
    double worst = 0.0;
    long worst_i = -1;
    for (long i = 0; i < probe.theta.size(); ++i) {
        const double saved = probe.theta(i);
        VecX dummy;
        probe.theta(i) = saved + step;
        const double up = debug_hooks::refine_probe(x, probe, cfg, cot, dummy);
        probe.theta(i) = saved - step;
        const double dn = debug_hooks::refine_probe(x, probe, cfg, cot, dummy);
        probe.theta(i) = saved;
        const double fd = (up - dn) / (2 * step);
        const double rel = std::abs(fd - grads(i)) / std::max({std::abs(fd), std::abs(grads(i)), 1e-6});
        if (rel > worst) {
            worst = rel;
            worst_i = i;
        }
    }
    std::printf("refine-only worst rel err = %g at theta[%ld]\n", worst, worst_i);
    std::printf("offsets: bn0_s=%ld bn0_b=%ld l1w=%ld l1b=%ld bn1_s=%ld bn1_b=%ld l2w=%ld l2b=%ld bn2_s=%ld bn2_b=%ld W=%ld wg=%ld\n",
                params.off_bn0_scale(), params.off_bn0_shift(), params.off_lin1_w(),
                params.off_lin1_b(), params.off_bn1_scale(), params.off_bn1_shift(),
                params.off_lin2_w(), params.off_lin2_b(), params.off_bn2_scale(),
                params.off_bn2_shift(), params.off_w_shared(), params.off_w_gap());
    return 0;
}
