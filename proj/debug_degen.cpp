#include <cstdio>
#include "segnn/quest.hpp"
#include "../tests/unit/test_util.hpp"
using namespace segnn;
int main() {
    Episode episode = test::cluster_episode(1, 91, 24);
    episode.queries.clear();
    episode.queries.push_back(episode.support[0]);
    SegpnOptions opts;
    opts.encoder.d = 2; opts.encoder.layers = 3; opts.encoder.k_neigh = 8; opts.encoder.seed = 5;
    opts.quest.hidden = 32; opts.quest.kernel = 32;
    opts.points_per_cloud = episode.support[0].size();
    QuestParams params = init_params(opts.encoder.scene_dim(), opts.quest.hidden, 12);
    OptimizerState opt = init_optimizer(params, 0.0, 0.0);
    train([&](std::int64_t) { return episode; }, 10, params, opt, opts, nullptr);
    const EpisodePrediction pred = segpn_predict(episode, params, opts);
    const VecXi& truth = *episode.support[0].labels;
    int agree0 = 0, agree1 = 0, n0 = 0, n1 = 0;
    for (int i = 0; i < truth.size(); ++i) {
        if (truth(i) == 0) { ++n0; if (pred.queries[0].labels(i) == 0) ++agree0; }
        else { ++n1; if (pred.queries[0].labels(i) == 1) ++agree1; }
    }
    std::printf("class0: %d/%d  class1: %d/%d\n", agree0, n0, agree1, n1);
    std::printf("logit range: %g .. %g\n", pred.queries[0].max_logit.minCoeff(),
                pred.queries[0].max_logit.maxCoeff());
    return 0;
}
