#include <cstdio>
#include "segnn/quest.hpp"
#include "segnn/encoder.hpp"
#include "../tests/unit/test_util.hpp"
using namespace segnn;
int main() {
    // quest_forward frozen vector: toy refined features from seeded uniforms
    QuestConfig cfg;
    cfg.hidden = 6;
    cfg.kernel = 8;
    QuestParams params = init_params(12, 6, 41);
    Rng rng(77);
    const auto mat = [&](long r, long c) {
        MatX m(r, c);
        for (long i = 0; i < r; ++i)
            for (long j = 0; j < c; ++j) m(i, j) = rng.uniform(0.0, 1.0);
        return m;
    };
    std::vector<MatX> support = {mat(24, 6), mat(24, 6)};
    VecXi labels_a(24), labels_b(24);
    for (int i = 0; i < 24; ++i) {
        labels_a(i) = i < 12 ? 0 : 1;
        labels_b(i) = i < 12 ? 0 : 2;
    }
    std::vector<VecXi> labels = {labels_a, labels_b};
    std::vector<MatX> queries = {mat(24, 6)};
    const QuestPrototypes protos = quest_forward(support, labels, 2, 1, queries, params, cfg);
    for (int c = 0; c < 3; ++c) {
        std::printf("class %d present=%d:", c, (int)protos.present[c]);
        for (int h = 0; h < 6; ++h) std::printf(" %.15g,", protos.vectors(c, h));
        std::printf("\n");
    }
    return 0;
}
