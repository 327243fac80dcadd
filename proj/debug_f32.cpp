#include <cstdio>
#include "segnn/encoder.hpp"
#include "../tests/unit/test_util.hpp"
using namespace segnn;
int main() {
    EncoderConfig cfg; cfg.d = 5; cfg.layers = 3; cfg.seed = 77;
    const LabeledCloud cloud = normalize_cloud(test::random_cloud(64, 55));
    const PointFeatures ref = encode_scene(cloud, cfg);
    const PointFeaturesF fast = encode_scene_f32(cloud, cfg);
    for (std::size_t s = 0; s < ref.layer_slices.size(); ++s) {
        const auto [off, len] = ref.layer_slices[s];
        const MatX r = ref.data.middleCols(off, len);
        const MatX f = fast.data.middleCols(off, len).cast<double>();
        double worst_rel = 0, worst_abs = 0;
        for (long i = 0; i < r.rows(); ++i)
            for (long j = 0; j < r.cols(); ++j) {
                const double d = std::abs(r(i,j) - f(i,j));
                worst_abs = std::max(worst_abs, d);
                worst_rel = std::max(worst_rel, d / std::max(1.0, std::abs(r(i,j))));
            }
        std::printf("layer %zu: max|ref|=%10.4g worst_abs=%10.4g worst_rel(1-floor)=%10.4g scale_rel=%10.4g\n",
                    s, r.cwiseAbs().maxCoeff(), worst_abs, worst_rel,
                    worst_abs / r.cwiseAbs().maxCoeff());
    }
    return 0;
}
