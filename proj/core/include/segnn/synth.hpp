#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segnn/cloud.hpp"
#include "segnn/cloud_io.hpp"
#include "segnn/fewshot.hpp"

namespace segnn {

/// Global class ids of the synthetic corpus; 0 is the floor/background.
enum ObjectClass : int {
    kFloor = 0,
    kPlane = 1,
    kBox = 2,
    kSphere = 3,
    kCylinder = 4,
    kWedge = 5,
    kTorusPatch = 6,
    kStep = 7,
    kPole = 8,
};
constexpr int kObjectClassCount = 8;  // excluding floor

const std::string& object_class_name(int id);
int object_class_from_name(const std::string& name);

struct SceneSpec {
    std::vector<int> classes = {kPlane, kBox,   kSphere,     kCylinder,
                                kWedge, kTorusPatch, kStep, kPole};
    int min_objects = 1;
    int max_objects = 3;
    int points_per_object = 512;
    int floor_points = 1024;
    int min_total_points = 2048;
    double pos_jitter = 0.005;   // Gaussian sigma on coordinates
    double color_jitter = 0.05;  // Gaussian sigma on color channels
    bool color_shuffle = false;  // per-scene decorrelation of class colors
};

/// One scene: floor plane (class 0) plus sampled primitives, per-point
/// labels and colors, at least min_total_points points. Deterministic by
/// seed. Throws ArgumentError on an impossible spec.
LabeledCloud generate_scene(const SceneSpec& spec, std::uint64_t seed);

struct ClassSplit {
    std::vector<int> train;
    std::vector<int> test;
};

struct Corpus {
    std::vector<LabeledCloud> clouds;
    std::vector<int> train_classes;
    std::vector<int> test_classes;
    std::vector<std::vector<int>> inventory;  // sorted class ids per cloud

    std::vector<int> clouds_with_class(int cls) const;
};

/// n_scenes scenes, the first half drawn from the train classes only and
/// the rest from the test classes only (split by object class, not scene).
Corpus build_corpus(const SceneSpec& spec, int n_scenes, const ClassSplit& split,
                    std::uint64_t seed);

/// One episode over explicit target classes (way i, global class
/// way_classes[i], becomes label i+1; everything else becomes background).
/// Support shots contain their way's class; query clouds contain at least
/// one target class; support and query clouds are distinct. Throws
/// ArgumentError naming the starved class when infeasible.
Episode sample_episode(const Corpus& corpus, const std::vector<int>& way_classes, int k_shots,
                       int n_query, std::uint64_t seed);

/// Episode with n_ways classes drawn from the corpus train split.
Episode sample_training_episode(const Corpus& corpus, int n_ways, int k_shots, int n_query,
                                std::uint64_t seed);

struct EpisodeDescriptor {
    std::vector<int> way_classes;
    std::uint64_t seed = 0;
};

/// All C(|test classes|, n_ways) combinations in lexicographic order,
/// per_combo episodes each, with derived per-episode seeds.
std::vector<EpisodeDescriptor> enumerate_test_episodes(const Corpus& corpus, int n_ways,
                                                       int per_combo, std::uint64_t seed);

/// Corpus on disk: <dir>/corpus.txt manifest plus <dir>/clouds/* in the
/// chosen cloud format.
void save_corpus(const Corpus& corpus, const std::string& dir,
                 CloudFormat format = CloudFormat::kBinary);
Corpus load_corpus(const std::string& dir);

}  // namespace segnn
