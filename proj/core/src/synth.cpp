#include "segnn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "segnn/cloud_io.hpp"
#include "segnn/errors.hpp"
#include "segnn/rng.hpp"

namespace segnn {
namespace {

constexpr double kTwoPi = 2.0 * M_PI;

const std::array<std::string, 9> kClassNames = {
    "floor", "plane", "box", "sphere", "cylinder", "wedge", "torus_patch", "step", "pole"};

// one well-separated base color per class, floor gray
const std::array<std::array<float, 3>, 9> kPalette = {{
    {0.50f, 0.50f, 0.50f},  // floor
    {0.90f, 0.10f, 0.10f},  // plane
    {0.10f, 0.55f, 0.90f},  // box
    {0.10f, 0.80f, 0.20f},  // sphere
    {0.95f, 0.70f, 0.10f},  // cylinder
    {0.70f, 0.20f, 0.80f},  // wedge
    {0.10f, 0.85f, 0.80f},  // torus_patch
    {0.90f, 0.40f, 0.60f},  // step
    {0.55f, 0.35f, 0.15f},  // pole
}};

struct ScenePoint {
    double x, y, z;
    int label;
};

using PointSink = std::vector<ScenePoint>;

void emit(PointSink& sink, double x, double y, double z, int label) {
    sink.push_back({x, y, z, label});
}

void sample_panel(PointSink& sink, Rng& rng, int count, double cx, double cy, double yaw) {
    const double w = rng.uniform(0.15, 0.30);
    const double h = rng.uniform(0.10, 0.25);
    const double cs = std::cos(yaw), sn = std::sin(yaw);
    for (int i = 0; i < count; ++i) {
        const double u = rng.uniform(-w / 2, w / 2);
        const double v = rng.uniform(0.0, h);
        emit(sink, cx + u * cs, cy + u * sn, v, kPlane);
    }
}

void box_faces(PointSink& sink, Rng& rng, int count, double cx, double cy, double z0, double a,
               double b, double c, double yaw, int label) {
    // five visible faces (no bottom), sampled proportionally to area
    const double areas[5] = {a * b, a * c, a * c, b * c, b * c};  // top, front, back, left, right
    double total = 0.0;
    for (const double s : areas) total += s;
    const double cs = std::cos(yaw), sn = std::sin(yaw);
    for (int i = 0; i < count; ++i) {
        double pick = rng.uniform(0.0, total);
        int face = 0;
        while (face < 4 && pick > areas[face]) {
            pick -= areas[face];
            ++face;
        }
        double lx = 0, ly = 0, lz = 0;
        switch (face) {
            case 0: lx = rng.uniform(-a / 2, a / 2); ly = rng.uniform(-b / 2, b / 2); lz = c; break;
            case 1: lx = rng.uniform(-a / 2, a / 2); ly = -b / 2; lz = rng.uniform(0.0, c); break;
            case 2: lx = rng.uniform(-a / 2, a / 2); ly = b / 2; lz = rng.uniform(0.0, c); break;
            case 3: lx = -a / 2; ly = rng.uniform(-b / 2, b / 2); lz = rng.uniform(0.0, c); break;
            default: lx = a / 2; ly = rng.uniform(-b / 2, b / 2); lz = rng.uniform(0.0, c); break;
        }
        emit(sink, cx + lx * cs - ly * sn, cy + lx * sn + ly * cs, z0 + lz, label);
    }
}

void sample_box(PointSink& sink, Rng& rng, int count, double cx, double cy, double yaw) {
    const double a = rng.uniform(0.08, 0.20);
    const double b = rng.uniform(0.08, 0.20);
    const double c = rng.uniform(0.08, 0.20);
    box_faces(sink, rng, count, cx, cy, 0.0, a, b, c, yaw, kBox);
}

void sample_sphere(PointSink& sink, Rng& rng, int count, double cx, double cy) {
    const double r = rng.uniform(0.05, 0.12);
    for (int i = 0; i < count; ++i) {
        double dx = rng.normal(), dy = rng.normal(), dz = rng.normal();
        double norm = std::sqrt(dx * dx + dy * dy + dz * dz);
        while (norm < 1e-12) {
            dx = rng.normal();
            dy = rng.normal();
            dz = rng.normal();
            norm = std::sqrt(dx * dx + dy * dy + dz * dz);
        }
        emit(sink, cx + r * dx / norm, cy + r * dy / norm, r + r * dz / norm, kSphere);
    }
}

void cylinder_surface(PointSink& sink, Rng& rng, int count, double cx, double cy, double r,
                      double h, int label) {
    const double lateral = kTwoPi * r * h;
    const double top = M_PI * r * r;
    for (int i = 0; i < count; ++i) {
        if (rng.uniform(0.0, lateral + top) < lateral) {
            const double phi = rng.uniform(0.0, kTwoPi);
            emit(sink, cx + r * std::cos(phi), cy + r * std::sin(phi), rng.uniform(0.0, h), label);
        } else {
            const double rho = r * std::sqrt(rng.uniform());
            const double phi = rng.uniform(0.0, kTwoPi);
            emit(sink, cx + rho * std::cos(phi), cy + rho * std::sin(phi), h, label);
        }
    }
}

void sample_cylinder(PointSink& sink, Rng& rng, int count, double cx, double cy) {
    const double r = rng.uniform(0.04, 0.10);
    const double h = rng.uniform(0.15, 0.35);
    cylinder_surface(sink, rng, count, cx, cy, r, h, kCylinder);
}

void sample_wedge(PointSink& sink, Rng& rng, int count, double cx, double cy, double yaw) {
    // right-triangular prism: cross-section (0,0), (a,0), (0,c) in xz,
    // extruded along y over [0, b]
    const double a = rng.uniform(0.12, 0.25);
    const double b = rng.uniform(0.10, 0.22);
    const double c = rng.uniform(0.08, 0.18);
    const double hyp = std::sqrt(a * a + c * c);
    const double areas[4] = {hyp * b, c * b, a * c / 2, a * c / 2};  // slant, back, two caps
    double total = 0.0;
    for (const double s : areas) total += s;
    const double cs = std::cos(yaw), sn = std::sin(yaw);
    for (int i = 0; i < count; ++i) {
        double pick = rng.uniform(0.0, total);
        int face = 0;
        while (face < 3 && pick > areas[face]) {
            pick -= areas[face];
            ++face;
        }
        double lx = 0, ly = 0, lz = 0;
        if (face == 0) {  // slant from (a,0) to (0,c)
            const double t = rng.uniform();
            lx = a * (1.0 - t);
            lz = c * t;
            ly = rng.uniform(0.0, b);
        } else if (face == 1) {  // vertical back at x=0
            lx = 0.0;
            lz = rng.uniform(0.0, c);
            ly = rng.uniform(0.0, b);
        } else {  // triangular caps at y=0 / y=b
            double u = rng.uniform(), v = rng.uniform();
            if (u + v > 1.0) {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            lx = a * u;
            lz = c * v;
            ly = face == 2 ? 0.0 : b;
        }
        lx -= a / 2;
        ly -= b / 2;
        emit(sink, cx + lx * cs - ly * sn, cy + lx * sn + ly * cs, lz, kWedge);
    }
}

void sample_torus_patch(PointSink& sink, Rng& rng, int count, double cx, double cy, double yaw) {
    const double major = rng.uniform(0.07, 0.12);
    const double minor = major / 3.0;
    const double span = 1.5 * M_PI;
    for (int i = 0; i < count; ++i) {
        const double u = yaw + rng.uniform(0.0, span);
        const double v = rng.uniform(0.0, kTwoPi);
        const double ring = major + minor * std::cos(v);
        emit(sink, cx + ring * std::cos(u), cy + ring * std::sin(u),
             minor + minor * std::sin(v), kTorusPatch);
    }
}

void sample_step(PointSink& sink, Rng& rng, int count, double cx, double cy, double yaw) {
    // two stacked cuboids forming a two-step staircase
    const double a = rng.uniform(0.14, 0.24);
    const double b = rng.uniform(0.10, 0.20);
    const double c1 = rng.uniform(0.05, 0.10);
    const double c2 = rng.uniform(0.05, 0.10);
    const int lower = count / 2;
    box_faces(sink, rng, lower, cx, cy, 0.0, a, b, c1, yaw, kStep);
    // upper box shifted to the back half
    const double shift = a / 4;
    const double cs = std::cos(yaw), sn = std::sin(yaw);
    box_faces(sink, rng, count - lower, cx - shift * cs, cy - shift * sn, c1, a / 2, b, c2, yaw,
              kStep);
}

void sample_pole(PointSink& sink, Rng& rng, int count, double cx, double cy) {
    const double r = rng.uniform(0.012, 0.02);
    const double h = rng.uniform(0.30, 0.50);
    cylinder_surface(sink, rng, count, cx, cy, r, h, kPole);
}

void sample_object(PointSink& sink, Rng& rng, int cls, int count) {
    const double cx = rng.uniform(0.15, 0.85);
    const double cy = rng.uniform(0.15, 0.85);
    const double yaw = rng.uniform(0.0, kTwoPi);
    switch (cls) {
        case kPlane: sample_panel(sink, rng, count, cx, cy, yaw); break;
        case kBox: sample_box(sink, rng, count, cx, cy, yaw); break;
        case kSphere: sample_sphere(sink, rng, count, cx, cy); break;
        case kCylinder: sample_cylinder(sink, rng, count, cx, cy); break;
        case kWedge: sample_wedge(sink, rng, count, cx, cy, yaw); break;
        case kTorusPatch: sample_torus_patch(sink, rng, count, cx, cy, yaw); break;
        case kStep: sample_step(sink, rng, count, cx, cy, yaw); break;
        case kPole: sample_pole(sink, rng, count, cx, cy); break;
        default:
            throw ArgumentError("generate_scene: unknown object class " + std::to_string(cls));
    }
}

std::vector<int> sorted_unique(std::vector<int> values) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    return values;
}

}  // namespace

const std::string& object_class_name(int id) {
    if (id < 0 || id > kObjectClassCount)
        throw ArgumentError("object_class_name: id " + std::to_string(id) + " out of range");
    return kClassNames[static_cast<std::size_t>(id)];
}

int object_class_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i)
        if (kClassNames[i] == name) return static_cast<int>(i);
    throw ArgumentError("unknown object class '" + name + "'");
}

LabeledCloud generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    if (spec.classes.empty()) throw ArgumentError("generate_scene: no object classes in spec");
    for (const int cls : spec.classes)
        if (cls < 1 || cls > kObjectClassCount)
            throw ArgumentError("generate_scene: invalid object class " + std::to_string(cls));
    if (spec.min_objects < 0 || spec.max_objects < spec.min_objects)
        throw ArgumentError("generate_scene: bad object count range");
    if (spec.pos_jitter < 0.0 || spec.color_jitter < 0.0)
        throw ArgumentError("generate_scene: jitter must be >= 0");
    if (spec.floor_points < 1) throw ArgumentError("generate_scene: floor_points must be >= 1");

    Rng rng(seed);
    PointSink sink;

    const int n_objects =
        spec.min_objects +
        static_cast<int>(rng.uniform_index(
            static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)));
    for (int i = 0; i < n_objects; ++i) {
        const int cls = spec.classes[static_cast<std::size_t>(
            rng.uniform_index(spec.classes.size()))];
        sample_object(sink, rng, cls, spec.points_per_object);
    }

    int floor_count = spec.floor_points;
    const int deficit = spec.min_total_points - (static_cast<int>(sink.size()) + floor_count);
    if (deficit > 0) floor_count += deficit;
    for (int i = 0; i < floor_count; ++i)
        emit(sink, rng.uniform(), rng.uniform(), 0.0, kFloor);

    // per-scene palette permutation when decorrelating colors
    std::array<int, 9> palette_of;
    for (int c = 0; c < 9; ++c) palette_of[static_cast<std::size_t>(c)] = c;
    if (spec.color_shuffle) {
        std::vector<int> objects = {1, 2, 3, 4, 5, 6, 7, 8};
        rng.shuffle(objects);
        for (int c = 1; c <= 8; ++c)
            palette_of[static_cast<std::size_t>(c)] = objects[static_cast<std::size_t>(c - 1)];
    }

    LabeledCloud cloud;
    cloud.id = "scene-" + std::to_string(seed);
    const long m = static_cast<long>(sink.size());
    cloud.coords.resize(m, 3);
    cloud.colors.emplace(m, 3);
    cloud.labels.emplace(m);
    for (long i = 0; i < m; ++i) {
        const ScenePoint& p = sink[static_cast<std::size_t>(i)];
        cloud.coords(i, 0) = static_cast<float>(p.x + spec.pos_jitter * rng.normal());
        cloud.coords(i, 1) = static_cast<float>(p.y + spec.pos_jitter * rng.normal());
        cloud.coords(i, 2) = static_cast<float>(p.z + spec.pos_jitter * rng.normal());
        const auto& base =
            kPalette[static_cast<std::size_t>(palette_of[static_cast<std::size_t>(p.label)])];
        for (int ch = 0; ch < 3; ++ch) {
            const double v = base[static_cast<std::size_t>(ch)] + spec.color_jitter * rng.normal();
            (*cloud.colors)(i, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        (*cloud.labels)(i) = p.label;
    }
    return cloud;
}

std::vector<int> Corpus::clouds_with_class(int cls) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < inventory.size(); ++i)
        if (std::binary_search(inventory[i].begin(), inventory[i].end(), cls))
            out.push_back(static_cast<int>(i));
    return out;
}

Corpus build_corpus(const SceneSpec& spec, int n_scenes, const ClassSplit& split,
                    std::uint64_t seed) {
    if (n_scenes < 2) throw ArgumentError("build_corpus: need at least 2 scenes");
    if (split.train.empty() || split.test.empty())
        throw ArgumentError("build_corpus: both splits must be nonempty");
    for (const int c : split.train)
        if (std::find(split.test.begin(), split.test.end(), c) != split.test.end())
            throw ArgumentError("build_corpus: class " + object_class_name(c) +
                                " appears in both splits");

    Corpus corpus;
    corpus.train_classes = sorted_unique(split.train);
    corpus.test_classes = sorted_unique(split.test);

    const int n_train = n_scenes / 2;
    for (int i = 0; i < n_scenes; ++i) {
        SceneSpec scene_spec = spec;
        scene_spec.classes = i < n_train ? corpus.train_classes : corpus.test_classes;
        LabeledCloud cloud = generate_scene(scene_spec, mix_seed(seed, static_cast<std::uint64_t>(i)));
        char name[32];
        std::snprintf(name, sizeof(name), "scene-%04d", i);
        cloud.id = name;
        std::vector<int> classes;
        for (int r = 0; r < cloud.size(); ++r) classes.push_back((*cloud.labels)(r));
        corpus.inventory.push_back(sorted_unique(std::move(classes)));
        corpus.clouds.push_back(std::move(cloud));
    }
    return corpus;
}

Episode sample_episode(const Corpus& corpus, const std::vector<int>& way_classes, int k_shots,
                       int n_query, std::uint64_t seed) {
    const int n_ways = static_cast<int>(way_classes.size());
    if (n_ways < 1) throw ArgumentError("sample_episode: need at least one way");
    if (k_shots < 1 || n_query < 1)
        throw ArgumentError("sample_episode: k_shots and n_query must be >= 1");

    Rng rng(seed);
    std::set<int> used;

    const auto pick = [&](const std::vector<int>& candidates, int count,
                          const std::string& what) {
        std::vector<int> free;
        for (const int c : candidates)
            if (!used.count(c)) free.push_back(c);
        if (static_cast<int>(free.size()) < count)
            throw ArgumentError("sample_episode: only " + std::to_string(free.size()) +
                                " clouds available for " + what + ", need " +
                                std::to_string(count));
        const std::vector<int> order =
            rng.sample_without_replacement(static_cast<int>(free.size()), count);
        std::vector<int> out;
        for (const int idx : order) out.push_back(free[static_cast<std::size_t>(idx)]);
        for (const int c : out) used.insert(c);
        return out;
    };

    // way-major support selection
    std::vector<std::vector<int>> support_idx;
    for (int way = 0; way < n_ways; ++way)
        support_idx.push_back(pick(corpus.clouds_with_class(way_classes[static_cast<std::size_t>(way)]),
                                   k_shots, "class " + object_class_name(way_classes[static_cast<std::size_t>(way)])));

    std::vector<int> query_pool;
    for (std::size_t i = 0; i < corpus.clouds.size(); ++i)
        for (const int cls : way_classes)
            if (std::binary_search(corpus.inventory[i].begin(), corpus.inventory[i].end(), cls)) {
                query_pool.push_back(static_cast<int>(i));
                break;
            }
    const std::vector<int> query_idx = pick(query_pool, n_query, "query clouds");

    const auto remap = [&](const LabeledCloud& cloud) {
        LabeledCloud out = cloud;
        for (int i = 0; i < out.size(); ++i) {
            int remapped = 0;
            for (int way = 0; way < n_ways; ++way)
                if ((*cloud.labels)(i) == way_classes[static_cast<std::size_t>(way)]) {
                    remapped = way + 1;
                    break;
                }
            (*out.labels)(i) = remapped;
        }
        return out;
    };

    Episode episode;
    episode.n_ways = n_ways;
    episode.k_shots = k_shots;
    episode.class_names.push_back(object_class_name(kFloor));
    for (const int cls : way_classes) episode.class_names.push_back(object_class_name(cls));
    for (int way = 0; way < n_ways; ++way)
        for (int shot = 0; shot < k_shots; ++shot)
            episode.support.push_back(remap(
                corpus.clouds[static_cast<std::size_t>(support_idx[static_cast<std::size_t>(way)][static_cast<std::size_t>(shot)])]));
    for (const int idx : query_idx)
        episode.queries.push_back(remap(corpus.clouds[static_cast<std::size_t>(idx)]));
    return episode;
}

Episode sample_training_episode(const Corpus& corpus, int n_ways, int k_shots, int n_query,
                                std::uint64_t seed) {
    if (n_ways > static_cast<int>(corpus.train_classes.size()))
        throw ArgumentError("sample_training_episode: corpus has only " +
                            std::to_string(corpus.train_classes.size()) + " train classes");
    Rng rng(mix_seed(seed, 0xEEAAULL));
    const std::vector<int> order = rng.sample_without_replacement(
        static_cast<int>(corpus.train_classes.size()), n_ways);
    std::vector<int> ways;
    for (const int i : order) ways.push_back(corpus.train_classes[static_cast<std::size_t>(i)]);
    return sample_episode(corpus, ways, k_shots, n_query, mix_seed(seed, 0xBB55ULL));
}

std::vector<EpisodeDescriptor> enumerate_test_episodes(const Corpus& corpus, int n_ways,
                                                       int per_combo, std::uint64_t seed) {
    const int n_test = static_cast<int>(corpus.test_classes.size());
    if (n_ways < 1 || n_ways > n_test)
        throw ArgumentError("enumerate_test_episodes: n_ways outside [1, " +
                            std::to_string(n_test) + "]");
    if (per_combo < 1) throw ArgumentError("enumerate_test_episodes: per_combo must be >= 1");

    std::vector<EpisodeDescriptor> out;
    std::vector<int> combo(static_cast<std::size_t>(n_ways));
    for (int i = 0; i < n_ways; ++i) combo[static_cast<std::size_t>(i)] = i;
    std::uint64_t combo_index = 0;
    while (true) {
        for (int e = 0; e < per_combo; ++e) {
            EpisodeDescriptor desc;
            for (const int i : combo)
                desc.way_classes.push_back(corpus.test_classes[static_cast<std::size_t>(i)]);
            desc.seed = mix_seed(seed, combo_index * 1000003ULL + static_cast<std::uint64_t>(e));
            out.push_back(std::move(desc));
        }
        // next lexicographic combination
        int pos = n_ways - 1;
        while (pos >= 0 && combo[static_cast<std::size_t>(pos)] == n_test - n_ways + pos) --pos;
        if (pos < 0) break;
        ++combo[static_cast<std::size_t>(pos)];
        for (int i = pos + 1; i < n_ways; ++i)
            combo[static_cast<std::size_t>(i)] = combo[static_cast<std::size_t>(i - 1)] + 1;
        ++combo_index;
    }
    return out;
}

void save_corpus(const Corpus& corpus, const std::string& dir, CloudFormat format) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "clouds");

    std::ofstream manifest(fs::path(dir) / "corpus.txt");
    if (!manifest) throw IoError("cannot open corpus manifest under '" + dir + "'");
    manifest << "SNCORPUS 1\n";
    manifest << "TRAIN";
    for (const int c : corpus.train_classes) manifest << ' ' << object_class_name(c);
    manifest << "\nTEST";
    for (const int c : corpus.test_classes) manifest << ' ' << object_class_name(c);
    manifest << "\nCLOUDS " << corpus.clouds.size() << "\n";
    const char* extension = format == CloudFormat::kBinary ? ".sncb" : ".sncloud";
    for (std::size_t i = 0; i < corpus.clouds.size(); ++i) {
        const std::string rel = "clouds/" + corpus.clouds[i].id + extension;
        save_cloud(corpus.clouds[i], (fs::path(dir) / rel).string(), format);
        manifest << rel << " CLASSES";
        for (const int c : corpus.inventory[i]) manifest << ' ' << object_class_name(c);
        manifest << "\n";
    }
    if (!manifest) throw IoError("write failure on corpus manifest");
}

Corpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "corpus.txt").string();
    std::ifstream manifest(manifest_path);
    if (!manifest) throw IoError("cannot open '" + manifest_path + "'");

    std::string line;
    long line_no = 1;
    if (!std::getline(manifest, line) || line != "SNCORPUS 1")
        throw ParseError("expected 'SNCORPUS 1' header", manifest_path, line_no);

    Corpus corpus;
    const auto parse_classes = [&](const std::string& text, const std::string& keyword) {
        std::istringstream ss(text);
        std::string word;
        ss >> word;
        if (word != keyword)
            throw ParseError("expected '" + keyword + "' line", manifest_path, line_no);
        std::vector<int> out;
        while (ss >> word) out.push_back(object_class_from_name(word));
        return out;
    };
    ++line_no;
    if (!std::getline(manifest, line)) throw ParseError("missing TRAIN line", manifest_path, line_no);
    corpus.train_classes = parse_classes(line, "TRAIN");
    ++line_no;
    if (!std::getline(manifest, line)) throw ParseError("missing TEST line", manifest_path, line_no);
    corpus.test_classes = parse_classes(line, "TEST");
    ++line_no;
    if (!std::getline(manifest, line)) throw ParseError("missing CLOUDS line", manifest_path, line_no);
    std::istringstream counts(line);
    std::string keyword;
    long n = 0;
    counts >> keyword >> n;
    if (keyword != "CLOUDS" || n < 1)
        throw ParseError("malformed CLOUDS line", manifest_path, line_no);

    for (long i = 0; i < n; ++i) {
        ++line_no;
        if (!std::getline(manifest, line))
            throw ParseError("expected " + std::to_string(n) + " cloud lines", manifest_path,
                             line_no);
        std::istringstream ss(line);
        std::string rel, classes_kw;
        ss >> rel >> classes_kw;
        if (rel.empty() || classes_kw != "CLASSES")
            throw ParseError("malformed cloud line", manifest_path, line_no);
        const std::string cloud_path = (fs::path(dir) / rel).string();
        LabeledCloud cloud = load_cloud(cloud_path, cloud_format_from_path(cloud_path));
        if (!cloud.labels)
            throw ParseError("corpus cloud '" + rel + "' has no labels", manifest_path, line_no);
        std::vector<int> classes;
        for (int r = 0; r < cloud.size(); ++r) classes.push_back((*cloud.labels)(r));
        corpus.inventory.push_back(sorted_unique(std::move(classes)));
        corpus.clouds.push_back(std::move(cloud));
    }
    return corpus;
}

}  // namespace segnn
