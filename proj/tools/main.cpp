// segnn: synthetic corpus generation, training-free few-shot segmentation
// (eval-nn), QUEST head training and evaluation (train-pn / eval-pn),
// training-free classification, and the gradient check runner.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "segnn/errors.hpp"
#include "segnn/harness.hpp"
#include "segnn/quest.hpp"
#include "segnn/rng.hpp"
#include "segnn/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace segnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

std::vector<int> parse_class_list(const std::string& csv) {
    std::vector<int> out;
    std::string word;
    std::istringstream ss(csv);
    while (std::getline(ss, word, ',')) {
        if (!word.empty()) out.push_back(object_class_from_name(word));
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& bytes) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << bytes;
    if (!out) throw IoError("write failure on '" + path + "'");
}

/// Digest of the subcommand's effective configuration, flags and config
/// file already merged. Identical digests imply identical runs.
std::string run_digest(CLI::App* cmd) {
    return fnv1a_hex(cmd->get_name() + "\n" + cmd->config_to_str(true, false));
}

void log_run(CLI::App* cmd, const std::string& digest, std::uint64_t seed) {
    std::cerr << "segnn " << cmd->get_name() << ": config_digest=" << digest
              << " seed=" << seed << " threads=" << harness_thread_count() << "\n";
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string out;
    int scenes = 200;
    std::uint64_t seed = 0;
    int min_objects = 1;
    int max_objects = 3;
    int points_per_object = 512;
    int floor_points = 1024;
    double pos_jitter = 0.005;
    double color_jitter = 0.05;
    bool color_shuffle = false;
    std::string train_classes = "plane,box,sphere,cylinder";
    std::string test_classes = "wedge,torus_patch,step,pole";
    std::string format = "binary";
};

int run_synth(CLI::App* cmd, const SynthArgs& args) {
    const std::string digest = run_digest(cmd);
    log_run(cmd, digest, args.seed);

    SceneSpec spec;
    spec.min_objects = args.min_objects;
    spec.max_objects = args.max_objects;
    spec.points_per_object = args.points_per_object;
    spec.floor_points = args.floor_points;
    spec.pos_jitter = args.pos_jitter;
    spec.color_jitter = args.color_jitter;
    spec.color_shuffle = args.color_shuffle;

    ClassSplit split{parse_class_list(args.train_classes), parse_class_list(args.test_classes)};
    const Corpus corpus = build_corpus(spec, args.scenes, split, args.seed);
    const CloudFormat format =
        args.format == "text" ? CloudFormat::kText : CloudFormat::kBinary;
    save_corpus(corpus, args.out, format);

    json summary;
    summary["scenes"] = corpus.clouds.size();
    summary["train_classes"] = json::array();
    for (const int c : corpus.train_classes)
        summary["train_classes"].push_back(object_class_name(c));
    summary["test_classes"] = json::array();
    for (const int c : corpus.test_classes)
        summary["test_classes"].push_back(object_class_name(c));
    summary["config_digest"] = digest;
    write_text_file((fs::path(args.out) / "synth.json").string(), summary.dump(2) + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------
// shared evaluation plumbing

struct EvalArgs {
    std::string corpus;
    std::string out;
    std::string ckpt;  // eval-pn only
    int ways = 2;
    int shots = 1;
    int n_query = 0;  // 0 -> ways
    int per_combo = 100;
    std::uint64_t seed = 0;
    int d = 20;
    double theta = 30.0;
    int layers = 3;
    int k_neigh = 16;
    int k_up = 3;
    double variance = 1.0;
    double gamma = 1000.0;
    int m = 2048;
    int kernel = 32;
    bool include_background = false;
    bool per_episode_miou = false;
    bool dump_predictions = false;
    bool fast = false;
};

EncoderConfig encoder_from(const EvalArgs& args) {
    EncoderConfig cfg;
    cfg.d = args.d;
    cfg.theta = args.theta;
    cfg.layers = args.layers;
    cfg.k_neigh = args.k_neigh;
    cfg.k_up = args.k_up;
    cfg.variance = args.variance;
    cfg.seed = args.seed;
    return cfg;
}

int run_eval(CLI::App* cmd, const EvalArgs& args, bool parametric) {
    const std::string digest = run_digest(cmd);
    log_run(cmd, digest, args.seed);

    const Corpus corpus = load_corpus(args.corpus);
    const int n_query = args.n_query > 0 ? args.n_query : args.ways;
    const std::vector<EpisodeDescriptor> descs =
        enumerate_test_episodes(corpus, args.ways, args.per_combo, args.seed);

    FeatureCache cache(encoder_from(args), args.fast);

    QuestParams params;
    SegpnOptions pn_opts;
    SegnnOptions nn_opts;
    EpisodePredictor predictor;
    if (parametric) {
        OptimizerState opt;
        load_checkpoint(args.ckpt, params, opt);
        pn_opts.encoder = encoder_from(args);
        pn_opts.quest.hidden = params.hidden;
        pn_opts.quest.kernel = args.kernel;
        pn_opts.gamma = args.gamma;
        pn_opts.points_per_cloud = args.m;
        if (params.feature_dim != pn_opts.encoder.scene_dim())
            throw ArgumentError("checkpoint expects " + std::to_string(params.feature_dim) +
                                "-dim features but the encoder produces " +
                                std::to_string(pn_opts.encoder.scene_dim()));
        predictor = [&](const Episode& episode) {
            return segpn_predict_with(episode, params, pn_opts, cache.provider());
        };
    } else {
        nn_opts.encoder = encoder_from(args);
        nn_opts.gamma = args.gamma;
        nn_opts.points_per_cloud = args.m;
        predictor = [&](const Episode& episode) {
            return segnn_predict_with(episode, nn_opts, cache.provider());
        };
    }

    std::function<void(std::size_t, const Episode&, const EpisodePrediction&)> observer;
    if (args.dump_predictions) {
        fs::create_directories(fs::path(args.out) / "predictions");
        observer = [&](std::size_t index, const Episode&, const EpisodePrediction& pred) {
            for (std::size_t q = 0; q < pred.queries.size(); ++q) {
                char name[64];
                std::snprintf(name, sizeof(name), "ep%05zu_q%zu.txt", index, q);
                write_prediction_dump(pred.queries[q],
                                      (fs::path(args.out) / "predictions" / name).string());
            }
        };
    }

    const StreamEvalResult result = evaluate_stream(corpus, descs, args.shots, n_query, predictor,
                                                    harness_thread_count(), observer);

    const Aggregation mode =
        args.per_episode_miou ? Aggregation::kPerEpisodeMean : Aggregation::kGlobal;
    json report = metrics_report(result.global, descs.size(), digest, mode, result.per_episode,
                                 args.include_background);
    report["majority_baseline"] = majority_baseline(result.global);
    report["ways"] = args.ways;
    report["shots"] = args.shots;
    report["n_query"] = n_query;
    write_text_file((fs::path(args.out) / "metrics.json").string(), report.dump(2) + "\n");
    std::cerr << "segnn " << cmd->get_name() << ": wrote " << args.out << "/metrics.json"
              << " (episodes=" << descs.size() << ")\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train-pn

struct TrainArgs {
    std::string corpus;
    std::string out;
    std::int64_t episodes = 2000;
    int ways = 2;
    int shots = 1;
    int n_query = 0;
    std::uint64_t seed = 0;
    int d = 10;
    double theta = 30.0;
    int layers = 3;
    int k_neigh = 16;
    int k_up = 3;
    double variance = 1.0;
    double gamma = 1000.0;
    int m = 2048;
    int kernel = 32;
    int hidden = 192;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double temperature = 10.0;
    std::int64_t ckpt_every = 0;
};

int run_train(CLI::App* cmd, const TrainArgs& args) {
    const std::string digest = run_digest(cmd);
    log_run(cmd, digest, args.seed);

    const Corpus corpus = load_corpus(args.corpus);
    const int n_query = args.n_query > 0 ? args.n_query : args.ways;

    SegpnOptions opts;
    opts.encoder.d = args.d;
    opts.encoder.theta = args.theta;
    opts.encoder.layers = args.layers;
    opts.encoder.k_neigh = args.k_neigh;
    opts.encoder.k_up = args.k_up;
    opts.encoder.variance = args.variance;
    opts.encoder.seed = args.seed;
    opts.gamma = args.gamma;
    opts.points_per_cloud = args.m;
    opts.quest.hidden = args.hidden;
    opts.quest.kernel = args.kernel;
    opts.quest.temperature = args.temperature;

    QuestParams params = init_params(opts.encoder.scene_dim(), args.hidden, args.seed);
    OptimizerState opt = init_optimizer(params, args.lr, args.weight_decay);

    FeatureCache cache(opts.encoder);
    const EpisodeSource source = [&](std::int64_t step) {
        return sample_training_episode(corpus, args.ways, args.shots, n_query,
                                       mix_seed(args.seed, static_cast<std::uint64_t>(step)));
    };
    fs::create_directories(args.out);
    const CheckpointHook hook = [&](std::int64_t step, const QuestParams& p,
                                    const OptimizerState& o) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint-%06lld.snqp",
                      static_cast<long long>(step));
        save_checkpoint(p, o, (fs::path(args.out) / name).string());
    };

    const std::vector<TraceRow> trace = train(source, args.episodes, params, opt, opts,
                                              cache.provider(), args.ckpt_every, hook);

    save_checkpoint(params, opt, (fs::path(args.out) / "quest.snqp").string());
    save_loss_trace(trace, (fs::path(args.out) / "loss.csv").string());
    std::cerr << "segnn train-pn: " << trace.size() << " episodes, final loss "
              << (trace.empty() ? 0.0 : trace.back().loss) << ", wrote " << args.out
              << "/quest.snqp\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// classify

struct ClassifyArgs {
    std::string corpus;
    std::string out;
    int ways = 2;
    int shots = 5;
    int queries_per_class = 5;
    int repeats = 10;
    std::uint64_t seed = 0;
    int d = 20;
    double theta = 30.0;
    int layers = 3;
    int k_neigh = 16;
    double variance = 1.0;
    double gamma = 1000.0;
    int m = 2048;
};

int run_classify(CLI::App* cmd, const ClassifyArgs& args) {
    const std::string digest = run_digest(cmd);
    log_run(cmd, digest, args.seed);

    const Corpus corpus = load_corpus(args.corpus);

    // cloud-level labels and per-class candidate clouds
    std::vector<int> cloud_label(corpus.clouds.size(), -1);
    std::set<int> class_ids;
    for (std::size_t i = 0; i < corpus.clouds.size(); ++i) {
        cloud_label[i] = dominant_object_label(corpus.clouds[i]);
        if (cloud_label[i] > 0) class_ids.insert(cloud_label[i]);
    }
    const int need = args.shots + args.queries_per_class;
    std::vector<int> eligible;
    for (const int cls : class_ids) {
        int count = 0;
        for (const int label : cloud_label)
            if (label == cls) ++count;
        if (count >= need) eligible.push_back(cls);
    }
    if (static_cast<int>(eligible.size()) < args.ways)
        throw ArgumentError("classify: only " + std::to_string(eligible.size()) +
                            " classes have " + std::to_string(need) + " clouds; need " +
                            std::to_string(args.ways) + " ways");

    EncoderConfig cfg;
    cfg.d = args.d;
    cfg.theta = args.theta;
    cfg.layers = args.layers;
    cfg.k_neigh = args.k_neigh;
    cfg.variance = args.variance;
    cfg.seed = args.seed;
    GlobalFeatureCache cache(cfg);

    long correct = 0, total = 0;
    for (int repeat = 0; repeat < args.repeats; ++repeat) {
        Rng rng(mix_seed(args.seed, static_cast<std::uint64_t>(repeat)));
        const std::vector<int> order =
            rng.sample_without_replacement(static_cast<int>(eligible.size()), args.ways);

        FeatureBank bank;
        bank.n_classes = args.ways;
        std::vector<VecX> bank_rows;
        std::vector<int> bank_labels;
        std::vector<std::pair<int, int>> query_set;  // (cloud index, way)
        for (int way = 0; way < args.ways; ++way) {
            const int cls =
                eligible[static_cast<std::size_t>(order[static_cast<std::size_t>(way)])];
            std::vector<int> candidates;
            for (std::size_t i = 0; i < corpus.clouds.size(); ++i)
                if (cloud_label[i] == cls) candidates.push_back(static_cast<int>(i));
            const std::vector<int> picked =
                rng.sample_without_replacement(static_cast<int>(candidates.size()), need);
            for (int j = 0; j < args.shots; ++j) {
                const int cloud_index =
                    candidates[static_cast<std::size_t>(picked[static_cast<std::size_t>(j)])];
                bank_rows.push_back(
                    cache.features(corpus.clouds[static_cast<std::size_t>(cloud_index)], args.m));
                bank_labels.push_back(way);
            }
            for (int j = args.shots; j < need; ++j)
                query_set.emplace_back(
                    candidates[static_cast<std::size_t>(picked[static_cast<std::size_t>(j)])],
                    way);
        }
        bank.feats.resize(static_cast<long>(bank_rows.size()), bank_rows.front().size());
        bank.labels.resize(static_cast<long>(bank_rows.size()));
        for (std::size_t b = 0; b < bank_rows.size(); ++b) {
            bank.feats.row(static_cast<long>(b)) = bank_rows[b].transpose();
            bank.labels(static_cast<long>(b)) = bank_labels[b];
        }

        for (const auto& [cloud_index, way] : query_set) {
            const VecX feat =
                cache.features(corpus.clouds[static_cast<std::size_t>(cloud_index)], args.m);
            const ClassScores scored = classify_nn(feat, bank, args.gamma);
            if (scored.label == way) ++correct;
            ++total;
        }
    }

    json report;
    report["accuracy"] =
        total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    report["correct"] = correct;
    report["total"] = total;
    report["ways"] = args.ways;
    report["shots"] = args.shots;
    report["queries_per_class"] = args.queries_per_class;
    report["repeats"] = args.repeats;
    report["config_digest"] = digest;
    write_text_file((fs::path(args.out) / "classify.json").string(), report.dump(2) + "\n");
    std::cerr << "segnn classify: accuracy " << report["accuracy"] << " over " << total
              << " queries\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
    std::string out;
    int seeds = 20;
    double fd_step = 1e-5;
    double tol = 1e-4;
    std::uint64_t seed = 0;
};

LabeledCloud gradcheck_cloud(int m, std::uint64_t seed, int n_classes) {
    Rng rng(seed);
    LabeledCloud cloud;
    cloud.id = "gradcheck-" + std::to_string(seed);
    cloud.coords.resize(m, 3);
    cloud.colors.emplace(m, 3);
    cloud.labels.emplace(m);
    for (int i = 0; i < m; ++i) {
        for (int c = 0; c < 3; ++c) {
            cloud.coords(i, c) = static_cast<float>(rng.uniform());
            (*cloud.colors)(i, c) = static_cast<float>(rng.uniform());
        }
        (*cloud.labels)(i) =
            static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_classes)));
    }
    return cloud;
}

int run_gradcheck(CLI::App* cmd, const GradcheckArgs& args) {
    const std::string digest = run_digest(cmd);
    log_run(cmd, digest, args.seed);

    // the toy scale: M=64 points, H=8 hidden, d=2 frequencies
    SegpnOptions opts;
    opts.encoder.d = 2;
    opts.encoder.layers = 3;
    opts.encoder.k_neigh = 8;
    opts.encoder.seed = 5;
    opts.quest.hidden = 8;
    opts.quest.kernel = 32;
    opts.points_per_cloud = 64;

    json per_seed = json::array();
    double worst = 0.0;
    for (int s = 1; s <= args.seeds; ++s) {
        const std::uint64_t episode_seed = mix_seed(args.seed, static_cast<std::uint64_t>(s));
        Episode episode;
        episode.n_ways = 2;
        episode.k_shots = 1;
        episode.support.push_back(gradcheck_cloud(64, episode_seed, 3));
        episode.support.push_back(gradcheck_cloud(64, episode_seed + 1, 3));
        episode.queries.push_back(gradcheck_cloud(64, episode_seed + 2, 3));
        const QuestParams params = init_params(opts.encoder.scene_dim(), opts.quest.hidden,
                                               static_cast<std::uint64_t>(s));
        const double err = gradient_check(episode, params, opts, args.fd_step);
        worst = std::max(worst, err);
        per_seed.push_back(err);
        std::cerr << "segnn gradcheck: seed " << s << " max_rel_error " << err << "\n";
    }

    json report;
    report["max_rel_error"] = worst;
    report["per_seed"] = per_seed;
    report["seeds"] = args.seeds;
    report["fd_step"] = args.fd_step;
    report["tol"] = args.tol;
    report["pass"] = worst <= args.tol;
    report["config_digest"] = digest;
    if (!args.out.empty())
        write_text_file((fs::path(args.out) / "gradcheck.json").string(), report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    if (worst > args.tol)
        throw NumericalError("gradcheck: max relative error " + std::to_string(worst) +
                             " exceeds tolerance " + std::to_string(args.tol));
    return kExitOk;
}

// ---------------------------------------------------------------------------

void add_eval_options(CLI::App* cmd, EvalArgs& args, int default_d) {
    args.d = default_d;
    cmd->add_option("--corpus", args.corpus, "corpus directory")->required();
    cmd->add_option("--out", args.out, "output directory")->required();
    cmd->add_option("--ways", args.ways, "episode way count");
    cmd->add_option("--shots", args.shots, "support shots per way");
    cmd->add_option("--n-query", args.n_query, "query clouds per episode (0: equals --ways)");
    cmd->add_option("--episodes-per-combo", args.per_combo, "episodes per class combination");
    cmd->add_option("--seed", args.seed, "run seed");
    cmd->add_option("--d", args.d, "PE frequency count");
    cmd->add_option("--theta", args.theta, "PE base");
    cmd->add_option("--layers", args.layers, "manipulation layers");
    cmd->add_option("--k-neigh", args.k_neigh, "neighborhood size");
    cmd->add_option("--k-up", args.k_up, "upsampling neighbors");
    cmd->add_option("--variance", args.variance, "filter frequency variance");
    cmd->add_option("--gamma", args.gamma, "similarity activation scale");
    cmd->add_option("--m", args.m, "points per cloud");
    cmd->add_flag("--include-background", args.include_background,
                  "include class 0 in the mIoU mean");
    cmd->add_flag("--per-episode-miou", args.per_episode_miou,
                  "average per-episode mIoU instead of pooling counts");
    cmd->add_flag("--dump-predictions", args.dump_predictions,
                  "write per-point prediction dumps");
    cmd->add_flag("--fast", args.fast, "32-bit encoder fast path");
}

json error_json(const std::string& type, const std::string& message) {
    json out;
    out["error"]["type"] = type;
    out["error"]["message"] = message;
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training-free few-shot 3D point-cloud segmentation"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    synth_cmd->set_config("--config");
    synth_cmd->add_option("--out", synth_args.out, "corpus output directory")->required();
    synth_cmd->add_option("--scenes", synth_args.scenes, "total scene count");
    synth_cmd->add_option("--seed", synth_args.seed, "corpus seed");
    synth_cmd->add_option("--min-objects", synth_args.min_objects, "min objects per scene");
    synth_cmd->add_option("--max-objects", synth_args.max_objects, "max objects per scene");
    synth_cmd->add_option("--points-per-object", synth_args.points_per_object,
                          "surface samples per object");
    synth_cmd->add_option("--floor-points", synth_args.floor_points, "floor samples per scene");
    synth_cmd->add_option("--pos-jitter", synth_args.pos_jitter, "coordinate noise sigma");
    synth_cmd->add_option("--color-jitter", synth_args.color_jitter, "color noise sigma");
    synth_cmd->add_flag("--color-shuffle", synth_args.color_shuffle,
                        "decorrelate colors from classes per scene");
    synth_cmd->add_option("--train-classes", synth_args.train_classes,
                          "comma-separated train class names");
    synth_cmd->add_option("--test-classes", synth_args.test_classes,
                          "comma-separated test class names");
    synth_cmd->add_option("--format", synth_args.format, "cloud format: binary|text")
        ->check(CLI::IsMember({"binary", "text"}));

    EvalArgs nn_args;
    CLI::App* nn_cmd = app.add_subcommand("eval-nn", "evaluate training-free Seg-NN");
    nn_cmd->set_config("--config");
    add_eval_options(nn_cmd, nn_args, 20);

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train-pn", "train the Seg-PN QUEST head");
    train_cmd->set_config("--config");
    train_cmd->add_option("--corpus", train_args.corpus, "corpus directory")->required();
    train_cmd->add_option("--out", train_args.out, "output directory")->required();
    train_cmd->add_option("--episodes", train_args.episodes, "training episode count");
    train_cmd->add_option("--ways", train_args.ways, "episode way count");
    train_cmd->add_option("--shots", train_args.shots, "support shots per way");
    train_cmd->add_option("--n-query", train_args.n_query,
                          "query clouds per episode (0: equals --ways)");
    train_cmd->add_option("--seed", train_args.seed, "run seed");
    train_cmd->add_option("--d", train_args.d, "PE frequency count");
    train_cmd->add_option("--theta", train_args.theta, "PE base");
    train_cmd->add_option("--layers", train_args.layers, "manipulation layers");
    train_cmd->add_option("--k-neigh", train_args.k_neigh, "neighborhood size");
    train_cmd->add_option("--k-up", train_args.k_up, "upsampling neighbors");
    train_cmd->add_option("--variance", train_args.variance, "filter frequency variance");
    train_cmd->add_option("--gamma", train_args.gamma, "similarity activation scale");
    train_cmd->add_option("--m", train_args.m, "points per cloud");
    train_cmd->add_option("--kernel", train_args.kernel, "statistic pooling kernel and stride");
    train_cmd->add_option("--hidden", train_args.hidden, "refined feature width");
    train_cmd->add_option("--lr", train_args.lr, "initial learning rate");
    train_cmd->add_option("--weight-decay", train_args.weight_decay, "AdamW weight decay");
    train_cmd->add_option("--temperature", train_args.temperature, "training score scale");
    train_cmd->add_option("--ckpt-every", train_args.ckpt_every,
                          "checkpoint every N episodes (0: final only)");

    EvalArgs pn_args;
    CLI::App* pn_cmd = app.add_subcommand("eval-pn", "evaluate a trained Seg-PN head");
    pn_cmd->set_config("--config");
    add_eval_options(pn_cmd, pn_args, 10);
    pn_cmd->add_option("--ckpt", pn_args.ckpt, "QUEST checkpoint path")->required();
    pn_cmd->add_option("--kernel", pn_args.kernel, "statistic pooling kernel and stride");

    ClassifyArgs classify_args;
    CLI::App* classify_cmd =
        app.add_subcommand("classify", "training-free few-shot classification");
    classify_cmd->set_config("--config");
    classify_cmd->add_option("--corpus", classify_args.corpus, "corpus directory")->required();
    classify_cmd->add_option("--out", classify_args.out, "output directory")->required();
    classify_cmd->add_option("--ways", classify_args.ways, "classes per task");
    classify_cmd->add_option("--shots", classify_args.shots, "support clouds per class");
    classify_cmd->add_option("--queries-per-class", classify_args.queries_per_class,
                             "query clouds per class");
    classify_cmd->add_option("--repeats", classify_args.repeats, "task repetitions");
    classify_cmd->add_option("--seed", classify_args.seed, "run seed");
    classify_cmd->add_option("--d", classify_args.d, "PE frequency count");
    classify_cmd->add_option("--theta", classify_args.theta, "PE base");
    classify_cmd->add_option("--layers", classify_args.layers, "manipulation layers");
    classify_cmd->add_option("--k-neigh", classify_args.k_neigh, "neighborhood size");
    classify_cmd->add_option("--variance", classify_args.variance, "filter frequency variance");
    classify_cmd->add_option("--gamma", classify_args.gamma, "similarity activation scale");
    classify_cmd->add_option("--m", classify_args.m, "points per cloud");

    GradcheckArgs grad_args;
    CLI::App* grad_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of QUEST gradients");
    grad_cmd->set_config("--config");
    grad_cmd->add_option("--out", grad_args.out, "optional report directory");
    grad_cmd->add_option("--seeds", grad_args.seeds, "toy episode count");
    grad_cmd->add_option("--fd-step", grad_args.fd_step, "central difference step");
    grad_cmd->add_option("--tol", grad_args.tol, "max relative error tolerance");
    grad_cmd->add_option("--seed", grad_args.seed, "base seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& error) {
        if (error.get_exit_code() == 0) return app.exit(error);  // --help
        std::cerr << error_json("config", error.what()).dump() << "\n";
        return kExitConfig;
    }

    try {
        if (synth_cmd->parsed()) return run_synth(synth_cmd, synth_args);
        if (nn_cmd->parsed()) return run_eval(nn_cmd, nn_args, false);
        if (train_cmd->parsed()) return run_train(train_cmd, train_args);
        if (pn_cmd->parsed()) return run_eval(pn_cmd, pn_args, true);
        if (classify_cmd->parsed()) return run_classify(classify_cmd, classify_args);
        if (grad_cmd->parsed()) return run_gradcheck(grad_cmd, grad_args);
    } catch (const ArgumentError& error) {
        std::cerr << error_json("config", error.what()).dump() << "\n";
        return kExitConfig;
    } catch (const ParseError& error) {
        std::cerr << error_json("data", error.what()).dump() << "\n";
        return kExitData;
    } catch (const IoError& error) {
        std::cerr << error_json("data", error.what()).dump() << "\n";
        return kExitData;
    } catch (const NumericalError& error) {
        std::cerr << error_json("numerical", error.what()).dump() << "\n";
        return kExitNumerical;
    } catch (const std::exception& error) {
        std::cerr << error_json("internal", error.what()).dump() << "\n";
        return kExitNumerical;
    }
    return kExitConfig;
}
