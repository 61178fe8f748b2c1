// bodygps command-line entry point. Exit codes: 0 success, 1 runtime failure,
// 2 configuration error.

#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bodygps/dataset.hpp"
#include "bodygps/metaimage.hpp"
#include "bodygps/rng.hpp"
#include "bodygps/service.hpp"
#include "bodygps/tasks.hpp"
#include "bodygps/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bodygps;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void require_file(const fs::path& path, const char* what) {
    if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path.string());
}

void require_dir(const fs::path& path, const char* what) {
    if (!fs::is_directory(path)) throw ConfigError(std::string(what) + " not found: " + path.string());
}

Vec3 parse_triplet(const std::string& text) {
    Vec3 p;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> p.x >> c1 >> p.y >> c2 >> p.z) || c1 != ',' || c2 != ',' || !is_finite(p))
        throw ConfigError("expected x,y,z but got '" + text + "'");
    return p;
}

std::shared_ptr<const Atlas> open_atlas(const fs::path& dir) {
    require_dir(dir, "atlas directory");
    try {
        return std::make_shared<const Atlas>(load_atlas(dir));
    } catch (const Error& e) {
        throw ConfigError(std::string("cannot load atlas: ") + e.what());
    }
}

RegressorParams open_model(const fs::path& path) {
    require_file(path, "model file");
    try {
        return load_params(path, default_layout().fingerprint());
    } catch (const Error& e) {
        throw ConfigError(std::string("cannot load model: ") + e.what());
    }
}

Volume open_volume(const fs::path& path) {
    require_file(path, "volume");
    try {
        return load_volume(path);
    } catch (const Error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

json froc_json(const FrocCurve& c) {
    json points = json::array();
    for (const auto& p : c.points) points.push_back({{"threshold_mm", p.threshold_mm}, {"sensitivity", p.sensitivity}});
    return {{"points", points}, {"sensitivity_5mm", c.sensitivity_5mm}, {"sensitivity_10mm", c.sensitivity_10mm}};
}

json navigation_json(const NavigationResult& r) {
    json path = json::array();
    for (const auto& p : r.path) path.push_back(vec_json(p));
    return {{"point_mm", vec_json(r.final_point)}, {"path", path}, {"converged", r.converged}, {"iterations", r.iterations}};
}

json stats_json(const EvalStats& s) {
    return {{"mean_mm", s.mean_mm}, {"median_mm", s.median_mm}, {"p95_mm", s.p95_mm}, {"n", s.errors_mm.size()}};
}

// ---- train configuration ----------------------------------------------------

struct TrainRun {
    TrainConfig train;
    TargetSpec target;
    PointSamplingParams points;
    int n_eval = 2000;
    NavigationConfig navigation;
};

TrainRun train_run_from_json(const json& j) {
    TrainRun run;
    run.train = train_config_from_json(j.contains("train") ? j.at("train") : j);
    try {
        if (j.contains("target")) {
            const auto& t = j.at("target");
            run.target.mode = parse_output_mode(t.value("mode", "atlas_coord"));
            run.target.landmark = t.value("landmark", "");
            if (run.target.mode == OutputMode::DisplacementMm && run.target.landmark.empty())
                throw ConfigError("displacement_mm training needs target.landmark");
        }
        if (j.contains("points")) {
            const auto& p = j.at("points");
            run.points.n_base = p.value("n_base", run.points.n_base);
            run.points.n_perturb = p.value("n_perturb", run.points.n_perturb);
            run.points.perturb_mm = p.value("perturb_mm", run.points.perturb_mm);
            run.points.body_fraction = p.value("body_fraction", run.points.body_fraction);
            run.points.focus_fraction = p.value("focus_fraction", run.points.focus_fraction);
            run.points.focus_radius_mm = p.value("focus_radius_mm", run.points.focus_radius_mm);
            run.points.focus_landmark = p.value("focus_landmark", run.points.focus_landmark);
        }
        run.n_eval = j.value("n_eval", run.n_eval);
        if (j.contains("navigation")) {
            const auto& n = j.at("navigation");
            run.navigation.max_iters = n.value("max_iters", run.navigation.max_iters);
            run.navigation.tol_mm = n.value("tol_mm", run.navigation.tol_mm);
            run.navigation.damping = n.value("damping", run.navigation.damping);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    if (run.points.n_base < 1 || run.points.n_perturb < 0) throw ConfigError("points.n_base must be >= 1");
    if (run.n_eval < 1) throw ConfigError("n_eval must be >= 1");
    return run;
}

json to_json(const TrainRun& run) {
    return {{"train", to_json(run.train)},
            {"target", {{"mode", output_mode_name(run.target.mode)}, {"landmark", run.target.landmark}}},
            {"points",
             {{"n_base", run.points.n_base},
              {"n_perturb", run.points.n_perturb},
              {"perturb_mm", run.points.perturb_mm},
              {"body_fraction", run.points.body_fraction},
              {"focus_fraction", run.points.focus_fraction},
              {"focus_radius_mm", run.points.focus_radius_mm},
              {"focus_landmark", run.points.focus_landmark}}},
            {"n_eval", run.n_eval},
            {"navigation",
             {{"max_iters", run.navigation.max_iters},
              {"tol_mm", run.navigation.tol_mm},
              {"damping", run.navigation.damping}}}};
}

// ---- subcommands --------------------------------------------------------------

struct SynthArgs {
    std::string spec = "thorax";
    int subjects = 10;
    int heldout = 0;
    std::string out;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    const PhantomSpec spec = load_phantom_spec(a.spec);
    if (a.subjects < 0 || a.heldout < 0 || a.heldout > a.subjects) throw ConfigError("need 0 <= --heldout <= --subjects");
    const SyntheticDataset data = generate_dataset(spec, a.subjects, a.heldout, a.seed);
    write_dataset(data, a.out);
    write_text(fs::path(a.out) / "config.json",
               json{{"command", "synth-gen"}, {"spec", to_json(spec)}, {"subjects", a.subjects}, {"heldout", a.heldout},
                    {"seed", a.seed}}
                       .dump(2) + "\n");
    std::cout << "wrote atlas and " << a.subjects << " subjects to " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

int run_train(const TrainArgs& a) {
    require_file(a.data, "dataset manifest");
    TrainRun run = a.config.empty() ? TrainRun{} : train_run_from_json(read_json_file(a.config));
    if (a.seed) run.train.seed = *a.seed;
    const std::uint64_t seed = run.train.seed;

    const SyntheticDataset data = load_dataset(a.data);
    if (data.train.empty()) throw ConfigError("manifest has no training subjects");
    const DescriptorSampler sampler(default_layout());
    if (run.target.mode == OutputMode::DisplacementMm) {
        data.atlas->landmark_normalized(run.target.landmark);  // validates the name
        if (run.points.focus_fraction > 0.0 && run.points.focus_landmark.empty())
            run.points.focus_landmark = run.target.landmark;
    }

    fs::create_directories(a.out);
    json config = to_json(run);
    config["data"] = fs::absolute(a.data).string();
    config["seed"] = seed;
    write_text(fs::path(a.out) / "config.json", config.dump(2) + "\n");

    const TrainingSet set = build_dataset(data.train, *data.atlas, sampler, run.points, run.target, derive_seed(seed, 1));
    const RegressorParams init = init_params(derive_seed(seed, 2), Architecture{}, sampler.layout().fingerprint(),
                                             run.target.mode);
    TrainConfig tc = run.train;
    tc.seed = derive_seed(seed, 3);
    std::ofstream history(fs::path(a.out) / "loss_history.csv");
    history << "epoch,loss\n";
    history.precision(17);
    const TrainResult result = train(tc, set, init, [&](int epoch, double loss) {
        history << epoch << "," << loss << "\n";
        if (!a.quiet) std::cerr << "epoch " << epoch << " loss " << loss << "\n";
    });
    history.close();
    save_params(result.params, fs::path(a.out) / "model.bgps");

    json eval{{"train_rows", set.rows()}, {"final_loss", result.loss_history.back()}};
    const RegressorEstimator estimator(result.params, sampler);
    if (!data.heldout.empty()) {
        if (run.target.mode == OutputMode::AtlasCoord) {
            const EvalStats trained = evaluate(estimator, data.heldout, *data.atlas, run.n_eval, derive_seed(seed, 4));
            const EvalStats baseline = evaluate(ConstantEstimator(OutputMode::AtlasCoord), data.heldout, *data.atlas,
                                                run.n_eval, derive_seed(seed, 4));
            eval["heldout"] = stats_json(trained);
            eval["untrained_baseline"] = stats_json(baseline);
        } else {
            const LandmarkEval le =
                evaluate_landmark(estimator, data.heldout, *data.atlas, run.target.landmark, run.navigation);
            eval["landmark"] = run.target.landmark;
            eval["single_agent"] = {{"median_mm", le.single_median_mm}, {"froc", froc_json(le.single)},
                                    {"errors_mm", le.single_errors_mm}};
            eval["multi_agent"] = {{"median_mm", le.multi_median_mm}, {"froc", froc_json(le.multi)},
                                   {"errors_mm", le.multi_errors_mm}};
        }
    }
    write_text(fs::path(a.out) / "eval.json", eval.dump(2) + "\n");
    std::cout << eval.dump(2) << "\n";
    return 0;
}

struct EngineArgs {
    std::string model;
    std::string atlas;
};

struct SegmentArgs : EngineArgs {
    std::string volume;
    std::string gt;
    double grid = 3.0;
    std::string out;
};

int run_segment(const SegmentArgs& a) {
    if (!(a.grid > 0.0)) throw ConfigError("--grid must be positive");
    const auto atlas = open_atlas(a.atlas);
    const Engine engine = make_regressor_engine(open_model(a.model), atlas);
    const Volume v = open_volume(a.volume);
    std::optional<LabelVolume> gt;
    if (!a.gt.empty()) {
        require_file(a.gt, "ground-truth mask");
        gt = load_label_volume(a.gt);
        if (!(gt->geometry() == v.geometry())) throw ConfigError("ground-truth mask geometry differs from the volume");
    }
    const LabelVolume labels = segment(engine, v, a.grid);
    save_volume(labels, a.out);
    json result{{"labels", a.out}, {"grid_mm", a.grid}};
    if (gt) {
        std::vector<int> organs;
        for (const auto& [label, _] : atlas->label_names())
            if (label > 1) organs.push_back(label);
        result["dice_micro_all"] = dice_micro(labels, *gt);
        result["dice_micro_organs"] = dice_micro(labels, *gt, organs);
    }
    write_text(fs::path(a.out).replace_extension(".json"), result.dump(2) + "\n");
    std::cout << result.dump(2) << "\n";
    return 0;
}

struct MatchArgs : EngineArgs {
    std::string source;
    std::string target;
    std::string point;
    int max_iters = 50;
    std::string out;
};

int run_match(const MatchArgs& a) {
    const auto atlas = open_atlas(a.atlas);
    const Engine engine = make_regressor_engine(open_model(a.model), atlas);
    const WorldPoint p = parse_triplet(a.point);
    const Volume source = open_volume(a.source);
    const Volume target = a.target == a.source ? source : open_volume(a.target);
    NavigationConfig nav;
    nav.max_iters = a.max_iters;
    const NavigationResult r = match_point(engine, source, p, target, nav);
    json result = navigation_json(r);
    result["source_point_mm"] = vec_json(p);
    result["source_normalized"] = vec_json(engine.coordinate(source, p).as_vec());
    write_text(a.out, result.dump(2) + "\n");
    std::cout << result.dump(2) << "\n";
    return 0;
}

struct LandmarkArgs : EngineArgs {
    std::string volume;
    int agents = 1;
    int max_iters = 50;
    std::string out;
};

int run_landmark(const LandmarkArgs& a) {
    const auto atlas = open_atlas(a.atlas);
    const RegressorParams params = open_model(a.model);
    if (params.output_mode != OutputMode::DisplacementMm)
        throw ConfigError("landmark detection needs a displacement_mm model");
    const RegressorEstimator estimator(params, DescriptorSampler(default_layout()));
    const Volume v = open_volume(a.volume);
    NavigationConfig nav;
    nav.max_iters = a.max_iters;
    json result;
    if (a.agents <= 1) {
        result = navigation_json(navigate_landmark(estimator, v, nav));
    } else {
        if (a.agents != 7) throw ConfigError("--agents must be 1 or 7");
        const MultiAgentResult m = multi_agent_landmark(estimator, v, default_agent_starts(v), nav);
        result["point_mm"] = vec_json(m.point);
        json agents = json::array();
        for (const auto& r : m.agents) agents.push_back(navigation_json(r));
        result["agents"] = agents;
    }
    write_text(a.out, result.dump(2) + "\n");
    std::cout << result.dump(2) << "\n";
    return 0;
}

struct BenchArgs : EngineArgs {
    std::string volume;
    int size = 0;
    int queries = 10000;
    std::uint64_t seed = 0;
    std::string out;
};

int run_bench(const BenchArgs& a) {
    const auto atlas = open_atlas(a.atlas);
    const RegressorEstimator estimator(open_model(a.model), DescriptorSampler(default_layout()));
    Volume v = a.volume.empty() ? atlas->image() : open_volume(a.volume);
    if (a.size > 0) {
        const auto& d = v.geometry().dims;
        if (a.size < d.i || a.size < d.j || a.size < d.k) throw ConfigError("--size is smaller than the volume");
        v = embed_centered(v, {a.size, a.size, a.size});
    }
    const LatencyStats s = benchmark_latency(estimator, v, a.queries, a.seed);
    const auto& d = v.geometry().dims;
    const json result{{"dims", json::array({d.i, d.j, d.k})}, {"queries", s.queries}, {"p50_us", s.p50_us},
                      {"p95_us", s.p95_us}, {"p99_us", s.p99_us}, {"mean_us", s.mean_us}, {"seed", a.seed}};
    if (!a.out.empty()) write_text(a.out, result.dump(2) + "\n");
    std::cout << result.dump(2) << "\n";
    return 0;
}

struct ServeArgs : EngineArgs {
    std::string host = "127.0.0.1";
    int port = 8088;
    int max_sessions = 8;
    std::size_t max_upload = std::size_t{1} << 30;
};

Service* g_service = nullptr;

int run_serve(const ServeArgs& a) {
    const auto atlas = open_atlas(a.atlas);
    auto engine = std::make_shared<const Engine>(make_regressor_engine(open_model(a.model), atlas));
    ServiceConfig config;
    config.max_sessions = static_cast<std::size_t>(std::max(1, a.max_sessions));
    config.max_upload_bytes = a.max_upload;
    Service service(engine, config);
    g_service = &service;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
    });
    std::cerr << "listening on " << a.host << ":" << a.port << "\n";
    const bool ok = service.listen(a.host, a.port);
    g_service = nullptr;
    if (!ok) throw Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
    return 0;
}

void add_engine_flags(CLI::App* cmd, EngineArgs& a) {
    cmd->add_option("--model", a.model, "Model file (.bgps)")->required();
    cmd->add_option("--atlas", a.atlas, "Atlas bundle directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bodygps: anatomical coordinate regression for 3D volumes"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth-gen", "Generate a phantom atlas and deformed subjects");
    synth_cmd->add_option("--spec", synth.spec, "Phantom spec JSON file, or 'thorax' / 'ankle'");
    synth_cmd->add_option("--subjects", synth.subjects, "Number of subjects");
    synth_cmd->add_option("--heldout", synth.heldout, "How many of the subjects are held out");
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--seed", synth.seed, "Random seed");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a regressor on a dataset manifest");
    train_cmd->add_option("--data", tr.data, "Dataset manifest.json")->required();
    train_cmd->add_option("--config", tr.config, "Training config JSON");
    train_cmd->add_option("--out", tr.out, "Run directory")->required();
    train_cmd->add_option("--seed", tr.seed, "Random seed (overrides the config)");
    train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch log");

    SegmentArgs seg;
    auto* seg_cmd = app.add_subcommand("segment", "Label transfer from the atlas mask");
    add_engine_flags(seg_cmd, seg);
    seg_cmd->add_option("--volume", seg.volume, "Volume to segment")->required();
    seg_cmd->add_option("--grid", seg.grid, "Query grid spacing in mm");
    seg_cmd->add_option("--gt", seg.gt, "Optional ground-truth mask for Dice");
    seg_cmd->add_option("--out", seg.out, "Output label volume (.mha)")->required();

    MatchArgs match;
    auto* match_cmd = app.add_subcommand("match", "Find the point in --target corresponding to --point in --source");
    add_engine_flags(match_cmd, match);
    match_cmd->add_option("--source", match.source, "Source volume")->required();
    match_cmd->add_option("--target", match.target, "Target volume")->required();
    match_cmd->add_option("--point", match.point, "Source point x,y,z in mm")->required();
    match_cmd->add_option("--max-iters", match.max_iters, "Navigation iteration cap");
    match_cmd->add_option("--out", match.out, "Result JSON")->required();

    LandmarkArgs lm;
    auto* lm_cmd = app.add_subcommand("landmark", "Detect a landmark with a displacement model");
    add_engine_flags(lm_cmd, lm);
    lm_cmd->add_option("--volume", lm.volume, "Volume")->required();
    lm_cmd->add_option("--agents", lm.agents, "1 (center start) or 7 (multi-agent)");
    lm_cmd->add_option("--max-iters", lm.max_iters, "Navigation iteration cap");
    lm_cmd->add_option("--out", lm.out, "Result JSON")->required();

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench-latency", "Time single-point queries");
    add_engine_flags(bench_cmd, bench);
    bench_cmd->add_option("--volume", bench.volume, "Volume (defaults to the atlas image)");
    bench_cmd->add_option("--size", bench.size, "Embed the volume in an N^3 grid first");
    bench_cmd->add_option("--queries", bench.queries, "Number of queries");
    bench_cmd->add_option("--seed", bench.seed, "Random seed");
    bench_cmd->add_option("--out", bench.out, "Result JSON");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
    add_engine_flags(serve_cmd, serve);
    serve_cmd->add_option("--host", serve.host, "Bind address");
    serve_cmd->add_option("--port", serve.port, "Port");
    serve_cmd->add_option("--max-sessions", serve.max_sessions, "Volumes kept in memory");
    serve_cmd->add_option("--max-upload-bytes", serve.max_upload, "Upload size limit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth_cmd) return run_synth(synth);
        if (*train_cmd) return run_train(tr);
        if (*seg_cmd) return run_segment(seg);
        if (*match_cmd) return run_match(match);
        if (*lm_cmd) return run_landmark(lm);
        if (*bench_cmd) return run_bench(bench);
        if (*serve_cmd) return run_serve(serve);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IncompatibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const MissingLandmarkError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
