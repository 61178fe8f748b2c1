#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bodygps/dataset.hpp"
#include "bodygps/metaimage.hpp"
#include "bodygps/model.hpp"
#include "bodygps/rng.hpp"
#include "bodygps/sampler.hpp"
#include "test_support.hpp"

using namespace bodygps;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(BODYGPS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

fs::path write_tiny_spec(const test::TempDir& dir) {
    const fs::path p = dir / "tiny.json";
    std::ofstream(p) << to_json(test::tiny_phantom_spec()).dump(2);
    return p;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = test::read_bytes(e.path());
    return files;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("synth-gen with zero subjects writes only the atlas") {
        test::TempDir dir;
        const fs::path spec = write_tiny_spec(dir);
        REQUIRE(run("synth-gen --spec " + q(spec) + " --subjects 0 --out " + q(dir / "d") + " --seed 1") == 0);
        CHECK(fs::exists(dir / "d" / "atlas" / "atlas.json"));
        CHECK(fs::exists(dir / "d" / "atlas" / "image.mha"));
        CHECK(read_json(dir / "d" / "manifest.json").at("subjects").empty());
    }

    TEST_CASE("synth-gen is byte-identical for a fixed seed and lists every subject") {
        test::TempDir dir;
        const fs::path spec = write_tiny_spec(dir);
        REQUIRE(run("synth-gen --spec " + q(spec) + " --subjects 10 --heldout 3 --out " + q(dir / "a") + " --seed 5") == 0);
        REQUIRE(run("synth-gen --spec " + q(spec) + " --subjects 10 --heldout 3 --out " + q(dir / "b") + " --seed 5") == 0);
        REQUIRE(run("synth-gen --spec " + q(spec) + " --subjects 10 --heldout 3 --out " + q(dir / "c") + " --seed 6") == 0);
        const auto a = snapshot(dir / "a"), b = snapshot(dir / "b"), c = snapshot(dir / "c");
        CHECK(a == b);
        CHECK(a != c);
        const json manifest = read_json(dir / "a" / "manifest.json");
        REQUIRE(manifest.at("subjects").size() == 10);
        int heldout = 0;
        for (const auto& s : manifest.at("subjects")) {
            heldout += s.at("split") == "heldout";
            CHECK(fs::exists(dir / "a" / s.at("volume").get<std::string>()));
            CHECK(fs::exists(dir / "a" / s.at("mask").get<std::string>()));
        }
        CHECK(heldout == 3);
    }

    TEST_CASE("synth-gen rejects invalid input") {
        test::TempDir dir;
        test::write_bytes(dir / "bad.json", "{\"organs\": 3}");
        CHECK(run("synth-gen --spec " + q(dir / "bad.json") + " --subjects 1 --out " + q(dir / "x")) == 2);
        CHECK(run("synth-gen --spec " + q(dir / "missing.json") + " --subjects 1 --out " + q(dir / "x")) == 2);
        CHECK(run("synth-gen --spec thorax --subjects 1 --heldout 2 --out " + q(dir / "x")) == 2);
        CHECK(run("synth-gen --bogus-flag") == 2);
    }

    TEST_CASE("train with zero learning rate saves the initial model") {
        test::TempDir dir;
        const fs::path spec = write_tiny_spec(dir);
        REQUIRE(run("synth-gen --spec " + q(spec) + " --subjects 2 --heldout 1 --out " + q(dir / "d") + " --seed 2") == 0);
        std::ofstream(dir / "cfg.json") << R"({"train": {"epochs": 3, "learning_rate": 0, "batch_size": 16},
                                              "points": {"n_base": 20, "n_perturb": 10}, "n_eval": 30})";
        REQUIRE(run("train --data " + q(dir / "d" / "manifest.json") + " --config " + q(dir / "cfg.json") + " --out " +
                    q(dir / "run") + " --seed 11 --quiet") == 0);
        const RegressorParams saved = load_params(dir / "run" / "model.bgps");
        const RegressorParams init = init_params(derive_seed(11, 2), Architecture{}, default_layout().fingerprint());
        CHECK(saved == init);

        std::ifstream history(dir / "run" / "loss_history.csv");
        std::string line;
        std::getline(history, line);
        CHECK(line == "epoch,loss");
        int rows = 0;
        while (std::getline(history, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 3);

        const json eval = read_json(dir / "run" / "eval.json");
        CHECK(eval.at("train_rows") == 30);
        CHECK(eval.at("heldout").at("n") == 30);
        CHECK(eval.at("heldout").at("median_mm") == eval.at("untrained_baseline").at("median_mm"));
        const json cfg = read_json(dir / "run" / "config.json");
        CHECK(cfg.at("seed") == 11);
        CHECK(cfg.at("train").at("epochs") == 3);
    }

    TEST_CASE("engine subcommands on an untrained model") {
        test::TempDir dir;
        const fs::path spec = write_tiny_spec(dir);
        REQUIRE(run("synth-gen --spec " + q(spec) + " --subjects 1 --heldout 0 --out " + q(dir / "d") + " --seed 2") == 0);
        save_params(init_params(1, Architecture{}, default_layout().fingerprint()), dir / "m.bgps");
        const fs::path vol = dir / "d" / read_json(dir / "d" / "manifest.json").at("subjects")[0].at("volume").get<std::string>();
        const fs::path gt = dir / "d" / read_json(dir / "d" / "manifest.json").at("subjects")[0].at("mask").get<std::string>();
        const std::string engine = " --model " + q(dir / "m.bgps") + " --atlas " + q(dir / "d" / "atlas");

        REQUIRE(run("segment" + engine + " --volume " + q(vol) + " --grid 3 --gt " + q(gt) + " --out " + q(dir / "seg.mha")) == 0);
        const LabelVolume seg = load_label_volume(dir / "seg.mha");
        CHECK(seg.geometry() == load_volume(vol).geometry());
        const json sj = read_json(dir / "seg.json");
        CHECK(sj.contains("dice_micro_all"));
        CHECK(sj.contains("dice_micro_organs"));

        REQUIRE(run("match" + engine + " --source " + q(vol) + " --target " + q(vol) + " --point 1,2,3 --out " +
                    q(dir / "match.json")) == 0);
        const json mj = read_json(dir / "match.json");
        // The untrained model answers the reference point everywhere, so there is nothing to move toward.
        CHECK(mj.at("converged") == true);
        CHECK(mj.at("iterations") == 0);

        REQUIRE(run("bench-latency" + engine + " --queries 50 --out " + q(dir / "bench.json")) == 0);
        const json bj = read_json(dir / "bench.json");
        CHECK(bj.at("queries") == 50);
        CHECK(bj.at("p50_us").get<double>() > 0.0);

        CHECK(run("landmark" + engine + " --volume " + q(vol) + " --out " + q(dir / "lm.json")) == 2);
        CHECK(run("segment --model " + q(dir / "none.bgps") + " --atlas " + q(dir / "d" / "atlas") + " --volume " +
                  q(vol) + " --out " + q(dir / "s.mha")) == 2);
        CHECK(run("segment --model " + q(dir / "m.bgps") + " --atlas " + q(dir / "nowhere") + " --volume " + q(vol) +
                  " --out " + q(dir / "s.mha")) == 2);
        CHECK(run("bench-latency" + engine + " --size 8") == 2);
    }

    TEST_CASE("train rejects a model layout mismatch and bad configs") {
        test::TempDir dir;
        const fs::path spec = write_tiny_spec(dir);
        REQUIRE(run("synth-gen --spec " + q(spec) + " --subjects 2 --heldout 1 --out " + q(dir / "d")) == 0);
        std::ofstream(dir / "bad.json") << R"({"train": {"epochs": 0}})";
        CHECK(run("train --data " + q(dir / "d" / "manifest.json") + " --config " + q(dir / "bad.json") + " --out " +
                  q(dir / "r")) == 2);
        std::ofstream(dir / "lm.json") << R"({"train": {"epochs": 1}, "target": {"mode": "displacement_mm", "landmark": "nope"}})";
        CHECK(run("train --data " + q(dir / "d" / "manifest.json") + " --config " + q(dir / "lm.json") + " --out " +
                  q(dir / "r")) == 2);
        CHECK(run("train --data " + q(dir / "missing.json") + " --out " + q(dir / "r")) == 2);

        // A model trained for another descriptor layout is refused.
        RegressorParams other = init_params(1, Architecture{}, default_layout().fingerprint() ^ 1);
        save_params(other, dir / "other.bgps");
        CHECK(run("bench-latency --model " + q(dir / "other.bgps") + " --atlas " + q(dir / "d" / "atlas") +
                  " --queries 5") == 2);
    }
}
