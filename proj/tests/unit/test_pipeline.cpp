#include "frism/checkpoint.hpp"
#include "frism/error.hpp"
#include "frism/pipeline.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <map>

using namespace frism;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

run_config small_config(const std::string & workdir) {
    run_config c;
    c.workdir = workdir;
    c.model.epochs = {60, 200};
    c.eval.n_samples = 500;
    c.train.steps = 40;
    c.sweep.ranks = {1, 2};
    c.sweep.lambdas = {0.0, 0.5};
    c.simulate.steps = 50;
    c.simulate.trajectory_every = 10;
    return c;
}

// every regular file under dir with its bytes
std::map<std::string, std::string> snapshot(const fs::path & dir) {
    std::map<std::string, std::string> out;
    for (const auto & e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path().string());
    }
    return out;
}

std::string error_message(const std::function<void()> & f) {
    try {
        f();
    } catch (const error & e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("default config round-trips through JSON") {
    const run_config d;
    const run_config back = run_config::from_json(d.to_json());
    CHECK(back.to_json() == d.to_json());
    CHECK(d.to_json()["frism"]["rank_truncation"].is_null());
    CHECK(d.to_json()["model"]["seeds"]["base"] == 10);
    CHECK(load_run_config("").to_json() == d.to_json());
}

TEST_CASE("the shipped default config matches the built-in defaults") {
    const std::string path = std::string(FRISM_SOURCE_DIR) + "/configs/default.json";
    CHECK(load_run_config(path).to_json() == run_config{}.to_json());
    CHECK(json::parse(read_file(path)) == run_config{}.to_json());
}

TEST_CASE("partial configs overlay the defaults") {
    const run_config c = run_config::from_json(json::parse(R"({
        "frism": {"alpha": 0.5, "rank_truncation": 3},
        "merge": {"method": "layerwise", "layer_lambda_lrm": {"layer1": 0.1}},
        "paths": {"workdir": "elsewhere"}
    })"));
    CHECK(c.frism.alpha == 0.5);
    CHECK(c.frism.rank_truncation == 3u);
    CHECK(c.frism.lambda_lrm == 0.2);
    CHECK(c.merge.method == "layerwise");
    CHECK(c.merge.layer_lambda_lrm.at("layer1") == 0.1);
    CHECK(c.workdir == "elsewhere");
    CHECK(c.model.arch.hidden_dim == 32);
}

TEST_CASE("unknown keys are all listed in one config error") {
    const std::string msg = error_message([] {
        run_config::from_json(json::parse(R"({"frism": {"alpah": 1}, "bogus": 2, "model": {"seeds": {"x": 1}}})"));
    });
    CHECK(msg.find("frism.alpah") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
    CHECK(msg.find("model.seeds.x") != std::string::npos);
    CHECK_THROWS_AS(run_config::from_json(json::parse(R"({"bogus": 2})")), config_error);
}

TEST_CASE("config type and value errors") {
    CHECK_THROWS_AS(run_config::from_json(json::parse(R"({"frism": {"alpha": "high"}})")), config_error);
    CHECK_THROWS_AS(run_config::from_json(json::parse(R"({"frism": 3})")), config_error);
    CHECK_THROWS_AS(run_config::from_json(json::parse(R"({"merge": {"method": "avg"}})")), config_error);
    CHECK_THROWS_AS(run_config::from_json(json::parse(R"({"merge": {"dare_drop": 1.0}})")), config_error);
    CHECK_THROWS_AS(run_config::from_json(json::parse(R"({"eval": {"tasks": ["taskZ"]}})")), config_error);
    CHECK_THROWS_AS(run_config::from_json(json::parse(R"({"model": {"input_dim": 0}})")), config_error);
    CHECK_THROWS_AS(run_config::from_json(json::parse("[]")), config_error);

    test_util::temp_dir dir("cfg");
    const std::string p = (dir.path() / "bad.json").string();
    write_file(p, "{ not json");
    CHECK_THROWS_AS(load_run_config(p), config_error);
    CHECK_THROWS_AS(load_run_config((dir.path() / "missing.json").string()), io_error);
}

TEST_CASE("metrics validation") {
    json m = {{"method", "ta"}, {"checkpoint", "x"}, {"calibration_kl", 0.1}, {"taskV_accuracy", 0.5}};
    CHECK_NOTHROW(validate_metrics(m));
    json bad = m;
    bad.erase("method");
    CHECK_THROWS_AS(validate_metrics(bad), config_error);
    bad = m;
    bad["taskV_accuracy"] = 1.5;
    CHECK_THROWS_AS(validate_metrics(bad), config_error);
    bad = m;
    bad.erase("taskV_accuracy");
    CHECK_THROWS_AS(validate_metrics(bad), config_error);
    bad = m;
    bad["calibration_kl"] = -1.0;
    CHECK_THROWS_AS(validate_metrics(bad), config_error);
}

TEST_CASE("commands need their upstream artifacts") {
    test_util::temp_dir dir("missing");
    const run_config c = small_config(dir.str());
    for (auto cmd : {cmd_merge, cmd_train, cmd_sweep, cmd_simulate}) {
        const std::string msg = error_message([&] { cmd(c, {}); });
        CHECK(msg.find("base.ckpt") != std::string::npos);
    }
    CHECK(error_message([&] { cmd_report(c, {}); }).find("metrics") != std::string::npos);
    CHECK_THROWS_AS(cmd_eval(c, (dir.path() / "nope.ckpt").string()), io_error);
}

TEST_CASE("full pipeline on a small triple") {
    test_util::temp_dir dir("pipeline");
    run_config c = small_config(dir.str());
    cmd_gen(c, {});
    for (const char * f : {"checkpoints/base.ckpt", "checkpoints/vlm.ckpt", "checkpoints/lrm.ckpt",
                           "checkpoints/provenance.json", "checkpoints/tasks.json", "checkpoints/config.gen.json",
                           "metrics/vlm.json", "metrics/config.gen.json"}) {
        CHECK_MESSAGE(fs::exists(dir.path() / f), f);
    }
    const json prov = json::parse(read_file((dir.path() / "checkpoints/provenance.json").string()));
    CHECK(prov["sha256"]["vlm.ckpt"] == sha256_hex(read_file((dir.path() / "checkpoints/vlm.ckpt").string())));
    CHECK(prov["seeds"]["lrm"] == 12);
    // the echoed config is the resolved config, verbatim
    CHECK(json::parse(read_file((dir.path() / "checkpoints/config.gen.json").string())) == c.to_json());

    SUBCASE("rerun without force refuses and leaves files alone") {
        const auto before = snapshot(dir.path());
        const std::string msg = error_message([&] { cmd_gen(c, {}); });
        CHECK(msg.find("--force") != std::string::npos);
        CHECK(snapshot(dir.path()) == before);
    }
    SUBCASE("gen with force is byte-identical") {
        const auto before = snapshot(dir.path());
        cmd_gen(c, {true, false});
        CHECK(snapshot(dir.path()) == before);
    }
    SUBCASE("every merge method writes schema-valid metrics") {
        for (const auto & method : merge_methods()) {
            c.merge.method = method;
            cmd_merge(c, {});
            CAPTURE(method);
            const json m = json::parse(read_file((dir.path() / "metrics" / (method + ".json")).string()));
            CHECK_NOTHROW(validate_metrics(m));
            CHECK(m["method"] == method);
            CHECK(fs::exists(dir.path() / "checkpoints" / ("merged-" + method + ".ckpt")));
            CHECK(fs::exists(dir.path() / "metrics" / ("config.merge-" + method + ".json")));
        }
        cmd_report(c, {});
        const std::string md = read_file((dir.path() / "reports/summary.md").string());
        CHECK(md.find("| base |") < md.find("| vlm |"));
        CHECK(md.find("| vlm |") < md.find("| lrm |"));
        for (const auto & method : merge_methods()) CHECK(md.find("| " + method + " |") != std::string::npos);
        CHECK(md.find("||") == std::string::npos);
        CHECK(md.find("|  |") == std::string::npos);
    }
    SUBCASE("ta with lambda_lrm 0 evaluates exactly like theta_vlm") {
        c.merge.method = "ta";
        c.merge.lambda_lrm = 0.0;
        cmd_merge(c, {});
        const json ta = json::parse(read_file((dir.path() / "metrics/ta.json").string()));
        const json vlm = json::parse(read_file((dir.path() / "metrics/vlm.json").string()));
        for (const char * k : {"taskV_accuracy", "taskR_accuracy", "calibration_kl"}) CHECK(ta[k] == vlm[k]);
        CHECK(ta["calibration_kl"] == 0.0);
    }
    SUBCASE("train then merge uses the trained gates") {
        c.merge.method = "ta";
        cmd_train(c, {});
        CHECK(fs::exists(dir.path() / "gates/frism-subspace.gates"));
        CHECK(fs::exists(dir.path() / "decomp/frism-subspace.decomp"));
        const std::string jsonl = read_file((dir.path() / "gates/train-subspace.jsonl").string());
        CHECK(jsonl.find("\"summary\":true") != std::string::npos);
        c.merge.method = "frism";
        cmd_merge(c, {});
        json m = json::parse(read_file((dir.path() / "metrics/frism.json").string()));
        CHECK(m["details"]["gates"] == "trained");
        cmd_merge(c, {true, true});
        m = json::parse(read_file((dir.path() / "metrics/frism.json").string()));
        CHECK(m["details"]["gates"] == "init");

        // rerunning train with force and the same config reproduces every byte
        c.merge.method = "ta";
        const auto before = snapshot(dir.path() / "gates");
        cmd_train(c, {true, false});
        CHECK(snapshot(dir.path() / "gates") == before);
    }
    SUBCASE("sweep with lambda 0 scores every row like theta_vlm") {
        c.sweep.lambdas = {0.0};
        cmd_sweep(c, {});
        const json vlm = json::parse(read_file((dir.path() / "metrics/vlm.json").string()));
        const std::string csv = read_file((dir.path() / "reports/sweep.csv").string());
        char buf[128];
        std::snprintf(buf, sizeof(buf), ",%.10g,%.10g\n", vlm["taskV_accuracy"].get<double>(), vlm["taskR_accuracy"].get<double>());
        std::size_t rows = 0, pos = csv.find('\n') + 1;
        while (pos < csv.size()) {
            const std::size_t end = csv.find('\n', pos);
            const std::string line = csv.substr(pos, end - pos + 1);
            CHECK(line.size() > std::strlen(buf));
            CHECK(line.substr(line.size() - std::strlen(buf)) == buf);
            ++rows;
            pos = end + 1;
        }
        CHECK(rows == c.sweep.ranks.size());
    }
    SUBCASE("simulate writes regimes and trajectories deterministically") {
        cmd_simulate(c, {});
        const auto before = snapshot(dir.path() / "reports");
        cmd_simulate(c, {true, false});
        CHECK(snapshot(dir.path() / "reports") == before);
        const std::string csv = read_file((dir.path() / "reports/regimes.csv").string());
        CHECK(csv.rfind("subspace_index,h,norm_sq,alpha,margin,regime,final_gate\n", 0) == 0);
        const json curv = json::parse(read_file((dir.path() / "reports/curvature.json").string()));
        CHECK(curv["layers"].contains("layer1"));
    }
    SUBCASE("eval twice gives identical bytes") {
        const std::string p = (dir.path() / "checkpoints/vlm.ckpt").string();
        CHECK(cmd_eval(c, p) == cmd_eval(c, p));
        CHECK_NOTHROW(validate_metrics(json::parse(cmd_eval(c, p))));
    }
}

TEST_CASE("zero epochs give three bitwise-identical checkpoints") {
    test_util::temp_dir dir("zero");
    run_config c = small_config(dir.str());
    c.model.epochs = {0, 0};
    cmd_gen(c, {});
    // provenance differs in the manifest, the tensors do not
    const model_params b = load_checkpoint((dir.path() / "checkpoints/base.ckpt").string());
    const model_params v = load_checkpoint((dir.path() / "checkpoints/vlm.ckpt").string());
    const model_params l = load_checkpoint((dir.path() / "checkpoints/lrm.ckpt").string());
    CHECK(test_util::same_tensors(b, v));
    CHECK(test_util::same_tensors(b, l));
    // a zero reasoning task vector: frism degenerates to theta_vlm
    c.merge.method = "frism";
    cmd_merge(c, {});
    CHECK(test_util::same_tensors(load_checkpoint((dir.path() / "checkpoints/merged-frism.ckpt").string()), v));
}

TEST_CASE("workdir lock is exclusive") {
    test_util::temp_dir dir("lock");
    {
        workdir_lock a(dir.str());
        CHECK(fs::exists(dir.path() / ".frism.lock"));
        CHECK_THROWS_AS(workdir_lock(dir.str()), io_error);
    }
    CHECK_FALSE(fs::exists(dir.path() / ".frism.lock"));
    CHECK_NOTHROW(workdir_lock(dir.str()));
}
