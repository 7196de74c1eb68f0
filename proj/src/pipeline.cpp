#include "frism/pipeline.hpp"

#include "frism/checkpoint.hpp"
#include "frism/error.hpp"
#include "frism/merge.hpp"
#include "frism/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

namespace frism {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config ----

json run_config::to_json() const {
    json rt = frism.rank_truncation ? json(*frism.rank_truncation) : json(nullptr);
    return {
        {"model",
         {
             {"input_dim", model.arch.input_dim},
             {"hidden_dim", model.arch.hidden_dim},
             {"num_hidden_layers", model.arch.num_hidden_layers},
             {"output_classes", model.arch.output_classes},
             {"activation", model.arch.activation},
             {"frozen_layers", model.arch.frozen_layers},
             {"seeds", {{"base", model.seeds.base}, {"vlm", model.seeds.vlm}, {"lrm", model.seeds.lrm}}},
             {"epochs", {{"pretrain", model.epochs.pretrain}, {"finetune", model.epochs.finetune}}},
         }},
        {"frism",
         {
             {"lambda_lrm", frism.lambda_lrm},
             {"alpha", frism.alpha},
             {"rank_truncation", rt},
             {"variant", gate_variant_name(frism.variant)},
         }},
        {"train",
         {
             {"optimizer", optimizer_name(train.optimizer)},
             {"lr", train.learning_rate},
             {"steps", train.steps},
             {"batch", train.batch_size},
             {"seed", train.seed},
             {"log_every", train.log_every},
             {"early_stop", train.early_stop},
         }},
        {"merge",
         {
             {"method", merge.method},
             {"lambda_vlm", merge.lambda_vlm},
             {"lambda_lrm", merge.lambda_lrm},
             {"layer_lambda_vlm", merge.layer_lambda_vlm},
             {"layer_lambda_lrm", merge.layer_lambda_lrm},
             {"ties_density", merge.ties_density},
             {"ties_lambda", merge.ties_lambda},
             {"dare_drop", merge.dare_drop},
             {"dare_seed", merge.dare_seed},
             {"ip_lambda_warn", merge.ip_lambda_warn},
         }},
        {"eval", {{"tasks", eval.tasks}, {"n_samples", eval.n_samples}, {"seed", eval.seed}}},
        {"sweep", {{"ranks", sweep.ranks}, {"lambdas", sweep.lambdas}, {"layer_set", sweep.layer_set}}},
        {"simulate",
         {
             {"lr", simulate.lr},
             {"steps", simulate.steps},
             {"fd_step", simulate.fd_step},
             {"trajectory_every", simulate.trajectory_every},
         }},
        {"paths", {{"workdir", workdir}}},
    };
}

namespace {

// objects whose keys are user-chosen (layer names)
bool free_form(const std::string & path) {
    return path == "merge.layer_lambda_vlm" || path == "merge.layer_lambda_lrm";
}

void collect_unknown(const json & input, const json & defaults, const std::string & prefix, std::vector<std::string> & bad) {
    for (const auto & [key, value] : input.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!defaults.contains(key)) {
            bad.push_back(path);
            continue;
        }
        if (defaults[key].is_object() && !free_form(path)) {
            if (!value.is_object()) {
                bad.push_back(path + " (expected an object)");
                continue;
            }
            collect_unknown(value, defaults[key], path, bad);
        }
    }
}

void overlay(json & target, const json & input, const std::string & prefix) {
    for (const auto & [key, value] : input.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (target[key].is_object() && !free_form(path)) {
            overlay(target[key], value, path);
        } else {
            target[key] = value;
        }
    }
}

template <typename T>
T get_field(const json & j, const std::string & section, const std::string & key) {
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception &) {
        throw config_error("config field " + section + "." + key + " has the wrong type");
    }
}

} // namespace

run_config run_config::from_json(const json & input) {
    if (!input.is_object()) {
        throw config_error("config must be a JSON object");
    }
    const run_config defaults;
    json merged = defaults.to_json();
    std::vector<std::string> bad;
    collect_unknown(input, merged, "", bad);
    if (!bad.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto & b : bad) msg += " " + b;
        throw config_error(msg);
    }
    overlay(merged, input, "");

    run_config c;
    const json & m = merged;
    c.model.arch.input_dim = get_field<std::size_t>(m, "model", "input_dim");
    c.model.arch.hidden_dim = get_field<std::size_t>(m, "model", "hidden_dim");
    c.model.arch.num_hidden_layers = get_field<std::size_t>(m, "model", "num_hidden_layers");
    c.model.arch.output_classes = get_field<std::size_t>(m, "model", "output_classes");
    c.model.arch.activation = get_field<std::string>(m, "model", "activation");
    c.model.arch.frozen_layers = get_field<std::vector<std::string>>(m, "model", "frozen_layers");
    const json seeds = m["model"]["seeds"];
    const json epochs = m["model"]["epochs"];
    c.model.seeds.base = get_field<std::uint64_t>(json{{"s", seeds}}, "s", "base");
    c.model.seeds.vlm = get_field<std::uint64_t>(json{{"s", seeds}}, "s", "vlm");
    c.model.seeds.lrm = get_field<std::uint64_t>(json{{"s", seeds}}, "s", "lrm");
    c.model.epochs.pretrain = get_field<std::size_t>(json{{"e", epochs}}, "e", "pretrain");
    c.model.epochs.finetune = get_field<std::size_t>(json{{"e", epochs}}, "e", "finetune");

    c.frism.lambda_lrm = get_field<double>(m, "frism", "lambda_lrm");
    c.frism.alpha = get_field<double>(m, "frism", "alpha");
    if (!m["frism"]["rank_truncation"].is_null()) {
        c.frism.rank_truncation = get_field<std::size_t>(m, "frism", "rank_truncation");
    }
    c.frism.variant = parse_gate_variant(get_field<std::string>(m, "frism", "variant"));

    c.train.optimizer = parse_optimizer(get_field<std::string>(m, "train", "optimizer"));
    c.train.learning_rate = get_field<double>(m, "train", "lr");
    c.train.steps = get_field<std::size_t>(m, "train", "steps");
    c.train.batch_size = get_field<std::size_t>(m, "train", "batch");
    c.train.seed = get_field<std::uint64_t>(m, "train", "seed");
    c.train.log_every = get_field<std::size_t>(m, "train", "log_every");
    c.train.early_stop = get_field<bool>(m, "train", "early_stop");

    c.merge.method = get_field<std::string>(m, "merge", "method");
    c.merge.lambda_vlm = get_field<double>(m, "merge", "lambda_vlm");
    c.merge.lambda_lrm = get_field<double>(m, "merge", "lambda_lrm");
    c.merge.layer_lambda_vlm = get_field<std::map<std::string, double>>(m, "merge", "layer_lambda_vlm");
    c.merge.layer_lambda_lrm = get_field<std::map<std::string, double>>(m, "merge", "layer_lambda_lrm");
    c.merge.ties_density = get_field<double>(m, "merge", "ties_density");
    c.merge.ties_lambda = get_field<double>(m, "merge", "ties_lambda");
    c.merge.dare_drop = get_field<double>(m, "merge", "dare_drop");
    c.merge.dare_seed = get_field<std::uint64_t>(m, "merge", "dare_seed");
    c.merge.ip_lambda_warn = get_field<double>(m, "merge", "ip_lambda_warn");

    c.eval.tasks = get_field<std::vector<std::string>>(m, "eval", "tasks");
    c.eval.n_samples = get_field<std::size_t>(m, "eval", "n_samples");
    c.eval.seed = get_field<std::uint64_t>(m, "eval", "seed");

    c.sweep.ranks = get_field<std::vector<std::size_t>>(m, "sweep", "ranks");
    c.sweep.lambdas = get_field<std::vector<double>>(m, "sweep", "lambdas");
    c.sweep.layer_set = get_field<std::vector<std::string>>(m, "sweep", "layer_set");

    c.simulate.lr = get_field<double>(m, "simulate", "lr");
    c.simulate.steps = get_field<std::size_t>(m, "simulate", "steps");
    c.simulate.fd_step = get_field<double>(m, "simulate", "fd_step");
    c.simulate.trajectory_every = get_field<std::size_t>(m, "simulate", "trajectory_every");

    c.workdir = get_field<std::string>(m, "paths", "workdir");
    c.validate();
    return c;
}

const std::vector<std::string> & merge_methods() {
    static const std::vector<std::string> methods = {"ta", "layerwise", "ties", "dare", "ip", "frism", "frism-scalar"};
    return methods;
}

void run_config::validate() const {
    model.arch.validate();
    frism.validate();
    train.validate();
    const auto & methods = merge_methods();
    if (std::find(methods.begin(), methods.end(), merge.method) == methods.end()) {
        throw config_error("merge.method '" + merge.method + "' is not one of ta|layerwise|ties|dare|ip|frism|frism-scalar");
    }
    if (!(merge.ties_density > 0.0 && merge.ties_density <= 1.0)) {
        throw config_error("merge.ties_density must be in (0, 1]");
    }
    if (!(merge.dare_drop >= 0.0 && merge.dare_drop < 1.0)) {
        throw config_error("merge.dare_drop must be in [0, 1)");
    }
    if (eval.tasks.empty()) throw config_error("eval.tasks must not be empty");
    for (const auto & t : eval.tasks) parse_task_kind(t);
    if (eval.n_samples == 0) throw config_error("eval.n_samples must be positive");
    if (!(simulate.lr > 0.0) || simulate.steps == 0 || simulate.trajectory_every == 0 || !(simulate.fd_step > 0.0)) {
        throw config_error("simulate.lr, steps, fd_step and trajectory_every must be positive");
    }
    if (workdir.empty()) throw config_error("paths.workdir must not be empty");
}

run_config load_run_config(const std::string & path) {
    if (path.empty()) {
        run_config c;
        c.validate();
        return c;
    }
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception & e) {
        throw config_error("config '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config::from_json(j);
}

// ---- workdir plumbing ----

namespace {

struct workdir {
    fs::path root;
    explicit workdir(const run_config & cfg) : root(cfg.workdir) {}
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path decomp() const { return root / "decomp"; }
    fs::path gates() const { return root / "gates"; }
    fs::path metrics() const { return root / "metrics"; }
    fs::path reports() const { return root / "reports"; }
};

// outputs of one command: checked up front, then written
class output_set {
public:
    output_set(const run_config & cfg, std::string stage, bool force) : cfg_(cfg), stage_(std::move(stage)), force_(force) {}

    fs::path add(const fs::path & p) {
        files_.push_back(p);
        dirs_.insert(p.parent_path().string());
        return p;
    }

    // refuses before any work is done if something would be overwritten
    void check() {
        for (const auto & d : dirs_) files_.push_back(fs::path(d) / ("config." + stage_ + ".json"));
        if (force_) return;
        for (const auto & f : files_) {
            if (fs::exists(f)) {
                throw io_error("refusing to overwrite existing output '" + f.string() + "' (pass --force)");
            }
        }
    }

    void write(const fs::path & p, const std::string & bytes) const {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) {
            throw io_error("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
        }
        write_file(p.string(), bytes);
    }

    void write_config_echo() const {
        const std::string text = cfg_.to_json().dump(2) + "\n";
        for (const auto & d : dirs_) write(fs::path(d) / ("config." + stage_ + ".json"), text);
    }

private:
    const run_config & cfg_;
    std::string stage_;
    bool force_;
    std::vector<fs::path> files_;
    std::set<std::string> dirs_;
};

void require_input(const fs::path & p, const std::string & hint) {
    if (!fs::exists(p)) {
        throw io_error("missing upstream artifact '" + p.string() + "' (" + hint + ")");
    }
}

model_params load_input_checkpoint(const fs::path & p) {
    require_input(p, "run the gen command first");
    return load_checkpoint(p.string());
}

model_triple load_triple(const workdir & wd) {
    model_triple t;
    t.base = load_input_checkpoint(wd.checkpoints() / "base.ckpt");
    t.vlm = load_input_checkpoint(wd.checkpoints() / "vlm.ckpt");
    t.lrm = load_input_checkpoint(wd.checkpoints() / "lrm.ckpt");
    return t;
}

std::string dump(const json & j) {
    return j.dump(2) + "\n";
}

synthetic_task eval_task(const run_config & cfg, const std::string & name) {
    return synthetic_task{parse_task_kind(name), cfg.eval.seed, cfg.model.arch.input_dim};
}

synthetic_task calibration_task(const run_config & cfg) {
    return synthetic_task{task_kind::task_v, cfg.train.seed, cfg.model.arch.input_dim};
}

std::string variant_tag(gate_variant v) {
    return v == gate_variant::subspace ? "subspace" : "scalar";
}

} // namespace

json evaluate_model(const run_config & cfg, const model_params & m, const model_params & vlm) {
    json out = json::object();
    for (const auto & t : cfg.eval.tasks) {
        out[t + "_accuracy"] = accuracy(m, eval_task(cfg, t).sample(cfg.eval.n_samples, 0));
    }
    out["calibration_kl"] = distill_loss(vlm, m, calibration_pool(calibration_task(cfg)));
    out["eval"] = {
        {"tasks", cfg.eval.tasks},
        {"n_samples", cfg.eval.n_samples},
        {"seed", cfg.eval.seed},
        {"calibration_size", k_calibration_size},
        {"calibration_seed", cfg.train.seed},
    };
    return out;
}

void validate_metrics(const json & m) {
    if (!m.is_object()) throw config_error("metrics must be a JSON object");
    for (const char * key : {"method", "checkpoint"}) {
        if (!m.contains(key) || !m[key].is_string()) throw config_error(std::string("metrics field '") + key + "' missing");
    }
    if (!m.contains("calibration_kl") || !m["calibration_kl"].is_number() || !(m["calibration_kl"].get<double>() >= 0.0)) {
        throw config_error("metrics field 'calibration_kl' missing or negative");
    }
    std::size_t accs = 0;
    for (const auto & [key, v] : m.items()) {
        if (key.size() > 9 && key.substr(key.size() - 9) == "_accuracy") {
            if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) {
                throw config_error("metrics field '" + key + "' is not an accuracy in [0, 1]");
            }
            ++accs;
        }
    }
    if (accs == 0) throw config_error("metrics carry no accuracy fields");
}

// ---- commands ----

void cmd_gen(const run_config & cfg, const command_options & opt) {
    const workdir wd(cfg);
    output_set out(cfg, "gen", opt.force);
    const std::vector<std::string> names = {"base", "vlm", "lrm"};
    for (const auto & n : names) {
        out.add(wd.checkpoints() / (n + ".ckpt"));
        out.add(wd.metrics() / (n + ".json"));
    }
    out.add(wd.checkpoints() / "provenance.json");
    out.add(wd.checkpoints() / "tasks.json");
    out.check();

    const model_triple t = make_triple(cfg.model.arch, cfg.model.seeds, cfg.model.epochs);
    const std::map<std::string, const model_params *> models = {{"base", &t.base}, {"vlm", &t.vlm}, {"lrm", &t.lrm}};

    json checksums = json::object();
    for (const auto & n : names) {
        const std::string bytes = encode_checkpoint(*models.at(n));
        out.write(wd.checkpoints() / (n + ".ckpt"), bytes);
        checksums[n + ".ckpt"] = sha256_hex(bytes);
    }
    json prov = {
        {"arch", arch_to_json(cfg.model.arch)},
        {"seeds", {{"base", cfg.model.seeds.base}, {"vlm", cfg.model.seeds.vlm}, {"lrm", cfg.model.seeds.lrm}}},
        {"epochs", {{"pretrain", cfg.model.epochs.pretrain}, {"finetune", cfg.model.epochs.finetune}}},
        {"sha256", checksums},
        {"fine_tune", {{"optimizer", "gd"}, {"lr", k_finetune_lr}, {"batch", k_finetune_batch}}},
    };
    out.write(wd.checkpoints() / "provenance.json", dump(prov));
    json tasks = {
        {"training",
         json::array({
             {{"model", "base"}, {"task", "generic"}, {"seed", cfg.model.seeds.base}, {"steps", cfg.model.epochs.pretrain}},
             {{"model", "vlm"}, {"task", "taskV"}, {"seed", cfg.model.seeds.vlm}, {"steps", cfg.model.epochs.finetune}},
             {{"model", "lrm"}, {"task", "taskR"}, {"seed", cfg.model.seeds.lrm}, {"steps", cfg.model.epochs.finetune},
              {"frozen", cfg.model.arch.frozen_layers}},
         })},
        {"evaluation", {{"tasks", cfg.eval.tasks}, {"seed", cfg.eval.seed}, {"n_samples", cfg.eval.n_samples}}},
        {"calibration", {{"task", "taskV"}, {"seed", cfg.train.seed}, {"size", k_calibration_size}, {"labels", false}}},
    };
    out.write(wd.checkpoints() / "tasks.json", dump(tasks));
    for (const auto & n : names) {
        json metrics = evaluate_model(cfg, *models.at(n), t.vlm);
        metrics["method"] = n;
        metrics["checkpoint"] = "checkpoints/" + n + ".ckpt";
        metrics["details"] = {{"reference", true}};
        validate_metrics(metrics);
        out.write(wd.metrics() / (n + ".json"), dump(metrics));
    }
    out.write_config_echo();
}

void cmd_merge(const run_config & cfg, const command_options & opt) {
    const workdir wd(cfg);
    const std::string method = cfg.merge.method;
    output_set out(cfg, "merge-" + method, opt.force);
    const fs::path ckpt_path = out.add(wd.checkpoints() / ("merged-" + method + ".ckpt"));
    const fs::path metrics_path = out.add(wd.metrics() / (method + ".json"));
    out.check();

    const model_triple t = load_triple(wd);
    const task_vector tau_vlm = compute_task_vector(t.vlm, t.base);
    const task_vector tau_lrm = compute_task_vector(t.lrm, t.base);

    model_params merged;
    json details = json::object();
    if (method == "ta") {
        merged = merge_task_arithmetic(t.base, tau_vlm, tau_lrm, cfg.merge.lambda_vlm, cfg.merge.lambda_lrm);
        details = {{"lambda_vlm", cfg.merge.lambda_vlm}, {"lambda_lrm", cfg.merge.lambda_lrm}};
    } else if (method == "layerwise") {
        auto lv = cfg.merge.layer_lambda_vlm;
        auto ll = cfg.merge.layer_lambda_lrm;
        for (const auto & layer : cfg.model.arch.merged_layers()) {
            lv.emplace(layer, cfg.merge.lambda_vlm);
            ll.emplace(layer, cfg.merge.lambda_lrm);
        }
        merged = merge_layer_wise(t.base, tau_vlm, tau_lrm, lv, ll);
        details = {{"lambda_vlm", lv}, {"lambda_lrm", ll}};
    } else if (method == "ties") {
        merged = ties_merge(t.base, {tau_vlm, tau_lrm}, cfg.merge.ties_density, cfg.merge.ties_lambda);
        details = {{"density", cfg.merge.ties_density}, {"lambda", cfg.merge.ties_lambda}};
    } else if (method == "dare") {
        const task_vector dv = dare(tau_vlm, cfg.merge.dare_drop, cfg.merge.dare_seed);
        const task_vector dl = dare(tau_lrm, cfg.merge.dare_drop, cfg.merge.dare_seed + 1);
        merged = merge_task_arithmetic(t.base, dv, dl, cfg.merge.lambda_vlm, cfg.merge.lambda_lrm);
        details = {{"drop", cfg.merge.dare_drop},
                   {"seed", cfg.merge.dare_seed},
                   {"lambda_vlm", cfg.merge.lambda_vlm},
                   {"lambda_lrm", cfg.merge.lambda_lrm}};
    } else if (method == "ip") {
        ip_merge_result r = merge_ip(t.base, tau_vlm, tau_lrm, cfg.merge.ip_lambda_warn);
        merged = std::move(r.merged);
        json coefs = json::object();
        for (const auto & [layer, c] : r.coefficients) coefs[layer] = {{"lambda", c.lambda}, {"flagged", c.flagged}};
        details = {{"coefficients", coefs}, {"lambda_warn", cfg.merge.ip_lambda_warn}};
    } else {
        frism_config fc = cfg.frism;
        fc.variant = method == "frism" ? gate_variant::subspace : gate_variant::scalar_gate;
        const subspace_decomposition d = decompose(tau_lrm, fc);
        const fs::path gpath = wd.gates() / ("frism-" + variant_tag(fc.variant) + ".gates");
        gate_set gates;
        std::string source = "init";
        if (!opt.init_gates && fs::exists(gpath)) {
            gates = gates_from_container(read_container(gpath.string()));
            if (gates.variant != fc.variant) {
                throw format_error("'" + gpath.string() + "' holds " + gate_variant_name(gates.variant) + " gates");
            }
            check_gates(d, gates);
            source = "trained";
        } else {
            gates = init_gates(d, fc.variant);
        }
        merged = materialize(t.vlm, d, gates, fc);
        details = {{"variant", gate_variant_name(fc.variant)},
                   {"lambda_lrm", fc.lambda_lrm},
                   {"alpha", fc.alpha},
                   {"gates", source},
                   {"mean_gate_activation", mean_gate_activation(gates)},
                   {"trainable_parameters", gates.parameter_count()}};
    }

    const std::string bytes = encode_checkpoint(merged);
    out.write(ckpt_path, bytes);
    json metrics = evaluate_model(cfg, merged, t.vlm);
    metrics["method"] = method;
    metrics["checkpoint"] = "checkpoints/merged-" + method + ".ckpt";
    metrics["checkpoint_sha256"] = sha256_hex(bytes);
    metrics["details"] = details;
    validate_metrics(metrics);
    out.write(metrics_path, dump(metrics));
    out.write_config_echo();
}

void cmd_train(const run_config & cfg, const command_options & opt) {
    const workdir wd(cfg);
    const std::string tag = variant_tag(cfg.frism.variant);
    output_set out(cfg, "train-" + tag, opt.force);
    const fs::path dpath = out.add(wd.decomp() / ("frism-" + tag + ".decomp"));
    const fs::path gpath = out.add(wd.gates() / ("frism-" + tag + ".gates"));
    const fs::path rpath = out.add(wd.gates() / ("train-" + tag + ".jsonl"));
    out.check();

    const model_triple t = load_triple(wd);
    const task_vector tau_lrm = compute_task_vector(t.lrm, t.base);
    const subspace_decomposition d = decompose(tau_lrm, cfg.frism);
    out.write(dpath, encode_container(decomposition_to_container(d)));

    const train_result r = train_gates(t.vlm, d, cfg.train, cfg.frism, calibration_task(cfg));
    out.write(gpath, encode_container(gates_to_container(r.gates)));
    out.write(rpath, r.report.to_jsonl());
    out.write_config_echo();
    std::fprintf(stderr, "train: %zu steps in %.2f s, final distill %.6f inject %.6f\n", r.report.steps_run,
                 r.report.wall_seconds, r.report.final_state.distill, r.report.final_state.inject);
}

void cmd_sweep(const run_config & cfg, const command_options & opt) {
    const workdir wd(cfg);
    output_set out(cfg, "sweep", opt.force);
    const fs::path csv = out.add(wd.reports() / "sweep.csv");
    const fs::path summary = out.add(wd.reports() / "sweep_summary.json");
    out.check();

    const model_triple t = load_triple(wd);
    const task_vector tau_lrm = compute_task_vector(t.lrm, t.base);
    const batch bv = eval_task(cfg, "taskV").sample(cfg.eval.n_samples, 0);
    const batch br = eval_task(cfg, "taskR").sample(cfg.eval.n_samples, 0);
    const model_evaluator ev = [&](const model_params & m) { return std::make_pair(accuracy(m, bv), accuracy(m, br)); };
    const auto rows = rank_injection_sweep(t.vlm, tau_lrm, cfg.sweep.ranks, cfg.sweep.lambdas, ev, cfg.sweep.layer_set);
    out.write(csv, sweep_to_csv(rows));

    json best = json::object();
    std::set<double> distinct;
    for (std::size_t n : cfg.sweep.ranks) {
        const double l = sweep_best_lambda(rows, n);
        best[std::to_string(n)] = l;
        distinct.insert(l);
    }
    out.write(summary, dump({{"best_lambda_taskR", best}, {"distinct_best_lambdas", distinct.size()}}));
    out.write_config_echo();
}

void cmd_simulate(const run_config & cfg, const command_options & opt) {
    const workdir wd(cfg);
    output_set out(cfg, "simulate", opt.force);
    const fs::path regimes = out.add(wd.reports() / "regimes.csv");
    const fs::path traj = out.add(wd.reports() / "trajectories.csv");
    const fs::path curv = out.add(wd.reports() / "curvature.json");
    out.check();

    const model_triple t = load_triple(wd);
    const task_vector tau_vlm = compute_task_vector(t.vlm, t.base);
    const task_vector tau_lrm = compute_task_vector(t.lrm, t.base);
    const subspace_decomposition d = decompose(tau_lrm, cfg.frism);
    const batch pool = calibration_pool(calibration_task(cfg));

    quadratic_landscape land;
    land.alpha = cfg.frism.alpha;
    land.lambda_lrm = cfg.frism.lambda_lrm;
    json layers = json::object();
    for (const auto & [name, ld] : d.layers) {
        if (ld.degenerate) continue;
        const curvature_estimate est = estimate_curvatures(t.vlm, ld, pool, cfg.simulate.fd_step);
        const distance_result dist = distance_proxy(ld, tau_vlm.delta_tensor(name + ".w"), std::vector<double>(ld.rank, 0.0));
        double off = 0.0, diag = 0.0;
        for (std::size_t i = 0; i < ld.rank; ++i) {
            for (std::size_t j = 0; j < ld.rank; ++j) {
                if (i == j) diag = std::max(diag, std::fabs(est.cross[i][j]));
                else off = std::max(off, std::fabs(est.cross[i][j]));
            }
        }
        layers[name] = {
            {"first_index", land.size()},
            {"rank", ld.rank},
            {"h", est.h},
            {"norm_sq", dist.norms_sq},
            {"tau_vlm_cosine", dist.subspace_cross},
            {"max_offdiag_curvature", off},
            {"max_diag_curvature", diag},
        };
        for (std::size_t i = 0; i < ld.rank; ++i) {
            // finite-difference noise can push a flat direction slightly below zero
            land.curvatures.push_back(std::max(0.0, est.h[i]));
            land.subspace_norms_sq.push_back(dist.norms_sq[i]);
        }
    }
    const auto rows = regime_map(land, cfg.simulate.lr, cfg.simulate.steps);
    out.write(regimes, regimes_to_csv(rows));

    const auto path = simulate_gate_dynamics(land, std::vector<double>(land.size(), 0.0), cfg.simulate.lr, cfg.simulate.steps);
    std::string tcsv = "step,subspace_index,gate\n";
    char buf[128];
    for (std::size_t s = 0; s < path.size(); ++s) {
        if (s % cfg.simulate.trajectory_every != 0 && s + 1 != path.size()) continue;
        for (std::size_t i = 0; i < path[s].size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.10g\n", s, i, path[s][i]);
            tcsv += buf;
        }
    }
    out.write(traj, tcsv);
    out.write(curv, dump({{"layers", layers}, {"alpha", land.alpha}, {"lambda_lrm", land.lambda_lrm}}));
    out.write_config_echo();
}

std::string cmd_eval(const run_config & cfg, const std::string & checkpoint_path) {
    const workdir wd(cfg);
    require_input(checkpoint_path, "pass an existing checkpoint");
    const std::string bytes = read_file(checkpoint_path);
    const model_params m = decode_checkpoint(bytes);
    const model_params vlm = load_input_checkpoint(wd.checkpoints() / "vlm.ckpt");
    json metrics = evaluate_model(cfg, m, vlm);
    metrics["method"] = "eval";
    metrics["checkpoint"] = checkpoint_path;
    metrics["checkpoint_sha256"] = sha256_hex(bytes);
    validate_metrics(metrics);
    return dump(metrics);
}

void cmd_report(const run_config & cfg, const command_options & opt) {
    const workdir wd(cfg);
    output_set out(cfg, "report", opt.force);
    const fs::path md = out.add(wd.reports() / "summary.md");
    out.check();

    require_input(wd.metrics(), "run gen and merge first");
    std::map<std::string, json> rows;
    for (const auto & entry : fs::directory_iterator(wd.metrics())) {
        const std::string name = entry.path().filename().string();
        if (entry.path().extension() != ".json" || name.rfind("config.", 0) == 0) continue;
        json m;
        try {
            m = json::parse(read_file(entry.path().string()));
        } catch (const json::exception & e) {
            throw format_error("metrics file '" + entry.path().string() + "' is not valid JSON: " + e.what());
        }
        validate_metrics(m);
        rows[entry.path().stem().string()] = m;
    }
    if (rows.empty()) {
        throw io_error("no metrics in '" + wd.metrics().string() + "' (run gen and merge first)");
    }
    std::vector<std::string> order;
    for (const char * ref : {"base", "vlm", "lrm"}) {
        if (rows.count(ref)) order.push_back(ref);
    }
    for (const auto & [name, m] : rows) {
        if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    }

    auto cell = [](const json & m, const std::string & key) -> std::string {
        if (!m.contains(key)) return "n/a";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", m[key].get<double>());
        return buf;
    };
    std::string text = "| method | taskV | taskR | avg | calibration KL |\n|---|---|---|---|---|\n";
    for (const auto & name : order) {
        const json & m = rows[name];
        std::string avg = "n/a";
        if (m.contains("taskV_accuracy") && m.contains("taskR_accuracy")) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f",
                          0.5 * (m["taskV_accuracy"].get<double>() + m["taskR_accuracy"].get<double>()));
            avg = buf;
        }
        char kl[32];
        std::snprintf(kl, sizeof(kl), "%.6f", m["calibration_kl"].get<double>());
        text += "| " + name + " | " + cell(m, "taskV_accuracy") + " | " + cell(m, "taskR_accuracy") + " | " + avg + " | " + kl + " |\n";
    }
    out.write(md, text);
    out.write_config_echo();
}

// ---- lock ----

workdir_lock::workdir_lock(const std::string & dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw io_error("cannot create workdir '" + dir + "': " + ec.message());
    }
    path_ = (fs::path(dir) / ".frism.lock").string();
    std::FILE * f = std::fopen(path_.c_str(), "wx");
    if (!f) {
        const std::string p = path_;
        path_.clear();
        throw io_error("workdir is locked by another run: '" + p + "' exists (delete it if no run is active)");
    }
    std::fclose(f);
}

workdir_lock::~workdir_lock() {
    if (!path_.empty()) {
        std::error_code ec;
        fs::remove(path_, ec);
    }
}

} // namespace frism
