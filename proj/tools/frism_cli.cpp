#include "frism/checkpoint.hpp"
#include "frism/error.hpp"
#include "frism/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

// single machine-parsable line, message JSON-escaped
int report_error(const std::string & kind, const std::string & message) {
    std::fprintf(stderr, "error kind=%s message=%s\n", kind.c_str(), nlohmann::json(message).dump().c_str());
    return 2;
}

struct overrides {
    std::optional<std::string> workdir;
    std::optional<std::size_t> pretrain, finetune;
    std::optional<std::uint64_t> seed_base, seed_vlm, seed_lrm;
    std::optional<std::string> method, variant;
    std::optional<double> lambda_vlm, lambda_lrm, density, drop, alpha, lr;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps, rank_truncation;
    std::vector<double> lambdas;
    std::vector<std::size_t> ranks;
    std::vector<std::string> tasks;
};

void apply(frism::run_config & cfg, const overrides & o, const std::string & cmd) {
    if (o.workdir) cfg.workdir = *o.workdir;
    if (o.pretrain) cfg.model.epochs.pretrain = *o.pretrain;
    if (o.finetune) cfg.model.epochs.finetune = *o.finetune;
    if (o.seed_base) cfg.model.seeds.base = *o.seed_base;
    if (o.seed_vlm) cfg.model.seeds.vlm = *o.seed_vlm;
    if (o.seed_lrm) cfg.model.seeds.lrm = *o.seed_lrm;
    if (o.method) cfg.merge.method = *o.method;
    if (o.variant) cfg.frism.variant = frism::parse_gate_variant(*o.variant);
    if (o.lambda_vlm) cfg.merge.lambda_vlm = *o.lambda_vlm;
    if (o.lambda_lrm) {
        cfg.merge.lambda_lrm = *o.lambda_lrm;
        if (cmd != "merge") cfg.frism.lambda_lrm = *o.lambda_lrm;
    }
    if (o.density) cfg.merge.ties_density = *o.density;
    if (o.drop) cfg.merge.dare_drop = *o.drop;
    if (o.seed) cfg.merge.dare_seed = *o.seed;
    if (o.alpha) cfg.frism.alpha = *o.alpha;
    if (o.lr) cfg.train.learning_rate = *o.lr;
    if (o.steps) cfg.train.steps = *o.steps;
    if (o.rank_truncation) cfg.frism.rank_truncation = *o.rank_truncation;
    if (!o.lambdas.empty()) cfg.sweep.lambdas = o.lambdas;
    if (!o.ranks.empty()) cfg.sweep.ranks = o.ranks;
    if (!o.tasks.empty()) cfg.eval.tasks = o.tasks;
    cfg.validate();
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"frism: spectral merging of a reasoning task vector into a toy perception model"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    bool force = false;
    overrides o;
    app.add_option("--config", config_path, "JSON run config (defaults when omitted)");
    app.add_flag("--force", force, "overwrite existing outputs");
    app.add_option("--workdir", o.workdir, "override paths.workdir");

    auto * gen = app.add_subcommand("gen", "train the base/vlm/lrm triple and write checkpoints");
    gen->add_option("--pretrain-epochs", o.pretrain);
    gen->add_option("--finetune-epochs", o.finetune);
    gen->add_option("--seed-base", o.seed_base);
    gen->add_option("--seed-vlm", o.seed_vlm);
    gen->add_option("--seed-lrm", o.seed_lrm);

    bool init_gates = false;
    auto * merge = app.add_subcommand("merge", "merge the triple with one method and record metrics");
    merge->add_option("--method", o.method, "ta|layerwise|ties|dare|ip|frism|frism-scalar");
    merge->add_option("--lambda-vlm", o.lambda_vlm);
    merge->add_option("--lambda-lrm", o.lambda_lrm);
    merge->add_option("--density", o.density, "ties density");
    merge->add_option("--drop", o.drop, "dare drop rate");
    merge->add_option("--seed", o.seed, "dare seed");
    merge->add_flag("--init-gates", init_gates, "frism: use zero gates even if trained gates exist");

    auto * train = app.add_subcommand("train", "decompose the reasoning task vector and train gates");
    train->add_option("--variant", o.variant, "subspace|scalar_gate");
    train->add_option("--alpha", o.alpha);
    train->add_option("--lambda-lrm", o.lambda_lrm);
    train->add_option("--lr", o.lr);
    train->add_option("--steps", o.steps);
    train->add_option("--rank-truncation", o.rank_truncation);

    auto * sweep = app.add_subcommand("sweep", "rank-n injection sweep");
    sweep->add_option("--lambdas", o.lambdas);
    sweep->add_option("--ranks", o.ranks);

    auto * simulate = app.add_subcommand("simulate", "quadratic gate dynamics on curvatures measured from the triple");
    simulate->add_option("--alpha", o.alpha);
    simulate->add_option("--lambda-lrm", o.lambda_lrm);

    std::string checkpoint, out_path;
    auto * eval = app.add_subcommand("eval", "evaluate one checkpoint and print metrics JSON");
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--tasks", o.tasks);
    eval->add_option("--out", out_path, "write metrics here instead of stdout");

    auto * report = app.add_subcommand("report", "render reports/summary.md from the metrics directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        return report_error("usage", e.what());
    }

    try {
        frism::run_config cfg = frism::load_run_config(config_path);
        const std::string cmd = app.get_subcommands().front()->get_name();
        apply(cfg, o, cmd);
        const frism::command_options opt{force, init_gates};

        if (eval->parsed()) {
            const std::string text = frism::cmd_eval(cfg, checkpoint);
            if (out_path.empty()) {
                std::fwrite(text.data(), 1, text.size(), stdout);
            } else {
                frism::write_file(out_path, text);
            }
            return 0;
        }

        frism::workdir_lock lock(cfg.workdir);
        if (gen->parsed()) frism::cmd_gen(cfg, opt);
        else if (merge->parsed()) frism::cmd_merge(cfg, opt);
        else if (train->parsed()) frism::cmd_train(cfg, opt);
        else if (sweep->parsed()) frism::cmd_sweep(cfg, opt);
        else if (simulate->parsed()) frism::cmd_simulate(cfg, opt);
        else if (report->parsed()) frism::cmd_report(cfg, opt);
        return 0;
    } catch (const frism::error & e) {
        return report_error(frism::error_kind_name(e.kind()), e.what());
    } catch (const std::exception & e) {
        return report_error("internal", e.what());
    }
}
