#pragma once

#include "frism/frism.hpp"
#include "frism/model.hpp"
#include "frism/trainer.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace frism {

struct model_section {
    arch_spec arch;
    triple_seeds seeds{10, 11, 12};
    triple_epochs epochs;
};

struct merge_section {
    std::string method = "ta";
    double lambda_vlm = 1.0;
    double lambda_lrm = 0.2;
    std::map<std::string, double> layer_lambda_vlm;   // layer-wise; empty means lambda_vlm everywhere
    std::map<std::string, double> layer_lambda_lrm;
    double ties_density = 0.5;
    double ties_lambda = 1.0;
    double dare_drop = 0.5;
    std::uint64_t dare_seed = 0;
    double ip_lambda_warn = k_ip_lambda_warn;
};

struct eval_section {
    std::vector<std::string> tasks = {"taskV", "taskR"};
    std::size_t n_samples = 4000;
    std::uint64_t seed = 1234;
};

struct sweep_section {
    std::vector<std::size_t> ranks = {1, 2, 3};
    std::vector<double> lambdas = {0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0};
    std::vector<std::string> layer_set;   // empty: every merged layer at once
};

struct simulate_section {
    double lr = 0.1;
    std::size_t steps = 2000;
    double fd_step = 1e-3;
    std::size_t trajectory_every = 100;
};

struct run_config {
    model_section model;
    frism_config frism;
    train_config train;
    merge_section merge;
    eval_section eval;
    sweep_section sweep;
    simulate_section simulate;
    std::string workdir = "work";

    nlohmann::json to_json() const;
    // rejects unknown keys, listing all of them in one config_error
    static run_config from_json(const nlohmann::json & j);
    void validate() const;
};

run_config load_run_config(const std::string & path);   // empty path: defaults

struct command_options {
    bool force = false;
    bool init_gates = false;   // merge --method frism*: ignore trained gates
};

const std::vector<std::string> & merge_methods();

// every command writes under cfg.workdir/{checkpoints,decomp,gates,metrics,reports}
// and echoes the resolved config as config.<stage>.json into each directory it writes
void cmd_gen(const run_config & cfg, const command_options & opt);
void cmd_merge(const run_config & cfg, const command_options & opt);
void cmd_train(const run_config & cfg, const command_options & opt);
void cmd_sweep(const run_config & cfg, const command_options & opt);
void cmd_simulate(const run_config & cfg, const command_options & opt);
std::string cmd_eval(const run_config & cfg, const std::string & checkpoint_path);   // metrics JSON text
void cmd_report(const run_config & cfg, const command_options & opt);

// metrics JSON for one model: accuracy on each configured task plus KL(theta_vlm || model)
// on the calibration pool (taskV, seed train.seed, 512 samples)
nlohmann::json evaluate_model(const run_config & cfg, const model_params & m, const model_params & vlm);

// throws config_error naming the first missing or mistyped field
void validate_metrics(const nlohmann::json & metrics);

// exclusive lock on a workdir, released on destruction
class workdir_lock {
public:
    explicit workdir_lock(const std::string & workdir);
    ~workdir_lock();
    workdir_lock(const workdir_lock &) = delete;
    workdir_lock & operator=(const workdir_lock &) = delete;

private:
    std::string path_;
};

} // namespace frism
