#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "shadow/harness.hpp"

namespace {

// Every subcommand takes an optional config file plus flag overrides; flags
// win over the file.
void add_config_options(CLI::App* cmd, std::string& config_path, shadow::RunConfig& overrides,
                        std::vector<std::string>& set_keys) {
    cmd->add_option("--config", config_path, "JSON config file");
    auto track = [&set_keys](const std::string& key) {
        return [&set_keys, key](auto) { set_keys.push_back(key); };
    };
    cmd->add_option("--tables", overrides.tables)->each(track("tables"));
    cmd->add_option("--examples", overrides.examples)->each(track("examples"));
    cmd->add_option("--values-dir", overrides.values_dir)->each(track("values_dir"));
    cmd->add_option("--checkpoint", overrides.checkpoint)->each(track("checkpoint"));
    cmd->add_option("--log-dir", overrides.log_dir)->each(track("log_dir"));
    cmd->add_option("--synthetic", overrides.synthetic)->each(track("synthetic"));
    cmd->add_option("--d", overrides.d)->each(track("d"));
    cmd->add_option("--heads", overrides.heads)->each(track("heads"));
    cmd->add_option("--basis", overrides.basis)->each(track("basis"));
    cmd->add_option("--gpnn-layers", overrides.gpnn_layers)->each(track("gpnn_layers"));
    cmd->add_option("--rat-layers", overrides.rat_layers)->each(track("rat_layers"));
    cmd->add_option("--lr", overrides.lr)->each(track("lr"));
    cmd->add_option("--dropout", overrides.dropout)->each(track("dropout"));
    cmd->add_option("--batch", overrides.batch)->each(track("batch"));
    cmd->add_option("--epochs", overrides.epochs)->each(track("epochs"));
    cmd->add_option("--eval-every", overrides.eval_every)->each(track("eval_every"));
    cmd->add_option("--beam", overrides.beam)->each(track("beam"));
    cmd->add_option("--seed", overrides.seed)->each(track("seed"));
}

shadow::RunConfig resolve(const std::string& config_path, const shadow::RunConfig& overrides,
                          const std::vector<std::string>& set_keys) {
    shadow::RunConfig cfg;
    if (!config_path.empty()) cfg = shadow::RunConfig::from_file(config_path);
    for (const std::string& key : set_keys) {
        if (key == "tables") cfg.tables = overrides.tables;
        else if (key == "examples") cfg.examples = overrides.examples;
        else if (key == "values_dir") cfg.values_dir = overrides.values_dir;
        else if (key == "checkpoint") cfg.checkpoint = overrides.checkpoint;
        else if (key == "log_dir") cfg.log_dir = overrides.log_dir;
        else if (key == "synthetic") cfg.synthetic = overrides.synthetic;
        else if (key == "d") cfg.d = overrides.d;
        else if (key == "heads") cfg.heads = overrides.heads;
        else if (key == "basis") cfg.basis = overrides.basis;
        else if (key == "gpnn_layers") cfg.gpnn_layers = overrides.gpnn_layers;
        else if (key == "rat_layers") cfg.rat_layers = overrides.rat_layers;
        else if (key == "lr") cfg.lr = overrides.lr;
        else if (key == "dropout") cfg.dropout = overrides.dropout;
        else if (key == "batch") cfg.batch = overrides.batch;
        else if (key == "epochs") cfg.epochs = overrides.epochs;
        else if (key == "eval_every") cfg.eval_every = overrides.eval_every;
        else if (key == "beam") cfg.beam = overrides.beam;
        else if (key == "seed") cfg.seed = overrides.seed;
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graph-projected text-to-SQL toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    shadow::RunConfig overrides;
    std::vector<std::string> set_keys;

    CLI::App* train = app.add_subcommand("train", "train a model and save the best checkpoint");
    add_config_options(train, config_path, overrides, set_keys);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on an example set");
    add_config_options(eval, config_path, overrides, set_keys);

    CLI::App* transpile =
        app.add_subcommand("transpile", "parse and re-emit 'db_id<TAB>sql' lines from stdin");
    add_config_options(transpile, config_path, overrides, set_keys);

    CLI::App* diagnose = app.add_subcommand(
        "diagnose-abstraction", "cosine grid between two questions' projected encodings");
    add_config_options(diagnose, config_path, overrides, set_keys);
    std::string question_a, question_b, db_id;
    diagnose->add_option("--question-a", question_a)->required();
    diagnose->add_option("--question-b", question_b)->required();
    diagnose->add_option("--db", db_id)->required();

    CLI::App* subsample =
        app.add_subcommand("subsample", "write a seeded random subset of the examples file");
    add_config_options(subsample, config_path, overrides, set_keys);
    double fraction = 1.0;
    std::string out_path;
    subsample->add_option("--fraction", fraction)->required();
    subsample->add_option("--out", out_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        shadow::RunConfig cfg = resolve(config_path, overrides, set_keys);
        cfg.validate();
        if (train->parsed()) return shadow::cmd_train(cfg, std::cout);
        if (eval->parsed()) return shadow::cmd_eval(cfg, std::cout);
        if (transpile->parsed()) {
            return shadow::cmd_transpile(cfg, std::cin, std::cout, std::cerr);
        }
        if (diagnose->parsed()) {
            return shadow::cmd_diagnose_abstraction(cfg, question_a, question_b, db_id, std::cout);
        }
        if (subsample->parsed()) {
            return shadow::cmd_subsample(cfg, fraction, out_path, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
