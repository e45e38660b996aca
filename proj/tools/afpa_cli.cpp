// afpa: synthetic corpus generation, training, evaluation and attention export.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "afpa/commands.hpp"

namespace cmd = afpa::commands;

int main(int argc, char** argv) {
    cmd::tune_allocator();
    CLI::App app{"Anomalous machine-sound detection with frequency-pattern attention"};
    app.require_subcommand(1);

    cmd::Overrides ov;
    std::string config_path;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    bool force = false;
    std::string out_path, data_dir, checkpoint, wav;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "TOML-style config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Seed for generation, initialization and shuffling");
    };

    auto* synth = app.add_subcommand("synth", "Write the synthetic machine-sound corpus");
    add_config(synth);
    synth->add_option("--out", out_path, "Output corpus directory")->required();
    synth->add_flag("--force", force, "Overwrite a non-empty output directory");

    auto* train = app.add_subcommand("train", "Train a model on the train_normal clips of a corpus");
    add_config(train);
    train->add_option("data_dir", data_dir, "Corpus root")->required();
    train->add_option("--out", out_path, "Checkpoint directory")->required();
    train->add_option("--epochs", epochs, "Override trainer.epochs")->check(CLI::PositiveNumber);
    train->add_flag("--no-afpa", ov.no_afpa, "Train the backbone without the attention stage");

    auto* eval = app.add_subcommand("eval", "Score the test clips and report AUC / pAUC");
    eval->add_option("checkpoint", checkpoint, "Checkpoint directory")->required();
    eval->add_option("data_dir", data_dir, "Corpus root")->required();
    eval->add_option("--out", out_path, "Output prefix for scores and report files")->required();

    auto* attn = app.add_subcommand("attention", "Export the frequency pattern maps for one clip");
    attn->add_option("checkpoint", checkpoint, "Checkpoint directory")->required();
    attn->add_option("wav", wav, "Input WAV file")->required();
    attn->add_option("--out", out_path, "Output prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    return cmd::run_guarded(
        [&] {
            auto resolve = [&](CLI::App* sub) {
                if (!config_path.empty()) ov.config_path = config_path;
                if (sub->count("--seed")) ov.seed = seed;
                if (sub->get_option_no_throw("--epochs") && sub->count("--epochs")) ov.epochs = epochs;
                auto cfg = cmd::resolve_config(ov);
                cmd::print_config(std::cout, cfg);
                return cfg;
            };
            if (*synth) {
                cmd::cmd_synth(resolve(synth), out_path, force, std::cout);
            } else if (*train) {
                const auto threads = cmd::worker_threads();
                cmd::cmd_train(resolve(train), data_dir, out_path, threads, std::cout);
            } else if (*eval) {
                cmd::cmd_eval(checkpoint, data_dir, out_path, cmd::worker_threads(), std::cout);
            } else if (*attn) {
                cmd::cmd_attention(checkpoint, wav, out_path, std::cout);
            }
        },
        std::cerr);
}
