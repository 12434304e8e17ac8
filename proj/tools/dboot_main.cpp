#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dboot/trainer.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::string resume_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--resume", args.resume_path, "checkpoint to resume from");
    auto* s = cmd->add_option("--seed", args.seed, "run seed");
    cmd->callback([&args, s]() { args.seed_set = s->count() > 0; });
}

dboot::RunConfig make_config(const CommonArgs& args) {
    dboot::RunConfig cfg;
    if (!args.config_path.empty()) cfg = dboot::load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    cfg.validate();
    return cfg;
}

dboot::TrainState make_state(const dboot::RunConfig& cfg, const CommonArgs& args) {
    if (!args.resume_path.empty()) return dboot::load_checkpoint(args.resume_path);
    return dboot::init_state(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"object-level bootstrapping on synthetic scenes"};
    app.require_subcommand(1);

    CommonArgs pretrain_args, knn_args, probe_args, debug_args;
    auto* pretrain = app.add_subcommand("pretrain", "self-distillation pretraining");
    add_common(pretrain, pretrain_args);
    auto* knn = app.add_subcommand("eval-knn", "dense nearest-neighbor segmentation");
    add_common(knn, knn_args);
    auto* probe = app.add_subcommand("eval-probe", "linear probe segmentation");
    add_common(probe, probe_args);
    auto* debug = app.add_subcommand("cluster-debug", "dump one pair's clustering");
    add_common(debug, debug_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain->parsed()) {
            auto cfg = make_config(pretrain_args);
            auto summary = dboot::run_pretrain(cfg, pretrain_args.out_dir,
                                               pretrain_args.resume_path);
            std::cout << "metrics: " << summary.metrics_path << "\n"
                      << "checkpoint: " << summary.checkpoint_path << "\n";
            if (!summary.epoch_loss.empty())
                std::cout << "final epoch loss: " << summary.epoch_loss.back() << "\n";
        } else if (knn->parsed()) {
            auto cfg = make_config(knn_args);
            auto state = make_state(cfg, knn_args);
            std::filesystem::create_directories(knn_args.out_dir);
            auto rows = dboot::run_eval_knn(state, cfg, knn_args.out_dir + "/knn.csv");
            for (const auto& r : rows)
                std::cout << "ratio " << r.ratio << ": mIoU " << r.miou << "\n";
        } else if (probe->parsed()) {
            auto cfg = make_config(probe_args);
            auto state = make_state(cfg, probe_args);
            std::filesystem::create_directories(probe_args.out_dir);
            auto metrics =
                dboot::run_eval_probe(state, cfg, probe_args.out_dir + "/probe.csv");
            std::cout << "probe mIoU " << metrics.miou << "\n";
        } else if (debug->parsed()) {
            auto cfg = make_config(debug_args);
            auto state = make_state(cfg, debug_args);
            std::filesystem::create_directories(debug_args.out_dir);
            std::string path = debug_args.out_dir + "/cluster_debug.json";
            dboot::cluster_debug_dump(cfg, state.teacher, cfg.seed, path);
            std::cout << "wrote " << path << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
