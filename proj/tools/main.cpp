#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "koopsafe/config.hpp"
#include "koopsafe/errors.hpp"
#include "koopsafe/harness.hpp"
#include "koopsafe/version.hpp"

namespace {

struct Args {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool out_set = false;
};

koopsafe::ExperimentConfig resolve_config(const Args& a) {
    koopsafe::ExperimentConfig cfg;
    if (!a.config_path.empty()) cfg = koopsafe::load_config(a.config_path);
    if (a.seed_set) cfg.seed = a.seed;
    if (a.out_set) cfg.out_dir = a.out_dir;
    koopsafe::validate_config(cfg);
    return cfg;
}

void add_common(CLI::App* cmd, Args& a) {
    cmd->add_option("--config", a.config_path, "experiment config JSON")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", a.out_dir, "output directory (overrides config)");
    cmd->add_option("--seed", a.seed, "global seed (overrides config)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep-Koopman safety command governor experiments"};
    app.set_version_flag("--version", std::string("koopsafe ") + koopsafe::kToolVersion);
    app.require_subcommand(1);

    Args args;
    CLI::App* collect = app.add_subcommand("collect", "generate the trajectory corpus");
    CLI::App* train = app.add_subcommand("train", "train the Koopman model on the corpus");
    CLI::App* eval = app.add_subcommand("eval", "score model and baselines on held-out data");
    CLI::App* govern = app.add_subcommand("govern", "run the governed double-turn scenario");
    for (CLI::App* cmd : {collect, train, eval, govern}) add_common(cmd, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    args.seed_set = app.get_subcommands()[0]->count("--seed") > 0;
    args.out_set = app.get_subcommands()[0]->count("--out") > 0;

    try {
        const koopsafe::ExperimentConfig cfg = resolve_config(args);
        if (collect->parsed()) {
            const koopsafe::CollectSummary s = koopsafe::cmd_collect(cfg);
            std::printf("collect: %d files, %lld rows, corpus %s\n", s.files, s.rows,
                        s.hash.c_str());
        } else if (train->parsed()) {
            const koopsafe::TrainSummary s = koopsafe::cmd_train(cfg);
            std::printf("train: %d epochs, best val L1 %.6g, model %s/model.json\n",
                        static_cast<int>(s.curve.size()),
                        s.model.train_meta.best_val_l1, cfg.out_dir.c_str());
        } else if (eval->parsed()) {
            const koopsafe::EvalReport r = koopsafe::cmd_eval(cfg);
            std::printf("eval: %d rows, worse mass side %s, report %s/eval_report.json\n",
                        static_cast<int>(r.rows.size()), r.worse_mass_side.c_str(),
                        cfg.out_dir.c_str());
        } else {
            const koopsafe::GovernSummary s = koopsafe::cmd_govern(cfg);
            for (std::size_t i = 0; i < s.variants.size(); ++i) {
                double min_h = 1e300;
                for (const koopsafe::GovernorResult& g : s.runs[i].log)
                    for (double h : g.h_before) min_h = std::min(min_h, h);
                std::printf("govern: %s min h %.4f\n", s.variants[i].c_str(), min_h);
            }
        }
        return 0;
    } catch (const koopsafe::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
