// Command-line front end for the robust graph-NAS pipeline:
//   gen-data -> train-supernet -> search -> retrain-eval -> report
// Every stage reads the same JSON config (--config, overridable via --set) and
// writes fixed-name artifacts under --out.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gnas/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON run configuration");
    cmd->add_option("--set", args.overrides,
                    "config override as dotted.key=value (repeatable)");
    cmd->add_option("--out", args.out_dir, "output directory for run artifacts");
}

gnas::RunConfig resolve(const CommonArgs& args) {
    return gnas::load_config(args.config_path, args.overrides, args.out_dir);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"robust neural architecture search for graph neural networks"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, search_args, eval_args, report_args;
    std::string genome_path;

    CLI::App* gen = app.add_subcommand("gen-data", "write the run's dataset files + manifest");
    add_common(gen, gen_args);

    CLI::App* train =
        app.add_subcommand("train-supernet", "train the one-shot model by single-path sampling");
    add_common(train, train_args);

    CLI::App* search =
        app.add_subcommand("search", "evolutionary search with the robustness-aware fitness");
    add_common(search, search_args);

    CLI::App* reval = app.add_subcommand(
        "retrain-eval", "retrain a genome from scratch across the poisoning grid");
    add_common(reval, eval_args);
    reval->add_option("--genome", genome_path,
                      "genome JSON file (default: top-1 of search_top_k.json)");

    CLI::App* report = app.add_subcommand("report", "aggregate run artifacts into summary.md");
    add_common(report, report_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto cfg = resolve(gen_args);
            std::string manifest = gnas::cmd_gen_data(cfg);
            std::printf("wrote dataset: %s\n", manifest.c_str());
        } else if (train->parsed()) {
            auto cfg = resolve(train_args);
            gnas::cmd_train_supernet(cfg);
            std::printf("wrote %s\n", gnas::artifacts::supernet_bin(cfg).c_str());
        } else if (search->parsed()) {
            auto cfg = resolve(search_args);
            gnas::SearchResult res = gnas::cmd_search(cfg);
            std::printf("search done: %d unique genomes evaluated, best fitness %.6f\n",
                        res.unique_evaluations,
                        res.top_k.empty() ? 0.0 : res.top_k.front().fitness);
            std::printf("wrote %s\n", gnas::artifacts::top_k(cfg).c_str());
        } else if (reval->parsed()) {
            auto cfg = resolve(eval_args);
            gnas::Genome genome;
            if (!genome_path.empty()) {
                std::ifstream in(genome_path);
                if (!in) throw std::runtime_error("cannot open genome file: " + genome_path);
                genome = gnas::genome_from_json(nlohmann::json::parse(in));
            } else {
                genome = gnas::top1_genome(cfg);
            }
            auto rows = gnas::cmd_retrain_eval(cfg, genome);
            for (const auto& r : rows)
                std::printf("ptb %2d%%  mean acc %.4f  (std %.4f, %d seeds)\n", r.percent,
                            r.mean_acc, r.std_acc, r.seeds);
            std::printf("wrote %s\n", gnas::artifacts::results(cfg).c_str());
        } else if (report->parsed()) {
            auto cfg = resolve(report_args);
            gnas::cmd_report(cfg);
            std::printf("wrote %s\n", gnas::artifacts::summary(cfg).c_str());
        }
    } catch (const gnas::TrainingDivergence& d) {
        std::fprintf(stderr, "error: %s (offending genome: %s)\n", d.what(),
                     d.genome_json.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
