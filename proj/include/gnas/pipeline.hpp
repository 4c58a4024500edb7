#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gnas/attacks.hpp"
#include "gnas/evolution.hpp"
#include "gnas/retrain.hpp"
#include "gnas/sbm.hpp"
#include "gnas/supernet.hpp"

namespace gnas {

/// Everything one run needs, with defaults matching the reference settings.
/// The master seed fans out into labeled sub-seeds (data / supernet / proxy /
/// evo / eval-attack / retrain), so stages are individually reproducible.
struct RunConfig {
    uint64_t seed = 0;
    int threads = 0;
    std::string out_dir = "run";

    std::optional<SbmParams> sbm;                  // exactly one dataset source
    std::optional<std::string> manifest_path;
    double split_train = 0.1, split_val = 0.1, split_test = 0.8;

    SearchSpaceConfig space;
    TrainConfig train;          // supernet training (epochs 1000, lr 5e-3, wd 3e-4)
    TrainConfig retrain;        // standalone retraining of searched genomes
    AttackProxyConfig proxy;    // random, 5%, T=5
    EvoConfig evo;              // P=50, s=25, n=25, k=10, p=0.1

    struct EvalConfig {
        AttackProxyConfig::Kind attack = AttackProxyConfig::Kind::Random;
        std::vector<int> grid_percent{0, 5, 10, 15, 20, 25};
        int seeds = 10;
    } eval;

    RunConfig() {
        retrain.epochs = 200;
        retrain.weight_decay = 5e-4;
    }

    void validate() const {
        if (sbm.has_value() == manifest_path.has_value())
            throw std::runtime_error(
                "config: specify exactly one dataset source (dataset.sbm or dataset.manifest)");
        if (split_train < 0 || split_val < 0 || split_test < 0 ||
            split_train + split_val + split_test > 1.0 + 1e-9)
            throw std::runtime_error("config: split fractions must be nonnegative, sum <= 1");
        space.validate();
        train.validate();
        retrain.validate();
        proxy.validate();
        evo.validate();
        if (eval.seeds < 1) throw std::runtime_error("config: eval.seeds < 1");
        for (int p : eval.grid_percent)
            if (p < 0 || p >= 100) throw std::runtime_error("config: eval grid percent outside [0,100)");
    }
};

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

namespace cfgdetail {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void parse_train(const nlohmann::json& j, TrainConfig& t) {
    maybe(j, "epochs", t.epochs);
    maybe(j, "lr", t.lr);
    maybe(j, "weight_decay", t.weight_decay);
    maybe(j, "linear_dropout", t.linear_dropout);
    maybe(j, "attn_dropout", t.attn_dropout);
}

} // namespace cfgdetail

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfgdetail::maybe(j, "seed", cfg.seed);
    cfgdetail::maybe(j, "threads", cfg.threads);
    cfgdetail::maybe(j, "out", cfg.out_dir);

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        if (d.contains("sbm")) {
            SbmParams p;
            const auto& s = d.at("sbm");
            cfgdetail::maybe(s, "blocks", p.blocks);
            cfgdetail::maybe(s, "nodes_per_block", p.nodes_per_block);
            cfgdetail::maybe(s, "p_in", p.p_in);
            cfgdetail::maybe(s, "p_out", p.p_out);
            cfgdetail::maybe(s, "feature_dim", p.feature_dim);
            cfgdetail::maybe(s, "feature_noise", p.feature_noise);
            cfg.sbm = p;
        }
        if (d.contains("manifest")) cfg.manifest_path = d.at("manifest").get<std::string>();
        if (d.contains("split")) {
            const auto& s = d.at("split");
            cfgdetail::maybe(s, "train", cfg.split_train);
            cfgdetail::maybe(s, "val", cfg.split_val);
            cfgdetail::maybe(s, "test", cfg.split_test);
        }
    }
    if (!cfg.sbm && !cfg.manifest_path) cfg.sbm = SbmParams{}; // default desk dataset

    if (j.contains("space")) {
        const auto& s = j.at("space");
        cfgdetail::maybe(s, "max_layers", cfg.space.max_layers);
        cfgdetail::maybe(s, "hidden_dim", cfg.space.hidden_dim);
        if (s.contains("mask_ops")) cfg.space.mask_ops = ops_from_json<MaskOp>(s.at("mask_ops"));
        if (s.contains("coeff_ops"))
            cfg.space.coeff_ops = ops_from_json<CoeffOp>(s.at("coeff_ops"));
        if (s.contains("aggr_ops")) cfg.space.aggr_ops = ops_from_json<AggrOp>(s.at("aggr_ops"));
        if (s.contains("comb_ops")) cfg.space.comb_ops = ops_from_json<CombOp>(s.at("comb_ops"));
        if (s.contains("skip_ops")) cfg.space.skip_ops = ops_from_json<SkipOp>(s.at("skip_ops"));
        if (s.contains("layer_aggr_ops"))
            cfg.space.layer_aggr_ops = ops_from_json<LayerAggrOp>(s.at("layer_aggr_ops"));
        if (s.contains("mask_params")) {
            const auto& mp = s.at("mask_params");
            cfgdetail::maybe(mp, "lra_rank", cfg.space.mask_params.lra_rank);
            cfgdetail::maybe(mp, "nfs_tau", cfg.space.mask_params.nfs_tau);
            cfgdetail::maybe(mp, "nie_beta", cfg.space.mask_params.nie_beta);
            cfgdetail::maybe(mp, "nie_floor", cfg.space.mask_params.nie_floor);
            if (mp.contains("vpo_theta")) {
                cfg.space.mask_params.vpo_theta = mp.at("vpo_theta").get<std::vector<double>>();
                cfg.space.mask_params.vpo_order =
                    static_cast<int>(cfg.space.mask_params.vpo_theta.size());
            }
        }
    }
    if (j.contains("train")) cfgdetail::parse_train(j.at("train"), cfg.train);
    if (j.contains("retrain")) cfgdetail::parse_train(j.at("retrain"), cfg.retrain);
    if (j.contains("proxy")) {
        const auto& p = j.at("proxy");
        if (p.contains("kind")) cfg.proxy.kind = attack_kind_from_name(p.at("kind"));
        cfgdetail::maybe(p, "ptb_rate", cfg.proxy.ptb_rate);
        cfgdetail::maybe(p, "T", cfg.proxy.T);
    }
    if (j.contains("evo")) {
        const auto& e = j.at("evo");
        cfgdetail::maybe(e, "population", cfg.evo.population);
        cfgdetail::maybe(e, "mutation_size", cfg.evo.mutation_size);
        cfgdetail::maybe(e, "crossover_size", cfg.evo.crossover_size);
        cfgdetail::maybe(e, "top_k", cfg.evo.top_k);
        cfgdetail::maybe(e, "max_iter", cfg.evo.max_iter);
        cfgdetail::maybe(e, "mutation_prob", cfg.evo.mutation_prob);
        cfgdetail::maybe(e, "lambda", cfg.evo.lambda);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        if (e.contains("attack")) cfg.eval.attack = attack_kind_from_name(e.at("attack"));
        cfgdetail::maybe(e, "grid_percent", cfg.eval.grid_percent);
        cfgdetail::maybe(e, "seeds", cfg.eval.seeds);
    }
    return cfg;
}

/// Apply one `--set key=value` override onto the raw config JSON (dotted path;
/// the value is parsed as JSON when possible, else taken as a string).
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::runtime_error("--set expects key=value, got '" + assignment + "'");
    std::string path = assignment.substr(0, eq);
    std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (...) {
        value = raw;
    }
    nlohmann::json* cur = &j;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw std::runtime_error("--set: empty key segment in '" + path + "'");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            break;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

inline RunConfig load_config(const std::string& config_path,
                             const std::vector<std::string>& overrides,
                             const std::string& out_dir_flag) {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config: " + config_path);
        j = nlohmann::json::parse(in);
    }
    for (const std::string& o : overrides) apply_override(j, o);
    RunConfig cfg = config_from_json(j);
    if (!out_dir_flag.empty()) cfg.out_dir = out_dir_flag;
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

namespace artifacts {
inline std::string supernet_bin(const RunConfig& c) { return c.out_dir + "/supernet.bin"; }
inline std::string supernet_json(const RunConfig& c) { return c.out_dir + "/supernet.json"; }
inline std::string train_loss(const RunConfig& c) { return c.out_dir + "/train_loss.csv"; }
inline std::string top_k(const RunConfig& c) { return c.out_dir + "/search_top_k.json"; }
inline std::string trajectory(const RunConfig& c) { return c.out_dir + "/search_trajectory.csv"; }
inline std::string search_meta(const RunConfig& c) { return c.out_dir + "/search_meta.json"; }
inline std::string results(const RunConfig& c) { return c.out_dir + "/results.csv"; }
inline std::string summary(const RunConfig& c) { return c.out_dir + "/summary.md"; }
inline std::string acc_vs_ptb(const RunConfig& c) { return c.out_dir + "/accuracy_vs_ptb.csv"; }
inline std::string data_dir(const RunConfig& c) { return c.out_dir + "/data"; }
} // namespace artifacts

namespace pipedetail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += "\"";
    return out;
}

inline void ensure_out(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream probe(cfg.out_dir + "/.write_probe");
    if (!probe) throw std::runtime_error("output directory not writable: " + cfg.out_dir);
    probe.close();
    std::filesystem::remove(cfg.out_dir + "/.write_probe");
}

} // namespace pipedetail

/// The run's graph: a generated SBM (seeded from the master seed) with fresh
/// split masks, or a loaded manifest dataset with the masks it carries.
inline Graph load_run_graph(const RunConfig& cfg) {
    if (cfg.manifest_path) return load_dataset(*cfg.manifest_path);
    SbmParams p = *cfg.sbm;
    p.seed = sub_seed(cfg.seed, "data");
    Graph g = generate_sbm(p);
    return split_nodes(g, cfg.split_train, cfg.split_val, cfg.split_test,
                       sub_seed(cfg.seed, "data-split"));
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// gen-data: write the four dataset files + manifest for this run's graph.
inline std::string cmd_gen_data(const RunConfig& cfg) {
    pipedetail::ensure_out(cfg);
    Graph g = load_run_graph(cfg);
    save_dataset(g, artifacts::data_dir(cfg));
    return artifacts::data_dir(cfg) + "/manifest.json";
}

/// train-supernet: build + single-path-train the one-shot model, persist it and
/// the per-epoch loss trajectory.
inline void cmd_train_supernet(const RunConfig& cfg) {
    pipedetail::ensure_out(cfg);
    Graph g = load_run_graph(cfg);
    Supernet net = build_supernet(cfg.space, {g.feature_dim, cfg.space.hidden_dim, g.num_classes},
                                  sub_seed(cfg.seed, "supernet-init"));
    TrainConfig tc = cfg.train;
    tc.seed = sub_seed(cfg.seed, "supernet");
    std::vector<EpochRecord> trajectory;
    try {
        trajectory = train_supernet(net, g, tc);
    } catch (const TrainingDivergence& d) {
        std::ofstream out(cfg.out_dir + "/divergence.json");
        out << nlohmann::ordered_json{{"epoch", d.epoch},
                                      {"genome", nlohmann::json::parse(d.genome_json)}}
                   .dump(2)
            << "\n";
        throw;
    }
    save_supernet(net, artifacts::supernet_bin(cfg), artifacts::supernet_json(cfg));
    std::ofstream out(artifacts::train_loss(cfg));
    out << "epoch,genome_id,loss\n";
    for (const auto& r : trajectory)
        out << r.epoch << "," << r.genome_id << "," << pipedetail::fmt(r.loss) << "\n";
}

/// search: robustness-guided evolutionary search over the persisted supernet.
inline SearchResult cmd_search(const RunConfig& cfg) {
    if (!std::filesystem::exists(artifacts::supernet_bin(cfg)))
        throw std::runtime_error("search: no trained supernet at " + artifacts::supernet_bin(cfg) +
                                 " (run train-supernet first)");
    Graph g = load_run_graph(cfg);
    Supernet net = load_supernet(artifacts::supernet_bin(cfg), artifacts::supernet_json(cfg));

    AttackProxyConfig pcfg = cfg.proxy;
    pcfg.seed = sub_seed(cfg.seed, "proxy");
    ProxySet proxies = generate_proxy_set(g, pcfg);

    EvoConfig evo = cfg.evo;
    evo.seed = sub_seed(cfg.seed, "evo");
    evo.threads = cfg.threads;
    SearchResult res = evolutionary_search(net, g, proxies, evo);

    {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& rep : res.top_k) arr.push_back(report_to_json(rep));
        std::ofstream out(artifacts::top_k(cfg));
        out << arr.dump(2) << "\n";
    }
    {
        std::ofstream out(artifacts::trajectory(cfg));
        out << "iteration,best_fitness,mean_fitness,best_acc_val,best_R,best_genome_json\n";
        for (const auto& s : res.trajectory)
            out << s.iteration << "," << pipedetail::fmt(s.best_fitness) << ","
                << pipedetail::fmt(s.mean_fitness) << "," << pipedetail::fmt(s.best_acc_val)
                << "," << pipedetail::fmt(s.best_r) << ","
                << pipedetail::csv_quote(s.best_genome_json) << "\n";
    }
    {
        nlohmann::ordered_json meta;
        meta["lambda"] = cfg.evo.lambda;
        meta["variant"] = cfg.evo.lambda == 0.0 ? "w/o rob" : "full";
        meta["unique_evaluations"] = res.unique_evaluations;
        meta["proxy_kind"] = cfg.proxy.kind == AttackProxyConfig::Kind::Random ? "random" : "dice";
        meta["proxy_T"] = cfg.proxy.T;
        meta["proxy_ptb_rate"] = cfg.proxy.ptb_rate;
        std::ofstream out(artifacts::search_meta(cfg));
        out << meta.dump(2) << "\n";
    }
    return res;
}

struct EvalRow {
    int percent = 0;
    int seeds = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
};

/// retrain-eval: poisoning evaluation of one genome over the perturbation grid.
/// Each (rate, seed) cell attacks the graph, retrains from scratch on the
/// poisoned graph, and measures test accuracy there.
inline std::vector<EvalRow> cmd_retrain_eval(const RunConfig& cfg, const Genome& genome) {
    pipedetail::ensure_out(cfg);
    {
        SearchSpaceConfig sp = cfg.space;
        auto violations = validate_genome(genome, sp);
        if (!violations.empty())
            throw std::runtime_error("retrain-eval: invalid genome: " + violations.front());
    }
    Graph g = load_run_graph(cfg);

    struct Cell {
        int rate_idx;
        int seed_idx;
        double acc = 0.0;
    };
    std::vector<Cell> cells;
    for (size_t r = 0; r < cfg.eval.grid_percent.size(); ++r)
        for (int s = 0; s < cfg.eval.seeds; ++s)
            cells.push_back({static_cast<int>(r), s});

    parallel_for(static_cast<int>(cells.size()), cfg.threads, [&](int idx) {
        Cell& cell = cells[static_cast<size_t>(idx)];
        int percent = cfg.eval.grid_percent[static_cast<size_t>(cell.rate_idx)];
        uint64_t tag = static_cast<uint64_t>(percent) * 1000 + static_cast<uint64_t>(cell.seed_idx);
        Graph poisoned = g;
        if (percent > 0) {
            Rng arng(sub_seed(cfg.seed, "eval-attack", tag));
            int budget = edge_flip_budget(g, percent / 100.0);
            Matrix adj = cfg.eval.attack == AttackProxyConfig::Kind::Random
                             ? attack_random(g, budget, arng)
                             : attack_dice(g, budget, arng);
            poisoned = with_adjacency(g, adj);
        }
        TrainConfig rc = cfg.retrain;
        rc.seed = sub_seed(cfg.seed, "retrain", tag);
        RetrainResult res = retrain_from_scratch(genome, poisoned, cfg.space, rc);
        cell.acc = res.test_acc;
    });

    std::vector<EvalRow> rows;
    for (size_t r = 0; r < cfg.eval.grid_percent.size(); ++r) {
        EvalRow row;
        row.percent = cfg.eval.grid_percent[r];
        row.seeds = cfg.eval.seeds;
        double sum = 0, sq = 0;
        for (const Cell& c : cells)
            if (c.rate_idx == static_cast<int>(r)) {
                sum += c.acc;
                sq += c.acc * c.acc;
            }
        row.mean_acc = sum / cfg.eval.seeds;
        double var = sq / cfg.eval.seeds - row.mean_acc * row.mean_acc;
        row.std_acc = std::sqrt(std::max(var, 0.0));
        rows.push_back(row);
    }

    std::ofstream out(artifacts::results(cfg));
    out << "ptb_percent,seeds,mean_test_acc,std_test_acc\n";
    for (const EvalRow& row : rows)
        out << row.percent << "," << row.seeds << "," << pipedetail::fmt(row.mean_acc) << ","
            << pipedetail::fmt(row.std_acc) << "\n";
    return rows;
}

/// Pull the top-1 genome out of search_top_k.json.
inline Genome top1_genome(const RunConfig& cfg) {
    std::ifstream in(artifacts::top_k(cfg));
    if (!in)
        throw std::runtime_error("retrain-eval: no " + artifacts::top_k(cfg) +
                                 " (run search first or pass --genome)");
    nlohmann::json arr = nlohmann::json::parse(in);
    if (!arr.is_array() || arr.empty())
        throw std::runtime_error("retrain-eval: empty top-k file");
    return genome_from_json(arr.at(0).at("genome"));
}

/// report: aggregate the run artifacts into summary.md + plot-ready CSV.
inline void cmd_report(const RunConfig& cfg) {
    bool have_search = std::filesystem::exists(artifacts::top_k(cfg));
    bool have_results = std::filesystem::exists(artifacts::results(cfg));
    if (!have_search && !have_results)
        throw std::runtime_error("report: no run artifacts under " + cfg.out_dir);

    std::ostringstream md;
    md << "# Run summary\n\n";

    if (have_search) {
        std::ifstream in(artifacts::top_k(cfg));
        nlohmann::ordered_json arr = nlohmann::ordered_json::parse(in);
        md << "## Search\n\n";
        if (std::filesystem::exists(artifacts::search_meta(cfg))) {
            std::ifstream min(artifacts::search_meta(cfg));
            nlohmann::ordered_json meta = nlohmann::ordered_json::parse(min);
            md << "- variant: " << meta.value("variant", "full") << " (lambda "
               << meta.value("lambda", 0.0) << ")\n";
            md << "- unique genomes evaluated: " << meta.value("unique_evaluations", 0) << "\n";
        }
        md << "- architectures returned: " << arr.size() << "\n\n";
        if (!arr.empty()) {
            md << "Top-1 genome (fitness " << arr.at(0).value("fitness", 0.0) << ", acc_val "
               << arr.at(0).value("acc_val", 0.0) << ", R " << arr.at(0).value("robustness", 0.0)
               << "):\n\n```json\n"
               << arr.at(0).at("genome").dump(2) << "\n```\n\n";
        }
    }

    if (have_results) {
        std::ifstream in(artifacts::results(cfg));
        std::string header, line;
        std::getline(in, header);
        md << "## Poisoning evaluation\n\n";
        md << "| ptb % | seeds | mean test acc | std |\n|---|---|---|---|\n";
        std::ofstream csv(artifacts::acc_vs_ptb(cfg));
        csv << "ptb_percent,mean_test_acc,std_test_acc\n";
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string p, s, m, d;
            std::getline(ss, p, ',');
            std::getline(ss, s, ',');
            std::getline(ss, m, ',');
            std::getline(ss, d, ',');
            md << "| " << p << " | " << s << " | " << m << " | " << d << " |\n";
            csv << p << "," << m << "," << d << "\n";
        }
        md << "\n";
    }

    std::ofstream out(artifacts::summary(cfg));
    out << md.str();
}

} // namespace gnas
