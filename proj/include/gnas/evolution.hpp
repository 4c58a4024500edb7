#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "gnas/parallel.hpp"
#include "gnas/robustness.hpp"

namespace gnas {

struct EvoConfig {
    int population = 50;
    int mutation_size = 25;
    int crossover_size = 25;
    int top_k = 10;
    int max_iter = 20;
    double mutation_prob = 0.1;
    double lambda = 0.05;
    uint64_t seed = 0;
    int threads = 0; // 0 = hardware default

    void validate() const {
        if (population < 1) throw std::invalid_argument("evo config: population < 1");
        if (mutation_size + crossover_size != population)
            throw std::invalid_argument("evo config: mutation_size + crossover_size != population");
        if (top_k < 1 || top_k > population)
            throw std::invalid_argument("evo config: top_k outside [1, population]");
        if (mutation_prob < 0.0 || mutation_prob > 1.0)
            throw std::invalid_argument("evo config: mutation_prob outside [0,1]");
        if (lambda < 0.0) throw std::invalid_argument("evo config: lambda < 0");
        if (max_iter < 1) throw std::invalid_argument("evo config: max_iter < 1");
    }
};

struct IterationStats {
    int iteration = 0;
    double best_fitness = 0.0; // best archived so far (non-decreasing)
    double mean_fitness = 0.0; // mean over this iteration's population
    double best_acc_val = 0.0;
    double best_r = 0.0;
    std::string best_genome_json;
};

struct SearchResult {
    std::vector<RobustnessReport> top_k;   // best-ever genomes, ranked
    std::vector<IterationStats> trajectory;
    int unique_evaluations = 0;            // distinct genomes scored
};

namespace evodetail {

/// Deterministic ranking: fitness desc, then acc_val desc, then genome JSON asc.
inline bool better(const RobustnessReport& a, const RobustnessReport& b) {
    if (a.fitness != b.fitness) return a.fitness > b.fitness;
    if (a.acc_val != b.acc_val) return a.acc_val > b.acc_val;
    return genome_json_string(a.genome) < genome_json_string(b.genome);
}

} // namespace evodetail

/// Evolutionary search over the frozen supernet. Per iteration: score the
/// population, keep the top-k by fitness, then build the next population from n
/// crossover children of random top-k pairs and s mutants of random top-k
/// members (full generational replacement). Returns the best k genomes ever
/// scored (global archive) plus a per-iteration trajectory. Fitness values are
/// cached by genome, so duplicates cost nothing; evaluation order never affects
/// results because scoring is deterministic given the frozen weights.
inline SearchResult evolutionary_search(const Supernet& net, const Graph& graph,
                                        const ProxySet& proxies, const EvoConfig& evo) {
    evo.validate();
    FitnessContext fctx = FitnessContext::build(net, graph, proxies);
    Rng rng(sub_seed(evo.seed, "evolution"));

    std::map<std::string, RobustnessReport> archive; // keyed by genome JSON
    int unique_evaluations = 0;

    auto evaluate_all = [&](const std::vector<Genome>& pop) {
        std::vector<const Genome*> missing;
        std::vector<std::string> keys(pop.size());
        for (size_t i = 0; i < pop.size(); ++i) keys[i] = genome_json_string(pop[i]);
        std::map<std::string, const Genome*> to_run;
        for (size_t i = 0; i < pop.size(); ++i)
            if (!archive.count(keys[i])) to_run.emplace(keys[i], &pop[i]);
        std::vector<std::pair<std::string, const Genome*>> jobs(to_run.begin(), to_run.end());
        std::vector<RobustnessReport> fresh(jobs.size());
        parallel_for(static_cast<int>(jobs.size()), evo.threads, [&](int i) {
            fresh[static_cast<size_t>(i)] =
                fitness_report(fctx, *jobs[static_cast<size_t>(i)].second, evo.lambda);
        });
        for (size_t i = 0; i < jobs.size(); ++i) archive.emplace(jobs[i].first, fresh[i]);
        unique_evaluations += static_cast<int>(jobs.size());

        std::vector<const RobustnessReport*> reports(pop.size());
        for (size_t i = 0; i < pop.size(); ++i) reports[i] = &archive.at(keys[i]);
        return reports;
    };

    std::vector<Genome> population;
    population.reserve(static_cast<size_t>(evo.population));
    for (int i = 0; i < evo.population; ++i) population.push_back(random_genome(net.space, rng));

    const RobustnessReport* best_ever = nullptr;
    std::vector<IterationStats> trajectory;

    for (int iter = 1; iter <= evo.max_iter; ++iter) {
        auto reports = evaluate_all(population);

        double mean = 0.0;
        for (auto* r : reports) mean += r->fitness;
        mean /= static_cast<double>(reports.size());

        for (auto& [key, rep] : archive)
            if (!best_ever || evodetail::better(rep, *best_ever)) best_ever = &rep;

        trajectory.push_back({iter, best_ever->fitness, mean, best_ever->acc_val, best_ever->r,
                              genome_json_string(best_ever->genome)});

        // select top-k of the current population
        std::vector<const RobustnessReport*> ranked = reports;
        std::sort(ranked.begin(), ranked.end(),
                  [](const RobustnessReport* a, const RobustnessReport* b) {
                      return evodetail::better(*a, *b);
                  });
        int k = std::min<int>(evo.top_k, static_cast<int>(ranked.size()));
        std::vector<Genome> parents;
        parents.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) parents.push_back(ranked[static_cast<size_t>(i)]->genome);

        if (iter == evo.max_iter) break;

        std::vector<Genome> next;
        next.reserve(static_cast<size_t>(evo.population));
        for (int i = 0; i < evo.crossover_size; ++i) {
            const Genome& a = parents[rng.pick_index(parents)];
            const Genome& b = parents[rng.pick_index(parents)];
            next.push_back(crossover(a, b, net.space, rng));
        }
        for (int i = 0; i < evo.mutation_size; ++i) {
            const Genome& a = parents[rng.pick_index(parents)];
            next.push_back(mutate(a, net.space, evo.mutation_prob, rng));
        }
        population = std::move(next);
    }

    // final top-k across everything ever evaluated
    std::vector<const RobustnessReport*> all;
    all.reserve(archive.size());
    for (auto& [key, rep] : archive) all.push_back(&rep);
    std::sort(all.begin(), all.end(), [](const RobustnessReport* a, const RobustnessReport* b) {
        return evodetail::better(*a, *b);
    });
    SearchResult res;
    int k = std::min<int>(evo.top_k, static_cast<int>(all.size()));
    for (int i = 0; i < k; ++i) res.top_k.push_back(*all[static_cast<size_t>(i)]);
    res.trajectory = std::move(trajectory);
    res.unique_evaluations = unique_evaluations;
    return res;
}

} // namespace gnas
