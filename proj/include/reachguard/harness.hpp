#pragma once

#include <string>
#include <vector>

#include "reachguard/critics.hpp"
#include "reachguard/grid.hpp"

namespace reachguard {

// Assets for one classical benchmark: frozen oracle labels on a state mesh,
// the analytic evaluation policy, the solved grid the labels came from, and
// per-rule training configs.
struct CompareTask {
    std::string name;  // "di" or "dubins"
    EvalMesh mesh;
    std::vector<StateVec> mesh_states;
    PolicyFn eval_policy;
    ValueGrid oracle_grid;
    CriticConfig config_hj, config_sqrl, config_cql;
    double score_sign_hj = 1.0;
    double score_sign_sqrl = -1.0;  // failure probability ranks inversely
    double score_sign_cql = -1.0;
    long total_steps = 25000;

    const CriticConfig& config_for(CriticRule rule) const;
    double score_sign_for(CriticRule rule) const;
};

struct DiTaskParams {
    int solver_nodes = 161;
    double gamma = 0.9999;
    double dt = 0.05;
    int controls = 21;
    int mesh_per_dim = 101;
    long steps = 25000;
};

struct DubinsTaskParams {
    int solver_xy_nodes = 81;
    int solver_theta_nodes = 48;
    double gamma = 0.98;
    double dt = 0.05;
    int controls = 5;
    int mesh_xy = 61;
    int mesh_theta = 40;
    std::size_t mesh_cap = 40000;  // seeded subsample above this
    long steps = 50000;
};

CompareTask build_di_task(const DiTaskParams& params = {});
CompareTask build_dubins_task(const DubinsTaskParams& params = {}, std::uint64_t mesh_seed = 17);

struct CompareRun {
    CriticRule rule = CriticRule::hj;
    std::uint64_t seed = 0;
    std::vector<AurocPoint> curve;
    double final_auroc = 0.0;
    bool aborted = false;
    Mlp critic;
};

// rule x seed jobs on a bounded worker pool; one env per job; results in
// deterministic (rule, seed) order regardless of scheduling.
std::vector<CompareRun> run_compare_jobs(const CompareTask& task,
                                         const std::vector<CriticRule>& rules, int n_seeds,
                                         std::uint64_t master_seed);

struct RuleSummary {
    CriticRule rule;
    double mean_auroc = 0.0;
    double std_auroc = 0.0;
    int seeds = 0;
    int aborted = 0;
};
std::vector<RuleSummary> summarize_compare(const std::vector<CompareRun>& runs);

void write_auroc_csv(const std::vector<CompareRun>& runs, const std::string& path);

}  // namespace reachguard
