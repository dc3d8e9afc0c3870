#include "reachguard/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

namespace reachguard {

const CriticConfig& CompareTask::config_for(CriticRule rule) const {
    switch (rule) {
        case CriticRule::hj: return config_hj;
        case CriticRule::sqrl: return config_sqrl;
        case CriticRule::cql: return config_cql;
    }
    throw ConfigError("bad rule");
}

double CompareTask::score_sign_for(CriticRule rule) const {
    switch (rule) {
        case CriticRule::hj: return score_sign_hj;
        case CriticRule::sqrl: return score_sign_sqrl;
        case CriticRule::cql: return score_sign_cql;
    }
    return 1.0;
}

CompareTask build_di_task(const DiTaskParams& params) {
    CompareTask task;
    task.name = "di";
    task.total_steps = params.steps;

    const auto model = make_double_integrator();
    const auto mesh_ctrl = make_control_mesh(model, {params.controls});
    GridSpec spec;
    spec.dims = {{-1.1, 1.1, params.solver_nodes, false}, {-2.0, 2.0, params.solver_nodes, false}};
    SolveParams sp;
    sp.gamma = params.gamma;
    sp.dt = params.dt;
    sp.tol = 1e-6;
    sp.max_iters = 3000;
    auto l = [](const StateVec& x) { return 1.0 - std::abs(x[0]); };
    auto solved = solve(spec, model, l, mesh_ctrl, sp);
    task.oracle_grid = std::move(solved.grid);

    const double hx = spec.dims[0].spacing();
    const double hv = spec.dims[1].spacing();
    DoubleIntegratorEnv env;
    for (int i = 0; i < params.mesh_per_dim; ++i) {
        for (int j = 0; j < params.mesh_per_dim; ++j) {
            const double x = -1.1 + 2.2 * i / (params.mesh_per_dim - 1);
            const double v = -2.0 + 4.0 * j / (params.mesh_per_dim - 1);
            const bool center = di_safe_oracle(x, v);
            bool band = false;
            for (int a = -1; a <= 1 && !band; ++a)
                for (int b = -1; b <= 1 && !band; ++b)
                    if (di_safe_oracle(x + a * hx, v + b * hv) != center) band = true;
            if (band) continue;
            const StateVec state = {x, v};
            task.mesh_states.push_back(state);
            task.mesh.obs.push_back(env.features_of(state));
            task.mesh.actions.push_back(di_analytic_safe_action(state));
            task.mesh.labels.push_back(center ? 1 : 0);
        }
    }
    task.eval_policy = [](const StateVec& raw, const std::vector<double>&) {
        return di_analytic_safe_action(raw);
    };

    CriticConfig hj;
    hj.rule = CriticRule::hj;
    hj.task = TaskMode::avoid;
    hj.gamma_start = 0.85;
    hj.gamma_end = params.gamma;
    hj.tau = 0.1;
    hj.lr = 1e-3;
    hj.batch_size = 64;
    hj.total_steps = params.steps;
    hj.warmup = 2000;
    hj.buffer_capacity = 10000;
    hj.eval_every = 1000;
    hj.hidden = {16, 16};
    task.config_hj = hj;

    CriticConfig sqrl = hj;
    sqrl.rule = CriticRule::sqrl;
    sqrl.gamma_start = sqrl.gamma_end = 0.9;
    sqrl.lr = 3e-4;
    task.config_sqrl = sqrl;

    CriticConfig cql = hj;
    cql.rule = CriticRule::cql;
    cql.gamma_start = cql.gamma_end = 0.99;
    cql.lr = 2e-4;
    cql.alpha_cql = 0.01;
    task.config_cql = cql;
    return task;
}

CompareTask build_dubins_task(const DubinsTaskParams& params, std::uint64_t mesh_seed) {
    CompareTask task;
    task.name = "dubins";
    task.total_steps = params.steps;

    const auto model = make_dubins();
    const auto mesh_ctrl = make_control_mesh(model, {params.controls});
    GridSpec spec;
    spec.dims = {{-3.0, 3.0, params.solver_xy_nodes, false},
                 {-3.0, 3.0, params.solver_xy_nodes, false},
                 {0.0, kTwoPi, params.solver_theta_nodes, true}};
    SolveParams sp;
    sp.gamma = params.gamma;
    sp.dt = params.dt;
    sp.tol = 1e-6;
    sp.max_iters = 3000;
    sp.mode = GridMode::reach;
    auto l = [](const StateVec& x) { return 1.0 - std::hypot(x[0], x[1]); };
    auto solved = solve(spec, model, l, mesh_ctrl, sp);
    task.oracle_grid = std::move(solved.grid);
    const ValueGrid& grid = task.oracle_grid;

    const double hx = spec.dims[0].spacing();
    const double ht = spec.dims[2].spacing();
    DubinsEnv env;
    std::vector<std::size_t> kept;
    std::vector<StateVec> all_states;
    std::vector<int> all_labels;
    for (int i = 0; i < params.mesh_xy; ++i) {
        for (int j = 0; j < params.mesh_xy; ++j) {
            for (int k = 0; k < params.mesh_theta; ++k) {
                const StateVec x = {-3.0 + 6.0 * i / (params.mesh_xy - 1),
                                    -3.0 + 6.0 * j / (params.mesh_xy - 1),
                                    kTwoPi * k / params.mesh_theta};
                const double v = grid.interpolate(x);
                bool band = false;
                for (int d = 0; d < 3 && !band; ++d) {
                    const double h = d < 2 ? hx : ht;
                    for (int sgn = -1; sgn <= 1 && !band; sgn += 2) {
                        StateVec q = x;
                        q[d] = d < 2 ? std::clamp(q[d] + sgn * h, -3.0, 3.0)
                                     : wrap_angle(q[d] + sgn * h);
                        if ((grid.interpolate(q) >= 0.0) != (v >= 0.0)) band = true;
                    }
                }
                if (band) continue;
                all_states.push_back(x);
                all_labels.push_back(v >= 0.0 ? 1 : 0);
            }
        }
    }
    kept.resize(all_states.size());
    for (std::size_t i = 0; i < kept.size(); ++i) kept[i] = i;
    if (kept.size() > params.mesh_cap) {
        Rng rng(mesh_seed);
        // Fisher-Yates prefix
        for (std::size_t i = 0; i < params.mesh_cap; ++i) {
            const std::size_t j = i + rng.uniform_index(kept.size() - i);
            std::swap(kept[i], kept[j]);
        }
        kept.resize(params.mesh_cap);
        std::sort(kept.begin(), kept.end());
    }
    for (const std::size_t idx : kept) {
        const StateVec& x = all_states[idx];
        task.mesh_states.push_back(x);
        task.mesh.obs.push_back(env.features_of(x));
        task.mesh.actions.push_back(dubins_analytic_safe_action(x));
        task.mesh.labels.push_back(all_labels[idx]);
    }
    task.eval_policy = [](const StateVec& raw, const std::vector<double>&) {
        return dubins_analytic_safe_action(raw);
    };
    task.score_sign_sqrl = 1.0;  // reach: success probability ranks with liveness
    task.score_sign_cql = 1.0;

    CriticConfig hj;
    hj.rule = CriticRule::hj;
    hj.task = TaskMode::reach;
    hj.gamma_start = 0.85;
    hj.gamma_end = params.gamma;
    hj.tau = 0.1;
    hj.lr = 1e-3;
    hj.batch_size = 64;
    hj.total_steps = params.steps;
    hj.warmup = 2000;
    hj.buffer_capacity = 10000;
    hj.eval_every = 1000;
    hj.hidden = {64, 64, 32};
    task.config_hj = hj;

    CriticConfig sqrl = hj;
    sqrl.rule = CriticRule::sqrl;
    sqrl.gamma_start = sqrl.gamma_end = 0.9;
    sqrl.lr = 3e-4;
    task.config_sqrl = sqrl;

    CriticConfig cql = hj;
    cql.rule = CriticRule::cql;
    cql.gamma_start = cql.gamma_end = 0.99;
    cql.lr = 2e-4;
    cql.alpha_cql = 0.01;
    task.config_cql = cql;
    return task;
}

std::vector<CompareRun> run_compare_jobs(const CompareTask& task,
                                         const std::vector<CriticRule>& rules, int n_seeds,
                                         std::uint64_t master_seed) {
    struct Job {
        CriticRule rule;
        int seed_index;
    };
    std::vector<Job> jobs;
    for (const CriticRule rule : rules)
        for (int s = 0; s < n_seeds; ++s) jobs.push_back({rule, s});

    std::vector<CompareRun> results(jobs.size());
    std::atomic<std::size_t> next{0};
    const int workers = std::max(1, std::min<int>(thread_cap(), static_cast<int>(jobs.size())));

    auto worker = [&] {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) break;
            const Job job = jobs[j];
            CompareRun run;
            run.rule = job.rule;
            Rng seed_rng(master_seed);
            // stream id mixes rule and seed index so every job is decorrelated
            const std::uint64_t stream =
                static_cast<std::uint64_t>(job.rule) * 1000003ULL + job.seed_index;
            run.seed = seed_rng.split(stream).u64();

            CriticConfig cfg = task.config_for(job.rule);
            cfg.total_steps = task.total_steps;
            std::unique_ptr<Env> env;
            if (task.name == "di")
                env = std::make_unique<DoubleIntegratorEnv>();
            else
                env = std::make_unique<DubinsEnv>();
            auto res = train_safety_critic(*env, cfg, task.mesh, task.eval_policy,
                                           task.score_sign_for(job.rule), run.seed);
            run.curve = std::move(res.curve);
            run.aborted = res.aborted;
            run.final_auroc = run.curve.empty() ? 0.5 : run.curve.back().value;
            run.critic = std::move(res.critic);
            results[j] = std::move(run);
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return results;
}

std::vector<RuleSummary> summarize_compare(const std::vector<CompareRun>& runs) {
    std::vector<RuleSummary> out;
    for (const CriticRule rule : {CriticRule::hj, CriticRule::sqrl, CriticRule::cql}) {
        RuleSummary s;
        s.rule = rule;
        std::vector<double> finals;
        for (const auto& r : runs) {
            if (r.rule != rule) continue;
            ++s.seeds;
            s.aborted += r.aborted;
            finals.push_back(r.final_auroc);
        }
        if (finals.empty()) continue;
        double mean = 0.0;
        for (double v : finals) mean += v;
        mean /= static_cast<double>(finals.size());
        double var = 0.0;
        for (double v : finals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(finals.size());
        s.mean_auroc = mean;
        s.std_auroc = std::sqrt(var);
        out.push_back(s);
    }
    return out;
}

void write_auroc_csv(const std::vector<CompareRun>& runs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "rule,seed,step,auroc\n";
    char buf[128];
    for (const auto& r : runs) {
        for (const auto& p : r.curve) {
            std::snprintf(buf, sizeof(buf), "%s,%llu,%ld,%.6f\n", to_string(r.rule),
                          static_cast<unsigned long long>(r.seed), p.step, p.value);
            out << buf;
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace reachguard
