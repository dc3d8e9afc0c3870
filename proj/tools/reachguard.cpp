#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "reachguard/config.hpp"
#include "reachguard/harness.hpp"
#include "reachguard/sage.hpp"
#include "reachguard/segment.hpp"

using namespace reachguard;
namespace fs = std::filesystem;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (!value.empty()) cfg.set(key, value);
}

BikeParams bike_from_config(const RunConfig& cfg) {
    BikeParams b;
    b.length = cfg.get_double("system.bike_length");
    b.a_min = cfg.get_double("system.bike_a_min");
    b.a_max = cfg.get_double("system.bike_a_max");
    b.delta_min = cfg.get_double("system.bike_delta_min");
    b.delta_max = cfg.get_double("system.bike_delta_max");
    return b;
}

TrackEnvConfig track_env_from_config(const RunConfig& cfg) {
    TrackEnvConfig t;
    t.dt = cfg.get_double("env.track_dt");
    t.timeout_steps = cfg.get_long("env.timeout_steps");
    t.reward_speed_weight = cfg.get_double("env.reward_speed_weight");
    t.reward_offtrack_weight = cfg.get_double("env.reward_offtrack_weight");
    t.spawn_speed_lo = cfg.get_double("env.spawn_speed_lo");
    t.spawn_speed_hi = cfg.get_double("env.spawn_speed_hi");
    t.no_progress_window = cfg.get_long("env.no_progress_window");
    t.no_progress_min = cfg.get_double("env.no_progress_min");
    t.v_min = cfg.get_double("env.v_min");
    return t;
}

std::unique_ptr<Env> env_from_config(const RunConfig& cfg, const std::string& name,
                                     std::shared_ptr<const SplineTrack>& track_out) {
    if (name == "track") {
        auto track = std::make_shared<const SplineTrack>(
            SplineTrack::load(cfg.get_string("track.file")));
        track_out = track;
        return std::make_unique<TrackEnv>(track, bike_from_config(cfg),
                                          track_env_from_config(cfg));
    }
    ClassicEnvConfig c;
    c.dt = cfg.get_double("env.dt");
    c.timeout_steps = cfg.get_long("env.timeout_steps");
    if (name == "di" || name == "double_integrator")
        return std::make_unique<DoubleIntegratorEnv>(c);
    if (name == "dubins") {
        if (!cfg.has("env.timeout_steps")) c.timeout_steps = 400;
        return std::make_unique<DubinsEnv>(c);
    }
    throw ConfigError("unknown env: " + name);
}

int cmd_solve(const RunConfig& cfg, const std::string& out_path) {
    Timer timer;
    const std::string system = cfg.get_string("system.name");
    RunManifest manifest;
    manifest.command = "solve";
    manifest.config = cfg.to_json();
    manifest.seeds = {static_cast<std::uint64_t>(cfg.get_long("run.seed"))};

    if (system == "bike") {
        const std::string dir = out_path.empty() ? cfg.get_string("run.out_dir") : out_path;
        fs::create_directories(dir);
        manifest.artifacts = {dir};
        manifest.write((fs::path(dir) / "manifest.json").string());

        auto track = std::make_shared<const SplineTrack>(
            SplineTrack::load(cfg.get_string("track.file")));
        SegmentParams sp;
        sp.segment_length = cfg.get_double("segment.length");
        sp.overlap = cfg.get_double("segment.overlap");
        sp.xy_resolution = cfg.get_double("segment.xy_resolution");
        sp.margin = cfg.get_double("segment.margin");
        sp.v_lo = cfg.get_double("segment.v_lo");
        sp.v_hi = cfg.get_double("segment.v_hi");
        sp.v_nodes = static_cast<int>(cfg.get_long("segment.v_nodes"));
        sp.psi_nodes = static_cast<int>(cfg.get_long("segment.psi_nodes"));
        sp.control_samples = cfg.get_int_list("segment.controls");
        sp.dt = cfg.get_double("segment.dt");
        sp.gamma = cfg.get_double("segment.gamma");
        sp.tol = cfg.get_double("segment.tol");
        sp.max_iters = static_cast<int>(cfg.get_long("segment.max_iters"));
        sp.freeze_below = cfg.get_double("segment.freeze_below");
        const auto sv = SegmentedValue::solve(track, bike_from_config(cfg), sp);
        sv.save(dir);
        manifest.wall_seconds = timer.seconds();
        manifest.write((fs::path(dir) / "manifest.json").string());
        std::printf("solved %d segments -> %s (%.1f s)\n", sv.count(), dir.c_str(),
                    manifest.wall_seconds);
        return 0;
    }

    const std::string out = out_path.empty() ? system + ".hjvg" : out_path;
    manifest.artifacts = {out};
    const auto grid_nodes = cfg.get_int_list("solver.grid");
    const auto controls = cfg.get_int_list("solver.controls");
    SolveParams sp;
    sp.gamma = cfg.get_double("solver.gamma");
    sp.dt = cfg.get_double("solver.dt");
    sp.tol = cfg.get_double("solver.tol");
    sp.max_iters = static_cast<int>(cfg.get_long("solver.max_iters"));

    SystemModel model = make_system(system);
    GridSpec spec;
    std::function<double(const StateVec&)> l;
    if (system == "double_integrator" || system == "di") {
        if (grid_nodes.size() != 2) throw ConfigError("double integrator needs a 2D grid");
        spec.dims = {{-1.1, 1.1, grid_nodes[0], false}, {-2.0, 2.0, grid_nodes[1], false}};
        l = [](const StateVec& x) { return 1.0 - std::abs(x[0]); };
        sp.mode = GridMode::avoid;
    } else if (system == "dubins") {
        if (grid_nodes.size() != 3) throw ConfigError("dubins needs a 3D grid");
        spec.dims = {{-3.0, 3.0, grid_nodes[0], false},
                     {-3.0, 3.0, grid_nodes[1], false},
                     {0.0, kTwoPi, grid_nodes[2], true}};
        l = [](const StateVec& x) { return 1.0 - std::hypot(x[0], x[1]); };
        sp.mode = cfg.get_string("solver.mode") == "avoid" ? GridMode::avoid : GridMode::reach;
    } else {
        throw ConfigError("unknown system for solve: " + system);
    }
    if (cfg.get_string("solver.mode") == "reach") sp.mode = GridMode::reach;

    const auto mesh = make_control_mesh(model, controls);
    const auto res = solve(spec, model, l, mesh, sp);
    save_grid(res.grid, out);
    manifest.wall_seconds = timer.seconds();
    manifest.write(out + ".manifest.json");
    std::printf("solved %s: %d iterations, converged=%d, residual=%.3g -> %s (%.1f s)\n",
                system.c_str(), res.iterations, res.converged ? 1 : 0,
                res.residuals.empty() ? 0.0 : res.residuals.back(), out.c_str(),
                manifest.wall_seconds);
    return res.converged ? 0 : 3;
}

int cmd_compare(const RunConfig& cfg) {
    Timer timer;
    const std::string out_dir = cfg.get_string("run.out_dir");
    fs::create_directories(out_dir);
    RunManifest manifest;
    manifest.command = "compare";
    manifest.config = cfg.to_json();
    manifest.seeds = {static_cast<std::uint64_t>(cfg.get_long("run.seed"))};
    manifest.artifacts = {(fs::path(out_dir) / "auroc_curve.csv").string(),
                          (fs::path(out_dir) / "summary.json").string()};
    manifest.write((fs::path(out_dir) / "manifest.json").string());

    const std::string task_name = cfg.get_string("compare.task");
    CompareTask task;
    if (task_name == "di") {
        DiTaskParams p;
        p.steps = cfg.get_long("compare.steps");
        task = build_di_task(p);
    } else if (task_name == "dubins") {
        DubinsTaskParams p;
        p.steps = cfg.get_long("compare.steps");
        task = build_dubins_task(p);
    } else {
        throw ConfigError("compare.task must be di or dubins");
    }
    const std::string oracle_path =
        (fs::path(out_dir) / ("oracle_" + task_name + ".hjvg")).string();
    save_grid(task.oracle_grid, oracle_path);

    std::vector<CriticRule> rules;
    {
        std::stringstream ss(cfg.get_string("compare.rules"));
        std::string item;
        while (std::getline(ss, item, ',')) rules.push_back(parse_rule(item));
    }
    const int seeds = static_cast<int>(cfg.get_long("compare.seeds"));
    const auto runs = run_compare_jobs(task, rules, seeds,
                                       static_cast<std::uint64_t>(cfg.get_long("run.seed")));
    write_auroc_csv(runs, (fs::path(out_dir) / "auroc_curve.csv").string());

    nlohmann::json summary;
    summary["task"] = task_name;
    int aborted_total = 0;
    for (const auto& s : summarize_compare(runs)) {
        summary["rules"][to_string(s.rule)] = {{"mean_auroc", s.mean_auroc},
                                               {"std_auroc", s.std_auroc},
                                               {"seeds", s.seeds},
                                               {"aborted", s.aborted}};
        aborted_total += s.aborted;
    }
    summary["partial"] = aborted_total > 0;
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";

    manifest.artifacts.push_back(oracle_path);
    manifest.wall_seconds = timer.seconds();
    manifest.write((fs::path(out_dir) / "manifest.json").string());
    std::printf("%s\n", summary.dump(2).c_str());
    return 0;
}

int cmd_sage_run(const RunConfig& cfg) {
    Timer timer;
    const std::string out_dir = cfg.get_string("run.out_dir");
    fs::create_directories(out_dir);
    RunManifest manifest;
    manifest.command = "sage-run";
    manifest.config = cfg.to_json();
    manifest.seeds = {static_cast<std::uint64_t>(cfg.get_long("run.seed"))};
    manifest.artifacts = {(fs::path(out_dir) / "train_metrics.csv").string(),
                          (fs::path(out_dir) / "eval_metrics.csv").string()};
    manifest.write((fs::path(out_dir) / "manifest.json").string());

    const std::string env_name = cfg.get_string("env.name");
    std::shared_ptr<const SplineTrack> track;
    auto env = env_from_config(cfg, env_name, track);
    std::shared_ptr<const SplineTrack> track2 = track;
    auto eval_env = env_from_config(cfg, env_name, track2);

    SageConfig sc;
    sc.total_steps = cfg.get_long("agent.steps");
    sc.warmup = cfg.get_long("agent.warmup");
    sc.epsilon = cfg.get_double("agent.epsilon");
    sc.eval_interval = cfg.get_long("agent.eval_interval");
    sc.eval_episodes = cfg.get_long("agent.eval_episodes");
    sc.buffer_capacity = static_cast<std::size_t>(cfg.get_long("agent.buffer"));
    sc.out_dir = out_dir;
    sc.sac.hidden = cfg.get_int_list("agent.hidden");
    sc.sac.lr_actor = cfg.get_double("agent.lr_actor");
    sc.sac.lr_critic = cfg.get_double("agent.lr_critic");
    sc.sac.gamma = cfg.get_double("agent.gamma");
    sc.sac.tau = cfg.get_double("agent.tau_perf");
    sc.sac.alpha = cfg.get_double("agent.alpha");
    sc.sac.batch_size = static_cast<int>(cfg.get_long("agent.batch_size"));
    sc.safety.hidden = sc.sac.hidden;
    sc.safety.lr_actor = sc.sac.lr_actor;
    sc.safety.lr_critic = sc.sac.lr_critic;
    sc.safety.tau = cfg.get_double("agent.tau_safety");
    sc.safety.alpha = sc.sac.alpha;
    sc.safety.gamma_start = cfg.get_double("agent.gamma_start");
    sc.safety.gamma_end = cfg.get_double("agent.gamma_end");
    sc.safety.batch_size = sc.sac.batch_size;

    const std::string safety = cfg.get_string("agent.safety");
    std::shared_ptr<const SegmentedValue> sv;
    if (safety == "neural") {
        sc.safety_source = SafetySource::neural;
    } else if (safety == "none") {
        sc.safety_source = SafetySource::none;
    } else if (safety.rfind("static:", 0) == 0) {
        if (!track) throw ConfigError("static safety requires the track env");
        sc.safety_source = SafetySource::static_grid;
        sv = std::make_shared<const SegmentedValue>(
            SegmentedValue::load(safety.substr(7), track));
    } else {
        throw ConfigError("agent.safety must be neural, none, or static:<dir>");
    }

    SageRunner runner(std::move(env), std::move(eval_env), sc, sv,
                      static_cast<std::uint64_t>(cfg.get_long("run.seed")));
    const SageResult res = runner.run();

    nlohmann::json summary;
    summary["env_steps"] = res.env_steps;
    summary["gate_interventions"] = res.gate_interventions;
    summary["gate_passes"] = res.gate_passes;
    summary["buffer_size"] = res.buffer_size;
    summary["train_episodes"] = res.train_episodes.size();
    summary["offtrack_train_episodes"] = res.offtrack_train_episodes;
    if (!res.evals.empty()) {
        summary["final_eval_ecp"] = res.evals.back().metrics.ecp;
        summary["final_eval_avg_speed"] = res.evals.back().metrics.avg_speed;
    }
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
    manifest.artifacts.push_back((fs::path(out_dir) / "summary.json").string());
    manifest.wall_seconds = timer.seconds();
    manifest.write((fs::path(out_dir) / "manifest.json").string());
    std::printf("%s\n", summary.dump(2).c_str());
    return res.aborted ? 3 : 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& agent_dir, int episodes) {
    const std::string env_name = cfg.get_string("env.name");
    std::shared_ptr<const SplineTrack> track;
    auto env = env_from_config(cfg, env_name, track);
    std::shared_ptr<const SplineTrack> track2 = track;
    auto eval_env = env_from_config(cfg, env_name, track2);

    SageConfig sc;
    sc.safety_source = SafetySource::none;
    sc.epsilon = cfg.get_double("agent.epsilon");
    sc.sac.hidden = cfg.get_int_list("agent.hidden");
    const std::string safety = cfg.get_string("agent.safety");
    std::shared_ptr<const SegmentedValue> sv;
    if (safety == "neural") sc.safety_source = SafetySource::neural;
    if (safety.rfind("static:", 0) == 0) {
        sc.safety_source = SafetySource::static_grid;
        sv = std::make_shared<const SegmentedValue>(
            SegmentedValue::load(safety.substr(7), track));
    }
    SageRunner runner(std::move(env), std::move(eval_env), sc, sv,
                      static_cast<std::uint64_t>(cfg.get_long("run.seed")));
    runner.perf().load(agent_dir, "perf");
    if (sc.safety_source == SafetySource::neural) runner.safety_ac().load(agent_dir, "safety");

    nlohmann::json out = nlohmann::json::array();
    for (int e = 0; e < episodes; ++e) {
        const EpisodeMetrics m = runner.run_eval_episode(e);
        out.push_back({{"episode", e},
                       {"ecp", m.ecp},
                       {"avg_speed", m.avg_speed},
                       {"duration", m.duration},
                       {"interventions", m.interventions},
                       {"min_l", m.min_l},
                       {"reason", to_string(m.reason)}});
        std::printf("episode %d: ecp=%.3f avg_speed=%.2f reason=%s\n", e, m.ecp, m.avg_speed,
                    to_string(m.reason));
    }
    const std::string out_dir = cfg.get_string("run.out_dir");
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "eval_summary.json") << out.dump(2) << "\n";
    return 0;
}

// long-format (metric, step, seed, value) tables from a finished run dir
int cmd_export_plots(const std::string& run_dir, const std::string& out_dir_arg) {
    const fs::path run(run_dir);
    if (!fs::exists(run)) throw IoError("run directory does not exist: " + run_dir);
    const fs::path out_dir = out_dir_arg.empty() ? run / "plots" : fs::path(out_dir_arg);
    bool wrote = false;

    if (fs::exists(run / "auroc_curve.csv")) {
        fs::create_directories(out_dir);
        std::ifstream in(run / "auroc_curve.csv");
        std::ofstream out(out_dir / "auroc_tidy.csv");
        out << "metric,series,step,seed,value\n";
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string rule, seed, step, value;
            std::getline(ss, rule, ',');
            std::getline(ss, seed, ',');
            std::getline(ss, step, ',');
            std::getline(ss, value, ',');
            out << "auroc," << rule << "," << step << "," << seed << "," << value << "\n";
        }
        wrote = true;
    }
    for (const char* name : {"train_metrics.csv", "eval_metrics.csv"}) {
        if (!fs::exists(run / name)) continue;
        fs::create_directories(out_dir);
        std::ifstream in(run / name);
        const std::string base = std::string(name).substr(0, std::string(name).find('.'));
        std::ofstream out_ecp(out_dir / (base + "_ecp.csv"));
        std::ofstream out_speed(out_dir / (base + "_speed.csv"));
        out_ecp << "metric,step,seed,value\n";
        out_speed << "metric,step,seed,value\n";
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string step, episode, ecp, speed, rest;
            std::getline(ss, step, ',');
            std::getline(ss, episode, ',');
            std::getline(ss, ecp, ',');
            std::getline(ss, speed, ',');
            out_ecp << "ecp," << step << "," << episode << "," << ecp << "\n";
            out_speed << "avg_speed," << step << "," << episode << "," << speed << "\n";
        }
        wrote = true;
    }
    if (!wrote) throw IoError("no exportable artifacts found in " + run_dir);
    std::printf("exported tidy tables -> %s\n", out_dir.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kToolVersion) +
                 " - Hamilton-Jacobi reachability toolkit for safe RL"};
    app.require_subcommand(1);

    std::string config_path, out, out_dir, seed_str;
    // global-ish options replicated per subcommand for natural usage
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (.cfg or manifest .json)");
        sub->add_option("--seed", seed_str, "master seed (overrides run.seed)");
        sub->add_option("--out-dir", out_dir, "artifact directory (overrides run.out_dir)");
    };

    auto* solve_cmd = app.add_subcommand("solve", "solve a safety value grid");
    std::string system, gamma, dt, grid, controls, tol, track_file;
    add_common(solve_cmd);
    solve_cmd->add_option("--system", system, "double_integrator | dubins | bike");
    solve_cmd->add_option("--gamma", gamma);
    solve_cmd->add_option("--dt", dt);
    solve_cmd->add_option("--grid", grid, "nodes per dim, comma separated");
    solve_cmd->add_option("--controls", controls, "control samples per dim");
    solve_cmd->add_option("--tol", tol);
    solve_cmd->add_option("--track", track_file, "track file for bike segment solves");
    solve_cmd->add_option("--out", out, "output .hjvg (or directory for bike)");

    auto* compare_cmd = app.add_subcommand("compare", "safety-critic learning rule comparison");
    std::string task, rules, seeds, steps;
    add_common(compare_cmd);
    compare_cmd->add_option("--task", task, "di | dubins");
    compare_cmd->add_option("--rules", rules, "subset of hj,sqrl,cql");
    compare_cmd->add_option("--seeds", seeds);
    compare_cmd->add_option("--steps", steps);

    auto* sage_cmd = app.add_subcommand("sage-run", "dual-policy training run");
    std::string env_name, safety, epsilon, eval_interval;
    add_common(sage_cmd);
    sage_cmd->add_option("--env", env_name, "di | dubins | track");
    sage_cmd->add_option("--safety", safety, "neural | none | static:<grid dir>");
    sage_cmd->add_option("--epsilon", epsilon);
    sage_cmd->add_option("--steps", steps);
    sage_cmd->add_option("--eval-interval", eval_interval);

    auto* eval_cmd = app.add_subcommand("eval", "deterministic evaluation of a checkpoint");
    std::string agent_dir;
    int episodes = 5;
    add_common(eval_cmd);
    eval_cmd->add_option("--env", env_name, "di | dubins | track");
    eval_cmd->add_option("--agent", agent_dir, "checkpoint directory")->required();
    eval_cmd->add_option("--episodes", episodes);
    eval_cmd->add_option("--safety", safety, "neural | none | static:<grid dir>");
    eval_cmd->add_option("--epsilon", epsilon);

    auto* export_cmd = app.add_subcommand("export-plots", "tidy CSVs from a run directory");
    std::string run_dir, export_out;
    export_cmd->add_option("--run", run_dir, "run directory")->required();
    export_cmd->add_option("--out", export_out, "output directory (default <run>/plots)");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
        apply_override(cfg, "run.seed", seed_str);
        apply_override(cfg, "run.out_dir", out_dir);
        if (cfg.get_long("run.threads") > 0)
            set_thread_cap(static_cast<int>(cfg.get_long("run.threads")));

        if (solve_cmd->parsed()) {
            apply_override(cfg, "system.name", system);
            apply_override(cfg, "solver.gamma", gamma);
            apply_override(cfg, "solver.dt", dt);
            apply_override(cfg, "solver.grid", grid);
            apply_override(cfg, "solver.controls", controls);
            apply_override(cfg, "solver.tol", tol);
            apply_override(cfg, "track.file", track_file);
            return cmd_solve(cfg, out);
        }
        if (compare_cmd->parsed()) {
            apply_override(cfg, "compare.task", task);
            apply_override(cfg, "compare.rules", rules);
            apply_override(cfg, "compare.seeds", seeds);
            apply_override(cfg, "compare.steps", steps);
            return cmd_compare(cfg);
        }
        if (sage_cmd->parsed()) {
            apply_override(cfg, "env.name", env_name);
            apply_override(cfg, "agent.safety", safety);
            apply_override(cfg, "agent.epsilon", epsilon);
            apply_override(cfg, "agent.steps", steps);
            apply_override(cfg, "agent.eval_interval", eval_interval);
            return cmd_sage_run(cfg);
        }
        if (eval_cmd->parsed()) {
            apply_override(cfg, "env.name", env_name);
            apply_override(cfg, "agent.safety", safety);
            apply_override(cfg, "agent.epsilon", epsilon);
            return cmd_eval(cfg, agent_dir, episodes);
        }
        if (export_cmd->parsed()) {
            return cmd_export_plots(run_dir, export_out);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
