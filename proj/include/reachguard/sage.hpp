#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "reachguard/critics.hpp"
#include "reachguard/envs.hpp"
#include "reachguard/neural.hpp"
#include "reachguard/segment.hpp"

namespace reachguard {

enum class GateDecision { pass_through, intervene };

// Least-restrictive gate: the performance action passes iff its safety value
// clears the margin. Non-finite values route to the safety policy.
GateDecision gate(double safety_value, double epsilon);

struct SacConfig {
    std::vector<int> hidden = {32, 32};
    double lr_actor = 3e-4;
    double lr_critic = 1e-3;
    double gamma = 0.99;
    double tau = 0.005;
    double alpha = 0.2;  // entropy weight, fixed
    int batch_size = 256;
};

// Soft actor-critic with twin critics and min-target bootstrapping.
class PerformanceAgent {
public:
    static PerformanceAgent make(int obs_dim, int act_dim, std::vector<double> act_lo,
                                 std::vector<double> act_hi, const SacConfig& cfg, Rng& rng);

    ControlVec act(const std::vector<double>& obs, Rng* noise) const;
    double min_q(const std::vector<double>& obs, const ControlVec& u) const;
    void update(const ReplayBuffer& buffer, const std::vector<std::size_t>& batch, Rng& noise);

    void save(const std::string& dir, const std::string& prefix) const;
    void load(const std::string& dir, const std::string& prefix);

    GaussianPolicyHead actor;
    Mlp q1, q2, q1_target, q2_target;
    SacConfig cfg;

private:
    PolicyAdam actor_adam_;
    AdamState q1_adam_, q2_adam_;
};

struct SafetyAcConfig {
    std::vector<int> hidden = {32, 32};
    double lr_actor = 3e-4;
    double lr_critic = 1e-3;
    double tau = 0.05;
    double alpha = 0.2;
    double gamma_start = 0.85;
    double gamma_end = 1.0;  // capped below 1 by the schedule
    long anneal_steps = 50000;
    int batch_size = 256;
};

// Neural safety actor-critic: HJ Bellman critic plus a squashed-Gaussian
// actor ascending the critic.
class SafetyActorCritic {
public:
    static SafetyActorCritic make(int obs_dim, int act_dim, std::vector<double> act_lo,
                                  std::vector<double> act_hi, const SafetyAcConfig& cfg, Rng& rng);

    double q_value(const std::vector<double>& obs, const ControlVec& u) const;
    ControlVec act(const std::vector<double>& obs, Rng* noise) const;
    double gamma_at(long env_step) const;
    void update_critic(const ReplayBuffer& buffer, const std::vector<std::size_t>& batch,
                       long env_step, Rng& noise);
    void update_actor(const ReplayBuffer& buffer, const std::vector<std::size_t>& batch,
                      Rng& noise);

    void save(const std::string& dir, const std::string& prefix) const;
    void load(const std::string& dir, const std::string& prefix);

    GaussianPolicyHead actor;
    Mlp critic, critic_target;
    SafetyAcConfig cfg;

private:
    PolicyAdam actor_adam_;
    AdamState critic_adam_;
};

// Grid-backed safety policy: one-step lookahead value as the gate signal and
// the bang-bang gradient action as the override.
class StaticSafetyPolicy {
public:
    StaticSafetyPolicy(std::shared_ptr<const SegmentedValue> values, double dt);

    double q_value(const StateVec& raw_state, const ControlVec& u, const TrackFrame& frame) const;
    ControlVec action(const StateVec& raw_state, const TrackFrame& frame) const;
    std::uint64_t failsafe_count() const { return failsafe_.load(std::memory_order_relaxed); }
    const SegmentedValue& values() const { return *values_; }

private:
    std::shared_ptr<const SegmentedValue> values_;
    SystemModel model_;
    double dt_;
    mutable std::atomic<std::uint64_t> failsafe_{0};
};

enum class PerfSource { sac, random };
enum class SafetySource { none, neural, static_grid };
enum class ReplayPolicy { store_all, store_passthrough_only };

struct SageConfig {
    long total_steps = 50000;
    long warmup = 2000;
    double epsilon = 3.0;
    PerfSource perf_source = PerfSource::sac;
    SafetySource safety_source = SafetySource::neural;
    ReplayPolicy replay = ReplayPolicy::store_all;
    long eval_interval = 5000;
    std::size_t buffer_capacity = 250000;
    SacConfig sac;
    SafetyAcConfig safety;
    std::string out_dir;          // empty: no files written
    bool save_checkpoints = true;
    long eval_episodes = 1;
};

struct SageEvalPoint {
    long step = 0;
    EpisodeMetrics metrics;
};

struct SageResult {
    std::vector<SageEvalPoint> evals;
    std::vector<EpisodeMetrics> train_episodes;
    long gate_interventions = 0;
    long gate_passes = 0;
    long env_steps = 0;
    std::size_t buffer_size = 0;
    long offtrack_train_episodes = 0;
    bool aborted = false;
};

class SageRunner {
public:
    SageRunner(std::unique_ptr<Env> env, std::unique_ptr<Env> eval_env, const SageConfig& cfg,
               std::shared_ptr<const SegmentedValue> static_values, std::uint64_t seed);

    SageResult run();

    // One gated environment step; exposed for audits and tests.
    struct StepOutcome {
        ControlVec u_perf, u_exec;
        double q_s = 0.0;
        bool intervened = false;
        StepResult result;
    };
    StepOutcome sage_step();
    EnvObs begin_episode(SpawnMode mode);
    EpisodeMetrics run_eval_episode(long at_step, EpisodeLog* log_out = nullptr);

    PerformanceAgent& perf() { return *perf_; }
    Env& env() { return *env_; }
    SafetyActorCritic& safety_ac() { return *safety_ac_; }
    const ReplayBuffer& buffer() const { return buffer_; }

private:
    double safety_value_of(const EnvObs& obs, const ControlVec& u) const;
    ControlVec safety_action(const EnvObs& obs, Rng* noise);

    std::unique_ptr<Env> env_, eval_env_;
    SageConfig cfg_;
    std::shared_ptr<const SegmentedValue> static_values_;
    std::optional<StaticSafetyPolicy> static_policy_;
    std::unique_ptr<PerformanceAgent> perf_;
    std::unique_ptr<SafetyActorCritic> safety_ac_;
    ReplayBuffer buffer_;
    Rng env_rng_, actor_rng_, safety_rng_, sample_rng_, update_rng_;
    Rng safety_sample_rng_, safety_update_rng_;
    EnvObs obs_;
    long step_ = 0;
    SageResult result_;
    EpisodeLog current_log_;
    double episode_return_ = 0.0;
    long episode_index_ = 0;
    std::vector<std::string> metric_rows_train_, metric_rows_eval_;
    void finish_episode(DoneReason reason);
    void write_outputs() const;
};

}  // namespace reachguard
