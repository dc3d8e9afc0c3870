#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "reachguard/envs.hpp"
#include "reachguard/neural.hpp"

namespace reachguard {

// One environment transition as stored for critic training. obs/obs_next are
// the network-facing features; raw states are kept for analytic policies and
// mesh evaluation.
struct Transition {
    std::vector<double> obs;
    ControlVec u;
    double r = 0.0;
    std::vector<double> obs_next;
    TerminalKind terminal = TerminalKind::none;
    double l_x = 0.0;     // signed distance at x
    double l_next = 0.0;  // signed distance at x'
    int cost = 0;         // failure indicator at x'
    StateVec raw_x, raw_next;
};

// Bounded ring buffer with uniform sampling; optional proportional
// prioritization (sum tree), default off.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity, bool prioritized = false);

    void push(Transition t, double priority = 1.0);
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    const Transition& operator[](std::size_t i) const { return storage_[i]; }

    std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;
    void set_priority(std::size_t i, double priority);
    bool prioritized() const { return prioritized_; }

private:
    void tree_set(std::size_t leaf, double value);
    std::size_t capacity_;
    bool prioritized_;
    std::vector<Transition> storage_;
    std::size_t size_ = 0;
    std::size_t head_ = 0;
    std::vector<double> tree_;  // sum tree over capacity leaves
};

enum class CriticRule { hj, sqrl, cql };
enum class TaskMode { avoid, reach };

CriticRule parse_rule(const std::string& name);
const char* to_string(CriticRule rule);

struct CriticConfig {
    CriticRule rule = CriticRule::hj;
    TaskMode task = TaskMode::avoid;
    double gamma_start = 0.85;
    double gamma_end = 0.9999;
    double tau = 0.1;
    double lr = 1e-3;
    int batch_size = 64;
    double alpha_cql = 0.01;
    long total_steps = 25000;
    long warmup = 2000;
    std::size_t buffer_capacity = 10000;
    long eval_every = 1000;
    std::vector<int> hidden = {16, 16};
    bool prioritized_replay = false;

    void validate() const;
};

// Discounted safety Bellman target (avoid): (1-g) l + g min(l, q_next).
double hj_target(double l_x, double q_next, double gamma);
// Same arithmetic, named for the benchmark variant where the next action is
// the known optimal safe action.
double hj_target_known_policy(double l_x, double q_next_at_pistar, double gamma);
// Reach-mode mirror: (1-g) l + g max(l, q_next).
double hj_target_reach(double l_x, double q_next, double gamma);
// Failure-probability backup: cost + g (1-cost) q_next.
double sqrl_target(int cost, double q_next, double gamma_s);

// Linear anneal from g0 to g1, capped just below 1 to keep the update a
// contraction.
double gamma_schedule(long step, long total_steps, double g0, double g1);

// AUROC as the concordant-pair fraction with half credit for ties
// (rank-based). Throws on single-class labels.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Evaluation mesh with frozen oracle labels and scoring actions.
struct EvalMesh {
    std::vector<std::vector<double>> obs;
    std::vector<ControlVec> actions;  // pi*_S at each mesh state
    std::vector<int> labels;          // 1 = safe (avoid) or lively (reach)
};

// Scores a critic on the mesh: score_i = sign * Q(obs_i, actions_i).
double eval_auroc_on_mesh(const Mlp& critic, const EvalMesh& mesh, double sign = 1.0);

// Evaluation policy queried at arbitrary states (analytic pi*_S for the
// classical benchmarks).
using PolicyFn = std::function<ControlVec(const StateVec& raw, const std::vector<double>& obs)>;

// Single critic over (obs, action) with a polyak target, trained by one of
// the three rules.
class CriticTrainer {
public:
    static CriticTrainer make(int obs_dim, int act_dim, const CriticConfig& cfg, Rng& rng);

    // One gradient step on a sampled batch. env_step drives the gamma
    // schedule. Returns the minibatch loss.
    double train_step(const ReplayBuffer& buffer, const std::vector<std::size_t>& batch,
                      long env_step, const PolicyFn& eval_policy,
                      std::vector<double>* td_errors = nullptr);

    double q_value(const std::vector<double>& obs, const ControlVec& u) const;
    double gamma_at(long env_step) const;

    const Mlp& critic() const { return q_; }
    Mlp& critic() { return q_; }
    const Mlp& target() const { return q_target_; }
    const CriticConfig& config() const { return cfg_; }
    long nan_skips() const { return adam_.nan_skips; }

private:
    CriticConfig cfg_;
    Mlp q_, q_target_;
    AdamState adam_;
};

// Spec-level CQL objective on a fixed batch, for tests and diagnostics:
// 0.5 MSE(Q, target) - alpha (E_{u~pi} Q - E_D Q).
double cql_loss(const std::vector<Transition>& batch, const Mlp& critic,
                const PolicyFn& eval_policy, double alpha, double gamma_s, TaskMode task,
                const Mlp& target_critic);

struct AurocPoint {
    long step = 0;
    double value = 0.0;
};

struct CriticTrainResult {
    Mlp critic;
    std::vector<AurocPoint> curve;
    bool aborted = false;
    long env_steps = 0;
};

// Online training against an environment with a uniform random behavior
// policy; one gradient step per env step after warmup; AUROC on the mesh
// every eval_every steps.
CriticTrainResult train_safety_critic(Env& env, const CriticConfig& cfg, const EvalMesh& mesh,
                                      const PolicyFn& eval_policy, double score_sign,
                                      std::uint64_t seed);

}  // namespace reachguard
