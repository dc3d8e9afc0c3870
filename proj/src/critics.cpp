#include "reachguard/critics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace reachguard {

ReplayBuffer::ReplayBuffer(std::size_t capacity, bool prioritized)
    : capacity_(capacity), prioritized_(prioritized) {
    if (capacity_ == 0) throw ConfigError("replay buffer capacity must be positive");
    storage_.reserve(std::min<std::size_t>(capacity_, 1 << 20));
    if (prioritized_) tree_.assign(2 * capacity_, 0.0);
}

void ReplayBuffer::tree_set(std::size_t leaf, double value) {
    std::size_t i = leaf + capacity_;
    tree_[i] = value;
    for (i /= 2; i >= 1; i /= 2) tree_[i] = tree_[2 * i] + tree_[2 * i + 1];
}

void ReplayBuffer::push(Transition t, double priority) {
    if (size_ < capacity_) {
        storage_.push_back(std::move(t));
        if (prioritized_) tree_set(size_, std::max(priority, 1e-8));
        ++size_;
    } else {
        storage_[head_] = std::move(t);
        if (prioritized_) tree_set(head_, std::max(priority, 1e-8));
        head_ = (head_ + 1) % capacity_;
    }
}

void ReplayBuffer::set_priority(std::size_t i, double priority) {
    if (!prioritized_) return;
    tree_set(i, std::max(priority, 1e-8));
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
    if (size_ == 0) throw DomainError("sampling from an empty replay buffer");
    std::vector<std::size_t> out(n);
    if (!prioritized_) {
        for (auto& i : out) i = rng.uniform_index(size_);
        return out;
    }
    const double total = tree_[1];
    for (auto& slot : out) {
        double mass = rng.uniform() * total;
        std::size_t i = 1;
        while (i < capacity_) {
            if (mass < tree_[2 * i] || tree_[2 * i + 1] <= 0.0) {
                i = 2 * i;
            } else {
                mass -= tree_[2 * i];
                i = 2 * i + 1;
            }
        }
        slot = std::min(i - capacity_, size_ - 1);
    }
    return out;
}

CriticRule parse_rule(const std::string& name) {
    if (name == "hj") return CriticRule::hj;
    if (name == "sqrl") return CriticRule::sqrl;
    if (name == "cql") return CriticRule::cql;
    throw ConfigError("unknown critic rule: " + name);
}

const char* to_string(CriticRule rule) {
    switch (rule) {
        case CriticRule::hj: return "hj";
        case CriticRule::sqrl: return "sqrl";
        case CriticRule::cql: return "cql";
    }
    return "unknown";
}

void CriticConfig::validate() const {
    if (!(gamma_start >= 0.0 && gamma_start < 1.0 && gamma_end >= 0.0 && gamma_end <= 1.0))
        throw ConfigError("critic gamma schedule must stay in [0,1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("critic tau must be in (0,1]");
    if (alpha_cql < 0.0) throw ConfigError("cql alpha must be nonnegative");
    if (batch_size < 1 || total_steps < 1) throw ConfigError("bad critic step configuration");
}

double hj_target(double l_x, double q_next, double gamma) {
    return (1.0 - gamma) * l_x + gamma * std::min(l_x, q_next);
}

double hj_target_known_policy(double l_x, double q_next_at_pistar, double gamma) {
    return hj_target(l_x, q_next_at_pistar, gamma);
}

double hj_target_reach(double l_x, double q_next, double gamma) {
    return (1.0 - gamma) * l_x + gamma * std::max(l_x, q_next);
}

double sqrl_target(int cost, double q_next, double gamma_s) {
    return static_cast<double>(cost) + gamma_s * (1.0 - cost) * q_next;
}

double gamma_schedule(long step, long total_steps, double g0, double g1) {
    if (total_steps < 1) throw DomainError("gamma_schedule requires total_steps >= 1");
    const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps),
                                0.0, 1.0);
    const double g = g0 + (g1 - g0) * t;
    return std::min(g, 1.0 - 1e-6);
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw DomainError("auroc: scores and labels must be nonempty and aligned");
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += l != 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DomainError("auroc undefined for single-class labels");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks over ties, then the Mann-Whitney statistic
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u_stat =
        rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0);
    return u_stat / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double eval_auroc_on_mesh(const Mlp& critic, const EvalMesh& mesh, double sign) {
    std::vector<double> scores(mesh.obs.size());
    std::vector<double> input;
    for (std::size_t i = 0; i < mesh.obs.size(); ++i) {
        input.assign(mesh.obs[i].begin(), mesh.obs[i].end());
        input.insert(input.end(), mesh.actions[i].begin(), mesh.actions[i].end());
        scores[i] = sign * critic.forward(input)[0];
    }
    return auroc(scores, mesh.labels);
}

CriticTrainer CriticTrainer::make(int obs_dim, int act_dim, const CriticConfig& cfg, Rng& rng) {
    cfg.validate();
    CriticTrainer t;
    t.cfg_ = cfg;
    std::vector<int> sizes;
    sizes.push_back(obs_dim + act_dim);
    for (int h : cfg.hidden) sizes.push_back(h);
    sizes.push_back(1);
    t.q_ = Mlp::make(sizes, Activation::tanh_act, rng);
    t.q_target_ = t.q_;
    t.adam_ = AdamState::for_net(t.q_, cfg.lr);
    return t;
}

double CriticTrainer::gamma_at(long env_step) const {
    return gamma_schedule(env_step, cfg_.total_steps, cfg_.gamma_start, cfg_.gamma_end);
}

double CriticTrainer::q_value(const std::vector<double>& obs, const ControlVec& u) const {
    std::vector<double> input(obs);
    input.insert(input.end(), u.begin(), u.end());
    return q_.forward(input)[0];
}

double CriticTrainer::train_step(const ReplayBuffer& buffer,
                                 const std::vector<std::size_t>& batch, long env_step,
                                 const PolicyFn& eval_policy, std::vector<double>* td_errors) {
    const double gamma = gamma_at(env_step);
    MlpGrads grads = q_.zero_grads();
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    std::vector<double> input;
    Mlp::Cache cache;

    for (const std::size_t idx : batch) {
        const Transition& tr = buffer[idx];
        double target = 0.0;
        const bool terminal = tr.terminal != TerminalKind::none;

        switch (cfg_.rule) {
            case CriticRule::hj: {
                if (terminal) {
                    target = tr.l_x;
                } else {
                    const ControlVec u_next = eval_policy(tr.raw_next, tr.obs_next);
                    input.assign(tr.obs_next.begin(), tr.obs_next.end());
                    input.insert(input.end(), u_next.begin(), u_next.end());
                    const double q_next = q_target_.forward(input)[0];
                    target = cfg_.task == TaskMode::avoid ? hj_target(tr.l_x, q_next, gamma)
                                                          : hj_target_reach(tr.l_x, q_next, gamma);
                }
                break;
            }
            case CriticRule::sqrl:
            case CriticRule::cql: {
                const int event = cfg_.task == TaskMode::avoid
                                      ? (tr.terminal == TerminalKind::failure ? 1 : 0)
                                      : (tr.terminal == TerminalKind::success ? 1 : 0);
                double q_next = 0.0;
                if (!terminal) {
                    const ControlVec u_next = eval_policy(tr.raw_next, tr.obs_next);
                    input.assign(tr.obs_next.begin(), tr.obs_next.end());
                    input.insert(input.end(), u_next.begin(), u_next.end());
                    q_next = q_target_.forward(input)[0];
                }
                target = sqrl_target(event, q_next, gamma);
                break;
            }
        }

        input.assign(tr.obs.begin(), tr.obs.end());
        input.insert(input.end(), tr.u.begin(), tr.u.end());
        const double q = q_.forward(input, &cache)[0];
        const double err = q - target;
        if (td_errors) td_errors->push_back(std::abs(err));
        loss += 0.5 * err * err * inv_n;
        // d(0.5 (q - y)^2)/dq = err; CQL adds alpha at (x, pi(x)) and -alpha here
        double seed = err * inv_n;
        if (cfg_.rule == CriticRule::cql) seed -= cfg_.alpha_cql * inv_n;
        q_.backward(cache, std::vector<double>{seed}, grads);

        if (cfg_.rule == CriticRule::cql) {
            const ControlVec u_pi = eval_policy(tr.raw_x, tr.obs);
            input.assign(tr.obs.begin(), tr.obs.end());
            input.insert(input.end(), u_pi.begin(), u_pi.end());
            const double q_pi = q_.forward(input, &cache)[0];
            loss += -cfg_.alpha_cql * (q_pi - q) * inv_n;
            q_.backward(cache, std::vector<double>{cfg_.alpha_cql * inv_n}, grads);
        }
    }

    adam_.apply(q_, grads);
    polyak_update(q_target_, q_, cfg_.tau);
    return loss;
}

double cql_loss(const std::vector<Transition>& batch, const Mlp& critic,
                const PolicyFn& eval_policy, double alpha, double gamma_s, TaskMode task,
                const Mlp& target_critic) {
    if (batch.empty()) throw DomainError("cql_loss: empty batch");
    double mse = 0.0;
    double reg = 0.0;
    std::vector<double> input;
    for (const auto& tr : batch) {
        const int event = task == TaskMode::avoid
                              ? (tr.terminal == TerminalKind::failure ? 1 : 0)
                              : (tr.terminal == TerminalKind::success ? 1 : 0);
        double q_next = 0.0;
        if (tr.terminal == TerminalKind::none) {
            const ControlVec u_next = eval_policy(tr.raw_next, tr.obs_next);
            input.assign(tr.obs_next.begin(), tr.obs_next.end());
            input.insert(input.end(), u_next.begin(), u_next.end());
            q_next = target_critic.forward(input)[0];
        }
        const double target = sqrl_target(event, q_next, gamma_s);

        input.assign(tr.obs.begin(), tr.obs.end());
        input.insert(input.end(), tr.u.begin(), tr.u.end());
        const double q_data = critic.forward(input)[0];
        mse += 0.5 * (q_data - target) * (q_data - target);

        const ControlVec u_pi = eval_policy(tr.raw_x, tr.obs);
        input.assign(tr.obs.begin(), tr.obs.end());
        input.insert(input.end(), u_pi.begin(), u_pi.end());
        const double q_pi = critic.forward(input)[0];
        reg += q_pi - q_data;
    }
    const double n = static_cast<double>(batch.size());
    return mse / n - alpha * reg / n;
}

CriticTrainResult train_safety_critic(Env& env, const CriticConfig& cfg, const EvalMesh& mesh,
                                      const PolicyFn& eval_policy, double score_sign,
                                      std::uint64_t seed) {
    cfg.validate();
    Rng root(seed);
    Rng init_rng = root.split("critic-init");
    Rng env_rng = root.split("env");
    Rng policy_rng = root.split("behavior");
    Rng sample_rng = root.split("replay");

    const int act_dim = env.model().dim_u;
    CriticTrainer trainer = CriticTrainer::make(env.obs_dim(), act_dim, cfg, init_rng);
    ReplayBuffer buffer(cfg.buffer_capacity, cfg.prioritized_replay);

    CriticTrainResult result;
    EnvObs obs = env.reset(SpawnMode::random, env_rng);
    const auto& lo = env.model().control_lo;
    const auto& hi = env.model().control_hi;

    for (long step = 1; step <= cfg.total_steps; ++step) {
        ControlVec u(act_dim);
        for (int i = 0; i < act_dim; ++i) u[i] = policy_rng.uniform(lo[i], hi[i]);
        const StepResult sr = env.step(u);

        Transition tr;
        tr.obs = obs.features;
        tr.u = u;
        tr.r = sr.reward;
        tr.obs_next = sr.obs.features;
        tr.terminal = sr.terminal;
        tr.l_x = obs.l_x;
        tr.l_next = sr.obs.l_x;
        tr.cost = sr.terminal == TerminalKind::failure ? 1 : 0;
        tr.raw_x = obs.raw_state;
        tr.raw_next = sr.obs.raw_state;
        buffer.push(std::move(tr));

        obs = sr.done ? env.reset(SpawnMode::random, env_rng) : sr.obs;

        if (step > cfg.warmup && buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
            const auto batch =
                buffer.sample_indices(static_cast<std::size_t>(cfg.batch_size), sample_rng);
            std::vector<double> td;
            const double loss =
                trainer.train_step(buffer, batch, step, eval_policy,
                                   cfg.prioritized_replay ? &td : nullptr);
            if (cfg.prioritized_replay)
                for (std::size_t k = 0; k < batch.size(); ++k)
                    buffer.set_priority(batch[k], td[k]);
            if (!std::isfinite(loss)) {
                result.aborted = true;
                break;
            }
        }
        if (step % cfg.eval_every == 0) {
            result.curve.push_back({step, eval_auroc_on_mesh(trainer.critic(), mesh, score_sign)});
        }
        result.env_steps = step;
    }
    result.critic = trainer.critic();
    return result;
}

}  // namespace reachguard
