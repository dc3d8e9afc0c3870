#include "reachguard/sage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace reachguard {

namespace fs = std::filesystem;

GateDecision gate(double safety_value, double epsilon) {
    if (!std::isfinite(safety_value)) return GateDecision::intervene;
    return safety_value >= epsilon ? GateDecision::pass_through : GateDecision::intervene;
}

PerformanceAgent PerformanceAgent::make(int obs_dim, int act_dim, std::vector<double> act_lo,
                                        std::vector<double> act_hi, const SacConfig& cfg,
                                        Rng& rng) {
    PerformanceAgent a;
    a.cfg = cfg;
    a.actor = GaussianPolicyHead::make(obs_dim, cfg.hidden, act_dim, std::move(act_lo),
                                       std::move(act_hi), rng);
    std::vector<int> qs;
    qs.push_back(obs_dim + act_dim);
    for (int h : cfg.hidden) qs.push_back(h);
    qs.push_back(1);
    a.q1 = Mlp::make(qs, Activation::relu, rng);
    a.q2 = Mlp::make(qs, Activation::relu, rng);
    a.q1_target = a.q1;
    a.q2_target = a.q2;
    a.actor_adam_ = PolicyAdam::for_head(a.actor, cfg.lr_actor);
    a.q1_adam_ = AdamState::for_net(a.q1, cfg.lr_critic);
    a.q2_adam_ = AdamState::for_net(a.q2, cfg.lr_critic);
    return a;
}

ControlVec PerformanceAgent::act(const std::vector<double>& obs, Rng* noise) const {
    return actor.sample(obs, noise).u;
}

namespace {

double q_of(const Mlp& q, const std::vector<double>& obs, const ControlVec& u,
            Mlp::Cache* cache = nullptr) {
    std::vector<double> in(obs);
    in.insert(in.end(), u.begin(), u.end());
    return q.forward(in, cache)[0];
}

}  // namespace

double PerformanceAgent::min_q(const std::vector<double>& obs, const ControlVec& u) const {
    return std::min(q_of(q1, obs, u), q_of(q2, obs, u));
}

void PerformanceAgent::update(const ReplayBuffer& buffer, const std::vector<std::size_t>& batch,
                              Rng& noise) {
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    MlpGrads g1 = q1.zero_grads();
    MlpGrads g2 = q2.zero_grads();
    auto ga = actor.zero_grads();
    Mlp::Cache cache;

    for (const std::size_t idx : batch) {
        const Transition& tr = buffer[idx];
        // critic targets with entropy-regularized min bootstrap
        double y = tr.r;
        if (tr.terminal == TerminalKind::none) {
            const auto next = actor.sample(tr.obs_next, &noise);
            const double qt = std::min(q_of(q1_target, tr.obs_next, next.u),
                                       q_of(q2_target, tr.obs_next, next.u));
            y += cfg.gamma * (qt - cfg.alpha * next.log_prob);
        }
        const double q1v = q_of(q1, tr.obs, tr.u, &cache);
        q1.backward(cache, std::vector<double>{(q1v - y) * inv_n}, g1);
        const double q2v = q_of(q2, tr.obs, tr.u, &cache);
        q2.backward(cache, std::vector<double>{(q2v - y) * inv_n}, g2);

        // actor ascends min(Q1, Q2) with entropy bonus
        const auto s = actor.sample(tr.obs, &noise);
        Mlp::Cache c1, c2;
        const double a1 = q_of(q1, tr.obs, s.u, &c1);
        const double a2 = q_of(q2, tr.obs, s.u, &c2);
        const Mlp& q_min = a1 <= a2 ? q1 : q2;
        const Mlp::Cache& c_min = a1 <= a2 ? c1 : c2;
        MlpGrads scratch = q_min.zero_grads();
        const auto d_in = q_min.backward(c_min, std::vector<double>{1.0}, scratch);
        const int act_dim = static_cast<int>(s.u.size());
        std::vector<double> dL_du(act_dim);
        for (int i = 0; i < act_dim; ++i)
            dL_du[i] = -d_in[tr.obs.size() + i] * inv_n;  // minimize alpha*logp - Q
        actor.backward(s, dL_du, cfg.alpha * inv_n, ga);
    }
    q1_adam_.apply(q1, g1);
    q2_adam_.apply(q2, g2);
    actor_adam_.apply(actor, ga);
    polyak_update(q1_target, q1, cfg.tau);
    polyak_update(q2_target, q2, cfg.tau);
}

void PerformanceAgent::save(const std::string& dir, const std::string& prefix) const {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / (prefix + ".rgac"), std::ios::binary);
    if (!out) throw IoError("cannot write agent checkpoint in " + dir);
    actor.save(out);
    q1.save(out);
    q2.save(out);
    q1_target.save(out);
    q2_target.save(out);
}

void PerformanceAgent::load(const std::string& dir, const std::string& prefix) {
    std::ifstream in(fs::path(dir) / (prefix + ".rgac"), std::ios::binary);
    if (!in) throw IoError("cannot open agent checkpoint in " + dir);
    actor = GaussianPolicyHead::load(in);
    q1 = Mlp::load(in);
    q2 = Mlp::load(in);
    q1_target = Mlp::load(in);
    q2_target = Mlp::load(in);
    actor_adam_ = PolicyAdam::for_head(actor, cfg.lr_actor);
    q1_adam_ = AdamState::for_net(q1, cfg.lr_critic);
    q2_adam_ = AdamState::for_net(q2, cfg.lr_critic);
}

SafetyActorCritic SafetyActorCritic::make(int obs_dim, int act_dim, std::vector<double> act_lo,
                                          std::vector<double> act_hi, const SafetyAcConfig& cfg,
                                          Rng& rng) {
    SafetyActorCritic s;
    s.cfg = cfg;
    s.actor = GaussianPolicyHead::make(obs_dim, cfg.hidden, act_dim, std::move(act_lo),
                                       std::move(act_hi), rng);
    std::vector<int> qs;
    qs.push_back(obs_dim + act_dim);
    for (int h : cfg.hidden) qs.push_back(h);
    qs.push_back(1);
    s.critic = Mlp::make(qs, Activation::tanh_act, rng);
    s.critic_target = s.critic;
    s.actor_adam_ = PolicyAdam::for_head(s.actor, cfg.lr_actor);
    s.critic_adam_ = AdamState::for_net(s.critic, cfg.lr_critic);
    return s;
}

double SafetyActorCritic::q_value(const std::vector<double>& obs, const ControlVec& u) const {
    return q_of(critic, obs, u);
}

ControlVec SafetyActorCritic::act(const std::vector<double>& obs, Rng* noise) const {
    return actor.sample(obs, noise).u;
}

double SafetyActorCritic::gamma_at(long env_step) const {
    return gamma_schedule(env_step, cfg.anneal_steps, cfg.gamma_start, cfg.gamma_end);
}

void SafetyActorCritic::update_critic(const ReplayBuffer& buffer,
                                      const std::vector<std::size_t>& batch, long env_step,
                                      Rng& noise) {
    const double gamma = gamma_at(env_step);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    MlpGrads g = critic.zero_grads();
    Mlp::Cache cache;
    for (const std::size_t idx : batch) {
        const Transition& tr = buffer[idx];
        double y;
        if (tr.terminal != TerminalKind::none) {
            y = tr.l_x;
        } else {
            const auto next = actor.sample(tr.obs_next, &noise);
            y = hj_target(tr.l_x, q_of(critic_target, tr.obs_next, next.u), gamma);
        }
        const double q = q_of(critic, tr.obs, tr.u, &cache);
        critic.backward(cache, std::vector<double>{(q - y) * inv_n}, g);
    }
    critic_adam_.apply(critic, g);
    polyak_update(critic_target, critic, cfg.tau);
}

void SafetyActorCritic::update_actor(const ReplayBuffer& buffer,
                                     const std::vector<std::size_t>& batch, Rng& noise) {
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    auto ga = actor.zero_grads();
    for (const std::size_t idx : batch) {
        const Transition& tr = buffer[idx];
        const auto s = actor.sample(tr.obs, &noise);
        Mlp::Cache cache;
        q_of(critic, tr.obs, s.u, &cache);
        MlpGrads scratch = critic.zero_grads();
        const auto d_in = critic.backward(cache, std::vector<double>{1.0}, scratch);
        const int act_dim = static_cast<int>(s.u.size());
        std::vector<double> dL_du(act_dim);
        for (int i = 0; i < act_dim; ++i) dL_du[i] = -d_in[tr.obs.size() + i] * inv_n;
        actor.backward(s, dL_du, cfg.alpha * inv_n, ga);
    }
    actor_adam_.apply(actor, ga);
}

void SafetyActorCritic::save(const std::string& dir, const std::string& prefix) const {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / (prefix + ".rgac"), std::ios::binary);
    if (!out) throw IoError("cannot write safety checkpoint in " + dir);
    actor.save(out);
    critic.save(out);
    critic_target.save(out);
}

void SafetyActorCritic::load(const std::string& dir, const std::string& prefix) {
    std::ifstream in(fs::path(dir) / (prefix + ".rgac"), std::ios::binary);
    if (!in) throw IoError("cannot open safety checkpoint in " + dir);
    actor = GaussianPolicyHead::load(in);
    critic = Mlp::load(in);
    critic_target = Mlp::load(in);
    actor_adam_ = PolicyAdam::for_head(actor, cfg.lr_actor);
    critic_adam_ = AdamState::for_net(critic, cfg.lr_critic);
}

StaticSafetyPolicy::StaticSafetyPolicy(std::shared_ptr<const SegmentedValue> values, double dt)
    : values_(std::move(values)), model_(make_bike(values_->bike_params())), dt_(dt) {}

double StaticSafetyPolicy::q_value(const StateVec& raw_state, const ControlVec& u,
                                   const TrackFrame&) const {
    // one-step nominal rollout, then the solved value at the landing state
    const StateVec next = integrate_step(model_, raw_state, u, dt_, Integrator::euler);
    return values_->value(next);
}

ControlVec StaticSafetyPolicy::action(const StateVec& raw_state, const TrackFrame& frame) const {
    const ControlVec u = values_->optimal_action(raw_state, frame);
    if (!all_finite(u)) {
        failsafe_.fetch_add(1, std::memory_order_relaxed);
        return {values_->bike_params().a_min, 0.0};
    }
    return u;
}

SageRunner::SageRunner(std::unique_ptr<Env> env, std::unique_ptr<Env> eval_env,
                       const SageConfig& cfg, std::shared_ptr<const SegmentedValue> static_values,
                       std::uint64_t seed)
    : env_(std::move(env)), eval_env_(std::move(eval_env)), cfg_(cfg),
      static_values_(std::move(static_values)),
      buffer_(cfg.buffer_capacity), env_rng_(0), actor_rng_(0), safety_rng_(0), sample_rng_(0),
      update_rng_(0), safety_sample_rng_(0), safety_update_rng_(0) {
    Rng root(seed);
    env_rng_ = root.split("env");
    actor_rng_ = root.split("actor");
    safety_rng_ = root.split("safety");
    sample_rng_ = root.split("replay");
    update_rng_ = root.split("update");
    safety_sample_rng_ = root.split("safety-replay");
    safety_update_rng_ = root.split("safety-update");
    Rng init = root.split("init");

    const int obs_dim = env_->obs_dim();
    const int act_dim = env_->model().dim_u;
    const auto lo = env_->model().control_lo;
    const auto hi = env_->model().control_hi;
    if (cfg_.perf_source == PerfSource::sac)
        perf_ = std::make_unique<PerformanceAgent>(
            PerformanceAgent::make(obs_dim, act_dim, lo, hi, cfg_.sac, init));
    if (cfg_.safety_source == SafetySource::neural) {
        SafetyAcConfig sc = cfg_.safety;
        sc.anneal_steps = cfg_.total_steps;
        safety_ac_ = std::make_unique<SafetyActorCritic>(
            SafetyActorCritic::make(obs_dim, act_dim, lo, hi, sc, init));
    }
    if (cfg_.safety_source == SafetySource::static_grid) {
        if (!static_values_) throw ConfigError("static safety source requires solved grids");
        static_policy_.emplace(static_values_, env_->dt());
    }
}

double SageRunner::safety_value_of(const EnvObs& obs, const ControlVec& u) const {
    switch (cfg_.safety_source) {
        case SafetySource::none:
            return std::numeric_limits<double>::infinity();
        case SafetySource::neural:
            return safety_ac_->q_value(obs.features, u);
        case SafetySource::static_grid: {
            auto* track_env = dynamic_cast<TrackEnv*>(env_.get());
            const TrackFrame frame =
                track_env ? track_env->frame() : TrackFrame{};
            return static_policy_->q_value(obs.raw_state, u, frame);
        }
    }
    return 0.0;
}

ControlVec SageRunner::safety_action(const EnvObs& obs, Rng* noise) {
    if (cfg_.safety_source == SafetySource::static_grid) {
        auto* track_env = dynamic_cast<TrackEnv*>(env_.get());
        const TrackFrame frame = track_env ? track_env->frame() : TrackFrame{};
        return static_policy_->action(obs.raw_state, frame);
    }
    return safety_ac_->act(obs.features, noise);
}

EnvObs SageRunner::begin_episode(SpawnMode mode) {
    obs_ = env_->reset(mode, env_rng_);
    current_log_ = EpisodeLog{};
    current_log_.dt = env_->dt();
    episode_return_ = 0.0;
    return obs_;
}

SageRunner::StepOutcome SageRunner::sage_step() {
    StepOutcome out;
    const auto& lo = env_->model().control_lo;
    const auto& hi = env_->model().control_hi;
    if (cfg_.perf_source == PerfSource::sac) {
        out.u_perf = perf_->act(obs_.features, &actor_rng_);
    } else {
        out.u_perf.resize(lo.size());
        for (std::size_t i = 0; i < lo.size(); ++i)
            out.u_perf[i] = actor_rng_.uniform(lo[i], hi[i]);
    }
    out.q_s = safety_value_of(obs_, out.u_perf);
    out.intervened =
        cfg_.safety_source != SafetySource::none &&
        gate(out.q_s, cfg_.epsilon) == GateDecision::intervene;
    out.u_exec = out.intervened ? safety_action(obs_, &safety_rng_) : out.u_perf;
    if (out.intervened)
        ++result_.gate_interventions;
    else
        ++result_.gate_passes;

    const EnvObs obs_before = obs_;
    out.result = env_->step(out.u_exec);
    ++step_;
    episode_return_ += out.result.reward;

    const bool store = cfg_.replay == ReplayPolicy::store_all || !out.intervened;
    if (store) {
        Transition tr;
        tr.obs = obs_before.features;
        tr.u = out.u_exec;
        tr.r = out.result.reward;
        tr.obs_next = out.result.obs.features;
        tr.terminal = out.result.terminal;
        tr.l_x = obs_before.l_x;
        tr.l_next = out.result.obs.l_x;
        tr.cost = out.result.terminal == TerminalKind::failure ? 1 : 0;
        tr.raw_x = obs_before.raw_state;
        tr.raw_next = out.result.obs.raw_state;
        buffer_.push(std::move(tr));
    }

    EpisodeLogRow row;
    row.step = step_;
    row.speed = out.result.speed;
    row.l_x = out.result.obs.l_x;
    row.progress = env_->progress();
    row.reward = out.result.reward;
    row.q_s = out.q_s;
    row.gate_intervened = out.intervened ? 1 : 0;
    row.x = out.result.obs.raw_state;
    row.u_exec = out.u_exec;
    row.u_perf = out.u_perf;
    current_log_.rows.push_back(row);

    obs_ = out.result.obs;
    return out;
}

void SageRunner::finish_episode(DoneReason reason) {
    current_log_.reason = reason;
    if (current_log_.rows.empty()) return;
    const EpisodeMetrics m = compute_metrics(current_log_);
    result_.train_episodes.push_back(m);
    if (reason == DoneReason::off_track) ++result_.offtrack_train_episodes;
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%ld,%ld,%.6f,%.4f,%ld,%.6f", step_, episode_index_, m.ecp,
                  m.avg_speed, m.interventions, episode_return_);
    metric_rows_train_.emplace_back(buf);
    ++episode_index_;
}

EpisodeMetrics SageRunner::run_eval_episode(long at_step, EpisodeLog* log_out) {
    Rng eval_rng(0xe0a1ULL ^ static_cast<std::uint64_t>(at_step));
    EnvObs obs = eval_env_->reset(SpawnMode::fixed, eval_rng);
    EpisodeLog log;
    log.dt = eval_env_->dt();
    DoneReason reason = DoneReason::timeout;
    auto* track_env = dynamic_cast<TrackEnv*>(eval_env_.get());
    for (long t = 0;; ++t) {
        ControlVec u_perf;
        if (cfg_.perf_source == PerfSource::sac) {
            u_perf = perf_->act(obs.features, nullptr);  // deterministic
        } else {
            u_perf.resize(eval_env_->model().dim_u);
            for (std::size_t i = 0; i < u_perf.size(); ++i)
                u_perf[i] = eval_rng.uniform(eval_env_->model().control_lo[i],
                                             eval_env_->model().control_hi[i]);
        }
        double q_s = std::numeric_limits<double>::infinity();
        bool intervened = false;
        ControlVec u = u_perf;
        if (cfg_.safety_source == SafetySource::neural) {
            q_s = safety_ac_->q_value(obs.features, u_perf);
            intervened = gate(q_s, cfg_.epsilon) == GateDecision::intervene;
            if (intervened) u = safety_ac_->act(obs.features, nullptr);
        } else if (cfg_.safety_source == SafetySource::static_grid) {
            const TrackFrame frame = track_env ? track_env->frame() : TrackFrame{};
            q_s = static_policy_->q_value(obs.raw_state, u_perf, frame);
            intervened = gate(q_s, cfg_.epsilon) == GateDecision::intervene;
            if (intervened) u = static_policy_->action(obs.raw_state, frame);
        }
        const StepResult sr = eval_env_->step(u);
        EpisodeLogRow row;
        row.step = t;
        row.speed = sr.speed;
        row.l_x = sr.obs.l_x;
        row.progress = eval_env_->progress();
        row.reward = sr.reward;
        row.q_s = q_s;
        row.gate_intervened = intervened ? 1 : 0;
        row.x = sr.obs.raw_state;
        row.u_exec = u;
        row.u_perf = u_perf;
        log.rows.push_back(row);
        obs = sr.obs;
        if (sr.done) {
            reason = sr.reason;
            break;
        }
    }
    log.reason = reason;
    const EpisodeMetrics m = compute_metrics(log);
    if (log_out) *log_out = std::move(log);
    return m;
}

SageResult SageRunner::run() {
    begin_episode(SpawnMode::random);
    while (step_ < cfg_.total_steps) {
        const StepOutcome out = sage_step();

        if (step_ > cfg_.warmup && buffer_.size() >= static_cast<std::size_t>(cfg_.sac.batch_size)) {
            if (perf_) {
                const auto batch = buffer_.sample_indices(
                    static_cast<std::size_t>(cfg_.sac.batch_size), sample_rng_);
                perf_->update(buffer_, batch, update_rng_);
            }
            if (safety_ac_) {
                const auto batch = buffer_.sample_indices(
                    static_cast<std::size_t>(cfg_.safety.batch_size), safety_sample_rng_);
                safety_ac_->update_critic(buffer_, batch, step_, safety_update_rng_);
                safety_ac_->update_actor(buffer_, batch, safety_update_rng_);
            }
        }
        if (out.result.done) {
            finish_episode(out.result.reason);
            if (step_ < cfg_.total_steps) begin_episode(SpawnMode::random);
        }
        if (cfg_.eval_interval > 0 && step_ % cfg_.eval_interval == 0) {
            for (long e = 0; e < cfg_.eval_episodes; ++e) {
                EpisodeLog eval_log;
                const EpisodeMetrics m = run_eval_episode(step_ + e, &eval_log);
                if (!cfg_.out_dir.empty()) {
                    write_episode_csv(eval_log,
                                      (fs::path(cfg_.out_dir) /
                                       ("eval_ep_" + std::to_string(step_) + "_" +
                                        std::to_string(e) + ".csv"))
                                          .string());
                }
                result_.evals.push_back({step_, m});
                char buf[192];
                std::snprintf(buf, sizeof(buf), "%ld,%ld,%.6f,%.4f,%ld,%.6f", step_, e, m.ecp,
                              m.avg_speed, m.interventions, 0.0);
                metric_rows_eval_.emplace_back(buf);
            }
            if (!cfg_.out_dir.empty() && cfg_.save_checkpoints) {
                const std::string dir =
                    (fs::path(cfg_.out_dir) / ("ckpt_" + std::to_string(step_))).string();
                if (perf_) perf_->save(dir, "perf");
                if (safety_ac_) safety_ac_->save(dir, "safety");
            }
        }
    }
    if (!current_log_.rows.empty()) finish_episode(DoneReason::timeout);
    result_.env_steps = step_;
    result_.buffer_size = buffer_.size();
    if (!cfg_.out_dir.empty()) write_outputs();
    return result_;
}

void SageRunner::write_outputs() const {
    fs::create_directories(cfg_.out_dir);
    const std::string header = "step,episode,ecp,avg_speed,interventions,return\n";
    {
        std::ofstream out(fs::path(cfg_.out_dir) / "train_metrics.csv");
        if (!out) throw IoError("cannot write train_metrics.csv");
        out << header;
        for (const auto& row : metric_rows_train_) out << row << "\n";
    }
    {
        std::ofstream out(fs::path(cfg_.out_dir) / "eval_metrics.csv");
        if (!out) throw IoError("cannot write eval_metrics.csv");
        out << header;
        for (const auto& row : metric_rows_eval_) out << row << "\n";
    }
}

}  // namespace reachguard
