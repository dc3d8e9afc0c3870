#include "reachguard/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace reachguard {

const char* to_string(DoneReason r) {
    switch (r) {
        case DoneReason::none: return "none";
        case DoneReason::lap_complete: return "lap_complete";
        case DoneReason::off_track: return "off_track";
        case DoneReason::timeout: return "timeout";
        case DoneReason::no_progress: return "no_progress";
    }
    return "unknown";
}

EpisodeMetrics compute_metrics(const EpisodeLog& log) {
    if (log.rows.empty()) throw DomainError("compute_metrics: empty episode log");
    EpisodeMetrics m;
    m.reason = log.reason;
    double speed_sum = 0.0;
    m.min_l = log.rows.front().l_x;
    for (const auto& row : log.rows) {
        speed_sum += row.speed;
        m.min_l = std::min(m.min_l, row.l_x);
        m.interventions += row.gate_intervened;
    }
    m.avg_speed = speed_sum / static_cast<double>(log.rows.size());
    m.duration = static_cast<double>(log.rows.size()) * log.dt;
    m.ecp = std::min(1.0, log.rows.back().progress);
    if (log.reason == DoneReason::lap_complete) m.ecp = 1.0;
    return m;
}

void write_episode_csv(const EpisodeLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write episode log: " + path);
    const std::size_t nx = log.rows.empty() ? 0 : log.rows.front().x.size();
    const std::size_t nu = log.rows.empty() ? 0 : log.rows.front().u_exec.size();
    out << "step";
    for (std::size_t i = 0; i < nx; ++i) out << ",x" << i;
    for (std::size_t i = 0; i < nu; ++i) out << ",u" << i;
    for (std::size_t i = 0; i < nu; ++i) out << ",u_perf" << i;
    out << ",r,l_x,q_s,gate_source\n";
    char buf[64];
    for (const auto& row : log.rows) {
        out << row.step;
        for (const double v : row.x) {
            std::snprintf(buf, sizeof(buf), ",%.9g", v);
            out << buf;
        }
        for (const double v : row.u_exec) {
            std::snprintf(buf, sizeof(buf), ",%.9g", v);
            out << buf;
        }
        for (const double v : row.u_perf) {
            std::snprintf(buf, sizeof(buf), ",%.9g", v);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g,%d", row.reward, row.l_x, row.q_s,
                      row.gate_intervened);
        out << buf << "\n";
    }
}

DoubleIntegratorEnv::DoubleIntegratorEnv(const ClassicEnvConfig& cfg)
    : model_(make_double_integrator()), cfg_(cfg), state_{0.0, 0.0} {}

EnvObs DoubleIntegratorEnv::observe() const {
    EnvObs o;
    o.raw_state = state_;
    o.features = features_of(state_);
    o.l_x = l_of(state_);
    return o;
}

EnvObs DoubleIntegratorEnv::reset(SpawnMode mode, Rng& rng) {
    if (mode == SpawnMode::fixed) {
        state_ = {0.0, 0.0};
    } else {
        state_ = {rng.uniform(-1.0, 1.0), rng.uniform(-2.0, 2.0)};
    }
    steps_ = 0;
    done_ = false;
    return observe();
}

StepResult DoubleIntegratorEnv::step(const ControlVec& u) {
    if (done_) throw DomainError("step on a finished episode");
    state_ = integrate_step(model_, state_, u, cfg_.dt, Integrator::euler);
    ++steps_;
    StepResult r;
    r.obs = observe();
    r.speed = std::abs(state_[1]);
    r.reward = r.speed;
    if (r.obs.l_x < 0.0) {
        r.done = true;
        r.reason = DoneReason::off_track;
        r.terminal = TerminalKind::failure;
    } else if (steps_ >= cfg_.timeout_steps) {
        r.done = true;
        r.reason = DoneReason::timeout;
        r.terminal = TerminalKind::timeout;
    }
    done_ = r.done;
    return r;
}

DubinsEnv::DubinsEnv(const ClassicEnvConfig& cfg)
    : model_(make_dubins()), cfg_(cfg), state_{0.0, 0.0, 0.0} {}

EnvObs DubinsEnv::observe() const {
    EnvObs o;
    o.raw_state = state_;
    o.features = features_of(state_);
    o.l_x = l_of(state_);
    return o;
}

EnvObs DubinsEnv::reset(SpawnMode mode, Rng& rng) {
    if (mode == SpawnMode::fixed) {
        state_ = {-2.0, 0.0, 0.0};
    } else {
        // spawn outside the goal circle
        do {
            state_ = {rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0),
                      rng.uniform(0.0, kTwoPi)};
        } while (l_of(state_) >= 0.0);
    }
    steps_ = 0;
    done_ = false;
    return observe();
}

StepResult DubinsEnv::step(const ControlVec& u) {
    if (done_) throw DomainError("step on a finished episode");
    state_ = integrate_step(model_, state_, u, cfg_.dt, Integrator::euler);
    ++steps_;
    StepResult r;
    r.obs = observe();
    r.speed = 1.0;
    if (r.obs.l_x >= 0.0) {
        r.reward = 1.0;
        r.done = true;
        r.reason = DoneReason::lap_complete;  // goal reached
        r.terminal = TerminalKind::success;
    } else if (std::abs(state_[0]) > kDomain || std::abs(state_[1]) > kDomain) {
        r.done = true;
        r.reason = DoneReason::off_track;  // left the training domain
        r.terminal = TerminalKind::failure;
    } else if (steps_ >= cfg_.timeout_steps) {
        r.done = true;
        r.reason = DoneReason::timeout;
        r.terminal = TerminalKind::timeout;
    }
    done_ = r.done;
    return r;
}

TrackEnv::TrackEnv(std::shared_ptr<const SplineTrack> track, const BikeParams& bike,
                   const TrackEnvConfig& cfg)
    : track_(std::move(track)), bike_(bike), model_(make_bike(bike)), cfg_(cfg),
      state_{0.0, 0.0, 0.0, 0.0} {}

std::vector<double> TrackEnv::features_of(const StateVec& x) const {
    const TrackFrame f = track_->project({x[0], x[1]});
    const double w = track_->width();
    const double heading_err = std::remainder(x[3] - f.heading, kTwoPi);
    const double l = 0.5 * w - std::abs(f.d);
    return {f.d / w,
            heading_err,
            x[2] / 30.0,
            track_->curvature(f.s),
            track_->curvature(f.s + 10.0),
            track_->curvature(f.s + 30.0),
            track_->curvature(f.s + 60.0),
            l / w};
}

EnvObs TrackEnv::observe() const {
    EnvObs o;
    o.raw_state = state_;
    const double w = track_->width();
    const double heading_err = std::remainder(state_[3] - frame_.heading, kTwoPi);
    const double l = 0.5 * w - std::abs(frame_.d);
    o.features = {frame_.d / w,
                  heading_err,
                  state_[2] / 30.0,
                  track_->curvature(frame_.s),
                  track_->curvature(frame_.s + 10.0),
                  track_->curvature(frame_.s + 30.0),
                  track_->curvature(frame_.s + 60.0),
                  l / w};
    o.l_x = l;
    return o;
}

EnvObs TrackEnv::reset(SpawnMode mode, Rng& rng) {
    double s0 = 0.0;
    double v0 = 10.0;
    if (mode == SpawnMode::random) {
        s0 = rng.uniform(0.0, track_->total_length());
        v0 = rng.uniform(cfg_.spawn_speed_lo, cfg_.spawn_speed_hi);
    }
    const Point2 c = track_->position(s0);
    const double heading = track_->heading(s0);
    state_ = {c[0], c[1], v0, wrap_angle(heading)};
    frame_ = track_->project({state_[0], state_[1]});
    progress_ = 0.0;
    max_progress_ = 0.0;
    progress_history_.assign(1, 0.0);
    steps_ = 0;
    done_ = false;
    return observe();
}

StepResult TrackEnv::step(const ControlVec& u) {
    if (done_) throw DomainError("step on a finished episode");
    state_ = integrate_step(model_, state_, u, cfg_.dt, Integrator::euler);
    state_[2] = std::max(cfg_.v_min, state_[2]);  // no reverse gear, optional idle creep
    ++steps_;

    const double s_prev = frame_.s;
    frame_ = track_->project({state_[0], state_[1]});
    const double advance = track_->signed_delta(s_prev, frame_.s);
    progress_ += advance / track_->total_length();
    max_progress_ = std::max(max_progress_, progress_);
    progress_history_.push_back(progress_);

    StepResult r;
    r.obs = observe();
    r.speed = state_[2];
    r.reward = cfg_.reward_speed_weight * (state_[2] * cfg_.dt / track_->total_length()) -
               cfg_.reward_offtrack_weight * std::max(0.0, -r.obs.l_x);

    if (r.obs.l_x < 0.0) {
        r.done = true;
        r.reason = DoneReason::off_track;
        r.terminal = TerminalKind::failure;
    } else if (max_progress_ >= 1.0) {
        r.done = true;
        r.reason = DoneReason::lap_complete;
        r.terminal = TerminalKind::success;
    } else if (steps_ >= cfg_.timeout_steps) {
        r.done = true;
        r.reason = DoneReason::timeout;
        r.terminal = TerminalKind::timeout;
    } else if (steps_ >= cfg_.no_progress_window) {
        const double gain =
            (progress_ - progress_history_[steps_ - cfg_.no_progress_window]) *
            track_->total_length();
        if (gain < cfg_.no_progress_min) {
            r.done = true;
            r.reason = DoneReason::no_progress;
            r.terminal = TerminalKind::timeout;
        }
    }
    done_ = r.done;
    return r;
}

std::unique_ptr<Env> make_env(const std::string& name, std::shared_ptr<const SplineTrack> track,
                              const BikeParams& bike) {
    if (name == "di" || name == "double_integrator") return std::make_unique<DoubleIntegratorEnv>();
    if (name == "dubins") return std::make_unique<DubinsEnv>();
    if (name == "track") {
        if (!track) throw ConfigError("track env requires a track");
        return std::make_unique<TrackEnv>(std::move(track), bike);
    }
    throw ConfigError("unknown env: " + name);
}

}  // namespace reachguard
