#pragma once

#include <memory>
#include <string>
#include <vector>

#include "reachguard/dynamics.hpp"
#include "reachguard/track.hpp"

namespace reachguard {

enum class SpawnMode { random, fixed };
enum class DoneReason { none, lap_complete, off_track, timeout, no_progress };
enum class TerminalKind : std::uint8_t { none = 0, failure = 1, success = 2, timeout = 3 };

const char* to_string(DoneReason r);

struct EnvObs {
    std::vector<double> features;
    double l_x = 0.0;
    StateVec raw_state;  // for oracles and logging only
};

struct StepResult {
    EnvObs obs;
    double reward = 0.0;
    bool done = false;
    DoneReason reason = DoneReason::none;
    TerminalKind terminal = TerminalKind::none;
    double speed = 0.0;
};

struct EpisodeMetrics {
    double ecp = 0.0;
    double avg_speed = 0.0;
    double duration = 0.0;  // seconds
    long interventions = 0;
    double min_l = 0.0;
    DoneReason reason = DoneReason::none;
};

// Per-step record; the runner fills the gate fields.
struct EpisodeLogRow {
    long step = 0;
    double speed = 0.0;
    double l_x = 0.0;
    double progress = 0.0;  // fraction of a lap, nondecreasing
    double reward = 0.0;
    double q_s = 0.0;
    int gate_intervened = 0;  // 1 when the safety policy acted
    StateVec x;               // state after the step
    ControlVec u_exec, u_perf;
};

struct EpisodeLog {
    double dt = 0.0;
    DoneReason reason = DoneReason::none;
    std::vector<EpisodeLogRow> rows;
};

EpisodeMetrics compute_metrics(const EpisodeLog& log);

// columns: step, x..., u..., r, l_x, q_s, gate_source
void write_episode_csv(const EpisodeLog& log, const std::string& path);

class Env {
public:
    virtual ~Env() = default;
    virtual const SystemModel& model() const = 0;
    virtual int obs_dim() const = 0;
    virtual double dt() const = 0;
    virtual EnvObs reset(SpawnMode mode, Rng& rng) = 0;
    virtual StepResult step(const ControlVec& u) = 0;
    virtual double l_of(const StateVec& x) const = 0;
    virtual std::vector<double> features_of(const StateVec& x) const = 0;
    virtual bool done() const = 0;
    virtual const StateVec& state() const = 0;
    // accumulated forward progress as a lap fraction (track env; 0 elsewhere)
    virtual double progress() const { return 0.0; }
};

struct ClassicEnvConfig {
    double dt = 0.05;
    long timeout_steps = 3000;
};

// Keep-in task on the line: failure when |x| > 1, reward is speed.
class DoubleIntegratorEnv : public Env {
public:
    explicit DoubleIntegratorEnv(const ClassicEnvConfig& cfg = {});
    const SystemModel& model() const override { return model_; }
    int obs_dim() const override { return 2; }
    double dt() const override { return cfg_.dt; }
    EnvObs reset(SpawnMode mode, Rng& rng) override;
    StepResult step(const ControlVec& u) override;
    double l_of(const StateVec& x) const override { return 1.0 - std::abs(x[0]); }
    std::vector<double> features_of(const StateVec& x) const override { return {x[0], x[1]}; }
    bool done() const override { return done_; }
    const StateVec& state() const override { return state_; }

private:
    EnvObs observe() const;
    SystemModel model_;
    ClassicEnvConfig cfg_;
    StateVec state_;
    long steps_ = 0;
    bool done_ = true;
};

// Reach task: success inside the unit circle, episode leaves through the
// domain edge otherwise. Used for critic training data only.
class DubinsEnv : public Env {
public:
    explicit DubinsEnv(const ClassicEnvConfig& cfg = {.dt = 0.05, .timeout_steps = 400});
    const SystemModel& model() const override { return model_; }
    int obs_dim() const override { return 4; }
    double dt() const override { return cfg_.dt; }
    EnvObs reset(SpawnMode mode, Rng& rng) override;
    StepResult step(const ControlVec& u) override;
    double l_of(const StateVec& x) const override { return 1.0 - std::hypot(x[0], x[1]); }
    std::vector<double> features_of(const StateVec& x) const override {
        return {x[0], x[1], std::cos(x[2]), std::sin(x[2])};
    }
    bool done() const override { return done_; }
    const StateVec& state() const override { return state_; }
    static constexpr double kDomain = 3.2;

private:
    EnvObs observe() const;
    SystemModel model_;
    ClassicEnvConfig cfg_;
    StateVec state_;
    long steps_ = 0;
    bool done_ = true;
};

struct TrackEnvConfig {
    double dt = 0.1;
    long timeout_steps = 3000;
    double reward_speed_weight = 100.0;  // w1 on speed * dt / lap_length
    double reward_offtrack_weight = 1.0; // w2 on max(0, -l)
    double spawn_speed_lo = 5.0;
    double spawn_speed_hi = 15.0;
    long no_progress_window = 100;   // steps
    double no_progress_min = 0.1;    // meters
    double v_min = 0.0;              // idle-creep floor; 0 allows full stops
};

// Bike on the spline track. Observation features:
// [d/width, heading_error, v/30, curvature at s+{0,10,30,60}, l/width].
class TrackEnv : public Env {
public:
    TrackEnv(std::shared_ptr<const SplineTrack> track, const BikeParams& bike = {},
             const TrackEnvConfig& cfg = {});
    const SystemModel& model() const override { return model_; }
    int obs_dim() const override { return 8; }
    double dt() const override { return cfg_.dt; }
    EnvObs reset(SpawnMode mode, Rng& rng) override;
    StepResult step(const ControlVec& u) override;
    double l_of(const StateVec& x) const override {
        return track_->signed_distance({x[0], x[1]});
    }
    std::vector<double> features_of(const StateVec& x) const override;
    bool done() const override { return done_; }
    const StateVec& state() const override { return state_; }
    double progress() const override { return max_progress_; }
    const TrackFrame& frame() const { return frame_; }
    const SplineTrack& track() const { return *track_; }
    const BikeParams& bike_params() const { return bike_; }

private:
    EnvObs observe() const;
    std::shared_ptr<const SplineTrack> track_;
    BikeParams bike_;
    SystemModel model_;
    TrackEnvConfig cfg_;
    StateVec state_;
    TrackFrame frame_;
    double progress_ = 0.0;      // signed accumulated laps
    double max_progress_ = 0.0;  // nondecreasing
    std::vector<double> progress_history_;
    long steps_ = 0;
    bool done_ = true;
};

std::unique_ptr<Env> make_env(const std::string& name, std::shared_ptr<const SplineTrack> track,
                              const BikeParams& bike = {});

}  // namespace reachguard
