#pragma once

#include <memory>
#include <string>
#include <vector>

#include "reachguard/grid.hpp"
#include "reachguard/track.hpp"

namespace reachguard {

struct SegmentParams {
    double segment_length = 150.0;  // core ownership, m
    double overlap = 50.0;          // margin on both sides, covers stopping distance
    double xy_resolution = 1.25;    // m
    double margin = 5.0;            // grid extent beyond the band edge, m
    double v_lo = 0.0;
    double v_hi = 20.0;
    int v_nodes = 9;
    int psi_nodes = 30;
    std::vector<int> control_samples = {2, 3};  // bang-bang accel, steer with center
    double dt = 0.1;
    double gamma = 0.9999;
    double tol = 1e-4;
    int max_iters = 400;
    double freeze_below = -3.5;  // nodes this deep outside the band stay at l
};

// One arclength window solved on a local chord-aligned grid over
// (xi, eta, v, psi). psi is the heading relative to the frame rotation.
struct TrackSegment {
    ValueGrid grid;
    double s_core_lo = 0.0;  // core ownership [lo, hi)
    double s_core_hi = 0.0;
    double theta = 0.0;  // frame rotation
    double tx = 0.0;     // frame origin in world coordinates
    double ty = 0.0;

    StateVec to_local(const StateVec& world) const;
};

// Segment-wise safety value over the whole track with core-region dispatch.
class SegmentedValue {
public:
    SegmentedValue() = default;
    SegmentedValue(SegmentedValue&& other) noexcept
        : track_(std::move(other.track_)), bike_(other.bike_), params_(other.params_),
          segments_(std::move(other.segments_)) {
        fallback_.store(other.fallback_.load(std::memory_order_relaxed),
                        std::memory_order_relaxed);
    }
    SegmentedValue& operator=(SegmentedValue&& other) noexcept {
        track_ = std::move(other.track_);
        bike_ = other.bike_;
        params_ = other.params_;
        segments_ = std::move(other.segments_);
        fallback_.store(other.fallback_.load(std::memory_order_relaxed),
                        std::memory_order_relaxed);
        return *this;
    }

    static SegmentedValue solve(std::shared_ptr<const SplineTrack> track, const BikeParams& bike,
                                const SegmentParams& params);

    // directory layout: manifest.json + seg_###.hjvg
    void save(const std::string& dir) const;
    static SegmentedValue load(const std::string& dir, std::shared_ptr<const SplineTrack> track);

    int count() const { return static_cast<int>(segments_.size()); }
    const TrackSegment& segment(int i) const { return segments_[i]; }
    const TrackSegment* owner_of(double s) const;

    // Value of a world state (x, y, v, phi). Queries outside every core fall
    // back to l(x) and bump the fallback counter.
    double value(const StateVec& world, const TrackFrame& frame) const;
    double value(const StateVec& world) const;

    // Grid-gradient bang-bang action (brake or floor it, steer by the
    // heading gradient). Falls back to full brake, zero steer.
    ControlVec optimal_action(const StateVec& world, const TrackFrame& frame) const;

    std::uint64_t fallback_count() const { return fallback_.load(std::memory_order_relaxed); }
    const SplineTrack& track() const { return *track_; }
    const BikeParams& bike_params() const { return bike_; }
    const SegmentParams& params() const { return params_; }

private:
    std::shared_ptr<const SplineTrack> track_;
    BikeParams bike_;
    SegmentParams params_;
    std::vector<TrackSegment> segments_;
    mutable std::atomic<std::uint64_t> fallback_{0};
};

}  // namespace reachguard
