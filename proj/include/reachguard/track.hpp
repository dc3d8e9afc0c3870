#pragma once

#include <array>
#include <string>
#include <vector>

#include "reachguard/common.hpp"

namespace reachguard {

using Point2 = std::array<double, 2>;

// Local track coordinates of a projected point: arclength s in
// [0, total_length), signed lateral offset d (positive = left of travel
// direction), and centerline tangent angle.
struct TrackFrame {
    double s = 0.0;
    double d = 0.0;
    double heading = 0.0;
};

// Closed C2 cubic-spline centerline with constant width. Immutable after
// construction; all queries are read-only.
class SplineTrack {
public:
    // points: closed loop of >= 4 control points (do not repeat the first).
    static SplineTrack from_points(std::vector<Point2> points, double width);

    // Plain-text format: header line "width <w>", then one "x y" pair per
    // line in meters.
    static SplineTrack load(const std::string& path);

    double total_length() const { return total_length_; }
    double width() const { return width_; }
    const std::vector<Point2>& control_points() const { return points_; }

    Point2 position(double s) const;
    Point2 tangent(double s) const;  // unit tangent
    double heading(double s) const;
    double curvature(double s) const;  // signed, left turn positive

    // Nearest-centerline frame; ties broken by smallest s.
    TrackFrame project(const Point2& p) const;

    // l(x): width/2 - |lateral offset|. Positive inside the drivable band,
    // zero on the boundary, negative outside.
    double signed_distance(const Point2& p) const;

    // Wrapped arclength advance from s_start to s_now in the racing
    // direction (+1 forward, -1 reverse), as a fraction of a lap in [0, 1).
    double progress_fraction(double s_start, double s_now, int direction = 1) const;

    double wrap_s(double s) const;
    // shortest signed advance s_prev -> s_now, in (-L/2, L/2]
    double signed_delta(double s_prev, double s_now) const;

private:
    SplineTrack() = default;

    void build(std::vector<Point2> points, double width);
    double param_at_arclength(double s) const;
    // spline evaluation in the chord parameter
    void eval_param(double t, Point2* pos, Point2* d1, Point2* d2) const;
    double refine_projection(double t0, const Point2& p) const;
    double arclength_at_param(double t) const;

    std::vector<Point2> points_;
    double width_ = 0.0;
    double total_length_ = 0.0;

    std::vector<double> knots_;  // chord-length knots, size n+1 (closed)
    std::vector<Point2> second_derivs_;  // size n+1, periodic
    std::vector<double> arc_t_;  // t at s = k * kArcStep
    std::vector<double> coarse_t_;  // t at s = j * kCoarseStep (projection seeds)
    std::vector<Point2> coarse_pos_;
};

}  // namespace reachguard
