#include "reachguard/track.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace reachguard {

namespace {
constexpr double kArcStep = 0.01;    // arclength lookup resolution, m
constexpr double kCoarseStep = 0.5;  // projection seed spacing, m
constexpr double kNewtonTol = 1e-8;  // m
constexpr int kNewtonIters = 20;
}  // namespace

SplineTrack SplineTrack::from_points(std::vector<Point2> points, double width) {
    SplineTrack t;
    t.build(std::move(points), width);
    return t;
}

SplineTrack SplineTrack::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open track file: " + path);
    std::string tag;
    double width = 0.0;
    if (!(in >> tag >> width) || tag != "width")
        throw FormatError("track file must start with 'width <w>': " + path);
    std::vector<Point2> pts;
    double x, y;
    while (in >> x >> y) pts.push_back({x, y});
    return from_points(std::move(pts), width);
}

void SplineTrack::build(std::vector<Point2> points, double width) {
    if (points.size() < 4) throw ConfigError("track needs at least 4 control points");
    if (!(width > 0.0)) throw ConfigError("track width must be positive");
    for (const auto& p : points)
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
            throw ConfigError("non-finite track control point");

    points_ = std::move(points);
    width_ = width;
    const int n = static_cast<int>(points_.size());

    // chord-length knots over the closed loop
    knots_.assign(n + 1, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto& a = points_[i];
        const auto& b = points_[(i + 1) % n];
        const double h = std::hypot(b[0] - a[0], b[1] - a[1]);
        if (h <= 1e-12) throw ConfigError("duplicate adjacent track control points");
        knots_[i + 1] = knots_[i] + h;
    }

    // periodic cubic spline: cyclic tridiagonal system for second derivatives
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 2);
    for (int i = 0; i < n; ++i) {
        const int im = (i + n - 1) % n;
        const double h_prev = knots_[i == 0 ? n : i] - knots_[i == 0 ? n - 1 : i - 1];
        const double h_next = knots_[i + 1] - knots_[i];
        A(i, im) += h_prev / 6.0;
        A(i, i) += (h_prev + h_next) / 3.0;
        A(i, (i + 1) % n) += h_next / 6.0;
        for (int c = 0; c < 2; ++c) {
            const double y_prev = points_[im][c];
            const double y_i = points_[i][c];
            const double y_next = points_[(i + 1) % n][c];
            rhs(i, c) = (y_next - y_i) / h_next - (y_i - y_prev) / h_prev;
        }
    }
    const Eigen::MatrixXd m = A.partialPivLu().solve(rhs);
    second_derivs_.assign(n + 1, {0.0, 0.0});
    for (int i = 0; i < n; ++i) second_derivs_[i] = {m(i, 0), m(i, 1)};
    second_derivs_[n] = second_derivs_[0];

    // march the parameter, recording t at every 1 cm of arclength
    arc_t_.clear();
    arc_t_.push_back(0.0);
    double s_acc = 0.0;
    Point2 prev;
    eval_param(0.0, &prev, nullptr, nullptr);
    const double t_end = knots_[n];
    for (int i = 0; i < n; ++i) {
        const double h = knots_[i + 1] - knots_[i];
        const int sub = std::max(4, static_cast<int>(std::ceil(h / 0.002)));
        for (int k = 1; k <= sub; ++k) {
            const double t = knots_[i] + h * k / sub;
            Point2 cur;
            eval_param(t, &cur, nullptr, nullptr);
            const double ds = std::hypot(cur[0] - prev[0], cur[1] - prev[1]);
            const double s_new = s_acc + ds;
            while (static_cast<double>(arc_t_.size()) * kArcStep <= s_new) {
                const double s_mark = static_cast<double>(arc_t_.size()) * kArcStep;
                const double frac = ds > 0.0 ? (s_mark - s_acc) / ds : 0.0;
                const double t_prev = t - h / sub;
                arc_t_.push_back(t_prev + frac * (h / sub));
            }
            s_acc = s_new;
            prev = cur;
        }
    }
    total_length_ = s_acc;
    if (!(total_length_ > 0.0)) throw ConfigError("degenerate track");
    (void)t_end;

    // coarse projection seeds every 0.5 m
    coarse_t_.clear();
    coarse_pos_.clear();
    const int n_coarse = static_cast<int>(std::floor(total_length_ / kCoarseStep));
    for (int j = 0; j < n_coarse; ++j) {
        const double t = param_at_arclength(j * kCoarseStep);
        Point2 p;
        eval_param(t, &p, nullptr, nullptr);
        coarse_t_.push_back(t);
        coarse_pos_.push_back(p);
    }

    // simplicity check at the sampled resolution: sections far apart along
    // the centerline must not come closer than the band width
    for (int a = 0; a < n_coarse; ++a) {
        for (int b = a + 1; b < n_coarse; ++b) {
            double ds = (b - a) * kCoarseStep;
            ds = std::min(ds, total_length_ - ds);
            if (ds < 4.0 * width_) continue;
            const double dx = coarse_pos_[a][0] - coarse_pos_[b][0];
            const double dy = coarse_pos_[a][1] - coarse_pos_[b][1];
            if (dx * dx + dy * dy < width_ * width_)
                throw ConfigError("track centerline self-intersects at sampled resolution");
        }
    }
}

void SplineTrack::eval_param(double t, Point2* pos, Point2* d1, Point2* d2) const {
    const int n = static_cast<int>(points_.size());
    const double period = knots_[n];
    t = std::fmod(t, period);
    if (t < 0.0) t += period;
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
    int i = static_cast<int>(it - knots_.begin()) - 1;
    i = std::clamp(i, 0, n - 1);
    const double h = knots_[i + 1] - knots_[i];
    const double a = (knots_[i + 1] - t) / h;
    const double b = (t - knots_[i]) / h;
    for (int c = 0; c < 2; ++c) {
        const double y0 = points_[i][c];
        const double y1 = points_[(i + 1) % n][c];
        const double m0 = second_derivs_[i][c];
        const double m1 = second_derivs_[i + 1][c];
        if (pos)
            (*pos)[c] = a * y0 + b * y1 +
                        ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        if (d1)
            (*d1)[c] = (y1 - y0) / h +
                       ((3.0 * b * b - 1.0) * m1 - (3.0 * a * a - 1.0) * m0) * h / 6.0;
        if (d2) (*d2)[c] = a * m0 + b * m1;
    }
}

double SplineTrack::param_at_arclength(double s) const {
    s = wrap_s(s);
    const double idx = s / kArcStep;
    const std::size_t k = std::min(static_cast<std::size_t>(idx), arc_t_.size() - 1);
    if (k + 1 >= arc_t_.size()) {
        const int n = static_cast<int>(points_.size());
        const double t0 = arc_t_[k];
        const double t1 = knots_[n];
        const double span = total_length_ - k * kArcStep;
        const double frac = span > 0.0 ? (s - k * kArcStep) / span : 0.0;
        return t0 + frac * (t1 - t0);
    }
    const double frac = idx - static_cast<double>(k);
    return arc_t_[k] + frac * (arc_t_[k + 1] - arc_t_[k]);
}

double SplineTrack::arclength_at_param(double t) const {
    const int n = static_cast<int>(points_.size());
    const double period = knots_[n];
    t = std::fmod(t, period);
    if (t < 0.0) t += period;
    const auto it = std::upper_bound(arc_t_.begin(), arc_t_.end(), t);
    std::size_t k = static_cast<std::size_t>(it - arc_t_.begin());
    if (k == 0) return 0.0;
    --k;
    const double t0 = arc_t_[k];
    const double t1 = (k + 1 < arc_t_.size()) ? arc_t_[k + 1] : period;
    const double s0 = k * kArcStep;
    const double s1 = (k + 1 < arc_t_.size()) ? (k + 1) * kArcStep : total_length_;
    if (t1 <= t0) return s0;
    return s0 + (t - t0) / (t1 - t0) * (s1 - s0);
}

Point2 SplineTrack::position(double s) const {
    Point2 p;
    eval_param(param_at_arclength(s), &p, nullptr, nullptr);
    return p;
}

Point2 SplineTrack::tangent(double s) const {
    Point2 d;
    eval_param(param_at_arclength(s), nullptr, &d, nullptr);
    const double norm = std::hypot(d[0], d[1]);
    return {d[0] / norm, d[1] / norm};
}

double SplineTrack::heading(double s) const {
    const Point2 t = tangent(s);
    return std::atan2(t[1], t[0]);
}

double SplineTrack::curvature(double s) const {
    Point2 d1, d2;
    eval_param(param_at_arclength(s), nullptr, &d1, &d2);
    const double speed2 = d1[0] * d1[0] + d1[1] * d1[1];
    return (d1[0] * d2[1] - d1[1] * d2[0]) / (speed2 * std::sqrt(speed2));
}

double SplineTrack::refine_projection(double t0, const Point2& p) const {
    // Newton on g(t) = (c(t) - p) . c'(t)
    double t = t0;
    for (int it = 0; it < kNewtonIters; ++it) {
        Point2 c, d1, d2;
        eval_param(t, &c, &d1, &d2);
        const double rx = c[0] - p[0];
        const double ry = c[1] - p[1];
        const double g = rx * d1[0] + ry * d1[1];
        const double gp = d1[0] * d1[0] + d1[1] * d1[1] + rx * d2[0] + ry * d2[1];
        if (std::abs(gp) < 1e-14) break;
        const double step = g / gp;
        t -= step;
        const double speed = std::hypot(d1[0], d1[1]);
        if (std::abs(step) * speed < kNewtonTol) break;
    }
    return t;
}

TrackFrame SplineTrack::project(const Point2& p) const {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
        throw DomainError("non-finite point in track projection");

    // coarse pass over the 0.5 m table
    double best_d2 = std::numeric_limits<double>::infinity();
    for (const auto& q : coarse_pos_) {
        const double dx = p[0] - q[0];
        const double dy = p[1] - q[1];
        best_d2 = std::min(best_d2, dx * dx + dy * dy);
    }
    // refine every coarse local minimum that could still win after
    // refinement (coarse sampling error is at most one step)
    const double best_d = std::sqrt(best_d2);
    const double keep = (best_d + 2.0 * kCoarseStep) * (best_d + 2.0 * kCoarseStep);
    double min_dist = std::numeric_limits<double>::infinity();
    double min_s = 0.0;
    double min_t = 0.0;
    const int nc = static_cast<int>(coarse_pos_.size());
    for (int j = 0; j < nc; ++j) {
        const double dx = p[0] - coarse_pos_[j][0];
        const double dy = p[1] - coarse_pos_[j][1];
        const double d2 = dx * dx + dy * dy;
        if (d2 > keep) continue;
        const auto& prev = coarse_pos_[(j + nc - 1) % nc];
        const auto& next = coarse_pos_[(j + 1) % nc];
        const double dp = (p[0] - prev[0]) * (p[0] - prev[0]) + (p[1] - prev[1]) * (p[1] - prev[1]);
        const double dn = (p[0] - next[0]) * (p[0] - next[0]) + (p[1] - next[1]) * (p[1] - next[1]);
        if (d2 > dp || d2 > dn) continue;  // not a local minimum
        const double t = refine_projection(coarse_t_[j], p);
        Point2 c;
        eval_param(t, &c, nullptr, nullptr);
        const double dist = std::hypot(p[0] - c[0], p[1] - c[1]);
        const double s = arclength_at_param(t);
        if (dist < min_dist - 1e-9 || (dist < min_dist + 1e-9 && s < min_s)) {
            min_dist = dist;
            min_s = s;
            min_t = t;
        }
    }

    Point2 c, d1;
    eval_param(min_t, &c, &d1, nullptr);
    const double norm = std::hypot(d1[0], d1[1]);
    const double tx = d1[0] / norm;
    const double ty = d1[1] / norm;
    // left normal is (-ty, tx)
    const double d = (p[0] - c[0]) * -ty + (p[1] - c[1]) * tx;
    TrackFrame f;
    f.s = wrap_s(min_s);
    f.d = d;
    f.heading = std::atan2(ty, tx);
    return f;
}

double SplineTrack::signed_distance(const Point2& p) const {
    const TrackFrame f = project(p);
    return 0.5 * width_ - std::abs(f.d);
}

double SplineTrack::wrap_s(double s) const {
    s = std::fmod(s, total_length_);
    if (s < 0.0) s += total_length_;
    if (s >= total_length_) s = 0.0;
    return s;
}

double SplineTrack::signed_delta(double s_prev, double s_now) const {
    double d = wrap_s(s_now) - wrap_s(s_prev);
    if (d > 0.5 * total_length_) d -= total_length_;
    if (d <= -0.5 * total_length_) d += total_length_;
    return d;
}

double SplineTrack::progress_fraction(double s_start, double s_now, int direction) const {
    const double fwd = wrap_s(s_now) - wrap_s(s_start);
    double adv = direction >= 0 ? fwd : -fwd;
    if (adv < 0.0) adv += total_length_;
    return adv / total_length_;
}

}  // namespace reachguard
