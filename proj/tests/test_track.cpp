#include <doctest.h>

#include <cmath>
#include <vector>

#include "reachguard/common.hpp"
#include "reachguard/track.hpp"

using namespace reachguard;

namespace {

SplineTrack default_track() {
    return SplineTrack::load(std::string(REACHGUARD_DATA_DIR) + "/stadium_track.txt");
}

// winding-number point-in-polygon
bool inside_polygon(const std::vector<Point2>& poly, const Point2& p) {
    bool in = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const bool cross = (poly[i][1] > p[1]) != (poly[j][1] > p[1]);
        if (cross) {
            const double x_int = (poly[j][0] - poly[i][0]) * (p[1] - poly[i][1]) /
                                     (poly[j][1] - poly[i][1]) +
                                 poly[i][0];
            if (p[0] < x_int) in = !in;
        }
    }
    return in;
}

}  // namespace

TEST_CASE("default track loads with expected shape") {
    const auto track = default_track();
    CHECK(track.width() == doctest::Approx(10.0));
    CHECK(track.control_points().size() == 16);
    CHECK(track.total_length() > 1000.0);
    CHECK(track.total_length() < 1400.0);
}

TEST_CASE("projection of centerline and offset points") {
    const auto track = default_track();
    for (double s0 : {10.0, 250.0, 417.3, 800.0, 1100.0}) {
        const Point2 c = track.position(s0);
        const TrackFrame f = track.project(c);
        CHECK(std::abs(f.d) < 1e-6);
        CHECK(std::abs(track.signed_delta(f.s, s0)) < 1e-4);
        const double h = track.heading(s0);
        CHECK(std::abs(std::remainder(f.heading - h, kTwoPi)) < 1e-6);

        // 2 m to the left of the centerline
        const Point2 t = track.tangent(s0);
        const Point2 left = {c[0] - 2.0 * t[1], c[1] + 2.0 * t[0]};
        const TrackFrame fl = track.project(left);
        CHECK(fl.d == doctest::Approx(2.0).epsilon(1e-6));
    }
}

TEST_CASE("equidistant projection breaks ties by smaller s") {
    const auto track = default_track();
    // the stadium center is equidistant from the top and bottom straights
    const TrackFrame f = track.project({0.0, 0.0});
    CHECK(f.s < 0.5 * track.total_length());
}

TEST_CASE("signed distance examples") {
    const auto track = default_track();
    const double s0 = 120.0;
    const Point2 c = track.position(s0);
    CHECK(track.signed_distance(c) == doctest::Approx(5.0).epsilon(1e-6));

    const Point2 t = track.tangent(s0);
    const Point2 left_boundary = {c[0] - 5.0 * t[1], c[1] + 5.0 * t[0]};
    CHECK(track.signed_distance(left_boundary) == doctest::Approx(0.0).epsilon(1e-6));

    const Point2 outside = {c[0] - 6.0 * t[1], c[1] + 6.0 * t[0]};
    CHECK(track.signed_distance(outside) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("progress fraction handles the seam") {
    const auto track = default_track();
    const double L = track.total_length();
    CHECK(track.progress_fraction(100.0, 100.0) == doctest::Approx(0.0));
    CHECK(track.progress_fraction(0.0, 0.5 * L) == doctest::Approx(0.5));
    CHECK(track.progress_fraction(0.95 * L, 0.05 * L) == doctest::Approx(0.10).epsilon(1e-9));
    CHECK(track.progress_fraction(0.05 * L, 0.95 * L, -1) == doctest::Approx(0.10).epsilon(1e-9));
}

TEST_CASE("signed distance is 1-Lipschitz") {
    const auto track = default_track();
    Rng rng(5);
    for (int i = 0; i < 300; ++i) {
        const Point2 p = {rng.uniform(-300, 300), rng.uniform(-120, 120)};
        const Point2 q = {p[0] + rng.uniform(-8, 8), p[1] + rng.uniform(-8, 8)};
        const double lp = track.signed_distance(p);
        const double lq = track.signed_distance(q);
        const double dist = std::hypot(p[0] - q[0], p[1] - q[1]);
        CHECK(std::abs(lp - lq) <= dist + 1e-9);
    }
}

TEST_CASE("projection residual is orthogonal to the tangent") {
    const auto track = default_track();
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const double s = rng.uniform(0, track.total_length());
        const double d = rng.uniform(-4.9, 4.9);
        const Point2 c = track.position(s);
        const Point2 t = track.tangent(s);
        const Point2 p = {c[0] - d * t[1], c[1] + d * t[0]};
        const TrackFrame f = track.project(p);
        const Point2 cp = track.position(f.s);
        const Point2 tp = track.tangent(f.s);
        const double rx = p[0] - cp[0];
        const double ry = p[1] - cp[1];
        const double len = std::hypot(rx, ry);
        if (len < 1e-3) continue;
        const double along = std::abs(rx * tp[0] + ry * tp[1]) / len;
        CHECK(along < 1e-6);
    }
}

TEST_CASE("positive signed distance matches the polygonized band") {
    const auto track = default_track();
    // polygonize both boundaries at 1 cm
    const int n = static_cast<int>(track.total_length() / 0.01);
    std::vector<Point2> inner, outer;
    inner.reserve(n);
    outer.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double s = i * 0.01;
        const Point2 c = track.position(s);
        const Point2 t = track.tangent(s);
        inner.push_back({c[0] - 5.0 * t[1], c[1] + 5.0 * t[0]});   // left boundary
        outer.push_back({c[0] + 5.0 * t[1], c[1] - 5.0 * t[0]});   // right boundary
    }
    Rng rng(13);
    for (int i = 0; i < 120; ++i) {
        const Point2 p = {rng.uniform(-290, 290), rng.uniform(-110, 110)};
        const double l = track.signed_distance(p);
        if (std::abs(l) < 0.02) continue;  // boundary band at the sampled resolution
        const bool in_band = inside_polygon(outer, p) != inside_polygon(inner, p);
        CHECK(in_band == (l > 0.0));
    }
}

TEST_CASE("curvature matches the stadium geometry") {
    const auto track = default_track();
    // mid bottom straight
    CHECK(std::abs(track.curvature(115.0)) < 0.002);
    // mid right arc: left turn, radius ~64 m
    const TrackFrame f = track.project({262.0, 0.0});
    CHECK(track.curvature(f.s) == doctest::Approx(1.0 / 63.66).epsilon(0.15));
}

TEST_CASE("track file validation") {
    CHECK_THROWS_AS(SplineTrack::load("/nonexistent/track.txt"), IoError);
    CHECK_THROWS_AS(SplineTrack::from_points({{0, 0}, {1, 0}, {1, 1}}, 10.0), ConfigError);
    CHECK_THROWS_AS(
        SplineTrack::from_points({{0, 0}, {100, 0}, {100, 100}, {0, 100}}, -1.0), ConfigError);
}
