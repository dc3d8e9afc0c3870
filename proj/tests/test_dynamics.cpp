#include <doctest.h>

#include <cmath>

#include "reachguard/dynamics.hpp"

using namespace reachguard;

namespace {

// Independent oracle: simulate the full-brake policy at fine resolution and
// watch for boundary violations.
bool brute_force_di_safe(double x, double v, double dt = 1e-3, double horizon = 10.0) {
    const int steps = static_cast<int>(horizon / dt);
    for (int i = 0; i < steps; ++i) {
        if (x < -1.0 || x > 1.0) return false;
        const double a = v > 0.0 ? -1.0 : (v < 0.0 ? 1.0 : 0.0);
        x += dt * v;
        v += dt * a;
        if (std::abs(v) <= dt) return x >= -1.0 && x <= 1.0;
    }
    return x >= -1.0 && x <= 1.0;
}

}  // namespace

TEST_CASE("di vector field") {
    auto [dx, dv] = di_vector_field(0.0, 0.5, 1.0);
    CHECK(dx == 0.5);
    CHECK(dv == 1.0);
    auto rest = di_vector_field(0.3, 0.0, 0.0);
    CHECK(rest.first == 0.0);
    CHECK(rest.second == 0.0);
    auto neg = di_vector_field(-1.0, -0.2, -1.0);
    CHECK(neg.first == -0.2);
    CHECK(neg.second == -1.0);
    CHECK_THROWS_AS(di_vector_field(std::nan(""), 0.0, 0.0), DomainError);
}

TEST_CASE("dubins vector field") {
    auto f0 = dubins_vector_field(0, 0, 0, 0);
    CHECK(f0[0] == doctest::Approx(1.0));
    CHECK(f0[1] == doctest::Approx(0.0));
    CHECK(f0[2] == 0.0);
    auto f1 = dubins_vector_field(0, 0, M_PI_2, 1.0);
    CHECK(f1[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(f1[1] == doctest::Approx(1.0));
    CHECK(f1[2] == 1.0);
    auto f2 = dubins_vector_field(1, 1, M_PI, -1.0);
    CHECK(f2[0] == doctest::Approx(-1.0));
    CHECK(f2[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(f2[2] == -1.0);
}

TEST_CASE("bike vector field") {
    auto f0 = bike_vector_field(0, 0, 12.0, 0.0, 0.0, 0.0);
    CHECK(f0[0] == doctest::Approx(12.0));
    CHECK(f0[1] == doctest::Approx(0.0));
    CHECK(f0[2] == 0.0);
    CHECK(f0[3] == 0.0);
    auto f1 = bike_vector_field(0, 0, 3.0, 0.0, 1.0, M_PI / 4.0);
    CHECK(f1[2] == 1.0);
    CHECK(f1[3] == doctest::Approx(1.0));
    auto f2 = bike_vector_field(0, 0, 0.0, 1.0, -1.0, 0.3);
    CHECK(f2[0] == 0.0);
    CHECK(f2[1] == 0.0);
    CHECK(f2[2] == -1.0);
    CHECK(f2[3] == 0.0);
    CHECK_THROWS_AS(bike_vector_field(0, 0, 1, 0, 0, M_PI_2), DomainError);
}

TEST_CASE("integrate_step basics") {
    const auto di = make_double_integrator();
    auto n1 = integrate_step(di, {0, 0}, {1.0}, 0.05, Integrator::euler);
    CHECK(n1[0] == doctest::Approx(0.0));
    CHECK(n1[1] == doctest::Approx(0.05));
    auto n2 = integrate_step(di, {0, 1}, {0.0}, 0.1, Integrator::euler);
    CHECK(n2[0] == doctest::Approx(0.1));
    CHECK(n2[1] == doctest::Approx(1.0));

    const auto dub = make_dubins();
    auto n3 = integrate_step(dub, {0, 0, kTwoPi - 0.01}, {1.0}, 0.05, Integrator::euler);
    CHECK(n3[2] == doctest::Approx(0.04).epsilon(1e-9));
}

TEST_CASE("controls clamp instead of reject") {
    const auto di = make_double_integrator();
    const auto grazing = integrate_step(di, {0, 0}, {1.0 + 1e-12}, 0.05, Integrator::euler);
    const auto exact = integrate_step(di, {0, 0}, {1.0}, 0.05, Integrator::euler);
    CHECK(grazing[1] == exact[1]);
    const auto big = integrate_step(di, {0, 0}, {5.0}, 0.05, Integrator::euler);
    CHECK(big[1] == exact[1]);
}

TEST_CASE("periodic wrap stays in range") {
    const auto dub = make_dubins();
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        StateVec x = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-10, 10)};
        x[2] = wrap_angle(x[2]);
        const ControlVec u = {rng.uniform(-1, 1)};
        const auto n = integrate_step(dub, x, u, 0.05, i % 2 ? Integrator::euler : Integrator::rk4);
        CHECK(n[2] >= 0.0);
        CHECK(n[2] < kTwoPi);
    }
}

TEST_CASE("euler and rk4 agree to O(dt^2)") {
    Rng rng(11);
    const auto bike = make_bike();
    const auto dub = make_dubins();
    for (int i = 0; i < 200; ++i) {
        StateVec xb = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0, 8),
                       rng.uniform(0, kTwoPi)};
        ControlVec ub = {rng.uniform(-4, 4), rng.uniform(-0.35, 0.35)};
        auto e = integrate_step(bike, xb, ub, 1e-3, Integrator::euler);
        auto r = integrate_step(bike, xb, ub, 1e-3, Integrator::rk4);
        for (std::size_t d = 0; d < e.size(); ++d) CHECK(std::abs(e[d] - r[d]) <= 1e-5);

        StateVec xd = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, kTwoPi)};
        ControlVec ud = {rng.uniform(-1, 1)};
        auto ed = integrate_step(dub, xd, ud, 1e-3, Integrator::euler);
        auto rd = integrate_step(dub, xd, ud, 1e-3, Integrator::rk4);
        for (std::size_t d = 0; d < ed.size(); ++d) CHECK(std::abs(ed[d] - rd[d]) <= 1e-5);
    }
}

TEST_CASE("di safe oracle examples") {
    CHECK(di_safe_oracle(0, 0));
    CHECK_FALSE(di_safe_oracle(0.9, 0.7));
    CHECK(di_safe_oracle(-1, 0));
}

TEST_CASE("di safe oracle agrees with forward simulation") {
    int agree = 0;
    int total = 0;
    for (int i = 0; i < 201; ++i) {
        for (int j = 0; j < 201; ++j) {
            const double x = -1.2 + 2.4 * i / 200.0;
            const double v = -2.0 + 4.0 * j / 200.0;
            const bool analytic = di_safe_oracle(x, v);
            const bool sim = brute_force_di_safe(x, v);
            agree += analytic == sim;
            ++total;
        }
    }
    CHECK(static_cast<double>(agree) / total >= 0.999);
}

TEST_CASE("optimal control sign rules") {
    CHECK(di_optimal_control(0.5) == 1.0);
    CHECK(di_optimal_control(-0.5) == -1.0);
    CHECK(di_optimal_control(0.0) == 1.0);

    CHECK(dubins_optimal_control(0.2) == -1.0);
    CHECK(dubins_optimal_control(-0.2) == 1.0);
    CHECK(dubins_optimal_control(0.0) == -1.0);

    BikeParams bp;
    auto [a1, d1] = bike_optimal_control(-0.2, 0.3, bp);
    CHECK(a1 == bp.a_min);
    CHECK(d1 == bp.delta_max);
    auto [a2, d2] = bike_optimal_control(0.2, -0.3, bp);
    CHECK(a2 == bp.a_max);
    CHECK(d2 == bp.delta_min);
    auto [a3, d3] = bike_optimal_control(0.0, 0.0, bp);
    CHECK(a3 == bp.a_min);
    CHECK(d3 == bp.delta_max);
}

TEST_CASE("di control maximizes the Hamiltonian") {
    Rng rng(23);
    const auto di = make_double_integrator();
    for (int i = 0; i < 400; ++i) {
        const StateVec x = {rng.uniform(-1.2, 1.2), rng.uniform(-2, 2)};
        const std::vector<double> grad = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const double a_star = di_optimal_control(grad[1]);
        const auto f_star = di.vector_field(x, {a_star});
        const double h_star = f_star[0] * grad[0] + f_star[1] * grad[1];
        for (int k = 0; k <= 100; ++k) {
            const double a = -1.0 + 2.0 * k / 100.0;
            const auto f = di.vector_field(x, {a});
            const double h = f[0] * grad[0] + f[1] * grad[1];
            CHECK(h_star >= h - 1e-12);
        }
    }
}

TEST_CASE("analytic safe actions") {
    CHECK(di_analytic_safe_action({0.0, 0.5})[0] == -1.0);
    CHECK(di_analytic_safe_action({0.0, -0.5})[0] == 1.0);

    // heading straight away from the origin: either turn is fine, must be a bang
    const auto u = dubins_analytic_safe_action({2.0, 0.0, 0.0});
    CHECK(std::abs(u[0]) == 1.0);
    // heading up, origin to the left
    const auto ul = dubins_analytic_safe_action({2.0, 0.0, M_PI_2});
    CHECK(ul[0] == 1.0);
}
