#include "reachguard/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace reachguard {

namespace {

int env_thread_cap() {
    if (const char* s = std::getenv("REACHGUARD_THREADS")) {
        const int n = std::atoi(s);
        if (n > 0) return n;
    }
    return 0;
}

std::atomic<int> g_thread_cap{-1};

void check_finite_args(std::initializer_list<double> xs, const char* what) {
    for (double x : xs)
        if (!std::isfinite(x)) throw DomainError(std::string("non-finite input to ") + what);
}

}  // namespace

int thread_cap() {
    int cap = g_thread_cap.load();
    if (cap < 0) {
        cap = env_thread_cap();
        if (cap <= 0) cap = static_cast<int>(std::thread::hardware_concurrency());
        if (cap <= 0) cap = 1;
        g_thread_cap.store(cap);
    }
    return cap;
}

void set_thread_cap(int n) { g_thread_cap.store(n > 0 ? n : -1); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(thread_cap()), std::max<std::size_t>(n, 1));
    if (workers <= 1 || n < 2048) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& t : pool) t.join();
}

ControlVec SystemModel::clamp_controls(const ControlVec& u) const {
    if (static_cast<int>(u.size()) != dim_u)
        throw DomainError("control dimension mismatch for system " + name);
    require_finite(u, "control");
    ControlVec out(u);
    for (int i = 0; i < dim_u; ++i) out[i] = std::clamp(out[i], control_lo[i], control_hi[i]);
    return out;
}

std::pair<double, double> di_vector_field(double x, double v, double a) {
    check_finite_args({x, v, a}, "di_vector_field");
    return {v, a};
}

std::array<double, 3> dubins_vector_field(double x, double y, double phi, double u) {
    check_finite_args({x, y, phi, u}, "dubins_vector_field");
    return {std::cos(phi), std::sin(phi), u};
}

std::array<double, 4> bike_vector_field(double x, double y, double v, double phi, double a,
                                        double delta, double length) {
    check_finite_args({x, y, v, phi, a, delta}, "bike_vector_field");
    if (std::abs(delta) >= 1.5707963267948966)
        throw DomainError("bike steering angle at tan singularity");
    return {v * std::cos(phi), v * std::sin(phi), a, v * std::tan(delta) / length};
}

SystemModel make_double_integrator() {
    SystemModel m;
    m.name = "double_integrator";
    m.dim_x = 2;
    m.dim_u = 1;
    m.control_lo = {-1.0};
    m.control_hi = {1.0};
    m.periodic = {false, false};
    m.vector_field = [](const StateVec& x, const ControlVec& u) -> StateVec {
        auto [dx, dv] = di_vector_field(x[0], x[1], u[0]);
        return {dx, dv};
    };
    return m;
}

SystemModel make_dubins() {
    SystemModel m;
    m.name = "dubins";
    m.dim_x = 3;
    m.dim_u = 1;
    m.control_lo = {-1.0};
    m.control_hi = {1.0};
    m.periodic = {false, false, true};
    m.vector_field = [](const StateVec& x, const ControlVec& u) -> StateVec {
        auto d = dubins_vector_field(x[0], x[1], x[2], u[0]);
        return {d[0], d[1], d[2]};
    };
    return m;
}

SystemModel make_bike(const BikeParams& params) {
    SystemModel m;
    m.name = "bike";
    m.dim_x = 4;
    m.dim_u = 2;
    m.control_lo = {params.a_min, params.delta_min};
    m.control_hi = {params.a_max, params.delta_max};
    m.periodic = {false, false, false, true};
    m.wheelbase = params.length;
    const double length = params.length;
    m.vector_field = [length](const StateVec& x, const ControlVec& u) -> StateVec {
        auto d = bike_vector_field(x[0], x[1], x[2], x[3], u[0], u[1], length);
        return {d[0], d[1], d[2], d[3]};
    };
    return m;
}

SystemModel make_system(const std::string& name) {
    if (name == "double_integrator" || name == "di") return make_double_integrator();
    if (name == "dubins") return make_dubins();
    if (name == "bike") return make_bike();
    throw ConfigError("unknown system: " + name);
}

StateVec integrate_step(const SystemModel& model, const StateVec& x, const ControlVec& u,
                        double dt, Integrator scheme) {
    if (static_cast<int>(x.size()) != model.dim_x)
        throw DomainError("state dimension mismatch for system " + model.name);
    if (!(dt > 0.0)) throw DomainError("integrate_step requires dt > 0");
    require_finite(x, "state");
    const ControlVec uc = model.clamp_controls(u);

    StateVec next(x.size());
    if (scheme == Integrator::euler) {
        const StateVec f = model.vector_field(x, uc);
        for (std::size_t i = 0; i < x.size(); ++i) next[i] = x[i] + dt * f[i];
    } else {
        const StateVec k1 = model.vector_field(x, uc);
        StateVec tmp(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
        const StateVec k2 = model.vector_field(tmp, uc);
        for (std::size_t i = 0; i < x.size(); ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
        const StateVec k3 = model.vector_field(tmp, uc);
        for (std::size_t i = 0; i < x.size(); ++i) tmp[i] = x[i] + dt * k3[i];
        const StateVec k4 = model.vector_field(tmp, uc);
        for (std::size_t i = 0; i < x.size(); ++i)
            next[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    for (std::size_t i = 0; i < next.size(); ++i) {
        if (!std::isfinite(next[i])) throw NumericalError("non-finite state after integration");
        if (model.periodic[i]) next[i] = wrap_angle(next[i]);
    }
    return next;
}

bool di_safe_oracle(double x, double v) {
    if (x < -1.0 || x > 1.0) return false;
    if (v > 0.0 && x + 0.5 * v * v > 1.0) return false;
    if (v < 0.0 && x - 0.5 * v * v < -1.0) return false;
    return true;
}

double di_optimal_control(double dV_dv) { return dV_dv >= 0.0 ? 1.0 : -1.0; }

double dubins_optimal_control(double dV_dtheta) { return dV_dtheta >= 0.0 ? -1.0 : 1.0; }

std::pair<double, double> bike_optimal_control(double dV_dv, double dV_dphi,
                                               const BikeParams& params) {
    const double a = dV_dv <= 0.0 ? params.a_min : params.a_max;
    const double delta = dV_dphi >= 0.0 ? params.delta_max : params.delta_min;
    return {a, delta};
}

ControlVec di_analytic_safe_action(const StateVec& x) { return {x[1] > 0.0 ? -1.0 : 1.0}; }

ControlVec dubins_analytic_safe_action(const StateVec& x) {
    // steer toward the origin: turn in the direction of the bearing error
    const double bearing = std::atan2(-x[1], -x[0]);
    double err = bearing - x[2];
    err = std::remainder(err, kTwoPi);
    if (std::abs(err) < 1e-9) return {0.0};
    return {err > 0.0 ? 1.0 : -1.0};
}

}  // namespace reachguard
