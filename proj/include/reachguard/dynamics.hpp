#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "reachguard/common.hpp"

namespace reachguard {

// State and control vectors. Lengths must match the owning system's
// dimensions; all entries finite.
using StateVec = std::vector<double>;
using ControlVec = std::vector<double>;

enum class Integrator { euler, rk4 };

// Continuous-time control system x' = f(x, u) with box control bounds.
// Periodic state dims are angles wrapped into [0, 2pi).
struct SystemModel {
    std::string name;
    int dim_x = 0;
    int dim_u = 0;
    std::vector<double> control_lo;
    std::vector<double> control_hi;
    std::vector<bool> periodic;  // per state dim
    double wheelbase = 3.0;      // bike only
    std::function<StateVec(const StateVec&, const ControlVec&)> vector_field;

    // Clamps marginally out-of-bounds controls (tanh heads may graze the
    // bound); returns the clamped copy.
    ControlVec clamp_controls(const ControlVec& u) const;
};

struct BikeParams {
    double length = 3.0;  // wheelbase, m
    double a_min = -4.0;  // m/s^2
    double a_max = 4.0;
    double delta_min = -0.5;  // rad
    double delta_max = 0.5;
};

// Particle on a line: x' = v, v' = a, a in [-1, 1].
std::pair<double, double> di_vector_field(double x, double v, double a);

// Unit-speed car: x' = cos(phi), y' = sin(phi), phi' = u, u in [-1, 1].
std::array<double, 3> dubins_vector_field(double x, double y, double phi, double u);

// Kinematic bike: x' = v cos(phi), y' = v sin(phi), v' = a,
// phi' = v tan(delta) / L.
std::array<double, 4> bike_vector_field(double x, double y, double v, double phi, double a,
                                        double delta, double length = 3.0);

SystemModel make_double_integrator();
SystemModel make_dubins();
SystemModel make_bike(const BikeParams& params = {});
SystemModel make_system(const std::string& name);

// One integration step; periodic dims wrapped into [0, 2pi).
StateVec integrate_step(const SystemModel& model, const StateVec& x, const ControlVec& u,
                        double dt, Integrator scheme);

// Analytic keep-in set for the double integrator: inside [-1, 1] and able to
// brake before the boundary.
bool di_safe_oracle(double x, double v);

// Closed-form optimal safe controls (bang-bang on the value gradient).
double di_optimal_control(double dV_dv);
double dubins_optimal_control(double dV_dtheta);
std::pair<double, double> bike_optimal_control(double dV_dv, double dV_dphi,
                                               const BikeParams& params);

// Analytic safe policies used to score and bootstrap the benchmark critics.
ControlVec di_analytic_safe_action(const StateVec& x);
ControlVec dubins_analytic_safe_action(const StateVec& x);

}  // namespace reachguard
