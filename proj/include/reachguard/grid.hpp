#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "reachguard/dynamics.hpp"

namespace reachguard {

struct GridDim {
    double lo = 0.0;
    double hi = 1.0;
    int n = 2;  // node count
    bool periodic = false;

    double spacing() const { return periodic ? (hi - lo) / n : (hi - lo) / (n - 1); }
};

struct GridSpec {
    std::vector<GridDim> dims;

    int ndim() const { return static_cast<int>(dims.size()); }
    std::size_t node_count() const;
    std::vector<std::size_t> strides() const;  // row-major, last dim fastest
    double coord(int dim, int i) const { return dims[dim].lo + i * dims[dim].spacing(); }
    StateVec node_state(std::size_t flat) const;
    void validate() const;
};

enum class GridMode : std::uint8_t { avoid = 0, reach = 1 };

// Finite control set evaluated inside the Bellman optimization: Cartesian
// product of per-dim linspace samples including both endpoints.
struct ControlMesh {
    std::vector<int> per_dim;
    std::vector<ControlVec> samples;
};
ControlMesh make_control_mesh(const SystemModel& model, const std::vector<int>& samples_per_dim);

// Safety value function sampled on a rectilinear grid. Values are row-major
// over dims. Queries are read-only and concurrently callable; a grid being
// written by solve must not be read concurrently.
struct ValueGrid {
    GridSpec spec;
    std::vector<double> values;
    double gamma = 0.0;
    GridMode mode = GridMode::avoid;
    nlohmann::json meta;

    ValueGrid() = default;
    ValueGrid(const ValueGrid& other);
    ValueGrid& operator=(const ValueGrid& other);
    ValueGrid(ValueGrid&&) noexcept;
    ValueGrid& operator=(ValueGrid&&) noexcept;

    // Multilinear interpolation over the 2^d enclosing nodes. Periodic dims
    // wrap; non-periodic queries outside the bounds clamp to the boundary
    // face and bump the out-of-bounds counter.
    double interpolate(const StateVec& x) const;
    std::uint64_t out_of_bounds_count() const { return oob_.load(std::memory_order_relaxed); }
    void reset_out_of_bounds_count() const { oob_.store(0, std::memory_order_relaxed); }
    void add_out_of_bounds(std::uint64_t n) const {
        if (n) oob_.fetch_add(n, std::memory_order_relaxed);
    }

private:
    mutable std::atomic<std::uint64_t> oob_{0};
    friend struct InterpCore;
};

ValueGrid init_value(const GridSpec& spec, const std::function<double(const StateVec&)>& l,
                     GridMode mode = GridMode::avoid);

struct SolveParams {
    double dt = 0.05;
    double gamma = 0.9999;
    double tol = 1e-6;
    int max_iters = 2000;
    GridMode mode = GridMode::avoid;
    // Nodes with l at or below this stay frozen at l (deep failure region);
    // keeps large track grids affordable without touching the safe set.
    std::optional<double> freeze_below;
};

struct SolveResult {
    ValueGrid grid;
    std::vector<double> residuals;  // sup-norm change per sweep
    bool converged = false;
    int iterations = 0;
};

// One Jacobi sweep of the discounted safety Bellman operator. Reads v_k only.
// avoid: V' = (1-g) l + g min{l, max_u V(x + f dt)}
// reach: V' = (1-g) l + g max{l, max_u V(x + f dt)}
ValueGrid bellman_sweep(const ValueGrid& v_k, const SystemModel& model,
                        const std::function<double(const StateVec&)>& l,
                        const ControlMesh& controls, double dt, double gamma);

SolveResult solve(const GridSpec& spec, const SystemModel& model,
                  const std::function<double(const StateVec&)>& l, const ControlMesh& controls,
                  const SolveParams& params);

// Variant taking precomputed per-node terminal rewards.
SolveResult solve_with_l(const GridSpec& spec, const SystemModel& model,
                         std::vector<double> l_values, const ControlMesh& controls,
                         const SolveParams& params);

// Central finite differences with one grid spacing per dim, evaluated via
// interpolate; falls back to one-sided differences near non-periodic faces
// (flagged through one_sided when provided).
std::vector<double> value_gradient(const ValueGrid& grid, const StateVec& x,
                                   bool* one_sided = nullptr);

// Closed-form bang-bang action from the grid gradient. Matches the
// brute-force argmax of <f(x,u), grad V> over the control box.
ControlVec optimal_action_from_grid(const ValueGrid& grid, const SystemModel& model,
                                    const StateVec& x, const BikeParams& bike_params = {});

// .hjvg files: magic "HJVG", version u16, dim count, per-dim
// (lo, hi, n, periodic), gamma, mode byte, metadata JSON blob, then values
// as little-endian 64-bit floats. Round trips are bit-exact.
void save_grid(const ValueGrid& grid, const std::string& path);
ValueGrid load_grid(const std::string& path);

}  // namespace reachguard
