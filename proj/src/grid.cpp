#include "reachguard/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace reachguard {

namespace {
constexpr int kMaxDims = 8;
static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
}  // namespace

std::size_t GridSpec::node_count() const {
    std::size_t n = 1;
    for (const auto& d : dims) n *= static_cast<std::size_t>(d.n);
    return n;
}

std::vector<std::size_t> GridSpec::strides() const {
    std::vector<std::size_t> s(dims.size(), 1);
    for (int d = ndim() - 2; d >= 0; --d) s[d] = s[d + 1] * dims[d + 1].n;
    return s;
}

StateVec GridSpec::node_state(std::size_t flat) const {
    StateVec x(dims.size());
    for (int d = ndim() - 1; d >= 0; --d) {
        const std::size_t n = dims[d].n;
        x[d] = coord(d, static_cast<int>(flat % n));
        flat /= n;
    }
    return x;
}

void GridSpec::validate() const {
    if (dims.empty() || ndim() > kMaxDims) throw ConfigError("grid must have 1..8 dims");
    for (const auto& d : dims) {
        if (!(d.lo < d.hi)) throw ConfigError("grid dim requires lo < hi");
        if (d.n < 2) throw ConfigError("grid dim requires at least 2 nodes");
    }
    if (node_count() > (std::size_t{1} << 31)) throw ConfigError("grid too large");
}

ValueGrid::ValueGrid(const ValueGrid& other)
    : spec(other.spec), values(other.values), gamma(other.gamma), mode(other.mode),
      meta(other.meta) {
    oob_.store(other.oob_.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

ValueGrid& ValueGrid::operator=(const ValueGrid& other) {
    if (this != &other) {
        spec = other.spec;
        values = other.values;
        gamma = other.gamma;
        mode = other.mode;
        meta = other.meta;
        oob_.store(other.oob_.load(std::memory_order_relaxed), std::memory_order_relaxed);
    }
    return *this;
}

ValueGrid::ValueGrid(ValueGrid&& other) noexcept
    : spec(std::move(other.spec)), values(std::move(other.values)), gamma(other.gamma),
      mode(other.mode), meta(std::move(other.meta)) {
    oob_.store(other.oob_.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

ValueGrid& ValueGrid::operator=(ValueGrid&& other) noexcept {
    if (this != &other) {
        spec = std::move(other.spec);
        values = std::move(other.values);
        gamma = other.gamma;
        mode = other.mode;
        meta = std::move(other.meta);
        oob_.store(other.oob_.load(std::memory_order_relaxed), std::memory_order_relaxed);
    }
    return *this;
}

// Precomputed per-axis interpolation parameters shared by the hot paths.
struct InterpCore {
    struct Axis {
        double lo;
        double inv_h;
        int n;
        bool periodic;
        std::size_t stride;
    };
    Axis axis[kMaxDims];
    int ndim = 0;
    const double* vals = nullptr;

    explicit InterpCore(const ValueGrid& g) {
        ndim = g.spec.ndim();
        const auto strides = g.spec.strides();
        for (int d = 0; d < ndim; ++d) {
            const auto& dim = g.spec.dims[d];
            axis[d] = {dim.lo, 1.0 / dim.spacing(), dim.n, dim.periodic, strides[d]};
        }
        vals = g.values.data();
    }

    // out_of_range incremented when a non-periodic query lies beyond a face.
    double eval(const double* x, std::uint64_t& out_of_range) const {
        std::size_t idx0[kMaxDims], idx1[kMaxDims];
        double frac[kMaxDims];
        for (int d = 0; d < ndim; ++d) {
            const Axis& a = axis[d];
            double u = (x[d] - a.lo) * a.inv_h;
            if (a.periodic) {
                u = std::fmod(u, static_cast<double>(a.n));
                if (u < 0.0) u += a.n;
                int i0 = static_cast<int>(u);
                if (i0 >= a.n) i0 = a.n - 1;
                frac[d] = u - i0;
                idx0[d] = static_cast<std::size_t>(i0) * a.stride;
                idx1[d] = static_cast<std::size_t>((i0 + 1) % a.n) * a.stride;
            } else {
                if (u < 0.0) {
                    if (u < -1e-12) ++out_of_range;
                    u = 0.0;
                } else if (u > a.n - 1) {
                    if (u > a.n - 1 + 1e-12) ++out_of_range;
                    u = a.n - 1;
                }
                int i0 = static_cast<int>(u);
                if (i0 > a.n - 2) i0 = a.n - 2;
                frac[d] = u - i0;
                idx0[d] = static_cast<std::size_t>(i0) * a.stride;
                idx1[d] = idx0[d] + a.stride;
            }
        }
        const int corners = 1 << ndim;
        double acc = 0.0;
        for (int mask = 0; mask < corners; ++mask) {
            double w = 1.0;
            std::size_t idx = 0;
            for (int d = 0; d < ndim; ++d) {
                if (mask & (1 << d)) {
                    w *= frac[d];
                    idx += idx1[d];
                } else {
                    w *= 1.0 - frac[d];
                    idx += idx0[d];
                }
            }
            acc += w * vals[idx];
        }
        return acc;
    }
};

double ValueGrid::interpolate(const StateVec& x) const {
    if (static_cast<int>(x.size()) != spec.ndim())
        throw DomainError("interpolate: state dimension mismatch");
    InterpCore core(*this);
    std::uint64_t oor = 0;
    const double v = core.eval(x.data(), oor);
    if (oor) oob_.fetch_add(oor, std::memory_order_relaxed);
    return v;
}

ControlMesh make_control_mesh(const SystemModel& model, const std::vector<int>& samples_per_dim) {
    if (static_cast<int>(samples_per_dim.size()) != model.dim_u)
        throw ConfigError("control mesh sample counts must match control dimension");
    for (int n : samples_per_dim)
        if (n < 1) throw ConfigError("control mesh needs at least one sample per dim");
    ControlMesh mesh;
    mesh.per_dim = samples_per_dim;
    std::size_t total = 1;
    for (int n : samples_per_dim) total *= static_cast<std::size_t>(n);
    mesh.samples.reserve(total);
    ControlVec u(model.dim_u, 0.0);
    std::function<void(int)> rec = [&](int d) {
        if (d == model.dim_u) {
            mesh.samples.push_back(u);
            return;
        }
        const int n = samples_per_dim[d];
        for (int i = 0; i < n; ++i) {
            u[d] = n == 1 ? 0.5 * (model.control_lo[d] + model.control_hi[d])
                          : model.control_lo[d] +
                                (model.control_hi[d] - model.control_lo[d]) * i / (n - 1);
            rec(d + 1);
        }
    };
    rec(0);
    return mesh;
}

ValueGrid init_value(const GridSpec& spec, const std::function<double(const StateVec&)>& l,
                     GridMode mode) {
    spec.validate();
    ValueGrid g;
    g.spec = spec;
    g.mode = mode;
    g.values.resize(spec.node_count());
    const std::size_t n = g.values.size();
    std::atomic<bool> bad{false};
    parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const double v = l(spec.node_state(i));
            if (!std::isfinite(v)) {
                bad.store(true);
                return;
            }
            g.values[i] = v;
        }
    });
    if (bad.load()) throw NumericalError("init_value: non-finite terminal reward at a grid node");
    return g;
}

namespace {

enum class SystemKind { di, dubins, bike, generic };

SystemKind classify(const SystemModel& m) {
    if (m.name == "double_integrator") return SystemKind::di;
    if (m.name == "dubins") return SystemKind::dubins;
    if (m.name == "bike") return SystemKind::bike;
    return SystemKind::generic;
}

struct SweepContext {
    const GridSpec* spec;
    const SystemModel* model;
    const std::vector<double>* l_values;
    const ControlMesh* controls;
    double dt;
    double gamma;
    GridMode mode;
    std::optional<double> freeze_below;
};

// One Jacobi sweep: out = T(in). Returns the sup-norm residual.
double sweep_once(const ValueGrid& in, ValueGrid& out, const SweepContext& ctx) {
    const GridSpec& spec = *ctx.spec;
    const std::vector<double>& l = *ctx.l_values;
    const auto& samples = ctx.controls->samples;
    const SystemKind kind = classify(*ctx.model);
    const double dt = ctx.dt;
    const double gamma = ctx.gamma;
    const bool reach = ctx.mode == GridMode::reach;
    const double wheelbase = ctx.model->wheelbase;
    const InterpCore core(in);
    const int ndim = spec.ndim();
    const std::size_t total = spec.node_count();

    // per-dim node coordinates
    std::vector<std::vector<double>> coords(ndim);
    for (int d = 0; d < ndim; ++d) {
        coords[d].resize(spec.dims[d].n);
        for (int i = 0; i < spec.dims[d].n; ++i) coords[d][i] = spec.coord(d, i);
    }

    std::atomic<std::uint64_t> max_resid_bits{0};
    std::atomic<bool> bad{false};

    parallel_for(total, [&](std::size_t begin, std::size_t end) {
        int idx[kMaxDims];
        {
            std::size_t f = begin;
            for (int d = ndim - 1; d >= 0; --d) {
                idx[d] = static_cast<int>(f % spec.dims[d].n);
                f /= spec.dims[d].n;
            }
        }
        double x[kMaxDims], xn[kMaxDims];
        std::uint64_t oor = 0;
        double local_max = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double l_x = l[i];
            if (ctx.freeze_below && l_x <= *ctx.freeze_below) {
                out.values[i] = in.values[i];
            } else {
                for (int d = 0; d < ndim; ++d) x[d] = coords[d][idx[d]];
                double best = -std::numeric_limits<double>::infinity();
                switch (kind) {
                    case SystemKind::di: {
                        const double xe = x[0] + dt * x[1];
                        for (const auto& u : samples) {
                            xn[0] = xe;
                            xn[1] = x[1] + dt * u[0];
                            best = std::max(best, core.eval(xn, oor));
                        }
                        break;
                    }
                    case SystemKind::dubins: {
                        const double xe = x[0] + dt * std::cos(x[2]);
                        const double ye = x[1] + dt * std::sin(x[2]);
                        for (const auto& u : samples) {
                            xn[0] = xe;
                            xn[1] = ye;
                            xn[2] = x[2] + dt * u[0];
                            best = std::max(best, core.eval(xn, oor));
                        }
                        break;
                    }
                    case SystemKind::bike: {
                        const double c = std::cos(x[3]);
                        const double s = std::sin(x[3]);
                        const double xe = x[0] + dt * x[2] * c;
                        const double ye = x[1] + dt * x[2] * s;
                        for (const auto& u : samples) {
                            xn[0] = xe;
                            xn[1] = ye;
                            xn[2] = x[2] + dt * u[0];
                            xn[3] = x[3] + dt * x[2] * std::tan(u[1]) / wheelbase;
                            best = std::max(best, core.eval(xn, oor));
                        }
                        break;
                    }
                    case SystemKind::generic: {
                        StateVec xs(x, x + ndim);
                        for (const auto& u : samples) {
                            const StateVec f = ctx.model->vector_field(xs, u);
                            for (int d = 0; d < ndim; ++d) xn[d] = x[d] + dt * f[d];
                            best = std::max(best, core.eval(xn, oor));
                        }
                        break;
                    }
                }
                const double clipped = reach ? std::max(l_x, best) : std::min(l_x, best);
                const double v_new = (1.0 - gamma) * l_x + gamma * clipped;
                if (!std::isfinite(v_new)) {
                    bad.store(true);
                    return;
                }
                out.values[i] = v_new;
                local_max = std::max(local_max, std::abs(v_new - in.values[i]));
            }
            // odometer increment
            for (int d = ndim - 1; d >= 0; --d) {
                if (++idx[d] < spec.dims[d].n) break;
                idx[d] = 0;
            }
        }
        out.add_out_of_bounds(oor);
        // merge the chunk's residual with a CAS max
        std::uint64_t prev = max_resid_bits.load(std::memory_order_relaxed);
        const std::uint64_t mine = std::bit_cast<std::uint64_t>(local_max);
        while (std::bit_cast<double>(prev) < local_max &&
               !max_resid_bits.compare_exchange_weak(prev, mine)) {
        }
    });
    if (bad.load())
        throw NumericalError("bellman_sweep produced a non-finite value");
    return std::bit_cast<double>(max_resid_bits.load());
}

std::vector<double> materialize_l(const GridSpec& spec,
                                  const std::function<double(const StateVec&)>& l) {
    std::vector<double> out(spec.node_count());
    std::atomic<bool> bad{false};
    parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            out[i] = l(spec.node_state(i));
            if (!std::isfinite(out[i])) {
                bad.store(true);
                return;
            }
        }
    });
    if (bad.load()) throw NumericalError("non-finite terminal reward at a grid node");
    return out;
}

}  // namespace

ValueGrid bellman_sweep(const ValueGrid& v_k, const SystemModel& model,
                        const std::function<double(const StateVec&)>& l,
                        const ControlMesh& controls, double dt, double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("bellman_sweep requires gamma in [0,1)");
    if (!(dt > 0.0)) throw DomainError("bellman_sweep requires dt > 0");
    if (v_k.spec.ndim() != model.dim_x)
        throw DomainError("grid dimension does not match system dimension");
    const std::vector<double> l_values = materialize_l(v_k.spec, l);
    ValueGrid out(v_k);
    SweepContext ctx{&v_k.spec, &model, &l_values, &controls, dt, gamma, v_k.mode, std::nullopt};
    sweep_once(v_k, out, ctx);
    return out;
}

SolveResult solve_with_l(const GridSpec& spec, const SystemModel& model,
                         std::vector<double> l_values, const ControlMesh& controls,
                         const SolveParams& params) {
    spec.validate();
    if (spec.ndim() != model.dim_x)
        throw DomainError("grid dimension does not match system dimension");
    if (!(params.gamma >= 0.0 && params.gamma < 1.0))
        throw DomainError("solve requires gamma in [0,1)");
    if (!(params.tol > 0.0)) throw DomainError("solve requires tol > 0");
    if (l_values.size() != spec.node_count()) throw DomainError("l_values size mismatch");

    SolveResult res;
    ValueGrid current;
    current.spec = spec;
    current.mode = params.mode;
    current.gamma = params.gamma;
    current.values = l_values;
    ValueGrid next(current);

    SweepContext ctx{&spec,        &model,       &l_values, &controls,
                     params.dt,    params.gamma, params.mode, params.freeze_below};

    res.converged = false;
    for (int it = 0; it < params.max_iters; ++it) {
        const double r = sweep_once(current, next, ctx);
        std::swap(current.values, next.values);
        res.residuals.push_back(r);
        res.iterations = it + 1;
        if (r < params.tol) {
            res.converged = true;
            break;
        }
    }

    current.meta["system"] = model.name;
    current.meta["controls"] = controls.per_dim;
    current.meta["iterations"] = res.iterations;
    current.meta["converged"] = res.converged;
    current.meta["residuals"] = res.residuals;
    current.meta["dt"] = params.dt;
    res.grid = std::move(current);
    return res;
}

SolveResult solve(const GridSpec& spec, const SystemModel& model,
                  const std::function<double(const StateVec&)>& l, const ControlMesh& controls,
                  const SolveParams& params) {
    spec.validate();
    return solve_with_l(spec, model, materialize_l(spec, l), controls, params);
}

std::vector<double> value_gradient(const ValueGrid& grid, const StateVec& x, bool* one_sided) {
    const int ndim = grid.spec.ndim();
    if (static_cast<int>(x.size()) != ndim) throw DomainError("value_gradient: dimension mismatch");
    if (one_sided) *one_sided = false;
    std::vector<double> g(ndim, 0.0);
    StateVec q(x);
    for (int d = 0; d < ndim; ++d) {
        const auto& dim = grid.spec.dims[d];
        const double h = dim.spacing();
        if (dim.periodic) {
            q[d] = x[d] + h;
            const double vp = grid.interpolate(q);
            q[d] = x[d] - h;
            const double vm = grid.interpolate(q);
            g[d] = (vp - vm) / (2.0 * h);
        } else {
            const bool hi_ok = x[d] + h <= dim.hi + 1e-12;
            const bool lo_ok = x[d] - h >= dim.lo - 1e-12;
            if (hi_ok && lo_ok) {
                q[d] = x[d] + h;
                const double vp = grid.interpolate(q);
                q[d] = x[d] - h;
                const double vm = grid.interpolate(q);
                g[d] = (vp - vm) / (2.0 * h);
            } else {
                if (one_sided) *one_sided = true;
                const double x_hi = std::min(x[d] + h, dim.hi);
                const double x_lo = std::max(x[d] - h, dim.lo);
                q[d] = x_hi;
                const double vp = grid.interpolate(q);
                q[d] = x_lo;
                const double vm = grid.interpolate(q);
                g[d] = x_hi > x_lo ? (vp - vm) / (x_hi - x_lo) : 0.0;
            }
        }
        q[d] = x[d];
    }
    return g;
}

ControlVec optimal_action_from_grid(const ValueGrid& grid, const SystemModel& model,
                                    const StateVec& x, const BikeParams& bike_params) {
    const std::vector<double> g = value_gradient(grid, x);
    const SystemKind kind = classify(model);
    switch (kind) {
        case SystemKind::di:
            return {di_optimal_control(g[1])};
        case SystemKind::dubins:
            // The printed sign rule is stated for the distance-like value
            // convention; our reach grids store its negation.
            return {dubins_optimal_control(grid.mode == GridMode::reach ? -g[2] : g[2])};
        case SystemKind::bike: {
            auto [a, delta] = bike_optimal_control(g[2], g[3], bike_params);
            return {a, delta};
        }
        case SystemKind::generic:
            break;
    }
    throw DomainError("no closed-form optimal control for system " + model.name);
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("truncated grid file: " + path);
    return v;
}

}  // namespace

void save_grid(const ValueGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open grid file for writing: " + path);
    out.write("HJVG", 4);
    write_pod<std::uint16_t>(out, 1);
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(grid.spec.ndim()));
    for (const auto& d : grid.spec.dims) {
        write_pod<double>(out, d.lo);
        write_pod<double>(out, d.hi);
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d.n));
        write_pod<std::uint8_t>(out, d.periodic ? 1 : 0);
    }
    write_pod<double>(out, grid.gamma);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(grid.mode));
    const std::string meta = grid.meta.is_null() ? "{}" : grid.meta.dump();
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    out.write(reinterpret_cast<const char*>(grid.values.data()),
              static_cast<std::streamsize>(grid.values.size() * sizeof(double)));
    if (!out) throw IoError("failed writing grid file: " + path);
}

ValueGrid load_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open grid file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "HJVG", 4) != 0)
        throw FormatError("bad magic in grid file: " + path);
    const auto version = read_pod<std::uint16_t>(in, path);
    if (version != 1) throw FormatError("unsupported grid file version in " + path);
    const auto ndim = read_pod<std::uint16_t>(in, path);
    if (ndim == 0 || ndim > kMaxDims) throw FormatError("bad dim count in grid file: " + path);
    ValueGrid g;
    g.spec.dims.resize(ndim);
    for (auto& d : g.spec.dims) {
        d.lo = read_pod<double>(in, path);
        d.hi = read_pod<double>(in, path);
        d.n = static_cast<int>(read_pod<std::uint32_t>(in, path));
        d.periodic = read_pod<std::uint8_t>(in, path) != 0;
    }
    g.spec.validate();
    g.gamma = read_pod<double>(in, path);
    const auto mode = read_pod<std::uint8_t>(in, path);
    if (mode > 1) throw FormatError("bad mode byte in grid file: " + path);
    g.mode = static_cast<GridMode>(mode);
    const auto meta_len = read_pod<std::uint32_t>(in, path);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), meta_len);
    if (!in) throw FormatError("truncated grid file: " + path);
    try {
        g.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::parse_error&) {
        throw FormatError("bad metadata JSON in grid file: " + path);
    }
    g.values.resize(g.spec.node_count());
    in.read(reinterpret_cast<char*>(g.values.data()),
            static_cast<std::streamsize>(g.values.size() * sizeof(double)));
    if (!in || static_cast<std::size_t>(in.gcount()) != g.values.size() * sizeof(double))
        throw FormatError("truncated grid file: " + path);
    return g;
}

}  // namespace reachguard
