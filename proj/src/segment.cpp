#include "reachguard/segment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace reachguard {

namespace fs = std::filesystem;

StateVec TrackSegment::to_local(const StateVec& world) const {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double dx = world[0] - tx;
    const double dy = world[1] - ty;
    return {c * dx + s * dy, -s * dx + c * dy, world[2], wrap_angle(world[3] - theta)};
}

SegmentedValue SegmentedValue::solve(std::shared_ptr<const SplineTrack> track,
                                     const BikeParams& bike, const SegmentParams& params) {
    SegmentedValue sv;
    sv.track_ = std::move(track);
    sv.bike_ = bike;
    sv.params_ = params;
    const SplineTrack& trk = *sv.track_;
    const double L = trk.total_length();
    const int n_seg = std::max(1, static_cast<int>(std::round(L / params.segment_length)));
    const double core = L / n_seg;
    const auto model = make_bike(bike);
    const auto mesh = make_control_mesh(model, params.control_samples);

    for (int seg = 0; seg < n_seg; ++seg) {
        TrackSegment s;
        s.s_core_lo = seg * core;
        s.s_core_hi = (seg + 1) * core;
        const double s_mid = 0.5 * (s.s_core_lo + s.s_core_hi);
        const Point2 origin = trk.position(s_mid);
        s.theta = trk.heading(s_mid);
        s.tx = origin[0];
        s.ty = origin[1];

        // local bounding box of the window centerline plus the band and margin
        const double reach = 0.5 * trk.width() + params.margin;
        double xi_lo = 1e300, xi_hi = -1e300, eta_lo = 1e300, eta_hi = -1e300;
        const double w_lo = s.s_core_lo - params.overlap;
        const double w_hi = s.s_core_hi + params.overlap;
        const double c = std::cos(s.theta), sn = std::sin(s.theta);
        for (double arc = w_lo; arc <= w_hi + 1e-9; arc += 2.0) {
            const Point2 p = trk.position(arc);
            const double xi = c * (p[0] - s.tx) + sn * (p[1] - s.ty);
            const double eta = -sn * (p[0] - s.tx) + c * (p[1] - s.ty);
            xi_lo = std::min(xi_lo, xi - reach);
            xi_hi = std::max(xi_hi, xi + reach);
            eta_lo = std::min(eta_lo, eta - reach);
            eta_hi = std::max(eta_hi, eta + reach);
        }

        GridSpec spec;
        const int nx = std::max(2, static_cast<int>(std::ceil((xi_hi - xi_lo) /
                                                              params.xy_resolution)) + 1);
        const int ny = std::max(2, static_cast<int>(std::ceil((eta_hi - eta_lo) /
                                                              params.xy_resolution)) + 1);
        spec.dims = {{xi_lo, xi_hi, nx, false},
                     {eta_lo, eta_hi, ny, false},
                     {params.v_lo, params.v_hi, params.v_nodes, false},
                     {0.0, kTwoPi, params.psi_nodes, true}};

        // l depends on position only; evaluate one xy slice and broadcast
        std::vector<double> l_xy(static_cast<std::size_t>(nx) * ny);
        parallel_for(l_xy.size(), [&](std::size_t b, std::size_t e) {
            for (std::size_t k = b; k < e; ++k) {
                const int i = static_cast<int>(k) / ny;
                const int j = static_cast<int>(k) % ny;
                const double xi = spec.coord(0, i);
                const double eta = spec.coord(1, j);
                const Point2 world = {s.tx + c * xi - sn * eta, s.ty + sn * xi + c * eta};
                l_xy[k] = trk.signed_distance(world);
            }
        });
        std::vector<double> l_all(spec.node_count());
        const std::size_t inner = static_cast<std::size_t>(params.v_nodes) * params.psi_nodes;
        for (std::size_t k = 0; k < l_xy.size(); ++k)
            std::fill_n(l_all.begin() + static_cast<std::ptrdiff_t>(k * inner), inner, l_xy[k]);

        SolveParams sp;
        sp.dt = params.dt;
        sp.gamma = params.gamma;
        sp.tol = params.tol;
        sp.max_iters = params.max_iters;
        sp.mode = GridMode::avoid;
        sp.freeze_below = params.freeze_below;
        auto solved = solve_with_l(spec, model, std::move(l_all), mesh, sp);

        s.grid = std::move(solved.grid);
        s.grid.meta["segment"] = {{"s_core_lo", s.s_core_lo},
                                  {"s_core_hi", s.s_core_hi},
                                  {"theta", s.theta},
                                  {"tx", s.tx},
                                  {"ty", s.ty}};
        sv.segments_.push_back(std::move(s));
    }
    return sv;
}

void SegmentedValue::save(const std::string& dir) const {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["track_length"] = track_->total_length();
    manifest["track_width"] = track_->width();
    manifest["segment_count"] = count();
    manifest["params"] = {{"segment_length", params_.segment_length},
                          {"overlap", params_.overlap},
                          {"xy_resolution", params_.xy_resolution},
                          {"v_hi", params_.v_hi},
                          {"gamma", params_.gamma},
                          {"dt", params_.dt}};
    manifest["bike"] = {{"length", bike_.length},
                        {"a_min", bike_.a_min},
                        {"a_max", bike_.a_max},
                        {"delta_min", bike_.delta_min},
                        {"delta_max", bike_.delta_max}};
    std::vector<std::string> files;
    for (int i = 0; i < count(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "seg_%03d.hjvg", i);
        files.emplace_back(name);
        save_grid(segments_[i].grid, (fs::path(dir) / name).string());
    }
    manifest["files"] = files;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write segment manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

SegmentedValue SegmentedValue::load(const std::string& dir,
                                    std::shared_ptr<const SplineTrack> track) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("cannot open segment manifest in " + dir);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::parse_error&) {
        throw FormatError("bad segment manifest in " + dir);
    }
    SegmentedValue sv;
    sv.track_ = std::move(track);
    if (std::abs(manifest.at("track_length").get<double>() - sv.track_->total_length()) > 1.0)
        throw FormatError("segment set was solved for a different track");
    const auto& bj = manifest.at("bike");
    sv.bike_.length = bj.at("length").get<double>();
    sv.bike_.a_min = bj.at("a_min").get<double>();
    sv.bike_.a_max = bj.at("a_max").get<double>();
    sv.bike_.delta_min = bj.at("delta_min").get<double>();
    sv.bike_.delta_max = bj.at("delta_max").get<double>();
    for (const auto& f : manifest.at("files")) {
        TrackSegment s;
        s.grid = load_grid((fs::path(dir) / f.get<std::string>()).string());
        if (s.grid.spec.ndim() != 4)
            throw FormatError("segment grid has wrong dimension count in " + dir);
        const auto& meta = s.grid.meta.at("segment");
        s.s_core_lo = meta.at("s_core_lo").get<double>();
        s.s_core_hi = meta.at("s_core_hi").get<double>();
        s.theta = meta.at("theta").get<double>();
        s.tx = meta.at("tx").get<double>();
        s.ty = meta.at("ty").get<double>();
        sv.segments_.push_back(std::move(s));
    }
    if (sv.segments_.empty()) throw FormatError("empty segment set in " + dir);
    return sv;
}

const TrackSegment* SegmentedValue::owner_of(double s) const {
    for (const auto& seg : segments_)
        if (s >= seg.s_core_lo - 1e-9 && s < seg.s_core_hi) return &seg;
    return segments_.empty() ? nullptr : &segments_.back();
}

double SegmentedValue::value(const StateVec& world, const TrackFrame& frame) const {
    const TrackSegment* seg = owner_of(frame.s);
    if (!seg) {
        fallback_.fetch_add(1, std::memory_order_relaxed);
        return 0.5 * track_->width() - std::abs(frame.d);
    }
    return seg->grid.interpolate(seg->to_local(world));
}

double SegmentedValue::value(const StateVec& world) const {
    return value(world, track_->project({world[0], world[1]}));
}

ControlVec SegmentedValue::optimal_action(const StateVec& world, const TrackFrame& frame) const {
    const TrackSegment* seg = owner_of(frame.s);
    if (!seg) {
        fallback_.fetch_add(1, std::memory_order_relaxed);
        return {bike_.a_min, 0.0};
    }
    const StateVec local = seg->to_local(world);
    const auto grad = value_gradient(seg->grid, local);
    auto [a, delta] = bike_optimal_control(grad[2], grad[3], bike_);
    return {a, delta};
}

}  // namespace reachguard
