#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "multihom/macro_solver.hpp"
#include "multihom/scale_algebra.hpp"

namespace multihom {

// Direct simulation of the oscillatory problem at a fixed small eps, 1D only:
// the same implicit-Euler stepper as the macroscale solver, with the flux
// evaluated pointwise at the microscopic coordinates x/eps_hat_k, t/eps_check_j.
struct DnsConfig {
    FluxSpec spec = FluxSpec::make(FluxFamily::Linear, "1", 1, 0, 0);
    std::vector<std::string> spatial;  // eps_hat_k(eps), one per flux scale
    std::vector<std::string> temporal; // eps_check_j(eps)
    double eps = 0.125;
    int K_x = 16; // mesh points per fastest spatial period
    int K_t = 16; // time steps per fastest temporal period
    long max_M_x = 200000;
    long max_M_t = 200000;
};

namespace detail {

inline std::vector<double> scale_values(const std::vector<std::string>& exprs, double eps) {
    std::vector<double> vals;
    for (const std::string& text : exprs) {
        CompiledExpr fn(Expr::parse(text, {"eps"}), {"eps"});
        double v = fn.eval(&eps);
        if (!(v > 0.0) || !std::isfinite(v))
            throw PositivityError("scale " + text + " is not positive at eps=" +
                                  format_double(eps));
        vals.push_back(v);
    }
    return vals;
}

} // namespace detail

// Mesh that resolves every microscale, never coarser than the hint. Reports
// the required sizes against the caps before any work happens.
inline MacroMesh dns_mesh(const DnsConfig& cfg, const MacroMesh& hint) {
    if (hint.N != 1) throw ConfigError("direct eps-simulation is 1D only");
    if (static_cast<int>(cfg.spatial.size()) != cfg.spec.spatial_scales())
        throw ConfigError("spatial scale count disagrees with the flux");
    if (static_cast<int>(cfg.temporal.size()) != cfg.spec.temporal_scales())
        throw ConfigError("temporal scale count disagrees with the flux");

    MacroMesh mesh = hint;
    double L = hint.hi[0] - hint.lo[0];
    std::vector<double> hats = detail::scale_values(cfg.spatial, cfg.eps);
    std::vector<double> checks = detail::scale_values(cfg.temporal, cfg.eps);

    auto require = [&cfg](double needed, long cap, const char* what) {
        if (needed > static_cast<double>(cap))
            throw ResolutionCapExceeded("eps=" + detail::format_double(cfg.eps) + " requires " +
                                        what + " >= " + detail::format_double(needed) +
                                        ", cap is " + std::to_string(cap));
        return static_cast<long>(needed);
    };
    long need_x = require(static_cast<double>(hint.M_x), cfg.max_M_x, "M_x");
    for (double hat : hats) // h = L/(M_x+1) <= hat/K_x
        need_x = std::max(need_x,
                          require(std::ceil(L * cfg.K_x / hat) - 1.0, cfg.max_M_x, "M_x"));
    long need_t = require(static_cast<double>(hint.M_t), cfg.max_M_t, "M_t");
    for (double check : checks) // dt = T/M_t <= check/K_t
        need_t = std::max(need_t,
                          require(std::ceil(hint.T * cfg.K_t / check), cfg.max_M_t, "M_t"));
    mesh.M_x = static_cast<int>(need_x);
    mesh.M_t = static_cast<int>(need_t);
    return mesh;
}

inline SpaceTimeField solve_eps(const DnsConfig& cfg, const SourceFn& f, const InitialFn& u0,
                                const MacroMesh& mesh_hint, const MacroOpts& opts = {}) {
    MacroMesh mesh = dns_mesh(cfg, mesh_hint);
    std::vector<double> hats = detail::scale_values(cfg.spatial, cfg.eps);
    std::vector<double> checks = detail::scale_values(cfg.temporal, cfg.eps);
    const FluxSpec& spec = cfg.spec;
    SpatialFlux flux = [&spec, hats, checks](const double* x, double t, const double* g,
                                             double* out) {
        double y[2], s[3];
        for (std::size_t k = 0; k < hats.size(); ++k) y[k] = x[0] / hats[k];
        for (std::size_t j = 0; j < checks.size(); ++j) s[j] = t / checks[j];
        spec.eval(y, s, g, out);
    };
    return detail::implicit_euler_solve(mesh, flux, f, u0, opts,
                                        "dns eps=" + detail::format_double(cfg.eps));
}

// Space-time L2 distance. Each field is sampled on the finer of the two grids
// by bilinear interpolation (zero boundary trace in space), then integrated
// with the trapezoid rule in time and per-node weights in space.
inline double l2_spacetime_error(const SpaceTimeField& a, const SpaceTimeField& b) {
    if (!a.mesh.same_domain(b.mesh))
        throw DomainMismatch("fields live on different space-time domains");
    if (a.mesh.N != 1) throw DomainMismatch("space-time distance implemented for 1D fields");

    const MacroMesh& fine_x = a.mesh.M_x >= b.mesh.M_x ? a.mesh : b.mesh;
    const MacroMesh& fine_t = a.mesh.M_t >= b.mesh.M_t ? a.mesh : b.mesh;
    int M_x = fine_x.M_x, M_t = fine_t.M_t;
    double L = a.mesh.hi[0] - a.mesh.lo[0];
    double hx = L / (M_x + 1);
    double dt = a.mesh.T / M_t;

    auto sample = [](const SpaceTimeField& field, double x, double t) {
        const MacroMesh& mesh = field.mesh;
        double ht = mesh.T / mesh.M_t;
        double ut = t / ht;
        int k = static_cast<int>(std::floor(ut));
        if (k < 0) k = 0;
        if (k > mesh.M_t - 1) k = mesh.M_t - 1;
        double ft = ut - k;
        double hs = mesh.h(0);
        double ux = (x - mesh.lo[0]) / hs; // node i sits at ux = i+1
        int e = static_cast<int>(std::floor(ux));
        if (e < 0) e = 0;
        if (e > mesh.M_x) e = mesh.M_x;
        double fx = ux - e;
        auto val = [&](int level, int node) {
            if (node < 0 || node >= mesh.M_x) return 0.0;
            return field.level(level)[node];
        };
        double v0 = (1.0 - fx) * val(k, e - 1) + fx * val(k, e);
        double v1 = (1.0 - fx) * val(k + 1, e - 1) + fx * val(k + 1, e);
        return (1.0 - ft) * v0 + ft * v1;
    };

    double acc = 0.0;
    for (int k = 0; k <= M_t; ++k) {
        double t = k * dt;
        double slab = 0.0;
        for (int i = 0; i < M_x; ++i) {
            double x = fine_x.lo[0] + (i + 1) * hx;
            double d = sample(a, x, t) - sample(b, x, t);
            slab += d * d;
        }
        double wt = (k == 0 || k == M_t) ? 0.5 : 1.0;
        acc += wt * slab * (L / M_x) * dt;
    }
    return std::sqrt(acc);
}

struct StudyRow {
    double eps = 0.0;
    long M_x = 0;
    long M_t = 0;
    double error = 0.0;
};

// One macroscale solve against a ladder of direct simulations.
inline std::vector<StudyRow> convergence_study(const DnsConfig& cfg_template,
                                               const std::vector<double>& eps_list,
                                               const SourceFn& f, const InitialFn& u0,
                                               const SpaceTimeField& macro,
                                               const MacroOpts& opts = {}) {
    if (eps_list.size() < 3)
        throw ConfigError("convergence study needs at least three eps values");
    std::vector<StudyRow> rows;
    for (double eps : eps_list) {
        DnsConfig cfg = cfg_template;
        cfg.eps = eps;
        SpaceTimeField dns = solve_eps(cfg, f, u0, macro.mesh, opts);
        StudyRow row;
        row.eps = eps;
        row.M_x = dns.mesh.M_x;
        row.M_t = dns.mesh.M_t;
        row.error = l2_spacetime_error(dns, macro);
        rows.push_back(row);
    }
    return rows;
}

} // namespace multihom
