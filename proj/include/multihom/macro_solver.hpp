#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "multihom/effective_flux.hpp"
#include "multihom/errors.hpp"

namespace multihom {

// Space-time mesh for the macroscopic problem: homogeneous Dirichlet walls,
// interior unknowns only; 1D interval or axis-aligned rectangle.
struct MacroMesh {
    int N = 1;
    double lo[2] = {0.0, 0.0};
    double hi[2] = {1.0, 1.0};
    int M_x = 32; // interior nodes per axis
    double T = 1.0;
    int M_t = 16;

    static MacroMesh interval(double a, double b, int M_x, double T, int M_t) {
        MacroMesh mesh;
        mesh.N = 1;
        mesh.lo[0] = a;
        mesh.hi[0] = b;
        mesh.M_x = M_x;
        mesh.T = T;
        mesh.M_t = M_t;
        mesh.validate();
        return mesh;
    }

    static MacroMesh rectangle(double ax, double bx, double ay, double by, int M_x, double T,
                               int M_t) {
        MacroMesh mesh;
        mesh.N = 2;
        mesh.lo[0] = ax;
        mesh.hi[0] = bx;
        mesh.lo[1] = ay;
        mesh.hi[1] = by;
        mesh.M_x = M_x;
        mesh.T = T;
        mesh.M_t = M_t;
        mesh.validate();
        return mesh;
    }

    void validate() const {
        if (M_x < 4) throw ConfigError("macro mesh needs at least 4 interior nodes per axis");
        if (M_t < 2) throw ConfigError("macro mesh needs at least 2 time steps");
        if (!(T > 0.0)) throw ConfigError("final time T must be positive");
        for (int c = 0; c < N; ++c)
            if (!(hi[c] > lo[c])) throw ConfigError("domain bounds must be increasing");
    }

    double h(int axis = 0) const { return (hi[axis] - lo[axis]) / (M_x + 1); }
    double dt() const { return T / M_t; }
    long interior() const { return N == 1 ? M_x : static_cast<long>(M_x) * M_x; }
    double node(int axis, int i) const { return lo[axis] + (i + 1) * h(axis); }

    bool same_domain(const MacroMesh& other) const {
        if (N != other.N) return false;
        if (std::abs(T - other.T) > 1e-12) return false;
        for (int c = 0; c < N; ++c)
            if (std::abs(lo[c] - other.lo[c]) > 1e-12 || std::abs(hi[c] - other.hi[c]) > 1e-12)
                return false;
        return true;
    }
};

// Interior nodal values at every time level; the zero boundary trace is
// implicit in the mesh, never stored.
struct SpaceTimeField {
    MacroMesh mesh;
    std::vector<double> values; // (M_t + 1) * interior(), level-major
    std::string provenance;

    double* level(int k) { return values.data() + static_cast<long>(k) * mesh.interior(); }
    const double* level(int k) const {
        return values.data() + static_cast<long>(k) * mesh.interior();
    }

    double level_l2(int k) const {
        double w = 1.0;
        for (int c = 0; c < mesh.N; ++c) w *= mesh.h(c);
        const double* u = level(k);
        double s = 0.0;
        for (long i = 0; i < mesh.interior(); ++i) s += u[i] * u[i];
        return std::sqrt(s * w);
    }
};

// Flux of the discrete divergence: position- and time-dependent so the same
// stepper drives both the homogenized problem and the oscillatory one.
using SpatialFlux = std::function<void(const double* x, double t, const double* g, double* out)>;
using GradientFlux = std::function<void(const double* g, double* out)>;
using SourceFn = std::function<double(const double* x, double t)>;
using InitialFn = std::function<double(const double* x)>;

struct MacroOpts {
    double res_tol = 1e-9;       // max-norm of the step residual
    int newton_max = 50;
    double damping_floor = 0x1p-10;
    double fd_step = 1e-6;       // edge-slope finite-difference step
    double init_perturb = 0.0;   // uniqueness probe: offset on the Newton start
    int krylov_max_factor = 10;  // 2D linear-system iteration budget per unknown
};

namespace detail {

// Edge-based residual of one implicit Euler step,
//   R_i = (u_i - prev_i)/dt - div_h b(G_h u)_i - f_i,
// with gradients on staggered half-nodes (1D) / per-edge with an averaged
// transverse difference (2D). val() extends u by the zero boundary trace.
class MacroStep {
  public:
    MacroStep(const MacroMesh& mesh, const SpatialFlux& flux) : mesh_(mesh), flux_(flux) {}

    const MacroMesh& mesh() const { return mesh_; }

    void residual(const double* u, const double* prev, const double* f_vals, double t,
                  double* R) const {
        int M = mesh_.M_x;
        double dt = mesh_.dt();
        if (mesh_.N == 1) {
            double h = mesh_.h(0);
            std::vector<double> F(static_cast<std::size_t>(M) + 1);
            for (int k = 0; k <= M; ++k) {
                double g = (val1(u, k) - val1(u, k - 1)) / h;
                double x = mesh_.lo[0] + (k + 0.5) * h;
                flux_(&x, t, &g, &F[static_cast<std::size_t>(k)]);
            }
            for (int i = 0; i < M; ++i)
                R[i] = (u[i] - prev[i]) / dt -
                       (F[static_cast<std::size_t>(i) + 1] - F[static_cast<std::size_t>(i)]) / h -
                       f_vals[i];
            return;
        }
        double hx = mesh_.h(0), hy = mesh_.h(1);
        std::vector<double> Fx(static_cast<std::size_t>(M + 1) * M);
        std::vector<double> Fy(static_cast<std::size_t>(M) * (M + 1));
        for (int j = 0; j < M; ++j)
            for (int k = 0; k <= M; ++k) {
                double g[2], b[2];
                edge_gradient_x(u, k, j, g);
                double x[2] = {mesh_.lo[0] + (k + 0.5) * hx, mesh_.node(1, j)};
                flux_(x, t, g, b);
                Fx[static_cast<std::size_t>(j) * (M + 1) + k] = b[0];
            }
        for (int l = 0; l <= M; ++l)
            for (int i = 0; i < M; ++i) {
                double g[2], b[2];
                edge_gradient_y(u, i, l, g);
                double x[2] = {mesh_.node(0, i), mesh_.lo[1] + (l + 0.5) * hy};
                flux_(x, t, g, b);
                Fy[static_cast<std::size_t>(l) * M + i] = b[1];
            }
        for (int j = 0; j < M; ++j)
            for (int i = 0; i < M; ++i) {
                long idx = static_cast<long>(j) * M + i;
                double divx = (Fx[static_cast<std::size_t>(j) * (M + 1) + i + 1] -
                               Fx[static_cast<std::size_t>(j) * (M + 1) + i]) /
                              hx;
                double divy = (Fy[static_cast<std::size_t>(j + 1) * M + i] -
                               Fy[static_cast<std::size_t>(j) * M + i]) /
                              hy;
                R[idx] = (u[idx] - prev[idx]) / dt - divx - divy - f_vals[idx];
            }
    }

    // Per-edge flux derivatives by central differences at the current state;
    // the assembled action is the Newton Jacobian applied to v.
    void assemble(const double* u, double t, const MacroOpts& opts) {
        int M = mesh_.M_x;
        if (mesh_.N == 1) {
            double h = mesh_.h(0);
            slope_.assign(static_cast<std::size_t>(M) + 1, 0.0);
            for (int k = 0; k <= M; ++k) {
                double g = (val1(u, k) - val1(u, k - 1)) / h;
                double x = mesh_.lo[0] + (k + 0.5) * h;
                double d = opts.fd_step * std::max(1.0, std::abs(g));
                double gp = g + d, gm = g - d, fp, fm;
                flux_(&x, t, &gp, &fp);
                flux_(&x, t, &gm, &fm);
                slope_[static_cast<std::size_t>(k)] = (fp - fm) / (2.0 * d);
            }
            return;
        }
        rows_x_.assign(static_cast<std::size_t>(M + 1) * M * 2, 0.0);
        rows_y_.assign(static_cast<std::size_t>(M) * (M + 1) * 2, 0.0);
        double hx = mesh_.h(0), hy = mesh_.h(1);
        for (int j = 0; j < M; ++j)
            for (int k = 0; k <= M; ++k) {
                double g[2];
                edge_gradient_x(u, k, j, g);
                double x[2] = {mesh_.lo[0] + (k + 0.5) * hx, mesh_.node(1, j)};
                fd_row(x, t, g, 0, opts,
                       rows_x_.data() + (static_cast<std::size_t>(j) * (M + 1) + k) * 2);
            }
        for (int l = 0; l <= M; ++l)
            for (int i = 0; i < M; ++i) {
                double g[2];
                edge_gradient_y(u, i, l, g);
                double x[2] = {mesh_.node(0, i), mesh_.lo[1] + (l + 0.5) * hy};
                fd_row(x, t, g, 1, opts,
                       rows_y_.data() + (static_cast<std::size_t>(l) * M + i) * 2);
            }
    }

    void apply_jacobian(const double* v, double* Jv) const {
        int M = mesh_.M_x;
        double dt = mesh_.dt();
        if (mesh_.N == 1) {
            double h = mesh_.h(0);
            for (int i = 0; i < M; ++i) {
                double dF_r = slope_[static_cast<std::size_t>(i) + 1] *
                              (val1(v, i + 1) - val1(v, i)) / h;
                double dF_l = slope_[static_cast<std::size_t>(i)] *
                              (val1(v, i) - val1(v, i - 1)) / h;
                Jv[i] = v[i] / dt - (dF_r - dF_l) / h;
            }
            return;
        }
        double hx = mesh_.h(0), hy = mesh_.h(1);
        std::vector<double> dFx(static_cast<std::size_t>(M + 1) * M);
        std::vector<double> dFy(static_cast<std::size_t>(M) * (M + 1));
        for (int j = 0; j < M; ++j)
            for (int k = 0; k <= M; ++k) {
                double g[2];
                edge_gradient_x(v, k, j, g);
                const double* row = rows_x_.data() + (static_cast<std::size_t>(j) * (M + 1) + k) * 2;
                dFx[static_cast<std::size_t>(j) * (M + 1) + k] = row[0] * g[0] + row[1] * g[1];
            }
        for (int l = 0; l <= M; ++l)
            for (int i = 0; i < M; ++i) {
                double g[2];
                edge_gradient_y(v, i, l, g);
                const double* row = rows_y_.data() + (static_cast<std::size_t>(l) * M + i) * 2;
                dFy[static_cast<std::size_t>(l) * M + i] = row[0] * g[0] + row[1] * g[1];
            }
        for (int j = 0; j < M; ++j)
            for (int i = 0; i < M; ++i) {
                long idx = static_cast<long>(j) * M + i;
                double divx = (dFx[static_cast<std::size_t>(j) * (M + 1) + i + 1] -
                               dFx[static_cast<std::size_t>(j) * (M + 1) + i]) /
                              hx;
                double divy = (dFy[static_cast<std::size_t>(j + 1) * M + i] -
                               dFy[static_cast<std::size_t>(j) * M + i]) /
                              hy;
                Jv[idx] = v[idx] / dt - divx - divy;
            }
    }

    // Direct tridiagonal solve of J x = rhs (1D only).
    void solve_linear_1d(const double* rhs, double* x) const {
        int M = mesh_.M_x;
        double h = mesh_.h(0), dt = mesh_.dt();
        std::vector<double> a(static_cast<std::size_t>(M)), b(static_cast<std::size_t>(M)),
            c(static_cast<std::size_t>(M)), d(rhs, rhs + M);
        for (int i = 0; i < M; ++i) {
            double kl = slope_[static_cast<std::size_t>(i)];
            double kr = slope_[static_cast<std::size_t>(i) + 1];
            b[static_cast<std::size_t>(i)] = 1.0 / dt + (kl + kr) / (h * h);
            a[static_cast<std::size_t>(i)] = -kl / (h * h);
            c[static_cast<std::size_t>(i)] = -kr / (h * h);
        }
        for (int i = 1; i < M; ++i) {
            double piv = b[static_cast<std::size_t>(i) - 1];
            if (piv == 0.0) throw SingularSystem("zero pivot in tridiagonal step system");
            double w = a[static_cast<std::size_t>(i)] / piv;
            b[static_cast<std::size_t>(i)] -= w * c[static_cast<std::size_t>(i) - 1];
            d[static_cast<std::size_t>(i)] -= w * d[static_cast<std::size_t>(i) - 1];
        }
        if (b[static_cast<std::size_t>(M) - 1] == 0.0)
            throw SingularSystem("zero pivot in tridiagonal step system");
        x[M - 1] = d[static_cast<std::size_t>(M) - 1] / b[static_cast<std::size_t>(M) - 1];
        for (int i = M - 2; i >= 0; --i)
            x[i] = (d[static_cast<std::size_t>(i)] -
                    c[static_cast<std::size_t>(i)] * x[i + 1]) /
                   b[static_cast<std::size_t>(i)];
    }

    // BiCGStab on the assembled Jacobian action (2D).
    void solve_linear_2d(const double* rhs, double* x, const MacroOpts& opts) const {
        long V = mesh_.interior();
        std::vector<double> r(rhs, rhs + V), r0(r), p(r), v(static_cast<std::size_t>(V)),
            s(static_cast<std::size_t>(V)), t(static_cast<std::size_t>(V));
        std::fill(x, x + V, 0.0);
        auto dot = [V](const double* a, const double* b) {
            double acc = 0.0;
            for (long i = 0; i < V; ++i) acc += a[i] * b[i];
            return acc;
        };
        double rr0 = dot(r.data(), r.data());
        if (rr0 == 0.0) return;
        double tol2 = std::max(1e-28 * rr0, 1e-300);
        double rho_prev = dot(r0.data(), r.data());
        long max_iter = opts.krylov_max_factor * V + 20;
        for (long iter = 0; iter < max_iter; ++iter) {
            apply_jacobian(p.data(), v.data());
            double denom = dot(r0.data(), v.data());
            if (std::abs(denom) < 1e-300) throw SingularSystem("step system lost orthogonality");
            double alpha = rho_prev / denom;
            for (long i = 0; i < V; ++i) s[static_cast<std::size_t>(i)] = r[static_cast<std::size_t>(i)] - alpha * v[static_cast<std::size_t>(i)];
            if (dot(s.data(), s.data()) < tol2) {
                for (long i = 0; i < V; ++i) x[i] += alpha * p[static_cast<std::size_t>(i)];
                return;
            }
            apply_jacobian(s.data(), t.data());
            double tt = dot(t.data(), t.data());
            if (tt == 0.0) throw SingularSystem("step system broke down");
            double omega = dot(t.data(), s.data()) / tt;
            if (omega == 0.0) throw SingularSystem("step system broke down");
            for (long i = 0; i < V; ++i)
                x[i] += alpha * p[static_cast<std::size_t>(i)] + omega * s[static_cast<std::size_t>(i)];
            for (long i = 0; i < V; ++i) r[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i)] - omega * t[static_cast<std::size_t>(i)];
            if (dot(r.data(), r.data()) < tol2) return;
            double rho = dot(r0.data(), r.data());
            if (std::abs(rho) < 1e-300) throw SingularSystem("step system lost orthogonality");
            double beta = (rho / rho_prev) * (alpha / omega);
            rho_prev = rho;
            for (long i = 0; i < V; ++i)
                p[static_cast<std::size_t>(i)] =
                    r[static_cast<std::size_t>(i)] +
                    beta * (p[static_cast<std::size_t>(i)] - omega * v[static_cast<std::size_t>(i)]);
        }
        throw SingularSystem("step system iteration budget exhausted");
    }

    // Upper bound on the max absolute row sum of the assembled Jacobian.  Used
    // to estimate the smallest residual representable at the current state:
    // divided differences amplify rounding in u by the same row scale.
    double row_scale() const {
        double dt = mesh_.dt();
        if (mesh_.N == 1) {
            double h = mesh_.h(0), s = 0.0;
            for (std::size_t k = 0; k + 1 < slope_.size(); ++k)
                s = std::max(s, std::abs(slope_[k]) + std::abs(slope_[k + 1]));
            return 1.0 / dt + 2.0 * s / (h * h);
        }
        double hx = mesh_.h(0), hy = mesh_.h(1), sx = 0.0, sy = 0.0;
        for (std::size_t k = 0; k + 1 < rows_x_.size(); k += 2)
            sx = std::max(sx, std::abs(rows_x_[k]) + std::abs(rows_x_[k + 1]));
        for (std::size_t k = 0; k + 1 < rows_y_.size(); k += 2)
            sy = std::max(sy, std::abs(rows_y_[k]) + std::abs(rows_y_[k + 1]));
        return 1.0 / dt + 4.0 * (sx / (hx * hx) + sy / (hy * hy));
    }

  private:
    double val1(const double* u, int i) const {
        return (i < 0 || i >= mesh_.M_x) ? 0.0 : u[i];
    }
    double val2(const double* u, int i, int j) const {
        if (i < 0 || i >= mesh_.M_x || j < 0 || j >= mesh_.M_x) return 0.0;
        return u[static_cast<long>(j) * mesh_.M_x + i];
    }
    double dy_at(const double* u, int i, int j) const {
        return (val2(u, i, j + 1) - val2(u, i, j - 1)) / (2.0 * mesh_.h(1));
    }
    double dx_at(const double* u, int i, int j) const {
        return (val2(u, i + 1, j) - val2(u, i - 1, j)) / (2.0 * mesh_.h(0));
    }
    // gradient at the x-edge between nodes (k-1, j) and (k, j)
    void edge_gradient_x(const double* u, int k, int j, double* g) const {
        g[0] = (val2(u, k, j) - val2(u, k - 1, j)) / mesh_.h(0);
        g[1] = 0.5 * (dy_at(u, k - 1, j) + dy_at(u, k, j));
    }
    // gradient at the y-edge between nodes (i, l-1) and (i, l)
    void edge_gradient_y(const double* u, int i, int l, double* g) const {
        g[0] = 0.5 * (dx_at(u, i, l - 1) + dx_at(u, i, l));
        g[1] = (val2(u, i, l) - val2(u, i, l - 1)) / mesh_.h(1);
    }

    void fd_row(const double* x, double t, const double* g, int component,
                const MacroOpts& opts, double* row) const {
        for (int c = 0; c < 2; ++c) {
            double d = opts.fd_step * std::max(1.0, std::abs(g[c]));
            double gp[2] = {g[0], g[1]}, gm[2] = {g[0], g[1]};
            gp[c] += d;
            gm[c] -= d;
            double bp[2], bm[2];
            flux_(x, t, gp, bp);
            flux_(x, t, gm, bm);
            row[c] = (bp[component] - bm[component]) / (2.0 * d);
        }
    }

    const MacroMesh& mesh_;
    const SpatialFlux& flux_;
    std::vector<double> slope_;  // 1D: db/dg per edge
    std::vector<double> rows_x_; // 2D: (dbx/dgx, dbx/dgy) per x-edge
    std::vector<double> rows_y_; // 2D: (dby/dgx, dby/dgy) per y-edge
};

inline void macro_newton(MacroStep& step, const double* prev, const double* f_vals, double t,
                         double* u, const MacroOpts& opts) {
    long V = step.mesh().interior();
    std::vector<double> R(static_cast<std::size_t>(V)), delta(static_cast<std::size_t>(V)),
        trial(static_cast<std::size_t>(V)), Rt(static_cast<std::size_t>(V));
    auto norm_inf = [V](const double* r) {
        double m = 0.0;
        for (long i = 0; i < V; ++i) m = std::max(m, std::abs(r[i]));
        return m;
    };
    auto norm_2 = [V](const double* r) {
        double s = 0.0;
        for (long i = 0; i < V; ++i) s += r[i] * r[i];
        return std::sqrt(s);
    };
    for (int iter = 0; iter < opts.newton_max; ++iter) {
        step.residual(u, prev, f_vals, t, R.data());
        if (norm_inf(R.data()) < opts.res_tol) return;
        step.assemble(u, t, opts);
        for (long i = 0; i < V; ++i) R[static_cast<std::size_t>(i)] = -R[static_cast<std::size_t>(i)];
        if (step.mesh().N == 1)
            step.solve_linear_1d(R.data(), delta.data());
        else
            step.solve_linear_2d(R.data(), delta.data(), opts);
        for (long i = 0; i < V; ++i) R[static_cast<std::size_t>(i)] = -R[static_cast<std::size_t>(i)];

        double r0 = norm_2(R.data());
        double lambda = 1.0;
        bool accepted = false;
        while (lambda >= opts.damping_floor) {
            for (long i = 0; i < V; ++i)
                trial[static_cast<std::size_t>(i)] = u[i] + lambda * delta[static_cast<std::size_t>(i)];
            step.residual(trial.data(), prev, f_vals, t, Rt.data());
            if (norm_inf(Rt.data()) < opts.res_tol || norm_2(Rt.data()) <= (1.0 - 1e-4 * lambda) * r0) {
                std::memcpy(u, trial.data(), static_cast<std::size_t>(V) * sizeof(double));
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            // On fine meshes the divided differences in the residual amplify
            // rounding of u by the Jacobian row scale, so the residual bottoms
            // out above res_tol and no step can reduce it further.  Accept the
            // current iterate when it already sits at that floor.
            double umax = norm_inf(u) + norm_inf(delta.data());
            double floor = 32.0 * std::numeric_limits<double>::epsilon() * step.row_scale() * umax;
            if (norm_inf(R.data()) <= floor) return;
            throw NewtonStalled("macro step line search stalled at t=" +
                                detail::format_double(t));
        }
    }
    throw NewtonStalled("macro step Newton iteration budget exhausted at t=" +
                        detail::format_double(t));
}

inline SpaceTimeField implicit_euler_solve(const MacroMesh& mesh, const SpatialFlux& flux,
                                           const SourceFn& f, const InitialFn& u0,
                                           const MacroOpts& opts, std::string provenance) {
    mesh.validate();
    long V = mesh.interior();
    SpaceTimeField field;
    field.mesh = mesh;
    field.provenance = std::move(provenance);
    field.values.assign(static_cast<std::size_t>(mesh.M_t + 1) * V, 0.0);

    auto node_point = [&](long idx, double* x) {
        if (mesh.N == 1) {
            x[0] = mesh.node(0, static_cast<int>(idx));
        } else {
            x[0] = mesh.node(0, static_cast<int>(idx % mesh.M_x));
            x[1] = mesh.node(1, static_cast<int>(idx / mesh.M_x));
        }
    };

    double* level0 = field.level(0);
    for (long i = 0; i < V; ++i) {
        double x[2];
        node_point(i, x);
        level0[i] = u0(x);
    }

    MacroStep step(mesh, flux);
    std::vector<double> f_vals(static_cast<std::size_t>(V)), u(static_cast<std::size_t>(V)),
        half(static_cast<std::size_t>(V));
    for (int k = 0; k < mesh.M_t; ++k) {
        const double* prev = field.level(k);
        double t = (k + 1) * mesh.dt();
        for (long i = 0; i < V; ++i) {
            double x[2];
            node_point(i, x);
            f_vals[static_cast<std::size_t>(i)] = f(x, t);
        }
        std::memcpy(u.data(), prev, static_cast<std::size_t>(V) * sizeof(double));
        if (opts.init_perturb != 0.0)
            for (long i = 0; i < V; ++i)
                u[static_cast<std::size_t>(i)] += opts.init_perturb * std::sin(1.0 + 0.7 * i);
        try {
            macro_newton(step, prev, f_vals.data(), t, u.data(), opts);
        } catch (const NewtonStalled&) {
            // one refinement attempt: the failed step taken as two half steps
            double t_half = t - 0.5 * mesh.dt();
            MacroMesh sub = mesh;
            sub.M_t = mesh.M_t * 2;
            MacroStep substep(sub, flux);
            std::vector<double> f_half(static_cast<std::size_t>(V));
            for (long i = 0; i < V; ++i) {
                double x[2];
                node_point(i, x);
                f_half[static_cast<std::size_t>(i)] = f(x, t_half);
            }
            std::memcpy(half.data(), prev, static_cast<std::size_t>(V) * sizeof(double));
            macro_newton(substep, prev, f_half.data(), t_half, half.data(), opts);
            std::memcpy(u.data(), half.data(), static_cast<std::size_t>(V) * sizeof(double));
            macro_newton(substep, half.data(), f_vals.data(), t, u.data(), opts);
        }
        std::memcpy(field.level(k + 1), u.data(), static_cast<std::size_t>(V) * sizeof(double));
    }
    return field;
}

} // namespace detail

inline SpaceTimeField solve_homogenized(const MacroMesh& mesh, const GradientFlux& flux,
                                        const SourceFn& f, const InitialFn& u0,
                                        const MacroOpts& opts = {}) {
    SpatialFlux wrapped = [&flux](const double*, double, const double* g, double* out) {
        flux(g, out);
    };
    return detail::implicit_euler_solve(mesh, wrapped, f, u0, opts, "macro");
}

inline SpaceTimeField solve_homogenized(const MacroMesh& mesh, const EffectiveFluxEvaluator& ev,
                                        const SourceFn& f, const InitialFn& u0,
                                        const MacroOpts& opts = {}) {
    if (ev.dim() != mesh.N) throw ConfigError("flux dimension disagrees with macro mesh");
    return solve_homogenized(
        mesh, [&ev](const double* g, double* out) { ev.evaluate(g, out); }, f, u0, opts);
}

inline SpaceTimeField solve_homogenized(const MacroMesh& mesh, const FluxTable& table,
                                        const SourceFn& f, const InitialFn& u0,
                                        const MacroOpts& opts = {}) {
    if (table.N != mesh.N) throw ConfigError("flux table dimension disagrees with macro mesh");
    return solve_homogenized(
        mesh, [&table](const double* g, double* out) { interp(table, g, out); }, f, u0, opts);
}

inline SpaceTimeField solve_homogenized(const MacroMesh& mesh, const LinearFluxMatrix& mat,
                                        const SourceFn& f, const InitialFn& u0,
                                        const MacroOpts& opts = {}) {
    if (mat.N != mesh.N) throw ConfigError("flux matrix dimension disagrees with macro mesh");
    return solve_homogenized(
        mesh, [&mat](const double* g, double* out) { mat.apply(g, out); }, f, u0, opts);
}

} // namespace multihom
