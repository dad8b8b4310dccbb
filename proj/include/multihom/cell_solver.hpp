#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "multihom/errors.hpp"
#include "multihom/flux_models.hpp"
#include "multihom/scale_algebra.hpp"

namespace multihom {

// Uniform periodic cell mesh shared by all microscale cells: M_y nodes per
// spatial axis of the unit cell, M_s steps per unit time cell.
struct PeriodicGrid {
    int N = 1;
    int M_y = 32;
    int M_s = 32;

    static PeriodicGrid make(int N, int M_y, int M_s) {
        if (N < 1 || N > 2) throw ConfigError("cell dimension N must be 1 or 2");
        if (M_y < 8) throw ConfigError("cell grid needs M_y >= 8");
        if (M_s < 8) throw ConfigError("cell grid needs M_s >= 8");
        return PeriodicGrid{N, M_y, M_s};
    }

    double h() const { return 1.0 / M_y; }
    double tau() const { return 1.0 / M_s; }
    int nodes() const { return N == 1 ? M_y : M_y * M_y; }
    // 1D: intervals between nodes; 2D: two triangles per grid square.
    int elements() const { return N == 1 ? M_y : 2 * M_y * M_y; }
    double node_weight() const { return N == 1 ? h() : h() * h(); }
};

struct CellOpts {
    double res_tol = 1e-10;
    int newton_max = 50;
    double damping_floor = 0x1p-10;
    double gs_tol = 1e-9;
    int max_sweeps = 100;
    double poincare_tol = 1e-9;
    int poincare_max_periods = 1000;
    int poincare_stall = 5;
    double rho_floor = 1e-8;
    std::uint64_t seed = 42;
    bool random_init = false;
};

// One corrector field: mean-zero over its own cell at every stored temporal
// node, parameterized by the slower cells' quadrature points and by the
// temporal variables it keeps (faster temporal variables are integrated out
// and never stored).
struct Corrector {
    int scale_index = 1; // 1-based
    int N = 1;
    int M_y = 8;
    int kept_s = 0;
    bool resonant = false;
    double periodicity_gap = 0.0;
    std::string note;
    std::vector<long> param_sizes; // slower element axes, then kept temporal axes
    std::vector<double> values;    // [param combos][own nodes]

    int own_nodes() const { return N == 1 ? M_y : M_y * M_y; }
    long param_count() const {
        long p = 1;
        for (long s : param_sizes) p *= s;
        return p;
    }
    const double* slice(long p) const { return values.data() + p * own_nodes(); }
    double* slice(long p) { return values.data() + p * own_nodes(); }
};

struct SweepRecord {
    double increment = 0.0; // max L2 corrector change in the sweep
    double residual = 0.0;  // max weak residual across scales after the sweep
};

struct LocalSystemSolution {
    std::vector<Corrector> correctors;
    std::vector<SweepRecord> history;
    std::array<double, 2> xi{0.0, 0.0};
};

namespace detail {

// P1 element geometry on the periodic cell. Elements carry a constant
// gradient; quadrature sits at the interval midpoint / triangle centroid.
struct CellGeometry {
    int N, M;
    explicit CellGeometry(const PeriodicGrid& g) : N(g.N), M(g.M_y) {}

    int elements() const { return N == 1 ? M : 2 * M * M; }
    int nodes() const { return N == 1 ? M : M * M; }

    void quad_point(int e, double* xy) const {
        double h = 1.0 / M;
        if (N == 1) {
            xy[0] = (e + 0.5) * h;
            return;
        }
        int sq = e >> 1, t = e & 1;
        int kx = sq % M, ky = sq / M;
        if (t == 0) {
            xy[0] = (kx + 2.0 / 3.0) * h;
            xy[1] = (ky + 1.0 / 3.0) * h;
        } else {
            xy[0] = (kx + 1.0 / 3.0) * h;
            xy[1] = (ky + 2.0 / 3.0) * h;
        }
    }

    void vertices(int e, int* v) const {
        if (N == 1) {
            v[0] = e;
            v[1] = (e + 1) % M;
            return;
        }
        int sq = e >> 1, t = e & 1;
        int kx = sq % M, ky = sq / M;
        int x1 = (kx + 1) % M, y1 = (ky + 1) % M;
        if (t == 0) {
            v[0] = ky * M + kx;
            v[1] = ky * M + x1;
            v[2] = y1 * M + x1;
        } else {
            v[0] = ky * M + kx;
            v[1] = y1 * M + x1;
            v[2] = y1 * M + kx;
        }
    }

    void gradient(const double* u, int e, double* g) const {
        double inv_h = static_cast<double>(M);
        int v[3];
        vertices(e, v);
        if (N == 1) {
            g[0] = (u[v[1]] - u[v[0]]) * inv_h;
            return;
        }
        if ((e & 1) == 0) {
            g[0] = (u[v[1]] - u[v[0]]) * inv_h;
            g[1] = (u[v[2]] - u[v[1]]) * inv_h;
        } else {
            g[0] = (u[v[1]] - u[v[2]]) * inv_h;
            g[1] = (u[v[2]] - u[v[0]]) * inv_h;
        }
    }

    // Accumulate measure * (q . grad phi_v) for each vertex basis function.
    void scatter(int e, const double* q, double* out) const {
        int v[3];
        vertices(e, v);
        if (N == 1) {
            // interval measure h times gradient +-1/h
            out[v[0]] -= q[0];
            out[v[1]] += q[0];
            return;
        }
        double w = 0.5 / M; // (h^2/2) * (1/h)
        if ((e & 1) == 0) {
            out[v[0]] += w * (-q[0]);
            out[v[1]] += w * (q[0] - q[1]);
            out[v[2]] += w * (q[1]);
        } else {
            out[v[0]] += w * (-q[1]);
            out[v[1]] += w * (q[0]);
            out[v[2]] += w * (q[1] - q[0]);
        }
    }
};

inline void project_mean_zero(double* u, int count) {
    double mean = std::accumulate(u, u + count, 0.0) / count;
    for (int k = 0; k < count; ++k) u[k] -= mean;
}

inline double dot(const double* a, const double* b, int count) {
    double s = 0.0;
    for (int k = 0; k < count; ++k) s += a[k] * b[k];
    return s;
}

// Assembles faster-averaged element data for one scale's local problem and
// whole-cell flux averages. Owns the coefficient cache over the joint
// quadrature grid (spatial elements x temporal nodes, row-major).
class CellAssembler {
  public:
    CellAssembler(const FluxSpec& spec, const ScaleExponents& exp, const PeriodicGrid& grid)
        : spec_(&spec), exp_(&exp), grid_(grid), geo_(grid) {
        if (spec.dim() != grid.N) throw ConfigError("flux dimension does not match the cell grid");
        if (spec.spatial_scales() != exp.n || spec.temporal_scales() != exp.m)
            throw ConfigError("flux scale counts do not match the classification");
        n_ = exp.n;
        m_ = exp.m;
        E_ = geo_.elements();
        V_ = geo_.nodes();
        double entries = 1.0;
        for (int j = 0; j < n_; ++j) entries *= E_;
        for (int j = 0; j < m_; ++j) entries *= grid_.M_s;
        if (entries > static_cast<double>(1L << 24))
            throw ConfigError("joint quadrature grid exceeds the cache budget");
        build_cache();
    }

    const PeriodicGrid& grid() const { return grid_; }
    const CellGeometry& geometry() const { return geo_; }
    int scales() const { return n_; }
    int temporal() const { return m_; }
    int kept_s(int si) const { return m_ - exp_->d[si]; } // si is 0-based

    std::vector<long> param_shape(int si) const {
        std::vector<long> shape;
        for (int j = 0; j < si; ++j) shape.push_back(E_);
        for (int j = 0; j < kept_s(si); ++j) shape.push_back(grid_.M_s);
        return shape;
    }

    // Decode a flat parameter combo of scale si into joint indices.
    void decode_params(int si, long flat, int* es, int* ls) const {
        int K = kept_s(si);
        for (int j = K - 1; j >= 0; --j) {
            ls[j] = static_cast<int>(flat % grid_.M_s);
            flat /= grid_.M_s;
        }
        for (int j = si - 1; j >= 0; --j) {
            es[j] = static_cast<int>(flat % E_);
            flat /= E_;
        }
    }

    // Faster-averaged flux (F, size E*N) and optionally tangent (T, E*N*N)
    // per own element of scale si, at fixed slower/kept indices. es and ls
    // must hold valid entries for axes < si and < kept_s(si); the rest are
    // loop variables. own holds the candidate nodal field for scale si.
    void element_data(int si, const double* own, const std::vector<Corrector>& correctors,
                      const double* xi, int* es, int* ls, std::vector<double>& F,
                      std::vector<double>* T) const {
        int N = grid_.N;
        int K = kept_s(si);
        std::fill(F.begin(), F.end(), 0.0);
        if (T) std::fill(T->begin(), T->end(), 0.0);

        double g_slow[2] = {0.0, 0.0};
        for (int j = 0; j < si; ++j) accumulate_gradient(correctors[j], j, es, ls, g_slow);

        // faster axes: spatial scales si+1..n-1, temporal axes K..m-1
        int fs = n_ - 1 - si;
        int ft = m_ - K;
        double w = 1.0;
        for (int j = 0; j < fs; ++j) w /= E_;
        for (int j = 0; j < ft; ++j) w /= grid_.M_s;

        double g_own[2], g_fast[2], xi_t[2], a[2], Da[4];
        for (int e = 0; e < E_; ++e) {
            es[si] = e;
            geo_.gradient(own, e, g_own);
            double* Fe = F.data() + e * N;
            double* Te = T ? T->data() + e * N * N : nullptr;
            // odometer over the faster axes
            for (int j = si + 1; j < n_; ++j) es[j] = 0;
            for (int j = K; j < m_; ++j) ls[j] = 0;
            while (true) {
                g_fast[0] = g_fast[1] = 0.0;
                for (int j = si + 1; j < n_; ++j)
                    accumulate_gradient(correctors[j], j, es, ls, g_fast);
                for (int c = 0; c < N; ++c) xi_t[c] = xi[c] + g_slow[c] + g_own[c] + g_fast[c];
                double A = cache_[cache_index(es, ls)];
                FluxSpec::flux_from_coefficient(spec_->family(), spec_->beta(), A, xi_t, N, a);
                for (int c = 0; c < N; ++c) Fe[c] += w * a[c];
                if (Te) {
                    FluxSpec::tangent_from_coefficient(spec_->family(), spec_->beta(), A, xi_t, N,
                                                       Da);
                    for (int c = 0; c < N * N; ++c) Te[c] += w * Da[c];
                }
                // advance
                int axis = 0;
                bool done = true;
                for (axis = si + 1; axis < n_; ++axis) {
                    if (++es[axis] < E_) {
                        done = false;
                        break;
                    }
                    es[axis] = 0;
                }
                if (done)
                    for (axis = K; axis < m_; ++axis) {
                        if (++ls[axis] < grid_.M_s) {
                            done = false;
                            break;
                        }
                        ls[axis] = 0;
                    }
                if (done) break;
            }
        }
    }

    void scatter_flux(const std::vector<double>& F, double* R) const {
        int N = grid_.N;
        std::fill(R, R + V_, 0.0);
        for (int e = 0; e < E_; ++e) geo_.scatter(e, F.data() + e * N, R);
    }

    // Apply the averaged-tangent operator to a nodal field.
    void apply_tangent(const std::vector<double>& T, const double* wfield, double* out) const {
        int N = grid_.N;
        std::fill(out, out + V_, 0.0);
        double g[2], q[2];
        for (int e = 0; e < E_; ++e) {
            geo_.gradient(wfield, e, g);
            const double* Te = T.data() + e * N * N;
            for (int r = 0; r < N; ++r) {
                q[r] = 0.0;
                for (int c = 0; c < N; ++c) q[r] += Te[r * N + c] * g[c];
            }
            geo_.scatter(e, q, out);
        }
    }

    // Average the flux with all correctors inserted over every cell.
    void average_flux(const std::vector<Corrector>& correctors, const double* xi,
                      double* out) const {
        int N = grid_.N;
        std::vector<int> es(std::max(n_, 1), 0), ls(std::max(m_, 1), 0);
        double w = 1.0;
        for (int j = 0; j < n_; ++j) w /= E_;
        for (int j = 0; j < m_; ++j) w /= grid_.M_s;
        for (int c = 0; c < N; ++c) out[c] = 0.0;
        double g[2], xi_t[2], a[2];
        while (true) {
            g[0] = g[1] = 0.0;
            for (int j = 0; j < n_; ++j)
                accumulate_gradient(correctors[j], j, es.data(), ls.data(), g);
            for (int c = 0; c < N; ++c) xi_t[c] = xi[c] + g[c];
            double A = cache_[cache_index(es.data(), ls.data())];
            FluxSpec::flux_from_coefficient(spec_->family(), spec_->beta(), A, xi_t, N, a);
            for (int c = 0; c < N; ++c) out[c] += w * a[c];
            int axis;
            bool done = true;
            for (axis = 0; axis < n_; ++axis) {
                if (++es[axis] < E_) {
                    done = false;
                    break;
                }
                es[axis] = 0;
            }
            if (done)
                for (axis = 0; axis < m_; ++axis) {
                    if (++ls[axis] < grid_.M_s) {
                        done = false;
                        break;
                    }
                    ls[axis] = 0;
                }
            if (done) break;
        }
    }

    long cache_index(const int* es, const int* ls) const {
        long idx = 0;
        for (int j = 0; j < n_; ++j) idx = idx * E_ + es[j];
        for (int j = 0; j < m_; ++j) idx = idx * grid_.M_s + ls[j];
        return idx;
    }

  private:
    void accumulate_gradient(const Corrector& u, int j, const int* es, const int* ls,
                             double* g) const {
        long p = 0;
        for (int t = 0; t < j; ++t) p = p * E_ + es[t];
        for (int t = 0; t < u.kept_s; ++t) p = p * grid_.M_s + ls[t];
        double gj[2] = {0.0, 0.0};
        geo_.gradient(u.slice(p), es[j], gj);
        g[0] += gj[0];
        if (grid_.N == 2) g[1] += gj[1];
    }

    void build_cache() {
        long total = 1;
        for (int j = 0; j < n_; ++j) total *= E_;
        for (int j = 0; j < m_; ++j) total *= grid_.M_s;
        cache_.resize(total);
        int nN = n_ * grid_.N;
        std::vector<double> coords(nN + m_, 0.0);
        std::vector<int> es(std::max(n_, 1), 0), ls(std::max(m_, 1), 0);
        for (long flat = 0; flat < total; ++flat) {
            long rem = flat;
            for (int j = m_ - 1; j >= 0; --j) {
                ls[j] = static_cast<int>(rem % grid_.M_s);
                rem /= grid_.M_s;
            }
            for (int j = n_ - 1; j >= 0; --j) {
                es[j] = static_cast<int>(rem % E_);
                rem /= E_;
            }
            for (int j = 0; j < n_; ++j) geo_.quad_point(es[j], coords.data() + j * grid_.N);
            for (int j = 0; j < m_; ++j) coords[nN + j] = ls[j] * grid_.tau();
            cache_[flat] = spec_->coefficient_at(coords.data());
        }
    }

    const FluxSpec* spec_;
    const ScaleExponents* exp_;
    PeriodicGrid grid_;
    CellGeometry geo_;
    int n_ = 0, m_ = 0, E_ = 0, V_ = 0;
    std::vector<double> cache_;
};

// Conjugate gradients for the averaged-tangent system on the mean-zero
// subspace; mass_shift adds c*I for implicit time steps.
inline void solve_tangent_system(const CellAssembler& asmbl, const std::vector<double>& T,
                                 double mass_shift, const double* rhs, double* x, int V) {
    std::vector<double> r(rhs, rhs + V), p, q(V);
    std::fill(x, x + V, 0.0);
    if (mass_shift == 0.0) project_mean_zero(r.data(), V);
    p = r;
    double rr = dot(r.data(), r.data(), V);
    double stop = std::max(1e-28 * rr, 1e-300);
    int max_iter = 4 * V + 20;
    for (int it = 0; it < max_iter && rr > stop; ++it) {
        asmbl.apply_tangent(T, p.data(), q.data());
        if (mass_shift != 0.0)
            for (int k = 0; k < V; ++k) q[k] += mass_shift * p[k];
        double pq = dot(p.data(), q.data(), V);
        if (pq <= 0.0)
            throw SingularSystem("tangent system lost positivity (monotonicity constant <= 0)");
        double alpha = rr / pq;
        for (int k = 0; k < V; ++k) {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        if (mass_shift == 0.0) project_mean_zero(r.data(), V);
        double rr_new = dot(r.data(), r.data(), V);
        double beta = rr_new / rr;
        rr = rr_new;
        for (int k = 0; k < V; ++k) p[k] = r[k] + beta * p[k];
    }
    if (mass_shift == 0.0) project_mean_zero(x, V);
}

// Damped Newton for one cell problem instance (one parameter combo, one
// implicit-Euler step in the resonant case). mass_shift = rho h^N / tau,
// with u_prev the previous time level (null for elliptic problems).
inline void newton_cell(const CellAssembler& asmbl, int si, double* u, const double* u_prev,
                        double mass_shift, const std::vector<Corrector>& correctors,
                        const double* xi, int* es, int* ls, const CellOpts& opts) {
    const PeriodicGrid& grid = asmbl.grid();
    int N = grid.N;
    int V = asmbl.geometry().nodes();
    int E = asmbl.geometry().elements();
    double mass_w = grid.node_weight();

    std::vector<double> F(E * N), T(E * N * N), R(V), Rtrial(V), du(V), trial(V);

    auto residual = [&](const double* field, std::vector<double>& out) {
        asmbl.element_data(si, field, correctors, xi, es, ls, F, nullptr);
        asmbl.scatter_flux(F, out.data());
        if (u_prev)
            for (int k = 0; k < V; ++k) out[k] += mass_shift * mass_w * (field[k] - u_prev[k]);
    };

    auto norm_inf = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s = std::max(s, std::abs(x));
        return s;
    };
    auto norm_2 = [&](const std::vector<double>& v) {
        return std::sqrt(dot(v.data(), v.data(), V));
    };

    residual(u, R);
    for (int iter = 0; iter < opts.newton_max; ++iter) {
        if (norm_inf(R) < opts.res_tol) return;
        asmbl.element_data(si, u, correctors, xi, es, ls, F, &T);
        std::vector<double> rhs(V);
        for (int k = 0; k < V; ++k) rhs[k] = -R[k];
        solve_tangent_system(asmbl, T, u_prev ? mass_shift * mass_w : 0.0, rhs.data(), du.data(),
                             V);
        double r0 = norm_2(R);
        double lambda = 1.0;
        while (true) {
            for (int k = 0; k < V; ++k) trial[k] = u[k] + lambda * du[k];
            if (!u_prev) project_mean_zero(trial.data(), V);
            residual(trial.data(), Rtrial);
            if (norm_2(Rtrial) <= (1.0 - 1e-4 * lambda) * r0 || norm_inf(Rtrial) < opts.res_tol)
                break;
            lambda *= 0.5;
            if (lambda < opts.damping_floor)
                throw NewtonStalled("cell problem line search hit the damping floor at residual " +
                                    detail::format_double(r0));
        }
        std::copy(trial.begin(), trial.end(), u);
        std::swap(R, Rtrial);
    }
    if (norm_inf(R) >= opts.res_tol)
        throw NewtonStalled("cell problem did not reach tolerance in " +
                            std::to_string(opts.newton_max) + " iterations");
}

inline void maybe_randomize(double* u, int V, const CellOpts& opts, std::mt19937_64& rng) {
    if (!opts.random_init) return;
    std::uniform_real_distribution<double> d(-0.1, 0.1);
    for (int k = 0; k < V; ++k) u[k] = d(rng);
    project_mean_zero(u, V);
}

} // namespace detail

inline Corrector make_zero_corrector(const ScaleExponents& exp, const PeriodicGrid& grid, int i) {
    if (i < 1 || i > exp.n) throw ConfigError("corrector scale index out of range");
    detail::CellGeometry geo(grid);
    Corrector u;
    u.scale_index = i;
    u.N = grid.N;
    u.M_y = grid.M_y;
    u.kept_s = exp.m - exp.d[i - 1];
    u.resonant = exp.rho[i - 1] > 0.0;
    for (int j = 0; j < i - 1; ++j) u.param_sizes.push_back(geo.elements());
    for (int j = 0; j < u.kept_s; ++j) u.param_sizes.push_back(grid.M_s);
    u.values.assign(u.param_count() * u.own_nodes(), 0.0);
    return u;
}

inline std::vector<Corrector> make_zero_correctors(const ScaleExponents& exp,
                                                   const PeriodicGrid& grid) {
    std::vector<Corrector> out;
    for (int i = 1; i <= exp.n; ++i) out.push_back(make_zero_corrector(exp, grid, i));
    return out;
}

// L2 distance between two correctors of identical shape, with cell measures
// (each parameter cell has unit measure, so combos average out).
inline double corrector_l2_diff(const Corrector& a, const Corrector& b) {
    if (a.values.size() != b.values.size())
        throw DomainMismatch("correctors have different shapes");
    double s = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) {
        double d = a.values[k] - b.values[k];
        s += d * d;
    }
    double w = (a.N == 1 ? 1.0 / a.M_y : 1.0 / (static_cast<double>(a.M_y) * a.M_y));
    return std::sqrt(s * w / a.param_count());
}

inline double corrector_l2_norm(const Corrector& a) {
    double s = 0.0;
    for (double v : a.values) s += v * v;
    double w = (a.N == 1 ? 1.0 / a.M_y : 1.0 / (static_cast<double>(a.M_y) * a.M_y));
    return std::sqrt(s * w / a.param_count());
}

// Largest |cell average| across parameter combos (mean-zero audit).
inline double corrector_mean_abs_max(const Corrector& u) {
    int V = u.own_nodes();
    double worst = 0.0;
    for (long p = 0; p < u.param_count(); ++p) {
        const double* s = u.slice(p);
        double mean = std::accumulate(s, s + V, 0.0) / V;
        worst = std::max(worst, std::abs(mean));
    }
    return worst;
}

namespace detail {

inline void solve_elliptic_impl(const CellAssembler& asmbl, int si, Corrector& out,
                                const std::vector<Corrector>& frozen, const double* xi,
                                const CellOpts& opts) {
    int V = asmbl.geometry().nodes();
    std::vector<int> es(std::max(asmbl.scales(), 1), 0), ls(std::max(asmbl.temporal(), 1), 0);
    std::mt19937_64 rng(opts.seed);
    for (long p = 0; p < out.param_count(); ++p) {
        asmbl.decode_params(si, p, es.data(), ls.data());
        double* u = out.slice(p);
        std::copy(frozen[si].slice(p), frozen[si].slice(p) + V, u);
        maybe_randomize(u, V, opts, rng);
        project_mean_zero(u, V);
        newton_cell(asmbl, si, u, nullptr, 0.0, frozen, xi, es.data(), ls.data(), opts);
        project_mean_zero(u, V);
    }
}

inline void solve_parabolic_impl(const CellAssembler& asmbl, int si, double rho, Corrector& out,
                                 const std::vector<Corrector>& frozen, const double* xi,
                                 const CellOpts& opts) {
    const PeriodicGrid& grid = asmbl.grid();
    int V = asmbl.geometry().nodes();
    int M_s = grid.M_s;
    int K = asmbl.kept_s(si);
    if (K < 1) throw ConfigError("resonant problem has no kept temporal axis");
    double mass_shift = rho / grid.tau();

    // Solve the implicit steps tighter than the audit threshold, and push
    // the period map far enough that the wrap-around defect (which enters
    // the level-0 residual scaled by rho h^N / tau) stays below it too.
    CellOpts step_opts = opts;
    step_opts.res_tol = 0.25 * opts.res_tol;
    double defect_scale = std::max(mass_shift * grid.node_weight(), 1e-30);
    double gap_tol = std::min(opts.poincare_tol, 0.25 * opts.res_tol / defect_scale);

    std::vector<int> es(std::max(asmbl.scales(), 1), 0), ls(std::max(asmbl.temporal(), 1), 0);
    std::mt19937_64 rng(opts.seed);

    long outer = out.param_count() / M_s; // combos excluding the resonant axis
    std::vector<double> u0(V), u(V), prev(V);
    for (long po = 0; po < outer; ++po) {
        asmbl.decode_params(si, po * M_s, es.data(), ls.data());
        std::copy(frozen[si].slice(po * M_s), frozen[si].slice(po * M_s) + V, u0.data());
        maybe_randomize(u0.data(), V, opts, rng);
        project_mean_zero(u0.data(), V);

        double gap = std::numeric_limits<double>::infinity();
        int stalled = 0;
        int period = 0;
        for (; period < opts.poincare_max_periods; ++period) {
            std::copy(u0.begin(), u0.end(), u.begin());
            for (int l = 0; l < M_s; ++l) {
                std::copy(u.begin(), u.end(), prev.begin());
                ls[K - 1] = (l + 1) % M_s;
                newton_cell(asmbl, si, u.data(), prev.data(), mass_shift, frozen, xi, es.data(),
                            ls.data(), step_opts);
                project_mean_zero(u.data(), V);
            }
            double d2 = 0.0;
            for (int k = 0; k < V; ++k) {
                double d = u[k] - u0[k];
                d2 += d * d;
            }
            double dist = std::sqrt(d2 * grid.node_weight());
            if (dist >= gap - 1e-16) {
                if (++stalled >= opts.poincare_stall)
                    throw PoincareNotContracting(
                        "period map distance stopped decreasing at " +
                        detail::format_double(dist) + " after " + std::to_string(period + 1) +
                        " periods");
            } else {
                stalled = 0;
            }
            gap = dist;
            std::copy(u.begin(), u.end(), u0.begin());
            if (dist < gap_tol) break;
        }
        if (gap >= gap_tol)
            throw PoincareNotContracting("period map did not reach tolerance within " +
                                         std::to_string(opts.poincare_max_periods) + " periods");
        out.periodicity_gap = std::max(out.periodicity_gap, gap);

        // one more period, recording every time level
        std::copy(u0.begin(), u0.end(), out.slice(po * M_s + 0));
        std::copy(u0.begin(), u0.end(), u.begin());
        for (int l = 0; l < M_s - 1; ++l) {
            std::copy(u.begin(), u.end(), prev.begin());
            ls[K - 1] = l + 1;
            newton_cell(asmbl, si, u.data(), prev.data(), mass_shift, frozen, xi, es.data(),
                        ls.data(), step_opts);
            project_mean_zero(u.data(), V);
            std::copy(u.begin(), u.end(), out.slice(po * M_s + l + 1));
        }
    }
}

} // namespace detail

// Elliptic (nonresonance) corrector for scale i with the other correctors
// frozen; the frozen entry for i seeds the Newton iteration.
inline Corrector solve_elliptic_corrector(const FluxSpec& spec, const double* xi, int i,
                                          const std::vector<Corrector>& frozen,
                                          const ScaleExponents& exp, const PeriodicGrid& grid,
                                          const CellOpts& opts = {}) {
    detail::CellAssembler asmbl(spec, exp, grid);
    Corrector out = make_zero_corrector(exp, grid, i);
    detail::solve_elliptic_impl(asmbl, i - 1, out, frozen, xi, opts);
    return out;
}

// Time-periodic parabolic (resonance) corrector: implicit Euler over the
// resonant temporal axis, made periodic by iterating the period map.
inline Corrector solve_parabolic_corrector(const FluxSpec& spec, const double* xi, int i,
                                           double rho, const std::vector<Corrector>& frozen,
                                           const ScaleExponents& exp, const PeriodicGrid& grid,
                                           const CellOpts& opts = {}) {
    if (!(rho > 0.0)) throw ConfigError("parabolic corrector needs rho > 0");
    detail::CellAssembler asmbl(spec, exp, grid);
    Corrector out = make_zero_corrector(exp, grid, i);
    if (rho < opts.rho_floor) {
        // Degenerate resonance constant: the time derivative is negligible,
        // so solve the quasi-static (elliptic) problem at every kept
        // temporal node; the result is periodic by construction.
        detail::solve_elliptic_impl(asmbl, i - 1, out, frozen, xi, opts);
        out.note = "rho below floor: routed to the elliptic solver";
        return out;
    }
    detail::solve_parabolic_impl(asmbl, i - 1, rho, out, frozen, xi, opts);
    return out;
}

// Max weak-form residual of corrector i against the currently frozen set.
inline double weak_residual_inf(const FluxSpec& spec, const ScaleExponents& exp,
                                const PeriodicGrid& grid,
                                const std::vector<Corrector>& correctors, int i,
                                const double* xi) {
    detail::CellAssembler asmbl(spec, exp, grid);
    int si = i - 1;
    int V = asmbl.geometry().nodes();
    int E = asmbl.geometry().elements();
    int N = grid.N;
    const Corrector& u = correctors[si];
    std::vector<int> es(std::max(exp.n, 1), 0), ls(std::max(exp.m, 1), 0);
    std::vector<double> F(E * N), R(V);
    double worst = 0.0;
    double mass_w = grid.node_weight();
    double rho = exp.rho[si];
    int M_s = grid.M_s;
    for (long p = 0; p < u.param_count(); ++p) {
        asmbl.decode_params(si, p, es.data(), ls.data());
        asmbl.element_data(si, u.slice(p), correctors, xi, es.data(), ls.data(), F, nullptr);
        asmbl.scatter_flux(F, R.data());
        if (u.resonant && rho > 0.0) {
            // implicit-Euler time derivative: this level minus the previous
            long po = p / M_s;
            int l = static_cast<int>(p % M_s);
            const double* here = u.slice(p);
            const double* before = u.slice(po * M_s + (l + M_s - 1) % M_s);
            for (int k = 0; k < V; ++k)
                R[k] += rho * (mass_w / grid.tau()) * (here[k] - before[k]);
        }
        for (int k = 0; k < V; ++k) worst = std::max(worst, std::abs(R[k]));
    }
    return worst;
}

// Gauss-Seidel over scales, slowest first. A single-scale system needs one
// sweep (there is no coupling); multi-scale systems sweep until the largest
// corrector increment and the weak residuals are below tolerance.
inline LocalSystemSolution solve_local_system(const FluxSpec& spec, const double* xi,
                                              const ScaleExponents& exp, const PeriodicGrid& grid,
                                              const CellOpts& opts = {}) {
    if (exp.n < 1 || exp.n > 2) throw ConfigError("local system supports 1 or 2 spatial scales");
    if (!spec.admissible())
        throw StructureViolation("flux is not admissible (monotonicity would fail)");
    detail::CellAssembler asmbl(spec, exp, grid);
    LocalSystemSolution sol;
    sol.xi = {xi[0], grid.N == 2 ? xi[1] : 0.0};
    sol.correctors = make_zero_correctors(exp, grid);

    auto solve_scale = [&](int si) {
        Corrector next = make_zero_corrector(exp, grid, si + 1);
        double rho = exp.rho[si];
        if (rho > opts.rho_floor) {
            detail::solve_parabolic_impl(asmbl, si, rho, next, sol.correctors, xi, opts);
        } else {
            if (rho > 0.0) next.note = "rho below floor: routed to the elliptic solver";
            detail::solve_elliptic_impl(asmbl, si, next, sol.correctors, xi, opts);
        }
        double inc = corrector_l2_diff(next, sol.correctors[si]);
        sol.correctors[si] = std::move(next);
        return inc;
    };

    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
        SweepRecord rec;
        for (int si = 0; si < exp.n; ++si)
            rec.increment = std::max(rec.increment, solve_scale(si));
        for (int si = 0; si < exp.n; ++si)
            rec.residual = std::max(
                rec.residual, weak_residual_inf(spec, exp, grid, sol.correctors, si + 1, xi));
        sol.history.push_back(rec);
        if (exp.n == 1) return sol;
        if (rec.increment < opts.gs_tol && rec.residual < opts.res_tol) return sol;
    }
    throw GaussSeidelNotConverging("cross-scale sweeps did not converge in " +
                                   std::to_string(opts.max_sweeps) + " sweeps (last increment " +
                                   detail::format_double(sol.history.back().increment) + ")");
}

// Average of the flux over all cells with correctors inserted.
inline void average_flux(const FluxSpec& spec, const ScaleExponents& exp, const PeriodicGrid& grid,
                         const std::vector<Corrector>& correctors, const double* xi, double* out) {
    detail::CellAssembler asmbl(spec, exp, grid);
    asmbl.average_flux(correctors, xi, out);
}

} // namespace multihom
