#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "multihom/errors.hpp"
#include "multihom/expr.hpp"

namespace multihom {

enum class FluxFamily { Linear, QuasilinearBounded };

inline const char* family_name(FluxFamily f) {
    return f == FluxFamily::Linear ? "Linear" : "QuasilinearBounded";
}

namespace detail {

// Wrap a coordinate into [0,1). Identity (bitwise) for inputs already there.
inline double wrap01(double x) {
    double w = x - std::floor(x);
    if (w >= 1.0) w = 0.0; // x slightly below an integer can round up
    return w;
}

} // namespace detail

struct StructureReport {
    double c0_measured = 0.0;   // min monotonicity quotient over sampled pairs
    double c1_measured = 0.0;   // max difference quotient over sampled pairs
    double growth_max = 0.0;    // max |a(xi)| / (C1 (1 + |xi|))
    int zero_checks = 0;        // points where a(y,s,0) == 0 held exactly
    int periodicity_checks = 0; // unit-shift comparisons that held bitwise
    int sample_count = 0;
    std::uint64_t seed = 0;
};

// Monotone flux a(y,s,xi) built from a positive cell-periodic coefficient A:
//   Linear:              a = A xi
//   QuasilinearBounded:  a = A (1 + beta/(1+|xi|^2)) xi
// Coefficient variables: y1..yn for scalar cells, y1_1,y1_2,... for planar
// cells, then s1..sm; all coordinates are wrapped into [0,1) before
// evaluation, so periodicity holds by construction.
class FluxSpec {
  public:
    static FluxSpec make(FluxFamily family, const std::string& coefficient, int N, int n, int m,
                         double beta = 0.0) {
        if (N < 1 || N > 2) throw ConfigError("flux dimension N must be 1 or 2");
        if (n < 0 || n > 2) throw ConfigError("flux spatial scale count n must be 0, 1 or 2");
        if (m < 0 || m > 3) throw ConfigError("flux temporal scale count m must be 0..3");
        if (beta < 0.0) throw ConfigError("flux perturbation beta must be nonnegative");

        FluxSpec spec;
        spec.family_ = family;
        spec.N_ = N;
        spec.n_ = n;
        spec.m_ = m;
        spec.beta_ = family == FluxFamily::QuasilinearBounded ? beta : 0.0;
        spec.coefficient_text_ = coefficient;
        spec.names_ = variable_names(N, n, m);
        spec.coefficient_ = Expr::parse(coefficient, {spec.names_.begin(), spec.names_.end()});
        spec.compiled_ = CompiledExpr(spec.coefficient_, spec.names_);
        spec.sample_coefficient_range();

        spec.alpha_ = 1.0;
        if (family == FluxFamily::Linear) {
            spec.c0_ = spec.a_min_;
            spec.c1_ = spec.a_max_;
        } else {
            spec.c0_ = spec.a_min_ * (1.0 - 3.0 * spec.beta_);
            spec.c1_ = spec.a_max_ * (1.0 + spec.beta_);
        }
        return spec;
    }

    // Replace the sampled structure constants with declared ones; the audit
    // then tests the declared claim instead of the derived bound.
    void declare_constants(double c0, double c1, double alpha) {
        if (!(c0 > 0.0) || !(c1 >= c0))
            throw ConfigError("structure constants need 0 < C0 <= C1");
        if (!(alpha > 0.0) || alpha > 1.0)
            throw ConfigError("structure exponent alpha must lie in (0, 1]");
        c0_ = c0;
        c1_ = c1;
        alpha_ = alpha;
    }

    static std::vector<std::string> variable_names(int N, int n, int m) {
        std::vector<std::string> names;
        for (int i = 1; i <= n; ++i) {
            if (N == 1) {
                names.push_back("y" + std::to_string(i));
            } else {
                for (int c = 1; c <= N; ++c)
                    names.push_back("y" + std::to_string(i) + "_" + std::to_string(c));
            }
        }
        for (int j = 1; j <= m; ++j) names.push_back("s" + std::to_string(j));
        return names;
    }

    FluxFamily family() const { return family_; }
    int dim() const { return N_; }
    int spatial_scales() const { return n_; }
    int temporal_scales() const { return m_; }
    double beta() const { return beta_; }
    double c0() const { return c0_; }
    double c1() const { return c1_; }
    double alpha() const { return alpha_; }
    double coefficient_min() const { return a_min_; }
    double coefficient_max() const { return a_max_; }
    const std::string& coefficient_text() const { return coefficient_text_; }
    const std::vector<std::string>& names() const { return names_; }

    bool admissible() const {
        return family_ == FluxFamily::Linear || beta_ < 1.0 / 3.0;
    }

    // Coefficient at wrapped cell coordinates, ordered as names().
    double coefficient_at(const double* coords) const {
        double wrapped[7];
        int d = static_cast<int>(names_.size());
        for (int k = 0; k < d; ++k) wrapped[k] = detail::wrap01(coords[k]);
        return compiled_.eval(wrapped);
    }

    // a(y,s,xi) given the coefficient value; shared by solvers that cache A.
    static void flux_from_coefficient(FluxFamily family, double beta, double A, const double* xi,
                                      int N, double* out) {
        double factor = A;
        if (family == FluxFamily::QuasilinearBounded) {
            double q = 0.0;
            for (int c = 0; c < N; ++c) q += xi[c] * xi[c];
            factor = A * (1.0 + beta / (1.0 + q));
        }
        for (int c = 0; c < N; ++c) out[c] = factor * xi[c];
    }

    // d a / d xi given the coefficient value, row-major N x N.
    static void tangent_from_coefficient(FluxFamily family, double beta, double A,
                                         const double* xi, int N, double* out) {
        if (family == FluxFamily::Linear) {
            for (int r = 0; r < N; ++r)
                for (int c = 0; c < N; ++c) out[r * N + c] = r == c ? A : 0.0;
            return;
        }
        double q = 0.0;
        for (int c = 0; c < N; ++c) q += xi[c] * xi[c];
        double phi = 1.0 + beta / (1.0 + q);
        double dphi = -beta / ((1.0 + q) * (1.0 + q));
        for (int r = 0; r < N; ++r)
            for (int c = 0; c < N; ++c)
                out[r * N + c] = A * (2.0 * dphi * xi[r] * xi[c] + (r == c ? phi : 0.0));
    }

    // y holds n*N coordinates (scale-major), s holds m coordinates.
    void eval(const double* y, const double* s, const double* xi, double* out) const {
        double coords[7];
        int yd = n_ * N_;
        for (int k = 0; k < yd; ++k) coords[k] = y[k];
        for (int j = 0; j < m_; ++j) coords[yd + j] = s[j];
        double A = coefficient_at(coords);
        flux_from_coefficient(family_, beta_, A, xi, N_, out);
    }

    void tangent(const double* y, const double* s, const double* xi, double* out) const {
        double coords[7];
        int yd = n_ * N_;
        for (int k = 0; k < yd; ++k) coords[k] = y[k];
        for (int j = 0; j < m_; ++j) coords[yd + j] = s[j];
        double A = coefficient_at(coords);
        tangent_from_coefficient(family_, beta_, A, xi, N_, out);
    }

    std::array<double, 2> eval2(std::array<double, 4> y, std::array<double, 3> s,
                                std::array<double, 2> xi) const {
        std::array<double, 2> out{0.0, 0.0};
        eval(y.data(), s.data(), xi.data(), out.data());
        return out;
    }

  private:
    void sample_coefficient_range() {
        int d = static_cast<int>(names_.size());
        if (d == 0) {
            double v = compiled_.eval(nullptr);
            if (!(v > 0.0))
                throw StructureViolation("coefficient is not positive: value " +
                                         detail::format_double(v));
            a_min_ = a_max_ = v;
            return;
        }
        static constexpr int res_by_dim[8] = {0, 4096, 128, 32, 16, 12, 8, 6};
        int R = res_by_dim[d];
        std::vector<int> idx(d, 0);
        std::vector<double> pt(d);
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        double max_step = 0.0; // largest change across one grid step, any axis
        std::vector<double> prev_axis0;
        std::vector<double> values;
        long total = 1;
        for (int k = 0; k < d; ++k) total *= R;
        values.reserve(total);
        for (long flat = 0; flat < total; ++flat) {
            long rem = flat;
            for (int k = d - 1; k >= 0; --k) {
                idx[k] = static_cast<int>(rem % R);
                rem /= R;
            }
            for (int k = 0; k < d; ++k) pt[k] = (idx[k] + 0.5) / R;
            double v = compiled_.eval(pt.data());
            if (!std::isfinite(v))
                throw StructureViolation("coefficient is not finite on the cell");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            values.push_back(v);
        }
        // Lipschitz estimate from grid differences gives a certified margin
        // for extrema between nodes: min over a cell >= node min - L h / 2.
        long stride = 1;
        for (int k = d - 1; k >= 0; --k) {
            for (long flat = 0; flat < total; ++flat) {
                long i_k = (flat / stride) % R;
                long nb = i_k + 1 < R ? flat + stride : flat - i_k * stride;
                max_step = std::max(max_step, std::abs(values[flat] - values[nb]));
            }
            stride *= R;
        }
        double margin = 0.5 * max_step;
        a_min_ = lo - margin;
        a_max_ = hi + margin;
        if (!(a_min_ > 0.0))
            throw StructureViolation("coefficient lower bound " + detail::format_double(a_min_) +
                                     " is not positive over the cell");
    }

    FluxFamily family_ = FluxFamily::Linear;
    int N_ = 1, n_ = 0, m_ = 0;
    double beta_ = 0.0;
    double c0_ = 0.0, c1_ = 0.0, alpha_ = 1.0;
    double a_min_ = 0.0, a_max_ = 0.0;
    std::string coefficient_text_;
    std::vector<std::string> names_;
    Expr coefficient_ = Expr::constant(1.0);
    CompiledExpr compiled_;
};

// Monte Carlo audit of the structure conditions: exact zero at xi = 0,
// bitwise periodicity under unit shifts, monotonicity and difference
// quotients against the declared constants, and the growth bound
// |a(xi)| <= C1 (1 + |xi|).
inline StructureReport verify_structure(const FluxSpec& spec, int sample_count,
                                        std::uint64_t seed = 42) {
    if (sample_count < 1000) throw ConfigError("verify_structure needs sample_count >= 1000");
    if (spec.family() == FluxFamily::QuasilinearBounded && !spec.admissible())
        throw StructureViolation("monotonicity admissibility requires beta < 1/3, got beta = " +
                                 detail::format_double(spec.beta()));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> mag(-2.0, 2.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> lattice(0, (1 << 20) - 1);

    int N = spec.dim();
    int yd = spec.spatial_scales() * N;
    int m = spec.temporal_scales();

    StructureReport rep;
    rep.sample_count = sample_count;
    rep.seed = seed;
    rep.c0_measured = std::numeric_limits<double>::infinity();

    auto draw_xi = [&](double* xi) {
        double scale = std::pow(10.0, mag(rng));
        double norm2 = 0.0;
        for (int c = 0; c < N; ++c) {
            xi[c] = gauss(rng);
            norm2 += xi[c] * xi[c];
        }
        double norm = std::sqrt(norm2);
        if (norm < 1e-30) {
            xi[0] = 1.0;
            norm = 1.0;
        }
        for (int c = 0; c < N; ++c) xi[c] *= scale / norm;
    };

    double y[4] = {0, 0, 0, 0}, s[3] = {0, 0, 0};
    double xi[2] = {0, 0}, xj[2] = {0, 0};
    double a1[2], a2[2];

    for (int it = 0; it < sample_count; ++it) {
        for (int k = 0; k < yd; ++k) y[k] = unit(rng);
        for (int j = 0; j < m; ++j) s[j] = unit(rng);

        // (i) exact zero at xi = 0
        double zero[2] = {0.0, 0.0};
        spec.eval(y, s, zero, a1);
        for (int c = 0; c < N; ++c)
            if (a1[c] != 0.0)
                throw StructureViolation("a(y,s,0) is nonzero: component " + std::to_string(c) +
                                         " = " + detail::format_double(a1[c]));
        ++rep.zero_checks;

        draw_xi(xi);
        draw_xi(xj);

        // (ii) bitwise periodicity under unit shifts, on a dyadic lattice so
        // the +1 shift is itself exact in floating point
        if (yd + m > 0) {
            double yl[4], sl[3];
            for (int k = 0; k < yd; ++k) yl[k] = lattice(rng) * 0x1p-20;
            for (int j = 0; j < m; ++j) sl[j] = lattice(rng) * 0x1p-20;
            spec.eval(yl, sl, xi, a1);
            int axis = it % (yd + m);
            double shifted_y[4], shifted_s[3];
            std::copy(yl, yl + yd, shifted_y);
            std::copy(sl, sl + m, shifted_s);
            if (axis < yd)
                shifted_y[axis] += 1.0;
            else
                shifted_s[axis - yd] += 1.0;
            spec.eval(shifted_y, shifted_s, xi, a2);
            for (int c = 0; c < N; ++c)
                if (a1[c] != a2[c])
                    throw StructureViolation("periodicity breaks on axis " +
                                             std::to_string(axis));
            ++rep.periodicity_checks;
        }

        // (iv) monotonicity and (v) difference quotients
        spec.eval(y, s, xi, a1);
        spec.eval(y, s, xj, a2);
        double dxi2 = 0.0, dot = 0.0, da2 = 0.0;
        for (int c = 0; c < N; ++c) {
            double dx = xi[c] - xj[c];
            double da = a1[c] - a2[c];
            dxi2 += dx * dx;
            dot += da * dx;
            da2 += da * da;
        }
        if (dxi2 > 1e-24) {
            rep.c0_measured = std::min(rep.c0_measured, dot / dxi2);
            double norm_xi = std::sqrt(xi[0] * xi[0] + (N == 2 ? xi[1] * xi[1] : 0.0));
            double norm_xj = std::sqrt(xj[0] * xj[0] + (N == 2 ? xj[1] * xj[1] : 0.0));
            double holder = std::sqrt(da2) /
                            (std::pow(1.0 + norm_xi + norm_xj, 1.0 - spec.alpha()) *
                             std::pow(std::sqrt(dxi2), spec.alpha()));
            rep.c1_measured = std::max(rep.c1_measured, holder);
        }

        // (v) growth bound
        double norm_a = std::sqrt(a1[0] * a1[0] + (N == 2 ? a1[1] * a1[1] : 0.0));
        double norm_xi = std::sqrt(xi[0] * xi[0] + (N == 2 ? xi[1] * xi[1] : 0.0));
        rep.growth_max = std::max(rep.growth_max, norm_a / (spec.c1() * (1.0 + norm_xi)));
    }

    if (rep.c0_measured < spec.c0() - 1e-9)
        throw StructureViolation("monotonicity quotient " +
                                 detail::format_double(rep.c0_measured) +
                                 " fell below the declared bound " +
                                 detail::format_double(spec.c0()));
    if (rep.c1_measured > spec.c1() + 1e-9)
        throw StructureViolation("difference quotient " + detail::format_double(rep.c1_measured) +
                                 " exceeds the declared bound " + detail::format_double(spec.c1()));
    if (rep.growth_max > 1.0 + 1e-9)
        throw StructureViolation("growth bound |a| <= C1 (1+|xi|) fails with ratio " +
                                 detail::format_double(rep.growth_max));
    return rep;
}

} // namespace multihom
