#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "multihom/cell_solver.hpp"

namespace multihom {

// Homogenized flux b(xi): solve the coupled local system at the frozen
// macroscopic gradient, then average the microscopic flux (with corrector
// gradients inserted) over the joint cell. Results are cached per xi; a solve
// is deterministic, so the cache also guarantees bitwise-stable replies under
// any thread interleaving.
class EffectiveFluxEvaluator {
  public:
    EffectiveFluxEvaluator(FluxSpec spec, ScaleExponents exponents, PeriodicGrid grid,
                           CellOpts opts = {})
        : spec_(std::move(spec)), exp_(std::move(exponents)), grid_(grid), opts_(opts) {
        if (spec_.dim() != grid_.N) throw ConfigError("flux dimension disagrees with cell grid");
    }

    int dim() const { return spec_.dim(); }
    const FluxSpec& spec() const { return spec_; }
    const ScaleExponents& exponents() const { return exp_; }
    const PeriodicGrid& grid() const { return grid_; }
    const CellOpts& options() const { return opts_; }

    void evaluate(const double* xi, double* b) const {
        Key key{0.0, 0.0};
        for (int c = 0; c < dim(); ++c) key[static_cast<std::size_t>(c)] = xi[c];
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end()) {
                for (int c = 0; c < dim(); ++c) b[c] = it->second[static_cast<std::size_t>(c)];
                return;
            }
        }
        LocalSystemSolution sol = solve_local_system(spec_, xi, exp_, grid_, opts_);
        Key val{0.0, 0.0};
        average_flux(spec_, exp_, grid_, sol.correctors, xi, val.data());
        std::lock_guard<std::mutex> lock(mutex_);
        auto [it, inserted] = cache_.emplace(key, val); // first writer wins
        (void)inserted;
        for (int c = 0; c < dim(); ++c) b[c] = it->second[static_cast<std::size_t>(c)];
    }

    std::size_t cache_size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return cache_.size();
    }

  private:
    using Key = std::array<double, 2>;
    FluxSpec spec_;
    ScaleExponents exp_;
    PeriodicGrid grid_;
    CellOpts opts_;
    mutable std::mutex mutex_;
    mutable std::map<Key, Key> cache_;
};

// For the linear family b is a constant matrix; recover it from N axis
// evaluations so macroscale sweeps can skip the cell solver entirely.
struct LinearFluxMatrix {
    int N = 1;
    std::array<double, 4> B{}; // row-major N x N

    void apply(const double* xi, double* out) const {
        for (int r = 0; r < N; ++r) {
            double s = 0.0;
            for (int c = 0; c < N; ++c) s += B[static_cast<std::size_t>(r * N + c)] * xi[c];
            out[r] = s;
        }
    }
};

inline LinearFluxMatrix recover_linear_matrix(const EffectiveFluxEvaluator& ev) {
    if (ev.spec().family() != FluxFamily::Linear)
        throw ConfigError("matrix recovery requires the linear flux family");
    LinearFluxMatrix mat;
    mat.N = ev.dim();
    for (int c = 0; c < mat.N; ++c) {
        double xi[2] = {0.0, 0.0};
        xi[c] = 1.0;
        double b[2] = {0.0, 0.0};
        ev.evaluate(xi, b);
        for (int r = 0; r < mat.N; ++r) mat.B[static_cast<std::size_t>(r * mat.N + c)] = b[r];
    }
    return mat;
}

// Uniform tabulation of b over the symmetric box [-Xi, Xi]^N with R nodes per
// axis, row-major node order.
struct FluxTable {
    int N = 1;
    int R = 3;
    double Xi = 1.0;
    std::vector<double> values; // nodes() * N, b components per node

    long nodes() const {
        long t = 1;
        for (int c = 0; c < N; ++c) t *= R;
        return t;
    }
    double step() const { return 2.0 * Xi / (R - 1); }
    double node_coord(int idx) const { return -Xi + (2.0 * Xi) * idx / (R - 1); }
    void node_point(long flat, double* xi) const {
        for (int c = N - 1; c >= 0; --c) {
            xi[c] = node_coord(static_cast<int>(flat % R));
            flat /= R;
        }
    }
};

inline FluxTable tabulate(const EffectiveFluxEvaluator& ev, double Xi, int R, int jobs = 1) {
    if (!(Xi > 0.0)) throw ConfigError("table half-width Xi must be positive");
    if (R < 3) throw ConfigError("table resolution R must be at least 3");
    if (jobs < 1) jobs = 1;

    FluxTable table;
    table.N = ev.dim();
    table.R = R;
    table.Xi = Xi;
    long total = table.nodes();
    table.values.assign(static_cast<std::size_t>(total) * table.N, 0.0);

    std::atomic<long> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            long node = next.fetch_add(1);
            if (node >= total) return;
            try {
                double xi[2] = {0.0, 0.0};
                table.node_point(node, xi);
                ev.evaluate(xi, table.values.data() + node * table.N);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return table;
}

// Multilinear interpolation, exact at nodes (weights come out as exact 0/1
// when the query reproduces a node coordinate bit for bit).
inline void interp(const FluxTable& table, const double* xi, double* b) {
    int N = table.N, R = table.R;
    int base[2] = {0, 0};
    double frac[2] = {0.0, 0.0};
    for (int c = 0; c < N; ++c) {
        double x = xi[c];
        if (x < -table.Xi || x > table.Xi)
            throw OutOfTableRange("xi component " + detail::format_double(x) +
                                  " outside table box [-" + detail::format_double(table.Xi) +
                                  ", " + detail::format_double(table.Xi) + "]");
        int i = static_cast<int>(std::floor((x + table.Xi) / table.step()));
        if (i < 0) i = 0;
        if (i > R - 2) i = R - 2;
        double lo = table.node_coord(i);
        double hi = table.node_coord(i + 1);
        base[c] = i;
        frac[c] = (x - lo) / (hi - lo);
    }
    long corners = 1L << N;
    for (int r = 0; r < N; ++r) b[r] = 0.0;
    for (long corner = 0; corner < corners; ++corner) {
        double w = 1.0;
        long flat = 0;
        for (int c = 0; c < N; ++c) {
            int up = static_cast<int>((corner >> c) & 1);
            w *= up ? frac[c] : 1.0 - frac[c];
            flat = flat * R + base[c] + up;
        }
        for (int r = 0; r < N; ++r) b[r] += w * table.values[flat * N + r];
    }
}

struct MonotonicityReport {
    double min_quotient = 0.0;
    double max_quotient = 0.0;
    long pairs = 0;
    std::array<long, 10> histogram{}; // linear bins over [min, max]
    unsigned long seed = 0;
    bool pass = false;
};

namespace detail {

template <typename BFn>
MonotonicityReport check_monotone_impl(BFn&& bfn, int N, double box, long pair_count,
                                       unsigned long seed) {
    if (pair_count < 100) throw ConfigError("monotonicity audit needs at least 100 pairs");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-box, box);
    std::vector<double> quotients;
    quotients.reserve(static_cast<std::size_t>(pair_count));
    while (static_cast<long>(quotients.size()) < pair_count) {
        double xi[2] = {0.0, 0.0}, eta[2] = {0.0, 0.0};
        for (int c = 0; c < N; ++c) xi[c] = uni(rng);
        for (int c = 0; c < N; ++c) eta[c] = uni(rng);
        double dist2 = 0.0;
        for (int c = 0; c < N; ++c) dist2 += (xi[c] - eta[c]) * (xi[c] - eta[c]);
        if (dist2 < 1e-12) continue;
        double bx[2] = {0.0, 0.0}, be[2] = {0.0, 0.0};
        bfn(xi, bx);
        bfn(eta, be);
        double num = 0.0;
        for (int c = 0; c < N; ++c) num += (bx[c] - be[c]) * (xi[c] - eta[c]);
        quotients.push_back(num / dist2);
    }

    MonotonicityReport report;
    report.pairs = pair_count;
    report.seed = seed;
    report.min_quotient = quotients[0];
    report.max_quotient = quotients[0];
    for (double q : quotients) {
        report.min_quotient = std::min(report.min_quotient, q);
        report.max_quotient = std::max(report.max_quotient, q);
    }
    double span = report.max_quotient - report.min_quotient;
    for (double q : quotients) {
        int bin = span > 0.0 ? static_cast<int>((q - report.min_quotient) / span * 10.0) : 0;
        if (bin > 9) bin = 9;
        ++report.histogram[static_cast<std::size_t>(bin)];
    }
    report.pass = report.min_quotient > 0.0;
    return report;
}

} // namespace detail

inline MonotonicityReport check_monotone(const EffectiveFluxEvaluator& ev, long pair_count,
                                         unsigned long seed = 42, double box = 2.0) {
    return detail::check_monotone_impl(
        [&](const double* xi, double* b) { ev.evaluate(xi, b); }, ev.dim(), box, pair_count,
        seed);
}

inline MonotonicityReport check_monotone(const FluxTable& table, long pair_count,
                                         unsigned long seed = 42) {
    return detail::check_monotone_impl(
        [&](const double* xi, double* b) { interp(table, xi, b); }, table.N,
        table.Xi * 0.999, pair_count, seed);
}

// --- versioned table file ---
// Line 1: "multihom_flux_table,1"; line 2: "N,R,Xi"; then one row per node:
// multi-index, node coordinates, flux components, all %.17g so a round trip
// is bit-exact.

inline void save_table_csv(const FluxTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open table file for writing: " + path);
    out << "multihom_flux_table,1\n";
    out << table.N << "," << table.R << "," << detail::format_double(table.Xi) << "\n";
    long total = table.nodes();
    for (long node = 0; node < total; ++node) {
        long rem = node;
        int idx[2] = {0, 0};
        for (int c = table.N - 1; c >= 0; --c) {
            idx[c] = static_cast<int>(rem % table.R);
            rem /= table.R;
        }
        double xi[2];
        table.node_point(node, xi);
        for (int c = 0; c < table.N; ++c) out << idx[c] << ",";
        for (int c = 0; c < table.N; ++c) out << detail::format_double(xi[c]) << ",";
        for (int r = 0; r < table.N; ++r) {
            out << detail::format_double(table.values[node * table.N + r]);
            out << (r + 1 < table.N ? "," : "\n");
        }
    }
    if (!out) throw ConfigError("failed while writing table file: " + path);
}

inline FluxTable load_table_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open table file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "multihom_flux_table,1")
        throw ConfigError("unrecognized table header in " + path);
    if (!std::getline(in, line)) throw ConfigError("truncated table file: " + path);
    FluxTable table;
    {
        std::istringstream meta(line);
        char comma;
        if (!(meta >> table.N >> comma >> table.R >> comma >> table.Xi))
            throw ConfigError("bad table metadata in " + path);
    }
    if (table.N < 1 || table.N > 2 || table.R < 3 || !(table.Xi > 0.0))
        throw ConfigError("bad table metadata in " + path);
    long total = table.nodes();
    table.values.assign(static_cast<std::size_t>(total) * table.N, 0.0);
    for (long node = 0; node < total; ++node) {
        if (!std::getline(in, line)) throw ConfigError("truncated table file: " + path);
        std::istringstream row(line);
        std::string cell;
        for (int skip = 0; skip < 2 * table.N; ++skip)
            if (!std::getline(row, cell, ',')) throw ConfigError("short table row in " + path);
        for (int r = 0; r < table.N; ++r) {
            if (!std::getline(row, cell, ',')) throw ConfigError("short table row in " + path);
            table.values[node * table.N + r] = std::strtod(cell.c_str(), nullptr);
        }
    }
    return table;
}

} // namespace multihom
