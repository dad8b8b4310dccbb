#pragma once

#include <string>
#include <vector>

#include "multihom/cell_solver.hpp"
#include "multihom/flux_models.hpp"
#include "multihom/scale_algebra.hpp"

namespace multihom {

// A packaged problem: flux + scale expressions + the grids and macro data the
// test and CLI layers run it with. Everything downstream (classification,
// cell solves, effective flux, DNS ladders) is derived from these fields, so
// a benchmark exercises the full pipeline rather than pinned exponents.
struct Benchmark {
    std::string name;
    FluxFamily family = FluxFamily::Linear;
    std::string coefficient;
    double beta = 0.0;
    int n = 1; // spatial microscales
    int m = 0; // temporal microscales
    std::vector<std::string> spatial;
    std::vector<std::string> temporal;
    int M_y = 64, M_s = 32; // cell grid
    bool dns_eligible = false;
    std::vector<double> eps_ladder; // for dns_eligible benchmarks
    // Controls have no oscillation, so macro and fine solves coincide: the DNS
    // comparison asserts near-zero error instead of a decreasing ladder.
    bool control = false;

    FluxSpec spec() const {
        return FluxSpec::make(family, coefficient, 1, n, m, beta);
    }

    ScaleList spatial_list() const {
        ScaleList list;
        list.role = ScaleList::Role::Spatial;
        for (const std::string& text : spatial) list.items.push_back(ScaleFn::parse(text));
        return list;
    }

    ScaleList temporal_list() const {
        ScaleList list;
        list.role = ScaleList::Role::Temporal;
        for (const std::string& text : temporal) list.items.push_back(ScaleFn::parse(text));
        return list;
    }

    ScaleExponents exponents(const LimitOpts& opts = {}) const {
        return classify(spatial_list(), temporal_list(), opts).exponents;
    }

    PeriodicGrid grid() const { return PeriodicGrid::make(1, M_y, M_s); }
};

inline const std::vector<Benchmark>& packaged_benchmarks() {
    static const std::vector<Benchmark> all = [] {
        std::vector<Benchmark> v;
        v.push_back({"linear-1d", FluxFamily::Linear, "2+sin(2*pi*y1)", 0.0, 1, 0,
                     {"eps"}, {}, 64, 32, true, {0.125, 0.0625, 0.03125}});
        v.push_back({"constant-1d", FluxFamily::Linear, "1.5", 0.0, 1, 0,
                     {"eps"}, {}, 64, 32, true, {0.125, 0.0625, 0.03125}, true});
        v.push_back({"quasilinear-1d", FluxFamily::QuasilinearBounded, "2+sin(2*pi*y1)", 0.1, 1,
                     0, {"eps"}, {}, 64, 32, true, {0.125, 0.0625, 0.03125}});
        // Resonant time resolution scales like 1/eps^2, so this ladder stays at
        // moderate eps; the caps reject anything much finer anyway.
        v.push_back({"resonant-1d", FluxFamily::Linear, "2+0.8*sin(2*pi*y1)*cos(2*pi*s1)", 0.0,
                     1, 1, {"eps"}, {"eps^2"}, 32, 32, true, {0.25, 0.125, 0.0625}});
        v.push_back({"separable-2scale", FluxFamily::Linear,
                     "(2+sin(2*pi*y1))*(2+sin(2*pi*y2))", 0.0, 2, 0, {"eps", "eps^3"}, {}, 64,
                     32, true, {0.5, 0.25, 0.125}});
        return v;
    }();
    return all;
}

inline const Benchmark& find_benchmark(const std::string& name) {
    for (const Benchmark& b : packaged_benchmarks())
        if (b.name == name) return b;
    throw ConfigError("unknown benchmark: " + name);
}

} // namespace multihom
