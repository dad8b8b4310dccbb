#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "multihom/benchmarks.hpp"
#include "multihom/effective_flux.hpp"

using namespace multihom;

namespace {

EffectiveFluxEvaluator benchmark_evaluator(const std::string& name, int M_y = 0) {
    const Benchmark& bench = find_benchmark(name);
    PeriodicGrid grid = bench.grid();
    if (M_y > 0) grid = PeriodicGrid::make(1, M_y, grid.M_s);
    return EffectiveFluxEvaluator(bench.spec(), bench.exponents(), grid);
}

std::string temp_path(const char* stem) {
    return std::string("/tmp/multihom_") + stem + "_" + std::to_string(::getpid()) + ".csv";
}

} // namespace

TEST_CASE("packaged benchmark registry") {
    REQUIRE(packaged_benchmarks().size() == 5);
    for (const Benchmark& bench : packaged_benchmarks()) {
        INFO(bench.name);
        FluxSpec spec = bench.spec();
        CHECK(spec.admissible());
        CHECK_NOTHROW(verify_structure(spec, 1000));
        ScaleExponents exp = bench.exponents();
        CHECK(exp.n == bench.n);
        CHECK(exp.m == bench.m);
    }
    SECTION("resonance classification comes out of the scale expressions") {
        ScaleExponents exp = find_benchmark("resonant-1d").exponents();
        REQUIRE(exp.d == std::vector<int>{0});
        REQUIRE(exp.partner[0].has_value());
        CHECK(*exp.partner[0] == 1);
        CHECK(std::abs(exp.rho[0] - 1.0) < 1e-9);
    }
    SECTION("two-scale benchmark is purely spatial") {
        ScaleExponents exp = find_benchmark("separable-2scale").exponents();
        CHECK(exp.d == std::vector<int>{0, 0});
        CHECK(exp.rho == std::vector<double>{0.0, 0.0});
    }
    CHECK_THROWS_AS(find_benchmark("no-such-benchmark"), ConfigError);
}

TEST_CASE("effective flux of the layered coefficient") {
    EffectiveFluxEvaluator ev = benchmark_evaluator("linear-1d", 256);
    double xi = 1.0, b = 0.0;
    ev.evaluate(&xi, &b);
    CHECK(std::abs(b - std::sqrt(3.0)) / std::sqrt(3.0) < 1e-6);

    SECTION("zero gradient gives zero flux") {
        double z = 0.0, bz = 1.0;
        ev.evaluate(&z, &bz);
        CHECK(std::abs(bz) < 1e-12);
    }
    SECTION("cache returns bitwise-identical replies") {
        double again = 0.0;
        ev.evaluate(&xi, &again);
        CHECK(std::memcmp(&again, &b, sizeof(double)) == 0);
        CHECK(ev.cache_size() == 1);
    }
}

TEST_CASE("iterated two-scale effective flux") {
    EffectiveFluxEvaluator ev = benchmark_evaluator("separable-2scale");
    double xi = 1.0, b = 0.0;
    ev.evaluate(&xi, &b);
    CHECK(std::abs(b - 3.0) < 1e-5);
}

TEST_CASE("linear family gives a constant matrix") {
    FluxSpec spec =
        FluxSpec::make(FluxFamily::Linear, "2+sin(2*pi*y1_1)*sin(2*pi*y1_2)", 2, 1, 0);
    ScaleExponents exp;
    exp.n = 1;
    exp.m = 0;
    exp.d = {0};
    exp.rho = {0.0};
    exp.partner = {std::nullopt};
    EffectiveFluxEvaluator ev(spec, exp, PeriodicGrid::make(2, 16, 8));
    LinearFluxMatrix mat = recover_linear_matrix(ev);

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (int trial = 0; trial < 5; ++trial) {
        double xi[2] = {uni(rng), uni(rng)};
        double direct[2], viamat[2];
        ev.evaluate(xi, direct);
        mat.apply(xi, viamat);
        double scale = std::max({1.0, std::abs(direct[0]), std::abs(direct[1])});
        CHECK(std::abs(direct[0] - viamat[0]) / scale < 1e-8);
        CHECK(std::abs(direct[1] - viamat[1]) / scale < 1e-8);
    }
    SECTION("homogeneity in the gradient") {
        double xi[2] = {0.7, -0.4}, scaled[2] = {0.7 * 3.5, -0.4 * 3.5};
        double b1[2], b2[2];
        ev.evaluate(xi, b1);
        ev.evaluate(scaled, b2);
        CHECK(std::abs(b2[0] - 3.5 * b1[0]) < 1e-8 * std::max(1.0, std::abs(b2[0])));
        CHECK(std::abs(b2[1] - 3.5 * b1[1]) < 1e-8 * std::max(1.0, std::abs(b2[1])));
    }
    SECTION("matrix recovery rejects nonlinear families") {
        FluxSpec qb = FluxSpec::make(FluxFamily::QuasilinearBounded, "2", 1, 1, 0, 0.1);
        EffectiveFluxEvaluator evq(qb, exp, PeriodicGrid::make(1, 16, 8));
        CHECK_THROWS_AS(recover_linear_matrix(evq), ConfigError);
    }
}

TEST_CASE("flux tabulation and interpolation") {
    EffectiveFluxEvaluator ev = benchmark_evaluator("linear-1d");
    FluxTable table = tabulate(ev, 2.0, 5);
    REQUIRE(table.nodes() == 5);

    SECTION("stored values are the scaled harmonic mean") {
        double root3 = std::sqrt(3.0);
        for (int i = 0; i < 5; ++i) {
            double expected = root3 * (-2.0 + i);
            CHECK(std::abs(table.values[i] - expected) < 1e-9 * std::max(1.0, std::abs(expected)));
        }
        CHECK(table.values[2] == 0.0);
    }
    SECTION("odd symmetry of the stored nodes") {
        for (int i = 0; i < 5; ++i)
            CHECK(std::abs(table.values[i] + table.values[4 - i]) < 1e-10);
    }
    SECTION("interpolation is exact at nodes and linear between them") {
        for (int i = 0; i < 5; ++i) {
            double xi = table.node_coord(i), b = 0.0;
            interp(table, &xi, &b);
            CHECK(std::memcmp(&b, &table.values[i], sizeof(double)) == 0);
        }
        double xi = 0.37, direct = 0.0, via = 0.0;
        ev.evaluate(&xi, &direct);
        interp(table, &xi, &via);
        CHECK(std::abs(via - direct) < 1e-9);
    }
    SECTION("queries outside the box are rejected") {
        double xi = 2.0000001, b = 0.0;
        CHECK_THROWS_AS(interp(table, &xi, &b), OutOfTableRange);
        xi = -2.5;
        CHECK_THROWS_AS(interp(table, &xi, &b), OutOfTableRange);
    }
    SECTION("bad boxes are rejected up front") {
        CHECK_THROWS_AS(tabulate(ev, 0.0, 5), ConfigError);
        CHECK_THROWS_AS(tabulate(ev, 1.0, 2), ConfigError);
    }
    SECTION("parallel tabulation is byte-identical to sequential") {
        EffectiveFluxEvaluator fresh = benchmark_evaluator("linear-1d");
        FluxTable par = tabulate(fresh, 2.0, 5, 4);
        REQUIRE(par.values.size() == table.values.size());
        CHECK(std::memcmp(par.values.data(), table.values.data(),
                          table.values.size() * sizeof(double)) == 0);
    }
    SECTION("table file round trip is bit-exact") {
        std::string path = temp_path("table");
        save_table_csv(table, path);
        FluxTable loaded = load_table_csv(path);
        CHECK(loaded.N == table.N);
        CHECK(loaded.R == table.R);
        CHECK(loaded.Xi == table.Xi);
        REQUIRE(loaded.values.size() == table.values.size());
        CHECK(std::memcmp(loaded.values.data(), table.values.data(),
                          table.values.size() * sizeof(double)) == 0);
        std::remove(path.c_str());
    }
}

TEST_CASE("monotonicity audit") {
    SECTION("layered linear coefficient") {
        EffectiveFluxEvaluator ev = benchmark_evaluator("linear-1d");
        MonotonicityReport report = check_monotone(ev, 200);
        CHECK(report.pass);
        CHECK(std::abs(report.min_quotient - std::sqrt(3.0)) < 1e-4);
        CHECK(std::abs(report.max_quotient - std::sqrt(3.0)) < 1e-4);
    }
    SECTION("constant coefficient pins the quotient") {
        EffectiveFluxEvaluator ev = benchmark_evaluator("constant-1d", 32);
        MonotonicityReport report = check_monotone(ev, 200);
        CHECK(report.pass);
        CHECK(std::abs(report.min_quotient - 1.5) < 1e-12);
        CHECK(std::abs(report.max_quotient - 1.5) < 1e-12);
    }
    SECTION("quasilinear flux stays monotone") {
        FluxSpec spec = FluxSpec::make(FluxFamily::QuasilinearBounded, "1", 1, 1, 0, 0.1);
        ScaleExponents exp;
        exp.n = 1;
        exp.m = 0;
        exp.d = {0};
        exp.rho = {0.0};
        exp.partner = {std::nullopt};
        EffectiveFluxEvaluator ev(spec, exp, PeriodicGrid::make(1, 16, 8));
        MonotonicityReport report = check_monotone(ev, 200);
        CHECK(report.pass);
        CHECK(report.min_quotient > 0.0);
    }
    SECTION("audits on tables reuse the same sampler") {
        EffectiveFluxEvaluator ev = benchmark_evaluator("linear-1d");
        FluxTable table = tabulate(ev, 2.0, 9);
        MonotonicityReport report = check_monotone(table, 200);
        CHECK(report.pass);
        CHECK(std::abs(report.min_quotient - std::sqrt(3.0)) < 1e-4);
    }
    SECTION("histogram covers every sampled pair") {
        EffectiveFluxEvaluator ev = benchmark_evaluator("constant-1d", 16);
        MonotonicityReport report = check_monotone(ev, 150);
        long total = 0;
        for (long c : report.histogram) total += c;
        CHECK(total == 150);
    }
    SECTION("undersized audits are rejected") {
        EffectiveFluxEvaluator ev = benchmark_evaluator("constant-1d", 16);
        CHECK_THROWS_AS(check_monotone(ev, 99), ConfigError);
    }
}

TEST_CASE("effective flux converges under cell grid refinement") {
    // A coefficient with a derivative kink at the cell seam, so the quadrature
    // error decays at a visible O(h^2) instead of collapsing to rounding.
    FluxSpec spec = FluxSpec::make(FluxFamily::Linear, "1.5+(y1-0.5)^2", 1, 1, 0);
    ScaleExponents exp;
    exp.n = 1;
    exp.m = 0;
    exp.d = {0};
    exp.rho = {0.0};
    exp.partner = {std::nullopt};
    double xi = 1.0;
    double b[4];
    int levels[4] = {16, 32, 64, 128};
    for (int k = 0; k < 4; ++k) {
        EffectiveFluxEvaluator ev(spec, exp, PeriodicGrid::make(1, levels[k], 8));
        ev.evaluate(&xi, &b[k]);
    }
    double d1 = std::abs(b[0] - b[1]);
    double d2 = std::abs(b[1] - b[2]);
    double d3 = std::abs(b[2] - b[3]);
    CHECK(d1 > d2);
    CHECK(d2 > d3);
    CHECK(d3 > 0.0);
}
