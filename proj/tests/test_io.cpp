#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "multihom/benchmarks.hpp"
#include "multihom/io.hpp"

using namespace multihom;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

} // namespace

TEST_CASE("classification table lists one row per spatial scale") {
    const Benchmark& bench = find_benchmark("resonant-1d");
    Classification cls = classify(bench.spatial_list(), bench.temporal_list());
    std::ostringstream out;
    write_classification_csv(out, cls);
    auto rows = lines_of(out.str());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == "i,d_i,rho_i,partner_j,diagnostics");
    CHECK(rows[1].rfind("1,0,1,1,", 0) == 0); // d=0, rho=1, partner 1
}

TEST_CASE("corrector table walks nodes within temporal slices") {
    const Benchmark& bench = find_benchmark("linear-1d");
    PeriodicGrid grid = PeriodicGrid::make(1, 16, 8);
    double xi[1] = {1.0};
    LocalSystemSolution sol = solve_local_system(bench.spec(), xi, bench.exponents(), grid);
    REQUIRE(sol.correctors.size() == 1);

    std::ostringstream out;
    write_corrector_csv(out, sol.correctors[0]);
    auto rows = lines_of(out.str());
    REQUIRE(rows.size() == 17); // header + one per node
    CHECK(rows[0] == "y_index,s_index,value");
    CHECK(rows[1].rfind("0,0,", 0) == 0);
    CHECK(rows[16].rfind("15,0,", 0) == 0);

    // values round-trip bit-exactly through the printed form
    double v = std::strtod(rows[3].substr(4).c_str(), nullptr);
    CHECK(v == sol.correctors[0].values[2]);
}

TEST_CASE("trajectory exports carry the boundary walls") {
    MacroMesh mesh = MacroMesh::interval(0.0, 1.0, 4, 0.5, 2);
    SpaceTimeField f;
    f.mesh = mesh;
    f.values.assign(12, 0.0);
    for (int i = 0; i < 4; ++i) f.values[static_cast<std::size_t>(8 + i)] = i + 1.0;

    std::ostringstream csv;
    write_field_csv(csv, f);
    auto rows = lines_of(csv.str());
    REQUIRE(rows.size() == 1 + 3 * 6); // header + (M_t+1)(M_x+2)
    CHECK(rows[0] == "t,x,value");
    CHECK(rows[1] == "0,0,0");          // left wall at t=0
    CHECK(rows[14] == "0.5,0.20000000000000001,1"); // first interior node at t=T
    CHECK(rows[18] == "0.5,1,0");       // right wall

    std::ostringstream plot;
    write_field_plot(plot, f);
    auto plines = lines_of(plot.str());
    int blocks = 0;
    for (const std::string& l : plines)
        if (l.rfind("# t = ", 0) == 0) ++blocks;
    CHECK(blocks == 3);
    CHECK(plines[1] == "0 0");
}

TEST_CASE("study table prints the ladder verbatim") {
    std::vector<StudyRow> rows = {{0.125, 255, 64, 1.25e-3}, {0.0625, 255, 64, 6.5e-4}};
    std::ostringstream out;
    write_study_csv(out, rows);
    CHECK(out.str() == "eps,M_x,M_t,error\n"
                       "0.125,255,64,0.00125\n"
                       "0.0625,255,64,0.00064999999999999997\n");

    std::ostringstream plot;
    write_study_plot(plot, rows);
    CHECK(lines_of(plot.str()).size() == 3);
}
