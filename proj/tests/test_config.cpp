#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "multihom/config.hpp"

using namespace multihom;

namespace {

const char* full_doc = R"cfg(# complete run description
[scales]
spatial = ["2*sqrt(eps)", "eps^2"]   # slowest first
temporal = ["exp(eps)-1", "ln(1+eps^2)", "eps^3*ln(1+1/eps)"]

[flux]
family = "quasilinear_bounded"
coefficient = "2+sin(2*pi*y1)"
beta = 0.1

[domain]
omega = [0, 2]
T = 0.25

[data]
f = "sin(pi*x1)*exp(-t)"
u0 = "x1*(2-x1)"

[discretization]
M_y = 128
M_s = 16
M_x = 63
M_t = 32
table_xi = 2.5
table_r = 9

[tolerances]
p_tol = 0.03
seed = 7

[dns]
eps_list = [0.25, 0.125, 0.0625]
K_x = 8
max_M_x = 5000
)cfg";

} // namespace

TEST_CASE("a full document populates every section") {
    RunConfig cfg = RunConfig::from_doc(ConfigDoc::parse(full_doc));

    CHECK(cfg.spatial == std::vector<std::string>{"2*sqrt(eps)", "eps^2"});
    CHECK(cfg.temporal.size() == 3);
    CHECK(cfg.family == FluxFamily::QuasilinearBounded);
    CHECK(cfg.coefficient.value() == "2+sin(2*pi*y1)");
    CHECK(cfg.beta == 0.1);
    CHECK(cfg.omega == std::vector<double>{0.0, 2.0});
    CHECK(cfg.T == 0.25);
    CHECK(cfg.M_y == 128);
    CHECK(cfg.M_s == 16);
    CHECK(cfg.M_x == 63);
    CHECK(cfg.table_xi == 2.5);
    CHECK(cfg.table_r == 9);
    CHECK(cfg.p_tol == 0.03);
    CHECK(cfg.c_tol == LimitOpts{}.c_tol); // untouched knob keeps its default
    CHECK(cfg.seed == 7);
    CHECK(cfg.eps_list == std::vector<double>{0.25, 0.125, 0.0625});
    CHECK(cfg.K_x == 8);
    CHECK(cfg.K_t == DnsConfig{}.K_t);
    CHECK(cfg.max_M_x == 5000);
    CHECK(cfg.dim() == 1);

    SECTION("derived objects carry the values through") {
        FluxSpec spec = cfg.flux_spec();
        CHECK(spec.family() == FluxFamily::QuasilinearBounded);
        CHECK(spec.beta() == 0.1);
        CHECK(spec.spatial_scales() == 2);
        CHECK(spec.temporal_scales() == 3);

        MacroMesh mesh = cfg.macro_mesh();
        CHECK(mesh.N == 1);
        CHECK(mesh.hi[0] == 2.0);
        CHECK(mesh.M_x == 63);

        CHECK(cfg.limit_opts().p_tol == 0.03);
        CHECK(cfg.cell_opts().seed == 7);
        CHECK(cfg.macro_opts().res_tol == MacroOpts{}.res_tol);
        CHECK(cfg.dns_config().K_x == 8);
        CHECK(cfg.grid().M_y == 128);

        ScaleList sp = cfg.spatial_list();
        REQUIRE(sp.size() == 2);
        CHECK(sp.items[1].text == "eps^2");
    }

    SECTION("data expressions evaluate") {
        SourceFn f = cfg.source_fn();
        InitialFn u0 = cfg.initial_fn();
        double x = 0.5;
        CHECK(f(&x, 1.0) == Catch::Approx(std::sin(M_PI * 0.5) * std::exp(-1.0)));
        CHECK(u0(&x) == Catch::Approx(0.75));
    }
}

TEST_CASE("absent sections fall back to defaults") {
    RunConfig cfg = RunConfig::from_doc(ConfigDoc::parse("[scales]\nspatial = [\"eps\"]\n"));
    CHECK(cfg.temporal.empty());
    CHECK(cfg.M_y == 64);
    CHECK(cfg.M_x == 255);
    CHECK(cfg.T == 0.5);
    CHECK(cfg.seed == 42);
    CHECK(cfg.eps_list == std::vector<double>{0.125, 0.0625, 0.03125});
    CHECK_FALSE(cfg.coefficient.has_value());
    CHECK_THROWS_AS(cfg.flux_spec(), ConfigError);

    RunConfig empty = RunConfig::from_doc(ConfigDoc::parse(""));
    CHECK(empty.spatial.empty());
    CHECK_THROWS_AS(empty.require_scales(), ConfigError);
}

TEST_CASE("unknown keys fail before any computation") {
    CHECK_THROWS_MATCHES(RunConfig::from_doc(ConfigDoc::parse("[scales]\nspatail = [\"eps\"]\n")),
                         ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("scales.spatail")));
    CHECK_THROWS_MATCHES(
        RunConfig::from_doc(ConfigDoc::parse("[turbo]\nboost = 11\n")), ConfigError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("turbo.boost")));
}

TEST_CASE("malformed documents are rejected with line numbers") {
    CHECK_THROWS_AS(ConfigDoc::parse("[scales\nspatial = [\"eps\"]\n"), ConfigError);
    CHECK_THROWS_AS(ConfigDoc::parse("spatial = [\"eps\"]\n"), ConfigError); // no section
    CHECK_THROWS_AS(ConfigDoc::parse("[scales]\nspatial\n"), ConfigError);  // no =
    CHECK_THROWS_AS(ConfigDoc::parse("[data]\nf = \"sin(\n"), ConfigError); // open string
    CHECK_THROWS_AS(ConfigDoc::parse("[domain]\nomega = [0,\n1]\n"), ConfigError);
    CHECK_THROWS_AS(ConfigDoc::parse("[domain]\nomega = [0, ]\n"), ConfigError);
    CHECK_THROWS_AS(ConfigDoc::parse("[domain]\nT = twelve\n"), ConfigError);
    CHECK_THROWS_AS(ConfigDoc::parse("[domain]\nT = 0.5\nT = 0.25\n"), ConfigError);
    CHECK_THROWS_MATCHES(
        ConfigDoc::parse("[scales]\n\nspatial = oops\n"), ConfigError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("line 3")));
}

TEST_CASE("value types are enforced") {
    CHECK_THROWS_AS(RunConfig::from_doc(ConfigDoc::parse("[flux]\ncoefficient = 3\n")),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_doc(ConfigDoc::parse("[scales]\nspatial = [1, 2]\n")),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_doc(ConfigDoc::parse("[discretization]\nM_x = 1.5\n")),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_doc(ConfigDoc::parse("[discretization]\nM_x = \"many\"\n")),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_doc(ConfigDoc::parse("[tolerances]\nseed = -1\n")),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_doc(ConfigDoc::parse("[dns]\neps_list = [0.5, -0.25, 0.1]\n")),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_doc(ConfigDoc::parse("[domain]\nomega = [0, 1, 2]\n")),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_doc(ConfigDoc::parse("[flux]\nfamily = \"cubic\"\n")),
                    ConfigError);
}

TEST_CASE("overrides rewrite single keys") {
    ConfigDoc doc = ConfigDoc::parse(full_doc);
    doc.set("discretization.M_x = 31");
    doc.set("flux.family = \"linear\"");
    doc.set("dns.eps_list = [0.5]");
    RunConfig cfg = RunConfig::from_doc(std::move(doc));
    CHECK(cfg.M_x == 31);
    CHECK(cfg.family == FluxFamily::Linear);
    CHECK(cfg.eps_list == std::vector<double>{0.5});

    SECTION("an override with a typo is still an unknown key") {
        ConfigDoc doc2 = ConfigDoc::parse(full_doc);
        doc2.set("discretization.M_xx = 31");
        CHECK_THROWS_AS(RunConfig::from_doc(std::move(doc2)), ConfigError);
    }
    SECTION("malformed overrides") {
        ConfigDoc doc3 = ConfigDoc::parse("");
        CHECK_THROWS_AS(doc3.set("M_x = 31"), ConfigError);       // no section
        CHECK_THROWS_AS(doc3.set("discretization.M_x"), ConfigError); // no value
    }
}

TEST_CASE("declared structure constants reach the flux") {
    ConfigDoc doc = ConfigDoc::parse(
        "[scales]\nspatial = [\"eps\"]\n[flux]\ncoefficient = \"2+sin(2*pi*y1)\"\nC0 = 0.5\n");
    RunConfig cfg = RunConfig::from_doc(std::move(doc));
    FluxSpec spec = cfg.flux_spec();
    CHECK(spec.c0() == 0.5);
    CHECK(spec.c1() == Catch::Approx(3.0).margin(0.01)); // others keep the sampled bound

    SECTION("inconsistent declarations are rejected") {
        ConfigDoc bad = ConfigDoc::parse(
            "[scales]\nspatial = [\"eps\"]\n[flux]\ncoefficient = \"2+sin(2*pi*y1)\"\nC0 = 9\n");
        CHECK_THROWS_AS(RunConfig::from_doc(std::move(bad)).flux_spec(), ConfigError);
    }
}

TEST_CASE("data expressions reject unknown variables") {
    ConfigDoc doc = ConfigDoc::parse("[data]\nu0 = \"y1+1\"\n");
    RunConfig cfg = RunConfig::from_doc(std::move(doc));
    CHECK_THROWS_AS(cfg.initial_fn(), Error); // y1 is a cell variable, not macro
}

TEST_CASE("rectangle domains switch the run to 2D") {
    ConfigDoc doc = ConfigDoc::parse(
        "[domain]\nomega = [0, 1, 0, 2]\n[data]\nu0 = \"x1*x2\"\n[discretization]\nM_x = 15\n");
    RunConfig cfg = RunConfig::from_doc(std::move(doc));
    CHECK(cfg.dim() == 2);
    MacroMesh mesh = cfg.macro_mesh();
    CHECK(mesh.N == 2);
    CHECK(mesh.hi[1] == 2.0);
    double x[2] = {0.5, 1.5};
    CHECK(cfg.initial_fn()(x) == Catch::Approx(0.75));
}
