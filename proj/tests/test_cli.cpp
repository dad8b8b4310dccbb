#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

// MULTIHOM_BIN and MULTIHOM_CONFIG_DIR come from the build system: the CLI is
// exercised end to end as a child process, the way users run it.

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(line);
    return out;
}

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("multihom_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunResult run(const std::string& args, const fs::path& dir, const std::string& env = "") {
    fs::path out_file = dir / "stdout.txt";
    fs::path err_file = dir / "stderr.txt";
    std::string cmd = env.empty() ? "" : env + " ";
    cmd += std::string(MULTIHOM_BIN) + " " + args;
    cmd += " >" + out_file.string() + " 2>" + err_file.string();
    int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

std::string config_path(const std::string& name) {
    return std::string(MULTIHOM_CONFIG_DIR) + "/" + name;
}

double last_field(const std::string& row) {
    auto pos = row.rfind(',');
    REQUIRE(pos != std::string::npos);
    return std::strtod(row.c_str() + pos + 1, nullptr);
}

} // namespace

TEST_CASE("help lists the subcommands and the exit code contract") {
    fs::path dir = scratch("help");
    RunResult r = run("--help", dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("classify") != std::string::npos);
    CHECK(r.out.find("dns-compare") != std::string::npos);
    CHECK(r.out.find("reproduce-paper-example") != std::string::npos);
    CHECK(r.out.find("exit codes") != std::string::npos);

    // a subcommand without its required config is a usage error
    CHECK(run("classify", dir).code == 64);
}

TEST_CASE("classify prints the resonance report and writes the table") {
    fs::path dir = scratch("classify");
    RunResult r = run("classify --config " + config_path("mixed_scales.toml") + " --out " +
                          dir.string(),
                      dir);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("scale 1: d = 2, rho = 4 (temporal partner #1)") != std::string::npos);
    CHECK(r.out.find("scale 2: d = 0, no resonance") != std::string::npos);
    CHECK(r.out.find("duplicate: spatial #2 == temporal #2") != std::string::npos);
    CHECK(r.out.find("jointly well-separated, witness l = 3") != std::string::npos);

    auto rows = lines_of(slurp(dir / "classification.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "i,d_i,rho_i,partner_j,diagnostics");
    CHECK(rows[1].rfind("1,2,3.99999", 0) == 0);
    CHECK(rows[2].rfind("2,0,0,,", 0) == 0);
}

TEST_CASE("coinciding scales exit with the separation code") {
    fs::path dir = scratch("separation");
    fs::path cfg = dir / "bad.toml";
    {
        std::ofstream out(cfg);
        out << "[scales]\nspatial = [\"eps\", \"eps\"]\ntemporal = []\n";
    }
    RunResult r = run("classify --config " + cfg.string() + " --out " + dir.string(), dir);
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error:", 0) == 0);
}

TEST_CASE("unknown configuration keys are a usage error") {
    fs::path dir = scratch("unknown");
    RunResult r = run("classify --config " + config_path("mixed_scales.toml") +
                          " --set turbo.boost=1 --out " + dir.string(),
                      dir);
    CHECK(r.code == 64);
    CHECK(r.err.find("unknown key turbo.boost") != std::string::npos);
}

TEST_CASE("the built-in example reproduces its known exponents") {
    fs::path dir = scratch("repro");
    RunResult r = run("reproduce-paper-example", dir);
    REQUIRE(r.code == 0);
    int pass = 0;
    for (const std::string& l : lines_of(r.out))
        if (l.rfind("PASS ", 0) == 0) ++pass;
    CHECK(pass == 6);
    CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("limit knobs flow through the environment") {
    fs::path dir = scratch("knobs");
    // too few samples, or a sloppy tolerance, and the cross limits stop being
    // decidable: the run must refuse rather than guess
    CHECK(run("reproduce-paper-example", dir, "MULTIHOM_K=5").code == 3);
    CHECK(run("reproduce-paper-example", dir, "MULTIHOM_P_TOL=0.5").code == 3);
}

TEST_CASE("cell writes the corrector profile it solved") {
    fs::path dir = scratch("cell");
    RunResult r = run("cell --config " + config_path("linear_1d.toml") + " --xi 1 --out " +
                          dir.string(),
                      dir);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("averaged flux b(1) = 1.7320508075688") != std::string::npos);

    auto rows = lines_of(slurp(dir / "corrector_1.csv"));
    REQUIRE(rows.size() == 65); // header + one row per grid node
    std::vector<double> v;
    for (std::size_t i = 1; i < rows.size(); ++i) v.push_back(last_field(rows[i]));

    // periodic centered slope at y = 0 for coefficient 2 + sin(2 pi y):
    // flux constancy forces slope = hmean / a(0) - 1 = sqrt(3)/2 - 1.
    // the difference quotient is itself O(h^2), about 5e-4 at h = 1/64
    double h = 1.0 / 64.0;
    double slope0 = (v[1] - v[63]) / (2.0 * h);
    CHECK(slope0 == Catch::Approx(std::sqrt(3.0) / 2.0 - 1.0).margin(1e-3));
}

TEST_CASE("flux tables are deterministic and linear in the gradient") {
    fs::path a = scratch("table_a");
    fs::path b = scratch("table_b");
    std::string base = "flux-table --config " + config_path("linear_1d.toml");
    REQUIRE(run(base + " --out " + a.string(), a).code == 0);
    REQUIRE(run(base + " --out " + b.string(), b).code == 0);
    std::string table = slurp(a / "flux_table.csv");
    CHECK(table == slurp(b / "flux_table.csv")); // byte-for-byte repeatable

    auto rows = lines_of(table);
    REQUIRE(rows.size() == 2 + 33);
    CHECK(rows[0] == "multihom_flux_table,1");
    CHECK(rows[1] == "1,33,1.5");
    for (std::size_t i = 2; i < rows.size(); ++i) {
        std::istringstream row(rows[i]);
        std::string idx, xi_s, b_s;
        std::getline(row, idx, ',');
        std::getline(row, xi_s, ',');
        std::getline(row, b_s, ',');
        double xi = std::strtod(xi_s.c_str(), nullptr);
        double bv = std::strtod(b_s.c_str(), nullptr);
        CHECK(bv == Catch::Approx(std::sqrt(3.0) * xi).margin(1e-5));
    }
}

TEST_CASE("a constant coefficient matches its own direct solve") {
    fs::path dir = scratch("control");
    RunResult r = run("dns-compare --config " + config_path("constant_control.toml") +
                          " --out " + dir.string(),
                      dir);
    REQUIRE(r.code == 0);
    auto rows = lines_of(slurp(dir / "study.csv"));
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "eps,M_x,M_t,error");
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(last_field(rows[i]) < 1e-9);
}

TEST_CASE("the output directory override wins over the flag") {
    fs::path env_dir = scratch("out_env");
    fs::path flag_dir = scratch("out_flag");
    RunResult r = run("solve --config " + config_path("linear_1d.toml") + " --out " +
                          flag_dir.string(),
                      env_dir, "MULTIHOM_OUT=" + env_dir.string());
    REQUIRE(r.code == 0);
    CHECK(fs::exists(env_dir / "field.csv"));
    CHECK(!fs::exists(flag_dir / "field.csv"));

    auto rows = lines_of(slurp(env_dir / "field.csv"));
    REQUIRE(rows.size() == 1 + 65 * 257); // header + (M_t+1)(M_x+2)
    CHECK(rows[0] == "t,x,value");
}
