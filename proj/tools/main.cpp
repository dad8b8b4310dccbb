#include <clocale>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "multihom/config.hpp"
#include "multihom/dns.hpp"
#include "multihom/effective_flux.hpp"
#include "multihom/io.hpp"

namespace fs = std::filesystem;
using namespace multihom;

namespace {

// Stable process exit codes, documented in --help.
enum ExitCode {
    kOk = 0,
    kAssertionFailed = 1,
    kNotSeparated = 2,
    kIndeterminate = 3,
    kConfigError = 64,
    kNumericFailure = 70,
};

struct CommonArgs {
    std::string config;
    std::string out = ".";
    std::vector<std::string> sets;
    int jobs = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* opt = cmd->add_option("-c,--config", args.config, "run description file");
    if (config_required) opt->required();
    cmd->add_option("-o,--out", args.out,
                    "output directory for artifacts (default .; MULTIHOM_OUT wins)");
    cmd->add_option("--set", args.sets, "override a config key: section.key=value")
        ->take_all();
    cmd->add_option("-j,--jobs", args.jobs, "worker threads for tabulation")
        ->check(CLI::Range(1, 256));
}

fs::path resolve_out(const CommonArgs& args) {
    const char* env = std::getenv("MULTIHOM_OUT");
    fs::path dir = (env && *env) ? fs::path(env) : fs::path(args.out);
    fs::create_directories(dir);
    return dir;
}

RunConfig load(const CommonArgs& args) { return RunConfig::load(args.config, args.sets); }

void print_classification(const Classification& cls) {
    std::printf("merged scales (slowest first):");
    for (const ScaleFn& s : cls.joint.merged.items) std::printf(" %s", s.text.c_str());
    std::printf("\n");
    for (const DuplicatePair& d : cls.joint.duplicates)
        std::printf("duplicate: spatial #%d == temporal #%d (constant %.6g)\n",
                    d.spatial_index, d.temporal_index, d.constant);
    if (cls.joint.jointly_well_separated())
        std::printf("jointly well-separated, witness l = %d\n",
                    cls.joint.joint_ws.witness.value_or(0));
    const ScaleExponents& ex = cls.exponents;
    for (int i = 0; i < ex.n; ++i) {
        std::size_t k = static_cast<std::size_t>(i);
        if (ex.partner[k])
            std::printf("scale %d: d = %d, rho = %.6g (temporal partner #%d)\n", i + 1,
                        ex.d[k], ex.rho[k], *ex.partner[k]);
        else
            std::printf("scale %d: d = %d, no resonance\n", i + 1, ex.d[k]);
    }
}

int cmd_classify(const CommonArgs& args) {
    RunConfig cfg = load(args);
    cfg.require_scales();
    Classification cls = classify(cfg.spatial_list(), cfg.temporal_list(), cfg.limit_opts());
    print_classification(cls);
    std::ofstream out = open_artifact((resolve_out(args) / "classification.csv").string());
    write_classification_csv(out, cls);
    return kOk;
}

int cmd_verify_flux(const CommonArgs& args) {
    RunConfig cfg = load(args);
    cfg.require_flux();
    FluxSpec spec = cfg.flux_spec();
    std::printf("flux family %s, coefficient \"%s\"\n", family_name(spec.family()),
                spec.coefficient_text().c_str());
    std::printf("declared constants: C0 = %.6g, C1 = %.6g, alpha = %.6g\n", spec.c0(),
                spec.c1(), spec.alpha());
    StructureReport rep = verify_structure(spec, 2000, cfg.seed);
    std::printf("sampled %d points (seed %llu): zero-at-origin %d/%d, periodicity %d/%d\n",
                rep.sample_count, static_cast<unsigned long long>(rep.seed), rep.zero_checks,
                rep.sample_count, rep.periodicity_checks, rep.sample_count);
    std::printf("monotonicity quotient >= %.6g (claimed C0 %.6g), difference quotient <= %.6g "
                "(claimed C1 %.6g)\n",
                rep.c0_measured, spec.c0(), rep.c1_measured, spec.c1());
    std::printf("structure audit passed\n");
    return kOk;
}

std::vector<double> parse_xi(const std::string& text, int dim) {
    std::vector<double> xi;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur, ',')) {
        const char* b = cur.c_str();
        char* e = nullptr;
        double v = std::strtod(b, &e);
        if (e == b || *e != '\0') throw ConfigError("--xi expects numbers: " + cur);
        xi.push_back(v);
    }
    if (static_cast<int>(xi.size()) != dim)
        throw ConfigError("--xi needs " + std::to_string(dim) + " component(s)");
    return xi;
}

int cmd_cell(const CommonArgs& args, const std::string& xi_text) {
    RunConfig cfg = load(args);
    cfg.require_scales();
    FluxSpec spec = cfg.flux_spec();
    std::vector<double> xi = parse_xi(xi_text, spec.dim());
    Classification cls = classify(cfg.spatial_list(), cfg.temporal_list(), cfg.limit_opts());
    LocalSystemSolution sol =
        solve_local_system(spec, xi.data(), cls.exponents, cfg.grid(), cfg.cell_opts());
    double b[2] = {0.0, 0.0};
    average_flux(spec, cls.exponents, cfg.grid(), sol.correctors, xi.data(), b);

    fs::path dir = resolve_out(args);
    for (std::size_t k = 0; k < sol.correctors.size(); ++k) {
        const Corrector& chi = sol.correctors[k];
        std::string file = "corrector_" + std::to_string(k + 1) + ".csv";
        std::ofstream out = open_artifact((dir / file).string());
        write_corrector_csv(out, chi);
        std::printf("corrector %zu: %ld stored values%s -> %s\n", k + 1,
                    static_cast<long>(chi.values.size()),
                    chi.resonant ? " (resonant in time)" : "", file.c_str());
        if (!chi.note.empty()) std::printf("  note: %s\n", chi.note.c_str());
    }
    std::printf("sweeps: %zu\n", sol.history.size());
    if (spec.dim() == 1)
        std::printf("averaged flux b(%.6g) = %.17g\n", xi[0], b[0]);
    else
        std::printf("averaged flux b(%.6g, %.6g) = (%.17g, %.17g)\n", xi[0], xi[1], b[0], b[1]);
    return kOk;
}

EffectiveFluxEvaluator make_evaluator(const RunConfig& cfg, Classification* cls_out = nullptr) {
    Classification cls = classify(cfg.spatial_list(), cfg.temporal_list(), cfg.limit_opts());
    if (cls_out) *cls_out = cls;
    return EffectiveFluxEvaluator(cfg.flux_spec(), cls.exponents, cfg.grid(), cfg.cell_opts());
}

int cmd_flux_table(const CommonArgs& args) {
    RunConfig cfg = load(args);
    cfg.require_scales();
    EffectiveFluxEvaluator ev = make_evaluator(cfg);
    FluxTable table = tabulate(ev, cfg.table_xi, cfg.table_r, args.jobs);
    MonotonicityReport mono = check_monotone(table, 200, cfg.seed);
    fs::path file = resolve_out(args) / "flux_table.csv";
    save_table_csv(table, file.string());
    std::printf("tabulated b on [-%.6g, %.6g]^%d at %d nodes per axis -> %s\n", table.Xi,
                table.Xi, table.N, table.R, file.string().c_str());
    std::printf("monotonicity over %ld random pairs: quotient in [%.6g, %.6g] (%s)\n",
                mono.pairs, mono.min_quotient, mono.max_quotient,
                mono.pass ? "pass" : "FAIL");
    if (!mono.pass) return kAssertionFailed;
    return kOk;
}

// Macro solve with the flux acceleration that fits the family: linear
// problems collapse to a constant matrix; bounded quasilinear ones run from
// an interpolation table, widened and rebuilt if the solve walks outside.
SpaceTimeField accelerated_solve(const RunConfig& cfg, const EffectiveFluxEvaluator& ev,
                                 int jobs) {
    MacroMesh mesh = cfg.macro_mesh();
    SourceFn f = cfg.source_fn();
    InitialFn u0 = cfg.initial_fn();
    if (ev.spec().family() == FluxFamily::Linear)
        return solve_homogenized(mesh, recover_linear_matrix(ev), f, u0, cfg.macro_opts());
    double xi = cfg.table_xi;
    for (int attempt = 0;; ++attempt) {
        FluxTable table = tabulate(ev, xi, cfg.table_r, jobs);
        try {
            return solve_homogenized(mesh, table, f, u0, cfg.macro_opts());
        } catch (const OutOfTableRange&) {
            if (attempt >= 3) throw;
            xi *= 2.0;
            std::printf("gradients left the table, widening to [-%.6g, %.6g]\n", xi, xi);
        }
    }
}

int cmd_solve(const CommonArgs& args) {
    RunConfig cfg = load(args);
    cfg.require_scales();
    EffectiveFluxEvaluator ev = make_evaluator(cfg);
    SpaceTimeField u = accelerated_solve(cfg, ev, args.jobs);

    fs::path dir = resolve_out(args);
    std::ofstream csv = open_artifact((dir / "field.csv").string());
    write_field_csv(csv, u);
    std::ofstream plot = open_artifact((dir / "field.dat").string());
    write_field_plot(plot, u);
    std::printf("solved %dD macro problem, %d+1 time levels -> field.csv, field.dat\n",
                u.mesh.N, u.mesh.M_t);
    std::printf("L2 at t = 0: %.17g, at t = T: %.17g\n", u.level_l2(0), u.level_l2(u.mesh.M_t));
    return kOk;
}

int cmd_dns_compare(const CommonArgs& args) {
    RunConfig cfg = load(args);
    cfg.require_scales();
    EffectiveFluxEvaluator ev = make_evaluator(cfg);
    SpaceTimeField macro = accelerated_solve(cfg, ev, args.jobs);
    std::vector<StudyRow> rows = convergence_study(cfg.dns_config(), cfg.eps_list,
                                                   cfg.source_fn(), cfg.initial_fn(), macro,
                                                   cfg.macro_opts());
    fs::path dir = resolve_out(args);
    std::ofstream csv = open_artifact((dir / "study.csv").string());
    write_study_csv(csv, rows);
    std::ofstream plot = open_artifact((dir / "study.dat").string());
    write_study_plot(plot, rows);
    std::printf("%-12s %-8s %-8s %s\n", "eps", "M_x", "M_t", "l2_error");
    for (const StudyRow& r : rows)
        std::printf("%-12g %-8ld %-8ld %.17g\n", r.eps, r.M_x, r.M_t, r.error);
    return kOk;
}

double env_number(const char* name, double fallback) {
    const char* v = std::getenv(name);
    if (!v || !*v) return fallback;
    char* end = nullptr;
    double x = std::strtod(v, &end);
    if (end == v || *end != '\0')
        throw ConfigError(std::string(name) + " must be a number, got: " + v);
    return x;
}

int cmd_reproduce() {
    ScaleList spatial;
    spatial.role = ScaleList::Role::Spatial;
    spatial.items = {ScaleFn::parse("2*sqrt(eps)"), ScaleFn::parse("eps^2")};
    ScaleList temporal;
    temporal.role = ScaleList::Role::Temporal;
    temporal.items = {ScaleFn::parse("exp(eps)-1"), ScaleFn::parse("ln(1+eps^2)"),
                      ScaleFn::parse("eps^3*ln(1+1/eps)")};

    LimitOpts opts;
    opts.p_tol = env_number("MULTIHOM_P_TOL", opts.p_tol);
    opts.samples = static_cast<int>(env_number("MULTIHOM_K", opts.samples));

    std::printf("spatial scales:  2*sqrt(eps), eps^2\n");
    std::printf("temporal scales: exp(eps)-1, ln(1+eps^2), eps^3*ln(1+1/eps)\n");

    Classification cls = classify(spatial, temporal, opts);
    const ScaleExponents& ex = cls.exponents;
    int failures = 0;
    auto report = [&failures](bool ok, const std::string& what) {
        std::printf("%s %s\n", ok ? "PASS" : "FAIL", what.c_str());
        if (!ok) ++failures;
    };

    report(ex.d == std::vector<int>{2, 0}, "d = (2, 0)");
    report(std::abs(ex.rho[0] - 4.0) < 1e-3,
           "|rho_1 - 4| < 1e-3 (rho_1 = " + detail::format_double(ex.rho[0]) + ")");
    report(ex.rho[1] == 0.0 && !ex.partner[1], "rho_2 = 0 (no resonance at scale 2)");
    bool dup = cls.joint.duplicates.size() == 1 &&
               cls.joint.duplicates[0].spatial_index == 2 &&
               cls.joint.duplicates[0].temporal_index == 2;
    report(dup, "duplicate pair: spatial #2 (eps^2) matches temporal #2 (ln(1+eps^2))");
    report(cls.joint.jointly_well_separated(), "merged list jointly well-separated");
    int witness = cls.joint.joint_ws.witness.value_or(99);
    report(witness <= 3, "separation witness l <= 3 (l = " + std::to_string(witness) + ")");

    return failures == 0 ? kOk : kAssertionFailed;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"multiscale periodic homogenization toolkit"};
    app.require_subcommand(1);
    app.footer("exit codes: 0 ok, 1 check failed, 2 scales not separated, 3 limit "
               "indeterminate, 64 bad config/usage, 70 numeric failure");

    CommonArgs classify_args, verify_args, cell_args, table_args, solve_args, dns_args;
    std::string xi_text = "1";

    auto* c_classify = app.add_subcommand(
        "classify", "order the scale lists and report exponents and resonances");
    add_common(c_classify, classify_args);

    auto* c_verify = app.add_subcommand(
        "verify-flux", "sample the flux structure conditions for the configured model");
    add_common(c_verify, verify_args);

    auto* c_cell = app.add_subcommand("cell", "solve the local corrector system at one gradient");
    add_common(c_cell, cell_args);
    c_cell->add_option("--xi", xi_text, "gradient to solve at, comma-separated components");

    auto* c_table = app.add_subcommand("flux-table",
                                       "tabulate the effective flux on a gradient box");
    add_common(c_table, table_args);

    auto* c_solve = app.add_subcommand("solve", "run the homogenized space-time problem");
    add_common(c_solve, solve_args);

    auto* c_dns = app.add_subcommand(
        "dns-compare", "resolve the oscillatory problem directly and compare along eps");
    add_common(c_dns, dns_args);

    auto* c_repro = app.add_subcommand(
        "reproduce-paper-example",
        "classify the built-in two-by-three scale example and check its known exponents");
    (void)c_repro;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    if (c_classify->parsed()) return cmd_classify(classify_args);
    if (c_verify->parsed()) return cmd_verify_flux(verify_args);
    if (c_cell->parsed()) return cmd_cell(cell_args, xi_text);
    if (c_table->parsed()) return cmd_flux_table(table_args);
    if (c_solve->parsed()) return cmd_solve(solve_args);
    if (c_dns->parsed()) return cmd_dns_compare(dns_args);
    return cmd_reproduce();
}

} // namespace

int main(int argc, char** argv) {
    std::setlocale(LC_ALL, "C");
    try {
        return dispatch(argc, argv);
    } catch (const NotJointlySeparated& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNotSeparated;
    } catch (const ClassificationAmbiguous& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kIndeterminate;
    } catch (const StructureViolation& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kAssertionFailed;
    } catch (const SyntaxError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfigError;
    } catch (const UnknownIdentifier& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfigError;
    } catch (const MissingBinding& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfigError;
    } catch (const PositivityError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfigError;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kConfigError;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNumericFailure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kNumericFailure;
    }
}
