#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "multihom/cell_solver.hpp"
#include "multihom/dns.hpp"
#include "multihom/errors.hpp"
#include "multihom/flux_models.hpp"
#include "multihom/scale_algebra.hpp"

namespace multihom {

// Sectioned key/value run description. The grammar is a small TOML subset:
// [section] headers, key = value lines, # comments, values being quoted
// strings, numbers, booleans, or single-line arrays of numbers or strings.
// A document parses completely before anything is computed, and every key
// must be consumed by the schema below — typos fail loudly.

struct ConfigValue {
    enum class Kind { String, Number, Boolean, NumberList, StringList, EmptyList };
    Kind kind = Kind::String;
    std::string text;
    double number = 0.0;
    bool boolean = false;
    std::vector<double> numbers;
    std::vector<std::string> strings;
    int line = 0;
};

class ConfigDoc {
public:
    static ConfigDoc parse(const std::string& text) {
        ConfigDoc doc;
        std::istringstream in(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string body = strip(line, lineno);
            if (body.empty()) continue;
            if (body.front() == '[') {
                if (body.back() != ']' || body.size() < 3)
                    throw ConfigError(where(lineno) + "malformed section header");
                section = trim(body.substr(1, body.size() - 2));
                if (section.empty())
                    throw ConfigError(where(lineno) + "empty section name");
                continue;
            }
            std::size_t eq = body.find('=');
            if (eq == std::string::npos)
                throw ConfigError(where(lineno) + "expected key = value");
            std::string key = trim(body.substr(0, eq));
            std::string raw = trim(body.substr(eq + 1));
            if (key.empty()) throw ConfigError(where(lineno) + "empty key");
            if (section.empty())
                throw ConfigError(where(lineno) + "key outside any [section]");
            if (doc.entries_[section].count(key))
                throw ConfigError(where(lineno) + "duplicate key " + section + "." + key);
            doc.entries_[section][key] = parse_value(raw, lineno);
        }
        return doc;
    }

    static ConfigDoc load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot read config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    // CLI override: "section.key=value" with the same value grammar.
    void set(const std::string& assignment) {
        std::size_t eq = assignment.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override needs section.key=value: " + assignment);
        std::string target = trim(assignment.substr(0, eq));
        std::size_t dot = target.find('.');
        if (dot == std::string::npos || dot == 0 || dot + 1 == target.size())
            throw ConfigError("override needs section.key=value: " + assignment);
        entries_[target.substr(0, dot)][target.substr(dot + 1)] =
            parse_value(trim(assignment.substr(eq + 1)), 0);
    }

    std::optional<ConfigValue> take(const std::string& section, const std::string& key) {
        auto s = entries_.find(section);
        if (s == entries_.end()) return std::nullopt;
        auto k = s->second.find(key);
        if (k == s->second.end()) return std::nullopt;
        ConfigValue v = k->second;
        s->second.erase(k);
        if (s->second.empty()) entries_.erase(s);
        return v;
    }

    // After the schema has taken everything it understands.
    void reject_leftovers() const {
        for (const auto& [section, keys] : entries_)
            for (const auto& [key, value] : keys)
                throw ConfigError(where(value.line) + "unknown key " + section + "." + key);
    }

private:
    static std::string where(int line) {
        return line > 0 ? "config line " + std::to_string(line) + ": " : "config: ";
    }

    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    // Remove a trailing comment, respecting quoted strings.
    static std::string strip(const std::string& line, int lineno) {
        std::string out;
        bool quoted = false;
        for (char c : line) {
            if (c == '"') quoted = !quoted;
            if (c == '#' && !quoted) break;
            out.push_back(c);
        }
        if (quoted) throw ConfigError(where(lineno) + "unterminated string");
        return trim(out);
    }

    static double parse_number(const std::string& s, int lineno) {
        const char* begin = s.c_str();
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin || *end != '\0')
            throw ConfigError(where(lineno) + "not a number: " + s);
        return v;
    }

    static ConfigValue parse_value(const std::string& raw, int lineno) {
        ConfigValue v;
        v.line = lineno;
        if (raw.empty()) throw ConfigError(where(lineno) + "empty value");
        if (raw.front() == '"') {
            if (raw.size() < 2 || raw.back() != '"')
                throw ConfigError(where(lineno) + "unterminated string");
            v.kind = ConfigValue::Kind::String;
            v.text = raw.substr(1, raw.size() - 2);
            if (v.text.find('"') != std::string::npos)
                throw ConfigError(where(lineno) + "stray quote inside string");
            return v;
        }
        if (raw.front() == '[') {
            if (raw.back() != ']')
                throw ConfigError(where(lineno) + "array must close on the same line");
            std::string inner = trim(raw.substr(1, raw.size() - 2));
            if (inner.empty()) {
                v.kind = ConfigValue::Kind::EmptyList;
                return v;
            }
            std::vector<std::string> parts;
            std::string cur;
            bool quoted = false;
            for (char c : inner) {
                if (c == '"') quoted = !quoted;
                if (c == ',' && !quoted) {
                    parts.push_back(trim(cur));
                    cur.clear();
                } else {
                    cur.push_back(c);
                }
            }
            parts.push_back(trim(cur));
            bool strings = !parts[0].empty() && parts[0].front() == '"';
            v.kind = strings ? ConfigValue::Kind::StringList : ConfigValue::Kind::NumberList;
            for (const std::string& p : parts) {
                if (p.empty()) throw ConfigError(where(lineno) + "empty array element");
                if (strings) {
                    if (p.size() < 2 || p.front() != '"' || p.back() != '"')
                        throw ConfigError(where(lineno) + "mixed or unquoted array element: " + p);
                    v.strings.push_back(p.substr(1, p.size() - 2));
                } else {
                    v.numbers.push_back(parse_number(p, lineno));
                }
            }
            return v;
        }
        if (raw == "true" || raw == "false") {
            v.kind = ConfigValue::Kind::Boolean;
            v.boolean = raw == "true";
            return v;
        }
        v.kind = ConfigValue::Kind::Number;
        v.number = parse_number(raw, lineno);
        return v;
    }

    std::map<std::string, std::map<std::string, ConfigValue>> entries_;
};

inline FluxFamily family_from_name(const std::string& name) {
    if (name == "linear") return FluxFamily::Linear;
    if (name == "quasilinear_bounded" || name == "quasilinear-bounded")
        return FluxFamily::QuasilinearBounded;
    throw ConfigError("unknown flux family: " + name +
                      " (expected linear or quasilinear_bounded)");
}

// A fully validated run description. Sections a command does not need may be
// absent; the command checks presence of what it uses.
struct RunConfig {
    // [scales]
    std::vector<std::string> spatial;
    std::vector<std::string> temporal;
    // [flux]
    FluxFamily family = FluxFamily::Linear;
    std::optional<std::string> coefficient;
    double beta = 0.0;
    std::optional<double> C0, C1, alpha;
    // [domain]
    std::vector<double> omega = {0.0, 1.0};
    double T = 0.5;
    // [data]
    std::string f_text = "1";
    std::string u0_text = "0";
    // [discretization]
    int M_y = 64, M_s = 32;
    int M_x = 255, M_t = 64;
    double table_xi = 1.5;
    int table_r = 33;
    // [tolerances]
    double p_tol = LimitOpts{}.p_tol;
    double c_tol = LimitOpts{}.c_tol;
    int samples = LimitOpts{}.samples;
    double res_tol = CellOpts{}.res_tol;
    double gs_tol = CellOpts{}.gs_tol;
    double poincare_tol = CellOpts{}.poincare_tol;
    double macro_tol = MacroOpts{}.res_tol;
    std::uint64_t seed = 42;
    // [dns]
    std::vector<double> eps_list = {0.125, 0.0625, 0.03125};
    int K_x = DnsConfig{}.K_x;
    int K_t = DnsConfig{}.K_t;
    long max_M_x = DnsConfig{}.max_M_x;
    long max_M_t = DnsConfig{}.max_M_t;

    int dim() const { return omega.size() == 4 ? 2 : 1; }

    static RunConfig from_doc(ConfigDoc doc) {
        RunConfig c;
        take_string_list(doc, "scales", "spatial", c.spatial);
        take_string_list(doc, "scales", "temporal", c.temporal);

        if (auto v = doc.take("flux", "family"))
            c.family = family_from_name(expect_string(*v, "flux.family"));
        if (auto v = doc.take("flux", "coefficient"))
            c.coefficient = expect_string(*v, "flux.coefficient");
        take_number(doc, "flux", "beta", c.beta);
        if (auto v = doc.take("flux", "C0")) c.C0 = expect_number(*v, "flux.C0");
        if (auto v = doc.take("flux", "C1")) c.C1 = expect_number(*v, "flux.C1");
        if (auto v = doc.take("flux", "alpha")) c.alpha = expect_number(*v, "flux.alpha");

        if (auto v = doc.take("domain", "omega")) {
            c.omega = expect_number_list(*v, "domain.omega");
            if (c.omega.size() != 2 && c.omega.size() != 4)
                throw ConfigError("domain.omega needs 2 bounds (interval) or 4 (rectangle)");
        }
        take_number(doc, "domain", "T", c.T);

        if (auto v = doc.take("data", "f")) c.f_text = expect_string(*v, "data.f");
        if (auto v = doc.take("data", "u0")) c.u0_text = expect_string(*v, "data.u0");

        take_int(doc, "discretization", "M_y", c.M_y);
        take_int(doc, "discretization", "M_s", c.M_s);
        take_int(doc, "discretization", "M_x", c.M_x);
        take_int(doc, "discretization", "M_t", c.M_t);
        take_number(doc, "discretization", "table_xi", c.table_xi);
        take_int(doc, "discretization", "table_r", c.table_r);

        take_number(doc, "tolerances", "p_tol", c.p_tol);
        take_number(doc, "tolerances", "c_tol", c.c_tol);
        take_int(doc, "tolerances", "samples", c.samples);
        take_number(doc, "tolerances", "res_tol", c.res_tol);
        take_number(doc, "tolerances", "gs_tol", c.gs_tol);
        take_number(doc, "tolerances", "poincare_tol", c.poincare_tol);
        take_number(doc, "tolerances", "macro_tol", c.macro_tol);
        if (auto v = doc.take("tolerances", "seed")) {
            double s = expect_number(*v, "tolerances.seed");
            if (s < 0 || s != std::floor(s))
                throw ConfigError("tolerances.seed must be a nonnegative integer");
            c.seed = static_cast<std::uint64_t>(s);
        }

        if (auto v = doc.take("dns", "eps_list")) {
            c.eps_list = expect_number_list(*v, "dns.eps_list");
            for (double e : c.eps_list)
                if (!(e > 0.0)) throw ConfigError("dns.eps_list entries must be positive");
        }
        take_int(doc, "dns", "K_x", c.K_x);
        take_int(doc, "dns", "K_t", c.K_t);
        take_long(doc, "dns", "max_M_x", c.max_M_x);
        take_long(doc, "dns", "max_M_t", c.max_M_t);

        doc.reject_leftovers();
        return c;
    }

    static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {}) {
        ConfigDoc doc = ConfigDoc::load(path);
        for (const std::string& o : overrides) doc.set(o);
        return from_doc(std::move(doc));
    }

    // ---- derived objects ----------------------------------------------

    ScaleList spatial_list() const { return make_list(spatial, ScaleList::Role::Spatial); }
    ScaleList temporal_list() const { return make_list(temporal, ScaleList::Role::Temporal); }

    void require_scales() const {
        if (spatial.empty())
            throw ConfigError("this command needs [scales] spatial = [...]");
    }

    void require_flux() const {
        if (!coefficient)
            throw ConfigError("this command needs [flux] coefficient = \"...\"");
    }

    FluxSpec flux_spec() const {
        require_flux();
        FluxSpec spec = FluxSpec::make(family, *coefficient, dim(),
                                       static_cast<int>(spatial.size()),
                                       static_cast<int>(temporal.size()), beta);
        if (C0 || C1 || alpha)
            spec.declare_constants(C0.value_or(spec.c0()), C1.value_or(spec.c1()),
                                   alpha.value_or(spec.alpha()));
        return spec;
    }

    LimitOpts limit_opts() const {
        LimitOpts o;
        o.p_tol = p_tol;
        o.c_tol = c_tol;
        o.samples = samples;
        return o;
    }

    CellOpts cell_opts() const {
        CellOpts o;
        o.res_tol = res_tol;
        o.gs_tol = gs_tol;
        o.poincare_tol = poincare_tol;
        o.seed = seed;
        return o;
    }

    MacroOpts macro_opts() const {
        MacroOpts o;
        o.res_tol = macro_tol;
        return o;
    }

    PeriodicGrid grid() const { return PeriodicGrid::make(dim(), M_y, M_s); }

    MacroMesh macro_mesh() const {
        if (dim() == 1) return MacroMesh::interval(omega[0], omega[1], M_x, T, M_t);
        return MacroMesh::rectangle(omega[0], omega[1], omega[2], omega[3], M_x, T, M_t);
    }

    DnsConfig dns_config() const {
        DnsConfig d;
        d.spec = flux_spec();
        d.spatial = spatial;
        d.temporal = temporal;
        d.K_x = K_x;
        d.K_t = K_t;
        d.max_M_x = max_M_x;
        d.max_M_t = max_M_t;
        return d;
    }

    SourceFn source_fn() const {
        std::vector<std::string> names = coord_names();
        names.push_back("t");
        CompiledExpr ce(Expr::parse(f_text, {names.begin(), names.end()}), names);
        int N = dim();
        return [ce, N](const double* x, double t) {
            double slots[3] = {x[0], N == 2 ? x[1] : t, t};
            return ce.eval(slots);
        };
    }

    InitialFn initial_fn() const {
        std::vector<std::string> names = coord_names();
        CompiledExpr ce(Expr::parse(u0_text, {names.begin(), names.end()}), names);
        return [ce](const double* x) { return ce.eval(x); };
    }

private:
    std::vector<std::string> coord_names() const {
        std::vector<std::string> names = {"x1"};
        if (dim() == 2) names.push_back("x2");
        return names;
    }

    static ScaleList make_list(const std::vector<std::string>& texts, ScaleList::Role role) {
        ScaleList list;
        list.role = role;
        for (const std::string& t : texts) list.items.push_back(ScaleFn::parse(t));
        return list;
    }

    static std::string expect_string(const ConfigValue& v, const char* what) {
        if (v.kind != ConfigValue::Kind::String)
            throw ConfigError(std::string(what) + " must be a quoted string");
        return v.text;
    }

    static double expect_number(const ConfigValue& v, const char* what) {
        if (v.kind != ConfigValue::Kind::Number)
            throw ConfigError(std::string(what) + " must be a number");
        return v.number;
    }

    static std::vector<double> expect_number_list(const ConfigValue& v, const char* what) {
        if (v.kind == ConfigValue::Kind::EmptyList) return {};
        if (v.kind != ConfigValue::Kind::NumberList)
            throw ConfigError(std::string(what) + " must be an array of numbers");
        return v.numbers;
    }

    static void take_string_list(ConfigDoc& doc, const char* section, const char* key,
                                 std::vector<std::string>& out) {
        if (auto v = doc.take(section, key)) {
            if (v->kind == ConfigValue::Kind::EmptyList) {
                out.clear();
            } else if (v->kind == ConfigValue::Kind::StringList) {
                out = v->strings;
            } else {
                throw ConfigError(std::string(section) + "." + key +
                                  " must be an array of quoted strings");
            }
        }
    }

    static void take_number(ConfigDoc& doc, const char* section, const char* key, double& out) {
        if (auto v = doc.take(section, key))
            out = expect_number(*v, (std::string(section) + "." + key).c_str());
    }

    static void take_int(ConfigDoc& doc, const char* section, const char* key, int& out) {
        if (auto v = doc.take(section, key)) {
            std::string what = std::string(section) + "." + key;
            double d = expect_number(*v, what.c_str());
            if (d != std::floor(d) || d < -2e9 || d > 2e9)
                throw ConfigError(what + " must be an integer");
            out = static_cast<int>(d);
        }
    }

    static void take_long(ConfigDoc& doc, const char* section, const char* key, long& out) {
        if (auto v = doc.take(section, key)) {
            std::string what = std::string(section) + "." + key;
            double d = expect_number(*v, what.c_str());
            if (d != std::floor(d) || d < 0 || d > 9e15)
                throw ConfigError(what + " must be a nonnegative integer");
            out = static_cast<long>(d);
        }
    }
};

} // namespace multihom
