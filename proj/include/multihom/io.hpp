#pragma once

#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "multihom/cell_solver.hpp"
#include "multihom/dns.hpp"
#include "multihom/errors.hpp"
#include "multihom/scale_algebra.hpp"

namespace multihom {

// Every writer below emits %.17g numbers in storage order, so a run with the
// same config produces byte-identical artifacts. Files are opened in binary
// mode to keep line endings out of the picture.

inline std::ofstream open_artifact(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open output file: " + path);
    return out;
}

inline void write_classification_csv(std::ostream& out, const Classification& cls) {
    out << "i,d_i,rho_i,partner_j,diagnostics\n";
    const ScaleExponents& ex = cls.exponents;
    for (int i = 0; i < ex.n; ++i) {
        std::size_t k = static_cast<std::size_t>(i);
        out << (i + 1) << ',' << ex.d[k] << ',' << detail::format_double(ex.rho[k]) << ',';
        if (ex.partner[k]) out << *ex.partner[k];
        out << ',' << ex.diagnostics[k] << '\n';
    }
}

// One row per stored corrector value. The spatial index runs over the slower
// cells' quadrature points and then the corrector's own nodes (innermost);
// the temporal index runs over the kept temporal axes.
inline void write_corrector_csv(std::ostream& out, const Corrector& chi) {
    out << "y_index,s_index,value\n";
    long t_combos = 1;
    for (int j = 0; j < chi.kept_s; ++j)
        t_combos *= chi.param_sizes[chi.param_sizes.size() - 1 - static_cast<std::size_t>(j)];
    long own = chi.own_nodes();
    long space_params = chi.param_count() / t_combos;
    for (long sp = 0; sp < space_params; ++sp)
        for (long st = 0; st < t_combos; ++st) {
            const double* v = chi.slice(sp * t_combos + st);
            for (long node = 0; node < own; ++node)
                out << sp * own + node << ',' << st << ','
                    << detail::format_double(v[node]) << '\n';
        }
}

// Space-time trajectory with the homogeneous walls written explicitly, so a
// plotted slice spans the whole domain.
inline void write_field_csv(std::ostream& out, const SpaceTimeField& field) {
    const MacroMesh& mesh = field.mesh;
    out << (mesh.N == 1 ? "t,x,value\n" : "t,x1,x2,value\n");
    for (int k = 0; k <= mesh.M_t; ++k) {
        const double* u = field.level(k);
        std::string t = detail::format_double(k * mesh.dt());
        if (mesh.N == 1) {
            for (int i = 0; i <= mesh.M_x + 1; ++i) {
                double v = (i == 0 || i == mesh.M_x + 1) ? 0.0 : u[i - 1];
                out << t << ',' << detail::format_double(mesh.lo[0] + i * mesh.h(0)) << ','
                    << detail::format_double(v) << '\n';
            }
        } else {
            for (int j = 0; j <= mesh.M_x + 1; ++j)
                for (int i = 0; i <= mesh.M_x + 1; ++i) {
                    bool wall = i == 0 || j == 0 || i == mesh.M_x + 1 || j == mesh.M_x + 1;
                    double v = wall ? 0.0 : u[static_cast<long>(j - 1) * mesh.M_x + (i - 1)];
                    out << t << ',' << detail::format_double(mesh.lo[0] + i * mesh.h(0)) << ','
                        << detail::format_double(mesh.lo[1] + j * mesh.h(1)) << ','
                        << detail::format_double(v) << '\n';
                }
        }
    }
}

// Gnuplot-style blocks: one block per time level, blank-line separated; 2D
// levels additionally separate grid rows so splot sees a mesh.
inline void write_field_plot(std::ostream& out, const SpaceTimeField& field) {
    const MacroMesh& mesh = field.mesh;
    for (int k = 0; k <= mesh.M_t; ++k) {
        const double* u = field.level(k);
        out << "# t = " << detail::format_double(k * mesh.dt()) << '\n';
        if (mesh.N == 1) {
            for (int i = 0; i <= mesh.M_x + 1; ++i) {
                double v = (i == 0 || i == mesh.M_x + 1) ? 0.0 : u[i - 1];
                out << detail::format_double(mesh.lo[0] + i * mesh.h(0)) << ' '
                    << detail::format_double(v) << '\n';
            }
        } else {
            for (int j = 0; j <= mesh.M_x + 1; ++j) {
                for (int i = 0; i <= mesh.M_x + 1; ++i) {
                    bool wall = i == 0 || j == 0 || i == mesh.M_x + 1 || j == mesh.M_x + 1;
                    double v = wall ? 0.0 : u[static_cast<long>(j - 1) * mesh.M_x + (i - 1)];
                    out << detail::format_double(mesh.lo[0] + i * mesh.h(0)) << ' '
                        << detail::format_double(mesh.lo[1] + j * mesh.h(1)) << ' '
                        << detail::format_double(v) << '\n';
                }
                out << '\n';
            }
        }
        out << '\n';
    }
}

inline void write_study_csv(std::ostream& out, const std::vector<StudyRow>& rows) {
    out << "eps,M_x,M_t,error\n";
    for (const StudyRow& r : rows)
        out << detail::format_double(r.eps) << ',' << r.M_x << ',' << r.M_t << ','
            << detail::format_double(r.error) << '\n';
}

inline void write_study_plot(std::ostream& out, const std::vector<StudyRow>& rows) {
    out << "# eps error\n";
    for (const StudyRow& r : rows)
        out << detail::format_double(r.eps) << ' ' << detail::format_double(r.error) << '\n';
}

} // namespace multihom
