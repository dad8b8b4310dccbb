#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "expr.hpp"

namespace multihom {

// Numeric classification of microscale lists: limits of scale ratios along a
// geometric sample ladder, separation / well-separation verdicts, merged
// joint lists, and the per-scale exponents d_i (temporal scales faster than
// the square of spatial scale i) and rho_i (resonance constant).

struct LimitOpts {
    double eps0 = 0.1;       // first sample
    double ratio = 0.5;      // geometric step between samples
    int samples = 41;        // eps_k = eps0 * ratio^k, k = 0..samples-1
    int window = 12;         // trailing samples used for slope/drift
    int min_usable = 5;      // fewer usable samples => Indeterminate
    double p_tol = 0.02;     // log-log slope threshold
    double c_tol = 0.005;    // per-halving relative drift bound for Finite
    double v_floor = 1e-12;  // monotone fall below => Zero
    double v_ceil = 1e12;    // monotone rise above => Infinite
    double underflow = 1e-300;
    int l_max = 8;           // witness exponent search bound
};

struct LimitDiagnostics {
    double slope = 0.0;
    double drift = 0.0;
    int usable = 0;
    int window_len = 0;
};

struct LimitClass {
    enum class Tag { Zero, Finite, Infinite, Indeterminate };

    Tag tag = Tag::Indeterminate;
    double value = 0.0; // extrapolated limit, Finite only
    LimitDiagnostics diag;

    bool zero() const { return tag == Tag::Zero; }
    bool finite() const { return tag == Tag::Finite; }
    bool infinite() const { return tag == Tag::Infinite; }
    bool indeterminate() const { return tag == Tag::Indeterminate; }
    /// "lim > 0" in the extended sense: Finite or Infinite.
    bool positive() const { return finite() || infinite(); }

    const char* tag_name() const {
        switch (tag) {
            case Tag::Zero: return "Zero";
            case Tag::Finite: return "Finite";
            case Tag::Infinite: return "Infinite";
            case Tag::Indeterminate: return "Indeterminate";
        }
        return "?";
    }
};

/// One scale function eps -> positive real, kept with its source text.
struct ScaleFn {
    std::string text;
    Expr expr;

    static ScaleFn parse(const std::string& text) {
        return ScaleFn{text, Expr::parse(text, {"eps"})};
    }
};

struct ScaleList {
    enum class Role { Spatial, Temporal };
    Role role = Role::Spatial;
    std::vector<ScaleFn> items;

    std::size_t size() const { return items.size(); }
};

/// Classify lim_{eps->0} f(eps)/g(eps) from samples on a geometric ladder.
/// Slope is the least-squares fit of ln(f/g) against ln(eps) over the
/// trailing window; Finite limits are Aitken-extrapolated.
inline LimitClass limit_ratio(const Expr& f, const Expr& g, const LimitOpts& opts = {}) {
    CompiledExpr cf(f, {"eps"});
    CompiledExpr cg(g, {"eps"});

    std::vector<double> log_eps, log_ratio, ratio;
    log_eps.reserve(opts.samples);
    double eps = opts.eps0;
    int usable = 0;
    for (int k = 0; k < opts.samples; ++k, eps *= opts.ratio) {
        double fv, gv;
        try {
            fv = cf.eval(&eps);
            gv = cg.eval(&eps);
        } catch (const DomainError&) {
            continue; // sample outside the expression's domain: skip
        }
        if (fv < 0.0 || gv < 0.0)
            throw PositivityError("scale function is negative at eps=" +
                                  detail::format_double(eps));
        if (!std::isfinite(fv) || !std::isfinite(gv)) continue;
        if (fv < opts.underflow || gv < opts.underflow) continue; // underflow guard
        ++usable;
        log_eps.push_back(std::log(eps));
        log_ratio.push_back(std::log(fv) - std::log(gv));
        ratio.push_back(fv / gv);
    }

    LimitClass out;
    out.diag.usable = usable;
    if (usable < opts.min_usable) return out; // Indeterminate

    // Rounding-noise floor: expressions such as ln(1+eps^2) or exp(eps)-1
    // lose relative precision deep in the ladder (the 1+x step quantizes at
    // ulp(1)), seen as the per-step drift settling and then growing again.
    // Score each candidate ladder end by its final two drifts and truncate
    // at the best-scoring end when the full ladder is markedly worse.
    if (usable >= opts.min_usable + 1) {
        std::vector<double> d(usable, 0.0);
        for (int k = 1; k < usable; ++k)
            d[k] = std::abs(ratio[k] - ratio[k - 1]) / std::max(std::abs(ratio[k]), 1e-300);
        auto score = [&](int e) { return std::max(d[e - 1], d[e]); };
        int best = usable - 1;
        for (int e = std::max(2, opts.min_usable - 1); e < usable; ++e)
            if (score(e) <= score(best)) best = e;
        if (best < usable - 1 && score(best) < opts.c_tol &&
            score(usable - 1) > 50.0 * std::max(score(best), 1e-15)) {
            usable = best + 1;
            ratio.resize(usable);
            log_ratio.resize(usable);
            log_eps.resize(usable);
        }
    }

    int w = std::min(opts.window, usable);
    int begin = usable - w;
    out.diag.window_len = w;

    double mx = 0.0, my = 0.0;
    for (int k = begin; k < usable; ++k) {
        mx += log_eps[k];
        my += log_ratio[k];
    }
    mx /= w;
    my /= w;
    double sxy = 0.0, sxx = 0.0;
    for (int k = begin; k < usable; ++k) {
        sxy += (log_eps[k] - mx) * (log_ratio[k] - my);
        sxx += (log_eps[k] - mx) * (log_eps[k] - mx);
    }
    double slope = sxy / sxx;
    out.diag.slope = slope;

    double drift = 0.0;
    bool falling = true, rising = true;
    for (int k = begin + 1; k < usable; ++k) {
        double d = std::abs(ratio[k] - ratio[k - 1]) / std::max(std::abs(ratio[k]), 1e-300);
        drift = std::max(drift, d);
        falling = falling && ratio[k] < ratio[k - 1];
        rising = rising && ratio[k] > ratio[k - 1];
    }
    out.diag.drift = drift;

    double last = ratio.back();
    if (slope > opts.p_tol || (falling && last < opts.v_floor)) {
        out.tag = LimitClass::Tag::Zero;
        return out;
    }
    if (slope < -opts.p_tol || (rising && last > opts.v_ceil)) {
        out.tag = LimitClass::Tag::Infinite;
        return out;
    }
    if (std::abs(slope) < opts.p_tol && drift < opts.c_tol) {
        out.tag = LimitClass::Tag::Finite;
        // Aitken delta-squared on the last three ratios; falls back to the
        // last sample when the correction is below noise.
        double c = last;
        if (usable >= 3) {
            double r0 = ratio[usable - 3], r1 = ratio[usable - 2], r2 = ratio[usable - 1];
            double denom = r2 - 2.0 * r1 + r0;
            if (std::abs(denom) > 1e-13 * std::max(1.0, std::abs(r2))) {
                double c2 = r2 - (r2 - r1) * (r2 - r1) / denom;
                if (std::isfinite(c2)) c = c2;
            }
        }
        out.value = c;
        return out;
    }
    return out; // Indeterminate
}

inline LimitClass limit_ratio(const ScaleFn& f, const ScaleFn& g, const LimitOpts& opts = {}) {
    return limit_ratio(f.expr, g.expr, opts);
}

struct SeparationResult {
    bool ok = false;
    std::string detail;
};

/// Separated: every consecutive ratio eps_{k+1}/eps_k tends to zero.
/// An Indeterminate pair raises ClassificationAmbiguous; a Finite or
/// Infinite pair (equal rates or wrong order) yields a false verdict.
inline SeparationResult is_separated(const ScaleList& list, const LimitOpts& opts = {}) {
    if (list.items.empty()) return {true, "empty list"};
    for (std::size_t k = 0; k + 1 < list.items.size(); ++k) {
        LimitClass lc = limit_ratio(list.items[k + 1], list.items[k], opts);
        if (lc.indeterminate())
            throw ClassificationAmbiguous(
                "limit of " + list.items[k + 1].text + " / " + list.items[k].text +
                " is indeterminate (slope=" + detail::format_double(lc.diag.slope) +
                ", drift=" + detail::format_double(lc.diag.drift) + ")");
        if (!lc.zero())
            return {false, "pair (" + list.items[k].text + ", " + list.items[k + 1].text +
                               ") has " + lc.tag_name() + " ratio"};
    }
    return {true, ""};
}

struct WellSeparationResult {
    bool ok = false;
    std::optional<int> witness; // max over pairs of the smallest working l
    std::string detail;
};

/// Well-separated: for every consecutive pair there is a positive integer l
/// with (eps_{k+1}/eps_k)^l / eps_k -> 0. Searches l = 1..l_max per pair and
/// reports the largest of the per-pair smallest witnesses.
inline WellSeparationResult is_well_separated(const ScaleList& list,
                                              const LimitOpts& opts = {}) {
    SeparationResult sep = is_separated(list, opts);
    if (!sep.ok) return {false, std::nullopt, "not separated: " + sep.detail};
    if (list.items.size() < 2) return {true, 1, "single scale"};

    int witness = 1;
    for (std::size_t k = 0; k + 1 < list.items.size(); ++k) {
        Expr r = Expr::combine(BinaryOp::Div, list.items[k + 1].expr, list.items[k].expr);
        std::optional<int> found;
        bool ambiguous = false;
        for (int l = 1; l <= opts.l_max; ++l) {
            Expr probe = Expr::combine(BinaryOp::Div, Expr::pow_int(r, l), list.items[k].expr);
            LimitClass lc = limit_ratio(probe, Expr::constant(1.0), opts);
            if (lc.zero()) {
                found = l;
                break;
            }
            if (lc.indeterminate()) ambiguous = true;
        }
        if (!found) {
            if (ambiguous)
                throw ClassificationAmbiguous(
                    "witness search for pair (" + list.items[k].text + ", " +
                    list.items[k + 1].text + ") hit an indeterminate limit");
            return {false, std::nullopt,
                    "witness exhausted for pair (" + list.items[k].text + ", " +
                        list.items[k + 1].text + ") up to l=" + std::to_string(opts.l_max)};
        }
        witness = std::max(witness, *found);
    }
    return {true, witness, ""};
}

struct DuplicatePair {
    int spatial_index = 0;  // 1-based
    int temporal_index = 0; // 1-based
    double constant = 0.0;  // lim spatial/temporal
};

struct JointClassification {
    ScaleList merged; // joint list, duplicates removed, slowest first
    std::vector<DuplicatePair> duplicates;
    WellSeparationResult spatial_ws;
    WellSeparationResult temporal_ws;
    WellSeparationResult joint_ws;

    bool jointly_well_separated() const {
        return spatial_ws.ok && temporal_ws.ok && joint_ws.ok;
    }
};

/// Merge spatial and temporal lists: detect equal-rate cross pairs (Finite
/// cross ratio), keep the spatial member of each such pair, sort the
/// survivors slowest-first by pairwise limits, and classify the result.
inline JointClassification merge_joint(const ScaleList& spatial, const ScaleList& temporal,
                                       const LimitOpts& opts = {}) {
    JointClassification out;
    out.spatial_ws = is_well_separated(spatial, opts);
    out.temporal_ws = is_well_separated(temporal, opts);
    if (!out.spatial_ws.ok || !out.temporal_ws.ok) {
        out.joint_ws = {false, std::nullopt, "component list not well-separated"};
        return out;
    }

    std::vector<bool> temporal_dup(temporal.size(), false);
    std::vector<bool> spatial_dup(spatial.size(), false);
    for (std::size_t i = 0; i < spatial.size(); ++i) {
        for (std::size_t j = 0; j < temporal.size(); ++j) {
            LimitClass lc = limit_ratio(spatial.items[i], temporal.items[j], opts);
            if (lc.indeterminate())
                throw ClassificationAmbiguous(
                    "cross ratio " + spatial.items[i].text + " / " + temporal.items[j].text +
                    " is indeterminate");
            if (lc.finite()) {
                if (spatial_dup[i] || temporal_dup[j])
                    throw ConsistencyViolation(
                        "scale participates in more than one equal-rate pair");
                spatial_dup[i] = temporal_dup[j] = true;
                out.duplicates.push_back(
                    {static_cast<int>(i + 1), static_cast<int>(j + 1), lc.value});
            }
        }
    }

    std::vector<ScaleFn> pool = spatial.items;
    for (std::size_t j = 0; j < temporal.size(); ++j)
        if (!temporal_dup[j]) pool.push_back(temporal.items[j]);

    // Insertion sort, slowest first; rate comparisons must all be decisive.
    std::vector<ScaleFn> sorted;
    for (const ScaleFn& item : pool) {
        std::size_t pos = sorted.size();
        for (std::size_t k = 0; k < sorted.size(); ++k) {
            LimitClass lc = limit_ratio(item, sorted[k], opts);
            if (lc.infinite()) { // item decays slower: goes before sorted[k]
                pos = k;
                break;
            }
            if (!lc.zero())
                throw SortInconsistent("rate comparison of " + item.text + " and " +
                                       sorted[k].text + " gave " + lc.tag_name());
        }
        sorted.insert(sorted.begin() + pos, item);
    }

    out.merged.role = ScaleList::Role::Spatial; // role label unused for joint list
    out.merged.items = std::move(sorted);
    out.joint_ws = is_well_separated(out.merged, opts);
    return out;
}

/// d_i: how many temporal scales are asymptotically faster than the square
/// of spatial scale i. The limit pattern over j must be a (possibly empty)
/// run of positive limits followed by zeros.
inline int compute_d(int i, const ScaleList& spatial, const ScaleList& temporal,
                     const LimitOpts& opts = {}, std::string* tags_out = nullptr) {
    const ScaleFn& sp = spatial.items.at(static_cast<std::size_t>(i - 1));
    Expr sp2 = sp.expr.squared();
    int m = static_cast<int>(temporal.size());
    int first_zero = 0; // 1-based index of first Zero limit; 0 = none
    std::string tags;
    for (int j = 1; j <= m; ++j) {
        LimitClass lc = limit_ratio(temporal.items[static_cast<std::size_t>(j - 1)].expr, sp2, opts);
        if (lc.indeterminate())
            throw ClassificationAmbiguous(
                "limit of " + temporal.items[static_cast<std::size_t>(j - 1)].text + " / (" +
                sp.text + ")^2 is indeterminate");
        tags += lc.zero() ? 'Z' : 'P';
        if (lc.zero()) {
            if (first_zero == 0) first_zero = j;
        } else if (first_zero != 0) {
            throw ConsistencyViolation(
                "temporal scale " + std::to_string(j) + " is not faster than (" + sp.text +
                ")^2 although scale " + std::to_string(first_zero) + " is");
        }
    }
    if (tags_out) *tags_out = tags;
    return first_zero == 0 ? 0 : m - (first_zero - 1);
}

/// rho_i: the finite limit of (spatial_i)^2 / temporal_j when exactly one
/// temporal scale matches the square of spatial scale i, else 0.
inline std::pair<double, std::optional<int>> compute_rho(int i, const ScaleList& spatial,
                                                         const ScaleList& temporal,
                                                         const LimitOpts& opts = {},
                                                         LimitDiagnostics* diag_out = nullptr) {
    const ScaleFn& sp = spatial.items.at(static_cast<std::size_t>(i - 1));
    Expr sp2 = sp.expr.squared();
    std::optional<int> partner;
    double rho = 0.0;
    for (int j = 1; j <= static_cast<int>(temporal.size()); ++j) {
        LimitClass lc = limit_ratio(sp2, temporal.items[static_cast<std::size_t>(j - 1)].expr, opts);
        if (lc.indeterminate())
            throw ClassificationAmbiguous(
                "resonance limit (" + sp.text + ")^2 / " +
                temporal.items[static_cast<std::size_t>(j - 1)].text + " is indeterminate");
        if (lc.finite()) {
            if (partner)
                throw MultipleResonance("spatial scale " + std::to_string(i) +
                                        " resonates with temporal scales " +
                                        std::to_string(*partner) + " and " + std::to_string(j));
            partner = j;
            rho = lc.value;
            if (diag_out) *diag_out = lc.diag;
        }
    }
    return {rho, partner};
}

struct ScaleExponents {
    int n = 0; // spatial scale count
    int m = 0; // temporal scale count
    std::vector<int> d;
    std::vector<double> rho;
    std::vector<std::optional<int>> partner; // 1-based temporal index
    std::vector<std::string> diagnostics;    // per-i summary for reports
};

struct Classification {
    JointClassification joint;
    ScaleExponents exponents;
};

/// Full pipeline: verify both lists and the merged list are well-separated,
/// then compute d_i and rho_i for every spatial scale and check the
/// structural invariants (d nonincreasing, resonance partner consistency).
inline Classification classify(const ScaleList& spatial, const ScaleList& temporal,
                               const LimitOpts& opts = {}) {
    Classification out;
    out.joint = merge_joint(spatial, temporal, opts);
    if (!out.joint.spatial_ws.ok)
        throw NotJointlySeparated("spatial list: " + out.joint.spatial_ws.detail);
    if (!out.joint.temporal_ws.ok)
        throw NotJointlySeparated("temporal list: " + out.joint.temporal_ws.detail);
    if (!out.joint.joint_ws.ok)
        throw NotJointlySeparated("merged list: " + out.joint.joint_ws.detail);

    ScaleExponents& ex = out.exponents;
    ex.n = static_cast<int>(spatial.size());
    ex.m = static_cast<int>(temporal.size());
    for (int i = 1; i <= ex.n; ++i) {
        std::string tags;
        int d = compute_d(i, spatial, temporal, opts, &tags);
        LimitDiagnostics rd;
        auto [rho, partner] = compute_rho(i, spatial, temporal, opts, &rd);
        ex.d.push_back(d);
        ex.rho.push_back(rho);
        ex.partner.push_back(partner);
        char buf[160];
        if (partner)
            std::snprintf(buf, sizeof(buf), "d_tags=%s;rho_slope=%.3g;rho_drift=%.3g",
                          tags.c_str(), rd.slope, rd.drift);
        else
            std::snprintf(buf, sizeof(buf), "d_tags=%s;no_resonance", tags.c_str());
        ex.diagnostics.push_back(buf);

        if (i >= 2 && ex.d[static_cast<std::size_t>(i - 1)] > ex.d[static_cast<std::size_t>(i - 2)])
            throw ConsistencyViolation("d_i increased from scale " + std::to_string(i - 1) +
                                       " to " + std::to_string(i));
        if (partner && d != ex.m - *partner)
            throw ConsistencyViolation("resonance partner of scale " + std::to_string(i) +
                                       " contradicts d_i");
    }
    return out;
}

} // namespace multihom
