#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "measure.hpp"
#include "spectrum.hpp"

namespace kf {

// Green kernel of the operator pinned at the origin,
//
//     rho(t, s) = W(t ^ s) - W(t) W(s) / W(1),
//
// which is also the covariance of the W-Brownian bridge. Integrating against
// V gives the inverse of the Dirichlet operator; for atomic V that inverse is
// a dense N x N matrix and its trace is a plain diagonal quadrature.
struct bridge_kernel {
    const atomic_measure& W;
    double W_total;

    explicit bridge_kernel(const atomic_measure& w) : W(w), W_total(w.total_mass) {
        if (w.chi != chirality::right_continuous)
            throw config_error("bridge_kernel: W must be cadlag (right continuous)");
        if (!(W_total > 0.0)) throw config_error("bridge_kernel: W has no mass");
    }

    // Evaluated as W(t^s) * (1 - W(t v s)/W(1)); by monotonicity this equals
    // the product form and keeps the diagonal nonnegative in floating point.
    double eval(double t, double s) const {
        double lo = W.eval(std::min(t, s));
        double hi = W.eval(std::max(t, s));
        return lo * (1.0 - hi / W_total);
    }
    double operator()(double t, double s) const { return eval(t, s); }
};

// Dense matrix of the Green operator on V-atom values, row-major:
// A[j*N + l] = rho(y_j, y_l) v_l.
inline std::vector<double> green_matrix(const bridge_kernel& k, const atomic_measure& V) {
    std::size_t n = V.size();
    std::vector<double> a(n * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = 0; l < n; ++l)
            a[j * n + l] = k.eval(V.positions[j], V.positions[l]) * V.masses[l];
    return a;
}

// (Kf)(y_j) = sum_l rho(y_j, y_l) f(y_l) v_l, exact for atomic V.
inline std::vector<double> green_apply(const bridge_kernel& k, const atomic_measure& V,
                                       std::span<const double> f) {
    std::size_t n = V.size();
    if (f.size() != n) throw error("green_apply: length mismatch");
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) {
        kahan acc;
        for (std::size_t l = 0; l < n; ++l)
            acc.add(k.eval(V.positions[j], V.positions[l]) * f[l] * V.masses[l]);
        out[j] = acc.sum();
    }
    return out;
}

// tr(K) = sum_j rho(y_j, y_j) v_j = sum of the reciprocal Dirichlet
// eigenvalues; always at most V(1) W(1).
inline double trace(const bridge_kernel& k, const atomic_measure& V) {
    kahan acc;
    for (std::size_t j = 0; j < V.size(); ++j)
        acc.add(k.eval(V.positions[j], V.positions[j]) * V.masses[j]);
    return acc.sum();
}

// Min-max comparison: the k-th smallest periodic eigenvalue never exceeds the
// k-th smallest Dirichlet eigenvalue. Index alignment is positional on the
// ascending multiplicity-expanded lists (the periodic list starts with the
// zero mode, the Dirichlet list does not).
struct minmax_report {
    std::size_t compared = 0;
    bool all_hold = true;
    std::vector<bool> holds;
};

inline minmax_report minmax_check(const spectrum_result& periodic_spec,
                                  const spectrum_result& dirichlet_spec) {
    if (periodic_spec.bc != boundary::periodic || dirichlet_spec.bc != boundary::dirichlet)
        throw config_error("minmax_check: expected one periodic and one dirichlet spectrum");
    if (periodic_spec.w_digest != dirichlet_spec.w_digest ||
        periodic_spec.v_digest != dirichlet_spec.v_digest)
        throw config_error("minmax_check: spectra come from different measures");

    minmax_report rep;
    rep.compared = std::min(periodic_spec.eigenpairs.size(), dirichlet_spec.eigenpairs.size());
    rep.holds.resize(rep.compared);
    for (std::size_t kdx = 0; kdx < rep.compared; ++kdx) {
        double lp = periodic_spec.eigenpairs[kdx].lambda;
        double ld = dirichlet_spec.eigenpairs[kdx].lambda;
        // equality is allowed; leave room for independent root refinements
        bool ok = lp <= ld * (1.0 + 1e-9) + 1e-12;
        rep.holds[kdx] = ok;
        if (!ok) rep.all_hold = false;
    }
    return rep;
}

// Trace identity report: diagonal quadrature against a partial sum of
// reciprocal Dirichlet eigenvalues.
inline nlohmann::json trace_report(const bridge_kernel& k, const atomic_measure& V,
                                   std::span<const double> dirichlet_lambdas) {
    double tr = trace(k, V);
    kahan acc;
    for (double lam : dirichlet_lambdas) {
        if (!(lam > 0.0)) throw numeric_error("trace_report: nonpositive Dirichlet eigenvalue");
        acc.add(1.0 / lam);
    }
    double partial = acc.sum();
    return nlohmann::json{{"trace_integral", tr},
                          {"partial_eigen_sum", partial},
                          {"relative_gap", std::abs(tr - partial) / tr}};
}

} // namespace kf
