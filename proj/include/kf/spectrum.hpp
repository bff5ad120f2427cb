#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "gentrig.hpp"

namespace kf {

enum class boundary { periodic, dirichlet };

inline const char* to_string(boundary bc) {
    return bc == boundary::periodic ? "periodic" : "dirichlet";
}

struct eigenpair {
    double lambda = 0.0;
    double a = 0.0, b = 0.0;    // boundary coefficients of a C + (b/alpha) S
    std::vector<double> values; // samples at V-atoms, unit L2_V norm
    int multiplicity = 1;
    double secular_residual = 0.0;
    boundary bc = boundary::periodic;
};

struct spectrum_result {
    boundary bc = boundary::periodic;
    std::vector<eigenpair> eigenpairs; // ascending, multiplicity expanded
    std::size_t count_requested = 0;
    double lambda_max_scanned = 0.0;
    std::vector<double> gamma; // 1 + lambda_i
    std::size_t bracket_count = 0;
    int refinement_levels = 0;
    std::string w_digest, v_digest; // measures the spectrum belongs to

    std::vector<double> lambdas() const {
        std::vector<double> l;
        l.reserve(eigenpairs.size());
        for (const auto& e : eigenpairs) l.push_back(e.lambda);
        return l;
    }
};

struct growth_estimate {
    double rho_coeff = std::numeric_limits<double>::quiet_NaN();
    double rho_fit = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_used = 0;
    double fit_constant = std::numeric_limits<double>::quiet_NaN();
};

// |a_1| lambda of the periodic secular series, the natural residual scale
inline double secular_scale(const kernel_table& t, double lambda) {
    double a1 = static_cast<double>(t.F_at1_ext(2) + t.G_at1_ext(2));
    return std::max(1.0, a1 * lambda);
}

namespace detail {

// ---------------------------------------------------------------------------
// High-precision diagonal recursion
//
// The secular series cancels through terms of size about cosh(sqrt(lambda)),
// so locating roots to a fixed relative tolerance needs coefficients whose
// absolute error is far below that peak. The stored double tables cannot
// provide this at large lambda; instead the x = 1 recursion (cheap: it only
// tracks per-atom increments) is re-run in multiprecision, with the working
// precision sized from the long-double table's actual term magnitudes.
//
// Truncation away from structural termination uses the submultiplicative
// bound F_{2(n+m)}(1,1) <= F_{2n}(1,1) * F_{2m}(1,1): split the nested
// ordered integral after 2n integrations and bound the inner block by its
// sup, which sits at x = 1 by monotonicity. The series tail beyond level L is
// then at most lambda^L (F_{2L}+G_{2L})(1,1) times the full positive-term
// sum, which stays sharp where the factorial envelope of remainder_bound is
// hopelessly loose.
// ---------------------------------------------------------------------------
struct mp_table {
    std::vector<mpf> F1, G1; // F_k(1,1), G_k(1,1), k = 0..2*levels+1
    int levels = 0;
    bool exact_beyond = false; // structural: entries past `levels` are exact zeros
    unsigned digits = 0;
    // optional diagonal grid tables (small systems only): [n][grid point]
    bool has_grid = false;
    std::vector<std::vector<mpf>> Fe, Fo;
};

// log10 of the largest positive-sum term of the four series at this lambda,
// from the long-double table magnitudes
inline double peak_log10(const kernel_table& t, double lambda) {
    double peak = 0.0, l10 = std::log10(lambda > 1.0 ? lambda : 1.0);
    for (int n = 0; n <= t.levels; ++n) {
        for (int k : {2 * n, 2 * n + 1}) {
            double v = std::max(static_cast<double>(t.F_at1_ext(k)),
                                static_cast<double>(t.G_at1_ext(k)));
            if (v > 0.0) peak = std::max(peak, n * l10 + std::log10(v));
        }
    }
    return peak;
}

inline unsigned mp_digits_for(const kernel_table& t, double lambda_max) {
    return 35u + static_cast<unsigned>(std::max(0.0, peak_log10(t, lambda_max)));
}

// Rebuild the diagonal recursion in multiprecision. Levels advance until the
// increments vanish exactly (structural termination) or the series tail at
// lambda_max, via the submultiplicative bound, stays below trunc_tol three
// levels in a row.
inline mp_table build_mp_table(const kernel_table& t, double lambda_max, double trunc_tol,
                               bool want_grid) {
    const atomic_measure& W = t.W;
    const atomic_measure& V = t.V;
    const std::size_t nw = W.size(), nv = V.size(), ng = t.grid.size();

    mp_table m;
    m.digits = mp_digits_for(t, lambda_max);
    precision_guard pg(m.digits);
    m.has_grid = want_grid;

    std::vector<mpf> iFp, iFq, iGp, iGq;
    iFq.reserve(nw);
    for (double w : W.masses) iFq.emplace_back(w);
    iGq.reserve(nv);
    for (double v : V.masses) iGq.emplace_back(v);
    bool f_one = true, g_one = true;

    auto emit = [&]() {
        mpf aFp(0), aFq(0), aGp(0), aGq(0);
        std::vector<mpf> fe, fo;
        if (want_grid) {
            fe.resize(ng);
            fo.resize(ng);
        }
        std::size_t iw = 0, jv = 0;
        for (std::size_t g = 0; g < ng; ++g) {
            double x = t.grid[g];
            while (iw < nw && W.positions[iw] <= x) {
                if (!f_one) aFp += iFp[iw];
                aFq += iFq[iw];
                ++iw;
            }
            // G values at x would include V atoms < x only; the V atoms at x
            // are absorbed after this point (only F grid values are kept here)
            while (jv < nv && V.positions[jv] <= x) {
                if (!g_one) aGp += iGp[jv];
                aGq += iGq[jv];
                ++jv;
            }
            if (want_grid) {
                fe[g] = f_one ? mpf(1) : aFp;
                fo[g] = aFq;
            }
        }
        while (jv < nv) {
            if (!g_one) aGp += iGp[jv];
            aGq += iGq[jv];
            ++jv;
        }
        m.F1.push_back(f_one ? mpf(1) : aFp);
        m.F1.push_back(aFq);
        m.G1.push_back(g_one ? mpf(1) : aGp);
        m.G1.push_back(aGq);
        if (want_grid) {
            m.Fe.push_back(std::move(fe));
            m.Fo.push_back(std::move(fo));
        }
    };

    emit(); // level 0

    const mpf L(lambda_max);
    mpf pos_sum(2); // running positive-term sum of C_WV + C_VW at lambda_max
    mpf lpow(1);
    int small_streak = 0;
    for (int n = 1; n <= 100000; ++n) {
        std::vector<mpf> nFp(nw), nFq(nw), nGp(nv), nGq(nv);
        std::size_t iw = 0, jv = 0;
        mpf pF(0), qF(0), pG(0), qG(0);
        mpf accFp(0), accFq(0), accGp(0), accGq(0);
        while (iw < nw || jv < nv) {
            bool takeW = (jv == nv) || (iw < nw && W.positions[iw] <= V.positions[jv]);
            if (takeW) {
                mpf mm(W.masses[iw]);
                nFp[iw] = accFp * mm;
                nFq[iw] = accFq * mm;
                if (!f_one) pF += iFp[iw];
                qF += iFq[iw];
                accGp += (g_one ? mpf(1) : pG) * mm;
                accGq += qG * mm;
                ++iw;
            } else {
                mpf mu(V.masses[jv]);
                accFp += (f_one ? mpf(1) : pF) * mu;
                accFq += qF * mu;
                nGp[jv] = accGp * mu;
                nGq[jv] = accGq * mu;
                if (!g_one) pG += iGp[jv];
                qG += iGq[jv];
                ++jv;
            }
        }
        iFp = std::move(nFp);
        iFq = std::move(nFq);
        iGp = std::move(nGp);
        iGq = std::move(nGq);
        f_one = g_one = false;

        bool all_zero = true;
        for (const mpf& x : iFp) all_zero = all_zero && x == 0;
        for (const mpf& x : iFq) all_zero = all_zero && x == 0;
        for (const mpf& x : iGp) all_zero = all_zero && x == 0;
        for (const mpf& x : iGq) all_zero = all_zero && x == 0;
        if (all_zero) {
            m.exact_beyond = true;
            break;
        }
        emit();
        m.levels = n;

        lpow *= L;
        mpf head = lpow * (m.F1[static_cast<std::size_t>(2 * n)] +
                           m.G1[static_cast<std::size_t>(2 * n)]);
        if (head * pos_sum < trunc_tol)
            ++small_streak;
        else
            small_streak = 0;
        pos_sum += head;
        if (small_streak >= 3) break;
    }
    return m;
}

// sum_{n} (-1)^n lambda^n c[2n] (even) or c[2n+1] (odd)
inline mpf alt_sum(const std::vector<mpf>& c, double lambda, bool odd) {
    mpf acc(0), lp(1);
    const mpf L(lambda);
    int sign = 1;
    for (std::size_t k = odd ? 1 : 0; k < c.size(); k += 2) {
        if (sign > 0)
            acc += lp * c[k];
        else
            acc -= lp * c[k];
        lp *= L;
        sign = -sign;
    }
    return acc;
}

// periodic: C_WV(sqrt l,1) + C_VW(sqrt l,1) - 2; dirichlet: the reduced
// series S_WV(sqrt l,1)/sqrt l = sum (-1)^n l^n F_{2n+1}(1,1)
inline mpf secular_mp(const mp_table& m, double lambda, boundary bc) {
    if (bc == boundary::periodic)
        return alt_sum(m.F1, lambda, false) + alt_sum(m.G1, lambda, false) - 2;
    return alt_sum(m.F1, lambda, true);
}

inline mpf secular_deriv_mp(const mp_table& m, double lambda, boundary bc) {
    mpf acc(0), lp(1);
    const mpf L(lambda);
    int sign = -1;
    for (int n = 1; 2 * n + 1 < static_cast<int>(m.F1.size()); ++n) {
        std::size_t k = static_cast<std::size_t>(bc == boundary::periodic ? 2 * n : 2 * n + 1);
        mpf c = (bc == boundary::periodic) ? mpf(m.F1[k] + m.G1[k]) : m.F1[k];
        mpf term = mpf(n) * lp * c;
        if (sign > 0)
            acc += term;
        else
            acc -= term;
        lp *= L;
        sign = -sign;
    }
    return acc;
}

// positive-term sum of the series, for noise-floor scales
inline double positive_sum(const mp_table& m, double lambda, boundary bc) {
    mpf acc(0), lp(1);
    const mpf L(lambda);
    for (std::size_t k = (bc == boundary::periodic ? 0 : 1); k < m.F1.size(); k += 2) {
        acc += lp * (bc == boundary::periodic ? mpf(m.F1[k] + m.G1[k]) : m.F1[k]);
        lp *= L;
    }
    return static_cast<double>(acc);
}

// Rows of the 2x2 boundary system for a periodic eigenvector (a, b):
//   [ C_WV(al,1) - 1        S_WV(al,1)/al          ] (a)   (0)
//   [ S_VW(al,1)/al       -(C_VW(al,1) - 1)/lambda ] (b) = (0)
struct boundary_rows {
    double r1[2], r2[2];
};

struct boundary_rows_mp {
    mpf r1[2], r2[2];
};

inline boundary_rows_mp rows_at_mp(const mp_table& m, double lambda) {
    boundary_rows_mp r;
    r.r1[0] = alt_sum(m.F1, lambda, false) - 1;
    r.r1[1] = alt_sum(m.F1, lambda, true);
    r.r2[0] = alt_sum(m.G1, lambda, true);
    r.r2[1] = -(alt_sum(m.G1, lambda, false) - 1) / mpf(lambda);
    return r;
}

inline boundary_rows rows_at(const mp_table& m, double lambda) {
    auto q = rows_at_mp(m, lambda);
    boundary_rows r;
    r.r1[0] = static_cast<double>(q.r1[0]);
    r.r1[1] = static_cast<double>(q.r1[1]);
    r.r2[0] = static_cast<double>(q.r2[0]);
    r.r2[1] = static_cast<double>(q.r2[1]);
    return r;
}

inline double norm2(const double* v) { return std::sqrt(v[0] * v[0] + v[1] * v[1]); }

// absolute noise floor of a series value at this lambda
inline double value_floor(const mp_table& m, double lambda) {
    double noise10 = std::log10(std::max(positive_sum(m, lambda, boundary::periodic), 1.0)) -
                     static_cast<double>(m.digits) + 3.0;
    return std::pow(10.0, noise10);
}

// C_WV and S_WV/alpha at a grid index; multiprecision tables when present,
// otherwise the double diagonal tables
inline void trig_pair_mp(const kernel_table& t, const mp_table& m, double lambda, std::size_t g,
                         mpf& c, mpf& s) {
    c = 0;
    s = 0;
    mpf lp(1);
    const mpf L(lambda);
    int sign = 1;
    int top = m.has_grid ? m.levels : t.levels;
    for (int n = 0; n <= top; ++n) {
        std::size_t un = static_cast<std::size_t>(n);
        mpf fe = m.has_grid ? m.Fe[un][g] : mpf(t.F_at(2 * n, g));
        mpf fo = m.has_grid ? m.Fo[un][g] : mpf(t.F_at(2 * n + 1, g));
        if (sign > 0) {
            c += lp * fe;
            s += lp * fo;
        } else {
            c -= lp * fe;
            s -= lp * fo;
        }
        lp *= L;
        sign = -sign;
    }
}

inline void trig_pair_at(const kernel_table& t, const mp_table& m, double lambda, std::size_t g,
                         double& c_out, double& s_over_alpha_out) {
    mpf c, s;
    trig_pair_mp(t, m, lambda, g, c, s);
    c_out = static_cast<double>(c);
    s_over_alpha_out = static_cast<double>(s);
}

struct found_root {
    double lambda;
    int multiplicity; // from scan geometry: 1 = crossing, 2 = touching
    double residual;
};

// Assemble the eigenpair(s) at an accepted root. Multiplicity 2 when the
// scan saw a touching root or both boundary rows are null at scale.
inline std::vector<eigenpair> make_pairs(const kernel_table& t, const mp_table& m,
                                         const found_root& r, boundary bc, bool enforce,
                                         bool want_values = true) {
    std::vector<eigenpair> out;
    double lambda = r.lambda;
    const auto& V = t.V;

    // combine in multiprecision: near the top of the spectrum C and S are
    // exponentially larger than their eigenvector combination, so forming
    // a C + b S/alpha in double cancels catastrophically
    auto sample = [&](const mpf& a, const mpf& b) {
        std::vector<double> vals;
        if (!want_values) return vals;
        vals.resize(V.size());
        for (std::size_t j = 0; j < V.size(); ++j) {
            mpf c, soa;
            trig_pair_mp(t, m, lambda, t.grid_of_V[j], c, soa);
            vals[j] = static_cast<double>(a * c + b * soa);
        }
        return vals;
    };
    auto dotV = [&](const std::vector<double>& x, const std::vector<double>& y) {
        kahan acc;
        for (std::size_t j = 0; j < x.size(); ++j) acc.add(x[j] * y[j] * V.masses[j]);
        return acc.sum();
    };
    auto normalize = [&](std::vector<double>& x) {
        if (x.empty()) return;
        double n = std::sqrt(dotV(x, x));
        if (n == 0.0) throw numeric_error("eigenvector: vanishing sample vector");
        // deterministic sign: largest-magnitude sample positive
        std::size_t jm = 0;
        for (std::size_t j = 1; j < x.size(); ++j)
            if (std::abs(x[j]) > std::abs(x[jm])) jm = j;
        if (x[jm] < 0.0) n = -n;
        for (double& v : x) v /= n;
    };

    if (bc == boundary::dirichlet) {
        eigenpair e;
        e.bc = bc;
        e.lambda = lambda;
        e.a = 0.0;
        e.b = 1.0;
        e.multiplicity = 1;
        e.secular_residual = r.residual * std::sqrt(lambda);
        e.values = sample(mpf(0), mpf(1));
        normalize(e.values);
        out.push_back(std::move(e));
        return out;
    }

    auto mrows = rows_at_mp(m, lambda);
    boundary_rows rows;
    rows.r1[0] = static_cast<double>(mrows.r1[0]);
    rows.r1[1] = static_cast<double>(mrows.r1[1]);
    rows.r2[0] = static_cast<double>(mrows.r2[0]);
    rows.r2[1] = static_cast<double>(mrows.r2[1]);
    auto ref = rows_at(m, lambda / 2.0);
    double refnorm = std::max(norm2(ref.r1), norm2(ref.r2));
    double floor = 64.0 * value_floor(m, lambda) * (1.0 + 1.0 / lambda);
    double thr = std::max(1e-8 * refnorm, floor);
    bool null1 = norm2(rows.r1) <= thr, null2 = norm2(rows.r2) <= thr;
    int mult = (null1 && null2) || r.multiplicity == 2 ? 2 : 1;

    if (enforce && mult == 1) {
        // a simple eigenvalue must leave the 2x2 system singular
        double det = rows.r1[0] * rows.r2[1] - rows.r1[1] * rows.r2[0];
        double sc = std::max(norm2(rows.r1) * norm2(rows.r2), floor * floor);
        if (std::abs(det) > 1e-6 * sc + floor)
            throw numeric_error("eigenvector: boundary matrix nonsingular at claimed eigenvalue");
    }

    if (mult == 2) {
        eigenpair e1;
        e1.bc = bc;
        e1.lambda = lambda;
        e1.a = 1.0;
        e1.b = 0.0;
        e1.multiplicity = 2;
        e1.secular_residual = r.residual;
        e1.values = sample(mpf(1), mpf(0));
        normalize(e1.values);
        eigenpair e2 = e1;
        e2.a = 0.0;
        e2.b = 1.0;
        e2.values = sample(mpf(0), mpf(1));
        double c = dotV(e2.values, e1.values);
        for (std::size_t j = 0; j < e2.values.size(); ++j) e2.values[j] -= c * e1.values[j];
        normalize(e2.values);
        out.push_back(std::move(e1));
        out.push_back(std::move(e2));
        return out;
    }

    const mpf* row = norm2(rows.r1) >= norm2(rows.r2) ? mrows.r1 : mrows.r2;
    mpf a_mp = -row[1], b_mp = row[0];
    eigenpair e;
    e.bc = bc;
    e.lambda = lambda;
    e.a = static_cast<double>(a_mp);
    e.b = static_cast<double>(b_mp);
    double nab = std::sqrt(e.a * e.a + e.b * e.b);
    if (nab == 0.0) throw numeric_error("eigenvector: degenerate boundary row");
    e.a /= nab;
    e.b /= nab;
    e.multiplicity = 1;
    e.secular_residual = r.residual;
    e.values = sample(a_mp, b_mp);
    normalize(e.values);
    out.push_back(std::move(e));
    return out;
}

// scan [0, lambda_max] on a grid uniform in sqrt(lambda); simple roots from
// sign changes of f, touching double roots from sign changes of f' whose
// extremum value sits at the residual floor
inline std::vector<found_root> scan_roots(const kernel_table& t, const mp_table& m, boundary bc,
                                          double lambda_max, std::size_t npts,
                                          std::size_t& brackets) {
    std::vector<found_root> roots;
    double umax = std::sqrt(lambda_max);
    auto f = [&](double lam) { return static_cast<double>(secular_mp(m, lam, bc)); };
    auto fp = [&](double lam) { return static_cast<double>(secular_deriv_mp(m, lam, bc)); };

    auto accept_floor = [&](double lam) {
        return std::max(1e-10 * secular_scale(t, lam), 100.0 * value_floor(m, lam));
    };

    std::vector<double> us(npts + 1), fv(npts + 1), dv(npts + 1);
    for (std::size_t i = 0; i <= npts; ++i) {
        us[i] = umax * static_cast<double>(i) / static_cast<double>(npts);
        double lam = us[i] * us[i];
        fv[i] = f(lam);
        dv[i] = fp(lam);
    }

    auto bisect = [&](auto&& fn, double llo, double lhi, double flo) {
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (llo + lhi);
            if (lhi - llo <= 1e-13 * std::max(1.0, lhi)) return mid;
            double fm = fn(mid);
            if (fm == 0.0) return mid;
            if ((fm > 0) == (flo > 0)) {
                llo = mid;
                flo = fm;
            } else {
                lhi = mid;
            }
        }
        return 0.5 * (llo + lhi);
    };

    for (std::size_t i = 0; i < npts; ++i) {
        double llo = us[i] * us[i], lhi = us[i + 1] * us[i + 1];
        bool skip_zero = (i == 0); // both series vanish at lambda = 0 by design
        bool fchange = !skip_zero && fv[i] != 0.0 && fv[i + 1] != 0.0 &&
                       (fv[i] > 0) != (fv[i + 1] > 0);
        if (bc == boundary::dirichlet && i == 0) {
            // the reduced series is W(1) > 0 at 0, so a first-cell crossing is real
            fchange = fv[i + 1] != 0.0 && (fv[i] > 0) != (fv[i + 1] > 0);
        }
        bool dchange = (dv[i] > 0) != (dv[i + 1] > 0);
        if (fchange) {
            ++brackets;
            double lam = bisect(f, llo, lhi, fv[i]);
            for (int it = 0; it < 3; ++it) { // Newton polish inside the bracket
                double d = fp(lam);
                if (d == 0.0) break;
                double cand = lam - f(lam) / d;
                if (cand <= llo || cand >= lhi) break;
                lam = cand;
            }
            roots.push_back({lam, 1, std::abs(f(lam))});
        } else if (dchange && !(skip_zero && bc == boundary::periodic)) {
            ++brackets;
            double lam = bisect(fp, llo, lhi, dv[i]);
            if (lam <= 0.0) continue;
            double fmid = f(lam);
            double val = std::abs(fmid);
            if (val <= accept_floor(lam)) {
                roots.push_back({lam, 2, val});
            } else if (fv[i] != 0.0 && fv[i + 1] != 0.0 && (fmid > 0) != (fv[i] > 0) &&
                       (fmid > 0) != (fv[i + 1] > 0)) {
                // the function dips through zero and back inside one cell: a
                // close pair of simple roots hiding between scan points
                double l1 = bisect(f, llo, lam, fv[i]);
                double l2 = bisect(f, lam, lhi, fmid);
                roots.push_back({l1, 1, std::abs(f(l1))});
                roots.push_back({l2, 1, std::abs(f(l2))});
            }
        }
    }
    return roots;
}

} // namespace detail

// Secular function whose positive roots are the eigenvalues: periodic
// C_WV(sqrt l,1)+C_VW(sqrt l,1)-2, Dirichlet S_WV(sqrt l,1).
inline double secular(const kernel_table& t, double lambda, boundary bc) {
    if (lambda < 0.0) throw error("secular: lambda must be >= 0");
    if (lambda == 0.0) return 0.0; // C(0,1)+C(0,1)-2 and S(0,1) both vanish
    detail::precision_guard pg(detail::mp_digits_for(t, lambda));
    auto m = detail::build_mp_table(t, lambda, 1e-30, false);
    double v = static_cast<double>(detail::secular_mp(m, lambda, bc));
    return bc == boundary::dirichlet ? v * std::sqrt(lambda) : v;
}

inline std::vector<eigenpair> eigenvector(const kernel_table& t, double lambda, boundary bc) {
    detail::precision_guard pg(detail::mp_digits_for(t, std::max(lambda, 1.0)));
    if (bc == boundary::periodic && lambda == 0.0) {
        eigenpair e;
        e.bc = bc;
        e.lambda = 0.0;
        e.a = 1.0;
        e.b = 0.0;
        e.multiplicity = 1;
        e.values.assign(t.V.size(), 1.0 / std::sqrt(t.V_total));
        return {e};
    }
    auto m = detail::build_mp_table(t, lambda, 1e-30, t.grid.size() <= 2048);
    double res = std::abs(static_cast<double>(detail::secular_mp(m, lambda, bc)));
    double tol = 1e-8 * secular_scale(t, lambda);
    if (res > tol) throw numeric_error("eigenvector: lambda is not a secular root");
    return detail::make_pairs(t, m, {lambda, 1, res}, bc, true);
}

inline spectrum_result solve_spectrum(const kernel_table& t, boundary bc, std::size_t count,
                                      bool want_vectors = true) {
    if (count == 0) throw error("solve_spectrum: count must be positive");
    spectrum_result spec;
    spec.bc = bc;
    spec.count_requested = count;
    spec.w_digest = t.W.digest;
    spec.v_digest = t.V.digest;

    double lambda_max = std::pow(2.0 * static_cast<double>(count), 2.0); // Weyl prior rho = 1/2
    for (int grow = 0;; ++grow) {
        if (grow > 60) throw numeric_error("solve_spectrum: scan exhausted before count roots");
        detail::precision_guard pg(detail::mp_digits_for(t, lambda_max));
        auto m = detail::build_mp_table(t, lambda_max, 1e-30, t.grid.size() <= 2048);

        // refine the scan grid until the multiplicity-weighted count is stable
        std::size_t npts = 16 * (count + 2);
        std::vector<detail::found_root> roots, prev;
        int refinements = 0;
        auto weight = [](const std::vector<detail::found_root>& r) {
            std::size_t n = 0;
            for (const auto& x : r) n += static_cast<std::size_t>(x.multiplicity);
            return n;
        };
        for (; refinements < 12; ++refinements) {
            std::size_t brackets = 0;
            roots = detail::scan_roots(t, m, bc, lambda_max, npts, brackets);
            spec.bracket_count = brackets;
            if (refinements > 0 && weight(roots) == weight(prev)) break;
            prev = roots;
            npts *= 2;
        }
        spec.refinement_levels = refinements;

        std::size_t found = (bc == boundary::periodic) ? 1 : 0; // lambda = 0 constant mode
        found += weight(roots);

        // a structurally terminated series is a polynomial: the nonzero-root
        // count (with multiplicity) cannot exceed its degree
        bool capped = m.exact_beyond && found >= static_cast<std::size_t>(m.levels);

        if (found >= count || capped) {
            spec.lambda_max_scanned = lambda_max;
            if (bc == boundary::periodic) {
                eigenpair e0;
                e0.bc = bc;
                e0.lambda = 0.0;
                e0.a = 1.0;
                e0.b = 0.0;
                e0.multiplicity = 1;
                if (want_vectors) e0.values.assign(t.V.size(), 1.0 / std::sqrt(t.V_total));
                spec.eigenpairs.push_back(std::move(e0));
            }
            for (const auto& r : roots)
                for (auto& e : detail::make_pairs(t, m, r, bc, false, want_vectors))
                    spec.eigenpairs.push_back(std::move(e));
            std::sort(spec.eigenpairs.begin(), spec.eigenpairs.end(),
                      [](const eigenpair& x, const eigenpair& y) { return x.lambda < y.lambda; });
            if (spec.eigenpairs.size() > count) spec.eigenpairs.resize(count);
            for (const auto& e : spec.eigenpairs) spec.gamma.push_back(1.0 + e.lambda);
            return spec;
        }
        lambda_max *= 2.0;
    }
}

// ---------------------------------------------------------------------------
// Convergence-exponent estimators
// ---------------------------------------------------------------------------

// from the secular coefficients: finite-n proxy for
// limsup n ln n / (-ln |a_n|), maximized over n >= n_min
inline growth_estimate growth_exponent(const std::vector<double>& coeffs, std::size_t n_min = 5) {
    growth_estimate g;
    double best = 0.0;
    std::size_t used = 0;
    for (std::size_t n = n_min; n < coeffs.size(); ++n) {
        double a = std::abs(coeffs[n]);
        if (a == 0.0 || a >= 1.0) continue;
        double dn = static_cast<double>(n);
        best = std::max(best, dn * std::log(dn) / (-std::log(a)));
        ++used;
    }
    if (used < 10)
        throw numeric_error("growth_exponent: too few usable coefficients beyond n_min");
    g.rho_coeff = best;
    g.n_used = used;
    return g;
}

// from computed eigenvalues: slope of the least-squares fit of ln n against
// ln lambda_n (zero mode excluded), with the lower-bound constant taken as
// the smallest lambda_n / n^{1/rho} over the fitted range
inline growth_estimate growth_exponent(const spectrum_result& spec) {
    growth_estimate g;
    std::vector<double> lam;
    for (const auto& e : spec.eigenpairs)
        if (e.lambda > 0.0) lam.push_back(e.lambda);
    if (lam.size() < 20) throw numeric_error("growth_exponent: need at least 20 eigenvalues");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    double n = static_cast<double>(lam.size());
    for (std::size_t i = 0; i < lam.size(); ++i) {
        double x = std::log(lam[i]);
        double y = std::log(static_cast<double>(i + 1));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    g.rho_fit = slope;
    g.n_used = lam.size();
    double cmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lam.size(); ++i)
        cmin = std::min(cmin, lam[i] / std::pow(static_cast<double>(i + 1), 1.0 / slope));
    g.fit_constant = cmin;
    return g;
}

// both estimators where available; coefficient estimator omitted when the
// series terminates before enough usable terms (atomic measures)
inline growth_estimate growth_exponent(const kernel_table& t, const spectrum_result& spec) {
    growth_estimate g = growth_exponent(spec);
    try {
        auto gc = growth_exponent(secular_coefficients(t));
        g.rho_coeff = gc.rho_coeff;
    } catch (const numeric_error&) {
    }
    return g;
}

// ---------------------------------------------------------------------------
// Spectral tail sums and fractional calculus
// ---------------------------------------------------------------------------

struct tail_sum_result {
    double partial_sum = 0.0;
    double remainder = 0.0;
    bool divergent = false;
    double rho_used = 0.0;
};

// sum lambda_i^{-s} over the computed nonzero spectrum plus an integral-
// comparison bound on the tail via lambda_n >= C n^{1/rho}
inline tail_sum_result tail_sum(const spectrum_result& spec, double s) {
    if (s <= 0.0) throw error("tail_sum: s must be positive");
    std::vector<double> lam;
    for (const auto& e : spec.eigenpairs)
        if (e.lambda > 0.0) lam.push_back(e.lambda);
    if (lam.empty()) throw error("tail_sum: no positive eigenvalues");
    tail_sum_result r;
    kahan acc;
    for (double l : lam) acc.add(std::pow(l, -s));
    r.partial_sum = acc.sum();
    auto g = growth_exponent(spec);
    r.rho_used = g.rho_fit;
    if (s <= g.rho_fit) {
        r.divergent = true;
        r.remainder = std::numeric_limits<double>::infinity();
        return r;
    }
    double N = static_cast<double>(lam.size());
    double p = s / g.rho_fit;
    r.remainder = std::pow(g.fit_constant, -s) * std::pow(N, 1.0 - p) / (p - 1.0);
    return r;
}

// sum gamma_i^{2(n-m)}, the Hilbert-Schmidt embedding sum between levels
inline double hilbert_schmidt_sum(const spectrum_result& spec, double n, double m) {
    kahan acc;
    for (double gmm : spec.gamma) acc.add(std::pow(gmm, 2.0 * (n - m)));
    return acc.sum();
}

inline std::vector<double> fractional_apply(const spectrum_result& spec,
                                            const std::vector<double>& f_coeffs, double s) {
    if (f_coeffs.size() > spec.gamma.size())
        throw error("fractional_apply: more coefficients than computed modes");
    std::vector<double> u(f_coeffs.size());
    for (std::size_t i = 0; i < f_coeffs.size(); ++i)
        u[i] = std::pow(spec.gamma[i], s) * f_coeffs[i];
    return u;
}

inline std::vector<double> fractional_solve(const spectrum_result& spec,
                                            const std::vector<double>& f_coeffs, double s) {
    return fractional_apply(spec, f_coeffs, -s);
}

inline double sobolev_norm(const spectrum_result& spec, const std::vector<double>& f_coeffs,
                           double s) {
    if (f_coeffs.size() > spec.gamma.size())
        throw error("sobolev_norm: more coefficients than computed modes");
    kahan acc;
    for (std::size_t i = 0; i < f_coeffs.size(); ++i)
        acc.add(std::pow(spec.gamma[i], s) * f_coeffs[i] * f_coeffs[i]);
    return acc.sum();
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json spectrum_to_json(const spectrum_result& spec) {
    nlohmann::json j;
    j["bc"] = to_string(spec.bc);
    j["count_requested"] = spec.count_requested;
    j["lambda_max_scanned"] = spec.lambda_max_scanned;
    j["eigenvalues"] = spec.lambdas();
    std::vector<int> mult;
    std::vector<double> res;
    for (const auto& e : spec.eigenpairs) {
        mult.push_back(e.multiplicity);
        res.push_back(e.secular_residual);
    }
    j["multiplicities"] = mult;
    j["residuals"] = res;
    j["gamma"] = spec.gamma;
    try {
        auto g = growth_exponent(spec);
        j["rho_fit"] = g.rho_fit;
        j["fit_constant"] = g.fit_constant;
    } catch (const numeric_error&) {
    }
    return j;
}

inline void write_csv(const spectrum_result& spec, std::ostream& os) {
    os.precision(17);
    os << "index,lambda,multiplicity\n";
    for (std::size_t i = 0; i < spec.eigenpairs.size(); ++i)
        os << i << "," << spec.eigenpairs[i].lambda << "," << spec.eigenpairs[i].multiplicity
           << "\n";
}

} // namespace kf
