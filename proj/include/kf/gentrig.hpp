#pragma once

#include <boost/multiprecision/mpfr.hpp>

#include "kernels.hpp"

namespace kf {

using mpf = boost::multiprecision::mpfr_float;

// The four generalized trigonometric series at (alpha, x):
//   C_WV = sum (-1)^n alpha^{2n}   F_{2n}(x,x)
//   S_WV = sum (-1)^n alpha^{2n+1} F_{2n+1}(x,x)
// and C_VW, S_VW with the G tables. The summands peak around
// alpha^{2n} F_{2n}(1,1) before the factorial wins, so plain doubles lose
// roughly log10(peak) digits to cancellation. We sum in mpfr with working
// precision set from the actual stored coefficients and round the four
// results once at the end.

struct trig_result {
    double alpha = 0, x = 0;
    double c_wv = 1, s_wv = 0, c_vw = 1, s_vw = 0;
    double err_bound = 0;
    int terms_used = 0;
};

namespace detail {

// decimal digits needed to absorb the largest term of any of the four series
inline unsigned trig_digits(const kernel_table& t, double alpha) {
    double peak = 0;
    if (alpha > 0) {
        double la = std::log(alpha);
        for (int n = 0; n <= t.levels; ++n) {
            double base = 2.0 * n * la;
            for (int k : {2 * n, 2 * n + 1}) {
                double v = std::max(t.F_at1(k), t.G_at1(k));
                if (v > 0) {
                    double lt = base + (k % 2) * la + std::log(v);
                    peak = std::max(peak, lt);
                }
            }
        }
    }
    return 25u + static_cast<unsigned>(std::max(0.0, peak / std::log(10.0)));
}

struct trig_mp {
    mpf c_wv, s_wv, c_vw, s_vw;
    double err_bound = 0;
    int terms = 0;
};

// g == npos means x = 1
inline trig_mp trig_eval_mp(const kernel_table& t, double alpha, std::size_t g, double tol) {
    trig_mp r{mpf(1), mpf(0), mpf(1), mpf(0)};
    if (alpha == 0.0) return r;

    // truncation index certified by the analytic tail bound
    int nstop = -1;
    int limit = t.structural ? t.levels + 1 : t.order;
    for (int n = 1; n <= limit; ++n) {
        if (remainder_bound(t, alpha, n) < tol) {
            nstop = n;
            break;
        }
    }
    if (nstop < 0)
        throw numeric_error("trig series: table order insufficient for this (alpha, tol)");
    r.err_bound = remainder_bound(t, alpha, nstop);
    r.terms = nstop;

    bool at_one = (g == static_cast<std::size_t>(-1));
    mpf a(alpha), a2 = a * a;
    mpf apow(1); // alpha^{2n}
    mpf c1(0), s1(0), c2(0), s2(0);
    int nmax = std::min(nstop - 1, t.levels);
    for (int n = 0; n <= nmax; ++n) {
        // at x = 1 the extended-precision table entries lower the noise floor
        long double fe = at_one ? t.F_at1_ext(2 * n) : t.F_at(2 * n, g);
        long double fo = at_one ? t.F_at1_ext(2 * n + 1) : t.F_at(2 * n + 1, g);
        long double ge = at_one ? t.G_at1_ext(2 * n) : t.G_at(2 * n, g);
        long double go = at_one ? t.G_at1_ext(2 * n + 1) : t.G_at(2 * n + 1, g);
        mpf sgn = (n % 2) ? mpf(-1) : mpf(1);
        c1 += sgn * apow * fe;
        s1 += sgn * apow * a * fo;
        c2 += sgn * apow * ge;
        s2 += sgn * apow * a * go;
        apow *= a2;
    }
    r.c_wv = c1;
    r.s_wv = s1;
    r.c_vw = c2;
    r.s_vw = s2;
    return r;
}

class precision_guard {
public:
    explicit precision_guard(unsigned digits)
        : saved_(mpf::default_precision()) {
        mpf::default_precision(digits);
    }
    ~precision_guard() { mpf::default_precision(saved_); }

private:
    unsigned saved_;
};

} // namespace detail

inline double default_trig_tol(const kernel_table& t, double alpha) {
    return 1e-12 * std::max(1.0, alpha * alpha * t.F2_total);
}

inline trig_result trig_eval(const kernel_table& t, double alpha, std::size_t g, double tol) {
    detail::precision_guard pg(detail::trig_digits(t, alpha));
    auto mp = detail::trig_eval_mp(t, alpha, g, tol);
    trig_result r;
    r.alpha = alpha;
    r.x = (g == static_cast<std::size_t>(-1)) ? 1.0 : t.grid[g];
    r.c_wv = static_cast<double>(mp.c_wv);
    r.s_wv = static_cast<double>(mp.s_wv);
    r.c_vw = static_cast<double>(mp.c_vw);
    r.s_vw = static_cast<double>(mp.s_vw);
    r.err_bound = mp.err_bound;
    r.terms_used = mp.terms;
    return r;
}

inline trig_result trig_eval(const kernel_table& t, double alpha, double x, double tol) {
    return trig_eval(t, alpha, t.grid_index(x), tol);
}

inline trig_result trig_eval_at_one(const kernel_table& t, double alpha, double tol) {
    return trig_eval(t, alpha, static_cast<std::size_t>(-1), tol);
}

// The table coefficients are doubles, so each series carries an absolute
// rounding of about eps times its positive-term sum no matter how precisely
// the sum itself is carried out. This estimates the resulting noise floor of
// the Pythagorean combination; residual checks should allow for it.
inline double pythagorean_noise_floor(const kernel_table& t, double alpha) {
    double a2 = alpha * alpha;
    double pc1 = 0, ps1 = 0, pc2 = 0, ps2 = 0, apow = 1;
    for (int n = 0; n <= t.levels; ++n) {
        pc1 += apow * t.F_at1(2 * n);
        ps1 += apow * alpha * t.F_at1(2 * n + 1);
        pc2 += apow * t.G_at1(2 * n);
        ps2 += apow * alpha * t.G_at1(2 * n + 1);
        apow *= a2;
        if (!std::isfinite(apow)) return std::numeric_limits<double>::infinity();
    }
    return 0x1p-52 * (pc1 * pc2 + ps1 * ps2 + 1.0);
}

inline double pythagorean_residual(const kernel_table& t, double alpha, std::size_t g,
                                   double tol) {
    detail::precision_guard pg(detail::trig_digits(t, alpha));
    auto mp = detail::trig_eval_mp(t, alpha, g, tol);
    mpf res = mp.c_wv * mp.c_vw + mp.s_wv * mp.s_vw - 1;
    return std::abs(static_cast<double>(res));
}

inline double pythagorean_residual(const kernel_table& t, double alpha, double x, double tol) {
    return pythagorean_residual(t, alpha, t.grid_index(x), tol);
}

// Max absolute residual of the four one-sided derivative relations
//   D_W- C_WV = -alpha S_VW     D_W- S_WV =  alpha C_VW   (at W atoms)
//   D_V+ C_VW = -alpha S_WV     D_V+ S_VW =  alpha C_WV   (at V atoms)
// using the exact difference quotients of the step data.
inline double derivative_relation_residual(const kernel_table& t, double alpha, double tol) {
    if (alpha == 0.0) return 0.0;
    detail::precision_guard pg(detail::trig_digits(t, alpha));

    std::size_t ng = t.grid.size();
    std::vector<detail::trig_mp> at(ng);
    for (std::size_t g = 0; g < ng; ++g) at[g] = detail::trig_eval_mp(t, alpha, g, tol);
    auto one = detail::trig_eval_mp(t, alpha, static_cast<std::size_t>(-1), tol);

    mpf a(alpha);
    mpf worst(0);
    auto keep = [&](const mpf& r) {
        mpf m = abs(r);
        if (m > worst) worst = m;
    };

    // W side: predecessor of the first atom is x = 0, where C = 1, S = 0
    for (std::size_t k = 0; k < t.W.size(); ++k) {
        std::size_t g = t.grid_of_W[k];
        mpf cp = (k == 0) ? mpf(1) : at[t.grid_of_W[k - 1]].c_wv;
        mpf sp = (k == 0) ? mpf(0) : at[t.grid_of_W[k - 1]].s_wv;
        mpf m(t.W.masses[k]);
        keep((at[g].c_wv - cp) / m + a * at[g].s_vw);
        keep((at[g].s_wv - sp) / m - a * at[g].c_vw);
    }
    // V side: successor of the last atom is x = 1
    for (std::size_t k = 0; k < t.V.size(); ++k) {
        std::size_t g = t.grid_of_V[k];
        const auto& nx = (k + 1 < t.V.size()) ? at[t.grid_of_V[k + 1]] : one;
        mpf mu(t.V.masses[k]);
        keep((nx.c_vw - at[g].c_vw) / mu + a * at[g].s_wv);
        keep((nx.s_vw - at[g].s_vw) / mu - a * at[g].c_wv);
    }
    return static_cast<double>(worst);
}

} // namespace kf
