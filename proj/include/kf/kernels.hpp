#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "measure.hpp"

namespace kf {

// compensated accumulator in extended precision for the level recursion
struct kahan_ext {
    long double s = 0.0L, c = 0.0L;
    void add(long double x) {
        long double y = x - c;
        long double t = s + y;
        c = (t - s) - y;
        s = t;
    }
    long double sum() const { return s; }
};

// Diagonal kernel sequences F_n(x,x), G_n(x,x) built by alternating
// Stieltjes integrations:
//
//   p_{n+1}(x) = int_(0,x] int_[0,s) p_n(xi) dV(xi) dW(s),  p_0 = 1
//
// with F_{2n} = p_n and F_{2n+1} = q_n (q_0 = W), and the G sequences with
// the roles of W and V swapped. Everything is an exact finite sum for atomic
// data; one merged sweep per level costs O(#atoms).
//
// Entries decay super-factorially, so at some level every increment
// underflows to exact zero (or, for purely atomic measures, the integrals
// terminate combinatorially). The table stops storing levels there; entries
// beyond `levels` are zero.
struct kernel_table {
    int order = 0;  // requested K
    int levels = 0; // last stored level n; F_{2n},... are 0 for n > levels
    bool terminated = false; // true when the sequences vanished before the K cap
    // Termination is structural when the measures admit no deeper alternating
    // atom chain, so entries beyond `levels` are exact zeros. Otherwise the
    // increments underflowed and zeros beyond `levels` are approximations.
    bool structural = false;

    std::vector<double> grid; // merged atom positions, ascending, unique
    // value tables indexed [n][grid point], n = 0..levels
    std::vector<std::vector<double>> F_even, F_odd, G_even, G_odd;
    std::vector<double> F1_, G1_; // F_k(1,1), G_k(1,1), k = 0..2*levels+1
    // The values at x = 1 are also kept in extended precision: the secular
    // series cancels through terms of size cosh(sqrt(lambda)), so the extra
    // mantissa bits directly lower the noise floor of root finding.
    std::vector<long double> F1x_, G1x_;

    double F2_total = 0, W_total = 0, V_total = 0;
    atomic_measure W, V;
    std::vector<std::size_t> grid_of_W, grid_of_V; // grid index of each atom

    double F_at1(int k) const {
        return (k >= 0 && k < static_cast<int>(F1_.size())) ? F1_[static_cast<std::size_t>(k)] : 0.0;
    }
    double G_at1(int k) const {
        return (k >= 0 && k < static_cast<int>(G1_.size())) ? G1_[static_cast<std::size_t>(k)] : 0.0;
    }
    long double F_at1_ext(int k) const {
        return (k >= 0 && k < static_cast<int>(F1x_.size())) ? F1x_[static_cast<std::size_t>(k)] : 0.0L;
    }
    long double G_at1_ext(int k) const {
        return (k >= 0 && k < static_cast<int>(G1x_.size())) ? G1x_[static_cast<std::size_t>(k)] : 0.0L;
    }

    // value of F_k(x,x) / G_k(x,x) at a grid index, 0 beyond stored levels
    double F_at(int k, std::size_t g) const {
        int n = k / 2;
        if (n > levels) return 0.0;
        return (k % 2 == 0) ? F_even[static_cast<std::size_t>(n)][g] : F_odd[static_cast<std::size_t>(n)][g];
    }
    double G_at(int k, std::size_t g) const {
        int n = k / 2;
        if (n > levels) return 0.0;
        return (k % 2 == 0) ? G_even[static_cast<std::size_t>(n)][g] : G_odd[static_cast<std::size_t>(n)][g];
    }

    std::size_t grid_index(double x) const {
        auto it = std::lower_bound(grid.begin(), grid.end(), x);
        if (it == grid.end() || *it != x) throw error("x is not a grid point of the kernel table");
        return static_cast<std::size_t>(it - grid.begin());
    }
};

inline kernel_table diagonal_tables(const atomic_measure& W, const atomic_measure& V, int K) {
    if (K < 1) throw error("diagonal_tables: K must be >= 1");
    if (W.size() == 0 || V.size() == 0) throw error("diagonal_tables: empty measure");
    if (W.chi != chirality::right_continuous || V.chi != chirality::left_continuous)
        throw error("diagonal_tables: W must be right_continuous and V left_continuous");

    kernel_table t;
    t.order = K;
    t.W = W;
    t.V = V;
    t.W_total = W.total_mass;
    t.V_total = V.total_mass;

    const std::size_t nw = W.size(), nv = V.size();

    // merged grid; ties between W and V collapse to one grid point
    t.grid.reserve(nw + nv);
    {
        std::size_t i = 0, j = 0;
        while (i < nw || j < nv) {
            double p;
            if (j == nv || (i < nw && W.positions[i] <= V.positions[j]))
                p = W.positions[i];
            else
                p = V.positions[j];
            if (t.grid.empty() || t.grid.back() != p) t.grid.push_back(p);
            while (i < nw && W.positions[i] == p) ++i;
            while (j < nv && V.positions[j] == p) ++j;
        }
    }
    t.grid_of_W.resize(nw);
    t.grid_of_V.resize(nv);
    for (std::size_t i = 0; i < nw; ++i) t.grid_of_W[i] = t.grid_index(W.positions[i]);
    for (std::size_t j = 0; j < nv; ++j) t.grid_of_V[j] = t.grid_index(V.positions[j]);

    const std::size_t ng = t.grid.size();

    // Current-level increments. p-type sequences jump at W atoms for F and at
    // V atoms for G. Level 0 of the p sequences is the constant 1, marked by
    // the `const_one` flags instead of increments.
    std::vector<long double> iFp, iFq(W.masses.begin(), W.masses.end()), iGp,
        iGq(V.masses.begin(), V.masses.end());
    bool f_const_one = true, g_const_one = true;

    // Writes the value tables for the current level and F/G at 1.
    auto emit = [&]() {
        std::vector<double> fe(ng), fo(ng), ge(ng), go(ng);
        std::size_t iw = 0, jv = 0;
        kahan_ext aFp, aFq, aGp, aGq;
        for (std::size_t g = 0; g < ng; ++g) {
            double x = t.grid[g];
            // F values at x include W atoms <= x
            while (iw < nw && W.positions[iw] <= x) {
                if (!f_const_one) aFp.add(iFp[iw]);
                aFq.add(iFq[iw]);
                ++iw;
            }
            // G values at x include V atoms < x only
            ge[g] = g_const_one ? 1.0 : static_cast<double>(aGp.sum());
            go[g] = static_cast<double>(aGq.sum());
            while (jv < nv && V.positions[jv] <= x) {
                if (!g_const_one) aGp.add(iGp[jv]);
                aGq.add(iGq[jv]);
                ++jv;
            }
            fe[g] = f_const_one ? 1.0 : static_cast<double>(aFp.sum());
            fo[g] = static_cast<double>(aFq.sum());
        }
        while (jv < nv) {
            if (!g_const_one) aGp.add(iGp[jv]);
            aGq.add(iGq[jv]);
            ++jv;
        }
        t.F_even.push_back(std::move(fe));
        t.F_odd.push_back(std::move(fo));
        t.G_even.push_back(std::move(ge));
        t.G_odd.push_back(std::move(go));
        t.F1x_.push_back(f_const_one ? 1.0L : aFp.sum());
        t.F1x_.push_back(aFq.sum());
        t.G1x_.push_back(g_const_one ? 1.0L : aGp.sum());
        t.G1x_.push_back(aGq.sum());
        t.F1_.push_back(static_cast<double>(t.F1x_[t.F1x_.size() - 2]));
        t.F1_.push_back(static_cast<double>(t.F1x_.back()));
        t.G1_.push_back(static_cast<double>(t.G1x_[t.G1x_.size() - 2]));
        t.G1_.push_back(static_cast<double>(t.G1x_.back()));
    };

    emit(); // level 0
    t.F2_total = 0;

    for (int n = 1; n <= K; ++n) {
        std::vector<long double> nFp(nw), nFq(nw), nGp(nv), nGq(nv);
        // one merged sweep; at coinciding positions W atoms are processed
        // before V atoms, which realizes the <= / < endpoint conventions
        std::size_t iw = 0, jv = 0;
        kahan_ext pF, qF, pG, qG; // running values of the current level
        kahan_ext accFp, accFq;   // int over [0, s) of p/q against dV
        kahan_ext accGp, accGq;   // int over (0, s] of the G pair against dW
        while (iw < nw || jv < nv) {
            bool takeW = (jv == nv) || (iw < nw && W.positions[iw] <= V.positions[jv]);
            if (takeW) {
                long double m = W.masses[iw];
                nFp[iw] = accFp.sum() * m;
                nFq[iw] = accFq.sum() * m;
                if (!f_const_one) pF.add(iFp[iw]);
                qF.add(iFq[iw]);
                long double pGv = g_const_one ? 1.0L : pG.sum();
                accGp.add(pGv * m);
                accGq.add(qG.sum() * m);
                ++iw;
            } else {
                long double mu = V.masses[jv];
                long double pFv = f_const_one ? 1.0L : pF.sum();
                accFp.add(pFv * mu);
                accFq.add(qF.sum() * mu);
                nGp[jv] = accGp.sum() * mu;
                nGq[jv] = accGq.sum() * mu;
                if (!g_const_one) pG.add(iGp[jv]);
                qG.add(iGq[jv]);
                ++jv;
            }
        }
        iFp = std::move(nFp);
        iFq = std::move(nFq);
        iGp = std::move(nGp);
        iGq = std::move(nGq);
        f_const_one = g_const_one = false;

        bool all_zero = true;
        for (long double x : iFp) all_zero = all_zero && x == 0.0L;
        for (long double x : iFq) all_zero = all_zero && x == 0.0L;
        for (long double x : iGp) all_zero = all_zero && x == 0.0L;
        for (long double x : iGq) all_zero = all_zero && x == 0.0L;
        if (all_zero) {
            t.terminated = true;
            break;
        }
        emit();
        t.levels = n;
        if (n == 1) t.F2_total = t.F_at1(2);
    }
    t.F2_total = t.F_at1(2);

    if (t.terminated) {
        // Maximal alternating chains v < w <= v' < w' <= ... (F side) and
        // w <= v < w' <= v' ... (G side). F_{2n} is an empty sum exactly when
        // n exceeds the chain capacity, and similarly for G.
        auto chain_capacity = [&](bool v_first) {
            std::size_t i = 0, j = 0; // i -> W, j -> V
            int pairs = 0;
            double cur = -1.0;
            bool want_v = v_first;
            bool exceed = true; // next pick must be > cur (true) or >= cur (false)
            for (;;) {
                if (want_v) {
                    while (j < nv && (exceed ? V.positions[j] <= cur : V.positions[j] < cur)) ++j;
                    if (j == nv) break;
                    cur = V.positions[j];
                    exceed = true; // a w after a v needs w > v
                    if (!v_first) ++pairs;
                } else {
                    while (i < nw && (exceed ? W.positions[i] <= cur : W.positions[i] < cur)) ++i;
                    if (i == nw) break;
                    cur = W.positions[i];
                    exceed = false; // a v after a w needs v >= w
                    if (v_first) ++pairs;
                }
                want_v = !want_v;
            }
            return pairs;
        };
        int capF = chain_capacity(true);
        int capG = chain_capacity(false);
        t.structural = t.levels >= std::max(capF, capG);
    }
    return t;
}

// coefficients of the periodic secular polynomial/series
// f(z) = sum_{n>=1} (-1)^n (F_{2n}(1,1) + G_{2n}(1,1)) z^n; index n of the
// returned vector holds a_n (a_0 = 0)
inline std::vector<double> secular_coefficients(const kernel_table& t) {
    std::vector<double> a(static_cast<std::size_t>(t.levels) + 1, 0.0);
    double sign = -1.0;
    for (int n = 1; n <= t.levels; ++n) {
        a[static_cast<std::size_t>(n)] = sign * (t.F_at1(2 * n) + t.G_at1(2 * n));
        sign = -sign;
    }
    return a;
}

// coefficients of the Dirichlet secular series S_{W,V}(sqrt(z),1)/sqrt(z)
// = sum_{n>=0} (-1)^n F_{2n+1}(1,1) z^n
inline std::vector<double> dirichlet_secular_coefficients(const kernel_table& t) {
    std::vector<double> a(static_cast<std::size_t>(t.levels) + 1, 0.0);
    double sign = 1.0;
    for (int n = 0; n <= t.levels; ++n) {
        a[static_cast<std::size_t>(n)] = sign * t.F_at1(2 * n + 1);
        sign = -sign;
    }
    return a;
}

// Dominating tail for truncating the trig series at order n:
//   sum_{m>=n} alpha^{2m} F2^m / m! * (1 + alpha W(1) V(1))
// This comes from the factorial bound F_{2m}(1,1) <= F2^m/m! (and the same
// shape times W(1) resp. V(1) for the odd entries). Exactly zero once the
// table has terminated below n.
inline double remainder_bound(const kernel_table& t, double alpha, int n) {
    if (n < 1) throw error("remainder_bound: n must be >= 1");
    if (n > t.order && !t.structural) throw error("remainder_bound: n exceeds table order");
    if (alpha == 0.0) return 0.0;
    if (t.structural && n > t.levels) return 0.0;

    double y = alpha * alpha * t.F2_total;
    double factor = 1.0 + alpha * t.W_total * t.V_total;
    // tail of e^y starting at term n
    double logt = static_cast<double>(n) * std::log(y) - std::lgamma(static_cast<double>(n) + 1.0);
    if (logt > 700.0) return std::numeric_limits<double>::infinity();
    double term = std::exp(logt);
    double tail = 0.0;
    double m = static_cast<double>(n);
    for (int guard = 0; guard < 1000000; ++guard) {
        tail += term;
        m += 1.0;
        double ratio = y / m;
        term *= ratio;
        if (ratio < 1.0 && term < tail * 1e-18) {
            tail += term / (1.0 - ratio); // geometric closeout
            break;
        }
        if (!std::isfinite(tail)) return std::numeric_limits<double>::infinity();
    }
    return tail * factor;
}

// Generalized Maclaurin sum d_0 + sum_{k>=1} d_k F_k(x,x) at a grid index.
// The coefficient tail must be dominated by the factorial envelope at the
// requested tolerance, otherwise this refuses to answer.
inline double maclaurin_eval(std::span<const double> d, const kernel_table& t, std::size_t g,
                             double tol = 1e-12) {
    if (d.empty()) return 0.0;
    double env_scale = std::max(1.0, std::max(t.W_total, t.V_total));
    // envelope for F_k(1,1): F2^floor(k/2)/floor(k/2)! times W(1) for odd k
    auto envelope = [&](std::size_t k) {
        double n = std::floor(static_cast<double>(k) / 2.0);
        double lg = n * std::log(std::max(t.F2_total, 1e-300)) - std::lgamma(n + 1.0);
        return env_scale * std::exp(lg);
    };
    kahan acc;
    acc.add(d[0]);
    std::size_t kmax = d.size() - 1;
    double tail_beyond_table = 0.0;
    for (std::size_t k = 1; k <= kmax; ++k) {
        if (d[k] == 0.0) continue;
        int ki = static_cast<int>(k);
        if (ki / 2 <= t.levels)
            acc.add(d[k] * t.F_at(ki, g));
        else if (!t.structural)
            tail_beyond_table += std::abs(d[k]) * envelope(k);
    }
    if (tail_beyond_table >= tol)
        throw numeric_error("maclaurin_eval: coefficient tail exceeds tolerance at table order");
    return acc.sum();
}

inline double maclaurin_eval(std::span<const double> d, const kernel_table& t, double x,
                             double tol = 1e-12) {
    return maclaurin_eval(d, t, t.grid_index(x), tol);
}

// CSV export of the diagonal values at 1
inline void write_csv(const kernel_table& t, std::ostream& os) {
    os.precision(17);
    os << "n,F_even,F_odd,G_even,G_odd\n";
    for (int n = 0; n <= t.levels; ++n)
        os << n << "," << t.F_at1(2 * n) << "," << t.F_at1(2 * n + 1) << "," << t.G_at1(2 * n)
           << "," << t.G_at1(2 * n + 1) << "\n";
}

} // namespace kf
