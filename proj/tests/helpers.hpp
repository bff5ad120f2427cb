#pragma once

// Shared test utilities: random atomic measures and brute-force reference
// implementations used as oracles for the fast production code.

#include <random>
#include <vector>

#include <kf/measure.hpp>

namespace th {

// Random atomic measure with N distinct positions away from 0 and 1,
// masses bounded away from zero so the induced operators stay well
// conditioned.
inline kf::atomic_measure random_atomic(std::mt19937_64& gen, std::size_t n, kf::chirality chi,
                                        double total = 1.0) {
    std::uniform_real_distribution<double> jitter(0.15, 0.85);
    std::uniform_real_distribution<double> mass(0.5, 1.5);
    std::vector<std::pair<double, double>> atoms;
    for (std::size_t i = 0; i < n; ++i) {
        double p = (static_cast<double>(i) + jitter(gen)) / static_cast<double>(n);
        atoms.emplace_back(p, total * mass(gen) / static_cast<double>(n));
    }
    return kf::make_atomic(std::move(atoms), chi);
}

// Strictly alternating measure pair: N V-atoms with exactly one W-atom in
// every gap between consecutive V-atoms (including the wrap-around gap), so
// every cycle conductance 1/dW((y_j, y_{j+1}]) is finite. Adjacent V-atoms
// with no W-mass between them would merge into one effective site and drop
// the secular degree below N.
inline std::pair<kf::atomic_measure, kf::atomic_measure>
random_alternating(std::mt19937_64& gen, std::size_t n, double total = 1.0) {
    std::uniform_real_distribution<double> jitter(0.1, 0.9);
    std::uniform_real_distribution<double> gap(0.2, 0.8);
    std::uniform_real_distribution<double> mass(0.5, 1.5);
    std::vector<std::pair<double, double>> vat, wat;
    std::vector<double> y(n);
    for (std::size_t j = 0; j < n; ++j) {
        y[j] = (static_cast<double>(j) + jitter(gen)) / static_cast<double>(n);
        vat.emplace_back(y[j], total * mass(gen) / static_cast<double>(n));
    }
    // n+1 W-atoms: one below the first V-atom, one in each interior gap, one
    // above the last; both Dirichlet boundary conductances stay finite too
    for (std::size_t j = 0; j <= n; ++j) {
        double lo = (j == 0) ? 0.0 : y[j - 1];
        double hi = (j < n) ? y[j] : 1.0;
        double w = lo + gap(gen) * (hi - lo);
        wat.emplace_back(w, total * mass(gen) / static_cast<double>(n));
    }
    return {kf::make_atomic(std::move(wat), kf::chirality::right_continuous),
            kf::make_atomic(std::move(vat), kf::chirality::left_continuous)};
}

// W-cumulative value at x (atoms <= x), direct loop
inline double cum_le(const kf::atomic_measure& m, double x) {
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m.positions[i] <= x) s += m.masses[i];
    return s;
}

// V-cumulative value at x (atoms < x), direct loop
inline double cum_lt(const kf::atomic_measure& m, double x) {
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m.positions[i] < x) s += m.masses[i];
    return s;
}

// Brute-force diagonal kernels by nested loops, O(N^(2n)). Only usable for
// small n and small measures; this is the independent oracle for the
// prefix-sum recursion.
//
// F_{2n}(x,x): alternating integrals, outermost over (0,x] dW, then [0,s) dV,
// then (0,.] dW, ... down to the constant 1.
inline double brute_F_even(const kf::atomic_measure& W, const kf::atomic_measure& V, int n, double x) {
    if (n == 0) return 1.0;
    double s = 0;
    for (std::size_t i = 0; i < W.size(); ++i) {
        if (!(W.positions[i] <= x)) continue;
        double inner = 0;
        for (std::size_t j = 0; j < V.size(); ++j) {
            if (!(V.positions[j] < W.positions[i])) continue;
            inner += brute_F_even(W, V, n - 1, V.positions[j]) * V.masses[j];
        }
        s += inner * W.masses[i];
    }
    return s;
}

// F_{2n+1}(x,x): same alternation seeded with F_1(x,s) = W(s)
inline double brute_F_odd(const kf::atomic_measure& W, const kf::atomic_measure& V, int n, double x) {
    if (n == 0) return cum_le(W, x); // F_1(x,x) = W(x)
    double s = 0;
    for (std::size_t i = 0; i < W.size(); ++i) {
        if (!(W.positions[i] <= x)) continue;
        double inner = 0;
        for (std::size_t j = 0; j < V.size(); ++j) {
            if (!(V.positions[j] < W.positions[i])) continue;
            inner += brute_F_odd(W, V, n - 1, V.positions[j]) * V.masses[j];
        }
        s += inner * W.masses[i];
    }
    return s;
}

// G_{2n}(x,x): roles of W and V swapped, outermost over [0,x) dV
inline double brute_G_even(const kf::atomic_measure& W, const kf::atomic_measure& V, int n, double x) {
    if (n == 0) return 1.0;
    double s = 0;
    for (std::size_t j = 0; j < V.size(); ++j) {
        if (!(V.positions[j] < x)) continue;
        double inner = 0;
        for (std::size_t i = 0; i < W.size(); ++i) {
            if (!(W.positions[i] <= V.positions[j])) continue;
            inner += brute_G_even(W, V, n - 1, W.positions[i]) * W.masses[i];
        }
        s += inner * V.masses[j];
    }
    return s;
}

// G_{2n+1}(x,x): seeded with G_1(x,s) = V(s)
inline double brute_G_odd(const kf::atomic_measure& W, const kf::atomic_measure& V, int n, double x) {
    if (n == 0) return cum_lt(V, x); // G_1(x,x) = V(x)
    double s = 0;
    for (std::size_t j = 0; j < V.size(); ++j) {
        if (!(V.positions[j] < x)) continue;
        double inner = 0;
        for (std::size_t i = 0; i < W.size(); ++i) {
            if (!(W.positions[i] <= V.positions[j])) continue;
            inner += brute_G_odd(W, V, n - 1, W.positions[i]) * W.masses[i];
        }
        s += inner * V.masses[j];
    }
    return s;
}

} // namespace th
