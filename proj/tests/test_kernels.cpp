#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include <kf/kernels.hpp>

#include "helpers.hpp"

using namespace kf;

namespace {
double factorial(int n) {
    double f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}
} // namespace

TEST_CASE("classical diagonals reproduce x^k/k!") {
    // half-open endpoint conventions on coincident uniform grids give a
    // first-order error about 2n/(2*res); res 8192 puts n=5 below 0.1%
    int res = 8192;
    auto W = compile(uniform_spec(chirality::right_continuous), res);
    auto V = compile(uniform_spec(chirality::left_continuous), res);
    auto t = diagonal_tables(W, V, 8);
    for (int n = 1; n <= 5; ++n) {
        double expect = 1.0 / factorial(2 * n);
        CHECK(t.F_at1(2 * n) == Catch::Approx(expect).epsilon(1e-3));
        CHECK(t.G_at1(2 * n) == Catch::Approx(expect).epsilon(1e-3));
    }
    // spot-check an interior grid point: F_4(x,x) = x^4/4!
    std::size_t g = t.grid_index(W.positions[res / 2]);
    double x = t.grid[g];
    CHECK(t.F_at(4, g) == Catch::Approx(x * x * x * x / 24.0).epsilon(2e-3));
}

TEST_CASE("first-order diagonals are the cumulative measures") {
    std::mt19937_64 gen(101);
    auto W = th::random_atomic(gen, 11, chirality::right_continuous);
    auto V = th::random_atomic(gen, 7, chirality::left_continuous);
    auto t = diagonal_tables(W, V, 6);
    for (std::size_t g = 0; g < t.grid.size(); ++g) {
        CHECK(t.F_at(1, g) == Catch::Approx(th::cum_le(W, t.grid[g])).margin(1e-14));
        CHECK(t.G_at(1, g) == Catch::Approx(th::cum_lt(V, t.grid[g])).margin(1e-14));
    }
}

TEST_CASE("hand-derived two-site table") {
    auto V = make_atomic({{0.25, 0.5}, {0.75, 0.5}}, chirality::left_continuous);
    auto W = make_atomic({{0.5, 0.5}, {0.999999, 0.5}}, chirality::right_continuous);
    auto t = diagonal_tables(W, V, 8);
    CHECK(t.F_at1(2) == Catch::Approx(0.75).margin(1e-15));
    CHECK(t.G_at1(2) == Catch::Approx(0.25).margin(1e-15));
    CHECK(t.F_at1(4) + t.G_at1(4) == Catch::Approx(1.0 / 16).margin(1e-15));
    // atomic termination: two interleavings exhaust the integrals
    CHECK(t.terminated);
    CHECK(t.F_at1(6) == 0.0);
    CHECK(t.G_at1(6) == 0.0);
}

TEST_CASE("brute-force nested-loop oracle matches the prefix-sum recursion") {
    std::mt19937_64 gen(103);
    for (int trial = 0; trial < 8; ++trial) {
        auto W = th::random_atomic(gen, 7, chirality::right_continuous);
        auto V = th::random_atomic(gen, 8, chirality::left_continuous);
        auto t = diagonal_tables(W, V, 4);
        for (int n = 1; n <= 3; ++n) {
            for (std::size_t g = 0; g < t.grid.size(); g += 3) {
                double x = t.grid[g];
                double fe = th::brute_F_even(W, V, n, x);
                double fo = th::brute_F_odd(W, V, n, x);
                double ge = th::brute_G_even(W, V, n, x);
                double go = th::brute_G_odd(W, V, n, x);
                CHECK(t.F_at(2 * n, g) == Catch::Approx(fe).margin(1e-12 * (1 + std::abs(fe))));
                CHECK(t.F_at(2 * n + 1, g) == Catch::Approx(fo).margin(1e-12 * (1 + std::abs(fo))));
                CHECK(t.G_at(2 * n, g) == Catch::Approx(ge).margin(1e-12 * (1 + std::abs(ge))));
                CHECK(t.G_at(2 * n + 1, g) == Catch::Approx(go).margin(1e-12 * (1 + std::abs(go))));
            }
        }
    }
}

TEST_CASE("monotonicity and the factorial bound") {
    std::mt19937_64 gen(107);
    auto W = th::random_atomic(gen, 10, chirality::right_continuous);
    auto V = th::random_atomic(gen, 10, chirality::left_continuous);
    auto t = diagonal_tables(W, V, 12);
    for (int n = 0; n <= t.levels; ++n) {
        for (std::size_t g = 1; g < t.grid.size(); ++g)
            CHECK(t.F_at(2 * n, g) >= t.F_at(2 * n, g - 1));
        double bound = std::pow(t.F2_total, n) / factorial(n);
        CHECK(t.F_at1(2 * n) <= bound * (1 + 1e-12));
    }
    // termination index: each iterated integral needs n interleaved pairs
    CHECK(t.terminated);
    CHECK(t.levels <= static_cast<int>(std::min(W.size(), V.size())));
}

TEST_CASE("secular coefficients alternate and start at -V(1)W(1)") {
    std::mt19937_64 gen(109);
    for (int trial = 0; trial < 10; ++trial) {
        auto W = th::random_atomic(gen, 9, chirality::right_continuous);
        auto V = th::random_atomic(gen, 8, chirality::left_continuous);
        auto t = diagonal_tables(W, V, 12);
        auto a = secular_coefficients(t);
        CHECK(a[1] == Catch::Approx(-W.total_mass * V.total_mass).margin(1e-13));
        for (std::size_t n = 1; n < a.size(); ++n) {
            if (a[n] == 0.0) continue;
            CHECK((n % 2 == 1 ? a[n] < 0 : a[n] > 0));
        }
    }
}

TEST_CASE("classical secular coefficients approach 2/(2n)!") {
    auto W = compile(uniform_spec(chirality::right_continuous), 2048);
    auto V = compile(uniform_spec(chirality::left_continuous), 2048);
    auto t = diagonal_tables(W, V, 6);
    auto a = secular_coefficients(t);
    for (int n = 1; n <= 4; ++n) {
        double expect = (n % 2 ? -1 : 1) * 2.0 / factorial(2 * n);
        CHECK(a[static_cast<std::size_t>(n)] == Catch::Approx(expect).epsilon(2e-3));
    }
}

TEST_CASE("remainder bound dominates the classical cosine tail") {
    auto W = compile(uniform_spec(chirality::right_continuous), 512);
    auto V = compile(uniform_spec(chirality::left_continuous), 512);
    auto t = diagonal_tables(W, V, 30);
    double alpha = 1.0;
    double prev = std::numeric_limits<double>::infinity();
    for (int n = 1; n <= 8; ++n) {
        double b = remainder_bound(t, alpha, n);
        CHECK(b < prev);
        prev = b;
        // true truncation error of cos at order n
        double err = 0;
        for (int m = n; m <= 40; ++m) err += std::pow(alpha, 2 * m) / factorial(2 * m);
        CHECK(b >= err * 0.999);
    }
    CHECK(remainder_bound(t, 0.0, 1) == 0.0);
}

TEST_CASE("remainder bound is exactly zero beyond atomic termination") {
    std::mt19937_64 gen(113);
    auto W = th::random_atomic(gen, 5, chirality::right_continuous);
    auto V = th::random_atomic(gen, 5, chirality::left_continuous);
    auto t = diagonal_tables(W, V, 40);
    REQUIRE(t.terminated);
    CHECK(remainder_bound(t, 17.0, t.levels + 1) == 0.0);
}

TEST_CASE("maclaurin_eval recovers W, the sine series, and exp") {
    std::mt19937_64 gen(127);
    auto W = th::random_atomic(gen, 9, chirality::right_continuous);
    auto V = th::random_atomic(gen, 9, chirality::left_continuous);
    auto t = diagonal_tables(W, V, 16);

    std::vector<double> d{0.0, 1.0};
    for (std::size_t g = 0; g < t.grid.size(); ++g)
        CHECK(maclaurin_eval(d, t, g) == Catch::Approx(th::cum_le(W, t.grid[g])).margin(1e-13));

    // alternating odd powers of alpha make the generalized sine
    double alpha = 1.7;
    std::vector<double> ds(2 * static_cast<std::size_t>(t.levels) + 2, 0.0);
    double sign = 1;
    for (std::size_t n = 0; 2 * n + 1 < ds.size(); ++n) {
        ds[2 * n + 1] = sign * std::pow(alpha, 2.0 * static_cast<double>(n) + 1.0);
        sign = -sign;
    }
    std::size_t g = t.grid.size() / 2;
    kahan direct;
    sign = 1;
    for (std::size_t n = 0; 2 * n + 1 < ds.size(); ++n) {
        direct.add(ds[2 * n + 1] * t.F_at(static_cast<int>(2 * n + 1), g));
    }
    CHECK(maclaurin_eval(ds, t, g) == Catch::Approx(direct.sum()).margin(1e-13));

    // classical: all-ones coefficients sum to e^x
    auto Wu = compile(uniform_spec(chirality::right_continuous), 1024);
    auto Vu = compile(uniform_spec(chirality::left_continuous), 1024);
    auto tu = diagonal_tables(Wu, Vu, 20);
    std::vector<double> ones(30, 1.0);
    std::size_t gm = tu.grid_index(Wu.positions[511]);
    double x = tu.grid[gm];
    CHECK(maclaurin_eval(ones, tu, gm, 1e-9) == Catch::Approx(std::exp(x)).epsilon(5e-3));
}

TEST_CASE("kernel table CSV export") {
    auto V = make_atomic({{0.25, 0.5}, {0.75, 0.5}}, chirality::left_continuous);
    auto W = make_atomic({{0.5, 0.5}, {0.999999, 0.5}}, chirality::right_continuous);
    auto t = diagonal_tables(W, V, 8);
    std::stringstream ss;
    write_csv(t, ss);
    std::string first;
    std::getline(ss, first);
    CHECK(first == "n,F_even,F_odd,G_even,G_odd");
    int rows = 0;
    for (std::string line; std::getline(ss, line);) ++rows;
    CHECK(rows == t.levels + 1);
}
