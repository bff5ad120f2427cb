#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include <kf/spectrum.hpp>

#include "helpers.hpp"

using namespace kf;

namespace {

kernel_table classical_table(std::size_t res, int K = 200) {
    auto W = compile(uniform_spec(chirality::right_continuous), res);
    auto V = compile(uniform_spec(chirality::left_continuous), res);
    return diagonal_tables(W, V, K);
}

kernel_table two_site_table() {
    auto V = make_atomic({{0.25, 0.5}, {0.75, 0.5}}, chirality::left_continuous);
    auto W = make_atomic({{0.5, 0.5}, {1.0 - 1e-9, 0.5}}, chirality::right_continuous);
    return diagonal_tables(W, V, 40);
}

constexpr double pi = 3.14159265358979323846;

} // namespace

TEST_CASE("secular function: classical limit and the hand-solved polynomial") {
    SECTION("lambda = 0 is always a periodic root and a Dirichlet zero of S") {
        auto t = classical_table(128);
        CHECK(secular(t, 0.0, boundary::periodic) == 0.0);
        CHECK(secular(t, 0.0, boundary::dirichlet) == 0.0);
    }
    SECTION("classical values follow 2 cos(sqrt l) - 2 and sin(sqrt l)") {
        auto t = classical_table(512);
        for (double lam : {3.0, 10.0, 40.0, 120.0, 500.0}) {
            double sl = std::sqrt(lam);
            // discretization error of the compiled uniform grid grows with lambda
            double tol = 1e-4 + 5e-6 * lam;
            CHECK(secular(t, lam, boundary::periodic) ==
                  Catch::Approx(2.0 * std::cos(sl) - 2.0).margin(tol));
            CHECK(secular(t, lam, boundary::dirichlet) ==
                  Catch::Approx(std::sin(sl)).margin(tol));
        }
    }
    SECTION("two-site measures give -lambda + lambda^2/16") {
        auto t = two_site_table();
        for (double lam : {2.0, 8.0, 12.0, 20.0}) {
            CHECK(secular(t, lam, boundary::periodic) ==
                  Catch::Approx(-lam + lam * lam / 16.0).epsilon(1e-12));
        }
        CHECK(std::abs(secular(t, 16.0, boundary::periodic)) < 1e-12);
    }
}

TEST_CASE("solve_spectrum reproduces the classical torus spectrum") {
    auto t = classical_table(512);
    auto spec = solve_spectrum(t, boundary::periodic, 5);
    REQUIRE(spec.eigenpairs.size() == 5);
    std::vector<double> want = {0.0, 4 * pi * pi, 4 * pi * pi, 16 * pi * pi, 16 * pi * pi};
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i] == 0.0)
            CHECK(spec.eigenpairs[i].lambda == 0.0);
        else
            CHECK(spec.eigenpairs[i].lambda == Catch::Approx(want[i]).epsilon(5e-3));
    }
    CHECK(spec.eigenpairs[0].multiplicity == 1);
    for (std::size_t i = 1; i < 5; ++i) CHECK(spec.eigenpairs[i].multiplicity == 2);
    CHECK(spec.gamma.size() == 5);
    CHECK(spec.gamma[1] == Catch::Approx(1.0 + spec.eigenpairs[1].lambda));

    auto specd = solve_spectrum(t, boundary::dirichlet, 5);
    REQUIRE(specd.eigenpairs.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        double want_d = std::pow((static_cast<double>(i) + 1) * pi, 2.0);
        CHECK(specd.eigenpairs[i].lambda == Catch::Approx(want_d).epsilon(5e-3));
        CHECK(specd.eigenpairs[i].multiplicity == 1);
    }
}

TEST_CASE("two-site spectrum is {0, 16} and matches the hand-solved eigenvector") {
    auto t = two_site_table();
    auto spec = solve_spectrum(t, boundary::periodic, 2);
    REQUIRE(spec.eigenpairs.size() == 2);
    CHECK(spec.eigenpairs[0].lambda == 0.0);
    CHECK(spec.eigenpairs[1].lambda == Catch::Approx(16.0).epsilon(1e-10));

    auto pairs = eigenvector(t, spec.eigenpairs[1].lambda, boundary::periodic);
    REQUIRE(pairs.size() == 1);
    const auto& e = pairs[0];
    // boundary rows at 16 are [4,-1] and [-1,1/4]; null vector (1,4)/sqrt(17)
    CHECK(e.a == Catch::Approx(1.0 / std::sqrt(17.0)).epsilon(1e-9));
    CHECK(e.b == Catch::Approx(4.0 / std::sqrt(17.0)).epsilon(1e-9));
    // samples at the V-atoms alternate: (1, -1) in L2_V with masses (1/2, 1/2)
    REQUIRE(e.values.size() == 2);
    CHECK(e.values[0] == Catch::Approx(1.0).epsilon(1e-9));
    CHECK(e.values[1] == Catch::Approx(-1.0).epsilon(1e-9));
    // unit L2_V norm
    double n2 = 0;
    for (std::size_t j = 0; j < 2; ++j) n2 += e.values[j] * e.values[j] * t.V.masses[j];
    CHECK(n2 == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("classical eigenvectors span the cos/sin pair") {
    auto t = classical_table(256);
    auto spec = solve_spectrum(t, boundary::periodic, 3);
    double lam = spec.eigenpairs[1].lambda;
    auto pairs = eigenvector(t, lam, boundary::periodic);
    REQUIRE(pairs.size() == 2);

    const auto& V = t.V;
    auto dotV = [&](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0;
        for (std::size_t j = 0; j < V.size(); ++j) s += x[j] * y[j] * V.masses[j];
        return s;
    };
    // orthonormal in L2_V
    CHECK(dotV(pairs[0].values, pairs[0].values) == Catch::Approx(1.0).epsilon(1e-10));
    CHECK(dotV(pairs[1].values, pairs[1].values) == Catch::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(dotV(pairs[0].values, pairs[1].values)) < 1e-10);

    // sqrt(2) cos(2 pi x) lies in the span up to discretization error
    std::vector<double> target(V.size());
    for (std::size_t j = 0; j < V.size(); ++j)
        target[j] = std::sqrt(2.0) * std::cos(2.0 * pi * V.positions[j]);
    double c0 = dotV(target, pairs[0].values), c1 = dotV(target, pairs[1].values);
    double resid2 = dotV(target, target) - c0 * c0 - c1 * c1;
    CHECK(std::abs(resid2) < 1e-3);

    SECTION("lambda = 0 gives the constant and non-roots are rejected") {
        auto zero = eigenvector(t, 0.0, boundary::periodic);
        REQUIRE(zero.size() == 1);
        CHECK(zero[0].values[0] == Catch::Approx(1.0 / std::sqrt(t.V_total)).epsilon(1e-12));
        CHECK_THROWS_AS(eigenvector(t, lam * 1.08, boundary::periodic), numeric_error);
    }
}

TEST_CASE("random atomic measures: root count, residuals, min-max ordering") {
    std::mt19937_64 gen(411);
    for (int trial = 0; trial < 6; ++trial) {
        std::size_t n = 2 + static_cast<std::size_t>(gen() % 5);
        auto [W, V] = th::random_alternating(gen, n);
        auto t = diagonal_tables(W, V, 4 * static_cast<int>(n) + 8);
        auto per = solve_spectrum(t, boundary::periodic, n);
        auto dir = solve_spectrum(t, boundary::dirichlet, n);

        // an N-site system carries exactly N periodic and N Dirichlet modes
        REQUIRE(per.eigenpairs.size() == n);
        REQUIRE(dir.eigenpairs.size() == n);
        CHECK(per.eigenpairs[0].lambda == 0.0);
        CHECK(dir.eigenpairs[0].lambda > 0.0);

        for (const auto& e : per.eigenpairs) {
            CHECK(e.secular_residual <= 1e-10 * secular_scale(t, std::max(e.lambda, 1.0)));
            double n2 = 0;
            for (std::size_t j = 0; j < V.size(); ++j)
                n2 += e.values[j] * e.values[j] * V.masses[j];
            CHECK(n2 == Catch::Approx(1.0).epsilon(1e-10));
        }
        // min-max: k-th periodic eigenvalue is at most the k-th Dirichlet one
        for (std::size_t k = 0; k < n; ++k)
            CHECK(per.eigenpairs[k].lambda <= dir.eigenpairs[k].lambda * (1.0 + 1e-10));
    }
}

TEST_CASE("growth exponent estimators") {
    SECTION("coefficient estimator on classical 2/(2n)! values") {
        std::vector<double> coeffs(45, 0.0);
        for (std::size_t n = 1; n < coeffs.size(); ++n)
            coeffs[n] = 2.0 / std::exp(std::lgamma(2.0 * static_cast<double>(n) + 1.0));
        auto g30 = growth_exponent(coeffs, 30);
        CHECK(g30.rho_coeff > 0.50);
        CHECK(g30.rho_coeff < 0.56);
        auto g5 = growth_exponent(coeffs, 5);
        CHECK(g5.rho_coeff > g30.rho_coeff); // finite-n bias decays with n
        CHECK(g5.rho_coeff <= 0.6);
    }
    SECTION("computed classical table matches the closed form") {
        auto t = classical_table(512);
        auto g = growth_exponent(secular_coefficients(t), 5);
        CHECK(g.rho_coeff > 0.5);
        CHECK(g.rho_coeff <= 0.6);
    }
    SECTION("eigenvalue fit on the classical Dirichlet spectrum") {
        auto t = classical_table(512);
        auto spec = solve_spectrum(t, boundary::dirichlet, 40);
        auto g = growth_exponent(spec);
        CHECK(g.rho_fit == Catch::Approx(0.5).margin(0.02));
        // fitted lower bound lambda_n >= C n^{1/rho} holds on the range
        std::size_t i = 0;
        for (const auto& e : spec.eigenpairs) {
            ++i;
            CHECK(e.lambda >=
                  g.fit_constant * std::pow(static_cast<double>(i), 1.0 / g.rho_fit) * (1 - 1e-12));
        }
    }
    SECTION("too few terms is an error") {
        std::vector<double> tiny(8, 0.1);
        CHECK_THROWS_AS(growth_exponent(tiny, 5), numeric_error);
    }
}

TEST_CASE("tail sums: Basel value, divergence flag, embedding sums") {
    auto t = classical_table(512);
    auto spec = solve_spectrum(t, boundary::dirichlet, 40);

    auto basel = tail_sum(spec, 1.0);
    CHECK_FALSE(basel.divergent);
    CHECK(basel.partial_sum + basel.remainder == Catch::Approx(1.0 / 6.0).epsilon(5e-3));

    auto div = tail_sum(spec, 0.4);
    CHECK(div.divergent);
    CHECK(std::isinf(div.remainder));

    double h1 = hilbert_schmidt_sum(spec, 0.0, 1.0);
    double h2 = hilbert_schmidt_sum(spec, 0.0, 2.0);
    double h3 = hilbert_schmidt_sum(spec, 0.0, 3.0);
    CHECK(std::isfinite(h1));
    CHECK(h1 > h2);
    CHECK(h2 > h3);
}

TEST_CASE("fractional calculus round trips and Sobolev norms") {
    std::mt19937_64 gen(77);
    auto [W, V] = th::random_alternating(gen, 6);
    auto t = diagonal_tables(W, V, 30);
    auto spec = solve_spectrum(t, boundary::periodic, 6);

    std::vector<double> f = {0.3, -1.2, 0.8, 0.05, -0.4, 1.1};
    SECTION("s = 0 is the identity and Parseval holds") {
        CHECK(fractional_apply(spec, f, 0.0) == f);
        double l2 = 0;
        for (double x : f) l2 += x * x;
        CHECK(sobolev_norm(spec, f, 0.0) == Catch::Approx(l2).epsilon(1e-14));
    }
    SECTION("solve then apply restores the input to 1e-12") {
        for (double s : {0.5, 1.0, 1.7}) {
            auto u = fractional_solve(spec, f, s);
            auto back = fractional_apply(spec, u, s);
            for (std::size_t i = 0; i < f.size(); ++i)
                CHECK(back[i] == Catch::Approx(f[i]).epsilon(1e-12));
        }
    }
    SECTION("single mode: u = nu_1 / (1 + lambda_1)") {
        std::vector<double> e1 = {0.0, 1.0};
        auto u = fractional_solve(spec, e1, 1.0);
        CHECK(u[1] == Catch::Approx(1.0 / (1.0 + spec.eigenpairs[1].lambda)).epsilon(1e-14));
    }
    SECTION("regularity shift: solving moves the norm index by 2s") {
        double m = 1.0, s = 0.7;
        auto u = fractional_solve(spec, f, s);
        CHECK(sobolev_norm(spec, u, m + 2.0 * s) ==
              Catch::Approx(sobolev_norm(spec, f, m)).epsilon(1e-12));
    }
    SECTION("mode count overflow is an error") {
        std::vector<double> big(spec.gamma.size() + 1, 1.0);
        CHECK_THROWS_AS(fractional_apply(spec, big, 1.0), error);
    }
}

TEST_CASE("spectrum serialization") {
    auto t = two_site_table();
    auto spec = solve_spectrum(t, boundary::periodic, 2);
    auto j = spectrum_to_json(spec);
    CHECK(j["bc"] == "periodic");
    CHECK(j["eigenvalues"].size() == 2);
    CHECK(j["multiplicities"][0] == 1);
    CHECK(j["gamma"][1].get<double>() == Catch::Approx(17.0).epsilon(1e-9));

    std::ostringstream os;
    write_csv(spec, os);
    auto text = os.str();
    CHECK(text.find("index,lambda,multiplicity") == 0);
    CHECK(text.find("\n1,") != std::string::npos);
}
