#include "doctest.h"

#include "qbsde/rng.hpp"
#include "qbsde/timegrid.hpp"

#include <cmath>
#include <sstream>
#include <vector>

using namespace qbsde;

namespace {

std::vector<double> as_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("full net: hand-evaluated examples") {
    const auto g1 = TimeGrid::build(1.0, 0.5, 1);
    CHECK(as_vector(g1.times()) == std::vector<double>{0.0, 0.5, 1.0});

    const auto g2 = TimeGrid::build(1.0, 0.25, 2);
    const std::vector<double> expected{0.0, 0.5, 0.75, 0.875, 1.0};
    REQUIRE(g2.times().size() == expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) CHECK(g2.time(k) == doctest::Approx(expected[k]).epsilon(1e-15));
    CHECK(g2.switch_index() == 2);
    CHECK(g2.time(2) == 0.75);
}

TEST_CASE("full net: closed forms, snapping and invariants on random inputs") {
    const CounterRng rng(42);
    for (std::size_t trial = 0; trial < 50; ++trial) {
        double u[3];
        rng.uniforms(Stream::auxiliary, trial, 0, u);
        const double T = 0.1 + 5.0 * u[0];
        const double eps = T * (0.01 + 0.9 * u[1]);
        const auto n = static_cast<std::size_t>(1 + 200 * u[2]);
        const auto g = TimeGrid::build(T, eps, n);
        REQUIRE(g.num_steps() == 2 * n);
        CHECK(g.time(0) == 0.0);
        CHECK(g.time(n) == T - eps);
        CHECK(g.time(2 * n) == T);
        double sum = 0.0;
        for (std::size_t k = 0; k < g.num_steps(); ++k) {
            CHECK(g.step(k) > 0.0);
            sum += g.step(k);
        }
        CHECK(std::abs(sum - T) <= 1e-12 * T);
        for (std::size_t k = 0; k <= 2 * n; ++k) {
            const double expected = k <= n ? T * (1.0 - std::pow(eps / T, double(k) / double(n)))
                                           : T - (double(2 * n - k) / double(n)) * eps;
            CHECK(std::abs(g.time(k) - expected) <= 1e-12 * T);
        }
    }
}

TEST_CASE("full net: input validation") {
    CHECK_THROWS_AS(TimeGrid::build(1.0, 0.0, 2), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::build(1.0, 1.0, 2), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::build(1.0, 0.5, 0), std::invalid_argument);
}

TEST_CASE("reduced net") {
    const auto g = TimeGrid::build_reduced(1.0, 0.25, 4, 0.5);
    CHECK(g.tail_steps() == 2);
    CHECK(g.step(4) == doctest::Approx(0.125));
    CHECK(g.step(5) == doctest::Approx(0.125));

    const auto full = TimeGrid::build(1.0, 0.3, 7);
    const auto same = TimeGrid::build_reduced(1.0, 0.3, 7, 1.0);
    CHECK(as_vector(full.times()) == as_vector(same.times()));

    const auto g2 = TimeGrid::build_reduced(1.0, 0.25, 2, 0.5);
    double tail = 0.0;
    for (std::size_t k = g2.switch_index(); k < g2.num_steps(); ++k) tail += g2.step(k);
    CHECK(tail == doctest::Approx(0.25).epsilon(1e-14));

    CHECK_THROWS_AS(TimeGrid::build_reduced(1.0, 0.25, 4, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid::build_reduced(1.0, 0.25, 4, 1.5), std::invalid_argument);
    CHECK(TimeGrid::build_with_tail(1.0, 0.25, 4, 3).tail_steps() == 3);
}

TEST_CASE("max step and geometric ratio") {
    CHECK(max_step(TimeGrid::build(1.0, 0.5, 1)) == doctest::Approx(0.5));
    const std::size_t n = 100;
    const double a = 1.0;
    const auto g = TimeGrid::build(1.0, std::pow(double(n), -a), n);
    const double h0 = 1.0 - std::pow(double(n), -a / double(n));
    CHECK(max_step(g) == doctest::Approx(h0).epsilon(1e-12));
    CHECK(h0 == doctest::Approx(0.045).epsilon(0.02));
    CHECK(h0 <= a * std::log(double(n)) / double(n) * 1.1);
    const double ratio = std::pow(double(n), -a / double(n));
    for (std::size_t i = 0; i + 1 < n; ++i) CHECK(g.step(i + 1) / g.step(i) == doctest::Approx(ratio).epsilon(1e-9));

    const auto g75 = TimeGrid::build(1.0, std::pow(64.0, -0.75), 64);
    CHECK(g75.step(g75.num_steps() - 1) < g75.step(0));
}

TEST_CASE("lemma products") {
    const auto g = TimeGrid::build(1.0, 0.01, 10);
    CHECK(lemma_product_uniform(g, 0.0) == 1.0);
    CHECK(lemma_product_singular(g, 0.0, 0.0) == 1.0);
    CHECK(lemma_product_uniform(g, 1.0) <= lemma_product_uniform(g, 2.0));
    CHECK(lemma_product_singular(g, 0.5, 0.5) <= lemma_product_singular(g, 1.0, 0.5));
    CHECK(lemma_product_singular(g, 0.5, 0.5) <= lemma_product_singular(g, 0.5, 1.0));
    CHECK(lemma_product_uniform(g, 1.0) <= std::exp(1.0));

    for (std::size_t n : {4u, 32u, 256u}) {
        const double a = 1.0, M2 = 0.5;
        const auto grid = TimeGrid::build(1.0, std::pow(double(n), -a), n);
        const double exact = std::pow(1.0 + M2 * (std::pow(double(n), a / double(n)) - 1.0), double(n));
        CHECK(lemma_product_singular(grid, 0.0, M2) == doctest::Approx(exact).epsilon(1e-12));
    }
}

TEST_CASE("dump format") {
    std::ostringstream out;
    TimeGrid::build(1.0, 0.25, 2).dump(out);
    CHECK(out.str() == "0\n0.5\n0.75\n0.875\n1\n");
}

TEST_CASE("uniform net") {
    const auto g = TimeGrid::uniform(2.0, 4);
    CHECK(g.num_steps() == 4);
    CHECK(g.time(4) == 2.0);
    CHECK(g.step(1) == doctest::Approx(0.5));
}
