#include <random>

#include "doctest.h"
#include "streambag/adwin.hpp"
#include "streambag/core.hpp"

using namespace streambag;

namespace {

double bernoulli(std::mt19937_64& rng, double p) { return unit_uniform(rng) < p ? 1.0 : 0.0; }

}  // namespace

TEST_CASE("constant stream never detects") {
    Adwin a;
    for (int i = 0; i < 10000; ++i) REQUIRE_FALSE(a.add(0.5));
    CHECK(a.width() == 10000);
    CHECK(a.estimate() == doctest::Approx(0.5));
}

TEST_CASE("mean shift from 0.2 to 0.8 is detected shortly after the change") {
    std::mt19937_64 rng(42);
    Adwin a(0.002);
    std::uint64_t first = 0;
    for (std::uint64_t t = 1; t <= 10000 && first == 0; ++t) {
        const std::uint64_t before = a.width() + 1;
        if (a.add(bernoulli(rng, t <= 5000 ? 0.2 : 0.8))) {
            first = t;
            CHECK(a.width() < before);
        }
    }
    CHECK(first > 5000);
    CHECK(first <= 6000);
    CHECK(first == 5020);  // locked seed regression value
}

TEST_CASE("estimate is the window mean") {
    Adwin a;
    for (double v : {1.0, 1.0, 0.0, 0.0}) a.add(v);
    CHECK(a.estimate() == 0.5);
    CHECK(a.total() == 2.0);

    std::mt19937_64 rng(7);
    Adwin b;
    for (int i = 0; i < 1000; ++i) b.add(bernoulli(rng, 0.3));
    CHECK(std::abs(b.estimate() - 0.3) <= 0.05);
}

TEST_CASE("precondition errors") {
    Adwin a;
    CHECK(a.empty());
    CHECK_THROWS_AS((void)a.estimate(), std::logic_error);
    CHECK_THROWS_AS(a.add(1.5), std::domain_error);
    CHECK_THROWS_AS(a.add(-0.1), std::domain_error);
    CHECK(a.empty());
}

TEST_CASE("false positives are rare on stationary streams") {
    std::uint64_t total = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        Adwin a(0.002);
        for (int i = 0; i < 10000; ++i) total += a.add(bernoulli(rng, 0.5));
    }
    CHECK(total <= 2);
}

TEST_CASE("abrupt shift of 0.6 is caught within 1000 samples") {
    int caught = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        Adwin a(0.002);
        for (int i = 0; i < 2000; ++i) a.add(bernoulli(rng, 0.2));
        bool hit = false;
        for (int i = 0; i < 1000 && !hit; ++i) hit = a.add(bernoulli(rng, 0.8));
        caught += hit;
    }
    CHECK(caught >= 19);
}

TEST_CASE("width is the sum of bucket capacities and rows stay logarithmic") {
    std::mt19937_64 rng(3);
    Adwin a(1e-300);  // practically never cuts, so the window only grows
    for (std::uint64_t i = 1; i <= 1000000; ++i) {
        a.add(bernoulli(rng, 0.5));
        if (i % 99991 == 0) {
            CHECK(a.width() == i);
            CHECK(a.rows() <= 32);
        }
    }
    CHECK(a.rows() <= 32);
    CHECK(a.estimate() == doctest::Approx(a.total() / static_cast<double>(a.width())));
}

TEST_CASE("identical inputs give identical detector state") {
    std::mt19937_64 r1(9), r2(9);
    Adwin a, b;
    for (int i = 0; i < 5000; ++i) {
        CHECK(a.add(bernoulli(r1, i < 2500 ? 0.1 : 0.7)) == b.add(bernoulli(r2, i < 2500 ? 0.1 : 0.7)));
    }
    ByteWriter wa, wb;
    a.serialize(wa);
    b.serialize(wb);
    CHECK(wa.bytes() == wb.bytes());
}
