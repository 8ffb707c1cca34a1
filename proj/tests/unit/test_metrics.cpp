#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include <unistd.h>

#include "streambag/core.hpp"
#include "streambag/metrics.hpp"

using namespace streambag;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint32_t> ids(std::string_view s) {
    std::vector<std::uint32_t> out;
    for (char c : s)
        if (c != ' ') out.push_back(static_cast<std::uint32_t>(c - 'a'));
    return out;
}

std::string rd_text(std::string_view trace, RdCounting c) { return format_rd(empirical_rd(ids(trace), c), 3); }

// O(n^2) reference: distinct ids since the previous access, inclusive.
std::vector<std::optional<std::uint64_t>> brute_rd(const std::vector<std::uint32_t>& t) {
    std::vector<std::optional<std::uint64_t>> out;
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::optional<std::size_t> prev;
        for (std::size_t j = i; j-- > 0;)
            if (t[j] == t[i]) {
                prev = j;
                break;
            }
        if (!prev) {
            out.push_back(std::nullopt);
            continue;
        }
        std::set<std::uint32_t> seen(t.begin() + static_cast<std::ptrdiff_t>(*prev) + 1, t.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        out.push_back(seen.size());
    }
    return out;
}

std::vector<EnergySample> constant_trace(double watts, std::size_t n, double period) {
    std::vector<EnergySample> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back({static_cast<double>(i) * period, watts});
    return s;
}

}  // namespace

TEST_CASE("prequential accuracy") {
    PrequentialAccuracy a;
    CHECK(a.accuracy() == 0.0);
    for (int i = 0; i < 10; ++i) a.add(i % 4 != 0);
    CHECK(a.total() == 10);
    CHECK(a.correct() == 7);
    CHECK(a.accuracy() == doctest::Approx(0.7));
}

TEST_CASE("delay summary") {
    DelayStats d;
    for (int i = 1; i <= 100; ++i) d.add(static_cast<std::int64_t>(i) * 1'000'000);
    d.add(-5);
    auto s = d.summary();
    CHECK(s.count == 101);
    CHECK(d.negative() == 1);
    CHECK(s.max_ms == doctest::Approx(100.0));
    CHECK(s.p50_ms == doctest::Approx(50.0));
    CHECK(s.p95_ms == doctest::Approx(95.0));
    CHECK(s.mean_ms == doctest::Approx(5050.0 / 101.0));
    for (auto v : d.values()) CHECK(v >= 0);
    CHECK(DelayStats{}.summary().count == 0);
}

TEST_CASE("energy over a window") {
    auto two_ten = std::vector<EnergySample>{{0.0, 10.0}, {1.0, 10.0}};
    CHECK(energy_joules(two_ten, 0.0, 2.0) == doctest::Approx(20.0));
    auto five_fifteen = std::vector<EnergySample>{{0.0, 5.0}, {1.0, 15.0}};
    CHECK(energy_joules(five_fifteen, 0.0, 2.0) == doctest::Approx(20.0));
    CHECK(energy_joules(five_fifteen, 2.0) == doctest::Approx(20.0));
    CHECK_THROWS_AS(energy_joules(five_fifteen, 5.0, 6.0), std::domain_error);
    CHECK(energy_joules(std::vector<EnergySample>{}, 3.0) == 0.0);

    auto trace = constant_trace(4.0, 1800, 0.1);
    CHECK(std::abs(energy_joules(trace, 0.0, 180.0) - 720.0) <= 1e-9);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
        double p = unit_uniform(rng) * 50, t = 1 + unit_uniform(rng) * 500;
        auto tr = constant_trace(p, 10 + rng() % 1000, 0.1);
        CHECK(energy_joules(tr, t) == doctest::Approx(p * t).epsilon(1e-12));
    }
}

TEST_CASE("synthetic sensor replays on a virtual clock") {
    auto s = SyntheticSensor::constant(4.0, std::chrono::milliseconds(100), std::chrono::seconds(180));
    CHECK(s.size() == 1800);
    CHECK(s.virtual_clock());
    std::vector<EnergySample> got;
    while (auto x = s.poll()) got.push_back(*x);
    REQUIRE(got.size() == 1800);
    CHECK(got[10].t == doctest::Approx(1.0));
    for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i].t > got[i - 1].t);
    CHECK(energy_joules(got, 180.0) == doctest::Approx(720.0));

    auto again = SyntheticSensor::constant(4.0, std::chrono::milliseconds(100), std::chrono::seconds(180));
    SensorSampler sampler(again);
    sampler.start();
    sampler.stop();
    CHECK(sampler.samples().size() == 1800);
}

TEST_CASE("sensor factory") {
    auto p = std::chrono::milliseconds(100);
    auto len = std::chrono::seconds(2);
    CHECK(make_sensor("null", p, len)->name() == "null");
    auto syn = make_sensor("synthetic:7.5", p, len);
    CHECK(syn->name() == "synthetic");
    CHECK(syn->poll()->watts == 7.5);
    CHECK_THROWS_AS(make_sensor("bogus", p, len), std::invalid_argument);
    if (OsCounterSensor::discover().empty()) {
        CHECK_THROWS_AS(make_sensor("os_counter", p, len), std::runtime_error);
    }
}

TEST_CASE("os counters are differenced into watts") {
    auto dir = fs::temp_directory_path() / ("sb_powercap_" + std::to_string(::getpid()));
    fs::create_directories(dir / "intel-rapl:0");
    fs::create_directories(dir / "intel-rapl:0:0");
    auto write = [&](std::uint64_t uj) { std::ofstream(dir / "intel-rapl:0" / "energy_uj") << uj << "\n"; };
    std::ofstream(dir / "intel-rapl:0" / "max_energy_range_uj") << 1000000000 << "\n";
    std::ofstream(dir / "intel-rapl:0:0" / "energy_uj") << 5 << "\n";
    write(999'000'000);

    auto counters = OsCounterSensor::discover(dir.string());
    REQUIRE(counters.size() == 1);  // subzones are not counted twice
    CHECK(counters[0].max_range_uj == 1000000000);

    std::int64_t now = 0;
    OsCounterSensor s(counters, [&] { return now; });
    CHECK_FALSE(s.poll());
    now = 1'000'000'000;
    write(999'000'000 + 4'000'000 - 1000000000);  // wraps: +4 J in 1 s
    auto a = s.poll();
    REQUIRE(a);
    CHECK(a->watts == doctest::Approx(4.0));
    CHECK(a->t == doctest::Approx(1.0));
    now = 1'500'000'000;
    write(3'000'000 + 1'000'000);
    auto b = s.poll();
    REQUIRE(b);
    CHECK(b->watts == doctest::Approx(2.0));
    fs::remove_all(dir);
}

TEST_CASE("jpi and throughput") {
    CHECK(jpi(20.0, 100) == doctest::Approx(0.2));
    CHECK(jpi(0.0, 7) == 0.0);
    CHECK(jpi(720.0, 36000) == doctest::Approx(0.02));
    CHECK_THROWS_AS(jpi(1.0, 0), std::domain_error);
    CHECK(throughput(1000, 10.0) == doctest::Approx(100.0));
    CHECK(throughput(0, 10.0) == 0.0);
    CHECK_THROWS_AS(throughput(5, 0.0), std::domain_error);
    // reference trend ratio for the throughput criterion
    CHECK(78.12 / 46.56 == doctest::Approx(1.68).epsilon(0.01));
}

TEST_CASE("reuse distance closed forms") {
    CHECK(rd_sequential(3, 3) == 27);
    CHECK(rd_sequential(1, 1) == 1);
    CHECK(rd_sequential(9, 3) == 81);
    CHECK(rd_minibatch(9, 3, 3) == 45);
    CHECK(rd_minibatch(9, 3, 3) < rd_sequential(9, 3));
    CHECK(rd_minibatch(100, 2, 100) == 202);
    CHECK(rd_minibatch(10, 3, 4) == 2 * 3 * 6 + 3 * (3 + 2 - 1));
    for (std::uint64_t n = 1; n < 40; ++n)
        for (std::uint64_t m = 1; m < 6; ++m) CHECK(rd_minibatch(n, m, 1) == rd_sequential(n, m));
    CHECK(rd_outer_sum_dominates(100, 3, 3));
    CHECK_FALSE(rd_outer_sum_dominates(27, 3, 3));
}

TEST_CASE("mini-batching always shortens reuse distance") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 10000; ++i) {
        std::uint64_t m = 2 + rng() % 50, b = 2 + rng() % 500;
        std::uint64_t n = b * (1 + rng() % 200);
        CHECK(rd_minibatch(n, m, b) < rd_sequential(n, m));
    }
}

TEST_CASE("empirical reuse distance on the worked traces") {
    CHECK(rd_text("abc abc abc", RdCounting::distinct) == "∞∞∞ 333 333");
    CHECK(rd_text("abc abc abc", RdCounting::accesses) == "∞∞∞ 333 333");
    CHECK(rd_text("abc cba abc", RdCounting::accesses) == "∞∞∞ 135 135");
    CHECK(rd_text("abc cba abc", RdCounting::distinct) == "∞∞∞ 123 123");
    CHECK(rd_text("aaa", RdCounting::distinct) == "∞11");
    CHECK(format_rd(empirical_rd(ids("aaa")), 1) == "∞ 1 1");
    CHECK(rd_text("aaa bbb ccc", RdCounting::distinct) == "∞11 ∞11 ∞11");
    CHECK(empirical_rd(std::vector<std::uint32_t>{}).empty());
}

TEST_CASE("distinct reuse distance matches a brute-force count") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::uint32_t> t(1 + rng() % 200);
        const std::uint32_t alphabet = 1 + static_cast<std::uint32_t>(rng() % 12);
        for (auto& x : t) x = static_cast<std::uint32_t>(rng() % alphabet);
        CHECK(empirical_rd(t, RdCounting::distinct) == brute_rd(t));
    }
}

TEST_CASE("sequential rounds sum to m squared") {
    for (std::uint32_t m = 1; m <= 8; ++m) {
        const std::uint64_t n = 20;
        std::vector<std::uint32_t> t;
        for (std::uint64_t i = 0; i < n; ++i)
            for (std::uint32_t k = 0; k < m; ++k) t.push_back(k);
        auto rd = empirical_rd(t);
        // the first round is all first touches; every later round adds m*m
        CHECK(total_finite_rd(rd) == (n - 1) * m * m);
        CHECK(total_finite_rd(rd) + static_cast<std::uint64_t>(m) * m == rd_sequential(n, m));
    }
}
