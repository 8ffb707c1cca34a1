#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "streambag/ensemble.hpp"

using namespace streambag;

namespace {

std::shared_ptr<const Schema> drift_schema() { return std::make_shared<const Schema>(SyntheticDriftStream::make_schema()); }

std::vector<Instance> drift_data(std::uint64_t seed, std::uint64_t change_at, std::uint64_t n) {
    SyntheticDriftStream s(seed, change_at, n);
    return read_all(s);
}

EnsembleConfig config(Algorithm a, std::uint32_t m, std::uint64_t seed = 1) {
    EnsembleConfig c;
    c.algorithm = a;
    c.size = m;
    c.base_seed = seed;
    return c;
}

std::vector<std::uint8_t> tree_bytes(const Learner& l) { return l.tree().serialize(); }

// 12 numeric features; class = x0 + x5 > 1
std::pair<std::shared_ptr<const Schema>, std::vector<Instance>> wide(std::size_t n) {
    std::vector<AttributeSpec> attrs;
    for (int i = 0; i < 12; ++i) attrs.push_back(AttributeSpec::numeric("x" + std::to_string(i)));
    attrs.push_back(AttributeSpec::nominal("class", {"0", "1"}));
    auto schema = std::make_shared<const Schema>(Schema("wide", attrs, 12));
    std::mt19937_64 rng(5);
    std::vector<Instance> out;
    for (std::size_t i = 0; i < n; ++i) {
        Instance inst;
        for (int f = 0; f < 12; ++f) inst.values.push_back(unit_uniform(rng));
        inst.class_index = inst.values[0] + inst.values[5] > 1.0 ? 1 : 0;
        out.push_back(std::move(inst));
    }
    return {schema, out};
}

const Algorithm all_algorithms[] = {Algorithm::ozabag, Algorithm::ozabag_asht, Algorithm::obadwin,
                                    Algorithm::lbag,   Algorithm::arf,         Algorithm::srp};

}  // namespace

TEST_CASE("poisson weights") {
    std::mt19937_64 rng(123);
    std::uint64_t zeros = 0;
    for (int i = 0; i < 1000000; ++i) zeros += poisson_weight(rng, 1.0) == 0;
    double frac = static_cast<double>(zeros) / 1e6;
    CHECK(frac >= 0.3669);
    CHECK(frac <= 0.3689);

    std::mt19937_64 rng6(456);
    double total = 0;
    for (int i = 0; i < 1000000; ++i) total += poisson_weight(rng6, 6.0);
    CHECK(std::abs(total / 1e6 - 6.0) <= 0.01);

    std::mt19937_64 a(77), b(77);
    for (int i = 0; i < 1000; ++i) CHECK(poisson_weight(a, 6.0) == poisson_weight(b, 6.0));
}

TEST_CASE("algorithm names and defaults") {
    for (auto a : all_algorithms) CHECK(parse_algorithm(to_string(a)) == a);
    CHECK_FALSE(parse_algorithm("boosting"));
    CHECK(config(Algorithm::ozabag, 1).effective_lambda() == 1.0);
    CHECK(config(Algorithm::obadwin, 1).effective_lambda() == 1.0);
    CHECK(config(Algorithm::lbag, 1).effective_lambda() == 6.0);
    CHECK(config(Algorithm::srp, 1).effective_lambda() == 6.0);
    CHECK(config(Algorithm::arf, 1).effective_subspace(12) == 4);  // round(sqrt 12) + 1
    CHECK(config(Algorithm::arf, 1).effective_subspace(2) == 2);
    CHECK_THROWS_AS(config(Algorithm::lbag, 0).check(2), std::invalid_argument);
    auto c = config(Algorithm::srp, 3);
    c.subspace_size = 13;
    CHECK_THROWS_AS(c.check(12), std::invalid_argument);
    CHECK(asht_budget(0) == 2);
    CHECK(asht_budget(3) == 16);
    CHECK(asht_budget(9) == 1024);
    CHECK(asht_budget(20) == 1024);
}

TEST_CASE("vote compilation") {
    std::vector<std::vector<double>> votes{{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}};
    auto p = compile_votes(votes, 2);
    CHECK(p.votes[0] == doctest::Approx(1.7));
    CHECK(p.votes[1] == doctest::Approx(1.3));
    CHECK(p.predicted_class == 0);

    std::vector<std::vector<double>> none{{0, 0}, {0, 0}};
    CHECK(compile_votes(none, 2).predicted_class == 0);
    std::vector<double> tie{1, 1, 1};
    CHECK(argmax_lowest(tie) == 0);
}

TEST_CASE("scaling a learner's votes never changes the decision") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<std::vector<double>> v(4, std::vector<double>(3));
        for (auto& row : v)
            for (auto& x : row) x = unit_uniform(rng) * 10;
        auto base = compile_votes(v, 3).predicted_class;
        for (auto& row : v) {
            double c = 0.001 + unit_uniform(rng) * 1000;
            for (auto& x : row) x *= c;
        }
        CHECK(compile_votes(v, 3).predicted_class == base);
    }
}

TEST_CASE("untrained ensembles predict class 0 and m=1 follows its learner") {
    auto schema = drift_schema();
    for (auto a : all_algorithms) {
        Ensemble e(schema, config(a, 4));
        CHECK(e.predict(Instance{{0.9, 0.9, 0.5}, 1, 1.0}).predicted_class == 0);
    }
    Ensemble single(schema, config(Algorithm::ozabag, 1));
    auto data = drift_data(3, SyntheticDriftStream::never, 2000);
    for (const auto& x : data) single.train(x);
    for (std::size_t i = 0; i < 200; ++i) {
        std::vector<double> v(2);
        single.learner(0).votes(data[i], v);
        CHECK(single.predict(data[i]).predicted_class == argmax_lowest(v));
    }
}

TEST_CASE("learner training order does not matter") {
    auto schema = drift_schema();
    auto data = drift_data(11, SyntheticDriftStream::never, 1000);
    for (auto algo : {Algorithm::ozabag, Algorithm::ozabag_asht}) {
        Ensemble ref(schema, config(algo, 3, 99));
        Ensemble rev(schema, config(algo, 3, 99));
        Ensemble by_learner(schema, config(algo, 3, 99));
        for (const auto& x : data) {
            ref.train(x);
            for (std::size_t i = 3; i-- > 0;) rev.learner(i).train(x);
        }
        for (std::size_t i : {2u, 0u, 1u})
            for (const auto& x : data) by_learner.learner(i).train(x);
        CHECK(ref.serialize() == rev.serialize());
        CHECK(ref.serialize() == by_learner.serialize());
    }
}

TEST_CASE("prediction is pure and training deterministic") {
    auto schema = drift_schema();
    auto data = drift_data(12, 1500, 3000);
    for (auto a : all_algorithms) {
        Ensemble e(schema, config(a, 5, 4)), f(schema, config(a, 5, 4));
        for (const auto& x : data) {
            e.train(x);
            f.train(x);
        }
        auto bytes = e.serialize();
        for (std::size_t i = 0; i < 300; ++i) (void)e.predict(data[i]);
        CHECK(e.serialize() == bytes);
        CHECK(f.serialize() == bytes);
        CHECK(e.digest() == f.digest());
        CHECK(e.digest().size() == 16);
    }
}

TEST_CASE("lbag resets a learner soon after an abrupt drift") {
    auto schema = drift_schema();
    Ensemble e(schema, config(Algorithm::lbag, 10, 1));
    SyntheticDriftStream s(7, 20000, 40000);
    std::uint64_t i = 0;
    std::size_t before = 0, window = 0;
    while (auto x = s.next()) {
        ++i;
        const std::size_t r0 = e.total_resets();
        e.train(*x);
        const std::size_t d = e.total_resets() - r0;
        if (i <= 20000) before += d;
        else if (i <= 25000) window += d;
    }
    CHECK(window >= 1);
    CHECK(before == 0);     // locked seed regression values
    CHECK(window == 10);
    CHECK(e.total_resets() == 10);
}

TEST_CASE("srp learners see exactly their patch") {
    auto [schema, data] = wide(3000);
    auto c = config(Algorithm::srp, 6, 2);
    c.subspace_size = 4;
    Ensemble e(schema, c);
    for (const auto& x : data) e.train(x);
    for (std::size_t i = 0; i < e.size(); ++i) {
        CHECK(e.learner(i).tree().features().size() == 4);
        CHECK(e.learner(i).tree().observed_features() == e.learner(i).tree().features());
    }
}

TEST_CASE("arf leaves draw local subspaces") {
    auto [schema, data] = wide(3000);
    auto c = config(Algorithm::arf, 4, 2);
    c.subspace_size = 3;
    Ensemble e(schema, c);
    for (const auto& x : data) e.train(x);
    for (std::size_t i = 0; i < e.size(); ++i) {
        CHECK(e.learner(i).tree().features().size() == 12);
        for (std::size_t k = 0; k < 100; ++k) CHECK(e.learner(i).tree().leaf_for(data[k]).features.size() == 3);
    }
}

TEST_CASE("reset gives a fresh learner and leaves the others alone") {
    auto schema = drift_schema();
    auto data = drift_data(13, SyntheticDriftStream::never, 2000);
    for (auto a : {Algorithm::ozabag, Algorithm::lbag, Algorithm::obadwin, Algorithm::arf}) {
        Ensemble e(schema, config(a, 4, 5)), fresh(schema, config(a, 4, 5));
        for (const auto& x : data) e.train(x);
        std::vector<std::vector<std::uint8_t>> others;
        for (std::size_t i = 0; i < 4; ++i) others.push_back(tree_bytes(e.learner(i)));
        e.reset_learner(2);
        CHECK(tree_bytes(e.learner(2)) == tree_bytes(fresh.learner(2)));
        CHECK(e.learner(2).background() == nullptr);
        for (std::size_t i : {0u, 1u, 3u}) CHECK(tree_bytes(e.learner(i)) == others[i]);
        auto once = tree_bytes(e.learner(2));
        e.reset_learner(2);
        CHECK(tree_bytes(e.learner(2)) == once);
        CHECK_THROWS_AS(e.reset_learner(4), std::out_of_range);
    }
}

TEST_CASE("reset keeps the learner's random stream going") {
    auto schema = drift_schema();
    Ensemble a(schema, config(Algorithm::ozabag, 2, 5)), b(schema, config(Algorithm::ozabag, 2, 5));
    auto data = drift_data(14, SyntheticDriftStream::never, 50);
    for (const auto& x : data) a.train(x);
    a.reset_learner(0);
    b.reset_learner(0);
    CHECK(a.learner(0).rng()() != b.learner(0).rng()());
}

TEST_CASE("arf and srp vote with exactly m learners") {
    auto schema = drift_schema();
    auto data = drift_data(15, 3000, 6000);
    for (auto a : {Algorithm::arf, Algorithm::srp}) {
        Ensemble e(schema, config(a, 5, 6));
        bool saw_background = false;
        for (std::size_t i = 0; i < data.size(); ++i) {
            e.train(data[i]);
            for (std::size_t k = 0; k < e.size(); ++k) saw_background |= e.learner(k).background() != nullptr;
            if (i % 97 != 0) continue;
            std::vector<std::vector<double>> votes;
            for (std::size_t k = 0; k < e.size(); ++k) {
                std::vector<double> v(2);
                e.learner(k).votes(data[i], v);
                votes.push_back(v);
            }
            auto p = e.predict(data[i]);
            auto q = compile_votes(votes, 2);
            CHECK(p.votes == q.votes);
            CHECK(e.size() == 5);
        }
        std::size_t warnings = 0;
        for (std::size_t k = 0; k < e.size(); ++k) warnings += e.learner(k).warnings();
        INFO(to_string(a), " warnings ", warnings, " resets ", e.total_resets());
        CHECK(warnings >= 1);
        CHECK(saw_background);
    }
}

TEST_CASE("obadwin replaces one learner per change event") {
    auto schema = drift_schema();
    Ensemble e(schema, config(Algorithm::obadwin, 6, 3));
    SyntheticDriftStream s(16, 10000, 20000);
    while (auto x = s.next()) {
        const std::size_t r0 = e.total_resets();
        e.train(*x);
        CHECK(e.total_resets() - r0 <= 1);
        for (std::size_t i = 0; i < e.size(); ++i) CHECK_FALSE(e.learner(i).change_pending());
    }
    CHECK(e.global_resets() >= 1);
    CHECK(e.global_resets() == e.total_resets());
}

TEST_CASE("reset mechanisms recover from drift better than plain bagging") {
    auto schema = drift_schema();
    const std::uint64_t n = 40000, change = n / 2;
    auto data = drift_data(21, change, n);
    auto post_drift_accuracy = [&](Algorithm a) {
        Ensemble e(schema, config(a, 10, 1));
        std::uint64_t correct = 0;
        for (std::uint64_t i = 0; i < n; ++i) {
            if (i >= change) correct += e.predict(data[i]).predicted_class == data[i].class_index;
            e.train(data[i]);
        }
        return static_cast<double>(correct) / static_cast<double>(n - change);
    };
    const double oza = post_drift_accuracy(Algorithm::ozabag);
    for (auto a : {Algorithm::lbag, Algorithm::arf, Algorithm::srp}) {
        const double acc = post_drift_accuracy(a);
        INFO(to_string(a), " ", acc, " vs ozabag ", oza);
        CHECK(acc - oza >= 0.02);
    }
}
