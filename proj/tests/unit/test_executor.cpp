#include <chrono>
#include <thread>

#include "doctest.h"
#include "streambag/executor.hpp"
#include "streambag/netstream.hpp"

using namespace streambag;

namespace {

std::shared_ptr<const Schema> drift_schema() { return std::make_shared<const Schema>(SyntheticDriftStream::make_schema()); }

std::vector<Instance> data(std::uint64_t n, std::uint64_t seed = 31, std::uint64_t change = SyntheticDriftStream::never) {
    SyntheticDriftStream s(seed, change, n);
    return read_all(s);
}

EnsembleConfig ens(Algorithm a, std::uint32_t m) {
    EnsembleConfig c;
    c.algorithm = a;
    c.size = m;
    c.base_seed = 17;
    return c;
}

struct Outcome {
    RunSummary summary;
    std::vector<PredictionEvent> events;
};

Outcome run(Algorithm a, std::uint32_t m, const std::vector<Instance>& xs, ExecutorConfig cfg) {
    Ensemble e(drift_schema(), ens(a, m));
    VectorSource src(xs);
    Outcome o;
    o.summary = Executor(e, cfg).run(src, [&](const PredictionEvent& ev) { o.events.push_back(ev); });
    return o;
}

ExecutorConfig mode(ExecutionMode md, std::size_t threads = 1, std::size_t batch = 1) {
    ExecutorConfig c;
    c.mode = md;
    c.num_threads = threads;
    c.batch_size = batch;
    return c;
}

bool same_events(const std::vector<PredictionEvent>& a, const std::vector<PredictionEvent>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!a[i].same_decision(b[i])) return false;
    return true;
}

class QueueSource final : public RecordSource {
public:
    explicit QueueSource(std::size_t cap) : q(cap) {}
    Status next(StreamRecord& out, std::optional<std::int64_t> deadline_ns) override {
        switch (q.pop(out, deadline_ns)) {
            case BoundedQueue<StreamRecord>::PopResult::item: return Status::record;
            case BoundedQueue<StreamRecord>::PopResult::closed: return Status::end;
            default: return Status::timeout;
        }
    }
    BoundedQueue<StreamRecord> q;
};

// locked-seed regression value: ozabag, m=3, 1000 instances
const std::string d_seq = "f3666670b5b73753";

}  // namespace

TEST_CASE("empty stream and immediate timeout") {
    std::vector<Instance> none;
    auto o = run(Algorithm::ozabag, 3, none, mode(ExecutionMode::sequential));
    CHECK(o.summary.instances == 0);
    CHECK(o.events.empty());

    auto xs = data(100);
    for (auto md : {ExecutionMode::sequential, ExecutionMode::parallel_instance, ExecutionMode::mini_batch}) {
        auto cfg = mode(md, 2, 10);
        cfg.timeout = std::chrono::nanoseconds(0);
        auto t = run(Algorithm::ozabag, 3, xs, cfg);
        CHECK(t.summary.instances == 0);
        CHECK(t.events.empty());
        CHECK(t.summary.timed_out);
    }
}

TEST_CASE("sequential digest is pinned and every executor reaches it") {
    auto xs = data(1000);
    auto seq = run(Algorithm::ozabag, 3, xs, mode(ExecutionMode::sequential));
    CHECK(seq.summary.instances == 1000);
    CHECK(seq.summary.digest == d_seq);

    auto p1 = run(Algorithm::ozabag, 3, xs, mode(ExecutionMode::parallel_instance, 1));
    auto p8 = run(Algorithm::ozabag, 3, xs, mode(ExecutionMode::parallel_instance, 8));
    auto b1 = run(Algorithm::ozabag, 3, xs, mode(ExecutionMode::mini_batch, 4, 1));
    CHECK(p1.summary.digest == seq.summary.digest);
    CHECK(p8.summary.digest == seq.summary.digest);
    CHECK(b1.summary.digest == seq.summary.digest);
    CHECK(same_events(p1.events, seq.events));
    CHECK(same_events(p8.events, seq.events));
    CHECK(same_events(b1.events, seq.events));
    for (std::size_t b : {7u, 50u, 250u, 500u}) {
        auto mb = run(Algorithm::ozabag, 3, xs, mode(ExecutionMode::mini_batch, 3, b));
        CHECK(mb.summary.digest == seq.summary.digest);
        CHECK(mb.events.size() == 1000);
    }
}

TEST_CASE("equivalence for the other algorithms") {
    auto xs = data(3000, 32, 1500);
    for (auto a : {Algorithm::ozabag_asht, Algorithm::obadwin, Algorithm::lbag, Algorithm::arf, Algorithm::srp}) {
        auto seq = run(a, 4, xs, mode(ExecutionMode::sequential));
        auto par = run(a, 4, xs, mode(ExecutionMode::parallel_instance, 3));
        auto b1 = run(a, 4, xs, mode(ExecutionMode::mini_batch, 3, 1));
        CHECK(par.summary.digest == seq.summary.digest);
        CHECK(b1.summary.digest == seq.summary.digest);
        CHECK(same_events(par.events, seq.events));
        if (a == Algorithm::ozabag_asht) {
            CHECK(run(a, 4, xs, mode(ExecutionMode::mini_batch, 2, 50)).summary.digest == seq.summary.digest);
        }
    }
}

TEST_CASE("trainers are built once per learner") {
    auto xs = data(500);
    const std::size_t before = Trainer::constructed();
    auto o = run(Algorithm::lbag, 5, xs, mode(ExecutionMode::parallel_instance, 2));
    CHECK(Trainer::constructed() - before == 5);
    CHECK(o.summary.trainers_created == 5);
    const std::size_t mid = Trainer::constructed();
    (void)run(Algorithm::lbag, 5, xs, mode(ExecutionMode::mini_batch, 2, 50));
    CHECK(Trainer::constructed() - mid == 5);
}

TEST_CASE("batch count and partial batches") {
    auto xs = data(120);
    auto o = run(Algorithm::ozabag, 2, xs, mode(ExecutionMode::mini_batch, 2, 50));
    CHECK(o.summary.batches == 3);
    CHECK(o.summary.instances == 120);
}

TEST_CASE("a batch is classified by the model from its start") {
    auto schema = drift_schema();
    Ensemble e(schema, ens(Algorithm::ozabag, 1));
    Executor ex(e, mode(ExecutionMode::mini_batch, 1, 50));
    std::vector<StreamRecord> ones, zeros;
    for (std::uint64_t i = 0; i < 300; ++i) ones.push_back(StreamRecord{i, Instance{{0.9, 0.9, 0.5}, 1, 1.0}, 0, 0});
    for (std::size_t i = 0; i < 300; i += 50) ex.process_minibatch(std::span(ones).subspan(i, 50), {});
    for (std::uint64_t i = 0; i < 50; ++i) zeros.push_back(StreamRecord{i, Instance{{0.9, 0.9, 0.5}, 0, 1.0}, 0, 0});
    std::vector<PredictionEvent> ev;
    ex.process_minibatch(zeros, [&](const PredictionEvent& p) { ev.push_back(p); });
    REQUIRE(ev.size() == 50);
    for (std::size_t i = 0; i < ev.size(); ++i) {
        CHECK(ev[i].predicted_class == 1);
        CHECK(ev[i].true_class == 0);
        CHECK(ev[i].seq == i);
    }
}

TEST_CASE("every instance yields exactly one event, in order") {
    auto xs = data(777);
    for (auto cfg : {mode(ExecutionMode::sequential), mode(ExecutionMode::parallel_instance, 3),
                     mode(ExecutionMode::mini_batch, 3, 50)}) {
        auto o = run(Algorithm::arf, 3, xs, cfg);
        REQUIRE(o.events.size() == 777);
        for (std::size_t i = 0; i < o.events.size(); ++i) {
            CHECK(o.events[i].seq == i);
            CHECK(o.events[i].true_class == xs[i].class_index);
            CHECK(o.events[i].emitted_at_ns >= o.events[i].received_at_ns);
        }
    }
}

TEST_CASE("access traces") {
    auto xs = data(9);
    auto seq = mode(ExecutionMode::sequential);
    seq.trace = true;
    auto s = run(Algorithm::ozabag, 3, std::vector<Instance>(xs.begin(), xs.begin() + 3), seq);
    // classify then train per instance: abc abc, three times
    std::vector<std::uint32_t> abc;
    for (int i = 0; i < 6; ++i) abc.insert(abc.end(), {0, 1, 2});
    CHECK(s.summary.trace == abc);

    auto mb = mode(ExecutionMode::mini_batch, 3, 3);
    mb.trace = true;
    auto b = run(Algorithm::ozabag, 3, xs, mb);
    std::vector<std::uint32_t> grouped;
    for (int phase = 0; phase < 6; ++phase) grouped.insert(grouped.end(), {0, 0, 0, 1, 1, 1, 2, 2, 2});
    CHECK(b.summary.trace == grouped);

    auto one = run(Algorithm::ozabag, 1, xs, seq);
    CHECK(one.summary.trace.size() == 18);
    for (auto id : one.summary.trace) CHECK(id == 0);
}

TEST_CASE("timeout bounds the run") {
    for (auto cfg : {mode(ExecutionMode::sequential), mode(ExecutionMode::mini_batch, 2, 50)}) {
        QueueSource src(1000);
        std::atomic<bool> stop{false};
        std::thread feeder([&] {
            auto xs = data(1000);
            for (std::uint64_t i = 0; i < xs.size() && !stop; ++i) {
                src.q.push(StreamRecord{i, xs[i], monotonic_ns(), monotonic_ns()});
                std::this_thread::sleep_for(std::chrono::milliseconds(5));
            }
        });
        Ensemble e(drift_schema(), ens(Algorithm::lbag, 3));
        cfg.timeout = std::chrono::milliseconds(300);
        std::uint64_t events = 0;
        auto t0 = std::chrono::steady_clock::now();
        auto sum = Executor(e, cfg).run(src, [&](const PredictionEvent&) { ++events; });
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        stop = true;
        src.q.close();
        feeder.join();
        CHECK(sum.timed_out);
        CHECK(wall <= 0.3 + 0.1);
        CHECK(sum.instances > 0);
        CHECK(events == sum.instances);
    }
}

TEST_CASE("idle input costs no CPU") {
    for (auto cfg : {mode(ExecutionMode::sequential), mode(ExecutionMode::parallel_instance, 2),
                     mode(ExecutionMode::mini_batch, 2, 50)}) {
        QueueSource src(10);
        Ensemble e(drift_schema(), ens(Algorithm::ozabag, 4));
        double cpu_idle = -1;
        std::thread feeder([&] {
            auto xs = data(5);
            src.q.push(StreamRecord{0, xs[0], 0, 0});
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
            const double c0 = process_cpu_seconds();
            std::this_thread::sleep_for(std::chrono::seconds(1));
            cpu_idle = process_cpu_seconds() - c0;
            for (std::uint64_t i = 1; i < 5; ++i) src.q.push(StreamRecord{i, xs[i], 0, 0});
            src.q.close();
        });
        auto sum = Executor(e, cfg).run(src, {});
        feeder.join();
        CHECK(sum.instances == 5);
        CHECK(cpu_idle >= 0.0);
        CHECK(cpu_idle < 0.010);
    }
}

TEST_CASE("thread pool runs every index once and propagates errors") {
    for (std::size_t n : {1u, 2u, 4u}) {
        ThreadPool pool(n);
        CHECK(pool.size() == n);
        for (int round = 0; round < 50; ++round) {
            std::vector<std::atomic<int>> hits(37);
            pool.parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
            for (auto& h : hits) CHECK(h.load() == 1);
        }
        CHECK_THROWS_AS(pool.parallel_for(5, [](std::size_t i) {
            if (i == 3) throw std::runtime_error("boom");
        }),
                        std::runtime_error);
        std::atomic<int> after{0};
        pool.parallel_for(4, [&](std::size_t) { after++; });
        CHECK(after == 4);
    }
}

TEST_CASE("executor config validation") {
    ExecutorConfig c;
    c.mode = ExecutionMode::mini_batch;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.check(), std::invalid_argument);
    c.batch_size = 1;
    c.num_threads = 0;
    CHECK_THROWS_AS(c.check(), std::invalid_argument);
    CHECK(parse_execution_mode(to_string(ExecutionMode::parallel_instance)) == ExecutionMode::parallel_instance);
}
