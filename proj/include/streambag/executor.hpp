#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "streambag/core.hpp"
#include "streambag/ensemble.hpp"

namespace streambag {

enum class ExecutionMode : std::uint8_t { sequential, parallel_instance, mini_batch };

std::string_view to_string(ExecutionMode m);
std::optional<ExecutionMode> parse_execution_mode(std::string_view name);

struct ExecutorConfig {
    ExecutionMode mode = ExecutionMode::sequential;
    std::size_t batch_size = 1;   // mini_batch only
    std::size_t num_threads = 1;  // parallel modes
    std::optional<std::chrono::nanoseconds> timeout;
    // Classification phase of a mini-batch in parallel across trainers.
    // Unset: parallel when the ensemble has 8 or more learners.
    std::optional<bool> parallel_classify;
    bool trace = false;

    void check() const;
};

struct PredictionEvent {
    std::uint64_t seq = 0;
    std::uint32_t predicted_class = 0;
    std::uint32_t true_class = 0;
    std::int64_t emitted_at_ns = 0;
    std::int64_t sent_at_ns = 0;
    std::int64_t received_at_ns = 0;

    bool same_decision(const PredictionEvent& o) const {
        return seq == o.seq && predicted_class == o.predicted_class && true_class == o.true_class;
    }
};

using EventSink = std::function<void(const PredictionEvent&)>;

// Blocking pull source for the executor.
class RecordSource {
public:
    enum class Status : std::uint8_t { record, end, timeout };
    virtual ~RecordSource() = default;
    // Blocks until a record is available, the stream ends, or the monotonic
    // clock passes `deadline_ns`.
    virtual Status next(StreamRecord& out, std::optional<std::int64_t> deadline_ns) = 0;
};

// Offline source over an in-memory instance list; stamps sent/received time
// when a record is handed out.
class VectorSource final : public RecordSource {
public:
    explicit VectorSource(std::span<const Instance> instances) : instances_(instances) {}
    Status next(StreamRecord& out, std::optional<std::int64_t> deadline_ns) override;

private:
    std::span<const Instance> instances_;
    std::size_t pos_ = 0;
};

struct RunSummary {
    std::uint64_t instances = 0;
    double wall_seconds = 0.0;
    double cpu_classify_seconds = 0.0;
    double cpu_compile_seconds = 0.0;
    double cpu_train_seconds = 0.0;
    std::string digest;
    std::size_t resets = 0;
    std::size_t batches = 0;
    std::size_t trainers_created = 0;
    bool timed_out = false;
    std::vector<std::uint32_t> trace;  // learner ids in touch order, when tracing
};

// Fixed-size pool created once per run. The calling thread takes part in
// every parallel_for, so a pool of n threads starts n - 1 workers.
class ThreadPool {
public:
    explicit ThreadPool(std::size_t num_threads);
    ~ThreadPool();
    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    // Runs fn(0..count-1) across the pool and returns when all calls finished.
    void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);
    std::size_t size() const noexcept { return workers_.size() + 1; }

private:
    void worker_loop();
    void drain();

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable done_;
    const std::function<void(std::size_t)>* job_ = nullptr;
    std::size_t job_count_ = 0;
    std::size_t next_index_ = 0;
    std::size_t finished_ = 0;
    std::exception_ptr error_;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

// Persistent per-learner task state, reused for every instance and batch.
struct Trainer {
    explicit Trainer(Learner& l);
    Learner* learner;
    std::span<const StreamRecord> instances;
    std::vector<std::vector<double>> votes;  // one vector per batch slot
    std::vector<std::uint32_t> trace;

    static std::size_t constructed() noexcept;
};

class Executor {
public:
    Executor(Ensemble& ensemble, ExecutorConfig config);

    RunSummary run(RecordSource& source, const EventSink& sink);

    // One mini-batch: stale-model classification, vote compilation, then
    // per-learner sequential training over the batch.
    void process_minibatch(std::span<const StreamRecord> batch, const EventSink& sink);
    // One prequential step for a single record (sequential or per-instance
    // parallel, depending on mode).
    void process_instance(const StreamRecord& rec, const EventSink& sink);

    const std::vector<std::uint32_t>& trace() const noexcept { return trace_; }
    std::size_t trainers_created() const noexcept { return trainers_.size(); }

private:
    bool parallel_classify() const;
    void for_each_trainer(bool parallel, const std::function<void(std::size_t)>& fn);
    void collect_trace();

    Ensemble& ensemble_;
    ExecutorConfig config_;
    std::optional<ThreadPool> pool_;
    std::vector<Trainer> trainers_;
    std::vector<std::uint32_t> trace_;
    std::vector<std::vector<double>> scratch_votes_;
    std::size_t batches_ = 0;
    double cpu_classify_ = 0.0;
    double cpu_compile_ = 0.0;
    double cpu_train_ = 0.0;
};

RunSummary run_sequential(Ensemble& ensemble, RecordSource& source, const EventSink& sink,
                          std::optional<std::chrono::nanoseconds> timeout = std::nullopt);
RunSummary run_parallel_instance(Ensemble& ensemble, RecordSource& source, const EventSink& sink, std::size_t num_threads,
                                 std::optional<std::chrono::nanoseconds> timeout = std::nullopt);
RunSummary run_minibatch(Ensemble& ensemble, RecordSource& source, const EventSink& sink, ExecutorConfig config);

// CPU seconds consumed by the whole process.
double process_cpu_seconds();

}  // namespace streambag
