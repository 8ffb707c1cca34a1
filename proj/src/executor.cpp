#include "streambag/executor.hpp"

#include <exception>
#include <stdexcept>

#include <time.h>

namespace streambag {

namespace {

std::atomic<std::size_t> g_trainers_constructed{0};

class CpuPhase {
public:
    explicit CpuPhase(double& acc) : acc_(acc), start_(process_cpu_seconds()) {}
    ~CpuPhase() { acc_ += process_cpu_seconds() - start_; }

private:
    double& acc_;
    double start_;
};

}  // namespace

double process_cpu_seconds() {
    timespec ts{};
    clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
    return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

std::string_view to_string(ExecutionMode m) {
    switch (m) {
        case ExecutionMode::sequential: return "sequential";
        case ExecutionMode::parallel_instance: return "parallel_instance";
        case ExecutionMode::mini_batch: return "mini_batch";
    }
    return "?";
}

std::optional<ExecutionMode> parse_execution_mode(std::string_view name) {
    if (name == "sequential" || name == "seq") return ExecutionMode::sequential;
    if (name == "parallel_instance" || name == "parallel") return ExecutionMode::parallel_instance;
    if (name == "mini_batch" || name == "minibatch") return ExecutionMode::mini_batch;
    return std::nullopt;
}

void ExecutorConfig::check() const {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (num_threads == 0) throw std::invalid_argument("thread count must be positive");
    if (timeout && timeout->count() < 0) throw std::invalid_argument("timeout must be non-negative");
}

RecordSource::Status VectorSource::next(StreamRecord& out, std::optional<std::int64_t>) {
    if (pos_ >= instances_.size()) return Status::end;
    out.seq = pos_;
    out.instance = instances_[pos_++];
    out.sent_at_ns = out.received_at_ns = monotonic_ns();
    return Status::record;
}

ThreadPool::ThreadPool(std::size_t num_threads) {
    if (num_threads == 0) throw std::invalid_argument("thread pool needs at least one thread");
    for (std::size_t i = 1; i < num_threads; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    wake_.notify_all();
    for (auto& t : workers_) t.join();
}

void ThreadPool::drain() {
    std::unique_lock lock(mutex_);
    const std::uint64_t gen = generation_;
    while (job_ && generation_ == gen && next_index_ < job_count_) {
        std::size_t i = next_index_++;
        const auto* job = job_;
        lock.unlock();
        std::exception_ptr error;
        try {
            (*job)(i);
        } catch (...) {
            error = std::current_exception();
        }
        lock.lock();
        if (error && !error_) error_ = error;
        if (++finished_ == job_count_) done_.notify_all();
    }
}

void ThreadPool::worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
        {
            std::unique_lock lock(mutex_);
            wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
        }
        drain();
    }
}

void ThreadPool::parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    if (workers_.empty()) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    {
        std::lock_guard lock(mutex_);
        job_ = &fn;
        job_count_ = count;
        next_index_ = 0;
        finished_ = 0;
        error_ = nullptr;
        ++generation_;
    }
    wake_.notify_all();
    drain();
    std::exception_ptr error;
    {
        std::unique_lock lock(mutex_);
        done_.wait(lock, [&] { return finished_ == job_count_; });
        job_ = nullptr;
        error = error_;
    }
    if (error) std::rethrow_exception(error);
}

Trainer::Trainer(Learner& l) : learner(&l) { ++g_trainers_constructed; }

std::size_t Trainer::constructed() noexcept { return g_trainers_constructed.load(); }

Executor::Executor(Ensemble& ensemble, ExecutorConfig config) : ensemble_(ensemble), config_(config) {
    config_.check();
    if (config_.mode != ExecutionMode::sequential) pool_.emplace(config_.num_threads);
    trainers_.reserve(ensemble_.size());
    for (std::size_t i = 0; i < ensemble_.size(); ++i) trainers_.emplace_back(ensemble_.learner(i));
    std::size_t slots = config_.mode == ExecutionMode::mini_batch ? config_.batch_size : 1;
    for (auto& t : trainers_) t.votes.assign(slots, std::vector<double>(ensemble_.num_classes(), 0.0));
    scratch_votes_.assign(ensemble_.size(), std::vector<double>(ensemble_.num_classes(), 0.0));
}

bool Executor::parallel_classify() const {
    if (config_.parallel_classify) return *config_.parallel_classify;
    return ensemble_.size() >= 8;
}

void Executor::for_each_trainer(bool parallel, const std::function<void(std::size_t)>& fn) {
    if (parallel && pool_) {
        pool_->parallel_for(trainers_.size(), fn);
    } else {
        for (std::size_t i = 0; i < trainers_.size(); ++i) fn(i);
    }
}

void Executor::collect_trace() {
    if (!config_.trace) return;
    for (auto& t : trainers_) {
        trace_.insert(trace_.end(), t.trace.begin(), t.trace.end());
        t.trace.clear();
    }
}

void Executor::process_instance(const StreamRecord& rec, const EventSink& sink) {
    const Instance& inst = rec.instance;
    const bool tracing = config_.trace;
    {
        CpuPhase phase(cpu_classify_);
        for (std::size_t i = 0; i < trainers_.size(); ++i) {
            auto& slot = trainers_[i].votes[0];
            trainers_[i].learner->votes(inst, slot);
            scratch_votes_[i] = slot;
            if (tracing) trainers_[i].trace.push_back(static_cast<std::uint32_t>(i));
        }
        collect_trace();
    }
    {
        CpuPhase phase(cpu_compile_);
        auto p = compile_votes(scratch_votes_, ensemble_.num_classes());
        if (sink) {
            sink(PredictionEvent{rec.seq, p.predicted_class, inst.class_index, monotonic_ns(), rec.sent_at_ns, rec.received_at_ns});
        }
    }
    {
        CpuPhase phase(cpu_train_);
        for_each_trainer(config_.mode != ExecutionMode::sequential, [&](std::size_t i) {
            auto& t = trainers_[i];
            t.learner->train(inst, t.votes[0]);
            if (tracing) t.trace.push_back(static_cast<std::uint32_t>(i));
        });
        collect_trace();
        ensemble_.apply_global_change();
    }
}

void Executor::process_minibatch(std::span<const StreamRecord> batch, const EventSink& sink) {
    if (batch.empty()) return;
    if (batch.size() > trainers_.front().votes.size()) {
        for (auto& t : trainers_) t.votes.resize(batch.size(), std::vector<double>(ensemble_.num_classes(), 0.0));
    }
    const bool tracing = config_.trace;
    {
        CpuPhase phase(cpu_classify_);
        for_each_trainer(parallel_classify(), [&](std::size_t i) {
            auto& t = trainers_[i];
            t.instances = batch;
            for (std::size_t j = 0; j < t.instances.size(); ++j) {
                t.learner->votes(t.instances[j].instance, t.votes[j]);
                if (tracing) t.trace.push_back(static_cast<std::uint32_t>(i));
            }
        });
        collect_trace();
    }
    {
        CpuPhase phase(cpu_compile_);
        for (std::size_t j = 0; j < batch.size(); ++j) {
            for (std::size_t i = 0; i < trainers_.size(); ++i) scratch_votes_[i] = trainers_[i].votes[j];
            auto p = compile_votes(scratch_votes_, ensemble_.num_classes());
            const auto& rec = batch[j];
            if (sink) {
                sink(PredictionEvent{rec.seq, p.predicted_class, rec.instance.class_index, monotonic_ns(), rec.sent_at_ns,
                                     rec.received_at_ns});
            }
        }
    }
    {
        CpuPhase phase(cpu_train_);
        for_each_trainer(true, [&](std::size_t i) {
            auto& t = trainers_[i];
            for (std::size_t j = 0; j < t.instances.size(); ++j) {
                // The first slot's votes are still current; later ones are not.
                if (j == 0) {
                    t.learner->train(t.instances[j].instance, t.votes[0]);
                } else {
                    t.learner->train(t.instances[j].instance);
                }
                if (tracing) t.trace.push_back(static_cast<std::uint32_t>(i));
            }
            t.instances = {};
        });
        collect_trace();
        ensemble_.apply_global_change();
    }
    ++batches_;
}

RunSummary Executor::run(RecordSource& source, const EventSink& sink) {
    RunSummary summary;
    const std::int64_t start = monotonic_ns();
    std::optional<std::int64_t> deadline;
    if (config_.timeout) deadline = start + config_.timeout->count();
    auto expired = [&] { return deadline && monotonic_ns() >= *deadline; };

    std::vector<StreamRecord> batch;
    if (config_.mode == ExecutionMode::mini_batch) batch.reserve(config_.batch_size);
    StreamRecord rec;
    for (;;) {
        if (config_.mode != ExecutionMode::mini_batch && expired()) {
            summary.timed_out = true;
            break;
        }
        auto status = source.next(rec, deadline);
        if (status == RecordSource::Status::end) break;
        if (status == RecordSource::Status::timeout || expired()) {
            summary.timed_out = true;
            break;
        }
        if (config_.mode == ExecutionMode::mini_batch) {
            batch.push_back(std::move(rec));
            if (batch.size() == config_.batch_size) {
                process_minibatch(batch, sink);
                summary.instances += batch.size();
                batch.clear();
            }
        } else {
            process_instance(rec, sink);
            ++summary.instances;
        }
    }
    // Timeout or end of stream: a partial batch is processed as if complete.
    if (!batch.empty()) {
        process_minibatch(batch, sink);
        summary.instances += batch.size();
        batch.clear();
    }
    summary.wall_seconds = static_cast<double>(monotonic_ns() - start) * 1e-9;
    summary.cpu_classify_seconds = cpu_classify_;
    summary.cpu_compile_seconds = cpu_compile_;
    summary.cpu_train_seconds = cpu_train_;
    summary.digest = ensemble_.digest();
    summary.resets = ensemble_.total_resets();
    summary.batches = batches_;
    summary.trainers_created = trainers_.size();
    summary.trace = trace_;
    return summary;
}

RunSummary run_sequential(Ensemble& ensemble, RecordSource& source, const EventSink& sink,
                          std::optional<std::chrono::nanoseconds> timeout) {
    ExecutorConfig cfg;
    cfg.mode = ExecutionMode::sequential;
    cfg.timeout = timeout;
    return Executor(ensemble, cfg).run(source, sink);
}

RunSummary run_parallel_instance(Ensemble& ensemble, RecordSource& source, const EventSink& sink, std::size_t num_threads,
                                 std::optional<std::chrono::nanoseconds> timeout) {
    ExecutorConfig cfg;
    cfg.mode = ExecutionMode::parallel_instance;
    cfg.num_threads = num_threads;
    cfg.timeout = timeout;
    return Executor(ensemble, cfg).run(source, sink);
}

RunSummary run_minibatch(Ensemble& ensemble, RecordSource& source, const EventSink& sink, ExecutorConfig config) {
    config.mode = ExecutionMode::mini_batch;
    return Executor(ensemble, config).run(source, sink);
}

}  // namespace streambag
