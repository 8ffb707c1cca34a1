#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace streambag {

class PrequentialAccuracy {
public:
    void add(bool correct) noexcept {
        ++total_;
        if (correct) ++correct_;
    }
    std::uint64_t correct() const noexcept { return correct_; }
    std::uint64_t total() const noexcept { return total_; }
    // 0 when nothing was observed.
    double accuracy() const noexcept { return total_ ? static_cast<double>(correct_) / static_cast<double>(total_) : 0.0; }

private:
    std::uint64_t correct_ = 0;
    std::uint64_t total_ = 0;
};

struct DelaySummary {
    std::size_t count = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double max_ms = 0.0;
};

class DelayStats {
public:
    // Negative delays mean the two stamps came from different clocks; they are
    // clamped to zero and counted.
    void add(std::int64_t delay_ns);
    DelaySummary summary() const;
    std::size_t negative() const noexcept { return negative_; }
    const std::vector<std::int64_t>& values() const noexcept { return delays_; }

private:
    std::vector<std::int64_t> delays_;
    std::size_t negative_ = 0;
};

struct EnergySample {
    double t = 0.0;  // seconds
    double watts = 0.0;
};

class EnergySensor {
public:
    virtual ~EnergySensor() = default;
    virtual std::string name() const = 0;
    // Next reading. nullopt when no power figure is available yet (the first
    // poll of a counter sensor) or the sensor has nothing to report.
    virtual std::optional<EnergySample> poll() = 0;
    // True when the sensor drives its own clock and need not be polled in
    // real time.
    virtual bool virtual_clock() const noexcept { return false; }
};

class NullSensor final : public EnergySensor {
public:
    std::string name() const override { return "null"; }
    std::optional<EnergySample> poll() override { return std::nullopt; }
};

// Replays a scripted power trace on a virtual clock: sample i is reported at
// t = i * period.
class SyntheticSensor final : public EnergySensor {
public:
    SyntheticSensor(std::vector<double> watts, std::chrono::nanoseconds period);
    static SyntheticSensor constant(double watts, std::chrono::nanoseconds period, std::chrono::nanoseconds length);

    std::string name() const override { return "synthetic"; }
    std::optional<EnergySample> poll() override;
    bool virtual_clock() const noexcept override { return true; }
    std::size_t size() const noexcept { return watts_.size(); }

private:
    std::vector<double> watts_;
    double period_s_;
    std::size_t next_ = 0;
};

// Cumulative energy counters exposed as files (microjoules), e.g.
// /sys/class/powercap/intel-rapl:0/energy_uj. Consecutive readings are
// differenced into watts; counter wraparound uses max_energy_range_uj.
class OsCounterSensor final : public EnergySensor {
public:
    struct Counter {
        std::string energy_path;
        std::uint64_t max_range_uj = 0;  // 0: no wrap correction
    };
    explicit OsCounterSensor(std::vector<Counter> counters, std::function<std::int64_t()> clock_ns = {});
    // Top-level package zones under `root`; empty if none are readable.
    static std::vector<Counter> discover(const std::string& root = "/sys/class/powercap");

    std::string name() const override { return "os_counter"; }
    std::optional<EnergySample> poll() override;

private:
    std::uint64_t read_total();

    std::vector<Counter> counters_;
    std::vector<std::uint64_t> last_;
    std::function<std::int64_t()> clock_;
    std::optional<std::int64_t> last_ns_;
    std::int64_t origin_ns_ = 0;
};

// Builds "null", "synthetic[:watts]" or "os_counter". Throws
// std::invalid_argument for unknown kinds and std::runtime_error when
// os_counter finds no readable counters.
std::unique_ptr<EnergySensor> make_sensor(const std::string& kind, std::chrono::nanoseconds period,
                                          std::chrono::nanoseconds length);

// Polls a real-time sensor every `period` on its own thread. A virtual-clock
// sensor is drained in stop() instead.
class SensorSampler {
public:
    SensorSampler(EnergySensor& sensor, std::chrono::nanoseconds period = std::chrono::milliseconds(100));
    ~SensorSampler();
    SensorSampler(const SensorSampler&) = delete;
    SensorSampler& operator=(const SensorSampler&) = delete;

    void start();
    void stop();
    std::vector<EnergySample> samples() const;

private:
    void loop();

    EnergySensor& sensor_;
    std::chrono::nanoseconds period_;
    mutable std::mutex mutex_;
    std::condition_variable wake_;
    std::vector<EnergySample> samples_;
    std::thread thread_;
    bool stop_ = false;
    bool running_ = false;
};

// Mean power of the samples whose timestamp falls in [t0, t1] times the window
// length. Throws std::domain_error for an empty window.
double energy_joules(std::span<const EnergySample> samples, double t0, double t1);
// Mean power of all samples times `window_seconds`; 0 when there are none.
double energy_joules(std::span<const EnergySample> samples, double window_seconds);

// Throws std::domain_error when instances == 0.
double jpi(double joules, std::uint64_t instances);
// Throws std::domain_error when seconds <= 0.
double throughput(std::uint64_t instances, double seconds);

std::uint64_t rd_sequential(std::uint64_t n, std::uint64_t m);
// ceil(n/b) batches; a trailing partial batch of r instances adds m(m+r-1).
std::uint64_t rd_minibatch(std::uint64_t n, std::uint64_t m, std::uint64_t b);
// n > b m^2: the batch count saving outweighs the larger inner term.
bool rd_outer_sum_dominates(std::uint64_t n, std::uint64_t m, std::uint64_t b);

enum class RdCounting : std::uint8_t {
    distinct,  // distinct ids since the previous access, inclusive
    accesses,  // accesses since the previous access, inclusive
};

// nullopt marks a first access.
std::vector<std::optional<std::uint64_t>> empirical_rd(std::span<const std::uint32_t> trace,
                                                        RdCounting counting = RdCounting::distinct);
// Renders values as text, "∞" for first accesses, grouped in chunks of
// `group` separated by spaces (0: no grouping).
std::string format_rd(const std::vector<std::optional<std::uint64_t>>& rd, std::size_t group = 0);
// Sum of the finite entries.
std::uint64_t total_finite_rd(const std::vector<std::optional<std::uint64_t>>& rd);

}  // namespace streambag
