#include "streambag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "streambag/core.hpp"

namespace streambag {

void DelayStats::add(std::int64_t delay_ns) {
    if (delay_ns < 0) {
        ++negative_;
        delay_ns = 0;
    }
    delays_.push_back(delay_ns);
}

DelaySummary DelayStats::summary() const {
    DelaySummary s;
    s.count = delays_.size();
    if (delays_.empty()) return s;
    std::vector<std::int64_t> sorted = delays_;
    std::sort(sorted.begin(), sorted.end());
    long double sum = 0;
    for (auto d : sorted) sum += d;
    // nearest-rank percentiles
    auto rank = [&](double q) {
        auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
        return sorted[std::min(sorted.size(), std::max<std::size_t>(k, 1)) - 1];
    };
    s.mean_ms = static_cast<double>(sum / static_cast<long double>(sorted.size())) * 1e-6;
    s.p50_ms = static_cast<double>(rank(0.50)) * 1e-6;
    s.p95_ms = static_cast<double>(rank(0.95)) * 1e-6;
    s.max_ms = static_cast<double>(sorted.back()) * 1e-6;
    return s;
}

SyntheticSensor::SyntheticSensor(std::vector<double> watts, std::chrono::nanoseconds period)
    : watts_(std::move(watts)), period_s_(static_cast<double>(period.count()) * 1e-9) {
    if (!(period_s_ > 0.0)) throw std::invalid_argument("sensor period must be positive");
    for (double w : watts_) {
        if (!(w >= 0.0)) throw std::invalid_argument("power samples must be non-negative");
    }
}

SyntheticSensor SyntheticSensor::constant(double watts, std::chrono::nanoseconds period, std::chrono::nanoseconds length) {
    if (period.count() <= 0) throw std::invalid_argument("sensor period must be positive");
    auto n = static_cast<std::size_t>(length.count() / period.count());
    return SyntheticSensor(std::vector<double>(n, watts), period);
}

std::optional<EnergySample> SyntheticSensor::poll() {
    if (next_ >= watts_.size()) return std::nullopt;
    EnergySample s{static_cast<double>(next_) * period_s_, watts_[next_]};
    ++next_;
    return s;
}

namespace {

std::optional<std::uint64_t> read_u64_file(const std::string& path) {
    std::ifstream in(path);
    std::uint64_t v = 0;
    if (!(in >> v)) return std::nullopt;
    return v;
}

}  // namespace

OsCounterSensor::OsCounterSensor(std::vector<Counter> counters, std::function<std::int64_t()> clock_ns)
    : counters_(std::move(counters)), clock_(clock_ns ? std::move(clock_ns) : std::function<std::int64_t()>(monotonic_ns)) {
    if (counters_.empty()) throw std::runtime_error("no energy counters available");
    last_.assign(counters_.size(), 0);
    origin_ns_ = clock_();
}

std::vector<OsCounterSensor::Counter> OsCounterSensor::discover(const std::string& root) {
    namespace fs = std::filesystem;
    std::vector<Counter> out;
    std::error_code ec;
    if (!fs::is_directory(root, ec)) return out;
    std::vector<fs::path> zones;
    for (const auto& e : fs::directory_iterator(root, ec)) {
        auto name = e.path().filename().string();
        // top-level zones only: "intel-rapl:0", not "intel-rapl:0:1"
        auto colon = name.find(':');
        if (colon == std::string::npos || name.find(':', colon + 1) != std::string::npos) continue;
        zones.push_back(e.path());
    }
    std::sort(zones.begin(), zones.end());
    for (const auto& z : zones) {
        auto energy = (z / "energy_uj").string();
        if (!read_u64_file(energy)) continue;
        out.push_back(Counter{energy, read_u64_file((z / "max_energy_range_uj").string()).value_or(0)});
    }
    return out;
}

std::uint64_t OsCounterSensor::read_total() {
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < counters_.size(); ++i) {
        auto v = read_u64_file(counters_[i].energy_path);
        if (!v) throw std::runtime_error("cannot read " + counters_[i].energy_path);
        std::uint64_t prev = last_[i];
        std::uint64_t delta = *v >= prev ? *v - prev : (counters_[i].max_range_uj ? counters_[i].max_range_uj - prev + *v : 0);
        last_[i] = *v;
        total += delta;
    }
    return total;
}

std::optional<EnergySample> OsCounterSensor::poll() {
    std::int64_t now = clock_();
    std::uint64_t delta_uj = read_total();
    if (!last_ns_) {
        last_ns_ = now;
        return std::nullopt;
    }
    double dt = static_cast<double>(now - *last_ns_) * 1e-9;
    last_ns_ = now;
    if (!(dt > 0.0)) return std::nullopt;
    return EnergySample{static_cast<double>(now - origin_ns_) * 1e-9, static_cast<double>(delta_uj) * 1e-6 / dt};
}

std::unique_ptr<EnergySensor> make_sensor(const std::string& kind, std::chrono::nanoseconds period,
                                          std::chrono::nanoseconds length) {
    if (kind == "null" || kind.empty()) return std::make_unique<NullSensor>();
    if (kind.rfind("synthetic", 0) == 0) {
        double watts = 4.0;
        if (kind.size() > 9) {
            if (kind[9] != ':') throw std::invalid_argument("unknown sensor '" + kind + "'");
            try {
                watts = std::stod(kind.substr(10));
            } catch (const std::exception&) {
                throw std::invalid_argument("bad synthetic sensor power in '" + kind + "'");
            }
            if (!(watts >= 0.0)) throw std::invalid_argument("synthetic sensor power must be non-negative");
        }
        return std::make_unique<SyntheticSensor>(SyntheticSensor::constant(watts, period, length));
    }
    if (kind == "os_counter") {
        auto counters = OsCounterSensor::discover();
        if (counters.empty()) throw std::runtime_error("os_counter sensor: no readable energy counters on this host");
        return std::make_unique<OsCounterSensor>(std::move(counters));
    }
    throw std::invalid_argument("unknown sensor '" + kind + "'");
}

SensorSampler::SensorSampler(EnergySensor& sensor, std::chrono::nanoseconds period) : sensor_(sensor), period_(period) {
    if (period.count() <= 0) throw std::invalid_argument("sampling period must be positive");
}

SensorSampler::~SensorSampler() { stop(); }

void SensorSampler::start() {
    std::lock_guard lock(mutex_);
    if (running_) return;
    running_ = true;
    stop_ = false;
    if (!sensor_.virtual_clock()) thread_ = std::thread([this] { loop(); });
}

void SensorSampler::loop() {
    std::unique_lock lock(mutex_);
    auto next = std::chrono::steady_clock::now();
    while (!stop_) {
        lock.unlock();
        auto s = sensor_.poll();
        lock.lock();
        if (s) samples_.push_back(*s);
        next += period_;
        wake_.wait_until(lock, next, [&] { return stop_; });
    }
}

void SensorSampler::stop() {
    {
        std::lock_guard lock(mutex_);
        if (!running_) return;
        running_ = false;
        stop_ = true;
    }
    wake_.notify_all();
    if (thread_.joinable()) thread_.join();
    if (sensor_.virtual_clock()) {
        std::lock_guard lock(mutex_);
        while (auto s = sensor_.poll()) samples_.push_back(*s);
    }
}

std::vector<EnergySample> SensorSampler::samples() const {
    std::lock_guard lock(mutex_);
    return samples_;
}

double energy_joules(std::span<const EnergySample> samples, double t0, double t1) {
    if (!(t1 > t0)) throw std::domain_error("energy window must have positive length");
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : samples) {
        if (s.t >= t0 && s.t <= t1) {
            sum += s.watts;
            ++n;
        }
    }
    if (n == 0) throw std::domain_error("no power samples in the energy window");
    return sum / static_cast<double>(n) * (t1 - t0);
}

double energy_joules(std::span<const EnergySample> samples, double window_seconds) {
    if (samples.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& s : samples) sum += s.watts;
    return sum / static_cast<double>(samples.size()) * window_seconds;
}

double jpi(double joules, std::uint64_t instances) {
    if (instances == 0) throw std::domain_error("joules per instance needs at least one instance");
    return joules / static_cast<double>(instances);
}

double throughput(std::uint64_t instances, double seconds) {
    if (!(seconds > 0.0)) throw std::domain_error("throughput needs a positive duration");
    return static_cast<double>(instances) / seconds;
}

namespace {

void check_rd(std::uint64_t n, std::uint64_t m) {
    if (n == 0 || m == 0) throw std::invalid_argument("reuse distance model needs n, m >= 1");
}

}  // namespace

std::uint64_t rd_sequential(std::uint64_t n, std::uint64_t m) {
    check_rd(n, m);
    return n * m * m;
}

std::uint64_t rd_minibatch(std::uint64_t n, std::uint64_t m, std::uint64_t b) {
    check_rd(n, m);
    if (b == 0) throw std::invalid_argument("reuse distance model needs b >= 1");
    std::uint64_t full = n / b;
    std::uint64_t r = n % b;
    std::uint64_t total = full * m * (m + b - 1);
    if (r > 0) total += m * (m + r - 1);
    return total;
}

bool rd_outer_sum_dominates(std::uint64_t n, std::uint64_t m, std::uint64_t b) { return n > b * m * m; }

std::vector<std::optional<std::uint64_t>> empirical_rd(std::span<const std::uint32_t> trace, RdCounting counting) {
    std::vector<std::optional<std::uint64_t>> out;
    out.reserve(trace.size());
    std::unordered_map<std::uint32_t, std::size_t> last;
    // Fenwick tree over positions marking the latest access of each id.
    std::vector<std::int64_t> tree(trace.size() + 1, 0);
    auto update = [&](std::size_t pos, std::int64_t d) {
        for (std::size_t i = pos + 1; i < tree.size(); i += i & (~i + 1)) tree[i] += d;
    };
    auto prefix = [&](std::size_t end) {  // sum over [0, end)
        std::int64_t s = 0;
        for (std::size_t i = end; i > 0; i -= i & (~i + 1)) s += tree[i];
        return s;
    };
    for (std::size_t i = 0; i < trace.size(); ++i) {
        auto it = last.find(trace[i]);
        if (it == last.end()) {
            out.emplace_back(std::nullopt);
            last.emplace(trace[i], i);
        } else {
            std::size_t p = it->second;
            if (counting == RdCounting::accesses) {
                out.emplace_back(i - p);
            } else {
                // distinct ids touched strictly between p and i, plus the reused one
                auto between = prefix(i) - prefix(p + 1);
                out.emplace_back(static_cast<std::uint64_t>(between) + 1);
            }
            update(p, -1);
            it->second = i;
        }
        update(i, 1);
    }
    return out;
}

std::string format_rd(const std::vector<std::optional<std::uint64_t>>& rd, std::size_t group) {
    std::string out;
    for (std::size_t i = 0; i < rd.size(); ++i) {
        if (group > 0 && i > 0 && i % group == 0) out.push_back(' ');
        out += rd[i] ? std::to_string(*rd[i]) : std::string("∞");
    }
    return out;
}

std::uint64_t total_finite_rd(const std::vector<std::optional<std::uint64_t>>& rd) {
    std::uint64_t s = 0;
    for (const auto& v : rd) {
        if (v) s += *v;
    }
    return s;
}

}  // namespace streambag
