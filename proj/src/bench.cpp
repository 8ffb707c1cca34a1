#include "streambag/bench.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>

#include "streambag/metrics.hpp"

namespace streambag {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

double to_double(std::string_view key, std::string_view v) {
    std::string s = trim(v);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(out)) {
        throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
    }
    return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
    std::string s = trim(v);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + s + "'");
    }
    return out;
}

std::uint32_t to_u32(std::string_view key, std::string_view v) {
    auto x = to_uint(key, v);
    if (x > 0xffffffffULL) throw ConfigError(std::string(key) + ": value too large");
    return static_cast<std::uint32_t>(x);
}

bool to_bool(std::string_view key, std::string_view v) {
    std::string s = trim(v);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw ConfigError(std::string(key) + ": expected a boolean, got '" + s + "'");
}

std::vector<std::string> split_list(std::string_view v) {
    std::vector<std::string> out;
    std::string s(v);
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string dataset_tag(const std::string& dataset) {
    if (dataset.empty()) return "stream";
    std::string name = dataset.rfind("synthetic:", 0) == 0 ? dataset : std::filesystem::path(dataset).stem().string();
    for (auto& c : name) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
    }
    return name;
}

LoadedDataset open_dataset(const std::string& spec) {
    if (spec.empty()) throw ConfigError("dataset is required");
    if (spec.rfind("synthetic:", 0) != 0) {
        std::error_code ec;
        if (!std::filesystem::is_regular_file(spec, ec)) throw ConfigError("dataset file '" + spec + "' not found");
    }
    try {
        return load_dataset(spec);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

bool peer_is_loopback(int fd) {
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    if (::getpeername(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) return true;
    if (addr.ss_family == AF_INET) {
        auto a = ntohl(reinterpret_cast<sockaddr_in*>(&addr)->sin_addr.s_addr);
        return (a >> 24) == 127;
    }
    return true;
}

struct RunAccumulator {
    PrequentialAccuracy accuracy;
    DelayStats delays;
    bool receiver_side = false;

    EventSink sink() {
        return [this](const PredictionEvent& e) {
            accuracy.add(e.predicted_class == e.true_class);
            delays.add(e.emitted_at_ns - (receiver_side ? e.received_at_ns : e.sent_at_ns));
        };
    }
};

constexpr auto sensor_period = std::chrono::milliseconds(100);

// Runs the executor with the configured sensor and fills a result row.
ResultRow execute(const RunSpec& spec, const std::string& dataset_name, std::shared_ptr<const Schema> schema,
                  RecordSource& source, bool receiver_side) {
    Ensemble ensemble(schema, spec.ensemble_config());
    Executor executor(ensemble, spec.executor_config());
    RunAccumulator acc;
    acc.receiver_side = receiver_side;

    const bool synthetic = spec.sensor.rfind("synthetic", 0) == 0;
    std::unique_ptr<EnergySensor> live;
    std::optional<SensorSampler> sampler;
    if (!synthetic) {
        live = make_sensor(spec.sensor, sensor_period, {});
        sampler.emplace(*live, sensor_period);
        sampler->start();
    }
    RunSummary summary = executor.run(source, acc.sink());
    double joules = 0.0;
    std::string sensor_note = "sensor=" + spec.sensor;
    if (sampler) {
        sampler->stop();
        auto samples = sampler->samples();
        joules = energy_joules(samples, summary.wall_seconds);
        if (samples.empty() && spec.sensor != "null") sensor_note += "(no samples)";
    } else {
        double window = spec.energy_window_s.value_or(summary.wall_seconds);
        auto sensor = make_sensor(spec.sensor, sensor_period,
                                  std::chrono::nanoseconds(static_cast<std::int64_t>(std::llround(window * 1e9))));
        SensorSampler virt(*sensor, sensor_period);
        virt.start();
        virt.stop();
        auto samples = virt.samples();
        if (!samples.empty() && window > 0.0) joules = energy_joules(samples, 0.0, window);
        if (spec.energy_window_s) sensor_note += ";virtual_window=" + fmt(window);
    }

    ResultRow row;
    row.run_id = spec.run_id.empty() ? spec.derived_run_id() : spec.run_id;
    row.dataset = dataset_name;
    row.algorithm = std::string(to_string(spec.algorithm));
    row.m = spec.m;
    row.executor = spec.executor_label();
    row.batch_size = spec.executor == ExecutionMode::mini_batch ? spec.batch_size : 1;
    row.threads = spec.executor == ExecutionMode::sequential ? 1 : spec.effective_threads();
    row.rate_fraction = spec.rate_fraction;
    row.instances = summary.instances;
    row.accuracy = acc.accuracy.accuracy();
    row.wall_s = summary.wall_seconds;
    row.ips = summary.wall_seconds > 0.0 ? throughput(summary.instances, summary.wall_seconds) : 0.0;
    auto d = acc.delays.summary();
    row.delay_mean_ms = d.mean_ms;
    row.delay_p50_ms = d.p50_ms;
    row.delay_p95_ms = d.p95_ms;
    row.joules = joules;
    row.jpi = summary.instances > 0 ? jpi(joules, summary.instances) : 0.0;
    row.resets = summary.resets;
    row.digest = summary.digest;
    row.notes = sensor_note + ";leaf=" +
                (spec.ensemble.tree.leaf_predictor == LeafPredictor::naive_bayes_adaptive ? "nba" : "mc") + ";vote=unweighted";
    if (receiver_side) row.notes += ";delay=receiver_side";
    if (summary.timed_out) row.notes += ";timed_out";
    return row;
}

}  // namespace

std::pair<ExecutionMode, std::size_t> parse_executor_label(std::string_view label) {
    std::string s = trim(label);
    if (s == "seq" || s == "Seq" || s == "sequential") return {ExecutionMode::sequential, 1};
    if (s == "par" || s == "Par" || s == "parallel" || s == "parallel_instance") return {ExecutionMode::parallel_instance, 1};
    if (s == "mini_batch" || s == "minibatch") return {ExecutionMode::mini_batch, 0};
    if (s.size() > 1 && (s[0] == 'B' || s[0] == 'b')) {
        auto b = to_uint("executor", std::string_view(s).substr(1));
        if (b == 0) throw ConfigError("executor: mini-batch size must be positive");
        return {ExecutionMode::mini_batch, static_cast<std::size_t>(b)};
    }
    throw ConfigError("unknown executor '" + s + "' (use seq, par or B<n>)");
}

void RunSpec::set(std::string_view key_in, std::string_view value_in) {
    std::string key = trim(key_in);
    std::string value = trim(value_in);
    auto& tree = ensemble.tree;
    if (key == "algorithm") {
        auto a = parse_algorithm(value);
        if (!a) throw ConfigError("unknown algorithm '" + value + "'");
        algorithm = *a;
    } else if (key == "m" || key == "ensemble_size") {
        m = to_u32(key, value);
    } else if (key == "executor") {
        auto [mode, b] = parse_executor_label(value);
        executor = mode;
        if (b > 0) batch_size = b;
    } else if (key == "batch_size" || key == "L_mb") {
        batch_size = static_cast<std::size_t>(to_uint(key, value));
    } else if (key == "threads") {
        threads = static_cast<std::size_t>(to_uint(key, value));
    } else if (key == "dataset") {
        dataset = value;
    } else if (key == "rate_fraction") {
        rate_fraction = to_double(key, value);
    } else if (key == "duration") {
        duration_s = to_double(key, value);
    } else if (key == "count") {
        count = to_uint(key, value);
    } else if (key == "seed") {
        seed = to_uint(key, value);
    } else if (key == "sensor") {
        sensor = value;
    } else if (key == "output") {
        output = value;
    } else if (key == "listen") {
        listen = value;
    } else if (key == "timeout") {
        timeout_s = to_double(key, value);
    } else if (key == "energy_window") {
        energy_window_s = to_double(key, value);
    } else if (key == "parallel_classify") {
        parallel_classify = to_bool(key, value);
    } else if (key == "repetition") {
        repetition = to_u32(key, value);
    } else if (key == "run_id") {
        run_id = value;
    } else if (key == "lambda") {
        ensemble.lambda = to_double(key, value);
    } else if (key == "subspace_size") {
        ensemble.subspace_size = to_u32(key, value);
    } else if (key == "delta_adwin") {
        ensemble.delta_adwin = to_double(key, value);
    } else if (key == "delta_warn") {
        ensemble.delta_warn = to_double(key, value);
    } else if (key == "delta_drift") {
        ensemble.delta_drift = to_double(key, value);
    } else if (key == "grace_period") {
        tree.grace_period = to_u32(key, value);
    } else if (key == "split_confidence") {
        tree.split_confidence = to_double(key, value);
    } else if (key == "tie_threshold") {
        tree.tie_threshold = to_double(key, value);
    } else if (key == "numeric_bins") {
        tree.numeric_bins = to_u32(key, value);
    } else if (key == "leaf_predictor") {
        if (value == "majority_class" || value == "mc") {
            tree.leaf_predictor = LeafPredictor::majority_class;
        } else if (value == "naive_bayes_adaptive" || value == "nba") {
            tree.leaf_predictor = LeafPredictor::naive_bayes_adaptive;
        } else {
            throw ConfigError("unknown leaf_predictor '" + value + "'");
        }
    } else {
        throw ConfigError("unknown setting '" + key + "'");
    }
}

void RunSpec::check() const {
    if (m == 0) throw ConfigError("m must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (executor != ExecutionMode::mini_batch && batch_size != 1) {
        throw ConfigError("batch_size is only meaningful with a mini-batch executor");
    }
    if (rate_fraction < 0.0 || rate_fraction > 1.0) throw ConfigError("rate_fraction must be in [0, 1]");
    if (!(duration_s >= 0.0)) throw ConfigError("duration must be non-negative");
    if (timeout_s && !(*timeout_s >= 0.0)) throw ConfigError("timeout must be non-negative");
    if (energy_window_s) {
        if (!(*energy_window_s > 0.0)) throw ConfigError("energy_window must be positive");
        if (sensor.rfind("synthetic", 0) != 0) throw ConfigError("energy_window needs a synthetic sensor");
    }
    if (sensor != "null" && sensor != "os_counter" && sensor.rfind("synthetic", 0) != 0) {
        throw ConfigError("unknown sensor '" + sensor + "'");
    }
    if (!listen.empty()) {
        try {
            (void)Endpoint::parse(listen);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("listen: ") + e.what());
        }
        if (count) throw ConfigError("count applies to offline runs; the generator decides the stream length");
    } else if (dataset.empty()) {
        throw ConfigError("offline runs need a dataset");
    }
    try {
        ensemble_config().check(1u << 30);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

std::size_t RunSpec::effective_threads() const {
    if (threads > 0) return threads;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

std::string RunSpec::executor_label() const {
    switch (executor) {
        case ExecutionMode::sequential: return "Seq";
        case ExecutionMode::parallel_instance: return "Par";
        case ExecutionMode::mini_batch: return "B" + std::to_string(batch_size);
    }
    return "?";
}

std::string RunSpec::derived_run_id() const {
    std::ostringstream id;
    id << to_string(algorithm) << "-m" << m << "-" << executor_label() << "-" << dataset_tag(dataset);
    if (!listen.empty() || rate_fraction > 0.0) id << "-L" << fmt(rate_fraction);
    id << "-s" << seed << "-r" << repetition;
    return id.str();
}

EnsembleConfig RunSpec::ensemble_config() const {
    EnsembleConfig c = ensemble;
    c.algorithm = algorithm;
    c.size = m;
    c.base_seed = seed;
    return c;
}

ExecutorConfig RunSpec::executor_config() const {
    ExecutorConfig c;
    c.mode = executor;
    c.batch_size = executor == ExecutionMode::mini_batch ? batch_size : 1;
    c.num_threads = executor == ExecutionMode::sequential ? 1 : effective_threads();
    if (timeout_s) c.timeout = std::chrono::nanoseconds(static_cast<std::int64_t>(std::llround(*timeout_s * 1e9)));
    c.parallel_classify = parallel_classify;
    return c;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::string s(text);
    std::stringstream ss(s);
    std::string line;
    std::size_t n = 0;
    while (std::getline(ss, line)) {
        ++n;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key=value");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

RunSpec parse_run_spec(std::string_view text) {
    RunSpec spec;
    for (const auto& [k, v] : parse_key_values(text)) spec.set(k, v);
    return spec;
}

const std::vector<std::string>& result_columns() {
    static const std::vector<std::string> cols{
        "run_id",   "dataset", "algorithm", "m",          "executor",     "L_mb",         "threads",
        "rate_fraction", "instances", "accuracy", "ips", "delay_mean_ms", "delay_p50_ms", "delay_p95_ms",
        "joules",   "jpi",     "resets",    "digest",     "wall_s",       "notes"};
    return cols;
}

void write_result_header(std::ostream& out) {
    const auto& cols = result_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
}

void write_result_row(std::ostream& out, const ResultRow& r) {
    out << csv_field(r.run_id) << ',' << csv_field(r.dataset) << ',' << r.algorithm << ',' << r.m << ',' << r.executor << ','
        << r.batch_size << ',' << r.threads << ',' << fmt(r.rate_fraction) << ',' << r.instances << ',' << fmt(r.accuracy) << ','
        << fmt(r.ips) << ',' << fmt(r.delay_mean_ms) << ',' << fmt(r.delay_p50_ms) << ',' << fmt(r.delay_p95_ms) << ','
        << fmt(r.joules) << ',' << fmt(r.jpi) << ',' << r.resets << ',' << r.digest << ',' << fmt(r.wall_s) << ','
        << csv_field(r.notes) << '\n';
}

void append_result(const std::string& path, const ResultRow& row) {
    std::error_code ec;
    bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write results file '" + path + "'");
    if (fresh) write_result_header(out);
    write_result_row(out, row);
    out.flush();
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::vector<ResultRow> read_results(std::istream& in) {
    std::vector<ResultRow> rows;
    std::string line;
    std::size_t n = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        auto f = split_csv_line(line);
        if (header.empty()) {
            header = f;
            if (header != result_columns()) throw std::runtime_error("results file: unexpected header");
            continue;
        }
        if (f.size() != header.size()) throw std::runtime_error("results file line " + std::to_string(n) + ": wrong column count");
        auto num = [&](std::size_t i) {
            try {
                return f[i].empty() ? 0.0 : std::stod(f[i]);
            } catch (const std::exception&) {
                throw std::runtime_error("results file line " + std::to_string(n) + ": bad number '" + f[i] + "'");
            }
        };
        ResultRow r;
        r.run_id = f[0];
        r.dataset = f[1];
        r.algorithm = f[2];
        r.m = static_cast<std::uint32_t>(num(3));
        r.executor = f[4];
        r.batch_size = static_cast<std::size_t>(num(5));
        r.threads = static_cast<std::size_t>(num(6));
        r.rate_fraction = num(7);
        r.instances = static_cast<std::uint64_t>(num(8));
        r.accuracy = num(9);
        r.ips = num(10);
        r.delay_mean_ms = num(11);
        r.delay_p50_ms = num(12);
        r.delay_p95_ms = num(13);
        r.joules = num(14);
        r.jpi = num(15);
        r.resets = static_cast<std::uint64_t>(num(16));
        r.digest = f[17];
        r.wall_s = num(18);
        r.notes = f[19];
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ResultRow> read_results_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) return {};
    return read_results(in);
}

ResultRow process_offline(const RunSpec& spec) {
    spec.check();
    auto data = open_dataset(spec.dataset);
    auto schema = std::make_shared<const Schema>(data.schema);
    std::span<const Instance> instances(data.instances);
    if (spec.count && *spec.count < instances.size()) instances = instances.first(static_cast<std::size_t>(*spec.count));
    VectorSource source(instances);
    return execute(spec, data.name, schema, source, false);
}

ResultRow process_stream(const RunSpec& spec, Listener& listener, std::optional<std::chrono::milliseconds> accept_timeout) {
    Socket sock = listener.accept(accept_timeout);
    bool remote = !peer_is_loopback(sock.fd());
    const std::size_t capacity = 4 * (spec.executor == ExecutionMode::mini_batch ? spec.batch_size : 1);
    StreamReceiver receiver(std::move(sock), capacity);
    auto schema = std::make_shared<const Schema>(receiver.schema());
    std::string name = spec.dataset.empty() ? schema->relation() : spec.dataset;
    return execute(spec, name, schema, receiver, remote);
}

ResultRow cmd_process(const RunSpec& spec) {
    spec.check();
    ResultRow row;
    if (spec.listen.empty()) {
        row = process_offline(spec);
    } else {
        Listener listener(Endpoint::parse(spec.listen));
        row = process_stream(spec, listener);
    }
    if (!spec.output.empty()) append_result(spec.output, row);
    return row;
}

void GenerateSpec::set(std::string_view key_in, std::string_view value_in) {
    std::string key = trim(key_in);
    std::string value = trim(value_in);
    if (key == "dataset") {
        dataset = value;
    } else if (key == "connect") {
        connect = value;
    } else if (key == "rate") {
        rate = to_double(key, value);
    } else if (key == "rate_fraction") {
        rate_fraction = to_double(key, value);
    } else if (key == "capacity") {
        capacity = to_double(key, value);
    } else if (key == "duration") {
        duration_s = to_double(key, value);
    } else if (key == "count") {
        count = to_uint(key, value);
    } else if (key == "log") {
        log = value;
    } else {
        throw ConfigError("unknown setting '" + key + "'");
    }
}

std::optional<double> GenerateSpec::effective_rate() const {
    if (rate && rate_fraction > 0.0) throw ConfigError("give either rate or rate_fraction with capacity, not both");
    if (rate) {
        if (!(*rate > 0.0)) throw ConfigError("rate must be positive");
        return rate;
    }
    if (rate_fraction > 0.0) {
        if (rate_fraction > 1.0) throw ConfigError("rate_fraction must be in (0, 1]");
        if (!(capacity > 0.0)) throw ConfigError("rate_fraction needs a positive capacity");
        return rate_fraction * capacity;
    }
    return std::nullopt;
}

SendLog cmd_generate(const GenerateSpec& spec) {
    auto rate = spec.effective_rate();
    if (spec.duration_s && *spec.duration_s < 0.0) throw ConfigError("duration must be non-negative");
    Endpoint to;
    try {
        to = Endpoint::parse(spec.connect);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("connect: ") + e.what());
    }
    auto data = open_dataset(spec.dataset);
    Socket sock = connect_to(to);
    LoadOptions opts;
    opts.rate = rate;
    if (spec.duration_s) opts.duration = std::chrono::nanoseconds(static_cast<std::int64_t>(std::llround(*spec.duration_s * 1e9)));
    opts.count = spec.count;
    SendLog log = generate_load(sock.fd(), data.schema, data.instances, opts);
    sock.shutdown_write();
    if (!spec.log.empty()) {
        std::ofstream out(spec.log);
        if (!out) throw std::runtime_error("cannot write send log '" + spec.log + "'");
        write_send_log(out, log);
    }
    return log;
}

void GridSpec::set(std::string_view key_in, std::string_view value_in) {
    std::string key = trim(key_in);
    std::string value = trim(value_in);
    if (key == "algorithms") {
        algorithms.clear();
        for (const auto& a : split_list(value)) {
            auto alg = parse_algorithm(a);
            if (!alg) throw ConfigError("unknown algorithm '" + a + "'");
            algorithms.push_back(*alg);
        }
    } else if (key == "datasets") {
        datasets = split_list(value);
    } else if (key == "executors") {
        executors = split_list(value);
        for (const auto& e : executors) (void)parse_executor_label(e);
    } else if (key == "loads") {
        loads.clear();
        for (const auto& l : split_list(value)) loads.push_back(to_double(key, l));
    } else if (key == "repetitions") {
        repetitions = to_u32(key, value);
    } else if (key == "mode") {
        if (value == "network") {
            network = true;
        } else if (value == "offline") {
            network = false;
        } else {
            throw ConfigError("mode must be network or offline");
        }
    } else if (key == "warmup") {
        warmup_s = to_double(key, value);
    } else if (key == "duration") {
        duration_s = to_double(key, value);
    } else if (key == "output") {
        output = value;
    } else {
        base.set(key, value);
    }
}

void GridSpec::check() const {
    if (algorithms.empty() || datasets.empty() || executors.empty()) throw ConfigError("grid needs algorithms, datasets and executors");
    if (network && loads.empty()) throw ConfigError("network grid needs at least one load");
    for (double l : loads) {
        if (!(l > 0.0 && l <= 1.0)) throw ConfigError("loads must be in (0, 1]");
    }
    if (repetitions == 0) throw ConfigError("repetitions must be >= 1");
    if (network && !(warmup_s > 0.0)) throw ConfigError("warmup must be positive");
    if (!(duration_s >= 0.0)) throw ConfigError("duration must be non-negative");
    if (output.empty()) throw ConfigError("grid needs an output path");
}

GridSpec parse_grid_spec(std::string_view text) {
    GridSpec g;
    for (const auto& [k, v] : parse_key_values(text)) g.set(k, v);
    return g;
}

namespace {

// Runs a processor on an ephemeral loopback port in a helper thread while
// `drive` streams to it.
template <typename Drive>
ResultRow with_processor(const RunSpec& spec, Drive&& drive) {
    Listener listener(Endpoint{"127.0.0.1", 0});
    Endpoint at{"127.0.0.1", listener.port()};
    auto processor = std::async(std::launch::async, [&] { return process_stream(spec, listener, std::chrono::milliseconds(30000)); });
    std::exception_ptr drive_error;
    try {
        drive(at);
    } catch (...) {
        drive_error = std::current_exception();
    }
    if (drive_error) {
        // Unblock a processor still waiting to accept.
        try {
            Socket s = connect_to(at, std::chrono::milliseconds(1000));
            send_all(s.fd(), encode_terminator());
        } catch (...) {
        }
        try {
            processor.get();
        } catch (...) {
        }
        std::rethrow_exception(drive_error);
    }
    return processor.get();
}

}  // namespace

GridOutcome cmd_grid(const GridSpec& spec, std::ostream* log) {
    spec.check();
    GridOutcome outcome;
    std::set<std::string> done;
    for (const auto& r : read_results_file(spec.output)) {
        if (r.notes.find("error") == std::string::npos) done.insert(r.run_id);
    }
    auto say = [&](const std::string& s) {
        if (log) *log << s << std::endl;
    };
    for (Algorithm alg : spec.algorithms) {
        for (const auto& dataset : spec.datasets) {
            for (const auto& exec : spec.executors) {
                RunSpec cell = spec.base;
                cell.algorithm = alg;
                cell.dataset = dataset;
                auto [mode, b] = parse_executor_label(exec);
                cell.executor = mode;
                cell.batch_size = mode == ExecutionMode::mini_batch ? (b > 0 ? b : spec.base.batch_size) : 1;
                cell.duration_s = spec.duration_s;
                cell.output.clear();
                cell.listen.clear();

                std::vector<RunSpec> runs;
                const std::vector<double> loads = spec.network ? spec.loads : std::vector<double>{0.0};
                for (double load : loads) {
                    for (std::uint32_t rep = 0; rep < spec.repetitions; ++rep) {
                        RunSpec r = cell;
                        r.rate_fraction = load;
                        r.repetition = rep;
                        r.run_id = r.derived_run_id();
                        if (spec.network) r.run_id += "-net";
                        runs.push_back(r);
                    }
                }
                bool pending = std::any_of(runs.begin(), runs.end(), [&](const RunSpec& r) { return !done.count(r.run_id); });
                if (!pending) {
                    outcome.skipped += runs.size();
                    continue;
                }
                double capacity = 0.0;
                std::string cell_error;
                std::shared_ptr<LoadedDataset> data;
                try {
                    cell.check();
                    data = std::make_shared<LoadedDataset>(open_dataset(dataset));
                    if (spec.network) {
                        std::string key = std::string(to_string(alg)) + "/" + dataset_tag(dataset) + "/" + cell.executor_label();
                        RunSpec cal = cell;
                        cal.sensor = "null";
                        with_processor(cal, [&](const Endpoint& at) {
                            CalibrationOptions opts;
                            opts.warmup = std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(spec.warmup_s * 1000)));
                            capacity = calibrate_capacity(at, data->schema, data->instances, opts);
                        });
                        outcome.capacities[key] = capacity;
                        say("calibrated " + key + ": " + fmt(capacity) + " IPS");
                    }
                } catch (const std::exception& e) {
                    cell_error = e.what();
                }
                for (auto& r : runs) {
                    if (done.count(r.run_id)) {
                        ++outcome.skipped;
                        continue;
                    }
                    ResultRow row;
                    try {
                        if (!cell_error.empty()) throw std::runtime_error(cell_error);
                        if (spec.network) {
                            const double rate = r.rate_fraction * capacity;
                            row = with_processor(r, [&](const Endpoint& at) {
                                Socket s = connect_to(at);
                                LoadOptions opts;
                                opts.rate = rate;
                                opts.duration = std::chrono::nanoseconds(static_cast<std::int64_t>(std::llround(spec.duration_s * 1e9)));
                                generate_load(s.fd(), data->schema, data->instances, opts);
                                s.shutdown_write();
                            });
                            row.notes += ";capacity=" + fmt(capacity);
                        } else {
                            row = process_offline(r);
                        }
                        row.run_id = r.run_id;
                        ++outcome.executed;
                        say("done " + r.run_id);
                    } catch (const std::exception& e) {
                        row = ResultRow{};
                        row.run_id = r.run_id;
                        row.dataset = dataset;
                        row.algorithm = std::string(to_string(alg));
                        row.m = r.m;
                        row.executor = r.executor_label();
                        row.batch_size = r.executor == ExecutionMode::mini_batch ? r.batch_size : 1;
                        row.threads = r.effective_threads();
                        row.rate_fraction = r.rate_fraction;
                        std::string msg = e.what();
                        std::replace(msg.begin(), msg.end(), '\n', ' ');
                        row.notes = "error: " + msg;
                        ++outcome.failed;
                        say("failed " + r.run_id + ": " + msg);
                    }
                    append_result(spec.output, row);
                }
            }
        }
    }
    return outcome;
}

std::optional<double> jpi_delta_percent(std::optional<double> seq, std::optional<double> b1, std::optional<double> b50) {
    if (!b50 || (!seq && !b1)) return std::nullopt;
    double best = seq && b1 ? std::min(*seq, *b1) : (seq ? *seq : *b1);
    if (!(best > 0.0)) return std::nullopt;
    return (*b50 - best) / best * 100.0;
}

Report build_report(const std::vector<ResultRow>& rows) {
    struct Acc {
        double sum = 0.0;
        std::size_t n = 0;
        void add(double v) {
            sum += v;
            ++n;
        }
        double mean() const { return sum / static_cast<double>(n); }
    };
    using Key = std::tuple<std::string, std::string, double>;
    std::map<Key, std::map<std::string, std::array<Acc, 3>>> cells;
    for (const auto& r : rows) {
        if (r.notes.find("error") != std::string::npos) continue;
        auto& a = cells[Key{r.algorithm, r.dataset, r.rate_fraction}][r.executor];
        a[0].add(r.jpi);
        a[1].add(r.ips);
        a[2].add(r.delay_mean_ms);
    }
    Report report;
    for (const auto& [key, execs] : cells) {
        ReportLine line;
        std::tie(line.algorithm, line.dataset, line.load) = key;
        for (const auto& [label, acc] : execs) {
            line.jpi[label] = acc[0].mean();
            line.ips[label] = acc[1].mean();
            line.delay_ms[label] = acc[2].mean();
        }
        auto get = [&](const char* label) -> std::optional<double> {
            auto it = line.jpi.find(label);
            if (it == line.jpi.end()) return std::nullopt;
            return it->second;
        };
        line.delta_percent = jpi_delta_percent(get("Seq"), get("B1"), get("B50"));
        if (!line.delta_percent) {
            std::string where = line.algorithm + "/" + line.dataset + "/load " + fmt(line.load);
            if (!get("B50")) {
                report.warnings.push_back(where + ": no B50 row");
            } else if (!get("Seq") && !get("B1")) {
                report.warnings.push_back(where + ": no Seq or B1 row");
            } else {
                report.warnings.push_back(where + ": baseline JPI is zero (no energy readings)");
            }
        }
        report.lines.push_back(std::move(line));
    }
    return report;
}

void write_report(std::ostream& out, const Report& report) {
    std::vector<std::string> labels;
    auto order = [](const std::string& l) -> std::pair<int, long> {
        if (l == "Seq") return {0, 0};
        if (l == "Par") return {1, 0};
        if (l.size() > 1 && l[0] == 'B') return {2, std::strtol(l.c_str() + 1, nullptr, 10)};
        return {3, 0};
    };
    std::set<std::string> seen;
    for (const auto& line : report.lines) {
        for (const auto& [l, v] : line.jpi) seen.insert(l);
    }
    labels.assign(seen.begin(), seen.end());
    std::sort(labels.begin(), labels.end(), [&](const auto& a, const auto& b) { return order(a) < order(b); });

    out << "algorithm,dataset,load,delta_jpi_b50_pct";
    for (const char* metric : {"jpi", "ips", "delay_ms"}) {
        for (const auto& l : labels) out << ',' << metric << '_' << l;
    }
    out << '\n';
    auto cell = [&](const std::map<std::string, double>& m, const std::string& l) {
        auto it = m.find(l);
        return it == m.end() ? std::string() : fmt(it->second);
    };
    for (const auto& line : report.lines) {
        out << line.algorithm << ',' << csv_field(line.dataset) << ',' << fmt(line.load) << ','
            << (line.delta_percent ? fmt(*line.delta_percent) : std::string());
        for (const auto* m : {&line.jpi, &line.ips, &line.delay_ms}) {
            for (const auto& l : labels) out << ',' << cell(*m, l);
        }
        out << '\n';
    }
}

}  // namespace streambag
