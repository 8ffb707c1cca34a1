#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "streambag/ensemble.hpp"
#include "streambag/executor.hpp"
#include "streambag/netstream.hpp"

namespace streambag {

// Bad or conflicting configuration; the CLI exits with status 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunSpec {
    Algorithm algorithm = Algorithm::lbag;
    std::uint32_t m = 10;
    ExecutionMode executor = ExecutionMode::sequential;
    std::size_t batch_size = 1;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::string dataset;
    double rate_fraction = 0.0;  // 0: offline or unthrottled
    double duration_s = 180.0;   // network runs
    std::optional<std::uint64_t> count;
    std::uint64_t seed = 1;
    std::string sensor = "null";
    std::string output;               // results CSV; empty: none
    std::string listen;               // HOST:PORT; empty: offline
    std::optional<double> timeout_s;  // executor timeout
    std::optional<double> energy_window_s;  // virtual window for synthetic sensors
    std::optional<bool> parallel_classify;
    std::uint32_t repetition = 0;
    std::string run_id;  // empty: derived
    EnsembleConfig ensemble;  // algorithm, size and seed are copied in

    // Applies one key=value setting; throws ConfigError.
    void set(std::string_view key, std::string_view value);
    // Throws ConfigError on conflicting settings.
    void check() const;
    std::size_t effective_threads() const;
    std::string executor_label() const;  // Seq, Par, B<n>
    std::string derived_run_id() const;
    EnsembleConfig ensemble_config() const;
    ExecutorConfig executor_config() const;
};

// Parses "key=value" lines ('#' comments, blank lines ignored).
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);
RunSpec parse_run_spec(std::string_view text);

// Executor label -> (mode, batch size): seq, sequential, par, parallel,
// parallel_instance, B<n>.
std::pair<ExecutionMode, std::size_t> parse_executor_label(std::string_view label);

struct ResultRow {
    std::string run_id;
    std::string dataset;
    std::string algorithm;
    std::uint32_t m = 0;
    std::string executor;
    std::size_t batch_size = 0;
    std::size_t threads = 0;
    double rate_fraction = 0.0;
    std::uint64_t instances = 0;
    double accuracy = 0.0;
    double ips = 0.0;
    double delay_mean_ms = 0.0;
    double delay_p50_ms = 0.0;
    double delay_p95_ms = 0.0;
    double joules = 0.0;
    double jpi = 0.0;
    std::uint64_t resets = 0;
    std::string digest;
    double wall_s = 0.0;
    std::string notes;
};

const std::vector<std::string>& result_columns();
void write_result_header(std::ostream& out);
void write_result_row(std::ostream& out, const ResultRow& row);
// Appends one row, writing the header first if the file is new or empty.
void append_result(const std::string& path, const ResultRow& row);
// Reads a results file; throws std::runtime_error on malformed rows.
std::vector<ResultRow> read_results(std::istream& in);
std::vector<ResultRow> read_results_file(const std::string& path);

// Splits one CSV line, honouring double quotes.
std::vector<std::string> split_csv_line(std::string_view line);

// Offline run over the dataset file (no sockets).
ResultRow process_offline(const RunSpec& spec);
// Accepts one connection on `listener` and processes the stream.
ResultRow process_stream(const RunSpec& spec, Listener& listener,
                         std::optional<std::chrono::milliseconds> accept_timeout = std::nullopt);
// Offline when spec.listen is empty, else listens there. Appends the row to
// spec.output when set.
ResultRow cmd_process(const RunSpec& spec);

struct GenerateSpec {
    std::string dataset;
    std::string connect = "127.0.0.1:9000";
    std::optional<double> rate;  // absolute instances/s
    double rate_fraction = 0.0;
    double capacity = 0.0;
    std::optional<double> duration_s;
    std::optional<std::uint64_t> count;
    std::string log;  // send-log CSV path; empty: none

    void set(std::string_view key, std::string_view value);
    std::optional<double> effective_rate() const;  // throws ConfigError
};

SendLog cmd_generate(const GenerateSpec& spec);

struct GridSpec {
    std::vector<Algorithm> algorithms{Algorithm::lbag};
    std::vector<std::string> datasets;
    std::vector<std::string> executors{"seq", "B1", "B50"};
    std::vector<double> loads{0.9};
    std::uint32_t repetitions = 1;
    bool network = true;
    double warmup_s = 30.0;
    double duration_s = 180.0;
    std::string output = "results.csv";
    RunSpec base;  // m, threads, seed, sensor and learner settings

    void set(std::string_view key, std::string_view value);
    void check() const;
};

GridSpec parse_grid_spec(std::string_view text);

struct GridOutcome {
    std::size_t executed = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
    std::map<std::string, double> capacities;  // cell key -> IPS
};

// Runs every cell serially; rows already in the output (by run id, without
// an error note) are skipped.
GridOutcome cmd_grid(const GridSpec& spec, std::ostream* log = nullptr);

struct ReportLine {
    std::string algorithm;
    std::string dataset;
    double load = 0.0;
    std::map<std::string, double> jpi;  // executor label -> mean JPI
    std::map<std::string, double> ips;
    std::map<std::string, double> delay_ms;
    std::optional<double> delta_percent;  // B50 vs min(Seq, B1)
};

struct Report {
    std::vector<ReportLine> lines;
    std::vector<std::string> warnings;
};

Report build_report(const std::vector<ResultRow>& rows);
void write_report(std::ostream& out, const Report& report);
// (jpi_b50 - best) / best * 100 with best = min of the baselines present.
std::optional<double> jpi_delta_percent(std::optional<double> seq, std::optional<double> b1, std::optional<double> b50);

}  // namespace streambag
