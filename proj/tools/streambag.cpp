// streambag command line: process, generate (gen), grid, report, calibrate.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "streambag/streambag.h"

namespace {

int exit_code(sb_status s) {
    if (s == SB_OK) return 0;
    std::cerr << "streambag: " << sb_status_name(s) << ": " << sb_last_error() << "\n";
    return s == SB_E_CONFIG ? 2 : 1;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Collects "--flag value" options into key=value text, after the config file
// and before --set overrides.
struct Settings {
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> flags;
    std::vector<std::string> overrides;

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto* slot = &flags.emplace_back(key, std::string());
        // stable: common() reserved room for every flag
        app->add_option(flag, slot->second, help);
    }

    std::string text() const {
        std::string out;
        if (!config_file.empty()) out += read_file(config_file) + "\n";
        for (const auto& [k, v] : flags) {
            if (!v.empty()) out += k + "=" + v + "\n";
        }
        for (const auto& o : overrides) out += o + "\n";
        return out;
    }
};

void common(CLI::App* app, Settings& s) {
    s.flags.reserve(64);
    app->add_option("--config", s.config_file, "key=value configuration file");
    app->add_option("--set", s.overrides, "extra key=value setting (repeatable)");
}

void log_line(const char* line, void*) { std::cerr << line << "\n"; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online bagging ensembles over data streams: processor, load generator and benchmark grid"};
    app.require_subcommand(1);
    app.set_version_flag("--version", sb_version());

    Settings proc;
    auto* process = app.add_subcommand("process", "Run one ensemble/executor configuration and print a results row");
    common(process, proc);
    proc.add(process, "--algorithm", "algorithm", "ozabag, ozabag_asht, obadwin, lbag, arf or srp");
    proc.add(process, "-m,--ensemble-size", "m", "number of learners");
    proc.add(process, "--executor", "executor", "seq, par or B<n>");
    proc.add(process, "--batch-size", "batch_size", "mini-batch size");
    proc.add(process, "--threads", "threads", "worker threads (default: all cores)");
    proc.add(process, "--dataset", "dataset", "ARFF/CSV path or synthetic:COUNT[:CHANGE_AT[:SEED]]");
    proc.add(process, "--count", "count", "offline: process at most this many instances");
    proc.add(process, "--seed", "seed", "base seed");
    proc.add(process, "--sensor", "sensor", "null, os_counter or synthetic[:WATTS]");
    proc.add(process, "--energy-window", "energy_window", "virtual seconds for the synthetic sensor");
    proc.add(process, "--listen", "listen", "HOST:PORT to receive a stream on (default: offline)");
    proc.add(process, "--rate-fraction", "rate_fraction", "load level recorded in the results row");
    proc.add(process, "--timeout", "timeout", "executor timeout in seconds");
    proc.add(process, "--output", "output", "append the row to this results CSV");
    proc.add(process, "--run-id", "run_id", "results row id");

    Settings gen;
    auto* generate = app.add_subcommand("generate", "Stream a dataset to a processor at a controlled rate");
    generate->alias("gen");
    common(generate, gen);
    gen.add(generate, "--dataset", "dataset", "dataset to stream (looped as needed)");
    gen.add(generate, "--connect", "connect", "processor HOST:PORT");
    gen.add(generate, "--rate", "rate", "absolute rate in instances/s");
    gen.add(generate, "--rate-fraction", "rate_fraction", "fraction of --capacity");
    gen.add(generate, "--capacity", "capacity", "calibrated capacity in instances/s");
    gen.add(generate, "--duration", "duration", "seconds to stream");
    gen.add(generate, "--count", "count", "instances to stream");
    gen.add(generate, "--log", "log", "send-log CSV path");

    Settings grid_s;
    auto* grid = app.add_subcommand("grid", "Run an experiment grid (resumable)");
    common(grid, grid_s);
    grid_s.add(grid, "--output", "output", "results CSV");
    grid_s.add(grid, "--mode", "mode", "network or offline");

    std::string results;
    std::string report_out;
    auto* report = app.add_subcommand("report", "Summarise a results CSV");
    report->add_option("results", results, "results CSV")->required();
    report->add_option("-o,--output", report_out, "write the table here instead of stdout");

    Settings cal;
    auto* calibrate = app.add_subcommand("calibrate", "Measure a listening processor's capacity");
    common(calibrate, cal);
    cal.add(calibrate, "--connect", "connect", "processor HOST:PORT");
    cal.add(calibrate, "--dataset", "dataset", "dataset to stream");
    cal.add(calibrate, "--warmup", "warmup", "seconds of unthrottled streaming");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*process) {
            char* row = nullptr;
            auto st = sb_process(proc.text().c_str(), &row);
            if (st == SB_OK) std::cout << row;
            sb_string_free(row);
            return exit_code(st);
        }
        if (*generate) {
            char* summary = nullptr;
            auto st = sb_generate(gen.text().c_str(), &summary);
            if (st == SB_OK) std::cout << summary << "\n";
            sb_string_free(summary);
            return exit_code(st);
        }
        if (*grid) {
            char* summary = nullptr;
            auto st = sb_grid(grid_s.text().c_str(), log_line, nullptr, &summary);
            if (st == SB_OK) std::cout << summary << "\n";
            sb_string_free(summary);
            return exit_code(st);
        }
        if (*report) {
            char* table = nullptr;
            char* warnings = nullptr;
            auto st = sb_report(results.c_str(), &table, &warnings);
            if (st == SB_OK) {
                if (report_out.empty()) {
                    std::cout << table;
                } else {
                    std::ofstream(report_out) << table;
                }
                std::istringstream w(warnings);
                for (std::string line; std::getline(w, line);) std::cerr << "warning: " << line << "\n";
            }
            sb_string_free(table);
            sb_string_free(warnings);
            return exit_code(st);
        }
        if (*calibrate) {
            double ips = 0.0;
            auto st = sb_calibrate(cal.text().c_str(), &ips);
            if (st == SB_OK) std::cout << ips << "\n";
            return exit_code(st);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "streambag: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
