#include "streambag/streambag.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "streambag/bench.hpp"
#include "streambag/metrics.hpp"

struct sb_schema {
    std::shared_ptr<const streambag::Schema> schema;
};

struct sb_ensemble {
    std::shared_ptr<const streambag::Schema> schema;
    std::unique_ptr<streambag::Ensemble> ensemble;
};

namespace {

thread_local std::string g_last_error;

sb_status fail(sb_status s, const std::string& msg) {
    g_last_error = msg;
    return s;
}

template <typename F>
sb_status guard(F&& f) {
    using namespace streambag;
    try {
        g_last_error.clear();
        f();
        return SB_OK;
    } catch (const ConfigError& e) {
        return fail(SB_E_CONFIG, e.what());
    } catch (const ProtocolError& e) {
        return fail(SB_E_PROTOCOL, e.what());
    } catch (const NetworkError& e) {
        return fail(SB_E_NETWORK, e.what());
    } catch (const ParseError& e) {
        return fail(SB_E_PARSE, e.what());
    } catch (const std::out_of_range& e) {
        return fail(SB_E_RANGE, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(SB_E_INVALID, e.what());
    } catch (const std::domain_error& e) {
        return fail(SB_E_INVALID, e.what());
    } catch (const std::ios_base::failure& e) {
        return fail(SB_E_IO, e.what());
    } catch (const std::exception& e) {
        return fail(SB_E_RUNTIME, e.what());
    } catch (...) {
        return fail(SB_E_RUNTIME, "unknown error");
    }
}

char* dup(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.data(), s.size() + 1);
    return p;
}

void need(const void* p, const char* what) {
    if (!p) throw std::invalid_argument(std::string(what) + " must not be NULL");
}

streambag::Instance make_instance(const sb_ensemble* e, const double* values, size_t n, uint32_t cls, double weight) {
    need(values, "values");
    if (n != e->schema->num_features()) throw std::invalid_argument("expected " + std::to_string(e->schema->num_features()) + " values");
    streambag::Instance inst;
    inst.values.assign(values, values + n);
    inst.class_index = cls;
    inst.weight = weight;
    streambag::validate(*e->schema, inst);
    return inst;
}

}  // namespace

extern "C" {

const char* sb_last_error(void) { return g_last_error.c_str(); }

const char* sb_status_name(sb_status s) {
    switch (s) {
        case SB_OK: return "ok";
        case SB_E_INVALID: return "invalid argument";
        case SB_E_CONFIG: return "configuration error";
        case SB_E_IO: return "i/o error";
        case SB_E_PARSE: return "parse error";
        case SB_E_NETWORK: return "network error";
        case SB_E_PROTOCOL: return "protocol error";
        case SB_E_RANGE: return "out of range";
        case SB_E_RUNTIME: return "runtime error";
    }
    return "unknown status";
}

const char* sb_version(void) { return "0.1.0"; }

void sb_string_free(char* s) { std::free(s); }

sb_status sb_schema_from_arff_header(const char* text, sb_schema** out) {
    return guard([&] {
        need(text, "text");
        need(out, "out");
        *out = new sb_schema{std::make_shared<const streambag::Schema>(streambag::parse_arff_header(text))};
    });
}

sb_status sb_schema_synthetic(sb_schema** out) {
    return guard([&] {
        need(out, "out");
        *out = new sb_schema{std::make_shared<const streambag::Schema>(streambag::SyntheticDriftStream::make_schema())};
    });
}

void sb_schema_free(sb_schema* schema) { delete schema; }

size_t sb_schema_num_features(const sb_schema* schema) { return schema ? schema->schema->num_features() : 0; }

size_t sb_schema_num_classes(const sb_schema* schema) { return schema ? schema->schema->num_classes() : 0; }

sb_status sb_ensemble_create(const sb_schema* schema, const char* config, sb_ensemble** out) {
    return guard([&] {
        need(schema, "schema");
        need(out, "out");
        streambag::RunSpec spec;
        if (config) {
            for (const auto& [k, v] : streambag::parse_key_values(config)) spec.set(k, v);
        }
        auto cfg = spec.ensemble_config();
        try {
            cfg.check(schema->schema->num_features());
        } catch (const std::invalid_argument& e) {
            throw streambag::ConfigError(e.what());
        }
        auto e = std::make_unique<sb_ensemble>();
        e->schema = schema->schema;
        e->ensemble = std::make_unique<streambag::Ensemble>(schema->schema, cfg);
        *out = e.release();
    });
}

void sb_ensemble_free(sb_ensemble* ensemble) { delete ensemble; }

size_t sb_ensemble_size(const sb_ensemble* ensemble) { return ensemble ? ensemble->ensemble->size() : 0; }

sb_status sb_ensemble_train(sb_ensemble* e, const double* values, size_t n, uint32_t class_index, double weight) {
    return guard([&] {
        need(e, "ensemble");
        e->ensemble->train(make_instance(e, values, n, class_index, weight));
    });
}

sb_status sb_ensemble_predict(const sb_ensemble* e, const double* values, size_t n, uint32_t* predicted, double* votes,
                              size_t votes_len) {
    return guard([&] {
        need(e, "ensemble");
        need(predicted, "predicted_class");
        auto p = e->ensemble->predict(make_instance(e, values, n, 0, 1.0));
        *predicted = p.predicted_class;
        if (votes) {
            if (votes_len < p.votes.size()) throw std::invalid_argument("votes buffer too small");
            std::copy(p.votes.begin(), p.votes.end(), votes);
        }
    });
}

sb_status sb_ensemble_train_row(sb_ensemble* e, const char* row) {
    return guard([&] {
        need(e, "ensemble");
        need(row, "row");
        e->ensemble->train(streambag::parse_row(*e->schema, row, 1));
    });
}

sb_status sb_ensemble_predict_row(const sb_ensemble* e, const char* row, uint32_t* predicted) {
    return guard([&] {
        need(e, "ensemble");
        need(row, "row");
        need(predicted, "predicted_class");
        *predicted = e->ensemble->predict(streambag::parse_row(*e->schema, row, 1)).predicted_class;
    });
}

sb_status sb_ensemble_reset_learner(sb_ensemble* e, size_t index) {
    return guard([&] {
        need(e, "ensemble");
        e->ensemble->reset_learner(index);
    });
}

size_t sb_ensemble_resets(const sb_ensemble* e) { return e ? e->ensemble->total_resets() : 0; }

sb_status sb_ensemble_digest(const sb_ensemble* e, char* buf, size_t len) {
    return guard([&] {
        need(e, "ensemble");
        need(buf, "buf");
        auto d = e->ensemble->digest();
        if (len < d.size() + 1) throw std::invalid_argument("digest buffer too small");
        std::memcpy(buf, d.c_str(), d.size() + 1);
    });
}

sb_status sb_process(const char* config, char** row_csv) {
    return guard([&] {
        need(config, "config");
        auto spec = streambag::parse_run_spec(config);
        auto row = streambag::cmd_process(spec);
        if (row_csv) {
            std::ostringstream out;
            streambag::write_result_header(out);
            streambag::write_result_row(out, row);
            *row_csv = dup(out.str());
        }
    });
}

sb_status sb_generate(const char* config, char** summary) {
    return guard([&] {
        need(config, "config");
        streambag::GenerateSpec spec;
        for (const auto& [k, v] : streambag::parse_key_values(config)) spec.set(k, v);
        auto log = streambag::cmd_generate(spec);
        if (summary) {
            *summary = dup("frames=" + std::to_string(log.entries.size()) + " backpressure=" + std::to_string(log.backpressure_events));
        }
    });
}

namespace {

class CallbackBuf : public std::stringbuf {
public:
    CallbackBuf(sb_log_fn fn, void* user) : fn_(fn), user_(user) {}
    int sync() override {
        std::string s = str();
        std::size_t pos = 0;
        for (std::size_t nl; (nl = s.find('\n', pos)) != std::string::npos; pos = nl + 1) {
            std::string line = s.substr(pos, nl - pos);
            if (fn_) fn_(line.c_str(), user_);
        }
        str(s.substr(pos));
        return 0;
    }

private:
    sb_log_fn fn_;
    void* user_;
};

}  // namespace

sb_status sb_grid(const char* config, sb_log_fn log, void* user, char** summary) {
    return guard([&] {
        need(config, "config");
        auto spec = streambag::parse_grid_spec(config);
        CallbackBuf buf(log, user);
        std::ostream out(&buf);
        auto outcome = streambag::cmd_grid(spec, log ? &out : nullptr);
        out.flush();
        if (summary) {
            *summary = dup("executed=" + std::to_string(outcome.executed) + " skipped=" + std::to_string(outcome.skipped) +
                           " failed=" + std::to_string(outcome.failed));
        }
    });
}

sb_status sb_report(const char* results_path, char** table, char** warnings) {
    return guard([&] {
        need(results_path, "results_path");
        std::ifstream in(results_path);
        if (!in) throw std::ios_base::failure(std::string("cannot open results file '") + results_path + "'");
        auto report = streambag::build_report(streambag::read_results(in));
        if (table) {
            std::ostringstream out;
            streambag::write_report(out, report);
            *table = dup(out.str());
        }
        if (warnings) {
            std::string w;
            for (const auto& s : report.warnings) w += s + "\n";
            *warnings = dup(w);
        }
    });
}

sb_status sb_calibrate(const char* config, double* capacity) {
    return guard([&] {
        need(config, "config");
        need(capacity, "capacity_ips");
        std::string connect = "127.0.0.1:9000", dataset;
        double warmup = 30.0;
        for (const auto& [k, v] : streambag::parse_key_values(config)) {
            if (k == "connect") {
                connect = v;
            } else if (k == "dataset") {
                dataset = v;
            } else if (k == "warmup") {
                try {
                    warmup = std::stod(v);
                } catch (const std::exception&) {
                    throw streambag::ConfigError("warmup: expected seconds");
                }
            } else {
                throw streambag::ConfigError("unknown setting '" + k + "'");
            }
        }
        if (dataset.empty()) throw streambag::ConfigError("dataset is required");
        auto data = streambag::load_dataset(dataset);
        streambag::CalibrationOptions opts;
        opts.warmup = std::chrono::milliseconds(static_cast<std::int64_t>(warmup * 1000));
        *capacity = streambag::calibrate_capacity(streambag::Endpoint::parse(connect), data.schema, data.instances, opts);
    });
}

sb_status sb_hoeffding_bound(double range, double delta, double n, double* out) {
    return guard([&] {
        need(out, "out");
        *out = streambag::hoeffding_bound(range, delta, n);
    });
}

sb_status sb_rd_sequential(uint64_t n, uint64_t m, uint64_t* out) {
    return guard([&] {
        need(out, "out");
        *out = streambag::rd_sequential(n, m);
    });
}

sb_status sb_rd_minibatch(uint64_t n, uint64_t m, uint64_t b, uint64_t* out) {
    return guard([&] {
        need(out, "out");
        *out = streambag::rd_minibatch(n, m, b);
    });
}

sb_status sb_empirical_rd(const uint32_t* trace, size_t len, int counting, size_t group, char** text) {
    return guard([&] {
        need(text, "text");
        if (len > 0) need(trace, "trace");
        if (counting != 0 && counting != 1) throw std::invalid_argument("counting must be 0 or 1");
        auto rd = streambag::empirical_rd(std::span<const uint32_t>(trace, len),
                                          counting == 0 ? streambag::RdCounting::distinct : streambag::RdCounting::accesses);
        *text = dup(streambag::format_rd(rd, group));
    });
}

}  // extern "C"
