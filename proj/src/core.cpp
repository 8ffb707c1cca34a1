#include "streambag/core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <time.h>

namespace streambag {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string_view unquote(std::string_view s) {
    s = trim(s);
    if (s.size() >= 2 && (s.front() == '\'' || s.front() == '"') && s.back() == s.front()) {
        s = s.substr(1, s.size() - 2);
    }
    return s;
}

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

// Splits on commas outside single/double quotes.
std::vector<std::string_view> split_fields(std::string_view row) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    char quote = 0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        char c = row[i];
        if (quote) {
            if (c == quote) quote = 0;
        } else if (c == '\'' || c == '"') {
            quote = c;
        } else if (c == ',') {
            out.push_back(row.substr(start, i - start));
            start = i + 1;
        }
    }
    out.push_back(row.substr(start));
    return out;
}

bool is_comment_or_blank(std::string_view line) {
    line = trim(line);
    return line.empty() || line.front() == '%';
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(" ,{}'\"%\t") == std::string::npos && !s.empty()) return s;
    return "'" + s + "'";
}

struct HeaderParser {
    std::string relation;
    std::vector<AttributeSpec> attributes;
    bool saw_data = false;

    // Returns false once @data has been consumed.
    void feed(std::string_view raw, std::size_t line_no) {
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '%') return;
        if (line.front() != '@') throw SchemaError("line " + std::to_string(line_no) + ": expected @-directive before @data", line_no);
        auto sp = line.find_first_of(" \t");
        std::string_view keyword = line.substr(0, sp);
        std::string_view rest = sp == std::string_view::npos ? std::string_view{} : trim(line.substr(sp));
        if (iequals(keyword, "@relation")) {
            relation = std::string(unquote(rest));
        } else if (iequals(keyword, "@attribute")) {
            attributes.push_back(parse_attribute(rest, line_no));
        } else if (iequals(keyword, "@data")) {
            saw_data = true;
        } else {
            throw SchemaError("line " + std::to_string(line_no) + ": unknown directive '" + std::string(keyword) + "'", line_no);
        }
    }

    static AttributeSpec parse_attribute(std::string_view rest, std::size_t line_no) {
        auto fail = [&](const std::string& why) {
            throw SchemaError("line " + std::to_string(line_no) + ": " + why, line_no);
        };
        if (rest.empty()) fail("@attribute without a name");
        std::string_view name;
        std::string_view type;
        if (rest.front() == '\'' || rest.front() == '"') {
            auto close = rest.find(rest.front(), 1);
            if (close == std::string_view::npos) fail("unterminated attribute name");
            name = rest.substr(1, close - 1);
            type = trim(rest.substr(close + 1));
        } else {
            auto sp = rest.find_first_of(" \t{");
            if (sp == std::string_view::npos) fail("attribute '" + std::string(rest) + "' has no type");
            name = rest.substr(0, sp);
            type = trim(rest.substr(sp));
        }
        if (type.empty()) fail("attribute '" + std::string(name) + "' has no type");
        if (type.front() == '{') {
            if (type.back() != '}') fail("unterminated nominal value list for '" + std::string(name) + "'");
            std::vector<std::string> values;
            for (auto v : split_fields(type.substr(1, type.size() - 2))) {
                values.emplace_back(unquote(v));
            }
            try {
                return AttributeSpec::nominal(std::string(name), std::move(values));
            } catch (const SchemaError& e) {
                fail(e.what());
            }
        }
        if (iequals(type, "numeric") || iequals(type, "real") || iequals(type, "integer")) {
            return AttributeSpec::numeric(std::string(name));
        }
        fail("unsupported attribute type '" + std::string(type) + "'");
        return {};
    }

    Schema finish(std::size_t line_no) {
        if (!saw_data) throw SchemaError("missing @data section", line_no);
        if (attributes.empty()) throw SchemaError("no attributes declared", line_no);
        std::size_t cls = attributes.size() - 1;
        return Schema(relation, std::move(attributes), cls);
    }
};

}  // namespace

AttributeSpec AttributeSpec::numeric(std::string name) {
    return AttributeSpec{std::move(name), AttributeKind::numeric, {}};
}

AttributeSpec AttributeSpec::nominal(std::string name, std::vector<std::string> values) {
    if (values.empty()) throw SchemaError("nominal attribute '" + name + "' has no values", 0);
    std::unordered_set<std::string> seen;
    for (const auto& v : values) {
        if (!seen.insert(v).second) throw SchemaError("nominal attribute '" + name + "' repeats value '" + v + "'", 0);
    }
    return AttributeSpec{std::move(name), AttributeKind::nominal, std::move(values)};
}

std::optional<std::size_t> AttributeSpec::value_index(std::string_view token) const {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] == token) return i;
    }
    return std::nullopt;
}

Schema::Schema(std::string relation, std::vector<AttributeSpec> attributes, std::size_t class_attribute)
    : relation_(std::move(relation)), attributes_(std::move(attributes)), class_attribute_(class_attribute) {
    if (class_attribute_ >= attributes_.size()) throw SchemaError("class attribute index out of range", 0);
    if (!attributes_[class_attribute_].is_nominal()) throw SchemaError("class attribute must be nominal", 0);
    if (attributes_.size() < 2) throw SchemaError("schema needs at least one non-class attribute", 0);
    for (const auto& a : attributes_) {
        if (a.is_nominal() && a.values.empty()) throw SchemaError("nominal attribute '" + a.name + "' has no values", 0);
    }
}

void validate(const Schema& schema, const Instance& inst) {
    if (inst.values.size() != schema.num_features()) {
        throw RecordError("instance has " + std::to_string(inst.values.size()) + " values, schema expects " +
                              std::to_string(schema.num_features()),
                          0);
    }
    if (inst.class_index >= schema.num_classes()) throw RecordError("class index out of range", 0, schema.class_spec().name);
    if (!(inst.weight >= 0.0)) throw RecordError("negative weight", 0);
    for (std::size_t f = 0; f < inst.values.size(); ++f) {
        const auto& spec = schema.feature(f);
        double v = inst.values[f];
        if (spec.is_nominal()) {
            if (!(v >= 0.0) || v != static_cast<double>(static_cast<std::size_t>(v)) || v >= static_cast<double>(spec.values.size())) {
                throw RecordError("nominal slot out of range", 0, spec.name);
            }
        } else if (v != v) {
            throw RecordError("missing numeric value", 0, spec.name);
        }
    }
}

std::int64_t monotonic_ns() {
    timespec ts{};
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return static_cast<std::int64_t>(ts.tv_sec) * 1'000'000'000 + ts.tv_nsec;
}

Instance parse_row(const Schema& schema, std::string_view row, std::size_t line) {
    auto fields = split_fields(row);
    const auto& attrs = schema.attributes();
    if (fields.size() != attrs.size()) {
        throw RecordError("row " + std::to_string(line) + ": expected " + std::to_string(attrs.size()) + " columns, got " +
                              std::to_string(fields.size()),
                          line);
    }
    Instance inst;
    inst.values.reserve(schema.num_features());
    for (std::size_t a = 0; a < attrs.size(); ++a) {
        std::string_view tok = unquote(fields[a]);
        const auto& spec = attrs[a];
        if (tok == "?") {
            throw RecordError("row " + std::to_string(line) + ": missing value for '" + spec.name + "'", line, spec.name);
        }
        double value = 0.0;
        if (spec.is_nominal()) {
            auto idx = spec.value_index(tok);
            if (!idx) {
                throw RecordError("row " + std::to_string(line) + ": '" + std::string(tok) + "' is not a value of '" + spec.name + "'",
                                  line, spec.name);
            }
            value = static_cast<double>(*idx);
        } else {
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
            if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
                throw RecordError("row " + std::to_string(line) + ": '" + std::string(tok) + "' is not numeric for '" + spec.name + "'",
                                  line, spec.name);
            }
        }
        if (a == schema.class_attribute()) {
            inst.class_index = static_cast<std::uint32_t>(value);
        } else {
            inst.values.push_back(value);
        }
    }
    return inst;
}

Schema parse_arff_header(std::string_view text) {
    HeaderParser hp;
    std::size_t line_no = 0;
    while (!text.empty() && !hp.saw_data) {
        auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        hp.feed(line, line_no);
    }
    return hp.finish(line_no);
}

ArffReader::ArffReader(std::istream& in) : in_(in) {
    HeaderParser hp;
    std::string line;
    while (!hp.saw_data && std::getline(in_, line)) {
        ++line_;
        hp.feed(line, line_);
    }
    schema_ = hp.finish(line_);
}

std::optional<Instance> ArffReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_;
        if (is_comment_or_blank(line)) continue;
        return parse_row(schema_, trim(line), line_);
    }
    return std::nullopt;
}

CsvReader::CsvReader(std::istream& in, Schema schema) : in_(in), schema_(std::move(schema)) {}

std::optional<Instance> CsvReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        if (trim(line).empty()) continue;
        ++row_;
        return parse_row(schema_, trim(line), row_);
    }
    return std::nullopt;
}

std::string format_arff_header(const Schema& schema) {
    std::string out = "@relation " + quote_if_needed(schema.relation().empty() ? "stream" : schema.relation()) + "\n";
    for (const auto& a : schema.attributes()) {
        out += "@attribute " + quote_if_needed(a.name) + " ";
        if (a.is_nominal()) {
            out += "{";
            for (std::size_t i = 0; i < a.values.size(); ++i) {
                if (i) out += ",";
                out += quote_if_needed(a.values[i]);
            }
            out += "}\n";
        } else {
            out += "numeric\n";
        }
    }
    out += "@data\n";
    return out;
}

std::string format_row(const Schema& schema, const Instance& inst) {
    std::string out;
    const auto& attrs = schema.attributes();
    std::size_t f = 0;
    for (std::size_t a = 0; a < attrs.size(); ++a) {
        if (a) out += ',';
        if (a == schema.class_attribute()) {
            out += quote_if_needed(attrs[a].values[inst.class_index]);
            continue;
        }
        double v = inst.values[f++];
        if (attrs[a].is_nominal()) {
            out += quote_if_needed(attrs[a].values[static_cast<std::size_t>(v)]);
        } else {
            out += format_double(v);
        }
    }
    return out;
}

void write_arff(std::ostream& out, const Schema& schema, const std::vector<Instance>& instances) {
    out << format_arff_header(schema);
    for (const auto& inst : instances) out << format_row(schema, inst) << '\n';
}

std::vector<Instance> read_all(InstanceSource& source) {
    std::vector<Instance> out;
    while (auto inst = source.next()) out.push_back(std::move(*inst));
    return out;
}

LoadedDataset load_dataset(const std::string& spec) {
    constexpr std::string_view synthetic = "synthetic:";
    if (spec.rfind(synthetic, 0) == 0) {
        std::vector<std::uint64_t> parts;
        std::stringstream ss(spec.substr(synthetic.size()));
        std::string tok;
        while (std::getline(ss, tok, ':')) {
            std::uint64_t v = 0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw std::invalid_argument("bad synthetic dataset spec '" + spec + "'");
            parts.push_back(v);
        }
        if (parts.empty() || parts.size() > 3) throw std::invalid_argument("bad synthetic dataset spec '" + spec + "'");
        std::uint64_t change_at = parts.size() > 1 ? parts[1] : SyntheticDriftStream::never;
        std::uint64_t seed = parts.size() > 2 ? parts[2] : 1;
        SyntheticDriftStream stream(seed, change_at, parts[0]);
        return {stream.schema(), read_all(stream), spec};
    }
    std::ifstream in(spec);
    if (!in) throw std::runtime_error("cannot open dataset '" + spec + "'");
    auto ends_with = [&](std::string_view suffix) {
        return spec.size() >= suffix.size() && spec.compare(spec.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".csv")) {
        std::ifstream hdr(spec + ".schema");
        if (!hdr) throw std::runtime_error("CSV dataset '" + spec + "' needs a schema file '" + spec + ".schema'");
        std::stringstream buf;
        buf << hdr.rdbuf();
        CsvReader reader(in, parse_arff_header(buf.str()));
        return {reader.schema(), read_all(reader), spec};
    }
    ArffReader reader(in);
    return {reader.schema(), read_all(reader), spec};
}

SyntheticDriftStream::SyntheticDriftStream(std::uint64_t seed, std::uint64_t change_at, std::uint64_t limit)
    : schema_(make_schema()), rng_(seed), change_at_(change_at), limit_(limit) {}

Schema SyntheticDriftStream::make_schema() {
    return Schema("synthetic_drift",
                  {AttributeSpec::numeric("x0"), AttributeSpec::numeric("x1"), AttributeSpec::numeric("x2"),
                   AttributeSpec::nominal("class", {"0", "1"})},
                  3);
}

std::optional<Instance> SyntheticDriftStream::next() {
    if (emitted_ >= limit_) return std::nullopt;
    Instance inst;
    inst.values.resize(3);
    for (auto& v : inst.values) v = unit_uniform(rng_);
    double threshold = emitted_ < change_at_ ? threshold_before : threshold_after;
    inst.class_index = inst.values[0] + inst.values[1] > threshold ? 1 : 0;
    ++emitted_;
    return inst;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace streambag
