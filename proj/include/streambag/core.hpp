#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace streambag {

// Thrown for malformed headers or rows. `line()` is 1-based; 0 when unknown.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public ParseError {
public:
    using ParseError::ParseError;
};

class RecordError : public ParseError {
public:
    RecordError(const std::string& what, std::size_t line, std::string attribute = {})
        : ParseError(what, line), attribute_(std::move(attribute)) {}
    const std::string& attribute() const noexcept { return attribute_; }

private:
    std::string attribute_;
};

enum class AttributeKind : std::uint8_t { nominal, numeric };

struct AttributeSpec {
    std::string name;
    AttributeKind kind = AttributeKind::numeric;
    std::vector<std::string> values;  // nominal only

    static AttributeSpec numeric(std::string name);
    static AttributeSpec nominal(std::string name, std::vector<std::string> values);

    bool is_nominal() const noexcept { return kind == AttributeKind::nominal; }
    // Index of `token` in the nominal value list, or nullopt.
    std::optional<std::size_t> value_index(std::string_view token) const;

    bool operator==(const AttributeSpec&) const = default;
};

// Attribute metadata for a stream. Instances store only the feature slots
// (every attribute except the class), in declaration order.
class Schema {
public:
    Schema() = default;
    // Validates invariants; throws SchemaError.
    Schema(std::string relation, std::vector<AttributeSpec> attributes, std::size_t class_attribute);

    const std::string& relation() const noexcept { return relation_; }
    const std::vector<AttributeSpec>& attributes() const noexcept { return attributes_; }
    std::size_t class_attribute() const noexcept { return class_attribute_; }
    std::size_t num_classes() const noexcept { return attributes_[class_attribute_].values.size(); }
    std::size_t num_features() const noexcept { return attributes_.size() - 1; }

    // Feature slot -> attribute index (skips the class attribute).
    std::size_t attribute_of_feature(std::size_t feature) const noexcept {
        return feature < class_attribute_ ? feature : feature + 1;
    }
    const AttributeSpec& feature(std::size_t f) const noexcept { return attributes_[attribute_of_feature(f)]; }
    const AttributeSpec& class_spec() const noexcept { return attributes_[class_attribute_]; }

    bool operator==(const Schema&) const = default;

private:
    std::string relation_;
    std::vector<AttributeSpec> attributes_;
    std::size_t class_attribute_ = 0;
};

struct Instance {
    std::vector<double> values;  // one slot per feature; nominal as value index
    std::uint32_t class_index = 0;
    double weight = 1.0;

    bool operator==(const Instance&) const = default;
};

// Throws RecordError if `inst` violates the schema.
void validate(const Schema& schema, const Instance& inst);

struct StreamRecord {
    std::uint64_t seq = 0;
    Instance instance;
    std::int64_t sent_at_ns = 0;
    std::int64_t received_at_ns = 0;
};

// Nanoseconds on the host-wide monotonic clock, shared by all processes on
// one machine so send/receive stamps are comparable over loopback.
std::int64_t monotonic_ns();

// Pull-style source of instances. Returns nullopt at end of stream.
class InstanceSource {
public:
    virtual ~InstanceSource() = default;
    virtual const Schema& schema() const = 0;
    virtual std::optional<Instance> next() = 0;
};

// Reads the ARFF subset: @relation, @attribute (numeric | {v,...}), @data,
// comma-separated rows, '%' comments. The class is the last attribute.
class ArffReader final : public InstanceSource {
public:
    explicit ArffReader(std::istream& in);

    const Schema& schema() const override { return schema_; }
    std::optional<Instance> next() override;
    std::size_t line() const noexcept { return line_; }

private:
    std::istream& in_;
    Schema schema_;
    std::size_t line_ = 0;
};

// Header-less CSV, class in the last column.
class CsvReader final : public InstanceSource {
public:
    CsvReader(std::istream& in, Schema schema);

    const Schema& schema() const override { return schema_; }
    std::optional<Instance> next() override;

private:
    std::istream& in_;
    Schema schema_;
    std::size_t row_ = 0;
};

// Parses a header (text up to and including @data) into a schema.
Schema parse_arff_header(std::string_view text);

// One comma-separated row (class last) into an Instance. `line` is only used
// for error reporting.
Instance parse_row(const Schema& schema, std::string_view row, std::size_t line);

std::string format_arff_header(const Schema& schema);
std::string format_row(const Schema& schema, const Instance& inst);
void write_arff(std::ostream& out, const Schema& schema, const std::vector<Instance>& instances);

// Reads every instance from a source.
std::vector<Instance> read_all(InstanceSource& source);

// Opens "synthetic:<count>[:<change_at>[:<seed>]]" or a .arff/.csv path.
// CSV files need a schema file next to them: "<path>.schema" holding an ARFF
// header. Throws std::runtime_error if the file cannot be opened.
struct LoadedDataset {
    Schema schema;
    std::vector<Instance> instances;
    std::string name;
};
LoadedDataset load_dataset(const std::string& spec);

// Two-class stream with three uniform [0,1) features. The label is
// x0 + x1 > 1.0 before `change_at` and x0 + x1 > 0.6 from then on.
class SyntheticDriftStream final : public InstanceSource {
public:
    static constexpr std::uint64_t never = std::numeric_limits<std::uint64_t>::max();

    SyntheticDriftStream(std::uint64_t seed, std::uint64_t change_at = never,
                         std::uint64_t limit = never);

    static Schema make_schema();
    const Schema& schema() const override { return schema_; }
    std::optional<Instance> next() override;

    static constexpr double threshold_before = 1.0;
    static constexpr double threshold_after = 0.6;

private:
    Schema schema_;
    std::mt19937_64 rng_;
    std::uint64_t change_at_;
    std::uint64_t limit_;
    std::uint64_t emitted_ = 0;
};

// Uniform double in [0, 1) from the top 53 bits of one 64-bit draw.
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// SplitMix64 finalizer; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

}  // namespace streambag
