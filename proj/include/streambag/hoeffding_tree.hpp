#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "streambag/core.hpp"
#include "streambag/serialize.hpp"

namespace streambag {

enum class LeafPredictor : std::uint8_t { majority_class, naive_bayes_adaptive };

struct HTConfig {
    std::uint32_t grace_period = 200;
    double split_confidence = 1e-7;
    double tie_threshold = 0.05;
    LeafPredictor leaf_predictor = LeafPredictor::naive_bayes_adaptive;
    std::uint32_t numeric_bins = 10;
    // Adaptive-size budget: when a split pushes the split-node count past
    // this value the tree restarts from a single leaf.
    std::optional<std::uint32_t> max_split_nodes;
    // When > 0, every new leaf draws this many features at random from the
    // tree's feature set and only considers those for splitting.
    std::uint32_t leaf_subspace_size = 0;

    void check() const;  // throws std::invalid_argument
};

// Confidence radius sqrt(R^2 ln(1/delta) / 2n). Throws std::domain_error
// unless range > 0, delta in (0, 1] and n > 0.
double hoeffding_bound(double range, double delta, double n);

// Weighted Gaussian estimate of one class's values for one numeric feature.
struct GaussianEstimator {
    double weight = 0.0;
    double mean = 0.0;
    double variance_sum = 0.0;
    double min = 0.0;
    double max = 0.0;

    void add(double x, double w);
    double variance() const { return weight > 1.0 ? variance_sum / (weight - 1.0) : 0.0; }
    double stddev() const;
    // Estimated weight of observations <= t.
    double weight_at_or_below(double t) const;
    double density(double x) const;
};

struct NominalObserver {
    std::uint32_t num_values = 0;
    std::vector<double> counts;  // class-major: counts[c * num_values + v]

    double at(std::size_t c, std::size_t v) const { return counts[c * num_values + v]; }
};

struct NumericObserver {
    std::vector<GaussianEstimator> per_class;
    double min = 0.0;
    double max = 0.0;
    bool seen = false;
};

using AttributeObserver = std::variant<NominalObserver, NumericObserver>;

struct LeafStats {
    std::vector<std::uint32_t> features;  // feature slots observed by this leaf, ascending
    std::vector<AttributeObserver> observers;  // parallel to `features`
    std::vector<double> class_counts;
    double weight_at_last_attempt = 0.0;
    double nb_correct = 0.0;
    double mc_correct = 0.0;

    static LeafStats make(const Schema& schema, std::vector<std::uint32_t> features, std::vector<double> class_counts = {});

    double total_weight() const;
    std::size_t observed_classes() const;
    // Updates class counts, observers and the NB/MC correctness tallies.
    void learn(const Schema& schema, const Instance& inst, double weight, LeafPredictor predictor);
    std::vector<double> majority_votes() const { return class_counts; }
    std::vector<double> naive_bayes_votes(const Schema& schema, const Instance& inst) const;
    std::vector<double> votes(const Schema& schema, const Instance& inst, LeafPredictor predictor) const;
};

struct SplitCandidate {
    std::uint32_t feature = 0;
    bool numeric = false;
    double threshold = 0.0;
    double merit = 0.0;
    std::vector<std::vector<double>> branch_counts;
};

struct SplitDecision {
    std::optional<SplitCandidate> split;  // nullopt = no split
    double best_merit = 0.0;
    double second_merit = 0.0;
    double epsilon = 0.0;
    bool tie_break = false;
};

double entropy(std::span<const double> counts);
double info_gain(std::span<const double> pre, const std::vector<std::vector<double>>& branches);

// Best candidate per observed feature, in ascending feature order. Features
// with no valid candidate are omitted.
std::vector<SplitCandidate> split_candidates(const Schema& schema, const LeafStats& leaf, const HTConfig& config);
SplitDecision attempt_split(const Schema& schema, const LeafStats& leaf, const HTConfig& config);

class HoeffdingTree {
public:
    // `features` empty means every feature of the schema.
    HoeffdingTree(std::shared_ptr<const Schema> schema, HTConfig config, std::vector<std::uint32_t> features = {},
                  std::uint64_t seed = 0);

    void train(const Instance& inst, double weight);
    std::vector<double> predict(const Instance& inst) const;
    void predict_into(const Instance& inst, std::span<double> votes) const;
    void reset();

    std::size_t split_node_count() const noexcept { return split_nodes_; }
    std::size_t leaf_count() const noexcept;
    std::size_t resets() const noexcept { return resets_; }
    std::size_t attempts() const noexcept { return attempts_; }
    double total_leaf_weight() const;
    // Union of the features held by every leaf observer.
    std::vector<std::uint32_t> observed_features() const;
    const std::vector<std::uint32_t>& features() const noexcept { return features_; }
    const HTConfig& config() const noexcept { return config_; }
    const Schema& schema() const noexcept { return *schema_; }

    // Leaf that `inst` routes to.
    const LeafStats& leaf_for(const Instance& inst) const;

    void serialize(ByteWriter& out) const;
    std::vector<std::uint8_t> serialize() const;

private:
    struct Split {
        std::uint32_t feature = 0;
        bool numeric = false;
        double threshold = 0.0;
        std::vector<std::uint32_t> children;
    };
    struct Node {
        std::variant<LeafStats, Split> body;
    };

    std::uint32_t route(const Instance& inst) const;
    LeafStats new_leaf(std::vector<double> class_counts);
    void split_leaf(std::uint32_t node, SplitCandidate candidate);
    void serialize_node(ByteWriter& out, std::uint32_t node) const;

    std::shared_ptr<const Schema> schema_;
    HTConfig config_;
    std::vector<std::uint32_t> features_;
    std::mt19937_64 rng_;
    std::vector<Node> nodes_;
    std::size_t split_nodes_ = 0;
    std::size_t resets_ = 0;
    std::size_t attempts_ = 0;
};

// Draws `k` distinct values from `pool` (k <= pool.size()), returned ascending.
std::vector<std::uint32_t> sample_features(std::mt19937_64& rng, std::span<const std::uint32_t> pool, std::size_t k);

}  // namespace streambag
