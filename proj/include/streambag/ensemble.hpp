#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streambag/adwin.hpp"
#include "streambag/core.hpp"
#include "streambag/hoeffding_tree.hpp"

namespace streambag {

enum class Algorithm : std::uint8_t { ozabag, ozabag_asht, obadwin, lbag, arf, srp };

std::string_view to_string(Algorithm a);
std::optional<Algorithm> parse_algorithm(std::string_view name);

struct EnsembleConfig {
    Algorithm algorithm = Algorithm::ozabag;
    std::uint32_t size = 10;
    // 0 selects the algorithm default: 1 for the OzaBag family, 6 otherwise.
    double lambda = 0.0;
    // 0 selects round(sqrt(F)) + 1, capped at F.
    std::uint32_t subspace_size = 0;
    double delta_adwin = Adwin::default_delta;  // obadwin, lbag
    double delta_warn = 0.01;                   // arf, srp
    double delta_drift = 0.001;                 // arf, srp
    std::uint64_t base_seed = 1;
    HTConfig tree;

    double effective_lambda() const;
    std::uint32_t effective_subspace(std::size_t num_features) const;
    // Throws std::invalid_argument.
    void check(std::size_t num_features) const;
};

// Poisson(lambda) by inversion of a single uniform draw.
std::uint32_t poisson_weight(std::mt19937_64& rng, double lambda);

// Adaptive-size budget of the k-th tree (0-based): 2^(k+1), capped at 2^10.
std::uint32_t asht_budget(std::size_t k);

// Normalizes each non-zero vote vector to sum 1, sums them and returns the
// argmax (lowest index on ties).
std::size_t argmax_lowest(std::span<const double> v);

struct Prediction {
    std::vector<double> votes;
    std::uint32_t predicted_class = 0;
};

// One ensemble member with everything it owns: model, RNG stream, detectors
// and background model. Units are independent and may be trained on
// different threads, one thread per unit at a time.
class Learner {
public:
    Learner(std::size_t index, std::shared_ptr<const Schema> schema, const EnsembleConfig& config);

    void votes(const Instance& inst, std::span<double> out) const;
    // `own_votes` must be this learner's votes for `inst` under the model as it
    // is right now (before training).
    void train(const Instance& inst, std::span<const double> own_votes);
    void train(const Instance& inst);
    // Fresh model and detectors; the RNG stream continues.
    void reset();

    std::size_t index() const noexcept { return index_; }
    const HoeffdingTree& tree() const noexcept { return *tree_; }
    const HoeffdingTree* background() const noexcept { return background_.get(); }
    std::size_t resets() const noexcept { return resets_; }
    std::size_t warnings() const noexcept { return warnings_; }
    // Set when this learner's error detector fired (obadwin); cleared by the
    // ensemble's global replacement step.
    bool change_pending() const noexcept { return change_pending_; }
    void clear_change() noexcept { change_pending_ = false; }
    double error_estimate() const;
    std::mt19937_64& rng() noexcept { return rng_; }

    void serialize(ByteWriter& out) const;

private:
    std::unique_ptr<HoeffdingTree> make_tree();

    std::size_t index_;
    std::shared_ptr<const Schema> schema_;
    const EnsembleConfig* config_;
    HTConfig tree_config_;
    double lambda_;
    std::mt19937_64 rng_;
    std::unique_ptr<HoeffdingTree> tree_;
    std::unique_ptr<HoeffdingTree> background_;
    std::optional<Adwin> error_detector_;
    std::optional<Adwin> warn_detector_;
    std::optional<Adwin> drift_detector_;
    bool change_pending_ = false;
    std::size_t resets_ = 0;
    std::size_t warnings_ = 0;
};

class Ensemble {
public:
    Ensemble(std::shared_ptr<const Schema> schema, EnsembleConfig config);
    Ensemble(const Ensemble&) = delete;
    Ensemble& operator=(const Ensemble&) = delete;

    std::size_t size() const noexcept { return learners_.size(); }
    Learner& learner(std::size_t i) { return learners_.at(i); }
    const Learner& learner(std::size_t i) const { return learners_.at(i); }
    const EnsembleConfig& config() const noexcept { return *config_; }
    const Schema& schema() const noexcept { return *schema_; }
    std::size_t num_classes() const noexcept { return schema_->num_classes(); }

    Prediction predict(const Instance& inst) const;
    // Prequential step without prediction output: every learner trains in
    // index order, then the global replacement step runs.
    void train(const Instance& inst);
    void reset_learner(std::size_t i);

    bool uses_global_replacement() const noexcept { return config_->algorithm == Algorithm::obadwin; }
    // obadwin: if any learner's detector fired, replace the learner with the
    // highest error estimate. Returns true if a replacement happened.
    bool apply_global_change();

    std::size_t total_resets() const;
    std::size_t global_resets() const noexcept { return global_resets_; }

    std::vector<std::uint8_t> serialize() const;
    std::string digest() const;

private:
    std::shared_ptr<const Schema> schema_;
    std::unique_ptr<EnsembleConfig> config_;  // stable address for learners
    std::vector<Learner> learners_;
    std::size_t global_resets_ = 0;
};

// Sums normalized vote vectors; the result's argmax is the ensemble decision.
Prediction compile_votes(std::span<const std::vector<double>> learner_votes, std::size_t num_classes);

}  // namespace streambag
