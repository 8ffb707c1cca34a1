#include "streambag/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace streambag {

namespace {

constexpr std::uint32_t poisson_cap = 1000;

bool uses_detectors(Algorithm a) {
    return a == Algorithm::obadwin || a == Algorithm::lbag || a == Algorithm::arf || a == Algorithm::srp;
}

}  // namespace

std::string_view to_string(Algorithm a) {
    switch (a) {
        case Algorithm::ozabag: return "ozabag";
        case Algorithm::ozabag_asht: return "ozabag_asht";
        case Algorithm::obadwin: return "obadwin";
        case Algorithm::lbag: return "lbag";
        case Algorithm::arf: return "arf";
        case Algorithm::srp: return "srp";
    }
    return "?";
}

std::optional<Algorithm> parse_algorithm(std::string_view name) {
    for (auto a : {Algorithm::ozabag, Algorithm::ozabag_asht, Algorithm::obadwin, Algorithm::lbag, Algorithm::arf, Algorithm::srp}) {
        if (to_string(a) == name) return a;
    }
    return std::nullopt;
}

double EnsembleConfig::effective_lambda() const {
    if (lambda > 0.0) return lambda;
    switch (algorithm) {
        case Algorithm::ozabag:
        case Algorithm::ozabag_asht:
        case Algorithm::obadwin: return 1.0;
        default: return 6.0;
    }
}

std::uint32_t EnsembleConfig::effective_subspace(std::size_t num_features) const {
    std::size_t k = subspace_size > 0 ? subspace_size
                                      : static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(num_features)))) + 1;
    return static_cast<std::uint32_t>(std::min(k, num_features));
}

void EnsembleConfig::check(std::size_t num_features) const {
    if (size == 0) throw std::invalid_argument("ensemble size must be >= 1");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be positive");
    if (subspace_size > num_features) throw std::invalid_argument("subspace_size exceeds the number of features");
    for (double d : {delta_adwin, delta_warn, delta_drift}) {
        if (!(d > 0.0 && d < 1.0)) throw std::invalid_argument("detector confidence must be in (0,1)");
    }
    tree.check();
}

std::uint32_t poisson_weight(std::mt19937_64& rng, double lambda) {
    double u = unit_uniform(rng);
    double p = std::exp(-lambda);
    double cdf = p;
    std::uint32_t k = 0;
    while (u >= cdf && k < poisson_cap) {
        ++k;
        p *= lambda / k;
        cdf += p;
    }
    return k;
}

std::uint32_t asht_budget(std::size_t k) {
    return std::uint32_t{1} << std::min<std::size_t>(k + 1, 10);
}

std::size_t argmax_lowest(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

Prediction compile_votes(std::span<const std::vector<double>> learner_votes, std::size_t num_classes) {
    Prediction p;
    p.votes.assign(num_classes, 0.0);
    for (const auto& v : learner_votes) {
        double s = 0.0;
        for (double x : v) s += x;
        if (!(s > 0.0)) continue;
        for (std::size_t c = 0; c < num_classes; ++c) p.votes[c] += v[c] / s;
    }
    p.predicted_class = static_cast<std::uint32_t>(argmax_lowest(p.votes));
    return p;
}

Learner::Learner(std::size_t index, std::shared_ptr<const Schema> schema, const EnsembleConfig& config)
    : index_(index),
      schema_(std::move(schema)),
      config_(&config),
      tree_config_(config.tree),
      lambda_(config.effective_lambda()),
      rng_(mix_seed(config.base_seed, index)) {
    if (config.algorithm == Algorithm::ozabag_asht) tree_config_.max_split_nodes = asht_budget(index);
    if (config.algorithm == Algorithm::arf) tree_config_.leaf_subspace_size = config.effective_subspace(schema_->num_features());
    tree_ = make_tree();
    switch (config.algorithm) {
        case Algorithm::obadwin:
        case Algorithm::lbag: error_detector_.emplace(config.delta_adwin); break;
        case Algorithm::arf:
        case Algorithm::srp:
            warn_detector_.emplace(config.delta_warn);
            drift_detector_.emplace(config.delta_drift);
            break;
        default: break;
    }
}

std::unique_ptr<HoeffdingTree> Learner::make_tree() {
    switch (config_->algorithm) {
        case Algorithm::arf: return std::make_unique<HoeffdingTree>(schema_, tree_config_, std::vector<std::uint32_t>{}, rng_());
        case Algorithm::srp: {
            std::vector<std::uint32_t> all(schema_->num_features());
            for (std::uint32_t f = 0; f < all.size(); ++f) all[f] = f;
            auto patch = sample_features(rng_, all, config_->effective_subspace(all.size()));
            return std::make_unique<HoeffdingTree>(schema_, tree_config_, std::move(patch));
        }
        default: return std::make_unique<HoeffdingTree>(schema_, tree_config_);
    }
}

void Learner::votes(const Instance& inst, std::span<double> out) const { tree_->predict_into(inst, out); }

void Learner::train(const Instance& inst) {
    std::vector<double> own(schema_->num_classes(), 0.0);
    if (uses_detectors(config_->algorithm)) votes(inst, own);
    train(inst, own);
}

namespace {

// A cut counts as a change only when the error went up.
bool error_rose(Adwin& d, double error) {
    const double before = d.empty() ? 0.0 : d.estimate();
    return d.add(error) && d.estimate() > before;
}

}  // namespace

void Learner::train(const Instance& inst, std::span<const double> own_votes) {
    const std::uint32_t k = poisson_weight(rng_, lambda_);
    const Algorithm algo = config_->algorithm;
    if (k > 0) {
        double w = static_cast<double>(k) * inst.weight;
        tree_->train(inst, w);
        if (background_) background_->train(inst, w);
    }
    if (!uses_detectors(algo)) return;
    const double error = argmax_lowest(own_votes) == inst.class_index ? 0.0 : 1.0;
    switch (algo) {
        case Algorithm::obadwin:
            if (error_rose(*error_detector_, error)) change_pending_ = true;
            break;
        case Algorithm::lbag:
            if (error_rose(*error_detector_, error)) reset();
            break;
        case Algorithm::arf:
        case Algorithm::srp:
            if (error_rose(*warn_detector_, error)) {
                background_ = make_tree();
                warn_detector_.emplace(config_->delta_warn);
                ++warnings_;
            }
            if (error_rose(*drift_detector_, error)) {
                tree_ = background_ ? std::move(background_) : make_tree();
                background_.reset();
                warn_detector_.emplace(config_->delta_warn);
                drift_detector_.emplace(config_->delta_drift);
                ++resets_;
            }
            break;
        default: break;
    }
}

void Learner::reset() {
    tree_ = make_tree();
    background_.reset();
    if (error_detector_) error_detector_.emplace(config_->delta_adwin);
    if (warn_detector_) warn_detector_.emplace(config_->delta_warn);
    if (drift_detector_) drift_detector_.emplace(config_->delta_drift);
    change_pending_ = false;
    ++resets_;
}

double Learner::error_estimate() const {
    const auto& d = error_detector_ ? error_detector_ : drift_detector_;
    if (!d || d->empty()) return 0.0;
    return d->estimate();
}

void Learner::serialize(ByteWriter& out) const {
    out.u32(static_cast<std::uint32_t>(index_));
    tree_->serialize(out);
    out.u8(background_ ? 1 : 0);
    if (background_) background_->serialize(out);
    for (const auto* d : {&error_detector_, &warn_detector_, &drift_detector_}) {
        out.u8(d->has_value() ? 1 : 0);
        if (d->has_value()) (*d)->serialize(out);
    }
}

Ensemble::Ensemble(std::shared_ptr<const Schema> schema, EnsembleConfig config)
    : schema_(std::move(schema)), config_(std::make_unique<EnsembleConfig>(config)) {
    config_->check(schema_->num_features());
    learners_.reserve(config_->size);
    for (std::size_t i = 0; i < config_->size; ++i) learners_.emplace_back(i, schema_, *config_);
}

Prediction Ensemble::predict(const Instance& inst) const {
    std::vector<std::vector<double>> votes(learners_.size(), std::vector<double>(num_classes(), 0.0));
    for (std::size_t i = 0; i < learners_.size(); ++i) learners_[i].votes(inst, votes[i]);
    return compile_votes(votes, num_classes());
}

void Ensemble::train(const Instance& inst) {
    if (inst.values.size() != schema_->num_features() || inst.class_index >= num_classes()) {
        throw std::invalid_argument("instance does not match the ensemble's schema");
    }
    for (auto& l : learners_) l.train(inst);
    apply_global_change();
}

void Ensemble::reset_learner(std::size_t i) {
    if (i >= learners_.size()) throw std::out_of_range("learner index out of range");
    learners_[i].reset();
}

bool Ensemble::apply_global_change() {
    if (!uses_global_replacement()) return false;
    bool fired = false;
    for (auto& l : learners_) {
        fired = fired || l.change_pending();
        l.clear_change();
    }
    if (!fired) return false;
    std::size_t worst = 0;
    for (std::size_t i = 1; i < learners_.size(); ++i) {
        if (learners_[i].error_estimate() > learners_[worst].error_estimate()) worst = i;
    }
    learners_[worst].reset();
    ++global_resets_;
    return true;
}

std::size_t Ensemble::total_resets() const {
    std::size_t n = 0;
    for (const auto& l : learners_) n += l.resets();
    return n;
}

std::vector<std::uint8_t> Ensemble::serialize() const {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(config_->algorithm));
    w.u32(static_cast<std::uint32_t>(learners_.size()));
    for (const auto& l : learners_) l.serialize(w);
    return w.take();
}

std::string Ensemble::digest() const { return hex_digest(serialize()); }

}  // namespace streambag
