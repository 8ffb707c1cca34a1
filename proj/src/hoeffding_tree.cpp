#include "streambag/hoeffding_tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace streambag {

namespace {

constexpr double min_branch_fraction = 0.01;
constexpr double min_stddev = 1e-4;
constexpr double unseen_class_likelihood = 1e-10;

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

AttributeObserver make_observer(const Schema& schema, std::uint32_t feature) {
    const auto& spec = schema.feature(feature);
    if (spec.is_nominal()) {
        NominalObserver obs;
        obs.num_values = static_cast<std::uint32_t>(spec.values.size());
        obs.counts.assign(schema.num_classes() * spec.values.size(), 0.0);
        return obs;
    }
    NumericObserver obs;
    obs.per_class.resize(schema.num_classes());
    return obs;
}

// Valid when at least two branches carry min_branch_fraction of the mass.
// Leaves made by a split start with inherited counts but empty observers;
// scale each class column so the branches hand down the whole leaf mass.
void match_leaf_counts(std::vector<std::vector<double>>& branches, std::span<const double> class_counts) {
    std::vector<double> totals(branches.size(), 0.0);
    double seen_all = 0.0;
    for (std::size_t b = 0; b < branches.size(); ++b) {
        totals[b] = sum(branches[b]);
        seen_all += totals[b];
    }
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
        double seen = 0.0;
        for (const auto& b : branches) seen += b[c];
        if (seen > 0.0) {
            const double k = class_counts[c] / seen;
            for (auto& b : branches) b[c] *= k;
        } else if (class_counts[c] > 0.0 && seen_all > 0.0) {
            for (std::size_t b = 0; b < branches.size(); ++b) branches[b][c] = class_counts[c] * totals[b] / seen_all;
        }
    }
}

bool enough_branches(const std::vector<std::vector<double>>& branches, double total) {
    int heavy = 0;
    for (const auto& b : branches) {
        if (sum(b) > min_branch_fraction * total) ++heavy;
    }
    return heavy >= 2;
}

}  // namespace

void HTConfig::check() const {
    if (grace_period == 0) throw std::invalid_argument("grace_period must be positive");
    if (!(split_confidence > 0.0 && split_confidence < 1.0)) throw std::invalid_argument("split_confidence must be in (0,1)");
    if (!(tie_threshold >= 0.0)) throw std::invalid_argument("tie_threshold must be >= 0");
    if (numeric_bins == 0) throw std::invalid_argument("numeric_bins must be positive");
    if (max_split_nodes && *max_split_nodes == 0) throw std::invalid_argument("max_split_nodes must be >= 1");
}

double hoeffding_bound(double range, double delta, double n) {
    if (!(range > 0.0)) throw std::domain_error("hoeffding_bound: range must be positive");
    if (!(delta > 0.0 && delta <= 1.0)) throw std::domain_error("hoeffding_bound: delta must be in (0,1]");
    if (!(n > 0.0)) throw std::domain_error("hoeffding_bound: n must be positive");
    return std::sqrt(range * range * std::log(1.0 / delta) / (2.0 * n));
}

void GaussianEstimator::add(double x, double w) {
    if (w <= 0.0) return;
    if (weight > 0.0) {
        weight += w;
        double last_mean = mean;
        mean += w * (x - last_mean) / weight;
        variance_sum += w * (x - last_mean) * (x - mean);
        min = std::min(min, x);
        max = std::max(max, x);
    } else {
        weight = w;
        mean = x;
        variance_sum = 0.0;
        min = max = x;
    }
}

double GaussianEstimator::stddev() const { return std::sqrt(std::max(0.0, variance())); }

double GaussianEstimator::weight_at_or_below(double t) const {
    if (weight <= 0.0 || t < min) return 0.0;
    if (t >= max) return weight;
    double sd = stddev();
    if (sd > 0.0) return weight * 0.5 * std::erfc(-(t - mean) / (sd * std::sqrt(2.0)));
    return t >= mean ? weight : 0.0;
}

double GaussianEstimator::density(double x) const {
    double sd = std::max(stddev(), min_stddev);
    double z = (x - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * 3.14159265358979323846));
}

LeafStats LeafStats::make(const Schema& schema, std::vector<std::uint32_t> features, std::vector<double> class_counts) {
    LeafStats leaf;
    leaf.features = std::move(features);
    leaf.observers.reserve(leaf.features.size());
    for (auto f : leaf.features) leaf.observers.push_back(make_observer(schema, f));
    if (class_counts.empty()) class_counts.assign(schema.num_classes(), 0.0);
    leaf.class_counts = std::move(class_counts);
    leaf.weight_at_last_attempt = leaf.total_weight();
    return leaf;
}

double LeafStats::total_weight() const { return sum(class_counts); }

std::size_t LeafStats::observed_classes() const {
    return static_cast<std::size_t>(std::count_if(class_counts.begin(), class_counts.end(), [](double c) { return c > 0.0; }));
}

void LeafStats::learn(const Schema& schema, const Instance& inst, double weight, LeafPredictor predictor) {
    if (weight <= 0.0) return;
    const std::size_t cls = inst.class_index;
    if (predictor == LeafPredictor::naive_bayes_adaptive) {
        if (argmax(class_counts) == cls) mc_correct += weight;
        if (argmax(naive_bayes_votes(schema, inst)) == cls) nb_correct += weight;
    }
    class_counts[cls] += weight;
    for (std::size_t i = 0; i < features.size(); ++i) {
        double x = inst.values[features[i]];
        std::visit(
            [&](auto& obs) {
                using T = std::decay_t<decltype(obs)>;
                if constexpr (std::is_same_v<T, NominalObserver>) {
                    obs.counts[cls * obs.num_values + static_cast<std::size_t>(x)] += weight;
                } else {
                    obs.per_class[cls].add(x, weight);
                    if (!obs.seen) {
                        obs.min = obs.max = x;
                        obs.seen = true;
                    } else {
                        obs.min = std::min(obs.min, x);
                        obs.max = std::max(obs.max, x);
                    }
                }
            },
            observers[i]);
    }
}

std::vector<double> LeafStats::naive_bayes_votes(const Schema& schema, const Instance& inst) const {
    const std::size_t classes = class_counts.size();
    std::vector<double> out(classes, 0.0);
    double total = total_weight();
    if (total <= 0.0) return out;
    std::vector<double> logp(classes, -std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < classes; ++c) {
        if (class_counts[c] <= 0.0) continue;
        double lp = std::log(class_counts[c] / total);
        for (std::size_t i = 0; i < features.size(); ++i) {
            double x = inst.values[features[i]];
            double like = std::visit(
                [&](const auto& obs) -> double {
                    using T = std::decay_t<decltype(obs)>;
                    if constexpr (std::is_same_v<T, NominalObserver>) {
                        double row = 0.0;
                        for (std::size_t v = 0; v < obs.num_values; ++v) row += obs.at(c, v);
                        return (obs.at(c, static_cast<std::size_t>(x)) + 1.0) / (row + obs.num_values);
                    } else {
                        const auto& g = obs.per_class[c];
                        return g.weight > 0.0 ? g.density(x) : unseen_class_likelihood;
                    }
                },
                observers[i]);
            lp += std::log(std::max(like, std::numeric_limits<double>::min()));
        }
        logp[c] = lp;
    }
    double top = *std::max_element(logp.begin(), logp.end());
    double norm = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        out[c] = class_counts[c] > 0.0 ? std::exp(logp[c] - top) : 0.0;
        norm += out[c];
    }
    for (auto& v : out) v = v / norm * total;
    (void)schema;
    return out;
}

std::vector<double> LeafStats::votes(const Schema& schema, const Instance& inst, LeafPredictor predictor) const {
    if (predictor == LeafPredictor::naive_bayes_adaptive && nb_correct > mc_correct) {
        return naive_bayes_votes(schema, inst);
    }
    return class_counts;
}

double entropy(std::span<const double> counts) {
    double total = sum(counts);
    if (total <= 0.0) return 0.0;
    double h = 0.0;
    for (double c : counts) {
        if (c > 0.0) {
            double p = c / total;
            h -= p * std::log2(p);
        }
    }
    return h;
}

double info_gain(std::span<const double> pre, const std::vector<std::vector<double>>& branches) {
    double total = sum(pre);
    if (total <= 0.0) return 0.0;
    double after = 0.0;
    for (const auto& b : branches) {
        double w = sum(b);
        if (w > 0.0) after += w / total * entropy(b);
    }
    return entropy(pre) - after;
}

std::vector<SplitCandidate> split_candidates(const Schema&, const LeafStats& leaf, const HTConfig& config) {
    std::vector<SplitCandidate> out;
    const std::size_t classes = leaf.class_counts.size();
    const double total = leaf.total_weight();
    for (std::size_t i = 0; i < leaf.features.size(); ++i) {
        std::optional<SplitCandidate> best;
        const auto& observer = leaf.observers[i];
        if (const auto* nom = std::get_if<NominalObserver>(&observer)) {
            std::vector<std::vector<double>> branches(nom->num_values, std::vector<double>(classes, 0.0));
            for (std::size_t c = 0; c < classes; ++c) {
                for (std::size_t v = 0; v < nom->num_values; ++v) branches[v][c] = nom->at(c, v);
            }
            match_leaf_counts(branches, leaf.class_counts);
            if (enough_branches(branches, total)) {
                SplitCandidate cand;
                cand.feature = leaf.features[i];
                cand.merit = info_gain(leaf.class_counts, branches);
                cand.branch_counts = std::move(branches);
                best = std::move(cand);
            }
        } else {
            const auto& num = std::get<NumericObserver>(observer);
            if (num.seen && num.max > num.min) {
                for (std::uint32_t j = 1; j <= config.numeric_bins; ++j) {
                    double t = num.min + (num.max - num.min) * j / (config.numeric_bins + 1.0);
                    std::vector<std::vector<double>> branches(2, std::vector<double>(classes, 0.0));
                    for (std::size_t c = 0; c < classes; ++c) {
                        const auto& g = num.per_class[c];
                        double below = g.weight_at_or_below(t);
                        branches[0][c] = below;
                        branches[1][c] = g.weight - below;
                    }
                    match_leaf_counts(branches, leaf.class_counts);
                    if (!enough_branches(branches, total)) continue;
                    double merit = info_gain(leaf.class_counts, branches);
                    if (!best || merit > best->merit) {
                        best = SplitCandidate{leaf.features[i], true, t, merit, std::move(branches)};
                    }
                }
            }
        }
        if (best) out.push_back(std::move(*best));
    }
    return out;
}

SplitDecision attempt_split(const Schema& schema, const LeafStats& leaf, const HTConfig& config) {
    SplitDecision d;
    if (leaf.observed_classes() < 2) return d;
    auto candidates = split_candidates(schema, leaf, config);
    // Merit 0 stands for "do not split"; a candidate must beat it.
    std::size_t best = candidates.size();
    double g1 = 0.0;
    double g2 = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double g = candidates[i].merit;
        if (g > g1) {
            g2 = g1;
            g1 = g;
            best = i;
        } else if (g > g2) {
            g2 = g;
        }
    }
    // A candidate equal to the leader still counts as the runner-up.
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i != best) g2 = std::max(g2, candidates[i].merit);
    }
    double range = std::log2(std::max<double>(2.0, static_cast<double>(leaf.class_counts.size())));
    d.best_merit = g1;
    d.second_merit = g2;
    d.epsilon = hoeffding_bound(range, config.split_confidence, leaf.total_weight());
    if (best == candidates.size() || g1 <= 0.0) return d;
    bool clear_winner = g1 - g2 > d.epsilon;
    bool tie = d.epsilon < config.tie_threshold;
    if (clear_winner || tie) {
        d.tie_break = !clear_winner;
        d.split = std::move(candidates[best]);
    }
    return d;
}

std::vector<std::uint32_t> sample_features(std::mt19937_64& rng, std::span<const std::uint32_t> pool, std::size_t k) {
    std::vector<std::uint32_t> items(pool.begin(), pool.end());
    k = std::min(k, items.size());
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng() % (items.size() - i));
        std::swap(items[i], items[j]);
    }
    items.resize(k);
    std::sort(items.begin(), items.end());
    return items;
}

HoeffdingTree::HoeffdingTree(std::shared_ptr<const Schema> schema, HTConfig config, std::vector<std::uint32_t> features,
                             std::uint64_t seed)
    : schema_(std::move(schema)), config_(config), features_(std::move(features)), rng_(seed) {
    config_.check();
    if (features_.empty()) {
        features_.resize(schema_->num_features());
        std::iota(features_.begin(), features_.end(), 0u);
    } else {
        std::sort(features_.begin(), features_.end());
        for (auto f : features_) {
            if (f >= schema_->num_features()) throw std::invalid_argument("feature index out of range");
        }
    }
    nodes_.push_back(Node{new_leaf({})});
}

LeafStats HoeffdingTree::new_leaf(std::vector<double> class_counts) {
    if (config_.leaf_subspace_size > 0 && config_.leaf_subspace_size < features_.size()) {
        return LeafStats::make(*schema_, sample_features(rng_, features_, config_.leaf_subspace_size), std::move(class_counts));
    }
    return LeafStats::make(*schema_, features_, std::move(class_counts));
}

std::uint32_t HoeffdingTree::route(const Instance& inst) const {
    std::uint32_t node = 0;
    while (const auto* split = std::get_if<Split>(&nodes_[node].body)) {
        double x = inst.values[split->feature];
        std::size_t branch = split->numeric ? (x <= split->threshold ? 0 : 1) : static_cast<std::size_t>(x);
        node = split->children[branch];
    }
    return node;
}

const LeafStats& HoeffdingTree::leaf_for(const Instance& inst) const { return std::get<LeafStats>(nodes_[route(inst)].body); }

void HoeffdingTree::train(const Instance& inst, double weight) {
    if (inst.values.size() != schema_->num_features() || inst.class_index >= schema_->num_classes()) {
        throw std::invalid_argument("instance does not match the tree's schema");
    }
    if (!(weight > 0.0)) return;
    std::uint32_t node = route(inst);
    auto& leaf = std::get<LeafStats>(nodes_[node].body);
    leaf.learn(*schema_, inst, weight, config_.leaf_predictor);
    double seen = leaf.total_weight();
    if (seen - leaf.weight_at_last_attempt < config_.grace_period) return;
    leaf.weight_at_last_attempt = seen;
    if (leaf.observed_classes() < 2) return;
    ++attempts_;
    auto decision = attempt_split(*schema_, leaf, config_);
    if (!decision.split) return;
    split_leaf(node, std::move(*decision.split));
    if (config_.max_split_nodes && split_nodes_ > *config_.max_split_nodes) {
        reset();
        ++resets_;
    }
}

void HoeffdingTree::split_leaf(std::uint32_t node, SplitCandidate candidate) {
    Split split;
    split.feature = candidate.feature;
    split.numeric = candidate.numeric;
    split.threshold = candidate.threshold;
    for (auto& counts : candidate.branch_counts) {
        split.children.push_back(static_cast<std::uint32_t>(nodes_.size()));
        nodes_.push_back(Node{new_leaf(std::move(counts))});
    }
    nodes_[node].body = std::move(split);
    ++split_nodes_;
}

void HoeffdingTree::reset() {
    nodes_.clear();
    split_nodes_ = 0;
    nodes_.push_back(Node{new_leaf({})});
}

void HoeffdingTree::predict_into(const Instance& inst, std::span<double> votes) const {
    const auto& leaf = leaf_for(inst);
    if (config_.leaf_predictor == LeafPredictor::naive_bayes_adaptive && leaf.nb_correct > leaf.mc_correct) {
        auto nb = leaf.naive_bayes_votes(*schema_, inst);
        std::copy(nb.begin(), nb.end(), votes.begin());
    } else {
        std::copy(leaf.class_counts.begin(), leaf.class_counts.end(), votes.begin());
    }
}

std::vector<double> HoeffdingTree::predict(const Instance& inst) const {
    std::vector<double> votes(schema_->num_classes(), 0.0);
    predict_into(inst, votes);
    return votes;
}

std::size_t HoeffdingTree::leaf_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return std::holds_alternative<LeafStats>(n.body); }));
}

double HoeffdingTree::total_leaf_weight() const {
    double total = 0.0;
    for (const auto& n : nodes_) {
        if (const auto* leaf = std::get_if<LeafStats>(&n.body)) total += leaf->total_weight();
    }
    return total;
}

std::vector<std::uint32_t> HoeffdingTree::observed_features() const {
    std::vector<std::uint32_t> out;
    for (const auto& n : nodes_) {
        if (const auto* leaf = std::get_if<LeafStats>(&n.body)) out.insert(out.end(), leaf->features.begin(), leaf->features.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

void HoeffdingTree::serialize_node(ByteWriter& out, std::uint32_t node) const {
    if (const auto* split = std::get_if<Split>(&nodes_[node].body)) {
        out.u8(1);
        out.u32(split->feature);
        out.u8(split->numeric ? 1 : 0);
        out.f64(split->threshold);
        out.u32(static_cast<std::uint32_t>(split->children.size()));
        for (auto child : split->children) serialize_node(out, child);
        return;
    }
    const auto& leaf = std::get<LeafStats>(nodes_[node].body);
    out.u8(0);
    out.f64s(leaf.class_counts);
    out.f64(leaf.weight_at_last_attempt);
    out.f64(leaf.nb_correct);
    out.f64(leaf.mc_correct);
    out.u32(static_cast<std::uint32_t>(leaf.features.size()));
    for (std::size_t i = 0; i < leaf.features.size(); ++i) {
        out.u32(leaf.features[i]);
        std::visit(
            [&](const auto& obs) {
                using T = std::decay_t<decltype(obs)>;
                if constexpr (std::is_same_v<T, NominalObserver>) {
                    out.u8(0);
                    out.f64s(obs.counts);
                } else {
                    out.u8(1);
                    out.u8(obs.seen ? 1 : 0);
                    out.f64(obs.min);
                    out.f64(obs.max);
                    for (const auto& g : obs.per_class) {
                        out.f64(g.weight);
                        out.f64(g.mean);
                        out.f64(g.variance_sum);
                        out.f64(g.min);
                        out.f64(g.max);
                    }
                }
            },
            leaf.observers[i]);
    }
}

void HoeffdingTree::serialize(ByteWriter& out) const {
    out.u32(static_cast<std::uint32_t>(split_nodes_));
    serialize_node(out, 0);
}

std::vector<std::uint8_t> HoeffdingTree::serialize() const {
    ByteWriter w;
    serialize(w);
    return w.take();
}

}  // namespace streambag
