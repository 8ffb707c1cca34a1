#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "streambag/serialize.hpp"

namespace streambag {

// Adaptive windowing change detector over values in [0, 1], stored as an
// exponential histogram: row i holds up to max_buckets buckets of 2^i items.
class Adwin {
public:
    static constexpr std::size_t max_buckets = 5;
    static constexpr std::uint64_t min_sub_window = 5;
    static constexpr double default_delta = 0.002;

    explicit Adwin(double delta = default_delta);

    // Inserts `value` and checks every bucket boundary for a cut. Returns true
    // if the older part of the window was dropped. Throws std::domain_error
    // for values outside [0, 1].
    bool add(double value);

    // Mean of the current window. Throws std::logic_error when empty.
    double estimate() const;

    std::uint64_t width() const noexcept { return width_; }
    double total() const noexcept { return total_; }
    double variance() const noexcept { return width_ > 0 ? variance_ / static_cast<double>(width_) : 0.0; }
    double delta() const noexcept { return delta_; }
    std::size_t rows() const noexcept { return rows_.size(); }
    std::uint64_t detections() const noexcept { return detections_; }
    bool empty() const noexcept { return width_ == 0; }

    void serialize(ByteWriter& out) const;

private:
    struct Bucket {
        double sum = 0.0;
        double variance = 0.0;
    };
    // Oldest bucket at index 0.
    struct Row {
        std::array<Bucket, max_buckets + 1> buckets{};
        std::size_t size = 0;

        void push(Bucket b) { buckets[size++] = b; }
        void drop_front(std::size_t n);
    };

    static double capacity(std::size_t row) { return static_cast<double>(std::uint64_t{1} << row); }
    void compress();
    bool detect_change();
    bool cut_expression(double n0, double n1, double diff) const;
    void drop_oldest();

    double delta_;
    std::vector<Row> rows_;  // rows_[0] holds single items
    std::uint64_t width_ = 0;
    double total_ = 0.0;
    double variance_ = 0.0;
    std::uint64_t detections_ = 0;
};

}  // namespace streambag
