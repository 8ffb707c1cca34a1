#include "streambag/adwin.hpp"

#include <cmath>
#include <stdexcept>

namespace streambag {

void Adwin::Row::drop_front(std::size_t n) {
    for (std::size_t i = n; i < size; ++i) buckets[i - n] = buckets[i];
    size -= n;
}

Adwin::Adwin(double delta) : delta_(delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("adwin delta must be in (0,1)");
    rows_.emplace_back();
}

bool Adwin::add(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw std::domain_error("adwin input must be in [0,1]");
    ++width_;
    if (width_ > 1) {
        double w = static_cast<double>(width_);
        double d = value - total_ / (w - 1.0);
        variance_ += (w - 1.0) * d * d / w;
    }
    total_ += value;
    rows_[0].push(Bucket{value, 0.0});
    compress();
    bool changed = detect_change();
    if (changed) ++detections_;
    return changed;
}

double Adwin::estimate() const {
    if (width_ == 0) throw std::logic_error("adwin estimate of an empty window");
    return total_ / static_cast<double>(width_);
}

void Adwin::compress() {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (rows_[i].size != max_buckets + 1) break;
        if (i + 1 == rows_.size()) rows_.emplace_back();
        Row& row_i = rows_[i];  // emplace_back may have moved the rows
        double n = capacity(i);
        const Bucket& a = row_i.buckets[0];
        const Bucket& b = row_i.buckets[1];
        double diff = a.sum / n - b.sum / n;
        double merged_var = a.variance + b.variance + n * n * diff * diff / (2.0 * n);
        rows_[i + 1].push(Bucket{a.sum + b.sum, merged_var});
        row_i.drop_front(2);
        if (rows_[i + 1].size <= max_buckets) break;
    }
}

bool Adwin::cut_expression(double n0, double n1, double diff) const {
    double n = static_cast<double>(width_);
    double dd = std::log(2.0 * std::log(n) / delta_);
    double v = variance();
    double m = 1.0 / (n0 - min_sub_window + 1.0) + 1.0 / (n1 - min_sub_window + 1.0);
    double epsilon = std::sqrt(2.0 * m * v * dd) + 2.0 / 3.0 * dd * m;
    return std::fabs(diff) > epsilon;
}

void Adwin::drop_oldest() {
    std::size_t last = rows_.size() - 1;
    Row& row = rows_[last];
    double n1 = capacity(last);
    const Bucket oldest = row.buckets[0];
    width_ -= static_cast<std::uint64_t>(n1);
    total_ -= oldest.sum;
    double w = static_cast<double>(width_);
    double u1 = oldest.sum / n1;
    double d = w > 0.0 ? u1 - total_ / w : 0.0;
    variance_ -= oldest.variance + (w > 0.0 ? n1 * w * d * d / (n1 + w) : 0.0);
    if (variance_ < 0.0) variance_ = 0.0;
    row.drop_front(1);
    if (row.size == 0 && rows_.size() > 1) rows_.pop_back();
}

bool Adwin::detect_change() {
    if (width_ <= min_sub_window) return false;
    bool changed = false;
    bool reduce = true;
    while (reduce) {
        reduce = false;
        bool exit = false;
        double n0 = 0.0;
        double n1 = static_cast<double>(width_);
        double u0 = 0.0;
        double u1 = total_;
        // Walk from the oldest bucket towards the newest; W0 grows.
        for (std::size_t r = rows_.size(); r-- > 0 && !exit;) {
            const Row& row = rows_[r];
            double n2 = capacity(r);
            for (std::size_t k = 0; k < row.size; ++k) {
                double u2 = row.buckets[k].sum;
                n0 += n2;
                n1 -= n2;
                u0 += u2;
                u1 -= u2;
                if (r == 0 && k + 1 == row.size) {
                    exit = true;
                    break;
                }
                double diff = u0 / n0 - u1 / n1;
                if (n1 > min_sub_window + 1 && n0 > min_sub_window + 1 && cut_expression(n0, n1, diff)) {
                    reduce = true;
                    changed = true;
                    if (width_ > 0) {
                        drop_oldest();
                        exit = true;
                        break;
                    }
                }
            }
        }
    }
    return changed;
}

void Adwin::serialize(ByteWriter& out) const {
    out.f64(delta_);
    out.u64(width_);
    out.f64(total_);
    out.f64(variance_);
    out.u32(static_cast<std::uint32_t>(rows_.size()));
    for (const auto& row : rows_) {
        out.u32(static_cast<std::uint32_t>(row.size));
        for (std::size_t k = 0; k < row.size; ++k) {
            out.f64(row.buckets[k].sum);
            out.f64(row.buckets[k].variance);
        }
    }
}

}  // namespace streambag
