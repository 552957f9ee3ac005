#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace abow {

/// Per-image vote accumulator for one in-flight query.
///
/// Bins only ever grow, so the leading two bins can be maintained by looking at
/// the updated bin alone: an untouched bin cannot overtake anything. Ordering is
/// by value, then by lower bin id.
class ScoreHistogram {
public:
    explicit ScoreHistogram(std::size_t bins) : bins_(bins, 0.0), second_(bins > 1 ? 1 : 0) {}

    void add(std::uint32_t bin, double vote) {
        const double v = (bins_[bin] += vote);
        running_sum_ += vote;
        if (bin == first_) return;
        if (ahead(bin, v, first_)) {
            second_ = first_;
            first_ = bin;
        } else if (bin != second_ && ahead(bin, v, second_)) {
            second_ = bin;
        }
    }

    std::size_t size() const noexcept { return bins_.size(); }
    std::span<const double> bins() const noexcept { return bins_; }
    double operator[](std::size_t i) const { return bins_[i]; }

    double running_sum() const noexcept { return running_sum_; }
    double mean() const noexcept { return bins_.empty() ? 0.0 : running_sum_ / static_cast<double>(bins_.size()); }
    double max() const noexcept { return bins_.empty() ? 0.0 : bins_[first_]; }
    std::uint32_t argmax() const noexcept { return first_; }
    /// Value of the runner-up bin (0 for a single-bin histogram).
    double second() const noexcept { return bins_.size() < 2 ? 0.0 : bins_[second_]; }
    std::uint32_t second_argmax() const noexcept { return second_; }

private:
    bool ahead(std::uint32_t bin, double value, std::uint32_t other) const {
        return value > bins_[other] || (value == bins_[other] && bin < other);
    }

    std::vector<double> bins_;
    double running_sum_ = 0.0;
    std::uint32_t first_ = 0;
    std::uint32_t second_ = 0;
};

} // namespace abow
