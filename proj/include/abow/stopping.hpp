#pragma once

// Stopping rules evaluated over the score histogram after every quantized
// feature, plus a two-arm race simulator for the Hoeffding condition.

#include <abow/errors.hpp>
#include <abow/histogram.hpp>
#include <abow/random.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

namespace abow {

/// Stop once max(h) - mean(h) exceeds the threshold ("rule1").
struct PeakMeanGap {
    double threshold = 0.0;
    friend bool operator==(const PeakMeanGap&, const PeakMeanGap&) = default;
};

/// Stop once (max(h) - mean(h)) / mean(h) exceeds the threshold ("rule2").
struct RelativePeakMeanGap {
    double threshold = 0.0;
    friend bool operator==(const RelativePeakMeanGap&, const RelativePeakMeanGap&) = default;
};

/// Stop once the peak bin has survived `patience` further features ("rule3").
struct StablePeak {
    std::size_t patience = 1;
    friend bool operator==(const StablePeak&, const StablePeak&) = default;
};

/// Stop once the per-round mean gap of the two leading bins clears the
/// Hoeffding band sqrt(2 ln(2/delta) / t).
struct HoeffdingGap {
    double delta = 0.05;
    friend bool operator==(const HoeffdingGap&, const HoeffdingGap&) = default;
};

struct NeverStop {
    friend bool operator==(const NeverStop&, const NeverStop&) = default;
};

using StoppingRule = std::variant<PeakMeanGap, RelativePeakMeanGap, StablePeak, HoeffdingGap, NeverStop>;

inline void validate(const StoppingRule& rule) {
    std::visit(
        [](const auto& r) {
            using R = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<R, PeakMeanGap> || std::is_same_v<R, RelativePeakMeanGap>) {
                if (!(r.threshold > 0.0)) throw InvalidConfig("threshold must be positive");
            } else if constexpr (std::is_same_v<R, StablePeak>) {
                if (r.patience == 0) throw InvalidConfig("patience must be positive");
            } else if constexpr (std::is_same_v<R, HoeffdingGap>) {
                if (!(r.delta > 0.0 && r.delta < 1.0)) throw InvalidConfig("delta must lie in (0, 1)");
            }
        },
        rule);
}

/// CLI family name: rule1, rule2, rule3, hoeffding or never.
inline std::string family_name(const StoppingRule& rule) {
    constexpr const char* names[] = {"rule1", "rule2", "rule3", "hoeffding", "never"};
    return names[rule.index()];
}

/// The rule's single numeric parameter (NaN for NeverStop).
inline double rule_parameter(const StoppingRule& rule) {
    return std::visit(
        [](const auto& r) -> double {
            using R = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<R, PeakMeanGap> || std::is_same_v<R, RelativePeakMeanGap>)
                return r.threshold;
            else if constexpr (std::is_same_v<R, StablePeak>)
                return static_cast<double>(r.patience);
            else if constexpr (std::is_same_v<R, HoeffdingGap>)
                return r.delta;
            else
                return std::nan("");
        },
        rule);
}

/// Builds and validates a rule from its family name and parameter.
inline StoppingRule make_rule(std::string_view family, double parameter = 0.0) {
    StoppingRule rule;
    if (family == "rule1") {
        rule = PeakMeanGap{parameter};
    } else if (family == "rule2") {
        rule = RelativePeakMeanGap{parameter};
    } else if (family == "rule3") {
        if (!(parameter >= 1.0) || parameter != std::floor(parameter))
            throw InvalidConfig("rule3 patience must be a positive integer");
        rule = StablePeak{static_cast<std::size_t>(parameter)};
    } else if (family == "hoeffding") {
        rule = HoeffdingGap{parameter};
    } else if (family == "never") {
        rule = NeverStop{};
    } else {
        throw InvalidConfig("unknown stopping rule '" + std::string(family) + "'");
    }
    validate(rule);
    return rule;
}

/// Progress of one in-flight query as seen by the stopping rules.
struct StopState {
    std::size_t features_processed = 0;
    /// Current peak bin; empty while every bin is still zero.
    std::optional<std::uint32_t> peak;
    std::size_t peak_unchanged_for = 0;
    /// Largest vote a single feature can add to one bin; scales votes into [0, 1]
    /// for the Hoeffding rule.
    double increment_bound = 1.0;

    /// Records one more processed feature against the updated histogram.
    void advance(const ScoreHistogram& h) {
        ++features_processed;
        const std::optional<std::uint32_t> now =
            h.max() > 0.0 ? std::optional<std::uint32_t>(h.argmax()) : std::nullopt;
        if (now && now == peak) {
            ++peak_unchanged_for;
        } else {
            peak = now;
            peak_unchanged_for = 0;
        }
    }
};

/// sqrt(2 ln(2/delta) / t); infinite before the first sample.
inline double hoeffding_threshold(double delta, std::size_t t) {
    if (t == 0) return std::numeric_limits<double>::infinity();
    return std::sqrt(2.0 * std::log(2.0 / delta) / static_cast<double>(t));
}

inline bool should_stop(const StoppingRule& rule, const ScoreHistogram& h, const StopState& state) {
    if (h.size() < 2) throw InconsistentState("histogram needs at least two bins");
    if (state.peak_unchanged_for > state.features_processed)
        throw InconsistentState("peak_unchanged_for exceeds features_processed");
    if (state.peak && *state.peak >= h.size()) throw InconsistentState("peak bin outside histogram");

    return std::visit(
        [&](const auto& r) -> bool {
            using R = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<R, PeakMeanGap>) {
                return h.max() - h.mean() > r.threshold;
            } else if constexpr (std::is_same_v<R, RelativePeakMeanGap>) {
                const double mean = h.mean();
                if (mean <= 0.0) return false;
                return (h.max() - mean) / mean > r.threshold;
            } else if constexpr (std::is_same_v<R, StablePeak>) {
                return state.peak.has_value() && state.peak_unchanged_for >= r.patience;
            } else if constexpr (std::is_same_v<R, HoeffdingGap>) {
                const auto t = state.features_processed;
                if (t == 0 || !(state.increment_bound > 0.0)) return false;
                const double scale = state.increment_bound * static_cast<double>(t);
                const double gap = (h.max() - h.second()) / scale;
                return gap > hoeffding_threshold(r.delta, t);
            } else {
                return false;
            }
        },
        rule);
}

// ---------------------------------------------------------------------------

struct RaceReport {
    /// Fraction of trials that declared the lower-mean arm (undecided trials count as errors).
    double error_rate = 0.0;
    double mean_stop_time = 0.0;
    std::size_t trials = 0;
    std::size_t undecided = 0;
};

/// Two Bernoulli arms sampled in lockstep until |mean1 - mean2| >= the Hoeffding band.
inline RaceReport race_simulate(double mu1, double mu2, double delta, std::size_t trials, std::uint64_t seed,
                                std::size_t max_steps = 100'000'000) {
    if (!(mu1 >= 0.0 && mu1 <= 1.0) || !(mu2 >= 0.0 && mu2 <= 1.0))
        throw InvalidConfig("arm means must lie in [0, 1]");
    if (mu1 == mu2) throw InvalidConfig("arm means must differ");
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidConfig("delta must lie in (0, 1)");
    if (trials == 0) throw InvalidConfig("trials must be positive");
    if (max_steps == 0) throw InvalidConfig("max_steps must be positive");

    Rng rng(seed);
    const double log_term = 2.0 * std::log(2.0 / delta);
    const bool first_is_better = mu1 > mu2;
    std::size_t errors = 0;
    std::size_t undecided = 0;
    double stop_sum = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        std::uint64_t sum1 = 0;
        std::uint64_t sum2 = 0;
        std::size_t t = 0;
        bool decided = false;
        while (t < max_steps) {
            ++t;
            sum1 += rng.bernoulli(mu1) ? 1 : 0;
            sum2 += rng.bernoulli(mu2) ? 1 : 0;
            const double gap = (static_cast<double>(sum1) - static_cast<double>(sum2)) / static_cast<double>(t);
            if (std::abs(gap) >= std::sqrt(log_term / static_cast<double>(t))) {
                decided = true;
                if ((gap > 0.0) != first_is_better) ++errors;
                break;
            }
        }
        if (!decided) {
            ++undecided;
            ++errors;
        }
        stop_sum += static_cast<double>(t);
    }
    return {static_cast<double>(errors) / static_cast<double>(trials), stop_sum / static_cast<double>(trials), trials,
            undecided};
}

} // namespace abow
