#pragma once

// Anytime query loop: features are quantized in a seeded random order, each
// one votes into the score histogram through the inverted index, and the
// stopping rule is consulted after every feature.
//
// With the default cosine scoring a feature quantized to word w adds
//     idf(w) * weight(w, j) / norm(j) = idf(w)^2 tf(w, j) / norm(j)
// to bin j. After t features with word counts c_w this gives
//     h(j) = sum_w c_w idf(w) d_j(w) = sqrt(sum_w (c_w idf(w))^2) * cos(q_t, d_j),
// so ranking the histogram is ranking by tf-idf cosine to the processed prefix.

#include <abow/descriptors.hpp>
#include <abow/errors.hpp>
#include <abow/histogram.hpp>
#include <abow/index.hpp>
#include <abow/random.hpp>
#include <abow/stopping.hpp>
#include <abow/vocabulary.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace abow {

enum class ScoreMode {
    /// Votes divided by the image norm; exhaustive ranking equals tf-idf cosine ranking.
    Cosine,
    /// Votes without the image norm (raw tf-idf products), for comparison.
    Raw,
};

struct QueryOptions {
    ScoreMode mode = ScoreMode::Cosine;
    /// Multiply each vote by exp(-dist^2 / sigma^2), dist = the feature's quantization distance.
    bool distance_weighting = false;
    /// Sigma for distance weighting; 0 means the index's mean quantization distance.
    double distance_sigma = 0.0;
    /// Drop ranked candidates whose similarity is below this value.
    std::optional<double> min_similarity;
    /// Copy the full histogram into the result.
    bool keep_histogram = false;
};

enum class StopReason { RuleFired, Exhausted };

struct RankedMatch {
    /// Database slot (histogram bin) of the candidate.
    std::uint32_t image_id = 0;
    /// Raw accumulated bin value.
    double score = 0.0;
    /// score / sqrt(sum_w (c_w idf_w)^2) (and / norm in Raw mode): cosine to the processed prefix.
    double similarity = 0.0;

    friend bool operator==(const RankedMatch&, const RankedMatch&) = default;
};

struct QueryResult {
    std::vector<RankedMatch> ranked;
    std::size_t features_processed = 0;
    std::size_t total_features = 0;
    double fraction_processed = 0.0;
    StopReason stop_reason = StopReason::Exhausted;
    std::optional<std::vector<double>> histogram_snapshot;
};

struct TraceStep {
    std::size_t step = 0;
    std::uint32_t word_id = 0;
    std::uint32_t argmax = 0;
    double gap = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

struct HistogramSnapshot {
    std::size_t step = 0;
    std::vector<double> bins;
};

struct TraceOptions {
    /// Snapshot the histogram every this fraction of the query's features (0 disables).
    double snapshot_every = 0.0;
};

struct QueryTrace {
    QueryResult result;
    std::vector<TraceStep> steps;
    /// Periodic snapshots; the last entry is always the final histogram.
    std::vector<HistogramSnapshot> snapshots;
};

/// Top-n bins by (score desc, bin asc).
inline std::vector<std::uint32_t> top_bins(std::span<const double> bins, std::size_t n) {
    std::vector<std::uint32_t> ids(bins.size());
    std::iota(ids.begin(), ids.end(), 0u);
    n = std::min(n, ids.size());
    auto better = [&](std::uint32_t a, std::uint32_t b) { return bins[a] > bins[b] || (bins[a] == bins[b] && a < b); };
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(), better);
    ids.resize(n);
    return ids;
}

/// Precomputes per-word vote lists for one (index, vocabulary) pair; immutable
/// afterwards, so one engine can serve concurrent queries.
class QueryEngine {
public:
    QueryEngine(const InvertedIndex& ix, const Vocabulary& v, QueryOptions options = {})
        : ix_(&ix), vocab_(&v), options_(options) {
        if (!v.has_idf()) throw InvalidConfig("vocabulary idf has not been computed");
        if (v.size() != ix.vocabulary_size()) throw InvalidConfig("vocabulary and index sizes differ");
        if (ix.num_images == 0) throw InvalidConfig("index has no images");
        if (options_.distance_weighting) {
            if (options_.distance_sigma <= 0.0) options_.distance_sigma = ix.mean_quantization_distance;
            if (!(options_.distance_sigma > 0.0))
                throw InvalidConfig("distance weighting needs a positive sigma");
        }

        offsets_.reserve(ix.vocabulary_size() + 1);
        offsets_.push_back(0);
        for (std::size_t w = 0; w < ix.vocabulary_size(); ++w) {
            for (const auto& p : ix.postings[w]) {
                const double norm = ix.image_norms[p.image_id];
                double vote = v.idf[w] * p.weight;
                if (options_.mode == ScoreMode::Cosine) vote = norm > 0.0 ? vote / norm : 0.0;
                bins_.push_back(p.image_id);
                votes_.push_back(vote);
                increment_bound_ = std::max(increment_bound_, vote);
            }
            offsets_.push_back(bins_.size());
        }
    }

    const QueryOptions& options() const noexcept { return options_; }
    std::size_t num_images() const noexcept { return ix_->num_images; }
    const Vocabulary& vocabulary() const noexcept { return *vocab_; }
    const InvertedIndex& index() const noexcept { return *ix_; }

    /// Largest vote any single feature can add to one bin.
    double increment_bound() const noexcept { return increment_bound_; }

    QueryResult run(const ImageRecord& query, const StoppingRule& rule, std::size_t n, std::uint64_t seed) const {
        return execute(query, rule, n, seed, nullptr, {});
    }

    QueryTrace trace(const ImageRecord& query, const StoppingRule& rule, std::size_t n, std::uint64_t seed,
                     TraceOptions trace_options = {}) const {
        QueryTrace t;
        t.result = execute(query, rule, n, seed, &t, trace_options);
        return t;
    }

private:
    QueryResult execute(const ImageRecord& query, const StoppingRule& rule, std::size_t n, std::uint64_t seed,
                        QueryTrace* trace, TraceOptions trace_options) const {
        if (query.dimension != vocab_->dimension) throw DimensionMismatch(vocab_->dimension, query.dimension);
        if (query.empty()) throw EmptyQuery();
        if (n == 0) throw InvalidConfig("n must be positive");
        validate(rule);

        const auto total = query.size();
        std::vector<std::uint32_t> order(total);
        std::iota(order.begin(), order.end(), 0u);
        Rng rng(seed);
        rng.shuffle(std::span(order));

        ScoreHistogram h(ix_->num_images);
        StopState state;
        state.increment_bound = increment_bound_;
        std::vector<std::uint32_t> word_counts(vocab_->size(), 0);
        std::vector<std::uint32_t> touched;

        std::size_t snapshot_stride = 0;
        if (trace && trace_options.snapshot_every > 0.0)
            snapshot_stride = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::ceil(trace_options.snapshot_every * static_cast<double>(total))));
        if (trace) trace->steps.reserve(total);

        QueryResult result;
        result.total_features = total;
        for (auto f : order) {
            const auto q = quantize(*vocab_, query.descriptor(f));
            const double factor = options_.distance_weighting
                                      ? std::exp(-(q.distance * q.distance) /
                                                 (options_.distance_sigma * options_.distance_sigma))
                                      : 1.0;
            for (auto i = offsets_[q.word]; i < offsets_[q.word + 1]; ++i) h.add(bins_[i], votes_[i] * factor);
            if (word_counts[q.word]++ == 0) touched.push_back(q.word);
            state.advance(h);

            if (trace) {
                trace->steps.push_back({state.features_processed, q.word, h.argmax(), h.max() - h.mean(), h.max(),
                                        h.mean()});
                if (snapshot_stride > 0 && state.features_processed % snapshot_stride == 0)
                    trace->snapshots.push_back({state.features_processed, {h.bins().begin(), h.bins().end()}});
            }
            if (should_stop(rule, h, state)) {
                result.stop_reason = StopReason::RuleFired;
                break;
            }
        }

        result.features_processed = state.features_processed;
        result.fraction_processed = static_cast<double>(state.features_processed) / static_cast<double>(total);

        std::sort(touched.begin(), touched.end());
        double query_sq = 0.0;
        for (auto w : touched) {
            const double x = static_cast<double>(word_counts[w]) * vocab_->idf[w];
            query_sq += x * x;
        }
        const double query_norm = std::sqrt(query_sq);
        for (auto bin : top_bins(h.bins(), n)) {
            double denom = query_norm;
            if (options_.mode == ScoreMode::Raw) denom *= ix_->image_norms[bin];
            const double sim = denom > 0.0 ? h[bin] / denom : 0.0;
            if (options_.min_similarity && sim < *options_.min_similarity) continue;
            result.ranked.push_back({bin, h[bin], sim});
        }
        if (options_.keep_histogram) result.histogram_snapshot.emplace(h.bins().begin(), h.bins().end());
        if (trace && (trace->snapshots.empty() || trace->snapshots.back().step != state.features_processed))
            trace->snapshots.push_back({state.features_processed, {h.bins().begin(), h.bins().end()}});
        return result;
    }

    const InvertedIndex* ix_;
    const Vocabulary* vocab_;
    QueryOptions options_;
    std::vector<std::size_t> offsets_;
    std::vector<std::uint32_t> bins_;
    std::vector<double> votes_;
    double increment_bound_ = 0.0;
};

inline QueryResult run_query(const InvertedIndex& ix, const Vocabulary& v, const ImageRecord& query,
                             const StoppingRule& rule, std::size_t n, std::uint64_t seed,
                             const QueryOptions& options = {}) {
    return QueryEngine(ix, v, options).run(query, rule, n, seed);
}

inline QueryTrace run_query_trace(const InvertedIndex& ix, const Vocabulary& v, const ImageRecord& query,
                                  const StoppingRule& rule, std::size_t n, std::uint64_t seed,
                                  TraceOptions trace_options = {}, const QueryOptions& options = {}) {
    return QueryEngine(ix, v, options).trace(query, rule, n, seed, trace_options);
}

// ---------------------------------------------------------------------------
// CSV helpers. Numbers use the shortest round-trip representation.

inline std::string format_number(double x) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

inline void write_trace_csv(std::ostream& out, const QueryTrace& trace) {
    out << "step,word_id,argmax,gap,max,mean\n";
    for (const auto& s : trace.steps)
        out << s.step << ',' << s.word_id << ',' << s.argmax << ',' << format_number(s.gap) << ','
            << format_number(s.max) << ',' << format_number(s.mean) << '\n';
}

} // namespace abow
