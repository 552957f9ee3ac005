#pragma once

// Evaluation protocol: top-n correctness against ground truth, recall at the
// best acceptance threshold whose precision clears a floor, mean fraction of
// features processed, Monte Carlo averaging over permutation seeds, threshold
// sweeps and the minimal-prefix profile.

#include <abow/descriptors.hpp>
#include <abow/detail/parallel.hpp>
#include <abow/errors.hpp>
#include <abow/query.hpp>
#include <abow/stopping.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace abow {

struct EvalConfig {
    std::vector<std::size_t> top_n{3, 5, 10};
    std::vector<StoppingRule> rules{NeverStop{}};
    std::size_t monte_carlo_runs = 10;
    /// Run r permutes query features with seed base_seed + r.
    std::uint64_t base_seed = 0;
    double precision_floor = 0.90;
    unsigned threads = 1;
};

struct LevelMetrics {
    std::size_t n = 0;
    /// Correct accepted queries / all queries, at the chosen operating point.
    double recall = 0.0;
    /// Correct accepted queries / accepted queries, at the same point.
    double recall_accepted = 0.0;
    double precision = 0.0;
    /// Fraction of queries with a correct match in the top n, nothing filtered.
    double raw_recall = 0.0;
};

struct RuleEvaluation {
    StoppingRule rule;
    std::vector<LevelMetrics> levels;
    double mean_fraction_features = 0.0;
    /// Per query, averaged over runs.
    std::vector<double> query_fractions;
    /// [run][query]
    std::vector<std::vector<std::size_t>> features_processed;

    const LevelMetrics& level(std::size_t n) const {
        for (const auto& l : levels)
            if (l.n == n) return l;
        throw InvalidConfig("no metrics for n = " + std::to_string(n));
    }
};

struct EvalReport {
    std::vector<std::uint32_t> query_ids;
    std::size_t run_count = 0;
    std::vector<RuleEvaluation> rules;
};

namespace detail {

struct QueryOutcome {
    double top_similarity = -std::numeric_limits<double>::infinity();
    /// Best similarity among correct candidates within the top n, -inf if none.
    double correct_similarity = -std::numeric_limits<double>::infinity();
};

struct OperatingPoint {
    double recall = 0.0;
    double recall_accepted = 0.0;
    double precision = 0.0;
    double raw_recall = 0.0;
};

// Sweeps the acceptance threshold over every similarity that can change the
// outcome and keeps the highest-recall point whose precision reaches the floor.
inline OperatingPoint operating_point(std::span<const QueryOutcome> outcomes, double precision_floor) {
    const auto q = outcomes.size();
    std::vector<double> tops;
    std::vector<double> corrects;
    for (const auto& o : outcomes) {
        tops.push_back(o.top_similarity);
        corrects.push_back(o.correct_similarity);
    }
    std::sort(tops.begin(), tops.end());
    std::sort(corrects.begin(), corrects.end());
    std::vector<double> thresholds(tops);
    for (double c : corrects)
        if (std::isfinite(c)) thresholds.push_back(c);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    auto count_at_least = [](const std::vector<double>& sorted, double tau) {
        return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), tau));
    };

    OperatingPoint best;
    const auto all_correct = count_at_least(corrects, -std::numeric_limits<double>::max());
    best.raw_recall = q == 0 ? 0.0 : static_cast<double>(all_correct) / static_cast<double>(q);
    bool found = false;
    double best_precision_seen = 0.0;
    for (const double tau : thresholds) {
        const auto accepted = count_at_least(tops, tau);
        if (accepted == 0) continue;
        const auto correct = count_at_least(corrects, tau);
        const double precision = static_cast<double>(correct) / static_cast<double>(accepted);
        best_precision_seen = std::max(best_precision_seen, precision);
        if (precision < precision_floor) continue;
        const double recall = static_cast<double>(correct) / static_cast<double>(q);
        if (!found || recall > best.recall || (recall == best.recall && precision > best.precision)) {
            found = true;
            best.recall = recall;
            best.precision = precision;
            best.recall_accepted = precision;
        }
    }
    if (!found) best.precision = best_precision_seen;
    return best;
}

inline void check_compatible(const QueryEngine& engine, const Dataset& ds) {
    if (engine.num_images() != ds.database_size())
        throw InvalidConfig("index covers " + std::to_string(engine.num_images()) + " images but the dataset has " +
                            std::to_string(ds.database_size()) + " database images");
    for (const auto& q : ds.queries())
        if (!ds.ground_truth.contains(q.image_id)) throw MissingGroundTruth(q.image_id);
}

} // namespace detail

inline RuleEvaluation evaluate_rule(const QueryEngine& engine, const Dataset& ds, const StoppingRule& rule,
                                    const EvalConfig& cfg) {
    validate(rule);
    const auto queries = ds.queries();
    const auto database = ds.database();
    const auto nq = queries.size();
    const std::size_t max_n = *std::max_element(cfg.top_n.begin(), cfg.top_n.end());

    RuleEvaluation out;
    out.rule = rule;
    out.query_fractions.assign(nq, 0.0);
    std::vector<std::vector<LevelMetrics>> per_run(cfg.monte_carlo_runs);

    for (std::size_t run = 0; run < cfg.monte_carlo_runs; ++run) {
        std::vector<QueryResult> results(nq);
        const auto seed = cfg.base_seed + run;
        detail::parallel_for(nq, cfg.threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) results[i] = engine.run(queries[i], rule, max_n, seed);
        });

        auto& processed = out.features_processed.emplace_back(nq);
        for (std::size_t i = 0; i < nq; ++i) {
            processed[i] = results[i].features_processed;
            out.query_fractions[i] += results[i].fraction_processed;
        }

        for (auto n : cfg.top_n) {
            std::vector<detail::QueryOutcome> outcomes(nq);
            for (std::size_t i = 0; i < nq; ++i) {
                const auto& truth = ds.ground_truth.at(queries[i].image_id);
                const auto& ranked = results[i].ranked;
                if (!ranked.empty()) outcomes[i].top_similarity = ranked.front().similarity;
                for (std::size_t r = 0; r < std::min(n, ranked.size()); ++r) {
                    if (truth.contains(database[ranked[r].image_id].image_id)) {
                        outcomes[i].correct_similarity = ranked[r].similarity;
                        break;
                    }
                }
            }
            const auto op = detail::operating_point(outcomes, cfg.precision_floor);
            per_run[run].push_back({n, op.recall, op.recall_accepted, op.precision, op.raw_recall});
        }
    }

    const auto runs = static_cast<double>(cfg.monte_carlo_runs);
    for (std::size_t li = 0; li < cfg.top_n.size(); ++li) {
        LevelMetrics m;
        m.n = cfg.top_n[li];
        for (const auto& run : per_run) {
            m.recall += run[li].recall;
            m.recall_accepted += run[li].recall_accepted;
            m.precision += run[li].precision;
            m.raw_recall += run[li].raw_recall;
        }
        m.recall /= runs;
        m.recall_accepted /= runs;
        m.precision /= runs;
        m.raw_recall /= runs;
        out.levels.push_back(m);
    }
    for (auto& f : out.query_fractions) f /= runs;
    double sum = 0.0;
    for (double f : out.query_fractions) sum += f;
    out.mean_fraction_features = nq == 0 ? 0.0 : sum / static_cast<double>(nq);
    return out;
}

inline EvalReport evaluate(const QueryEngine& engine, const Dataset& ds, const EvalConfig& cfg) {
    if (cfg.top_n.empty()) throw InvalidConfig("top_n must not be empty");
    for (auto n : cfg.top_n)
        if (n < 1) throw InvalidConfig("top_n entries must be at least 1");
    if (cfg.monte_carlo_runs == 0) throw InvalidConfig("monte_carlo_runs must be positive");
    detail::check_compatible(engine, ds);

    EvalReport report;
    report.run_count = cfg.monte_carlo_runs;
    for (const auto& q : ds.queries()) report.query_ids.push_back(q.image_id);
    for (const auto& rule : cfg.rules) report.rules.push_back(evaluate_rule(engine, ds, rule, cfg));
    return report;
}

inline EvalReport evaluate(const InvertedIndex& ix, const Vocabulary& v, const Dataset& ds, const EvalConfig& cfg,
                           const QueryOptions& options = {}) {
    return evaluate(QueryEngine(ix, v, options), ds, cfg);
}

/// One report per threshold of `family` (rule1, rule2 or rule3); cfg.rules is ignored.
inline std::vector<EvalReport> sweep(const QueryEngine& engine, const Dataset& ds, std::string_view family,
                                     std::span<const double> thresholds, EvalConfig cfg) {
    if (thresholds.empty()) throw InvalidConfig("sweep needs at least one threshold");
    if (family != "rule1" && family != "rule2" && family != "rule3")
        throw InvalidConfig("sweep family must be rule1, rule2 or rule3");
    std::vector<EvalReport> reports;
    for (double t : thresholds) {
        cfg.rules = {make_rule(family, t)};
        reports.push_back(evaluate(engine, ds, cfg));
    }
    return reports;
}

inline std::vector<EvalReport> sweep(const InvertedIndex& ix, const Vocabulary& v, const Dataset& ds,
                                     std::string_view family, std::span<const double> thresholds,
                                     const EvalConfig& cfg, const QueryOptions& options = {}) {
    return sweep(QueryEngine(ix, v, options), ds, family, thresholds, cfg);
}

/// Columns: rule,param,n,recall,precision,mean_fraction,run_count
inline void write_report_csv(std::ostream& out, std::span<const EvalReport> reports) {
    out << "rule,param,n,recall,precision,mean_fraction,run_count\n";
    for (const auto& report : reports)
        for (const auto& r : report.rules) {
            const double param = rule_parameter(r.rule);
            const auto param_text = std::isnan(param) ? std::string() : format_number(param);
            for (const auto& l : r.levels)
                out << family_name(r.rule) << ',' << param_text << ',' << l.n << ',' << format_number(l.recall) << ','
                    << format_number(l.precision) << ',' << format_number(r.mean_fraction_features) << ','
                    << report.run_count << '\n';
        }
}

// ---------------------------------------------------------------------------
// Minimal-prefix profile: for a fixed permutation seed, the shortest prefix
// after which the running argmax already equals the exhaustive argmax and never
// changes again.

struct QueryProfile {
    std::uint32_t query_id = 0;
    std::size_t num_features = 0;
    std::size_t min_features = 0;
    double min_fraction = 0.0;
    /// Database slot of the exhaustive argmax.
    std::uint32_t final_argmax = 0;
};

struct FeaturesProfile {
    std::vector<QueryProfile> queries;
    /// Query counts with min_fraction in (0, .1], (.1, .2], ..., (.9, 1].
    std::array<std::size_t, 10> deciles{};
};

/// Index of the first position from which `argmaxes` stays at its last value, plus one.
inline std::size_t stable_suffix_start(std::span<const std::uint32_t> argmaxes) {
    if (argmaxes.empty()) return 0;
    std::size_t t = argmaxes.size();
    while (t > 1 && argmaxes[t - 2] == argmaxes.back()) --t;
    return t;
}

inline std::size_t decile_of(std::size_t min_features, std::size_t num_features) {
    const auto d = (10 * min_features + num_features - 1) / num_features;
    return std::clamp<std::size_t>(d, 1, 10) - 1;
}

inline FeaturesProfile features_needed_profile(const QueryEngine& engine, const Dataset& ds, std::uint64_t seed,
                                               unsigned threads = 1) {
    if (engine.num_images() != ds.database_size())
        throw InvalidConfig("index and dataset database sizes differ");
    const auto queries = ds.queries();
    FeaturesProfile profile;
    profile.queries.resize(queries.size());
    detail::parallel_for(queries.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto trace = engine.trace(queries[i], NeverStop{}, 1, seed);
            std::vector<std::uint32_t> argmaxes;
            argmaxes.reserve(trace.steps.size());
            for (const auto& s : trace.steps) argmaxes.push_back(s.argmax);
            auto& p = profile.queries[i];
            p.query_id = queries[i].image_id;
            p.num_features = argmaxes.size();
            p.min_features = stable_suffix_start(argmaxes);
            p.min_fraction = static_cast<double>(p.min_features) / static_cast<double>(p.num_features);
            p.final_argmax = argmaxes.back();
        }
    });
    for (const auto& p : profile.queries) ++profile.deciles[decile_of(p.min_features, p.num_features)];
    return profile;
}

inline FeaturesProfile features_needed_profile(const InvertedIndex& ix, const Vocabulary& v, const Dataset& ds,
                                               std::uint64_t seed, unsigned threads = 1) {
    return features_needed_profile(QueryEngine(ix, v), ds, seed, threads);
}

inline void write_profile_csv(std::ostream& out, const FeaturesProfile& profile) {
    out << "query_id,num_features,min_features,min_fraction,decile\n";
    for (const auto& p : profile.queries)
        out << p.query_id << ',' << p.num_features << ',' << p.min_features << ',' << format_number(p.min_fraction)
            << ',' << decile_of(p.min_features, p.num_features) << '\n';
}

inline void write_deciles_csv(std::ostream& out, const FeaturesProfile& profile) {
    out << "fraction_low,fraction_high,queries\n";
    for (std::size_t d = 0; d < 10; ++d)
        out << format_number(static_cast<double>(d) / 10.0) << ',' << format_number(static_cast<double>(d + 1) / 10.0)
            << ',' << profile.deciles[d] << '\n';
}

} // namespace abow
