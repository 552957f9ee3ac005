// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
// Usage: abow_acceptance <abow-cli-path> <artifact-dir>

#include "support.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace abow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double x, int precision = 4) {
    std::ostringstream out;
    out.precision(precision);
    out << x;
    return out.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
    const auto start = Clock::now();
    std::size_t mismatches = 0;
    std::size_t queries = 0;
    Rng params(2024);
    for (std::uint64_t d = 0; d < 20; ++d) {
        SynthConfig cfg;
        cfg.num_images = 20 + params.below(181);       // <= 200
        cfg.features_per_image = 10 + params.below(91);  // <= 100
        cfg.dimension = 4 + params.below(13);
        cfg.num_clusters = 32 + params.below(97);
        cfg.hard_fraction = params.uniform();
        cfg.confuser_count = std::min<std::size_t>(5, cfg.num_images - cfg.num_images / 2 - 1);
        const std::size_t k = 16 + params.below(241);  // <= 256
        const auto p = fixture::make_pipeline(cfg, 1000 + d, k);
        const auto m = oracle::model(p.vocab, p.dataset.database());
        const QueryEngine engine(p.index, p.vocab);
        for (const auto& q : p.dataset.queries()) {
            const auto got = engine.run(q, NeverStop{}, p.index.num_images, d);
            const auto want = oracle::cosine_ranking(p.vocab, m, q);
            ++queries;
            for (std::size_t i = 0; i < want.order.size(); ++i)
                if (got.ranked[i].image_id != want.order[i]) {
                    ++mismatches;
                    break;
                }
        }
    }
    const double elapsed = seconds_since(start);
    return {mismatches == 0 && elapsed < 60.0, "20 datasets, " + std::to_string(queries) + " queries, " +
                                                   std::to_string(mismatches) + " mismatching rankings, " +
                                                   fmt(elapsed, 3) + " s (limit 60 s)"};
}

Outcome prefix_replay() {
    std::size_t mismatches = 0;
    std::size_t queries = 0;
    for (std::uint64_t d = 0; d < 10; ++d) {
        auto cfg = SynthConfig{};
        cfg.num_images = 60 + 10 * d;
        const auto p = fixture::make_pipeline(cfg, 2000 + d, 64 + 16 * d);
        const auto m = oracle::model(p.vocab, p.dataset.database());
        const auto profile = features_needed_profile(p.index, p.vocab, p.dataset, 77 + d);
        const auto qs = p.dataset.queries();
        for (std::size_t i = 0; i < qs.size(); ++i) {
            ++queries;
            mismatches += profile.queries[i].min_features != oracle::replay(p.vocab, m, qs[i], 77 + d).min_features;
        }
    }
    return {mismatches == 0,
            "10 datasets, " + std::to_string(queries) + " queries, " + std::to_string(mismatches) + " mismatches"};
}

const fixture::Pipeline& default_benchmark() {
    static const auto p = fixture::make_pipeline(SynthConfig{}, 42, 128);
    return p;
}

Outcome threshold_monotonicity() {
    const auto& p = default_benchmark();
    const std::vector<double> thresholds{50, 40, 30, 25, 20, 15, 12, 10};
    EvalConfig cfg;
    cfg.monte_carlo_runs = 5;
    cfg.base_seed = 7;
    const auto reports = sweep(p.index, p.vocab, p.dataset, "rule1", thresholds, cfg);
    cfg.rules = {NeverStop{}};
    const auto never = evaluate(p.index, p.vocab, p.dataset, cfg);
    std::size_t violations = 0;
    for (std::size_t t = 1; t < reports.size(); ++t) {
        const auto& prev = reports[t - 1].rules[0].features_processed;
        const auto& cur = reports[t].rules[0].features_processed;
        for (std::size_t run = 0; run < cur.size(); ++run)
            for (std::size_t q = 0; q < cur[run].size(); ++q) violations += cur[run][q] > prev[run][q];
    }
    const double r_top = reports[0].rules[0].level(3).recall;
    const double r_never = never.rules[0].level(3).recall;
    return {violations == 0 && std::abs(r_top - r_never) <= 0.02,
            std::to_string(violations) + " monotonicity violations over T=50..10; recall@3 at T=50 " + fmt(r_top) +
                " vs never " + fmt(r_never) + " (tolerance 0.02)"};
}

Outcome easy_hard_separation() {
    const auto& p = default_benchmark();
    const QueryEngine engine(p.index, p.vocab);
    const double threshold = 15.0;
    std::size_t separated = 0;
    std::string medians;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::vector<double> easy;
        std::vector<double> hard;
        const auto qs = p.dataset.queries();
        for (std::size_t i = 0; i < qs.size(); ++i)
            (p.plan.queries[i].hard ? hard : easy)
                .push_back(engine.run(qs[i], PeakMeanGap{threshold}, 1, seed).fraction_processed);
        const double me = median(easy);
        const double mh = median(hard);
        separated += me < mh;
        if (seed < 3) medians += " " + fmt(me, 3) + "/" + fmt(mh, 3);
    }
    return {separated >= 9, std::to_string(separated) + "/10 seeds with easy median < hard median at T=15 (need 9);" +
                                " easy/hard medians, first seeds:" + medians};
}

Outcome hoeffding_race() {
    const auto start = Clock::now();
    const auto base = race_simulate(0.6, 0.4, 0.05, 1000, 1);
    const auto narrow = race_simulate(0.51, 0.49, 0.05, 1000, 2);
    const auto wide = race_simulate(0.9, 0.1, 0.05, 1000, 3);
    const double elapsed = seconds_since(start);
    return {base.error_rate <= 0.05 && narrow.mean_stop_time > wide.mean_stop_time && elapsed < 30.0,
            "error(0.6,0.4) " + fmt(base.error_rate) + " (limit 0.05); stop time gap 0.02 " +
                fmt(narrow.mean_stop_time, 6) + " vs gap 0.8 " + fmt(wide.mean_stop_time, 4) + "; " + fmt(elapsed, 3) +
                " s (limit 30 s)"};
}

Outcome cost_accuracy(const fs::path& artifacts) {
    const auto& p = default_benchmark();
    const QueryEngine engine(p.index, p.vocab);
    EvalConfig cfg;
    cfg.monte_carlo_runs = 10;
    cfg.base_seed = 11;
    cfg.rules = {NeverStop{}};
    const auto never = evaluate(engine, p.dataset, cfg);

    // Fraction processed is monotone in T, so bisect for the threshold reaching one half.
    auto fraction_at = [&](double t) {
        cfg.rules = {PeakMeanGap{t}};
        return evaluate(engine, p.dataset, cfg);
    };
    double lo = 1.0;
    double hi = 100.0;
    for (int i = 0; i < 20; ++i) {
        const double mid = 0.5 * (lo + hi);
        (fraction_at(mid).rules[0].mean_fraction_features < 0.5 ? lo : hi) = mid;
    }
    const double chosen = hi;
    const auto at_half = fraction_at(chosen);

    const std::vector<double> grid{60, 40, 30, 25, 20, 17.5, 15, 12.5, 10, 8, 6, 4, 2};
    auto curve = sweep(engine, p.dataset, "rule1", grid, cfg);
    curve.insert(curve.begin(), never);
    curve.push_back(at_half);
    fs::create_directories(artifacts);
    std::ofstream out(artifacts / "cost_accuracy_curve.csv");
    write_report_csv(out, curve);

    const double frac = at_half.rules[0].mean_fraction_features;
    const double r_half = at_half.rules[0].level(10).recall;
    const double r_full = never.rules[0].level(10).recall;
    return {std::abs(frac - 0.5) <= 0.05 && r_full - r_half <= 0.05,
            "T=" + fmt(chosen, 5) + " processes " + fmt(frac) + " of features; recall@10 " + fmt(r_half) +
                " vs never " + fmt(r_full) + " (max loss 0.05); curve in " +
                (artifacts / "cost_accuracy_curve.csv").string()};
}

int run_cli(const std::string& cli, const std::string& args) {
    const auto cmd = cli + " --log-level error " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome cli_determinism(const std::string& cli, const fs::path& scratch) {
    const std::vector<std::string> outputs{"ds.bin",   "ds.bin.gt.csv", "v.bin",     "i.bin",    "bench.csv",
                                           "sweep.csv", "profile.csv",   "deciles.csv", "trace.csv", "race.csv"};
    auto pipeline = [&](const fs::path& dir, unsigned threads) {
        fs::remove_all(dir);
        fs::create_directories(dir);
        const auto d = [&](const std::string& f) { return (dir / f).string(); };
        const std::string g = "--seed 42 --threads " + std::to_string(threads) + " ";
        const std::string in = " --index " + d("i.bin") + " --vocab " + d("v.bin") + " --dataset " + d("ds.bin");
        int rc = 0;
        rc |= run_cli(cli, g + "synth --out " + d("ds.bin"));
        rc |= run_cli(cli, g + "train-vocab --input " + d("ds.bin") + " --k 128 --out " + d("v.bin"));
        rc |= run_cli(cli, g + "build-index --vocab " + d("v.bin") + " --input " + d("ds.bin") + " --out " + d("i.bin"));
        rc |= run_cli(cli, g + "bench" + in + " --rules never rule1:30,15 rule2:1 rule3:20 hoeffding:0.05 --runs 3 --out " +
                               d("bench.csv"));
        rc |= run_cli(cli, g + "sweep" + in + " --family rule1 --thresholds 40,20,10 --runs 3 --out " + d("sweep.csv"));
        rc |= run_cli(cli, g + "profile" + in + " --out " + d("profile.csv") + " --deciles " + d("deciles.csv"));
        rc |= run_cli(cli, g + "query" + in + " --query-id 150 --rule rule1 --threshold 15 --trace " + d("trace.csv"));
        rc |= run_cli(cli, g + "bench race --trials 300 --out " + d("race.csv"));
        return rc;
    };
    const auto a = scratch / "run_a";
    const auto b = scratch / "run_b";
    const auto c = scratch / "run_c";
    if (pipeline(a, 1) != 0 || pipeline(b, 1) != 0 || pipeline(c, 4) != 0)
        return {false, "a pipeline command failed"};
    std::size_t differing = 0;
    std::string which;
    for (const auto& f : outputs) {
        const auto ref = slurp(a / f);
        if (ref.empty() || slurp(b / f) != ref || slurp(c / f) != ref) {
            ++differing;
            which += " " + f;
        }
    }
    return {differing == 0, std::to_string(outputs.size()) + " outputs compared across reruns and --threads 1/4; " +
                                std::to_string(differing) + " differ" + which};
}

Outcome kmeans_sanity() {
    std::size_t increases = 0;
    std::size_t steps = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ds = synthesize(SynthConfig{}, 500 + seed);
        KMeansConfig cfg;
        cfg.k = 128;
        cfg.seed = seed;
        cfg.tolerance = 0.0;
        cfg.max_iterations = 25;
        const auto r = train(ds.database(), cfg);
        for (std::size_t i = 1; i < r.distortion_history.size(); ++i) {
            ++steps;
            increases += r.distortion_history[i] > r.distortion_history[i - 1];
        }
    }
    Rng rng(99);
    Vocabulary v;
    v.dimension = 16;
    v.centroids.resize(256 * 16);
    for (auto& x : v.centroids) x = static_cast<float>(rng.uniform());
    std::size_t wrong = 0;
    std::vector<float> d(16);
    for (int i = 0; i < 10000; ++i) {
        for (auto& x : d) x = static_cast<float>(rng.uniform());
        wrong += quantize(v, d).word != oracle::nearest_word(v, d);
    }
    return {increases == 0 && wrong == 0, std::to_string(increases) + " distortion increases over " +
                                              std::to_string(steps) + " updates in 5 runs; " + std::to_string(wrong) +
                                              "/10000 quantization mismatches"};
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: " << argv[0] << " <abow-cli> <artifact-dir>\n";
        return 2;
    }
    const std::string cli = argv[1];
    const fs::path artifacts = argv[2];

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"oracle-equivalence", oracle_equivalence},
        {"prefix-replay-equivalence", prefix_replay},
        {"threshold-monotonicity", threshold_monotonicity},
        {"easy-hard-separation", easy_hard_separation},
        {"hoeffding-race", hoeffding_race},
        {"cost-accuracy", [&] { return cost_accuracy(artifacts); }},
        {"cli-determinism", [&] { return cli_determinism(cli, artifacts / "determinism"); }},
        {"kmeans-sanity", kmeans_sanity},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
