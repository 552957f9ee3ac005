// abow: command-line driver for dataset synthesis, vocabulary training, index
// building, single queries, benchmarks, sweeps, prefix profiles and the
// Hoeffding race simulator.

#include <abow/abow.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };
LogLevel g_log_level = LogLevel::info;

void log(LogLevel level, const std::string& msg) {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (level <= g_log_level) std::cerr << '[' << names[static_cast<int>(level)] << "] " << msg << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    abow::detail::write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void ensure_distinct(const fs::path& out, std::initializer_list<fs::path> inputs) {
    for (const auto& in : inputs) {
        std::error_code ec;
        if (fs::exists(out) && fs::equivalent(out, in, ec))
            throw abow::InvalidConfig("output '" + out.string() + "' would overwrite input '" + in.string() + "'");
    }
}

std::vector<double> parse_numbers(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw abow::InvalidConfig("not a number: '" + item + "'");
        values.push_back(v);
    }
    return values;
}

// "rule1:0.25,0.2" -> two rules; "never" -> one.
std::vector<abow::StoppingRule> parse_rule_list(const std::vector<std::string>& entries) {
    std::vector<abow::StoppingRule> rules;
    for (const auto& entry : entries) {
        const auto colon = entry.find(':');
        const auto family = entry.substr(0, colon);
        if (colon == std::string::npos) {
            rules.push_back(abow::make_rule(family));
            continue;
        }
        const auto values = parse_numbers(entry.substr(colon + 1));
        if (values.empty()) throw abow::InvalidConfig("rule '" + family + "' has no parameters");
        for (double v : values) rules.push_back(abow::make_rule(family, v));
    }
    return rules;
}

// Splices `--config <json>` entries into argv as flags, unless the same flag
// is already present on the command line.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::optional<std::string> config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (!config_path) return args;

    const auto bytes = abow::detail::read_file_bytes(*config_path);
    const auto doc = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (!doc.is_object()) throw abow::InvalidConfig("config file must hold a JSON object");

    auto present = [&](const std::string& flag) {
        for (const auto& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };
    for (const auto& [key, value] : doc.items()) {
        std::string flag = "--" + key;
        for (auto& c : flag)
            if (c == '_') c = '-';
        if (present(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) args.push_back(flag);
            continue;
        }
        auto scalar = [](const nlohmann::json& v) {
            if (v.is_string()) return v.get<std::string>();
            if (v.is_number_integer()) return std::to_string(v.get<long long>());
            if (v.is_number()) return abow::format_number(v.get<double>());
            throw abow::InvalidConfig("unsupported config value " + v.dump());
        };
        args.push_back(flag);
        if (value.is_array()) {
            // Array of rule specs stays one token per entry; numbers join with commas.
            bool all_strings = !value.empty() && std::all_of(value.begin(), value.end(),
                                                             [](const auto& v) { return v.is_string(); });
            if (all_strings) {
                for (const auto& v : value) args.push_back(v.get<std::string>());
            } else {
                std::string joined;
                for (const auto& v : value) joined += (joined.empty() ? "" : ",") + scalar(v);
                args.push_back(joined);
            }
        } else {
            args.push_back(scalar(value));
        }
    }
    return args;
}

struct ScoringFlags {
    bool raw_scores = false;
    bool distance_weighting = false;
    double distance_sigma = 0.0;

    void add_to(CLI::App* app) {
        app->add_flag("--raw-scores", raw_scores, "Vote without dividing by the image norm");
        app->add_flag("--distance-weighting", distance_weighting, "Weight votes by exp(-dist^2/sigma^2)");
        app->add_option("--distance-sigma", distance_sigma, "Sigma for distance weighting (default: mean VQ distance)");
    }

    abow::QueryOptions options(abow::InvertedIndex& ix, const abow::Vocabulary& v, const abow::Dataset& ds) const {
        abow::QueryOptions o;
        o.mode = raw_scores ? abow::ScoreMode::Raw : abow::ScoreMode::Cosine;
        o.distance_weighting = distance_weighting;
        o.distance_sigma = distance_sigma;
        if (distance_weighting && distance_sigma <= 0.0 && ix.mean_quantization_distance <= 0.0)
            ix.mean_quantization_distance = abow::mean_quantization_distance(v, ds.database());
        return o;
    }
};

struct Inputs {
    std::string index;
    std::string vocab;
    std::string dataset;

    void add_to(CLI::App* app) {
        app->add_option("--index", index, "Index file");
        app->add_option("--vocab", vocab, "Vocabulary file");
        app->add_option("--dataset", dataset, "Dataset file");
    }

    void require(const CLI::App* app) const {
        std::string missing;
        if (index.empty()) missing += " --index";
        if (vocab.empty()) missing += " --vocab";
        if (dataset.empty()) missing += " --dataset";
        if (!missing.empty())
            throw abow::InvalidConfig("missing required option(s):" + missing + "\n" + app->help());
    }
};

struct Loaded {
    abow::InvertedIndex index;
    abow::Vocabulary vocab;
    abow::Dataset dataset;
};

Loaded load_inputs(const Inputs& in) {
    Loaded l{abow::load_index(in.index), abow::load_vocabulary(in.vocab), abow::load_dataset(in.dataset)};
    log(LogLevel::info, "loaded index (" + std::to_string(l.index.num_images) + " images, " +
                            std::to_string(l.index.vocabulary_size()) + " words) and dataset (" +
                            std::to_string(l.dataset.images.size()) + " images)");
    return l;
}

std::vector<std::size_t> parse_top_n(const std::string& text) {
    std::vector<std::size_t> out;
    for (double v : parse_numbers(text)) {
        if (!(v >= 1.0) || v != std::floor(v)) throw abow::InvalidConfig("--n entries must be positive integers");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw abow::InvalidConfig("--n must list at least one value");
    return out;
}

std::string race_csv(double mu1, double mu2, double delta, std::size_t trials, const abow::RaceReport& r) {
    std::ostringstream out;
    out << "mu1,mu2,delta,trials,error_rate,mean_stop_time,undecided\n"
        << abow::format_number(mu1) << ',' << abow::format_number(mu2) << ',' << abow::format_number(delta) << ','
        << trials << ',' << abow::format_number(r.error_rate) << ',' << abow::format_number(r.mean_stop_time) << ','
        << r.undecided << '\n';
    return out.str();
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));

    CLI::App app{"Anytime bag-of-words retrieval with early-stopping rules"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string log_level = "info";
    app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--threads", threads, "Worker threads (results do not depend on it)")->capture_default_str();
    app.add_option("--log-level", log_level, "error|warn|info|debug")
        ->check(CLI::IsMember({"error", "warn", "info", "debug"}))
        ->capture_default_str();
    app.add_option("--config", "JSON file supplying any flag; command-line flags take precedence");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted queries");
    abow::SynthConfig synth_cfg;
    std::string synth_out;
    synth->add_option("--num-images", synth_cfg.num_images)->capture_default_str();
    synth->add_option("--features-per-image", synth_cfg.features_per_image)->capture_default_str();
    synth->add_option("--dimension", synth_cfg.dimension)->capture_default_str();
    synth->add_option("--num-clusters", synth_cfg.num_clusters)->capture_default_str();
    synth->add_option("--hard-fraction", synth_cfg.hard_fraction)->capture_default_str();
    synth->add_option("--confuser-count", synth_cfg.confuser_count)->capture_default_str();
    synth->add_option("--sigma", synth_cfg.sigma)->capture_default_str();
    synth->add_option("--clusters-per-image", synth_cfg.clusters_per_image)->capture_default_str();
    synth->add_option("--easy-match-share", synth_cfg.easy_match_share)->capture_default_str();
    synth->add_option("--hard-match-share", synth_cfg.hard_match_share)->capture_default_str();
    synth->add_option("--out", synth_out, "Output dataset file (ground truth goes to <out>.gt.csv)")->required();

    // train-vocab
    auto* train = app.add_subcommand("train-vocab", "Train a k-means vocabulary on the database half");
    std::string train_in;
    std::string train_out;
    abow::KMeansConfig kmeans;
    train->add_option("--input", train_in, "Dataset file")->required();
    train->add_option("--k", kmeans.k, "Vocabulary size")->required();
    train->add_option("--max-iterations", kmeans.max_iterations)->capture_default_str();
    train->add_option("--tolerance", kmeans.tolerance)->capture_default_str();
    train->add_option("--out", train_out, "Output vocabulary file")->required();

    // build-index
    auto* build = app.add_subcommand("build-index", "Build the inverted index over the database half");
    std::string build_vocab;
    std::string build_in;
    std::string build_out;
    build->add_option("--vocab", build_vocab)->required();
    build->add_option("--input", build_in, "Dataset file")->required();
    build->add_option("--out", build_out, "Output index file")->required();

    // query
    auto* query = app.add_subcommand("query", "Run one anytime query");
    Inputs query_in;
    ScoringFlags query_scoring;
    std::uint32_t query_id = 0;
    std::string rule_name = "never";
    double threshold = 0.0;
    std::size_t patience = 0;
    double delta = 0.05;
    std::size_t query_n = 5;
    std::string trace_out;
    double snapshot_every = 0.0;
    std::string snapshot_out;
    std::optional<double> min_similarity;
    query_in.add_to(query);
    query_scoring.add_to(query);
    query->add_option("--query-id", query_id)->required();
    query->add_option("--rule", rule_name, "rule1|rule2|rule3|hoeffding|never")->capture_default_str();
    query->add_option("--threshold", threshold, "Threshold for rule1/rule2");
    query->add_option("--patience", patience, "Patience for rule3");
    query->add_option("--delta", delta, "Confidence for hoeffding")->capture_default_str();
    query->add_option("--n", query_n, "Number of ranked candidates")->capture_default_str();
    query->add_option("--min-similarity", min_similarity, "Drop candidates below this similarity");
    query->add_option("--trace", trace_out, "Write the per-feature trace CSV here");
    query->add_option("--snapshot-every", snapshot_every, "Histogram snapshot period as a fraction of features");
    query->add_option("--snapshots", snapshot_out, "Write histogram snapshots CSV here");

    // bench (+ bench race)
    auto* bench = app.add_subcommand("bench", "Evaluate stopping rules with Monte Carlo averaging");
    Inputs bench_in;
    ScoringFlags bench_scoring;
    std::vector<std::string> bench_rules{"never"};
    std::string bench_n = "3,5,10";
    std::size_t runs = 10;
    double precision_floor = 0.9;
    std::string bench_out;
    bench_in.add_to(bench);
    bench_scoring.add_to(bench);
    bench->add_option("--rules", bench_rules, "Rule specs, e.g. rule1:0.25,0.2 rule3:50 never");
    bench->add_option("--n", bench_n, "Comma-separated top-n levels")->capture_default_str();
    bench->add_option("--runs", runs, "Monte Carlo runs")->capture_default_str();
    bench->add_option("--precision-floor", precision_floor)->capture_default_str();
    bench->add_option("--out", bench_out, "Report CSV (default: standard output)");

    double mu1 = 0.6;
    double mu2 = 0.4;
    double race_delta = 0.05;
    std::size_t trials = 1000;
    std::size_t max_steps = 100'000'000;
    std::string race_out;
    auto add_race_options = [&](CLI::App* sub) {
        sub->add_option("--mu1", mu1)->capture_default_str();
        sub->add_option("--mu2", mu2)->capture_default_str();
        sub->add_option("--delta", race_delta)->capture_default_str();
        sub->add_option("--trials", trials)->capture_default_str();
        sub->add_option("--max-steps", max_steps)->capture_default_str();
        sub->add_option("--out", race_out, "CSV output (default: standard output)");
    };
    auto* bench_race = bench->add_subcommand("race", "Two-arm Hoeffding race simulation");
    add_race_options(bench_race);
    auto* race = app.add_subcommand("race", "Two-arm Hoeffding race simulation");
    add_race_options(race);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Accuracy vs. fraction-of-features curve for one rule family");
    Inputs sweep_in;
    ScoringFlags sweep_scoring;
    std::string family = "rule1";
    std::string thresholds_text;
    std::string sweep_n = "3,5,10";
    std::size_t sweep_runs = 10;
    double sweep_floor = 0.9;
    std::string sweep_out;
    sweep_in.add_to(sweep);
    sweep_scoring.add_to(sweep);
    sweep->add_option("--family", family, "rule1|rule2|rule3")->capture_default_str();
    sweep->add_option("--thresholds", thresholds_text, "Comma-separated thresholds")->required();
    sweep->add_option("--n", sweep_n)->capture_default_str();
    sweep->add_option("--runs", sweep_runs)->capture_default_str();
    sweep->add_option("--precision-floor", sweep_floor)->capture_default_str();
    sweep->add_option("--out", sweep_out, "Curve CSV (default: standard output)");

    // profile
    auto* profile = app.add_subcommand("profile", "Minimal prefix needed to reach the exhaustive argmax");
    Inputs profile_in;
    ScoringFlags profile_scoring;
    std::string profile_out;
    std::string deciles_out;
    profile_in.add_to(profile);
    profile_scoring.add_to(profile);
    profile->add_option("--out", profile_out, "Per-query CSV")->required();
    profile->add_option("--deciles", deciles_out, "Decile histogram CSV");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    g_log_level = log_level == "error" ? LogLevel::error
                  : log_level == "warn" ? LogLevel::warn
                  : log_level == "debug" ? LogLevel::debug
                                         : LogLevel::info;

    try {
        if (*synth) {
            auto ds = abow::synthesize(synth_cfg, seed);
            abow::save_dataset(ds, synth_out);
            log(LogLevel::info, "wrote " + std::to_string(ds.images.size()) + " images to " + synth_out);
        } else if (*train) {
            ensure_distinct(train_out, {train_in});
            auto ds = abow::load_dataset(train_in);
            kmeans.seed = seed;
            kmeans.threads = threads;
            auto result = abow::train(ds.database(), kmeans);
            if (result.duplicate_centroids > 0)
                log(LogLevel::warn, std::to_string(result.duplicate_centroids) + " duplicate centroids (degenerate input)");
            auto vocab = abow::compute_idf(std::move(result.vocabulary), ds.database());
            abow::save_vocabulary(vocab, train_out);
            log(LogLevel::info, "trained " + std::to_string(vocab.size()) + " words in " +
                                    std::to_string(result.iterations) + " iterations (distortion " +
                                    abow::format_number(result.distortion_history.back()) + ")");
        } else if (*build) {
            ensure_distinct(build_out, {build_in, build_vocab});
            auto vocab = abow::load_vocabulary(build_vocab);
            auto ds = abow::load_dataset(build_in);
            auto ix = abow::build_index(vocab, ds.database(), threads);
            abow::save_index(ix, build_out);
            log(LogLevel::info, "indexed " + std::to_string(ix.num_images) + " images");
        } else if (*query) {
            query_in.require(query);
            auto l = load_inputs(query_in);
            const auto* image = l.dataset.find(query_id);
            if (!image) throw abow::InvalidConfig("no image with id " + std::to_string(query_id));
            double param = 0.0;
            if (rule_name == "rule1" || rule_name == "rule2") param = threshold;
            if (rule_name == "rule3") param = static_cast<double>(patience);
            if (rule_name == "hoeffding") param = delta;
            const auto rule = abow::make_rule(rule_name, param);
            auto options = query_scoring.options(l.index, l.vocab, l.dataset);
            options.min_similarity = min_similarity;
            const abow::QueryEngine engine(l.index, l.vocab, options);
            const auto trace = engine.trace(*image, rule, query_n, seed, {snapshot_every});
            const auto& result = trace.result;
            const auto database = l.dataset.database();
            std::ostringstream out;
            out << "rank,image_id,score,similarity\n";
            for (std::size_t r = 0; r < result.ranked.size(); ++r) {
                const auto& m = result.ranked[r];
                out << r + 1 << ',' << database[m.image_id].image_id << ',' << abow::format_number(m.score) << ','
                    << abow::format_number(m.similarity) << '\n';
            }
            std::cout << out.str();
            log(LogLevel::info, "processed " + std::to_string(result.features_processed) + "/" +
                                    std::to_string(result.total_features) + " features (" +
                                    abow::format_number(result.fraction_processed) + "), stop: " +
                                    (result.stop_reason == abow::StopReason::RuleFired ? "rule fired" : "exhausted"));
            if (!trace_out.empty()) {
                std::ostringstream t;
                abow::write_trace_csv(t, trace);
                write_text(trace_out, t.str());
            }
            if (!snapshot_out.empty()) {
                std::ostringstream s;
                s << "step,image_id,score\n";
                for (const auto& snap : trace.snapshots)
                    for (std::size_t b = 0; b < snap.bins.size(); ++b)
                        s << snap.step << ',' << database[b].image_id << ',' << abow::format_number(snap.bins[b])
                          << '\n';
                write_text(snapshot_out, s.str());
            }
        } else if (*bench_race || *race) {
            const auto report = abow::race_simulate(mu1, mu2, race_delta, trials, seed, max_steps);
            const auto csv = race_csv(mu1, mu2, race_delta, trials, report);
            if (race_out.empty())
                std::cout << csv;
            else
                write_text(race_out, csv);
        } else if (*bench) {
            bench_in.require(bench);
            auto l = load_inputs(bench_in);
            abow::EvalConfig cfg;
            cfg.top_n = parse_top_n(bench_n);
            cfg.rules = parse_rule_list(bench_rules);
            cfg.monte_carlo_runs = runs;
            cfg.base_seed = seed;
            cfg.precision_floor = precision_floor;
            cfg.threads = threads;
            const abow::QueryEngine engine(l.index, l.vocab, bench_scoring.options(l.index, l.vocab, l.dataset));
            const auto report = abow::evaluate(engine, l.dataset, cfg);
            std::ostringstream out;
            abow::write_report_csv(out, std::span(&report, 1));
            if (bench_out.empty())
                std::cout << out.str();
            else
                write_text(bench_out, out.str());
            for (const auto& r : report.rules)
                log(LogLevel::info, abow::family_name(r.rule) + " " + abow::format_number(abow::rule_parameter(r.rule)) +
                                        ": mean fraction " + abow::format_number(r.mean_fraction_features));
        } else if (*sweep) {
            sweep_in.require(sweep);
            auto l = load_inputs(sweep_in);
            abow::EvalConfig cfg;
            cfg.top_n = parse_top_n(sweep_n);
            cfg.monte_carlo_runs = sweep_runs;
            cfg.base_seed = seed;
            cfg.precision_floor = sweep_floor;
            cfg.threads = threads;
            const auto thresholds = parse_numbers(thresholds_text);
            const abow::QueryEngine engine(l.index, l.vocab, sweep_scoring.options(l.index, l.vocab, l.dataset));
            const auto reports = abow::sweep(engine, l.dataset, family, thresholds, cfg);
            std::ostringstream out;
            abow::write_report_csv(out, reports);
            if (sweep_out.empty())
                std::cout << out.str();
            else
                write_text(sweep_out, out.str());
        } else if (*profile) {
            profile_in.require(profile);
            auto l = load_inputs(profile_in);
            const abow::QueryEngine engine(l.index, l.vocab, profile_scoring.options(l.index, l.vocab, l.dataset));
            const auto p = abow::features_needed_profile(engine, l.dataset, seed, threads);
            std::ostringstream out;
            abow::write_profile_csv(out, p);
            write_text(profile_out, out.str());
            if (!deciles_out.empty()) {
                std::ostringstream d;
                abow::write_deciles_csv(d, p);
                write_text(deciles_out, d.str());
            }
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const abow::IoError& e) {
        log(LogLevel::error, e.what());
        return 2;
    } catch (const std::exception& e) {
        log(LogLevel::error, e.what());
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) { return run(argc, argv); }
