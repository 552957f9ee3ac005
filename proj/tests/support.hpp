#pragma once

// Test-only oracles. They recompute everything from dense vectors and plain
// loops and share no code with the library beyond the data types, the seeded
// permutation and the file formats.

#include <abow/abow.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace oracle {

using abow::Dataset;
using abow::ImageRecord;
using abow::Vocabulary;

inline std::uint32_t nearest_word(const Vocabulary& v, std::span<const float> d) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < v.size(); ++w) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.dimension; ++i) {
            const double diff = static_cast<double>(d[i]) - static_cast<double>(v.centroids[w * v.dimension + i]);
            s += diff * diff;
        }
        if (s < best_d) {
            best_d = s;
            best = static_cast<std::uint32_t>(w);
        }
    }
    return best;
}

inline std::vector<std::uint32_t> counts(const Vocabulary& v, const ImageRecord& img) {
    std::vector<std::uint32_t> c(v.size(), 0);
    for (std::size_t f = 0; f < img.size(); ++f) ++c[nearest_word(v, img.descriptor(f))];
    return c;
}

inline std::vector<double> idf(const Vocabulary& v, std::span<const ImageRecord> db) {
    std::vector<double> df(v.size(), 0.0);
    for (const auto& img : db) {
        const auto c = counts(v, img);
        for (std::size_t w = 0; w < c.size(); ++w)
            if (c[w] > 0) df[w] += 1.0;
    }
    std::vector<double> out(v.size());
    for (std::size_t w = 0; w < out.size(); ++w)
        out[w] = std::log(static_cast<double>(db.size()) / std::max(1.0, df[w]));
    return out;
}

/// Dense tf-idf vector of a database image under the vocabulary's idf.
inline std::vector<double> tfidf(const Vocabulary& v, const ImageRecord& img) {
    const auto c = counts(v, img);
    std::vector<double> x(v.size(), 0.0);
    for (std::size_t w = 0; w < c.size(); ++w)
        x[w] = static_cast<double>(c[w]) / static_cast<double>(img.size()) * v.idf[w];
    return x;
}

inline double norm(const std::vector<double>& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    return std::sqrt(s);
}

/// Dense tf-idf vectors and norms of every database image, computed once.
struct DatabaseModel {
    std::vector<std::vector<double>> weight;
    std::vector<double> norms;
};

inline DatabaseModel model(const Vocabulary& v, std::span<const ImageRecord> db) {
    DatabaseModel m;
    for (const auto& img : db) {
        m.weight.push_back(tfidf(v, img));
        m.norms.push_back(norm(m.weight.back()));
    }
    return m;
}

/// Brute-force tf-idf cosine ranking of every database slot, best first, ties by slot.
struct Ranking {
    std::vector<std::uint32_t> order;
    std::vector<double> cosine;
};

inline Ranking cosine_ranking(const Vocabulary& v, const DatabaseModel& m, const ImageRecord& q) {
    const auto qc = counts(v, q);
    std::vector<double> qx(v.size());
    for (std::size_t w = 0; w < qx.size(); ++w) qx[w] = static_cast<double>(qc[w]) * v.idf[w];
    const double qn = norm(qx);
    Ranking r;
    r.cosine.resize(m.weight.size());
    for (std::size_t j = 0; j < m.weight.size(); ++j) {
        double dot = 0.0;
        for (std::size_t w = 0; w < qx.size(); ++w) dot += qx[w] * m.weight[j][w];
        r.cosine[j] = (qn > 0.0 && m.norms[j] > 0.0) ? dot / (qn * m.norms[j]) : 0.0;
    }
    r.order.resize(m.weight.size());
    std::iota(r.order.begin(), r.order.end(), 0u);
    std::stable_sort(r.order.begin(), r.order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return r.cosine[a] > r.cosine[b]; });
    return r;
}

inline Ranking cosine_ranking(const Vocabulary& v, std::span<const ImageRecord> db, const ImageRecord& q) {
    return cosine_ranking(v, model(v, db), q);
}

/// Feature order used by the query loop for a given seed.
inline std::vector<std::uint32_t> permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    abow::Rng rng(seed);
    rng.shuffle(std::span(order));
    return order;
}

/// Replays the cosine-mode histogram feature by feature with a dense vote
/// table and a full argmax scan after every step.
struct Replay {
    std::vector<std::uint32_t> argmax;  // after each feature
    std::vector<double> final_bins;
    /// Shortest prefix after which the argmax equals the final one for good.
    std::size_t min_features = 0;
};

inline Replay replay(const Vocabulary& v, const DatabaseModel& m, const ImageRecord& q, std::uint64_t seed) {
    Replay r;
    std::vector<double> bins(m.weight.size(), 0.0);
    for (auto f : permutation(q.size(), seed)) {
        const auto w = nearest_word(v, q.descriptor(f));
        for (std::size_t j = 0; j < bins.size(); ++j)
            if (m.weight[j][w] > 0.0 && m.norms[j] > 0.0) bins[j] += v.idf[w] * m.weight[j][w] / m.norms[j];
        std::uint32_t best = 0;
        for (std::uint32_t j = 1; j < bins.size(); ++j)
            if (bins[j] > bins[best]) best = j;
        r.argmax.push_back(best);
    }
    r.final_bins = bins;
    r.min_features = r.argmax.size();
    while (r.min_features > 1 && r.argmax[r.min_features - 2] == r.argmax.back()) --r.min_features;
    return r;
}

inline Replay replay(const Vocabulary& v, std::span<const ImageRecord> db, const ImageRecord& q, std::uint64_t seed) {
    return replay(v, model(v, db), q, seed);
}

/// Sum of squared distances to the nearest of `centers` (any point count, double precision).
inline double distortion(std::span<const float> points, std::size_t dim, std::span<const double> centers) {
    const std::size_t n = points.size() / dim;
    const std::size_t k = centers.size() / dim;
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double d = points[p * dim + i] - centers[c * dim + i];
                s += d * d;
            }
            best = std::min(best, s);
        }
        total += best;
    }
    return total;
}

/// Optimal 2-means distortion for 2-D points: every optimal 2-partition is
/// separated by a line, and every such split is realised by a line through
/// two input points nudged by an infinitesimal rotation, so enumerating pairs
/// and both sides (plus the pair's own assignments) covers all candidates.
inline double best_two_means_2d(std::span<const float> pts) {
    const std::size_t n = pts.size() / 2;
    auto cost = [&](const std::vector<unsigned char>& side) {
        double sx[2] = {0, 0}, sy[2] = {0, 0}, cnt[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            sx[side[i]] += pts[2 * i];
            sy[side[i]] += pts[2 * i + 1];
            cnt[side[i]] += 1;
        }
        if (cnt[0] == 0 || cnt[1] == 0) return std::numeric_limits<double>::infinity();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const int s = side[i];
            const double dx = pts[2 * i] - sx[s] / cnt[s];
            const double dy = pts[2 * i + 1] - sy[s] / cnt[s];
            total += dx * dx + dy * dy;
        }
        return total;
    };
    double best = std::numeric_limits<double>::infinity();
    std::vector<unsigned char> side(n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const double ax = pts[2 * a], ay = pts[2 * a + 1];
            const double nx = -(pts[2 * b + 1] - ay), ny = pts[2 * b] - ax;
            std::vector<std::size_t> on_line;
            for (std::size_t i = 0; i < n; ++i) {
                const double s = (pts[2 * i] - ax) * nx + (pts[2 * i + 1] - ay) * ny;
                side[i] = s > 0 ? 1 : 0;
                if (s == 0) on_line.push_back(i);
            }
            // Points on the line: a collinear run split at every position.
            std::sort(on_line.begin(), on_line.end(), [&](std::size_t i, std::size_t j) {
                const double pi = (pts[2 * i] - ax) * ny - (pts[2 * i + 1] - ay) * nx;
                const double pj = (pts[2 * j] - ax) * ny - (pts[2 * j + 1] - ay) * nx;
                return pi < pj;
            });
            for (std::size_t cut = 0; cut <= on_line.size(); ++cut) {
                for (int flip = 0; flip < 2; ++flip) {
                    for (std::size_t k = 0; k < on_line.size(); ++k)
                        side[on_line[k]] = static_cast<unsigned char>((k < cut) != (flip == 1));
                    best = std::min(best, cost(side));
                }
            }
        }
    }
    return best;
}

} // namespace oracle

namespace fixture {

struct Pipeline {
    abow::Dataset dataset;
    abow::SynthPlan plan;
    abow::Vocabulary vocab;
    abow::InvertedIndex index;
};

inline Pipeline make_pipeline(const abow::SynthConfig& cfg, std::uint64_t seed, std::size_t k, unsigned threads = 1) {
    auto synth = abow::synthesize_with_plan(cfg, seed);
    abow::KMeansConfig kc;
    kc.k = k;
    kc.seed = seed;
    kc.threads = threads;
    auto trained = abow::train(synth.dataset.database(), kc);
    auto vocab = abow::compute_idf(std::move(trained.vocabulary), synth.dataset.database());
    auto index = abow::build_index(vocab, synth.dataset.database(), threads);
    return {std::move(synth.dataset), std::move(synth.plan), std::move(vocab), std::move(index)};
}

/// Small configuration used by most unit tests.
inline abow::SynthConfig small_config() {
    abow::SynthConfig cfg;
    cfg.num_images = 60;
    cfg.features_per_image = 40;
    cfg.dimension = 8;
    cfg.num_clusters = 64;
    return cfg;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("abow_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace fixture
