#pragma once

// Visual vocabulary: k-means training, exact nearest-word quantization and
// inverse document frequencies.

#include <abow/descriptors.hpp>
#include <abow/detail/binary_io.hpp>
#include <abow/detail/parallel.hpp>
#include <abow/errors.hpp>
#include <abow/random.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace abow {

struct Vocabulary {
    std::size_t dimension = 0;
    /// K x dimension, row-major.
    std::vector<float> centroids;
    /// Natural-log idf per word; empty until compute_idf has run.
    std::vector<double> idf;
    /// Number of database images the idf was computed on (0 while unset).
    std::uint32_t trained_on = 0;

    std::size_t size() const noexcept { return dimension == 0 ? 0 : centroids.size() / dimension; }
    bool has_idf() const noexcept { return !idf.empty(); }
    Descriptor centroid(std::size_t w) const { return {centroids.data() + w * dimension, dimension}; }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

struct KMeansConfig {
    std::size_t k = 0;
    std::size_t max_iterations = 100;
    /// Stop once every centroid moves less than this, relative to its previous norm.
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct TrainResult {
    Vocabulary vocabulary;
    /// Sum of squared distances to the nearest centroid: entry 0 for the seeds,
    /// then one entry after every Lloyd update.
    std::vector<double> distortion_history;
    std::size_t iterations = 0;
    bool converged = false;
    /// k minus the number of distinct centroids; non-zero only for degenerate input.
    std::size_t duplicate_centroids = 0;
};

struct Quantization {
    std::uint32_t word = 0;
    double distance = 0.0;
};

/// Exact linear scan; ties go to the lowest word id.
inline Quantization quantize(const Vocabulary& v, Descriptor d) {
    if (d.size() != v.dimension) throw DimensionMismatch(v.dimension, d.size());
    const auto k = v.size();
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_word = 0;
    const float* c = v.centroids.data();
    for (std::size_t w = 0; w < k; ++w, c += v.dimension) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.dimension; ++i) {
            const double diff = double{d[i]} - double{c[i]};
            s += diff * diff;
        }
        if (s < best) {
            best = s;
            best_word = static_cast<std::uint32_t>(w);
        }
    }
    return {best_word, std::sqrt(best)};
}

inline std::vector<std::uint32_t> quantize_image(const Vocabulary& v, const ImageRecord& img) {
    std::vector<std::uint32_t> words(img.size());
    for (std::size_t i = 0; i < words.size(); ++i) words[i] = quantize(v, img.descriptor(i)).word;
    return words;
}

namespace detail {

inline std::uint64_t descriptor_hash(std::span<const float> d) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (float x : d) {
        h ^= std::bit_cast<std::uint32_t>(x);
        h *= 0x100000001b3ULL;
    }
    return mix64(h);
}

// Orders rows by (hash, bit pattern) so training sees the same sequence for any
// permutation of its input.
inline std::vector<std::size_t> canonical_order(std::span<const float> data, std::size_t dim) {
    const auto n = data.size() / dim;
    std::vector<std::uint64_t> hashes(n);
    for (std::size_t i = 0; i < n; ++i) hashes[i] = descriptor_hash(data.subspan(i * dim, dim));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (hashes[a] != hashes[b]) return hashes[a] < hashes[b];
        for (std::size_t i = 0; i < dim; ++i) {
            const auto x = std::bit_cast<std::uint32_t>(data[a * dim + i]);
            const auto y = std::bit_cast<std::uint32_t>(data[b * dim + i]);
            if (x != y) return x < y;
        }
        return false;
    });
    return order;
}

inline double squared_distance(const float* x, const double* c, std::size_t dim) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double diff = double{x[i]} - c[i];
        s += diff * diff;
    }
    return s;
}

} // namespace detail

/// Lloyd's algorithm with k-means++ seeding on `descriptors` (row-major, `dimension` wide).
inline TrainResult train(std::span<const float> descriptors, std::size_t dimension, const KMeansConfig& cfg) {
    if (dimension == 0) throw InvalidConfig("dimension must be positive");
    if (descriptors.empty()) throw InvalidConfig("no descriptors to train on");
    if (descriptors.size() % dimension != 0) throw DimensionMismatch(dimension, descriptors.size() % dimension);
    const std::size_t n = descriptors.size() / dimension;
    if (cfg.k == 0) throw InvalidConfig("k must be positive");
    if (cfg.k > n) throw InvalidConfig("k exceeds the number of descriptors");
    if (cfg.max_iterations == 0) throw InvalidConfig("max_iterations must be positive");
    if (!(cfg.tolerance >= 0.0)) throw InvalidConfig("tolerance must be non-negative");
    for (float x : descriptors)
        if (!std::isfinite(x)) throw InvalidConfig("non-finite descriptor value");

    const auto order = detail::canonical_order(descriptors, dimension);
    std::vector<float> data(descriptors.size());
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(descriptors.begin() + static_cast<std::ptrdiff_t>(order[i] * dimension), dimension,
                    data.begin() + static_cast<std::ptrdiff_t>(i * dimension));
    auto row = [&](std::size_t i) { return data.data() + i * dimension; };

    const std::size_t k = cfg.k;
    std::vector<double> centers(k * dimension);
    auto center = [&](std::size_t c) { return centers.data() + c * dimension; };
    auto set_center = [&](std::size_t c, std::size_t point) {
        std::copy_n(row(point), dimension, center(c));
    };

    // k-means++ seeding.
    Rng rng(cfg.seed);
    set_center(0, static_cast<std::size_t>(rng.below(n)));
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = detail::squared_distance(row(i), center(0), dimension);
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = n - 1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double cum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (cum > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (d2[pick] == 0.0) {
                // Rounding pushed the target past the last positive weight.
                for (std::size_t i = n; i-- > 0;)
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
            }
        } else {
            pick = static_cast<std::size_t>(rng.below(n));
        }
        set_center(c, pick);
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], detail::squared_distance(row(i), center(c), dimension));
    }

    std::vector<std::uint32_t> assign(n);
    std::vector<double> dist(n);
    auto assign_all = [&] {
        detail::parallel_for(n, cfg.threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                double best = std::numeric_limits<double>::infinity();
                std::uint32_t best_c = 0;
                for (std::size_t c = 0; c < k; ++c) {
                    const double s = detail::squared_distance(row(i), center(c), dimension);
                    if (s < best) {
                        best = s;
                        best_c = static_cast<std::uint32_t>(c);
                    }
                }
                assign[i] = best_c;
                dist[i] = best;
            }
        });
        double total = 0.0;
        for (double x : dist) total += x;
        return total;
    };

    TrainResult result;
    result.distortion_history.push_back(assign_all());

    std::vector<double> sums(k * dimension);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = assign[i];
            ++counts[c];
            double* s = sums.data() + c * dimension;
            const float* x = row(i);
            for (std::size_t j = 0; j < dimension; ++j) s[j] += x[j];
        }

        double movement = 0.0;
        std::vector<double> old(centers);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t j = 0; j < dimension; ++j)
                center(c)[j] = sums[c * dimension + j] / static_cast<double>(counts[c]);
        }
        // Empty clusters take the point currently farthest from its centroid.
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = 0;
            for (std::size_t i = 1; i < n; ++i)
                if (dist[i] > dist[far]) far = i;
            if (dist[far] <= 0.0) continue;
            set_center(c, far);
            dist[far] = 0.0;
        }
        for (std::size_t c = 0; c < k; ++c) {
            double moved = 0.0;
            double norm = 0.0;
            for (std::size_t j = 0; j < dimension; ++j) {
                const double o = old[c * dimension + j];
                moved += (center(c)[j] - o) * (center(c)[j] - o);
                norm += o * o;
            }
            moved = std::sqrt(moved);
            norm = std::sqrt(norm);
            movement = std::max(movement, norm > 0.0 ? moved / norm : moved);
        }

        result.distortion_history.push_back(assign_all());
        result.iterations = it;
        if (movement < cfg.tolerance) {
            result.converged = true;
            break;
        }
    }

    auto& vocab = result.vocabulary;
    vocab.dimension = dimension;
    vocab.centroids.resize(k * dimension);
    for (std::size_t i = 0; i < centers.size(); ++i) vocab.centroids[i] = static_cast<float>(centers[i]);

    std::vector<std::size_t> rows(k);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    auto row_less = [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(vocab.centroid(a).begin(), vocab.centroid(a).end(),
                                            vocab.centroid(b).begin(), vocab.centroid(b).end());
    };
    std::sort(rows.begin(), rows.end(), row_less);
    std::size_t distinct = k == 0 ? 0 : 1;
    for (std::size_t i = 1; i < k; ++i)
        if (row_less(rows[i - 1], rows[i])) ++distinct;
    result.duplicate_centroids = k - distinct;
    return result;
}

/// Trains on every descriptor of `images`, in image order.
inline TrainResult train(std::span<const ImageRecord> images, const KMeansConfig& cfg) {
    if (images.empty()) throw InvalidConfig("no images to train on");
    const auto dim = images.front().dimension;
    std::vector<float> all;
    for (const auto& img : images) {
        if (img.dimension != dim) throw DimensionMismatch(dim, img.dimension);
        all.insert(all.end(), img.values.begin(), img.values.end());
    }
    return train(all, dim, cfg);
}

/// idf[w] = ln(N / max(1, n_w)), n_w = number of database images containing word w.
inline Vocabulary compute_idf(Vocabulary v, std::span<const ImageRecord> database) {
    if (database.empty()) throw InvalidConfig("idf needs a non-empty database");
    const auto k = v.size();
    std::vector<std::uint32_t> doc_freq(k, 0);
    std::vector<std::uint32_t> last_seen(k, std::numeric_limits<std::uint32_t>::max());
    for (std::size_t i = 0; i < database.size(); ++i) {
        const auto& img = database[i];
        for (std::size_t f = 0; f < img.size(); ++f) {
            const auto w = quantize(v, img.descriptor(f)).word;
            if (last_seen[w] != i) {
                last_seen[w] = static_cast<std::uint32_t>(i);
                ++doc_freq[w];
            }
        }
    }
    const double n = static_cast<double>(database.size());
    v.idf.resize(k);
    for (std::size_t w = 0; w < k; ++w) v.idf[w] = std::log(n / static_cast<double>(std::max<std::uint32_t>(1, doc_freq[w])));
    v.trained_on = static_cast<std::uint32_t>(database.size());
    return v;
}

// ---------------------------------------------------------------------------
// "BOWV", u16 version, u32 dimension, u32 K, u32 N_im, K*D f32 centroids, K f32 idf.

inline constexpr std::uint16_t kVocabularyVersion = 1;

inline std::vector<std::uint8_t> encode_vocabulary(const Vocabulary& v) {
    detail::ByteWriter w;
    w.magic("BOWV");
    w.u16(kVocabularyVersion);
    w.u32(static_cast<std::uint32_t>(v.dimension));
    w.u32(static_cast<std::uint32_t>(v.size()));
    w.u32(v.trained_on);
    for (float c : v.centroids) w.f32(c);
    for (std::size_t i = 0; i < v.size(); ++i) w.f32(v.has_idf() ? static_cast<float>(v.idf[i]) : 0.0f);
    return w.bytes();
}

inline Vocabulary decode_vocabulary(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic("BOWV");
    const auto version_at = r.offset();
    if (r.u16("version") != kVocabularyVersion) throw FormatError(version_at, "unsupported version");
    Vocabulary v;
    const auto dim_at = r.offset();
    v.dimension = r.u32("dimension");
    const auto k = r.u32("vocabulary size");
    if (v.dimension == 0 || k == 0) throw FormatError(dim_at, "dimension and vocabulary size must be positive");
    v.trained_on = r.u32("image count");
    r.need(std::uint64_t{k} * v.dimension * 4 + std::uint64_t{k} * 4, "vocabulary body");
    v.centroids.resize(std::size_t{k} * v.dimension);
    for (auto& c : v.centroids) c = r.f32("centroid value");
    std::vector<double> idf(k);
    for (auto& x : idf) {
        const auto at = r.offset();
        x = r.f32("idf value");
        if (x < 0.0) throw FormatError(at, "negative idf");
    }
    if (v.trained_on > 0) v.idf = std::move(idf);
    if (!r.at_end()) throw FormatError(r.offset(), "trailing bytes after vocabulary");
    return v;
}

inline void save_vocabulary(const Vocabulary& v, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_vocabulary(v));
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
    return decode_vocabulary(detail::read_file_bytes(path));
}

} // namespace abow
