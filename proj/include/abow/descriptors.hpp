#pragma once

// Descriptor datasets: the binary container, the ground-truth sidecar and the
// synthetic generator with planted easy/hard queries.

#include <abow/detail/binary_io.hpp>
#include <abow/errors.hpp>
#include <abow/random.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace abow {

/// One local feature, viewed in place inside its image record.
using Descriptor = std::span<const float>;

/// The descriptors of one image, stored row-major (count x dimension).
struct ImageRecord {
    std::uint32_t image_id = 0;
    std::size_t dimension = 0;
    std::vector<float> values;

    std::size_t size() const noexcept { return dimension == 0 ? 0 : values.size() / dimension; }
    bool empty() const noexcept { return values.empty(); }

    Descriptor descriptor(std::size_t i) const { return {values.data() + i * dimension, dimension}; }

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// query image id -> ids of its correct matches (the set may be empty).
using GroundTruth = std::map<std::uint32_t, std::set<std::uint32_t>>;

/// Images split positionally: the first ceil(N/2) form the database, the rest are queries.
struct Dataset {
    std::size_t dimension = 0;
    std::vector<ImageRecord> images;
    GroundTruth ground_truth;

    std::size_t database_size() const noexcept { return images.size() - images.size() / 2; }
    std::span<const ImageRecord> database() const { return std::span(images).first(database_size()); }
    std::span<const ImageRecord> queries() const { return std::span(images).subspan(database_size()); }

    const ImageRecord* find(std::uint32_t image_id) const {
        auto it = std::find_if(images.begin(), images.end(),
                               [&](const ImageRecord& r) { return r.image_id == image_id; });
        return it == images.end() ? nullptr : &*it;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws InvalidConfig / DimensionMismatch if any dataset invariant is broken.
inline void validate(const Dataset& ds) {
    if (ds.dimension == 0) throw InvalidConfig("dataset dimension must be positive");
    std::set<std::uint32_t> ids;
    for (const auto& img : ds.images) {
        if (img.dimension != ds.dimension) throw DimensionMismatch(ds.dimension, img.dimension);
        if (img.values.size() % ds.dimension != 0)
            throw DimensionMismatch(ds.dimension, img.values.size() % ds.dimension);
        if (img.empty()) throw InvalidConfig("image " + std::to_string(img.image_id) + " has no descriptors");
        if (!std::all_of(img.values.begin(), img.values.end(), [](float v) { return std::isfinite(v); }))
            throw InvalidConfig("image " + std::to_string(img.image_id) + " has a non-finite descriptor value");
        if (!ids.insert(img.image_id).second)
            throw InvalidConfig("duplicate image id " + std::to_string(img.image_id));
    }
    for (const auto& [query, matches] : ds.ground_truth) {
        if (!ids.contains(query)) throw InvalidConfig("ground truth names unknown query " + std::to_string(query));
        for (auto m : matches)
            if (!ids.contains(m)) throw InvalidConfig("ground truth names unknown match " + std::to_string(m));
    }
}

inline std::filesystem::path ground_truth_path(const std::filesystem::path& dataset_path) {
    auto p = dataset_path;
    p += ".gt.csv";
    return p;
}

// ---------------------------------------------------------------------------
// Ground truth sidecar: header `query_id,match_id`, one row per pair. A row
// with an empty match column declares a query that has no correct match.

inline void write_ground_truth(std::ostream& out, const GroundTruth& gt) {
    out << "query_id,match_id\n";
    for (const auto& [query, matches] : gt) {
        if (matches.empty()) out << query << ",\n";
        for (auto m : matches) out << query << ',' << m << '\n';
    }
}

inline GroundTruth parse_ground_truth(std::string_view text) {
    GroundTruth gt;
    std::size_t pos = 0;
    bool header = true;
    auto parse_id = [](std::string_view field, std::uint64_t offset) {
        std::uint32_t v = 0;
        auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc{} || end != field.data() + field.size())
            throw FormatError(offset, "bad image id '" + std::string(field) + "'");
        return v;
    };
    while (pos < text.size()) {
        const auto line_start = pos;
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (header) {
            if (line != "query_id,match_id") throw FormatError(line_start, "expected header 'query_id,match_id'");
            header = false;
            continue;
        }
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string_view::npos) throw FormatError(line_start, "expected two columns");
        const auto query = parse_id(line.substr(0, comma), line_start);
        auto& matches = gt[query];
        const auto match_field = line.substr(comma + 1);
        if (!match_field.empty()) matches.insert(parse_id(match_field, line_start + comma + 1));
    }
    if (header) throw FormatError(0, "empty ground truth file");
    return gt;
}

inline GroundTruth load_ground_truth(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    return parse_ground_truth(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
    std::ostringstream out;
    write_ground_truth(out, gt);
    const auto s = out.str();
    detail::write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// ---------------------------------------------------------------------------
// Binary container: "BOWD", u16 version, u32 dimension, u32 image count, then
// per image u32 id, u32 descriptor count, count*dimension f32.

inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
    detail::ByteWriter w;
    w.magic("BOWD");
    w.u16(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(ds.dimension));
    w.u32(static_cast<std::uint32_t>(ds.images.size()));
    for (const auto& img : ds.images) {
        w.u32(img.image_id);
        w.u32(static_cast<std::uint32_t>(img.size()));
        for (float v : img.values) w.f32(v);
    }
    return w.bytes();
}

/// Decodes the descriptor container; ground truth is left empty.
inline Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic("BOWD");
    const auto version_at = r.offset();
    if (r.u16("version") != kDatasetVersion) throw FormatError(version_at, "unsupported version");
    const auto dim_at = r.offset();
    Dataset ds;
    ds.dimension = r.u32("dimension");
    if (ds.dimension == 0) throw FormatError(dim_at, "dimension must be positive");
    const auto count = r.u32("image count");
    std::set<std::uint32_t> seen;
    ds.images.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto rec_at = r.offset();
        ImageRecord img;
        img.image_id = r.u32("image id");
        img.dimension = ds.dimension;
        const auto n = r.u32("descriptor count");
        if (n == 0) throw FormatError(rec_at, "image " + std::to_string(img.image_id) + " has no descriptors");
        if (!seen.insert(img.image_id).second)
            throw FormatError(rec_at, "duplicate image id " + std::to_string(img.image_id));
        const std::uint64_t expected = std::uint64_t{n} * ds.dimension * 4;
        if (i + 1 == count && r.remaining() != expected) {
            // The last record's length is fully determined by the file size, so a
            // record of the wrong width is recognisable as such.
            const auto per_descriptor = std::uint64_t{n} * 4;
            if (r.remaining() % per_descriptor == 0)
                throw DimensionMismatch(ds.dimension, static_cast<std::size_t>(r.remaining() / per_descriptor));
        }
        r.need(expected, "descriptor block");
        img.values.resize(std::size_t{n} * ds.dimension);
        for (auto& v : img.values) v = r.f32("descriptor value");
        ds.images.push_back(std::move(img));
    }
    if (!r.at_end()) throw FormatError(r.offset(), "trailing bytes after last image");
    return ds;
}

/// Loads `path` and, when present, its `<path>.gt.csv` ground-truth sidecar.
inline Dataset load_dataset(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    auto ds = decode_dataset(bytes);
    const auto gt_path = ground_truth_path(path);
    if (std::filesystem::exists(gt_path)) ds.ground_truth = load_ground_truth(gt_path);
    validate(ds);
    return ds;
}

/// Writes the container and its ground-truth sidecar (always written, possibly header only).
inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    validate(ds);
    detail::write_file_bytes(path, encode_dataset(ds));
    save_ground_truth(ds.ground_truth, ground_truth_path(path));
}

// ---------------------------------------------------------------------------
// Synthetic generator.
//
// Cluster centres are uniform in the unit cube. Every database image draws its
// features from `clusters_per_image` centres. A query is planted on one
// database image: an easy query takes most of its clusters from that image, a
// hard query takes a minority from it and spreads the rest over
// `confuser_count` other database images.

struct SynthConfig {
    std::size_t num_images = 200;
    std::size_t features_per_image = 60;
    std::size_t dimension = 16;
    std::size_t num_clusters = 128;
    double hard_fraction = 0.5;
    std::size_t confuser_count = 5;
    /// Per-coordinate standard deviation as a fraction of the mean nearest-centre distance.
    double sigma = 0.05;
    std::size_t clusters_per_image = 8;
    double easy_match_share = 0.85;
    double hard_match_share = 0.375;
};

struct PlantedQuery {
    std::uint32_t query_id = 0;
    std::uint32_t match_id = 0;
    bool hard = false;
    std::vector<std::uint32_t> confusers;
    std::vector<std::uint32_t> clusters;
};

/// Generator bookkeeping, kept alongside the dataset for tests and diagnostics.
struct SynthPlan {
    std::vector<std::vector<float>> centers;
    std::vector<std::vector<std::uint32_t>> database_clusters;
    std::vector<PlantedQuery> queries;
    double feature_sigma = 0.0;

    /// Number of database images whose cluster set intersects the query's.
    std::size_t overlapping_images(const PlantedQuery& q) const {
        std::size_t n = 0;
        for (const auto& clusters : database_clusters) {
            const bool hit = std::any_of(clusters.begin(), clusters.end(), [&](std::uint32_t c) {
                return std::find(q.clusters.begin(), q.clusters.end(), c) != q.clusters.end();
            });
            n += hit ? 1 : 0;
        }
        return n;
    }
};

struct SynthOutput {
    Dataset dataset;
    SynthPlan plan;
};

inline void validate(const SynthConfig& cfg) {
    if (cfg.num_images < 2) throw InvalidConfig("num_images must be at least 2");
    if (cfg.features_per_image < 1) throw InvalidConfig("features_per_image must be at least 1");
    if (cfg.dimension < 1) throw InvalidConfig("dimension must be at least 1");
    if (!(cfg.hard_fraction >= 0.0 && cfg.hard_fraction <= 1.0))
        throw InvalidConfig("hard_fraction must lie in [0, 1]");
    if (!(cfg.sigma >= 0.0) || !std::isfinite(cfg.sigma)) throw InvalidConfig("sigma must be finite and non-negative");
    if (cfg.clusters_per_image < 1) throw InvalidConfig("clusters_per_image must be at least 1");
    if (cfg.num_clusters < cfg.clusters_per_image)
        throw InvalidConfig("num_clusters must be at least clusters_per_image");
    if (!(cfg.easy_match_share > 0.0 && cfg.easy_match_share <= 1.0))
        throw InvalidConfig("easy_match_share must lie in (0, 1]");
    if (!(cfg.hard_match_share > 0.0 && cfg.hard_match_share <= 1.0))
        throw InvalidConfig("hard_match_share must lie in (0, 1]");
    const auto db = cfg.num_images - cfg.num_images / 2;
    if (cfg.hard_fraction > 0.0 && cfg.confuser_count + 1 > db)
        throw InvalidConfig("confuser_count exceeds the number of other database images");
}

namespace detail {

// k distinct values from [0, n) in draw order (partial Fisher-Yates).
inline std::vector<std::uint32_t> sample_distinct(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::uint32_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0u);
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

inline void append_features(Rng& rng, const SynthPlan& plan, std::span<const std::uint32_t> clusters,
                            std::size_t count, ImageRecord& img) {
    const auto dim = img.dimension;
    img.values.reserve(count * dim);
    for (std::size_t f = 0; f < count; ++f) {
        const auto& c = plan.centers[clusters[rng.below(clusters.size())]];
        for (std::size_t d = 0; d < dim; ++d)
            img.values.push_back(static_cast<float>(c[d] + plan.feature_sigma * rng.normal()));
    }
}

} // namespace detail

inline SynthOutput synthesize_with_plan(const SynthConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Rng rng(seed);
    SynthOutput out;
    auto& plan = out.plan;
    auto& ds = out.dataset;
    ds.dimension = cfg.dimension;

    plan.centers.assign(cfg.num_clusters, std::vector<float>(cfg.dimension));
    for (auto& c : plan.centers)
        for (auto& x : c) x = static_cast<float>(rng.uniform());

    double nn_sum = 0.0;
    for (std::size_t i = 0; i < cfg.num_clusters; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cfg.num_clusters; ++j) {
            if (i == j) continue;
            double s = 0.0;
            for (std::size_t d = 0; d < cfg.dimension; ++d) {
                const double diff = double{plan.centers[i][d]} - plan.centers[j][d];
                s += diff * diff;
            }
            best = std::min(best, s);
        }
        nn_sum += std::isfinite(best) ? std::sqrt(best) : 1.0;
    }
    plan.feature_sigma = cfg.sigma * nn_sum / static_cast<double>(cfg.num_clusters);

    const auto num_db = cfg.num_images - cfg.num_images / 2;
    const auto num_queries = cfg.num_images / 2;
    const auto S = cfg.clusters_per_image;

    for (std::size_t i = 0; i < num_db; ++i) {
        plan.database_clusters.push_back(detail::sample_distinct(rng, cfg.num_clusters, S));
        ImageRecord img;
        img.image_id = static_cast<std::uint32_t>(i);
        img.dimension = cfg.dimension;
        detail::append_features(rng, plan, plan.database_clusters.back(), cfg.features_per_image, img);
        ds.images.push_back(std::move(img));
    }

    const auto matches = detail::sample_distinct(rng, num_db, num_queries);
    const auto num_hard = static_cast<std::size_t>(std::llround(cfg.hard_fraction * static_cast<double>(num_queries)));
    std::vector<bool> hard(num_queries, false);
    for (auto q : detail::sample_distinct(rng, num_queries, num_hard)) hard[q] = true;

    for (std::size_t q = 0; q < num_queries; ++q) {
        PlantedQuery pq;
        pq.query_id = static_cast<std::uint32_t>(num_db + q);
        pq.match_id = matches[q];
        pq.hard = hard[q];
        const auto& match_clusters = plan.database_clusters[pq.match_id];
        auto has = [&](std::uint32_t c) {
            return std::find(pq.clusters.begin(), pq.clusters.end(), c) != pq.clusters.end();
        };

        const double share = pq.hard ? cfg.hard_match_share : cfg.easy_match_share;
        const auto from_match = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::ceil(share * static_cast<double>(S) - 1e-9)), 1, S);
        for (auto k : detail::sample_distinct(rng, S, from_match)) pq.clusters.push_back(match_clusters[k]);

        if (pq.hard) {
            std::vector<std::uint32_t> others;
            for (std::uint32_t i = 0; i < num_db; ++i)
                if (i != pq.match_id) others.push_back(i);
            for (auto k : detail::sample_distinct(rng, others.size(), cfg.confuser_count))
                pq.confusers.push_back(others[k]);
            const auto slots = std::max(S - from_match, cfg.confuser_count);
            for (std::size_t s = 0; s < slots && !pq.confusers.empty(); ++s) {
                const auto& cc = plan.database_clusters[pq.confusers[s % pq.confusers.size()]];
                const auto c = cc[rng.below(cc.size())];
                if (!has(c)) pq.clusters.push_back(c);
            }
        } else {
            const auto noise = std::min(S - from_match, cfg.num_clusters - S);
            for (std::size_t added = 0; added < noise;) {
                const auto c = static_cast<std::uint32_t>(rng.below(cfg.num_clusters));
                if (has(c) || std::find(match_clusters.begin(), match_clusters.end(), c) != match_clusters.end())
                    continue;
                pq.clusters.push_back(c);
                ++added;
            }
        }

        ImageRecord img;
        img.image_id = pq.query_id;
        img.dimension = cfg.dimension;
        detail::append_features(rng, plan, pq.clusters, cfg.features_per_image, img);
        ds.images.push_back(std::move(img));
        ds.ground_truth[pq.query_id] = {pq.match_id};
        plan.queries.push_back(std::move(pq));
    }
    return out;
}

inline Dataset synthesize(const SynthConfig& cfg, std::uint64_t seed) {
    return synthesize_with_plan(cfg, seed).dataset;
}

} // namespace abow
