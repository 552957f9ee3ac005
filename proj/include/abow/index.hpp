#pragma once

// Inverted index over the database images. Postings and norms refer to
// database slots: slot i is the i-th database image, which is also histogram bin i.

#include <abow/descriptors.hpp>
#include <abow/detail/binary_io.hpp>
#include <abow/detail/parallel.hpp>
#include <abow/errors.hpp>
#include <abow/vocabulary.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace abow {

struct Posting {
    std::uint32_t image_id = 0;
    /// tf(w, image) * idf(w), always > 0.
    double weight = 0.0;

    friend bool operator==(const Posting&, const Posting&) = default;
};

struct InvertedIndex {
    std::vector<std::vector<Posting>> postings;
    /// L2 norm of each image's tf-idf vector (0 only if every word has idf 0).
    std::vector<double> image_norms;
    std::vector<std::uint32_t> image_word_counts;
    std::uint32_t num_images = 0;
    /// Mean quantization distance over the database; 0 when unknown (e.g. after loading).
    double mean_quantization_distance = 0.0;

    std::size_t vocabulary_size() const noexcept { return postings.size(); }

    friend bool operator==(const InvertedIndex&, const InvertedIndex&) = default;
};

inline InvertedIndex build_index(const Vocabulary& v, std::span<const ImageRecord> database, unsigned threads = 1) {
    if (!v.has_idf()) throw InvalidConfig("vocabulary idf has not been computed");
    if (database.empty()) throw InvalidConfig("cannot index an empty database");
    for (const auto& img : database) {
        if (img.dimension != v.dimension) throw DimensionMismatch(v.dimension, img.dimension);
        if (img.empty()) throw InvalidConfig("database image " + std::to_string(img.image_id) + " has no descriptors");
    }

    const auto n = database.size();
    std::vector<std::vector<Quantization>> quantized(n);
    detail::parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& img = database[i];
            quantized[i].resize(img.size());
            for (std::size_t f = 0; f < img.size(); ++f) quantized[i][f] = quantize(v, img.descriptor(f));
        }
    });

    InvertedIndex ix;
    const auto k = v.size();
    ix.postings.resize(k);
    ix.image_norms.assign(n, 0.0);
    ix.image_word_counts.resize(n);
    ix.num_images = static_cast<std::uint32_t>(n);

    std::vector<std::uint32_t> counts(k, 0);
    std::vector<std::uint32_t> touched;
    double distance_sum = 0.0;
    std::size_t distance_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        touched.clear();
        for (const auto& q : quantized[i]) {
            if (counts[q.word]++ == 0) touched.push_back(q.word);
            distance_sum += q.distance;
            ++distance_count;
        }
        std::sort(touched.begin(), touched.end());
        const double total = static_cast<double>(quantized[i].size());
        double sq = 0.0;
        for (auto w : touched) {
            const double weight = (static_cast<double>(counts[w]) / total) * v.idf[w];
            counts[w] = 0;
            if (weight <= 0.0) continue;
            ix.postings[w].push_back({static_cast<std::uint32_t>(i), weight});
            sq += weight * weight;
        }
        ix.image_norms[i] = std::sqrt(sq);
        ix.image_word_counts[i] = static_cast<std::uint32_t>(quantized[i].size());
    }
    ix.mean_quantization_distance = distance_sum / static_cast<double>(distance_count);
    return ix;
}

/// Mean distance from each database descriptor to its nearest word.
inline double mean_quantization_distance(const Vocabulary& v, std::span<const ImageRecord> database) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& img : database)
        for (std::size_t f = 0; f < img.size(); ++f) {
            sum += quantize(v, img.descriptor(f)).distance;
            ++count;
        }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

inline std::span<const Posting> lookup(const InvertedIndex& ix, std::size_t word) {
    if (word >= ix.postings.size()) throw WordOutOfRange(word, ix.postings.size());
    return ix.postings[word];
}

// ---------------------------------------------------------------------------
// "BOWI", u16 version, u32 K, u32 N_im; per word u32 count then (u32 image, f32
// weight) pairs; N_im f32 norms; N_im u32 word counts.

inline constexpr std::uint16_t kIndexVersion = 1;

inline std::vector<std::uint8_t> encode_index(const InvertedIndex& ix) {
    detail::ByteWriter w;
    w.magic("BOWI");
    w.u16(kIndexVersion);
    w.u32(static_cast<std::uint32_t>(ix.vocabulary_size()));
    w.u32(ix.num_images);
    for (const auto& list : ix.postings) {
        w.u32(static_cast<std::uint32_t>(list.size()));
        for (const auto& p : list) {
            w.u32(p.image_id);
            w.f32(static_cast<float>(p.weight));
        }
    }
    for (double norm : ix.image_norms) w.f32(static_cast<float>(norm));
    for (auto c : ix.image_word_counts) w.u32(c);
    return w.bytes();
}

inline InvertedIndex decode_index(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic("BOWI");
    const auto version_at = r.offset();
    if (r.u16("version") != kIndexVersion) throw FormatError(version_at, "unsupported version");
    InvertedIndex ix;
    const auto k = r.u32("vocabulary size");
    ix.num_images = r.u32("image count");
    ix.postings.resize(k);
    for (auto& list : ix.postings) {
        const auto count = r.u32("posting count");
        r.need(std::uint64_t{count} * 8, "posting list");
        list.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto at = r.offset();
            Posting p;
            p.image_id = r.u32("posting image");
            p.weight = r.f32("posting weight");
            if (p.image_id >= ix.num_images) throw FormatError(at, "posting refers to unknown image");
            if (!(p.weight > 0.0)) throw FormatError(at, "posting weight must be positive");
            if (!list.empty() && list.back().image_id >= p.image_id)
                throw FormatError(at, "posting list not strictly sorted by image");
            list.push_back(p);
        }
    }
    r.need(std::uint64_t{ix.num_images} * 8, "image tables");
    ix.image_norms.resize(ix.num_images);
    for (auto& norm : ix.image_norms) norm = r.f32("image norm");
    ix.image_word_counts.resize(ix.num_images);
    for (auto& c : ix.image_word_counts) c = r.u32("image word count");
    if (!r.at_end()) throw FormatError(r.offset(), "trailing bytes after index");
    return ix;
}

inline void save_index(const InvertedIndex& ix, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_index(ix));
}

inline InvertedIndex load_index(const std::filesystem::path& path) {
    return decode_index(detail::read_file_bytes(path));
}

} // namespace abow
