#ifndef ASYMBP_DATASET_HPP
#define ASYMBP_DATASET_HPP

#include "asymbp/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace asymbp {

/// Samples in `inputs` ([n × c × h × w] or [n × d]) with one label each.
struct Dataset {
    Tensor inputs;
    std::vector<std::uint32_t> labels;
    std::size_t classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    /// Per-sample shape (inputs shape without the leading n).
    Shape sample_shape() const;
    /// Throws std::invalid_argument when counts or labels are inconsistent.
    void validate() const;
};

struct DataSplit {
    Dataset train;
    Dataset test;
};

// ---------------------------------------------------------------------------
// IDX container: big-endian magic (0x0000 | type | rank), rank big-endian
// 32-bit sizes, then the raw values. Unsigned-byte images are scaled by 1/255
// on load; 64-bit float payloads (type 0x0E) load as is.

class idx_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class idx_magic_error : public idx_error {
public:
    using idx_error::idx_error;
};
class idx_truncated_error : public idx_error {
public:
    using idx_error::idx_error;
};
class idx_count_mismatch_error : public idx_error {
public:
    using idx_error::idx_error;
};

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::uint8_t kIdxUnsignedByte = 0x08;
constexpr std::uint8_t kIdxDouble = 0x0E;

/// Parses an IDX image (or feature) file and a label file. Rank-3 image files
/// become [n × 1 × h × w], rank-4 [n × c × h × w], rank-2 [n × d].
/// `classes` defaults to max(label) + 1 when zero.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes = 0);

/// Parsing from memory; `images_name` / `labels_name` only label error messages.
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, std::size_t classes = 0,
                  std::string_view images_name = "images", std::string_view labels_name = "labels");

enum class IdxPixelFormat { unsigned_byte, float64 };

/// Encodes inputs (as round(v·255) bytes, or raw doubles) and labels.
std::vector<std::uint8_t> encode_idx_inputs(const Dataset& data, IdxPixelFormat format);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& data);
void write_idx(const Dataset& data, const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               IdxPixelFormat format);

// ---------------------------------------------------------------------------

enum class SyntheticKind { gaussian_blobs, two_spirals };

SyntheticKind parse_synthetic_kind(std::string_view name);

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::gaussian_blobs;
    std::size_t n = 1000;
    std::size_t classes = 2;
    std::size_t dim = 2;
    /// Blobs: distance between class centers in units of the within-class
    /// standard deviation. Spirals: number of turns.
    double separation = 6.0;
    /// Within-class standard deviation (blobs) or radial jitter (spirals).
    double noise = 1.0;
    std::uint64_t seed = 1;
};

/// Deterministic given the seed. Samples are interleaved by class
/// (label of sample i is i mod classes). n must be divisible by classes;
/// two_spirals requires classes == 2 and dim == 2.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Class centers used by gaussian_blobs, [classes × dim].
Tensor blob_centers(const SyntheticSpec& spec);

/// Gathers the given sample indices in order.
Dataset gather(const Dataset& data, std::span<const std::size_t> indices);

/// Class-balanced sample without replacement; exactly n_per_class per class,
/// ordered by a seeded shuffle.
Dataset subset(const Dataset& data, std::size_t n_per_class, std::uint64_t seed);

/// Disjoint class-balanced train/test samples drawn from one pool.
DataSplit stratified_split(const Dataset& data, std::size_t train_per_class, std::size_t test_per_class,
                           std::uint64_t seed);

/// Class-balanced indices chosen by `subset` (exposed for overlap checks).
std::vector<std::size_t> subset_indices(const Dataset& data, std::size_t n_per_class, std::uint64_t seed);

} // namespace asymbp

#endif // ASYMBP_DATASET_HPP
