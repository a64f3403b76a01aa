#include "asymbp/dataset.hpp"

#include "asymbp/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace asymbp {

Shape Dataset::sample_shape() const {
    const auto& s = inputs.shape();
    return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
    if (inputs.rank() < 2) throw std::invalid_argument("dataset inputs must be batched, got " + to_string(inputs.shape()));
    if (inputs.dim(0) != labels.size()) {
        throw std::invalid_argument("dataset has " + std::to_string(inputs.dim(0)) + " samples but " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (classes == 0) throw std::invalid_argument("dataset has zero classes");
    for (auto l : labels)
        if (l >= classes) {
            throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
        }
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

double read_be_double(const std::uint8_t* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits = (bits << 8) | p[i];
    return std::bit_cast<double>(bits);
}

void write_be_double(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw idx_error("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct IdxHeader {
    std::uint8_t type;
    std::vector<std::uint32_t> dims;
    std::size_t payload_offset;
};

IdxHeader parse_header(std::span<const std::uint8_t> bytes, std::string_view name) {
    if (bytes.size() < 4) throw idx_truncated_error(std::string(name) + ": truncated IDX header");
    const std::uint32_t magic = read_be32(bytes.data());
    const std::uint8_t type = bytes[2], rank = bytes[3];
    if (bytes[0] != 0 || bytes[1] != 0 || (type != kIdxUnsignedByte && type != kIdxDouble) || rank == 0 || rank > 4) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%08X", magic);
        throw idx_magic_error(std::string(name) + ": bad IDX magic " + buf);
    }
    const std::size_t header = 4 + 4 * std::size_t{rank};
    if (bytes.size() < header) throw idx_truncated_error(std::string(name) + ": truncated IDX header");
    IdxHeader h{type, {}, header};
    for (std::size_t i = 0; i < rank; ++i) h.dims.push_back(read_be32(bytes.data() + 4 + 4 * i));
    return h;
}

} // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, std::size_t classes,
                  std::string_view images_name, std::string_view labels_name) {
    const IdxHeader ih = parse_header(images, images_name);
    if (ih.dims.size() < 2) {
        throw idx_magic_error(std::string(images_name) + ": image file must have rank 2, 3 or 4");
    }
    const IdxHeader lh = parse_header(labels, labels_name);
    if (read_be32(labels.data()) != kIdxLabelsMagic) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%08X", read_be32(labels.data()));
        throw idx_magic_error(std::string(labels_name) + ": bad label magic " + buf + " (expected 0x00000801)");
    }

    Shape shape;
    for (auto d : ih.dims) {
        if (d == 0) throw idx_error(std::string(images_name) + ": zero-sized dimension");
        shape.push_back(d);
    }
    if (shape.size() == 3) shape.insert(shape.begin() + 1, 1); // [n × h × w] -> [n × 1 × h × w]
    const std::size_t count = element_count(shape);
    const std::size_t elem = ih.type == kIdxDouble ? 8 : 1;
    if (images.size() - ih.payload_offset < count * elem) {
        throw idx_truncated_error(std::string(images_name) + ": truncated payload, expected " +
                                  std::to_string(count * elem) + " bytes");
    }
    const std::size_t n_labels = lh.dims[0];
    if (labels.size() - lh.payload_offset < n_labels) {
        throw idx_truncated_error(std::string(labels_name) + ": truncated payload, expected " +
                                  std::to_string(n_labels) + " bytes");
    }
    if (n_labels != shape[0]) {
        throw idx_count_mismatch_error(std::string(images_name) + " has " + std::to_string(shape[0]) + " samples but " +
                                       std::string(labels_name) + " has " + std::to_string(n_labels) + " labels");
    }

    std::vector<double> values(count);
    const std::uint8_t* src = images.data() + ih.payload_offset;
    if (ih.type == kIdxDouble) {
        for (std::size_t i = 0; i < count; ++i) values[i] = read_be_double(src + 8 * i);
    } else {
        for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<double>(src[i]) / 255.0;
    }

    Dataset d;
    d.inputs = Tensor(std::move(shape), std::move(values));
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(lh.payload_offset),
                    labels.begin() + static_cast<std::ptrdiff_t>(lh.payload_offset + n_labels));
    std::uint32_t max_label = 0;
    for (auto l : d.labels) max_label = std::max(max_label, l);
    d.classes = classes ? classes : std::size_t{max_label} + 1;
    if (max_label >= d.classes) {
        throw idx_error(std::string(labels_name) + ": label " + std::to_string(max_label) + " outside [0, " +
                        std::to_string(d.classes) + ")");
    }
    return d;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes) {
    const auto images = read_file(images_path);
    const auto labels = read_file(labels_path);
    return parse_idx(images, labels, classes, images_path.string(), labels_path.string());
}

std::vector<std::uint8_t> encode_idx_inputs(const Dataset& data, IdxPixelFormat format) {
    data.validate();
    std::vector<std::uint8_t> out;
    Shape dims = data.inputs.shape();
    if (dims.size() == 4 && dims[1] == 1) dims.erase(dims.begin() + 1);
    if (dims.size() > 4) throw idx_error("IDX supports at most rank 4");
    const std::uint8_t type = format == IdxPixelFormat::float64 ? kIdxDouble : kIdxUnsignedByte;
    write_be32(out, (std::uint32_t{type} << 8) | static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) write_be32(out, static_cast<std::uint32_t>(d));
    out.reserve(out.size() + data.inputs.size() * (format == IdxPixelFormat::float64 ? 8 : 1));
    for (double v : data.inputs.data()) {
        if (format == IdxPixelFormat::float64) {
            write_be_double(out, v);
        } else {
            const double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
            out.push_back(static_cast<std::uint8_t>(scaled));
        }
    }
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& data) {
    std::vector<std::uint8_t> out;
    write_be32(out, kIdxLabelsMagic);
    write_be32(out, static_cast<std::uint32_t>(data.labels.size()));
    for (auto l : data.labels) {
        if (l > 255) throw idx_error("label " + std::to_string(l) + " does not fit an IDX byte");
        out.push_back(static_cast<std::uint8_t>(l));
    }
    return out;
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               IdxPixelFormat format) {
    auto write = [](const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw idx_error("cannot write " + p.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw idx_error("failed writing " + p.string());
    };
    write(images_path, encode_idx_inputs(data, format));
    write(labels_path, encode_idx_labels(data));
}

// ---------------------------------------------------------------------------
// Synthetic data

SyntheticKind parse_synthetic_kind(std::string_view name) {
    if (name == "gaussian_blobs" || name == "blobs") return SyntheticKind::gaussian_blobs;
    if (name == "two_spirals" || name == "spirals") return SyntheticKind::two_spirals;
    throw std::invalid_argument("unknown synthetic dataset '" + std::string(name) +
                                "' (expected gaussian_blobs|two_spirals)");
}

Tensor blob_centers(const SyntheticSpec& spec) {
    const std::size_t k = spec.classes, dim = spec.dim;
    const double gap = spec.separation * spec.noise;
    Tensor centers({k, dim}, 0.0);
    if (dim >= k) {
        // Scaled basis vectors: every pair is `gap` apart.
        for (std::size_t c = 0; c < k; ++c) centers.at(c, c) = gap / std::numbers::sqrt2;
    } else if (dim >= 2) {
        // Regular polygon in the first two coordinates with side `gap`.
        const double radius = gap / (2.0 * std::sin(std::numbers::pi / static_cast<double>(k)));
        for (std::size_t c = 0; c < k; ++c) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
            centers.at(c, 0) = radius * std::cos(a);
            centers.at(c, 1) = radius * std::sin(a);
        }
    } else {
        for (std::size_t c = 0; c < k; ++c) centers.at(c, 0) = gap * static_cast<double>(c);
    }
    return centers;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.n == 0 || spec.classes == 0 || spec.dim == 0) throw std::invalid_argument("synthetic: sizes must be positive");
    if (spec.n % spec.classes != 0) {
        throw std::invalid_argument("synthetic: n=" + std::to_string(spec.n) + " is not divisible by classes=" +
                                    std::to_string(spec.classes));
    }
    if (spec.classes > 255) throw std::invalid_argument("synthetic: at most 255 classes");
    if (!(spec.noise > 0.0)) throw std::invalid_argument("synthetic: noise must be positive");

    Rng rng = make_stream(spec.seed, Stream::data);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Dataset d;
    d.classes = spec.classes;
    d.inputs = Tensor({spec.n, spec.dim});
    d.labels.resize(spec.n);

    if (spec.kind == SyntheticKind::gaussian_blobs) {
        const Tensor centers = blob_centers(spec);
        for (std::size_t i = 0; i < spec.n; ++i) {
            const std::size_t c = i % spec.classes;
            d.labels[i] = static_cast<std::uint32_t>(c);
            for (std::size_t j = 0; j < spec.dim; ++j)
                d.inputs.at(i, j) = centers.at(c, j) + spec.noise * gauss(rng);
        }
        return d;
    }

    if (spec.classes != 2 || spec.dim != 2) throw std::invalid_argument("two_spirals needs classes=2 and dim=2");
    // Arm c is the other arm rotated by pi; radius grows linearly to 10.
    const std::size_t per_class = spec.n / 2;
    for (std::size_t i = 0; i < spec.n; ++i) {
        const std::size_t c = i % 2, j = i / 2;
        const double t = (static_cast<double>(j) + 0.5) / static_cast<double>(per_class);
        const double angle = t * spec.separation * 2.0 * std::numbers::pi + static_cast<double>(c) * std::numbers::pi;
        const double radius = 10.0 * t + spec.noise * gauss(rng);
        d.labels[i] = static_cast<std::uint32_t>(c);
        d.inputs.at(i, 0) = radius * std::cos(angle);
        d.inputs.at(i, 1) = radius * std::sin(angle);
    }
    return d;
}

// ---------------------------------------------------------------------------

Dataset gather(const Dataset& data, std::span<const std::size_t> indices) {
    const std::size_t per = data.inputs.size() / data.inputs.dim(0);
    Shape shape = data.inputs.shape();
    shape[0] = indices.size();
    std::vector<double> values(indices.size() * per);
    Dataset out;
    out.classes = data.classes;
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const std::size_t i = indices[r];
        if (i >= data.size()) throw std::out_of_range("gather: index " + std::to_string(i) + " out of range");
        std::copy_n(data.inputs.raw() + i * per, per, values.data() + r * per);
        out.labels.push_back(data.labels[i]);
    }
    out.inputs = Tensor(std::move(shape), std::move(values));
    return out;
}

namespace {

std::vector<std::vector<std::size_t>> shuffled_by_class(const Dataset& data, Rng& rng) {
    std::vector<std::vector<std::size_t>> by_class(data.classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class.at(data.labels[i]).push_back(i);
    for (auto& v : by_class) std::shuffle(v.begin(), v.end(), rng);
    return by_class;
}

void require_per_class(const std::vector<std::vector<std::size_t>>& by_class, std::size_t needed) {
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < needed) {
            throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                                        " samples, " + std::to_string(needed) + " needed");
        }
    }
}

} // namespace

std::vector<std::size_t> subset_indices(const Dataset& data, std::size_t n_per_class, std::uint64_t seed) {
    Rng rng = make_stream(seed, Stream::data, 1);
    auto by_class = shuffled_by_class(data, rng);
    require_per_class(by_class, n_per_class);
    std::vector<std::size_t> picked;
    picked.reserve(n_per_class * data.classes);
    for (const auto& v : by_class) picked.insert(picked.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_per_class));
    std::shuffle(picked.begin(), picked.end(), rng);
    return picked;
}

Dataset subset(const Dataset& data, std::size_t n_per_class, std::uint64_t seed) {
    const auto idx = subset_indices(data, n_per_class, seed);
    return gather(data, idx);
}

DataSplit stratified_split(const Dataset& data, std::size_t train_per_class, std::size_t test_per_class,
                           std::uint64_t seed) {
    Rng rng = make_stream(seed, Stream::data, 2);
    auto by_class = shuffled_by_class(data, rng);
    require_per_class(by_class, train_per_class + test_per_class);
    std::vector<std::size_t> train, test;
    for (const auto& v : by_class) {
        const auto mid = v.begin() + static_cast<std::ptrdiff_t>(train_per_class);
        train.insert(train.end(), v.begin(), mid);
        test.insert(test.end(), mid, mid + static_cast<std::ptrdiff_t>(test_per_class));
    }
    std::shuffle(train.begin(), train.end(), rng);
    std::shuffle(test.begin(), test.end(), rng);
    return {gather(data, train), gather(data, test)};
}

} // namespace asymbp
