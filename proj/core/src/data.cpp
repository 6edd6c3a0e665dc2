#include "stable16/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include <zlib.h>

#include "stable16/rng.hpp"

namespace stable16::data {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

std::vector<std::uint8_t> inflate_gzip(const std::vector<std::uint8_t>& in, const fs::path& path) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 16) != Z_OK) {
        throw DataError("gzip: cannot initialise inflater for " + path.string());
    }
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> chunk(1 << 16);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError("gzip: corrupt or truncated stream in " + path.string());
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw DataError("gzip: truncated stream in " + path.string());
        }
    }
    inflateEnd(&zs);
    return out;
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

}  // namespace

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
        return inflate_gzip(bytes, path);
    }
    return bytes;
}

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
    if (images.size() < 16) throw DataError("images: file too short for an IDX header");
    if (labels.size() < 8) throw DataError("labels: file too short for an IDX header");
    const std::uint32_t im = read_be32(images, 0);
    if (im != kImagesMagic) {
        throw DataError("images: bad magic " + hex(im) + ", expected " + hex(kImagesMagic));
    }
    const std::uint32_t lm = read_be32(labels, 0);
    if (lm != kLabelsMagic) {
        throw DataError("labels: bad magic " + hex(lm) + ", expected " + hex(kLabelsMagic));
    }
    const std::size_t n = read_be32(images, 4);
    const std::size_t rows = read_be32(images, 8);
    const std::size_t cols = read_be32(images, 12);
    const std::size_t nl = read_be32(labels, 4);
    if (n != nl) {
        throw DataError("count mismatch: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
    }
    const std::size_t features = rows * cols;
    if (images.size() != 16 + n * features) {
        throw DataError("images: expected " + std::to_string(16 + n * features) + " bytes, found " +
                        std::to_string(images.size()) + (images.size() < 16 + n * features ? " (truncated)" : ""));
    }
    if (labels.size() != 8 + n) {
        throw DataError("labels: expected " + std::to_string(8 + n) + " bytes, found " + std::to_string(labels.size()) +
                        (labels.size() < 8 + n ? " (truncated)" : ""));
    }
    Dataset ds;
    std::vector<double> pixels(features * n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::uint8_t* src = images.data() + 16 + j * features;
        for (std::size_t f = 0; f < features; ++f) {
            pixels[f * n + j] = static_cast<double>(src[f]) / 255.0;
        }
    }
    ds.images = Tensor<double>({features, n}, std::move(pixels));
    ds.labels.assign(labels.begin() + 8, labels.end());
    for (std::size_t j = 0; j < n; ++j) {
        if (ds.labels[j] >= 10) {
            throw DataError("labels: label " + std::to_string(ds.labels[j]) + " at index " + std::to_string(j) +
                            " outside [0, 10)");
        }
    }
    ds.images_checksum = fnv1a64(images);
    ds.labels_checksum = fnv1a64(labels);
    return ds;
}

Dataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
    const auto images = read_file(images_path);
    const auto labels = read_file(labels_path);
    try {
        return parse_idx(images, labels);
    } catch (const DataError& e) {
        throw DataError(images_path.string() + " / " + labels_path.string() + ": " + e.what());
    }
}

MnistFiles locate_mnist(const std::optional<fs::path>& dir) {
    fs::path root;
    if (dir && !dir->empty()) {
        root = *dir;
    } else if (const char* env = std::getenv("STABLE16_DATA"); env && *env) {
        root = env;
    } else {
        throw DataError("MNIST location unknown: pass --data-dir or set STABLE16_DATA");
    }
    auto find = [&](const std::string& stem) {
        for (const auto& name : {stem, stem + ".gz"}) {
            if (fs::exists(root / name)) return root / name;
        }
        throw DataError("missing " + stem + "[.gz] in " + root.string());
    };
    return MnistFiles{find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"),
                      find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte")};
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Xoshiro256 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.below(i)]);
    }
    return idx;
}

}  // namespace

Dataset subset(const Dataset& ds, std::size_t limit, std::uint64_t seed) {
    if (limit > ds.size()) {
        throw DataError("subset: limit " + std::to_string(limit) + " exceeds " + std::to_string(ds.size()) +
                        " examples");
    }
    auto idx = shuffled(ds.size(), seed);
    idx.resize(limit);
    const Batch<double> b = gather<double>(ds, idx);
    Dataset out;
    out.images = b.x;
    out.labels = b.y;
    out.images_checksum = ds.images_checksum;
    out.labels_checksum = ds.labels_checksum;
    return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0) {
        throw DataError("batches: batch size must be at least 1");
    }
    const auto idx = shuffled(n, seed);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size) {
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    }
    return out;
}

std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed) {
    return batches(ds.size(), batch_size, seed);
}

template <TensorScalar T>
Batch<T> gather(const Dataset& ds, std::span<const std::size_t> indices) {
    const std::size_t f = ds.features(), n = ds.size(), m = indices.size();
    std::vector<T> x(f * m);
    const auto src = ds.images.data();
    for (std::size_t r = 0; r < f; ++r) {
        for (std::size_t c = 0; c < m; ++c) {
            x[r * m + c] = Scalar<T>::store(Scalar<T>::from_double(src[r * n + indices[c]]));
        }
    }
    Batch<T> b{Tensor<T>({f, m}, std::move(x)), {}};
    b.y.reserve(m);
    for (std::size_t i : indices) b.y.push_back(ds.labels.at(i));
    return b;
}

template <TensorScalar T>
Batch<T> slice(const Dataset& ds, std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return gather<T>(ds, idx);
}

std::array<std::size_t, 10> label_histogram(const Dataset& ds) {
    std::array<std::size_t, 10> h{};
    for (auto y : ds.labels) ++h[y];
    return h;
}

template Batch<F16> gather(const Dataset&, std::span<const std::size_t>);
template Batch<float> gather(const Dataset&, std::span<const std::size_t>);
template Batch<double> gather(const Dataset&, std::span<const std::size_t>);
template Batch<F16> slice(const Dataset&, std::size_t, std::size_t);
template Batch<float> slice(const Dataset&, std::size_t, std::size_t);
template Batch<double> slice(const Dataset&, std::size_t, std::size_t);

}  // namespace stable16::data
