#include "csnet/data.hpp"

#include "csnet/sha256.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <fstream>

namespace csnet {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::int64_t kCifarRecordBytes = 3073;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed to write '" + path + "'");
}

std::uint32_t read_be32(const std::string& bytes, std::size_t pos, const std::string& path) {
    if (pos + 4 > bytes.size()) throw FormatError("'" + path + "' is truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(bytes[pos + i]);
    return v;
}

void append_be32(std::string& bytes, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint8_t pixel_byte(float v) {
    const float clamped = std::min(1.0f, std::max(0.0f, v));
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

std::array<std::uint8_t, 32> fingerprint_doubles(const std::vector<double>& a,
                                                 const std::vector<double>& b) {
    std::string bytes;
    bytes.reserve((a.size() + b.size()) * sizeof(double));
    bytes.append(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(double));
    bytes.append(reinterpret_cast<const char*>(b.data()), b.size() * sizeof(double));
    return sha256(bytes);
}

}  // namespace

std::string split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::validation: return "validation";
    }
    return "?";
}

void Dataset::check_valid() const {
    const Shape4& s = images.shape();
    if (labels.size() != static_cast<std::size_t>(s.n))
        throw ValidationError("dataset holds " + std::to_string(s.n) + " images but " +
                              std::to_string(labels.size()) + " labels");
    if (class_count < 1) throw ValidationError("dataset class_count must be positive");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= class_count)
            throw ValidationError("label " + std::to_string(labels[i]) + " at index " +
                                  std::to_string(i) + " is outside [0, " +
                                  std::to_string(class_count) + ")");
    if (!images.all_finite()) throw ValidationError("dataset contains non-finite pixels");
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       Split split) {
    const std::string ib = read_file(images_path);
    if (read_be32(ib, 0, images_path) != kIdxImagesMagic)
        throw FormatError("'" + images_path + "' is not an IDX image file (bad magic)");
    const std::int64_t n = read_be32(ib, 4, images_path);
    const std::int64_t h = read_be32(ib, 8, images_path);
    const std::int64_t w = read_be32(ib, 12, images_path);
    if (ib.size() != 16 + static_cast<std::size_t>(n * h * w))
        throw FormatError("'" + images_path + "' payload does not match its header counts");

    const std::string lb = read_file(labels_path);
    if (read_be32(lb, 0, labels_path) != kIdxLabelsMagic)
        throw FormatError("'" + labels_path + "' is not an IDX label file (bad magic)");
    const std::int64_t ln = read_be32(lb, 4, labels_path);
    if (ln != n)
        throw FormatError("'" + labels_path + "' holds " + std::to_string(ln) + " labels for " +
                          std::to_string(n) + " images");
    if (lb.size() != 8 + static_cast<std::size_t>(ln))
        throw FormatError("'" + labels_path + "' payload does not match its header count");

    Dataset ds;
    ds.split = split;
    ds.images = Tensor32({n, 1, h, w});
    for (std::int64_t i = 0; i < n * h * w; ++i)
        ds.images.data()[i] = static_cast<std::uint8_t>(ib[16 + i]) / 255.0f;
    ds.labels.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(lb[8 + i]);
    ds.check_valid();
    return ds;
}

void save_mnist_idx(const Dataset& ds, const std::string& images_path,
                    const std::string& labels_path) {
    const Shape4& s = ds.images.shape();
    if (s.c != 1) throw ValidationError("IDX image files hold single-channel images");

    std::string ib;
    ib.reserve(16 + static_cast<std::size_t>(s.n * s.h * s.w));
    append_be32(ib, kIdxImagesMagic);
    append_be32(ib, static_cast<std::uint32_t>(s.n));
    append_be32(ib, static_cast<std::uint32_t>(s.h));
    append_be32(ib, static_cast<std::uint32_t>(s.w));
    for (std::int64_t i = 0; i < ds.images.size(); ++i)
        ib.push_back(static_cast<char>(pixel_byte(ds.images.data()[i])));
    write_file(images_path, ib);

    std::string lb;
    append_be32(lb, kIdxLabelsMagic);
    append_be32(lb, static_cast<std::uint32_t>(ds.labels.size()));
    for (int label : ds.labels) lb.push_back(static_cast<char>(label));
    write_file(labels_path, lb);
}

Dataset load_cifar10_bin(const std::vector<std::string>& paths, Split split) {
    if (paths.empty()) throw ValidationError("no CIFAR batch files given");
    std::vector<std::string> blobs;
    std::int64_t n = 0;
    for (const std::string& path : paths) {
        blobs.push_back(read_file(path));
        if (blobs.back().size() % kCifarRecordBytes != 0)
            throw FormatError("'" + path + "' is not a whole number of 3073-byte records");
        n += static_cast<std::int64_t>(blobs.back().size()) / kCifarRecordBytes;
    }

    Dataset ds;
    ds.split = split;
    ds.images = Tensor32({n, 3, 32, 32});
    ds.labels.resize(static_cast<std::size_t>(n));
    std::int64_t img = 0;
    for (const std::string& blob : blobs) {
        for (std::size_t rec = 0; rec + kCifarRecordBytes <= blob.size();
             rec += kCifarRecordBytes, ++img) {
            ds.labels[static_cast<std::size_t>(img)] = static_cast<std::uint8_t>(blob[rec]);
            float* dst = ds.images.data() + img * 3072;
            for (std::int64_t i = 0; i < 3072; ++i)
                dst[i] = static_cast<std::uint8_t>(blob[rec + 1 + i]) / 255.0f;
        }
    }
    ds.check_valid();
    return ds;
}

void save_cifar10_bin(const Dataset& ds, const std::string& path) {
    const Shape4& s = ds.images.shape();
    if (s.c != 3 || s.h != 32 || s.w != 32)
        throw ValidationError("CIFAR batch files hold 3x32x32 images, got " + s.str());

    std::string bytes;
    bytes.reserve(static_cast<std::size_t>(s.n * kCifarRecordBytes));
    for (std::int64_t img = 0; img < s.n; ++img) {
        bytes.push_back(static_cast<char>(ds.labels[static_cast<std::size_t>(img)]));
        const float* src = ds.images.data() + img * 3072;
        for (std::int64_t i = 0; i < 3072; ++i)
            bytes.push_back(static_cast<char>(pixel_byte(src[i])));
    }
    write_file(path, bytes);
}

Dataset mean_subtract(const Dataset& train, const Dataset& apply_to) {
    if (train.split != Split::train)
        throw ValidationError("mean statistics must be fit on the train split, got " +
                              split_name(train.split));
    const Shape4& ts = train.images.shape();
    const Shape4& as = apply_to.images.shape();
    if (ts.c != as.c || ts.h != as.h || ts.w != as.w)
        throw ShapeError("mean fit on " + ts.str() + " cannot apply to " + as.str());

    const std::int64_t d = ts.c * ts.h * ts.w;
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t img = 0; img < ts.n; ++img) {
        const float* src = train.images.data() + img * d;
        for (std::int64_t i = 0; i < d; ++i) mean[static_cast<std::size_t>(i)] += src[i];
    }
    for (double& m : mean) m /= static_cast<double>(ts.n);

    Dataset out = apply_to;
    for (std::int64_t img = 0; img < as.n; ++img) {
        float* dst = out.images.data() + img * d;
        for (std::int64_t i = 0; i < d; ++i)
            dst[i] = static_cast<float>(dst[i] - mean[static_cast<std::size_t>(i)]);
    }
    out.stats_fingerprint = fingerprint_doubles(mean, {});
    return out;
}

Dataset global_contrast_normalize(const Dataset& ds, double eps) {
    const Shape4& s = ds.images.shape();
    const std::int64_t d = s.c * s.h * s.w;
    Dataset out = ds;
    for (std::int64_t img = 0; img < s.n; ++img) {
        float* px = out.images.data() + img * d;
        double sum = 0.0;
        for (std::int64_t i = 0; i < d; ++i) sum += px[i];
        const double mu = sum / static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t i = 0; i < d; ++i) var += (px[i] - mu) * (px[i] - mu);
        const double sd = std::sqrt(var / static_cast<double>(d));
        const double div = std::max(sd, eps);
        for (std::int64_t i = 0; i < d; ++i)
            px[i] = static_cast<float>((px[i] - mu) / div);
    }
    return out;
}

ZcaTransform zca_fit(const Dataset& train, double eps, std::int64_t fit_subset,
                     std::vector<std::string>* warnings) {
    if (train.split != Split::train)
        throw ValidationError("whitening must be fit on the train split, got " +
                              split_name(train.split));
    train.check_valid();
    const Shape4& s = train.images.shape();
    const std::int64_t d = s.c * s.h * s.w;
    const std::int64_t m = std::min(s.n, std::max<std::int64_t>(fit_subset, 1));
    if (m < d && warnings)
        warnings->push_back("fitting a " + std::to_string(d) + "-dimensional whitening on only " +
                            std::to_string(m) + " images; the covariance is rank-deficient");

    Eigen::MatrixXd x(m, d);
    for (std::int64_t img = 0; img < m; ++img) {
        const float* src = train.images.data() + img * d;
        for (std::int64_t i = 0; i < d; ++i) x(img, i) = src[i];
    }
    const Eigen::RowVectorXd mu = x.colwise().mean();
    x.rowwise() -= mu;
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(m);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw Error("whitening eigendecomposition failed");
    const Eigen::VectorXd scale =
        (eig.eigenvalues().array() + eps).rsqrt().matrix();
    const Eigen::MatrixXd w =
        eig.eigenvectors() * scale.asDiagonal() * eig.eigenvectors().transpose();

    ZcaTransform t;
    t.eps = eps;
    t.c = s.c;
    t.h = s.h;
    t.w = s.w;
    t.mean.assign(mu.data(), mu.data() + d);
    t.matrix.resize(static_cast<std::size_t>(d) * d);
    for (std::int64_t r = 0; r < d; ++r)
        for (std::int64_t c = 0; c < d; ++c)
            t.matrix[static_cast<std::size_t>(r * d + c)] = w(r, c);
    t.fit_fingerprint = fingerprint_doubles(t.mean, t.matrix);
    return t;
}

Dataset zca_apply(const ZcaTransform& t, const Dataset& ds) {
    const Shape4& s = ds.images.shape();
    if (s.c != t.c || s.h != t.h || s.w != t.w)
        throw ShapeError("whitening fit on " + std::to_string(t.c) + "x" + std::to_string(t.h) +
                         "x" + std::to_string(t.w) + " cannot apply to " + s.str());
    const std::int64_t d = t.c * t.h * t.w;

    Eigen::Map<const Eigen::MatrixXd> w(t.matrix.data(), d, d);  // symmetric, so layout-agnostic
    Eigen::Map<const Eigen::RowVectorXd> mu(t.mean.data(), d);

    Dataset out = ds;
    const std::int64_t block = 512;
    Eigen::MatrixXd x;
    for (std::int64_t from = 0; from < s.n; from += block) {
        const std::int64_t m = std::min(block, s.n - from);
        x.resize(m, d);
        for (std::int64_t img = 0; img < m; ++img) {
            const float* px = out.images.data() + (from + img) * d;
            for (std::int64_t i = 0; i < d; ++i) x(img, i) = px[i];
        }
        x.rowwise() -= mu;
        const Eigen::MatrixXd y = x * w;
        for (std::int64_t img = 0; img < m; ++img) {
            float* px = out.images.data() + (from + img) * d;
            for (std::int64_t i = 0; i < d; ++i) px[i] = static_cast<float>(y(img, i));
        }
    }
    out.stats_fingerprint = t.fit_fingerprint;
    return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& train, std::int64_t count,
                                             std::uint64_t seed) {
    if (train.split != Split::train)
        throw ValidationError("validation is carved from the train split, got " +
                              split_name(train.split));
    const Shape4& s = train.images.shape();
    if (count < 1 || count >= s.n)
        throw ValidationError("cannot carve " + std::to_string(count) + " validation images from " +
                              std::to_string(s.n));

    std::vector<std::int64_t> order(static_cast<std::size_t>(s.n));
    for (std::int64_t i = 0; i < s.n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());

    const std::int64_t d = s.c * s.h * s.w;
    auto take = [&](std::int64_t from, std::int64_t n, Split split) {
        Dataset part;
        part.split = split;
        part.class_count = train.class_count;
        part.stats_fingerprint = train.stats_fingerprint;
        part.images = Tensor32({n, s.c, s.h, s.w});
        part.labels.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t src = order[static_cast<std::size_t>(from + i)];
            std::memcpy(part.images.data() + i * d, train.images.data() + src * d,
                        static_cast<std::size_t>(d) * sizeof(float));
            part.labels[static_cast<std::size_t>(i)] =
                train.labels[static_cast<std::size_t>(src)];
        }
        return part;
    };
    return {take(count, s.n - count, Split::train), take(0, count, Split::validation)};
}

Tensor32 augment_image(const Tensor32& images, int dy, int dx, bool flip, int pad) {
    const Shape4& s = images.shape();
    if (pad < 0 || dy < 0 || dx < 0 || dy > 2 * pad || dx > 2 * pad)
        throw ValidationError("crop offsets must lie in [0, 2*pad]");

    Tensor32 out(s);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t y = 0; y < s.h; ++y) {
                const std::int64_t sy = y + dy - pad;
                if (sy < 0 || sy >= s.h) continue;  // zero padding
                for (std::int64_t x = 0; x < s.w; ++x) {
                    const std::int64_t ox = flip ? s.w - 1 - x : x;
                    const std::int64_t sx = x + dx - pad;
                    if (sx < 0 || sx >= s.w) continue;
                    out.at(n, c, y, ox) = images.at(n, c, sy, sx);
                }
            }
    return out;
}

Tensor32 augment_batch(const Tensor32& batch, Rng& rng, int pad) {
    const Shape4& s = batch.shape();
    Tensor32 out(s);
    const std::int64_t d = s.c * s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        const int dy = static_cast<int>(rng.index(2 * pad + 1));
        const int dx = static_cast<int>(rng.index(2 * pad + 1));
        const bool flip = rng.bernoulli(0.5);

        Tensor32 one({1, s.c, s.h, s.w});
        std::memcpy(one.data(), batch.data() + n * d, static_cast<std::size_t>(d) * sizeof(float));
        const Tensor32 moved = augment_image(one, dy, dx, flip, pad);
        std::memcpy(out.data() + n * d, moved.data(), static_cast<std::size_t>(d) * sizeof(float));
    }
    return out;
}

}  // namespace csnet
