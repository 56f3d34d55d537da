#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csnet/tensor.hpp"

namespace csnet {

enum class Split { train, test, validation };

std::string split_name(Split split);

struct Dataset {
    Tensor32 images;  // n x c x h x w, loaders scale raw bytes to [0, 1]
    std::vector<int> labels;
    Split split = Split::train;
    int class_count = 10;
    // Identifies the fitted statistics (mean vector or whitening transform)
    // last applied to this set; all zeros until a transform runs.
    std::array<std::uint8_t, 32> stats_fingerprint{};

    void check_valid() const;
};

/// Big-endian IDX pair as distributed for MNIST: image file magic 0x00000803
/// (ubyte, rank 3), label file magic 0x00000801 (ubyte, rank 1).
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       Split split);
void save_mnist_idx(const Dataset& ds, const std::string& images_path,
                    const std::string& labels_path);

/// CIFAR-10 binary batches: 3073-byte records, one label byte then 3072
/// channel-major pixel bytes (32x32 red, green, blue planes).
Dataset load_cifar10_bin(const std::vector<std::string>& paths, Split split);
void save_cifar10_bin(const Dataset& ds, const std::string& path);

/// Subtracts the training set's per-pixel mean from apply_to. The statistics
/// come from `train` alone, which must carry the train split tag.
Dataset mean_subtract(const Dataset& train, const Dataset& apply_to);

/// Per image: subtract its own mean, divide by max(std, eps).
Dataset global_contrast_normalize(const Dataset& ds, double eps = 1e-8);

struct ZcaTransform {
    std::vector<double> mean;    // length d = c*h*w
    std::vector<double> matrix;  // d x d row-major, symmetric
    double eps = 1e-5;
    std::int64_t c = 0, h = 0, w = 0;
    std::array<std::uint8_t, 32> fit_fingerprint{};
};

/// Whitening fit on the leading fit_subset images of the train split:
/// eigendecompose the biased covariance of the centered, flattened images and
/// form U diag(1/sqrt(lambda + eps)) U^T. Fitting on fewer images than the
/// pixel dimension appends a rank warning.
ZcaTransform zca_fit(const Dataset& train, double eps = 1e-5, std::int64_t fit_subset = 10000,
                     std::vector<std::string>* warnings = nullptr);
Dataset zca_apply(const ZcaTransform& t, const Dataset& ds);

/// Carves a seeded-shuffle validation subset out of a training set.
std::pair<Dataset, Dataset> split_validation(const Dataset& train, std::int64_t count = 5000,
                                             std::uint64_t seed = 0);

/// Pad-crop-flip with fixed offsets: zero-pad `pad` pixels per side, crop the
/// original extent at (dy, dx) in [0, 2*pad], then mirror horizontally when
/// flip is set. Applies the same transform to every image in the tensor.
Tensor32 augment_image(const Tensor32& images, int dy, int dx, bool flip, int pad = 4);

/// Training-time augmentation: per image, draws dy, dx, then the flip bit
/// from rng, in that order.
Tensor32 augment_batch(const Tensor32& batch, Rng& rng, int pad = 4);

}  // namespace csnet
