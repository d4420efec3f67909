// Image-to-bag preprocessing: grid tiling, HSV conversion, Otsu-based
// tissue filtering, per-patch histogram equalization, dihedral augmentation
// and flattening of kept patches into a feature bag.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "milhard/bagdata.hpp"
#include "milhard/common.hpp"

namespace milhard {

struct RasterImage {
    int width = 0;
    int height = 0;
    int channels = 0;  // 3 = RGB, 1 = gray
    std::vector<std::uint8_t> data;  // row-major, interleaved

    std::uint8_t at(int row, int col, int ch) const {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
};

struct Patch {
    int side = 0;
    int channels = 0;
    std::vector<std::uint8_t> data;  // row-major, interleaved
    int source_row = 0;  // top-left corner in the parent image
    int source_col = 0;

    std::uint8_t at(int row, int col, int ch) const {
        return data[(static_cast<std::size_t>(row) * side + col) * channels + ch];
    }
    std::uint8_t& at(int row, int col, int ch) {
        return data[(static_cast<std::size_t>(row) * side + col) * channels + ch];
    }
};

struct OtsuResult {
    int threshold = 0;
    double between_class_variance = 0.0;
};

struct Hsv {
    double h = 0.0;  // degrees in [0, 360); 0 when saturation is 0
    double s = 0.0;  // [0, 1]
    double v = 0.0;  // [0, 1]
};

struct HsvThresholds {
    OtsuResult h, s, v;
};

enum class KeepRule { saturation, value };

// Binary PPM (P6) and PGM (P5) with 8-bit samples.
RasterImage load_raster(const std::string& path);
void save_raster(const RasterImage& img, const std::string& path);

// Non-overlapping grid from the top-left, row-major; partial border tiles
// are discarded. A patch_side larger than the image yields an empty list.
std::vector<Patch> tile_image(const RasterImage& img, int patch_side);

Hsv rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b);

using Histogram256 = std::array<std::uint64_t, 256>;

// Whole-image histograms of the HSV channels quantized to 0..255. Gray
// images put all hue/saturation mass at bin 0.
std::array<Histogram256, 3> hsv_histograms(const RasterImage& img);

// Exhaustive 256-candidate scan maximizing the between-class variance,
// smallest threshold on ties; a single-value histogram thresholds at that
// value with variance 0.
OtsuResult otsu_threshold(const Histogram256& hist);

HsvThresholds compute_hsv_thresholds(const RasterImage& img);

// Keep a patch iff the fraction of its pixels whose chosen HSV channel
// exceeds that channel's threshold is > tissue_fraction.
std::vector<Patch> filter_patches(const std::vector<Patch>& patches,
                                  const HsvThresholds& thresholds,
                                  KeepRule rule = KeepRule::saturation,
                                  double tissue_fraction = 0.25);

// Per-channel remap out = floor(255 * (cdf(v) - cdf(0)) / (N - cdf(0)));
// a constant channel is left unchanged.
Patch histogram_equalize(const Patch& patch);

// Dihedral transform index 0..7: rotate 90deg clockwise (index & 3) times,
// then mirror left-right if index >= 4.
Patch apply_dihedral(const Patch& patch, int transform);
int inverse_dihedral(int transform);

// Uniformly samples one of the 8 dihedral transforms.
Patch augment(const Patch& patch, std::mt19937_64& rng);

// Each patch becomes one instance: channel planes concatenated, each plane
// row-major, samples scaled to [0, 1].
Bag patches_to_bag(const std::vector<Patch>& patches, int label, const std::string& bag_id);

}  // namespace milhard
