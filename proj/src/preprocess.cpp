#include "milhard/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace milhard {

namespace {

// Parses the next integer in a PNM header, skipping whitespace and
// '#'-comments.
long next_header_int(std::istream& in, const std::string& path) {
    for (;;) {
        const int c = in.peek();
        if (c == EOF) throw DataError(path + ": truncated header");
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
            continue;
        }
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        break;
    }
    long value = 0;
    if (!(in >> value)) throw DataError(path + ": malformed header integer");
    return value;
}

}  // namespace

RasterImage load_raster(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open: " + path);
    std::string magic(2, '\0');
    file.read(magic.data(), 2);
    if (!file || (magic != "P6" && magic != "P5"))
        throw DataError(path + ": not a binary PPM (P6) or PGM (P5) file");

    RasterImage img;
    img.channels = magic == "P6" ? 3 : 1;
    img.width = static_cast<int>(next_header_int(file, path));
    img.height = static_cast<int>(next_header_int(file, path));
    const long maxval = next_header_int(file, path);
    if (img.width < 1 || img.height < 1) throw DataError(path + ": bad dimensions");
    if (maxval < 1 || maxval > 255)
        throw DataError(path + ": only 8-bit samples are supported (maxval " +
                        std::to_string(maxval) + ")");
    file.get();  // single whitespace byte after maxval

    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    img.data.resize(n);
    file.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(file.gcount()) != n)
        throw DataError(path + ": truncated pixel data");
    return img;
}

void save_raster(const RasterImage& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("save_raster: channels must be 1 or 3");
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (img.data.size() != n) throw DataError("save_raster: data length mismatch");
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot open for writing: " + path);
    file << (img.channels == 3 ? "P6" : "P5") << '\n'
         << img.width << ' ' << img.height << '\n'
         << 255 << '\n';
    file.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(n));
    if (!file) throw DataError("write failed: " + path);
}

std::vector<Patch> tile_image(const RasterImage& img, int patch_side) {
    if (patch_side < 1) throw ConfigError("tile_image: patch_side must be >= 1");
    std::vector<Patch> patches;
    const int rows = img.height / patch_side;
    const int cols = img.width / patch_side;
    if (rows < 1 || cols < 1) return patches;
    patches.reserve(static_cast<std::size_t>(rows) * cols);
    for (int pr = 0; pr < rows; ++pr) {
        for (int pc = 0; pc < cols; ++pc) {
            Patch patch;
            patch.side = patch_side;
            patch.channels = img.channels;
            patch.source_row = pr * patch_side;
            patch.source_col = pc * patch_side;
            patch.data.resize(static_cast<std::size_t>(patch_side) * patch_side * img.channels);
            for (int r = 0; r < patch_side; ++r)
                for (int c = 0; c < patch_side; ++c)
                    for (int ch = 0; ch < img.channels; ++ch)
                        patch.at(r, c, ch) =
                            img.at(patch.source_row + r, patch.source_col + c, ch);
            patches.push_back(std::move(patch));
        }
    }
    return patches;
}

Hsv rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const double rd = r, gd = g, bd = b;
    const double max = std::max({rd, gd, bd});
    const double min = std::min({rd, gd, bd});
    const double delta = max - min;
    Hsv out;
    out.v = max / 255.0;
    out.s = max == 0.0 ? 0.0 : delta / max;
    if (delta == 0.0) {
        out.h = 0.0;
        return out;
    }
    double h;
    if (max == rd)
        h = 60.0 * ((gd - bd) / delta);
    else if (max == gd)
        h = 60.0 * ((bd - rd) / delta + 2.0);
    else
        h = 60.0 * ((rd - gd) / delta + 4.0);
    if (h < 0.0) h += 360.0;
    out.h = h;
    return out;
}

namespace {

int byte_of_unit(double x) {  // [0,1] -> 0..255
    return static_cast<int>(std::lround(x * 255.0));
}

int byte_of_hue(double h) {  // [0,360) -> 0..255
    return static_cast<int>(std::lround(h / 360.0 * 255.0));
}

}  // namespace

std::array<Histogram256, 3> hsv_histograms(const RasterImage& img) {
    std::array<Histogram256, 3> hists{};
    for (auto& h : hists) h.fill(0);
    const std::size_t pixels = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t p = 0; p < pixels; ++p) {
        Hsv hsv;
        if (img.channels == 3)
            hsv = rgb_to_hsv(img.data[p * 3], img.data[p * 3 + 1], img.data[p * 3 + 2]);
        else
            hsv.v = img.data[p] / 255.0;
        hists[0][byte_of_hue(hsv.h)] += 1;
        hists[1][byte_of_unit(hsv.s)] += 1;
        hists[2][byte_of_unit(hsv.v)] += 1;
    }
    return hists;
}

OtsuResult otsu_threshold(const Histogram256& hist) {
    std::uint64_t total = 0;
    std::uint64_t weighted = 0;
    int nonzero_bins = 0;
    int last_bin = 0;
    for (int i = 0; i < 256; ++i) {
        total += hist[i];
        weighted += hist[i] * static_cast<std::uint64_t>(i);
        if (hist[i] > 0) {
            ++nonzero_bins;
            last_bin = i;
        }
    }
    if (total == 0) throw DataError("otsu_threshold: empty histogram");
    if (nonzero_bins == 1) return {last_bin, 0.0};

    const double total_d = static_cast<double>(total);
    OtsuResult best{0, -1.0};
    std::uint64_t c0 = 0;
    std::uint64_t s0 = 0;
    for (int t = 0; t < 256; ++t) {
        c0 += hist[t];
        s0 += hist[t] * static_cast<std::uint64_t>(t);
        const std::uint64_t c1 = total - c0;
        double variance = 0.0;
        if (c0 > 0 && c1 > 0) {
            const double mu0 = static_cast<double>(s0) / static_cast<double>(c0);
            const double mu1 =
                static_cast<double>(weighted - s0) / static_cast<double>(c1);
            const double w0 = static_cast<double>(c0) / total_d;
            const double w1 = static_cast<double>(c1) / total_d;
            variance = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        }
        if (variance > best.between_class_variance) {
            best.threshold = t;
            best.between_class_variance = variance;
        }
    }
    return best;
}

HsvThresholds compute_hsv_thresholds(const RasterImage& img) {
    const auto hists = hsv_histograms(img);
    return {otsu_threshold(hists[0]), otsu_threshold(hists[1]), otsu_threshold(hists[2])};
}

std::vector<Patch> filter_patches(const std::vector<Patch>& patches,
                                  const HsvThresholds& thresholds, KeepRule rule,
                                  double tissue_fraction) {
    if (tissue_fraction < 0.0 || tissue_fraction >= 1.0)
        throw ConfigError("filter_patches: tissue_fraction must lie in [0, 1)");
    const int threshold =
        rule == KeepRule::saturation ? thresholds.s.threshold : thresholds.v.threshold;
    std::vector<Patch> kept;
    for (const Patch& patch : patches) {
        const std::size_t pixels = static_cast<std::size_t>(patch.side) * patch.side;
        std::size_t tissue = 0;
        for (std::size_t p = 0; p < pixels; ++p) {
            Hsv hsv;
            if (patch.channels == 3)
                hsv = rgb_to_hsv(patch.data[p * 3], patch.data[p * 3 + 1],
                                 patch.data[p * 3 + 2]);
            else
                hsv.v = patch.data[p] / 255.0;
            const int value =
                rule == KeepRule::saturation ? byte_of_unit(hsv.s) : byte_of_unit(hsv.v);
            if (value > threshold) ++tissue;
        }
        if (static_cast<double>(tissue) / static_cast<double>(pixels) > tissue_fraction)
            kept.push_back(patch);
    }
    return kept;
}

Patch histogram_equalize(const Patch& patch) {
    Patch out = patch;
    const std::size_t pixels = static_cast<std::size_t>(patch.side) * patch.side;
    for (int ch = 0; ch < patch.channels; ++ch) {
        Histogram256 hist{};
        hist.fill(0);
        for (std::size_t p = 0; p < pixels; ++p) hist[patch.data[p * patch.channels + ch]] += 1;

        int nonzero_bins = 0;
        for (int i = 0; i < 256; ++i) nonzero_bins += hist[i] > 0;
        if (nonzero_bins <= 1) continue;  // constant channel maps to itself

        std::array<std::uint64_t, 256> cdf{};
        std::uint64_t running = 0;
        for (int i = 0; i < 256; ++i) {
            running += hist[i];
            cdf[i] = running;
        }
        const double cdf0 = static_cast<double>(hist[0]);
        const double denom = static_cast<double>(pixels) - cdf0;
        std::array<std::uint8_t, 256> remap{};
        for (int i = 0; i < 256; ++i)
            remap[i] = static_cast<std::uint8_t>(
                std::floor(255.0 * (static_cast<double>(cdf[i]) - cdf0) / denom));
        for (std::size_t p = 0; p < pixels; ++p) {
            std::uint8_t& sample = out.data[p * patch.channels + ch];
            sample = remap[sample];
        }
    }
    return out;
}

Patch apply_dihedral(const Patch& patch, int transform) {
    if (transform < 0 || transform > 7)
        throw ConfigError("apply_dihedral: transform must lie in 0..7");
    Patch out = patch;
    const int n = patch.side;
    auto rotate_cw = [n](const Patch& src) {
        Patch dst = src;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                for (int ch = 0; ch < src.channels; ++ch)
                    dst.at(r, c, ch) = src.at(n - 1 - c, r, ch);
        return dst;
    };
    for (int i = 0; i < (transform & 3); ++i) out = rotate_cw(out);
    if (transform >= 4) {
        Patch flipped = out;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                for (int ch = 0; ch < out.channels; ++ch)
                    flipped.at(r, c, ch) = out.at(r, n - 1 - c, ch);
        out = flipped;
    }
    return out;
}

int inverse_dihedral(int transform) {
    if (transform < 0 || transform > 7)
        throw ConfigError("inverse_dihedral: transform must lie in 0..7");
    if (transform >= 4) return transform;  // reflections are involutions
    return (4 - transform) & 3;
}

Patch augment(const Patch& patch, std::mt19937_64& rng) {
    if (patch.side < 1) throw DataError("augment: empty patch");
    const int k = std::uniform_int_distribution<int>(0, 7)(rng);
    return apply_dihedral(patch, k);
}

Bag patches_to_bag(const std::vector<Patch>& patches, int label, const std::string& bag_id) {
    if (patches.empty()) throw DataError("empty bag: no kept patches for " + bag_id);
    if (label != 0 && label != 1) throw ConfigError("patches_to_bag: label must be 0 or 1");
    Bag bag;
    bag.bag_id = bag_id;
    bag.label = label;
    bag.origin = BagOrigin::natural;
    const int side = patches.front().side;
    const int channels = patches.front().channels;
    for (const Patch& patch : patches) {
        if (patch.side != side || patch.channels != channels)
            throw DataError("patches_to_bag: mixed patch shapes");
        Instance inst;
        inst.reserve(static_cast<std::size_t>(side) * side * channels);
        for (int ch = 0; ch < channels; ++ch)
            for (int r = 0; r < side; ++r)
                for (int c = 0; c < side; ++c)
                    inst.push_back(patch.at(r, c, ch) / 255.0);
        bag.instances.push_back(std::move(inst));
    }
    return bag;
}

}  // namespace milhard
