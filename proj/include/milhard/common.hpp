// Shared plumbing: error types, a flat row-major matrix, seeded rng
// derivation, JSON number formatting and the MILHARD_LOG logger.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace milhard {

// Validation failures (bad config, bad flags). CLI maps these to exit 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input data (parse errors, dimension mismatches). CLI maps to exit 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

using Vec = std::vector<double>;

// Dense row-major matrix. All model math in this project is desk-scale,
// plain loops over this layout are fast enough.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    bool operator==(const Matrix& o) const = default;
};

// splitmix64; used to derive independent rng seeds from a master seed so
// that reordering parallel jobs cannot change any stream.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return splitmix64(splitmix64(base) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(base, a), b);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
    return derive_seed(derive_seed(base, a, b), c);
}

// FNV-1a, so named streams ("epoch", "fold", ...) get distinct seeds.
inline std::uint64_t hash_tag(const char* s) {
    std::uint64_t h = 1469598103934665603ULL;
    while (*s) {
        h ^= static_cast<unsigned char>(*s++);
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, const char* tag) {
    return derive_seed(base, hash_tag(tag));
}

inline std::uint64_t derive_seed(std::uint64_t base, const char* tag, std::uint64_t a) {
    return derive_seed(derive_seed(base, hash_tag(tag)), a);
}

inline std::uint64_t derive_seed(std::uint64_t base, const char* tag, std::uint64_t a,
                                 std::uint64_t b) {
    return derive_seed(derive_seed(base, hash_tag(tag), a), b);
}

// %.17g round-trips any finite double exactly; used for checkpoints and
// experiment records so identical runs produce byte-identical files.
inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Bag files store features at 9 significant digits (see the JSONL format).
inline std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// Rounds to the nearest value representable at 9 significant decimal
// digits, i.e. the precision the bag file format preserves.
inline double quantize_sig9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::strtod(buf, nullptr);
}

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level();

void log_msg(LogLevel level, const std::string& msg);

// Stream-style logging to stderr, gated by the MILHARD_LOG env var.
#define MILHARD_LOG_AT(lvl, expr)                                          \
    do {                                                                   \
        if (static_cast<int>(lvl) <= static_cast<int>(::milhard::log_level())) { \
            std::ostringstream oss_log_;                                   \
            oss_log_ << expr;                                              \
            ::milhard::log_msg(lvl, oss_log_.str());                       \
        }                                                                  \
    } while (0)

#define MILHARD_LOG_INFO(expr) MILHARD_LOG_AT(::milhard::LogLevel::info, expr)
#define MILHARD_LOG_DEBUG(expr) MILHARD_LOG_AT(::milhard::LogLevel::debug, expr)
#define MILHARD_LOG_ERROR(expr) MILHARD_LOG_AT(::milhard::LogLevel::error, expr)

}  // namespace milhard
