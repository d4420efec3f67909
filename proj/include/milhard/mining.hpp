// Hard-negative mining: find negative bags the trained model flags as
// positive, keep each one's instances whose attention weight is at least one
// population standard deviation above that bag's mean, pool them, and build
// new negative bags from the pool (whole-pool, random-sample, or
// cluster-sample strategies).

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "milhard/bagdata.hpp"
#include "milhard/milnet.hpp"

namespace milhard {

struct FalsePositiveBag {
    std::string bag_id;
    std::size_t bag_index = 0;  // index into the scanned dataset
    Vec weights;                // attention weights from the forward trace
    double mean = 0.0;
    double stddev = 0.0;        // population std of the weights
    double probability = 0.0;
};

struct HardPoolEntry {
    Instance instance;
    std::string source_bag_id;
    double weight = 0.0;
};

struct HardPool {
    std::vector<HardPoolEntry> instances;

    std::size_t size() const { return instances.size(); }
    bool empty() const { return instances.empty(); }
};

struct ClusterSet {
    int c = 0;
    std::vector<Vec> centroids;
    std::vector<int> assignments;       // nearest centroid, lowest index on ties
    std::vector<std::size_t> sizes;     // members per cluster, sums to row count
    std::vector<double> inertia_history;  // one entry per Lloyd iteration

    double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

enum class GenStrategy { sb, mb, fmb };

const char* strategy_name(GenStrategy s);
GenStrategy strategy_from_name(const std::string& name);
BagOrigin strategy_origin(GenStrategy s);

struct GenConfig {
    GenStrategy strategy = GenStrategy::fmb;
    int bag_count = 1;        // ignored by sb
    BagSizeStats size_stats;  // ignored by sb
    int clusters = 4;         // fmb only
    std::uint64_t seed = 0;

    void validate() const;
};

// Scan every negative bag with the model; keep the ones scored at or above
// the 0.5 decision threshold, together with their weight statistics.
std::vector<FalsePositiveBag> find_false_positives(const MilModel& model,
                                                   const Dataset& trainset);

// Indices i with w_i >= stddev + mean, ascending. Uniform weights have zero
// std, so every index qualifies.
std::vector<std::size_t> select_hard_instances(const FalsePositiveBag& fp);

HardPool build_hard_pool(const MilModel& model, const Dataset& trainset);

// Embedder output for each pooled instance, rows in pool order.
Matrix extract_features(const MilModel& model, const HardPool& pool);

// Seeded k-means++ init, Lloyd iterations until assignments are stable or
// max_iter; empty clusters are repaired by stealing the point farthest from
// its own centroid.
ClusterSet kmeans(const Matrix& features, int c, std::uint64_t seed, int max_iter = 100);

// round(Normal(mu, sigma)) clamped into [z_min, z_max] (and to >= 1).
int sample_bag_size(const BagSizeStats& stats, std::mt19937_64& rng);

// features is only consulted by the fmb strategy and must align with pool.
std::vector<Bag> generate_bags(const HardPool& pool, const Matrix& features,
                               const GenConfig& config);

// trainset plus the generated bags; inputs are left untouched.
Dataset augment_training_set(const Dataset& trainset, const std::vector<Bag>& hard_bags);

int default_cluster_count(std::size_t pool_size);
int default_bag_count(const Dataset& trainset);  // natural negative bag count

void save_hard_pool(const HardPool& pool, const std::string& path, std::size_t feature_dim);
HardPool load_hard_pool(const std::string& path, std::size_t* feature_dim_out = nullptr);

}  // namespace milhard
