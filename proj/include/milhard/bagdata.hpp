// Bag-of-instances data model: synthetic generation, JSONL persistence
// and stratified k-fold splitting.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "milhard/common.hpp"

namespace milhard {

// One instance is a D-dimensional feature vector.
using Instance = Vec;

enum class BagOrigin { natural, generated_sb, generated_mb, generated_fmb };

const char* origin_name(BagOrigin o);
BagOrigin origin_from_name(const std::string& name);

struct Bag {
    std::string bag_id;
    int label = 0;  // 0 or 1
    std::vector<Instance> instances;
    BagOrigin origin = BagOrigin::natural;

    std::size_t size() const { return instances.size(); }
};

struct Dataset {
    std::vector<Bag> bags;
    std::size_t feature_dim = 0;
    std::string provenance;

    // Throws DataError on duplicate ids, dimension mismatch or empty bags.
    void validate() const;
};

struct BagSizeStats {
    double mu = 0.0;     // mean bag size
    double sigma = 0.0;  // population std of bag sizes
    int z_min = 1;
    int z_max = 1;
};

// Gaussian mixture surrogate for patch data. Positive bags carry at least
// one instance from the witness component, plus extra witnesses at rate
// witness_rate per remaining slot; negative bags mix background instances
// with confuser instances at rate confuser_rate per slot.
struct SynthConfig {
    int n_bags = 100;
    double positive_fraction = 0.5;
    int bag_size_min = 12;
    int bag_size_max = 24;
    int feature_dim = 10;
    Vec witness_mean;
    Vec confuser_mean;
    Vec background_mean;
    double cluster_spread = 1.0;
    double confuser_rate = 0.5;
    double witness_rate = 0.45;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError naming the offending field
};

// Component geometry: background at the origin, witness at witness_level on
// every axis, confuser at distance 1.5 * spread from the witness so a
// trained model produces false positive bags.
SynthConfig synth_config_for(int feature_dim, double witness_level, double spread);

// synth_config_for(feature_dim, 3.0, 1.0)
SynthConfig default_synth_config(int feature_dim = 10);

Dataset generate_synthetic(const SynthConfig& config);

void save_bags(const Dataset& dataset, const std::string& path);
Dataset load_bags(const std::string& path);

// Stratified k-fold split; test folds partition the dataset, fold sizes and
// per-fold label counts are balanced to within one bag.
std::vector<std::pair<Dataset, Dataset>> kfold_split(const Dataset& dataset, int k,
                                                     std::uint64_t seed);

BagSizeStats bag_size_stats(const Dataset& dataset);

}  // namespace milhard
