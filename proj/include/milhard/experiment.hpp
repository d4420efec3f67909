// End-to-end experiment driver: repeated k-fold cross-validation where every
// fold trains a plain-attention baseline, the adaptive model, and one
// retrained variant per hard-bag strategy, all evaluated on the same
// untouched test fold and aggregated as mean +/- standard error.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "milhard/bagdata.hpp"
#include "milhard/metrics.hpp"
#include "milhard/milnet.hpp"
#include "milhard/mining.hpp"
#include "milhard/optim.hpp"

namespace milhard {

struct PipelineConfig {
    std::string profile = "synthetic";
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 60;
    int folds = 5;
    double lambda = 2.0;
    int repetitions = 5;
    std::vector<GenStrategy> strategies = {GenStrategy::sb, GenStrategy::mb,
                                           GenStrategy::fmb};
    int bag_count = 0;  // generated bags per fold; 0 = natural negative count
    int clusters = 0;   // fmb cluster count; 0 = min(4, pool size)
    std::uint64_t seed = 0;
    int jobs = 1;
    ModelDims dims;  // feature_dim is overwritten from the dataset

    // "colon", "ucsb" or "synthetic"; sets lr, weight_decay, epochs, folds.
    static PipelineConfig for_profile(const std::string& name);
    void validate() const;
};

struct FoldCell {
    int repetition = 0;
    int fold = 0;
    RunMetrics metrics;
};

struct VariantResult {
    std::string method;
    std::vector<FoldCell> per_fold;
    std::vector<RunMetrics> per_repetition;  // test folds pooled per repetition
    AggregateReport aggregate;               // over per_repetition
};

struct ExperimentRecord {
    std::string profile;
    double lambda = 2.0;
    int folds = 0;
    int repetitions = 0;
    int epochs = 0;
    double lr = 0.0;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    std::size_t feature_dim = 0;
    std::size_t bag_total = 0;
    std::vector<VariantResult> variants;

    std::string to_json() const;  // deterministic field order, %.17g values
    static ExperimentRecord from_json(const std::string& text);
    std::string to_table() const;
};

// Variant row names, in report order.
std::string variant_name_base();                  // "attention" (lambda = 1)
std::string variant_name_adaptive();              // "adaptive"
std::string variant_name_for(GenStrategy s);      // "adaptive+sb" etc.

ExperimentRecord run_experiment(const Dataset& data, const PipelineConfig& config);

void save_record(const ExperimentRecord& record, const std::string& path);
ExperimentRecord load_record(const std::string& path);

}  // namespace milhard
