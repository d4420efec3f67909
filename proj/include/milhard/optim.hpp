// Adam with decoupled weight decay, Glorot-uniform initialization, and the
// batch-size-1 training loop that keeps the epoch with the lowest mean
// training loss.

#pragma once

#include <cstdint>
#include <vector>

#include "milhard/bagdata.hpp"
#include "milhard/milnet.hpp"

namespace milhard {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void validate() const;
};

struct AdamState {
    MilParams m;
    MilParams v;
    long step = 0;

    static AdamState for_params(const MilParams& shape);
};

// One update: theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + wd * theta).
void adam_step(MilParams& params, const MilParams& grads, AdamState& state,
               const AdamHyper& hyper);

struct TrainConfig {
    int epochs = 60;
    AdamHyper adam;
    std::uint64_t seed = 0;  // drives the per-epoch bag shuffle
    bool restore_best = true;

    void validate() const;
};

struct TrainReport {
    std::vector<double> epoch_losses;  // mean loss per epoch
    int best_epoch = -1;               // earliest epoch with the lowest loss
    double best_loss = 0.0;
};

// Weights ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero.
// Vector-shaped weights (attention v, classifier) count as a single output.
MilModel init_model(const ModelDims& dims, double lambda, std::uint64_t seed);

// Bags are visited one at a time in a freshly shuffled order each epoch.
// When restore_best is set the model is left at its best epoch's weights.
TrainReport train(MilModel& model, const Dataset& data, const TrainConfig& config);

}  // namespace milhard
