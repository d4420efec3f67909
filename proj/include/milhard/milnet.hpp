// The MIL network. An MLP embeds each instance, a softsign attention head
// scores it, softmax turns scores into weights, and instances whose weight
// falls strictly below the bag average are scaled by lambda inside the
// pooled sum before a linear+sigmoid head classifies the bag.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "milhard/bagdata.hpp"
#include "milhard/common.hpp"

namespace milhard {

struct DenseLayer {
    Matrix weight;  // out x in
    Vec bias;       // out
};

// Embedder layers; hidden layers use a rectifier, the last layer is linear
// and produces the M-dimensional embedding.
struct EmbedderParams {
    std::vector<DenseLayer> layers;
};

struct AttentionParams {
    Matrix u;  // L x M
    Vec v;     // L
};

struct ClassifierParams {
    Vec weight;       // M
    double bias = 0.0;
};

struct ModelDims {
    int feature_dim = 10;                // D
    int embed_dim = 32;                  // M
    int attention_dim = 16;              // L
    std::vector<int> hidden = {64};      // embedder hidden widths

    void validate() const;
};

// Parameter container shared by the model, its gradients and the Adam
// moment buffers. param_spans() enumerates every array in a fixed order.
struct MilParams {
    EmbedderParams embedder;
    AttentionParams attention;
    ClassifierParams classifier;

    static MilParams zeros_like(const MilParams& shape);
    std::vector<std::pair<double*, std::size_t>> param_spans();
    std::size_t param_count() const;
};

struct MilModel {
    MilParams params;
    ModelDims dims;
    double lambda = 2.0;  // adaptive multiplier, >= 1

    void validate() const;
};

struct ForwardTrace {
    // layer_acts[0] is the N x D input; each following entry is the output
    // of one embedder layer; the last is the N x M embedding matrix G.
    std::vector<Matrix> layer_acts;
    Matrix att_pre;    // N x L, U * g_j before softsign
    Matrix att_soft;   // N x L, softsign(att_pre)
    Vec scores;        // N raw attention scores
    Vec weights;       // N softmax weights, sums to 1
    std::vector<char> mask;  // pseudo-negative flags, 1 = below-average weight
    Vec pooled;        // M
    double logit = 0.0;
    double probability = 0.5;

    const Matrix& embeddings() const { return layer_acts.back(); }
    int pseudo_negative_count() const;
};

Matrix embed_instances(const MilModel& model, const Bag& bag);

// scores_j = v . softsign(U g_j); weights = stable softmax over scores.
void attention_weights(const AttentionParams& attn, const Matrix& embeddings, Vec& scores_out,
                       Vec& weights_out);

// mask_j = (w_j < mean(w)), strict, so uniform weights mask nothing.
std::vector<char> pseudo_negative_mask(const Vec& weights);

// z = sum_j w_j g_j with masked terms scaled by lambda, accumulated in
// ascending instance order. lambda = 1 reproduces the plain pooling exactly.
Vec adaptive_pool(const Matrix& embeddings, const Vec& weights, const std::vector<char>& mask,
                  double lambda);

// Plain attention pooling, sum_j w_j g_j in ascending order.
Vec plain_pool(const Matrix& embeddings, const Vec& weights);

ForwardTrace forward(const MilModel& model, const Bag& bag);

double bce_loss(double probability, int label);

// Exact gradients of the loss w.r.t. every parameter. The pseudo-negative
// mask is treated as a constant of the forward pass.
MilParams backward(const MilModel& model, const Bag& bag, const ForwardTrace& trace, int label);

// Central-difference check over every parameter; the mask is frozen from
// the unperturbed forward pass so the compared function is differentiable.
// Returns the max relative error |a-n| / max(|a|,|n|,1e-8).
double grad_check(const MilModel& model, const Bag& bag, int label, double eps);

// Model checkpoint (single JSON document, %.17g values for exact reload).
std::string checkpoint_to_json(const MilModel& model, std::uint64_t seed, int epoch);
MilModel checkpoint_from_json(const std::string& text, std::uint64_t* seed_out = nullptr,
                              int* epoch_out = nullptr);
void save_checkpoint(const MilModel& model, const std::string& path, std::uint64_t seed = 0,
                     int epoch = 0);
MilModel load_checkpoint(const std::string& path);

}  // namespace milhard
