#include "milhard/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace milhard {

void AdamHyper::validate() const {
    if (!(lr > 0.0)) throw ConfigError("AdamHyper.lr must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("AdamHyper.beta1 must lie in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("AdamHyper.beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("AdamHyper.eps must be > 0");
    if (weight_decay < 0.0) throw ConfigError("AdamHyper.weight_decay must be >= 0");
}

AdamState AdamState::for_params(const MilParams& shape) {
    AdamState state;
    state.m = MilParams::zeros_like(shape);
    state.v = MilParams::zeros_like(shape);
    state.step = 0;
    return state;
}

void adam_step(MilParams& params, const MilParams& grads, AdamState& state,
               const AdamHyper& hyper) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));

    auto p_spans = params.param_spans();
    MilParams grads_copy = grads;  // span enumeration needs mutable access
    auto g_spans = grads_copy.param_spans();
    auto m_spans = state.m.param_spans();
    auto v_spans = state.v.param_spans();
    if (p_spans.size() != g_spans.size()) throw ConfigError("adam_step: shape mismatch");

    for (std::size_t s = 0; s < p_spans.size(); ++s) {
        double* p = p_spans[s].first;
        const double* g = g_spans[s].first;
        double* m = m_spans[s].first;
        double* v = v_spans[s].first;
        const std::size_t len = p_spans[s].second;
        if (g_spans[s].second != len || m_spans[s].second != len || v_spans[s].second != len)
            throw ConfigError("adam_step: shape mismatch");
        for (std::size_t i = 0; i < len; ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= hyper.lr * (mhat / (std::sqrt(vhat) + hyper.eps) +
                                hyper.weight_decay * p[i]);
        }
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("TrainConfig.epochs must be >= 1");
    adam.validate();
}

MilModel init_model(const ModelDims& dims, double lambda, std::uint64_t seed) {
    dims.validate();
    if (lambda < 1.0) throw ConfigError("init_model: lambda must be >= 1");

    std::mt19937_64 rng(seed);
    auto glorot = [&rng](Matrix& w, std::size_t fan_in, std::size_t fan_out) {
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-a, a);
        for (double& x : w.data) x = dist(rng);
    };

    MilModel model;
    model.dims = dims;
    model.lambda = lambda;

    std::vector<int> widths;
    widths.push_back(dims.feature_dim);
    widths.insert(widths.end(), dims.hidden.begin(), dims.hidden.end());
    widths.push_back(dims.embed_dim);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        DenseLayer layer;
        layer.weight = Matrix(widths[l + 1], widths[l]);
        layer.bias.assign(widths[l + 1], 0.0);
        glorot(layer.weight, widths[l], widths[l + 1]);
        model.params.embedder.layers.push_back(std::move(layer));
    }

    model.params.attention.u = Matrix(dims.attention_dim, dims.embed_dim);
    glorot(model.params.attention.u, dims.embed_dim, dims.attention_dim);

    Matrix v_mat(1, dims.attention_dim);
    glorot(v_mat, dims.attention_dim, 1);
    model.params.attention.v = std::move(v_mat.data);

    Matrix c_mat(1, dims.embed_dim);
    glorot(c_mat, dims.embed_dim, 1);
    model.params.classifier.weight = std::move(c_mat.data);
    model.params.classifier.bias = 0.0;

    model.validate();
    return model;
}

TrainReport train(MilModel& model, const Dataset& data, const TrainConfig& config) {
    config.validate();
    model.validate();
    if (data.bags.empty()) throw DataError("train: dataset has no bags");

    AdamState state = AdamState::for_params(model.params);
    TrainReport report;
    report.best_loss = std::numeric_limits<double>::infinity();
    MilParams best = model.params;

    std::vector<std::size_t> order(data.bags.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::mt19937_64 rng(derive_seed(config.seed, "epoch", static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t idx : order) {
            const Bag& bag = data.bags[idx];
            const ForwardTrace trace = forward(model, bag);
            const double loss = bce_loss(trace.probability, bag.label);
            if (!std::isfinite(loss)) {
                throw DataError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                ", bag " + bag.bag_id);
            }
            loss_sum += loss;
            const MilParams grads = backward(model, bag, trace, bag.label);
            adam_step(model.params, grads, state, config.adam);
        }
        const double mean_loss = loss_sum / static_cast<double>(data.bags.size());
        report.epoch_losses.push_back(mean_loss);
        if (mean_loss < report.best_loss) {
            report.best_loss = mean_loss;
            report.best_epoch = epoch;
            best = model.params;
        }
        MILHARD_LOG_DEBUG("epoch " << epoch << " mean loss " << mean_loss);
    }

    if (config.restore_best) model.params = best;
    MILHARD_LOG_INFO("trained " << config.epochs << " epochs, best epoch "
                                << report.best_epoch << " loss " << report.best_loss);
    return report;
}

}  // namespace milhard
