#include "milhard/milnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace milhard {

using nlohmann::json;

void ModelDims::validate() const {
    if (feature_dim < 1) throw ConfigError("ModelDims.feature_dim must be >= 1");
    if (embed_dim < 1) throw ConfigError("ModelDims.embed_dim must be >= 1");
    if (attention_dim < 1) throw ConfigError("ModelDims.attention_dim must be >= 1");
    for (int h : hidden)
        if (h < 1) throw ConfigError("ModelDims.hidden widths must be >= 1");
}

MilParams MilParams::zeros_like(const MilParams& shape) {
    MilParams out;
    out.embedder.layers.reserve(shape.embedder.layers.size());
    for (const DenseLayer& l : shape.embedder.layers) {
        DenseLayer z;
        z.weight = Matrix(l.weight.rows, l.weight.cols);
        z.bias.assign(l.bias.size(), 0.0);
        out.embedder.layers.push_back(std::move(z));
    }
    out.attention.u = Matrix(shape.attention.u.rows, shape.attention.u.cols);
    out.attention.v.assign(shape.attention.v.size(), 0.0);
    out.classifier.weight.assign(shape.classifier.weight.size(), 0.0);
    out.classifier.bias = 0.0;
    return out;
}

std::vector<std::pair<double*, std::size_t>> MilParams::param_spans() {
    std::vector<std::pair<double*, std::size_t>> spans;
    for (DenseLayer& l : embedder.layers) {
        spans.emplace_back(l.weight.data.data(), l.weight.data.size());
        spans.emplace_back(l.bias.data(), l.bias.size());
    }
    spans.emplace_back(attention.u.data.data(), attention.u.data.size());
    spans.emplace_back(attention.v.data(), attention.v.size());
    spans.emplace_back(classifier.weight.data(), classifier.weight.size());
    spans.emplace_back(&classifier.bias, 1);
    return spans;
}

std::size_t MilParams::param_count() const {
    std::size_t n = 1;  // classifier bias
    for (const DenseLayer& l : embedder.layers) n += l.weight.data.size() + l.bias.size();
    n += attention.u.data.size() + attention.v.size() + classifier.weight.size();
    return n;
}

void MilModel::validate() const {
    dims.validate();
    if (lambda < 1.0) throw ConfigError("MilModel.lambda must be >= 1");
    const auto& layers = params.embedder.layers;
    if (layers.empty()) throw ConfigError("MilModel embedder has no layers");
    if (layers.front().weight.cols != static_cast<std::size_t>(dims.feature_dim))
        throw ConfigError("MilModel embedder input dim != feature_dim");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].bias.size() != layers[i].weight.rows)
            throw ConfigError("MilModel embedder layer bias/weight shape mismatch");
        if (i + 1 < layers.size() && layers[i + 1].weight.cols != layers[i].weight.rows)
            throw ConfigError("MilModel embedder layer dims are not chained");
    }
    if (layers.back().weight.rows != static_cast<std::size_t>(dims.embed_dim))
        throw ConfigError("MilModel embedder output dim != embed_dim");
    if (params.attention.u.rows != static_cast<std::size_t>(dims.attention_dim) ||
        params.attention.u.cols != static_cast<std::size_t>(dims.embed_dim))
        throw ConfigError("MilModel attention U shape mismatch");
    if (params.attention.v.size() != static_cast<std::size_t>(dims.attention_dim))
        throw ConfigError("MilModel attention v length mismatch");
    if (params.classifier.weight.size() != static_cast<std::size_t>(dims.embed_dim))
        throw ConfigError("MilModel classifier weight length mismatch");
}

int ForwardTrace::pseudo_negative_count() const {
    int n = 0;
    for (char m : mask) n += m != 0;
    return n;
}

namespace {

// y = W x + b, optionally rectified.
void dense_forward(const DenseLayer& layer, const double* x, double* y, bool rectify) {
    const std::size_t out_dim = layer.weight.rows;
    const std::size_t in_dim = layer.weight.cols;
    for (std::size_t r = 0; r < out_dim; ++r) {
        const double* w = layer.weight.row(r);
        double acc = layer.bias[r];
        for (std::size_t c = 0; c < in_dim; ++c) acc += w[c] * x[c];
        y[r] = rectify && acc < 0.0 ? 0.0 : acc;
    }
}

std::vector<Matrix> embed_with_trace(const MilModel& model, const Bag& bag) {
    const std::size_t n = bag.instances.size();
    const std::size_t d = static_cast<std::size_t>(model.dims.feature_dim);
    for (const Instance& inst : bag.instances)
        if (inst.size() != d)
            throw DataError("bag " + bag.bag_id + " instance dimension " +
                            std::to_string(inst.size()) + " != model feature_dim " +
                            std::to_string(d));

    std::vector<Matrix> acts;
    acts.reserve(model.params.embedder.layers.size() + 1);
    Matrix input(n, d);
    for (std::size_t j = 0; j < n; ++j)
        std::copy(bag.instances[j].begin(), bag.instances[j].end(), input.row(j));
    acts.push_back(std::move(input));

    const auto& layers = model.params.embedder.layers;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const bool rectify = l + 1 < layers.size();
        Matrix out(n, layers[l].weight.rows);
        for (std::size_t j = 0; j < n; ++j)
            dense_forward(layers[l], acts.back().row(j), out.row(j), rectify);
        acts.push_back(std::move(out));
    }
    return acts;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ForwardTrace forward_impl(const MilModel& model, const Bag& bag,
                          const std::vector<char>* fixed_mask) {
    if (bag.instances.empty()) throw DataError("bag " + bag.bag_id + " has no instances");
    ForwardTrace trace;
    trace.layer_acts = embed_with_trace(model, bag);

    // Same operation order as attention_weights(), with the pre/post softsign
    // activations retained for the backward pass.
    const Matrix& g = trace.layer_acts.back();
    const std::size_t n = g.rows;
    const std::size_t l_dim = model.params.attention.u.rows;
    trace.att_pre = Matrix(n, l_dim);
    trace.att_soft = Matrix(n, l_dim);
    trace.scores.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double* gj = g.row(j);
        for (std::size_t r = 0; r < l_dim; ++r) {
            const double* u = model.params.attention.u.row(r);
            double acc = 0.0;
            for (std::size_t c = 0; c < g.cols; ++c) acc += u[c] * gj[c];
            trace.att_pre.at(j, r) = acc;
            trace.att_soft.at(j, r) = acc / (1.0 + std::fabs(acc));
        }
        double score = 0.0;
        for (std::size_t r = 0; r < l_dim; ++r) score += model.params.attention.v[r] * trace.att_soft.at(j, r);
        trace.scores[j] = score;
    }
    trace.weights.assign(n, 0.0);
    const double max_score = *std::max_element(trace.scores.begin(), trace.scores.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        trace.weights[j] = std::exp(trace.scores[j] - max_score);
        sum += trace.weights[j];
    }
    for (std::size_t j = 0; j < n; ++j) trace.weights[j] /= sum;

    trace.mask = fixed_mask ? *fixed_mask : pseudo_negative_mask(trace.weights);
    trace.pooled = adaptive_pool(g, trace.weights, trace.mask, model.lambda);

    double logit = model.params.classifier.bias;
    for (std::size_t m = 0; m < trace.pooled.size(); ++m)
        logit += model.params.classifier.weight[m] * trace.pooled[m];
    trace.logit = logit;
    trace.probability = sigmoid(logit);
    return trace;
}

}  // namespace

Matrix embed_instances(const MilModel& model, const Bag& bag) {
    return embed_with_trace(model, bag).back();
}

void attention_weights(const AttentionParams& attn, const Matrix& embeddings, Vec& scores_out,
                       Vec& weights_out) {
    if (embeddings.cols != attn.u.cols)
        throw DataError("attention_weights: embedding dim != U columns");
    const std::size_t n = embeddings.rows;
    const std::size_t l_dim = attn.u.rows;
    scores_out.assign(n, 0.0);
    Vec soft(l_dim);
    for (std::size_t j = 0; j < n; ++j) {
        const double* gj = embeddings.row(j);
        for (std::size_t r = 0; r < l_dim; ++r) {
            const double* u = attn.u.row(r);
            double acc = 0.0;
            for (std::size_t c = 0; c < embeddings.cols; ++c) acc += u[c] * gj[c];
            soft[r] = acc / (1.0 + std::fabs(acc));
        }
        double score = 0.0;
        for (std::size_t r = 0; r < l_dim; ++r) score += attn.v[r] * soft[r];
        scores_out[j] = score;
    }

    // max-subtracted softmax
    weights_out.assign(n, 0.0);
    const double max_score = *std::max_element(scores_out.begin(), scores_out.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        weights_out[j] = std::exp(scores_out[j] - max_score);
        sum += weights_out[j];
    }
    for (std::size_t j = 0; j < n; ++j) weights_out[j] /= sum;
}

std::vector<char> pseudo_negative_mask(const Vec& weights) {
    double sum = 0.0;
    for (double w : weights) sum += w;
    const double mean = sum / static_cast<double>(weights.size());
    std::vector<char> mask(weights.size(), 0);
    for (std::size_t j = 0; j < weights.size(); ++j)
        mask[j] = weights[j] < mean ? 1 : 0;  // strict: uniform bags mask nothing
    return mask;
}

Vec adaptive_pool(const Matrix& embeddings, const Vec& weights, const std::vector<char>& mask,
                  double lambda) {
    if (weights.size() != embeddings.rows || mask.size() != embeddings.rows)
        throw DataError("adaptive_pool: length mismatch");
    Vec z(embeddings.cols, 0.0);
    for (std::size_t j = 0; j < embeddings.rows; ++j) {
        const double coeff = mask[j] ? lambda * weights[j] : weights[j];
        const double* gj = embeddings.row(j);
        for (std::size_t m = 0; m < z.size(); ++m) z[m] += coeff * gj[m];
    }
    return z;
}

Vec plain_pool(const Matrix& embeddings, const Vec& weights) {
    if (weights.size() != embeddings.rows) throw DataError("plain_pool: length mismatch");
    Vec z(embeddings.cols, 0.0);
    for (std::size_t j = 0; j < embeddings.rows; ++j) {
        const double* gj = embeddings.row(j);
        for (std::size_t m = 0; m < z.size(); ++m) z[m] += weights[j] * gj[m];
    }
    return z;
}

ForwardTrace forward(const MilModel& model, const Bag& bag) {
    return forward_impl(model, bag, nullptr);
}

double bce_loss(double probability, int label) {
    const double p = std::clamp(probability, 1e-12, 1.0 - 1e-12);
    return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

MilParams backward(const MilModel& model, const Bag& bag, const ForwardTrace& trace, int label) {
    const std::size_t n = bag.instances.size();
    if (trace.weights.size() != n || trace.mask.size() != n ||
        trace.layer_acts.front().rows != n)
        throw DataError("backward: trace does not match bag");
    if (trace.layer_acts.size() != model.params.embedder.layers.size() + 1)
        throw DataError("backward: trace does not match model depth");

    MilParams grads = MilParams::zeros_like(model.params);
    const Matrix& g = trace.embeddings();
    const std::size_t m_dim = g.cols;
    const std::size_t l_dim = model.params.attention.u.rows;

    const double dlogit = trace.probability - static_cast<double>(label);
    grads.classifier.bias = dlogit;
    for (std::size_t m = 0; m < m_dim; ++m)
        grads.classifier.weight[m] = dlogit * trace.pooled[m];

    Vec dz(m_dim);
    for (std::size_t m = 0; m < m_dim; ++m)
        dz[m] = dlogit * model.params.classifier.weight[m];

    // Through the pooled sum; the mask itself carries no gradient.
    Vec dweights(n, 0.0);
    Matrix dg(n, m_dim);
    for (std::size_t j = 0; j < n; ++j) {
        const double coeff = trace.mask[j] ? model.lambda : 1.0;
        const double* gj = g.row(j);
        double acc = 0.0;
        for (std::size_t m = 0; m < m_dim; ++m) acc += gj[m] * dz[m];
        dweights[j] = coeff * acc;
        for (std::size_t m = 0; m < m_dim; ++m)
            dg.at(j, m) = coeff * trace.weights[j] * dz[m];
    }

    // Softmax: ds_j = w_j (dw_j - sum_k w_k dw_k).
    double weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) weighted += trace.weights[j] * dweights[j];
    Vec dscores(n);
    for (std::size_t j = 0; j < n; ++j)
        dscores[j] = trace.weights[j] * (dweights[j] - weighted);

    // Attention head: score_j = v . softsign(U g_j).
    Vec da(l_dim);
    for (std::size_t j = 0; j < n; ++j) {
        const double ds = dscores[j];
        const double* soft = trace.att_soft.row(j);
        const double* pre = trace.att_pre.row(j);
        for (std::size_t r = 0; r < l_dim; ++r) {
            grads.attention.v[r] += ds * soft[r];
            const double denom = 1.0 + std::fabs(pre[r]);
            da[r] = ds * model.params.attention.v[r] / (denom * denom);
        }
        const double* gj = g.row(j);
        for (std::size_t r = 0; r < l_dim; ++r) {
            double* du = grads.attention.u.row(r);
            for (std::size_t c = 0; c < m_dim; ++c) du[c] += da[r] * gj[c];
        }
        double* dgj = dg.row(j);
        for (std::size_t r = 0; r < l_dim; ++r) {
            const double* u = model.params.attention.u.row(r);
            for (std::size_t c = 0; c < m_dim; ++c) dgj[c] += da[r] * u[c];
        }
    }

    // Embedder backprop, last layer linear, hidden layers rectified.
    const auto& layers = model.params.embedder.layers;
    Matrix delta = std::move(dg);
    for (std::size_t li = layers.size(); li-- > 0;) {
        const Matrix& act_in = trace.layer_acts[li];
        DenseLayer& lg = grads.embedder.layers[li];
        const DenseLayer& lp = layers[li];
        for (std::size_t j = 0; j < n; ++j) {
            const double* dj = delta.row(j);
            const double* xj = act_in.row(j);
            for (std::size_t r = 0; r < lp.weight.rows; ++r) {
                lg.bias[r] += dj[r];
                double* wr = lg.weight.row(r);
                for (std::size_t c = 0; c < lp.weight.cols; ++c) wr[c] += dj[r] * xj[c];
            }
        }
        if (li == 0) break;
        Matrix prev(n, lp.weight.cols);
        for (std::size_t j = 0; j < n; ++j) {
            const double* dj = delta.row(j);
            double* pj = prev.row(j);
            for (std::size_t r = 0; r < lp.weight.rows; ++r) {
                const double* wr = lp.weight.row(r);
                for (std::size_t c = 0; c < lp.weight.cols; ++c) pj[c] += dj[r] * wr[c];
            }
            // act_in is the rectifier output of the previous layer.
            const double* xj = act_in.row(j);
            for (std::size_t c = 0; c < lp.weight.cols; ++c)
                if (xj[c] <= 0.0) pj[c] = 0.0;
        }
        delta = std::move(prev);
    }
    return grads;
}

double grad_check(const MilModel& model, const Bag& bag, int label, double eps) {
    if (eps < 1e-7 || eps > 1e-3)
        throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");
    MilModel probe = model;
    const ForwardTrace trace = forward(probe, bag);
    const MilParams analytic = backward(probe, bag, trace, label);
    const std::vector<char> frozen_mask = trace.mask;

    MilParams analytic_copy = analytic;  // span enumeration needs mutable access
    auto param_spans = probe.params.param_spans();
    auto grad_spans = analytic_copy.param_spans();

    double max_rel = 0.0;
    for (std::size_t s = 0; s < param_spans.size(); ++s) {
        double* p = param_spans[s].first;
        const double* a = grad_spans[s].first;
        for (std::size_t i = 0; i < param_spans[s].second; ++i) {
            const double saved = p[i];
            p[i] = saved + eps;
            const double loss_plus =
                bce_loss(forward_impl(probe, bag, &frozen_mask).probability, label);
            p[i] = saved - eps;
            const double loss_minus =
                bce_loss(forward_impl(probe, bag, &frozen_mask).probability, label);
            p[i] = saved;
            const double numeric = (loss_plus - loss_minus) / (2.0 * eps);
            const double rel = std::fabs(a[i] - numeric) /
                               std::max({std::fabs(a[i]), std::fabs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

void append_vec(std::string& out, const Vec& v) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += format_g17(v[i]);
    }
    out += ']';
}

void append_matrix(std::string& out, const Matrix& m) {
    out += '[';
    for (std::size_t r = 0; r < m.rows; ++r) {
        if (r) out += ", ";
        out += '[';
        for (std::size_t c = 0; c < m.cols; ++c) {
            if (c) out += ", ";
            out += format_g17(m.at(r, c));
        }
        out += ']';
    }
    out += ']';
}

Matrix matrix_from_json(const json& j) {
    Matrix m;
    m.rows = j.size();
    m.cols = m.rows > 0 ? j.at(0).size() : 0;
    m.data.reserve(m.rows * m.cols);
    for (const json& row : j) {
        if (row.size() != m.cols) throw DataError("checkpoint: ragged matrix");
        for (const json& v : row) m.data.push_back(v.get<double>());
    }
    return m;
}

}  // namespace

std::string checkpoint_to_json(const MilModel& model, std::uint64_t seed, int epoch) {
    std::string out = "{\n  \"dims\": {\"feature_dim\": ";
    out += std::to_string(model.dims.feature_dim);
    out += ", \"embed_dim\": " + std::to_string(model.dims.embed_dim);
    out += ", \"attention_dim\": " + std::to_string(model.dims.attention_dim);
    out += ", \"hidden\": [";
    for (std::size_t i = 0; i < model.dims.hidden.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(model.dims.hidden[i]);
    }
    out += "]},\n  \"lambda\": " + format_g17(model.lambda);
    out += ",\n  \"seed\": " + std::to_string(seed);
    out += ",\n  \"epoch\": " + std::to_string(epoch);
    out += ",\n  \"embedder\": [";
    for (std::size_t l = 0; l < model.params.embedder.layers.size(); ++l) {
        if (l) out += ", ";
        out += "{\"weight\": ";
        append_matrix(out, model.params.embedder.layers[l].weight);
        out += ", \"bias\": ";
        append_vec(out, model.params.embedder.layers[l].bias);
        out += '}';
    }
    out += "],\n  \"attention_u\": ";
    append_matrix(out, model.params.attention.u);
    out += ",\n  \"attention_v\": ";
    append_vec(out, model.params.attention.v);
    out += ",\n  \"classifier_w\": ";
    append_vec(out, model.params.classifier.weight);
    out += ",\n  \"classifier_b\": " + format_g17(model.params.classifier.bias);
    out += "\n}\n";
    return out;
}

MilModel checkpoint_from_json(const std::string& text, std::uint64_t* seed_out, int* epoch_out) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("checkpoint parse error: ") + e.what());
    }
    try {
        MilModel model;
        const json& dims = doc.at("dims");
        model.dims.feature_dim = dims.at("feature_dim").get<int>();
        model.dims.embed_dim = dims.at("embed_dim").get<int>();
        model.dims.attention_dim = dims.at("attention_dim").get<int>();
        model.dims.hidden = dims.at("hidden").get<std::vector<int>>();
        model.lambda = doc.at("lambda").get<double>();
        for (const json& layer : doc.at("embedder")) {
            DenseLayer l;
            l.weight = matrix_from_json(layer.at("weight"));
            l.bias = layer.at("bias").get<Vec>();
            model.params.embedder.layers.push_back(std::move(l));
        }
        model.params.attention.u = matrix_from_json(doc.at("attention_u"));
        model.params.attention.v = doc.at("attention_v").get<Vec>();
        model.params.classifier.weight = doc.at("classifier_w").get<Vec>();
        model.params.classifier.bias = doc.at("classifier_b").get<double>();
        if (seed_out) *seed_out = doc.value("seed", std::uint64_t{0});
        if (epoch_out) *epoch_out = doc.value("epoch", 0);
        model.validate();
        return model;
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint: bad document: ") + e.what());
    }
}

void save_checkpoint(const MilModel& model, const std::string& path, std::uint64_t seed,
                     int epoch) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot open for writing: " + path);
    file << checkpoint_to_json(model, seed, epoch);
    if (!file) throw DataError("write failed: " + path);
}

MilModel load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open: " + path);
    std::stringstream ss;
    ss << file.rdbuf();
    return checkpoint_from_json(ss.str());
}

}  // namespace milhard
