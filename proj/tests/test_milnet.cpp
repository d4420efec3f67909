#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "milhard/milnet.hpp"
#include "milhard/optim.hpp"

using namespace milhard;

namespace {

Bag random_bag(int n, int d, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Bag bag;
    bag.bag_id = "r";
    bag.label = 0;
    for (int i = 0; i < n; ++i) {
        Instance inst(d);
        for (double& x : inst) x = dist(rng);
        bag.instances.push_back(std::move(inst));
    }
    return bag;
}

void zero_params(MilModel& model) {
    for (auto [ptr, len] : model.params.param_spans())
        std::fill(ptr, ptr + len, 0.0);
}

bool params_equal(const MilParams& a, const MilParams& b) {
    MilParams ca = a;
    MilParams cb = b;
    auto sa = ca.param_spans();
    auto sb = cb.param_spans();
    if (sa.size() != sb.size()) return false;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i].second != sb[i].second) return false;
        for (std::size_t j = 0; j < sa[i].second; ++j)
            if (sa[i].first[j] != sb[i].first[j]) return false;
    }
    return true;
}

ModelDims small_dims(int d, int m, int l, std::vector<int> hidden = {}) {
    ModelDims dims;
    dims.feature_dim = d;
    dims.embed_dim = m;
    dims.attention_dim = l;
    dims.hidden = std::move(hidden);
    return dims;
}

}  // namespace

TEST_CASE("embedder maps zero parameters to zero and identity to the input") {
    std::mt19937_64 rng(1);
    const Bag bag = random_bag(4, 3, rng);

    SUBCASE("zero parameters") {
        MilModel model = init_model(small_dims(3, 2, 2, {5}), 2.0, 9);
        zero_params(model);
        const Matrix g = embed_instances(model, bag);
        REQUIRE(g.rows == 4);
        REQUIRE(g.cols == 2);
        for (double x : g.data) CHECK(x == 0.0);
    }

    SUBCASE("identity single layer") {
        MilModel model = init_model(small_dims(3, 3, 2), 2.0, 9);
        auto& layer = model.params.embedder.layers[0];
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c) layer.weight.at(r, c) = r == c ? 1.0 : 0.0;
        std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
        const Matrix g = embed_instances(model, bag);
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 3; ++c) CHECK(g.at(r, c) == bag.instances[r][c]);
    }
}

TEST_CASE("embedder matches a hand-rolled layer-by-layer evaluation") {
    std::mt19937_64 rng(2);
    const Bag bag = random_bag(3, 3, rng);
    const MilModel model = init_model(small_dims(3, 2, 2, {4}), 2.0, 77);

    const Matrix g = embed_instances(model, bag);
    for (std::size_t i = 0; i < bag.size(); ++i) {
        // Hidden layer with rectifier, then linear output layer.
        const auto& l0 = model.params.embedder.layers[0];
        const auto& l1 = model.params.embedder.layers[1];
        Vec h(l0.weight.rows);
        for (std::size_t r = 0; r < l0.weight.rows; ++r) {
            double acc = l0.bias[r];
            for (std::size_t c = 0; c < l0.weight.cols; ++c)
                acc += l0.weight.at(r, c) * bag.instances[i][c];
            h[r] = std::max(0.0, acc);
        }
        for (std::size_t r = 0; r < l1.weight.rows; ++r) {
            double acc = l1.bias[r];
            for (std::size_t c = 0; c < l1.weight.cols; ++c) acc += l1.weight.at(r, c) * h[c];
            CHECK(g.at(i, r) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("attention weights are a stable softmax over softsign scores") {
    SUBCASE("singleton weight is exactly one") {
        AttentionParams attn;
        attn.u = Matrix(2, 3, 0.25);
        attn.v = {1.0, -2.0};
        Matrix g(1, 3, 0.7);
        Vec scores, weights;
        attention_weights(attn, g, scores, weights);
        REQUIRE(weights.size() == 1);
        CHECK(weights[0] == 1.0);
    }
    SUBCASE("identical instances share weight equally") {
        AttentionParams attn;
        attn.u = Matrix(2, 2);
        attn.u.at(0, 0) = 0.3;
        attn.u.at(1, 1) = -0.8;
        attn.v = {0.5, 1.5};
        Matrix g(2, 2);
        g.at(0, 0) = g.at(1, 0) = 0.4;
        g.at(0, 1) = g.at(1, 1) = -1.1;
        Vec scores, weights;
        attention_weights(attn, g, scores, weights);
        CHECK(weights[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(weights[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("scores ln2 and 0 soften to 2/3 and 1/3") {
        // With u = [[1]], v = [1] and a scalar embedding x >= 0 the score is
        // softsign(x) = x/(1+x); x = ln2/(1-ln2) makes it exactly ln 2.
        AttentionParams attn;
        attn.u = Matrix(1, 1, 1.0);
        attn.v = {1.0};
        const double ln2 = std::log(2.0);
        Matrix g(2, 1);
        g.at(0, 0) = ln2 / (1.0 - ln2);
        g.at(1, 0) = 0.0;
        Vec scores, weights;
        attention_weights(attn, g, scores, weights);
        CHECK(scores[0] == doctest::Approx(ln2).epsilon(1e-12));
        CHECK(scores[1] == 0.0);
        CHECK(weights[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        CHECK(weights[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("below-average weights form the pseudo-negative mask") {
    SUBCASE("uniform weights mask nothing") {
        const auto mask = pseudo_negative_mask({0.25, 0.25, 0.25, 0.25});
        CHECK(std::count(mask.begin(), mask.end(), 1) == 0);
    }
    SUBCASE("two weights split at the mean") {
        const auto mask = pseudo_negative_mask({0.6, 0.4});
        REQUIRE(mask.size() == 2);
        CHECK(mask[0] == 0);
        CHECK(mask[1] == 1);
    }
    SUBCASE("three weights compare against one third") {
        const auto mask = pseudo_negative_mask({0.5, 0.3, 0.2});
        CHECK(mask[0] == 0);
        CHECK(mask[1] == 1);
        CHECK(mask[2] == 1);
    }
}

TEST_CASE("adaptive pooling scales masked contributions by lambda") {
    Matrix g(2, 2);
    g.at(0, 0) = 1.0;
    g.at(1, 1) = 1.0;
    const Vec w = {0.6, 0.4};

    SUBCASE("lambda one reproduces the plain weighted average bitwise") {
        const std::vector<char> mask = {0, 1};
        const Vec adaptive = adaptive_pool(g, w, mask, 1.0);
        const Vec plain = plain_pool(g, w);
        CHECK(adaptive == plain);
    }
    SUBCASE("masked second instance doubled") {
        const std::vector<char> mask = {0, 1};
        const Vec z = adaptive_pool(g, w, mask, 2.0);
        CHECK(z[0] == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(z[1] == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("all-masked pooling is lambda times the plain pool") {
        const std::vector<char> mask = {1, 1};
        const Vec z = adaptive_pool(g, w, mask, 2.0);
        const Vec plain = plain_pool(g, w);
        CHECK(z[0] == doctest::Approx(2.0 * plain[0]).epsilon(1e-15));
        CHECK(z[1] == doctest::Approx(2.0 * plain[1]).epsilon(1e-15));
    }
}

TEST_CASE("adaptive minus plain pooling equals the scaled masked sum") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.1, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 6);
        const int m = 1 + static_cast<int>(rng() % 4);
        Matrix g(n, m);
        for (double& x : g.data) x = unit(rng) - 0.5;
        Vec w(n);
        double sum = 0.0;
        for (double& x : w) sum += (x = unit(rng));
        for (double& x : w) x /= sum;
        const auto mask = pseudo_negative_mask(w);
        const double lambda = 2.5;

        const Vec adaptive = adaptive_pool(g, w, mask, lambda);
        const Vec plain = plain_pool(g, w);
        for (int c = 0; c < m; ++c) {
            double masked_sum = 0.0;
            for (int j = 0; j < n; ++j)
                if (mask[j]) masked_sum += w[j] * g.at(j, c);
            CHECK(adaptive[c] - plain[c] ==
                  doctest::Approx((lambda - 1.0) * masked_sum).epsilon(1e-9));
        }
    }
}

TEST_CASE("forward composes the public stages") {
    std::mt19937_64 rng(4);
    const Bag bag = random_bag(5, 3, rng);

    SUBCASE("zero classifier scores one half") {
        MilModel model = init_model(small_dims(3, 4, 2, {4}), 2.0, 5);
        std::fill(model.params.classifier.weight.begin(), model.params.classifier.weight.end(),
                  0.0);
        model.params.classifier.bias = 0.0;
        CHECK(forward(model, bag).probability == 0.5);
    }

    SUBCASE("singleton bag pools its own embedding unscaled") {
        const MilModel model = init_model(small_dims(3, 4, 2, {4}), 2.0, 5);
        Bag solo;
        solo.bag_id = "solo";
        solo.label = 1;
        solo.instances.push_back(bag.instances[0]);
        const ForwardTrace trace = forward(model, solo);
        CHECK(trace.weights == Vec{1.0});
        CHECK(trace.pseudo_negative_count() == 0);
        const Matrix g = embed_instances(model, solo);
        for (std::size_t c = 0; c < g.cols; ++c) CHECK(trace.pooled[c] == g.at(0, c));
    }

    SUBCASE("probability matches step-by-step recomputation") {
        const MilModel model = init_model(small_dims(3, 4, 2, {4}), 2.0, 6);
        const ForwardTrace trace = forward(model, bag);

        const Matrix g = embed_instances(model, bag);
        Vec scores, weights;
        attention_weights(model.params.attention, g, scores, weights);
        const auto mask = pseudo_negative_mask(weights);
        const Vec z = adaptive_pool(g, weights, mask, model.lambda);
        double logit = model.params.classifier.bias;
        for (std::size_t c = 0; c < z.size(); ++c)
            logit += model.params.classifier.weight[c] * z[c];
        const double p = 1.0 / (1.0 + std::exp(-logit));

        CHECK(trace.probability == doctest::Approx(p).epsilon(1e-12));
        CHECK(trace.logit == doctest::Approx(logit).epsilon(1e-12));
        REQUIRE(trace.mask.size() == mask.size());
        for (std::size_t j = 0; j < mask.size(); ++j) CHECK(trace.mask[j] == mask[j]);
        CHECK(trace.pseudo_negative_count() ==
              static_cast<int>(std::count(mask.begin(), mask.end(), 1)));
    }
}

TEST_CASE("forward weights always sum to one and ignore instance order") {
    std::mt19937_64 rng(7);
    const MilModel model = init_model(small_dims(4, 3, 2, {6}), 2.0, 12);
    for (int trial = 0; trial < 100; ++trial) {
        Bag bag = random_bag(2 + static_cast<int>(rng() % 7), 4, rng);
        const ForwardTrace trace = forward(model, bag);
        CHECK(std::accumulate(trace.weights.begin(), trace.weights.end(), 0.0) ==
              doctest::Approx(1.0).epsilon(1e-9));

        std::shuffle(bag.instances.begin(), bag.instances.end(), rng);
        const ForwardTrace shuffled = forward(model, bag);
        CHECK(std::abs(shuffled.probability - trace.probability) < 1e-9);
    }
}

TEST_CASE("lambda one makes the whole pipeline match plain pooling bitwise") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const MilModel model =
            init_model(small_dims(3, 3, 2, {4}), 1.0, 100 + static_cast<std::uint64_t>(trial));
        const Bag bag = random_bag(1 + static_cast<int>(rng() % 8), 3, rng);
        const ForwardTrace trace = forward(model, bag);
        const Matrix g = embed_instances(model, bag);
        Vec scores, weights;
        attention_weights(model.params.attention, g, scores, weights);
        const Vec plain = plain_pool(g, weights);
        CHECK(trace.pooled == plain);
    }
}

TEST_CASE("cross-entropy loss follows the clamped formula") {
    CHECK(bce_loss(0.5, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(0.5, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(1.0 - 1e-12, 1) < 1e-9);
    CHECK(bce_loss(0.9, 0) == doctest::Approx(2.302585).epsilon(1e-6));
}

TEST_CASE("backward cuts the chain at a zero classifier and fits the bias identity") {
    std::mt19937_64 rng(9);
    const Bag bag = random_bag(5, 3, rng);

    SUBCASE("zero classifier weight silences upstream gradients") {
        MilModel model = init_model(small_dims(3, 4, 2, {4}), 2.0, 21);
        std::fill(model.params.classifier.weight.begin(), model.params.classifier.weight.end(),
                  0.0);
        model.params.classifier.bias = 0.3;
        const ForwardTrace trace = forward(model, bag);
        MilParams grads = backward(model, bag, trace, 1);
        for (const auto& layer : grads.embedder.layers) {
            for (double gw : layer.weight.data) CHECK(gw == 0.0);
            for (double gb : layer.bias) CHECK(gb == 0.0);
        }
        for (double gu : grads.attention.u.data) CHECK(gu == 0.0);
        for (double gv : grads.attention.v) CHECK(gv == 0.0);
    }

    SUBCASE("bias gradient is probability minus label") {
        const MilModel model = init_model(small_dims(3, 4, 2, {4}), 2.0, 22);
        const ForwardTrace trace = forward(model, bag);
        const MilParams g1 = backward(model, bag, trace, 1);
        CHECK(g1.classifier.bias == doctest::Approx(trace.probability - 1.0).epsilon(1e-12));
        const MilParams g0 = backward(model, bag, trace, 0);
        CHECK(g0.classifier.bias == doctest::Approx(trace.probability).epsilon(1e-12));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    std::mt19937_64 rng(10);

    SUBCASE("linear identity-sized model is near machine precision") {
        const MilModel model = init_model(small_dims(2, 2, 2), 2.0, 31);
        const Bag bag = random_bag(4, 2, rng);
        CHECK(grad_check(model, bag, 1, 1e-5) < 1e-6);
    }

    SUBCASE("random small model stays under the tolerance") {
        const MilModel model = init_model(small_dims(3, 4, 2, {5}), 2.0, 32);
        const Bag bag = random_bag(5, 3, rng);
        CHECK(grad_check(model, bag, 0, 1e-5) < 1e-4);
        CHECK(grad_check(model, bag, 1, 1e-5) < 1e-4);
    }

    SUBCASE("epsilon outside the supported range is rejected") {
        const MilModel model = init_model(small_dims(2, 2, 2), 2.0, 33);
        const Bag bag = random_bag(3, 2, rng);
        CHECK_THROWS_AS(grad_check(model, bag, 1, 1e-8), ConfigError);
        CHECK_THROWS_AS(grad_check(model, bag, 1, 1e-2), ConfigError);
    }
}

TEST_CASE("checkpoints reload bit-identically") {
    const MilModel model = init_model(small_dims(4, 3, 2, {5}), 2.0, 55);
    const std::string text = checkpoint_to_json(model, 55, 17);
    std::uint64_t seed = 0;
    int epoch = -1;
    const MilModel back = checkpoint_from_json(text, &seed, &epoch);
    CHECK(seed == 55);
    CHECK(epoch == 17);
    CHECK(back.lambda == model.lambda);
    CHECK(back.dims.feature_dim == model.dims.feature_dim);
    CHECK(back.dims.embed_dim == model.dims.embed_dim);
    CHECK(back.dims.attention_dim == model.dims.attention_dim);
    CHECK(back.dims.hidden == model.dims.hidden);
    CHECK(params_equal(back.params, model.params));

    const std::string again = checkpoint_to_json(back, seed, epoch);
    CHECK(again == text);
}

TEST_CASE("model validation enforces lambda and dimension consistency") {
    CHECK_THROWS_AS(init_model(small_dims(3, 2, 2), 0.5, 1), ConfigError);
    ModelDims bad = small_dims(0, 2, 2);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
