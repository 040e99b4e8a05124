#include "gctm/checkpoint.hpp"
#include "gctm/nn.hpp"
#include "gctm/verify.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace gctm;

namespace {

std::vector<double> to_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Nn, ParameterCountMatchesLayout) {
    TimeEmbedding emb{3, 1.0};
    auto dims = mlp_layer_dims(2, 5, 2, emb);
    EXPECT_EQ(dims, (std::vector<int>{14, 5, 5, 2}));
    EXPECT_EQ(parameter_count(dims), static_cast<std::size_t>(15 * 5 + 6 * 5 + 6 * 2));
    auto p = init_params(dims, emb, 1);
    EXPECT_EQ(p.weights.size(), parameter_count(dims));
    EXPECT_EQ(p.ema_weights, p.weights);
    EXPECT_DOUBLE_EQ(p.ema_decay, 0.999);
}

TEST(Nn, EmbeddingDimension) {
    TimeEmbedding emb{5, 1.0};
    EXPECT_EQ(emb.dim(), 20);
}

TEST(Nn, ZeroWeightsGiveZeroOutput) {
    TimeEmbedding emb{4, 1.0};
    auto p = init_params(mlp_layer_dims(2, 16, 3, emb), emb, 3);
    std::fill(p.weights.begin(), p.weights.end(), 0.0f);
    Points x = Points::Random(7, 2);
    auto t = filled(7, 0.3), s = filled(7, 0.1);
    EXPECT_EQ(forward(p, x, t, s).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Nn, ForwardIsDeterministic) {
    TimeEmbedding emb{4, 1.0};
    auto p = init_params(mlp_layer_dims(2, 32, 3, emb), emb, 11);
    Rng rng(5);
    Points x = standard_normal(9, 2, rng);
    auto t = filled(9, 0.7), s = filled(9, 0.2);
    Points a = forward(p, x, t, s), b = forward(p, x, t, s);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
}

TEST(Nn, ForwardMatchesNaiveOracle) {
    TimeEmbedding emb{4, 1.0};
    auto dims = mlp_layer_dims(2, 16, 3, emb);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto p = init_params(dims, emb, seed);
        const auto w = to_double(p.weights);
        NetworkView<double> net(dims, emb, w);
        Rng rng(seed + 100);
        Points x = standard_normal(4, 2, rng);
        auto t = filled(4, 0.5), s = filled(4, 0.5);
        Points out = net.forward(x, t, s);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            auto ref = naive_forward<double>(dims, w, emb.num_frequencies, emb.scale, {x(i, 0), x(i, 1)}, 0.5, 0.5);
            EXPECT_NEAR(out(i, 0), ref[0], 1e-6);
            EXPECT_NEAR(out(i, 1), ref[1], 1e-6);
        }
    }
}

TEST(Nn, RejectsBadShapesAndTimes) {
    TimeEmbedding emb{2, 1.0};
    auto p = init_params(mlp_layer_dims(2, 4, 1, emb), emb, 0);
    Points x = Points::Zero(3, 3);
    auto t = filled(3, 0.5);
    EXPECT_THROW(forward(p, x, t, t), std::invalid_argument);
    Points x2 = Points::Zero(3, 2);
    auto short_t = filled(2, 0.5);
    EXPECT_THROW(forward(p, x2, short_t, t), std::invalid_argument);
    auto bad_t = filled(3, 1.5);
    EXPECT_THROW(forward(p, x2, bad_t, t), std::invalid_argument);
    Points cot = Points::Zero(2, 2);
    EXPECT_THROW(backward(p, x2, t, t, cot), std::invalid_argument);
}

TEST(Nn, NonFiniteWeightsFault) {
    TimeEmbedding emb{2, 1.0};
    auto p = init_params(mlp_layer_dims(2, 4, 1, emb), emb, 0);
    p.weights[3] = std::numeric_limits<float>::quiet_NaN();
    Points x = Points::Zero(1, 2);
    auto t = filled(1, 0.5);
    EXPECT_THROW(forward(p, x, t, t), Fault);
}

TEST(Nn, ZeroCotangentGivesZeroGradient) {
    TimeEmbedding emb{2, 1.0};
    auto p = init_params(mlp_layer_dims(2, 8, 2, emb), emb, 4);
    Rng rng(1);
    Points x = standard_normal(5, 2, rng);
    auto t = filled(5, 0.4), s = filled(5, 0.1);
    auto g = backward(p, x, t, s, Points::Zero(5, 2));
    for (double v : g.weights) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(g.input.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Nn, LinearNetworkInputGradientIsTransposedWeights) {
    TimeEmbedding emb{1, 1.0};
    std::vector<int> dims{2 + emb.dim(), 2};
    auto p = init_params(dims, emb, 9);
    Points x = Points::Random(3, 2);
    auto t = filled(3, 0.2), s = filled(3, 0.1);
    Points cot = Points::Random(3, 2);
    auto g = backward(p, x, t, s, cot);
    // W is 2 x 6 row-major; the x block is its first two columns
    Eigen::Matrix2d wx;
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 2; ++i) wx(o, i) = p.weights[o * dims[0] + i];
    Points expected = cot * wx;
    EXPECT_LT((g.input - expected).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Nn, GradientMatchesFiniteDifferencesOnSmallNet) {
    // the exhaustive 100-configuration sweep lives in the acceptance suite
    const auto r = gradient_check_sweep(5, 77);
    EXPECT_LT(r.worst_weight_error, 1e-4) << "coords=" << r.coordinates;
    EXPECT_LT(r.worst_input_error, 1e-4);
}

TEST(Adam, LearningRateRule) {
    EXPECT_DOUBLE_EQ(default_learning_rate(128), 0.0002);
    EXPECT_DOUBLE_EQ(default_learning_rate(64), 0.0001);
    TimeEmbedding emb{1, 1.0};
    auto p = init_params(mlp_layer_dims(1, 2, 1, emb), emb, 0);
    auto st = OptimizerState::for_params(p, 128);
    EXPECT_DOUBLE_EQ(st.beta1, 0.9);
    EXPECT_DOUBLE_EQ(st.beta2, 0.999);
    EXPECT_EQ(st.first_moment.size(), p.weights.size());
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    TimeEmbedding emb{1, 1.0};
    auto p = init_params(mlp_layer_dims(1, 4, 1, emb), emb, 2);
    const auto before = p.weights;
    auto st = OptimizerState::for_params(p, 128);
    std::vector<double> g(p.weights.size(), 0.0);
    adam_step(p, st, g);
    EXPECT_EQ(p.weights, before);
    EXPECT_EQ(st.step_count, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    TimeEmbedding emb{1, 1.0};
    auto p = init_params(mlp_layer_dims(1, 4, 1, emb), emb, 2);
    const auto before = p.weights;
    auto st = OptimizerState::for_params(p, 128);
    std::vector<double> g(p.weights.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (i % 2 ? 1.0 : -3.0);
    adam_step(p, st, g);
    // bias-corrected first step is lr * sign(g) up to eps
    for (std::size_t i = 0; i < g.size(); ++i)
        EXPECT_NEAR(static_cast<double>(p.weights[i]) - before[i], -0.0002 * (g[i] > 0 ? 1 : -1), 1e-7);
}

TEST(Adam, NonFiniteGradientFaultsWithoutChange) {
    TimeEmbedding emb{1, 1.0};
    auto p = init_params(mlp_layer_dims(1, 4, 1, emb), emb, 2);
    const auto before = p.weights;
    auto st = OptimizerState::for_params(p, 128);
    std::vector<double> g(p.weights.size(), 0.1);
    g[2] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(adam_step(p, st, g), Fault);
    EXPECT_EQ(p.weights, before);
    EXPECT_EQ(st.step_count, 0);
}

TEST(Ema, FixedPointAndDirectFormula) {
    TimeEmbedding emb{1, 1.0};
    auto p = init_params(mlp_layer_dims(1, 3, 1, emb), emb, 2);
    const auto before = p.ema_weights;
    ema_update(p);
    EXPECT_EQ(p.ema_weights, before);

    std::fill(p.weights.begin(), p.weights.end(), 1.0f);
    std::fill(p.ema_weights.begin(), p.ema_weights.end(), 0.0f);
    ema_update(p);
    for (float e : p.ema_weights) EXPECT_NEAR(e, 0.001, 1e-9);
}

TEST(Ema, GeometricSeries) {
    TimeEmbedding emb{1, 1.0};
    auto p = init_params(mlp_layer_dims(1, 3, 1, emb), emb, 2);
    std::fill(p.weights.begin(), p.weights.end(), 2.0f);
    std::fill(p.ema_weights.begin(), p.ema_weights.end(), 0.0f);
    const int k = 500;
    for (int i = 0; i < k; ++i) ema_update(p);
    const double expected = (1.0 - std::pow(0.999, k)) * 2.0;
    for (float e : p.ema_weights) EXPECT_NEAR(e, expected, 1e-5);
}

TEST(Ema, ConvexCombinationProperty) {
    Rng rng(42);
    std::normal_distribution<double> n(0.0, 3.0);
    TimeEmbedding emb{1, 1.0};
    auto p = init_params(mlp_layer_dims(1, 16, 2, emb), emb, 2);
    for (int trial = 0; trial < 50; ++trial) {
        for (auto& w : p.weights) w = static_cast<float>(n(rng));
        for (auto& e : p.ema_weights) e = static_cast<float>(n(rng));
        const auto w = p.weights, e = p.ema_weights;
        ema_update(p);
        for (std::size_t i = 0; i < w.size(); ++i) {
            EXPECT_GE(p.ema_weights[i], std::min(w[i], e[i]));
            EXPECT_LE(p.ema_weights[i], std::max(w[i], e[i]));
        }
    }
}

TEST(PseudoHuber, Values) {
    EXPECT_NEAR(pseudo_huber_c(4), 0.00108, 1e-15);
    Points a(1, 4), b(1, 4);
    a << 1, 2, 3, 4;
    EXPECT_EQ(pseudo_huber(a, a, 4)[0], 0.0);
    b = a;
    b(0, 0) += 1.0;
    // sqrt(1 + 0.00108^2) - 0.00108, evaluated at 30 digits
    EXPECT_NEAR(pseudo_huber(a, b, 4)[0], 0.998920583199829939, 1e-12);
}

TEST(PseudoHuber, BoundedByNormAndAsymptoticallyEqual) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        Points a = standard_normal(1, 3, rng), b = standard_normal(1, 3, rng);
        const double scale = std::pow(10.0, trial % 8 - 4);
        b = a + scale * (b - a);
        const double norm = (a - b).norm();
        EXPECT_LE(pseudo_huber(a, b, 3)[0], norm);
    }
    Points a = Points::Zero(1, 3), b = Points::Zero(1, 3);
    b(0, 1) = 1e6;
    EXPECT_NEAR(pseudo_huber(a, b, 3)[0] / 1e6, 1.0, 1e-6);
}

TEST(Checkpoint, RoundTripAndHeader) {
    TimeEmbedding emb{3, 1.5};
    auto p = init_params(mlp_layer_dims(2, 8, 2, emb), emb, 8, 0.99);
    p.ema_weights[0] = 0.125f;
    const auto path = (std::filesystem::temp_directory_path() / "gctm_ckpt_test.bin").string();
    save_checkpoint(path, p, {{"seed", "8"}, {"coupling", "ot"}});
    {
        std::ifstream is(path, std::ios::binary);
        std::string line;
        std::getline(is, line);
        EXPECT_EQ(line, "GCTM-CKPT v1");
    }
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.params.layer_dims, p.layer_dims);
    EXPECT_EQ(ck.params.weights, p.weights);
    EXPECT_EQ(ck.params.ema_weights, p.ema_weights);
    EXPECT_DOUBLE_EQ(ck.params.ema_decay, 0.99);
    EXPECT_DOUBLE_EQ(ck.params.embedding.scale, 1.5);
    EXPECT_EQ(ck.meta.at("coupling"), "ot");
    // float payload is little-endian: last four bytes are the last ema weight
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    const auto size = static_cast<std::size_t>(is.tellg());
    is.seekg(static_cast<std::streamoff>(size - 4));
    unsigned char raw[4];
    is.read(reinterpret_cast<char*>(raw), 4);
    const std::uint32_t u = raw[0] | (raw[1] << 8) | (raw[2] << 16) | (static_cast<std::uint32_t>(raw[3]) << 24);
    EXPECT_EQ(std::bit_cast<float>(u), p.ema_weights.back());
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const auto path = (std::filesystem::temp_directory_path() / "gctm_bad_ckpt.bin").string();
    {
        std::ofstream os(path);
        os << "NOT-A-CKPT\n";
    }
    EXPECT_THROW(load_checkpoint(path), Fault);
    {
        std::ofstream os(path);
        os << "GCTM-CKPT v1\nlayer_dims=3,2\ntime_frequencies=0\ntime_scale=1\nema_decay=0.999\nweights_len=8\nema_len=8\nend\n";
    }
    EXPECT_THROW(load_checkpoint(path), Fault);  // truncated payload
    std::filesystem::remove(path);
}
