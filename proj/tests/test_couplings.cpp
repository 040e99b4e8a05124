#include "gctm/couplings.hpp"
#include "gctm/datasets.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace gctm;

namespace {

Sampler point_mass(Eigen::RowVectorXd p) {
    return [p](Eigen::Index m, Rng&) {
        Points out(m, p.size());
        for (Eigen::Index i = 0; i < m; ++i) out.row(i) = p;
        return out;
    };
}

double plan_cost(const Points& plan, const Points& c) { return (plan.array() * c.array()).sum(); }

// Exact OT for uniform marginals over permutations (Birkhoff).
double brute_force_ot(const Points& c) {
    std::vector<int> perm(static_cast<std::size_t>(c.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double acc = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) acc += c(static_cast<Eigen::Index>(i), perm[i]);
        best = std::min(best, acc / static_cast<double>(perm.size()));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST(Independent, PointMassesGiveThePair) {
    Rng rng(0);
    Eigen::RowVector2d a(1, 2), b(-3, 4);
    auto pb = sample_independent(point_mass(a), point_mass(b), 1, rng);
    EXPECT_EQ(pb.x0.row(0), a);
    EXPECT_EQ(pb.x1.row(0), b);
}

TEST(Independent, UncorrelatedEndpoints) {
    Rng rng(1);
    auto s = standard_normal_sampler(1);
    auto pb = sample_independent(s, s, 100000, rng);
    const double corr = (pb.x0.col(0).array() * pb.x1.col(0).array()).mean() /
                        std::sqrt(pb.x0.col(0).squaredNorm() / 1e5 * pb.x1.col(0).squaredNorm() / 1e5);
    EXPECT_LT(std::abs(corr), 0.02);
}

TEST(Independent, DeterministicUnderSeed) {
    auto s = standard_normal_sampler(3);
    Rng r1(9), r2(9);
    auto a = sample_independent(s, s, 17, r1), b = sample_independent(s, s, 17, r2);
    EXPECT_EQ(a.x0, b.x0);
    EXPECT_EQ(a.x1, b.x1);
    EXPECT_THROW(sample_independent(s, s, 0, r1), std::invalid_argument);
}

TEST(Sinkhorn, LargeTauGivesUniformPlan) {
    Rng rng(2);
    Points a = standard_normal(5, 2, rng), b = standard_normal(5, 2, rng);
    const double tau = 1e6 * cost_matrix(a, b).maxCoeff();
    auto tp = sinkhorn_plan(a, b, tau);
    EXPECT_TRUE(tp.converged);
    EXPECT_LT((tp.plan.array() - 1.0 / 25.0).abs().maxCoeff(), 1e-6);
}

TEST(Sinkhorn, TwoPointDiagonal) {
    Points a(2, 1), b(2, 1);
    a << 0, 1;
    b << 0, 1;
    auto tp = sinkhorn_plan(a, b, 1e-3 * cost_matrix(a, b).maxCoeff());
    EXPECT_TRUE(tp.converged);
    EXPECT_GE(tp.plan(0, 0), 0.49);
    EXPECT_GE(tp.plan(1, 1), 0.49);
}

TEST(Sinkhorn, MarginalsAndMonotoneResidual) {
    Rng rng(3);
    for (double rel : {0.01, 0.05, 0.5}) {
        Points a = eight_gaussians()(64, rng), b = standard_normal(64, 2, rng);
        auto tp = sinkhorn_plan(a, b, rel * cost_matrix(a, b).mean());
        ASSERT_TRUE(tp.converged);
        EXPECT_LT((tp.plan.rowwise().sum().array() - 1.0 / 64).abs().maxCoeff(), 1e-6);
        EXPECT_LT((tp.plan.colwise().sum().array() - 1.0 / 64).abs().maxCoeff(), 1e-6);
        EXPECT_GE(tp.plan.minCoeff(), 0.0);
        for (std::size_t k = 1; k < tp.residual_history.size(); ++k)
            EXPECT_LE(tp.residual_history[k], tp.residual_history[k - 1] * (1 + 1e-12) + 1e-15);
    }
}

TEST(Sinkhorn, IterationCapIsFlagged) {
    Rng rng(4);
    Points a = standard_normal(16, 2, rng), b = standard_normal(16, 2, rng);
    auto tp = sinkhorn_plan(a, b, 1e-3 * cost_matrix(a, b).maxCoeff(), {3, 1e-6});
    EXPECT_FALSE(tp.converged);
    EXPECT_EQ(tp.iterations_used, 3);
}

TEST(Sinkhorn, CloseToExactOtForSmallBatches) {
    Rng rng(5);
    for (int m = 2; m <= 6; ++m)
        for (int rep = 0; rep < 5; ++rep) {
            Points a = standard_normal(m, 2, rng), b = standard_normal(m, 2, rng);
            const Points c = cost_matrix(a, b);
            SinkhornOptions opt;
            opt.max_iterations = 100000;
            auto tp = sinkhorn_plan(a, b, 1e-3 * c.maxCoeff(), opt);
            ASSERT_TRUE(tp.converged);
            const double exact = brute_force_ot(c);
            EXPECT_LE(plan_cost(tp.plan, c), exact * 1.01 + 1e-12) << "m=" << m;
            // marginals hold to the 1e-6 stopping residual, so the cost may undershoot by that much
            EXPECT_GE(plan_cost(tp.plan, c), exact - 2.0 * m * 1e-6 * c.maxCoeff());
        }
}

TEST(Sinkhorn, RejectsBadInput) {
    Points a = Points::Zero(3, 2), b = Points::Zero(2, 2);
    EXPECT_THROW(sinkhorn_plan(a, b, 1.0), std::invalid_argument);
    EXPECT_THROW(sinkhorn_plan(a, a, 0.0), std::invalid_argument);
}

TEST(OtPairs, IdentityPlanPairsDiagonal) {
    Rng rng(6);
    TransportPlan tp;
    tp.plan = Points::Identity(5, 5) / 5.0;
    Points a = standard_normal(5, 2, rng), b = standard_normal(5, 2, rng);
    const auto idx = sample_plan_indices(tp.plan, 1000, rng);
    for (auto [i, j] : idx) EXPECT_EQ(i, j);
    auto pb = sample_ot_pairs(tp, a, b, 50, rng);
    for (Eigen::Index r = 0; r < 50; ++r) {
        Eigen::Index k = 0;
        while (a.row(k) != pb.x0.row(r)) ++k;
        EXPECT_EQ(pb.x1.row(r), b.row(k));
    }
}

TEST(OtPairs, UniformPlanFrequencies) {
    Rng rng(7);
    const Points plan = Points::Constant(4, 4, 1.0 / 16);
    const int n = 100000;
    const auto idx = sample_plan_indices(plan, n, rng);
    std::vector<int> counts(16, 0);
    for (auto [i, j] : idx) counts[static_cast<std::size_t>(i * 4 + j)]++;
    for (int c : counts) EXPECT_LT(std::abs(c / double(n) - 1.0 / 16), 4.0 / std::sqrt(double(n)));
}

TEST(OtPairs, DeterministicAndDegenerate) {
    const Points plan = Points::Constant(3, 3, 1.0 / 9);
    Rng r1(8), r2(8);
    EXPECT_EQ(sample_plan_indices(plan, 100, r1), sample_plan_indices(plan, 100, r2));
    EXPECT_THROW(sample_plan_indices(Points::Zero(3, 3), 10, r1), Fault);
}

TEST(OtPairs, ShorterPairsThanIndependent) {
    Rng rng(9);
    auto src = eight_gaussians();
    auto tgt = standard_normal_sampler(2);
    double ot = 0.0, ind = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        ind += (sample_coupling(Coupling::independent(), src, tgt, 64, rng).x0 -
                sample_coupling(Coupling::independent(), src, tgt, 64, rng).x1)
                   .rowwise()
                   .squaredNorm()
                   .mean();
        auto pb = sample_coupling(Coupling::optimal_transport(), src, tgt, 64, rng);
        ot += (pb.x0 - pb.x1).rowwise().squaredNorm().mean();
    }
    EXPECT_LT(ot, ind);
}

TEST(OtPairs, NeedsTwoRows) {
    Rng rng(10);
    auto s = standard_normal_sampler(2);
    EXPECT_THROW(sample_coupling(Coupling::optimal_transport(), s, s, 1, rng), std::invalid_argument);
}

TEST(Supervised, OperatorExamples) {
    Points x(1, 2);
    x << 3, 5;
    EXPECT_EQ(sample_supervised(x, CorruptionOperator::identity()).x1, x);
    Points masked = sample_supervised(x, CorruptionOperator::mask({1})).x1;
    EXPECT_EQ(masked(0, 0), 3.0);
    EXPECT_EQ(masked(0, 1), 0.0);
    Points y(1, 2);
    y << 1, -1;
    Points two = 2.0 * Points::Identity(2, 2);
    Points lin = sample_supervised(y, CorruptionOperator::linear(two)).x1;
    EXPECT_EQ(lin(0, 0), 2.0);
    EXPECT_EQ(lin(0, 1), -2.0);
}

TEST(Supervised, DeterministicOperatorIsAFunctionOfX0) {
    Rng rng(11);
    Points x = standard_normal(20, 3, rng);
    Points a(3, 3);
    a << 1, 2, 0, 0, 1, 0, -1, 0, 1;
    auto op = CorruptionOperator::linear(a);
    Points once = sample_supervised(x, op, rng).x1;
    Points again = sample_supervised(x, op, rng).x1;
    EXPECT_EQ(once, again);
    EXPECT_LT((once - x * a.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Supervised, OperatorValidation) {
    EXPECT_THROW(CorruptionOperator::mask({2}).validate(2), std::invalid_argument);
    EXPECT_THROW(CorruptionOperator::linear(Points::Identity(2, 3)).validate(2), std::invalid_argument);
    EXPECT_TRUE(CorruptionOperator::mask({0}).is_masking());
    Coupling c = Coupling::supervised(CorruptionOperator::mask({0}));
    EXPECT_EQ(c.training_perturbation(), 0.0);
    EXPECT_EQ(Coupling::supervised(CorruptionOperator::identity()).training_perturbation(), 0.05);
    EXPECT_EQ(Coupling::independent().perturb_scale, 0.05);
}

TEST(Perturb, ZeroScaleIsIdentity) {
    Rng rng(12);
    PairBatch b{standard_normal(4, 2, rng), standard_normal(4, 2, rng)};
    auto c = perturb_x1(b, 0.0, rng);
    EXPECT_EQ(c.x1, b.x1);
    EXPECT_EQ(c.x0, b.x0);
}

TEST(Perturb, VarianceMatchesScale) {
    Rng rng(13);
    PairBatch b{Points::Zero(50000, 2), Points::Ones(50000, 2)};
    auto c = perturb_x1(b, 0.05, rng);
    EXPECT_EQ(c.x0, b.x0);
    const Points delta = c.x1 - b.x1;
    const Eigen::ArrayXd diff = Eigen::Map<const Eigen::ArrayXd>(delta.data(), delta.size());
    const double var = (diff - diff.mean()).square().sum() / (diff.size() - 1);
    EXPECT_NEAR(var / 0.0025, 1.0, 0.05);
}
