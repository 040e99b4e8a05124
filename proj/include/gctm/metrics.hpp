#pragma once

#include "gctm/couplings.hpp"

#include <algorithm>

namespace gctm {

namespace detail {

inline double mean_pair_distance(const Points& a, const Points& b) {
    const Eigen::Index d = a.cols();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double* pa = a.row(i).data();
        double row = 0.0;
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double* pb = b.row(j).data();
            double sq = 0.0;
            for (Eigen::Index k = 0; k < d; ++k) sq += (pa[k] - pb[k]) * (pa[k] - pb[k]);
            row += std::sqrt(sq);
        }
        acc += row;
    }
    return acc / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

/// Rows in lexicographic order, so equal multisets become equal matrices.
inline Points sorted_rows(const Points& p) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(p.rows()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
    std::sort(idx.begin(), idx.end(), [&](Eigen::Index x, Eigen::Index y) {
        for (Eigen::Index k = 0; k < p.cols(); ++k)
            if (p(x, k) != p(y, k)) return p(x, k) < p(y, k);
        return false;
    });
    Points out(p.rows(), p.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(idx[i]);
    return out;
}

}  // namespace detail

/// 2 E||a - b|| - E||a - a'|| - E||b - b'|| over all pairs (V-statistic:
/// non-negative, symmetric, and exactly zero for identical multisets).
inline double energy_distance(const Points& a, const Points& b) {
    require(a.rows() >= 2 && b.rows() >= 2, "energy_distance: need at least two samples per set");
    require(a.cols() == b.cols(), "energy_distance: dimension mismatch");
    const Points sa = detail::sorted_rows(a), sb = detail::sorted_rows(b);
    const double ab = detail::mean_pair_distance(sa, sb);
    const double ba = detail::mean_pair_distance(sb, sa);
    const double aa = detail::mean_pair_distance(sa, sa);
    const double bb = detail::mean_pair_distance(sb, sb);
    // grouped so that swapping a and b gives bit-identical results
    return std::max(0.0, (ab + ba) - (aa + bb));
}

/// Wasserstein-2 between two 1D empirical measures with uniform weights,
/// integrating the squared quantile difference exactly.
inline double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
    require(!a.empty() && !b.empty(), "wasserstein2_1d: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double pos = 0.0, acc = 0.0;
    while (i < a.size() && j < b.size()) {
        const double next_a = static_cast<double>(i + 1) / na, next_b = static_cast<double>(j + 1) / nb;
        const double next = std::min(next_a, next_b);
        const double diff = a[i] - b[j];
        acc += (next - pos) * diff * diff;
        pos = next;
        if (next_a <= next) ++i;
        if (next_b <= next) ++j;
    }
    return std::sqrt(std::max(0.0, acc));
}

/// Mean over random unit directions of the 1D Wasserstein-2 distance between projections.
inline double sliced_wasserstein(const Points& a, const Points& b, int n_projections, std::uint64_t seed) {
    require(n_projections >= 1, "sliced_wasserstein: need at least one projection");
    require(a.cols() == b.cols(), "sliced_wasserstein: dimension mismatch");
    require(a.rows() >= 1 && b.rows() >= 1, "sliced_wasserstein: empty sample");
    Rng rng(seed);
    double acc = 0.0;
    for (int p = 0; p < n_projections; ++p) {
        Eigen::VectorXd dir = standard_normal(a.cols(), 1, rng).col(0);
        if (dir.norm() == 0.0) dir(0) = 1.0;
        dir.normalize();
        const Eigen::VectorXd pa = a * dir, pb = b * dir;
        acc += wasserstein2_1d({pa.data(), pa.data() + pa.size()}, {pb.data(), pb.data() + pb.size()});
    }
    return acc / n_projections;
}

/// Mean squared distance between row-aligned sets.
inline double mse_to_pairs(const Points& a, const Points& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols() && a.rows() > 0, "mse_to_pairs: shape mismatch");
    return (a - b).rowwise().squaredNorm().mean();
}

/// Mean ||x1 - H x0|| over rows.
inline double measurement_residual(const Points& measurement, const CorruptionOperator& op, const Points& x0) {
    const Points r = measurement - op.apply_mean(x0);
    return r.rowwise().norm().mean();
}

}  // namespace gctm
