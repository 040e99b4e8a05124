#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gctm {

/// Batch of points, one row per sample.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

/// Numerical or I/O failure inside an otherwise valid call.
class Fault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

template <typename T>
bool all_finite(std::span<const T> v) {
    for (const T& x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

/// Matrix of i.i.d. standard normals.
inline Points standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Points out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = n01(rng);
    return out;
}

/// Derive an independent stream seed from a base seed and a tag (splitmix64).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::vector<double> filled(Eigen::Index n, double value) {
    return std::vector<double>(static_cast<std::size_t>(n), value);
}

}  // namespace gctm
