#pragma once

#include "gctm/couplings.hpp"
#include "gctm/oracle.hpp"

#include <fstream>
#include <numbers>
#include <sstream>

namespace gctm {

// 2D toy distributions, all centred near the origin with radius around 2.

/// Eight isotropic Gaussians on a circle.
inline Sampler eight_gaussians(double radius = 2.0, double stddev = 0.1) {
    return [=](Eigen::Index m, Rng& rng) {
        std::uniform_int_distribution<int> pick(0, 7);
        std::normal_distribution<double> n(0.0, stddev);
        Points out(m, 2);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double a = pick(rng) * std::numbers::pi / 4.0;
            out(i, 0) = radius * std::cos(a) + n(rng);
            out(i, 1) = radius * std::sin(a) + n(rng);
        }
        return out;
    };
}

inline Sampler two_moons(double noise = 0.05) {
    return [=](Eigen::Index m, Rng& rng) {
        std::uniform_real_distribution<double> unif(0.0, std::numbers::pi);
        std::bernoulli_distribution upper(0.5);
        std::normal_distribution<double> n(0.0, noise);
        Points out(m, 2);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double a = unif(rng);
            double x, y;
            if (upper(rng)) {
                x = std::cos(a);
                y = std::sin(a);
            } else {
                x = 1.0 - std::cos(a);
                y = 0.5 - std::sin(a);
            }
            // centre and scale to roughly [-2, 2]
            out(i, 0) = 1.6 * (x - 0.5) + n(rng);
            out(i, 1) = 1.6 * (y - 0.25) + n(rng);
        }
        return out;
    };
}

/// Uniform on the dark squares of a 4x4 board over [-2, 2]^2.
inline Sampler checkerboard() {
    return [](Eigen::Index m, Rng& rng) {
        std::uniform_real_distribution<double> unif(-2.0, 2.0);
        Points out(m, 2);
        for (Eigen::Index i = 0; i < m; ++i) {
            double x, y;
            do {
                x = unif(rng);
                y = unif(rng);
            } while (((static_cast<int>(std::floor(x)) + static_cast<int>(std::floor(y))) & 1) != 0);
            out(i, 0) = x;
            out(i, 1) = y;
        }
        return out;
    };
}

/// Rows of a whitespace-separated text file, drawn uniformly with replacement.
inline Points load_points(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Fault("cannot open points file " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (row.empty()) continue;
        if (!rows.empty() && row.size() != rows.front().size()) throw Fault("ragged rows in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Fault("no points in " + path);
    Points p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < rows[i].size(); ++k) p(i, k) = rows[i][k];
    return p;
}

inline void save_points(const std::string& path, const Points& p) {
    std::ofstream os(path);
    if (!os) throw Fault("cannot write " + path);
    os.precision(std::numeric_limits<double>::max_digits10);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index k = 0; k < p.cols(); ++k) os << (k ? " " : "") << p(i, k);
        os << '\n';
    }
    if (!os) throw Fault("write failed for " + path);
}

inline Sampler file_sampler(const std::string& path) {
    Points data = load_points(path);
    return [data = std::move(data)](Eigen::Index m, Rng& rng) {
        std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
        Points out(m, data.cols());
        for (Eigen::Index i = 0; i < m; ++i) out.row(i) = data.row(pick(rng));
        return out;
    };
}

struct Dataset {
    enum class Kind { eight_gaussians, two_moons, checkerboard, gaussian, file };

    Kind kind = Kind::eight_gaussians;
    int dim = 2;
    GaussianSpec gaussian;  // Kind::gaussian: data is N(mu0, var0)
    std::string path;       // Kind::file

    Sampler sampler() const {
        switch (kind) {
        case Kind::eight_gaussians: return eight_gaussians();
        case Kind::two_moons: return two_moons();
        case Kind::checkerboard: return checkerboard();
        case Kind::gaussian: return GaussianSpec::diag_sampler(gaussian.mu0, gaussian.var0);
        case Kind::file: return file_sampler(path);
        }
        return {};
    }
};

inline Sampler standard_normal_sampler(int dim) {
    return [dim](Eigen::Index m, Rng& rng) { return standard_normal(m, dim, rng); };
}

}  // namespace gctm
