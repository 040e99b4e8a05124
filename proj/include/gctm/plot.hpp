#pragma once

#include "gctm/core.hpp"

#include <array>
#include <fstream>

namespace gctm {

struct PlotLayer {
    Points points;
    std::array<std::uint8_t, 3> color{30, 60, 200};
};

/// Binary P6 pixmap, 512x512, white background. Axes are auto-scaled over
/// all layers with a 5% margin; a degenerate axis gets a unit window centred
/// on its value. Each point is a radius-2 disc.
inline void emit_plot(const std::vector<PlotLayer>& layers, const std::string& path) {
    constexpr int kSize = 512;
    constexpr int kRadius = 2;
    double lo[2] = {0.0, 0.0}, hi[2] = {0.0, 0.0};
    bool any = false;
    for (const auto& l : layers) {
        require(l.points.rows() == 0 || l.points.cols() == 2, "emit_plot: points must be 2D");
        for (Eigen::Index i = 0; i < l.points.rows(); ++i)
            for (int a = 0; a < 2; ++a) {
                const double v = l.points(i, a);
                if (!std::isfinite(v)) continue;
                if (!any) {
                    lo[0] = hi[0] = l.points(i, 0);
                    lo[1] = hi[1] = l.points(i, 1);
                    any = true;
                }
                lo[a] = std::min(lo[a], v);
                hi[a] = std::max(hi[a], v);
            }
    }
    for (int a = 0; a < 2; ++a) {
        if (hi[a] - lo[a] <= 0.0) {
            const double c = lo[a];
            lo[a] = c - 0.5;
            hi[a] = c + 0.5;
        } else {
            const double pad = 0.05 * (hi[a] - lo[a]);
            lo[a] -= pad;
            hi[a] += pad;
        }
    }

    std::vector<std::uint8_t> img(static_cast<std::size_t>(kSize) * kSize * 3, 255);
    for (const auto& l : layers) {
        for (Eigen::Index i = 0; i < l.points.rows(); ++i) {
            const double x = l.points(i, 0), y = l.points(i, 1);
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            const int cx = static_cast<int>(std::lround((x - lo[0]) / (hi[0] - lo[0]) * (kSize - 1)));
            const int cy = static_cast<int>(std::lround((hi[1] - y) / (hi[1] - lo[1]) * (kSize - 1)));
            for (int dy = -kRadius; dy <= kRadius; ++dy)
                for (int dx = -kRadius; dx <= kRadius; ++dx) {
                    if (dx * dx + dy * dy > kRadius * kRadius) continue;
                    const int px = cx + dx, py = cy + dy;
                    if (px < 0 || py < 0 || px >= kSize || py >= kSize) continue;
                    auto* p = &img[(static_cast<std::size_t>(py) * kSize + px) * 3];
                    p[0] = l.color[0];
                    p[1] = l.color[1];
                    p[2] = l.color[2];
                }
        }
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw Fault("emit_plot: cannot open " + path);
    os << "P6\n" << kSize << ' ' << kSize << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    if (!os) throw Fault("emit_plot: write failed for " + path);
}

inline void emit_plot(const Points& points, const std::string& path) { emit_plot({PlotLayer{points}}, path); }

}  // namespace gctm
