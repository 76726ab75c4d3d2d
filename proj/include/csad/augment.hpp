#pragma once
// Seeded AugMix-style augmentation: a few short chains of shift / rotate /
// contrast ops, mixed convexly with each other and with the original image.
// Every op maps [0,1] images into [0,1] and fixes the all-zero image.

#include "csad/dataset.hpp"

#include <functional>

namespace csad {

namespace augment_ops {

/// Integer translation, zero fill.
inline Matrix shift(const Matrix& img, const ImageShape& s, int dx, int dy) {
    Matrix out = Matrix::Zero(1, img.cols());
    for (int c = 0; c < s.channels; ++c)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const int sx = x - dx, sy = y - dy;
                if (sx < 0 || sy < 0 || sx >= s.width || sy >= s.height) continue;
                out(0, (c * s.height + y) * s.width + x) = img(0, (c * s.height + sy) * s.width + sx);
            }
    return out;
}

/// Rotation about the image centre with bilinear sampling, zero fill.
inline Matrix rotate(const Matrix& img, const ImageShape& s, double radians) {
    Matrix out = Matrix::Zero(1, img.cols());
    const double cx = (s.width - 1) / 2.0, cy = (s.height - 1) / 2.0;
    const double cs = std::cos(radians), sn = std::sin(radians);
    auto at = [&](int c, int y, int x) -> double {
        if (x < 0 || y < 0 || x >= s.width || y >= s.height) return 0.0;
        return img(0, (c * s.height + y) * s.width + x);
    };
    for (int c = 0; c < s.channels; ++c)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const double u = cs * (x - cx) + sn * (y - cy) + cx;
                const double v = -sn * (x - cx) + cs * (y - cy) + cy;
                const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
                const double fx = u - x0, fy = v - y0;
                const double val = (1 - fx) * (1 - fy) * at(c, y0, x0) + fx * (1 - fy) * at(c, y0, x0 + 1) +
                                   (1 - fx) * fy * at(c, y0 + 1, x0) + fx * fy * at(c, y0 + 1, x0 + 1);
                out(0, (c * s.height + y) * s.width + x) = val;
            }
    return out;
}

/// Scales deviations from the image mean by `factor`, clipped to [0,1].
inline Matrix contrast(const Matrix& img, double factor) {
    const double mean = img.mean();
    return ((img.array() - mean) * factor + mean).cwiseMax(0.0).cwiseMin(1.0).matrix();
}

}  // namespace augment_ops

struct AugmentConfig {
    int width = 3;          // number of chains
    int max_depth = 3;      // ops per chain drawn from 1..max_depth
    int max_shift = 2;      // pixels
    double max_degrees = 15.0;
    double contrast_lo = 0.6;
    double contrast_hi = 1.4;
};

/// Returns one augmented copy per input row; the caller concatenates to double the set.
inline Matrix augment_normal_labelled(const Matrix& x, const ImageShape& shape, Rng& rng,
                                      const AugmentConfig& cfg = {}) {
    require(x.cols() == shape.size(), "augment: image shape does not match row width");
    Matrix out(x.rows(), x.cols());
    std::uniform_int_distribution<int> op_pick(0, 2);
    std::uniform_int_distribution<int> depth_pick(1, cfg.max_depth);
    std::uniform_int_distribution<int> shift_pick(-cfg.max_shift, cfg.max_shift);
    std::uniform_real_distribution<double> angle_pick(-cfg.max_degrees, cfg.max_degrees);
    std::uniform_real_distribution<double> contrast_pick(cfg.contrast_lo, cfg.contrast_hi);
    std::gamma_distribution<double> gamma1(1.0, 1.0);
    constexpr double kPi = 3.14159265358979323846;

    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Matrix img = x.row(r);
        // Dirichlet(1,..,1) chain weights and Beta(1,1) skip weight.
        std::vector<double> w(static_cast<std::size_t>(cfg.width));
        double wsum = 0.0;
        for (auto& wi : w) wsum += (wi = gamma1(rng));
        const double g1 = gamma1(rng), g2 = gamma1(rng);
        const double m = g1 / (g1 + g2);

        Matrix mix = Matrix::Zero(1, x.cols());
        for (int k = 0; k < cfg.width; ++k) {
            Matrix chain = img;
            const int depth = depth_pick(rng);
            for (int d = 0; d < depth; ++d) {
                switch (op_pick(rng)) {
                    case 0: {
                        const int dx = shift_pick(rng), dy = shift_pick(rng);
                        chain = augment_ops::shift(chain, shape, dx, dy);
                        break;
                    }
                    case 1: chain = augment_ops::rotate(chain, shape, angle_pick(rng) * kPi / 180.0); break;
                    default: chain = augment_ops::contrast(chain, contrast_pick(rng)); break;
                }
            }
            mix += (w[static_cast<std::size_t>(k)] / wsum) * chain;
        }
        out.row(r) = (m * img + (1.0 - m) * mix).cwiseMax(0.0).cwiseMin(1.0);
    }
    return out;
}

}  // namespace csad
