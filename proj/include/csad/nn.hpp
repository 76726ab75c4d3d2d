#pragma once
// Minimal feed-forward building blocks with hand-written backprop:
// dense and 2-D convolution layers, ReLU between layers, and Adam.

#include "csad/core.hpp"
#include "csad/dataset.hpp"

#include <variant>

namespace csad::nn {

struct Dense {
    Matrix W;  // in x out
    Matrix b;  // 1 x out

    Dense() = default;
    Dense(Eigen::Index in, Eigen::Index out) : W(Matrix::Zero(in, out)), b(Matrix::Zero(1, out)) {}

    [[nodiscard]] Eigen::Index in_dim() const { return W.rows(); }
    [[nodiscard]] Eigen::Index out_dim() const { return W.cols(); }
};

/// Valid-padding convolution over channel-major (c, y, x) flattened rows.
struct Conv2d {
    ImageShape in_shape;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    Matrix W;  // (kernel*kernel*in_channels) x out_channels, rows ordered (c, ky, kx)
    Matrix b;  // 1 x out_channels

    Conv2d() = default;
    Conv2d(ImageShape in, int out_ch, int k, int s) : in_shape(in), out_channels(out_ch), kernel(k), stride(s) {
        require(in.height >= k && in.width >= k, "conv: kernel larger than input");
        W = Matrix::Zero(static_cast<Eigen::Index>(k) * k * in.channels, out_ch);
        b = Matrix::Zero(1, out_ch);
    }

    [[nodiscard]] ImageShape out_shape() const {
        return {out_channels, (in_shape.height - kernel) / stride + 1, (in_shape.width - kernel) / stride + 1};
    }
    [[nodiscard]] Eigen::Index in_dim() const { return in_shape.size(); }
    [[nodiscard]] Eigen::Index out_dim() const { return out_shape().size(); }

    /// Patch matrix of one sample: (oh*ow) x (k*k*c).
    [[nodiscard]] Matrix im2col(const Eigen::Ref<const RowVector>& x) const {
        const auto os = out_shape();
        Matrix p(static_cast<Eigen::Index>(os.height) * os.width, W.rows());
        for (int oy = 0; oy < os.height; ++oy)
            for (int ox = 0; ox < os.width; ++ox) {
                const Eigen::Index row = oy * os.width + ox;
                Eigen::Index col = 0;
                for (int c = 0; c < in_shape.channels; ++c)
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx)
                            p(row, col++) = x((c * in_shape.height + oy * stride + ky) * in_shape.width +
                                              ox * stride + kx);
            }
        return p;
    }

    void col2im_add(const Matrix& dp, Eigen::Ref<RowVector> dx) const {
        const auto os = out_shape();
        for (int oy = 0; oy < os.height; ++oy)
            for (int ox = 0; ox < os.width; ++ox) {
                const Eigen::Index row = oy * os.width + ox;
                Eigen::Index col = 0;
                for (int c = 0; c < in_shape.channels; ++c)
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx)
                            dx((c * in_shape.height + oy * stride + ky) * in_shape.width + ox * stride + kx) +=
                                dp(row, col++);
            }
    }
};

using Layer = std::variant<Dense, Conv2d>;

inline Eigen::Index in_dim(const Layer& l) {
    return std::visit([](const auto& x) { return x.in_dim(); }, l);
}
inline Eigen::Index out_dim(const Layer& l) {
    return std::visit([](const auto& x) { return x.out_dim(); }, l);
}

/// Activations recorded by a forward pass, consumed by backward.
struct Trace {
    std::vector<Matrix> inputs;                // input of each layer
    std::vector<Matrix> pre;                   // pre-activation output of each layer
    std::vector<std::vector<Matrix>> patches;  // im2col buffers for conv layers
};

/// Stack of layers with ReLU after every layer but the last.
class Network {
public:
    std::vector<Layer> layers;

    [[nodiscard]] Eigen::Index in_dim() const { return layers.empty() ? 0 : nn::in_dim(layers.front()); }
    [[nodiscard]] Eigen::Index out_dim() const { return layers.empty() ? 0 : nn::out_dim(layers.back()); }

    Matrix forward(const Matrix& x, Trace* trace = nullptr) const {
        if (trace) {
            trace->inputs.clear();
            trace->pre.clear();
            trace->patches.assign(layers.size(), {});
        }
        Matrix h = x;
        for (std::size_t li = 0; li < layers.size(); ++li) {
            Matrix z;
            if (const auto* d = std::get_if<Dense>(&layers[li])) {
                z = h * d->W;
                z.rowwise() += RowVector(d->b);
            } else {
                const auto& c = std::get<Conv2d>(layers[li]);
                const auto os = c.out_shape();
                const Eigen::Index npix = static_cast<Eigen::Index>(os.height) * os.width;
                z.resize(h.rows(), c.out_dim());
                for (Eigen::Index s = 0; s < h.rows(); ++s) {
                    Matrix p = c.im2col(h.row(s));
                    Matrix o = p * c.W;  // npix x out_ch
                    o.rowwise() += RowVector(c.b);
                    for (int ch = 0; ch < c.out_channels; ++ch)
                        z.row(s).segment(ch * npix, npix) = o.col(ch).transpose();
                    if (trace) trace->patches[li].push_back(std::move(p));
                }
            }
            if (trace) {
                trace->inputs.push_back(h);
                trace->pre.push_back(z);
            }
            h = (li + 1 < layers.size()) ? Matrix(z.cwiseMax(0.0)) : std::move(z);
        }
        return h;
    }

    /// Accumulates parameter gradients into `grads` (W, b per layer) and returns dL/dx
    /// when `need_dx`.
    Matrix backward(const Trace& trace, const Matrix& dout, std::span<Matrix> grads, bool need_dx = true) const {
        Matrix g = dout;
        for (std::size_t li = layers.size(); li-- > 0;) {
            if (li + 1 < layers.size()) g = (trace.pre[li].array() > 0.0).select(g, 0.0);
            const Matrix& in = trace.inputs[li];
            Matrix& gW = grads[2 * li];
            Matrix& gb = grads[2 * li + 1];
            const bool want_dx = need_dx || li > 0;
            if (const auto* d = std::get_if<Dense>(&layers[li])) {
                gW.noalias() += in.transpose() * g;
                gb += g.colwise().sum();
                if (want_dx) g = g * d->W.transpose();
            } else {
                const auto& c = std::get<Conv2d>(layers[li]);
                const auto os = c.out_shape();
                const Eigen::Index npix = static_cast<Eigen::Index>(os.height) * os.width;
                Matrix dx = want_dx ? Matrix::Zero(in.rows(), in.cols()) : Matrix();
                for (Eigen::Index s = 0; s < in.rows(); ++s) {
                    Matrix go(npix, c.out_channels);
                    for (int ch = 0; ch < c.out_channels; ++ch)
                        go.col(ch) = g.row(s).segment(ch * npix, npix).transpose();
                    const Matrix& p = trace.patches[li][static_cast<std::size_t>(s)];
                    gW.noalias() += p.transpose() * go;
                    gb += go.colwise().sum();
                    if (want_dx) c.col2im_add(go * c.W.transpose(), dx.row(s));
                }
                if (want_dx) g = std::move(dx);
            }
        }
        return g;
    }

    std::vector<Matrix*> params() {
        std::vector<Matrix*> out;
        for (auto& l : layers)
            std::visit([&](auto& x) { out.push_back(&x.W); out.push_back(&x.b); }, l);
        return out;
    }
    std::vector<const Matrix*> params() const {
        std::vector<const Matrix*> out;
        for (const auto& l : layers)
            std::visit([&](const auto& x) { out.push_back(&x.W); out.push_back(&x.b); }, l);
        return out;
    }

    /// Glorot-uniform weights, zero biases; the last layer's weights are multiplied by `last_scale`.
    void init(Rng& rng, double last_scale = 1.0) {
        for (std::size_t li = 0; li < layers.size(); ++li) {
            std::visit(
                [&](auto& x) {
                    double fan_in, fan_out;
                    if constexpr (std::is_same_v<std::decay_t<decltype(x)>, Conv2d>) {
                        fan_in = static_cast<double>(x.W.rows());
                        fan_out = static_cast<double>(x.out_channels) * x.kernel * x.kernel;
                    } else {
                        fan_in = static_cast<double>(x.W.rows());
                        fan_out = static_cast<double>(x.W.cols());
                    }
                    const double limit = std::sqrt(6.0 / (fan_in + fan_out)) * (li + 1 == layers.size() ? last_scale : 1.0);
                    std::uniform_real_distribution<double> u(-limit, limit);
                    for (Eigen::Index i = 0; i < x.W.size(); ++i) x.W.data()[i] = u(rng);
                    x.b.setZero();
                },
                layers[li]);
        }
    }
};

/// Dense stack in -> hidden... -> out.
inline Network make_mlp(Eigen::Index in, const std::vector<int>& hidden, Eigen::Index out) {
    Network n;
    Eigen::Index prev = in;
    for (int h : hidden) {
        n.layers.emplace_back(Dense(prev, h));
        prev = h;
    }
    n.layers.emplace_back(Dense(prev, out));
    return n;
}

struct ConvSpec {
    int channels = 8;
    int kernel = 3;
    int stride = 2;
};

/// Conv layers (when an image shape is known) followed by dense layers.
inline Network make_conv_net(const ImageShape& shape, const std::vector<ConvSpec>& convs,
                             const std::vector<int>& dense, Eigen::Index out) {
    Network n;
    ImageShape cur = shape;
    for (const auto& c : convs) {
        Conv2d layer(cur, c.channels, c.kernel, c.stride);
        cur = layer.out_shape();
        n.layers.emplace_back(std::move(layer));
    }
    Eigen::Index prev = cur.size();
    for (int h : dense) {
        n.layers.emplace_back(Dense(prev, h));
        prev = h;
    }
    n.layers.emplace_back(Dense(prev, out));
    return n;
}

// ---------------------------------------------------------------------------
// Flat parameter lists
// ---------------------------------------------------------------------------
using Grads = std::vector<Matrix>;

template <typename P>
Grads zeros_like(const std::vector<P*>& params) {
    Grads g;
    g.reserve(params.size());
    for (const auto* p : params) g.push_back(Matrix::Zero(p->rows(), p->cols()));
    return g;
}

inline std::size_t total_size(const Grads& g) {
    std::size_t n = 0;
    for (const auto& m : g) n += static_cast<std::size_t>(m.size());
    return n;
}

class Adam {
public:
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(double learning_rate = 1e-3) : lr(learning_rate) {}

    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

    void step(const std::vector<Matrix*>& params, const Grads& grads) {
        if (m_.empty()) {
            m_ = zeros_like(params);
            v_ = zeros_like(params);
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, t_);
        const double c2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * grads[i];
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
            params[i]->array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
        }
    }

private:
    Grads m_, v_;
    int t_ = 0;
};

}  // namespace csad::nn
