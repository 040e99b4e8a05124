#pragma once

#include "gctm/core.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <numbers>

namespace gctm {

/// Sinusoidal features of the two time conditions. Frequencies are
/// scale * 2^k for k = 0..num_frequencies-1; each time gets a sin and a
/// cos per frequency, so the embedding of (t, s) has 4 * num_frequencies
/// entries.
struct TimeEmbedding {
    int num_frequencies = 8;
    double scale = 1.0;

    int dim() const { return 4 * num_frequencies; }

    template <typename Scalar>
    void write(double t, double s, Scalar* out) const {
        for (int k = 0; k < num_frequencies; ++k) {
            const double w = scale * std::ldexp(1.0, k);
            out[2 * k] = static_cast<Scalar>(std::sin(w * t));
            out[2 * k + 1] = static_cast<Scalar>(std::cos(w * t));
            out[2 * num_frequencies + 2 * k] = static_cast<Scalar>(std::sin(w * s));
            out[2 * num_frequencies + 2 * k + 1] = static_cast<Scalar>(std::cos(w * s));
        }
    }
};

inline std::size_t parameter_count(const std::vector<int>& layer_dims) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l)
        n += static_cast<std::size_t>(layer_dims[l] + 1) * static_cast<std::size_t>(layer_dims[l + 1]);
    return n;
}

/// Network weights plus their exponential moving average.
///
/// Layer l stores its fan_out x fan_in weight matrix row-major, followed by
/// fan_out biases. layer_dims[0] is the input width (data dim + embedding).
struct ParamStore {
    std::vector<int> layer_dims;
    TimeEmbedding embedding;
    std::vector<float> weights;
    std::vector<float> ema_weights;
    double ema_decay = 0.999;

    int data_dim() const { return layer_dims.back(); }

    void validate() const {
        require(layer_dims.size() >= 2, "ParamStore: need at least one layer");
        for (int d : layer_dims) require(d > 0, "ParamStore: layer widths must be positive");
        require(layer_dims.front() == data_dim() + embedding.dim(),
                "ParamStore: input width must equal data dim + embedding dim");
        require(weights.size() == parameter_count(layer_dims), "ParamStore: weight length mismatch");
        require(ema_weights.size() == weights.size(), "ParamStore: ema length mismatch");
        require(ema_decay > 0.0 && ema_decay < 1.0, "ParamStore: ema_decay must lie in (0,1)");
    }
};

/// Layer widths for a data dimension, hidden width and hidden depth.
inline std::vector<int> mlp_layer_dims(int data_dim, int hidden, int depth, const TimeEmbedding& emb) {
    std::vector<int> dims{data_dim + emb.dim()};
    for (int i = 0; i < depth; ++i) dims.push_back(hidden);
    dims.push_back(data_dim);
    return dims;
}

/// Fan-in scaled Gaussian weights, zero biases. EMA starts equal to weights.
inline ParamStore init_params(std::vector<int> layer_dims, TimeEmbedding emb, std::uint64_t seed,
                              double ema_decay = 0.999) {
    ParamStore p;
    p.layer_dims = std::move(layer_dims);
    p.embedding = emb;
    p.ema_decay = ema_decay;
    p.weights.assign(parameter_count(p.layer_dims), 0.0f);
    Rng rng(seed);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < p.layer_dims.size(); ++l) {
        const int fan_in = p.layer_dims[l];
        const int fan_out = p.layer_dims[l + 1];
        std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        for (int i = 0; i < fan_in * fan_out; ++i) p.weights[off + i] = static_cast<float>(n(rng));
        off += static_cast<std::size_t>(fan_in + 1) * fan_out;
    }
    p.ema_weights = p.weights;
    p.validate();
    return p;
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> silu(const Matrix<Scalar>& z) {
    return (z.array() / (Scalar(1) + (-z.array()).exp())).matrix();
}

template <typename Scalar>
Matrix<Scalar> silu_grad(const Matrix<Scalar>& z) {
    auto sig = (Scalar(1) / (Scalar(1) + (-z.array()).exp())).eval();
    return (sig * (Scalar(1) + z.array() * (Scalar(1) - sig))).matrix();
}

}  // namespace detail

/// Activations recorded by a forward pass, consumed by backward.
template <typename Scalar>
struct Tape {
    std::vector<Matrix<Scalar>> inputs;  // input to each layer; inputs[0] are the features
    std::vector<Matrix<Scalar>> pre;     // pre-activations of hidden layers
};

/// Gradients of <cotangent, g(x,t,s)>.
struct Gradients {
    std::vector<double> weights;
    Points input;  // w.r.t. x only; time inputs are not differentiated
};

/// Read-only view of an MLP g(x, t, s) over a flat weight array.
template <typename Scalar>
class NetworkView {
public:
    using Mat = Matrix<Scalar>;

    NetworkView(const std::vector<int>& layer_dims, const TimeEmbedding& emb, std::span<const Scalar> weights)
        : dims_(layer_dims), emb_(emb), w_(weights) {
        require(dims_.size() >= 2, "network: need at least one layer");
        require(dims_.front() == data_dim() + emb_.dim(), "network: input width mismatch");
        require(w_.size() == parameter_count(dims_), "network: weight length mismatch");
        if (!all_finite(w_)) throw Fault("network: non-finite weights");
    }

    int data_dim() const { return dims_.back(); }
    const std::vector<int>& layer_dims() const { return dims_; }

    Mat features(const Points& x, std::span<const double> t, std::span<const double> s) const {
        require(x.cols() == data_dim(), "network: point dimension mismatch");
        require(static_cast<Eigen::Index>(t.size()) == x.rows() && static_cast<Eigen::Index>(s.size()) == x.rows(),
                "network: time batch size mismatch");
        const int d = data_dim();
        Mat f(x.rows(), dims_.front());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            require(t[i] >= 0.0 && t[i] <= 1.0 && s[i] >= 0.0 && s[i] <= 1.0, "network: times must lie in [0,1]");
            for (int k = 0; k < d; ++k) f(i, k) = static_cast<Scalar>(x(i, k));
            emb_.write(t[i], s[i], f.row(i).data() + d);
        }
        return f;
    }

    Points forward(const Points& x, std::span<const double> t, std::span<const double> s,
                   Tape<Scalar>* tape = nullptr) const {
        Mat a = features(x, t, s);
        if (tape) {
            tape->inputs.clear();
            tape->pre.clear();
        }
        std::size_t off = 0;
        const std::size_t layers = dims_.size() - 1;
        for (std::size_t l = 0; l < layers; ++l) {
            const int fi = dims_[l], fo = dims_[l + 1];
            Eigen::Map<const Mat> W(w_.data() + off, fo, fi);
            Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b(w_.data() + off + fi * fo, fo);
            off += static_cast<std::size_t>(fi + 1) * fo;
            Mat z = a * W.transpose();
            z.rowwise() += b;
            if (tape) tape->inputs.push_back(std::move(a));
            if (l + 1 < layers) {
                a = detail::silu(z);
                if (tape) tape->pre.push_back(std::move(z));
            } else {
                a = std::move(z);
            }
        }
        return a.template cast<double>();
    }

    /// Reverse pass for the forward call that filled `tape`.
    Gradients backward(const Tape<Scalar>& tape, const Points& cotangent) const {
        const std::size_t layers = dims_.size() - 1;
        require(tape.inputs.size() == layers, "network: tape does not match network");
        require(cotangent.rows() == tape.inputs[0].rows() && cotangent.cols() == data_dim(),
                "network: cotangent shape mismatch");
        Gradients g;
        g.weights.assign(w_.size(), 0.0);
        std::vector<std::size_t> offsets(layers);
        std::size_t off = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            offsets[l] = off;
            off += static_cast<std::size_t>(dims_[l] + 1) * dims_[l + 1];
        }
        Mat dz = cotangent.template cast<Scalar>();
        for (std::size_t li = layers; li-- > 0;) {
            const int fi = dims_[li], fo = dims_[li + 1];
            Eigen::Map<const Mat> W(w_.data() + offsets[li], fo, fi);
            Mat dW = dz.transpose() * tape.inputs[li];
            Eigen::Matrix<Scalar, 1, Eigen::Dynamic> db = dz.colwise().sum();
            double* gw = g.weights.data() + offsets[li];
            for (Eigen::Index k = 0; k < dW.size(); ++k) gw[k] = static_cast<double>(dW.data()[k]);
            for (int k = 0; k < fo; ++k) gw[fi * fo + k] = static_cast<double>(db[k]);
            Mat da = dz * W;
            if (li > 0) {
                dz = (da.array() * detail::silu_grad(tape.pre[li - 1]).array()).matrix();
            } else {
                g.input = da.leftCols(data_dim()).template cast<double>();
            }
        }
        return g;
    }

private:
    std::vector<int> dims_;
    TimeEmbedding emb_;
    std::span<const Scalar> w_;
};

inline NetworkView<float> online_view(const ParamStore& p) {
    return NetworkView<float>(p.layer_dims, p.embedding, p.weights);
}

inline NetworkView<float> ema_view(const ParamStore& p) {
    return NetworkView<float>(p.layer_dims, p.embedding, p.ema_weights);
}

/// g_theta(x, t, s) with the online weights.
inline Points forward(const ParamStore& p, const Points& x, std::span<const double> t, std::span<const double> s) {
    return online_view(p).forward(x, t, s);
}

/// Weight and input gradients of <cotangent, g_theta(x, t, s)>.
inline Gradients backward(const ParamStore& p, const Points& x, std::span<const double> t,
                          std::span<const double> s, const Points& cotangent) {
    auto net = online_view(p);
    require(cotangent.rows() == x.rows() && cotangent.cols() == x.cols(), "backward: cotangent shape mismatch");
    Tape<float> tape;
    net.forward(x, t, s, &tape);
    return net.backward(tape, cotangent);
}

// ---------------------------------------------------------------------------
// Optimizer

/// Learning-rate rule 0.0002 / (128 / batch_size).
inline double default_learning_rate(int batch_size) {
    require(batch_size > 0, "batch_size must be positive");
    return 0.0002 / (128.0 / static_cast<double>(batch_size));
}

struct OptimizerState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::int64_t step_count = 0;
    double lr = 0.0002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerState for_params(const ParamStore& p, int batch_size) {
        OptimizerState s;
        s.first_moment.assign(p.weights.size(), 0.0);
        s.second_moment.assign(p.weights.size(), 0.0);
        s.lr = default_learning_rate(batch_size);
        return s;
    }
};

/// Bias-corrected Adam. A non-finite gradient leaves everything untouched.
inline void adam_step(ParamStore& p, OptimizerState& st, std::span<const double> grad) {
    require(grad.size() == p.weights.size(), "adam_step: gradient length mismatch");
    require(st.first_moment.size() == grad.size() && st.second_moment.size() == grad.size(),
            "adam_step: moment length mismatch");
    if (!all_finite(grad)) throw Fault("adam_step: non-finite gradient");
    st.step_count += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        double& m = st.first_moment[i];
        double& v = st.second_moment[i];
        m = st.beta1 * m + (1.0 - st.beta1) * grad[i];
        v = st.beta2 * v + (1.0 - st.beta2) * grad[i] * grad[i];
        const double update = st.lr * (m / bc1) / (std::sqrt(v / bc2) + st.eps);
        p.weights[i] = static_cast<float>(static_cast<double>(p.weights[i]) - update);
    }
}

/// ema <- decay * ema + (1 - decay) * weights.
inline void ema_update(ParamStore& p) {
    require(p.ema_weights.size() == p.weights.size(), "ema_update: length mismatch");
    const double a = p.ema_decay;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        const double e = a * p.ema_weights[i] + (1.0 - a) * p.weights[i];
        p.ema_weights[i] = static_cast<float>(e);
    }
}

// ---------------------------------------------------------------------------
// Distance

inline double pseudo_huber_c(int dim) { return 0.00054 * std::sqrt(static_cast<double>(dim)); }

/// sqrt(||a-b||^2 + c^2) - c per row, c = 0.00054 sqrt(dim).
inline std::vector<double> pseudo_huber(const Points& a, const Points& b, int dim) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "pseudo_huber: shape mismatch");
    require(dim > 0, "pseudo_huber: dim must be positive");
    const double c = pseudo_huber_c(dim);
    std::vector<double> out(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double sq = (a.row(i) - b.row(i)).squaredNorm();
        // sqrt(sq + c^2) - c, rearranged to avoid cancellation for small sq
        out[i] = sq / (std::sqrt(sq + c * c) + c);
    }
    return out;
}

}  // namespace gctm
