#pragma once

#include "gctm/flow_ode.hpp"
#include "gctm/nn.hpp"
#include "gctm/oracle.hpp"

namespace gctm {

/// A two-time regressor g(x, t, s) with an input vector-Jacobian product.
class Regressor {
public:
    virtual ~Regressor() = default;
    virtual Eigen::Index data_dim() const = 0;
    virtual Points predict(const Points& x, std::span<const double> t, std::span<const double> s) const = 0;
    /// d/dx <cotangent, g(x, t, s)>, row by row.
    virtual Points input_vjp(const Points& x, std::span<const double> t, std::span<const double> s,
                             const Points& cotangent) const = 0;
};

/// g backed by an MLP weight array (online or EMA copy of a ParamStore).
template <typename Scalar = float>
class NetworkRegressor final : public Regressor {
public:
    explicit NetworkRegressor(NetworkView<Scalar> net) : net_(std::move(net)) {}

    Eigen::Index data_dim() const override { return net_.data_dim(); }

    Points predict(const Points& x, std::span<const double> t, std::span<const double> s) const override {
        return net_.forward(x, t, s);
    }

    Points input_vjp(const Points& x, std::span<const double> t, std::span<const double> s,
                     const Points& cotangent) const override {
        Tape<Scalar> tape;
        net_.forward(x, t, s, &tape);
        return net_.backward(tape, cotangent).input;
    }

    const NetworkView<Scalar>& view() const { return net_; }

private:
    NetworkView<Scalar> net_;
};

inline NetworkRegressor<float> online_regressor(const ParamStore& p) { return NetworkRegressor<float>(online_view(p)); }
inline NetworkRegressor<float> ema_regressor(const ParamStore& p) { return NetworkRegressor<float>(ema_view(p)); }

/// G(x, t, s) = (s/t) x + (1 - s/t) g(x, t, s); exactly x where s == t.
inline Points apply_g(const Regressor& g, const Points& x, std::span<const double> t, std::span<const double> s) {
    return big_g(x, t, s, g.predict(x, t, s));
}

inline Points apply_g(const Regressor& g, const Points& x, double t, double s) {
    const auto tv = filled(x.rows(), t), sv = filled(x.rows(), s);
    return apply_g(g, x, tv, sv);
}

/// d/dx <cotangent, G(x, t, s)>.
inline Points apply_g_vjp(const Regressor& g, const Points& x, std::span<const double> t, std::span<const double> s,
                          const Points& cotangent) {
    Points scaled = cotangent;
    Points direct(cotangent.rows(), cotangent.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        require(t[i] > 0.0, "apply_g_vjp: t must be > 0");
        const double r = s[i] / t[i];
        direct.row(i) = r * cotangent.row(i);
        scaled.row(i) *= (1.0 - r);
    }
    return direct + g.input_vjp(x, t, s, scaled);
}

/// The exact solution for independent Gaussian endpoints, written in
/// g-form: g(x,t,s) = (G - (s/t) x) / (1 - s/t) for s < t and the
/// posterior mean for s == t. Stands in for a perfectly trained network.
class OracleRegressor final : public Regressor {
public:
    explicit OracleRegressor(GaussianSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    Eigen::Index data_dim() const override { return spec_.dim(); }

    Points predict(const Points& x, std::span<const double> t, std::span<const double> s) const override {
        Points out(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = row_g(x.row(i), t[i], s[i]);
        return out;
    }

    Points input_vjp(const Points& x, std::span<const double> t, std::span<const double> s,
                     const Points& cotangent) const override {
        Points out(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            out.row(i) = cotangent.row(i).cwiseProduct(diag_jacobian(t[i], s[i]).transpose());
        return out;
    }

    const GaussianSpec& spec() const { return spec_; }

private:
    Eigen::RowVectorXd row_g(const Eigen::RowVectorXd& x, double t, double s) const {
        Points xr = x;
        if (t == 0.0) return x;
        if (s == t) return fm_posterior_mean(xr, t, spec_).row(0);
        const double r = s / t;
        Points G = gaussian_flow_map(xr, t, s, spec_);
        return ((G.row(0) - r * x) / (1.0 - r)).eval();
    }

    // g is affine in x with a diagonal Jacobian
    Eigen::VectorXd diag_jacobian(double t, double s) const {
        if (t == 0.0) return Eigen::VectorXd::Ones(spec_.dim());
        if (s == t) return ((1.0 - t) * spec_.var0.array() / spec_.var_at(t).array()).matrix();
        const double r = s / t;
        const Eigen::ArrayXd ratio = (spec_.var_at(s).array() / spec_.var_at(t).array()).sqrt();
        return ((ratio - r) / (1.0 - r)).matrix();
    }

    GaussianSpec spec_;
};

}  // namespace gctm
