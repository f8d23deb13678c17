#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "autohedge/errors.hpp"
#include "autohedge/rng.hpp"

namespace autohedge {

enum class OutputActivation : std::uint32_t { linear = 0, sigmoid = 1 };

/// Fully connected net: rectifier on hidden layers, linear or sigmoid output.
/// Samples are columns: inputs are (n_in x batch), outputs (n_out x batch).
template <class T>
class DenseNet {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    struct Cache {
        std::vector<Mat> act;  ///< act[0] = input, act[l+1] = output of layer l
        std::vector<Mat> pre;  ///< pre-activations of each layer
    };

    /// Parameter-shaped gradient buffers.
    struct Grads {
        std::vector<Mat> w;
        std::vector<Vec> b;
    };

    DenseNet() = default;

    /// sizes = {n_in, hidden..., n_out}. Weights ~ U(+-1/sqrt(fan_in)); the output layer
    /// uses U(+-final_scale) so initial outputs start near zero.
    DenseNet(std::vector<std::size_t> sizes, OutputActivation out, Rng& rng, T final_scale = T(3e-3))
        : sizes_(std::move(sizes)), out_(out) {
        require(sizes_.size() >= 2, "DenseNet needs at least an input and an output size");
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            const auto fan_in = static_cast<T>(sizes_[l]);
            const T lim = (l + 2 == sizes_.size()) ? final_scale : T(1) / std::sqrt(fan_in);
            std::uniform_real_distribution<double> u(-lim, lim);
            Mat w(sizes_[l + 1], sizes_[l]);
            Vec b(sizes_[l + 1]);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(u(rng));
            for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = static_cast<T>(u(rng));
            w_.push_back(std::move(w));
            b_.push_back(std::move(b));
        }
    }

    const std::vector<std::size_t>& sizes() const { return sizes_; }
    OutputActivation output_activation() const { return out_; }
    std::size_t n_layers() const { return w_.size(); }
    std::size_t n_in() const { return sizes_.front(); }
    std::size_t n_out() const { return sizes_.back(); }
    std::vector<Mat>& weights() { return w_; }
    std::vector<Vec>& biases() { return b_; }
    const std::vector<Mat>& weights() const { return w_; }
    const std::vector<Vec>& biases() const { return b_; }

    std::size_t n_params() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < w_.size(); ++l) n += static_cast<std::size_t>(w_[l].size() + b_[l].size());
        return n;
    }

    /// Visits every parameter in a fixed order (layer by layer, weights then biases).
    template <class Fn>
    void for_each_param(Fn&& fn) {
        for (std::size_t l = 0; l < w_.size(); ++l) {
            for (Eigen::Index i = 0; i < w_[l].size(); ++i) fn(w_[l].data()[i]);
            for (Eigen::Index i = 0; i < b_[l].size(); ++i) fn(b_[l].data()[i]);
        }
    }

    Mat forward(const Mat& x) const {
        Mat a = x;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            Mat z = (w_[l] * a).colwise() + b_[l];
            a = activate(z, l);
        }
        return a;
    }

    Mat forward(const Mat& x, Cache& cache) const {
        cache.act.resize(w_.size() + 1);
        cache.pre.resize(w_.size());
        cache.act[0] = x;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            cache.pre[l] = (w_[l] * cache.act[l]).colwise() + b_[l];
            cache.act[l + 1] = activate(cache.pre[l], l);
        }
        return cache.act.back();
    }

    /// Pre-activation of the output layer (the logit for a sigmoid output).
    Mat output_preactivation(const Mat& x) const {
        Cache c;
        forward(x, c);
        return c.pre.back();
    }

    Grads zero_grads() const {
        Grads g;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            g.w.push_back(Mat::Zero(w_[l].rows(), w_[l].cols()));
            g.b.push_back(Vec::Zero(b_[l].size()));
        }
        return g;
    }

    /// Back-propagates dL/d(output). Adds parameter gradients into `grads` when given and
    /// returns dL/d(input).
    Mat backward(const Cache& cache, const Mat& d_out, Grads* grads) const {
        Mat delta = d_out;
        for (std::size_t l = w_.size(); l-- > 0;) {
            delta.array() *= activation_derivative(cache, l).array();
            if (grads) {
                grads->w[l].noalias() += delta * cache.act[l].transpose();
                grads->b[l] += delta.rowwise().sum();
            }
            delta = w_[l].transpose() * delta;
        }
        return delta;
    }

    /// target <- (1 - rate) * target + rate * source
    void soft_update_from(const DenseNet& src, T rate) {
        for (std::size_t l = 0; l < w_.size(); ++l) {
            w_[l] = (T(1) - rate) * w_[l] + rate * src.w_[l];
            b_[l] = (T(1) - rate) * b_[l] + rate * src.b_[l];
        }
    }

    /// Squared L2 distance between parameter vectors.
    T distance2(const DenseNet& other) const {
        T d = 0;
        for (std::size_t l = 0; l < w_.size(); ++l)
            d += (w_[l] - other.w_[l]).squaredNorm() + (b_[l] - other.b_[l]).squaredNorm();
        return d;
    }

    template <class U>
    DenseNet<U> cast() const {
        DenseNet<U> out;
        out.sizes_ = sizes_;
        out.out_ = out_;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            out.w_.push_back(w_[l].template cast<U>());
            out.b_.push_back(b_[l].template cast<U>());
        }
        return out;
    }

private:
    template <class>
    friend class DenseNet;

    bool is_output(std::size_t l) const { return l + 1 == w_.size(); }

    Mat activate(const Mat& z, std::size_t l) const {
        if (!is_output(l)) return z.cwiseMax(T(0));
        if (out_ == OutputActivation::sigmoid) return (T(1) / (T(1) + (-z.array()).exp())).matrix();
        return z;
    }

    Mat activation_derivative(const Cache& c, std::size_t l) const {
        if (!is_output(l)) return (c.pre[l].array() > T(0)).template cast<T>().matrix();
        if (out_ == OutputActivation::sigmoid) {
            const auto& y = c.act[l + 1];
            return (y.array() * (T(1) - y.array())).matrix();
        }
        return Mat::Ones(c.pre[l].rows(), c.pre[l].cols());
    }

    std::vector<std::size_t> sizes_;
    OutputActivation out_ = OutputActivation::linear;
    std::vector<Mat> w_;
    std::vector<Vec> b_;
};

/// Adam with bias correction.
template <class T>
class Adam {
public:
    Adam() = default;
    explicit Adam(const DenseNet<T>& net, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(net.zero_grads()), v_(net.zero_grads()) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

    void step(DenseNet<T>& net, const typename DenseNet<T>::Grads& g) {
        ++t_;
        const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
        const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
        const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
        const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
        auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
            m = b1 * m + (T(1) - b1) * grad;
            v = b2 * v + (T(1) - b2) * grad.cwiseProduct(grad);
            param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        };
        for (std::size_t l = 0; l < net.n_layers(); ++l) {
            update(net.weights()[l], g.w[l], m_.w[l], v_.w[l]);
            update(net.biases()[l], g.b[l], m_.b[l], v_.b[l]);
        }
    }

private:
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    typename DenseNet<T>::Grads m_, v_;
    std::size_t t_ = 0;
};

}  // namespace autohedge
