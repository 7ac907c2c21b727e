// svtkit — singing voice transcription toolkit
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "svt/common.hpp"

namespace svt {

using Mat = Eigen::MatrixXd;  // rows = frames/time steps

/// Named parameter with its gradient accumulator.
struct Tensor {
    std::string name;
    Mat value;
    Mat grad;

    Tensor() = default;
    Tensor(std::string n, int rows, int cols) : name(std::move(n)) {
        value.setZero(rows, cols);
        grad.setZero(rows, cols);
    }

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamRefs = std::vector<Tensor*>;

inline void xavier_init(Tensor& t, Rng& rng, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
        for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = rng.uniform(-a, a);
}

// ---------------------------------------------------------------------------
// Elementwise GELU (exact form, so finite differences are clean)
// ---------------------------------------------------------------------------

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

class Gelu {
public:
    Mat forward(const Mat& x) {
        x_ = x;
        return x.unaryExpr([](double v) { return gelu(v); });
    }
    Mat backward(const Mat& dy) const {
        return dy.cwiseProduct(x_.unaryExpr([](double v) { return gelu_grad(v); }));
    }

private:
    Mat x_;
};

// ---------------------------------------------------------------------------
// Linear: y = x W + b
// ---------------------------------------------------------------------------

class Linear {
public:
    Linear(const std::string& name, int in, int out, Rng& rng)
        : w_(name + ".w", in, out), b_(name + ".b", 1, out) {
        xavier_init(w_, rng, in, out);
    }

    Mat forward(const Mat& x) {
        x_ = x;
        return (x * w_.value).rowwise() + b_.value.row(0);
    }

    Mat backward(const Mat& dy) {
        w_.grad.noalias() += x_.transpose() * dy;
        b_.grad.row(0) += dy.colwise().sum();
        return dy * w_.value.transpose();
    }

    void params(ParamRefs& out) {
        out.push_back(&w_);
        out.push_back(&b_);
    }

private:
    Tensor w_, b_;
    Mat x_;
};

// ---------------------------------------------------------------------------
// Temporal convolution over T x C inputs (im2col + GEMM)
// ---------------------------------------------------------------------------

class Conv1d {
public:
    Conv1d(const std::string& name, int in_ch, int out_ch, int kernel, int stride, int pad, Rng& rng)
        : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad),
          w_(name + ".w", in_ch * kernel, out_ch), b_(name + ".b", 1, out_ch) {
        xavier_init(w_, rng, in_ch * kernel, out_ch);
    }

    int output_length(int input_len) const {
        const int padded = input_len + 2 * pad_;
        if (padded < kernel_) return 0;
        return (padded - kernel_) / stride_ + 1;
    }

    Mat forward(const Mat& x) {
        input_len_ = static_cast<int>(x.rows());
        const int t_out = output_length(input_len_);
        if (t_out <= 0) {
            throw ValidationError("conv input of " + std::to_string(input_len_) +
                                  " steps is shorter than the kernel");
        }
        cols_.setZero(t_out, in_ch_ * kernel_);
        for (int i = 0; i < t_out; ++i) {
            const int start = i * stride_ - pad_;
            for (int j = 0; j < kernel_; ++j) {
                const int src = start + j;
                if (src >= 0 && src < input_len_) {
                    cols_.block(i, j * in_ch_, 1, in_ch_) = x.row(src);
                }
            }
        }
        return (cols_ * w_.value).rowwise() + b_.value.row(0);
    }

    Mat backward(const Mat& dy) {
        w_.grad.noalias() += cols_.transpose() * dy;
        b_.grad.row(0) += dy.colwise().sum();
        const Mat dcols = dy * w_.value.transpose();
        Mat dx = Mat::Zero(input_len_, in_ch_);
        for (int i = 0; i < static_cast<int>(dy.rows()); ++i) {
            const int start = i * stride_ - pad_;
            for (int j = 0; j < kernel_; ++j) {
                const int src = start + j;
                if (src >= 0 && src < input_len_) {
                    dx.row(src) += dcols.block(i, j * in_ch_, 1, in_ch_);
                }
            }
        }
        return dx;
    }

    void params(ParamRefs& out) {
        out.push_back(&w_);
        out.push_back(&b_);
    }

private:
    int in_ch_, out_ch_, kernel_, stride_, pad_;
    Tensor w_, b_;
    Mat cols_;
    int input_len_ = 0;
};

// ---------------------------------------------------------------------------
// LayerNorm over the feature dimension
// ---------------------------------------------------------------------------

class LayerNorm {
public:
    LayerNorm(const std::string& name, int dim, Rng&)
        : gamma_(name + ".gamma", 1, dim), beta_(name + ".beta", 1, dim) {
        gamma_.value.setOnes();
    }

    Mat forward(const Mat& x) {
        const auto D = static_cast<double>(x.cols());
        inv_std_.resize(x.rows());
        xhat_.resize(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double mean = x.row(r).mean();
            const double var = (x.row(r).array() - mean).square().sum() / D;
            inv_std_(r) = 1.0 / std::sqrt(var + kEps);
            xhat_.row(r) = (x.row(r).array() - mean) * inv_std_(r);
        }
        return (xhat_.array().rowwise() * gamma_.value.row(0).array()).rowwise() +
               beta_.value.row(0).array();
    }

    Mat backward(const Mat& dy) {
        const auto D = static_cast<double>(dy.cols());
        gamma_.grad.row(0) += dy.cwiseProduct(xhat_).colwise().sum();
        beta_.grad.row(0) += dy.colwise().sum();
        Mat dx(dy.rows(), dy.cols());
        for (Eigen::Index r = 0; r < dy.rows(); ++r) {
            const Eigen::RowVectorXd dxhat =
                dy.row(r).cwiseProduct(gamma_.value.row(0));
            const double m1 = dxhat.mean();
            const double m2 = dxhat.cwiseProduct(xhat_.row(r)).sum() / D;
            dx.row(r) = inv_std_(r) * (dxhat.array() - m1 - xhat_.row(r).array() * m2);
        }
        return dx;
    }

    void params(ParamRefs& out) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

private:
    static constexpr double kEps = 1e-5;
    Tensor gamma_, beta_;
    Mat xhat_;
    Eigen::VectorXd inv_std_;
};

// ---------------------------------------------------------------------------
// Multi-head attention; self-attention when both inputs are the same stream
// ---------------------------------------------------------------------------

class MultiHeadAttention {
public:
    MultiHeadAttention(const std::string& name, int dim, int heads, Rng& rng)
        : dim_(dim), heads_(heads),
          wq_(name + ".q", dim, dim, rng), wk_(name + ".k", dim, dim, rng),
          wv_(name + ".v", dim, dim, rng), wo_(name + ".o", dim, dim, rng) {
        if (dim % heads != 0) throw ValidationError("attention dim must divide into heads");
    }

    Mat forward(const Mat& query_in, const Mat& kv_in) {
        const int d = dim_ / heads_;
        q_ = wq_.forward(query_in);
        k_ = wk_.forward(kv_in);
        v_ = wv_.forward(kv_in);
        att_.assign(static_cast<std::size_t>(heads_), Mat());
        Mat concat(query_in.rows(), dim_);
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        for (int h = 0; h < heads_; ++h) {
            const auto qh = q_.middleCols(h * d, d);
            const auto kh = k_.middleCols(h * d, d);
            const auto vh = v_.middleCols(h * d, d);
            Mat scores = qh * kh.transpose() * scale;
            for (Eigen::Index r = 0; r < scores.rows(); ++r) {
                const double m = scores.row(r).maxCoeff();
                scores.row(r) = (scores.row(r).array() - m).exp();
                scores.row(r) /= scores.row(r).sum();
            }
            att_[static_cast<std::size_t>(h)] = std::move(scores);
            concat.middleCols(h * d, d) = att_[static_cast<std::size_t>(h)] * vh;
        }
        return wo_.forward(concat);
    }

    /// Returns (d_query_in, d_kv_in); for self-attention add the two.
    std::pair<Mat, Mat> backward(const Mat& dy) {
        const int d = dim_ / heads_;
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        const Mat dconcat = wo_.backward(dy);
        Mat dq(q_.rows(), dim_), dk(k_.rows(), dim_), dv(v_.rows(), dim_);
        for (int h = 0; h < heads_; ++h) {
            const Mat& a = att_[static_cast<std::size_t>(h)];
            const auto doh = dconcat.middleCols(h * d, d);
            const auto vh = v_.middleCols(h * d, d);
            const Mat da = doh * vh.transpose();
            dv.middleCols(h * d, d) = a.transpose() * doh;
            // softmax backward row-wise
            Mat ds(a.rows(), a.cols());
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                const double dot = da.row(r).dot(a.row(r));
                ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
            }
            dq.middleCols(h * d, d) = ds * k_.middleCols(h * d, d) * scale;
            dk.middleCols(h * d, d) = ds.transpose() * q_.middleCols(h * d, d) * scale;
        }
        const Mat dquery_in = wq_.backward(dq);
        const Mat dkv_in = wk_.backward(dk) + wv_.backward(dv);
        return {dquery_in, dkv_in};
    }

    void params(ParamRefs& out) {
        wq_.params(out);
        wk_.params(out);
        wv_.params(out);
        wo_.params(out);
    }

private:
    int dim_, heads_;
    Linear wq_, wk_, wv_, wo_;
    Mat q_, k_, v_;
    std::vector<Mat> att_;
};

// ---------------------------------------------------------------------------
// Feed-forward sublayer
// ---------------------------------------------------------------------------

class FeedForward {
public:
    FeedForward(const std::string& name, int dim, int hidden, Rng& rng)
        : in_(name + ".in", dim, hidden, rng), out_(name + ".out", hidden, dim, rng) {}

    Mat forward(const Mat& x) { return out_.forward(act_.forward(in_.forward(x))); }
    Mat backward(const Mat& dy) { return in_.backward(act_.backward(out_.backward(dy))); }

    void params(ParamRefs& out) {
        in_.params(out);
        out_.params(out);
    }

private:
    Linear in_;
    Gelu act_;
    Linear out_;
};

// ---------------------------------------------------------------------------
// Post-LN transformer encoder block:
//   h = LN1(x + SelfAtt(x));  y = LN2(h + FFN(h))
// ---------------------------------------------------------------------------

class TransformerBlock {
public:
    TransformerBlock(const std::string& name, int dim, int heads, int ffn_dim, Rng& rng)
        : att_(name + ".att", dim, heads, rng), ln1_(name + ".ln1", dim, rng),
          ffn_(name + ".ffn", dim, ffn_dim, rng), ln2_(name + ".ln2", dim, rng) {}

    Mat forward(const Mat& x) {
        const Mat h = ln1_.forward(x + att_.forward(x, x));
        return ln2_.forward(h + ffn_.forward(h));
    }

    Mat backward(const Mat& dy) {
        const Mat dh_sum = ln2_.backward(dy);
        const Mat dh = dh_sum + ffn_.backward(dh_sum);
        const Mat dx_sum = ln1_.backward(dh);
        auto [dq, dkv] = att_.backward(dx_sum);
        return dx_sum + dq + dkv;
    }

    void params(ParamRefs& out) {
        att_.params(out);
        ln1_.params(out);
        ffn_.params(out);
        ln2_.params(out);
    }

private:
    MultiHeadAttention att_;
    LayerNorm ln1_;
    FeedForward ffn_;
    LayerNorm ln2_;
};

/// Fixed sinusoidal positional encoding added to the features.
inline void add_positional_encoding(Mat& x) {
    const auto T = x.rows();
    const auto D = x.cols();
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index i = 0; i < D; i += 2) {
            const double angle =
                static_cast<double>(t) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(D));
            x(t, i) += std::sin(angle);
            if (i + 1 < D) x(t, i + 1) += std::cos(angle);
        }
    }
}

// ---------------------------------------------------------------------------
// Adam with parameter groups (one optimizer instance per group)
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(ParamRefs params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Tensor* p : params_) {
            m_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
            v_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    long long steps() const { return t_; }

    void zero_grad() {
        for (Tensor* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i];
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
            const Mat mhat = m_[i] / bc1;
            const Mat vhat = v_[i] / bc2;
            p.value.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
        }
    }

    const ParamRefs& params() const { return params_; }
    Mat& moment1(std::size_t i) { return m_[i]; }
    Mat& moment2(std::size_t i) { return v_[i]; }
    void set_steps(long long t) { t_ = t; }

private:
    ParamRefs params_;
    AdamConfig cfg_;
    std::vector<Mat> m_, v_;
    long long t_ = 0;
};

}  // namespace svt
