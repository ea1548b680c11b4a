#pragma once

#include "megcast/common.hpp"

// Minimal reverse-mode building blocks. Everything is templated on the
// scalar: float is the production precision (and the checkpoint precision),
// double exists so finite-difference gradient checks can run at a tolerance
// where they are conclusive.
namespace megcast::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Row = Eigen::RowVector<S, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct Param {
    std::string name;
    Mat<S> w;
    Mat<S> g;

    void init_zero(Eigen::Index rows, Eigen::Index cols, std::string n) {
        name = std::move(n);
        w = Mat<S>::Zero(rows, cols);
        g = Mat<S>::Zero(rows, cols);
    }

    void init_normal(Eigen::Index rows, Eigen::Index cols, std::string n, Rng& rng, double sd) {
        init_zero(rows, cols, std::move(n));
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = static_cast<S>(sd * rng.gauss());
    }

    int64_t count() const { return static_cast<int64_t>(w.size()); }
};

// Non-owning registry; models expose their parameters through one of these
// for the optimiser, the gradient checker, and the checkpoint writer.
template <typename S>
struct ParamSet {
    std::vector<Param<S>*> params;

    void add(Param<S>& p) { params.push_back(&p); }

    int64_t count() const {
        int64_t n = 0;
        for (const auto* p : params) n += p->count();
        return n;
    }

    void zero_grad() {
        for (auto* p : params) p->g.setZero();
    }
};

template <typename S>
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::vector<Mat<S>> m, v;

    void step(ParamSet<S>& ps) {
        if (m.empty()) {
            for (auto* p : ps.params) {
                m.push_back(Mat<S>::Zero(p->w.rows(), p->w.cols()));
                v.push_back(Mat<S>::Zero(p->w.rows(), p->w.cols()));
            }
        }
        if (m.size() != ps.params.size()) throw std::logic_error("optimiser bound to a different parameter set");
        ++t;
        const S bc1 = static_cast<S>(1.0 - std::pow(beta1, static_cast<double>(t)));
        const S bc2 = static_cast<S>(1.0 - std::pow(beta2, static_cast<double>(t)));
        for (size_t i = 0; i < ps.params.size(); ++i) {
            auto& p = *ps.params[i];
            m[i] = static_cast<S>(beta1) * m[i] + static_cast<S>(1.0 - beta1) * p.g;
            v[i] = static_cast<S>(beta2) * v[i] + static_cast<S>(1.0 - beta2) * p.g.cwiseProduct(p.g);
            p.w -= (static_cast<S>(lr) * (m[i] / bc1).array() /
                    ((v[i] / bc2).array().sqrt() + static_cast<S>(eps)))
                       .matrix();
        }
    }
};

// y = x * w + b. x is N x in, w is in x out, b is 1 x out.
template <typename S>
Mat<S> linear(const Mat<S>& x, const Param<S>& w, const Param<S>& b) {
    return (x * w.w).rowwise() + b.w.row(0);
}

template <typename S>
void linear_backward(const Mat<S>& x, Param<S>& w, Param<S>& b, const Mat<S>& dy, Mat<S>* dx) {
    w.g.noalias() += x.transpose() * dy;
    b.g.row(0) += dy.colwise().sum();
    if (dx) dx->noalias() += dy * w.w.transpose();
}

template <typename S>
struct LnCache {
    Mat<S> xhat;
    Vec<S> inv_sd;
};

// Row-wise layer normalisation with learned gain/bias.
template <typename S>
Mat<S> layernorm(const Mat<S>& x, const Param<S>& gain, const Param<S>& bias, LnCache<S>& cache) {
    const Eigen::Index n = x.rows(), e = x.cols();
    cache.xhat.resize(n, e);
    cache.inv_sd.resize(n);
    Mat<S> y(n, e);
    for (Eigen::Index i = 0; i < n; ++i) {
        const S mean = x.row(i).mean();
        const S var = (x.row(i).array() - mean).square().sum() / static_cast<S>(e);
        const S inv = S(1) / std::sqrt(var + static_cast<S>(1e-5));
        cache.inv_sd[i] = inv;
        cache.xhat.row(i) = (x.row(i).array() - mean) * inv;
        y.row(i) = cache.xhat.row(i).cwiseProduct(gain.w.row(0)) + bias.w.row(0);
    }
    return y;
}

template <typename S>
void layernorm_backward(const LnCache<S>& cache, Param<S>& gain, Param<S>& bias, const Mat<S>& dy, Mat<S>& dx) {
    const Eigen::Index n = dy.rows(), e = dy.cols();
    gain.g.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
    bias.g.row(0) += dy.colwise().sum();
    dx.resize(n, e);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto dxhat = dy.row(i).cwiseProduct(gain.w.row(0));
        const S sum_dxhat = dxhat.sum();
        const S dot = dxhat.cwiseProduct(cache.xhat.row(i)).sum();
        dx.row(i) = (cache.inv_sd[i] / static_cast<S>(e)) *
                    (static_cast<S>(e) * dxhat.array() - sum_dxhat - cache.xhat.row(i).array() * dot);
    }
}

// GPT2's tanh-approximation gelu.
template <typename S>
Mat<S> gelu(const Mat<S>& x) {
    const S c = static_cast<S>(std::sqrt(2.0 / M_PI));
    return (S(0.5) * x.array() * (S(1) + ((c * (x.array() + S(0.044715) * x.array().cube())).tanh()))).matrix();
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
    const S c = static_cast<S>(std::sqrt(2.0 / M_PI));
    const auto u = c * (x.array() + S(0.044715) * x.array().cube());
    const auto th = u.tanh();
    const auto du = c * (S(1) + S(3) * S(0.044715) * x.array().square());
    const auto grad = S(0.5) * (S(1) + th) + S(0.5) * x.array() * (S(1) - th.square()) * du;
    return (dy.array() * grad).matrix();
}

template <typename S>
struct AttnCache {
    Mat<S> x;                     // input, T x E
    Mat<S> qkv;                   // T x 3E
    std::vector<Mat<S>> probs;    // per head, T x T lower-triangular rows
    Mat<S> concat;                // T x E, pre output-projection
};

// Causal multi-head self-attention over one sequence.
template <typename S>
Mat<S> attention(const Mat<S>& x, int n_heads, const Param<S>& wqkv, const Param<S>& bqkv, const Param<S>& wproj,
                 const Param<S>& bproj, AttnCache<S>& cache) {
    const Eigen::Index T = x.rows(), E = x.cols();
    const Eigen::Index d = E / n_heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));

    cache.x = x;
    cache.qkv = linear(x, wqkv, bqkv);
    cache.probs.assign(static_cast<size_t>(n_heads), Mat<S>());
    cache.concat.resize(T, E);

    for (int h = 0; h < n_heads; ++h) {
        const auto q = cache.qkv.block(0, h * d, T, d);
        const auto k = cache.qkv.block(0, E + h * d, T, d);
        const auto v = cache.qkv.block(0, 2 * E + h * d, T, d);
        Mat<S>& p = cache.probs[static_cast<size_t>(h)];
        p = Mat<S>::Zero(T, T);
        for (Eigen::Index i = 0; i < T; ++i) {
            Vec<S> row = (k.topRows(i + 1) * q.row(i).transpose()) * scale;
            const S mx = row.maxCoeff();
            row = (row.array() - mx).exp();
            p.row(i).head(i + 1) = row.transpose() / row.sum();
        }
        cache.concat.block(0, h * d, T, d) = p * v;
    }
    return linear(cache.concat, wproj, bproj);
}

template <typename S>
void attention_backward(const AttnCache<S>& cache, int n_heads, Param<S>& wqkv, Param<S>& bqkv, Param<S>& wproj,
                        Param<S>& bproj, const Mat<S>& dy, Mat<S>& dx) {
    const Eigen::Index T = cache.x.rows(), E = cache.x.cols();
    const Eigen::Index d = E / n_heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));

    Mat<S> dconcat = Mat<S>::Zero(T, E);
    wproj.g.noalias() += cache.concat.transpose() * dy;
    bproj.g.row(0) += dy.colwise().sum();
    dconcat.noalias() = dy * wproj.w.transpose();

    Mat<S> dqkv = Mat<S>::Zero(T, 3 * E);
    for (int h = 0; h < n_heads; ++h) {
        const auto q = cache.qkv.block(0, h * d, T, d);
        const auto k = cache.qkv.block(0, E + h * d, T, d);
        const auto v = cache.qkv.block(0, 2 * E + h * d, T, d);
        const Mat<S>& p = cache.probs[static_cast<size_t>(h)];
        const auto dout_h = dconcat.block(0, h * d, T, d);

        // dV = Pᵀ dO; dP = dO Vᵀ.
        dqkv.block(0, 2 * E + h * d, T, d).noalias() += p.transpose() * dout_h;
        for (Eigen::Index i = 0; i < T; ++i) {
            Vec<S> dp = v.topRows(i + 1) * dout_h.row(i).transpose();
            const auto pi = p.row(i).head(i + 1).transpose();
            const S dot = dp.cwiseProduct(pi).sum();
            const Vec<S> ds = (pi.array() * (dp.array() - dot)).matrix();
            dqkv.block(0, h * d, T, d).row(i).noalias() += (ds.transpose() * k.topRows(i + 1)) * scale;
            dqkv.block(0, E + h * d, i + 1, d).noalias() += ds * (q.row(i) * scale);
        }
    }
    wqkv.g.noalias() += cache.x.transpose() * dqkv;
    bqkv.g.row(0) += dqkv.colwise().sum();
    dx.noalias() += dqkv * wqkv.w.transpose();
}

// Cross-entropy summed over rows whose target is >= 0. dlogits is written
// (not accumulated) as softmax minus one-hot, unscaled; the training loop
// divides accumulated gradients by the total predicted-position count.
template <typename S>
std::pair<double, int64_t> cross_entropy(const Mat<S>& logits, const VectorXi& targets, Mat<S>& dlogits) {
    if (targets.size() != logits.rows()) throw std::invalid_argument("target length mismatch");
    dlogits = Mat<S>::Zero(logits.rows(), logits.cols());
    double loss = 0.0;
    int64_t count = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = targets[i];
        if (y < 0) continue;
        if (y >= logits.cols()) throw std::invalid_argument("target outside vocabulary");
        const S mx = logits.row(i).maxCoeff();
        const Vec<S> e = (logits.row(i).array() - mx).exp();
        const S z = e.sum();
        loss += -static_cast<double>(logits(i, y) - mx) + std::log(static_cast<double>(z));
        dlogits.row(i) = (e / z).transpose();
        dlogits(i, y) -= S(1);
        ++count;
    }
    return {loss, count};
}

// Softmax over a full row vector (no masking); used at inference time.
template <typename S>
Vec<S> softmax(const Vec<S>& logits) {
    const S mx = logits.maxCoeff();
    Vec<S> e = (logits.array() - mx).exp();
    return e / e.sum();
}

}  // namespace megcast::nn
