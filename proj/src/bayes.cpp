#include "megcast/bayes.hpp"

#include <cmath>

namespace megcast {

namespace detail {

double log_softmax_at(const VectorXd& logits, int index) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits[index] - lse;
}

}  // namespace detail

int PosteriorTrace::decoded() const {
    if (posterior.rows() == 0 || labels.empty()) throw std::logic_error("empty posterior trace");
    Eigen::Index best = 0;
    posterior.row(posterior.rows() - 1).maxCoeff(&best);
    return labels[static_cast<size_t>(best)];
}

PosteriorTrace bayes_from_loglik(const MatrixXd& step_loglik, const VectorXd& prior) {
    const Eigen::Index N = step_loglik.cols();
    if (prior.size() != N) throw std::invalid_argument("prior size does not match the label count");
    if ((prior.array() < 0.0).any()) throw std::invalid_argument("prior has negative mass");
    if (std::abs(prior.sum() - 1.0) > 1e-6) throw std::invalid_argument("prior must sum to 1");
    if (step_loglik.rows() == 0) throw std::invalid_argument("no scored steps");

    PosteriorTrace tr;
    tr.labels.resize(static_cast<size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) tr.labels[static_cast<size_t>(i)] = static_cast<int>(i) + 1;
    tr.cumulative_loglik = step_loglik;
    for (Eigen::Index s = 1; s < step_loglik.rows(); ++s)
        tr.cumulative_loglik.row(s) += tr.cumulative_loglik.row(s - 1);

    const Eigen::ArrayXd logp = prior.array().max(1e-300).log();
    tr.posterior.resize(step_loglik.rows(), N);
    tr.log_evidence.resize(step_loglik.rows());
    for (Eigen::Index s = 0; s < step_loglik.rows(); ++s) {
        const Eigen::ArrayXd v = tr.cumulative_loglik.row(s).transpose().array() + logp;
        const double m = v.maxCoeff();
        const Eigen::ArrayXd w = (v - m).exp();
        const double z = w.sum();
        tr.log_evidence[s] = m + std::log(z);
        tr.posterior.row(s) = (w / z).transpose();
    }
    return tr;
}

}  // namespace megcast
