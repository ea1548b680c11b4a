#pragma once

#include <vector>

#include "megcast/gpt.hpp"
#include "megcast/wavenet.hpp"

namespace megcast {

// Posterior over condition labels, refined step by step as a trial unfolds.
// Row s covers everything decoded up to and including scored_steps[s].
struct PosteriorTrace {
    std::vector<int> labels;                 // candidate labels, ascending
    MatrixXd posterior;                      // steps x labels, rows sum to 1
    MatrixXd cumulative_loglik;              // steps x labels
    VectorXd log_evidence;                   // log p(observed prefix)
    std::vector<Eigen::Index> scored_steps;  // sample indices that contributed

    // Label with the highest final-step posterior.
    int decoded() const;
};

namespace detail {

double log_softmax_at(const VectorXd& logits, int index);

}  // namespace detail

// Bayes arithmetic on per-step label log-likelihood increments. Accumulation
// stays in log space; each row is normalised through its own evidence term.
PosteriorTrace bayes_from_loglik(const MatrixXd& step_loglik, const VectorXd& prior);

// Per-step log p(x_t | x_<t, Y=y) summed over channels, one column per
// candidate label, teacher-forced over the same windows the forecast metrics
// use. Label passes touch no shared mutable state and may run concurrently.
template <typename S>
MatrixXd label_step_loglik(const Gpt<S>& model, const MatrixXi& trial, int subject,
                           std::vector<Eigen::Index>* steps_out = nullptr) {
    const auto& sp = model.spec;
    if (sp.flat) throw std::invalid_argument("flat model has no per-channel decoder");
    if (sp.n_conditions < 2) throw std::invalid_argument("model carries no condition labels to decode");
    if (trial.rows() != sp.n_channels) throw std::invalid_argument("channel count mismatch");
    const Eigen::Index T = trial.cols();
    if (T < sp.min_ctx + 1) throw std::invalid_argument("trial shorter than the minimum context");

    std::vector<Eigen::Index> steps;
    for (Eigen::Index start = 0; start + sp.min_ctx + 1 <= T; start += sp.max_ctx) {
        const Eigen::Index len = std::min<Eigen::Index>(sp.max_ctx, T - start);
        if (len < sp.min_ctx + 1) break;
        for (Eigen::Index t = sp.min_ctx - 1; t + 1 < len; ++t) steps.push_back(start + t + 1);
    }
    MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(steps.size()), sp.n_conditions);
    for (int y = 1; y <= sp.n_conditions; ++y) {
        Eigen::Index row = 0;
        for (Eigen::Index start = 0; start + sp.min_ctx + 1 <= T; start += sp.max_ctx) {
            const Eigen::Index len = std::min<Eigen::Index>(sp.max_ctx, T - start);
            if (len < sp.min_ctx + 1) break;
            Eigen::Index scored = 0;
            for (Eigen::Index c = 0; c < trial.rows(); ++c) {
                GptSequence seq;
                seq.tokens = trial.row(c).segment(start, len).transpose();
                seq.channel = static_cast<int>(c);
                seq.condition = VectorXi::Constant(len, y);
                seq.subject = VectorXi::Constant(len, subject);
                seq.targets = VectorXi::Constant(len, -1);
                const auto logits = model.logits(seq);
                scored = 0;
                for (Eigen::Index t = sp.min_ctx - 1; t + 1 < len; ++t, ++scored)
                    out(row + scored, y - 1) += detail::log_softmax_at(
                        logits.row(t).transpose().template cast<double>(), seq.tokens[t + 1]);
            }
            row += scored;
        }
    }
    if (steps_out) *steps_out = std::move(steps);
    return out;
}

template <typename S>
MatrixXd label_step_loglik(const Wavenet<S>& model, const MatrixXi& trial, int subject,
                           std::vector<Eigen::Index>* steps_out = nullptr) {
    const auto& sp = model.spec;
    if (sp.n_conditions < 2) throw std::invalid_argument("model carries no condition labels to decode");
    if (trial.rows() != sp.n_channels) throw std::invalid_argument("channel count mismatch");
    const Eigen::Index T = trial.cols();
    const Eigen::Index rf = sp.receptive_field();
    if (T < rf + 1) throw std::invalid_argument("trial shorter than the receptive field");

    std::vector<Eigen::Index> steps;
    for (Eigen::Index t = rf; t < T; ++t) steps.push_back(t);
    MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(steps.size()), sp.n_conditions);
    const VectorXi subj = VectorXi::Constant(T, subject);
    for (int y = 1; y <= sp.n_conditions; ++y) {
        const VectorXi cond = VectorXi::Constant(T, y);
        const auto logits = model.logits(trial, cond, subj);
        for (Eigen::Index c = 0; c < trial.rows(); ++c)
            for (Eigen::Index t = rf - 1; t + 1 < T; ++t)
                out(t - (rf - 1), y - 1) += detail::log_softmax_at(
                    logits[static_cast<size_t>(c)].row(t).transpose().template cast<double>(),
                    trial(c, t + 1));
    }
    if (steps_out) *steps_out = std::move(steps);
    return out;
}

// Bayes-rule decoder: accumulate the conditional likelihood of the trial
// under every candidate label and normalise against the marginal evidence.
// An empty prior means uniform.
template <typename Model>
PosteriorTrace bayes_posterior(const Model& model, const MatrixXi& trial, int subject,
                               VectorXd prior = VectorXd()) {
    const int N = model.spec.n_conditions;
    if (prior.size() == 0) prior = VectorXd::Constant(N, 1.0 / N);
    std::vector<Eigen::Index> steps;
    const MatrixXd loglik = label_step_loglik(model, trial, subject, &steps);
    PosteriorTrace tr = bayes_from_loglik(loglik, prior);
    tr.scored_steps = std::move(steps);
    return tr;
}

}  // namespace megcast
