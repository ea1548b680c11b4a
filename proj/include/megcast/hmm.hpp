#pragma once

#include <optional>

#include "megcast/recording.hpp"

namespace megcast {

// Time-delay embedding: stacks lags -(n_emb-1)/2 .. +(n_emb-1)/2 of every
// channel, then projects onto the top pca_dim principal components fitted on
// the embedded data itself. data is C x T; the result has one row per valid
// timestep (T - n_emb + 1 rows) and pca_dim columns.
struct PcaBasis {
    Eigen::RowVectorXd mean;  // 1 x D_raw
    MatrixXd components;      // D_raw x pca_dim, orthonormal columns
};

MatrixXd tde_embed(const MatrixXd& data, int n_emb, int pca_dim, PcaBasis* basis_out = nullptr);

// Embeds through an existing basis so a second dataset lands in the same
// principal space as the one the basis was fitted on.
MatrixXd tde_embed_with(const MatrixXd& data, int n_emb, const PcaBasis& basis);

// Gaussian hidden Markov model with full covariances.
struct HmmModel {
    int n_states = 0;
    MatrixXd means;                // K x D
    std::vector<MatrixXd> covs;    // per state, D x D SPD
    MatrixXd trans;                // K x K, rows sum to 1
    VectorXd init;                 // K
    double loglik = 0.0;           // of the training series at convergence
    std::vector<double> loglik_curve;

    void validate() const;
};

struct HmmFitOptions {
    int n_states = 12;
    int restarts = 3;
    int max_iter = 100;
    double tol = 1e-5;      // relative log-likelihood change
    double jitter = 1e-6;   // covariance regulariser, escalated x10 on failure
};

// Baum-Welch fit with k-means initialisation; best of `restarts` by final
// log-likelihood. series is T x D (rows are timesteps).
HmmModel fit_hmm(const MatrixXd& series, const HmmFitOptions& opt, uint64_t seed);

// Most probable state path (Viterbi).
VectorXi viterbi(const HmmModel& model, const MatrixXd& series);

// Posterior state marginals, T x K, rows sum to 1.
MatrixXd posteriors(const HmmModel& model, const MatrixXd& series);

// Log-likelihood of a series under the model.
double hmm_loglik(const HmmModel& model, const MatrixXd& series);

// The four dynamics statistics from a hard state path.
struct StateStats {
    VectorXd fractional_occupancy;      // per state, sums to 1
    VectorXd mean_lifetime_s;           // NaN when the state is never visited
    VectorXd mean_interval_s;           // NaN when visited < 2 times
    std::vector<bool> visited;
    double switching_rate = 0.0;        // transitions per second
};

StateStats summary_stats(const VectorXi& path, int n_states, double fs);

// Welch PSD over the samples assigned to each state, computed on contiguous
// runs of at least seg_len samples. States without such a run are omitted.
struct StatePsd {
    VectorXd freqs;
    std::vector<std::optional<MatrixXd>> power;  // per state, C x F
};

StatePsd state_psd(const VectorXi& path, const MatrixXd& data, double fs, Eigen::Index seg_len);

// Trial-averaged state activations: posterior columns epoched by the
// condition track and averaged per condition.
struct EvokedStates {
    std::vector<int> conditions;
    std::vector<MatrixXd> mean;      // per condition, K x T_epoch
    std::vector<MatrixXd> variance;  // per condition, K x T_epoch
    double fs = 0.0;
};

EvokedStates evoked_state_timecourses(const MatrixXd& gamma, const VectorXi& condition_track, double fs,
                                      double t_pre, double t_post);

}  // namespace megcast
