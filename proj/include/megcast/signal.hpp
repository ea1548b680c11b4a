#pragma once

#include "megcast/recording.hpp"

namespace megcast {

// Per-channel normalisation statistics. Computed on the training split and
// frozen when preprocessing validation/test data.
struct ChannelStats {
    VectorXd mean;
    VectorXd sd;
    VectorXd max_abs;  // of the standardised+clipped signal
    double clip = 4.0;
};

ChannelStats compute_stats(const Recording& rec, double clip = 4.0);

// Standardise -> clip to [-clip, clip] -> per-channel max-abs scale into
// [-1, 1]. Throws if a channel has zero variance (names the channel).
Recording preprocess(const Recording& rec, const ChannelStats& stats);
Recording preprocess(const Recording& rec, double clip = 4.0);

// One epoch per 0->k transition of the condition track, window
// [onset - t_pre, onset + t_post). Onsets too close to either edge are
// dropped and counted in n_dropped. No onsets -> empty result.
EpochedData epoch(const Recording& rec, double t_pre, double t_post);

// Welch estimate, Hann window, mean over segments, one-sided density.
// overlap is the fractional segment overlap in [0, 1).
PsdEstimate welch_psd(const Recording& rec, Eigen::Index seg_len, double overlap = 0.5);
PsdEstimate welch_psd_matrix(const MatrixXd& data, double fs, Eigen::Index seg_len, double overlap = 0.5);

// Sample covariance with 1/T normalisation.
MatrixXd channel_covariance(const Recording& rec);
MatrixXd channel_covariance_matrix(const MatrixXd& data);

struct DatasetSplit {
    Recording train, val, test;
};

// Sample indices (b1, b2) such that [0, b1) holds exactly val_trials of every
// condition and [b1, b2) holds test_trials of every condition.
std::pair<Eigen::Index, Eigen::Index> split_boundaries(const VectorXi& condition_track, int val_trials,
                                                       int test_trials);

// Contiguous split of the continuous recording: the leading segment holds
// exactly val_trials of every condition, the next holds test_trials of every
// condition, the remainder is training data. Sample ranges partition [0, T).
DatasetSplit split_dataset(const Recording& rec, int val_trials, int test_trials);

}  // namespace megcast
