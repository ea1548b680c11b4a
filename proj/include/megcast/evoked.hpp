#pragma once

#include "megcast/recording.hpp"

namespace megcast {

// Trial statistics for one condition: mean and across-trial variance
// timecourses, both C x T_epoch.
struct Evoked {
    MatrixXd mean;
    MatrixXd variance;
    int n_trials = 0;
};

// Per-condition comparison of generated against reference trials.
struct EvokedReport {
    std::vector<int> conditions;            // labels present in both inputs
    std::vector<Evoked> generated;          // aligned with `conditions`
    std::vector<Evoked> reference;
    std::vector<VectorXd> mean_correlation;      // per condition, per channel
    std::vector<VectorXd> variance_correlation;  // per condition, per channel
    double grand_mean_correlation = 0.0;         // pooled over conditions and channels
    std::vector<int> skipped_conditions;         // present in one input only
};

// Pearson correlation between two equal-length series; 0 when either side
// is constant.
double pearson(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b);

// Mean/variance timecourses per condition from epoched trials.
Evoked evoked_average(const EpochedData& epochs, int condition);

EvokedReport evoked_analysis(const Recording& generated, const Recording& reference, double t_pre, double t_post);

}  // namespace megcast
