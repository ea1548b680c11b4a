#pragma once

#include "megcast/recording.hpp"

namespace megcast {

// Per-channel spectral distance between generated and reference data.
struct PsdComparison {
    VectorXd freqs;
    VectorXd log_distance;   // per channel, mean |10 log10(gen/ref)| in dB
    VectorXd peak_delta_hz;  // per channel, |argmax shift|
    double mean_log_distance = 0.0;
};

PsdComparison psd_compare(const Recording& generated, const Recording& reference, Eigen::Index seg_len = 256);

// Channel-covariance comparison; the two matrices are kept for scatter plots.
struct CovComparison {
    MatrixXd generated;  // C x C
    MatrixXd reference;  // C x C
    double frobenius = 0.0;
    double off_diagonal_rms_generated = 0.0;
    double off_diagonal_rms_reference = 0.0;
};

CovComparison covariance_compare(const Recording& generated, const Recording& reference);

}  // namespace megcast
