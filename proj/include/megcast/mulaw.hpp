#pragma once

#include "megcast/recording.hpp"

namespace megcast {

using Eigen::MatrixXi;

// Scalar companding codec. With the defaults, n_bins = mu + 1 = 256.
struct MuLawCodec {
    double mu = 255.0;
    int n_bins = 256;
    // Optional per-channel scale bookkeeping from preprocessing, for callers
    // that want to map reconstructions back to original units. Unused by the
    // codec itself.
    VectorXd channel_scale;
};

// Companding transfer function over [-1, 1] and its inverse. Throws if
// |x| > 1.
double mu_law(double x, double mu = 255.0);
double mu_law_inv(double y, double mu = 255.0);

int quantize_value(double x, const MuLawCodec& codec);
double detokenize_value(int token, const MuLawCodec& codec);

// Per-channel token matrix with label tracks carried through.
struct TokenizedRecording {
    MatrixXi tokens;  // C x T, values in [0, n_bins)
    MuLawCodec codec;
    double fs = 0.0;
    std::vector<std::string> channel_names;
    VectorXi condition_track;
    VectorXi subject_track;

    Eigen::Index channels() const { return tokens.rows(); }
    Eigen::Index samples() const { return tokens.cols(); }
};

TokenizedRecording quantize(const Recording& rec, const MuLawCodec& codec = {});
Recording detokenize(const TokenizedRecording& tok);

}  // namespace megcast
