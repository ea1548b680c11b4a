#pragma once

#include "megcast/mulaw.hpp"

namespace megcast {

// Channel grouping from k-means on covariance rows. Bucket ids are
// renumbered so buckets appear in ascending order of their lowest channel.
struct BucketAssignment {
    int n_buckets = 0;
    VectorXi bucket_of_channel;            // C
    std::vector<std::vector<int>> channels;  // per bucket, ascending

    void validate() const;
};

BucketAssignment kmeans_buckets(const MatrixXd& cov, int n_buckets, uint64_t seed);

// Additive residual quantiser for one bucket: M stages of K_m = 2^bits
// vectors each; decode sums one vector per stage.
struct ResidualCodebook {
    std::vector<MatrixXd> tables;  // per stage, K_m x D
    int bits_per_table = 7;

    int n_stages() const { return static_cast<int>(tables.size()); }
    Eigen::Index dim() const { return tables.empty() ? 0 : tables[0].cols(); }
    int64_t vocab_size() const;  // product of stage sizes
};

// Greedy stage-wise fit: k-means on the data, then k-means on the residuals,
// and so on. data is N x D (one row per timestep). Tables are rounded through
// float32 so fitting and (de)serialising agree bit-exactly.
ResidualCodebook rq_fit(const MatrixXd& data, int m_stages, int bits_per_table, uint64_t seed);

VectorXi rq_encode(const ResidualCodebook& cb, const VectorXd& x);  // M stage indices
VectorXd rq_decode(const ResidualCodebook& cb, const VectorXi& codes);

// Mixed-radix packing of stage indices into one token in [0, vocab_size).
int64_t rq_pack(const ResidualCodebook& cb, const VectorXi& codes);
VectorXi rq_unpack(const ResidualCodebook& cb, int64_t token);

// Bucketed residual quantiser over all channels.
struct VectorQuantizer {
    BucketAssignment buckets;
    std::vector<ResidualCodebook> codebooks;  // one per bucket

    int64_t vocab_size() const;  // shared per-bucket vocabulary (max over buckets)
    int sep_token() const { return static_cast<int>(vocab_size()); }
};

VectorQuantizer fit_vector_quantizer(const MatrixXd& data, int n_buckets, int m_stages, int bits_per_table,
                                     uint64_t seed);

MatrixXi vq_encode(const VectorQuantizer& vq, const MatrixXd& data);   // B x T packed tokens
MatrixXd vq_decode(const VectorQuantizer& vq, const MatrixXi& tokens);  // C x T

// Timestep-major interleaving with a leading separator per timestep:
// [sep, z_{t,1}, ..., z_{t,B}] for t = 0..T-1; length (B+1) * T.
VectorXi flatten_tokens(const MatrixXi& bucket_tokens, int sep_token);
MatrixXi unflatten_tokens(const VectorXi& flat, int n_buckets, int sep_token);

// Versioned binary container; round trip is bit-exact.
void save_quantizer(const VectorQuantizer& vq, const std::string& path);
VectorQuantizer load_quantizer(const std::string& path);

}  // namespace megcast
