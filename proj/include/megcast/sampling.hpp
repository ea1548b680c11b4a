#pragma once

#include "megcast/common.hpp"

namespace megcast {

// Nucleus filter: keeps the smallest probability-descending prefix whose
// cumulative mass reaches p (inclusive), zeroes the rest and renormalises.
// Ties are broken towards lower token indices, so p -> 0+ is greedy argmax.
// Throws if the input is off normalisation by more than 1e-4.
VectorXd top_p_filter(const VectorXd& probs, double p);

// Inverse-CDF draw from a normalised distribution.
int sample_index(const VectorXd& probs, Rng& rng);

int sample_top_p(const VectorXd& probs, double p, Rng& rng);

// Max-subtracted softmax in double, for sampling from float logits.
VectorXd softmax_double(const VectorXd& logits);

}  // namespace megcast
