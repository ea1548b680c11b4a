#pragma once

#include "megcast/common.hpp"

namespace megcast {

// Univariate linear autoregressive model per channel, operating on the
// continuous preprocessed signal. coef(c, j) weights the context sample at
// time t-K+j, i.e. columns are in time order with the most recent sample
// last; prediction = intercept + coef . context_window.
struct ArModel {
    int order = 255;
    MatrixXd coef;        // C x K
    VectorXd intercept;   // C
    bool trained_on_continuous = true;

    int n_channels() const { return static_cast<int>(coef.rows()); }
    void validate() const;
};

// context is C x K, time-ordered (column K-1 immediately precedes the
// predicted sample). Returns the per-channel prediction.
VectorXd ar_forward(const ArModel& model, const MatrixXd& context);

}  // namespace megcast
