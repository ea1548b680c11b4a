#pragma once

#include <complex>
#include <vector>

#include "megcast/common.hpp"

namespace megcast {

// In-place iterative radix-2 FFT; n must be a power of two.
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse);

// DFT of a real segment at bins 0..n/2, any n. O(n^2) with precomputed
// twiddles; Welch segment lengths are small so this is plenty.
class RealDft {
  public:
    explicit RealDft(Eigen::Index n);
    Eigen::Index n() const { return n_; }
    // |X_k|^2 for k = 0..n/2 into out (size n/2+1).
    void power(const double* x, double* out) const;

  private:
    Eigen::Index n_;
    MatrixXd cos_;  // (n/2+1) x n
    MatrixXd sin_;
};

}  // namespace megcast
