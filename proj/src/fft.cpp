#include "megcast/fft.hpp"

namespace megcast {

void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft_pow2 needs a power-of-two length");

    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

RealDft::RealDft(Eigen::Index n) : n_(n) {
    const Eigen::Index nf = n / 2 + 1;
    cos_.resize(nf, n);
    sin_.resize(nf, n);
    for (Eigen::Index k = 0; k < nf; ++k) {
        for (Eigen::Index t = 0; t < n; ++t) {
            const double ang = 2.0 * M_PI * static_cast<double>(k) * static_cast<double>(t) / static_cast<double>(n);
            cos_(k, t) = std::cos(ang);
            sin_(k, t) = std::sin(ang);
        }
    }
}

void RealDft::power(const double* x, double* out) const {
    Eigen::Map<const VectorXd> xv(x, n_);
    const Eigen::Index nf = n_ / 2 + 1;
    VectorXd re = cos_ * xv;
    VectorXd im = sin_ * xv;
    for (Eigen::Index k = 0; k < nf; ++k) out[k] = re[k] * re[k] + im[k] * im[k];
}

}  // namespace megcast
