#include "megcast/compare.hpp"

#include <cmath>

#include "megcast/signal.hpp"

namespace megcast {

PsdComparison psd_compare(const Recording& generated, const Recording& reference, Eigen::Index seg_len) {
    if (generated.channels() != reference.channels()) throw std::invalid_argument("channel count mismatch");
    if (generated.fs != reference.fs) throw std::invalid_argument("sampling rate mismatch");

    const PsdEstimate g = welch_psd(generated, seg_len);
    const PsdEstimate r = welch_psd(reference, seg_len);

    PsdComparison out;
    out.freqs = g.freqs;
    const Eigen::Index C = generated.channels();
    out.log_distance.resize(C);
    out.peak_delta_hz.resize(C);
    for (Eigen::Index c = 0; c < C; ++c) {
        double acc = 0.0;
        Eigen::Index n = 0;
        for (Eigen::Index f = 0; f < g.freqs.size(); ++f) {
            const double a = g.power(c, f), b = r.power(c, f);
            if (a <= 0.0 || b <= 0.0) continue;
            acc += std::abs(10.0 * std::log10(a / b));
            n += 1;
        }
        out.log_distance[c] = n ? acc / static_cast<double>(n) : 0.0;
        Eigen::Index pg = 0, pr = 0;
        g.power.row(c).maxCoeff(&pg);
        r.power.row(c).maxCoeff(&pr);
        out.peak_delta_hz[c] = std::abs(g.freqs[pg] - r.freqs[pr]);
    }
    out.mean_log_distance = out.log_distance.mean();
    return out;
}

CovComparison covariance_compare(const Recording& generated, const Recording& reference) {
    if (generated.channels() != reference.channels()) throw std::invalid_argument("channel count mismatch");
    if (generated.fs != reference.fs) throw std::invalid_argument("sampling rate mismatch");

    CovComparison out;
    out.generated = channel_covariance(generated);
    out.reference = channel_covariance(reference);
    out.frobenius = (out.generated - out.reference).norm();

    const Eigen::Index C = out.generated.rows();
    auto off_rms = [C](const MatrixXd& m) {
        if (C < 2) return 0.0;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < C; ++i)
            for (Eigen::Index j = 0; j < C; ++j)
                if (i != j) acc += m(i, j) * m(i, j);
        return std::sqrt(acc / static_cast<double>(C * (C - 1)));
    };
    out.off_diagonal_rms_generated = off_rms(out.generated);
    out.off_diagonal_rms_reference = off_rms(out.reference);
    return out;
}

}  // namespace megcast
