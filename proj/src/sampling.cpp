#include "megcast/sampling.hpp"

#include <algorithm>
#include <numeric>

namespace megcast {

VectorXd top_p_filter(const VectorXd& probs, double p) {
    if (!(p > 0.0) || p > 1.0) throw std::invalid_argument("top-p mass must lie in (0, 1]");
    if (probs.size() == 0) throw std::invalid_argument("empty distribution");
    if ((probs.array() < 0.0).any()) throw std::invalid_argument("negative probability");
    if (std::abs(probs.sum() - 1.0) > 1e-4) throw std::invalid_argument("distribution not normalised");

    std::vector<Eigen::Index> order(static_cast<size_t>(probs.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return probs[a] > probs[b]; });

    VectorXd out = VectorXd::Zero(probs.size());
    double cum = 0.0;
    for (const Eigen::Index idx : order) {
        out[idx] = probs[idx];
        cum += probs[idx];
        if (cum >= p) break;
    }
    return out / out.sum();
}

int sample_index(const VectorXd& probs, Rng& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    int last = 0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        cum += probs[i];
        last = static_cast<int>(i);
        if (u < cum) return last;
    }
    return last;
}

int sample_top_p(const VectorXd& probs, double p, Rng& rng) {
    return sample_index(top_p_filter(probs, p), rng);
}

VectorXd softmax_double(const VectorXd& logits) {
    const VectorXd e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

}  // namespace megcast
