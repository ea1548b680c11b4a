#include "megcast/metrics.hpp"

#include <algorithm>

namespace megcast {
namespace detail {

void MetricAccum::add_logits(const Eigen::Ref<const VectorXd>& logits, int target, const MuLawCodec& codec) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    // top-5: count strictly larger entries; ties resolve in the target's favour
    int larger = 0;
    for (Eigen::Index q = 0; q < logits.size(); ++q)
        if (logits[q] > logits[target]) ++larger;
    hits1 += best == target;
    hits5 += larger < 5;
    const double err = detokenize_value(static_cast<int>(best), codec) - detokenize_value(target, codec);
    se_sum += err * err;
    n += 1;
}

void MetricAccum::add_point(double predicted, double truth, int target_token, const MuLawCodec& codec) {
    const int bin = quantize_value(std::clamp(predicted, -1.0, 1.0), codec);
    hits1 += bin == target_token;
    hits5 += std::abs(bin - target_token) <= 2;  // 5-bin window centred on the prediction
    const double err = predicted - truth;
    se_sum += err * err;
    n += 1;
}

ForecastMetrics MetricAccum::finish() const {
    ForecastMetrics m;
    m.count = n;
    m.mse = se_sum / static_cast<double>(n);
    m.top1 = 100.0 * static_cast<double>(hits1) / static_cast<double>(n);
    m.top5 = 100.0 * static_cast<double>(hits5) / static_cast<double>(n);
    return m;
}

}  // namespace detail

ForecastMetrics forecast_metrics(const ArModel& model, const Recording& test, const MuLawCodec& codec) {
    model.validate();
    const Eigen::Index K = model.order;
    if (test.samples() < K + 1) throw std::invalid_argument("test set shorter than the model order");
    if (test.channels() != model.n_channels()) throw std::invalid_argument("channel count mismatch");

    detail::MetricAccum acc;
    for (Eigen::Index t = K; t < test.samples(); ++t) {
        const VectorXd pred = ar_forward(model, test.data.middleCols(t - K, K));
        for (Eigen::Index c = 0; c < test.channels(); ++c) {
            const double truth = test.data(c, t);
            acc.add_point(pred[c], truth, quantize_value(std::clamp(truth, -1.0, 1.0), codec), codec);
        }
    }
    if (acc.n == 0) throw std::invalid_argument("no scoreable positions in the test set");
    return acc.finish();
}

ForecastMetrics repeat_baseline(const TokenizedRecording& test) {
    if (test.samples() < 2) throw std::invalid_argument("test set too short for the repeat baseline");
    detail::MetricAccum acc;
    for (Eigen::Index c = 0; c < test.channels(); ++c) {
        for (Eigen::Index t = 0; t + 1 < test.samples(); ++t) {
            const int prev = test.tokens(c, t), next = test.tokens(c, t + 1);
            acc.hits1 += prev == next;
            acc.hits5 += std::abs(prev - next) <= 2;
            const double err = detokenize_value(prev, test.codec) - detokenize_value(next, test.codec);
            acc.se_sum += err * err;
            acc.n += 1;
        }
    }
    return acc.finish();
}

}  // namespace megcast
