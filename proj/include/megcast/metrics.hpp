#pragma once

#include "megcast/ar.hpp"
#include "megcast/gpt.hpp"
#include "megcast/mulaw.hpp"
#include "megcast/wavenet.hpp"

namespace megcast {

// Next-timestep forecast quality on held-out data. Accuracies are per cent;
// MSE is on the continuous scale after detokenising predictions and targets.
struct ForecastMetrics {
    double mse = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
    int64_t count = 0;
};

namespace detail {

// Accumulates one prediction given the logits row for a target token.
struct MetricAccum {
    double se_sum = 0.0;
    int64_t hits1 = 0, hits5 = 0, n = 0;

    void add_logits(const Eigen::Ref<const VectorXd>& logits, int target, const MuLawCodec& codec);
    void add_point(double predicted, double truth, int target_token, const MuLawCodec& codec);
    ForecastMetrics finish() const;
};

}  // namespace detail

// Teacher-forced evaluation over sequential non-overlapping max_ctx windows;
// predictions count at positions with at least min_ctx context.
template <typename S>
ForecastMetrics forecast_metrics(const Gpt<S>& model, const TokenizedRecording& test) {
    const auto& sp = model.spec;
    if (sp.flat) throw std::invalid_argument("flat model passed to the channel metric harness");
    if (test.samples() < sp.min_ctx + 1) throw std::invalid_argument("test set shorter than the minimum context");
    if (test.channels() != sp.n_channels) throw std::invalid_argument("channel count mismatch");

    detail::MetricAccum acc;
    const Eigen::Index T = test.samples();
    for (Eigen::Index start = 0; start + sp.min_ctx + 1 <= T; start += sp.max_ctx) {
        const Eigen::Index len = std::min<Eigen::Index>(sp.max_ctx, T - start);
        if (len < sp.min_ctx + 1) break;
        for (Eigen::Index c = 0; c < test.channels(); ++c) {
            GptSequence seq;
            seq.tokens = test.tokens.row(c).segment(start, len).transpose();
            seq.channel = static_cast<int>(c);
            seq.condition = test.condition_track.segment(start, len);
            seq.subject = test.subject_track.segment(start, len);
            seq.targets = VectorXi::Constant(len, -1);
            const auto logits = model.logits(seq);
            for (Eigen::Index t = sp.min_ctx - 1; t + 1 < len; ++t)
                acc.add_logits(logits.row(t).transpose().template cast<double>(), seq.tokens[t + 1], test.codec);
        }
    }
    if (acc.n == 0) throw std::invalid_argument("no scoreable positions in the test set");
    return acc.finish();
}

// Full-sequence convolutional evaluation; predictions count at positions
// with a full receptive field of context.
template <typename S>
ForecastMetrics forecast_metrics(const Wavenet<S>& model, const TokenizedRecording& test) {
    const auto& sp = model.spec;
    const Eigen::Index rf = sp.receptive_field();
    if (test.samples() < rf + 1) throw std::invalid_argument("test set shorter than the receptive field");
    if (test.channels() != sp.n_channels) throw std::invalid_argument("channel count mismatch");

    const auto logits = model.logits(test.tokens, test.condition_track, test.subject_track);
    detail::MetricAccum acc;
    for (Eigen::Index c = 0; c < test.channels(); ++c)
        for (Eigen::Index t = rf - 1; t + 1 < test.samples(); ++t)
            acc.add_logits(logits[static_cast<size_t>(c)].row(t).transpose().template cast<double>(),
                           test.tokens(c, t + 1), test.codec);
    if (acc.n == 0) throw std::invalid_argument("no scoreable positions in the test set");
    return acc.finish();
}

// Continuous AR predictions, binned through the codec for the accuracy
// metrics; MSE on the continuous scale directly.
ForecastMetrics forecast_metrics(const ArModel& model, const Recording& test, const MuLawCodec& codec);

// Baseline that predicts the previous timestep's token.
ForecastMetrics repeat_baseline(const TokenizedRecording& test);

}  // namespace megcast
