#pragma once

#include <cmath>
#include <functional>

#include "megcast/ar.hpp"
#include "megcast/gpt.hpp"
#include "megcast/mulaw.hpp"
#include "megcast/rq.hpp"
#include "megcast/wavenet.hpp"

namespace megcast {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int batch_size = 8;  // windows per optimiser step
    double lr = 1e-3;
    std::string optimizer = "adam";
    int max_epochs = 100;
    int patience = 5;
    int min_ctx = 128;  // window-length draw bounds, timesteps
    int max_ctx = 256;
    int windows_per_epoch = 0;  // 0: derived so one epoch covers the data once
    uint64_t seed = 1;
    bool shuffle_condition_labels = false;
    bool single_condition_label = false;
    bool disable_channel_embedding = false;
    bool disable_condition_embedding = false;

    void validate() const;
};

struct TrainResult {
    std::vector<double> train_curve;  // mean loss per epoch
    std::vector<double> val_curve;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int epochs_run = 0;
    bool early_stopped = false;
};

struct WindowDraw {
    Eigen::Index start;
    int length;
};

// Uniform window lengths in [min_ctx, min(max_ctx, T-1)], uniform starts.
// T must exceed min_ctx.
std::vector<WindowDraw> draw_windows(Eigen::Index T, int min_ctx, int max_ctx, int count, Rng& rng);

// Label-track ablations. Trials are maximal runs of one nonzero condition id;
// shuffling permutes the per-trial labels, single collapses them all to 1.
VectorXi transform_condition_track(const VectorXi& track, bool shuffle, bool single, Rng& rng);

template <typename S>
std::vector<nn::Mat<S>> snapshot_params(const nn::ParamSet<S>& ps) {
    std::vector<nn::Mat<S>> out;
    out.reserve(ps.params.size());
    for (const auto* p : ps.params) out.push_back(p->w);
    return out;
}

template <typename S>
void restore_params(nn::ParamSet<S>& ps, const std::vector<nn::Mat<S>>& saved) {
    if (saved.size() != ps.params.size()) throw std::logic_error("snapshot does not match parameter set");
    for (size_t i = 0; i < saved.size(); ++i) ps.params[i]->w = saved[i];
}

// Generic epoch loop: Adam steps per batch, early stopping on validation
// loss with the best parameters restored at the end. Pass `opt` and
// `start_epoch` to continue an interrupted run exactly; `last_params_out`
// receives the final (not best) parameters for continuation checkpoints.
template <typename Adapter>
TrainResult train_loop(Adapter& ad, const TrainConfig& cfg, nn::Adam<typename Adapter::Scalar>* opt = nullptr,
                       int start_epoch = 0, std::vector<nn::Mat<typename Adapter::Scalar>>* last_params_out = nullptr) {
    using S = typename Adapter::Scalar;
    cfg.validate();
    auto ps = ad.params();
    nn::Adam<S> local_opt;
    if (!opt) {
        local_opt.lr = cfg.lr;
        opt = &local_opt;
    }

    TrainResult res;
    auto best = snapshot_params(ps);
    int bad_epochs = 0;
    for (int e = start_epoch; e < start_epoch + cfg.max_epochs; ++e) {
        Rng rng(Rng::substream(cfg.seed, static_cast<uint64_t>(e) + 1));
        ad.start_epoch(rng);
        double loss_sum = 0.0;
        int64_t loss_count = 0;
        for (int b = 0; b < ad.n_batches(); ++b) {
            ps.zero_grad();
            const auto [l, n] = ad.batch_forward_backward(b);
            if (!std::isfinite(l)) throw TrainError("non-finite training loss at epoch " + std::to_string(e) +
                                                    ", batch " + std::to_string(b));
            if (n > 0) {
                for (auto* p : ps.params) p->g /= static_cast<S>(n);
                opt->step(ps);
            }
            loss_sum += l;
            loss_count += n;
        }
        res.train_curve.push_back(loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0);

        const auto [vl, vn] = ad.val_loss();
        if (!std::isfinite(vl)) throw TrainError("non-finite validation loss at epoch " + std::to_string(e));
        const double v = vn > 0 ? vl / static_cast<double>(vn) : 0.0;
        res.val_curve.push_back(v);
        ++res.epochs_run;
        if (v < res.best_val) {
            res.best_val = v;
            res.best_epoch = e;
            best = snapshot_params(ps);
            bad_epochs = 0;
        } else if (++bad_epochs >= cfg.patience) {
            res.early_stopped = true;
            break;
        }
    }
    if (last_params_out) *last_params_out = snapshot_params(ps);
    restore_params(ps, best);
    return res;
}

namespace detail {

// Next-token targets over a window slice; positions whose target index
// (within the window) is below min_ctx are excluded.
inline VectorXi window_targets(const VectorXi& tokens, int min_ctx) {
    const Eigen::Index L = tokens.size();
    VectorXi targets = VectorXi::Constant(L, -1);
    for (Eigen::Index i = 0; i + 1 < L; ++i)
        if (i + 1 >= min_ctx) targets[i] = tokens[i + 1];
    return targets;
}

inline std::vector<WindowDraw> sequential_windows(Eigen::Index T, int length) {
    std::vector<WindowDraw> out;
    for (Eigen::Index s = 0; s + length <= T; s += length) out.push_back({s, length});
    return out;
}

}  // namespace detail

// Channel-as-batch GPT training: every window yields one sequence per
// channel. Masking uses the model's own min_ctx; window lengths come from
// the config and must stay within the model's context range.
template <typename S>
class GptWindows {
  public:
    using Scalar = S;

    GptWindows(Gpt<S>& model, const TokenizedRecording& train, const TokenizedRecording& val, const TrainConfig& cfg)
        : model_(model), train_(train), val_(val), cfg_(cfg) {
        if (model.spec.flat) throw std::logic_error("flat model needs FlatWindows");
        cfg_.validate();
        if (cfg_.min_ctx < model.spec.min_ctx || cfg_.max_ctx > model.spec.max_ctx)
            throw ConfigError("training context range outside model spec");
        model_.spec.use_channel_embedding = !cfg_.disable_channel_embedding;
        model_.spec.use_condition_embedding = !cfg_.disable_condition_embedding;
        Rng rng(Rng::substream(cfg_.seed, 0));
        train_cond_ = transform_condition_track(train_.condition_track, cfg_.shuffle_condition_labels,
                                                cfg_.single_condition_label, rng);
        val_cond_ = transform_condition_track(val_.condition_track, cfg_.shuffle_condition_labels,
                                              cfg_.single_condition_label, rng);
    }

    nn::ParamSet<S> params() { return model_.params(); }

    void start_epoch(Rng& rng) {
        const int count = cfg_.windows_per_epoch > 0
                              ? cfg_.windows_per_epoch
                              : std::max<int>(1, static_cast<int>(train_.samples() / ((cfg_.min_ctx + cfg_.max_ctx) / 2)));
        windows_ = draw_windows(train_.samples(), cfg_.min_ctx, cfg_.max_ctx, count, rng);
    }

    int n_batches() const {
        return static_cast<int>((windows_.size() + static_cast<size_t>(cfg_.batch_size) - 1) / cfg_.batch_size);
    }

    std::pair<double, int64_t> batch_forward_backward(int b) {
        return model_.forward_backward(make_batch(train_, train_cond_, window_slice(b)));
    }

    std::pair<double, int64_t> val_loss() const {
        const auto windows = detail::sequential_windows(val_.samples(), cfg_.max_ctx);
        return model_.loss(make_batch(val_, val_cond_, windows));
    }

  private:
    std::vector<WindowDraw> window_slice(int b) const {
        const size_t lo = static_cast<size_t>(b) * static_cast<size_t>(cfg_.batch_size);
        const size_t hi = std::min(windows_.size(), lo + static_cast<size_t>(cfg_.batch_size));
        return {windows_.begin() + static_cast<std::ptrdiff_t>(lo), windows_.begin() + static_cast<std::ptrdiff_t>(hi)};
    }

    std::vector<GptSequence> make_batch(const TokenizedRecording& rec, const VectorXi& cond,
                                        const std::vector<WindowDraw>& windows) const {
        std::vector<GptSequence> batch;
        batch.reserve(windows.size() * static_cast<size_t>(rec.channels()));
        for (const auto& w : windows)
            for (Eigen::Index c = 0; c < rec.channels(); ++c) {
                GptSequence seq;
                seq.tokens = rec.tokens.row(c).segment(w.start, w.length).transpose();
                seq.channel = static_cast<int>(c);
                seq.condition = cond.segment(w.start, w.length);
                seq.subject = rec.subject_track.segment(w.start, w.length);
                seq.targets = detail::window_targets(seq.tokens, model_.spec.min_ctx);
                batch.push_back(std::move(seq));
            }
        return batch;
    }

    Gpt<S>& model_;
    const TokenizedRecording& train_;
    const TokenizedRecording& val_;
    TrainConfig cfg_;
    VectorXi train_cond_, val_cond_;
    std::vector<WindowDraw> windows_;
};

// Wavenet training windows: one batch item carries all channels. Loss
// positions are those with a full receptive field of context.
template <typename S>
class WavenetWindows {
  public:
    using Scalar = S;

    WavenetWindows(Wavenet<S>& model, const TokenizedRecording& train, const TokenizedRecording& val,
                   const TrainConfig& cfg)
        : model_(model), train_(train), val_(val), cfg_(cfg) {
        cfg_.validate();
        if (cfg_.min_ctx <= model.spec.receptive_field())
            throw ConfigError("window length must exceed the receptive field");
        model_.spec.use_channel_embedding = !cfg_.disable_channel_embedding;
        model_.spec.use_condition_embedding = !cfg_.disable_condition_embedding;
        Rng rng(Rng::substream(cfg_.seed, 0));
        train_cond_ = transform_condition_track(train_.condition_track, cfg_.shuffle_condition_labels,
                                                cfg_.single_condition_label, rng);
        val_cond_ = transform_condition_track(val_.condition_track, cfg_.shuffle_condition_labels,
                                              cfg_.single_condition_label, rng);
    }

    nn::ParamSet<S> params() { return model_.params(); }

    void start_epoch(Rng& rng) {
        const int count = cfg_.windows_per_epoch > 0
                              ? cfg_.windows_per_epoch
                              : std::max<int>(1, static_cast<int>(train_.samples() / ((cfg_.min_ctx + cfg_.max_ctx) / 2)));
        windows_ = draw_windows(train_.samples(), cfg_.min_ctx, cfg_.max_ctx, count, rng);
    }

    int n_batches() const {
        return static_cast<int>((windows_.size() + static_cast<size_t>(cfg_.batch_size) - 1) / cfg_.batch_size);
    }

    std::pair<double, int64_t> batch_forward_backward(int b) {
        const size_t lo = static_cast<size_t>(b) * static_cast<size_t>(cfg_.batch_size);
        const size_t hi = std::min(windows_.size(), lo + static_cast<size_t>(cfg_.batch_size));
        std::vector<WavenetBatchItem> batch;
        for (size_t i = lo; i < hi; ++i) batch.push_back(make_item(train_, train_cond_, windows_[i]));
        return model_.forward_backward(batch);
    }

    std::pair<double, int64_t> val_loss() const {
        std::vector<WavenetBatchItem> batch;
        for (const auto& w : detail::sequential_windows(val_.samples(), cfg_.max_ctx))
            batch.push_back(make_item(val_, val_cond_, w));
        return model_.loss(batch);
    }

  private:
    WavenetBatchItem make_item(const TokenizedRecording& rec, const VectorXi& cond, const WindowDraw& w) const {
        WavenetBatchItem item;
        item.tokens = rec.tokens.middleCols(w.start, w.length);
        item.condition = cond.segment(w.start, w.length);
        item.subject = rec.subject_track.segment(w.start, w.length);
        item.targets.setConstant(rec.channels(), w.length, -1);
        const int rf = model_.spec.receptive_field();
        for (Eigen::Index i = 0; i + 1 < w.length; ++i)
            if (i + 1 >= rf) item.targets.col(i) = item.tokens.col(i + 1);
        return item;
    }

    Wavenet<S>& model_;
    const TokenizedRecording& train_;
    const TokenizedRecording& val_;
    TrainConfig cfg_;
    VectorXi train_cond_, val_cond_;
    std::vector<WindowDraw> windows_;
};

// FlatGPT2 training: windows are drawn in timesteps over the bucket token
// matrix and flattened with separators. Config context bounds are timesteps.
template <typename S>
class FlatWindows {
  public:
    using Scalar = S;

    // tokens: B x T packed bucket codes; condition/subject: per timestep.
    FlatWindows(Gpt<S>& model, const MatrixXi& train_tokens, const VectorXi& train_cond, const VectorXi& train_subj,
                const MatrixXi& val_tokens, const VectorXi& val_cond, const VectorXi& val_subj, const TrainConfig& cfg)
        : model_(model),
          train_tokens_(train_tokens),
          train_subj_(train_subj),
          val_tokens_(val_tokens),
          val_subj_(val_subj),
          cfg_(cfg) {
        if (!model.spec.flat) throw std::logic_error("FlatWindows needs a flat model");
        cfg_.validate();
        if (cfg_.min_ctx < model.spec.min_ctx || cfg_.max_ctx > model.spec.max_ctx)
            throw ConfigError("training context range outside model spec");
        if (train_tokens.rows() != model.spec.n_channels) throw ConfigError("bucket count mismatch");
        model_.spec.use_channel_embedding = !cfg_.disable_channel_embedding;
        model_.spec.use_condition_embedding = !cfg_.disable_condition_embedding;
        Rng rng(Rng::substream(cfg_.seed, 0));
        train_cond_ = transform_condition_track(train_cond, cfg_.shuffle_condition_labels, cfg_.single_condition_label, rng);
        val_cond_ = transform_condition_track(val_cond, cfg_.shuffle_condition_labels, cfg_.single_condition_label, rng);
    }

    nn::ParamSet<S> params() { return model_.params(); }

    void start_epoch(Rng& rng) {
        const int count = cfg_.windows_per_epoch > 0
                              ? cfg_.windows_per_epoch
                              : std::max<int>(1, static_cast<int>(train_tokens_.cols() / ((cfg_.min_ctx + cfg_.max_ctx) / 2)));
        windows_ = draw_windows(train_tokens_.cols(), cfg_.min_ctx, cfg_.max_ctx, count, rng);
    }

    int n_batches() const {
        return static_cast<int>((windows_.size() + static_cast<size_t>(cfg_.batch_size) - 1) / cfg_.batch_size);
    }

    std::pair<double, int64_t> batch_forward_backward(int b) {
        const size_t lo = static_cast<size_t>(b) * static_cast<size_t>(cfg_.batch_size);
        const size_t hi = std::min(windows_.size(), lo + static_cast<size_t>(cfg_.batch_size));
        std::vector<FlatSequence> batch;
        for (size_t i = lo; i < hi; ++i) batch.push_back(make_seq(train_tokens_, train_cond_, train_subj_, windows_[i]));
        return model_.forward_backward(batch);
    }

    std::pair<double, int64_t> val_loss() const {
        std::vector<FlatSequence> batch;
        for (const auto& w : detail::sequential_windows(val_tokens_.cols(), cfg_.max_ctx))
            batch.push_back(make_seq(val_tokens_, val_cond_, val_subj_, w));
        return model_.loss(batch);
    }

    FlatSequence make_seq(const MatrixXi& tokens, const VectorXi& cond, const VectorXi& subj,
                          const WindowDraw& w) const {
        const int stride = model_.spec.flat_stride();
        const Eigen::Index L = static_cast<Eigen::Index>(stride) * w.length;
        FlatSequence seq;
        seq.tokens.resize(L);
        seq.condition.resize(L);
        seq.subject.resize(L);
        seq.targets.setConstant(L, -1);
        for (int s = 0; s < w.length; ++s) {
            const Eigen::Index base = static_cast<Eigen::Index>(s) * stride;
            seq.tokens[base] = model_.sep_token();
            for (int bkt = 0; bkt < model_.spec.n_channels; ++bkt)
                seq.tokens[base + 1 + bkt] = tokens(bkt, w.start + s);
            for (int k = 0; k < stride; ++k) {
                seq.condition[base + k] = cond[w.start + s];
                seq.subject[base + k] = subj[w.start + s];
            }
        }
        for (Eigen::Index i = 0; i + 1 < L; ++i) {
            if ((i + 1) % stride == 0) continue;  // separator predictions are excluded
            const Eigen::Index target_step = (i + 1) / stride;
            if (target_step >= model_.spec.min_ctx) seq.targets[i] = seq.tokens[i + 1];
        }
        return seq;
    }

  private:
    Gpt<S>& model_;
    const MatrixXi& train_tokens_;
    VectorXi train_cond_;
    const VectorXi& train_subj_;
    const MatrixXi& val_tokens_;
    VectorXi val_cond_;
    const VectorXi& val_subj_;
    TrainConfig cfg_;
    std::vector<WindowDraw> windows_;
};

// Gradient descent on mean squared error for the linear AR baseline.
class ArWindows {
  public:
    using Scalar = double;

    ArWindows(const MatrixXd& train, const MatrixXd& val, int order, const TrainConfig& cfg)
        : train_(train), val_(val), cfg_(cfg) {
        if (order < 1) throw ConfigError("AR order must be >= 1");
        if (train.cols() <= order || val.cols() <= order) throw ConfigError("data shorter than AR order");
        coef_.init_zero(train.rows(), order, "coef");
        intercept_.init_zero(train.rows(), 1, "intercept");
    }

    nn::ParamSet<double> params() {
        nn::ParamSet<double> ps;
        ps.add(coef_);
        ps.add(intercept_);
        return ps;
    }

    void start_epoch(Rng& rng) {
        const int K = static_cast<int>(coef_.w.cols());
        const Eigen::Index n_pred = train_.cols() - K;
        const int count = cfg_.windows_per_epoch > 0 ? cfg_.windows_per_epoch
                                                     : std::max<int>(1, static_cast<int>(n_pred));
        positions_.resize(static_cast<size_t>(count));
        for (auto& p : positions_) p = K + static_cast<Eigen::Index>(rng.randint(static_cast<int64_t>(n_pred)));
    }

    int n_batches() const {
        const int bs = batch_positions();
        return static_cast<int>((positions_.size() + static_cast<size_t>(bs) - 1) / static_cast<size_t>(bs));
    }

    std::pair<double, int64_t> batch_forward_backward(int b) {
        const int bs = batch_positions();
        const size_t lo = static_cast<size_t>(b) * static_cast<size_t>(bs);
        const size_t hi = std::min(positions_.size(), lo + static_cast<size_t>(bs));
        const int K = static_cast<int>(coef_.w.cols());
        double loss = 0.0;
        for (size_t i = lo; i < hi; ++i) {
            const Eigen::Index t = positions_[i];
            const auto ctx = train_.middleCols(t - K, K);
            const VectorXd pred = (coef_.w.cwiseProduct(ctx)).rowwise().sum() + intercept_.w.col(0);
            const VectorXd err = pred - train_.col(t);
            loss += err.squaredNorm();
            coef_.g.noalias() += (2.0 * err).asDiagonal() * ctx;
            intercept_.g.col(0) += 2.0 * err;
        }
        return {loss, static_cast<int64_t>((hi - lo) * static_cast<size_t>(train_.rows()))};
    }

    std::pair<double, int64_t> val_loss() const {
        const int K = static_cast<int>(coef_.w.cols());
        double loss = 0.0;
        for (Eigen::Index t = K; t < val_.cols(); ++t) {
            const VectorXd pred = (coef_.w.cwiseProduct(val_.middleCols(t - K, K))).rowwise().sum() + intercept_.w.col(0);
            loss += (pred - val_.col(t)).squaredNorm();
        }
        return {loss, (val_.cols() - K) * val_.rows()};
    }

    ArModel model() const {
        ArModel m;
        m.order = static_cast<int>(coef_.w.cols());
        m.coef = coef_.w;
        m.intercept = intercept_.w.col(0);
        m.validate();
        return m;
    }

  private:
    int batch_positions() const { return std::max(1, cfg_.batch_size * 32); }

    const MatrixXd& train_;
    const MatrixXd& val_;
    TrainConfig cfg_;
    nn::Param<double> coef_, intercept_;
    std::vector<Eigen::Index> positions_;
};

// Central-difference verification of analytic gradients. forward_backward
// must accumulate gradients for the summed loss that loss_only returns.
template <typename FB, typename LossOnly>
double gradient_check(nn::ParamSet<double>& ps, FB&& forward_backward, LossOnly&& loss_only, double h = 1e-5) {
    if (ps.count() > 10000) throw std::invalid_argument("gradient check limited to 1e4 parameters");
    ps.zero_grad();
    forward_backward();
    std::vector<MatrixXd> analytic;
    analytic.reserve(ps.params.size());
    for (const auto* p : ps.params) analytic.push_back(p->g);

    double max_rel = 0.0;
    for (size_t i = 0; i < ps.params.size(); ++i) {
        auto& w = ps.params[i]->w;
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                const double orig = w(r, c);
                w(r, c) = orig + h;
                const double l1 = loss_only();
                w(r, c) = orig - h;
                const double l2 = loss_only();
                w(r, c) = orig;
                const double numeric = (l1 - l2) / (2.0 * h);
                const double ga = analytic[i](r, c);
                const double rel = std::abs(ga - numeric) / std::max(1.0, std::abs(ga) + std::abs(numeric));
                max_rel = std::max(max_rel, rel);
            }
    }
    return max_rel;
}

}  // namespace megcast
