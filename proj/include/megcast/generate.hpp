#pragma once

#include <deque>

#include "megcast/ar.hpp"
#include "megcast/gpt.hpp"
#include "megcast/mulaw.hpp"
#include "megcast/rq.hpp"
#include "megcast/sampling.hpp"
#include "megcast/wavenet.hpp"

namespace megcast {

struct GenError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Synthetic trial schedule: cycles through labels 1..n_conditions, each trial
// lasting trial_s seconds followed by iti_s seconds of rest.
struct ConditionSchedule {
    int n_conditions = 0;
    double trial_s = 0.5;
    double iti_s = 0.5;
};

struct GenerationPlan {
    double duration_s = 1.0;
    VectorXi condition;          // output-region track to replay; tiled if shorter
    ConditionSchedule schedule;  // used when `condition` is empty
    int subject = 1;
    double top_p = 0.8;
    uint64_t seed = 1;
    MatrixXi prime;  // C x P primer tokens; empty means zero-signal priming

    void validate() const;
};

VectorXi schedule_track(const ConditionSchedule& s, double fs, Eigen::Index T);

// Resolves the plan's output-region condition track of length T.
VectorXi plan_condition_track(const GenerationPlan& plan, double fs, Eigen::Index T);

// Canonical key-value text describing a plan, written next to generated data.
std::string plan_to_text(const GenerationPlan& plan);

namespace detail {

inline std::vector<std::string> default_names(const std::vector<std::string>& given, Eigen::Index C) {
    if (!given.empty()) return given;
    std::vector<std::string> names;
    for (Eigen::Index c = 0; c < C; ++c) names.push_back("ch" + std::to_string(c));
    return names;
}

inline Eigen::Index output_samples(double duration_s, double fs) {
    const auto T = static_cast<Eigen::Index>(std::llround(duration_s * fs));
    if (T < 1) throw std::invalid_argument("generation duration too short for the sampling rate");
    return T;
}

// Single-step Wavenet evaluator. Per layer it keeps the last `dilation`
// inputs per channel, so a step reproduces the batch forward pass at the
// final position of the window seen so far.
template <typename S>
class WavenetStepper {
  public:
    using RowS = nn::Row<S>;
    using MatS = nn::Mat<S>;

    explicit WavenetStepper(const Wavenet<S>& model)
        : m_(&model),
          hist_(static_cast<size_t>(model.spec.n_channels),
                std::vector<std::deque<RowS>>(static_cast<size_t>(model.spec.n_layers()))) {}

    // Feeds one token per channel under (cond, subj); returns the C x Q
    // logits predicting the next timestep.
    MatS step(const VectorXi& toks, int cond, int subj) {
        const auto& sp = m_->spec;
        const int C = sp.n_channels, L = sp.n_layers();
        if (toks.size() != C) throw std::invalid_argument("channel count mismatch");

        RowS hc = RowS::Zero(sp.cond_embed + sp.subj_embed);
        if (cond < 0 || cond > sp.n_conditions) throw std::invalid_argument("unknown condition index");
        if (cond > 0 && sp.use_condition_embedding) hc.head(sp.cond_embed) = m_->wy.w.row(cond - 1);
        if (subj < 1 || subj > sp.n_subjects) throw std::invalid_argument("unknown subject index");
        hc.tail(sp.subj_embed) = m_->wo.w.row(subj - 1);

        MatS skips(C, sp.skip);
        for (int c = 0; c < C; ++c) {
            const int tok = toks[c];
            if (tok < 0 || tok >= sp.vocab) throw std::invalid_argument("token outside vocabulary");
            const int table = sp.use_channel_embedding ? c : 0;
            RowS h = m_->emb[static_cast<size_t>(table)].w.row(tok) * m_->w_in.w + m_->b_in.w.row(0);
            RowS skip = RowS::Zero(sp.skip);
            for (int l = 0; l < L; ++l) {
                const auto& ly = m_->layersv[static_cast<size_t>(l)];
                const int d = sp.dilation(l);
                auto& q = hist_[static_cast<size_t>(c)][static_cast<size_t>(l)];
                const RowS cp = hc * ly.c_fg.w;
                RowS f = h * ly.f_cur.w + ly.f_b.w.row(0) + cp;
                RowS g = h * ly.g_cur.w + ly.g_b.w.row(0) + cp;
                if (static_cast<int>(q.size()) >= d) {
                    const RowS& prev = q[q.size() - static_cast<size_t>(d)];
                    f += prev * ly.f_prev.w;
                    g += prev * ly.g_prev.w;
                }
                q.push_back(h);
                if (static_cast<int>(q.size()) > d) q.pop_front();
                const RowS z =
                    (f.array().tanh() * (S(1) / (S(1) + (-g.array()).exp()))).matrix();
                skip += z * ly.s_w.w + ly.s_b.w.row(0);
                h += z * ly.r_w.w + ly.r_b.w.row(0);
            }
            skips.row(c) = skip;
        }

        MatS out(C, sp.vocab);
        for (int c = 0; c < C; ++c) {
            RowS mixed;
            if (sp.mix) {
                mixed = RowS::Zero(sp.skip);
                for (int c2 = 0; c2 < C; ++c2) mixed += m_->w_m.w(c2, c) * skips.row(c2);
            } else {
                mixed = skips.row(c);
            }
            const RowS r1 = mixed.cwiseMax(S(0));
            const RowS a1 = r1 * m_->h1_w.w + m_->h1_b.w.row(0);
            const RowS r2 = a1.cwiseMax(S(0));
            out.row(c) = r2 * m_->h2_w.w + m_->h2_b.w.row(0);
        }
        return out;
    }

  private:
    const Wavenet<S>* m_;
    std::vector<std::vector<std::deque<RowS>>> hist_;
};

template <typename S>
int sample_row(const nn::Row<S>& logits, double p, Rng& rng) {
    const VectorXd l = logits.transpose().template cast<double>();
    return sample_top_p(softmax_double(l), p, rng);
}

}  // namespace detail

// Recursive generation from a channel transformer. Channels run as
// independent streams over a shared condition track: each keeps its own RNG
// substream and an incremental decoder that re-primes from the last half
// window when the positional table fills up. The primer and the first
// max_ctx samples are discarded as warm-up.
template <typename S>
Recording generate(const Gpt<S>& model, const GenerationPlan& plan, const MuLawCodec& codec, double fs,
                   const std::vector<std::string>& channel_names = {}) {
    plan.validate();
    const auto& sp = model.spec;
    if (sp.flat) throw std::invalid_argument("flat model passed to the channel generator");
    if (plan.subject < 1 || plan.subject > sp.n_subjects) throw GenError("subject id outside trained table");

    const Eigen::Index C = sp.n_channels;
    const Eigen::Index T_out = detail::output_samples(plan.duration_s, fs);
    const Eigen::Index discard = sp.max_ctx;

    MatrixXi prime = plan.prime;
    if (prime.size() == 0) prime = MatrixXi::Constant(C, 1, quantize_value(0.0, codec));
    if (prime.rows() != C) throw std::invalid_argument("primer channel count mismatch");
    if (prime.cols() >= sp.max_ctx) throw std::invalid_argument("primer longer than the context window");
    const Eigen::Index P = prime.cols();

    const Eigen::Index total = P + discard + T_out;
    const VectorXi out_track = plan_condition_track(plan, fs, T_out);
    VectorXi track = VectorXi::Zero(total);
    track.tail(T_out) = out_track;

    MatrixXi toks(C, total);
    toks.leftCols(P) = prime;
    for (Eigen::Index c = 0; c < C; ++c) {
        Rng rng(Rng::substream(plan.seed, static_cast<uint64_t>(c)));
        GptDecoder<S> dec(model);
        nn::Row<S> h;
        for (Eigen::Index i = 0; i < P; ++i)
            h = dec.step(model.input_row(toks(c, i), dec.size(), track[i], plan.subject, static_cast<int>(c)));
        for (Eigen::Index s = P; s < total; ++s) {
            toks(c, s) = detail::sample_row<S>(model.logits_row(h), plan.top_p, rng);
            if (s + 1 == total) break;
            if (dec.size() == sp.max_ctx) {
                dec.reset();
                const Eigen::Index keep = sp.max_ctx / 2;
                for (Eigen::Index j = s - keep + 1; j <= s; ++j)
                    h = dec.step(model.input_row(toks(c, j), dec.size(), track[j], plan.subject, static_cast<int>(c)));
            } else {
                h = dec.step(model.input_row(toks(c, s), dec.size(), track[s], plan.subject, static_cast<int>(c)));
            }
        }
    }

    TokenizedRecording tr;
    tr.tokens = toks.rightCols(T_out);
    tr.codec = codec;
    tr.fs = fs;
    tr.channel_names = detail::default_names(channel_names, C);
    tr.condition_track = out_track;
    tr.subject_track = VectorXi::Constant(T_out, plan.subject);
    return detokenize(tr);
}

// Recursive generation from a Wavenet. All channels advance together each
// step (the mix variant couples them through the skip mixing); sampling
// still uses one RNG substream per channel.
template <typename S>
Recording generate(const Wavenet<S>& model, const GenerationPlan& plan, const MuLawCodec& codec, double fs,
                   const std::vector<std::string>& channel_names = {}) {
    plan.validate();
    const auto& sp = model.spec;
    if (plan.subject < 1 || plan.subject > sp.n_subjects) throw GenError("subject id outside trained table");

    const Eigen::Index C = sp.n_channels;
    const Eigen::Index T_out = detail::output_samples(plan.duration_s, fs);
    const Eigen::Index discard = sp.receptive_field();

    MatrixXi prime = plan.prime;
    if (prime.size() == 0) prime = MatrixXi::Constant(C, 1, quantize_value(0.0, codec));
    if (prime.rows() != C) throw std::invalid_argument("primer channel count mismatch");
    const Eigen::Index P = prime.cols();

    const Eigen::Index total = P + discard + T_out;
    const VectorXi out_track = plan_condition_track(plan, fs, T_out);
    VectorXi track = VectorXi::Zero(total);
    track.tail(T_out) = out_track;

    std::vector<Rng> rngs;
    for (Eigen::Index c = 0; c < C; ++c) rngs.emplace_back(Rng::substream(plan.seed, static_cast<uint64_t>(c)));

    MatrixXi toks(C, total);
    toks.leftCols(P) = prime;
    detail::WavenetStepper<S> stepper(model);
    for (Eigen::Index t = 0; t + 1 < total; ++t) {
        const nn::Mat<S> logits = stepper.step(toks.col(t), track[t], plan.subject);
        if (t + 1 >= P)
            for (Eigen::Index c = 0; c < C; ++c)
                toks(c, t + 1) = detail::sample_row<S>(logits.row(c), plan.top_p, rngs[static_cast<size_t>(c)]);
    }

    TokenizedRecording tr;
    tr.tokens = toks.rightCols(T_out);
    tr.codec = codec;
    tr.fs = fs;
    tr.channel_names = detail::default_names(channel_names, C);
    tr.condition_track = out_track;
    tr.subject_track = VectorXi::Constant(T_out, plan.subject);
    return detokenize(tr);
}

// Recursive generation from a flat transformer: each timestep is a separator
// feed followed by one sampled token per bucket, decoded back to channels
// through the vector quantiser.
template <typename S>
Recording generate_flat(const Gpt<S>& model, const GenerationPlan& plan, const VectorQuantizer& vq, double fs,
                        const std::vector<std::string>& channel_names = {}) {
    plan.validate();
    const auto& sp = model.spec;
    if (!sp.flat) throw std::invalid_argument("channel model passed to the flat generator");
    if (plan.subject < 1 || plan.subject > sp.n_subjects) throw GenError("subject id outside trained table");
    if (plan.prime.size() != 0) throw std::invalid_argument("flat generation does not take a primer");
    if (static_cast<int64_t>(sp.vocab) != vq.vocab_size())
        throw std::invalid_argument("model vocabulary does not match the quantiser");

    const int B = sp.n_channels;
    const int stride = sp.flat_stride();
    const int sep = sp.vocab;
    const Eigen::Index T_out = detail::output_samples(plan.duration_s, fs);
    const Eigen::Index discard = sp.max_ctx;
    const Eigen::Index total = discard + T_out;

    const VectorXi out_track = plan_condition_track(plan, fs, T_out);
    VectorXi track = VectorXi::Zero(total);
    track.tail(T_out) = out_track;

    Rng rng(Rng::substream(plan.seed, 0));
    GptDecoder<S> dec(model);
    MatrixXi toks(B, total);
    const Eigen::Index cap = static_cast<Eigen::Index>(sp.pos_rows());
    for (Eigen::Index ts = 0; ts < total; ++ts) {
        if (dec.size() + stride > cap) {
            dec.reset();
            const Eigen::Index keep = sp.max_ctx / 2;
            for (Eigen::Index j = ts - keep; j < ts; ++j) {
                dec.step(model.flat_input_row(sep, dec.size(), track[j], plan.subject));
                for (int b = 0; b < B; ++b)
                    dec.step(model.flat_input_row(toks(b, j), dec.size(), track[j], plan.subject));
            }
        }
        nn::Row<S> h = dec.step(model.flat_input_row(sep, dec.size(), track[ts], plan.subject));
        for (int b = 0; b < B; ++b) {
            toks(b, ts) = detail::sample_row<S>(model.flat_logits_row(h, b), plan.top_p, rng);
            h = dec.step(model.flat_input_row(toks(b, ts), dec.size(), track[ts], plan.subject));
        }
    }

    Recording rec;
    rec.data = vq_decode(vq, MatrixXi(toks.rightCols(T_out)));
    rec.fs = fs;
    rec.channel_names = detail::default_names(channel_names, rec.data.rows());
    rec.condition_track = out_track;
    rec.subject_track = VectorXi::Constant(T_out, plan.subject);
    return rec;
}

// IIR generation from a fitted AR model: x_t = eps_t + f(X_{t-K:t-1}) with
// standard-normal innovations, one RNG substream per channel. The first K
// samples (zero-window warm-up) are discarded.
Recording generate_ar(const ArModel& model, double duration_s, double fs, uint64_t seed,
                      const std::vector<std::string>& channel_names = {});

}  // namespace megcast
