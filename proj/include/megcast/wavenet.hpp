#pragma once

#include "megcast/nn.hpp"

namespace megcast {

// Dilated causal convolutional forecaster, one token stream per channel with
// the channel dimension treated as batch. The mix variant inserts a C x C
// channel-mixing projection on the summed skip representations.
struct WavenetSpec {
    int stacks = 2;
    int layers = 7;  // per stack, dilation doubles per layer
    int kernel = 2;
    int hidden = 256;
    int skip = 1024;
    int embed = 64;       // token embedding size, projected to hidden by a 1x1 conv
    int vocab = 256;      // Q
    int cond_embed = 20;  // E_n
    int subj_embed = 20;  // E_s
    int n_channels = 1;
    int n_conditions = 0;
    int n_subjects = 1;
    bool mix = false;
    bool use_channel_embedding = true;    // ablation: every channel uses table 0
    bool use_condition_embedding = true;  // ablation: H_y contribution always zero
    uint64_t init_seed = 1;

    static WavenetSpec defaults(bool mix_variant) {
        WavenetSpec s;
        s.mix = mix_variant;
        s.hidden = mix_variant ? 128 : 256;
        s.skip = mix_variant ? 512 : 1024;
        return s;
    }

    int n_layers() const { return stacks * layers; }
    int dilation(int l) const { return 1 << (l % layers); }
    int receptive_field() const { return 1 + stacks * ((1 << layers) - 1) * (kernel - 1); }

    void validate() const {
        if (stacks < 1 || layers < 1 || kernel != 2) throw ConfigError("bad dilation-stack shape");
        if (hidden < 1 || skip < 1 || embed < 1 || vocab < 2) throw ConfigError("bad wavenet sizes");
        if (cond_embed < 1 || subj_embed < 1) throw ConfigError("bad conditioning sizes");
        if (n_channels < 1 || n_subjects < 1 || n_conditions < 0) throw ConfigError("bad table sizes");
    }
};

// One training window: all channels over the same span. targets(c,t) is the
// token channel c should predict from position t, or -1 to skip.
struct WavenetBatchItem {
    MatrixXi tokens;  // C x T
    MatrixXi targets;
    VectorXi condition;  // T, 0 = none
    VectorXi subject;    // T, 1-based
};

template <typename S>
class Wavenet {
  public:
    using MatS = nn::Mat<S>;

    WavenetSpec spec;

    std::vector<nn::Param<S>> emb;  // per channel, Q x E
    nn::Param<S> w_in, b_in;        // E -> hidden
    nn::Param<S> wy;                // N x E_n
    nn::Param<S> wo;                // S x E_s
    struct Layer {
        nn::Param<S> f_prev, f_cur, f_b;  // dilated causal conv, kernel 2
        nn::Param<S> g_prev, g_cur, g_b;
        nn::Param<S> c_fg;        // (E_n+E_s) -> hidden, shared by filter and gate
        nn::Param<S> r_w, r_b;    // residual 1x1
        nn::Param<S> s_w, s_b;    // skip 1x1
    };
    std::vector<Layer> layersv;
    nn::Param<S> w_m;            // C x C (mix only)
    nn::Param<S> h1_w, h1_b;     // skip -> skip
    nn::Param<S> h2_w, h2_b;     // skip -> Q

    explicit Wavenet(const WavenetSpec& sp) : spec(sp) {
        spec.validate();
        Rng rng(spec.init_seed);
        const int E = spec.embed, Hd = spec.hidden, Sk = spec.skip;
        const int Ec = spec.cond_embed + spec.subj_embed;

        emb.resize(static_cast<size_t>(spec.n_channels));
        for (int c = 0; c < spec.n_channels; ++c)
            emb[static_cast<size_t>(c)].init_normal(spec.vocab, E, "emb" + std::to_string(c), rng, 0.02);
        if (spec.n_conditions > 0) wy.init_normal(spec.n_conditions, spec.cond_embed, "wy", rng, 0.02);
        wo.init_normal(spec.n_subjects, spec.subj_embed, "wo", rng, 0.02);

        auto fan_in = [&](nn::Param<S>& p, int rows, int cols, const std::string& n) {
            p.init_normal(rows, cols, n, rng, 1.0 / std::sqrt(static_cast<double>(rows)));
        };
        fan_in(w_in, E, Hd, "w_in");
        b_in.init_zero(1, Hd, "b_in");

        layersv.resize(static_cast<size_t>(spec.n_layers()));
        for (int l = 0; l < spec.n_layers(); ++l) {
            auto& ly = layersv[static_cast<size_t>(l)];
            const std::string p = "l" + std::to_string(l) + ".";
            fan_in(ly.f_prev, Hd, Hd, p + "f_prev");
            fan_in(ly.f_cur, Hd, Hd, p + "f_cur");
            ly.f_b.init_zero(1, Hd, p + "f_b");
            fan_in(ly.g_prev, Hd, Hd, p + "g_prev");
            fan_in(ly.g_cur, Hd, Hd, p + "g_cur");
            ly.g_b.init_zero(1, Hd, p + "g_b");
            fan_in(ly.c_fg, Ec, Hd, p + "c_fg");
            fan_in(ly.r_w, Hd, Hd, p + "r_w");
            ly.r_b.init_zero(1, Hd, p + "r_b");
            fan_in(ly.s_w, Hd, Sk, p + "s_w");
            ly.s_b.init_zero(1, Sk, p + "s_b");
        }
        if (spec.mix) fan_in(w_m, spec.n_channels, spec.n_channels, "w_m");
        fan_in(h1_w, Sk, Sk, "h1_w");
        h1_b.init_zero(1, Sk, "h1_b");
        fan_in(h2_w, Sk, spec.vocab, "h2_w");
        h2_b.init_zero(1, spec.vocab, "h2_b");
    }

    nn::ParamSet<S> params() {
        nn::ParamSet<S> ps;
        for (auto& p : emb) ps.add(p);
        ps.add(w_in);
        ps.add(b_in);
        if (spec.n_conditions > 0) ps.add(wy);
        ps.add(wo);
        for (auto& ly : layersv) {
            ps.add(ly.f_prev);
            ps.add(ly.f_cur);
            ps.add(ly.f_b);
            ps.add(ly.g_prev);
            ps.add(ly.g_cur);
            ps.add(ly.g_b);
            ps.add(ly.c_fg);
            ps.add(ly.r_w);
            ps.add(ly.r_b);
            ps.add(ly.s_w);
            ps.add(ly.s_b);
        }
        if (spec.mix) ps.add(w_m);
        ps.add(h1_w);
        ps.add(h1_b);
        ps.add(h2_w);
        ps.add(h2_b);
        return ps;
    }

    // Per-channel logits over Q at every position, causal in t.
    std::vector<MatS> logits(const MatrixXi& tokens, const VectorXi& condition, const VectorXi& subject) const {
        Caches caches;
        return forward(tokens, condition, subject, caches);
    }

    std::pair<double, int64_t> forward_backward(const std::vector<WavenetBatchItem>& batch) {
        double loss = 0.0;
        int64_t count = 0;
        for (const auto& item : batch) {
            Caches caches;
            const std::vector<MatS> lg = forward(item.tokens, item.condition, item.subject, caches);
            std::vector<MatS> dlogits(lg.size());
            for (size_t c = 0; c < lg.size(); ++c) {
                const auto [l, n] = nn::cross_entropy(lg[c], VectorXi(item.targets.row(static_cast<Eigen::Index>(c)).transpose()), dlogits[c]);
                loss += l;
                count += n;
            }
            backward(item, caches, dlogits);
        }
        return {loss, count};
    }

    std::pair<double, int64_t> loss(const std::vector<WavenetBatchItem>& batch) const {
        double total = 0.0;
        int64_t count = 0;
        for (const auto& item : batch) {
            Caches caches;
            const std::vector<MatS> lg = forward(item.tokens, item.condition, item.subject, caches);
            MatS scratch;
            for (size_t c = 0; c < lg.size(); ++c) {
                const auto [l, n] = nn::cross_entropy(lg[c], VectorXi(item.targets.row(static_cast<Eigen::Index>(c)).transpose()), scratch);
                total += l;
                count += n;
            }
        }
        return {total, count};
    }

  private:
    struct LayerCache {
        MatS h_in;    // T x hidden, layer input
        MatS f_pre;   // pre-tanh
        MatS g_pre;   // pre-sigmoid
        MatS z;
    };
    struct ChannelCache {
        MatS x_emb;   // T x E
        std::vector<LayerCache> layers;
        MatS skip_sum;   // T x skip, pre-mix
        MatS mixed;      // T x skip, post-mix (= skip_sum when not mixing)
        MatS r1, a1, r2; // head intermediates
    };
    struct Caches {
        MatS hc;  // T x (E_n+E_s)
        std::vector<MatS> cond_proj;  // per layer, T x hidden
        std::vector<ChannelCache> ch;
    };

    // out.row(t) += x.row(t-d) * w for t >= d.
    static void dilated_add(MatS& out, const MatS& x, const MatS& w, int d) {
        const Eigen::Index T = x.rows();
        if (T > d) out.middleRows(d, T - d).noalias() += x.topRows(T - d) * w;
    }

    MatS embed_channel(const MatrixXi& tokens, int c) const {
        const int table = spec.use_channel_embedding ? c : 0;
        const auto& w = emb[static_cast<size_t>(table)].w;
        MatS x(tokens.cols(), spec.embed);
        for (Eigen::Index t = 0; t < tokens.cols(); ++t) {
            const int tok = tokens(c, t);
            if (tok < 0 || tok >= spec.vocab) throw std::invalid_argument("token outside vocabulary");
            x.row(t) = w.row(tok);
        }
        return x;
    }

    MatS conditioning(const VectorXi& condition, const VectorXi& subject) const {
        const Eigen::Index T = condition.size();
        MatS hc = MatS::Zero(T, spec.cond_embed + spec.subj_embed);
        for (Eigen::Index t = 0; t < T; ++t) {
            const int y = condition[t];
            if (y < 0 || y > spec.n_conditions) throw std::invalid_argument("unknown condition index");
            if (y > 0 && spec.use_condition_embedding) hc.row(t).head(spec.cond_embed) = wy.w.row(y - 1);
            const int s = subject[t];
            if (s < 1 || s > spec.n_subjects) throw std::invalid_argument("unknown subject index");
            hc.row(t).tail(spec.subj_embed) = wo.w.row(s - 1);
        }
        return hc;
    }

    std::vector<MatS> forward(const MatrixXi& tokens, const VectorXi& condition, const VectorXi& subject,
                              Caches& caches) const {
        const Eigen::Index C = tokens.rows(), T = tokens.cols();
        if (C != spec.n_channels) throw std::invalid_argument("channel count mismatch");
        if (condition.size() != T || subject.size() != T) throw std::invalid_argument("label track length mismatch");
        const int L = spec.n_layers();

        caches.hc = conditioning(condition, subject);
        caches.cond_proj.resize(static_cast<size_t>(L));
        for (int l = 0; l < L; ++l)
            caches.cond_proj[static_cast<size_t>(l)].noalias() = caches.hc * layersv[static_cast<size_t>(l)].c_fg.w;

        caches.ch.resize(static_cast<size_t>(C));
        for (Eigen::Index c = 0; c < C; ++c) {
            auto& cc = caches.ch[static_cast<size_t>(c)];
            cc.x_emb = embed_channel(tokens, static_cast<int>(c));
            MatS h = (cc.x_emb * w_in.w).rowwise() + b_in.w.row(0);
            cc.skip_sum = MatS::Zero(T, spec.skip);
            cc.layers.resize(static_cast<size_t>(L));
            for (int l = 0; l < L; ++l) {
                const auto& ly = layersv[static_cast<size_t>(l)];
                auto& lc = cc.layers[static_cast<size_t>(l)];
                const int d = spec.dilation(l);
                lc.h_in = h;
                lc.f_pre = ((h * ly.f_cur.w).rowwise() + ly.f_b.w.row(0)) + caches.cond_proj[static_cast<size_t>(l)];
                dilated_add(lc.f_pre, h, ly.f_prev.w, d);
                lc.g_pre = ((h * ly.g_cur.w).rowwise() + ly.g_b.w.row(0)) + caches.cond_proj[static_cast<size_t>(l)];
                dilated_add(lc.g_pre, h, ly.g_prev.w, d);
                lc.z = lc.f_pre.array().tanh() * (S(1) / (S(1) + (-lc.g_pre.array()).exp()));
                cc.skip_sum.noalias() += (lc.z * ly.s_w.w).rowwise() + ly.s_b.w.row(0);
                h += (lc.z * ly.r_w.w).rowwise() + ly.r_b.w.row(0);
            }
        }

        std::vector<MatS> out(static_cast<size_t>(C));
        for (Eigen::Index c = 0; c < C; ++c) {
            auto& cc = caches.ch[static_cast<size_t>(c)];
            if (spec.mix) {
                cc.mixed = MatS::Zero(T, spec.skip);
                for (Eigen::Index c2 = 0; c2 < C; ++c2)
                    cc.mixed.noalias() += w_m.w(c2, c) * caches.ch[static_cast<size_t>(c2)].skip_sum;
            } else {
                cc.mixed = cc.skip_sum;
            }
            cc.r1 = cc.mixed.cwiseMax(S(0));
            cc.a1 = (cc.r1 * h1_w.w).rowwise() + h1_b.w.row(0);
            cc.r2 = cc.a1.cwiseMax(S(0));
            out[static_cast<size_t>(c)] = (cc.r2 * h2_w.w).rowwise() + h2_b.w.row(0);
        }
        return out;
    }

    void backward(const WavenetBatchItem& item, Caches& caches, const std::vector<MatS>& dlogits) {
        const Eigen::Index C = item.tokens.rows(), T = item.tokens.cols();
        const int L = spec.n_layers();

        // Head and mix: gradients w.r.t. each channel's pre-mix skip sum.
        std::vector<MatS> dskip(static_cast<size_t>(C), MatS::Zero(T, spec.skip));
        std::vector<MatS> dmixed(static_cast<size_t>(C));
        for (Eigen::Index c = 0; c < C; ++c) {
            auto& cc = caches.ch[static_cast<size_t>(c)];
            const MatS& dlg = dlogits[static_cast<size_t>(c)];
            h2_w.g.noalias() += cc.r2.transpose() * dlg;
            h2_b.g.row(0) += dlg.colwise().sum();
            MatS da1 = (dlg * h2_w.w.transpose()).cwiseProduct((cc.a1.array() > S(0)).template cast<S>().matrix());
            h1_w.g.noalias() += cc.r1.transpose() * da1;
            h1_b.g.row(0) += da1.colwise().sum();
            dmixed[static_cast<size_t>(c)] =
                (da1 * h1_w.w.transpose()).cwiseProduct((cc.mixed.array() > S(0)).template cast<S>().matrix());
        }
        if (spec.mix) {
            for (Eigen::Index c = 0; c < C; ++c)
                for (Eigen::Index c2 = 0; c2 < C; ++c2) {
                    w_m.g(c2, c) += caches.ch[static_cast<size_t>(c2)].skip_sum.cwiseProduct(dmixed[static_cast<size_t>(c)]).sum();
                    dskip[static_cast<size_t>(c2)].noalias() += w_m.w(c2, c) * dmixed[static_cast<size_t>(c)];
                }
        } else {
            dskip = std::move(dmixed);
        }

        MatS dhc = MatS::Zero(T, spec.cond_embed + spec.subj_embed);
        for (Eigen::Index c = 0; c < C; ++c) {
            auto& cc = caches.ch[static_cast<size_t>(c)];
            MatS dh = MatS::Zero(T, spec.hidden);
            for (int l = L - 1; l >= 0; --l) {
                auto& ly = layersv[static_cast<size_t>(l)];
                auto& lc = cc.layers[static_cast<size_t>(l)];
                const int d = spec.dilation(l);

                MatS dz = dskip[static_cast<size_t>(c)] * ly.s_w.w.transpose();
                dz.noalias() += dh * ly.r_w.w.transpose();
                ly.s_w.g.noalias() += lc.z.transpose() * dskip[static_cast<size_t>(c)];
                ly.s_b.g.row(0) += dskip[static_cast<size_t>(c)].colwise().sum();
                ly.r_w.g.noalias() += lc.z.transpose() * dh;
                ly.r_b.g.row(0) += dh.colwise().sum();

                const auto th = lc.f_pre.array().tanh();
                const auto sg = S(1) / (S(1) + (-lc.g_pre.array()).exp());
                const MatS df = (dz.array() * sg * (S(1) - th.square())).matrix();
                const MatS dg = (dz.array() * th * sg * (S(1) - sg)).matrix();

                ly.f_b.g.row(0) += df.colwise().sum();
                ly.g_b.g.row(0) += dg.colwise().sum();
                const MatS dfg = df + dg;
                ly.c_fg.g.noalias() += caches.hc.transpose() * dfg;
                dhc.noalias() += dfg * ly.c_fg.w.transpose();

                ly.f_cur.g.noalias() += lc.h_in.transpose() * df;
                ly.g_cur.g.noalias() += lc.h_in.transpose() * dg;
                MatS dh_in = df * ly.f_cur.w.transpose() + dg * ly.g_cur.w.transpose();
                if (T > d) {
                    ly.f_prev.g.noalias() += lc.h_in.topRows(T - d).transpose() * df.middleRows(d, T - d);
                    ly.g_prev.g.noalias() += lc.h_in.topRows(T - d).transpose() * dg.middleRows(d, T - d);
                    dh_in.topRows(T - d).noalias() += df.middleRows(d, T - d) * ly.f_prev.w.transpose();
                    dh_in.topRows(T - d).noalias() += dg.middleRows(d, T - d) * ly.g_prev.w.transpose();
                }
                dh += dh_in;  // residual path plus conv path
            }
            w_in.g.noalias() += cc.x_emb.transpose() * dh;
            b_in.g.row(0) += dh.colwise().sum();
            const MatS dx = dh * w_in.w.transpose();
            const int table = spec.use_channel_embedding ? static_cast<int>(c) : 0;
            auto& et = emb[static_cast<size_t>(table)];
            for (Eigen::Index t = 0; t < T; ++t) et.g.row(item.tokens(c, t)) += dx.row(t);
        }

        for (Eigen::Index t = 0; t < T; ++t) {
            const int y = item.condition[t];
            if (y > 0 && spec.use_condition_embedding) wy.g.row(y - 1) += dhc.row(t).head(spec.cond_embed);
            wo.g.row(item.subject[t] - 1) += dhc.row(t).tail(spec.subj_embed);
        }
    }
};

}  // namespace megcast
