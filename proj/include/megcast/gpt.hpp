#pragma once

#include "megcast/nn.hpp"

namespace megcast {

// Shared spec for ChannelGPT2 (one token stream per channel, channel as
// batch) and FlatGPT2 (bucket-flattened stream). Context lengths are in
// timesteps; FlatGPT2's flat sequence length is (n_buckets+1) * timesteps.
struct GptSpec {
    int n_layers = 12;
    int n_heads = 12;
    int n_embd = 96;
    int vocab = 256;  // Q for channel models, V (per-bucket) for flat
    int min_ctx = 128;
    int max_ctx = 256;
    int n_channels = 1;    // channel-table rows; buckets B for flat
    int n_conditions = 0;  // condition ids run 1..N, 0 means none
    int n_subjects = 1;
    bool tie_weights = true;
    bool flat = false;
    bool use_channel_embedding = true;    // ablation: zero W_c contribution
    bool use_condition_embedding = true;  // ablation: zero W_y contribution
    uint64_t init_seed = 1;

    int flat_stride() const { return n_channels + 1; }
    int pos_rows() const { return flat ? flat_stride() * max_ctx : max_ctx; }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || n_embd < 1 || vocab < 2) throw ConfigError("bad transformer sizes");
        if (n_embd % n_heads != 0) throw ConfigError("embedding size must be divisible by heads");
        if (min_ctx < 1 || max_ctx < min_ctx) throw ConfigError("need max_ctx >= min_ctx >= 1");
        if (n_channels < 1 || n_subjects < 1 || n_conditions < 0) throw ConfigError("bad table sizes");
        if (flat && tie_weights) throw ConfigError("flat model uses separate per-bucket output projections");
    }
};

// One training example for the channel models: a token window from one
// channel with its aligned label tracks. targets[t] is the token to predict
// from position t, or -1 to exclude the position from the loss.
struct GptSequence {
    VectorXi tokens;
    int channel = 0;
    VectorXi condition;
    VectorXi subject;
    VectorXi targets;
};

// One training example for FlatGPT2. The sequence must start at a separator.
// timestep[i] indexes W_t rows and restarts from 0 within the window.
struct FlatSequence {
    VectorXi tokens;     // flat layout: sep, bucket 1..B, sep, ...
    VectorXi condition;  // per timestep-of-position
    VectorXi subject;
    VectorXi targets;  // next flat token, -1 to ignore (always -1 where next is sep)
};

template <typename S>
class Gpt {
  public:
    using MatS = nn::Mat<S>;
    using VecS = nn::Vec<S>;
    using RowS = nn::Row<S>;

    GptSpec spec;

    nn::Param<S> wte;                  // Q x E (channel models)
    std::vector<nn::Param<S>> wte_b;   // flat: per bucket, V x E
    nn::Param<S> wsep;                 // flat: 1 x E
    nn::Param<S> wpe;                  // pos_rows x E
    nn::Param<S> wt;                   // flat: max_ctx x E
    nn::Param<S> wy;                   // N x E
    nn::Param<S> wo;                   // S x E
    nn::Param<S> wc;                   // C (or B) x E
    nn::Param<S> wout;                 // E x Q when untied (channel models)
    std::vector<nn::Param<S>> wout_b;  // flat: per bucket, E x V

    struct Block {
        nn::Param<S> wqkv, bqkv, wproj, bproj;
        nn::Param<S> ln1_g, ln1_b, ln2_g, ln2_b;
        nn::Param<S> fc1_w, fc1_b, fc2_w, fc2_b;
    };
    std::vector<Block> blocks;

    explicit Gpt(const GptSpec& sp) : spec(sp) {
        spec.validate();
        Rng rng(spec.init_seed);
        const int E = spec.n_embd;
        const double sd = 0.02;

        if (spec.flat) {
            wte_b.resize(static_cast<size_t>(spec.n_channels));
            for (int b = 0; b < spec.n_channels; ++b)
                wte_b[static_cast<size_t>(b)].init_normal(spec.vocab, E, "wte_b" + std::to_string(b), rng, sd);
            wsep.init_normal(1, E, "wsep", rng, sd);
            wt.init_normal(spec.max_ctx, E, "wt", rng, sd);
        } else {
            wte.init_normal(spec.vocab, E, "wte", rng, sd);
        }
        wpe.init_normal(spec.pos_rows(), E, "wpe", rng, sd);
        if (spec.n_conditions > 0) wy.init_normal(spec.n_conditions, E, "wy", rng, sd);
        wo.init_normal(spec.n_subjects, E, "wo", rng, sd);
        wc.init_normal(spec.n_channels, E, "wc", rng, sd);

        blocks.resize(static_cast<size_t>(spec.n_layers));
        for (int l = 0; l < spec.n_layers; ++l) {
            auto& blk = blocks[static_cast<size_t>(l)];
            const std::string p = "h" + std::to_string(l) + ".";
            blk.wqkv.init_normal(E, 3 * E, p + "wqkv", rng, sd);
            blk.bqkv.init_zero(1, 3 * E, p + "bqkv");
            blk.wproj.init_normal(E, E, p + "wproj", rng, sd);
            blk.bproj.init_zero(1, E, p + "bproj");
            blk.ln1_g.init_zero(1, E, p + "ln1_g");
            blk.ln1_g.w.setOnes();
            blk.ln1_b.init_zero(1, E, p + "ln1_b");
            blk.ln2_g.init_zero(1, E, p + "ln2_g");
            blk.ln2_g.w.setOnes();
            blk.ln2_b.init_zero(1, E, p + "ln2_b");
            blk.fc1_w.init_normal(E, 4 * E, p + "fc1_w", rng, sd);
            blk.fc1_b.init_zero(1, 4 * E, p + "fc1_b");
            blk.fc2_w.init_normal(4 * E, E, p + "fc2_w", rng, sd);
            blk.fc2_b.init_zero(1, E, p + "fc2_b");
        }
        if (spec.flat) {
            wout_b.resize(static_cast<size_t>(spec.n_channels));
            for (int b = 0; b < spec.n_channels; ++b)
                wout_b[static_cast<size_t>(b)].init_normal(E, spec.vocab, "wout_b" + std::to_string(b), rng, sd);
        } else if (!spec.tie_weights) {
            wout.init_normal(E, spec.vocab, "wout", rng, sd);
        }
    }

    nn::ParamSet<S> params() {
        nn::ParamSet<S> ps;
        if (spec.flat) {
            for (auto& p : wte_b) ps.add(p);
            ps.add(wsep);
            ps.add(wt);
        } else {
            ps.add(wte);
        }
        ps.add(wpe);
        if (spec.n_conditions > 0) ps.add(wy);
        ps.add(wo);
        ps.add(wc);
        for (auto& blk : blocks) {
            ps.add(blk.wqkv);
            ps.add(blk.bqkv);
            ps.add(blk.wproj);
            ps.add(blk.bproj);
            ps.add(blk.ln1_g);
            ps.add(blk.ln1_b);
            ps.add(blk.ln2_g);
            ps.add(blk.ln2_b);
            ps.add(blk.fc1_w);
            ps.add(blk.fc1_b);
            ps.add(blk.fc2_w);
            ps.add(blk.fc2_b);
        }
        if (spec.flat)
            for (auto& p : wout_b) ps.add(p);
        else if (!spec.tie_weights)
            ps.add(wout);
        return ps;
    }

    // ---- channel-model paths ----

    // Input row for one channel-model position: token + positional +
    // condition + subject + channel embeddings. Also used by the decoder.
    RowS input_row(int tok, Eigen::Index pos, int cond, int subj, int channel) const {
        if (spec.flat) throw std::logic_error("channel input on flat model");
        if (pos < 0 || pos >= spec.max_ctx) throw std::invalid_argument("position outside positional table");
        if (channel < 0 || channel >= spec.n_channels) throw std::invalid_argument("unknown channel index");
        if (tok < 0 || tok >= spec.vocab) throw std::invalid_argument("token outside vocabulary");
        RowS h = wte.w.row(tok) + wpe.w.row(pos);
        h += condition_row(cond);
        h += subject_row(subj);
        if (spec.use_channel_embedding) h += wc.w.row(channel);
        return h;
    }

    MatS assemble_input(const GptSequence& seq) const {
        const Eigen::Index T = seq.tokens.size();
        if (T < 1) throw std::invalid_argument("empty sequence");
        if (seq.condition.size() != T || seq.subject.size() != T) throw std::invalid_argument("label track length mismatch");
        MatS h0(T, spec.n_embd);
        for (Eigen::Index t = 0; t < T; ++t)
            h0.row(t) = input_row(seq.tokens[t], t, seq.condition[t], seq.subject[t], seq.channel);
        return h0;
    }

    MatS logits(const GptSequence& seq) const {
        std::vector<LayerCache> caches;
        const MatS h = trunk(assemble_input(seq), caches);
        return project_out(h);
    }

    // Vocabulary logits for one hidden row (channel models).
    RowS logits_row(const RowS& h) const {
        if (spec.flat) throw std::logic_error("channel projection on flat model");
        if (spec.tie_weights) return h * wte.w.transpose();
        return h * wout.w;
    }

    // Logits through the output head of `bucket` for one hidden row.
    RowS flat_logits_row(const RowS& h, int bucket) const {
        if (!spec.flat) throw std::logic_error("flat projection on channel model");
        if (bucket < 0 || bucket >= spec.n_channels) throw std::invalid_argument("unknown bucket index");
        return h * wout_b[static_cast<size_t>(bucket)].w;
    }

    // Accumulates gradients; returns {loss_sum, predicted_positions}.
    std::pair<double, int64_t> forward_backward(const std::vector<GptSequence>& batch) {
        double loss = 0.0;
        int64_t count = 0;
        for (const auto& seq : batch) {
            std::vector<LayerCache> caches;
            const MatS h0 = assemble_input(seq);
            const MatS h = trunk(h0, caches);
            const MatS lg = project_out(h);
            MatS dlogits;
            const auto [l, c] = nn::cross_entropy(lg, seq.targets, dlogits);
            loss += l;
            count += c;
            MatS dh = MatS::Zero(h.rows(), h.cols());
            if (spec.tie_weights) {
                wte.g.noalias() += dlogits.transpose() * h;
                dh.noalias() += dlogits * wte.w;
            } else {
                wout.g.noalias() += h.transpose() * dlogits;
                dh.noalias() += dlogits * wout.w.transpose();
            }
            const MatS dh0 = trunk_backward(caches, dh);
            input_backward_channel(seq, dh0);
        }
        return {loss, count};
    }

    std::pair<double, int64_t> loss(const std::vector<GptSequence>& batch) const {
        double total = 0.0;
        int64_t count = 0;
        for (const auto& seq : batch) {
            std::vector<LayerCache> caches;
            const MatS lg = project_out(trunk(assemble_input(seq), caches));
            MatS scratch;
            const auto [l, c] = nn::cross_entropy(lg, seq.targets, scratch);
            total += l;
            count += c;
        }
        return {total, count};
    }

    // ---- flat-model paths ----

    // Bucket owning flat position i, or -1 for separators.
    int bucket_at(Eigen::Index i) const { return static_cast<int>(i % flat_strideL()) - 1; }

    // Input row for one flat position; the bucket (or separator) is implied
    // by the position within the window, which always starts at a separator.
    RowS flat_input_row(int tok, Eigen::Index pos, int cond, int subj) const {
        if (!spec.flat) throw std::logic_error("flat input on channel model");
        if (pos < 0 || pos >= static_cast<Eigen::Index>(spec.pos_rows()))
            throw std::invalid_argument("position outside positional table");
        const int b = bucket_at(pos);
        RowS h(spec.n_embd);
        if (b < 0) {
            if (tok != sep_token()) throw std::invalid_argument("malformed separator layout");
            h = wsep.w.row(0);
        } else {
            if (tok < 0 || tok >= spec.vocab) throw std::invalid_argument("token outside bucket vocabulary");
            h = wte_b[static_cast<size_t>(b)].w.row(tok);
            if (spec.use_channel_embedding) h += wc.w.row(b);
        }
        h += wpe.w.row(pos) + wt.w.row(pos / flat_strideL());
        h += condition_row(cond);
        h += subject_row(subj);
        return h;
    }

    MatS assemble_input(const FlatSequence& seq) const {
        const Eigen::Index L = seq.tokens.size();
        if (L < 1) throw std::invalid_argument("empty sequence");
        if (seq.condition.size() != L || seq.subject.size() != L) throw std::invalid_argument("label track length mismatch");
        MatS h0(L, spec.n_embd);
        for (Eigen::Index i = 0; i < L; ++i)
            h0.row(i) = flat_input_row(seq.tokens[i], i, seq.condition[i], seq.subject[i]);
        return h0;
    }

    int sep_token() const { return spec.vocab; }

    // Restricted logits: row i covers the vocabulary of the bucket predicted
    // from position i (the bucket of position i+1). Rows that would predict a
    // separator are zero and flagged false in the mask.
    MatS flat_logits(const FlatSequence& seq, std::vector<bool>* predict_mask = nullptr) const {
        std::vector<LayerCache> caches;
        const MatS h = trunk(assemble_input(seq), caches);
        MatS lg = MatS::Zero(h.rows(), spec.vocab);
        if (predict_mask) predict_mask->assign(static_cast<size_t>(h.rows()), false);
        for (Eigen::Index i = 0; i < h.rows(); ++i) {
            const int nb = bucket_at(i + 1);
            if (nb < 0) continue;
            const auto& w = wout_b[static_cast<size_t>(nb)];
            lg.row(i) = h.row(i) * w.w;
            if (predict_mask) (*predict_mask)[static_cast<size_t>(i)] = true;
        }
        return lg;
    }

    std::pair<double, int64_t> forward_backward(const std::vector<FlatSequence>& batch) {
        double loss = 0.0;
        int64_t count = 0;
        for (const auto& seq : batch) {
            std::vector<LayerCache> caches;
            const MatS h0 = assemble_input(seq);
            const MatS h = trunk(h0, caches);
            MatS dh = MatS::Zero(h.rows(), h.cols());
            for (Eigen::Index i = 0; i < h.rows(); ++i) {
                const int y = seq.targets[i];
                if (y < 0) continue;
                const int nb = bucket_at(i + 1);
                if (nb < 0) throw std::invalid_argument("target set at a separator prediction");
                auto& w = wout_b[static_cast<size_t>(nb)];
                const VecS lg = (h.row(i) * w.w).transpose();
                if (y >= lg.size()) throw std::invalid_argument("target outside bucket vocabulary");
                VecS p = nn::softmax(lg);
                const S mx = lg.maxCoeff();
                loss += -static_cast<double>(lg[y] - mx) +
                        std::log(static_cast<double>(((lg.array() - mx).exp()).sum()));
                p[y] -= S(1);
                w.g.noalias() += h.row(i).transpose() * p.transpose();
                dh.row(i).noalias() += p.transpose() * w.w.transpose();
                ++count;
            }
            const MatS dh0 = trunk_backward(caches, dh);
            input_backward_flat(seq, dh0);
        }
        return {loss, count};
    }

    std::pair<double, int64_t> loss(const std::vector<FlatSequence>& batch) const {
        double total = 0.0;
        int64_t count = 0;
        for (const auto& seq : batch) {
            std::vector<bool> mask;
            const MatS lg = flat_logits(seq, &mask);
            for (Eigen::Index i = 0; i < lg.rows(); ++i) {
                const int y = seq.targets[i];
                if (y < 0) continue;
                if (!mask[static_cast<size_t>(i)]) throw std::invalid_argument("target set at a separator prediction");
                const S mx = lg.row(i).maxCoeff();
                total += -static_cast<double>(lg(i, y) - mx) +
                         std::log(static_cast<double>(((lg.row(i).array() - mx).exp()).sum()));
                ++count;
            }
        }
        return {total, count};
    }

    // ---- shared trunk ----

    struct LayerCache {
        nn::AttnCache<S> attn;
        MatS a;  // x + attn(x)
        nn::LnCache<S> ln1;
        MatS z;        // ln1 output
        MatS fc1_out;  // pre-gelu
        MatS g;        // gelu output
        MatS b_sum;    // z + fc2(g)
        nn::LnCache<S> ln2;
    };

    MatS trunk(const MatS& h0, std::vector<LayerCache>& caches) const {
        caches.resize(blocks.size());
        MatS h = h0;
        for (size_t l = 0; l < blocks.size(); ++l) {
            const auto& blk = blocks[l];
            auto& c = caches[l];
            const MatS attn_out =
                nn::attention(h, spec.n_heads, blk.wqkv, blk.bqkv, blk.wproj, blk.bproj, c.attn);
            c.a = h + attn_out;
            c.z = nn::layernorm(c.a, blk.ln1_g, blk.ln1_b, c.ln1);
            c.fc1_out = nn::linear(c.z, blk.fc1_w, blk.fc1_b);
            c.g = nn::gelu(c.fc1_out);
            c.b_sum = c.z + nn::linear(c.g, blk.fc2_w, blk.fc2_b);
            h = nn::layernorm(c.b_sum, blk.ln2_g, blk.ln2_b, c.ln2);
        }
        return h;
    }

    MatS trunk_backward(std::vector<LayerCache>& caches, const MatS& dout) {
        MatS dh = dout;
        for (size_t li = blocks.size(); li-- > 0;) {
            auto& blk = blocks[li];
            auto& c = caches[li];
            MatS db;
            nn::layernorm_backward(c.ln2, blk.ln2_g, blk.ln2_b, dh, db);
            MatS dz = db;
            MatS dg = MatS::Zero(c.g.rows(), c.g.cols());
            nn::linear_backward(c.g, blk.fc2_w, blk.fc2_b, db, &dg);
            const MatS dfc1 = nn::gelu_backward(c.fc1_out, dg);
            nn::linear_backward(c.z, blk.fc1_w, blk.fc1_b, dfc1, &dz);
            MatS da;
            nn::layernorm_backward(c.ln1, blk.ln1_g, blk.ln1_b, dz, da);
            dh = da;
            nn::attention_backward(c.attn, spec.n_heads, blk.wqkv, blk.bqkv, blk.wproj, blk.bproj, da, dh);
        }
        return dh;
    }

  private:
    Eigen::Index flat_strideL() const { return static_cast<Eigen::Index>(spec.flat_stride()); }

    MatS project_out(const MatS& h) const {
        if (spec.tie_weights) return h * wte.w.transpose();
        return h * wout.w;
    }

    RowS condition_row(int y) const {
        if (y < 0 || y > spec.n_conditions) throw std::invalid_argument("unknown condition index");
        if (y == 0 || !spec.use_condition_embedding) return RowS::Zero(spec.n_embd);
        return wy.w.row(y - 1);
    }

    RowS subject_row(int s) const {
        if (s < 1 || s > spec.n_subjects) throw std::invalid_argument("unknown subject index");
        return wo.w.row(s - 1);
    }

    void input_backward_channel(const GptSequence& seq, const MatS& dh0) {
        for (Eigen::Index t = 0; t < dh0.rows(); ++t) {
            wte.g.row(seq.tokens[t]) += dh0.row(t);
            wpe.g.row(t) += dh0.row(t);
            if (spec.use_condition_embedding && seq.condition[t] > 0) wy.g.row(seq.condition[t] - 1) += dh0.row(t);
            wo.g.row(seq.subject[t] - 1) += dh0.row(t);
            if (spec.use_channel_embedding) wc.g.row(seq.channel) += dh0.row(t);
        }
    }

    void input_backward_flat(const FlatSequence& seq, const MatS& dh0) {
        for (Eigen::Index i = 0; i < dh0.rows(); ++i) {
            const int b = bucket_at(i);
            if (b < 0) {
                wsep.g.row(0) += dh0.row(i);
            } else {
                wte_b[static_cast<size_t>(b)].g.row(seq.tokens[i]) += dh0.row(i);
                if (spec.use_channel_embedding) wc.g.row(b) += dh0.row(i);
            }
            wpe.g.row(i) += dh0.row(i);
            wt.g.row(i / flat_strideL()) += dh0.row(i);
            if (spec.use_condition_embedding && seq.condition[i] > 0) wy.g.row(seq.condition[i] - 1) += dh0.row(i);
            wo.g.row(seq.subject[i] - 1) += dh0.row(i);
        }
    }
};

// Incremental decoding with per-layer key/value caches. Matches the full
// forward pass exactly (causality), so generation can feed one position at a
// time. Works on any Gpt; the caller assembles input rows.
template <typename S>
class GptDecoder {
  public:
    using MatS = nn::Mat<S>;
    using VecS = nn::Vec<S>;
    using RowS = nn::Row<S>;

    explicit GptDecoder(const Gpt<S>& model) : model_(&model) { reset(); }

    void reset() {
        const int L = model_->spec.n_layers;
        const int E = model_->spec.n_embd;
        k_.assign(static_cast<size_t>(L), MatS(model_->spec.pos_rows(), E));
        v_.assign(static_cast<size_t>(L), MatS(model_->spec.pos_rows(), E));
        len_ = 0;
    }

    Eigen::Index size() const { return len_; }

    // Consumes the assembled input row for flat/channel position `size()`,
    // returns the final hidden state for that position.
    RowS step(const RowS& h0_row) {
        if (len_ >= static_cast<Eigen::Index>(model_->spec.pos_rows())) throw std::runtime_error("decoder window full");
        const int E = model_->spec.n_embd;
        const int H = model_->spec.n_heads;
        const int d = E / H;
        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));

        RowS h = h0_row;
        for (size_t l = 0; l < model_->blocks.size(); ++l) {
            const auto& blk = model_->blocks[l];
            const RowS qkv = h * blk.wqkv.w + blk.bqkv.w.row(0);
            k_[l].row(len_) = qkv.segment(E, E);
            v_[l].row(len_) = qkv.segment(2 * E, E);

            RowS concat(E);
            for (int hd = 0; hd < H; ++hd) {
                const auto q = qkv.segment(hd * d, d);
                const auto keys = k_[l].block(0, hd * d, len_ + 1, d);
                const auto vals = v_[l].block(0, hd * d, len_ + 1, d);
                VecS scores = (keys * q.transpose()) * scale;
                const S mx = scores.maxCoeff();
                scores = (scores.array() - mx).exp();
                scores /= scores.sum();
                concat.segment(hd * d, d) = scores.transpose() * vals;
            }
            const RowS attn_out = concat * blk.wproj.w + blk.bproj.w.row(0);
            const RowS a = h + attn_out;
            const RowS z = ln_row(a, blk.ln1_g, blk.ln1_b);
            MatS fc1(1, 4 * E);
            fc1.row(0) = z * blk.fc1_w.w + blk.fc1_b.w.row(0);
            const MatS gm = nn::gelu(fc1);
            const RowS fc2 = gm.row(0) * blk.fc2_w.w + blk.fc2_b.w.row(0);
            const RowS b_sum = z + fc2;
            h = ln_row(b_sum, blk.ln2_g, blk.ln2_b);
        }
        ++len_;
        return h;
    }

  private:
    RowS ln_row(const RowS& x, const nn::Param<S>& g, const nn::Param<S>& b) const {
        const S mean = x.mean();
        const S var = (x.array() - mean).square().sum() / static_cast<S>(x.size());
        const S inv = S(1) / std::sqrt(var + static_cast<S>(1e-5));
        return (((x.array() - mean) * inv) * g.w.row(0).array() + b.w.row(0).array()).matrix();
    }

    const Gpt<S>* model_;
    std::vector<MatS> k_, v_;
    Eigen::Index len_ = 0;
};

}  // namespace megcast
