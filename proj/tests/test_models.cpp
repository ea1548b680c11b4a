#include <doctest.h>

#include "megcast/ar.hpp"
#include "megcast/gpt.hpp"
#include "megcast/wavenet.hpp"

using namespace megcast;

namespace {

GptSpec tiny_gpt_spec() {
    GptSpec sp;
    sp.n_layers = 2;
    sp.n_heads = 2;
    sp.n_embd = 16;
    sp.vocab = 12;
    sp.min_ctx = 4;
    sp.max_ctx = 32;
    sp.n_channels = 3;
    sp.n_conditions = 2;
    sp.n_subjects = 2;
    sp.init_seed = 7;
    return sp;
}

GptSequence random_gpt_seq(const GptSpec& sp, int T, uint64_t seed) {
    Rng rng(seed);
    GptSequence seq;
    seq.tokens.resize(T);
    seq.condition.resize(T);
    seq.subject.setConstant(T, 1);
    seq.targets.resize(T);
    for (int t = 0; t < T; ++t) {
        seq.tokens[t] = static_cast<int>(rng.randint(sp.vocab));
        seq.condition[t] = static_cast<int>(rng.randint(sp.n_conditions + 1));
        seq.targets[t] = t + 1 < T ? static_cast<int>(rng.randint(sp.vocab)) : -1;
    }
    seq.channel = 1;
    return seq;
}

WavenetSpec tiny_wavenet_spec() {
    WavenetSpec sp;
    sp.stacks = 1;
    sp.layers = 3;
    sp.hidden = 8;
    sp.skip = 10;
    sp.embed = 6;
    sp.vocab = 9;
    sp.cond_embed = 4;
    sp.subj_embed = 3;
    sp.n_channels = 3;
    sp.n_conditions = 2;
    sp.n_subjects = 2;
    sp.init_seed = 11;
    return sp;
}

WavenetBatchItem random_wavenet_item(const WavenetSpec& sp, int T, uint64_t seed) {
    Rng rng(seed);
    WavenetBatchItem item;
    item.tokens.resize(sp.n_channels, T);
    item.targets.setConstant(sp.n_channels, T, -1);
    item.condition.resize(T);
    item.subject.setConstant(T, 1);
    for (int c = 0; c < sp.n_channels; ++c)
        for (int t = 0; t < T; ++t) item.tokens(c, t) = static_cast<int>(rng.randint(sp.vocab));
    for (int t = 0; t < T; ++t) item.condition[t] = static_cast<int>(rng.randint(sp.n_conditions + 1));
    return item;
}

// Flat sequences for a 2-bucket toy model.
FlatSequence random_flat_seq(const GptSpec& sp, int n_steps, uint64_t seed) {
    Rng rng(seed);
    const int stride = sp.flat_stride();
    const int L = stride * n_steps;
    FlatSequence seq;
    seq.tokens.resize(L);
    seq.condition.resize(L);
    seq.subject.setConstant(L, 1);
    seq.targets.setConstant(L, -1);
    for (int i = 0; i < L; ++i) {
        seq.tokens[i] = i % stride == 0 ? sp.vocab : static_cast<int>(rng.randint(sp.vocab));
        seq.condition[i] = 1;
    }
    for (int i = 0; i + 1 < L; ++i)
        if ((i + 1) % stride != 0) seq.targets[i] = seq.tokens[i + 1];
    return seq;
}

}  // namespace

TEST_CASE("gpt spec validation") {
    GptSpec sp = tiny_gpt_spec();
    sp.n_embd = 15;
    CHECK_THROWS_AS(Gpt<float>{sp}, ConfigError);
    sp = tiny_gpt_spec();
    sp.max_ctx = sp.min_ctx - 1;
    CHECK_THROWS_AS(Gpt<float>{sp}, ConfigError);
    sp = tiny_gpt_spec();
    sp.flat = true;  // tied output is incompatible with per-bucket projections
    sp.tie_weights = true;
    CHECK_THROWS_AS(Gpt<float>{sp}, ConfigError);
}

TEST_CASE("gpt causality: logits before a perturbed position are unchanged") {
    const GptSpec sp = tiny_gpt_spec();
    Gpt<double> model(sp);
    const int T = 20;
    GptSequence seq = random_gpt_seq(sp, T, 100);
    const auto base = model.logits(seq);

    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const int p = 1 + static_cast<int>(rng.randint(T - 1));
        GptSequence mod = seq;
        mod.tokens[p] = (mod.tokens[p] + 1 + static_cast<int>(rng.randint(sp.vocab - 1))) % sp.vocab;
        const auto out = model.logits(mod);
        CHECK(out.topRows(p) == base.topRows(p));
        CHECK(out.row(p) != base.row(p));
    }
}

TEST_CASE("gpt sequence longer than positional table is rejected") {
    const GptSpec sp = tiny_gpt_spec();
    Gpt<float> model(sp);
    CHECK_THROWS_AS(model.logits(random_gpt_seq(sp, sp.max_ctx + 1, 3)), std::invalid_argument);
    CHECK_NOTHROW(model.logits(random_gpt_seq(sp, sp.max_ctx, 3)));
}

TEST_CASE("gpt softmax rows are valid distributions") {
    const GptSpec sp = tiny_gpt_spec();
    Gpt<double> model(sp);
    const auto lg = model.logits(random_gpt_seq(sp, 12, 42));
    for (Eigen::Index t = 0; t < lg.rows(); ++t) {
        const VectorXd p = nn::softmax(VectorXd(lg.row(t).transpose()));
        CHECK(p.minCoeff() >= 0.0);
        CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("gpt input row oracle: condition zero contributes nothing") {
    const GptSpec sp = tiny_gpt_spec();
    Gpt<double> model(sp);
    const auto row = model.input_row(3, 5, 0, 2, 1);
    const Eigen::RowVectorXd expect =
        model.wte.w.row(3) + model.wpe.w.row(5) + model.wo.w.row(1) + model.wc.w.row(1);
    CHECK(row == expect);
    // nonzero condition adds the matching table row (up to addition order)
    const auto row2 = model.input_row(3, 5, 2, 2, 1);
    CHECK((row2 - row - model.wy.w.row(1)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK_THROWS_AS(model.input_row(3, 5, sp.n_conditions + 1, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(model.input_row(3, 5, 0, 0, 1), std::invalid_argument);
}

TEST_CASE("gpt channel embeddings separate otherwise identical inputs") {
    const GptSpec sp = tiny_gpt_spec();
    Gpt<double> model(sp);
    GptSequence a = random_gpt_seq(sp, 10, 9);
    GptSequence b = a;
    a.channel = 0;
    b.channel = 2;
    CHECK(model.logits(a) != model.logits(b));

    GptSpec ablated = sp;
    ablated.use_channel_embedding = false;
    Gpt<double> m2(ablated);
    CHECK(m2.logits(a) == m2.logits(b));
}

TEST_CASE("gpt weight tying shares storage with the embedding table") {
    const GptSpec sp = tiny_gpt_spec();
    Gpt<double> tied(sp);
    GptSequence seq = random_gpt_seq(sp, 6, 21);
    const auto base = tied.logits(seq);
    // Perturb the embedding row of a token absent from the input: only the
    // output projection can carry the change into the logits.
    int absent = 0;
    while ((seq.tokens.array() == absent).any()) ++absent;
    tied.wte.w.row(absent).array() += 0.5;
    const auto out = tied.logits(seq);
    CHECK(out.col(absent) != base.col(absent));
    for (int q = 0; q < sp.vocab; ++q)
        if (q != absent) CHECK(out.col(q) == base.col(q));

    GptSpec untied_spec = sp;
    untied_spec.tie_weights = false;
    Gpt<double> untied(untied_spec);
    CHECK(untied.params().count() == tied.params().count() + int64_t(sp.n_embd) * sp.vocab);
}

TEST_CASE("gpt parameter count matches the spec formula") {
    GptSpec sp;  // defaults: 12 layers, 12 heads, E=96
    sp.vocab = 256;
    sp.n_channels = 5;
    sp.n_conditions = 4;
    sp.n_subjects = 2;
    Gpt<float> model(sp);
    const int64_t E = sp.n_embd;
    const int64_t per_block = E * 3 * E + 3 * E + E * E + E + 2 * E + 2 * E + E * 4 * E + 4 * E + 4 * E * E + E;
    const int64_t expect = int64_t(sp.vocab) * E + int64_t(sp.max_ctx) * E + int64_t(sp.n_conditions) * E +
                           int64_t(sp.n_subjects) * E + int64_t(sp.n_channels) * E + sp.n_layers * per_block;
    CHECK(model.params().count() == expect);
    CHECK(expect == 1392288);
}

TEST_CASE("gpt incremental decoder matches the full forward pass") {
    const GptSpec sp = tiny_gpt_spec();
    Gpt<double> model(sp);
    const GptSequence seq = random_gpt_seq(sp, 14, 77);
    const auto full = model.logits(seq);

    GptDecoder<double> dec(model);
    for (int t = 0; t < seq.tokens.size(); ++t) {
        const auto h = dec.step(model.input_row(seq.tokens[t], t, seq.condition[t], seq.subject[t], seq.channel));
        Eigen::RowVectorXd lg = h * model.wte.w.transpose();
        CHECK((lg - full.row(t)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("wavenet receptive field arithmetic") {
    WavenetSpec sp;
    CHECK(sp.receptive_field() == 255);
    sp.stacks = 1;
    sp.layers = 3;
    CHECK(sp.receptive_field() == 8);
}

TEST_CASE("wavenet causality and empirical receptive-field horizon") {
    // Default dilation structure (2 stacks x 7 layers) with narrow widths:
    // the perturbation horizon must equal the arithmetic receptive field.
    WavenetSpec sp;
    sp.hidden = 8;
    sp.skip = 8;
    sp.embed = 4;
    sp.vocab = 5;
    sp.cond_embed = 2;
    sp.subj_embed = 2;
    sp.n_channels = 1;
    sp.n_conditions = 1;
    sp.init_seed = 3;
    REQUIRE(sp.receptive_field() == 255);
    Wavenet<double> model(sp);

    const int T = 257;
    WavenetBatchItem item = random_wavenet_item(sp, T, 1234);
    const auto base = model.logits(item.tokens, item.condition, item.subject);

    MatrixXi perturbed = item.tokens;
    perturbed(0, 0) = (perturbed(0, 0) + 1) % sp.vocab;
    const auto out = model.logits(perturbed, item.condition, item.subject);
    // position 254 still sees position 0; position 255 no longer does
    CHECK(out[0].row(254) != base[0].row(254));
    CHECK(out[0].bottomRows(2) == base[0].bottomRows(2));

    // no position before a perturbation is ever affected
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const int p = 1 + static_cast<int>(rng.randint(T - 1));
        MatrixXi mod = item.tokens;
        mod(0, p) = (mod(0, p) + 1) % sp.vocab;
        const auto lg = model.logits(mod, item.condition, item.subject);
        CHECK(lg[0].topRows(p) == base[0].topRows(p));
    }
}

TEST_CASE("wavenet all-zero condition track contributes a zero vector") {
    const WavenetSpec sp = tiny_wavenet_spec();
    Wavenet<double> model(sp);
    WavenetBatchItem item = random_wavenet_item(sp, 12, 5);
    item.condition.setZero();
    const auto base = model.logits(item.tokens, item.condition, item.subject);

    WavenetSpec ablated = sp;
    ablated.use_condition_embedding = false;
    Wavenet<double> m2(ablated);
    auto src = model.params();
    auto dst = m2.params();
    REQUIRE(src.params.size() == dst.params.size());
    for (size_t i = 0; i < src.params.size(); ++i) dst.params[i]->w = src.params[i]->w;
    const auto out = m2.logits(item.tokens, item.condition, item.subject);
    for (size_t c = 0; c < out.size(); ++c) CHECK(out[c] == base[c]);
}

TEST_CASE("wavenet rejects unknown condition and subject indices") {
    const WavenetSpec sp = tiny_wavenet_spec();
    Wavenet<float> model(sp);
    WavenetBatchItem item = random_wavenet_item(sp, 6, 8);
    item.condition[2] = sp.n_conditions + 1;
    CHECK_THROWS_AS(model.logits(item.tokens, item.condition, item.subject), std::invalid_argument);
    item.condition[2] = 0;
    item.subject[3] = 0;
    CHECK_THROWS_AS(model.logits(item.tokens, item.condition, item.subject), std::invalid_argument);
}

TEST_CASE("wavenet mix variant with identity mixing reproduces the plain model") {
    WavenetSpec plain = tiny_wavenet_spec();
    WavenetSpec mixed = plain;
    mixed.mix = true;
    Wavenet<double> a(plain);
    Wavenet<double> b(mixed);
    auto pa = a.params();
    auto pb = b.params();
    REQUIRE(pb.params.size() == pa.params.size() + 1);
    size_t j = 0;
    for (size_t i = 0; i < pb.params.size(); ++i) {
        if (pb.params[i]->name == "w_m") {
            pb.params[i]->w = MatrixXd::Identity(plain.n_channels, plain.n_channels);
            continue;
        }
        REQUIRE(pb.params[i]->name == pa.params[j]->name);
        pb.params[i]->w = pa.params[j]->w;
        ++j;
    }
    const WavenetBatchItem item = random_wavenet_item(plain, 10, 2);
    const auto la = a.logits(item.tokens, item.condition, item.subject);
    const auto lb = b.logits(item.tokens, item.condition, item.subject);
    for (size_t c = 0; c < la.size(); ++c) CHECK(la[c] == lb[c]);
}

TEST_CASE("wavenet parameter count matches the spec formula") {
    WavenetSpec sp = WavenetSpec::defaults(false);
    sp.n_channels = 5;
    sp.n_conditions = 4;
    sp.n_subjects = 2;
    Wavenet<float> model(sp);
    const int64_t E = sp.embed, H = sp.hidden, K = sp.skip, Q = sp.vocab;
    const int64_t Ec = sp.cond_embed + sp.subj_embed;
    const int64_t per_layer = 4 * H * H + 2 * H + Ec * H + H * H + H + H * K + K;
    const int64_t expect = int64_t(sp.n_channels) * Q * E + E * H + H + int64_t(sp.n_conditions) * sp.cond_embed +
                           int64_t(sp.n_subjects) * sp.subj_embed + sp.n_layers() * per_layer + K * K + K + K * Q + Q;
    CHECK(model.params().count() == expect);
    CHECK(expect == 9836664);

    WavenetSpec mx = WavenetSpec::defaults(true);
    mx.n_channels = 5;
    mx.n_conditions = 4;
    mx.n_subjects = 2;
    Wavenet<float> mixm(mx);
    const int64_t H2 = mx.hidden, K2 = mx.skip;
    const int64_t per_layer2 = 4 * H2 * H2 + 2 * H2 + Ec * H2 + H2 * H2 + H2 + H2 * K2 + K2;
    const int64_t expect2 = int64_t(mx.n_channels) * Q * E + E * H2 + H2 + int64_t(mx.n_conditions) * mx.cond_embed +
                            int64_t(mx.n_subjects) * mx.subj_embed + mx.n_layers() * per_layer2 +
                            int64_t(mx.n_channels) * mx.n_channels + K2 * K2 + K2 + K2 * Q + Q;
    CHECK(mixm.params().count() == expect2);
}

TEST_CASE("flat model: restricted softmax, separator semantics, causality") {
    GptSpec sp;
    sp.flat = true;
    sp.tie_weights = false;
    sp.n_layers = 2;
    sp.n_heads = 2;
    sp.n_embd = 12;
    sp.vocab = 8;    // per-bucket vocabulary V
    sp.min_ctx = 2;
    sp.max_ctx = 6;  // timesteps
    sp.n_channels = 2;  // buckets
    sp.n_conditions = 2;
    sp.n_subjects = 1;
    sp.init_seed = 13;
    Gpt<double> model(sp);

    const FlatSequence seq = random_flat_seq(sp, 4, 31);
    std::vector<bool> mask;
    const auto lg = model.flat_logits(seq, &mask);
    REQUIRE(lg.rows() == seq.tokens.size());
    CHECK(lg.cols() == sp.vocab);
    const int stride = sp.flat_stride();
    for (Eigen::Index i = 0; i < lg.rows(); ++i) {
        const bool predicts_sep = (i + 1) % stride == 0;
        CHECK(mask[size_t(i)] == !predicts_sep);
        if (predicts_sep) {
            CHECK(lg.row(i).cwiseAbs().maxCoeff() == 0.0);  // excluded position
        } else {
            const VectorXd p = nn::softmax(VectorXd(lg.row(i).transpose()));
            CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    // at a separator input the prediction target is bucket 1 of the next step
    CHECK(mask[0]);
    CHECK(model.bucket_at(1) == 0);

    // malformed separator layout
    FlatSequence bad = seq;
    bad.tokens[stride] = 0;
    CHECK_THROWS_AS(model.flat_logits(bad), std::invalid_argument);

    // causality over the flat stream
    FlatSequence mod = seq;
    const int p = 2 * stride + 1;
    mod.tokens[p] = (mod.tokens[p] + 3) % sp.vocab;
    const auto lg2 = model.flat_logits(mod);
    CHECK(lg2.topRows(p) == lg.topRows(p));

    // parameter count formula
    const int64_t E = sp.n_embd, V = sp.vocab, B = sp.n_channels;
    const int64_t per_block = E * 3 * E + 3 * E + E * E + E + 4 * E + E * 4 * E + 4 * E + 4 * E * E + E;
    const int64_t expect = B * V * E + E + int64_t(sp.pos_rows()) * E + int64_t(sp.max_ctx) * E +
                           int64_t(sp.n_conditions) * E + int64_t(sp.n_subjects) * E + B * E + sp.n_layers * per_block +
                           B * E * V;
    CHECK(model.params().count() == expect);
}

TEST_CASE("flat decoder matches flat_logits") {
    GptSpec sp;
    sp.flat = true;
    sp.tie_weights = false;
    sp.n_layers = 1;
    sp.n_heads = 2;
    sp.n_embd = 10;
    sp.vocab = 6;
    sp.min_ctx = 2;
    sp.max_ctx = 5;
    sp.n_channels = 3;
    sp.n_conditions = 1;
    sp.n_subjects = 1;
    sp.init_seed = 17;
    Gpt<double> model(sp);
    const FlatSequence seq = random_flat_seq(sp, 3, 19);
    std::vector<bool> mask;
    const auto full = model.flat_logits(seq, &mask);

    GptDecoder<double> dec(model);
    for (Eigen::Index i = 0; i < seq.tokens.size(); ++i) {
        const auto h = dec.step(model.flat_input_row(seq.tokens[i], i, seq.condition[i], seq.subject[i]));
        if (!mask[size_t(i)]) continue;
        const int nb = model.bucket_at(i + 1);
        Eigen::RowVectorXd lg = h * model.wout_b[size_t(nb)].w;
        CHECK((lg - full.row(i)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("ar forward: zero coefficients predict zero, short context rejected") {
    ArModel m;
    m.order = 4;
    m.coef = MatrixXd::Zero(3, 4);
    m.intercept = VectorXd::Zero(3);
    MatrixXd ctx = MatrixXd::Random(3, 4);
    CHECK(ar_forward(m, ctx) == VectorXd::Zero(3));
    CHECK_THROWS_AS(ar_forward(m, MatrixXd::Random(3, 3)), std::invalid_argument);
    CHECK_THROWS_AS(ar_forward(m, MatrixXd::Random(2, 4)), std::invalid_argument);

    // hand oracle: prediction is the dot product plus intercept
    m.coef.row(1) << 0.5, -0.25, 0.0, 1.0;
    m.intercept[1] = 0.125;
    ctx.row(1) << 1.0, 2.0, 3.0, 4.0;
    CHECK(ar_forward(m, ctx)[1] == doctest::Approx(0.5 - 0.5 + 0.0 + 4.0 + 0.125).epsilon(1e-12));
}
