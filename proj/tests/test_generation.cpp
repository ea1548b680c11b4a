#include <doctest.h>

#include <cmath>
#include <set>

#include "megcast/generate.hpp"
#include "megcast/signal.hpp"

using namespace megcast;

namespace {

GptSpec small_gpt_spec() {
    GptSpec sp;
    sp.n_layers = 1;
    sp.n_heads = 2;
    sp.n_embd = 8;
    sp.vocab = 12;
    sp.min_ctx = 4;
    sp.max_ctx = 16;
    sp.n_channels = 2;
    sp.n_conditions = 2;
    sp.n_subjects = 2;
    sp.init_seed = 21;
    return sp;
}

WavenetSpec small_wavenet_spec(bool mix) {
    WavenetSpec sp;
    sp.stacks = 1;
    sp.layers = 3;
    sp.hidden = 6;
    sp.skip = 7;
    sp.embed = 4;
    sp.vocab = 12;
    sp.cond_embed = 3;
    sp.subj_embed = 3;
    sp.n_channels = 2;
    sp.n_conditions = 2;
    sp.n_subjects = 2;
    sp.mix = mix;
    sp.init_seed = 22;
    return sp;
}

MuLawCodec small_codec(int bins = 12) {
    MuLawCodec codec;
    codec.n_bins = bins;
    codec.mu = bins - 1;
    return codec;
}

}  // namespace

TEST_CASE("top-p filter hand oracle") {
    VectorXd probs(4);
    probs << 0.5, 0.3, 0.15, 0.05;
    const VectorXd out = top_p_filter(probs, 0.8);
    CHECK(out[0] == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(out[2] == 0.0);
    CHECK(out[3] == 0.0);
    CHECK(out.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("top-p edge cases") {
    VectorXd probs(4);
    probs << 0.25, 0.25, 0.25, 0.25;
    CHECK(top_p_filter(probs, 1.0) == probs);  // p = 1 identity

    VectorXd onehot = VectorXd::Zero(5);
    onehot[3] = 1.0;
    CHECK(top_p_filter(onehot, 0.3) == onehot);
    CHECK(top_p_filter(onehot, 1.0) == onehot);

    // p -> 0+ is greedy argmax with ties to the lowest index
    VectorXd tied(4);
    tied << 0.3, 0.3, 0.3, 0.1;
    const VectorXd greedy = top_p_filter(tied, 1e-12);
    CHECK(greedy[0] == 1.0);
    CHECK(greedy.tail(3).cwiseAbs().maxCoeff() == 0.0);

    // boundary is inclusive: cumulative mass exactly p keeps the prefix
    VectorXd half(2);
    half << 0.5, 0.5;
    const VectorXd kept = top_p_filter(half, 0.5);
    CHECK(kept[0] == 1.0);
    CHECK(kept[1] == 0.0);

    VectorXd bad(3);
    bad << 0.5, 0.3, 0.1;  // sums to 0.9
    CHECK_THROWS_AS(top_p_filter(bad, 0.8), std::invalid_argument);
    CHECK_THROWS_AS(top_p_filter(probs, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(top_p_filter(probs, 1.5), std::invalid_argument);
}

TEST_CASE("sampled tokens stay inside the top-p support") {
    VectorXd probs(6);
    probs << 0.4, 0.25, 0.2, 0.1, 0.04, 0.01;
    const VectorXd kept = top_p_filter(probs, 0.8);
    std::set<int> support;
    for (Eigen::Index i = 0; i < kept.size(); ++i)
        if (kept[i] > 0) support.insert(static_cast<int>(i));
    REQUIRE(support == std::set<int>{0, 1, 2});

    Rng rng(77);
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(6);
    for (int k = 0; k < 10000; ++k) {
        const int tok = sample_top_p(probs, 0.8, rng);
        REQUIRE(support.count(tok) == 1);
        counts[tok] += 1;
    }
    // empirical frequencies track the renormalised distribution
    for (const int i : support)
        CHECK(std::abs(counts[i] / 10000.0 - kept[i]) < 0.02);
}

TEST_CASE("condition schedule cycles labels with rest gaps") {
    ConditionSchedule s;
    s.n_conditions = 3;
    s.trial_s = 0.2;
    s.iti_s = 0.1;
    const VectorXi track = schedule_track(s, 10.0, 28);
    // 2 samples on, 1 off, labels cycling 1,2,3,1,...
    VectorXi expect(28);
    expect << 1, 1, 0, 2, 2, 0, 3, 3, 0, 1, 1, 0, 2, 2, 0, 3, 3, 0, 1, 1, 0, 2, 2, 0, 3, 3, 0, 1;
    CHECK(track == expect);

    GenerationPlan plan;
    plan.condition = VectorXi::Ones(4);
    plan.condition[1] = 2;
    const VectorXi tiled = plan_condition_track(plan, 10.0, 10);
    for (Eigen::Index t = 0; t < 10; ++t) CHECK(tiled[t] == plan.condition[t % 4]);
}

TEST_CASE("gpt generation invariants") {
    const Gpt<float> model(small_gpt_spec());
    const MuLawCodec codec = small_codec();
    GenerationPlan plan;
    plan.duration_s = 1.2;
    plan.schedule.n_conditions = 2;
    plan.schedule.trial_s = 0.1;
    plan.schedule.iti_s = 0.1;
    plan.seed = 4;
    const double fs = 50.0;

    const Recording rec = generate(model, plan, codec, fs);
    CHECK(rec.channels() == 2);
    CHECK(rec.samples() == 60);
    CHECK(rec.fs == fs);
    CHECK(rec.condition_track.size() == 60);
    CHECK(rec.subject_track.size() == 60);
    CHECK((rec.data.array().abs() < 1.0).all());

    // deterministic per seed
    const Recording again = generate(model, plan, codec, fs);
    CHECK(rec.data == again.data);

    // causal replay: longer plan agrees on the common prefix exactly
    GenerationPlan longer = plan;
    longer.duration_s = 2.0;
    const Recording ext = generate(model, longer, codec, fs);
    CHECK(ext.data.leftCols(60) == rec.data);

    GenerationPlan bad = plan;
    bad.subject = 9;
    CHECK_THROWS_AS(generate(model, bad, codec, fs), GenError);
}

TEST_CASE("gpt generation survives a re-primed decoder window") {
    GptSpec sp = small_gpt_spec();
    sp.max_ctx = 8;  // tiny window forces several re-primes
    const Gpt<float> model(sp);
    GenerationPlan plan;
    plan.duration_s = 1.0;
    plan.seed = 5;
    const Recording rec = generate(model, plan, small_codec(), 40.0);
    CHECK(rec.samples() == 40);

    GenerationPlan longer = plan;
    longer.duration_s = 1.5;
    const Recording ext = generate(model, longer, small_codec(), 40.0);
    CHECK(ext.data.leftCols(40) == rec.data);
}

TEST_CASE("wavenet stepper matches the batch forward pass") {
    for (const bool mix : {false, true}) {
        const Wavenet<double> model(small_wavenet_spec(mix));
        const auto& sp = model.spec;
        const int T = 20;
        Rng rng(31);
        MatrixXi toks(sp.n_channels, T);
        VectorXi cond(T), subj(T);
        for (int t = 0; t < T; ++t) {
            for (int c = 0; c < sp.n_channels; ++c) toks(c, t) = static_cast<int>(rng.randint(sp.vocab));
            cond[t] = static_cast<int>(rng.randint(sp.n_conditions + 1));
            subj[t] = 1 + static_cast<int>(rng.randint(sp.n_subjects));
        }
        const auto full = model.logits(toks, cond, subj);

        detail::WavenetStepper<double> stepper(model);
        for (int t = 0; t < T; ++t) {
            const auto step = stepper.step(toks.col(t), cond[t], subj[t]);
            for (int c = 0; c < sp.n_channels; ++c) {
                const double err = (step.row(c) - full[static_cast<size_t>(c)].row(t)).cwiseAbs().maxCoeff();
                REQUIRE(err < 1e-10);
            }
        }
    }
}

TEST_CASE("wavenet generation invariants") {
    const Wavenet<float> model(small_wavenet_spec(true));
    const MuLawCodec codec = small_codec();
    GenerationPlan plan;
    plan.duration_s = 1.0;
    plan.seed = 6;
    plan.schedule.n_conditions = 2;
    const double fs = 30.0;

    const Recording rec = generate(model, plan, codec, fs);
    CHECK(rec.channels() == 2);
    CHECK(rec.samples() == 30);
    CHECK((rec.data.array().abs() < 1.0).all());

    GenerationPlan longer = plan;
    longer.duration_s = 1.4;
    const Recording ext = generate(model, longer, codec, fs);
    CHECK(ext.data.leftCols(30) == rec.data);

    GenerationPlan bad = plan;
    bad.subject = 3;
    CHECK_THROWS_AS(generate(model, bad, codec, fs), GenError);
}

TEST_CASE("flat generation produces decodable timesteps") {
    // quantiser over 4 channels in 2 buckets
    Rng rng(41);
    MatrixXd data(4, 400);
    for (Eigen::Index c = 0; c < 4; ++c)
        for (Eigen::Index t = 0; t < 400; ++t) data(c, t) = 0.3 * rng.gauss() + (c < 2 ? 0.2 : -0.2);
    const VectorQuantizer vq = fit_vector_quantizer(data, 2, 1, 3, 7);

    GptSpec sp;
    sp.flat = true;
    sp.tie_weights = false;
    sp.n_layers = 1;
    sp.n_heads = 2;
    sp.n_embd = 8;
    sp.vocab = static_cast<int>(vq.vocab_size());
    sp.min_ctx = 2;
    sp.max_ctx = 6;
    sp.n_channels = 2;
    sp.n_conditions = 1;
    sp.n_subjects = 1;
    sp.init_seed = 42;
    const Gpt<float> model(sp);

    GenerationPlan plan;
    plan.duration_s = 1.0;
    plan.seed = 7;
    const double fs = 20.0;
    const Recording rec = generate_flat(model, plan, vq, fs);
    CHECK(rec.channels() == 4);
    CHECK(rec.samples() == 20);
    CHECK(rec.data.allFinite());

    GenerationPlan longer = plan;
    longer.duration_s = 1.5;
    const Recording ext = generate_flat(model, longer, vq, fs);
    CHECK(ext.data.leftCols(20) == rec.data);

    const Recording again = generate_flat(model, plan, vq, fs);
    CHECK(again.data == rec.data);
}

TEST_CASE("ar generation with zero coefficients is white noise") {
    ArModel m;
    m.order = 4;
    m.coef = MatrixXd::Zero(2, 4);
    m.intercept = VectorXd::Zero(2);
    const double fs = 100.0;
    const Recording rec = generate_ar(m, 200.0, fs, 9);
    REQUIRE(rec.samples() == 20000);

    // same seed reproduces; different seed does not
    const Recording same = generate_ar(m, 1.0, fs, 9);
    CHECK(generate_ar(m, 1.0, fs, 9).data == same.data);
    CHECK(generate_ar(m, 1.0, fs, 10).data != same.data);

    // flat PSD within 3 dB of the white-noise level across 1..45 Hz
    const PsdEstimate psd = welch_psd(rec, 512);
    for (Eigen::Index c = 0; c < 2; ++c) {
        std::vector<double> band;
        for (Eigen::Index f = 0; f < psd.freqs.size(); ++f)
            if (psd.freqs[f] >= 1.0 && psd.freqs[f] <= 45.0) band.push_back(psd.power(c, f));
        const double expect = 2.0 / fs;  // one-sided density of unit-variance noise
        for (const double v : band) CHECK(std::abs(10.0 * std::log10(v / expect)) < 3.0);
    }
}

TEST_CASE("ar generation reproduces a resonant peak") {
    // poles at r * exp(+-i 2 pi f0 / fs)
    const double fs = 100.0, f0 = 20.0, r = 0.98;
    const double w = 2.0 * M_PI * f0 / fs;
    ArModel m;
    m.order = 2;
    m.coef.resize(1, 2);
    m.coef(0, 1) = 2.0 * r * std::cos(w);  // lag 1
    m.coef(0, 0) = -r * r;                 // lag 2
    m.intercept = VectorXd::Zero(1);

    const Recording rec = generate_ar(m, 400.0, fs, 12);
    const PsdEstimate psd = welch_psd(rec, 512);
    Eigen::Index peak = 0;
    psd.power.row(0).maxCoeff(&peak);
    const double bin = psd.freqs[1] - psd.freqs[0];
    CHECK(std::abs(psd.freqs[peak] - f0) <= bin + 1e-9);
}

TEST_CASE("ar generation aborts on divergence") {
    ArModel m;
    m.order = 1;
    m.coef = MatrixXd::Constant(1, 1, 1.5);  // explosive pole
    m.intercept = VectorXd::Ones(1);
    CHECK_THROWS_AS(generate_ar(m, 10.0, 100.0, 1), GenError);
}

TEST_CASE("generation plan validation") {
    GenerationPlan plan;
    plan.duration_s = 0.0;
    CHECK_THROWS_AS(plan.validate(), std::invalid_argument);
    plan.duration_s = 1.0;
    plan.top_p = 0.0;
    CHECK_THROWS_AS(plan.validate(), std::invalid_argument);
    plan.top_p = 1.2;
    CHECK_THROWS_AS(plan.validate(), std::invalid_argument);
    plan.top_p = 0.8;
    plan.validate();
}
