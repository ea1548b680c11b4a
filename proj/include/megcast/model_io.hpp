#pragma once

#include "megcast/ar.hpp"
#include "megcast/checkpoint.hpp"
#include "megcast/gpt.hpp"
#include "megcast/wavenet.hpp"

namespace megcast {

template <typename S>
void pack_params(nn::ParamSet<S>& ps, Checkpoint& ck) {
    for (const auto* p : ps.params) ck.add_tensor(p->name, p->w.template cast<float>());
}

template <typename S>
void unpack_params(nn::ParamSet<S>& ps, const Checkpoint& ck) {
    for (auto* p : ps.params) {
        const MatrixXf& t = ck.tensor(p->name);
        if (t.rows() != p->w.rows() || t.cols() != p->w.cols())
            throw IoError("checkpoint tensor shape mismatch: " + p->name);
        p->w = t.cast<S>();
    }
}

// Optimiser moments, stored alongside the parameters so an interrupted run
// can resume exactly.
template <typename S>
void pack_adam(const nn::Adam<S>& opt, nn::ParamSet<S>& ps, Checkpoint& ck) {
    if (opt.m.size() != ps.params.size()) throw IoError("optimiser state does not match parameter set");
    ck.set("opt.t", std::to_string(opt.t));
    for (size_t i = 0; i < ps.params.size(); ++i) {
        ck.add_tensor("opt.m." + ps.params[i]->name, opt.m[i].template cast<float>());
        ck.add_tensor("opt.v." + ps.params[i]->name, opt.v[i].template cast<float>());
    }
}

template <typename S>
void unpack_adam(nn::Adam<S>& opt, nn::ParamSet<S>& ps, const Checkpoint& ck) {
    opt.t = ck.get_int("opt.t");
    opt.m.clear();
    opt.v.clear();
    for (const auto* p : ps.params) {
        opt.m.push_back(ck.tensor("opt.m." + p->name).template cast<S>());
        opt.v.push_back(ck.tensor("opt.v." + p->name).template cast<S>());
    }
}

inline void gpt_spec_to_meta(const GptSpec& sp, Checkpoint& ck) {
    ck.set("kind", sp.flat ? "flatgpt2" : "channelgpt2");
    ck.set("spec.n_layers", std::to_string(sp.n_layers));
    ck.set("spec.n_heads", std::to_string(sp.n_heads));
    ck.set("spec.n_embd", std::to_string(sp.n_embd));
    ck.set("spec.vocab", std::to_string(sp.vocab));
    ck.set("spec.min_ctx", std::to_string(sp.min_ctx));
    ck.set("spec.max_ctx", std::to_string(sp.max_ctx));
    ck.set("spec.n_channels", std::to_string(sp.n_channels));
    ck.set("spec.n_conditions", std::to_string(sp.n_conditions));
    ck.set("spec.n_subjects", std::to_string(sp.n_subjects));
    ck.set("spec.tie_weights", sp.tie_weights ? "1" : "0");
    ck.set("spec.use_channel_embedding", sp.use_channel_embedding ? "1" : "0");
    ck.set("spec.use_condition_embedding", sp.use_condition_embedding ? "1" : "0");
    ck.set("spec.init_seed", std::to_string(sp.init_seed));
}

inline GptSpec gpt_spec_from_meta(const Checkpoint& ck) {
    GptSpec sp;
    sp.flat = ck.get("kind") == "flatgpt2";
    sp.n_layers = static_cast<int>(ck.get_int("spec.n_layers"));
    sp.n_heads = static_cast<int>(ck.get_int("spec.n_heads"));
    sp.n_embd = static_cast<int>(ck.get_int("spec.n_embd"));
    sp.vocab = static_cast<int>(ck.get_int("spec.vocab"));
    sp.min_ctx = static_cast<int>(ck.get_int("spec.min_ctx"));
    sp.max_ctx = static_cast<int>(ck.get_int("spec.max_ctx"));
    sp.n_channels = static_cast<int>(ck.get_int("spec.n_channels"));
    sp.n_conditions = static_cast<int>(ck.get_int("spec.n_conditions"));
    sp.n_subjects = static_cast<int>(ck.get_int("spec.n_subjects"));
    sp.tie_weights = ck.get_int("spec.tie_weights") != 0;
    sp.use_channel_embedding = ck.get_int("spec.use_channel_embedding") != 0;
    sp.use_condition_embedding = ck.get_int("spec.use_condition_embedding") != 0;
    sp.init_seed = static_cast<uint64_t>(ck.get_int("spec.init_seed"));
    return sp;
}

inline void wavenet_spec_to_meta(const WavenetSpec& sp, Checkpoint& ck) {
    ck.set("kind", sp.mix ? "wavenet_mix" : "wavenet");
    ck.set("spec.stacks", std::to_string(sp.stacks));
    ck.set("spec.layers", std::to_string(sp.layers));
    ck.set("spec.kernel", std::to_string(sp.kernel));
    ck.set("spec.hidden", std::to_string(sp.hidden));
    ck.set("spec.skip", std::to_string(sp.skip));
    ck.set("spec.embed", std::to_string(sp.embed));
    ck.set("spec.vocab", std::to_string(sp.vocab));
    ck.set("spec.cond_embed", std::to_string(sp.cond_embed));
    ck.set("spec.subj_embed", std::to_string(sp.subj_embed));
    ck.set("spec.n_channels", std::to_string(sp.n_channels));
    ck.set("spec.n_conditions", std::to_string(sp.n_conditions));
    ck.set("spec.n_subjects", std::to_string(sp.n_subjects));
    ck.set("spec.use_channel_embedding", sp.use_channel_embedding ? "1" : "0");
    ck.set("spec.use_condition_embedding", sp.use_condition_embedding ? "1" : "0");
    ck.set("spec.init_seed", std::to_string(sp.init_seed));
}

inline WavenetSpec wavenet_spec_from_meta(const Checkpoint& ck) {
    WavenetSpec sp;
    sp.mix = ck.get("kind") == "wavenet_mix";
    sp.stacks = static_cast<int>(ck.get_int("spec.stacks"));
    sp.layers = static_cast<int>(ck.get_int("spec.layers"));
    sp.kernel = static_cast<int>(ck.get_int("spec.kernel"));
    sp.hidden = static_cast<int>(ck.get_int("spec.hidden"));
    sp.skip = static_cast<int>(ck.get_int("spec.skip"));
    sp.embed = static_cast<int>(ck.get_int("spec.embed"));
    sp.vocab = static_cast<int>(ck.get_int("spec.vocab"));
    sp.cond_embed = static_cast<int>(ck.get_int("spec.cond_embed"));
    sp.subj_embed = static_cast<int>(ck.get_int("spec.subj_embed"));
    sp.n_channels = static_cast<int>(ck.get_int("spec.n_channels"));
    sp.n_conditions = static_cast<int>(ck.get_int("spec.n_conditions"));
    sp.n_subjects = static_cast<int>(ck.get_int("spec.n_subjects"));
    sp.use_channel_embedding = ck.get_int("spec.use_channel_embedding") != 0;
    sp.use_condition_embedding = ck.get_int("spec.use_condition_embedding") != 0;
    sp.init_seed = static_cast<uint64_t>(ck.get_int("spec.init_seed"));
    return sp;
}

inline Checkpoint pack_gpt(Gpt<float>& model) {
    Checkpoint ck;
    gpt_spec_to_meta(model.spec, ck);
    auto ps = model.params();
    pack_params(ps, ck);
    return ck;
}

inline Gpt<float> unpack_gpt(const Checkpoint& ck) {
    Gpt<float> model(gpt_spec_from_meta(ck));
    auto ps = model.params();
    unpack_params(ps, ck);
    return model;
}

inline Checkpoint pack_wavenet(Wavenet<float>& model) {
    Checkpoint ck;
    wavenet_spec_to_meta(model.spec, ck);
    auto ps = model.params();
    pack_params(ps, ck);
    return ck;
}

inline Wavenet<float> unpack_wavenet(const Checkpoint& ck) {
    Wavenet<float> model(wavenet_spec_from_meta(ck));
    auto ps = model.params();
    unpack_params(ps, ck);
    return model;
}

inline Checkpoint pack_ar(const ArModel& model) {
    Checkpoint ck;
    ck.set("kind", "ar");
    ck.set("spec.order", std::to_string(model.order));
    ck.set("spec.trained_on_continuous", model.trained_on_continuous ? "1" : "0");
    ck.add_tensor("coef", model.coef.cast<float>());
    ck.add_tensor("intercept", MatrixXf(model.intercept.cast<float>()));
    return ck;
}

inline ArModel unpack_ar(const Checkpoint& ck) {
    ArModel m;
    m.order = static_cast<int>(ck.get_int("spec.order"));
    m.trained_on_continuous = ck.get_int("spec.trained_on_continuous") != 0;
    m.coef = ck.tensor("coef").cast<double>();
    m.intercept = ck.tensor("intercept").cast<double>().col(0);
    m.validate();
    return m;
}

}  // namespace megcast
