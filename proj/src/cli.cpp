#include "megcast/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "megcast/artifacts.hpp"
#include "megcast/bayes.hpp"
#include "megcast/classifier.hpp"
#include "megcast/compare.hpp"
#include "megcast/config.hpp"
#include "megcast/evoked.hpp"
#include "megcast/generate.hpp"
#include "megcast/hmm.hpp"
#include "megcast/metrics.hpp"
#include "megcast/model_io.hpp"
#include "megcast/signal.hpp"
#include "megcast/synth.hpp"
#include "megcast/train.hpp"

namespace megcast {
namespace {

namespace fs = std::filesystem;

struct Invocation {
    RunConfig cfg;
    std::string out;
    uint64_t seed = 1;
    bool force = false;
};

// nullopt means --help was printed and the command is done.
std::optional<Invocation> parse_invocation(const std::string& command, const std::vector<std::string>& args,
                                           const ConfigSchema& schema) {
    CLI::App app{std::string("megcast ") + command};
    std::string config_path, out;
    long long seed = 0;
    bool force = false;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "config file")->required();
    auto* seed_opt = app.add_option("--seed", seed, "override run.seed");
    auto* out_opt = app.add_option("--out", out, "override run.out");
    app.add_flag("--force", force, "overwrite an existing artifact directory");
    app.add_option("overrides", overrides, "section.key=value overrides");

    std::vector<const char*> argv;
    argv.push_back("megcast");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return std::nullopt;
    } catch (const CLI::ParseError& e) {
        throw ConfigError(e.what());
    }

    Invocation inv;
    inv.cfg = RunConfig::load_file(config_path);
    for (const auto& ov : overrides) inv.cfg.set_dotted(ov);
    if (seed_opt->count()) inv.cfg.set("run", "seed", std::to_string(seed));
    if (out_opt->count()) inv.cfg.set("run", "out", out);

    ConfigSchema full = schema;
    full["run"].insert("seed");
    full["run"].insert("out");
    check_known_keys(inv.cfg, full);

    if (!inv.cfg.has("run", "out")) throw ConfigError("run.out is required (or pass --out)");
    inv.out = inv.cfg.get("run", "out");
    inv.seed = static_cast<uint64_t>(inv.cfg.get_int("run", "seed", 1));
    inv.cfg.set("run", "seed", std::to_string(inv.seed));
    inv.force = force;
    return inv;
}

void prepare_out(const Invocation& inv) {
    const fs::path p(inv.out);
    if (fs::exists(p)) {
        if (!inv.force) throw IoError("artifact exists, pass --force to overwrite: " + inv.out);
        fs::remove_all(p);
    }
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create output directory: " + inv.out);
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << content;
    if (!f) throw IoError("cannot write " + path.string());
}

// Resolved config + tool version, written next to every command's outputs.
void stamp(const Invocation& inv, const std::string& command) {
    write_text_file(fs::path(inv.out) / (command + ".config"), inv.cfg.serialise());
    write_text_file(fs::path(inv.out) / "VERSION", std::string(kToolVersion) + "\n");
}

std::string join_names(const std::vector<std::string>& names) {
    std::string s;
    for (size_t i = 0; i < names.size(); ++i) {
        if (i) s += ',';
        s += names[i];
    }
    return s;
}

std::vector<std::string> split_names(const std::string& joined) {
    std::vector<std::string> names;
    std::string cur;
    for (const char ch : joined) {
        if (ch == ',') {
            names.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) names.push_back(cur);
    return names;
}

// "freq:amp,freq:amp" e.g. "10:1.0,19:0.6".
std::vector<OscillationPeak> parse_peaks(const std::string& text) {
    std::vector<OscillationPeak> peaks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const size_t colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("bad data.peaks entry: '" + item + "'");
        OscillationPeak p;
        try {
            p.freq_hz = std::stod(item.substr(0, colon));
            p.amplitude = std::stod(item.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("bad data.peaks entry: '" + item + "'");
        }
        peaks.push_back(p);
    }
    if (peaks.empty()) throw ConfigError("data.peaks is empty");
    return peaks;
}

Recording slice_recording(const Recording& rec, Eigen::Index lo, Eigen::Index n) {
    Recording out;
    out.data = rec.data.middleCols(lo, n);
    out.fs = rec.fs;
    out.channel_names = rec.channel_names;
    out.condition_track = rec.condition_track.segment(lo, n);
    out.subject_track = rec.subject_track.segment(lo, n);
    return out;
}

int cmd_synth(const std::vector<std::string>& args) {
    const ConfigSchema schema = {
        {"data",
         {"channels", "fs", "duration_s", "trials_per_condition", "conditions", "subjects", "peaks",
          "noise_exponent", "noise_scale", "trial_s", "iti_s", "subject_effect_scale", "lead_in_s"}},
    };
    const auto maybe = parse_invocation("synth", args, schema);
    if (!maybe) return 0;
    const Invocation& inv = *maybe;
    const RunConfig& cfg = inv.cfg;

    SyntheticSpec spec;
    spec.n_channels = static_cast<int>(cfg.get_int("data", "channels", spec.n_channels));
    spec.fs = cfg.get_double("data", "fs", spec.fs);
    spec.n_conditions = static_cast<int>(cfg.get_int("data", "conditions", spec.n_conditions));
    spec.n_subjects = static_cast<int>(cfg.get_int("data", "subjects", spec.n_subjects));
    spec.noise_exponent = cfg.get_double("data", "noise_exponent", spec.noise_exponent);
    spec.noise_scale = cfg.get_double("data", "noise_scale", spec.noise_scale);
    spec.schedule.duration_s = cfg.get_double("data", "trial_s", spec.schedule.duration_s);
    spec.schedule.iti_s = cfg.get_double("data", "iti_s", spec.schedule.iti_s);
    spec.subject_effect_scale = cfg.get_double("data", "subject_effect_scale", spec.subject_effect_scale);
    spec.lead_in_s = cfg.get_double("data", "lead_in_s", spec.lead_in_s);
    if (cfg.has("data", "peaks")) spec.peaks = parse_peaks(cfg.get("data", "peaks"));
    spec.seed = inv.seed;
    if (cfg.has("data", "trials_per_condition"))
        spec.duration_s = spec.duration_for(static_cast<int>(cfg.get_int("data", "trials_per_condition")));
    else
        spec.duration_s = cfg.get_double("data", "duration_s", spec.duration_s);

    const Recording rec = synthesize(spec);
    prepare_out(inv);
    save_recording(rec, (fs::path(inv.out) / "recording").string());
    stamp(inv, "synth");
    return 0;
}

int cmd_tokenize(const std::vector<std::string>& args) {
    const ConfigSchema schema = {
        {"tokenize",
         {"input", "codec", "n_bins", "mu", "clip", "val_trials", "test_trials", "n_buckets", "rq_stages",
          "rq_bits"}},
    };
    const auto maybe = parse_invocation("tokenize", args, schema);
    if (!maybe) return 0;
    const Invocation& inv = *maybe;
    const RunConfig& cfg = inv.cfg;

    const Recording rec = load_recording(cfg.get("tokenize", "input"));
    const std::string kind = cfg.get_or("tokenize", "codec", "mulaw");
    const double clip = cfg.get_double("tokenize", "clip", 4.0);
    const int val_trials = static_cast<int>(cfg.get_int("tokenize", "val_trials", 0));
    const int test_trials = static_cast<int>(cfg.get_int("tokenize", "test_trials", 0));

    // Normalisation statistics come from the training portion only; the held
    // out prefix defined by val/test trial counts stays unseen.
    Eigen::Index train_start = 0;
    if (val_trials > 0 || test_trials > 0)
        train_start = split_boundaries(rec.condition_track, val_trials, test_trials).second;
    const Recording train_slice = slice_recording(rec, train_start, rec.samples() - train_start);
    const ChannelStats stats = compute_stats(train_slice, clip);
    const Recording prep = preprocess(rec, stats);

    TokenArtifact art;
    if (kind == "mulaw") {
        MuLawCodec codec;
        codec.mu = cfg.get_double("tokenize", "mu", codec.mu);
        codec.n_bins = static_cast<int>(cfg.get_int("tokenize", "n_bins", codec.n_bins));
        art.kind = "mulaw";
        art.rec = quantize(prep, codec);
        prepare_out(inv);
    } else if (kind == "flat") {
        const int n_buckets = static_cast<int>(cfg.get_int("tokenize", "n_buckets", 3));
        const int rq_stages = static_cast<int>(cfg.get_int("tokenize", "rq_stages", 2));
        const int rq_bits = static_cast<int>(cfg.get_int("tokenize", "rq_bits", 7));
        const MatrixXd train_data = prep.data.rightCols(prep.samples() - train_start);
        const VectorQuantizer vq = fit_vector_quantizer(train_data, n_buckets, rq_stages, rq_bits, inv.seed);
        art.kind = "flat";
        art.rec.tokens = vq_encode(vq, prep.data);
        art.rec.codec.n_bins = static_cast<int>(vq.vocab_size());
        art.rec.codec.mu = 0.0;
        art.rec.fs = prep.fs;
        for (Eigen::Index b = 0; b < art.rec.tokens.rows(); ++b)
            art.rec.channel_names.push_back("bucket" + std::to_string(b));
        art.rec.condition_track = prep.condition_track;
        art.rec.subject_track = prep.subject_track;
        prepare_out(inv);
        save_quantizer(vq, (fs::path(inv.out) / "vq.bin").string());
    } else {
        throw ConfigError("unknown tokenize.codec: '" + kind + "' (expected mulaw or flat)");
    }
    save_tokens(art, (fs::path(inv.out) / "tokens").string());
    stamp(inv, "tokenize");
    return 0;
}

TrainConfig train_config_from(const RunConfig& cfg, uint64_t seed) {
    TrainConfig tc;
    tc.batch_size = static_cast<int>(cfg.get_int("train", "batch", tc.batch_size));
    tc.lr = cfg.get_double("train", "lr", tc.lr);
    tc.max_epochs = static_cast<int>(cfg.get_int("train", "epochs", tc.max_epochs));
    tc.patience = static_cast<int>(cfg.get_int("train", "patience", tc.patience));
    tc.windows_per_epoch = static_cast<int>(cfg.get_int("train", "windows_per_epoch", tc.windows_per_epoch));
    tc.seed = seed;
    tc.shuffle_condition_labels = cfg.get_bool("train", "shuffle_labels", false);
    tc.single_condition_label = cfg.get_bool("train", "single_label", false);
    tc.disable_channel_embedding = cfg.get_bool("train", "disable_channel_embedding", false);
    tc.disable_condition_embedding = cfg.get_bool("train", "disable_condition_embedding", false);
    return tc;
}

std::string train_log_text(const TrainResult& res) {
    std::string log = "epoch\ttrain\tval\n";
    for (size_t i = 0; i < res.train_curve.size(); ++i)
        log += format_int(static_cast<int64_t>(i)) + "\t" + format_double(res.train_curve[i]) + "\t" +
               format_double(res.val_curve[i]) + "\n";
    return log;
}

void add_train_meta(Checkpoint& ck, const TrainResult& res) {
    ck.set("train.best_val", format_double(res.best_val));
    ck.set("train.best_epoch", std::to_string(res.best_epoch));
    ck.set("train.epochs_run", std::to_string(res.epochs_run));
    ck.set("train.early_stopped", res.early_stopped ? "1" : "0");
}

int cmd_train(const std::vector<std::string>& args) {
    const ConfigSchema schema = {
        {"model",
         {"kind", "order", "n_layers", "n_heads", "n_embd", "min_ctx", "max_ctx", "tie_weights", "stacks",
          "layers", "kernel", "hidden", "skip", "embed", "cond_embed", "subj_embed", "init_seed"}},
        {"train",
         {"input", "val_trials", "test_trials", "epochs", "patience", "batch", "lr", "windows_per_epoch",
          "min_ctx", "max_ctx", "clip", "shuffle_labels", "single_label", "disable_channel_embedding",
          "disable_condition_embedding"}},
    };
    const auto maybe = parse_invocation("train", args, schema);
    if (!maybe) return 0;
    const Invocation& inv = *maybe;
    const RunConfig& cfg = inv.cfg;

    const std::string kind = cfg.get("model", "kind");
    const std::string input = cfg.get("train", "input");
    const int val_trials = static_cast<int>(cfg.get_int("train", "val_trials", 2));
    const int test_trials = static_cast<int>(cfg.get_int("train", "test_trials", 2));
    TrainConfig tc = train_config_from(cfg, inv.seed);
    const auto init_seed = static_cast<uint64_t>(cfg.get_int("model", "init_seed", static_cast<int64_t>(inv.seed)));

    Checkpoint ck;
    TrainResult res;
    std::optional<fs::path> vq_src;

    if (kind == "ar") {
        const Recording rec = load_recording(input);
        const DatasetSplit split = split_dataset(rec, val_trials, test_trials);
        const ChannelStats stats = compute_stats(split.train, cfg.get_double("train", "clip", 4.0));
        const Recording train = preprocess(split.train, stats);
        const Recording val = preprocess(split.val, stats);
        const int order = static_cast<int>(cfg.get_int("model", "order", 255));
        ArWindows ad(train.data, val.data, order, tc);
        res = train_loop(ad, tc);
        ArModel model = ad.model();
        model.trained_on_continuous = true;
        ck = pack_ar(model);
        ck.set("codec.n_bins", "256");
        ck.set("codec.mu", "255");
        ck.set("data.fs", format_double(rec.fs));
        ck.set("data.channel_names", join_names(rec.channel_names));
    } else {
        const TokenArtifact art = load_tokens(input);
        const TokenSplit ts = split_tokens(art.rec, val_trials, test_trials);
        const int vocab = art.rec.codec.n_bins;
        const int n_cond = art.rec.condition_track.size() ? art.rec.condition_track.maxCoeff() : 0;
        const int n_subj = std::max(1, art.rec.subject_track.size() ? art.rec.subject_track.maxCoeff() : 1);

        if (kind == "channelgpt2" || kind == "flatgpt2") {
            const bool flat = kind == "flatgpt2";
            if (flat != (art.kind == "flat"))
                throw ConfigError("model.kind " + kind + " needs " + (flat ? "flat" : "mulaw") + " tokens, got " +
                                  art.kind);
            GptSpec sp;
            sp.flat = flat;
            sp.n_layers = static_cast<int>(cfg.get_int("model", "n_layers", sp.n_layers));
            sp.n_heads = static_cast<int>(cfg.get_int("model", "n_heads", sp.n_heads));
            sp.n_embd = static_cast<int>(cfg.get_int("model", "n_embd", sp.n_embd));
            sp.vocab = vocab;
            sp.min_ctx = static_cast<int>(cfg.get_int("model", "min_ctx", sp.min_ctx));
            sp.max_ctx = static_cast<int>(cfg.get_int("model", "max_ctx", sp.max_ctx));
            sp.n_channels = static_cast<int>(art.rec.channels());
            sp.n_conditions = n_cond;
            sp.n_subjects = n_subj;
            sp.tie_weights = cfg.get_bool("model", "tie_weights", !flat);
            sp.init_seed = init_seed;
            tc.min_ctx = static_cast<int>(cfg.get_int("train", "min_ctx", sp.min_ctx));
            tc.max_ctx = static_cast<int>(cfg.get_int("train", "max_ctx", sp.max_ctx));
            Gpt<float> model(sp);
            if (flat) {
                FlatWindows ad(model, ts.train.tokens, ts.train.condition_track, ts.train.subject_track,
                               ts.val.tokens, ts.val.condition_track, ts.val.subject_track, tc);
                res = train_loop(ad, tc);
                vq_src = fs::path(input).parent_path() / "vq.bin";
            } else {
                GptWindows ad(model, ts.train, ts.val, tc);
                res = train_loop(ad, tc);
            }
            ck = pack_gpt(model);
        } else if (kind == "wavenet" || kind == "wavenet_mix") {
            WavenetSpec sp = WavenetSpec::defaults(kind == "wavenet_mix");
            if (art.kind != "mulaw") throw ConfigError("model.kind " + kind + " needs mulaw tokens, got " + art.kind);
            sp.stacks = static_cast<int>(cfg.get_int("model", "stacks", sp.stacks));
            sp.layers = static_cast<int>(cfg.get_int("model", "layers", sp.layers));
            sp.kernel = static_cast<int>(cfg.get_int("model", "kernel", sp.kernel));
            sp.hidden = static_cast<int>(cfg.get_int("model", "hidden", sp.hidden));
            sp.skip = static_cast<int>(cfg.get_int("model", "skip", sp.skip));
            sp.embed = static_cast<int>(cfg.get_int("model", "embed", sp.embed));
            sp.vocab = vocab;
            sp.cond_embed = static_cast<int>(cfg.get_int("model", "cond_embed", sp.cond_embed));
            sp.subj_embed = static_cast<int>(cfg.get_int("model", "subj_embed", sp.subj_embed));
            sp.n_channels = static_cast<int>(art.rec.channels());
            sp.n_conditions = n_cond;
            sp.n_subjects = n_subj;
            sp.init_seed = init_seed;
            const int rf = sp.receptive_field();
            tc.min_ctx = static_cast<int>(cfg.get_int("train", "min_ctx", rf + 1));
            tc.max_ctx = static_cast<int>(cfg.get_int("train", "max_ctx", std::max(tc.min_ctx, rf + 128)));
            Wavenet<float> model(sp);
            WavenetWindows ad(model, ts.train, ts.val, tc);
            res = train_loop(ad, tc);
            ck = pack_wavenet(model);
        } else {
            throw ConfigError("unknown model.kind: '" + kind + "'");
        }
        ck.set("codec.n_bins", std::to_string(art.rec.codec.n_bins));
        ck.set("codec.mu", format_double(art.rec.codec.mu));
        ck.set("data.fs", format_double(art.rec.fs));
        ck.set("data.channel_names", join_names(art.rec.channel_names));
        ck.set("data.tokens", art.kind);
    }

    add_train_meta(ck, res);
    prepare_out(inv);
    if (vq_src) {
        if (!fs::exists(*vq_src)) throw IoError("flat token artifact has no quantizer beside it: " + vq_src->string());
        fs::copy_file(*vq_src, fs::path(inv.out) / "vq.bin");
    }
    save_checkpoint(ck, (fs::path(inv.out) / "model.ckpt").string());
    write_text_file(fs::path(inv.out) / "train_log.tsv", train_log_text(res));
    stamp(inv, "train");
    return 0;
}

int cmd_generate(const std::vector<std::string>& args) {
    const ConfigSchema schema = {
        {"generate", {"checkpoint", "duration_s", "top_p", "subject", "trial_s", "iti_s", "vq"}},
    };
    const auto maybe = parse_invocation("generate", args, schema);
    if (!maybe) return 0;
    const Invocation& inv = *maybe;
    const RunConfig& cfg = inv.cfg;

    const std::string ck_path = cfg.get("generate", "checkpoint");
    const Checkpoint ck = load_checkpoint(ck_path);
    const std::string kind = ck.get("kind");
    const double fs = ck.get_double("data.fs");
    const std::vector<std::string> names = split_names(ck.get("data.channel_names"));

    GenerationPlan plan;
    plan.duration_s = cfg.get_double("generate", "duration_s", 10.0);
    plan.top_p = cfg.get_double("generate", "top_p", plan.top_p);
    plan.subject = static_cast<int>(cfg.get_int("generate", "subject", plan.subject));
    plan.schedule.trial_s = cfg.get_double("generate", "trial_s", plan.schedule.trial_s);
    plan.schedule.iti_s = cfg.get_double("generate", "iti_s", plan.schedule.iti_s);
    plan.seed = inv.seed;

    Recording rec;
    if (kind == "ar") {
        rec = generate_ar(unpack_ar(ck), plan.duration_s, fs, plan.seed, names);
    } else if (kind == "channelgpt2") {
        const Gpt<float> model = unpack_gpt(ck);
        plan.schedule.n_conditions = model.spec.n_conditions;
        MuLawCodec codec;
        codec.n_bins = static_cast<int>(ck.get_int("codec.n_bins"));
        codec.mu = ck.get_double("codec.mu");
        rec = generate(model, plan, codec, fs, names);
    } else if (kind == "wavenet" || kind == "wavenet_mix") {
        const Wavenet<float> model = unpack_wavenet(ck);
        plan.schedule.n_conditions = model.spec.n_conditions;
        MuLawCodec codec;
        codec.n_bins = static_cast<int>(ck.get_int("codec.n_bins"));
        codec.mu = ck.get_double("codec.mu");
        rec = generate(model, plan, codec, fs, names);
    } else if (kind == "flatgpt2") {
        const Gpt<float> model = unpack_gpt(ck);
        plan.schedule.n_conditions = model.spec.n_conditions;
        const std::string vq_path =
            cfg.get_or("generate", "vq", (fs::path(ck_path).parent_path() / "vq.bin").string());
        const VectorQuantizer vq = load_quantizer(vq_path);
        rec = generate_flat(model, plan, vq, fs);
    } else {
        throw ConfigError("checkpoint has unknown kind: '" + kind + "'");
    }

    prepare_out(inv);
    save_recording(rec, (fs::path(inv.out) / "generated").string());
    write_text_file(fs::path(inv.out) / "plan.txt", plan_to_text(plan));
    stamp(inv, "generate");
    return 0;
}

void append_vector(std::string& report, const std::string& key, const VectorXd& v) {
    report += key + " = ";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) report += ',';
        report += format_double(v[i]);
    }
    report += '\n';
}

int cmd_eval(const std::vector<std::string>& args) {
    const ConfigSchema schema = {
        {"eval",
         {"generated", "reference", "seg_len", "t_pre", "t_post", "checkpoint", "tokens", "val_trials",
          "test_trials", "hmm_states", "hmm_restarts", "hmm_emb", "hmm_pca", "hmm_seg"}},
    };
    const auto maybe = parse_invocation("eval", args, schema);
    if (!maybe) return 0;
    const Invocation& inv = *maybe;
    const RunConfig& cfg = inv.cfg;

    const Recording gen = load_recording(cfg.get("eval", "generated"));
    const Recording ref = load_recording(cfg.get("eval", "reference"));
    const auto seg_len = static_cast<Eigen::Index>(cfg.get_int("eval", "seg_len", 256));

    std::string report;
    const PsdComparison psd = psd_compare(gen, ref, seg_len);
    report += "[psd]\n";
    report += "mean_log_distance = " + format_double(psd.mean_log_distance) + "\n";
    append_vector(report, "log_distance", psd.log_distance);
    append_vector(report, "peak_delta_hz", psd.peak_delta_hz);

    const CovComparison cov = covariance_compare(gen, ref);
    report += "[covariance]\n";
    report += "frobenius = " + format_double(cov.frobenius) + "\n";
    report += "off_diag_rms_generated = " + format_double(cov.off_diagonal_rms_generated) + "\n";
    report += "off_diag_rms_reference = " + format_double(cov.off_diagonal_rms_reference) + "\n";

    report += "[evoked]\n";
    if (gen.condition_track.size() && gen.condition_track.maxCoeff() > 0 && ref.condition_track.size() &&
        ref.condition_track.maxCoeff() > 0) {
        const double t_pre = cfg.get_double("eval", "t_pre", 0.1);
        const double t_post = cfg.get_double("eval", "t_post", 0.4);
        const EvokedReport ev = evoked_analysis(gen, ref, t_pre, t_post);
        report += "grand_mean_correlation = " + format_double(ev.grand_mean_correlation) + "\n";
        for (size_t i = 0; i < ev.conditions.size(); ++i)
            append_vector(report, "condition_" + std::to_string(ev.conditions[i]) + "_mean_correlation",
                          ev.mean_correlation[i]);
        if (!ev.skipped_conditions.empty()) {
            report += "skipped_conditions = ";
            for (size_t i = 0; i < ev.skipped_conditions.size(); ++i) {
                if (i) report += ',';
                report += std::to_string(ev.skipped_conditions[i]);
            }
            report += '\n';
        }
    } else {
        report += "skipped = 1\n";
    }

    if (cfg.has("eval", "checkpoint")) {
        const Checkpoint ck = load_checkpoint(cfg.get("eval", "checkpoint"));
        const std::string kind = ck.get("kind");
        const TokenArtifact art = load_tokens(cfg.get("eval", "tokens"));
        const int val_trials = static_cast<int>(cfg.get_int("eval", "val_trials", 2));
        const int test_trials = static_cast<int>(cfg.get_int("eval", "test_trials", 2));
        const TokenSplit ts = split_tokens(art.rec, val_trials, test_trials);

        ForecastMetrics fm;
        if (kind == "channelgpt2") {
            fm = forecast_metrics(unpack_gpt(ck), ts.test);
        } else if (kind == "wavenet" || kind == "wavenet_mix") {
            fm = forecast_metrics(unpack_wavenet(ck), ts.test);
        } else if (kind == "ar") {
            fm = forecast_metrics(unpack_ar(ck), detokenize(ts.test), ts.test.codec);
        } else {
            throw ConfigError("forecast metrics need a channel-token checkpoint, got kind '" + kind + "'");
        }
        const ForecastMetrics rb = repeat_baseline(ts.test);
        report += "[forecast]\n";
        report += "model_top1 = " + format_double(fm.top1) + "\n";
        report += "model_top5 = " + format_double(fm.top5) + "\n";
        report += "model_mse = " + format_double(fm.mse) + "\n";
        report += "model_count = " + format_int(fm.count) + "\n";
        report += "repeat_top1 = " + format_double(rb.top1) + "\n";
        report += "repeat_top5 = " + format_double(rb.top5) + "\n";
        report += "repeat_mse = " + format_double(rb.mse) + "\n";
        report += "chance_top1 = " + format_double(100.0 / art.rec.codec.n_bins) + "\n";
        report += "chance_top5 = " + format_double(500.0 / art.rec.codec.n_bins) + "\n";
    }

    if (cfg.has("eval", "hmm_states")) {
        const int n_states = static_cast<int>(cfg.get_int("eval", "hmm_states"));
        const int n_emb = static_cast<int>(cfg.get_int("eval", "hmm_emb", 7));
        const int pca_dim = static_cast<int>(cfg.get_int("eval", "hmm_pca", std::min<int64_t>(8, ref.channels())));
        HmmFitOptions opt;
        opt.n_states = n_states;
        opt.restarts = static_cast<int>(cfg.get_int("eval", "hmm_restarts", opt.restarts));
        PcaBasis basis;
        const MatrixXd emb_ref = tde_embed(ref.data, n_emb, pca_dim, &basis);
        const HmmModel hmm = fit_hmm(emb_ref, opt, inv.seed);
        const VectorXi path_ref = viterbi(hmm, emb_ref);
        const StateStats st_ref = summary_stats(path_ref, n_states, ref.fs);
        const MatrixXd emb_gen = tde_embed_with(gen.data, n_emb, basis);
        const VectorXi path_gen = viterbi(hmm, emb_gen);
        const StateStats st_gen = summary_stats(path_gen, n_states, gen.fs);
        report += "[hmm]\n";
        report += "states = " + std::to_string(n_states) + "\n";
        report += "loglik = " + format_double(hmm.loglik) + "\n";
        append_vector(report, "fo_reference", st_ref.fractional_occupancy);
        append_vector(report, "fo_generated", st_gen.fractional_occupancy);
        append_vector(report, "lifetime_s_reference", st_ref.mean_lifetime_s);
        append_vector(report, "lifetime_s_generated", st_gen.mean_lifetime_s);
        report += "switching_rate_reference = " + format_double(st_ref.switching_rate) + "\n";
        report += "switching_rate_generated = " + format_double(st_gen.switching_rate) + "\n";
    }

    prepare_out(inv);
    write_text_file(fs::path(inv.out) / "eval_report.txt", report);
    stamp(inv, "eval");
    return 0;
}

std::string format_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

MatrixXi quantize_epoch(const MatrixXd& epoch, const MuLawCodec& codec) {
    MatrixXi toks(epoch.rows(), epoch.cols());
    for (Eigen::Index c = 0; c < epoch.rows(); ++c)
        for (Eigen::Index t = 0; t < epoch.cols(); ++t)
            toks(c, t) = quantize_value(std::clamp(epoch(c, t), -1.0, 1.0), codec);
    return toks;
}

EpochedData select_trials(const EpochedData& data, const std::vector<size_t>& keep) {
    EpochedData out;
    out.fs = data.fs;
    for (const size_t i : keep) {
        out.epochs.push_back(data.epochs[i]);
        out.onsets.push_back(data.onsets[i]);
        out.condition_per_trial.push_back(data.condition_per_trial[i]);
    }
    return out;
}

int cmd_decode(const std::vector<std::string>& args) {
    const ConfigSchema schema = {
        {"decode",
         {"mode", "recording", "t_pre", "t_post", "checkpoint", "subject", "max_trials", "generated",
          "finetune_per_condition", "lr", "epochs", "patience", "max_hidden"}},
    };
    const auto maybe = parse_invocation("decode", args, schema);
    if (!maybe) return 0;
    const Invocation& inv = *maybe;
    const RunConfig& cfg = inv.cfg;

    const std::string mode = cfg.get("decode", "mode");
    const double t_pre = cfg.get_double("decode", "t_pre", 0.0);
    const double t_post = cfg.get_double("decode", "t_post", 0.5);
    const Recording rec = load_recording(cfg.get("decode", "recording"));
    const EpochedData ep = epoch(preprocess(rec), t_pre, t_post);
    if (ep.epochs.empty()) throw ConfigError("recording has no usable trials in the epoch window");

    std::string report;
    if (mode == "bayes") {
        const Checkpoint ck = load_checkpoint(cfg.get("decode", "checkpoint"));
        const std::string kind = ck.get("kind");
        MuLawCodec codec;
        codec.n_bins = static_cast<int>(ck.get_int("codec.n_bins"));
        codec.mu = ck.get_double("codec.mu");
        const int subject = static_cast<int>(cfg.get_int("decode", "subject", 1));
        const auto max_trials = cfg.get_int("decode", "max_trials", 0);
        const size_t n_trials = max_trials > 0 ? std::min<size_t>(ep.epochs.size(), static_cast<size_t>(max_trials))
                                               : ep.epochs.size();

        std::optional<Gpt<float>> gpt;
        std::optional<Wavenet<float>> wav;
        if (kind == "channelgpt2")
            gpt.emplace(unpack_gpt(ck));
        else if (kind == "wavenet" || kind == "wavenet_mix")
            wav.emplace(unpack_wavenet(ck));
        else
            throw ConfigError("bayes decoding needs a channel-token checkpoint, got kind '" + kind + "'");
        const int n_cond = gpt ? gpt->spec.n_conditions : wav->spec.n_conditions;

        std::string rows = "trial\ttrue\tpredicted";
        for (int y = 1; y <= n_cond; ++y) rows += "\tp" + std::to_string(y);
        rows += '\n';
        size_t n_correct = 0;
        for (size_t i = 0; i < n_trials; ++i) {
            const MatrixXi toks = quantize_epoch(ep.epochs[i], codec);
            const PosteriorTrace tr =
                gpt ? bayes_posterior(*gpt, toks, subject) : bayes_posterior(*wav, toks, subject);
            const int pred = tr.decoded();
            if (pred == ep.condition_per_trial[i]) ++n_correct;
            rows += format_int(static_cast<int64_t>(i)) + "\t" + std::to_string(ep.condition_per_trial[i]) +
                    "\t" + std::to_string(pred);
            const VectorXd last = tr.posterior.row(tr.posterior.rows() - 1);
            for (Eigen::Index y = 0; y < last.size(); ++y) rows += "\t" + format_double(last[y]);
            rows += '\n';
        }
        report += "# mode = bayes\n";
        report += "# n_trials = " + std::to_string(n_trials) + "\n";
        report += "# n_correct = " + std::to_string(n_correct) + "\n";
        report += "# accuracy = " + format_pct(100.0 * static_cast<double>(n_correct) / n_trials) + "\n";
        report += "# chance = " + format_pct(100.0 / n_cond) + "\n";
        report += rows;
    } else if (mode == "classifier" || mode == "transfer") {
        ClassifierConfig cc;
        cc.lr = cfg.get_double("decode", "lr", cc.lr);
        cc.max_epochs = static_cast<int>(cfg.get_int("decode", "epochs", cc.max_epochs));
        cc.patience = static_cast<int>(cfg.get_int("decode", "patience", cc.patience));
        cc.max_hidden = static_cast<int>(cfg.get_int("decode", "max_hidden", cc.max_hidden));
        cc.seed = inv.seed;
        if (mode == "classifier") {
            const ClassifierResult res = train_classifier(ep, cc);
            report += "# mode = classifier\n";
            report += "metric\tvalue\n";
            report += "train_accuracy\t" + format_pct(res.train_accuracy) + "\n";
            report += "val_accuracy\t" + format_pct(res.val_accuracy) + "\n";
            report += "epochs\t" + std::to_string(res.val_curve.size()) + "\n";
        } else {
            const Recording gen = load_recording(cfg.get("decode", "generated"));
            const EpochedData pretrain = epoch(preprocess(gen), t_pre, t_post);
            const auto per_cond = cfg.get_int("decode", "finetune_per_condition", 10);
            std::map<int, int64_t> seen;
            std::vector<size_t> fine_idx, test_idx;
            for (size_t i = 0; i < ep.epochs.size(); ++i) {
                if (seen[ep.condition_per_trial[i]]++ < per_cond)
                    fine_idx.push_back(i);
                else
                    test_idx.push_back(i);
            }
            if (fine_idx.empty() || test_idx.empty())
                throw ConfigError("decode.finetune_per_condition leaves an empty fine-tune or test set");
            const TransferReport tr =
                transfer_experiment(pretrain, select_trials(ep, fine_idx), select_trials(ep, test_idx), cc);
            report += "# mode = transfer\n";
            report += tr.to_tsv();
        }
    } else {
        throw ConfigError("unknown decode.mode: '" + mode + "' (expected bayes, classifier or transfer)");
    }

    prepare_out(inv);
    write_text_file(fs::path(inv.out) / "decode_report.tsv", report);
    stamp(inv, "decode");
    return 0;
}

int fail(std::string* error_line, const std::string& cls, const std::string& message, int code) {
    const std::string line = "error: " + cls + ": " + message;
    if (error_line)
        *error_line = line;
    else
        std::cerr << line << "\n";
    return code;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::string* error_line) {
    if (error_line) error_line->clear();
    try {
        if (args.empty())
            throw ConfigError(
                "usage: megcast <command> --config FILE [--seed N] [--out DIR] [--force] [section.key=value ...]; "
                "commands: synth tokenize train generate eval decode");
        const std::string& cmd = args[0];
        const std::vector<std::string> rest(args.begin() + 1, args.end());
        if (cmd == "--version" || cmd == "version") {
            std::cout << kToolVersion << "\n";
            return 0;
        }
        if (cmd == "--help" || cmd == "help") {
            std::cout << "usage: megcast <command> --config FILE [--seed N] [--out DIR] [--force] "
                         "[section.key=value ...]\ncommands: synth tokenize train generate eval decode\n";
            return 0;
        }
        if (cmd == "synth") return cmd_synth(rest);
        if (cmd == "tokenize") return cmd_tokenize(rest);
        if (cmd == "train") return cmd_train(rest);
        if (cmd == "generate") return cmd_generate(rest);
        if (cmd == "eval") return cmd_eval(rest);
        if (cmd == "decode") return cmd_decode(rest);
        throw ConfigError("unknown command: '" + cmd + "'");
    } catch (const ConfigError& e) {
        return fail(error_line, "config", e.what(), 2);
    } catch (const VersionError& e) {
        return fail(error_line, "version", e.what(), 4);
    } catch (const IoError& e) {
        return fail(error_line, "io", e.what(), 3);
    } catch (const std::invalid_argument& e) {
        return fail(error_line, "config", e.what(), 2);
    } catch (const std::exception& e) {
        return fail(error_line, "runtime", e.what(), 1);
    }
}

}  // namespace megcast
