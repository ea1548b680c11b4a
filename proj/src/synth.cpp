#include "megcast/synth.hpp"

#include "megcast/fft.hpp"

namespace megcast {

double SyntheticSpec::duration_for(int trials_per_condition) const {
    const double block = lead_in_s + static_cast<double>(n_conditions) * trials_per_condition * (schedule.duration_s + schedule.iti_s);
    return block * n_subjects;
}

std::vector<EvokedTemplate> default_templates(int n_conditions, int n_channels) {
    std::vector<EvokedTemplate> out;
    for (int k = 1; k <= n_conditions; ++k) {
        EvokedTemplate t;
        const double frac = n_conditions > 1 ? static_cast<double>(k - 1) / (n_conditions - 1) : 0.5;
        t.latency_s = 0.12 + 0.18 * frac;
        t.amplitude = (k % 2 == 1 ? 1.0 : -1.0) * (1.0 + 0.25 * frac);
        t.width_s = 0.05;
        t.spatial_profile.resize(n_channels);
        const double center = frac * (n_channels - 1);
        const double w = std::max(1.0, n_channels / 3.0);
        for (int c = 0; c < n_channels; ++c) {
            const double d = (c - center) / w;
            t.spatial_profile[c] = 0.35 + 0.65 * std::exp(-0.5 * d * d);
        }
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

VectorXd template_waveform(const EvokedTemplate& tpl, double fs, Eigen::Index n_on) {
    VectorXd w(n_on);
    const double s1 = tpl.width_s;
    const double s2 = 1.5 * tpl.width_s;
    for (Eigen::Index i = 0; i < n_on; ++i) {
        const double t = static_cast<double>(i) / fs;
        const double d1 = (t - tpl.latency_s) / s1;
        const double d2 = (t - tpl.latency_s - 2.0 * tpl.width_s) / s2;
        w[i] = tpl.amplitude * (std::exp(-0.5 * d1 * d1) - 0.6 * std::exp(-0.5 * d2 * d2));
    }
    return w;
}

VectorXd one_over_f_noise(Eigen::Index n, double exponent, double fs, Rng& rng) {
    size_t p = 1;
    while (p < static_cast<size_t>(n)) p <<= 1;
    std::vector<std::complex<double>> spec(p);
    for (auto& x : spec) x = std::complex<double>(rng.gauss(), 0.0);
    fft_pow2(spec, false);
    spec[0] = 0.0;
    for (size_t k = 1; k <= p / 2; ++k) {
        const double f = fs * static_cast<double>(k) / static_cast<double>(p);
        const double scale = std::pow(f, -exponent / 2.0);
        spec[k] *= scale;
        if (k < p / 2) spec[p - k] = std::conj(spec[k]);
        else spec[k] = std::complex<double>(spec[k].real(), 0.0);
    }
    fft_pow2(spec, true);
    VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = spec[static_cast<size_t>(i)].real();
    const double sd = std::sqrt(out.squaredNorm() / static_cast<double>(n));
    if (sd > 0.0) out /= sd;
    return out;
}

}  // namespace

MatrixXd evoked_ground_truth(const SyntheticSpec& spec, int condition) {
    if (condition < 1 || condition > spec.n_conditions) throw std::invalid_argument("condition out of range");
    auto templates = spec.templates.empty() ? default_templates(spec.n_conditions, spec.n_channels) : spec.templates;
    const EvokedTemplate& tpl = templates[static_cast<size_t>(condition - 1)];
    const Eigen::Index n_on = static_cast<Eigen::Index>(std::llround(spec.schedule.duration_s * spec.fs));
    const VectorXd w = template_waveform(tpl, spec.fs, n_on);
    VectorXd profile = tpl.spatial_profile.size() ? tpl.spatial_profile : VectorXd::Ones(spec.n_channels);
    return profile * w.transpose();
}

MatrixXd sensor_ring_coords(int n_channels) {
    MatrixXd xyz(n_channels, 3);
    for (int c = 0; c < n_channels; ++c) {
        const double a = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(n_channels);
        xyz(c, 0) = std::cos(a);
        xyz(c, 1) = std::sin(a);
        xyz(c, 2) = 0.0;
    }
    return xyz;
}

Recording synthesize(const SyntheticSpec& spec) {
    if (spec.n_channels < 1 || spec.fs <= 0.0 || spec.duration_s <= 0.0 || spec.schedule.duration_s <= 0.0 ||
        spec.schedule.iti_s < 0.0 || spec.n_conditions < 0 || spec.n_subjects < 1)
        throw std::invalid_argument("invalid synthetic spec");
    for (const auto& p : spec.peaks) {
        if (p.freq_hz >= spec.fs / 2.0)
            throw std::invalid_argument("oscillation peak " + format_double(p.freq_hz) + " Hz is at or above Nyquist");
        if (p.freq_hz <= 0.0) throw std::invalid_argument("oscillation frequency must be positive");
    }

    const int C = spec.n_channels;
    const Eigen::Index T = static_cast<Eigen::Index>(std::llround(spec.duration_s * spec.fs));
    const Eigen::Index n_dur = static_cast<Eigen::Index>(std::llround(spec.schedule.duration_s * spec.fs));
    const Eigen::Index n_iti = static_cast<Eigen::Index>(std::llround(spec.schedule.iti_s * spec.fs));
    const Eigen::Index n_lead = static_cast<Eigen::Index>(std::llround(spec.lead_in_s * spec.fs));

    auto templates = spec.templates.empty() ? default_templates(spec.n_conditions, C) : spec.templates;
    if (static_cast<int>(templates.size()) != spec.n_conditions)
        throw std::invalid_argument("need one evoked template per condition");

    Recording rec;
    rec.fs = spec.fs;
    rec.data = MatrixXd::Zero(C, T);
    rec.condition_track = VectorXi::Zero(T);
    rec.subject_track = VectorXi::Ones(T);
    for (int c = 0; c < C; ++c) {
        char name[16];
        std::snprintf(name, sizeof(name), "ch%02d", c);
        rec.channel_names.emplace_back(name);
    }

    // Oscillatory background, shared across subject blocks.
    Rng phase_rng(Rng::substream(spec.seed, 11));
    for (const auto& peak : spec.peaks) {
        std::vector<double> phases = peak.channel_phase;
        if (phases.empty()) {
            phases.resize(static_cast<size_t>(C));
            for (auto& ph : phases) ph = 2.0 * M_PI * phase_rng.uniform();
        }
        if (phases.size() != static_cast<size_t>(C)) throw std::invalid_argument("per-channel phase length mismatch");
        const double w = 2.0 * M_PI * peak.freq_hz / spec.fs;
        for (int c = 0; c < C; ++c) {
            for (Eigen::Index t = 0; t < T; ++t)
                rec.data(c, t) += peak.amplitude * std::sin(w * static_cast<double>(t) + phases[static_cast<size_t>(c)]);
        }
    }

    Rng gain_rng(Rng::substream(spec.seed, 12));
    Rng order_rng(Rng::substream(spec.seed, 13));

    for (int s = 0; s < spec.n_subjects; ++s) {
        const Eigen::Index b0 = T * s / spec.n_subjects;
        const Eigen::Index b1 = T * (s + 1) / spec.n_subjects;
        rec.subject_track.segment(b0, b1 - b0).setConstant(s + 1);

        if (spec.noise_scale > 0.0) {
            for (int c = 0; c < C; ++c) {
                Rng noise_rng(Rng::substream(spec.seed, 100 + static_cast<uint64_t>(s) * 1024 + static_cast<uint64_t>(c)));
                rec.data.row(c).segment(b0, b1 - b0) +=
                    spec.noise_scale * one_over_f_noise(b1 - b0, spec.noise_exponent, spec.fs, noise_rng).transpose();
            }
        }

        const double gain = 1.0 + spec.subject_effect_scale * gain_rng.gauss();

        if (spec.n_conditions > 0) {
            std::vector<int> order(static_cast<size_t>(spec.n_conditions));
            Eigen::Index t = b0 + n_lead;
            bool more = true;
            while (more) {
                for (int k = 0; k < spec.n_conditions; ++k) order[static_cast<size_t>(k)] = k + 1;
                order_rng.shuffle(order);
                for (int k : order) {
                    if (t + n_dur > b1) { more = false; break; }
                    rec.condition_track.segment(t, n_dur).setConstant(k);
                    const VectorXd w = template_waveform(templates[static_cast<size_t>(k - 1)], spec.fs, n_dur);
                    VectorXd profile = templates[static_cast<size_t>(k - 1)].spatial_profile.size()
                                           ? templates[static_cast<size_t>(k - 1)].spatial_profile
                                           : VectorXd::Ones(C);
                    rec.data.middleCols(t, n_dur) += gain * profile * w.transpose();
                    t += n_dur + n_iti;
                }
            }
        }
    }
    return rec;
}

}  // namespace megcast
