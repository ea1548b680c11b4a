#pragma once

#include "megcast/recording.hpp"

namespace megcast {

struct OscillationPeak {
    double freq_hz = 10.0;
    double amplitude = 1.0;
    std::vector<double> channel_phase;  // radians; empty -> seeded random per channel
};

// One per condition. The waveform is a biphasic gaussian-windowed deflection
// peaking at latency_s, restricted to the stimulus-on window.
struct EvokedTemplate {
    double latency_s = 0.2;
    double amplitude = 1.0;
    double width_s = 0.06;
    VectorXd spatial_profile;  // per-channel weight; empty -> smooth bump profile
};

struct TrialSchedule {
    double duration_s = 0.5;  // stimulus on
    double iti_s = 0.3;       // inter-trial interval (condition track = 0)
};

struct SyntheticSpec {
    int n_channels = 8;
    double fs = 100.0;
    double duration_s = 60.0;
    std::vector<OscillationPeak> peaks;
    double noise_exponent = 1.0;  // 1/f^a background
    double noise_scale = 1.0;
    std::vector<EvokedTemplate> templates;  // size n_conditions (may be empty -> defaults)
    TrialSchedule schedule;
    int n_conditions = 4;
    int n_subjects = 1;
    double subject_effect_scale = 0.2;  // sd of per-subject evoked gain around 1
    uint64_t seed = 1;

    double lead_in_s = 2.0;  // quiet period at the start of each subject block

    // Total duration such that every subject block holds exactly
    // trials_per_condition trials of each condition.
    double duration_for(int trials_per_condition) const;
};

// Distinct per-condition templates (spread latencies, alternating polarity,
// bump spatial profiles) for desk-scale experiments.
std::vector<EvokedTemplate> default_templates(int n_conditions, int n_channels);

// Deterministic given spec.seed. Background 1/f noise + oscillatory peaks +
// condition-locked evoked responses; per-subject multiplicative evoked gain.
Recording synthesize(const SyntheticSpec& spec);

// The evoked waveform of condition k (1-based) on each channel, as added by
// synthesize (unit subject gain): C x n_samples(duration_s). Ground truth for
// evoked-analysis oracles.
MatrixXd evoked_ground_truth(const SyntheticSpec& spec, int condition);

// Ring montage in the z=0 plane; C x 3.
MatrixXd sensor_ring_coords(int n_channels);

}  // namespace megcast
