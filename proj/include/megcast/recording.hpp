#pragma once

#include <string>
#include <vector>

#include "megcast/common.hpp"

namespace megcast {

// Continuous multichannel series with label tracks.
//
// data is C x T (channels x samples). condition_track[t] is 0 when no
// stimulus is on and 1..n_conditions during a trial. subject_track[t] is
// 1..n_subjects. Values are held in double; the on-disk format is float32.
struct Recording {
    MatrixXd data;
    double fs = 0.0;
    std::vector<std::string> channel_names;
    VectorXi condition_track;
    VectorXi subject_track;

    Eigen::Index channels() const { return data.rows(); }
    Eigen::Index samples() const { return data.cols(); }

    int n_conditions() const { return condition_track.size() ? condition_track.maxCoeff() : 0; }
    int n_subjects() const { return subject_track.size() ? subject_track.maxCoeff() : 0; }

    void validate() const;
};

// trials x C x T_epoch, stored as one C x T_epoch matrix per trial.
struct EpochedData {
    std::vector<MatrixXd> epochs;
    std::vector<Eigen::Index> onsets;
    std::vector<int> condition_per_trial;
    double fs = 0.0;
    Eigen::Index n_dropped = 0;  // onsets too close to a series edge

    size_t n_trials() const { return epochs.size(); }
};

struct PsdEstimate {
    VectorXd freqs;    // Hz, strictly increasing, max <= fs/2
    MatrixXd power;    // C x F, one-sided density (unit^2 / Hz)
};

// Directory layout:
//   data.f32       little-endian float32, row-major C x T
//   header.txt     key: value lines (fs, channels, samples, channel_names)
//   condition.txt  one integer per line, length T
//   subject.txt    one integer per line, length T
// Round trip through this format is bit-exact once data has been through
// float32 once.
void save_recording(const Recording& rec, const std::string& dir);
Recording load_recording(const std::string& dir);

}  // namespace megcast
