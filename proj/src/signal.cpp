#include "megcast/signal.hpp"

#include <map>
#include <set>

#include "megcast/fft.hpp"

namespace megcast {

ChannelStats compute_stats(const Recording& rec, double clip) {
    const Eigen::Index C = rec.channels(), T = rec.samples();
    if (T < 2) throw std::invalid_argument("need at least 2 samples to compute channel statistics");

    ChannelStats st;
    st.clip = clip;
    st.mean.resize(C);
    st.sd.resize(C);
    st.max_abs.resize(C);
    for (Eigen::Index c = 0; c < C; ++c) {
        const double m = rec.data.row(c).mean();
        const double var = (rec.data.row(c).array() - m).square().sum() / static_cast<double>(T);
        if (var <= 0.0) {
            const std::string name = c < static_cast<Eigen::Index>(rec.channel_names.size())
                                         ? rec.channel_names[static_cast<size_t>(c)]
                                         : std::to_string(c);
            throw std::runtime_error("zero variance in channel '" + name + "'");
        }
        st.mean[c] = m;
        st.sd[c] = std::sqrt(var);
        const double z_max = ((rec.data.row(c).array() - m) / st.sd[c]).abs().maxCoeff();
        st.max_abs[c] = std::min(z_max, clip);
    }
    return st;
}

Recording preprocess(const Recording& rec, const ChannelStats& stats) {
    Recording out = rec;
    const Eigen::Index C = rec.channels();
    if (stats.mean.size() != C) throw std::invalid_argument("stats channel count mismatch");
    for (Eigen::Index c = 0; c < C; ++c) {
        auto row = out.data.row(c).array();
        row = (row - stats.mean[c]) / stats.sd[c];
        row = row.cwiseMax(-stats.clip).cwiseMin(stats.clip);
        row /= stats.max_abs[c];
        // Frozen training statistics can leave val/test values slightly
        // outside the unit range; the codec requires [-1, 1].
        row = row.cwiseMax(-1.0).cwiseMin(1.0);
    }
    return out;
}

Recording preprocess(const Recording& rec, double clip) { return preprocess(rec, compute_stats(rec, clip)); }

EpochedData epoch(const Recording& rec, double t_pre, double t_post) {
    EpochedData out;
    out.fs = rec.fs;
    const Eigen::Index T = rec.samples();
    const Eigen::Index n_pre = static_cast<Eigen::Index>(std::llround(t_pre * rec.fs));
    const Eigen::Index n_post = static_cast<Eigen::Index>(std::llround(t_post * rec.fs));
    const Eigen::Index len = n_pre + n_post;
    if (len <= 0) throw std::invalid_argument("epoch window must be positive");

    for (Eigen::Index t = 0; t < T; ++t) {
        const int k = rec.condition_track[t];
        if (k <= 0) continue;
        const bool is_onset = (t == 0) || rec.condition_track[t - 1] == 0;
        if (!is_onset) continue;
        if (t - n_pre < 0 || t + n_post > T) {
            ++out.n_dropped;
            continue;
        }
        out.epochs.push_back(rec.data.middleCols(t - n_pre, len));
        out.onsets.push_back(t);
        out.condition_per_trial.push_back(k);
    }
    return out;
}

PsdEstimate welch_psd_matrix(const MatrixXd& data, double fs, Eigen::Index seg_len, double overlap) {
    const Eigen::Index C = data.rows(), T = data.cols();
    if (seg_len > T) throw std::invalid_argument("welch segment length exceeds series length");
    if (seg_len < 2) throw std::invalid_argument("welch segment length too small");
    if (overlap < 0.0 || overlap >= 1.0) throw std::invalid_argument("overlap must be in [0, 1)");

    const Eigen::Index hop = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(static_cast<double>(seg_len) * (1.0 - overlap))));
    VectorXd win(seg_len);
    for (Eigen::Index i = 0; i < seg_len; ++i)
        win[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(seg_len)));
    const double u = win.squaredNorm();

    RealDft dft(seg_len);
    const Eigen::Index nf = seg_len / 2 + 1;

    PsdEstimate psd;
    psd.freqs.resize(nf);
    for (Eigen::Index k = 0; k < nf; ++k) psd.freqs[k] = fs * static_cast<double>(k) / static_cast<double>(seg_len);
    psd.power = MatrixXd::Zero(C, nf);

    VectorXd seg(seg_len), pow_seg(nf);
    for (Eigen::Index c = 0; c < C; ++c) {
        Eigen::Index n_segs = 0;
        for (Eigen::Index s = 0; s + seg_len <= T; s += hop) {
            seg = data.row(c).segment(s, seg_len).transpose().cwiseProduct(win);
            dft.power(seg.data(), pow_seg.data());
            psd.power.row(c) += pow_seg.transpose();
            ++n_segs;
        }
        psd.power.row(c) /= static_cast<double>(n_segs) * fs * u;
    }
    // One-sided: double everything except DC and (for even seg_len) Nyquist.
    for (Eigen::Index k = 1; k < nf; ++k) {
        const bool nyquist = (seg_len % 2 == 0) && k == nf - 1;
        if (!nyquist) psd.power.col(k) *= 2.0;
    }
    return psd;
}

PsdEstimate welch_psd(const Recording& rec, Eigen::Index seg_len, double overlap) {
    return welch_psd_matrix(rec.data, rec.fs, seg_len, overlap);
}

MatrixXd channel_covariance_matrix(const MatrixXd& data) {
    const Eigen::Index T = data.cols();
    if (T < 2) throw std::invalid_argument("covariance needs at least 2 samples");
    MatrixXd centered = data.colwise() - data.rowwise().mean();
    return (centered * centered.transpose()) / static_cast<double>(T);
}

MatrixXd channel_covariance(const Recording& rec) { return channel_covariance_matrix(rec.data); }

namespace {

Recording slice_recording(const Recording& rec, Eigen::Index begin, Eigen::Index end) {
    Recording out;
    out.fs = rec.fs;
    out.channel_names = rec.channel_names;
    const Eigen::Index n = end - begin;
    out.data = rec.data.middleCols(begin, n);
    out.condition_track = rec.condition_track.segment(begin, n);
    out.subject_track = rec.subject_track.segment(begin, n);
    return out;
}

}  // namespace

std::pair<Eigen::Index, Eigen::Index> split_boundaries(const VectorXi& condition_track, int val_trials,
                                                        int test_trials) {
    if (val_trials < 0 || test_trials < 0) throw std::invalid_argument("trial counts must be >= 0");
    const Eigen::Index T = condition_track.size();

    // Trial onsets in temporal order.
    std::vector<Eigen::Index> onsets;
    std::vector<int> conds;
    for (Eigen::Index t = 0; t < T; ++t) {
        const int k = condition_track[t];
        if (k > 0 && (t == 0 || condition_track[t - 1] == 0)) {
            onsets.push_back(t);
            conds.push_back(k);
        }
    }
    std::set<int> cond_set(conds.begin(), conds.end());
    std::map<int, int> total;
    for (int k : conds) ++total[k];
    for (const auto& [k, n] : total) {
        if (n < val_trials + test_trials)
            throw std::runtime_error("insufficient trials for condition " + std::to_string(k) + ": have " +
                                     std::to_string(n) + ", need " + std::to_string(val_trials + test_trials));
    }

    // Shortest prefix of trials giving `want` of every condition; returns the
    // index of the first trial after the prefix.
    auto take = [&](size_t start, int want) -> size_t {
        if (want == 0) return start;
        std::map<int, int> seen;
        size_t i = start;
        for (; i < onsets.size(); ++i) {
            ++seen[conds[i]];
            bool done = true;
            for (int k : cond_set)
                if (seen[k] < want) { done = false; break; }
            if (done) return i + 1;
        }
        throw std::runtime_error("insufficient trials while splitting");
    };

    const size_t val_end_trial = take(0, val_trials);
    const size_t test_end_trial = take(val_end_trial, test_trials);

    const Eigen::Index b1 = val_trials == 0 ? 0
                            : (val_end_trial < onsets.size() ? onsets[val_end_trial] : T);
    const Eigen::Index b2 = test_trials == 0 ? b1
                            : (test_end_trial < onsets.size() ? onsets[test_end_trial] : T);
    return {b1, b2};
}

DatasetSplit split_dataset(const Recording& rec, int val_trials, int test_trials) {
    const auto [b1, b2] = split_boundaries(rec.condition_track, val_trials, test_trials);
    DatasetSplit out;
    out.val = slice_recording(rec, 0, b1);
    out.test = slice_recording(rec, b1, b2);
    out.train = slice_recording(rec, b2, rec.samples());
    return out;
}

}  // namespace megcast
