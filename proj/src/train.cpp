#include "megcast/train.hpp"

namespace megcast {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (optimizer != "adam") throw ConfigError("unknown optimiser: " + optimizer);
    if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (min_ctx < 1 || max_ctx < min_ctx) throw ConfigError("need max_ctx >= min_ctx >= 1");
    if (shuffle_condition_labels && single_condition_label)
        throw ConfigError("shuffle and single-label ablations are mutually exclusive");
}

std::vector<WindowDraw> draw_windows(Eigen::Index T, int min_ctx, int max_ctx, int count, Rng& rng) {
    if (min_ctx < 1 || max_ctx < min_ctx) throw std::invalid_argument("need max_ctx >= min_ctx >= 1");
    if (T <= min_ctx) throw std::invalid_argument("track too short for the context range");
    const int hi = static_cast<int>(std::min<Eigen::Index>(max_ctx, T));
    std::vector<WindowDraw> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int len = min_ctx + static_cast<int>(rng.randint(static_cast<int64_t>(hi - min_ctx + 1)));
        const Eigen::Index start = static_cast<Eigen::Index>(rng.randint(static_cast<int64_t>(T - len + 1)));
        out.push_back({start, len});
    }
    return out;
}

VectorXi transform_condition_track(const VectorXi& track, bool shuffle, bool single, Rng& rng) {
    if (!shuffle && !single) return track;
    if (shuffle && single) throw std::invalid_argument("shuffle and single-label are mutually exclusive");

    // locate trials: maximal runs of a constant nonzero id
    std::vector<std::pair<Eigen::Index, Eigen::Index>> runs;  // [start, end)
    Eigen::Index i = 0;
    while (i < track.size()) {
        if (track[i] == 0) {
            ++i;
            continue;
        }
        Eigen::Index j = i + 1;
        while (j < track.size() && track[j] == track[i]) ++j;
        runs.emplace_back(i, j);
        i = j;
    }

    VectorXi out = track;
    if (single) {
        for (const auto& [s, e] : runs) out.segment(s, e - s).setConstant(1);
        return out;
    }
    std::vector<int> labels;
    labels.reserve(runs.size());
    for (const auto& [s, e] : runs) labels.push_back(track[s]);
    rng.shuffle(labels);
    for (size_t r = 0; r < runs.size(); ++r)
        out.segment(runs[r].first, runs[r].second - runs[r].first).setConstant(labels[r]);
    return out;
}

}  // namespace megcast
