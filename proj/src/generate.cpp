#include "megcast/generate.hpp"

#include <sstream>

namespace megcast {

void GenerationPlan::validate() const {
    if (!(duration_s > 0.0)) throw std::invalid_argument("generation duration must be positive");
    if (!(top_p > 0.0) || top_p > 1.0) throw std::invalid_argument("top-p mass must lie in (0, 1]");
    if (subject < 1) throw std::invalid_argument("subject ids start at 1");
    if (condition.size() > 0 && condition.minCoeff() < 0)
        throw std::invalid_argument("negative condition label in plan");
}

VectorXi schedule_track(const ConditionSchedule& s, double fs, Eigen::Index T) {
    if (s.n_conditions < 1) throw std::invalid_argument("schedule needs at least one condition");
    const auto trial = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(s.trial_s * fs)));
    const auto iti = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::llround(s.iti_s * fs)));
    VectorXi track = VectorXi::Zero(T);
    Eigen::Index t = 0;
    int label = 1;
    while (t < T) {
        const Eigen::Index stop = std::min(T, t + trial);
        track.segment(t, stop - t).setConstant(label);
        t = stop + iti;
        label = label % s.n_conditions + 1;
    }
    return track;
}

VectorXi plan_condition_track(const GenerationPlan& plan, double fs, Eigen::Index T) {
    if (plan.condition.size() > 0) {
        VectorXi track(T);
        for (Eigen::Index t = 0; t < T; ++t) track[t] = plan.condition[t % plan.condition.size()];
        return track;
    }
    if (plan.schedule.n_conditions > 0) return schedule_track(plan.schedule, fs, T);
    return VectorXi::Zero(T);
}

std::string plan_to_text(const GenerationPlan& plan) {
    std::ostringstream os;
    os << "duration_s " << plan.duration_s << "\n";
    os << "subject " << plan.subject << "\n";
    os << "top_p " << plan.top_p << "\n";
    os << "seed " << plan.seed << "\n";
    os << "condition_len " << plan.condition.size() << "\n";
    os << "schedule.n_conditions " << plan.schedule.n_conditions << "\n";
    os << "schedule.trial_s " << plan.schedule.trial_s << "\n";
    os << "schedule.iti_s " << plan.schedule.iti_s << "\n";
    os << "prime_cols " << plan.prime.cols() << "\n";
    return os.str();
}

Recording generate_ar(const ArModel& model, double duration_s, double fs, uint64_t seed,
                      const std::vector<std::string>& channel_names) {
    model.validate();
    const Eigen::Index C = model.n_channels();
    const Eigen::Index K = model.order;
    const Eigen::Index T_out = detail::output_samples(duration_s, fs);
    const Eigen::Index total = K + T_out;

    std::vector<Rng> rngs;
    for (Eigen::Index c = 0; c < C; ++c) rngs.emplace_back(Rng::substream(seed, static_cast<uint64_t>(c)));

    MatrixXd window = MatrixXd::Zero(C, K);
    MatrixXd out(C, total);
    for (Eigen::Index t = 0; t < total; ++t) {
        const VectorXd pred = ar_forward(model, window);
        for (Eigen::Index c = 0; c < C; ++c) {
            const double x = pred[c] + rngs[static_cast<size_t>(c)].gauss();
            if (!std::isfinite(x) || std::abs(x) > 1e6)
                throw GenError("autoregressive generation diverged at sample " + std::to_string(t) +
                               ", channel " + std::to_string(c));
            out(c, t) = x;
        }
        window.leftCols(K - 1) = window.rightCols(K - 1).eval();
        window.col(K - 1) = out.col(t);
    }

    Recording rec;
    rec.data = out.rightCols(T_out);
    rec.fs = fs;
    rec.channel_names = detail::default_names(channel_names, C);
    rec.condition_track = VectorXi::Zero(T_out);
    rec.subject_track = VectorXi::Ones(T_out);
    return rec;
}

}  // namespace megcast
