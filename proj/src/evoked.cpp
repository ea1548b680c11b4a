#include "megcast/evoked.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "megcast/signal.hpp"

namespace megcast {

double pearson(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("correlation input length mismatch");
    if (a.size() < 2) throw std::invalid_argument("correlation needs at least two samples");
    const VectorXd da = a.array() - a.mean();
    const VectorXd db = b.array() - b.mean();
    const double denom = da.norm() * db.norm();
    if (denom == 0.0) return 0.0;
    return std::clamp(da.dot(db) / denom, -1.0, 1.0);
}

Evoked evoked_average(const EpochedData& epochs, int condition) {
    Evoked ev;
    for (size_t k = 0; k < epochs.n_trials(); ++k) {
        if (epochs.condition_per_trial[k] != condition) continue;
        const MatrixXd& e = epochs.epochs[k];
        if (ev.n_trials == 0) {
            ev.mean = MatrixXd::Zero(e.rows(), e.cols());
            ev.variance = MatrixXd::Zero(e.rows(), e.cols());
        }
        ev.mean += e;
        ev.variance += e.cwiseProduct(e);
        ev.n_trials += 1;
    }
    if (ev.n_trials == 0) throw std::invalid_argument("condition has no trials");
    const double n = ev.n_trials;
    ev.mean /= n;
    ev.variance = ev.variance / n - ev.mean.cwiseProduct(ev.mean);
    ev.variance = ev.variance.cwiseMax(0.0);
    return ev;
}

EvokedReport evoked_analysis(const Recording& generated, const Recording& reference, double t_pre, double t_post) {
    if (generated.channels() != reference.channels()) throw std::invalid_argument("channel count mismatch");
    if (generated.fs != reference.fs) throw std::invalid_argument("sampling rate mismatch");

    const EpochedData ge = epoch(generated, t_pre, t_post);
    const EpochedData re = epoch(reference, t_pre, t_post);

    std::set<int> gen_conds(ge.condition_per_trial.begin(), ge.condition_per_trial.end());
    std::set<int> ref_conds(re.condition_per_trial.begin(), re.condition_per_trial.end());

    EvokedReport report;
    std::set<int> all;
    all.insert(gen_conds.begin(), gen_conds.end());
    all.insert(ref_conds.begin(), ref_conds.end());

    double corr_sum = 0.0;
    Eigen::Index corr_n = 0;
    for (const int cond : all) {
        if (!gen_conds.count(cond) || !ref_conds.count(cond)) {
            report.skipped_conditions.push_back(cond);
            continue;
        }
        const Evoked g = evoked_average(ge, cond);
        const Evoked r = evoked_average(re, cond);
        const Eigen::Index C = g.mean.rows();
        VectorXd mc(C), vc(C);
        for (Eigen::Index c = 0; c < C; ++c) {
            mc[c] = pearson(g.mean.row(c).transpose(), r.mean.row(c).transpose());
            vc[c] = pearson(g.variance.row(c).transpose(), r.variance.row(c).transpose());
            corr_sum += mc[c];
            corr_n += 1;
        }
        report.conditions.push_back(cond);
        report.generated.push_back(g);
        report.reference.push_back(r);
        report.mean_correlation.push_back(mc);
        report.variance_correlation.push_back(vc);
    }
    if (report.conditions.empty()) throw std::invalid_argument("no condition present in both inputs");
    report.grand_mean_correlation = corr_sum / static_cast<double>(corr_n);
    return report;
}

}  // namespace megcast
