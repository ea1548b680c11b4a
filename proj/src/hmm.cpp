#include "megcast/hmm.hpp"

#include <cmath>
#include <set>

#include "megcast/kmeans.hpp"
#include "megcast/signal.hpp"

namespace megcast {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Cholesky-backed Gaussian evaluator with jitter escalation.
struct GaussState {
    Eigen::LLT<MatrixXd> llt;
    double logdet = 0.0;

    void set(const MatrixXd& cov, double jitter) {
        MatrixXd c = cov;
        for (int attempt = 0; attempt < 8; ++attempt) {
            llt.compute(c);
            if (llt.info() == Eigen::Success) {
                logdet = 0.0;
                const auto& L = llt.matrixLLT();
                for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += 2.0 * std::log(L(i, i));
                return;
            }
            c += jitter * MatrixXd::Identity(cov.rows(), cov.cols());
            jitter *= 10.0;
        }
        throw std::runtime_error("state covariance is singular beyond jitter repair");
    }

    double logp(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& mu) const {
        const VectorXd d = x - mu;
        const VectorXd s = llt.matrixL().solve(d);
        return -0.5 * (s.squaredNorm() + logdet + static_cast<double>(d.size()) * kLog2Pi);
    }
};

// T x K log emission matrix.
MatrixXd log_emissions(const HmmModel& m, const MatrixXd& series, double jitter) {
    const Eigen::Index T = series.rows();
    const int K = m.n_states;
    std::vector<GaussState> gs(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k) gs[static_cast<size_t>(k)].set(m.covs[static_cast<size_t>(k)], jitter);
    MatrixXd logb(T, K);
    for (Eigen::Index t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k)
            logb(t, k) = gs[static_cast<size_t>(k)].logp(series.row(t).transpose(), m.means.row(k).transpose());
    return logb;
}

struct ForwardBackward {
    MatrixXd gamma;  // T x K
    MatrixXd xi_sum; // K x K, summed over t
    double loglik = 0.0;
};

// Scaled forward-backward; emissions are shifted per row before
// exponentiation so the scales stay representable.
ForwardBackward forward_backward(const HmmModel& m, const MatrixXd& logb) {
    const Eigen::Index T = logb.rows();
    const int K = m.n_states;

    MatrixXd b(T, K);
    VectorXd shift(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        shift[t] = logb.row(t).maxCoeff();
        b.row(t) = (logb.row(t).array() - shift[t]).exp();
    }

    MatrixXd alpha(T, K), beta(T, K);
    VectorXd scale(T);
    alpha.row(0) = m.init.transpose().cwiseProduct(b.row(0));
    scale[0] = alpha.row(0).sum();
    if (scale[0] <= 0.0) throw std::runtime_error("forward pass underflow");
    alpha.row(0) /= scale[0];
    for (Eigen::Index t = 1; t < T; ++t) {
        alpha.row(t) = (alpha.row(t - 1) * m.trans).cwiseProduct(b.row(t));
        scale[t] = alpha.row(t).sum();
        if (scale[t] <= 0.0) throw std::runtime_error("forward pass underflow");
        alpha.row(t) /= scale[t];
    }

    beta.row(T - 1).setOnes();
    for (Eigen::Index t = T - 2; t >= 0; --t) {
        beta.row(t) = (beta.row(t + 1).cwiseProduct(b.row(t + 1))) * m.trans.transpose();
        beta.row(t) /= scale[t + 1];
    }

    ForwardBackward fb;
    fb.gamma = alpha.cwiseProduct(beta);
    for (Eigen::Index t = 0; t < T; ++t) fb.gamma.row(t) /= fb.gamma.row(t).sum();

    fb.xi_sum = MatrixXd::Zero(K, K);
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
        const MatrixXd xi = (alpha.row(t).transpose() *
                             (beta.row(t + 1).cwiseProduct(b.row(t + 1)) / scale[t + 1]))
                                .cwiseProduct(m.trans);
        fb.xi_sum += xi;
    }

    fb.loglik = scale.array().log().sum() + shift.sum();
    return fb;
}

HmmModel init_model(const MatrixXd& series, int n_states, double jitter, Rng& rng) {
    const Eigen::Index D = series.cols();
    const KMeansResult km = kmeans(series, n_states, rng, 2, 50);

    HmmModel m;
    m.n_states = n_states;
    m.means = km.centroids;
    MatrixXd global = MatrixXd::Zero(D, D);
    const Eigen::RowVectorXd mu = series.colwise().mean();
    for (Eigen::Index t = 0; t < series.rows(); ++t) {
        const Eigen::RowVectorXd d = series.row(t) - mu;
        global += d.transpose() * d;
    }
    global /= static_cast<double>(series.rows());
    global += jitter * MatrixXd::Identity(D, D);
    m.covs.assign(static_cast<size_t>(n_states), global);
    m.trans = MatrixXd::Constant(n_states, n_states, 0.1 / std::max(1, n_states - 1));
    m.trans.diagonal().setConstant(0.9);
    if (n_states == 1) m.trans.setOnes();
    for (Eigen::Index k = 0; k < n_states; ++k) m.trans.row(k) /= m.trans.row(k).sum();
    m.init = VectorXd::Constant(n_states, 1.0 / n_states);
    return m;
}

HmmModel fit_once(const MatrixXd& series, const HmmFitOptions& opt, Rng& rng) {
    HmmModel m = init_model(series, opt.n_states, opt.jitter, rng);
    const Eigen::Index T = series.rows(), D = series.cols();
    const int K = opt.n_states;

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iter; ++it) {
        const MatrixXd logb = log_emissions(m, series, opt.jitter);
        const ForwardBackward fb = forward_backward(m, logb);
        m.loglik = fb.loglik;
        m.loglik_curve.push_back(fb.loglik);

        // M-step
        m.init = fb.gamma.row(0).transpose();
        for (int k = 0; k < K; ++k) {
            const double denom = fb.xi_sum.row(k).sum();
            if (denom > 0.0)
                m.trans.row(k) = fb.xi_sum.row(k) / denom;
        }
        const VectorXd occ = fb.gamma.colwise().sum().transpose();
        for (int k = 0; k < K; ++k) {
            if (occ[k] <= 0.0) continue;
            m.means.row(k) = (fb.gamma.col(k).transpose() * series) / occ[k];
            MatrixXd cov = MatrixXd::Zero(D, D);
            for (Eigen::Index t = 0; t < T; ++t) {
                const Eigen::RowVectorXd d = series.row(t) - m.means.row(k);
                cov += fb.gamma(t, k) * (d.transpose() * d);
            }
            m.covs[static_cast<size_t>(k)] = cov / occ[k] + opt.jitter * MatrixXd::Identity(D, D);
        }

        if (std::isfinite(prev_ll) &&
            std::abs(fb.loglik - prev_ll) / std::max(1.0, std::abs(fb.loglik)) < opt.tol)
            break;
        prev_ll = fb.loglik;
    }
    // final log-likelihood of the updated parameters
    m.loglik = forward_backward(m, log_emissions(m, series, opt.jitter)).loglik;
    return m;
}

}  // namespace

void HmmModel::validate() const {
    if (n_states < 1) throw std::invalid_argument("model has no states");
    if (means.rows() != n_states || static_cast<int>(covs.size()) != n_states)
        throw std::invalid_argument("state table size mismatch");
    for (int k = 0; k < n_states; ++k) {
        const double rs = trans.row(k).sum();
        if (std::abs(rs - 1.0) > 1e-9) throw std::invalid_argument("transition row not stochastic");
    }
}

MatrixXd tde_embed(const MatrixXd& data, int n_emb, int pca_dim, PcaBasis* basis_out) {
    if (n_emb < 1 || n_emb % 2 == 0) throw std::invalid_argument("embedding count must be odd");
    const Eigen::Index C = data.rows(), T = data.cols();
    const int half = (n_emb - 1) / 2;
    const Eigen::Index Tv = T - (n_emb - 1);
    if (Tv < 2) throw std::invalid_argument("series too short for the embedding");
    const Eigen::Index Dr = C * n_emb;
    if (pca_dim < 1 || pca_dim > Dr) throw std::invalid_argument("projection dimension out of range");

    MatrixXd raw(Tv, Dr);
    for (Eigen::Index t = 0; t < Tv; ++t) {
        Eigen::Index col = 0;
        for (Eigen::Index c = 0; c < C; ++c)
            for (int lag = -half; lag <= half; ++lag) raw(t, col++) = data(c, t + half + lag);
    }

    const Eigen::RowVectorXd mean = raw.colwise().mean();
    raw.rowwise() -= mean;
    const MatrixXd cov = raw.transpose() * raw / static_cast<double>(Tv);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    // eigenvalues ascending: take the trailing pca_dim columns, largest first
    MatrixXd comps(Dr, pca_dim);
    for (int j = 0; j < pca_dim; ++j) comps.col(j) = eig.eigenvectors().col(Dr - 1 - j);

    if (basis_out) {
        basis_out->mean = mean;
        basis_out->components = comps;
    }
    return raw * comps;
}

MatrixXd tde_embed_with(const MatrixXd& data, int n_emb, const PcaBasis& basis) {
    if (n_emb < 1 || n_emb % 2 == 0) throw std::invalid_argument("embedding count must be odd");
    const Eigen::Index C = data.rows(), T = data.cols();
    const int half = (n_emb - 1) / 2;
    const Eigen::Index Tv = T - (n_emb - 1);
    if (Tv < 2) throw std::invalid_argument("series too short for the embedding");
    const Eigen::Index Dr = C * n_emb;
    if (basis.components.rows() != Dr || basis.mean.size() != Dr)
        throw std::invalid_argument("basis dimensionality does not match the embedding");

    MatrixXd raw(Tv, Dr);
    for (Eigen::Index t = 0; t < Tv; ++t) {
        Eigen::Index col = 0;
        for (Eigen::Index c = 0; c < C; ++c)
            for (int lag = -half; lag <= half; ++lag) raw(t, col++) = data(c, t + half + lag);
    }
    raw.rowwise() -= basis.mean;
    return raw * basis.components;
}

HmmModel fit_hmm(const MatrixXd& series, const HmmFitOptions& opt, uint64_t seed) {
    if (opt.n_states < 1) throw std::invalid_argument("need at least one state");
    if (series.rows() < 10 * opt.n_states) throw std::invalid_argument("series too short for the state count");

    HmmModel best;
    bool have = false;
    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        Rng rng(Rng::substream(seed, static_cast<uint64_t>(r)));
        const HmmModel m = fit_once(series, opt, rng);
        if (!have || m.loglik > best.loglik) {
            best = m;
            have = true;
        }
    }
    best.validate();
    return best;
}

VectorXi viterbi(const HmmModel& model, const MatrixXd& series) {
    model.validate();
    const MatrixXd logb = log_emissions(model, series, 0.0);
    const Eigen::Index T = series.rows();
    const int K = model.n_states;
    const MatrixXd logA = model.trans.array().max(1e-300).log();

    MatrixXd delta(T, K);
    Eigen::MatrixXi back(T, K);
    delta.row(0) = model.init.array().max(1e-300).log().transpose() + logb.row(0).array();
    for (Eigen::Index t = 1; t < T; ++t) {
        for (int k = 0; k < K; ++k) {
            Eigen::Index arg = 0;
            const double v = (delta.row(t - 1).transpose() + logA.col(k)).maxCoeff(&arg);
            delta(t, k) = v + logb(t, k);
            back(t, k) = static_cast<int>(arg);
        }
    }
    VectorXi path(T);
    Eigen::Index last = 0;
    delta.row(T - 1).maxCoeff(&last);
    path[T - 1] = static_cast<int>(last);
    for (Eigen::Index t = T - 2; t >= 0; --t) path[t] = back(t + 1, path[t + 1]);
    return path;
}

MatrixXd posteriors(const HmmModel& model, const MatrixXd& series) {
    model.validate();
    return forward_backward(model, log_emissions(model, series, 0.0)).gamma;
}

double hmm_loglik(const HmmModel& model, const MatrixXd& series) {
    model.validate();
    return forward_backward(model, log_emissions(model, series, 0.0)).loglik;
}

StateStats summary_stats(const VectorXi& path, int n_states, double fs) {
    const Eigen::Index T = path.size();
    if (T < 2) throw std::invalid_argument("path too short for dynamics statistics");
    if (path.minCoeff() < 0 || path.maxCoeff() >= n_states) throw std::invalid_argument("state id out of range");

    StateStats st;
    st.fractional_occupancy = VectorXd::Zero(n_states);
    st.mean_lifetime_s = VectorXd::Constant(n_states, std::numeric_limits<double>::quiet_NaN());
    st.mean_interval_s = VectorXd::Constant(n_states, std::numeric_limits<double>::quiet_NaN());
    st.visited.assign(static_cast<size_t>(n_states), false);

    for (Eigen::Index t = 0; t < T; ++t) st.fractional_occupancy[path[t]] += 1.0;
    st.fractional_occupancy /= static_cast<double>(T);

    int64_t transitions = 0;
    for (Eigen::Index t = 1; t < T; ++t) transitions += path[t] != path[t - 1];
    st.switching_rate = static_cast<double>(transitions) / static_cast<double>(T - 1) * fs;

    for (int k = 0; k < n_states; ++k) {
        std::vector<Eigen::Index> visit_start, visit_len;
        Eigen::Index t = 0;
        while (t < T) {
            if (path[t] == k) {
                Eigen::Index s = t;
                while (t < T && path[t] == k) ++t;
                visit_start.push_back(s);
                visit_len.push_back(t - s);
            } else {
                ++t;
            }
        }
        if (visit_start.empty()) continue;
        st.visited[static_cast<size_t>(k)] = true;
        double life = 0.0;
        for (const Eigen::Index l : visit_len) life += static_cast<double>(l);
        st.mean_lifetime_s[k] = life / static_cast<double>(visit_len.size()) / fs;
        if (visit_start.size() >= 2) {
            double gap = 0.0;
            for (size_t v = 1; v < visit_start.size(); ++v)
                gap += static_cast<double>(visit_start[v] - (visit_start[v - 1] + visit_len[v - 1]));
            st.mean_interval_s[k] = gap / static_cast<double>(visit_start.size() - 1) / fs;
        }
    }
    return st;
}

StatePsd state_psd(const VectorXi& path, const MatrixXd& data, double fs, Eigen::Index seg_len) {
    if (path.size() != data.cols()) throw std::invalid_argument("path length does not match the data");
    const int K = path.size() ? path.maxCoeff() + 1 : 0;

    StatePsd out;
    out.power.assign(static_cast<size_t>(K), std::nullopt);
    for (int k = 0; k < K; ++k) {
        MatrixXd acc;
        Eigen::Index n_windows = 0;
        Eigen::Index t = 0;
        const Eigen::Index T = path.size();
        while (t < T) {
            if (path[t] != k) {
                ++t;
                continue;
            }
            Eigen::Index s = t;
            while (t < T && path[t] == k) ++t;
            if (t - s < seg_len) continue;
            const PsdEstimate p = welch_psd_matrix(data.middleCols(s, t - s), fs, seg_len);
            if (out.freqs.size() == 0) out.freqs = p.freqs;
            if (acc.size() == 0) acc = MatrixXd::Zero(p.power.rows(), p.power.cols());
            const auto w = (t - s) / seg_len;
            acc += p.power * static_cast<double>(w);
            n_windows += w;
        }
        if (n_windows > 0) out.power[static_cast<size_t>(k)] = acc / static_cast<double>(n_windows);
    }
    return out;
}

EvokedStates evoked_state_timecourses(const MatrixXd& gamma, const VectorXi& condition_track, double fs,
                                      double t_pre, double t_post) {
    if (gamma.rows() != condition_track.size()) throw std::invalid_argument("posterior length mismatch");

    Recording pseudo;
    pseudo.data = gamma.transpose();  // states as channels
    pseudo.fs = fs;
    pseudo.condition_track = condition_track;
    pseudo.subject_track = VectorXi::Ones(condition_track.size());
    for (Eigen::Index k = 0; k < gamma.cols(); ++k) pseudo.channel_names.push_back("state" + std::to_string(k));

    const EpochedData ep = epoch(pseudo, t_pre, t_post);
    std::set<int> conds(ep.condition_per_trial.begin(), ep.condition_per_trial.end());

    EvokedStates out;
    out.fs = fs;
    for (const int cond : conds) {
        MatrixXd mean, var;
        int n = 0;
        for (size_t i = 0; i < ep.n_trials(); ++i) {
            if (ep.condition_per_trial[i] != cond) continue;
            const MatrixXd& e = ep.epochs[i];
            if (n == 0) {
                mean = MatrixXd::Zero(e.rows(), e.cols());
                var = MatrixXd::Zero(e.rows(), e.cols());
            }
            mean += e;
            var += e.cwiseProduct(e);
            n += 1;
        }
        if (n == 0) continue;
        mean /= n;
        var = (var / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
        out.conditions.push_back(cond);
        out.mean.push_back(mean);
        out.variance.push_back(var);
    }
    return out;
}

}  // namespace megcast
