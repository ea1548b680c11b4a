#include "megcast/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace megcast {

namespace {

std::vector<int> distinct_labels(const EpochedData& data) {
    std::vector<int> labels = data.condition_per_trial;
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    return labels;
}

struct Split {
    std::vector<size_t> train, val;
};

// 4:1 per condition, at least one trial on each side.
Split split_per_condition(const EpochedData& data, const std::vector<int>& labels, uint64_t seed) {
    std::map<int, std::vector<size_t>> by_label;
    for (size_t i = 0; i < data.epochs.size(); ++i) by_label[data.condition_per_trial[i]].push_back(i);
    Rng rng(Rng::substream(seed, 0));
    Split sp;
    for (const int lab : labels) {
        auto& idx = by_label[lab];
        rng.shuffle(idx);
        const size_t n_val = std::max<size_t>(1, idx.size() / 5);
        if (idx.size() <= n_val) throw std::invalid_argument("a condition is absent from the training split");
        for (size_t i = 0; i < idx.size(); ++i)
            (i + n_val < idx.size() ? sp.train : sp.val).push_back(idx[i]);
    }
    return sp;
}

struct Grads {
    MatrixXd w1, w2, w3, w4;
    VectorXd b1, b2, b3, b4;

    explicit Grads(const LinearClassifier& net)
        : w1(MatrixXd::Zero(net.w1.rows(), net.w1.cols())),
          w2(MatrixXd::Zero(net.w2.rows(), net.w2.cols())),
          w3(MatrixXd::Zero(net.w3.rows(), net.w3.cols())),
          w4(MatrixXd::Zero(net.w4.rows(), net.w4.cols())),
          b1(VectorXd::Zero(net.b1.size())),
          b2(VectorXd::Zero(net.b2.size())),
          b3(VectorXd::Zero(net.b3.size())),
          b4(VectorXd::Zero(net.b4.size())) {}
};

// Mean cross-entropy over the indexed trials; accumulates gradients when
// `g` is given.
double batch_pass(const LinearClassifier& net, const EpochedData& data, const std::vector<size_t>& idx,
                  const std::map<int, int>& class_of, Grads* g) {
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(idx.size());
    for (const size_t i : idx) {
        const MatrixXd& e = data.epochs[i];
        const MatrixXd z1 = (net.w1 * e).colwise() + net.b1;
        const Eigen::Map<const VectorXd> v(z1.data(), z1.size());
        const VectorXd z2 = net.w2 * v + net.b2;
        const VectorXd z3 = net.w3 * z2 + net.b3;
        const VectorXd lg = net.w4 * z3 + net.b4;
        const double m = lg.maxCoeff();
        const double lse = m + std::log((lg.array() - m).exp().sum());
        const int cls = class_of.at(data.condition_per_trial[i]);
        loss += (lse - lg[cls]) * inv;
        if (!g) continue;
        VectorXd dlg = (lg.array() - lse).exp().matrix() * inv;
        dlg[cls] -= inv;
        g->w4.noalias() += dlg * z3.transpose();
        g->b4 += dlg;
        const VectorXd dz3 = net.w4.transpose() * dlg;
        g->w3.noalias() += dz3 * z2.transpose();
        g->b3 += dz3;
        const VectorXd dz2 = net.w3.transpose() * dz3;
        g->w2.noalias() += dz2 * v.transpose();
        g->b2 += dz2;
        const VectorXd dv = net.w2.transpose() * dz2;
        const Eigen::Map<const MatrixXd> dz1(dv.data(), z1.rows(), z1.cols());
        g->w1.noalias() += dz1 * e.transpose();
        g->b1 += dz1.rowwise().sum();
    }
    return loss;
}

double split_accuracy(const LinearClassifier& net, const EpochedData& data, const std::vector<size_t>& idx) {
    if (idx.empty()) return 0.0;
    int hits = 0;
    for (const size_t i : idx) hits += net.classify(data.epochs[i]) == data.condition_per_trial[i];
    return 100.0 * hits / static_cast<double>(idx.size());
}

struct Adam {
    std::vector<double*> ptr;
    std::vector<Eigen::Index> len;
    std::vector<VectorXd> m, v;
    double t = 0.0;

    explicit Adam(LinearClassifier& net) {
        auto add = [&](double* p, Eigen::Index n) {
            ptr.push_back(p);
            len.push_back(n);
            m.emplace_back(VectorXd::Zero(n));
            v.emplace_back(VectorXd::Zero(n));
        };
        add(net.w1.data(), net.w1.size());
        add(net.b1.data(), net.b1.size());
        add(net.w2.data(), net.w2.size());
        add(net.b2.data(), net.b2.size());
        add(net.w3.data(), net.w3.size());
        add(net.b3.data(), net.b3.size());
        add(net.w4.data(), net.w4.size());
        add(net.b4.data(), net.b4.size());
    }

    void step(const Grads& g, double lr) {
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        t += 1.0;
        const double* gp[8] = {g.w1.data(), g.b1.data(), g.w2.data(), g.b2.data(),
                               g.w3.data(), g.b3.data(), g.w4.data(), g.b4.data()};
        for (size_t k = 0; k < ptr.size(); ++k) {
            Eigen::Map<Eigen::ArrayXd> p(ptr[k], len[k]);
            Eigen::Map<const Eigen::ArrayXd> grad(gp[k], len[k]);
            m[k].array() = b1 * m[k].array() + (1.0 - b1) * grad;
            v[k].array() = b2 * v[k].array() + (1.0 - b2) * grad.square();
            const double mc = 1.0 - std::pow(b1, t), vc = 1.0 - std::pow(b2, t);
            p -= lr * (m[k].array() / mc) / ((v[k].array() / vc).sqrt() + eps);
        }
    }
};

}  // namespace

VectorXd LinearClassifier::forward(const MatrixXd& epoch) const {
    if (epoch.rows() != w1.cols()) throw std::invalid_argument("channel count mismatch");
    if (epoch.cols() * w1.rows() != w2.cols()) throw std::invalid_argument("epoch length mismatch");
    const MatrixXd z1 = (w1 * epoch).colwise() + b1;
    const Eigen::Map<const VectorXd> v(z1.data(), z1.size());
    return w4 * (w3 * (w2 * v + b2) + b3) + b4;
}

int LinearClassifier::classify(const MatrixXd& epoch) const {
    Eigen::Index best = 0;
    forward(epoch).maxCoeff(&best);
    return labels[static_cast<size_t>(best)];
}

ClassifierResult train_classifier(const EpochedData& data, const ClassifierConfig& cfg,
                                  const LinearClassifier* init) {
    if (data.epochs.empty()) throw std::invalid_argument("no trials to train on");
    const Eigen::Index C = data.epochs.front().rows();
    const Eigen::Index T = data.epochs.front().cols();
    for (const MatrixXd& e : data.epochs)
        if (e.rows() != C || e.cols() != T) throw std::invalid_argument("trials differ in shape");
    if (data.condition_per_trial.size() != data.epochs.size())
        throw std::invalid_argument("label count does not match trial count");
    const std::vector<int> labels = distinct_labels(data);
    if (labels.size() < 2) throw std::invalid_argument("need at least two conditions");
    if (cfg.max_hidden < 1 || cfg.max_epochs < 1 || cfg.patience < 1 || cfg.lr <= 0.0)
        throw std::invalid_argument("bad classifier configuration");

    const Eigen::Index H = std::min<Eigen::Index>(C, cfg.max_hidden);
    const Eigen::Index D = H * T;
    const Eigen::Index N = static_cast<Eigen::Index>(labels.size());
    std::map<int, int> class_of;
    for (size_t k = 0; k < labels.size(); ++k) class_of[labels[k]] = static_cast<int>(k);

    ClassifierResult res;
    LinearClassifier& net = res.model;
    if (init) {
        if (init->labels != labels) throw std::invalid_argument("condition vocabulary mismatch");
        if (init->w1.cols() != C || init->w2.cols() != D) throw std::invalid_argument("trial shape mismatch");
        net = *init;
    } else {
        Rng rng(Rng::substream(cfg.seed, 1));
        auto fill = [&](MatrixXd& w, double scale) {
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scale * rng.gauss();
        };
        net.w1.resize(H, C);
        fill(net.w1, std::sqrt(1.0 / static_cast<double>(C)));
        net.b1 = VectorXd::Zero(H);
        // identity for the width-preserving layers keeps the signal scale
        net.w2 = MatrixXd::Identity(D, D);
        net.b2 = VectorXd::Zero(D);
        net.w3 = MatrixXd::Identity(D, D);
        net.b3 = VectorXd::Zero(D);
        net.w4.resize(N, D);
        fill(net.w4, std::sqrt(1.0 / static_cast<double>(D)));
        net.b4 = VectorXd::Zero(N);
        net.labels = labels;
    }

    const Split sp = split_per_condition(data, labels, cfg.seed);
    Adam adam(net);
    LinearClassifier best = net;
    double best_val = batch_pass(net, data, sp.val, class_of, nullptr);
    res.val_curve.push_back(best_val);
    int since_best = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Grads g(net);
        batch_pass(net, data, sp.train, class_of, &g);
        adam.step(g, cfg.lr);
        const double val = batch_pass(net, data, sp.val, class_of, nullptr);
        res.val_curve.push_back(val);
        if (val < best_val) {
            best_val = val;
            best = net;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    net = best;
    res.train_accuracy = split_accuracy(net, data, sp.train);
    res.val_accuracy = split_accuracy(net, data, sp.val);
    return res;
}

double classifier_accuracy(const LinearClassifier& model, const EpochedData& data) {
    if (data.epochs.empty()) throw std::invalid_argument("no trials to score");
    int hits = 0;
    for (size_t i = 0; i < data.epochs.size(); ++i)
        hits += model.classify(data.epochs[i]) == data.condition_per_trial[i];
    return 100.0 * hits / static_cast<double>(data.epochs.size());
}

std::string TransferReport::to_tsv() const {
    char buf[256];
    std::string out = "train_set\ttest_accuracy_pct\n";
    std::snprintf(buf, sizeof(buf), "pretrain\t%.2f\n", zero_shot);
    out += buf;
    std::snprintf(buf, sizeof(buf), "pretrain+finetune\t%.2f\n", fine_tuned);
    out += buf;
    std::snprintf(buf, sizeof(buf), "finetune_only\t%.2f\n", direct);
    out += buf;
    return out;
}

TransferReport transfer_experiment(const EpochedData& pretrain, const EpochedData& finetune,
                                   const EpochedData& test, const ClassifierConfig& cfg) {
    const std::vector<int> vocab = distinct_labels(pretrain);
    if (distinct_labels(finetune) != vocab || distinct_labels(test) != vocab)
        throw std::invalid_argument("condition vocabulary mismatch across the transfer sets");

    TransferReport rep;
    rep.n_test = test.n_trials();
    const ClassifierResult pre = train_classifier(pretrain, cfg);
    rep.zero_shot = classifier_accuracy(pre.model, test);
    const ClassifierResult tuned = train_classifier(finetune, cfg, &pre.model);
    rep.fine_tuned = classifier_accuracy(tuned.model, test);
    const ClassifierResult direct = train_classifier(finetune, cfg);
    rep.direct = classifier_accuracy(direct.model, test);
    return rep;
}

}  // namespace megcast
