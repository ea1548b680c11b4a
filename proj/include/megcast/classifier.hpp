#pragma once

#include <string>
#include <vector>

#include "megcast/common.hpp"
#include "megcast/recording.hpp"

namespace megcast {

// Four affine layers with no nonlinearities. The first layer reduces across
// channels at every timepoint; the rest act on the flattened trial.
struct LinearClassifier {
    MatrixXd w1;  // hidden x channels
    VectorXd b1;
    MatrixXd w2;  // flat x flat, flat = hidden * epoch samples
    VectorXd b2;
    MatrixXd w3;  // flat x flat
    VectorXd b3;
    MatrixXd w4;  // classes x flat
    VectorXd b4;
    std::vector<int> labels;  // class index -> condition label, ascending

    VectorXd forward(const MatrixXd& epoch) const;  // logits over the classes
    int classify(const MatrixXd& epoch) const;      // condition label of the argmax
};

struct ClassifierConfig {
    int max_hidden = 80;  // channel reduction width cap
    double lr = 1e-3;
    int max_epochs = 300;
    int patience = 25;
    uint64_t seed = 1;
};

struct ClassifierResult {
    LinearClassifier model;
    double train_accuracy = 0.0;  // per cent, on the training split
    double val_accuracy = 0.0;    // per cent, on the held-out split
    std::vector<double> val_curve;
};

// Cross-entropy training with a per-condition 4:1 train/validation split and
// early stopping on the validation loss. Pass `init` to fine-tune an existing
// classifier instead of starting fresh; its shape and labels must match.
ClassifierResult train_classifier(const EpochedData& data, const ClassifierConfig& cfg,
                                  const LinearClassifier* init = nullptr);

// Per cent of trials whose label the classifier reproduces. Labels outside
// the classifier's vocabulary can never be hit and count as misses.
double classifier_accuracy(const LinearClassifier& model, const EpochedData& data);

struct TransferReport {
    double zero_shot = 0.0;    // pretrained only, evaluated on the test set
    double fine_tuned = 0.0;   // pretrained, then trained further on the real set
    double direct = 0.0;       // trained on the real set only
    size_t n_test = 0;

    std::string to_tsv() const;
};

// Pretrain on surrogate trials, report zero-shot accuracy on the test set,
// fine-tune on the real training trials, and report the final accuracy next
// to the real-data-only baseline. All three sets must share one label set.
TransferReport transfer_experiment(const EpochedData& pretrain, const EpochedData& finetune,
                                   const EpochedData& test, const ClassifierConfig& cfg);

}  // namespace megcast
