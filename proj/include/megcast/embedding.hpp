#pragma once

#include "megcast/common.hpp"

namespace megcast {

// Relation between learned per-channel embeddings and physical sensor
// layout: Pearson correlation of pairwise Euclidean distances, plus a 2-D
// PCA projection of the embedding rows for plotting.
struct EmbeddingGeometry {
    double distance_correlation = 0.0;
    MatrixXd projection;  // C x 2
};

EmbeddingGeometry embedding_geometry(const MatrixXd& embeddings, const MatrixXd& coordinates);

}  // namespace megcast
