#pragma once

#include "megcast/common.hpp"

namespace megcast {

struct KMeansResult {
    MatrixXd centroids;   // k x D
    VectorXi assignment;  // N, values in [0, k)
    double inertia = 0.0; // sum of squared distances to assigned centroid
};

// Lloyd's algorithm with k-means++ seeding, best of n_restarts by inertia.
// Every cluster is left non-empty (empty clusters steal the point farthest
// from its centroid). points is N x D, one row per point. Requires N >= k.
KMeansResult kmeans(const MatrixXd& points, int k, Rng& rng, int n_restarts = 5, int max_iter = 100);

}  // namespace megcast
