#include "megcast/kmeans.hpp"

namespace megcast {

namespace {

// Squared distances of every point to each centroid column-wise, N x k.
void sq_dists(const MatrixXd& points, const MatrixXd& centroids, MatrixXd& out) {
    const VectorXd pn = points.rowwise().squaredNorm();
    const VectorXd cn = centroids.rowwise().squaredNorm();
    out = (-2.0 * points * centroids.transpose());
    out.colwise() += pn;
    out.rowwise() += cn.transpose();
    out = out.cwiseMax(0.0);
}

KMeansResult run_once(const MatrixXd& points, int k, Rng& rng, int max_iter) {
    const Eigen::Index n = points.rows();

    // k-means++ seeding.
    MatrixXd centroids(k, points.cols());
    centroids.row(0) = points.row(rng.randint(n));
    VectorXd best_d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int j = 1; j < k; ++j) {
        const double total = best_d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= best_d2[i];
                if (r <= 0.0) { pick = i; break; }
                pick = i;
            }
        } else {
            pick = rng.randint(n);
        }
        centroids.row(j) = points.row(pick);
        best_d2 = best_d2.cwiseMin((points.rowwise() - centroids.row(j)).rowwise().squaredNorm());
    }

    MatrixXd d2;
    KMeansResult res;
    res.assignment = VectorXi::Constant(n, -1);
    for (int iter = 0; iter < max_iter; ++iter) {
        sq_dists(points, centroids, d2);
        VectorXi assign(n);
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index j = 0;
            d2.row(i).minCoeff(&j);
            assign[i] = static_cast<int>(j);
            if (assign[i] != res.assignment[i]) changed = true;
        }
        res.assignment = assign;

        // Means; fix empty clusters by stealing the worst-fit point.
        VectorXi counts = VectorXi::Zero(k);
        MatrixXd sums = MatrixXd::Zero(k, points.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            ++counts[assign[i]];
            sums.row(assign[i]) += points.row(i);
        }
        for (int j = 0; j < k; ++j) {
            if (counts[j] > 0) continue;
            Eigen::Index worst = 0;
            double worst_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (counts[res.assignment[i]] <= 1) continue;
                const double d = d2(i, res.assignment[i]);
                if (d > worst_d) { worst_d = d; worst = i; }
            }
            const int old = res.assignment[worst];
            --counts[old];
            sums.row(old) -= points.row(worst);
            res.assignment[worst] = j;
            counts[j] = 1;
            sums.row(j) = points.row(worst);
            changed = true;
        }
        for (int j = 0; j < k; ++j) centroids.row(j) = sums.row(j) / static_cast<double>(counts[j]);
        if (!changed && iter > 0) break;
    }

    sq_dists(points, centroids, d2);
    res.inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index j = 0;
        const double d = d2.row(i).minCoeff(&j);
        res.assignment[i] = static_cast<int>(j);
        res.inertia += d;
    }
    res.centroids = std::move(centroids);
    return res;
}

}  // namespace

KMeansResult kmeans(const MatrixXd& points, int k, Rng& rng, int n_restarts, int max_iter) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (points.rows() < k) throw std::invalid_argument("k-means needs at least k points");

    KMeansResult best;
    bool have = false;
    for (int r = 0; r < n_restarts; ++r) {
        KMeansResult cur = run_once(points, k, rng, max_iter);
        if (!have || cur.inertia < best.inertia) {
            best = std::move(cur);
            have = true;
        }
    }
    return best;
}

}  // namespace megcast
