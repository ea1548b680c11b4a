#include "megcast/embedding.hpp"

#include "megcast/evoked.hpp"

namespace megcast {

namespace {

VectorXd pairwise_distances(const MatrixXd& rows) {
    const Eigen::Index C = rows.rows();
    VectorXd d(C * (C - 1) / 2);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < C; ++i)
        for (Eigen::Index j = i + 1; j < C; ++j) d[k++] = (rows.row(i) - rows.row(j)).norm();
    return d;
}

}  // namespace

EmbeddingGeometry embedding_geometry(const MatrixXd& embeddings, const MatrixXd& coordinates) {
    const Eigen::Index C = embeddings.rows();
    if (C < 3) throw std::invalid_argument("need at least three channels");
    if (coordinates.rows() != C) throw std::invalid_argument("coordinate table does not match the channels");
    if (coordinates.size() == 0) throw std::invalid_argument("missing coordinates");

    EmbeddingGeometry out;
    out.distance_correlation = pearson(pairwise_distances(embeddings), pairwise_distances(coordinates));

    MatrixXd centred = embeddings.rowwise() - embeddings.colwise().mean();
    const MatrixXd cov = centred.transpose() * centred / static_cast<double>(C);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    const Eigen::Index D = cov.rows();
    MatrixXd comps(D, 2);
    comps.col(0) = eig.eigenvectors().col(D - 1);
    if (D >= 2)
        comps.col(1) = eig.eigenvectors().col(D - 2);
    else
        comps.col(1).setZero();
    out.projection = centred * comps;
    return out;
}

}  // namespace megcast
