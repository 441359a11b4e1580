#include <Eigen/Eigenvalues>

#include "quadbank/harness.hpp"

namespace quadbank::harness {

Eigen::MatrixXd PcaResult::apply(const Eigen::MatrixXd& samples) const {
    if (samples.cols() != mean.size()) throw HarnessError("pca: sample dimension mismatch");
    return (samples.rowwise() - mean.transpose()) * components.transpose();
}

Eigen::MatrixXd PcaResult::reconstruct(const Eigen::MatrixXd& r) const {
    if (r.cols() != components.rows()) throw HarnessError("pca: reduced dimension mismatch");
    return (r * components).rowwise() + mean.transpose();
}

PcaResult pca_reduce(const Eigen::MatrixXd& samples, std::size_t out_dim) {
    const Eigen::Index s = samples.rows(), d = samples.cols();
    const auto k = static_cast<Eigen::Index>(out_dim);
    if (s == 0 || d == 0) throw HarnessError("pca: no samples");
    if (k == 0 || k > d) throw HarnessError("pca: output dimension must lie in [1, input dimension]");
    if (!samples.allFinite()) throw HarnessError("pca: non-finite samples");

    PcaResult out;
    out.mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centred = samples.rowwise() - out.mean.transpose();
    const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(s);
    // Eigenvalues come back ascending; every eigenvector is kept, so
    // components past the rank are still an orthonormal completion.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw HarnessError("pca: eigen decomposition failed");
    out.components.resize(k, d);
    out.explained.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        Eigen::VectorXd c = eig.eigenvectors().col(d - 1 - i);
        Eigen::Index arg = 0;
        c.cwiseAbs().maxCoeff(&arg);
        if (c[arg] < 0) c = -c;
        out.components.row(i) = c.transpose();
        out.explained[i] = std::max(0.0, eig.eigenvalues()[d - 1 - i]);
    }
    out.reduced = centred * out.components.transpose();
    return out;
}

}  // namespace quadbank::harness
