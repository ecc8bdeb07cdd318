#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "avh/dataset.hpp"
#include "avh/errors.hpp"
#include "avh/rng.hpp"

namespace avh {

namespace detail {

// Posterior of isotropic equal-prior Gaussians, via a stable softmax of log densities.
inline Eigen::VectorXd gaussian_posterior(const Eigen::VectorXd& x, const Eigen::MatrixXd& means, double sigma) {
    Eigen::VectorXd logp(means.rows());
    for (Eigen::Index k = 0; k < means.rows(); ++k)
        logp[k] = -(x - means.row(k).transpose()).squaredNorm() / (2.0 * sigma * sigma);
    const double top = logp.maxCoeff();
    Eigen::VectorXd p = (logp.array() - top).exp().matrix();
    return p / p.sum();
}

inline Eigen::VectorXd draw_gaussian(Rng& rng, const Eigen::VectorXd& mean, double sigma) {
    Eigen::VectorXd x(mean.size());
    for (Eigen::Index j = 0; j < mean.size(); ++j) x[j] = mean[j] + sigma * rng.normal();
    return x;
}

}  // namespace detail

/// Two isotropic Gaussians, n/2 samples each, every sample scaled to unit norm.
/// The posterior uses the densities of the raw (pre-normalization) draws.
inline LabeledDataset gen_two_gaussians(int n, const Eigen::VectorXd& mean0, const Eigen::VectorXd& mean1,
                                        double sigma, std::uint64_t seed) {
    if (n <= 0 || n % 2 != 0) throw ArgumentError("gen_two_gaussians: n must be positive and even");
    if (mean0.size() != mean1.size() || mean0.size() < 1)
        throw ArgumentError("gen_two_gaussians: means must share a positive dimension");
    if (mean0 == mean1) throw ArgumentError("gen_two_gaussians: means must be distinct");
    if (!(sigma > 0.0)) throw ArgumentError("gen_two_gaussians: sigma must be positive");

    Eigen::MatrixXd means(2, mean0.size());
    means.row(0) = mean0.transpose();
    means.row(1) = mean1.transpose();

    Rng rng(seed);
    LabeledDataset d;
    d.num_classes = 2;
    d.features.resize(n, mean0.size());
    d.labels.resize(static_cast<std::size_t>(n));
    d.oracle_posterior = Eigen::MatrixXd(n, 2);
    for (int i = 0; i < n; ++i) {
        const int y = i < n / 2 ? 0 : 1;
        Eigen::VectorXd x = detail::draw_gaussian(rng, means.row(y).transpose(), sigma);
        d.oracle_posterior->row(i) = detail::gaussian_posterior(x, means, sigma).transpose();
        const double norm = x.norm();
        if (norm > 0.0) x /= norm;
        d.features.row(i) = x.transpose();
        d.labels[static_cast<std::size_t>(i)] = y;
    }
    return d;
}

/// Parameters of a C-class isotropic Gaussian mixture with unit-norm means.
///
/// Means are m_k = normalize(g + separation * (e_k - g)) with g the centroid of
/// the first C axes: separation 0 collapses every mean onto g, 1 gives
/// orthogonal means, and larger values approach the regular simplex angle
/// arccos(-1 / (C - 1)). Requires C <= dim.
struct MixtureParams {
    int classes = 4;
    int dim = 8;
    double separation = 1.0;
    double sigma = 0.3;
    int n = 2000;

    void validate() const {
        if (classes < 2) throw ArgumentError("MixtureParams: classes must be >= 2");
        if (dim < classes) throw ArgumentError("MixtureParams: dim must be >= classes");
        if (!(separation > 0.0)) throw ArgumentError("MixtureParams: separation must be positive");
        if (!(sigma > 0.0)) throw ArgumentError("MixtureParams: sigma must be positive");
        if (n < 1) throw ArgumentError("MixtureParams: n must be >= 1");
    }
};

inline Eigen::MatrixXd mixture_means(const MixtureParams& p) {
    p.validate();
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(p.dim);
    centroid.head(p.classes).setConstant(1.0 / p.classes);
    Eigen::MatrixXd means(p.classes, p.dim);
    for (int k = 0; k < p.classes; ++k) {
        Eigen::VectorXd axis = Eigen::VectorXd::Zero(p.dim);
        axis[k] = 1.0;
        const Eigen::VectorXd m = centroid + p.separation * (axis - centroid);
        means.row(k) = m.normalized().transpose();
    }
    return means;
}

/// n samples with a uniformly drawn component; the label is the drawn
/// component even when another class has higher posterior.
inline LabeledDataset sample_mixture(const Eigen::MatrixXd& means, double sigma, int n, Rng& rng) {
    LabeledDataset d;
    d.num_classes = static_cast<int>(means.rows());
    d.features.resize(n, means.cols());
    d.labels.resize(static_cast<std::size_t>(n));
    d.oracle_posterior = Eigen::MatrixXd(n, means.rows());
    for (int i = 0; i < n; ++i) {
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(means.rows())));
        const Eigen::VectorXd x = detail::draw_gaussian(rng, means.row(y).transpose(), sigma);
        d.features.row(i) = x.transpose();
        d.oracle_posterior->row(i) = detail::gaussian_posterior(x, means, sigma).transpose();
        d.labels[static_cast<std::size_t>(i)] = y;
    }
    return d;
}

inline LabeledDataset gen_mixture(const MixtureParams& p, std::uint64_t seed) {
    Rng rng(seed);
    return sample_mixture(mixture_means(p), p.sigma, p.n, rng);
}

/// Human Selection Frequency stand-in: fraction of m categorical draws from
/// each posterior row that hit the assigned label.
inline std::vector<double> simulate_hsf(const Eigen::MatrixXd& posterior, const std::vector<int>& labels, int annotators,
                                        std::uint64_t seed) {
    if (annotators < 1) throw ArgumentError("simulate_hsf: annotator count must be >= 1");
    if (static_cast<std::size_t>(posterior.rows()) != labels.size())
        throw ShapeError("simulate_hsf: posterior rows do not match labels");
    Rng rng(seed);
    std::vector<double> hsf(labels.size());
    std::vector<double> row(static_cast<std::size_t>(posterior.cols()));
    for (Eigen::Index i = 0; i < posterior.rows(); ++i) {
        for (Eigen::Index k = 0; k < posterior.cols(); ++k) row[static_cast<std::size_t>(k)] = posterior(i, k);
        int hits = 0;
        for (int a = 0; a < annotators; ++a)
            hits += static_cast<int>(rng.categorical(row)) == labels[static_cast<std::size_t>(i)];
        hsf[static_cast<std::size_t>(i)] = static_cast<double>(hits) / annotators;
    }
    return hsf;
}

/// Labeled source domain plus unlabeled target; hidden target labels are
/// for evaluation only.
struct DomainPair {
    LabeledDataset source;
    Eigen::MatrixXd target_features;
    std::vector<int> target_hidden_labels;
};

/// Source from the base mixture; target from the same mixture with every mean
/// rotated by `rotation_angle` in the (f0, f1) plane and moved `mean_shift`
/// along the unit diagonal.
inline DomainPair gen_domain_shift(const MixtureParams& base, double rotation_angle, double mean_shift,
                                   std::uint64_t seed) {
    const Eigen::MatrixXd means = mixture_means(base);
    Eigen::MatrixXd shifted = means;
    const double c = std::cos(rotation_angle);
    const double s = std::sin(rotation_angle);
    const Eigen::VectorXd diagonal = Eigen::VectorXd::Ones(base.dim).normalized();
    for (Eigen::Index k = 0; k < means.rows(); ++k) {
        const double a = means(k, 0);
        const double b = means(k, 1);
        shifted(k, 0) = c * a - s * b;
        shifted(k, 1) = s * a + c * b;
        shifted.row(k) += mean_shift * diagonal.transpose();
    }
    Rng rng(seed);
    DomainPair pair;
    pair.source = sample_mixture(means, base.sigma, base.n, rng);
    LabeledDataset target = sample_mixture(shifted, base.sigma, base.n, rng);
    pair.target_features = std::move(target.features);
    pair.target_hidden_labels = std::move(target.labels);
    return pair;
}

enum class DegradationKind { contrast, noise };

struct DegradationSpec {
    DegradationKind kind = DegradationKind::contrast;
    double level = 1.0;  // contrast in (0, 1], noise amplitude >= 0
};

/// contrast: c x + (1 - c) mean(X) per feature. noise: x + U(-level, level).
inline Eigen::MatrixXd degrade(const Eigen::MatrixXd& x, const DegradationSpec& spec, std::uint64_t seed) {
    if (spec.kind == DegradationKind::contrast) {
        if (!(spec.level > 0.0 && spec.level <= 1.0))
            throw ArgumentError("degrade: contrast level must be in (0, 1], got " + std::to_string(spec.level));
        if (spec.level == 1.0) return x;
        const Eigen::RowVectorXd mean = x.colwise().mean();
        Eigen::MatrixXd out = spec.level * x;
        out.rowwise() += (1.0 - spec.level) * mean;
        return out;
    }
    if (!(spec.level >= 0.0)) throw ArgumentError("degrade: noise level must be >= 0");
    if (spec.level == 0.0) return x;
    Rng rng(seed);
    Eigen::MatrixXd out = x;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += rng.uniform(-spec.level, spec.level);
    return out;
}

}  // namespace avh
