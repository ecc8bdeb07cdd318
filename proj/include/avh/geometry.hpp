#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "avh/errors.hpp"

namespace avh {

using FeatureVector = Eigen::VectorXd;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;
using MatrixRef = Eigen::Ref<const Eigen::MatrixXd>;

/// Final-layer classifier: row k is the weight vector w_k of class k.
///
/// Construction validates C >= 2 and that every row has positive norm, so
/// the scoring functions below only check the feature side.
class ClassifierWeights {
public:
    explicit ClassifierWeights(Eigen::MatrixXd rows) : rows_(std::move(rows)) {
        if (rows_.rows() < 2) throw ArgumentError("ClassifierWeights: need at least 2 classes");
        if (rows_.cols() < 1) throw ArgumentError("ClassifierWeights: feature dimension must be >= 1");
        for (Eigen::Index k = 0; k < rows_.rows(); ++k) {
            const double n = rows_.row(k).norm();
            if (!(n > 0.0) || !std::isfinite(n))
                throw DomainError("ClassifierWeights: row " + std::to_string(k) +
                                  " has non-positive or non-finite norm");
        }
    }

    const Eigen::MatrixXd& matrix() const noexcept { return rows_; }
    Eigen::Index classes() const noexcept { return rows_.rows(); }
    Eigen::Index dim() const noexcept { return rows_.cols(); }
    auto row(Eigen::Index k) const { return rows_.row(k).transpose(); }

private:
    Eigen::MatrixXd rows_;
};

/// Per-sample scores for one (x, W, y).
struct HardnessReport {
    double avh = 0.0;
    Eigen::VectorXd avc;
    double model_confidence = 0.0;
    double norm = 0.0;
};

namespace detail {

inline void check_dim(const VectorRef& x, const ClassifierWeights& w, const char* fn) {
    if (x.size() != w.dim())
        throw ShapeError(std::string(fn) + ": feature dimension " + std::to_string(x.size()) +
                         " does not match classifier dimension " + std::to_string(w.dim()));
}

inline void check_class(Eigen::Index y, Eigen::Index classes, const char* fn) {
    if (y < 0 || y >= classes)
        throw IndexError(std::string(fn) + ": class index " + std::to_string(y) +
                         " outside [0, " + std::to_string(classes) + ")");
}

}  // namespace detail

/// Angle in radians between u and v, in [0, pi].
inline double angular_distance(const VectorRef& u, const VectorRef& v) {
    if (u.size() != v.size()) throw ShapeError("angular_distance: dimension mismatch");
    const double nu = u.norm();
    const double nv = v.norm();
    if (!(nu > 0.0)) throw DomainError("angular_distance: argument 'u' has zero norm");
    if (!(nv > 0.0)) throw DomainError("angular_distance: argument 'v' has zero norm");
    // Rounding can push the normalized dot product just past +-1.
    const double cosine = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
    return std::acos(cosine);
}

/// Angles from x to every class weight.
inline Eigen::VectorXd class_angles(const VectorRef& x, const ClassifierWeights& w) {
    detail::check_dim(x, w, "class_angles");
    Eigen::VectorXd angles(w.classes());
    for (Eigen::Index k = 0; k < w.classes(); ++k) angles[k] = angular_distance(x, w.row(k));
    return angles;
}

/// Angular Visual Hardness: A(x, w_y) / sum_k A(x, w_k).
inline double avh_score(const VectorRef& x, const ClassifierWeights& w, Eigen::Index y) {
    detail::check_class(y, w.classes(), "avh_score");
    const Eigen::VectorXd angles = class_angles(x, w);
    const double total = angles.sum();
    if (!(total > 0.0)) throw DomainError("avh_score: x is collinear with every class weight");
    return angles[y] / total;
}

/// Angular Visual Confidence: (pi - A(x, w_c)) normalized over classes.
inline Eigen::VectorXd avc(const VectorRef& x, const ClassifierWeights& w) {
    const Eigen::VectorXd closeness = (std::numbers::pi - class_angles(x, w).array()).matrix();
    const double total = closeness.sum();
    if (!(total > 0.0)) throw DomainError("avc: x is antipodal to every class weight");
    return closeness / total;
}

/// Bias-free logits w_k . x.
inline Eigen::VectorXd logits(const VectorRef& x, const ClassifierWeights& w) {
    detail::check_dim(x, w, "logits");
    return w.matrix() * x;
}

/// Max-shifted softmax.
inline Eigen::VectorXd softmax(const VectorRef& logits) {
    const double top = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - top).exp().matrix();
    return e / e.sum();
}

/// softmax(logits)[y].
inline double model_confidence(const VectorRef& logits, Eigen::Index y) {
    detail::check_class(y, logits.size(), "model_confidence");
    if (!logits.allFinite()) throw DomainError("model_confidence: non-finite logit");
    return softmax(logits)[y];
}

inline double embedding_norm(const VectorRef& x) { return x.norm(); }

inline HardnessReport hardness_report(const VectorRef& x, const ClassifierWeights& w, Eigen::Index y) {
    HardnessReport r;
    r.avh = avh_score(x, w, y);
    r.avc = avc(x, w);
    r.model_confidence = model_confidence(logits(x, w), y);
    r.norm = embedding_norm(x);
    return r;
}

/// Hardness report of one embedding against class y, treating a zero
/// embedding as pi/2 from every class (AVH = AVC = confidence = 1/C).
inline HardnessReport report_or_equidistant(const VectorRef& embedding, const ClassifierWeights& w, int y) {
    if (embedding.squaredNorm() > 0.0) return hardness_report(embedding, w, y);
    HardnessReport r;
    r.avh = 1.0 / static_cast<double>(w.classes());
    r.avc = Eigen::VectorXd::Constant(w.classes(), r.avh);
    r.model_confidence = r.avh;
    r.norm = 0.0;
    return r;
}

struct SweepPoint {
    double alpha = 0.0;
    double confidence = 0.0;
    double avh = 0.0;
};

/// Confidence and AVH of alpha * x for each alpha. AVH is constant in alpha.
inline std::vector<SweepPoint> norm_sweep(const VectorRef& x, const ClassifierWeights& w, Eigen::Index y,
                                          std::span<const double> alphas) {
    detail::check_class(y, w.classes(), "norm_sweep");
    for (double a : alphas)
        if (!(a > 0.0) || !std::isfinite(a))
            throw ArgumentError("norm_sweep: alpha must be positive and finite, got " + std::to_string(a));
    std::vector<SweepPoint> out;
    out.reserve(alphas.size());
    for (double a : alphas) {
        const Eigen::VectorXd scaled = a * x;
        out.push_back({a, model_confidence(logits(scaled, w), y), avh_score(scaled, w, y)});
    }
    return out;
}

}  // namespace avh
