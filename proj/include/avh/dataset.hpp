#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "avh/errors.hpp"

namespace avh {

/// Feature matrix (one sample per row) with labels and optional ground truth.
struct LabeledDataset {
    Eigen::MatrixXd features;                       // N x D
    std::vector<int> labels;                        // N, each in [0, num_classes)
    int num_classes = 0;
    std::optional<Eigen::MatrixXd> oracle_posterior;  // N x C, rows sum to 1
    std::optional<std::vector<double>> hsf;           // N, in [0, 1]

    Eigen::Index size() const noexcept { return features.rows(); }
    Eigen::Index dim() const noexcept { return features.cols(); }

    /// 1 - posterior of the assigned label, or nullopt without a posterior.
    std::optional<std::vector<double>> oracle_hardness() const {
        if (!oracle_posterior) return std::nullopt;
        std::vector<double> h(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            h[i] = 1.0 - (*oracle_posterior)(static_cast<Eigen::Index>(i), labels[i]);
        return h;
    }

    void validate() const {
        if (static_cast<std::size_t>(features.rows()) != labels.size())
            throw ShapeError("LabeledDataset: " + std::to_string(features.rows()) + " feature rows but " +
                             std::to_string(labels.size()) + " labels");
        if (num_classes < 1) throw ArgumentError("LabeledDataset: num_classes must be >= 1");
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || labels[i] >= num_classes)
                throw ArgumentError("LabeledDataset: label " + std::to_string(labels[i]) + " of sample " +
                                    std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
        if (oracle_posterior) {
            if (oracle_posterior->rows() != features.rows() || oracle_posterior->cols() != num_classes)
                throw ShapeError("LabeledDataset: posterior shape does not match N x C");
        }
        if (hsf && hsf->size() != labels.size())
            throw ShapeError("LabeledDataset: hsf length does not match N");
    }
};

/// Rows `[first, first + count)` of a dataset, keeping the optional columns.
inline LabeledDataset slice(const LabeledDataset& d, Eigen::Index first, Eigen::Index count) {
    LabeledDataset out;
    out.features = d.features.middleRows(first, count);
    out.labels.assign(d.labels.begin() + first, d.labels.begin() + first + count);
    out.num_classes = d.num_classes;
    if (d.oracle_posterior) out.oracle_posterior = d.oracle_posterior->middleRows(first, count);
    if (d.hsf) out.hsf = std::vector<double>(d.hsf->begin() + first, d.hsf->begin() + first + count);
    return out;
}

}  // namespace avh
