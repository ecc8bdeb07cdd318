#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "avh/dataset_io.hpp"
#include "avh/errors.hpp"
#include "avh/geometry.hpp"
#include "avh/synthdata.hpp"
#include "avh/tinynet.hpp"

namespace avh {

struct SelectionThresholds {
    double portion = 0.0;
    std::vector<double> lambda;
    std::vector<double> beta;  // empty in softmax mode
};

/// One entry per target sample: a class index, or nullopt when not selected.
using PseudoLabels = std::vector<std::optional<int>>;

namespace detail {

inline void check_portion(double portion, const char* fn) {
    if (!(portion > 0.0 && portion <= 1.0))
        throw ArgumentError(std::string(fn) + ": portion must be in (0, 1], got " + std::to_string(portion));
}

/// 1-based rank position ceil(p * n); the small slack keeps products such as
/// (2/3) * 3 from rounding up past an integer.
inline std::size_t rank_position(double portion, std::size_t n) {
    const double raw = portion * static_cast<double>(n);
    auto pos = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
    return std::clamp<std::size_t>(pos, 1, n);
}

/// Per-class value at rank ceil(p * n_k) in descending order; 1 for empty classes.
inline std::vector<double> ranked_thresholds(const Eigen::MatrixXd& scores, const std::vector<int>& predicted,
                                             double portion) {
    const auto classes = static_cast<std::size_t>(scores.cols());
    std::vector<std::vector<double>> per_class(classes);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const int k = predicted[static_cast<std::size_t>(i)];
        per_class[static_cast<std::size_t>(k)].push_back(scores(i, k));
    }
    std::vector<double> out(classes, 1.0);
    for (std::size_t k = 0; k < classes; ++k) {
        auto& v = per_class[k];
        if (v.empty()) continue;
        std::sort(v.begin(), v.end(), std::greater<>());
        out[k] = v[rank_position(portion, v.size()) - 1];
    }
    return out;
}

inline int argmax_ratio(const Eigen::MatrixXd& probs, Eigen::Index i, std::span<const double> lambda) {
    int best = 0;
    double best_ratio = probs(i, 0) / lambda[0];
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
        const double r = probs(i, c) / lambda[static_cast<std::size_t>(c)];
        if (r > best_ratio) best = static_cast<int>(c), best_ratio = r;
    }
    return best;
}

inline void check_lambda(const Eigen::MatrixXd& probs, std::span<const double> lambda, const char* fn) {
    if (lambda.size() != static_cast<std::size_t>(probs.cols()))
        throw ShapeError(std::string(fn) + ": lambda length must equal the class count");
    for (double l : lambda)
        if (!(l > 0.0)) throw ArgumentError(std::string(fn) + ": lambda entries must be positive");
}

}  // namespace detail

inline std::vector<double> compute_lambda(const Eigen::MatrixXd& probs, double portion) {
    detail::check_portion(portion, "compute_lambda");
    const std::vector<int> predicted = argmax_rows(probs);
    return detail::ranked_thresholds(probs, predicted, portion);
}

inline std::vector<double> compute_beta(const Eigen::MatrixXd& avc_scores, const std::vector<int>& predicted,
                                        double portion) {
    detail::check_portion(portion, "compute_beta");
    if (predicted.size() != static_cast<std::size_t>(avc_scores.rows()))
        throw ShapeError("compute_beta: predicted classes do not match AVC rows");
    for (int k : predicted)
        if (k < 0 || k >= avc_scores.cols()) throw IndexError("compute_beta: predicted class out of range");
    return detail::ranked_thresholds(avc_scores, predicted, portion);
}

/// k = argmax_c p(c|x) / lambda_c, kept only when p(k|x) > lambda_k.
inline PseudoLabels pseudo_label_softmax(const Eigen::MatrixXd& probs, std::span<const double> lambda) {
    detail::check_lambda(probs, lambda, "pseudo_label_softmax");
    PseudoLabels out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int k = detail::argmax_ratio(probs, i, lambda);
        if (probs(i, k) > lambda[static_cast<std::size_t>(k)]) out[static_cast<std::size_t>(i)] = k;
    }
    return out;
}

/// Same class choice as the softmax solver, but kept only when AVC(k|x) > beta_k.
inline PseudoLabels pseudo_label_avh(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& avc_scores,
                                     std::span<const double> lambda, std::span<const double> beta) {
    detail::check_lambda(probs, lambda, "pseudo_label_avh");
    if (avc_scores.rows() != probs.rows() || avc_scores.cols() != probs.cols())
        throw ShapeError("pseudo_label_avh: AVC scores must match the probability shape");
    if (beta.size() != lambda.size()) throw ShapeError("pseudo_label_avh: beta length must equal the class count");
    PseudoLabels out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int k = detail::argmax_ratio(probs, i, lambda);
        if (avc_scores(i, k) > beta[static_cast<std::size_t>(k)]) out[static_cast<std::size_t>(i)] = k;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Target scoring

/// Network outputs on unlabeled target features. A zero embedding is treated
/// as equidistant (pi/2) from every class, giving uniform AVC.
struct TargetScores {
    Eigen::MatrixXd embeddings;
    Eigen::MatrixXd probs;
    Eigen::MatrixXd avc;
    std::vector<int> predicted;
};

inline TargetScores score_targets(const Model& model, const Eigen::MatrixXd& features) {
    const ForwardResult fr = forward(model, features);
    TargetScores t;
    t.probs = softmax_rows(fr.logits);
    t.predicted = argmax_rows(t.probs);
    const ClassifierWeights w = model.classifier_weights();
    t.avc.resize(fr.embeddings.rows(), model.classes());
    for (Eigen::Index i = 0; i < fr.embeddings.rows(); ++i) {
        if (fr.embeddings.row(i).squaredNorm() == 0.0)
            t.avc.row(i).setConstant(1.0 / model.classes());
        else
            t.avc.row(i) = avc(fr.embeddings.row(i).transpose(), w).transpose();
    }
    t.embeddings = fr.embeddings;
    return t;
}

enum class SelfTrainMode { softmax, avh };

inline std::string to_string(SelfTrainMode m) { return m == SelfTrainMode::softmax ? "softmax" : "avh"; }

inline SelfTrainMode self_train_mode_from_string(const std::string& s) {
    if (s == "softmax") return SelfTrainMode::softmax;
    if (s == "avh") return SelfTrainMode::avh;
    throw ArgumentError("unknown self-training mode '" + s + "'");
}

/// Labeling path: sees target features only.
struct LabelingResult {
    SelectionThresholds thresholds;
    PseudoLabels labels;
    TargetScores scores;
};

inline LabelingResult estimate_pseudo_labels(const Model& model, const Eigen::MatrixXd& target_features,
                                             SelfTrainMode mode, double portion,
                                             std::optional<double> beta_portion = std::nullopt) {
    LabelingResult r;
    r.scores = score_targets(model, target_features);
    r.thresholds.portion = portion;
    r.thresholds.lambda = compute_lambda(r.scores.probs, portion);
    if (mode == SelfTrainMode::softmax) {
        r.labels = pseudo_label_softmax(r.scores.probs, r.thresholds.lambda);
    } else {
        r.thresholds.beta = compute_beta(r.scores.avc, r.scores.predicted, beta_portion.value_or(portion));
        r.labels = pseudo_label_avh(r.scores.probs, r.scores.avc, r.thresholds.lambda, r.thresholds.beta);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Evaluation path

struct SelectionSummary {
    std::size_t selected = 0;
    std::optional<double> tp_rate;
    std::optional<double> mean_avh;
    std::optional<double> mean_confidence;
    std::optional<double> mean_norm;
};

struct RoundStats {
    int round = 0;  // 1-based
    double portion = 0.0;
    std::vector<SelectionSummary> per_class;  // indexed by pseudo-label
    SelectionSummary all;
    double target_accuracy = 0.0;
};

/// Summary over selected samples, optionally restricted to one pseudo-label.
/// `reports[i]` describes sample i against its pseudo-label.
inline SelectionSummary selection_summary(const PseudoLabels& selected, const std::vector<int>& hidden_labels,
                                          const std::vector<HardnessReport>& reports,
                                          std::optional<int> only_class = std::nullopt) {
    if (selected.size() != hidden_labels.size() || selected.size() != reports.size())
        throw ShapeError("selection_summary: pseudo-labels, hidden labels and reports differ in length");
    SelectionSummary s;
    double hits = 0.0, avh_sum = 0.0, conf_sum = 0.0, norm_sum = 0.0;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        if (!selected[i] || (only_class && *selected[i] != *only_class)) continue;
        ++s.selected;
        hits += *selected[i] == hidden_labels[i] ? 1.0 : 0.0;
        avh_sum += reports[i].avh;
        conf_sum += reports[i].model_confidence;
        norm_sum += reports[i].norm;
    }
    if (s.selected > 0) {
        const double n = static_cast<double>(s.selected);
        s.tp_rate = hits / n;
        s.mean_avh = avh_sum / n;
        s.mean_confidence = conf_sum / n;
        s.mean_norm = norm_sum / n;
    }
    return s;
}

inline RoundStats selection_stats(const PseudoLabels& selected, const std::vector<int>& hidden_labels,
                                  const std::vector<HardnessReport>& reports, int classes) {
    RoundStats r;
    for (int k = 0; k < classes; ++k) r.per_class.push_back(selection_summary(selected, hidden_labels, reports, k));
    r.all = selection_summary(selected, hidden_labels, reports);
    return r;
}

/// Per-sample reports against the pseudo-label (unselected samples get an
/// empty report and are ignored by the summaries).
inline std::vector<HardnessReport> selected_reports(const Model& model, const TargetScores& scores,
                                                    const PseudoLabels& labels) {
    const ClassifierWeights w = model.classifier_weights();
    std::vector<HardnessReport> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) out[i] = report_or_equidistant(scores.embeddings.row(static_cast<Eigen::Index>(i)).transpose(), w, *labels[i]);
    return out;
}

inline double target_accuracy(const Model& model, const Eigen::MatrixXd& features, const std::vector<int>& hidden_labels) {
    const std::vector<int> pred = predict(model, features);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == hidden_labels[i];
    return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Rounds

struct PortionSchedule {
    double initial = 0.2;
    double step = 0.05;
    double max = 0.5;

    void validate() const {
        detail::check_portion(initial, "PortionSchedule");
        detail::check_portion(max, "PortionSchedule");
        if (!(step >= 0.0)) throw ArgumentError("PortionSchedule: step must be >= 0");
        if (max < initial) throw ArgumentError("PortionSchedule: max must be >= initial");
    }

    /// Portion for a 0-based round index.
    double at(int round) const { return std::min(initial + round * step, max); }
};

struct SelfTrainConfig {
    int rounds = 5;
    PortionSchedule schedule;
    std::optional<double> beta_portion;  // defaults to the lambda portion
    TrainConfig retrain;                 // per-round retraining; seed is offset by the round index

    void validate() const {
        if (rounds < 1) throw ArgumentError("SelfTrainConfig: rounds must be >= 1");
        schedule.validate();
        if (beta_portion) detail::check_portion(*beta_portion, "SelfTrainConfig.beta_portion");
        retrain.validate();
    }
};

struct SelfTrainResult {
    Model model;
    std::vector<RoundStats> rounds;
};

/// Alternates pseudo-label estimation and warm-started retraining, starting
/// from `source_model`. Hidden target labels feed only the statistics.
inline SelfTrainResult self_train(const DomainPair& pair, SelfTrainMode mode, const Model& source_model,
                                  const SelfTrainConfig& config) {
    config.validate();
    if (pair.target_features.cols() != source_model.input_dim())
        throw ShapeError("self_train: target dimension does not match the model");
    if (static_cast<std::size_t>(pair.target_features.rows()) != pair.target_hidden_labels.size())
        throw ShapeError("self_train: hidden label count does not match the target set");

    SelfTrainResult result{source_model, {}};
    for (int r = 0; r < config.rounds; ++r) {
        const double portion = config.schedule.at(r);
        const LabelingResult lab =
            estimate_pseudo_labels(result.model, pair.target_features, mode, portion, config.beta_portion);

        SelectedTargets chosen;
        std::size_t count = 0;
        for (const auto& l : lab.labels) count += l.has_value();
        chosen.features.resize(static_cast<Eigen::Index>(count), pair.target_features.cols());
        for (std::size_t i = 0, j = 0; i < lab.labels.size(); ++i) {
            if (!lab.labels[i]) continue;
            chosen.features.row(static_cast<Eigen::Index>(j++)) = pair.target_features.row(static_cast<Eigen::Index>(i));
            chosen.labels.push_back(*lab.labels[i]);
        }

        RoundStats stats = selection_stats(lab.labels, pair.target_hidden_labels,
                                           selected_reports(result.model, lab.scores, lab.labels),
                                           source_model.classes());
        TrainConfig cfg = config.retrain;
        cfg.seed = config.retrain.seed + static_cast<std::uint64_t>(r);
        result.model = train_weighted(std::move(result.model), pair.source, chosen, cfg);

        stats.round = r + 1;
        stats.portion = portion;
        stats.target_accuracy = target_accuracy(result.model, pair.target_features, pair.target_hidden_labels);
        result.rounds.push_back(std::move(stats));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Round log CSV: mode, then the per-round columns; class rows followed by an
// `all` row. Absent means (no selection) are empty cells.

inline constexpr const char* kRoundLogHeader = "mode,round,portion,class,selected,tp_rate,mean_avh,mean_conf,mean_norm,target_acc";

inline void append_round_log(std::ostream& out, SelfTrainMode mode, const std::vector<RoundStats>& rounds) {
    auto cell = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); };
    auto row = [&](const RoundStats& r, const std::string& cls, const SelectionSummary& s) {
        out << to_string(mode) << ',' << r.round << ',' << csv::format_double(r.portion) << ',' << cls << ','
            << s.selected << ',' << cell(s.tp_rate) << ',' << cell(s.mean_avh) << ',' << cell(s.mean_confidence) << ','
            << cell(s.mean_norm) << ',' << csv::format_double(r.target_accuracy) << '\n';
    };
    for (const RoundStats& r : rounds) {
        for (std::size_t k = 0; k < r.per_class.size(); ++k) row(r, std::to_string(k), r.per_class[k]);
        row(r, "all", r.all);
    }
}

}  // namespace avh
