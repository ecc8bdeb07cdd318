#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "avh/dataset.hpp"
#include "avh/errors.hpp"
#include "avh/geometry.hpp"
#include "avh/rng.hpp"

namespace avh {

/// Layer widths (input, hidden..., embedding, classes) plus the init seed.
///
/// `(3, 2, 2)` is one 3->2 affine+ReLU layer and a 2x2 bias-free classifier.
/// `(D, C)` has no hidden layer; the input itself is the embedding.
struct ModelSpec {
    std::vector<int> layer_dims;
    std::uint64_t seed = 0;

    void validate() const {
        if (layer_dims.size() < 2) throw ArgumentError("ModelSpec: need at least input and class dims");
        for (int d : layer_dims)
            if (d < 1) throw ArgumentError("ModelSpec: every layer dim must be >= 1");
    }
};

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
};

/// Affine+ReLU stack followed by a bias-free classifier whose rows are w_k.
struct Model {
    std::vector<int> layer_dims;
    std::vector<DenseLayer> hidden;
    Eigen::MatrixXd classifier;  // C x D_emb
    int epoch = 0;

    int input_dim() const { return layer_dims.front(); }
    int embedding_dim() const { return layer_dims[layer_dims.size() - 2]; }
    int classes() const { return layer_dims.back(); }

    ClassifierWeights classifier_weights() const { return ClassifierWeights(classifier); }
};

namespace detail {

template <typename Dense>
inline bool same_bits(const Dense& a, const Dense& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace detail

/// Exact equality of architecture, parameters and epoch counter.
inline bool identical(const Model& a, const Model& b) {
    if (a.layer_dims != b.layer_dims || a.epoch != b.epoch || a.hidden.size() != b.hidden.size()) return false;
    for (std::size_t l = 0; l < a.hidden.size(); ++l)
        if (!detail::same_bits(a.hidden[l].weight, b.hidden[l].weight) ||
            !detail::same_bits(a.hidden[l].bias, b.hidden[l].bias))
            return false;
    return detail::same_bits(a.classifier, b.classifier);
}

/// He-normal weights (variance 2 / fan_in), zero biases.
inline Model init_model(const ModelSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Model m;
    m.layer_dims = spec.layer_dims;
    const std::size_t n = spec.layer_dims.size();
    auto draw = [&](int rows, int cols) {
        Eigen::MatrixXd w(rows, cols);
        const double sd = std::sqrt(2.0 / cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) w(r, c) = rng.normal(0.0, sd);
        return w;
    };
    for (std::size_t l = 0; l + 2 < n; ++l) {
        DenseLayer layer;
        layer.weight = draw(spec.layer_dims[l + 1], spec.layer_dims[l]);
        layer.bias = Eigen::VectorXd::Zero(spec.layer_dims[l + 1]);
        m.hidden.push_back(std::move(layer));
    }
    m.classifier = draw(spec.layer_dims[n - 1], spec.layer_dims[n - 2]);
    return m;
}

/// Penultimate activations and logits, one row per sample.
struct ForwardResult {
    Eigen::MatrixXd embeddings;  // N x D_emb
    Eigen::MatrixXd logits;      // N x C
};

namespace detail {

struct ForwardCache {
    std::vector<Eigen::MatrixXd> activations;  // activations[0] = input, back() = embeddings
    std::vector<Eigen::MatrixXd> preacts;      // one per hidden layer
    Eigen::MatrixXd logits;
};

inline ForwardCache forward_cached(const Model& model, const MatrixRef& x) {
    if (x.cols() != model.input_dim())
        throw ShapeError("forward: input dimension " + std::to_string(x.cols()) + " does not match model input " +
                         std::to_string(model.input_dim()));
    ForwardCache cache;
    cache.activations.reserve(model.hidden.size() + 1);
    cache.activations.emplace_back(x);
    for (const DenseLayer& layer : model.hidden) {
        Eigen::MatrixXd z = cache.activations.back() * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        cache.activations.emplace_back(z.cwiseMax(0.0));
        cache.preacts.push_back(std::move(z));
    }
    cache.logits = cache.activations.back() * model.classifier.transpose();
    return cache;
}

}  // namespace detail

inline ForwardResult forward(const Model& model, const MatrixRef& x) {
    detail::ForwardCache cache = detail::forward_cached(model, x);
    return {std::move(cache.activations.back()), std::move(cache.logits)};
}

/// Row-wise argmax, ties to the lowest index.
inline std::vector<int> argmax_rows(const MatrixRef& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < scores.cols(); ++k)
            if (scores(i, k) > scores(i, best)) best = k;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

inline Eigen::MatrixXd softmax_rows(const MatrixRef& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) p.row(i) = softmax(logits.row(i).transpose()).transpose();
    return p;
}

inline std::vector<int> predict(const Model& model, const MatrixRef& x) { return argmax_rows(forward(model, x).logits); }

inline double accuracy(const Model& model, const LabeledDataset& data) {
    if (data.size() == 0) return 0.0;
    const std::vector<int> pred = predict(model, data.features);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Losses

struct LogitLoss {
    double loss = 0.0;
    Eigen::MatrixXd grad_logits;  // N x C
};

/// Mean softmax cross-entropy; gradient (softmax - onehot) / N.
inline LogitLoss loss_softmax_ce(const MatrixRef& logits, const std::vector<int>& labels) {
    const Eigen::Index n = logits.rows();
    if (static_cast<std::size_t>(n) != labels.size()) throw ShapeError("loss_softmax_ce: label count mismatch");
    if (!logits.allFinite()) throw DomainError("loss_softmax_ce: non-finite logits");
    LogitLoss out;
    out.grad_logits.resize(n, logits.cols());
    if (n == 0) return out;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        detail::check_class(y, logits.cols(), "loss_softmax_ce");
        const double top = logits.row(i).maxCoeff();
        const Eigen::ArrayXd shifted = logits.row(i).transpose().array() - top;
        const double lse = std::log(shifted.exp().sum());
        total += lse - shifted[y];
        out.grad_logits.row(i) = (shifted - lse).exp().matrix().transpose();
        out.grad_logits(i, y) -= 1.0;
    }
    out.loss = total / static_cast<double>(n);
    out.grad_logits /= static_cast<double>(n);
    return out;
}

enum class AvhLossForm {
    negative_log,     // mean of -log angular-softmax of the target
    probability_sum,  // the printed sum of target angular-softmax probabilities
};

struct AngularLoss {
    double loss = 0.0;
    Eigen::MatrixXd grad_embeddings;  // N x D
    Eigen::MatrixXd grad_weights;     // C x D
    Eigen::Index skipped = 0;         // zero-norm rows ignored (only with skip_zero_rows)
};

inline constexpr double kAvhLossClamp = 1e-7;

/// Angular softmax loss on logits s * (pi - A(x, w_k)).
///
/// The arccos argument is clamped to [-1 + 1e-7, 1 - 1e-7] so the gradient
/// stays finite. With `skip_zero_rows` zero embeddings (dead ReLU units) are
/// dropped from the batch instead of raising; the mean is over kept rows.
inline AngularLoss loss_avh(const MatrixRef& embeddings, const MatrixRef& weights, const std::vector<int>& labels,
                            double scale_s, AvhLossForm form = AvhLossForm::negative_log,
                            bool skip_zero_rows = false) {
    const Eigen::Index n = embeddings.rows();
    const Eigen::Index classes = weights.rows();
    if (static_cast<std::size_t>(n) != labels.size()) throw ShapeError("loss_avh: label count mismatch");
    if (embeddings.cols() != weights.cols()) throw ShapeError("loss_avh: embedding / weight dimension mismatch");
    if (!(scale_s > 0.0)) throw ArgumentError("loss_avh: scale_s must be positive");

    Eigen::VectorXd wnorm(classes);
    for (Eigen::Index k = 0; k < classes; ++k) {
        wnorm[k] = weights.row(k).norm();
        if (!(wnorm[k] > 0.0)) throw DomainError("loss_avh: classifier row " + std::to_string(k) + " has zero norm");
    }

    AngularLoss out;
    out.grad_embeddings = Eigen::MatrixXd::Zero(n, embeddings.cols());
    out.grad_weights = Eigen::MatrixXd::Zero(classes, weights.cols());

    std::vector<Eigen::Index> kept;
    kept.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        if (embeddings.row(i).norm() > 0.0) {
            kept.push_back(i);
        } else if (skip_zero_rows) {
            ++out.skipped;
        } else {
            throw DomainError("loss_avh: embedding " + std::to_string(i) + " has zero norm");
        }
    }
    if (kept.empty()) return out;

    const double lo = -1.0 + kAvhLossClamp;
    const double hi = 1.0 - kAvhLossClamp;
    const bool negative_log = form == AvhLossForm::negative_log;
    const double scale = negative_log ? 1.0 / static_cast<double>(kept.size()) : 1.0;

    Eigen::VectorXd cosine(classes), theta(classes), dtheta_dcos(classes), z(classes), dloss_dtheta(classes);
    double total = 0.0;
    for (Eigen::Index i : kept) {
        const int y = labels[static_cast<std::size_t>(i)];
        detail::check_class(y, classes, "loss_avh");
        const auto x = embeddings.row(i).transpose();
        const double xnorm = x.norm();
        for (Eigen::Index k = 0; k < classes; ++k) {
            const double raw = weights.row(k).dot(x) / (xnorm * wnorm[k]);
            const bool clamped = raw < lo || raw > hi;
            cosine[k] = std::clamp(raw, lo, hi);
            theta[k] = std::acos(cosine[k]);
            dtheta_dcos[k] = clamped ? 0.0 : -1.0 / std::sqrt(1.0 - cosine[k] * cosine[k]);
            z[k] = scale_s * (std::numbers::pi - theta[k]);
        }
        const double top = z.maxCoeff();
        const Eigen::ArrayXd e = (z.array() - top).exp();
        const double denom = e.sum();
        const Eigen::ArrayXd prob = e / denom;

        // dL/dz_k, then dz/dtheta = -s.
        Eigen::ArrayXd dloss_dz(classes);
        if (negative_log) {
            total += std::log(denom) - (z[y] - top);
            dloss_dz = prob;
            dloss_dz[y] -= 1.0;
        } else {
            total += prob[y];
            dloss_dz = -prob[y] * prob;
            dloss_dz[y] += prob[y];
        }
        dloss_dtheta = (-scale_s * dloss_dz).matrix();

        for (Eigen::Index k = 0; k < classes; ++k) {
            const double g = scale * dloss_dtheta[k] * dtheta_dcos[k];
            if (g == 0.0) continue;
            const auto w = weights.row(k).transpose();
            // d cos / dx and d cos / dw for cos = <x, w> / (|x| |w|).
            out.grad_embeddings.row(i) += g * (w / (xnorm * wnorm[k]) - cosine[k] * x / (xnorm * xnorm)).transpose();
            out.grad_weights.row(k) += g * (x / (xnorm * wnorm[k]) - cosine[k] * w / (wnorm[k] * wnorm[k])).transpose();
        }
    }
    out.loss = total * scale;
    return out;
}

// ---------------------------------------------------------------------------
// Backprop

/// Gradient (or velocity) with the same shapes as a Model's parameters.
struct ParamGrads {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    Eigen::MatrixXd classifier;

    static ParamGrads zeros_like(const Model& m) {
        ParamGrads g;
        for (const DenseLayer& l : m.hidden) {
            g.weights.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
            g.biases.push_back(Eigen::VectorXd::Zero(l.bias.size()));
        }
        g.classifier = Eigen::MatrixXd::Zero(m.classifier.rows(), m.classifier.cols());
        return g;
    }
};

namespace detail {

inline ParamGrads backprop(const Model& model, const ForwardCache& cache, Eigen::MatrixXd grad_embeddings,
                           Eigen::MatrixXd grad_classifier) {
    ParamGrads g;
    g.classifier = std::move(grad_classifier);
    g.weights.resize(model.hidden.size());
    g.biases.resize(model.hidden.size());
    Eigen::MatrixXd upstream = std::move(grad_embeddings);
    for (std::size_t l = model.hidden.size(); l-- > 0;) {
        const Eigen::MatrixXd dz = upstream.cwiseProduct((cache.preacts[l].array() > 0.0).cast<double>().matrix());
        g.weights[l] = dz.transpose() * cache.activations[l];
        g.biases[l] = dz.colwise().sum().transpose();
        if (l > 0) upstream = dz * model.hidden[l].weight;
    }
    return g;
}

}  // namespace detail

enum class LossKind { softmax_ce, avh_loss };

/// Loss and parameter gradients of a batch.
struct BatchGradient {
    double loss = 0.0;
    ParamGrads grads;
};

inline BatchGradient loss_and_gradient(const Model& model, const MatrixRef& x, const std::vector<int>& labels,
                                       LossKind kind, double scale_s = 8.0, bool skip_zero_rows = false) {
    const detail::ForwardCache cache = detail::forward_cached(model, x);
    const Eigen::MatrixXd& emb = cache.activations.back();
    BatchGradient out;
    if (kind == LossKind::softmax_ce) {
        LogitLoss l = loss_softmax_ce(cache.logits, labels);
        out.loss = l.loss;
        out.grads = detail::backprop(model, cache, l.grad_logits * model.classifier, l.grad_logits.transpose() * emb);
    } else {
        AngularLoss l = loss_avh(emb, model.classifier, labels, scale_s, AvhLossForm::negative_log, skip_zero_rows);
        out.loss = l.loss;
        out.grads = detail::backprop(model, cache, std::move(l.grad_embeddings), std::move(l.grad_weights));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    int epochs = 30;
    double decay_factor = 0.1;
    int decay_period = 30;
    int batch_size = 32;
    LossKind loss_kind = LossKind::softmax_ce;
    double scale_s = 8.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ArgumentError("TrainConfig: learning_rate must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("TrainConfig: momentum must be in [0, 1)");
        if (epochs < 0) throw ArgumentError("TrainConfig: epochs must be nonnegative");
        if (!(decay_factor > 0.0 && decay_factor <= 1.0))
            throw ArgumentError("TrainConfig: decay_factor must be in (0, 1]");
        if (decay_period < 1) throw ArgumentError("TrainConfig: decay_period must be >= 1");
        if (batch_size < 1) throw ArgumentError("TrainConfig: batch_size must be >= 1");
        if (!(scale_s > 0.0)) throw ArgumentError("TrainConfig: scale_s must be positive");
    }

    /// Step-decayed rate for a 0-based epoch.
    double rate_at(int epoch) const { return learning_rate * std::pow(decay_factor, epoch / decay_period); }
};

struct EpochInfo {
    int epoch = 0;  // 1-based, counted within this call
    double learning_rate = 0.0;
    double mean_loss = 0.0;
};

using EpochHook = std::function<void(const EpochInfo&, const Model&)>;

/// Momentum SGD (v <- mu v + g; w <- w - lr v) over seeded shuffled batches.
inline Model train(Model model, const LabeledDataset& data, const TrainConfig& config, const EpochHook& hook = {}) {
    config.validate();
    if (data.size() == 0) throw ArgumentError("train: empty dataset");
    if (data.dim() != model.input_dim()) throw ShapeError("train: dataset dimension does not match model input");
    for (int y : data.labels)
        if (y < 0 || y >= model.classes()) throw ArgumentError("train: label " + std::to_string(y) + " >= classes");

    Rng rng(config.seed);
    ParamGrads velocity = ParamGrads::zeros_like(model);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    const bool angular = config.loss_kind == LossKind::avh_loss;
    Eigen::MatrixXd batch_x;
    std::vector<int> batch_y;
    for (int e = 0; e < config.epochs; ++e) {
        const double lr = config.rate_at(e);
        rng.shuffle(std::span<Eigen::Index>(order));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            batch_x.resize(static_cast<Eigen::Index>(stop - start), data.dim());
            batch_y.resize(stop - start);
            for (std::size_t j = start; j < stop; ++j) {
                batch_x.row(static_cast<Eigen::Index>(j - start)) = data.features.row(order[j]);
                batch_y[j - start] = data.labels[static_cast<std::size_t>(order[j])];
            }
            BatchGradient bg = loss_and_gradient(model, batch_x, batch_y, config.loss_kind, config.scale_s, angular);
            loss_sum += bg.loss;
            ++batches;
            for (std::size_t l = 0; l < model.hidden.size(); ++l) {
                velocity.weights[l] = config.momentum * velocity.weights[l] + bg.grads.weights[l];
                velocity.biases[l] = config.momentum * velocity.biases[l] + bg.grads.biases[l];
                model.hidden[l].weight -= lr * velocity.weights[l];
                model.hidden[l].bias -= lr * velocity.biases[l];
            }
            velocity.classifier = config.momentum * velocity.classifier + bg.grads.classifier;
            model.classifier -= lr * velocity.classifier;
        }
        ++model.epoch;
        if (hook) hook(EpochInfo{e + 1, lr, loss_sum / static_cast<double>(batches)}, model);
    }
    return model;
}

/// Pseudo-labeled target samples that passed selection.
struct SelectedTargets {
    Eigen::MatrixXd features;  // M_sel x D
    std::vector<int> labels;   // pseudo-labels
};

/// Retraining step of class-balanced self-training: cross-entropy over the
/// source set plus the selected target samples. The log(lambda) offsets are
/// constant in the weights, so only `cbst_objective` reports them.
inline Model train_weighted(Model model, const LabeledDataset& source, const SelectedTargets& selected,
                            const TrainConfig& config, const EpochHook& hook = {}) {
    if (selected.features.rows() != static_cast<Eigen::Index>(selected.labels.size()))
        throw ShapeError("train_weighted: selected feature / label count mismatch");
    if (selected.features.rows() > 0 && selected.features.cols() != source.dim())
        throw ShapeError("train_weighted: target dimension does not match source");
    if (selected.labels.empty()) return train(std::move(model), source, config, hook);

    LabeledDataset merged;
    merged.num_classes = source.num_classes;
    merged.features.resize(source.size() + selected.features.rows(), source.dim());
    merged.features.topRows(source.size()) = source.features;
    merged.features.bottomRows(selected.features.rows()) = selected.features;
    merged.labels = source.labels;
    merged.labels.insert(merged.labels.end(), selected.labels.begin(), selected.labels.end());
    return train(std::move(model), merged, config, hook);
}

/// Class-balanced self-training objective as a sum:
/// -sum_s log p(y_s | x_s) - sum_t log(p(yhat_t | x_t) / lambda_{yhat_t}).
inline double cbst_objective(const Model& model, const LabeledDataset& source, const SelectedTargets& selected,
                             std::span<const double> lambda) {
    if (lambda.size() != static_cast<std::size_t>(model.classes()))
        throw ShapeError("cbst_objective: lambda length must equal the class count");
    double total = 0.0;
    if (source.size() > 0) {
        const Eigen::MatrixXd p = softmax_rows(forward(model, source.features).logits);
        for (Eigen::Index i = 0; i < p.rows(); ++i) total -= std::log(p(i, source.labels[static_cast<std::size_t>(i)]));
    }
    if (selected.features.rows() > 0) {
        const Eigen::MatrixXd p = softmax_rows(forward(model, selected.features).logits);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const int k = selected.labels[static_cast<std::size_t>(i)];
            total -= std::log(p(i, k) / lambda[static_cast<std::size_t>(k)]);
        }
    }
    return total;
}

}  // namespace avh
