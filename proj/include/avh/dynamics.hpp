#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "avh/dataset.hpp"
#include "avh/dataset_io.hpp"
#include "avh/errors.hpp"
#include "avh/geometry.hpp"
#include "avh/stats.hpp"
#include "avh/tinynet.hpp"

namespace avh {

/// Per-bin aggregates for one epoch. Metric fields are absent for empty bins.
struct EpochRecord {
    int epoch = 0;  // 1-based
    std::size_t bin = 0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    std::optional<double> mean_norm, std_norm;
    std::optional<double> mean_avh, std_avh;
    std::optional<double> accuracy;
    std::optional<double> mean_confidence;
};

/// Append-only table; epochs must arrive contiguously from 1 with one record
/// per bin.
class DynamicsTable {
public:
    void append(std::vector<EpochRecord> epoch_rows) {
        if (epoch_rows.empty()) throw ArgumentError("DynamicsTable: empty epoch");
        const int e = epoch_rows.front().epoch;
        if (e != last_epoch() + 1)
            throw ArgumentError("DynamicsTable: expected epoch " + std::to_string(last_epoch() + 1) + ", got " +
                                std::to_string(e));
        if (bins_ != 0 && epoch_rows.size() != bins_) throw ArgumentError("DynamicsTable: bin count changed");
        for (std::size_t b = 0; b < epoch_rows.size(); ++b)
            if (epoch_rows[b].epoch != e || epoch_rows[b].bin != b)
                throw ArgumentError("DynamicsTable: records must be one per bin in bin order");
        bins_ = epoch_rows.size();
        for (auto& r : epoch_rows) records_.push_back(std::move(r));
    }

    const std::vector<EpochRecord>& records() const { return records_; }
    std::size_t bins() const { return bins_; }
    int epochs() const { return bins_ == 0 ? 0 : static_cast<int>(records_.size() / bins_); }
    int last_epoch() const { return epochs(); }

    const EpochRecord& at(int epoch, std::size_t bin) const {
        if (epoch < 1 || epoch > epochs() || bin >= bins_) throw IndexError("DynamicsTable: no such record");
        return records_[static_cast<std::size_t>(epoch - 1) * bins_ + bin];
    }

private:
    std::vector<EpochRecord> records_;
    std::size_t bins_ = 0;
};

// ---------------------------------------------------------------------------
// Recording

enum class BinBy { hsf, oracle_hardness };

inline std::string to_string(BinBy b) { return b == BinBy::hsf ? "hsf" : "oracle_hardness"; }

inline BinBy bin_by_from_string(const std::string& s) {
    if (s == "hsf") return BinBy::hsf;
    if (s == "oracle_hardness") return BinBy::oracle_hardness;
    throw ArgumentError("unknown binning variable '" + s + "'");
}

inline std::vector<double> binning_values(const LabeledDataset& eval_set, BinBy by) {
    if (by == BinBy::hsf) {
        if (!eval_set.hsf) throw ArgumentError("record_epoch: evaluation set has no hsf column to bin by");
        return *eval_set.hsf;
    }
    if (!eval_set.oracle_posterior)
        throw ArgumentError("record_epoch: evaluation set has no oracle posterior to bin by");
    return *eval_set.oracle_hardness();
}

/// Per-sample norm, AVH and confidence against the true label, and correctness.
struct SampleMetrics {
    std::vector<double> norm, avh, confidence, correct;
};

inline SampleMetrics sample_metrics(const Model& model, const LabeledDataset& eval_set) {
    const ForwardResult fr = forward(model, eval_set.features);
    const Eigen::MatrixXd probs = softmax_rows(fr.logits);
    const std::vector<int> pred = argmax_rows(fr.logits);
    const ClassifierWeights w = model.classifier_weights();
    SampleMetrics m;
    const auto n = static_cast<std::size_t>(eval_set.size());
    m.norm.resize(n);
    m.avh.resize(n);
    m.confidence.resize(n);
    m.correct.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const int y = eval_set.labels[i];
        const HardnessReport r = report_or_equidistant(fr.embeddings.row(row).transpose(), w, y);
        m.norm[i] = r.norm;
        m.avh[i] = r.avh;
        m.confidence[i] = probs(row, y);
        m.correct[i] = pred[i] == y ? 1.0 : 0.0;
    }
    return m;
}

/// Bins the evaluation set by `bin_values` and aggregates the per-sample metrics.
inline std::vector<EpochRecord> record_epoch(const Model& model, const LabeledDataset& eval_set,
                                             std::span<const double> bin_values, std::span<const double> edges,
                                             int epoch) {
    if (bin_values.size() != static_cast<std::size_t>(eval_set.size()))
        throw ShapeError("record_epoch: binning variable length does not match the evaluation set");
    const SampleMetrics m = sample_metrics(model, eval_set);
    const stats::BinTable t = stats::bin_aggregate(
        bin_values, edges,
        {{"norm", m.norm}, {"avh", m.avh}, {"correct", m.correct}, {"confidence", m.confidence}});
    std::vector<EpochRecord> out;
    for (std::size_t b = 0; b < t.rows.size(); ++b) {
        const stats::BinRow& row = t.rows[b];
        EpochRecord r;
        r.epoch = epoch;
        r.bin = b;
        r.lo = row.lo;
        r.hi = row.hi;
        r.count = row.count;
        if (row.count > 0) {
            r.mean_norm = row.stats[0]->mean;
            r.std_norm = row.stats[0]->std;
            r.mean_avh = row.stats[1]->mean;
            r.std_avh = row.stats[1]->std;
            r.accuracy = row.stats[2]->mean;
            r.mean_confidence = row.stats[3]->mean;
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<EpochRecord> record_epoch(const Model& model, const LabeledDataset& eval_set, BinBy by,
                                             std::span<const double> edges, int epoch) {
    const std::vector<double> values = binning_values(eval_set, by);
    return record_epoch(model, eval_set, values, edges, epoch);
}

/// Count-weighted mean of a per-bin metric for every epoch (the all-samples series).
inline std::vector<double> overall_series(const DynamicsTable& table, std::optional<double> EpochRecord::*metric) {
    std::vector<double> out;
    for (int e = 1; e <= table.epochs(); ++e) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t b = 0; b < table.bins(); ++b) {
            const EpochRecord& r = table.at(e, b);
            if (r.count == 0) continue;
            sum += *(r.*metric) * static_cast<double>(r.count);
            n += r.count;
        }
        out.push_back(n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n));
    }
    return out;
}

inline void write_dynamics_csv(std::ostream& out, const DynamicsTable& table) {
    auto cell = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); };
    out << "epoch,bin,count,mean_norm,std_norm,mean_avh,std_avh,accuracy,mean_conf\n";
    for (const EpochRecord& r : table.records())
        out << r.epoch << ',' << r.bin << ',' << r.count << ',' << cell(r.mean_norm) << ',' << cell(r.std_norm) << ','
            << cell(r.mean_avh) << ',' << cell(r.std_avh) << ',' << cell(r.accuracy) << ','
            << cell(r.mean_confidence) << '\n';
}

// ---------------------------------------------------------------------------
// Curve analysis

struct PlateauMetrics {
    double early_slope = 0.0;
    double late_slope = 0.0;
    double ratio = 0.0;        // |late| / |early|; +inf when early_flat
    bool early_flat = false;   // early slope indistinguishable from 0
};

namespace detail {

/// Least-squares slope of series[first, first + count) against the epoch index.
inline double ls_slope(std::span<const double> series, std::size_t first, std::size_t count) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < count; ++i) mx += static_cast<double>(first + i), my += series[first + i];
    mx /= static_cast<double>(count);
    my /= static_cast<double>(count);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double dx = static_cast<double>(first + i) - mx;
        sxy += dx * (series[first + i] - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

}  // namespace detail

/// Slopes over the first and last `split` fraction of epochs (at least two
/// epochs each).
inline PlateauMetrics plateau_metrics(std::span<const double> series, double split) {
    if (series.size() < 4) throw ArgumentError("plateau_metrics: need at least 4 epochs");
    if (!(split > 0.0 && split <= 0.5)) throw ArgumentError("plateau_metrics: split must be in (0, 0.5]");
    const std::size_t n = series.size();
    const auto window = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(split * static_cast<double>(n) + 1e-9)));
    PlateauMetrics p;
    p.early_slope = detail::ls_slope(series, 0, window);
    p.late_slope = detail::ls_slope(series, n - window, window);
    double scale = 1.0;
    for (double v : series) scale = std::max(scale, std::abs(v));
    p.early_flat = std::abs(p.early_slope) <= 1e-12 * scale;
    p.ratio = p.early_flat ? std::numeric_limits<double>::infinity() : std::abs(p.late_slope) / std::abs(p.early_slope);
    return p;
}

namespace detail {

// Relative change (b - a) / |a|; a zero base falls back to the absolute change.
inline double relative_change(double a, double b) { return a == 0.0 ? b - a : (b - a) / std::abs(a); }

}  // namespace detail

/// First 1-based epoch t at which relative norm growth beats relative AVH
/// decrease on the three consecutive steps t -> t+1, t+1 -> t+2, t+2 -> t+3.
inline std::optional<int> phase_split(std::span<const double> norm_series, std::span<const double> avh_series) {
    if (norm_series.size() != avh_series.size()) throw ShapeError("phase_split: series lengths differ");
    if (norm_series.size() < 4) throw ArgumentError("phase_split: need at least 4 epochs");
    const std::size_t steps = norm_series.size() - 1;
    std::vector<bool> norm_wins(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        const double growth = detail::relative_change(norm_series[t], norm_series[t + 1]);
        const double drop = -detail::relative_change(avh_series[t], avh_series[t + 1]);
        norm_wins[t] = growth > drop;
    }
    for (std::size_t t = 0; t + 2 < steps; ++t)
        if (norm_wins[t] && norm_wins[t + 1] && norm_wins[t + 2]) return static_cast<int>(t + 1);
    return std::nullopt;
}

}  // namespace avh
