#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "avh/errors.hpp"

namespace avh::stats {

enum class Method { spearman, pearson, kendall };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::spearman: return "spearman";
        case Method::pearson: return "pearson";
        case Method::kendall: return "kendall";
    }
    return "unknown";
}

inline Method method_from_string(const std::string& s) {
    if (s == "spearman") return Method::spearman;
    if (s == "pearson") return Method::pearson;
    if (s == "kendall") return Method::kendall;
    throw ArgumentError("unknown correlation method '" + s + "'");
}

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_n, const char* fn) {
    if (a.size() != b.size()) throw ShapeError(std::string(fn) + ": inputs differ in length");
    if (a.size() < min_n)
        throw ArgumentError(std::string(fn) + ": need at least " + std::to_string(min_n) + " samples");
}

}  // namespace detail

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> rank_average(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
    std::vector<double> ranks(values.size());
    for (std::size_t start = 0; start < order.size();) {
        std::size_t stop = start + 1;
        while (stop < order.size() && values[order[stop]] == values[order[start]]) ++stop;
        const double avg = 0.5 * static_cast<double>(start + 1 + stop);
        for (std::size_t k = start; k < stop; ++k) ranks[order[k]] = avg;
        start = stop;
    }
    return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
    detail::check_pair(a, b, 3, "pearson");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) throw DomainError("pearson: zero variance input");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
    detail::check_pair(a, b, 3, "spearman");
    const std::vector<double> ra = rank_average(a);
    const std::vector<double> rb = rank_average(b);
    try {
        return pearson(ra, rb);
    } catch (const DomainError&) {
        throw DomainError("spearman: zero variance input");
    }
}

/// Kendall tau-b by enumerating all pairs.
inline double kendall_tau(std::span<const double> a, std::span<const double> b) {
    detail::check_pair(a, b, 2, "kendall_tau");
    long long concordant = 0, discordant = 0, tied_a = 0, tied_b = 0;
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da == 0.0) ++tied_a;
            if (db == 0.0) ++tied_b;
            if (da == 0.0 || db == 0.0) continue;
            ((da > 0.0) == (db > 0.0) ? concordant : discordant) += 1;
        }
    }
    const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double denom = std::sqrt((pairs - static_cast<double>(tied_a)) * (pairs - static_cast<double>(tied_b)));
    if (!(denom > 0.0)) throw DomainError("kendall_tau: all values tied in an input");
    return static_cast<double>(concordant - discordant) / denom;
}

inline double correlation(Method m, std::span<const double> a, std::span<const double> b) {
    switch (m) {
        case Method::spearman: return spearman(a, b);
        case Method::pearson: return pearson(a, b);
        case Method::kendall: return kendall_tau(a, b);
    }
    throw ArgumentError("correlation: unknown method");
}

inline double fisher_z(double r) {
    if (!(std::abs(r) < 1.0)) throw DomainError("fisher_z: |r| must be < 1, got " + std::to_string(r));
    return std::atanh(r);
}

/// Upper tail 1 - Phi(z).
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

struct CorrelationReport {
    Method method = Method::spearman;
    double coef = 0.0;
    double abs_coef = 0.0;
    std::size_t n = 0;
    double fisher_z = 0.0;   // +-inf when |coef| == 1
    double p_nonzero = 1.0;  // two-sided, z-approximation; NaN when n <= 3
};

/// Coefficient plus the nonzero-correlation test
/// p = 2 * normal_sf(|atanh(r)| sqrt(n - 3)).
inline CorrelationReport correlate(Method m, std::span<const double> a, std::span<const double> b) {
    CorrelationReport r;
    r.method = m;
    r.coef = correlation(m, a, b);
    r.abs_coef = std::abs(r.coef);
    r.n = a.size();
    if (r.abs_coef < 1.0) {
        r.fisher_z = std::atanh(r.coef);
    } else {
        r.fisher_z = std::copysign(std::numeric_limits<double>::infinity(), r.coef);
    }
    if (r.n > 3) {
        r.p_nonzero = r.abs_coef < 1.0 ? 2.0 * normal_sf(std::abs(r.fisher_z) * std::sqrt(static_cast<double>(r.n) - 3.0))
                                       : 0.0;
    } else {
        r.p_nonzero = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

struct ComparisonReport {
    double z1 = 0.0;
    double z2 = 0.0;
    double z_value = 0.0;
    double p_value = 0.5;  // one-sided: P(Z >= z_value)
};

/// Fisher-z test that r1 exceeds r2, using the independent-samples standard
/// error sqrt(1/(n1-3) + 1/(n2-3)).
inline ComparisonReport compare_correlations(double r1, double r2, std::size_t n1, std::size_t n2) {
    if (n1 <= 3 || n2 <= 3) throw DomainError("compare_correlations: sample counts must exceed 3");
    ComparisonReport c;
    c.z1 = fisher_z(r1);
    c.z2 = fisher_z(r2);
    const double se = std::sqrt(1.0 / (static_cast<double>(n1) - 3.0) + 1.0 / (static_cast<double>(n2) - 3.0));
    c.z_value = (c.z1 - c.z2) / se;
    c.p_value = normal_sf(c.z_value);
    return c;
}

inline std::vector<double> minmax_scale(std::span<const double> values) {
    if (values.empty()) throw DomainError("minmax_scale: empty input");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double min = *lo, max = *hi;
    if (!(max > min)) throw DomainError("minmax_scale: constant input");
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - min) / (max - min);
    return out;
}

/// Min-max scaling applied separately within each group key.
inline std::vector<double> minmax_scale_grouped(std::span<const double> values, std::span<const int> groups) {
    if (values.size() != groups.size()) throw ShapeError("minmax_scale_grouped: length mismatch");
    std::vector<double> out(values.size());
    std::vector<int> keys(groups.begin(), groups.end());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (int key : keys) {
        std::vector<std::size_t> idx;
        std::vector<double> sub;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (groups[i] == key) idx.push_back(i), sub.push_back(values[i]);
        std::vector<double> scaled;
        try {
            scaled = minmax_scale(sub);
        } catch (const DomainError&) {
            throw DomainError("minmax_scale_grouped: group " + std::to_string(key) + " is constant");
        }
        for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = scaled[k];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binning

/// Bin of `value` for strictly increasing `edges`: [lo, hi) except the last
/// bin, which is closed. nullopt when outside [edges.front(), edges.back()].
inline std::optional<std::size_t> bin_index(double value, std::span<const double> edges) {
    if (!(value >= edges.front() && value <= edges.back())) return std::nullopt;
    const auto it = std::upper_bound(edges.begin(), edges.end(), value);
    const auto pos = static_cast<std::size_t>(it - edges.begin());
    return pos >= edges.size() ? edges.size() - 2 : pos - 1;
}

inline void check_edges(std::span<const double> edges) {
    if (edges.size() < 2) throw ArgumentError("bin edges: need at least two edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw ArgumentError("bin edges must be strictly increasing");
}

struct MetricStat {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

struct BinRow {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    std::vector<std::optional<MetricStat>> stats;  // one per metric; empty bins have nullopt
};

struct BinTable {
    std::vector<std::string> metric_names;
    std::vector<BinRow> rows;
};

struct NamedColumn {
    std::string name;
    std::span<const double> values;
};

inline BinTable bin_aggregate(std::span<const double> values_to_bin, std::span<const double> edges,
                              const std::vector<NamedColumn>& metrics) {
    check_edges(edges);
    for (const auto& m : metrics)
        if (m.values.size() != values_to_bin.size())
            throw ShapeError("bin_aggregate: metric '" + m.name + "' length does not match the binning variable");

    std::vector<std::size_t> assignment(values_to_bin.size());
    std::vector<std::size_t> offenders;
    for (std::size_t i = 0; i < values_to_bin.size(); ++i) {
        const auto b = bin_index(values_to_bin[i], edges);
        if (!b) {
            offenders.push_back(i);
            continue;
        }
        assignment[i] = *b;
    }
    if (!offenders.empty()) {
        std::string list;
        for (std::size_t k = 0; k < offenders.size() && k < 10; ++k)
            list += (k ? ", " : "") + std::to_string(offenders[k]);
        if (offenders.size() > 10) list += ", ...";
        throw ArgumentError("bin_aggregate: " + std::to_string(offenders.size()) +
                            " value(s) outside the bin edges at sample(s) " + list);
    }

    BinTable table;
    for (const auto& m : metrics) table.metric_names.push_back(m.name);
    const std::size_t bins = edges.size() - 1;
    for (std::size_t b = 0; b < bins; ++b) {
        BinRow row;
        row.lo = edges[b];
        row.hi = edges[b + 1];
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == b) members.push_back(i);
        row.count = members.size();
        for (const auto& m : metrics) {
            if (members.empty()) {
                row.stats.emplace_back(std::nullopt);
                continue;
            }
            double mean = 0.0;
            for (std::size_t i : members) mean += m.values[i];
            mean /= static_cast<double>(members.size());
            double var = 0.0;
            for (std::size_t i : members) var += (m.values[i] - mean) * (m.values[i] - mean);
            var /= static_cast<double>(members.size());
            row.stats.emplace_back(MetricStat{mean, std::sqrt(var)});
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

inline nlohmann::json to_json(const CorrelationReport& r) {
    return {{"type", "correlation"},
            {"method", to_string(r.method)},
            {"coef", r.coef},
            {"abs_coef", r.abs_coef},
            {"n", r.n},
            {"fisher_z", detail::finite_or_null(r.fisher_z)},
            {"p_nonzero", detail::finite_or_null(r.p_nonzero)}};
}

inline nlohmann::json to_json(const ComparisonReport& c) {
    return {{"type", "comparison"}, {"z1", c.z1}, {"z2", c.z2}, {"z_value", c.z_value}, {"p_value", c.p_value}};
}

}  // namespace avh::stats
