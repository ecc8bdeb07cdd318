#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "avh/dataset.hpp"
#include "avh/errors.hpp"

namespace avh {

// Dataset CSV:
//
//   #classes=C                      optional; enables the label < C check
//   id,label,hsf,f0,...,f{D-1}      hsf column optional; empty cells = absent
//   0,2,0.7,0.125,...
//
// Posterior sidecar CSV: `id,p0,...,p{C-1}`, ids in the same order.
// UTF-8, LF, doubles in %.17g (exact round trip).

namespace csv {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline double parse_double(std::string_view field, std::size_t line, std::string_view column) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError("non-numeric value '" + std::string(field) + "' in column " + std::string(column), line);
    return v;
}

inline long parse_int(std::string_view field, std::size_t line, std::string_view column) {
    long v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError("non-integer value '" + std::string(field) + "' in column " + std::string(column), line);
    return v;
}

inline std::string_view strip_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

}  // namespace csv

inline void write_dataset_csv(std::ostream& out, const LabeledDataset& data) {
    data.validate();
    out << "#classes=" << data.num_classes << '\n';
    out << "id,label,hsf";
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << ",f" << j;
    out << '\n';
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const auto si = static_cast<std::size_t>(i);
        out << i << ',' << data.labels[si] << ',';
        if (data.hsf) out << csv::format_double((*data.hsf)[si]);
        for (Eigen::Index j = 0; j < data.dim(); ++j) out << ',' << csv::format_double(data.features(i, j));
        out << '\n';
    }
}

inline void write_posterior_csv(std::ostream& out, const LabeledDataset& data) {
    if (!data.oracle_posterior) throw ArgumentError("write_posterior_csv: dataset has no posterior");
    out << "id";
    for (int k = 0; k < data.num_classes; ++k) out << ",p" << k;
    out << '\n';
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        out << i;
        for (int k = 0; k < data.num_classes; ++k) out << ',' << csv::format_double((*data.oracle_posterior)(i, k));
        out << '\n';
    }
}

/// Writes `data` (and the posterior sidecar when a path is given and the
/// dataset has one). Ids are row indices.
inline void save_dataset(const LabeledDataset& data, const std::string& path,
                         const std::optional<std::string>& posterior_path = std::nullopt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    write_dataset_csv(out, data);
    if (posterior_path && data.oracle_posterior) {
        std::ofstream post(*posterior_path, std::ios::binary);
        if (!post) throw std::runtime_error("save_dataset: cannot open " + *posterior_path);
        write_posterior_csv(post, data);
    }
}

inline LabeledDataset load_dataset(const std::string& path,
                                   const std::optional<std::string>& posterior_path = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);

    std::string raw;
    std::size_t line_no = 0;
    std::optional<int> declared_classes;
    std::vector<std::string> header;

    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = csv::strip_cr(raw);
        if (line.starts_with("#")) {
            constexpr std::string_view key = "#classes=";
            if (line.starts_with(key)) {
                const long c = csv::parse_int(line.substr(key.size()), line_no, "#classes");
                if (c < 1) throw ParseError("declared class count must be >= 1", line_no);
                declared_classes = static_cast<int>(c);
            }
            continue;
        }
        for (auto f : csv::split(line)) header.emplace_back(f);
        break;
    }
    if (header.empty()) throw ParseError("missing header", line_no);
    if (header.size() < 3 || header[0] != "id" || header[1] != "label")
        throw ParseError("header must start with id,label", line_no);
    const bool has_hsf_column = header[2] == "hsf";
    const std::size_t first_feature = has_hsf_column ? 3 : 2;
    const std::size_t dim = header.size() - first_feature;
    if (dim < 1) throw ParseError("header declares no feature columns", line_no);
    for (std::size_t j = 0; j < dim; ++j)
        if (header[first_feature + j] != "f" + std::to_string(j))
            throw ParseError("expected column f" + std::to_string(j) + ", found '" + header[first_feature + j] + "'",
                             line_no);

    std::vector<double> values;
    std::vector<int> labels;
    std::vector<std::string> ids;
    std::vector<double> hsf;
    std::optional<bool> hsf_present;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = csv::strip_cr(raw);
        if (line.empty()) continue;
        const auto fields = csv::split(line);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             line_no);
        ids.emplace_back(fields[0]);
        const long label = csv::parse_int(fields[1], line_no, "label");
        if (label < 0) throw ParseError("negative label", line_no);
        if (declared_classes && label >= *declared_classes)
            throw ParseError("label " + std::to_string(label) + " >= declared class count " +
                                 std::to_string(*declared_classes),
                             line_no);
        labels.push_back(static_cast<int>(label));
        if (has_hsf_column) {
            const bool present = !fields[2].empty();
            if (hsf_present && *hsf_present != present) throw ParseError("hsf must be given for all rows or none", line_no);
            hsf_present = present;
            if (present) {
                const double h = csv::parse_double(fields[2], line_no, "hsf");
                if (!(h >= 0.0 && h <= 1.0)) throw ParseError("hsf outside [0, 1]", line_no);
                hsf.push_back(h);
            }
        }
        for (std::size_t j = 0; j < dim; ++j)
            values.push_back(csv::parse_double(fields[first_feature + j], line_no, header[first_feature + j]));
    }

    LabeledDataset d;
    const auto n = static_cast<Eigen::Index>(labels.size());
    d.features.resize(n, static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            d.features(i, static_cast<Eigen::Index>(j)) = values[static_cast<std::size_t>(i) * dim + j];
    d.labels = std::move(labels);
    int max_label = -1;
    for (int y : d.labels) max_label = std::max(max_label, y);
    d.num_classes = declared_classes.value_or(std::max(max_label + 1, 1));
    if (hsf_present.value_or(false)) d.hsf = std::move(hsf);

    if (posterior_path) {
        std::ifstream post(*posterior_path, std::ios::binary);
        if (!post) throw std::runtime_error("load_dataset: cannot open " + *posterior_path);
        std::size_t pline = 0;
        if (!std::getline(post, raw)) throw ParseError("posterior: missing header", 1);
        ++pline;
        const auto pheader = csv::split(csv::strip_cr(raw));
        if (pheader.size() < 2 || pheader[0] != "id") throw ParseError("posterior: header must start with id", pline);
        const auto classes = static_cast<Eigen::Index>(pheader.size() - 1);
        for (Eigen::Index k = 0; k < classes; ++k)
            if (pheader[static_cast<std::size_t>(k + 1)] != "p" + std::to_string(k))
                throw ParseError("posterior: expected column p" + std::to_string(k), pline);
        if (declared_classes && classes != *declared_classes)
            throw ParseError("posterior: column count does not match declared classes", pline);
        d.num_classes = std::max(d.num_classes, static_cast<int>(classes));
        Eigen::MatrixXd p(n, classes);
        Eigen::Index row = 0;
        while (std::getline(post, raw)) {
            ++pline;
            const std::string_view line = csv::strip_cr(raw);
            if (line.empty()) continue;
            const auto fields = csv::split(line);
            if (static_cast<Eigen::Index>(fields.size()) != classes + 1)
                throw ParseError("posterior: ragged row", pline);
            if (row >= n) throw ParseError("posterior: more rows than the dataset", pline);
            if (fields[0] != ids[static_cast<std::size_t>(row)])
                throw ParseError("posterior: id '" + std::string(fields[0]) + "' does not match dataset id '" +
                                     ids[static_cast<std::size_t>(row)] + "'",
                                 pline);
            for (Eigen::Index k = 0; k < classes; ++k)
                p(row, k) = csv::parse_double(fields[static_cast<std::size_t>(k + 1)], pline, "p" + std::to_string(k));
            ++row;
        }
        if (row != n) throw ParseError("posterior: fewer rows than the dataset", pline);
        d.oracle_posterior = std::move(p);
    }
    d.validate();
    return d;
}

}  // namespace avh
