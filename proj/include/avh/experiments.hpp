#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avh/checkpoint.hpp"
#include "avh/config.hpp"
#include "avh/dataset_io.hpp"
#include "avh/dynamics.hpp"
#include "avh/errors.hpp"
#include "avh/geometry.hpp"
#include "avh/rng.hpp"
#include "avh/selftrain.hpp"
#include "avh/stats.hpp"
#include "avh/synthdata.hpp"
#include "avh/tinynet.hpp"

namespace avh::experiments {

/// A named output file held in memory until the whole run has succeeded.
struct Artifact {
    std::string name;
    std::string content;
};
using Artifacts = std::vector<Artifact>;

// Seed streams derived from the run seed.
enum SeedStream : std::uint64_t {
    data_stream = 1,
    hsf_stream,
    init_stream,
    train_stream,
    eval_stream,
    degrade_stream,
    retrain_stream,
};

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline void write_artifacts(const std::string& out_dir, const Artifacts& artifacts) {
    std::filesystem::create_directories(out_dir);
    for (const Artifact& a : artifacts) {
        const auto path = std::filesystem::path(out_dir) / a.name;
        std::ofstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot write " + path.string());
        f << a.content;
        if (!f) throw DataError("failed writing " + path.string());
    }
}

// ---------------------------------------------------------------------------
// Shared config sections

namespace detail {

template <typename F>
auto as_config_error(const std::string& where, F&& f) {
    try {
        return f();
    } catch (const ArgumentError& e) {
        throw ConfigError(where + ": " + e.what());
    } catch (const ShapeError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

inline void require_input_file(const std::string& path, const std::string& where) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(where + ": cannot read '" + path + "'");
}

}  // namespace detail

inline TrainConfig parse_train(ConfigNode n, TrainConfig d = {}) {
    d.learning_rate = n.get("learning_rate", d.learning_rate);
    d.momentum = n.get("momentum", d.momentum);
    d.epochs = n.get("epochs", d.epochs);
    d.decay_factor = n.get("decay_factor", d.decay_factor);
    d.decay_period = n.get("decay_period", d.decay_period);
    d.batch_size = n.get("batch_size", d.batch_size);
    d.scale_s = n.get("scale_s", d.scale_s);
    const std::string loss = n.get<std::string>("loss", d.loss_kind == LossKind::softmax_ce ? "softmax_ce" : "avh");
    if (loss == "softmax_ce")
        d.loss_kind = LossKind::softmax_ce;
    else if (loss == "avh")
        d.loss_kind = LossKind::avh_loss;
    else
        throw ConfigError(n.where("loss") + ": expected 'softmax_ce' or 'avh'");
    n.finish();
    detail::as_config_error(n.where(), [&] {
        d.validate();
        return 0;
    });
    return d;
}

inline MixtureParams parse_mixture(ConfigNode& n, MixtureParams d = {}) {
    d.classes = n.get("classes", d.classes);
    d.dim = n.get("dim", d.dim);
    d.separation = n.get("separation", d.separation);
    d.sigma = n.get("sigma", d.sigma);
    d.n = n.get("n", d.n);
    detail::as_config_error(n.where(), [&] {
        d.validate();
        return 0;
    });
    return d;
}

inline std::vector<int> parse_hidden(ConfigNode n, std::vector<int> d) {
    d = n.get("hidden", d);
    n.finish();
    for (int w : d)
        if (w < 1) throw ConfigError(n.where("hidden") + ": widths must be >= 1");
    return d;
}

inline std::vector<int> layer_dims(int input, const std::vector<int>& hidden, int classes) {
    std::vector<int> dims{input};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(classes);
    return dims;
}

inline stats::Method parse_method(const std::string& s, const std::string& where) {
    try {
        return stats::method_from_string(s);
    } catch (const ArgumentError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

/// Training with a finite-loss guard.
inline Model train_checked(Model model, const LabeledDataset& data, const TrainConfig& cfg, const EpochHook& hook = {}) {
    return train(std::move(model), data, cfg, [&](const EpochInfo& info, const Model& m) {
        if (!std::isfinite(info.mean_loss))
            throw NumericalError("training loss became non-finite at epoch " + std::to_string(info.epoch));
        if (hook) hook(info, m);
    });
}

inline void check_finite(const std::vector<double>& v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericalError(what + " contains non-finite values");
}

// ---------------------------------------------------------------------------
// gaussian-demo

struct GaussianDemoConfig {
    int n = 2000;
    std::vector<double> mean0{1.0, 0.0, 0.0};
    std::vector<double> mean1{0.82533561490967833, 0.56464247339503537, 0.0};  // unit vector at 0.6 rad
    double sigma = 0.6;
    std::vector<int> hidden{2};
    TrainConfig train = [] {
        TrainConfig t;
        t.epochs = 40;
        t.learning_rate = 0.05;
        t.decay_period = 30;
        return t;
    }();
    double hard_threshold = 0.4;
    double easy_threshold = 0.1;
};

inline GaussianDemoConfig parse_gaussian_demo(ConfigNode& root) {
    GaussianDemoConfig c;
    ConfigNode data = root.child("data");
    c.n = data.get("n", c.n);
    c.mean0 = data.get("mean0", c.mean0);
    c.mean1 = data.get("mean1", c.mean1);
    c.sigma = data.get("sigma", c.sigma);
    data.finish();
    if (c.n <= 0 || c.n % 2) throw ConfigError(data.where("n") + ": must be positive and even");
    if (c.mean0.size() != c.mean1.size() || c.mean0.empty())
        throw ConfigError(data.where() + ": mean0 and mean1 must share a positive dimension");
    if (c.mean0 == c.mean1) throw ConfigError(data.where() + ": means must be distinct");
    if (!(c.sigma > 0.0)) throw ConfigError(data.where("sigma") + ": must be positive");
    c.hidden = parse_hidden(root.child("model"), c.hidden);
    c.train = parse_train(root.child("train"), c.train);
    ConfigNode report = root.child("report");
    c.hard_threshold = report.get("hard_threshold", c.hard_threshold);
    c.easy_threshold = report.get("easy_threshold", c.easy_threshold);
    report.finish();
    return c;
}

struct GaussianDemoResult {
    LabeledDataset data;
    std::vector<double> hardness, avh, norm, confidence;
    stats::CorrelationReport avh_vs_hardness, norm_vs_hardness;
    double train_accuracy = 0.0;
    std::optional<double> mean_avh_hard, mean_avh_easy;
    std::size_t hard_count = 0, easy_count = 0;
    Artifacts artifacts;
};

inline GaussianDemoResult run_gaussian_demo(const GaussianDemoConfig& c, std::uint64_t seed) {
    const Eigen::Map<const Eigen::VectorXd> m0(c.mean0.data(), static_cast<Eigen::Index>(c.mean0.size()));
    const Eigen::Map<const Eigen::VectorXd> m1(c.mean1.data(), static_cast<Eigen::Index>(c.mean1.size()));
    GaussianDemoResult r;
    r.data = gen_two_gaussians(c.n, m0, m1, c.sigma, derive_seed(seed, data_stream));
    const auto dim = static_cast<int>(c.mean0.size());
    TrainConfig tc = c.train;
    tc.seed = derive_seed(seed, train_stream);
    const Model model =
        train_checked(init_model({layer_dims(dim, c.hidden, 2), derive_seed(seed, init_stream)}), r.data, tc);
    r.train_accuracy = accuracy(model, r.data);

    const SampleMetrics m = sample_metrics(model, r.data);
    r.hardness = *r.data.oracle_hardness();
    r.avh = m.avh;
    r.norm = m.norm;
    r.confidence = m.confidence;
    check_finite(r.avh, "AVH");
    check_finite(r.norm, "embedding norms");
    r.avh_vs_hardness = stats::correlate(stats::Method::spearman, r.avh, r.hardness);
    r.norm_vs_hardness = stats::correlate(stats::Method::spearman, r.norm, r.hardness);

    double hard_sum = 0.0, easy_sum = 0.0;
    for (std::size_t i = 0; i < r.avh.size(); ++i) {
        if (r.hardness[i] > c.hard_threshold) hard_sum += r.avh[i], ++r.hard_count;
        if (r.hardness[i] < c.easy_threshold) easy_sum += r.avh[i], ++r.easy_count;
    }
    if (r.hard_count) r.mean_avh_hard = hard_sum / static_cast<double>(r.hard_count);
    if (r.easy_count) r.mean_avh_easy = easy_sum / static_cast<double>(r.easy_count);

    std::ostringstream scores;
    scores << "id,label,oracle_hardness,avh,norm,confidence\n";
    for (std::size_t i = 0; i < r.avh.size(); ++i)
        scores << i << ',' << r.data.labels[i] << ',' << csv::format_double(r.hardness[i]) << ','
               << csv::format_double(r.avh[i]) << ',' << csv::format_double(r.norm[i]) << ','
               << csv::format_double(r.confidence[i]) << '\n';

    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    const nlohmann::json report = {
        {"n", r.avh.size()},
        {"train_accuracy", r.train_accuracy},
        {"spearman_avh_vs_hardness", stats::to_json(r.avh_vs_hardness)},
        {"spearman_norm_vs_hardness", stats::to_json(r.norm_vs_hardness)},
        {"hard_threshold", c.hard_threshold},
        {"easy_threshold", c.easy_threshold},
        {"hard_count", r.hard_count},
        {"easy_count", r.easy_count},
        {"mean_avh_hard", opt(r.mean_avh_hard)},
        {"mean_avh_easy", opt(r.mean_avh_easy)},
    };
    r.artifacts = {{"scores.csv", scores.str()}, {"report.json", dump_json(report)}};
    return r;
}

// ---------------------------------------------------------------------------
// dynamics

struct DynamicsConfig {
    MixtureParams mixture = [] {
        MixtureParams p;
        p.classes = 10;
        p.dim = 16;
        p.separation = 1.0;
        p.sigma = 0.3;
        p.n = 2000;
        return p;
    }();
    int eval_n = 2000;
    int annotators = 10;
    std::vector<int> hidden{64};
    TrainConfig train = [] {
        TrainConfig t;
        t.learning_rate = 0.02;
        return t;
    }();
    std::vector<double> edges{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    BinBy bin_by = BinBy::hsf;
    double plateau_split = 0.2;
};

inline DynamicsConfig parse_dynamics(ConfigNode& root, DynamicsConfig c = {}) {
    ConfigNode data = root.child("data");
    c.mixture = parse_mixture(data, c.mixture);
    c.eval_n = data.get("eval_n", c.eval_n);
    c.annotators = data.get("annotators", c.annotators);
    data.finish();
    if (c.eval_n < 1) throw ConfigError(data.where("eval_n") + ": must be >= 1");
    if (c.annotators < 1) throw ConfigError(data.where("annotators") + ": must be >= 1");
    c.hidden = parse_hidden(root.child("model"), c.hidden);
    c.train = parse_train(root.child("train"), c.train);
    ConfigNode bins = root.child("bins");
    c.edges = bins.get("edges", c.edges);
    const std::string by = bins.get<std::string>("by", to_string(c.bin_by));
    bins.finish();
    c.bin_by = detail::as_config_error(bins.where("by"), [&] { return bin_by_from_string(by); });
    detail::as_config_error(bins.where("edges"), [&] {
        stats::check_edges(c.edges);
        return 0;
    });
    ConfigNode analysis = root.child("analysis");
    c.plateau_split = analysis.get("plateau_split", c.plateau_split);
    analysis.finish();
    if (!(c.plateau_split > 0.0 && c.plateau_split <= 0.5))
        throw ConfigError(analysis.where("plateau_split") + ": must be in (0, 0.5]");
    if (c.train.epochs < 4) throw ConfigError(root.where("train.epochs") + ": dynamics analysis needs >= 4 epochs");
    return c;
}

struct DynamicsResult {
    DynamicsTable table;
    std::vector<double> overall_avh, overall_norm;
    PlateauMetrics avh_plateau;
    std::optional<int> phase_split_epoch;
    double final_accuracy = 0.0;
    Artifacts artifacts;
};

inline DynamicsResult run_dynamics(const DynamicsConfig& c, std::uint64_t seed) {
    const LabeledDataset train_set = gen_mixture(c.mixture, derive_seed(seed, data_stream));
    MixtureParams eval_params = c.mixture;
    eval_params.n = c.eval_n;
    LabeledDataset eval_set = gen_mixture(eval_params, derive_seed(seed, eval_stream));
    eval_set.hsf = simulate_hsf(*eval_set.oracle_posterior, eval_set.labels, c.annotators, derive_seed(seed, hsf_stream));
    const std::vector<double> bin_values = binning_values(eval_set, c.bin_by);

    DynamicsResult r;
    TrainConfig tc = c.train;
    tc.seed = derive_seed(seed, train_stream);
    const Model init = init_model({layer_dims(c.mixture.dim, c.hidden, c.mixture.classes), derive_seed(seed, init_stream)});
    const Model final_model = train_checked(init, train_set, tc, [&](const EpochInfo& info, const Model& m) {
        r.table.append(record_epoch(m, eval_set, bin_values, c.edges, info.epoch));
    });
    r.final_accuracy = accuracy(final_model, eval_set);
    r.overall_avh = overall_series(r.table, &EpochRecord::mean_avh);
    r.overall_norm = overall_series(r.table, &EpochRecord::mean_norm);
    check_finite(r.overall_avh, "mean AVH series");
    check_finite(r.overall_norm, "mean norm series");
    r.avh_plateau = plateau_metrics(r.overall_avh, c.plateau_split);
    r.phase_split_epoch = phase_split(r.overall_norm, r.overall_avh);

    std::ostringstream csv_out;
    write_dynamics_csv(csv_out, r.table);
    const nlohmann::json summary = {
        {"epochs", r.table.epochs()},
        {"bins", r.table.bins()},
        {"final_accuracy", r.final_accuracy},
        {"overall_mean_avh", r.overall_avh},
        {"overall_mean_norm", r.overall_norm},
        {"avh_plateau",
         {{"split", c.plateau_split},
          {"early_slope", r.avh_plateau.early_slope},
          {"late_slope", r.avh_plateau.late_slope},
          {"ratio", r.avh_plateau.early_flat ? nlohmann::json(nullptr) : nlohmann::json(r.avh_plateau.ratio)},
          {"early_flat", r.avh_plateau.early_flat}}},
        {"phase_split_epoch", r.phase_split_epoch ? nlohmann::json(*r.phase_split_epoch) : nlohmann::json(nullptr)},
    };
    r.artifacts = {{"dynamics.csv", csv_out.str()}, {"summary.json", dump_json(summary)}};
    return r;
}

// ---------------------------------------------------------------------------
// correlate

enum class CorrelateSource { generated, dataset, columns, precomputed };

struct PrecomputedPair {
    stats::Method method = stats::Method::spearman;
    double r_avh = 0.0, r_conf = 0.0;
    std::size_t n_avh = 0, n_conf = 0;
};

struct CorrelateConfig {
    CorrelateSource source = CorrelateSource::generated;
    std::vector<stats::Method> methods{stats::Method::spearman, stats::Method::pearson, stats::Method::kendall};
    DynamicsConfig generated;  // data / model / train sections reused
    std::string dataset_path, posterior_path, model_path, columns_path;
    std::vector<PrecomputedPair> precomputed;
};

inline CorrelateConfig parse_correlate(ConfigNode& root) {
    CorrelateConfig c;
    const std::string source = root.get<std::string>("source", "generated");
    if (source == "generated")
        c.source = CorrelateSource::generated;
    else if (source == "dataset")
        c.source = CorrelateSource::dataset;
    else if (source == "columns")
        c.source = CorrelateSource::columns;
    else if (source == "precomputed")
        c.source = CorrelateSource::precomputed;
    else
        throw ConfigError(root.where("source") + ": expected generated, dataset, columns or precomputed");

    if (const auto names = root.maybe<std::vector<std::string>>("methods")) {
        c.methods.clear();
        for (const auto& s : *names) c.methods.push_back(parse_method(s, root.where("methods")));
        if (c.methods.empty()) throw ConfigError(root.where("methods") + ": must not be empty");
    }

    // Only the section for the chosen source may appear.
    auto forbid = [&](const char* key, CorrelateSource owner) {
        if (root.has(key) && c.source != owner)
            throw ConfigError(root.where(key) + ": section only valid with source '" + key + "'");
    };
    forbid("generated", CorrelateSource::generated);
    forbid("dataset", CorrelateSource::dataset);
    forbid("columns", CorrelateSource::columns);
    forbid("precomputed", CorrelateSource::precomputed);

    switch (c.source) {
        case CorrelateSource::generated: {
            DynamicsConfig d;
            d.train.epochs = 30;
            ConfigNode g = root.child("generated");
            ConfigNode data = g.child("data");
            d.mixture = parse_mixture(data, d.mixture);
            d.eval_n = data.get("eval_n", d.eval_n);
            d.annotators = data.get("annotators", d.annotators);
            data.finish();
            if (d.eval_n < 4) throw ConfigError(data.where("eval_n") + ": must be >= 4");
            if (d.annotators < 1) throw ConfigError(data.where("annotators") + ": must be >= 1");
            d.hidden = parse_hidden(g.child("model"), d.hidden);
            d.train = parse_train(g.child("train"), d.train);
            g.finish();
            c.generated = d;
            break;
        }
        case CorrelateSource::dataset: {
            ConfigNode d = root.child("dataset");
            c.dataset_path = d.require<std::string>("path");
            c.posterior_path = d.get<std::string>("posterior", "");
            c.model_path = d.require<std::string>("model");
            d.finish();
            detail::require_input_file(c.dataset_path, d.where("path"));
            if (!c.posterior_path.empty()) detail::require_input_file(c.posterior_path, d.where("posterior"));
            detail::require_input_file(c.model_path, d.where("model"));
            break;
        }
        case CorrelateSource::columns: {
            ConfigNode d = root.child("columns");
            c.columns_path = d.require<std::string>("path");
            d.finish();
            detail::require_input_file(c.columns_path, d.where("path"));
            break;
        }
        case CorrelateSource::precomputed: {
            for (ConfigNode& p : root.children("precomputed")) {
                PrecomputedPair pp;
                pp.method = parse_method(p.require<std::string>("method"), p.where("method"));
                pp.r_avh = p.require<double>("r_avh");
                pp.r_conf = p.require<double>("r_conf");
                const auto n = p.maybe<std::uint64_t>("n");
                pp.n_avh = p.get<std::uint64_t>("n_avh", n.value_or(0));
                pp.n_conf = p.get<std::uint64_t>("n_conf", n.value_or(0));
                p.finish();
                if (!(std::abs(pp.r_avh) < 1.0 && std::abs(pp.r_conf) < 1.0))
                    throw ConfigError(p.where() + ": coefficients must satisfy |r| < 1");
                if (pp.n_avh <= 3 || pp.n_conf <= 3) throw ConfigError(p.where() + ": sample counts must exceed 3");
                c.precomputed.push_back(pp);
            }
            if (c.precomputed.empty()) throw ConfigError(root.where("precomputed") + ": needs at least one entry");
            break;
        }
    }
    return c;
}

/// Per-sample scores paired with HSF; any score column may be absent.
struct ScoreColumns {
    std::vector<double> hsf;
    std::map<std::string, std::vector<double>> scores;  // "avh", "confidence", "norm"
};

struct CorrelateResult {
    std::size_t n = 0;
    std::vector<std::pair<std::string, stats::CorrelationReport>> correlations;  // variable name, report
    struct Comparison {
        stats::Method method;
        std::string first, second;
        std::optional<stats::ComparisonReport> report;  // absent when a coefficient has magnitude 1
        double r_first = 0.0, r_second = 0.0;
        std::size_t n_first = 0, n_second = 0;
    };
    std::vector<Comparison> comparisons;
    Artifacts artifacts;
};

/// Model scores on a labeled set: AVH and confidence against the label, and
/// embedding norm min-max scaled within each class.
inline ScoreColumns model_score_columns(const Model& model, const LabeledDataset& d) {
    if (!d.hsf) throw DataError("correlate: dataset has no hsf column");
    if (d.dim() != model.input_dim()) throw DataError("correlate: dataset dimension does not match the model input");
    for (int y : d.labels)
        if (y >= model.classes()) throw DataError("correlate: dataset label exceeds the model's class count");
    const SampleMetrics m = sample_metrics(model, d);
    ScoreColumns s;
    s.hsf = *d.hsf;
    s.scores["avh"] = m.avh;
    s.scores["confidence"] = m.confidence;
    s.scores["norm"] = stats::minmax_scale_grouped(m.norm, d.labels);
    return s;
}

inline ScoreColumns load_score_columns(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string raw;
    std::size_t line_no = 0;
    if (!std::getline(in, raw)) throw ParseError("missing header", 1);
    ++line_no;
    std::vector<std::string> header;
    for (auto f : csv::split(csv::strip_cr(raw))) header.emplace_back(f);
    std::optional<std::size_t> hsf_col;
    std::vector<std::pair<std::size_t, std::string>> score_cols;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == "hsf")
            hsf_col = j;
        else if (header[j] == "avh" || header[j] == "confidence" || header[j] == "norm")
            score_cols.emplace_back(j, header[j]);
    }
    if (!hsf_col) throw DataError(path + ": missing hsf column");
    if (score_cols.empty()) throw DataError(path + ": needs at least one of avh, confidence, norm");
    ScoreColumns s;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = csv::strip_cr(raw);
        if (line.empty()) continue;
        const auto fields = csv::split(line);
        if (fields.size() != header.size()) throw ParseError("ragged row", line_no);
        s.hsf.push_back(csv::parse_double(fields[*hsf_col], line_no, "hsf"));
        for (const auto& [j, name] : score_cols) s.scores[name].push_back(csv::parse_double(fields[j], line_no, name));
    }
    return s;
}

inline CorrelateResult correlate_columns(const ScoreColumns& s, const std::vector<stats::Method>& methods) {
    CorrelateResult r;
    r.n = s.hsf.size();
    for (const auto& [name, values] : s.scores) check_finite(values, name);
    static const char* order[] = {"avh", "confidence", "norm"};
    for (stats::Method m : methods) {
        std::map<std::string, stats::CorrelationReport> by_name;
        for (const char* name : order) {
            const auto it = s.scores.find(name);
            if (it == s.scores.end()) continue;
            by_name[name] = stats::correlate(m, it->second, s.hsf);
            r.correlations.emplace_back(name, by_name[name]);
        }
        if (by_name.count("avh") && by_name.count("confidence")) {
            CorrelateResult::Comparison c{m, "avh", "confidence", std::nullopt, by_name["avh"].abs_coef,
                                          by_name["confidence"].abs_coef, r.n, r.n};
            if (c.r_first < 1.0 && c.r_second < 1.0) c.report = stats::compare_correlations(c.r_first, c.r_second, r.n, r.n);
            r.comparisons.push_back(c);
        }
    }
    return r;
}

inline void render_correlate(CorrelateResult& r) {
    nlohmann::json doc = {{"n", r.n}, {"correlations", nlohmann::json::array()}, {"comparisons", nlohmann::json::array()}};
    std::string lines;
    for (const auto& [name, rep] : r.correlations) {
        nlohmann::json j = stats::to_json(rep);
        j["variable"] = name;
        j["against"] = "hsf";
        doc["correlations"].push_back(j);
        lines += j.dump() + "\n";
    }
    for (const auto& c : r.comparisons) {
        nlohmann::json j = c.report ? stats::to_json(*c.report) : nlohmann::json{{"type", "comparison"}};
        j["method"] = stats::to_string(c.method);
        j["first"] = c.first;
        j["second"] = c.second;
        j["r_first"] = c.r_first;
        j["r_second"] = c.r_second;
        j["n_first"] = c.n_first;
        j["n_second"] = c.n_second;
        if (!c.report) j["skipped"] = "coefficient of magnitude 1 has no Fisher z";
        doc["comparisons"].push_back(j);
        lines += j.dump() + "\n";
    }
    r.artifacts = {{"correlations.json", dump_json(doc)}, {"correlations.jsonl", lines}};
}

inline CorrelateResult run_correlate(const CorrelateConfig& c, std::uint64_t seed) {
    CorrelateResult r;
    switch (c.source) {
        case CorrelateSource::precomputed:
            for (const PrecomputedPair& p : c.precomputed) {
                r.comparisons.push_back({p.method, "avh", "confidence",
                                         stats::compare_correlations(p.r_avh, p.r_conf, p.n_avh, p.n_conf), p.r_avh,
                                         p.r_conf, p.n_avh, p.n_conf});
            }
            break;
        case CorrelateSource::columns:
            r = correlate_columns(load_score_columns(c.columns_path), c.methods);
            break;
        case CorrelateSource::dataset: {
            const LabeledDataset d = load_dataset(
                c.dataset_path, c.posterior_path.empty() ? std::nullopt : std::optional<std::string>(c.posterior_path));
            r = correlate_columns(model_score_columns(load_model(c.model_path), d), c.methods);
            break;
        }
        case CorrelateSource::generated: {
            const DynamicsConfig& g = c.generated;
            const LabeledDataset train_set = gen_mixture(g.mixture, derive_seed(seed, data_stream));
            MixtureParams ep = g.mixture;
            ep.n = g.eval_n;
            LabeledDataset eval_set = gen_mixture(ep, derive_seed(seed, eval_stream));
            eval_set.hsf =
                simulate_hsf(*eval_set.oracle_posterior, eval_set.labels, g.annotators, derive_seed(seed, hsf_stream));
            TrainConfig tc = g.train;
            tc.seed = derive_seed(seed, train_stream);
            const Model model = train_checked(
                init_model({layer_dims(g.mixture.dim, g.hidden, g.mixture.classes), derive_seed(seed, init_stream)}),
                train_set, tc);
            r = correlate_columns(model_score_columns(model, eval_set), c.methods);
            break;
        }
    }
    render_correlate(r);
    return r;
}

// ---------------------------------------------------------------------------
// selftrain

struct SelfTrainRunConfig {
    MixtureParams mixture = [] {
        MixtureParams p;
        p.classes = 4;
        p.dim = 6;
        p.separation = 1.0;
        p.sigma = 0.35;
        p.n = 1500;
        return p;
    }();
    double rotation = std::numbers::pi / 5.0;
    double shift = 0.0;
    std::vector<int> hidden{16, 8};
    TrainConfig pretrain = [] {
        TrainConfig t;
        t.epochs = 15;
        return t;
    }();
    SelfTrainConfig selftrain = [] {
        SelfTrainConfig s;
        s.rounds = 5;
        s.retrain.epochs = 3;
        s.retrain.learning_rate = 0.01;
        return s;
    }();
    std::vector<SelfTrainMode> modes{SelfTrainMode::softmax, SelfTrainMode::avh};
};

inline SelfTrainRunConfig parse_selftrain(ConfigNode& root) {
    SelfTrainRunConfig c;
    ConfigNode data = root.child("data");
    c.mixture = parse_mixture(data, c.mixture);
    c.rotation = data.get("rotation", c.rotation);
    c.shift = data.get("shift", c.shift);
    data.finish();
    if (!std::isfinite(c.rotation) || !std::isfinite(c.shift))
        throw ConfigError(data.where() + ": rotation and shift must be finite");
    c.hidden = parse_hidden(root.child("model"), c.hidden);
    c.pretrain = parse_train(root.child("pretrain"), c.pretrain);
    ConfigNode st = root.child("selftrain");
    c.selftrain.rounds = st.get("rounds", c.selftrain.rounds);
    c.selftrain.schedule.initial = st.get("portion_initial", c.selftrain.schedule.initial);
    c.selftrain.schedule.step = st.get("portion_step", c.selftrain.schedule.step);
    c.selftrain.schedule.max = st.get("portion_max", c.selftrain.schedule.max);
    c.selftrain.beta_portion = st.maybe<double>("beta_portion");
    c.selftrain.retrain = parse_train(st.child("retrain"), c.selftrain.retrain);
    st.finish();
    detail::as_config_error(st.where(), [&] {
        c.selftrain.validate();
        return 0;
    });
    if (const auto modes = root.maybe<std::vector<std::string>>("modes")) {
        c.modes.clear();
        for (const auto& m : *modes)
            c.modes.push_back(detail::as_config_error(root.where("modes"), [&] { return self_train_mode_from_string(m); }));
        if (c.modes.empty()) throw ConfigError(root.where("modes") + ": must not be empty");
    }
    return c;
}

struct SelfTrainRunResult {
    double source_accuracy = 0.0;
    double source_model_target_accuracy = 0.0;
    std::vector<std::pair<SelfTrainMode, SelfTrainResult>> runs;
    Artifacts artifacts;
};

inline SelfTrainRunResult run_selftrain(const SelfTrainRunConfig& c, std::uint64_t seed) {
    const DomainPair pair = gen_domain_shift(c.mixture, c.rotation, c.shift, derive_seed(seed, data_stream));
    TrainConfig pre = c.pretrain;
    pre.seed = derive_seed(seed, train_stream);
    // One source model shared by every mode.
    const Model source = train_checked(
        init_model({layer_dims(c.mixture.dim, c.hidden, c.mixture.classes), derive_seed(seed, init_stream)}), pair.source,
        pre);
    SelfTrainRunResult r;
    r.source_accuracy = accuracy(source, pair.source);
    r.source_model_target_accuracy = target_accuracy(source, pair.target_features, pair.target_hidden_labels);

    SelfTrainConfig st = c.selftrain;
    st.retrain.seed = derive_seed(seed, retrain_stream);
    std::ostringstream log;
    log << kRoundLogHeader << '\n';
    nlohmann::json summary = {{"source_accuracy", r.source_accuracy},
                              {"source_model_target_accuracy", r.source_model_target_accuracy},
                              {"modes", nlohmann::json::object()}};
    for (SelfTrainMode mode : c.modes) {
        SelfTrainResult res = self_train(pair, mode, source, st);
        for (const RoundStats& rs : res.rounds)
            if (!std::isfinite(rs.target_accuracy)) throw NumericalError("self-training produced a non-finite accuracy");
        append_round_log(log, mode, res.rounds);
        const RoundStats& first = res.rounds.front();
        summary["modes"][to_string(mode)] = {
            {"final_target_accuracy", res.rounds.back().target_accuracy},
            {"round1_selected", first.all.selected},
            {"round1_mean_confidence",
             first.all.mean_confidence ? nlohmann::json(*first.all.mean_confidence) : nlohmann::json(nullptr)},
            {"round1_tp_rate", first.all.tp_rate ? nlohmann::json(*first.all.tp_rate) : nlohmann::json(nullptr)}};
        r.runs.emplace_back(mode, std::move(res));
    }
    r.artifacts = {{"rounds.csv", log.str()}, {"summary.json", dump_json(summary)}};
    return r;
}

// ---------------------------------------------------------------------------
// norm-invariance

struct NormInvarianceConfig {
    double theta1 = std::numbers::pi / 4.0 - 0.05;
    double theta2 = std::numbers::pi / 4.0 + 0.05;
    double alpha_min = 0.1;
    double alpha_max = 100.0;
    int points = 61;
    double weight_norm = 1.0;
};

inline NormInvarianceConfig parse_norm_invariance(ConfigNode& root) {
    NormInvarianceConfig c;
    ConfigNode s = root.child("sweep");
    c.theta1 = s.get("theta1", c.theta1);
    c.theta2 = s.get("theta2", c.theta2);
    c.alpha_min = s.get("alpha_min", c.alpha_min);
    c.alpha_max = s.get("alpha_max", c.alpha_max);
    c.points = s.get("points", c.points);
    c.weight_norm = s.get("weight_norm", c.weight_norm);
    s.finish();
    if (!(c.theta1 > 0.0 && c.theta2 > 0.0 && std::abs(c.theta1 + c.theta2 - std::numbers::pi / 2.0) < 1e-9))
        throw ConfigError(s.where() + ": theta1 and theta2 must be positive and sum to pi/2 (orthogonal class weights)");
    if (!(c.alpha_min > 0.0 && c.alpha_max > c.alpha_min)) throw ConfigError(s.where() + ": need 0 < alpha_min < alpha_max");
    if (c.points < 2) throw ConfigError(s.where("points") + ": must be >= 2");
    if (!(c.weight_norm > 0.0)) throw ConfigError(s.where("weight_norm") + ": must be positive");
    return c;
}

struct NormInvarianceResult {
    std::vector<SweepPoint> sweep;
    Artifacts artifacts;
};

/// Binary case with orthogonal equal-norm weights w1 = e1, w2 = e2 and x at
/// angle theta1 from w1 (so theta2 from w2); x is labeled class 1 (index 0).
inline NormInvarianceResult run_norm_invariance(const NormInvarianceConfig& c) {
    Eigen::MatrixXd w(2, 2);
    w << c.weight_norm, 0.0, 0.0, c.weight_norm;
    Eigen::VectorXd x(2);
    x << std::cos(c.theta1), std::sin(c.theta1);
    std::vector<double> alphas(static_cast<std::size_t>(c.points));
    const double lo = std::log(c.alpha_min), hi = std::log(c.alpha_max);
    for (int i = 0; i < c.points; ++i) alphas[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / (c.points - 1));
    alphas.front() = c.alpha_min;
    alphas.back() = c.alpha_max;
    NormInvarianceResult r;
    r.sweep = norm_sweep(x, ClassifierWeights(w), 0, alphas);
    std::ostringstream out;
    out << "alpha,confidence,avh\n";
    for (const SweepPoint& p : r.sweep)
        out << csv::format_double(p.alpha) << ',' << csv::format_double(p.confidence) << ',' << csv::format_double(p.avh)
            << '\n';
    r.artifacts = {{"sweep.csv", out.str()}};
    return r;
}

// ---------------------------------------------------------------------------
// gen-data

enum class GenKind { mixture, two_gaussians, domain_shift };

struct GenDataConfig {
    GenKind kind = GenKind::mixture;
    MixtureParams mixture;
    GaussianDemoConfig two_gaussians;
    double rotation = std::numbers::pi / 6.0;
    double shift = 0.0;
    int annotators = 10;  // 0 leaves hsf out
    std::optional<DegradationSpec> degradation;
    std::optional<std::vector<int>> model_hidden;  // present: also train and save model.json
    TrainConfig model_train;
};

inline GenDataConfig parse_gen_data(ConfigNode& root) {
    GenDataConfig c;
    const std::string kind = root.get<std::string>("kind", "mixture");
    if (kind == "mixture")
        c.kind = GenKind::mixture;
    else if (kind == "two_gaussians")
        c.kind = GenKind::two_gaussians;
    else if (kind == "domain_shift")
        c.kind = GenKind::domain_shift;
    else
        throw ConfigError(root.where("kind") + ": expected mixture, two_gaussians or domain_shift");

    if (c.kind == GenKind::two_gaussians) {
        ConfigNode d = root.child("data");
        c.two_gaussians.n = d.get("n", c.two_gaussians.n);
        c.two_gaussians.mean0 = d.get("mean0", c.two_gaussians.mean0);
        c.two_gaussians.mean1 = d.get("mean1", c.two_gaussians.mean1);
        c.two_gaussians.sigma = d.get("sigma", c.two_gaussians.sigma);
        d.finish();
        const auto& g = c.two_gaussians;
        if (g.n <= 0 || g.n % 2) throw ConfigError(d.where("n") + ": must be positive and even");
        if (g.mean0.size() != g.mean1.size() || g.mean0.empty() || g.mean0 == g.mean1)
            throw ConfigError(d.where() + ": means must be distinct with a shared positive dimension");
        if (!(g.sigma > 0.0)) throw ConfigError(d.where("sigma") + ": must be positive");
    } else {
        ConfigNode d = root.child("data");
        c.mixture = parse_mixture(d, c.mixture);
        if (c.kind == GenKind::domain_shift) {
            c.rotation = d.get("rotation", c.rotation);
            c.shift = d.get("shift", c.shift);
        }
        d.finish();
    }
    c.annotators = root.get("annotators", c.annotators);
    if (c.annotators < 0) throw ConfigError(root.where("annotators") + ": must be >= 0");

    if (root.has("degrade")) {
        ConfigNode g = root.child("degrade");
        DegradationSpec spec;
        const std::string k = g.require<std::string>("kind");
        if (k == "contrast")
            spec.kind = DegradationKind::contrast;
        else if (k == "noise")
            spec.kind = DegradationKind::noise;
        else
            throw ConfigError(g.where("kind") + ": expected contrast or noise");
        spec.level = g.require<double>("level");
        g.finish();
        const bool ok = spec.kind == DegradationKind::contrast ? spec.level > 0.0 && spec.level <= 1.0 : spec.level >= 0.0;
        if (!ok) throw ConfigError(g.where("level") + ": out of range for " + k);
        c.degradation = spec;
    }

    if (root.has("model")) {
        ConfigNode m = root.child("model");
        c.model_hidden = m.get("hidden", std::vector<int>{});
        for (int w : *c.model_hidden)
            if (w < 1) throw ConfigError(m.where("hidden") + ": widths must be >= 1");
        c.model_train = parse_train(m.child("train"), c.model_train);
        m.finish();
    }
    return c;
}

inline Artifacts dataset_artifacts(const LabeledDataset& d, const std::string& stem) {
    std::ostringstream data;
    write_dataset_csv(data, d);
    Artifacts out{{stem + ".csv", data.str()}};
    if (d.oracle_posterior) {
        std::ostringstream post;
        write_posterior_csv(post, d);
        out.push_back({stem + "_posterior.csv", post.str()});
    }
    return out;
}

struct GenDataResult {
    LabeledDataset dataset;
    std::optional<LabeledDataset> target;
    std::optional<Model> model;
    Artifacts artifacts;
};

inline GenDataResult run_gen_data(const GenDataConfig& c, std::uint64_t seed) {
    GenDataResult r;
    const std::uint64_t data_seed = derive_seed(seed, data_stream);
    if (c.kind == GenKind::two_gaussians) {
        const auto& g = c.two_gaussians;
        const Eigen::Map<const Eigen::VectorXd> m0(g.mean0.data(), static_cast<Eigen::Index>(g.mean0.size()));
        const Eigen::Map<const Eigen::VectorXd> m1(g.mean1.data(), static_cast<Eigen::Index>(g.mean1.size()));
        r.dataset = gen_two_gaussians(g.n, m0, m1, g.sigma, data_seed);
    } else if (c.kind == GenKind::mixture) {
        r.dataset = gen_mixture(c.mixture, data_seed);
    } else {
        // Target posteriors come from the shifted means, which the pair does not
        // expose, so the target file carries hidden labels only.
        DomainPair pair = gen_domain_shift(c.mixture, c.rotation, c.shift, data_seed);
        r.dataset = std::move(pair.source);
        LabeledDataset t;
        t.features = std::move(pair.target_features);
        t.labels = std::move(pair.target_hidden_labels);
        t.num_classes = c.mixture.classes;
        r.target = std::move(t);
    }
    if (c.degradation) {
        r.dataset.features = degrade(r.dataset.features, *c.degradation, derive_seed(seed, degrade_stream));
        if (r.target) r.target->features = degrade(r.target->features, *c.degradation, derive_seed(seed, degrade_stream));
    }
    if (c.annotators > 0)
        r.dataset.hsf = simulate_hsf(*r.dataset.oracle_posterior, r.dataset.labels, c.annotators, derive_seed(seed, hsf_stream));

    r.artifacts = dataset_artifacts(r.dataset, "dataset");
    if (r.target) {
        Artifacts t = dataset_artifacts(*r.target, "target");
        r.artifacts.insert(r.artifacts.end(), t.begin(), t.end());
    }
    if (c.model_hidden) {
        TrainConfig tc = c.model_train;
        tc.seed = derive_seed(seed, train_stream);
        r.model = train_checked(init_model({layer_dims(static_cast<int>(r.dataset.dim()), *c.model_hidden,
                                                       r.dataset.num_classes),
                                            derive_seed(seed, init_stream)}),
                                r.dataset, tc);
        r.artifacts.push_back({"model.json", model_to_json(*r.model).dump(1) + "\n"});
    }
    return r;
}

}  // namespace avh::experiments
