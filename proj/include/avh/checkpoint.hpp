#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "avh/errors.hpp"
#include "avh/tinynet.hpp"

namespace avh {

// Checkpoint layout (JSON, version 1):
//
//   {
//     "format": "avh-tinynet", "version": 1,
//     "layer_dims": [D0, ..., D_emb, C], "epoch": E,
//     "hidden": [ {"rows": r, "cols": c, "weight": [r*c row-major], "bias": [r]}, ... ],
//     "classifier": {"rows": C, "cols": D_emb, "weight": [C*D_emb row-major]}
//   }
//
// Doubles are written in shortest round-trip form, so save/load is exact.

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json values = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"weight", std::move(values)}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols,
                                        const std::string& where) {
    if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols)
        throw ParseError("checkpoint: " + where + " shape does not match layer_dims");
    const auto& values = j.at("weight");
    if (!values.is_array() || static_cast<Eigen::Index>(values.size()) != rows * cols)
        throw ParseError("checkpoint: " + where + " has the wrong number of weights");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * cols + c)].get<double>();
    return m;
}

}  // namespace detail

inline nlohmann::json model_to_json(const Model& model) {
    nlohmann::json j;
    j["format"] = "avh-tinynet";
    j["version"] = kCheckpointVersion;
    j["layer_dims"] = model.layer_dims;
    j["epoch"] = model.epoch;
    j["hidden"] = nlohmann::json::array();
    for (const DenseLayer& layer : model.hidden) {
        nlohmann::json l = detail::matrix_to_json(layer.weight);
        l["bias"] = std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size());
        j["hidden"].push_back(std::move(l));
    }
    j["classifier"] = detail::matrix_to_json(model.classifier);
    return j;
}

inline Model model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "avh-tinynet") throw ParseError("checkpoint: unknown format");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw ParseError("checkpoint: unsupported version " + j.at("version").dump());
        Model m;
        m.layer_dims = j.at("layer_dims").get<std::vector<int>>();
        ModelSpec{m.layer_dims, 0}.validate();
        m.epoch = j.at("epoch").get<int>();
        const auto& hidden = j.at("hidden");
        if (hidden.size() != m.layer_dims.size() - 2) throw ParseError("checkpoint: hidden layer count mismatch");
        for (std::size_t l = 0; l < hidden.size(); ++l) {
            DenseLayer layer;
            layer.weight = detail::matrix_from_json(hidden[l], m.layer_dims[l + 1], m.layer_dims[l],
                                                    "hidden[" + std::to_string(l) + "]");
            const auto bias = hidden[l].at("bias").get<std::vector<double>>();
            if (bias.size() != static_cast<std::size_t>(m.layer_dims[l + 1]))
                throw ParseError("checkpoint: hidden[" + std::to_string(l) + "] bias length mismatch");
            layer.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
            m.hidden.push_back(std::move(layer));
        }
        const std::size_t n = m.layer_dims.size();
        m.classifier = detail::matrix_from_json(j.at("classifier"), m.layer_dims[n - 1], m.layer_dims[n - 2],
                                                "classifier");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    } catch (const ArgumentError& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_model: cannot open " + path);
    out << model_to_json(model).dump(1) << '\n';
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_model: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    return model_from_json(j);
}

}  // namespace avh
