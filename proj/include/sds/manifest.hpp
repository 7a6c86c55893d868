#pragma once

#include <string>

#include <json.hpp>

#include "sds/container.hpp"
#include "sds/model.hpp"

namespace sds {

// Model manifest schema:
//   {"name": str,
//    "layers": [{"weight": tensor-name, "bias": tensor-name|null,
//                "activation": "none"|"relu"}]}
// Weights and biases live in a companion SDST container under those names.

inline void save_model(const LayerStack& model, const std::string& container_path,
                       const std::string& manifest_path) {
    model.validate();
    TensorContainer c;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        const std::string wname = "layers." + std::to_string(l) + ".weight";
        c.add_matrix(wname, layer.weight);
        nlohmann::json jl;
        jl["weight"] = wname;
        if (layer.bias) {
            const std::string bname = "layers." + std::to_string(l) + ".bias";
            c.add_vector(bname, *layer.bias);
            jl["bias"] = bname;
        } else {
            jl["bias"] = nullptr;
        }
        jl["activation"] = to_string(layer.activation);
        layers.push_back(jl);
    }
    nlohmann::json j;
    j["name"] = model.name;
    j["layers"] = layers;
    write_container(container_path, c);
    write_file_atomic(manifest_path, j.dump(2) + "\n");
}

inline LayerStack load_model(const std::string& manifest_path,
                             const std::string& container_path) {
    std::ifstream in(manifest_path);
    if (!in) throw FormatError(FormatIssue::Io, "cannot open '" + manifest_path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatIssue::BadShape,
                          "manifest '" + manifest_path + "' is not valid JSON: " + e.what());
    }
    if (!j.contains("name") || !j.contains("layers") || !j["layers"].is_array()) {
        throw FormatError(FormatIssue::BadShape,
                          "manifest '" + manifest_path + "' missing name/layers");
    }
    const TensorContainer c = read_container(container_path);
    LayerStack model;
    model.name = j["name"].get<std::string>();
    for (const auto& jl : j["layers"]) {
        LinearLayer layer;
        layer.weight = c.get_matrix(jl.at("weight").get<std::string>());
        if (!jl.at("bias").is_null()) {
            const auto& e = c.get(jl["bias"].get<std::string>());
            if (e.dims.size() != 1) {
                throw FormatError(FormatIssue::BadShape, "bias tensor must be 1-D");
            }
            layer.bias = e.data;
        }
        layer.activation = activation_from_string(jl.at("activation").get<std::string>());
        model.layers.push_back(std::move(layer));
    }
    model.validate();
    return model;
}

}  // namespace sds
