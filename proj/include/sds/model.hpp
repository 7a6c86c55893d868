#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sds/error.hpp"
#include "sds/matrix.hpp"

namespace sds {

enum class Activation { None, ReLU };

inline std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "none"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "none") return Activation::None;
    if (s == "relu") return Activation::ReLU;
    throw FormatError(FormatIssue::BadShape, "unknown activation '" + s + "'");
}

/// One fully connected layer: y = act(W x + b). Weight is out_dim x in_dim,
/// inputs carry one token per column. Biases are never pruned.
struct LinearLayer {
    DenseMatrix weight;
    std::optional<std::vector<float>> bias;
    Activation activation = Activation::None;

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
};

/// Ordered stack of linear layers; adjacent layers must be dimension-compatible.
struct LayerStack {
    std::string name;
    std::vector<LinearLayer> layers;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

    void validate() const {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& layer = layers[l];
            if (layer.bias && layer.bias->size() != layer.out_dim()) {
                throw DimensionError("layer " + std::to_string(l) + ": bias length " +
                                     std::to_string(layer.bias->size()) +
                                     " does not match out_dim " +
                                     std::to_string(layer.out_dim()));
            }
            if (l + 1 < layers.size() && layer.out_dim() != layers[l + 1].in_dim()) {
                throw DimensionError("layers " + std::to_string(l) + " and " +
                                     std::to_string(l + 1) + " are incompatible: out_dim " +
                                     std::to_string(layer.out_dim()) + " vs in_dim " +
                                     std::to_string(layers[l + 1].in_dim()));
            }
        }
    }
};

/// y = act(W x + b) for a single layer; layer_idx only feeds error messages.
inline DenseMatrix layer_forward(const LinearLayer& layer, const DenseMatrix& x,
                                 std::size_t layer_idx = 0, std::size_t threads = 1) {
    if (x.rows() != layer.in_dim()) {
        throw DimensionError("forward: layer " + std::to_string(layer_idx) + " expects " +
                             std::to_string(layer.in_dim()) + " input rows, got " +
                             x.shape_string());
    }
    if (layer.bias && layer.bias->size() != layer.out_dim()) {
        throw DimensionError("forward: layer " + std::to_string(layer_idx) +
                             " bias length mismatch");
    }
    DenseMatrix y = matmul(layer.weight, x, threads);
    if (layer.bias) {
        const auto& b = *layer.bias;
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[i];
    }
    if (layer.activation == Activation::ReLU) {
        for (std::size_t i = 0; i < y.numel(); ++i)
            if (y.data()[i] < 0.0f) y.data()[i] = 0.0f;
    }
    return y;
}

/// Sequential forward pass; columns are tokens and stay independent.
inline DenseMatrix forward(const LayerStack& model, DenseMatrix x, std::size_t threads = 1) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        x = layer_forward(model.layers[l], x, l, threads);
    }
    return x;
}

}  // namespace sds
