#pragma once

// Minimal dense-network engine: double precision, explicit reverse-mode
// gradients, plain SGD. Batches are column-major, one sample per column, so
// every hot operation is a GEMM.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "koopsafe/errors.hpp"
#include "koopsafe/rng.hpp"

namespace koopsafe::nn {

enum class Activation { relu, identity };

inline const char* activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "identity";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw FormatError("unknown activation '" + s + "'");
}

struct Layer {
    Eigen::MatrixXd w;  // out x in
    Eigen::VectorXd b;  // out
    Activation act = Activation::identity;
};

struct DenseNet {
    std::vector<Layer> layers;

    int input_dim() const {
        return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols());
    }
    int output_dim() const {
        return layers.empty() ? 0 : static_cast<int>(layers.back().w.rows());
    }
};

// Gradients in the same shapes as the net's parameters.
struct GradientSet {
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;
};

struct ShapeSpec {
    std::vector<int> dims;  // e.g. {3, 128, 128, 128, 12}
    Activation hidden = Activation::relu;
    Activation output = Activation::identity;
};

// Glorot uniform; the limit keeps activation variance flat across layers.
inline Eigen::MatrixXd glorot_matrix(int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = uniform(rng, -limit, limit);
    return m;
}

inline DenseNet init(const ShapeSpec& spec, std::uint64_t seed) {
    if (spec.dims.size() < 2) throw DimensionError("net needs at least input and output dims");
    for (int d : spec.dims)
        if (d <= 0) throw DimensionError("net layer dims must be positive");
    Rng rng = make_rng(seed);
    DenseNet net;
    for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
        Layer layer;
        layer.w = glorot_matrix(spec.dims[l + 1], spec.dims[l], rng);
        layer.b = Eigen::VectorXd::Zero(spec.dims[l + 1]);
        layer.act = (l + 2 == spec.dims.size()) ? spec.output : spec.hidden;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline void validate(const DenseNet& net) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& layer = net.layers[l];
        if (layer.w.rows() != layer.b.size())
            throw DimensionError("layer weight rows and bias size disagree");
        if (l > 0 && net.layers[l - 1].w.rows() != layer.w.cols())
            throw DimensionError("consecutive layer shapes do not chain");
    }
}

struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;  // inputs[l] feeds layer l
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of layer l
};

inline Eigen::MatrixXd forward(const DenseNet& net, const Eigen::MatrixXd& x,
                               ForwardCache* cache = nullptr) {
    if (x.rows() != net.input_dim())
        throw DimensionError("forward: input has " + std::to_string(x.rows()) +
                             " rows, net expects " + std::to_string(net.input_dim()));
    if (cache) {
        cache->inputs.assign(net.layers.size(), {});
        cache->pre.assign(net.layers.size(), {});
    }
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& layer = net.layers[l];
        if (cache) cache->inputs[l] = a;
        Eigen::MatrixXd z = layer.w * a;
        z.colwise() += layer.b;
        if (cache) cache->pre[l] = z;
        if (layer.act == Activation::relu)
            a = z.cwiseMax(0.0);
        else
            a = std::move(z);
    }
    return a;
}

inline Eigen::VectorXd forward(const DenseNet& net, const Eigen::VectorXd& x) {
    return forward(net, Eigen::MatrixXd(x), nullptr).col(0);
}

// Reverse mode for L where upstream = dL/d(output), one column per sample.
// Parameter gradients sum over the batch; pass dx to also get dL/d(input).
inline GradientSet backward(const DenseNet& net, const ForwardCache& cache,
                            const Eigen::MatrixXd& upstream, Eigen::MatrixXd* dx = nullptr) {
    if (upstream.rows() != net.output_dim())
        throw DimensionError("backward: upstream rows do not match net output");
    if (cache.inputs.size() != net.layers.size() ||
        (net.layers.size() > 0 && cache.inputs[0].cols() != upstream.cols()))
        throw DimensionError("backward: cache does not match upstream batch");

    GradientSet g;
    g.dw.resize(net.layers.size());
    g.db.resize(net.layers.size());
    Eigen::MatrixXd grad = upstream;
    for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
        const Layer& layer = net.layers[l];
        // relu subgradient at exactly zero is taken as zero
        if (layer.act == Activation::relu)
            grad = (cache.pre[l].array() > 0.0).select(grad, 0.0);
        g.dw[l].noalias() = grad * cache.inputs[l].transpose();
        g.db[l] = grad.rowwise().sum();
        if (l > 0 || dx) {
            Eigen::MatrixXd down;
            down.noalias() = layer.w.transpose() * grad;
            grad = std::move(down);
        }
    }
    if (dx) *dx = std::move(grad);
    return g;
}

inline GradientSet backward(const DenseNet& net, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& upstream, Eigen::MatrixXd* dx = nullptr) {
    ForwardCache cache;
    forward(net, x, &cache);
    return backward(net, cache, upstream, dx);
}

inline GradientSet zero_like(const DenseNet& net) {
    GradientSet g;
    for (const Layer& layer : net.layers) {
        g.dw.emplace_back(Eigen::MatrixXd::Zero(layer.w.rows(), layer.w.cols()));
        g.db.emplace_back(Eigen::VectorXd::Zero(layer.b.size()));
    }
    return g;
}

inline void accumulate(GradientSet& into, const GradientSet& from, double scale = 1.0) {
    if (into.dw.size() != from.dw.size())
        throw DimensionError("gradient accumulate: layer counts differ");
    for (std::size_t l = 0; l < into.dw.size(); ++l) {
        into.dw[l] += scale * from.dw[l];
        into.db[l] += scale * from.db[l];
    }
}

inline void sgd_step(DenseNet& net, const GradientSet& grads, double lr) {
    if (grads.dw.size() != net.layers.size())
        throw DimensionError("sgd_step: gradient layer count does not match net");
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        net.layers[l].w -= lr * grads.dw[l];
        net.layers[l].b -= lr * grads.db[l];
    }
}

inline DenseNet sgd_stepped(DenseNet net, const GradientSet& grads, double lr) {
    sgd_step(net, grads, lr);
    return net;
}

}  // namespace koopsafe::nn
