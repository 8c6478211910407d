// Small parameterised building blocks shared by the encoders and the U-Net.
#pragma once

#include "musedance/autodiff.hpp"
#include "musedance/params.hpp"

#include <cmath>
#include <string>

namespace musedance {

template <typename T>
struct LinearLayer {
    Var<T> weight;
    Var<T> bias;  // may be null

    LinearLayer() = default;
    LinearLayer(ParamStore<T>& store, const std::string& name, ParamGroup group, int in, int out,
                bool with_bias, bool zero_init = false) {
        weight = store.create(name + ".w", group, in, out, zero_init ? Init::zeros : Init::uniform_fan_in, in);
        if (with_bias) bias = store.create(name + ".b", group, 1, out, Init::zeros);
    }
    Var<T> operator()(const Var<T>& x) const { return ad::linear(x, weight, bias); }
};

template <typename T>
struct NormLayer {
    Var<T> gamma;
    Var<T> beta;

    NormLayer() = default;
    NormLayer(ParamStore<T>& store, const std::string& name, ParamGroup group, int width) {
        gamma = store.create(name + ".gamma", group, 1, width, Init::ones);
        beta = store.create(name + ".beta", group, 1, width, Init::zeros);
    }
    Var<T> layer(const Var<T>& x) const { return ad::layer_norm(x, gamma, beta); }
    Var<T> group(const Var<T>& x, int rows_per_sample, int groups) const {
        return ad::group_norm(x, gamma, beta, rows_per_sample, groups);
    }
};

template <typename T>
struct ConvLayer {
    Var<T> weight;
    Var<T> bias;
    int stride = 1;

    ConvLayer() = default;
    ConvLayer(ParamStore<T>& store, const std::string& name, ParamGroup group, int in, int out,
              int stride_, bool zero_init = false)
        : stride(stride_) {
        weight = store.create(name + ".w", group, 9 * in, out, zero_init ? Init::zeros : Init::uniform_fan_in,
                              9 * in);
        bias = store.create(name + ".b", group, 1, out, Init::zeros);
    }
    Var<T> operator()(const Var<T>& x, const ad::GridShape& shape) const {
        return ad::conv3x3(x, weight, bias, shape, stride);
    }
    ad::GridShape output_shape(const ad::GridShape& shape) const {
        return {shape.frames, (shape.height - 1) / stride + 1, (shape.width - 1) / stride + 1};
    }
};

/// Projections of one attention sub-block: pre-norm on the query stream,
/// bias only on the value projection, bias-free output projection. Zeroing
/// the value projection or the output projection makes the block an exact
/// residual identity.
template <typename T>
struct AttentionProjections {
    NormLayer<T> norm;
    LinearLayer<T> query;
    LinearLayer<T> key;
    LinearLayer<T> value;
    LinearLayer<T> out;

    AttentionProjections() = default;
    AttentionProjections(ParamStore<T>& store, const std::string& name, ParamGroup group, int width,
                         int context_width, bool zero_out) {
        norm = NormLayer<T>(store, name + ".norm", group, width);
        query = LinearLayer<T>(store, name + ".q", group, width, width, false);
        key = LinearLayer<T>(store, name + ".k", group, context_width, width, false);
        value = LinearLayer<T>(store, name + ".v", group, context_width, width, true);
        out = LinearLayer<T>(store, name + ".o", group, width, width, false, zero_out);
    }
};

/// Pre-norm transformer block for token sequences (encoders).
template <typename T>
struct TransformerBlock {
    AttentionProjections<T> attn;
    NormLayer<T> mlp_norm;
    LinearLayer<T> mlp_in;
    LinearLayer<T> mlp_out;
    int heads = 4;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& store, const std::string& name, ParamGroup group, int width, int heads_)
        : heads(heads_) {
        attn = AttentionProjections<T>(store, name + ".attn", group, width, width, false);
        mlp_norm = NormLayer<T>(store, name + ".mlp_norm", group, width);
        mlp_in = LinearLayer<T>(store, name + ".mlp_in", group, width, 4 * width, true);
        mlp_out = LinearLayer<T>(store, name + ".mlp_out", group, 4 * width, width, true);
    }

    Var<T> operator()(const Var<T>& x) const {
        const int n = static_cast<int>(x->value.rows());
        auto h = attn.norm.layer(x);
        auto a = ad::attention(attn.query(h), attn.key(h), attn.value(h), heads, 1, n, n);
        auto y = ad::add(x, attn.out(a));
        auto m = mlp_out(ad::silu(mlp_in(mlp_norm.layer(y))));
        return ad::add(y, m);
    }
};

/// Standard sinusoidal table, rows are positions.
template <typename T>
Matrix<T> sinusoid_table(int positions, int width, double offset = 0.0) {
    Matrix<T> table(positions, width);
    const int half = width / 2;
    for (int p = 0; p < positions; ++p) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double angle = (static_cast<double>(p) + offset) * freq;
            table(p, i) = T(std::sin(angle));
            table(p, half + i) = T(std::cos(angle));
        }
        if (width % 2 == 1) table(p, width - 1) = T(0);
    }
    return table;
}

/// Sinusoidal embedding of a single scalar (timestep).
template <typename T>
Matrix<T> sinusoid_row(double value, int width) {
    return sinusoid_table<T>(1, width, value);
}

}  // namespace musedance
