// Reverse-mode automatic differentiation over row-major dense matrices.
//
// Every value in the network is a 2-D matrix. Feature maps of shape
// (frames, H, W, C) are stored as (frames*H*W, C) with the spatial layout
// carried by the caller in a GridShape. Nodes that do not require a
// gradient carry no parents and no backward closure, so frozen weights and
// inference passes cost nothing beyond the forward arithmetic.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace musedance::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Node {
    Matrix<T> value;
    Matrix<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void accumulate(const Matrix<T>& delta) {
        if (grad.size() == 0) {
            grad = delta;
        } else {
            grad += delta;
        }
    }
    Matrix<T>& grad_buffer() {
        if (grad.size() == 0) grad = Matrix<T>::Zero(value.rows(), value.cols());
        return grad;
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// Spatial layout of a (frames*h*w, C) matrix.
struct GridShape {
    int frames = 1;
    int height = 0;
    int width = 0;
    int positions() const { return height * width; }
    int rows() const { return frames * height * width; }
    bool operator==(const GridShape&) const = default;
};

template <typename T>
Var<T> constant(Matrix<T> value);

/// A leaf whose gradient is accumulated by backward() when requires_grad is set.
template <typename T>
Var<T> leaf(Matrix<T> value, bool requires_grad);

/// Runs reverse accumulation from a 1x1 node. Leaf gradients accumulate.
template <typename T>
void backward(const Var<T>& root);

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// x * w (+ bias row), bias may be null.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T s);

/// Adds a (1, C) row to every row of x.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& row);

/// x.row(r) += table.row(index[r]).
template <typename T>
Var<T> add_indexed_rows(const Var<T>& x, const Var<T>& table, std::span<const int> index);

template <typename T>
Var<T> silu(const Var<T>& x);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// Group normalization; each consecutive block of rows_per_sample rows is one
/// sample, channels are split into `groups` contiguous groups.
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int rows_per_sample,
                  int groups, T eps = T(1e-5));

/// 3x3 convolution with zero padding 1. Weight is (9*Cin, Cout) with the
/// kernel offset (ky, kx) major and input channel minor.
template <typename T>
Var<T> conv3x3(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const GridShape& shape,
               int stride);

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x, const GridShape& shape);

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

/// out.row(r) = x.row(index[r]); backward scatter-adds.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int> index);

/// Multi-head scaled dot-product attention over independent row groups.
/// q: (groups*nq, D); k, v: (groups*nk, D). Heads split D into equal slices.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, int groups, int nq,
                 int nk);

/// Mean of squared differences, 1x1.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

/// sum(a .* weights), 1x1; weights are constant.
template <typename T>
Var<T> weighted_sum(const Var<T>& a, const Matrix<T>& weights);

/// Sums 1x1 nodes.
template <typename T>
Var<T> sum_scalars(const std::vector<Var<T>>& parts);

// Row-index builders for layout changes.
std::vector<int> frame_major_to_position_major(int frames, int positions);
std::vector<int> position_major_to_frame_major(int frames, int positions);
std::vector<int> range_rows(int begin, int count);

}  // namespace musedance::ad
