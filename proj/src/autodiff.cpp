#include "musedance/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace musedance::ad {
namespace {

template <typename T>
bool any_requires_grad(std::initializer_list<const Var<T>*> inputs) {
    for (const Var<T>* v : inputs) {
        if (v != nullptr && *v && (*v)->requires_grad) return true;
    }
    return false;
}

template <typename T>
Var<T> make_result(Matrix<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return node;
}

void require(bool condition, const char* what) {
    if (!condition) throw std::invalid_argument(what);
}

}  // namespace

template <typename T>
Var<T> constant(Matrix<T> value) {
    return make_result<T>(std::move(value));
}

template <typename T>
Var<T> leaf(Matrix<T> value, bool requires_grad) {
    auto node = make_result<T>(std::move(value));
    node->requires_grad = requires_grad;
    return node;
}

template <typename T>
void backward(const Var<T>& root) {
    require(root && root->value.rows() == 1 && root->value.cols() == 1,
            "backward: root must be a 1x1 node");
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->accumulate(Matrix<T>::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && node->grad.size() != 0) node->backward(*node);
    }
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require(a->value.cols() == b->value.rows(), "matmul: inner dimension mismatch");
    Matrix<T> out(a->value.rows(), b->value.cols());
    out.noalias() = a->value * b->value;
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&a, &b})) {
        result->requires_grad = true;
        result->parents = {a, b};
        result->backward = [a, b](Node<T>& self) {
            if (a->requires_grad) a->grad_buffer().noalias() += self.grad * b->value.transpose();
            if (b->requires_grad) b->grad_buffer().noalias() += a->value.transpose() * self.grad;
        };
    }
    return result;
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    require(x->value.cols() == w->value.rows(), "linear: input width mismatch");
    Matrix<T> out(x->value.rows(), w->value.cols());
    out.noalias() = x->value * w->value;
    if (bias) {
        require(bias->value.rows() == 1 && bias->value.cols() == w->value.cols(),
                "linear: bias shape mismatch");
        out.rowwise() += bias->value.row(0);
    }
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&x, &w, &bias})) {
        result->requires_grad = true;
        result->parents = {x, w};
        if (bias) result->parents.push_back(bias);
        result->backward = [x, w, bias](Node<T>& self) {
            if (x->requires_grad) x->grad_buffer().noalias() += self.grad * w->value.transpose();
            if (w->requires_grad) w->grad_buffer().noalias() += x->value.transpose() * self.grad;
            if (bias && bias->requires_grad) bias->grad_buffer() += self.grad.colwise().sum();
        };
    }
    return result;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
            "add: shape mismatch");
    auto result = make_result<T>(a->value + b->value);
    if (any_requires_grad<T>({&a, &b})) {
        result->requires_grad = true;
        result->parents = {a, b};
        result->backward = [a, b](Node<T>& self) {
            if (a->requires_grad) a->accumulate(self.grad);
            if (b->requires_grad) b->accumulate(self.grad);
        };
    }
    return result;
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
            "sub: shape mismatch");
    auto result = make_result<T>(a->value - b->value);
    if (any_requires_grad<T>({&a, &b})) {
        result->requires_grad = true;
        result->parents = {a, b};
        result->backward = [a, b](Node<T>& self) {
            if (a->requires_grad) a->accumulate(self.grad);
            if (b->requires_grad) b->grad_buffer() -= self.grad;
        };
    }
    return result;
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
            "mul: shape mismatch");
    auto result = make_result<T>(a->value.cwiseProduct(b->value));
    if (any_requires_grad<T>({&a, &b})) {
        result->requires_grad = true;
        result->parents = {a, b};
        result->backward = [a, b](Node<T>& self) {
            if (a->requires_grad) a->grad_buffer() += self.grad.cwiseProduct(b->value);
            if (b->requires_grad) b->grad_buffer() += self.grad.cwiseProduct(a->value);
        };
    }
    return result;
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    auto result = make_result<T>(a->value * s);
    if (a->requires_grad) {
        result->requires_grad = true;
        result->parents = {a};
        result->backward = [a, s](Node<T>& self) { a->grad_buffer() += self.grad * s; };
    }
    return result;
}

template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& row) {
    require(row->value.rows() == 1 && row->value.cols() == x->value.cols(),
            "add_row: row shape mismatch");
    Matrix<T> out = x->value;
    out.rowwise() += row->value.row(0);
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&x, &row})) {
        result->requires_grad = true;
        result->parents = {x, row};
        result->backward = [x, row](Node<T>& self) {
            if (x->requires_grad) x->accumulate(self.grad);
            if (row->requires_grad) row->grad_buffer() += self.grad.colwise().sum();
        };
    }
    return result;
}

template <typename T>
Var<T> add_indexed_rows(const Var<T>& x, const Var<T>& table, std::span<const int> index) {
    require(static_cast<Eigen::Index>(index.size()) == x->value.rows(),
            "add_indexed_rows: index length mismatch");
    require(table->value.cols() == x->value.cols(), "add_indexed_rows: width mismatch");
    Matrix<T> out = x->value;
    for (std::size_t r = 0; r < index.size(); ++r) {
        require(index[r] >= 0 && index[r] < table->value.rows(), "add_indexed_rows: index out of range");
        out.row(static_cast<Eigen::Index>(r)) += table->value.row(index[r]);
    }
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&x, &table})) {
        result->requires_grad = true;
        result->parents = {x, table};
        std::vector<int> idx(index.begin(), index.end());
        result->backward = [x, table, idx = std::move(idx)](Node<T>& self) {
            if (x->requires_grad) x->accumulate(self.grad);
            if (table->requires_grad) {
                auto& g = table->grad_buffer();
                for (std::size_t r = 0; r < idx.size(); ++r) {
                    g.row(idx[r]) += self.grad.row(static_cast<Eigen::Index>(r));
                }
            }
        };
    }
    return result;
}

template <typename T>
Var<T> silu(const Var<T>& x) {
    Matrix<T> sig = (T(1) + (-x->value.array()).exp()).inverse().matrix();
    auto result = make_result<T>(x->value.cwiseProduct(sig));
    if (x->requires_grad) {
        result->requires_grad = true;
        result->parents = {x};
        result->backward = [x, sig = std::move(sig)](Node<T>& self) {
            auto s = sig.array();
            x->grad_buffer().array() +=
                self.grad.array() * s * (T(1) + x->value.array() * (T(1) - s));
        };
    }
    return result;
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const Eigen::Index rows = x->value.rows();
    const Eigen::Index cols = x->value.cols();
    require(gamma->value.cols() == cols && beta->value.cols() == cols, "layer_norm: width mismatch");
    Matrix<T> xhat(rows, cols);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        auto row = x->value.row(r);
        const T mean = row.mean();
        const T var = (row.array() - mean).square().mean();
        inv_std(r) = T(1) / std::sqrt(var + eps);
        xhat.row(r) = (row.array() - mean) * inv_std(r);
    }
    Matrix<T> out = xhat;
    out.array().rowwise() *= gamma->value.row(0).array();
    out.rowwise() += beta->value.row(0);
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&x, &gamma, &beta})) {
        result->requires_grad = true;
        result->parents = {x, gamma, beta};
        result->backward = [x, gamma, beta, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)](Node<T>& self) {
            const Eigen::Index n = xhat.cols();
            if (gamma->requires_grad) {
                gamma->grad_buffer() += (self.grad.cwiseProduct(xhat)).colwise().sum();
            }
            if (beta->requires_grad) beta->grad_buffer() += self.grad.colwise().sum();
            if (x->requires_grad) {
                Matrix<T> dxhat = self.grad;
                dxhat.array().rowwise() *= gamma->value.row(0).array();
                auto& gx = x->grad_buffer();
                for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    const T sum_d = dxhat.row(r).sum();
                    const T sum_dx = dxhat.row(r).dot(xhat.row(r));
                    gx.row(r).array() += (inv_std(r) / T(n)) *
                                         (T(n) * dxhat.row(r).array() - sum_d -
                                          xhat.row(r).array() * sum_dx);
                }
            }
        };
    }
    return result;
}

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int rows_per_sample,
                  int groups, T eps) {
    const Eigen::Index rows = x->value.rows();
    const Eigen::Index cols = x->value.cols();
    require(rows_per_sample > 0 && rows % rows_per_sample == 0, "group_norm: bad sample size");
    require(groups > 0 && cols % groups == 0, "group_norm: channels not divisible by groups");
    require(gamma->value.cols() == cols && beta->value.cols() == cols, "group_norm: width mismatch");
    const Eigen::Index samples = rows / rows_per_sample;
    const Eigen::Index group_cols = cols / groups;
    const T count = T(rows_per_sample * group_cols);

    Matrix<T> xhat(rows, cols);
    Matrix<T> inv_std(samples, groups);
    for (Eigen::Index s = 0; s < samples; ++s) {
        for (int g = 0; g < groups; ++g) {
            auto block = x->value.block(s * rows_per_sample, g * group_cols, rows_per_sample, group_cols);
            const T mean = block.sum() / count;
            const T var = (block.array() - mean).square().sum() / count;
            const T istd = T(1) / std::sqrt(var + eps);
            inv_std(s, g) = istd;
            xhat.block(s * rows_per_sample, g * group_cols, rows_per_sample, group_cols) =
                ((block.array() - mean) * istd).matrix();
        }
    }
    Matrix<T> out = xhat;
    out.array().rowwise() *= gamma->value.row(0).array();
    out.rowwise() += beta->value.row(0);
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&x, &gamma, &beta})) {
        result->requires_grad = true;
        result->parents = {x, gamma, beta};
        result->backward = [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
                            rows_per_sample, groups, group_cols, count](Node<T>& self) {
            if (gamma->requires_grad) {
                gamma->grad_buffer() += (self.grad.cwiseProduct(xhat)).colwise().sum();
            }
            if (beta->requires_grad) beta->grad_buffer() += self.grad.colwise().sum();
            if (!x->requires_grad) return;
            Matrix<T> dxhat = self.grad;
            dxhat.array().rowwise() *= gamma->value.row(0).array();
            auto& gx = x->grad_buffer();
            const Eigen::Index samples = inv_std.rows();
            for (Eigen::Index s = 0; s < samples; ++s) {
                for (int g = 0; g < groups; ++g) {
                    auto d = dxhat.block(s * rows_per_sample, g * group_cols, rows_per_sample, group_cols);
                    auto h = xhat.block(s * rows_per_sample, g * group_cols, rows_per_sample, group_cols);
                    const T sum_d = d.sum();
                    const T sum_dh = d.cwiseProduct(h).sum();
                    gx.block(s * rows_per_sample, g * group_cols, rows_per_sample, group_cols).array() +=
                        (inv_std(s, g) / count) * (count * d.array() - sum_d - h.array() * sum_dh);
                }
            }
        };
    }
    return result;
}

template <typename T>
Var<T> conv3x3(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const GridShape& shape,
               int stride) {
    const Eigen::Index cin = x->value.cols();
    require(x->value.rows() == shape.rows(), "conv3x3: input rows do not match grid shape");
    require(weight->value.rows() == 9 * cin, "conv3x3: weight rows must be 9*Cin");
    require(stride == 1 || stride == 2, "conv3x3: stride must be 1 or 2");
    const int out_h = (shape.height - 1) / stride + 1;
    const int out_w = (shape.width - 1) / stride + 1;
    const Eigen::Index out_rows = static_cast<Eigen::Index>(shape.frames) * out_h * out_w;

    Matrix<T> cols = Matrix<T>::Zero(out_rows, 9 * cin);
    for (int f = 0; f < shape.frames; ++f) {
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                const Eigen::Index out_row = (static_cast<Eigen::Index>(f) * out_h + oy) * out_w + ox;
                T* dst = cols.data() + out_row * 9 * cin;
                for (int ky = 0; ky < 3; ++ky) {
                    const int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= shape.height) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= shape.width) continue;
                        const Eigen::Index in_row = (static_cast<Eigen::Index>(f) * shape.height + iy) * shape.width + ix;
                        std::copy_n(x->value.data() + in_row * cin, cin, dst + (ky * 3 + kx) * cin);
                    }
                }
            }
        }
    }
    Matrix<T> out(out_rows, weight->value.cols());
    out.noalias() = cols * weight->value;
    if (bias) out.rowwise() += bias->value.row(0);
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&x, &weight, &bias})) {
        result->requires_grad = true;
        result->parents = {x, weight};
        if (bias) result->parents.push_back(bias);
        if (!weight->requires_grad) cols.resize(0, 0);
        result->backward = [x, weight, bias, shape, stride, out_h, out_w,
                            cols = std::move(cols)](Node<T>& self) {
            if (weight->requires_grad) weight->grad_buffer().noalias() += cols.transpose() * self.grad;
            if (bias && bias->requires_grad) bias->grad_buffer() += self.grad.colwise().sum();
            if (!x->requires_grad) return;
            const Eigen::Index cin = x->value.cols();
            Matrix<T> dcols(self.grad.rows(), weight->value.rows());
            dcols.noalias() = self.grad * weight->value.transpose();
            auto& gx = x->grad_buffer();
            for (int f = 0; f < shape.frames; ++f) {
                for (int oy = 0; oy < out_h; ++oy) {
                    for (int ox = 0; ox < out_w; ++ox) {
                        const Eigen::Index out_row = (static_cast<Eigen::Index>(f) * out_h + oy) * out_w + ox;
                        const T* src = dcols.data() + out_row * 9 * cin;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int iy = oy * stride + ky - 1;
                            if (iy < 0 || iy >= shape.height) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int ix = ox * stride + kx - 1;
                                if (ix < 0 || ix >= shape.width) continue;
                                const Eigen::Index in_row = (static_cast<Eigen::Index>(f) * shape.height + iy) * shape.width + ix;
                                T* dst = gx.data() + in_row * cin;
                                const T* s = src + (ky * 3 + kx) * cin;
                                for (Eigen::Index c = 0; c < cin; ++c) dst[c] += s[c];
                            }
                        }
                    }
                }
            }
        };
    }
    return result;
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x, const GridShape& shape) {
    require(x->value.rows() == shape.rows(), "upsample: input rows do not match grid shape");
    const int oh = shape.height * 2;
    const int ow = shape.width * 2;
    std::vector<int> index(static_cast<std::size_t>(shape.frames) * oh * ow);
    for (int f = 0; f < shape.frames; ++f) {
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                index[(static_cast<std::size_t>(f) * oh + y) * ow + xx] =
                    (f * shape.height + y / 2) * shape.width + xx / 2;
            }
        }
    }
    return gather_rows(x, std::move(index));
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
    require(a->value.rows() == b->value.rows(), "concat_cols: row mismatch");
    Matrix<T> out(a->value.rows(), a->value.cols() + b->value.cols());
    out.leftCols(a->value.cols()) = a->value;
    out.rightCols(b->value.cols()) = b->value;
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&a, &b})) {
        result->requires_grad = true;
        result->parents = {a, b};
        result->backward = [a, b](Node<T>& self) {
            if (a->requires_grad) a->grad_buffer() += self.grad.leftCols(a->value.cols());
            if (b->requires_grad) b->grad_buffer() += self.grad.rightCols(b->value.cols());
        };
    }
    return result;
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const Eigen::Index cols = parts.front()->value.cols();
    Eigen::Index rows = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        require(p->value.cols() == cols, "concat_rows: width mismatch");
        rows += p->value.rows();
        needs_grad = needs_grad || p->requires_grad;
    }
    Matrix<T> out(rows, cols);
    Eigen::Index offset = 0;
    for (const auto& p : parts) {
        out.middleRows(offset, p->value.rows()) = p->value;
        offset += p->value.rows();
    }
    auto result = make_result<T>(std::move(out));
    if (needs_grad) {
        result->requires_grad = true;
        result->parents = parts;
        result->backward = [parts](Node<T>& self) {
            Eigen::Index off = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) p->grad_buffer() += self.grad.middleRows(off, p->value.rows());
                off += p->value.rows();
            }
        };
    }
    return result;
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int> index) {
    const Eigen::Index cols = x->value.cols();
    Matrix<T> out(static_cast<Eigen::Index>(index.size()), cols);
    for (std::size_t r = 0; r < index.size(); ++r) {
        require(index[r] >= 0 && index[r] < x->value.rows(), "gather_rows: index out of range");
        std::copy_n(x->value.data() + static_cast<Eigen::Index>(index[r]) * cols, cols,
                    out.data() + static_cast<Eigen::Index>(r) * cols);
    }
    auto result = make_result<T>(std::move(out));
    if (x->requires_grad) {
        result->requires_grad = true;
        result->parents = {x};
        result->backward = [x, index = std::move(index)](Node<T>& self) {
            auto& gx = x->grad_buffer();
            const Eigen::Index c = gx.cols();
            for (std::size_t r = 0; r < index.size(); ++r) {
                T* dst = gx.data() + static_cast<Eigen::Index>(index[r]) * c;
                const T* src = self.grad.data() + static_cast<Eigen::Index>(r) * c;
                for (Eigen::Index j = 0; j < c; ++j) dst[j] += src[j];
            }
        };
    }
    return result;
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, int groups, int nq,
                 int nk) {
    const Eigen::Index dim = q->value.cols();
    require(k->value.cols() == dim && v->value.cols() == dim, "attention: width mismatch");
    require(heads > 0 && dim % heads == 0, "attention: width not divisible by heads");
    require(q->value.rows() == static_cast<Eigen::Index>(groups) * nq, "attention: query rows mismatch");
    require(k->value.rows() == static_cast<Eigen::Index>(groups) * nk &&
                v->value.rows() == static_cast<Eigen::Index>(groups) * nk,
            "attention: key/value rows mismatch");
    const int dh = static_cast<int>(dim / heads);
    const T scale_factor = T(1) / std::sqrt(T(dh));

    Matrix<T> out(q->value.rows(), dim);
    Matrix<T> probs(static_cast<Eigen::Index>(groups) * heads * nq, nk);
    Matrix<T> scores(nq, nk);
    for (int g = 0; g < groups; ++g) {
        for (int h = 0; h < heads; ++h) {
            auto qb = q->value.block(static_cast<Eigen::Index>(g) * nq, h * dh, nq, dh);
            auto kb = k->value.block(static_cast<Eigen::Index>(g) * nk, h * dh, nk, dh);
            auto vb = v->value.block(static_cast<Eigen::Index>(g) * nk, h * dh, nk, dh);
            scores.noalias() = qb * kb.transpose();
            scores *= scale_factor;
            for (int i = 0; i < nq; ++i) {
                auto row = scores.row(i);
                const T m = row.maxCoeff();
                row = (row.array() - m).exp().matrix();
                row /= row.sum();
            }
            probs.middleRows((static_cast<Eigen::Index>(g) * heads + h) * nq, nq) = scores;
            out.block(static_cast<Eigen::Index>(g) * nq, h * dh, nq, dh).noalias() = scores * vb;
        }
    }
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&q, &k, &v})) {
        result->requires_grad = true;
        result->parents = {q, k, v};
        result->backward = [q, k, v, heads, groups, nq, nk, dh, scale_factor,
                            probs = std::move(probs)](Node<T>& self) {
            Matrix<T> dp(nq, nk);
            Matrix<T> ds(nq, nk);
            Matrix<T>* gq = q->requires_grad ? &q->grad_buffer() : nullptr;
            Matrix<T>* gk = k->requires_grad ? &k->grad_buffer() : nullptr;
            Matrix<T>* gv = v->requires_grad ? &v->grad_buffer() : nullptr;
            for (int g = 0; g < groups; ++g) {
                for (int h = 0; h < heads; ++h) {
                    auto p = probs.middleRows((static_cast<Eigen::Index>(g) * heads + h) * nq, nq);
                    auto dout = self.grad.block(static_cast<Eigen::Index>(g) * nq, h * dh, nq, dh);
                    auto qb = q->value.block(static_cast<Eigen::Index>(g) * nq, h * dh, nq, dh);
                    auto kb = k->value.block(static_cast<Eigen::Index>(g) * nk, h * dh, nk, dh);
                    auto vb = v->value.block(static_cast<Eigen::Index>(g) * nk, h * dh, nk, dh);
                    if (gv) gv->block(static_cast<Eigen::Index>(g) * nk, h * dh, nk, dh).noalias() += p.transpose() * dout;
                    if (!gq && !gk) continue;
                    dp.noalias() = dout * vb.transpose();
                    for (int i = 0; i < nq; ++i) {
                        const T dot = dp.row(i).dot(p.row(i));
                        ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
                    }
                    ds *= scale_factor;
                    if (gq) gq->block(static_cast<Eigen::Index>(g) * nq, h * dh, nq, dh).noalias() += ds * kb;
                    if (gk) gk->block(static_cast<Eigen::Index>(g) * nk, h * dh, nk, dh).noalias() += ds.transpose() * qb;
                }
            }
        };
    }
    return result;
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
            "mse: shape mismatch");
    const T n = T(a->value.size());
    Matrix<T> diff = a->value - b->value;
    Matrix<T> out(1, 1);
    out(0, 0) = diff.squaredNorm() / n;
    auto result = make_result<T>(std::move(out));
    if (any_requires_grad<T>({&a, &b})) {
        result->requires_grad = true;
        result->parents = {a, b};
        result->backward = [a, b, n, diff = std::move(diff)](Node<T>& self) {
            const T g = self.grad(0, 0) * T(2) / n;
            if (a->requires_grad) a->grad_buffer() += diff * g;
            if (b->requires_grad) b->grad_buffer() -= diff * g;
        };
    }
    return result;
}

template <typename T>
Var<T> weighted_sum(const Var<T>& a, const Matrix<T>& weights) {
    require(a->value.rows() == weights.rows() && a->value.cols() == weights.cols(),
            "weighted_sum: shape mismatch");
    Matrix<T> out(1, 1);
    out(0, 0) = a->value.cwiseProduct(weights).sum();
    auto result = make_result<T>(std::move(out));
    if (a->requires_grad) {
        result->requires_grad = true;
        result->parents = {a};
        result->backward = [a, weights](Node<T>& self) { a->grad_buffer() += weights * self.grad(0, 0); };
    }
    return result;
}

template <typename T>
Var<T> sum_scalars(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "sum_scalars: no inputs");
    Matrix<T> out = Matrix<T>::Zero(1, 1);
    bool needs_grad = false;
    for (const auto& p : parts) {
        require(p->value.size() == 1, "sum_scalars: inputs must be 1x1");
        out(0, 0) += p->value(0, 0);
        needs_grad = needs_grad || p->requires_grad;
    }
    auto result = make_result<T>(std::move(out));
    if (needs_grad) {
        result->requires_grad = true;
        result->parents = parts;
        result->backward = [parts](Node<T>& self) {
            for (const auto& p : parts) {
                if (p->requires_grad) p->accumulate(self.grad);
            }
        };
    }
    return result;
}

std::vector<int> frame_major_to_position_major(int frames, int positions) {
    std::vector<int> index(static_cast<std::size_t>(frames) * positions);
    for (int s = 0; s < positions; ++s) {
        for (int f = 0; f < frames; ++f) index[static_cast<std::size_t>(s) * frames + f] = f * positions + s;
    }
    return index;
}

std::vector<int> position_major_to_frame_major(int frames, int positions) {
    std::vector<int> index(static_cast<std::size_t>(frames) * positions);
    for (int f = 0; f < frames; ++f) {
        for (int s = 0; s < positions; ++s) index[static_cast<std::size_t>(f) * positions + s] = s * frames + f;
    }
    return index;
}

std::vector<int> range_rows(int begin, int count) {
    std::vector<int> index(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) index[static_cast<std::size_t>(i)] = begin + i;
    return index;
}

#define MUSEDANCE_INSTANTIATE(T)                                                                       \
    template Var<T> constant<T>(Matrix<T>);                                                            \
    template Var<T> leaf<T>(Matrix<T>, bool);                                                          \
    template void backward<T>(const Var<T>&);                                                          \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                           \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                            \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                              \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                              \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                              \
    template Var<T> scale<T>(const Var<T>&, T);                                                        \
    template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> add_indexed_rows<T>(const Var<T>&, const Var<T>&, std::span<const int>);           \
    template Var<T> silu<T>(const Var<T>&);                                                            \
    template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                     \
    template Var<T> group_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int, T);           \
    template Var<T> conv3x3<T>(const Var<T>&, const Var<T>&, const Var<T>&, const GridShape&, int);    \
    template Var<T> upsample_nearest2x<T>(const Var<T>&, const GridShape&);                            \
    template Var<T> concat_cols<T>(const Var<T>&, const Var<T>&);                                      \
    template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                        \
    template Var<T> gather_rows<T>(const Var<T>&, std::vector<int>);                                   \
    template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int, int, int);     \
    template Var<T> mse<T>(const Var<T>&, const Var<T>&);                                              \
    template Var<T> weighted_sum<T>(const Var<T>&, const Matrix<T>&);                                  \
    template Var<T> sum_scalars<T>(const std::vector<Var<T>>&);

MUSEDANCE_INSTANTIATE(float)
MUSEDANCE_INSTANTIATE(double)

#undef MUSEDANCE_INSTANTIATE

}  // namespace musedance::ad
