#pragma once

// Dense reverse-mode automatic differentiation over row-major matrices.
//
// A Var is a handle to a node of a dynamically recorded computation graph.
// Every op computes its forward value eagerly and, when any input requires a
// gradient, records a closure that pushes the output gradient back to its
// inputs. backward() walks the graph in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include "dgekt/error.hpp"
#include "dgekt/sparse.hpp"

namespace dgekt::ad {

/// Dense row-major matrix. Vectors are stored as [k x 1] columns unless an
/// op documents otherwise.
template <class T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows * cols) {
            throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                             shape_string(rows, cols));
        }
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Matrix(r, c, std::move(data));
    }

    static Matrix column(std::vector<T> values) {
        const std::size_t n = values.size();
        return Matrix(n, 1, std::move(values));
    }

    static Matrix scalar(T v) { return Matrix(1, 1, v); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool same_shape(const Matrix& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    [[nodiscard]] std::span<T> span() noexcept { return data_; }
    [[nodiscard]] std::span<const T> span() const noexcept { return data_; }
    [[nodiscard]] T* data() noexcept { return data_.data(); }
    [[nodiscard]] const T* data() const noexcept { return data_.data(); }
    [[nodiscard]] const std::vector<T>& values() const noexcept { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    [[nodiscard]] std::string shape_string() const { return shape_string(rows_, cols_); }
    static std::string shape_string(std::size_t r, std::size_t c) {
        return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
    }

    template <class U>
    [[nodiscard]] Matrix<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Matrix<U>(rows_, cols_, std::move(out));
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

namespace detail {

template <class T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<EigenRowMat<T>> as_eigen(Matrix<T>& m) {
    return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

template <class T>
Eigen::Map<const EigenRowMat<T>> as_eigen(const Matrix<T>& m) {
    return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// True while operations record backward closures on this thread.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (!grad.same_shape(value)) grad = Matrix<T>(value.rows(), value.cols());
    }
    [[nodiscard]] bool is_leaf() const noexcept { return !backward; }
};

/// Handle to a node in the computation graph. Copies share the node.
template <class T>
class Var {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    /// Leaf that accumulates gradients.
    static Var parameter(Matrix<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        n->ensure_grad();
        return Var(std::move(n));
    }

    /// Leaf that never receives gradients.
    static Var constant(Matrix<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
    [[nodiscard]] const Matrix<T>& value() const { return node_->value; }
    [[nodiscard]] Matrix<T>& mutable_value() { return node_->value; }
    [[nodiscard]] const Matrix<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    [[nodiscard]] Matrix<T>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    [[nodiscard]] std::size_t rows() const { return node_->value.rows(); }
    [[nodiscard]] std::size_t cols() const { return node_->value.cols(); }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    [[nodiscard]] std::string shape_string() const { return node_->value.shape_string(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] const char* op() const { return node_->op; }

    [[nodiscard]] T item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar " + shape_string());
        return node_->value[0];
    }

    void zero_grad() {
        node_->ensure_grad();
        node_->grad.fill(T(0));
    }

    [[nodiscard]] const NodePtr& node() const noexcept { return node_; }

private:
    NodePtr node_;
};

/// Records a new op node. `backward` receives the output node (whose grad is
/// populated) and must accumulate into the grads of the parents that require
/// them. When no parent requires a gradient, or recording is disabled, the
/// result is a constant.
template <class T>
Var<T> make_op(const char* name, Matrix<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = name;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any && grad_enabled()) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Var<T>(std::move(n));
}

namespace detail {

template <class T>
Matrix<T>* grad_of(Node<T>& out, std::size_t parent) {
    auto& p = *out.parents[parent];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return &p.grad;
}

inline void require_same_shape(const char* op, std::size_t ar, std::size_t ac, std::size_t br,
                               std::size_t bc) {
    if (ar != br || ac != bc) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         Matrix<float>::shape_string(ar, ac) + " vs " +
                         Matrix<float>::shape_string(br, bc));
    }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
/// calls; interior gradients are reset at the start of every sweep.
template <class T>
void backward(const Var<T>& root) {
    if (root.size() != 1) throw ShapeError("backward: root must be scalar, got " + root.shape_string());
    if (!root.requires_grad()) return;

    // Iterative post-order DFS over parents gives a deterministic topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* child = node->parents[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order) {
        if (!n->is_leaf()) {
            n->ensure_grad();
            n->grad.fill(T(0));
        }
    }
    root.node()->ensure_grad();
    root.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward(**it);
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ " + a.shape_string() + " x " +
                         b.shape_string());
    }
    Matrix<T> out(a.rows(), b.cols());
    detail::as_eigen(out).noalias() = detail::as_eigen(a.value()) * detail::as_eigen(b.value());
    return make_op<T>("matmul", std::move(out), {a, b}, [](Node<T>& o) {
        const auto& A = o.parents[0]->value;
        const auto& B = o.parents[1]->value;
        const auto G = detail::as_eigen(std::as_const(o.grad));
        if (auto* ga = detail::grad_of(o, 0))
            detail::as_eigen(*ga).noalias() += G * detail::as_eigen(B).transpose();
        if (auto* gb = detail::grad_of(o, 1))
            detail::as_eigen(*gb).noalias() += detail::as_eigen(A).transpose() * G;
    });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
    Matrix<T> out(a.cols(), a.rows());
    detail::as_eigen(out) = detail::as_eigen(a.value()).transpose();
    return make_op<T>("transpose", std::move(out), {a}, [](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            detail::as_eigen(*g) += detail::as_eigen(std::as_const(o.grad)).transpose();
    });
}

/// Constant sparse matrix times a dense variable.
template <class T>
Var<T> spmm(std::shared_ptr<const CsrMatrix<T>> a, const Var<T>& x) {
    if (a->cols() != x.rows()) {
        throw ShapeError("spmm: inner dimensions differ " +
                         Matrix<T>::shape_string(a->rows(), a->cols()) + " x " + x.shape_string());
    }
    const std::size_t c = x.cols();
    Matrix<T> out(a->rows(), c);
    const auto rp = a->row_ptr();
    const auto ci = a->col_idx();
    const auto av = a->values();
    const auto& X = x.value();
    for (std::size_t r = 0; r < a->rows(); ++r) {
        T* dst = out.data() + r * c;
        for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) {
            const T w = av[k];
            const T* src = X.data() + ci[k] * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
        }
    }
    return make_op<T>("spmm", std::move(out), {x}, [a, c](Node<T>& o) {
        auto* gx = detail::grad_of(o, 0);
        if (!gx) return;
        const auto rp = a->row_ptr();
        const auto ci = a->col_idx();
        const auto av = a->values();
        for (std::size_t r = 0; r < a->rows(); ++r) {
            const T* src = o.grad.data() + r * c;
            for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) {
                T* dst = gx->data() + ci[k] * c;
                const T w = av[k];
                for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape("add", a.rows(), a.cols(), b.rows(), b.cols());
    Matrix<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& o) {
        for (std::size_t p = 0; p < 2; ++p)
            if (auto* g = detail::grad_of(o, p))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape("sub", a.rows(), a.cols(), b.rows(), b.cols());
    Matrix<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_op<T>("sub", std::move(out), {a, b}, [](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
        if (auto* g = detail::grad_of(o, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= o.grad[i];
    });
}

template <class T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape("hadamard", a.rows(), a.cols(), b.rows(), b.cols());
    Matrix<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op<T>("hadamard", std::move(out), {a, b}, [](Node<T>& o) {
        const auto& A = o.parents[0]->value;
        const auto& B = o.parents[1]->value;
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i] * B[i];
        if (auto* g = detail::grad_of(o, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i] * A[i];
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
    Matrix<T> out = a.value();
    for (auto& v : out.span()) v *= factor;
    return make_op<T>("scale", std::move(out), {a}, [factor](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * o.grad[i];
    });
}

/// Adds a [1 x c] row vector to every row of `a` (the only broadcast supported).
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: expected [1x" + std::to_string(a.cols()) + "] bias, got " +
                         row.shape_string());
    }
    Matrix<T> out = a.value();
    const std::size_t c = a.cols();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) out(r, j) += row.value()[j];
    return make_op<T>("add_row", std::move(out), {a, row}, [c](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
        if (auto* g = detail::grad_of(o, 1))
            for (std::size_t r = 0; r < o.grad.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) (*g)[j] += o.grad(r, j);
    });
}

template <class T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
    Matrix<T> out = a.value();
    for (auto& v : out.span()) v = sigmoid_scalar(v);
    return make_op<T>("sigmoid", std::move(out), {a}, [](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T y = o.value[i];
                (*g)[i] += o.grad[i] * y * (T(1) - y);
            }
    });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
    Matrix<T> out = a.value();
    for (auto& v : out.span()) v = std::tanh(v);
    return make_op<T>("tanh", std::move(out), {a}, [](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T y = o.value[i];
                (*g)[i] += o.grad[i] * (T(1) - y * y);
            }
    });
}

inline constexpr double kDefaultLeakySlope = 0.01;

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(kDefaultLeakySlope)) {
    Matrix<T> out = a.value();
    for (auto& v : out.span()) v = v > T(0) ? v : slope * v;
    return make_op<T>("leaky_relu", std::move(out), {a}, [slope](Node<T>& o) {
        const auto& X = o.parents[0]->value;
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += o.grad[i] * (X[i] > T(0) ? T(1) : slope);
    });
}

/// Sum of absolute values; the subgradient at exactly zero is zero.
template <class T>
Var<T> abs_sum(const Var<T>& a) {
    T s{};
    for (T v : a.value().span()) s += std::abs(v);
    return make_op<T>("abs_sum", Matrix<T>::scalar(s), {a}, [](Node<T>& o) {
        const auto& X = o.parents[0]->value;
        const T g0 = o.grad[0];
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += X[i] > T(0) ? g0 : (X[i] < T(0) ? -g0 : T(0));
    });
}

template <class T>
Var<T> sum(const Var<T>& a) {
    T s{};
    for (T v : a.value().span()) s += v;
    return make_op<T>("sum", Matrix<T>::scalar(s), {a}, [](Node<T>& o) {
        const T g0 = o.grad[0];
        if (auto* g = detail::grad_of(o, 0))
            for (auto& v : g->span()) v += g0;
    });
}

/// Stops gradient flow; the result is a constant copy.
template <class T>
Var<T> detach(const Var<T>& a) {
    return Var<T>::constant(a.value());
}

// ---------------------------------------------------------------------------
// Shape manipulation

/// Stacks inputs vertically; all inputs must share a column count.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c)
            throw ShapeError("concat_rows: column mismatch " + parts.front().shape_string() +
                             " vs " + p.shape_string());
        r += p.rows();
    }
    Matrix<T> out(r, c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.size(), out.data() + off);
        off += p.size();
    }
    return make_op<T>("concat_rows", std::move(out), parts, [](Node<T>& o) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < o.parents.size(); ++p) {
            const std::size_t len = o.parents[p]->value.size();
            if (auto* g = detail::grad_of(o, p))
                for (std::size_t i = 0; i < len; ++i) (*g)[i] += o.grad[off + i];
            off += len;
        }
    });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.rows())
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") outside " + a.shape_string());
    const std::size_t c = a.cols();
    Matrix<T> out(count, c);
    std::copy(a.value().data() + begin * c, a.value().data() + (begin + count) * c, out.data());
    return make_op<T>("slice_rows", std::move(out), {a}, [begin, c](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[begin * c + i] += o.grad[i];
    });
}

/// Places inputs side by side; all inputs must share a row count.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r)
            throw ShapeError("concat_cols: row mismatch " + parts.front().shape_string() + " vs " +
                             p.shape_string());
        c += p.cols();
    }
    Matrix<T> out(r, c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
        off += p.cols();
    }
    return make_op<T>("concat_cols", std::move(out), parts, [](Node<T>& o) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < o.parents.size(); ++p) {
            const std::size_t pc = o.parents[p]->value.cols();
            if (auto* g = detail::grad_of(o, p))
                for (std::size_t i = 0; i < g->rows(); ++i)
                    for (std::size_t j = 0; j < pc; ++j) (*g)(i, j) += o.grad(i, off + j);
            off += pc;
        }
    });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols())
        throw ShapeError("slice_cols: cols [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") outside " + a.shape_string());
    Matrix<T> out(a.rows(), count);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = a.value()(i, begin + j);
    return make_op<T>("slice_cols", std::move(out), {a}, [begin](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t i = 0; i < o.grad.rows(); ++i)
                for (std::size_t j = 0; j < o.grad.cols(); ++j) (*g)(i, begin + j) += o.grad(i, j);
    });
}

/// Row lookup: out[k] = a[indices[k]]. Backward scatter-adds.
template <class T>
Var<T> gather_rows(const Var<T>& a, std::vector<std::size_t> indices) {
    const std::size_t c = a.cols();
    Matrix<T> out(indices.size(), c);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= a.rows())
            throw ShapeError("gather_rows: index " + std::to_string(indices[k]) + " outside " +
                             a.shape_string());
        std::copy(a.value().data() + indices[k] * c, a.value().data() + (indices[k] + 1) * c,
                  out.data() + k * c);
    }
    return make_op<T>("gather_rows", std::move(out), {a},
                      [idx = std::move(indices), c](Node<T>& o) {
                          if (auto* g = detail::grad_of(o, 0))
                              for (std::size_t k = 0; k < idx.size(); ++k)
                                  for (std::size_t j = 0; j < c; ++j)
                                      (*g)(idx[k], j) += o.grad(k, j);
                      });
}

/// Picks one entry per row: out[r] = a[r, columns[r]], shape [rows x 1].
template <class T>
Var<T> pick(const Var<T>& a, std::vector<std::size_t> columns) {
    if (columns.size() != a.rows())
        throw ShapeError("pick: " + std::to_string(columns.size()) + " indices for " +
                         a.shape_string());
    Matrix<T> out(a.rows(), 1);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        if (columns[r] >= a.cols())
            throw ShapeError("pick: column " + std::to_string(columns[r]) + " outside " +
                             a.shape_string());
        out[r] = a.value()(r, columns[r]);
    }
    return make_op<T>("pick", std::move(out), {a}, [cols = std::move(columns)](Node<T>& o) {
        if (auto* g = detail::grad_of(o, 0))
            for (std::size_t r = 0; r < cols.size(); ++r) (*g)(r, cols[r]) += o.grad[r];
    });
}

// ---------------------------------------------------------------------------
// Fused ops used by the model

/// Masked binary cross-entropy summed over entries:
///   -sum_i mask_i * (r_i log y_i + (1 - r_i) log(1 - y_i)),  y = clamp(sigmoid(z)).
/// Entries whose probability is clamped receive no gradient.
template <class T>
Var<T> binary_cross_entropy(const Var<T>& logits, std::span<const T> targets,
                            std::span<const T> mask, T clamp = T(1e-7)) {
    if (targets.size() != logits.size() || mask.size() != logits.size())
        throw ShapeError("binary_cross_entropy: " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(mask.size()) + " mask entries for " +
                         logits.shape_string());
    T loss{};
    const auto& Z = logits.value();
    for (std::size_t i = 0; i < Z.size(); ++i) {
        if (mask[i] == T(0)) continue;
        const T y = std::clamp(sigmoid_scalar(Z[i]), clamp, T(1) - clamp);
        loss -= mask[i] * (targets[i] * std::log(y) + (T(1) - targets[i]) * std::log(T(1) - y));
    }
    std::vector<T> r(targets.begin(), targets.end());
    std::vector<T> m(mask.begin(), mask.end());
    return make_op<T>("binary_cross_entropy", Matrix<T>::scalar(loss), {logits},
                      [r = std::move(r), m = std::move(m), clamp](Node<T>& o) {
                          auto* g = detail::grad_of(o, 0);
                          if (!g) return;
                          const auto& Z = o.parents[0]->value;
                          const T g0 = o.grad[0];
                          for (std::size_t i = 0; i < Z.size(); ++i) {
                              if (m[i] == T(0)) continue;
                              const T y = sigmoid_scalar(Z[i]);
                              if (y <= clamp || y >= T(1) - clamp) continue;
                              // d/dz of -[r log y + (1-r) log(1-y)] = y - r
                              (*g)[i] += g0 * m[i] * (y - r[i]);
                          }
                      });
}

namespace detail {

// Shared kernel of gated_readout / gated_readout_at. With `items` empty the
// output is [rows x num_items]; otherwise [rows x 1] evaluated at items[b].
template <class T>
Var<T> gated_readout_impl(const Var<T>& gate_row, const Var<T>& gate_item, const Var<T>& c_row,
                          const Var<T>& c_item, const Var<T>& d_row, const Var<T>& d_item,
                          const Var<T>& w, std::vector<std::size_t> items) {
    const std::size_t B = gate_row.rows();
    const std::size_t N = gate_item.rows();
    const std::size_t H = c_row.cols();
    const std::size_t X = c_item.cols();
    const std::size_t D = H + X;
    if (gate_row.cols() != D || gate_item.cols() != D || c_row.rows() != B || d_row.rows() != B ||
        c_item.rows() != N || d_item.rows() != N || d_row.cols() != H || d_item.cols() != X ||
        w.rows() != D || w.cols() != 1) {
        throw ShapeError("gated_readout: inconsistent shapes gate " + gate_row.shape_string() +
                         "/" + gate_item.shape_string() + ", c " + c_row.shape_string() + "/" +
                         c_item.shape_string() + ", d " + d_row.shape_string() + "/" +
                         d_item.shape_string() + ", w " + w.shape_string());
    }
    const bool targeted = !items.empty();
    if (targeted) {
        if (items.size() != B)
            throw ShapeError("gated_readout_at: " + std::to_string(items.size()) + " items for " +
                             std::to_string(B) + " rows");
        for (auto i : items)
            if (i >= N)
                throw ShapeError("gated_readout_at: item " + std::to_string(i) + " outside " +
                                 std::to_string(N));
    }
    Matrix<T> out(B, targeted ? 1 : N);
    {
        const auto& GR = gate_row.value();
        const auto& GI = gate_item.value();
        const auto& CR = c_row.value();
        const auto& CI = c_item.value();
        const auto& DR = d_row.value();
        const auto& DI = d_item.value();
        const auto& W = w.value();
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t i_begin = targeted ? items[b] : 0;
            const std::size_t i_end = targeted ? items[b] + 1 : N;
            for (std::size_t i = i_begin; i < i_end; ++i) {
                T acc{};
                for (std::size_t j = 0; j < D; ++j) {
                    const T q = sigmoid_scalar(GR(b, j) + GI(i, j));
                    const T c = j < H ? CR(b, j) : CI(i, j - H);
                    const T d = j < H ? DR(b, j) : DI(i, j - H);
                    acc += W[j] * (d + q * (c - d));
                }
                out(b, targeted ? 0 : i) = acc;
            }
        }
    }
    return make_op<T>(
        "gated_readout", std::move(out), {gate_row, gate_item, c_row, c_item, d_row, d_item, w},
        [B, N, H, D, items = std::move(items)](Node<T>& o) {
            const bool targeted = !items.empty();
            const auto& GR = o.parents[0]->value;
            const auto& GI = o.parents[1]->value;
            const auto& CR = o.parents[2]->value;
            const auto& CI = o.parents[3]->value;
            const auto& DR = o.parents[4]->value;
            const auto& DI = o.parents[5]->value;
            const auto& W = o.parents[6]->value;
            auto* gGR = grad_of(o, 0);
            auto* gGI = grad_of(o, 1);
            auto* gCR = grad_of(o, 2);
            auto* gCI = grad_of(o, 3);
            auto* gDR = grad_of(o, 4);
            auto* gDI = grad_of(o, 5);
            auto* gW = grad_of(o, 6);
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t i_begin = targeted ? items[b] : 0;
                const std::size_t i_end = targeted ? items[b] + 1 : N;
                for (std::size_t i = i_begin; i < i_end; ++i) {
                    const T go = o.grad(b, targeted ? 0 : i);
                    if (go == T(0)) continue;
                    for (std::size_t j = 0; j < D; ++j) {
                        const T q = sigmoid_scalar(GR(b, j) + GI(i, j));
                        const bool row_part = j < H;
                        const T c = row_part ? CR(b, j) : CI(i, j - H);
                        const T d = row_part ? DR(b, j) : DI(i, j - H);
                        const T wj = W[j];
                        if (gW) (*gW)[j] += go * (d + q * (c - d));
                        const T dpre = go * wj * (c - d) * q * (T(1) - q);
                        if (gGR) (*gGR)(b, j) += dpre;
                        if (gGI) (*gGI)(i, j) += dpre;
                        const T dc = go * wj * q;
                        const T dd = go * wj * (T(1) - q);
                        if (row_part) {
                            if (gCR) (*gCR)(b, j) += dc;
                            if (gDR) (*gDR)(b, j) += dd;
                        } else {
                            if (gCI) (*gCI)(i, j - H) += dc;
                            if (gDI) (*gDI)(i, j - H) += dd;
                        }
                    }
                }
            }
        });
}

}  // namespace detail

/// Readout of gated fusions for every (row b, item i) pair:
///   out[b, i] = sum_j w_j * (d_j + q_j * (c_j - d_j)),  q = sigmoid(gate_row[b] + gate_item[i]),
/// where c = [c_row[b], c_item[i]] and d = [d_row[b], d_item[i]]. This equals
/// w^T (q * c + (1 - q) * d) without materialising the [rows*items x D] states.
template <class T>
Var<T> gated_readout(const Var<T>& gate_row, const Var<T>& gate_item, const Var<T>& c_row,
                     const Var<T>& c_item, const Var<T>& d_row, const Var<T>& d_item,
                     const Var<T>& w) {
    return detail::gated_readout_impl(gate_row, gate_item, c_row, c_item, d_row, d_item, w, {});
}

/// gated_readout restricted to one item per row; result is [rows x 1].
template <class T>
Var<T> gated_readout_at(const Var<T>& gate_row, const Var<T>& gate_item, const Var<T>& c_row,
                        const Var<T>& c_item, const Var<T>& d_row, const Var<T>& d_item,
                        const Var<T>& w, std::vector<std::size_t> items) {
    if (items.empty() && gate_row.rows() != 0)
        throw ShapeError("gated_readout_at: no items given");
    return detail::gated_readout_impl(gate_row, gate_item, c_row, c_item, d_row, d_item, w,
                                      std::move(items));
}

}  // namespace dgekt::ad
