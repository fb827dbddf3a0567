#pragma once

#include <cassert>
#include <span>

#include "mfpinn/blas.hpp"
#include "mfpinn/common.hpp"

namespace mfpinn {

/// Elementwise primitive kinds. Every kind has analytic derivatives up to
/// third order, which is what a backward sweep over recorded second
/// derivatives requires.
enum class ElemKind {
    Swish,
    Sigmoid,
    Tanh,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Recip,
    Square,
    Relu,
};

/// f^(order)(x) for the given primitive.
template <class T>
T elem_eval(ElemKind k, int order, T x) {
    switch (k) {
        case ElemKind::Swish: {
            T s = T(1) / (T(1) + std::exp(-x));
            T s1 = s * (T(1) - s);
            if (order == 0) return x * s;
            if (order == 1) return s + x * s1;
            T s2 = s1 * (T(1) - T(2) * s);
            if (order == 2) return T(2) * s1 + x * s2;
            T s3 = s2 * (T(1) - T(2) * s) - T(2) * s1 * s1;
            return T(3) * s2 + x * s3;
        }
        case ElemKind::Sigmoid: {
            T s = T(1) / (T(1) + std::exp(-x));
            T s1 = s * (T(1) - s);
            if (order == 0) return s;
            if (order == 1) return s1;
            T s2 = s1 * (T(1) - T(2) * s);
            if (order == 2) return s2;
            return s2 * (T(1) - T(2) * s) - T(2) * s1 * s1;
        }
        case ElemKind::Tanh: {
            T t = std::tanh(x);
            T d = T(1) - t * t;
            if (order == 0) return t;
            if (order == 1) return d;
            if (order == 2) return T(-2) * t * d;
            return d * (T(4) * t * t - T(2));
        }
        case ElemKind::Sin:
            switch (order & 3) {
                case 0: return std::sin(x);
                case 1: return std::cos(x);
                case 2: return -std::sin(x);
                default: return -std::cos(x);
            }
        case ElemKind::Cos:
            switch (order & 3) {
                case 0: return std::cos(x);
                case 1: return -std::sin(x);
                case 2: return -std::cos(x);
                default: return std::sin(x);
            }
        case ElemKind::Exp:
            return std::exp(x);
        case ElemKind::Log:
            if (order == 0) return std::log(x);
            if (order == 1) return T(1) / x;
            if (order == 2) return T(-1) / (x * x);
            return T(2) / (x * x * x);
        case ElemKind::Sqrt:
            if (order == 0) return std::sqrt(x);
            if (order == 1) return T(0.5) / std::sqrt(x);
            if (order == 2) return T(-0.25) / (x * std::sqrt(x));
            return T(0.375) / (x * x * std::sqrt(x));
        case ElemKind::Abs:
            if (order == 0) return std::abs(x);
            if (order == 1) return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
            return T(0);
        case ElemKind::Recip:
            if (order == 0) return T(1) / x;
            if (order == 1) return T(-1) / (x * x);
            if (order == 2) return T(2) / (x * x * x);
            return T(-6) / (x * x * x * x);
        case ElemKind::Square:
            if (order == 0) return x * x;
            if (order == 1) return T(2) * x;
            if (order == 2) return T(2);
            return T(0);
        case ElemKind::Relu:
            if (order == 0) return x > T(0) ? x : T(0);
            if (order == 1) return x > T(0) ? T(1) : T(0);
            return T(0);
    }
    return T(0);
}

inline const char* elem_name(ElemKind k) {
    switch (k) {
        case ElemKind::Swish: return "swish";
        case ElemKind::Sigmoid: return "sigmoid";
        case ElemKind::Tanh: return "tanh";
        case ElemKind::Sin: return "sin";
        case ElemKind::Cos: return "cos";
        case ElemKind::Exp: return "exp";
        case ElemKind::Log: return "log";
        case ElemKind::Sqrt: return "sqrt";
        case ElemKind::Abs: return "abs";
        case ElemKind::Recip: return "recip";
        case ElemKind::Square: return "square";
        case ElemKind::Relu: return "relu";
    }
    return "?";
}

enum class Op {
    ConstMat,   // leaf, fixed value
    Param,      // leaf, slice of the trainable parameter vector
    Affine,     // a*b (+ bias c per column)
    Add,        // a + b
    Sub,        // a - b
    Hadamard,   // a ⊗ b
    Scale,      // cattr * a
    AddConst,   // a + cattr
    RowScale,   // a ⊗ b, b is a column vector broadcast across columns
    ShiftRows,  // a + vattr broadcast across columns
    Elem,       // elementwise primitive, derivative order 0..2
    PowConst,   // a^cattr elementwise
    PowScalar,  // a^s elementwise, s = 1x1 node b (domain a >= 0)
    MulScalar,  // a * s, s = 1x1 node b
    Row,        // row cattr of a -> 1xN
    ConcatRows, // [a; b]
    SumSqCols,  // column sums of squares -> 1xN
    DotRow,     // sum_j vattr_j * a_j -> 1x1
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::ConstMat: return "const";
        case Op::Param: return "param";
        case Op::Affine: return "affine";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Hadamard: return "hadamard";
        case Op::Scale: return "scale";
        case Op::AddConst: return "add_const";
        case Op::RowScale: return "row_scale";
        case Op::ShiftRows: return "shift_rows";
        case Op::Elem: return "elem";
        case Op::PowConst: return "pow_const";
        case Op::PowScalar: return "pow_scalar";
        case Op::MulScalar: return "mul_scalar";
        case Op::Row: return "row";
        case Op::ConcatRows: return "concat_rows";
        case Op::SumSqCols: return "sum_sq_cols";
        case Op::DotRow: return "dot_row";
    }
    return "?";
}

/// Append-only tape of batched matrix operations.
///
/// Nodes are recorded eagerly: creating a node computes its value at once.
/// replay() recomputes every node in recording order, which makes one graph
/// reusable across optimizer iterations: bind new parameter values, replay,
/// run backward. The structure (shapes, point sets, constants) stays fixed.
template <class T>
class Graph {
  public:
    struct Node {
        Op op = Op::ConstMat;
        ElemKind ek = ElemKind::Swish;
        int order = 0;
        int a = -1, b = -1, c = -1;
        double cattr = 0.0;
        std::vector<T> vattr;
        int poff = 0;  // Param: offset into theta
        Mat<T> val;
        Mat<T> adj;
        bool needs_grad = false;
    };

    void bind_theta(const T* theta, size_t n) {
        theta_ = theta;
        theta_size_ = n;
    }

    int size() const { return int(nodes_.size()); }
    const Mat<T>& val(int id) const { return nodes_[id].val; }
    const Node& node(int id) const { return nodes_[id]; }

    int const_mat(Mat<T> v) {
        Node n;
        n.op = Op::ConstMat;
        n.val = std::move(v);
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    int param(int offset, int rows, int cols) {
        assert(theta_ && size_t(offset) + size_t(rows) * cols <= theta_size_);
        Node n;
        n.op = Op::Param;
        n.poff = offset;
        n.val.resize(rows, cols);
        n.needs_grad = true;
        nodes_.push_back(std::move(n));
        eval(size() - 1);
        return size() - 1;
    }

    int affine(int W, int X, int bias = -1) {
        return push(Op::Affine, W, X, bias, nodes_[W].val.rows, nodes_[X].val.cols);
    }
    int add(int a, int b) { return push(Op::Add, a, b, -1, rows(a), cols(a)); }
    int sub(int a, int b) { return push(Op::Sub, a, b, -1, rows(a), cols(a)); }
    int hadamard(int a, int b) { return push(Op::Hadamard, a, b, -1, rows(a), cols(a)); }
    int scale(int a, double c) {
        int id = push_noeval(Op::Scale, a, -1, -1, rows(a), cols(a));
        nodes_[id].cattr = c;
        eval(id);
        return id;
    }
    int add_const(int a, double c) {
        int id = push_noeval(Op::AddConst, a, -1, -1, rows(a), cols(a));
        nodes_[id].cattr = c;
        eval(id);
        return id;
    }
    int row_scale(int a, int v) { return push(Op::RowScale, a, v, -1, rows(a), cols(a)); }
    int shift_rows(int a, std::vector<T> shift) {
        int id = push_noeval(Op::ShiftRows, a, -1, -1, rows(a), cols(a));
        nodes_[id].vattr = std::move(shift);
        eval(id);
        return id;
    }
    int elem(ElemKind k, int order, int a) {
        int id = push_noeval(Op::Elem, a, -1, -1, rows(a), cols(a));
        nodes_[id].ek = k;
        nodes_[id].order = order;
        eval(id);
        return id;
    }
    int pow_const(int a, double p) {
        int id = push_noeval(Op::PowConst, a, -1, -1, rows(a), cols(a));
        nodes_[id].cattr = p;
        eval(id);
        return id;
    }
    int pow_scalar(int a, int s) { return push(Op::PowScalar, a, s, -1, rows(a), cols(a)); }
    int mul_scalar(int a, int s) { return push(Op::MulScalar, a, s, -1, rows(a), cols(a)); }
    int row(int a, int i) {
        int id = push_noeval(Op::Row, a, -1, -1, 1, cols(a));
        nodes_[id].cattr = i;
        eval(id);
        return id;
    }
    int concat_rows(int a, int b) {
        return push(Op::ConcatRows, a, b, -1, rows(a) + rows(b), cols(a));
    }
    int sum_sq_cols(int a) { return push(Op::SumSqCols, a, -1, -1, 1, cols(a)); }
    int dot_row(int a, std::vector<T> w) {
        int id = push_noeval(Op::DotRow, a, -1, -1, 1, 1);
        nodes_[id].vattr = std::move(w);
        eval(id);
        return id;
    }
    void set_dot_weights(int id, std::vector<T> w) {
        assert(nodes_[id].op == Op::DotRow);
        nodes_[id].vattr = std::move(w);
    }

    /// Recompute every node value in recording order.
    void replay() {
        for (int i = 0; i < size(); ++i) eval(i);
    }

    /// Reverse sweep from a scalar node; parameter adjoints accumulate into
    /// grad (not zeroed here so several graphs can share one gradient).
    void backward(int loss, std::span<T> grad) {
        assert(rows(loss) == 1 && cols(loss) == 1);
        for (auto& n : nodes_) {
            if (!n.needs_grad) continue;
            if (n.adj.rows != n.val.rows || n.adj.cols != n.val.cols)
                n.adj.resize(n.val.rows, n.val.cols);
            else
                n.adj.zero();
        }
        if (!nodes_[loss].needs_grad) return;
        nodes_[loss].adj(0, 0) = T(1);
        for (int i = loss; i >= 0; --i) vjp(i, grad);
    }

    /// Index of the first non-finite node value, or -1.
    int first_non_finite() const {
        for (int i = 0; i < size(); ++i)
            for (const T& x : nodes_[i].val.a)
                if (!std::isfinite(double(x))) return i;
        return -1;
    }

    std::string describe(int id) const {
        const Node& n = nodes_[id];
        std::string s = "node " + std::to_string(id) + " (" + op_name(n.op);
        if (n.op == Op::Elem)
            s += std::string(":") + elem_name(n.ek) + "'" + std::to_string(n.order);
        return s + ")";
    }

  private:
    int rows(int id) const { return nodes_[id].val.rows; }
    int cols(int id) const { return nodes_[id].val.cols; }

    int push_noeval(Op op, int a, int b, int c, int r, int n) {
        Node nd;
        nd.op = op;
        nd.a = a;
        nd.b = b;
        nd.c = c;
        nd.val.resize(r, n);
        nd.needs_grad = (a >= 0 && nodes_[a].needs_grad) ||
                        (b >= 0 && nodes_[b].needs_grad) ||
                        (c >= 0 && nodes_[c].needs_grad);
        nodes_.push_back(std::move(nd));
        return size() - 1;
    }

    int push(Op op, int a, int b, int c, int r, int n) {
        int id = push_noeval(op, a, b, c, r, n);
        eval(id);
        return id;
    }

    void eval(int id) {
        Node& n = nodes_[id];
        switch (n.op) {
            case Op::ConstMat:
                break;
            case Op::Param:
                std::memcpy(n.val.data(), theta_ + n.poff, n.val.size() * sizeof(T));
                break;
            case Op::Affine: {
                const Mat<T>& W = nodes_[n.a].val;
                const Mat<T>& X = nodes_[n.b].val;
                matmul(W, X, n.val);
                if (n.c >= 0) {
                    const Mat<T>& bias = nodes_[n.c].val;
                    for (int j = 0; j < n.val.cols; ++j) {
                        T* col = n.val.data() + size_t(j) * n.val.rows;
                        for (int i = 0; i < n.val.rows; ++i) col[i] += bias.a[i];
                    }
                }
                break;
            }
            case Op::Add: {
                const auto& A = nodes_[n.a].val.a;
                const auto& B = nodes_[n.b].val.a;
                for (size_t i = 0; i < A.size(); ++i) n.val.a[i] = A[i] + B[i];
                break;
            }
            case Op::Sub: {
                const auto& A = nodes_[n.a].val.a;
                const auto& B = nodes_[n.b].val.a;
                for (size_t i = 0; i < A.size(); ++i) n.val.a[i] = A[i] - B[i];
                break;
            }
            case Op::Hadamard: {
                const auto& A = nodes_[n.a].val.a;
                const auto& B = nodes_[n.b].val.a;
                for (size_t i = 0; i < A.size(); ++i) n.val.a[i] = A[i] * B[i];
                break;
            }
            case Op::Scale: {
                const auto& A = nodes_[n.a].val.a;
                T c = T(n.cattr);
                for (size_t i = 0; i < A.size(); ++i) n.val.a[i] = c * A[i];
                break;
            }
            case Op::AddConst: {
                const auto& A = nodes_[n.a].val.a;
                T c = T(n.cattr);
                for (size_t i = 0; i < A.size(); ++i) n.val.a[i] = A[i] + c;
                break;
            }
            case Op::RowScale: {
                const Mat<T>& A = nodes_[n.a].val;
                const Mat<T>& v = nodes_[n.b].val;
                for (int j = 0; j < A.cols; ++j) {
                    const T* src = A.data() + size_t(j) * A.rows;
                    T* dst = n.val.data() + size_t(j) * A.rows;
                    for (int i = 0; i < A.rows; ++i) dst[i] = src[i] * v.a[i];
                }
                break;
            }
            case Op::ShiftRows: {
                const Mat<T>& A = nodes_[n.a].val;
                for (int j = 0; j < A.cols; ++j) {
                    const T* src = A.data() + size_t(j) * A.rows;
                    T* dst = n.val.data() + size_t(j) * A.rows;
                    for (int i = 0; i < A.rows; ++i) dst[i] = src[i] + n.vattr[i];
                }
                break;
            }
            case Op::Elem: {
                const auto& A = nodes_[n.a].val.a;
                for (size_t i = 0; i < A.size(); ++i)
                    n.val.a[i] = elem_eval<T>(n.ek, n.order, A[i]);
                break;
            }
            case Op::PowConst: {
                const auto& A = nodes_[n.a].val.a;
                T p = T(n.cattr);
                for (size_t i = 0; i < A.size(); ++i) n.val.a[i] = std::pow(A[i], p);
                break;
            }
            case Op::PowScalar: {
                const auto& A = nodes_[n.a].val.a;
                T s = nodes_[n.b].val.a[0];
                for (size_t i = 0; i < A.size(); ++i) n.val.a[i] = std::pow(A[i], s);
                break;
            }
            case Op::MulScalar: {
                const auto& A = nodes_[n.a].val.a;
                T s = nodes_[n.b].val.a[0];
                for (size_t i = 0; i < A.size(); ++i) n.val.a[i] = s * A[i];
                break;
            }
            case Op::Row: {
                const Mat<T>& A = nodes_[n.a].val;
                int r = int(n.cattr);
                for (int j = 0; j < A.cols; ++j) n.val.a[j] = A(r, j);
                break;
            }
            case Op::ConcatRows: {
                const Mat<T>& A = nodes_[n.a].val;
                const Mat<T>& B = nodes_[n.b].val;
                for (int j = 0; j < A.cols; ++j) {
                    T* dst = n.val.data() + size_t(j) * n.val.rows;
                    std::memcpy(dst, A.data() + size_t(j) * A.rows, A.rows * sizeof(T));
                    std::memcpy(dst + A.rows, B.data() + size_t(j) * B.rows,
                                B.rows * sizeof(T));
                }
                break;
            }
            case Op::SumSqCols: {
                const Mat<T>& A = nodes_[n.a].val;
                for (int j = 0; j < A.cols; ++j) {
                    const T* col = A.data() + size_t(j) * A.rows;
                    T acc = T(0);
                    for (int i = 0; i < A.rows; ++i) acc += col[i] * col[i];
                    n.val.a[j] = acc;
                }
                break;
            }
            case Op::DotRow: {
                const auto& A = nodes_[n.a].val.a;
                T acc = T(0);
                for (size_t i = 0; i < A.size(); ++i) acc += n.vattr[i] * A[i];
                n.val.a[0] = acc;
                break;
            }
        }
    }

    bool ng(int id) const { return id >= 0 && nodes_[id].needs_grad; }

    void vjp(int id, std::span<T> grad) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        const Mat<T>& g = n.adj;
        switch (n.op) {
            case Op::ConstMat:
                break;
            case Op::Param: {
                for (size_t i = 0; i < g.a.size(); ++i) grad[n.poff + i] += g.a[i];
                break;
            }
            case Op::Affine: {
                const Mat<T>& W = nodes_[n.a].val;
                const Mat<T>& X = nodes_[n.b].val;
                if (ng(n.a)) matmul_nt(g, X, nodes_[n.a].adj);
                if (ng(n.b)) matmul_tn(W, g, nodes_[n.b].adj);
                if (ng(n.c)) {
                    Mat<T>& gb = nodes_[n.c].adj;
                    for (int j = 0; j < g.cols; ++j) {
                        const T* col = g.data() + size_t(j) * g.rows;
                        for (int i = 0; i < g.rows; ++i) gb.a[i] += col[i];
                    }
                }
                break;
            }
            case Op::Add:
                acc(n.a, g.a);
                acc(n.b, g.a);
                break;
            case Op::Sub:
                acc(n.a, g.a);
                if (ng(n.b)) {
                    auto& gb = nodes_[n.b].adj.a;
                    for (size_t i = 0; i < gb.size(); ++i) gb[i] -= g.a[i];
                }
                break;
            case Op::Hadamard:
                if (ng(n.a)) {
                    const auto& B = nodes_[n.b].val.a;
                    auto& ga = nodes_[n.a].adj.a;
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g.a[i] * B[i];
                }
                if (ng(n.b)) {
                    const auto& A = nodes_[n.a].val.a;
                    auto& gb = nodes_[n.b].adj.a;
                    for (size_t i = 0; i < gb.size(); ++i) gb[i] += g.a[i] * A[i];
                }
                break;
            case Op::Scale:
                if (ng(n.a)) {
                    auto& ga = nodes_[n.a].adj.a;
                    T c = T(n.cattr);
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] += c * g.a[i];
                }
                break;
            case Op::AddConst:
            case Op::ShiftRows:
                acc(n.a, g.a);
                break;
            case Op::RowScale: {
                const Mat<T>& A = nodes_[n.a].val;
                const Mat<T>& v = nodes_[n.b].val;
                if (ng(n.a)) {
                    Mat<T>& ga = nodes_[n.a].adj;
                    for (int j = 0; j < A.cols; ++j) {
                        const T* gc = g.data() + size_t(j) * A.rows;
                        T* dst = ga.data() + size_t(j) * A.rows;
                        for (int i = 0; i < A.rows; ++i) dst[i] += gc[i] * v.a[i];
                    }
                }
                if (ng(n.b)) {
                    Mat<T>& gv = nodes_[n.b].adj;
                    for (int j = 0; j < A.cols; ++j) {
                        const T* gc = g.data() + size_t(j) * A.rows;
                        const T* ac = A.data() + size_t(j) * A.rows;
                        for (int i = 0; i < A.rows; ++i) gv.a[i] += gc[i] * ac[i];
                    }
                }
                break;
            }
            case Op::Elem:
                if (ng(n.a)) {
                    const auto& A = nodes_[n.a].val.a;
                    auto& ga = nodes_[n.a].adj.a;
                    for (size_t i = 0; i < ga.size(); ++i)
                        ga[i] += g.a[i] * elem_eval<T>(n.ek, n.order + 1, A[i]);
                }
                break;
            case Op::PowConst:
                if (ng(n.a)) {
                    const auto& A = nodes_[n.a].val.a;
                    auto& ga = nodes_[n.a].adj.a;
                    T p = T(n.cattr);
                    for (size_t i = 0; i < ga.size(); ++i)
                        ga[i] += g.a[i] * p * std::pow(A[i], p - T(1));
                }
                break;
            case Op::PowScalar: {
                const auto& A = nodes_[n.a].val.a;
                T s = nodes_[n.b].val.a[0];
                if (ng(n.a)) {
                    auto& ga = nodes_[n.a].adj.a;
                    for (size_t i = 0; i < ga.size(); ++i)
                        if (A[i] > T(0))
                            ga[i] += g.a[i] * s * std::pow(A[i], s - T(1));
                }
                if (ng(n.b)) {
                    T acc_s = T(0);
                    for (size_t i = 0; i < A.size(); ++i)
                        if (A[i] > T(0))
                            acc_s += g.a[i] * n.val.a[i] * std::log(A[i]);
                    nodes_[n.b].adj.a[0] += acc_s;
                }
                break;
            }
            case Op::MulScalar: {
                const auto& A = nodes_[n.a].val.a;
                T s = nodes_[n.b].val.a[0];
                if (ng(n.a)) {
                    auto& ga = nodes_[n.a].adj.a;
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] += s * g.a[i];
                }
                if (ng(n.b)) {
                    T acc_s = T(0);
                    for (size_t i = 0; i < A.size(); ++i) acc_s += g.a[i] * A[i];
                    nodes_[n.b].adj.a[0] += acc_s;
                }
                break;
            }
            case Op::Row:
                if (ng(n.a)) {
                    Mat<T>& ga = nodes_[n.a].adj;
                    int r = int(n.cattr);
                    for (int j = 0; j < ga.cols; ++j) ga(r, j) += g.a[j];
                }
                break;
            case Op::ConcatRows: {
                int ra = nodes_[n.a].val.rows;
                int rb = nodes_[n.b].val.rows;
                if (ng(n.a)) {
                    Mat<T>& ga = nodes_[n.a].adj;
                    for (int j = 0; j < ga.cols; ++j)
                        for (int i = 0; i < ra; ++i) ga(i, j) += g(i, j);
                }
                if (ng(n.b)) {
                    Mat<T>& gb = nodes_[n.b].adj;
                    for (int j = 0; j < gb.cols; ++j)
                        for (int i = 0; i < rb; ++i) gb(i, j) += g(ra + i, j);
                }
                break;
            }
            case Op::SumSqCols:
                if (ng(n.a)) {
                    const Mat<T>& A = nodes_[n.a].val;
                    Mat<T>& ga = nodes_[n.a].adj;
                    for (int j = 0; j < A.cols; ++j) {
                        const T* ac = A.data() + size_t(j) * A.rows;
                        T* dst = ga.data() + size_t(j) * A.rows;
                        T gj = g.a[j];
                        for (int i = 0; i < A.rows; ++i) dst[i] += T(2) * ac[i] * gj;
                    }
                }
                break;
            case Op::DotRow:
                if (ng(n.a)) {
                    auto& ga = nodes_[n.a].adj.a;
                    T gs = g.a[0];
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] += n.vattr[i] * gs;
                }
                break;
        }
    }

    void acc(int id, const std::vector<T>& g) {
        if (!ng(id)) return;
        auto& a = nodes_[id].adj.a;
        for (size_t i = 0; i < a.size(); ++i) a[i] += g[i];
    }

    std::vector<Node> nodes_;
    const T* theta_ = nullptr;
    size_t theta_size_ = 0;
};

}  // namespace mfpinn
