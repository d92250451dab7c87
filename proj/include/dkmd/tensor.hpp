#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dkmd/error.hpp"

namespace dkmd::nn {

// Plain row-major matrix of doubles. Vectors are 1xN, scalars 1x1.
struct Array {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Array() = default;
    Array(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Array(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) throw Error(ErrorCategory::shape, "array data does not match shape");
    }

    std::size_t size() const { return rows * cols; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

// A named learnable matrix with a persistent gradient buffer. Parameters
// outlive tapes; each forward pass binds them as leaves via Tape::use.
struct Parameter {
    std::string name;
    Array value;
    Array grad;

    Parameter() = default;
    Parameter(std::string n, std::size_t rows, std::size_t cols)
        : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

    std::size_t size() const { return value.size(); }
    void zero_grad() { grad.fill(0.0); }
};

namespace detail {

// c[m x n] += a[m x k] * b[k x n]
inline void mm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m x n] += a[m x k] * b^T where b is given row-major [n x k]
inline void mm_abt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

// c[m x n] += a^T * b where a is given row-major [k x m], b is [k x n]
inline void mm_atb(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

inline double gelu_value(double x) {
    const double u = kGeluScale * (x + kGeluCubic * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_derivative(double x) {
    const double u = kGeluScale * (x + kGeluCubic * x * x * x);
    const double t = std::tanh(u);
    const double sech2 = 1.0 - t * t;
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

}  // namespace detail

class Tape;

// Lightweight handle into a Tape node.
class Tensor {
  public:
    Tensor() = default;
    Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    int id() const { return id_; }

    std::size_t rows() const;
    std::size_t cols() const;
    const std::vector<double>& value() const;
    const std::vector<double>& grad() const;
    bool requires_grad() const;
    double at(std::size_t r, std::size_t c) const;
    double scalar() const;

  private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() walks them once in reverse.
// Gradients accumulate additively at fan-out, and leaf nodes bound to a
// Parameter flush their accumulated gradient into Parameter::grad.
class Tape {
  public:
    struct Node {
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
        Parameter* param = nullptr;
        std::function<void(Tape&)> backward;
    };

    int new_node(std::size_t rows, std::size_t cols, bool requires_grad) {
        Node n;
        n.rows = rows;
        n.cols = cols;
        n.value.assign(rows * cols, 0.0);
        n.grad.assign(rows * cols, 0.0);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    Tensor constant(const Array& a) {
        int id = new_node(a.rows, a.cols, false);
        node(id).value = a.data;
        return Tensor(this, id);
    }

    Tensor constant(std::size_t rows, std::size_t cols, double fill = 0.0) {
        int id = new_node(rows, cols, false);
        if (fill != 0.0) std::fill(node(id).value.begin(), node(id).value.end(), fill);
        return Tensor(this, id);
    }

    // Unbound differentiable leaf (used by the finite-difference harness).
    Tensor leaf(const Array& a) {
        int id = new_node(a.rows, a.cols, true);
        node(id).value = a.data;
        return Tensor(this, id);
    }

    // Differentiable leaf bound to a persistent parameter. Binding the same
    // parameter more than once is fine: every bound node flushes its own
    // partial gradient into the parameter, and the partials add up.
    Tensor use(Parameter& p) {
        int id = new_node(p.value.rows, p.value.cols, true);
        node(id).value = p.value.data;
        node(id).param = &p;
        return Tensor(this, id);
    }

    void backward(const Tensor& loss) {
        if (!loss.valid() || &loss.tape() != this)
            throw Error(ErrorCategory::state, "backward: loss is not on this tape");
        if (nodes_.empty()) throw Error(ErrorCategory::state, "backward: empty tape");
        Node& l = node(loss.id());
        if (l.rows != 1 || l.cols != 1)
            throw Error(ErrorCategory::shape, "backward: loss must be a scalar");
        l.grad[0] = 1.0;
        for (int i = loss.id(); i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.requires_grad && n.backward) n.backward(*this);
        }
        for (auto& n : nodes_) {
            if (n.param != nullptr) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad.data[i] += n.grad[i];
            }
        }
    }

  private:
    std::vector<Node> nodes_;
};

inline std::size_t Tensor::rows() const { return tape_->node(id_).rows; }
inline std::size_t Tensor::cols() const { return tape_->node(id_).cols; }
inline const std::vector<double>& Tensor::value() const { return tape_->node(id_).value; }
inline const std::vector<double>& Tensor::grad() const { return tape_->node(id_).grad; }
inline bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }
inline double Tensor::at(std::size_t r, std::size_t c) const { return value()[r * cols() + c]; }
inline double Tensor::scalar() const {
    if (rows() != 1 || cols() != 1) throw Error(ErrorCategory::shape, "scalar() on non-scalar tensor");
    return value()[0];
}

namespace detail {
inline Tape& same_tape(const Tensor& a, const Tensor& b) {
    if (!a.valid() || !b.valid()) throw Error(ErrorCategory::state, "op on invalid tensor");
    if (&a.tape() != &b.tape()) throw Error(ErrorCategory::state, "op on tensors from different tapes");
    return a.tape();
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape& t = detail::same_tape(a, b);
    if (a.cols() != b.rows()) throw Error(ErrorCategory::shape, "matmul: inner dimensions differ");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const bool rg = a.requires_grad() || b.requires_grad();
    int id = t.new_node(m, n, rg);
    detail::mm(t.node(a.id()).value.data(), t.node(b.id()).value.data(), t.node(id).value.data(), m, k, n);
    if (rg) {
        const int ia = a.id(), ib = b.id();
        t.node(id).backward = [ia, ib, id, m, k, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            if (tp.node(ia).requires_grad)
                detail::mm_abt(g.data(), tp.node(ib).value.data(), tp.node(ia).grad.data(), m, n, k);
            if (tp.node(ib).requires_grad)
                detail::mm_atb(tp.node(ia).value.data(), g.data(), tp.node(ib).grad.data(), k, m, n);
        };
    }
    return Tensor(&t, id);
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    Tape& t = detail::same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCategory::shape, "add: shape mismatch");
    const bool rg = a.requires_grad() || b.requires_grad();
    int id = t.new_node(a.rows(), a.cols(), rg);
    auto& out = t.node(id).value;
    const auto& av = t.node(a.id()).value;
    const auto& bv = t.node(b.id()).value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    if (rg) {
        const int ia = a.id(), ib = b.id();
        t.node(id).backward = [ia, ib, id](Tape& tp) {
            const auto& g = tp.node(id).grad;
            if (tp.node(ia).requires_grad) {
                auto& ga = tp.node(ia).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp.node(ib).requires_grad) {
                auto& gb = tp.node(ib).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
    }
    return Tensor(&t, id);
}

// Adds a 1xN row vector to every row of an MxN matrix.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    Tape& t = detail::same_tape(x, b);
    if (b.rows() != 1 || b.cols() != x.cols()) throw Error(ErrorCategory::shape, "add_rowvec: bad bias shape");
    const std::size_t m = x.rows(), n = x.cols();
    const bool rg = x.requires_grad() || b.requires_grad();
    int id = t.new_node(m, n, rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    const auto& bv = t.node(b.id()).value;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
    if (rg) {
        const int ix = x.id(), ib = b.id();
        t.node(id).backward = [ix, ib, id, m, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            if (tp.node(ix).requires_grad) {
                auto& gx = tp.node(ix).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (tp.node(ib).requires_grad) {
                auto& gb = tp.node(ib).grad;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        };
    }
    return Tensor(&t, id);
}

inline Tensor scale(const Tensor& x, double c) {
    Tape& t = x.tape();
    const bool rg = x.requires_grad();
    int id = t.new_node(x.rows(), x.cols(), rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
    if (rg) {
        const int ix = x.id();
        t.node(id).backward = [ix, id, c](Tape& tp) {
            const auto& g = tp.node(id).grad;
            auto& gx = tp.node(ix).grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
        };
    }
    return Tensor(&t, id);
}

// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    Tape& t = detail::same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCategory::shape, "mul: shape mismatch");
    const bool rg = a.requires_grad() || b.requires_grad();
    int id = t.new_node(a.rows(), a.cols(), rg);
    auto& out = t.node(id).value;
    const auto& av = t.node(a.id()).value;
    const auto& bv = t.node(b.id()).value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    if (rg) {
        const int ia = a.id(), ib = b.id();
        t.node(id).backward = [ia, ib, id](Tape& tp) {
            const auto& g = tp.node(id).grad;
            const auto& av2 = tp.node(ia).value;
            const auto& bv2 = tp.node(ib).value;
            if (tp.node(ia).requires_grad) {
                auto& ga = tp.node(ia).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (tp.node(ib).requires_grad) {
                auto& gb = tp.node(ib).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        };
    }
    return Tensor(&t, id);
}

inline Tensor transpose(const Tensor& x) {
    Tape& t = x.tape();
    const std::size_t m = x.rows(), n = x.cols();
    const bool rg = x.requires_grad();
    int id = t.new_node(n, m, rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
    if (rg) {
        const int ix = x.id();
        t.node(id).backward = [ix, id, m, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            auto& gx = tp.node(ix).grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
        };
    }
    return Tensor(&t, id);
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw Error(ErrorCategory::shape, "concat_rows: no inputs");
    Tape& t = parts.front().tape();
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    bool rg = false;
    for (const auto& p : parts) {
        detail::same_tape(parts.front(), p);
        if (p.cols() != n) throw Error(ErrorCategory::shape, "concat_rows: column mismatch");
        m += p.rows();
        rg = rg || p.requires_grad();
    }
    int id = t.new_node(m, n, rg);
    auto& out = t.node(id).value;
    std::size_t row = 0;
    std::vector<int> ids;
    std::vector<std::size_t> row_of;
    for (const auto& p : parts) {
        const auto& pv = t.node(p.id()).value;
        std::copy(pv.begin(), pv.end(), out.begin() + static_cast<std::ptrdiff_t>(row * n));
        ids.push_back(p.id());
        row_of.push_back(row);
        row += p.rows();
    }
    if (rg) {
        t.node(id).backward = [ids, row_of, id, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            for (std::size_t s = 0; s < ids.size(); ++s) {
                auto& pn = tp.node(ids[s]);
                if (!pn.requires_grad) continue;
                const std::size_t off = row_of[s] * n;
                for (std::size_t i = 0; i < pn.grad.size(); ++i) pn.grad[i] += g[off + i];
            }
        };
    }
    return Tensor(&t, id);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw Error(ErrorCategory::shape, "concat_cols: no inputs");
    Tape& t = parts.front().tape();
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    bool rg = false;
    for (const auto& p : parts) {
        detail::same_tape(parts.front(), p);
        if (p.rows() != m) throw Error(ErrorCategory::shape, "concat_cols: row mismatch");
        n += p.cols();
        rg = rg || p.requires_grad();
    }
    int id = t.new_node(m, n, rg);
    auto& out = t.node(id).value;
    std::size_t col = 0;
    std::vector<int> ids;
    std::vector<std::size_t> col_of;
    for (const auto& p : parts) {
        const auto& pv = t.node(p.id()).value;
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j) out[i * n + col + j] = pv[i * pc + j];
        ids.push_back(p.id());
        col_of.push_back(col);
        col += pc;
    }
    if (rg) {
        t.node(id).backward = [ids, col_of, id, m, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            for (std::size_t s = 0; s < ids.size(); ++s) {
                auto& pn = tp.node(ids[s]);
                if (!pn.requires_grad) continue;
                const std::size_t pc = pn.cols;
                const std::size_t off = col_of[s];
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < pc; ++j) pn.grad[i * pc + j] += g[i * n + off + j];
            }
        };
    }
    return Tensor(&t, id);
}

inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    Tape& t = x.tape();
    if (start + count > x.rows()) throw Error(ErrorCategory::shape, "slice_rows: out of range");
    const std::size_t n = x.cols();
    const bool rg = x.requires_grad();
    int id = t.new_node(count, n, rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    std::copy(xv.begin() + static_cast<std::ptrdiff_t>(start * n),
              xv.begin() + static_cast<std::ptrdiff_t>((start + count) * n), out.begin());
    if (rg) {
        const int ix = x.id();
        t.node(id).backward = [ix, id, start, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            auto& gx = tp.node(ix).grad;
            const std::size_t off = start * n;
            for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
        };
    }
    return Tensor(&t, id);
}

// Stacks m copies of a 1xN row.
inline Tensor repeat_rows(const Tensor& x, std::size_t m) {
    Tape& t = x.tape();
    if (x.rows() != 1) throw Error(ErrorCategory::shape, "repeat_rows: input must have one row");
    const std::size_t n = x.cols();
    const bool rg = x.requires_grad();
    int id = t.new_node(m, n, rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    for (std::size_t i = 0; i < m; ++i) std::copy(xv.begin(), xv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
    if (rg) {
        const int ix = x.id();
        t.node(id).backward = [ix, id, m, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            auto& gx = tp.node(ix).grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[j] += g[i * n + j];
        };
    }
    return Tensor(&t, id);
}

inline Tensor sum(const Tensor& x) {
    Tape& t = x.tape();
    const bool rg = x.requires_grad();
    int id = t.new_node(1, 1, rg);
    const auto& xv = t.node(x.id()).value;
    double s = 0.0;
    for (double v : xv) s += v;
    t.node(id).value[0] = s;
    if (rg) {
        const int ix = x.id();
        t.node(id).backward = [ix, id](Tape& tp) {
            const double g = tp.node(id).grad[0];
            auto& gx = tp.node(ix).grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        };
    }
    return Tensor(&t, id);
}

// Row-wise softmax, stabilized by per-row max subtraction. Rejects
// non-finite input.
inline Tensor softmax_rows(const Tensor& x) {
    Tape& t = x.tape();
    const std::size_t m = x.rows(), n = x.cols();
    if (n < 1) throw Error(ErrorCategory::shape, "softmax_rows: empty rows");
    const bool rg = x.requires_grad();
    int id = t.new_node(m, n, rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = xv[i * n];
        for (std::size_t j = 0; j < n; ++j) {
            if (!std::isfinite(xv[i * n + j]))
                throw Error(ErrorCategory::numeric, "softmax_rows: non-finite input");
            mx = std::max(mx, xv[i * n + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(xv[i * n + j] - mx);
            out[i * n + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    if (rg) {
        const int ix = x.id();
        t.node(id).backward = [ix, id, m, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            const auto& s = tp.node(id).value;
            auto& gx = tp.node(ix).grad;
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * s[i * n + j];
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += s[i * n + j] * (g[i * n + j] - dot);
            }
        };
    }
    return Tensor(&t, id);
}

inline Tensor log_softmax_rows(const Tensor& x) {
    Tape& t = x.tape();
    const std::size_t m = x.rows(), n = x.cols();
    const bool rg = x.requires_grad();
    int id = t.new_node(m, n, rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = xv[i * n];
        for (std::size_t j = 0; j < n; ++j) {
            if (!std::isfinite(xv[i * n + j]))
                throw Error(ErrorCategory::numeric, "log_softmax_rows: non-finite input");
            mx = std::max(mx, xv[i * n + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(xv[i * n + j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] - lse;
    }
    if (rg) {
        const int ix = x.id();
        t.node(id).backward = [ix, id, m, n](Tape& tp) {
            const auto& g = tp.node(id).grad;
            const auto& y = tp.node(id).value;
            auto& gx = tp.node(ix).grad;
            for (std::size_t i = 0; i < m; ++i) {
                double gsum = 0.0;
                for (std::size_t j = 0; j < n; ++j) gsum += g[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    gx[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gsum;
            }
        };
    }
    return Tensor(&t, id);
}

// Row-wise layer normalization with learned gain and bias (1xN each).
// Variance uses 1/N normalization.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    Tape& t = detail::same_tape(x, gain);
    detail::same_tape(x, bias);
    const std::size_t m = x.rows(), n = x.cols();
    if (n < 2) throw Error(ErrorCategory::shape, "layer_norm: needs at least two features");
    if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
        throw Error(ErrorCategory::shape, "layer_norm: gain/bias must be 1xN");
    const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    int id = t.new_node(m, n, rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    const auto& gv = t.node(gain.id()).value;
    const auto& bv = t.node(bias.id()).value;
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xv[i * n + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = (xv[i * n + j] - mean) * inv * gv[j] + bv[j];
    }
    if (rg) {
        const int ix = x.id(), ig = gain.id(), ib = bias.id();
        t.node(id).backward = [ix, ig, ib, id, m, n, eps](Tape& tp) {
            const auto& g = tp.node(id).grad;
            const auto& xv2 = tp.node(ix).value;
            const auto& gv2 = tp.node(ig).value;
            for (std::size_t i = 0; i < m; ++i) {
                double mean = 0.0;
                for (std::size_t j = 0; j < n; ++j) mean += xv2[i * n + j];
                mean /= static_cast<double>(n);
                double var = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double d = xv2[i * n + j] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(n);
                const double inv = 1.0 / std::sqrt(var + eps);
                if (tp.node(ig).requires_grad || tp.node(ib).requires_grad) {
                    auto& gg = tp.node(ig).grad;
                    auto& gb = tp.node(ib).grad;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double xhat = (xv2[i * n + j] - mean) * inv;
                        gg[j] += g[i * n + j] * xhat;
                        gb[j] += g[i * n + j];
                    }
                }
                if (tp.node(ix).requires_grad) {
                    auto& gx = tp.node(ix).grad;
                    double dvar = 0.0, dmean = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dxhat = g[i * n + j] * gv2[j];
                        const double xc = xv2[i * n + j] - mean;
                        dvar += dxhat * xc * (-0.5) * inv * inv * inv;
                        dmean += -dxhat * inv;
                    }
                    double xc_sum = 0.0;
                    for (std::size_t j = 0; j < n; ++j) xc_sum += xv2[i * n + j] - mean;
                    dmean += dvar * (-2.0 / static_cast<double>(n)) * xc_sum;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dxhat = g[i * n + j] * gv2[j];
                        const double xc = xv2[i * n + j] - mean;
                        gx[i * n + j] += dxhat * inv + dvar * 2.0 * xc / static_cast<double>(n) +
                                         dmean / static_cast<double>(n);
                    }
                }
            }
        };
    }
    return Tensor(&t, id);
}

// Elementwise GELU (tanh approximation).
inline Tensor gelu(const Tensor& x) {
    Tape& t = x.tape();
    const bool rg = x.requires_grad();
    int id = t.new_node(x.rows(), x.cols(), rg);
    auto& out = t.node(id).value;
    const auto& xv = t.node(x.id()).value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(xv[i]);
    if (rg) {
        const int ix = x.id();
        t.node(id).backward = [ix, id](Tape& tp) {
            const auto& g = tp.node(id).grad;
            const auto& xv2 = tp.node(ix).value;
            auto& gx = tp.node(ix).grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * detail::gelu_derivative(xv2[i]);
        };
    }
    return Tensor(&t, id);
}

// Gathers rows of an embedding table: out[q] = table[ids[q]].
inline Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
    Tape& t = table.tape();
    const std::size_t v = table.rows(), d = table.cols();
    for (int i : ids)
        if (i < 0 || static_cast<std::size_t>(i) >= v)
            throw Error(ErrorCategory::shape, "embedding_rows: id out of range");
    const bool rg = table.requires_grad();
    int id = t.new_node(ids.size(), d, rg);
    auto& out = t.node(id).value;
    const auto& tv = t.node(table.id()).value;
    for (std::size_t q = 0; q < ids.size(); ++q)
        std::copy(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[q]) * d),
                  tv.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(ids[q]) + 1) * d),
                  out.begin() + static_cast<std::ptrdiff_t>(q * d));
    if (rg) {
        const int it = table.id();
        t.node(id).backward = [it, id, ids, d](Tape& tp) {
            const auto& g = tp.node(id).grad;
            auto& gt = tp.node(it).grad;
            for (std::size_t q = 0; q < ids.size(); ++q) {
                const std::size_t off = static_cast<std::size_t>(ids[q]) * d;
                for (std::size_t j = 0; j < d; ++j) gt[off + j] += g[q * d + j];
            }
        };
    }
    return Tensor(&t, id);
}

// Mean negative log-likelihood over rows of log-probabilities. Rows whose
// target equals ignore_id (if >= 0) are excluded from the mean.
inline Tensor nll_mean(const Tensor& logp, const std::vector<int>& targets, int ignore_id = -1) {
    Tape& t = logp.tape();
    const std::size_t m = logp.rows(), n = logp.cols();
    if (targets.size() != m) throw Error(ErrorCategory::shape, "nll_mean: target length mismatch");
    std::size_t active = 0;
    for (int tgt : targets) {
        if (ignore_id >= 0 && tgt == ignore_id) continue;
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= n)
            throw Error(ErrorCategory::shape, "nll_mean: target id out of range");
        ++active;
    }
    if (active == 0) throw Error(ErrorCategory::shape, "nll_mean: no active targets");
    const bool rg = logp.requires_grad();
    int id = t.new_node(1, 1, rg);
    const auto& lv = t.node(logp.id()).value;
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (ignore_id >= 0 && targets[i] == ignore_id) continue;
        s -= lv[i * n + static_cast<std::size_t>(targets[i])];
    }
    t.node(id).value[0] = s / static_cast<double>(active);
    if (rg) {
        const int il = logp.id();
        t.node(id).backward = [il, id, targets, ignore_id, n, active](Tape& tp) {
            const double g = tp.node(id).grad[0];
            auto& gl = tp.node(il).grad;
            for (std::size_t i = 0; i < targets.size(); ++i) {
                if (ignore_id >= 0 && targets[i] == ignore_id) continue;
                gl[i * n + static_cast<std::size_t>(targets[i])] -= g / static_cast<double>(active);
            }
        };
    }
    return Tensor(&t, id);
}

// GELU(x W1 + b1) W2 + b2.
inline Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, w1), b1)), w2), b2);
}

inline std::size_t argmax_row(const Tensor& x, std::size_t row) {
    const std::size_t n = x.cols();
    std::size_t best = 0;
    double bv = x.at(row, 0);
    for (std::size_t j = 1; j < n; ++j) {
        if (x.at(row, j) > bv) {
            bv = x.at(row, j);
            best = j;
        }
    }
    return best;
}

}  // namespace dkmd::nn
