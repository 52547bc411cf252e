#pragma once

// Reverse-mode autodiff on batched dense tensors. A Tensor node carries
// row-major values, an optional gradient, and the closure that propagates
// gradients to its parents. Graphs are rebuilt every step; parameters are
// long-lived leaves. One graph is single-threaded; distinct graphs are
// independent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace betaspec {

struct Tensor;
using Var = std::shared_ptr<Tensor>;

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;

    // graph bookkeeping
    std::vector<Var> parents;
    std::function<void(Tensor&)> backward_fn;
    std::uint64_t order = 0;

    std::size_t size() const { return values.size(); }

    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

namespace ad {

inline std::uint64_t& order_counter() {
    thread_local std::uint64_t counter = 0;
    return counter;
}

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

inline Var make_node(std::vector<std::size_t> shape, std::vector<Var> parents) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values.assign(shape_size(t->shape), 0.0);
    t->parents = std::move(parents);
    for (const auto& p : t->parents)
        if (p->requires_grad) t->requires_grad = true;
    t->order = ++order_counter();
    return t;
}

inline Var leaf(std::vector<std::size_t> shape, std::vector<double> values,
                bool requires_grad = true) {
    if (values.size() != shape_size(shape))
        throw std::invalid_argument("tensor leaf: shape/value size mismatch");
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values = std::move(values);
    t->requires_grad = requires_grad;
    t->order = ++order_counter();
    return t;
}

inline Var constant(std::vector<std::size_t> shape, std::vector<double> values) {
    return leaf(std::move(shape), std::move(values), false);
}

inline Var scalar_constant(double v) { return constant({1}, {v}); }

// --- dense kernels ---------------------------------------------------------

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B^T where B is [n x k]
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// --- ops --------------------------------------------------------------------

inline Var matmul(const Var& x, const Var& w) {
    if (x->cols() != w->rows()) throw std::invalid_argument("matmul: inner dims differ");
    const std::size_t m = x->rows(), k = x->cols(), n = w->cols();
    auto out = make_node({m, n}, {x, w});
    gemm_nn(x->values.data(), w->values.data(), out->values.data(), m, k, n);
    out->backward_fn = [m, k, n](Tensor& t) {
        auto& x = *t.parents[0];
        auto& w = *t.parents[1];
        if (x.requires_grad) {
            x.ensure_grad();
            gemm_nt(t.grad.data(), w.values.data(), x.grad.data(), m, n, k);
        }
        if (w.requires_grad) {
            w.ensure_grad();
            gemm_tn(x.values.data(), t.grad.data(), w.grad.data(), m, k, n);
        }
    };
    return out;
}

inline Var add(const Var& a, const Var& b) {
    if (a->shape != b->shape) throw std::invalid_argument("add: shape mismatch");
    auto out = make_node(a->shape, {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = a->values[i] + b->values[i];
    out->backward_fn = [](Tensor& t) {
        for (int pi = 0; pi < 2; ++pi) {
            auto& p = *t.parents[pi];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < t.grad.size(); ++i) p.grad[i] += t.grad[i];
        }
    };
    return out;
}

inline Var sub(const Var& a, const Var& b) {
    if (a->shape != b->shape) throw std::invalid_argument("sub: shape mismatch");
    auto out = make_node(a->shape, {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = a->values[i] - b->values[i];
    out->backward_fn = [](Tensor& t) {
        auto& a = *t.parents[0];
        auto& b = *t.parents[1];
        if (a.requires_grad) {
            a.ensure_grad();
            for (std::size_t i = 0; i < t.grad.size(); ++i) a.grad[i] += t.grad[i];
        }
        if (b.requires_grad) {
            b.ensure_grad();
            for (std::size_t i = 0; i < t.grad.size(); ++i) b.grad[i] -= t.grad[i];
        }
    };
    return out;
}

inline Var mul(const Var& a, const Var& b) {
    if (a->shape != b->shape) throw std::invalid_argument("mul: shape mismatch");
    auto out = make_node(a->shape, {a, b});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = a->values[i] * b->values[i];
    out->backward_fn = [](Tensor& t) {
        auto& a = *t.parents[0];
        auto& b = *t.parents[1];
        if (a.requires_grad) {
            a.ensure_grad();
            for (std::size_t i = 0; i < t.grad.size(); ++i) a.grad[i] += t.grad[i] * b.values[i];
        }
        if (b.requires_grad) {
            b.ensure_grad();
            for (std::size_t i = 0; i < t.grad.size(); ++i) b.grad[i] += t.grad[i] * a.values[i];
        }
    };
    return out;
}

// X[m x n] + row vector b[n], broadcast over rows
inline Var add_row(const Var& x, const Var& b) {
    const std::size_t m = x->rows(), n = x->cols();
    if (b->size() != n) throw std::invalid_argument("add_row: bias size mismatch");
    auto out = make_node(x->shape, {x, b});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out->values[i * n + j] = x->values[i * n + j] + b->values[j];
    out->backward_fn = [m, n](Tensor& t) {
        auto& x = *t.parents[0];
        auto& b = *t.parents[1];
        if (x.requires_grad) {
            x.ensure_grad();
            for (std::size_t i = 0; i < t.grad.size(); ++i) x.grad[i] += t.grad[i];
        }
        if (b.requires_grad) {
            b.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) b.grad[j] += t.grad[i * n + j];
        }
    };
    return out;
}

// X[m x n] scaled per row by s[m]
inline Var row_scale(const Var& x, const Var& s) {
    const std::size_t m = x->rows(), n = x->cols();
    if (s->size() != m) throw std::invalid_argument("row_scale: scale size mismatch");
    auto out = make_node(x->shape, {x, s});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out->values[i * n + j] = x->values[i * n + j] * s->values[i];
    out->backward_fn = [m, n](Tensor& t) {
        auto& x = *t.parents[0];
        auto& s = *t.parents[1];
        if (x.requires_grad) {
            x.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    x.grad[i * n + j] += t.grad[i * n + j] * s.values[i];
        }
        if (s.requires_grad) {
            s.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    acc += t.grad[i * n + j] * x.values[i * n + j];
                s.grad[i] += acc;
            }
        }
    };
    return out;
}

inline Var scale(const Var& x, double c) {
    auto out = make_node(x->shape, {x});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = x->values[i] * c;
    out->backward_fn = [c](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < t.grad.size(); ++i) x.grad[i] += t.grad[i] * c;
    };
    return out;
}

inline Var add_const(const Var& x, double c) {
    auto out = make_node(x->shape, {x});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = x->values[i] + c;
    out->backward_fn = [](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < t.grad.size(); ++i) x.grad[i] += t.grad[i];
    };
    return out;
}

inline Var sigmoid(const Var& x) {
    auto out = make_node(x->shape, {x});
    for (std::size_t i = 0; i < out->size(); ++i)
        out->values[i] = 1.0 / (1.0 + std::exp(-x->values[i]));
    out->backward_fn = [](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < t.grad.size(); ++i) {
            const double y = t.values[i];
            x.grad[i] += t.grad[i] * y * (1.0 - y);
        }
    };
    return out;
}

inline Var relu(const Var& x) {
    auto out = make_node(x->shape, {x});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = std::max(0.0, x->values[i]);
    out->backward_fn = [](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < t.grad.size(); ++i)
            if (x.values[i] > 0.0) x.grad[i] += t.grad[i];
    };
    return out;
}

// x * sigmoid(x)
inline Var silu(const Var& x) {
    auto out = make_node(x->shape, {x});
    for (std::size_t i = 0; i < out->size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x->values[i]));
        out->values[i] = x->values[i] * s;
    }
    out->backward_fn = [](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < t.grad.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x.values[i]));
            x.grad[i] += t.grad[i] * (s + x.values[i] * s * (1.0 - s));
        }
    };
    return out;
}

inline Var exp_op(const Var& x) {
    auto out = make_node(x->shape, {x});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = std::exp(x->values[i]);
    out->backward_fn = [](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < t.grad.size(); ++i) x.grad[i] += t.grad[i] * t.values[i];
    };
    return out;
}

inline Var log_op(const Var& x) {
    auto out = make_node(x->shape, {x});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = std::log(x->values[i]);
    out->backward_fn = [](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < t.grad.size(); ++i) x.grad[i] += t.grad[i] / x.values[i];
    };
    return out;
}

inline Var square(const Var& x) {
    auto out = make_node(x->shape, {x});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = x->values[i] * x->values[i];
    out->backward_fn = [](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < t.grad.size(); ++i)
            x.grad[i] += 2.0 * t.grad[i] * x.values[i];
    };
    return out;
}

inline Var sum(const Var& x) {
    auto out = make_node({1}, {x});
    double acc = 0.0;
    for (double v : x->values) acc += v;
    out->values[0] = acc;
    out->backward_fn = [](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.grad.size(); ++i) x.grad[i] += t.grad[0];
    };
    return out;
}

inline Var mean(const Var& x) {
    const double inv = 1.0 / static_cast<double>(x->size());
    return scale(sum(x), inv);
}

// per-row sum of squares: [m x n] -> [m]
inline Var row_sum_squares(const Var& x) {
    const std::size_t m = x->rows(), n = x->cols();
    auto out = make_node({m}, {x});
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = x->values[i * n + j];
            acc += v * v;
        }
        out->values[i] = acc;
    }
    out->backward_fn = [m, n](Tensor& t) {
        auto& x = *t.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                x.grad[i * n + j] += 2.0 * t.grad[i] * x.values[i * n + j];
    };
    return out;
}

inline Var sum_squares(const Var& x) { return sum(row_sum_squares(x)); }

// Per-sample linear interpolation into a 1-D table: out[i] =
// (1-w[i]) * table[idx[i]] + w[i] * table[idx[i]+1]. Gradients scatter-add
// into the table; indices/weights are fixed data.
inline Var table_lerp(const Var& table, std::vector<std::size_t> idx, std::vector<double> w) {
    if (idx.size() != w.size()) throw std::invalid_argument("table_lerp: idx/w size mismatch");
    const std::size_t m = idx.size();
    for (std::size_t i = 0; i < m; ++i)
        if (idx[i] + 1 >= table->size() && !(idx[i] + 1 == table->size() && w[i] == 0.0))
            throw std::out_of_range("table_lerp: index out of table range");
    auto out = make_node({m}, {table});
    for (std::size_t i = 0; i < m; ++i) {
        const double lo = table->values[idx[i]];
        const double hi = (w[i] == 0.0) ? 0.0 : table->values[idx[i] + 1];
        out->values[i] = (1.0 - w[i]) * lo + w[i] * hi;
    }
    out->backward_fn = [idx = std::move(idx), w = std::move(w)](Tensor& t) {
        auto& table = *t.parents[0];
        if (!table.requires_grad) return;
        table.ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            table.grad[idx[i]] += (1.0 - w[i]) * t.grad[i];
            if (w[i] != 0.0) table.grad[idx[i] + 1] += w[i] * t.grad[i];
        }
    };
    return out;
}

// GroupNorm over the feature axis of [m x n]: n split into n_groups
// contiguous groups, each normalized per row, then per-channel affine.
inline Var group_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t n_groups,
                      double eps = 1e-5) {
    const std::size_t m = x->rows(), n = x->cols();
    if (n % n_groups != 0) throw std::invalid_argument("group_norm: channels % groups != 0");
    if (gamma->size() != n || beta->size() != n)
        throw std::invalid_argument("group_norm: affine size mismatch");
    const std::size_t g = n / n_groups;

    auto out = make_node({m, n}, {x, gamma, beta});
    // cache per (row, group) statistics for backward
    auto mu = std::make_shared<std::vector<double>>(m * n_groups);
    auto istd = std::make_shared<std::vector<double>>(m * n_groups);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t q = 0; q < n_groups; ++q) {
            const double* xr = x->values.data() + i * n + q * g;
            double s = 0.0;
            for (std::size_t j = 0; j < g; ++j) s += xr[j];
            const double m1 = s / static_cast<double>(g);
            double v = 0.0;
            for (std::size_t j = 0; j < g; ++j) v += (xr[j] - m1) * (xr[j] - m1);
            v /= static_cast<double>(g);
            const double is = 1.0 / std::sqrt(v + eps);
            (*mu)[i * n_groups + q] = m1;
            (*istd)[i * n_groups + q] = is;
            double* yr = out->values.data() + i * n + q * g;
            const double* gam = gamma->values.data() + q * g;
            const double* bet = beta->values.data() + q * g;
            for (std::size_t j = 0; j < g; ++j) yr[j] = gam[j] * (xr[j] - m1) * is + bet[j];
        }
    }
    out->backward_fn = [m, n, n_groups, g, mu, istd](Tensor& t) {
        auto& x = *t.parents[0];
        auto& gamma = *t.parents[1];
        auto& beta = *t.parents[2];
        const bool need_x = x.requires_grad;
        const bool need_g = gamma.requires_grad;
        const bool need_b = beta.requires_grad;
        if (need_x) x.ensure_grad();
        if (need_g) gamma.ensure_grad();
        if (need_b) beta.ensure_grad();
        const double invg = 1.0 / static_cast<double>(g);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t q = 0; q < n_groups; ++q) {
                const double m1 = (*mu)[i * n_groups + q];
                const double is = (*istd)[i * n_groups + q];
                const double* xr = x.values.data() + i * n + q * g;
                const double* dy = t.grad.data() + i * n + q * g;
                const double* gam = gamma.values.data() + q * g;
                if (need_g || need_b) {
                    for (std::size_t j = 0; j < g; ++j) {
                        const double xhat = (xr[j] - m1) * is;
                        if (need_g) gamma.grad[q * g + j] += dy[j] * xhat;
                        if (need_b) beta.grad[q * g + j] += dy[j];
                    }
                }
                if (need_x) {
                    // dL/dx via the standard normalized-activation identities
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < g; ++j) {
                        const double dxhat = dy[j] * gam[j];
                        const double xhat = (xr[j] - m1) * is;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    double* dx = x.grad.data() + i * n + q * g;
                    for (std::size_t j = 0; j < g; ++j) {
                        const double dxhat = dy[j] * gam[j];
                        const double xhat = (xr[j] - m1) * is;
                        dx[j] += is * (dxhat - invg * sum_dxhat - invg * xhat * sum_dxhat_xhat);
                    }
                }
            }
        }
    };
    return out;
}

// Backpropagate from a scalar root. Topological order by creation sequence.
inline void backward(const Var& root) {
    if (root->size() != 1) throw std::invalid_argument("backward: root must be a scalar");
    if (root->parents.empty())
        throw std::invalid_argument("backward: no forward computation recorded");

    std::vector<Tensor*> topo;
    std::unordered_set<Tensor*> seen;
    std::vector<Tensor*> stack{root.get()};
    while (!stack.empty()) {
        Tensor* t = stack.back();
        stack.pop_back();
        if (!seen.insert(t).second) continue;
        topo.push_back(t);
        for (const auto& p : t->parents)
            if (p->requires_grad || !p->parents.empty()) stack.push_back(p.get());
    }
    std::sort(topo.begin(), topo.end(),
              [](const Tensor* a, const Tensor* b) { return a->order > b->order; });

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (Tensor* t : topo) {
        if (t->backward_fn && !t->grad.empty()) t->backward_fn(*t);
    }
}

}  // namespace ad
}  // namespace betaspec
