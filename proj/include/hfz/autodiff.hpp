#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "hfz/error.hpp"
#include "hfz/tensor.hpp"

namespace hfz {

/// Handle to a node on a Tape.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape. Nodes are appended in execution order, which
/// is a topological order, so the backward pass is a single reverse sweep
/// that visits each node exactly once. A tape is confined to one execution
/// context and is rebuilt per training step.
///
/// Every op validates its output for NaN/Inf and throws NumericError rather
/// than propagating silently.
class Tape {
public:
    Var leaf(Tensor value) { return push(std::move(value), "leaf", nullptr); }

    /// Same storage as leaf; named for call sites where gradients are
    /// intentionally ignored (inputs, sampled noise).
    Var constant(Tensor value) { return push(std::move(value), "constant", nullptr); }

    /// Stable for the tape's lifetime: recording further ops never moves
    /// existing nodes.
    const Tensor& value(Var v) const { return node(v).value; }

    /// Adjoint of a node; zeros if the node received no gradient.
    const Tensor& grad(Var v) const {
        const Node& n = node(v);
        if (n.grad.empty() && n.value.size() > 0) {
            // Lazily materialize a zero gradient for untouched nodes.
            const_cast<Node&>(n).grad = Tensor::zeros(n.value.shape());
        }
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    /// Accumulates d(root)/d(node) into every node's adjoint. Root must be a
    /// scalar. Adjoints are reset at entry, so repeated calls do not mix.
    void backward(Var root) {
        Node& r = node(root);
        if (r.value.size() != 1)
            throw ContractError("backward root must be scalar, got shape " +
                                shape_str(r.value.shape()));
        for (auto& n : nodes_) n.grad = Tensor();
        r.grad = Tensor::full(r.value.shape(), 1.0);
        for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.backprop || n.grad.empty()) continue;
            n.backprop(*this, i);
        }
        ++backward_calls_;
    }

    static std::uint64_t backward_count() { return backward_calls_.load(); }

    // ---- elementwise binary ops (same shape, or one size-1 operand) ----

    Var add(Var a, Var b) {
        return binary(a, b, "add",
                      [](double x, double y) { return x + y; },
                      [](Tape& t, std::int32_t self, std::int32_t pa, std::int32_t pb) {
                          Tape::Node& n = t.nodes_[self];
                          t.accumulate_broadcast(pa, n.grad, 1.0);
                          t.accumulate_broadcast(pb, n.grad, 1.0);
                      });
    }

    Var sub(Var a, Var b) {
        return binary(a, b, "sub",
                      [](double x, double y) { return x - y; },
                      [](Tape& t, std::int32_t self, std::int32_t pa, std::int32_t pb) {
                          Tape::Node& n = t.nodes_[self];
                          t.accumulate_broadcast(pa, n.grad, 1.0);
                          t.accumulate_broadcast(pb, n.grad, -1.0);
                      });
    }

    Var mul(Var a, Var b) {
        return binary(a, b, "mul",
                      [](double x, double y) { return x * y; },
                      [](Tape& t, std::int32_t self, std::int32_t pa, std::int32_t pb) {
                          Tape::Node& n = t.nodes_[self];
                          const Tensor& va = t.nodes_[pa].value;
                          const Tensor& vb = t.nodes_[pb].value;
                          Tensor ga(n.grad.shape()), gb(n.grad.shape());
                          for (std::int64_t i = 0; i < n.grad.size(); ++i) {
                              ga[i] = n.grad[i] * t.bval(vb, i);
                              gb[i] = n.grad[i] * t.bval(va, i);
                          }
                          t.accumulate_broadcast(pa, ga, 1.0);
                          t.accumulate_broadcast(pb, gb, 1.0);
                      });
    }

    Var div(Var a, Var b) {
        return binary(a, b, "div",
                      [](double x, double y) { return x / y; },
                      [](Tape& t, std::int32_t self, std::int32_t pa, std::int32_t pb) {
                          Tape::Node& n = t.nodes_[self];
                          const Tensor& va = t.nodes_[pa].value;
                          const Tensor& vb = t.nodes_[pb].value;
                          Tensor ga(n.grad.shape()), gb(n.grad.shape());
                          for (std::int64_t i = 0; i < n.grad.size(); ++i) {
                              const double y = t.bval(vb, i);
                              ga[i] = n.grad[i] / y;
                              gb[i] = -n.grad[i] * t.bval(va, i) / (y * y);
                          }
                          t.accumulate_broadcast(pa, ga, 1.0);
                          t.accumulate_broadcast(pb, gb, 1.0);
                      });
    }

    Var neg(Var a) {
        Tensor out(value(a).shape());
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = -value(a)[i];
        const std::int32_t pa = a.id;
        return push(std::move(out), "neg", [pa](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor ga(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] = -g[i];
            t.accumulate(pa, ga);
        }, a);
    }

    // ---- matrix ops ----

    Var matmul(Var a, Var b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.ndim() != 2 || vb.ndim() != 2 || va.cols() != vb.rows())
            throw ShapeError("matmul shape mismatch " + shape_str(va.shape()) + " x " +
                             shape_str(vb.shape()));
        Tensor out = mm_nn(va, vb);
        const std::int32_t pa = a.id, pb = b.id;
        return push(std::move(out), "matmul", [pa, pb](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accumulate(pa, mm_nt(g, t.nodes_[pb].value));
            t.accumulate(pb, mm_tn(t.nodes_[pa].value, g));
        }, a, b);
    }

    /// m[r x c] + v[c], broadcast over rows (bias add).
    Var add_rowvec(Var m, Var v) {
        const Tensor& vm = value(m);
        const Tensor& vv = value(v);
        if (vm.ndim() != 2 || vv.ndim() != 1 || vm.cols() != vv.shape()[0])
            throw ShapeError("add_rowvec shape mismatch " + shape_str(vm.shape()) + " + " +
                             shape_str(vv.shape()));
        Tensor out(vm.shape());
        for (std::int64_t i = 0; i < vm.rows(); ++i)
            for (std::int64_t j = 0; j < vm.cols(); ++j)
                out.at(i, j) = vm.at(i, j) + vv[j];
        const std::int32_t pm = m.id, pv = v.id;
        return push(std::move(out), "add_rowvec", [pm, pv](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accumulate(pm, g);
            Tensor gv({g.cols()});
            for (std::int64_t i = 0; i < g.rows(); ++i)
                for (std::int64_t j = 0; j < g.cols(); ++j) gv[j] += g.at(i, j);
            t.accumulate(pv, gv);
        }, m, v);
    }

    // ---- elementwise unary ops ----

    Var relu(Var a) {
        const Tensor& va = value(a);
        Tensor out(va.shape());
        for (std::int64_t i = 0; i < va.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
        const std::int32_t pa = a.id;
        return push(std::move(out), "relu", [pa](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.nodes_[pa].value;
            Tensor ga(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
            t.accumulate(pa, ga);
        }, a);
    }

    /// ln(1 + exp(x)), overflow-safe: max(x,0) + log1p(exp(-|x|)).
    Var softplus(Var a) {
        const Tensor& va = value(a);
        Tensor out(va.shape());
        for (std::int64_t i = 0; i < va.size(); ++i) out[i] = softplus_scalar(va[i]);
        const std::int32_t pa = a.id;
        return push(std::move(out), "softplus", [pa](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.nodes_[pa].value;
            Tensor ga(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] * sigmoid_scalar(x[i]);
            t.accumulate(pa, ga);
        }, a);
    }

    /// x * ln(x) with the 0*ln(0) := 0 convention (subgradient 0 at x = 0).
    Var xlogx(Var a) {
        const Tensor& va = value(a);
        Tensor out(va.shape());
        for (std::int64_t i = 0; i < va.size(); ++i) {
            if (va[i] < 0.0) throw NumericError("xlogx on negative input");
            out[i] = va[i] == 0.0 ? 0.0 : va[i] * std::log(va[i]);
        }
        const std::int32_t pa = a.id;
        return push(std::move(out), "xlogx", [pa](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.nodes_[pa].value;
            Tensor ga(g.shape());
            for (std::int64_t i = 0; i < g.size(); ++i)
                ga[i] = x[i] == 0.0 ? 0.0 : g[i] * (std::log(x[i]) + 1.0);
            t.accumulate(pa, ga);
        }, a);
    }

    /// Row-wise softmax of a 2D tensor, stabilized by max-subtraction.
    Var softmax_rows(Var a) {
        const Tensor& va = value(a);
        if (va.ndim() != 2 || va.cols() < 1)
            throw ShapeError("softmax_rows needs a 2D tensor with cols >= 1, got " +
                             shape_str(va.shape()));
        Tensor out(va.shape());
        for (std::int64_t i = 0; i < va.rows(); ++i)
            softmax_row(va.data() + i * va.cols(), out.data() + i * va.cols(), va.cols());
        const std::int32_t pa = a.id;
        return push(std::move(out), "softmax_rows", [pa](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& y = t.nodes_[self].value;
            Tensor ga(g.shape());
            for (std::int64_t i = 0; i < g.rows(); ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < g.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
                for (std::int64_t j = 0; j < g.cols(); ++j)
                    ga.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
            }
            t.accumulate(pa, ga);
        }, a);
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        const Tensor& va = value(a);
        double s = 0.0;
        for (std::int64_t i = 0; i < va.size(); ++i) s += va[i];
        const std::int32_t pa = a.id;
        return push(Tensor::scalar(s), "sum_all", [pa](Tape& t, std::int32_t self) {
            const double g = t.nodes_[self].grad[0];
            Tensor ga = Tensor::full(t.nodes_[pa].value.shape(), g);
            t.accumulate(pa, ga);
        }, a);
    }

    /// Column sums of a 2D tensor: [r x c] -> [c].
    Var sum_axis0(Var a) {
        const Tensor& va = value(a);
        if (va.ndim() != 2) throw ShapeError("sum_axis0 needs a 2D tensor");
        Tensor out({va.cols()});
        for (std::int64_t i = 0; i < va.rows(); ++i)
            for (std::int64_t j = 0; j < va.cols(); ++j) out[j] += va.at(i, j);
        const std::int32_t pa = a.id;
        return push(std::move(out), "sum_axis0", [pa](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.nodes_[pa].value;
            Tensor ga(x.shape());
            for (std::int64_t i = 0; i < x.rows(); ++i)
                for (std::int64_t j = 0; j < x.cols(); ++j) ga.at(i, j) = g[j];
            t.accumulate(pa, ga);
        }, a);
    }

    /// Mean over the batch of -log softmax(logits)[label].
    Var cross_entropy(Var logits, const std::vector<int>& labels) {
        const Tensor& vl = value(logits);
        if (vl.ndim() != 2) throw ShapeError("cross_entropy needs 2D logits");
        const std::int64_t batch = vl.rows(), classes = vl.cols();
        if (static_cast<std::int64_t>(labels.size()) != batch)
            throw ShapeError("cross_entropy label count mismatch");
        for (int y : labels)
            if (y < 0 || y >= classes)
                throw IndexError("label " + std::to_string(y) + " outside [0, " +
                                 std::to_string(classes) + ")");
        double loss = 0.0;
        for (std::int64_t i = 0; i < batch; ++i) {
            const double* row = vl.data() + i * classes;
            double mx = row[0];
            for (std::int64_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
            double lse = 0.0;
            for (std::int64_t j = 0; j < classes; ++j) lse += std::exp(row[j] - mx);
            loss += mx + std::log(lse) - row[labels[static_cast<std::size_t>(i)]];
        }
        loss /= static_cast<double>(batch);
        const std::int32_t pl = logits.id;
        return push(Tensor::scalar(loss), "cross_entropy",
                    [pl, labels](Tape& t, std::int32_t self) {
                        const double g = t.nodes_[self].grad[0];
                        const Tensor& vl = t.nodes_[pl].value;
                        const std::int64_t batch = vl.rows(), classes = vl.cols();
                        Tensor ga(vl.shape());
                        std::vector<double> p(static_cast<std::size_t>(classes));
                        for (std::int64_t i = 0; i < batch; ++i) {
                            softmax_row(vl.data() + i * classes, p.data(), classes);
                            for (std::int64_t j = 0; j < classes; ++j) {
                                double d = p[static_cast<std::size_t>(j)];
                                if (j == labels[static_cast<std::size_t>(i)]) d -= 1.0;
                                ga.at(i, j) = g * d / static_cast<double>(batch);
                            }
                        }
                        t.accumulate(pl, ga);
                    },
                    logits);
    }

    // ---- structural ops ----

    Var concat_cols(Var a, Var b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.ndim() != 2 || vb.ndim() != 2 || va.rows() != vb.rows())
            throw ShapeError("concat_cols row mismatch");
        Tensor out({va.rows(), va.cols() + vb.cols()});
        for (std::int64_t i = 0; i < va.rows(); ++i) {
            for (std::int64_t j = 0; j < va.cols(); ++j) out.at(i, j) = va.at(i, j);
            for (std::int64_t j = 0; j < vb.cols(); ++j) out.at(i, va.cols() + j) = vb.at(i, j);
        }
        const std::int32_t pa = a.id, pb = b.id;
        const std::int64_t ca = va.cols();
        return push(std::move(out), "concat_cols", [pa, pb, ca](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& xa = t.nodes_[pa].value;
            const Tensor& xb = t.nodes_[pb].value;
            Tensor gl(xa.shape()), gr(xb.shape());
            for (std::int64_t i = 0; i < g.rows(); ++i) {
                for (std::int64_t j = 0; j < ca; ++j) gl.at(i, j) = g.at(i, j);
                for (std::int64_t j = 0; j < xb.cols(); ++j) gr.at(i, j) = g.at(i, ca + j);
            }
            t.accumulate(pa, gl);
            t.accumulate(pb, gr);
        }, a, b);
    }

    Var slice_cols(Var a, std::int64_t col0, std::int64_t ncols) {
        const Tensor& va = value(a);
        if (va.ndim() != 2 || col0 < 0 || ncols < 0 || col0 + ncols > va.cols())
            throw ShapeError("slice_cols range outside " + shape_str(va.shape()));
        Tensor out({va.rows(), ncols});
        for (std::int64_t i = 0; i < va.rows(); ++i)
            for (std::int64_t j = 0; j < ncols; ++j) out.at(i, j) = va.at(i, col0 + j);
        const std::int32_t pa = a.id;
        return push(std::move(out), "slice_cols", [pa, col0, ncols](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor ga(t.nodes_[pa].value.shape());
            for (std::int64_t i = 0; i < g.rows(); ++i)
                for (std::int64_t j = 0; j < ncols; ++j) ga.at(i, col0 + j) = g.at(i, j);
            t.accumulate(pa, ga);
        }, a);
    }

    Var slice_rows(Var a, std::int64_t row0, std::int64_t nrows) {
        const Tensor& va = value(a);
        if (va.ndim() != 2 || row0 < 0 || nrows < 0 || row0 + nrows > va.rows())
            throw ShapeError("slice_rows range outside " + shape_str(va.shape()));
        Tensor out({nrows, va.cols()});
        for (std::int64_t i = 0; i < nrows; ++i)
            for (std::int64_t j = 0; j < va.cols(); ++j) out.at(i, j) = va.at(row0 + i, j);
        const std::int32_t pa = a.id;
        return push(std::move(out), "slice_rows", [pa, row0, nrows](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor ga(t.nodes_[pa].value.shape());
            for (std::int64_t i = 0; i < nrows; ++i)
                for (std::int64_t j = 0; j < g.cols(); ++j) ga.at(row0 + i, j) = g.at(i, j);
            t.accumulate(pa, ga);
        }, a);
    }

    /// Tile a [1 x c] row n times into [n x c].
    Var repeat_rows(Var a, std::int64_t n) {
        const Tensor& va = value(a);
        if (va.ndim() != 2 || va.rows() != 1)
            throw ShapeError("repeat_rows needs a [1 x c] tensor");
        Tensor out({n, va.cols()});
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < va.cols(); ++j) out.at(i, j) = va.at(0, j);
        const std::int32_t pa = a.id;
        return push(std::move(out), "repeat_rows", [pa](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor ga({std::int64_t(1), g.cols()});
            for (std::int64_t i = 0; i < g.rows(); ++i)
                for (std::int64_t j = 0; j < g.cols(); ++j) ga.at(0, j) += g.at(i, j);
            t.accumulate(pa, ga);
        }, a);
    }

    /// Stack [1 x c] rows into [n x c].
    Var stack_rows(const std::vector<Var>& rows) {
        if (rows.empty()) throw ContractError("stack_rows on empty list");
        const std::int64_t c = value(rows[0]).cols();
        Tensor out({static_cast<std::int64_t>(rows.size()), c});
        std::vector<std::int32_t> parents;
        parents.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const Tensor& vr = value(rows[i]);
            if (vr.ndim() != 2 || vr.rows() != 1 || vr.cols() != c)
                throw ShapeError("stack_rows needs uniform [1 x c] rows");
            for (std::int64_t j = 0; j < c; ++j) out.at(static_cast<std::int64_t>(i), j) = vr.at(0, j);
            parents.push_back(rows[i].id);
        }
        Var v = push(std::move(out), "stack_rows", [parents](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            for (std::size_t i = 0; i < parents.size(); ++i) {
                Tensor gi({std::int64_t(1), g.cols()});
                for (std::int64_t j = 0; j < g.cols(); ++j)
                    gi.at(0, j) = g.at(static_cast<std::int64_t>(i), j);
                t.accumulate(parents[i], gi);
            }
        });
        return v;
    }

    Var reshape(Var a, Shape shape) {
        const Tensor& va = value(a);
        if (shape_size(shape) != va.size())
            throw ShapeError("reshape size mismatch: " + shape_str(va.shape()) + " -> " +
                             shape_str(shape));
        Tensor out(std::move(shape), va.vec());
        const std::int32_t pa = a.id;
        return push(std::move(out), "reshape", [pa](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor ga(t.nodes_[pa].value.shape(), g.vec());
            t.accumulate(pa, ga);
        }, a);
    }

    // ---- scalar helpers shared with the plain (tape-free) eval path ----

    static double softplus_scalar(double x) {
        return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::fabs(x)));
    }

    static double sigmoid_scalar(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    static void softmax_row(const double* in, double* out, std::int64_t n) {
        double mx = in[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (std::int64_t j = 0; j < n; ++j) out[j] /= sum;
    }

    static Tensor mm_nn(const Tensor& a, const Tensor& b) {
        Tensor out({a.rows(), b.cols()});
        const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t l = 0; l < k; ++l) {
                const double av = a.at(i, l);
                if (av == 0.0) continue;
                const double* brow = b.data() + l * n;
                double* orow = out.data() + i * n;
                for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        return out;
    }

    static Tensor mm_nt(const Tensor& a, const Tensor& b) {  // a * b^T
        Tensor out({a.rows(), b.rows()});
        const std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                const double* arow = a.data() + i * k;
                const double* brow = b.data() + j * k;
                for (std::int64_t l = 0; l < k; ++l) s += arow[l] * brow[l];
                out.at(i, j) = s;
            }
        return out;
    }

    static Tensor mm_tn(const Tensor& a, const Tensor& b) {  // a^T * b
        Tensor out({a.cols(), b.cols()});
        const std::int64_t m = a.cols(), k = a.rows(), n = b.cols();
        for (std::int64_t l = 0; l < k; ++l) {
            const double* arow = a.data() + l * m;
            const double* brow = b.data() + l * n;
            for (std::int64_t i = 0; i < m; ++i) {
                const double av = arow[i];
                if (av == 0.0) continue;
                double* orow = out.data() + i * n;
                for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
        return out;
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&, std::int32_t)> backprop;
    };

    Node& node(Var v) {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw ContractError("invalid Var handle");
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    const Node& node(Var v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw ContractError("invalid Var handle");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    template <class... Parents>
    Var push(Tensor value, const char* opname, std::function<void(Tape&, std::int32_t)> fn,
             Parents... parents) {
        ((void)node(parents), ...);  // validate parent handles
        value.validate_finite(opname);
        Node n;
        n.value = std::move(value);
        n.backprop = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    // Value of `t` at flat index i, treating size-1 tensors as broadcast.
    double bval(const Tensor& t, std::int64_t i) const { return t.size() == 1 ? t[0] : t[i]; }

    void accumulate(std::int32_t id, const Tensor& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
        if (!n.grad.same_shape(g)) throw ShapeError("gradient shape mismatch in accumulate");
        for (std::int64_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    // Accumulate `g` (shaped like the op output) into parent `id`, reducing
    // to a scalar when the parent was broadcast.
    void accumulate_broadcast(std::int32_t id, const Tensor& g, double sign) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
        if (n.value.size() == 1 && g.size() != 1) {
            double s = 0.0;
            for (std::int64_t i = 0; i < g.size(); ++i) s += g[i];
            n.grad[0] += sign * s;
        } else {
            for (std::int64_t i = 0; i < g.size(); ++i) n.grad[i] += sign * g[i];
        }
    }

    template <class FwdFn, class BwdFn>
    Var binary(Var a, Var b, const char* opname, FwdFn fwd, BwdFn bwd) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        const bool a_scalar = va.size() == 1, b_scalar = vb.size() == 1;
        if (!a_scalar && !b_scalar && !va.same_shape(vb))
            throw ShapeError(std::string(opname) + " shape mismatch " + shape_str(va.shape()) +
                             " vs " + shape_str(vb.shape()));
        const Tensor& big = b_scalar ? va : vb;
        Tensor out(big.shape());
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = fwd(bval(va, i), bval(vb, i));
        const std::int32_t pa = a.id, pb = b.id;
        return push(std::move(out), opname,
                    [pa, pb, bwd](Tape& t, std::int32_t self) { bwd(t, self, pa, pb); }, a, b);
    }

    // Deque keeps node references stable across pushes, so a Tensor& from
    // value() stays valid while later ops are recorded.
    std::deque<Node> nodes_;
    inline static std::atomic<std::uint64_t> backward_calls_{0};
};

} // namespace hfz
