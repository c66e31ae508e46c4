#include "xmodal/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "xmodal/common.hpp"

namespace xmodal {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EMat>;
using MapConst = Eigen::Map<const EMat>;

MapConst as_eigen(const Tensor& t) {
    return MapConst(t.data.data(), t.rows(), t.cols());
}

MapMat as_eigen(Tensor& t) {
    return MapMat(t.data.data(), t.rows(), t.cols());
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::string out = "{";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "}";
}

Tensor Tensor::zeros(const Shape& s) {
    Tensor t;
    t.shape = s;
    t.data.assign(static_cast<size_t>(t.numel()), 0.0);
    return t;
}

Tensor Tensor::full(const Shape& s, double v) {
    Tensor t = zeros(s);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::vector<double> d) {
    const int n = static_cast<int>(d.size());
    return Tensor({1, n}, std::move(d));
}

Tensor Tensor::vec(std::vector<double> d) {
    const int n = static_cast<int>(d.size());
    return Tensor({n}, std::move(d));
}

Tensor Tensor::matrix(int r, int c, std::vector<double> d) {
    require(static_cast<size_t>(r) * c == d.size(),
            "matrix: " + std::to_string(r) + "x" + std::to_string(c) + " needs " +
                std::to_string(static_cast<size_t>(r) * c) + " values, got " +
                std::to_string(d.size()));
    return Tensor({r, c}, std::move(d));
}

int64_t Tensor::numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

int Tensor::rows() const { return shape.size() == 2 ? shape[0] : 1; }

int Tensor::cols() const {
    if (shape.size() == 2) return shape[1];
    if (shape.size() == 1) return shape[0];
    return 0;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

HingeReport hinge_forward(const Tensor& sim, double alpha) {
    require(sim.is_matrix() && sim.shape[0] == sim.shape[1],
            "hinge: similarity matrix must be square, got " + shape_str(sim.shape));
    const int b = sim.shape[0];
    require(b >= 2, "hinge: batch must have b >= 2 samples, got b=" + std::to_string(b));

    HingeReport rep;
    rep.row_terms.resize(b);
    rep.col_terms.resize(b);
    rep.row_hard.resize(b);
    rep.col_hard.resize(b);

    for (int i = 0; i < b; ++i) {
        // hardest caption for image i: max over row i, j != i; first maximizer wins
        int jr = -1;
        double row_max = 0.0;
        for (int j = 0; j < b; ++j) {
            if (j == i) continue;
            if (jr < 0 || sim.at(i, j) > row_max) {
                row_max = sim.at(i, j);
                jr = j;
            }
        }
        // hardest image for caption i: max over column i
        int jc = -1;
        double col_max = 0.0;
        for (int j = 0; j < b; ++j) {
            if (j == i) continue;
            if (jc < 0 || sim.at(j, i) > col_max) {
                col_max = sim.at(j, i);
                jc = j;
            }
        }
        const double pos = sim.at(i, i);
        rep.row_hard[i] = jr;
        rep.col_hard[i] = jc;
        rep.row_terms[i] = std::max(0.0, alpha + row_max - pos);
        rep.col_terms[i] = std::max(0.0, alpha + col_max - pos);
        rep.total += rep.row_terms[i] + rep.col_terms[i];
    }
    return rep;
}

Var Tape::push(Tensor value, bool requires_grad,
               std::function<void(Tape&, const Tensor&)> backward_fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward_fn = requires_grad ? std::move(backward_fn) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) {
    require(v.valid() && static_cast<size_t>(v.id) < nodes_.size(),
            "tape: invalid node handle");
    return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    require(v.valid() && static_cast<size_t>(v.id) < nodes_.size(),
            "tape: invalid node handle");
    return nodes_[static_cast<size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor& Tape::grad_ref(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_alive) {
        n.grad = Tensor::zeros(n.value.shape);
        n.grad_alive = true;
    }
    return n.grad;
}

void Tape::accumulate(int32_t id, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    Tensor& dst = grad_ref(id);
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

Var Tape::leaf(Tensor t) {
    const bool rg = t.requires_grad;
    return push(std::move(t), rg, nullptr);
}

Var Tape::constant(Tensor t) {
    t.requires_grad = false;
    return push(std::move(t), false, nullptr);
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.is_matrix() && B.is_matrix() && A.shape[1] == B.shape[0],
            "matmul: inner dimensions disagree: " + shape_str(A.shape) + " x " +
                shape_str(B.shape));
    Tensor C = Tensor::zeros({A.shape[0], B.shape[1]});
    as_eigen(C) = as_eigen(A) * as_eigen(B);
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(C), rg, [a, b](Tape& t, const Tensor& up) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        if (t.node(a).requires_grad) {
            Tensor dA = Tensor::zeros(A.shape);
            as_eigen(dA) = as_eigen(up) * as_eigen(B).transpose();
            t.accumulate(a.id, dA);
        }
        if (t.node(b).requires_grad) {
            Tensor dB = Tensor::zeros(B.shape);
            as_eigen(dB) = as_eigen(A).transpose() * as_eigen(up);
            t.accumulate(b.id, dB);
        }
    });
}

Var Tape::transpose(Var a) {
    const Tensor& A = value(a);
    require(A.is_matrix(), "transpose: expects a matrix, got " + shape_str(A.shape));
    Tensor C = Tensor::zeros({A.shape[1], A.shape[0]});
    as_eigen(C) = as_eigen(A).transpose();
    return push(std::move(C), node(a).requires_grad, [a](Tape& t, const Tensor& up) {
        Tensor g = Tensor::zeros(t.value(a).shape);
        as_eigen(g) = as_eigen(up).transpose();
        t.accumulate(a.id, g);
    });
}

Var Tape::add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B),
            "add: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(C), rg, [a, b](Tape& t, const Tensor& up) {
        t.accumulate(a.id, up);
        t.accumulate(b.id, up);
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B),
            "sub: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] -= B.data[i];
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(C), rg, [a, b](Tape& t, const Tensor& up) {
        t.accumulate(a.id, up);
        if (t.node(b).requires_grad) {
            Tensor g = up;
            for (double& v : g.data) v = -v;
            t.accumulate(b.id, g);
        }
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B),
            "mul: shape mismatch " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(C), rg, [a, b](Tape& t, const Tensor& up) {
        if (t.node(a).requires_grad) {
            Tensor g = up;
            const Tensor& B = t.value(b);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= B.data[i];
            t.accumulate(a.id, g);
        }
        if (t.node(b).requires_grad) {
            Tensor g = up;
            const Tensor& A = t.value(a);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= A.data[i];
            t.accumulate(b.id, g);
        }
    });
}

Var Tape::scale(Var a, double c) {
    Tensor C = value(a);
    for (double& v : C.data) v *= c;
    return push(std::move(C), node(a).requires_grad, [a, c](Tape& t, const Tensor& up) {
        Tensor g = up;
        for (double& v : g.data) v *= c;
        t.accumulate(a.id, g);
    });
}

Var Tape::add_row(Var a, Var row) {
    const Tensor& A = value(a);
    const Tensor& R = value(row);
    require(A.is_matrix() && R.numel() == A.shape[1],
            "add_row: row " + shape_str(R.shape) + " does not match matrix " +
                shape_str(A.shape));
    Tensor C = A;
    const int m = A.shape[1];
    for (int r = 0; r < A.shape[0]; ++r)
        for (int c = 0; c < m; ++c) C.at(r, c) += R.data[static_cast<size_t>(c)];
    const bool rg = node(a).requires_grad || node(row).requires_grad;
    return push(std::move(C), rg, [a, row](Tape& t, const Tensor& up) {
        t.accumulate(a.id, up);
        if (t.node(row).requires_grad) {
            Tensor g = Tensor::zeros(t.value(row).shape);
            const int m = up.shape[1];
            for (int r = 0; r < up.shape[0]; ++r)
                for (int c = 0; c < m; ++c) g.data[static_cast<size_t>(c)] += up.at(r, c);
            t.accumulate(row.id, g);
        }
    });
}

Var Tape::mul_row(Var a, Var row) {
    const Tensor& A = value(a);
    const Tensor& R = value(row);
    require(A.is_matrix() && R.numel() == A.shape[1],
            "mul_row: row " + shape_str(R.shape) + " does not match matrix " +
                shape_str(A.shape));
    Tensor C = A;
    const int m = A.shape[1];
    for (int r = 0; r < A.shape[0]; ++r)
        for (int c = 0; c < m; ++c) C.at(r, c) *= R.data[static_cast<size_t>(c)];
    const bool rg = node(a).requires_grad || node(row).requires_grad;
    return push(std::move(C), rg, [a, row](Tape& t, const Tensor& up) {
        const Tensor& A = t.value(a);
        const Tensor& R = t.value(row);
        const int m = up.shape[1];
        if (t.node(a).requires_grad) {
            Tensor g = up;
            for (int r = 0; r < up.shape[0]; ++r)
                for (int c = 0; c < m; ++c) g.at(r, c) *= R.data[static_cast<size_t>(c)];
            t.accumulate(a.id, g);
        }
        if (t.node(row).requires_grad) {
            Tensor g = Tensor::zeros(R.shape);
            for (int r = 0; r < up.shape[0]; ++r)
                for (int c = 0; c < m; ++c)
                    g.data[static_cast<size_t>(c)] += up.at(r, c) * A.at(r, c);
            t.accumulate(row.id, g);
        }
    });
}

Var Tape::clamp_min(Var a, double lo) {
    const Tensor& A = value(a);
    Tensor C = A;
    for (double& v : C.data) v = std::max(v, lo);
    return push(std::move(C), node(a).requires_grad, [a, lo](Tape& t, const Tensor& up) {
        const Tensor& A = t.value(a);
        Tensor g = up;
        for (size_t i = 0; i < g.data.size(); ++i)
            if (A.data[i] <= lo) g.data[i] = 0.0;  // subgradient 0 at the kink
        t.accumulate(a.id, g);
    });
}

Var Tape::softmax_rows(Var a) {
    const Tensor& A = value(a);
    require(A.is_matrix(), "softmax_rows: expects a matrix, got " + shape_str(A.shape));
    Tensor C = A;
    const int m = A.shape[1];
    for (int r = 0; r < A.shape[0]; ++r) {
        double mx = C.at(r, 0);
        for (int c = 1; c < m; ++c) mx = std::max(mx, C.at(r, c));
        double sum = 0.0;
        for (int c = 0; c < m; ++c) {
            const double e = std::exp(C.at(r, c) - mx);
            C.at(r, c) = e;
            sum += e;
        }
        for (int c = 0; c < m; ++c) C.at(r, c) /= sum;
    }
    Var out = push(std::move(C), node(a).requires_grad, nullptr);
    if (node(out).requires_grad) {
        node(out).backward_fn = [a, out](Tape& t, const Tensor& up) {
            const Tensor& Y = t.value(out);
            Tensor g = Tensor::zeros(Y.shape);
            const int m = Y.shape[1];
            for (int r = 0; r < Y.shape[0]; ++r) {
                double inner = 0.0;
                for (int c = 0; c < m; ++c) inner += up.at(r, c) * Y.at(r, c);
                for (int c = 0; c < m; ++c)
                    g.at(r, c) = Y.at(r, c) * (up.at(r, c) - inner);
            }
            t.accumulate(a.id, g);
        };
    }
    return out;
}

Var Tape::layer_norm_rows(Var a, double eps) {
    const Tensor& A = value(a);
    require(A.is_matrix(), "layer_norm_rows: expects a matrix, got " + shape_str(A.shape));
    const int n = A.shape[0], m = A.shape[1];
    Tensor C = Tensor::zeros(A.shape);
    Tensor inv_std = Tensor::zeros({n});
    for (int r = 0; r < n; ++r) {
        double mu = 0.0;
        for (int c = 0; c < m; ++c) mu += A.at(r, c);
        mu /= m;
        double var = 0.0;
        for (int c = 0; c < m; ++c) {
            const double d = A.at(r, c) - mu;
            var += d * d;
        }
        var /= m;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std.data[static_cast<size_t>(r)] = is;
        for (int c = 0; c < m; ++c) C.at(r, c) = (A.at(r, c) - mu) * is;
    }
    Var out = push(std::move(C), node(a).requires_grad, nullptr);
    if (node(out).requires_grad) {
        node(out).backward_fn = [a, out, istd = std::move(inv_std)](Tape& t, const Tensor& up) {
            const Tensor& Y = t.value(out);
            const int n = Y.shape[0], m = Y.shape[1];
            Tensor g = Tensor::zeros(Y.shape);
            for (int r = 0; r < n; ++r) {
                double gmean = 0.0, gymean = 0.0;
                for (int c = 0; c < m; ++c) {
                    gmean += up.at(r, c);
                    gymean += up.at(r, c) * Y.at(r, c);
                }
                gmean /= m;
                gymean /= m;
                const double is = istd.data[static_cast<size_t>(r)];
                for (int c = 0; c < m; ++c)
                    g.at(r, c) = is * (up.at(r, c) - gmean - Y.at(r, c) * gymean);
            }
            t.accumulate(a.id, g);
        };
    }
    return out;
}

Var Tape::l2_normalize(Var a) {
    const Tensor& A = value(a);
    double sq = 0.0;
    for (double v : A.data) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm == 0.0)
        throw DegenerateInputError("l2_normalize: zero vector has no direction");
    Tensor C = A;
    for (double& v : C.data) v /= norm;
    return push(std::move(C), node(a).requires_grad,
                [a, norm](Tape& t, const Tensor& up) {
                    // d(x/|x|) = (I - y y^T)/|x| applied to upstream
                    const Tensor& A = t.value(a);
                    double inner = 0.0;
                    for (size_t i = 0; i < up.data.size(); ++i)
                        inner += up.data[i] * A.data[i] / norm;
                    Tensor g = up;
                    for (size_t i = 0; i < g.data.size(); ++i)
                        g.data[i] = (g.data[i] - inner * A.data[i] / norm) / norm;
                    t.accumulate(a.id, g);
                });
}

Var Tape::gather_rows(Var table, std::vector<int> idx) {
    const Tensor& T = value(table);
    require(T.is_matrix(), "gather_rows: table must be a matrix, got " + shape_str(T.shape));
    const int m = T.shape[1];
    for (int i : idx)
        require(i >= 0 && i < T.shape[0],
                "gather_rows: index " + std::to_string(i) + " out of range for table " +
                    shape_str(T.shape));
    Tensor C = Tensor::zeros({static_cast<int>(idx.size()), m});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(&T.data[static_cast<size_t>(idx[r]) * m], m,
                    &C.data[r * static_cast<size_t>(m)]);
    return push(std::move(C), node(table).requires_grad,
                [table, idx = std::move(idx)](Tape& t, const Tensor& up) {
                    Tensor g = Tensor::zeros(t.value(table).shape);
                    const int m = g.shape[1];
                    for (size_t r = 0; r < idx.size(); ++r)
                        for (int c = 0; c < m; ++c)
                            g.data[static_cast<size_t>(idx[r]) * m + c] += up.at(static_cast<int>(r), c);
                    t.accumulate(table.id, g);
                });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
    require(!rows.empty(), "stack_rows: empty input");
    const int64_t d = value(rows[0]).numel();
    bool rg = false;
    for (Var r : rows) {
        require(value(r).numel() == d, "stack_rows: row sizes differ: " +
                                           shape_str(value(rows[0]).shape) + " vs " +
                                           shape_str(value(r).shape));
        rg = rg || node(r).requires_grad;
    }
    Tensor C = Tensor::zeros({static_cast<int>(rows.size()), static_cast<int>(d)});
    for (size_t r = 0; r < rows.size(); ++r)
        std::copy(value(rows[r]).data.begin(), value(rows[r]).data.end(),
                  C.data.begin() + static_cast<int64_t>(r) * d);
    return push(std::move(C), rg, [rows](Tape& t, const Tensor& up) {
        const int64_t d = up.shape[1];
        for (size_t r = 0; r < rows.size(); ++r) {
            if (!t.node(rows[r]).requires_grad) continue;
            Tensor g = Tensor::zeros(t.value(rows[r]).shape);
            std::copy_n(up.data.begin() + static_cast<int64_t>(r) * d, d, g.data.begin());
            t.accumulate(rows[r].id, g);
        }
    });
}

Var Tape::slice_cols(Var a, int start, int len) {
    const Tensor& A = value(a);
    require(A.is_matrix() && start >= 0 && len >= 1 && start + len <= A.shape[1],
            "slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") out of range for " + shape_str(A.shape));
    Tensor C = Tensor::zeros({A.shape[0], len});
    for (int r = 0; r < A.shape[0]; ++r)
        for (int c = 0; c < len; ++c) C.at(r, c) = A.at(r, start + c);
    return push(std::move(C), node(a).requires_grad,
                [a, start, len](Tape& t, const Tensor& up) {
                    Tensor g = Tensor::zeros(t.value(a).shape);
                    for (int r = 0; r < up.shape[0]; ++r)
                        for (int c = 0; c < len; ++c) g.at(r, start + c) = up.at(r, c);
                    t.accumulate(a.id, g);
                });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: empty input");
    const int n = value(parts[0]).shape[0];
    int total = 0;
    bool rg = false;
    for (Var p : parts) {
        const Tensor& P = value(p);
        require(P.is_matrix() && P.shape[0] == n,
                "concat_cols: row counts differ: " + shape_str(value(parts[0]).shape) +
                    " vs " + shape_str(P.shape));
        total += P.shape[1];
        rg = rg || node(p).requires_grad;
    }
    Tensor C = Tensor::zeros({n, total});
    int off = 0;
    for (Var p : parts) {
        const Tensor& P = value(p);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < P.shape[1]; ++c) C.at(r, off + c) = P.at(r, c);
        off += P.shape[1];
    }
    return push(std::move(C), rg, [parts](Tape& t, const Tensor& up) {
        int off = 0;
        for (Var p : parts) {
            const Tensor& P = t.value(p);
            if (t.node(p).requires_grad) {
                Tensor g = Tensor::zeros(P.shape);
                for (int r = 0; r < P.shape[0]; ++r)
                    for (int c = 0; c < P.shape[1]; ++c) g.at(r, c) = up.at(r, off + c);
                t.accumulate(p.id, g);
            }
            off += P.shape[1];
        }
    });
}

Var Tape::max_rows(Var a) {
    const Tensor& A = value(a);
    require(A.is_matrix(), "max_rows: expects a matrix, got " + shape_str(A.shape));
    const int n = A.shape[0], m = A.shape[1];
    Tensor C = Tensor::zeros({n, 1});
    std::vector<int> arg(static_cast<size_t>(n), 0);
    for (int r = 0; r < n; ++r) {
        double best = A.at(r, 0);
        int bi = 0;
        for (int c = 1; c < m; ++c) {
            if (A.at(r, c) > best) {  // strict: first maximizer wins ties
                best = A.at(r, c);
                bi = c;
            }
        }
        C.at(r, 0) = best;
        arg[static_cast<size_t>(r)] = bi;
    }
    return push(std::move(C), node(a).requires_grad,
                [a, arg = std::move(arg)](Tape& t, const Tensor& up) {
                    Tensor g = Tensor::zeros(t.value(a).shape);
                    for (int r = 0; r < up.shape[0]; ++r)
                        g.at(r, arg[static_cast<size_t>(r)]) = up.at(r, 0);
                    t.accumulate(a.id, g);
                });
}

Var Tape::sum(Var a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double v : A.data) s += v;
    return push(Tensor::scalar(s), node(a).requires_grad, [a](Tape& t, const Tensor& up) {
        Tensor g = Tensor::full(t.value(a).shape, up.data[0]);
        t.accumulate(a.id, g);
    });
}

Var Tape::mean(Var a) {
    const Tensor& A = value(a);
    const double n = static_cast<double>(A.numel());
    double s = 0.0;
    for (double v : A.data) s += v;
    return push(Tensor::scalar(s / n), node(a).requires_grad,
                [a, n](Tape& t, const Tensor& up) {
                    Tensor g = Tensor::full(t.value(a).shape, up.data[0] / n);
                    t.accumulate(a.id, g);
                });
}

Var Tape::dot(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.numel() == B.numel(),
            "dot: operand sizes differ: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    double s = 0.0;
    for (size_t i = 0; i < A.data.size(); ++i) s += A.data[i] * B.data[i];
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    return push(Tensor::scalar(s), rg, [a, b](Tape& t, const Tensor& up) {
        const double u = up.data[0];
        if (t.node(a).requires_grad) {
            Tensor g = t.value(b);
            g.shape = t.value(a).shape;
            for (double& v : g.data) v *= u;
            t.accumulate(a.id, g);
        }
        if (t.node(b).requires_grad) {
            Tensor g = t.value(a);
            g.shape = t.value(b).shape;
            for (double& v : g.data) v *= u;
            t.accumulate(b.id, g);
        }
    });
}

Var Tape::reshape(Var a, Shape s) {
    Tensor C = value(a);
    Tensor probe = Tensor::zeros(s);
    require(probe.numel() == C.numel(), "reshape: cannot view " + shape_str(C.shape) +
                                            " as " + shape_str(s));
    C.shape = s;
    return push(std::move(C), node(a).requires_grad, [a](Tape& t, const Tensor& up) {
        Tensor g = up;
        g.shape = t.value(a).shape;
        t.accumulate(a.id, g);
    });
}

Var Tape::hard_negative_hinge(Var sim, double alpha) {
    const Tensor& S = value(sim);
    HingeReport rep = hinge_forward(S, alpha);
    return push(Tensor::scalar(rep.total), node(sim).requires_grad,
                [sim, rep = std::move(rep)](Tape& t, const Tensor& up) {
                    const double u = up.data[0];
                    Tensor g = Tensor::zeros(t.value(sim).shape);
                    const int b = g.shape[0];
                    for (int i = 0; i < b; ++i) {
                        if (rep.row_terms[i] > 0.0) {
                            g.at(i, rep.row_hard[i]) += u;
                            g.at(i, i) -= u;
                        }
                        if (rep.col_terms[i] > 0.0) {
                            g.at(rep.col_hard[i], i) += u;
                            g.at(i, i) -= u;
                        }
                    }
                    t.accumulate(sim.id, g);
                });
}

Var Tape::cross_entropy_logits(Var logits, std::vector<int> labels) {
    const Tensor& Z = value(logits);
    require(Z.is_matrix(), "cross_entropy: logits must be a matrix, got " + shape_str(Z.shape));
    const int b = Z.shape[0], C = Z.shape[1];
    require(static_cast<int>(labels.size()) == b,
            "cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                std::to_string(b));
    Tensor probs = Tensor::zeros(Z.shape);
    double loss = 0.0;
    for (int r = 0; r < b; ++r) {
        require(labels[static_cast<size_t>(r)] >= 0 && labels[static_cast<size_t>(r)] < C,
                "cross_entropy: label out of range");
        double mx = Z.at(r, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, Z.at(r, c));
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += std::exp(Z.at(r, c) - mx);
        const double lse = mx + std::log(sum);
        loss += lse - Z.at(r, labels[static_cast<size_t>(r)]);
        for (int c = 0; c < C; ++c) probs.at(r, c) = std::exp(Z.at(r, c) - lse);
    }
    loss /= b;
    return push(Tensor::scalar(loss), node(logits).requires_grad,
                [logits, probs = std::move(probs), labels = std::move(labels)](
                    Tape& t, const Tensor& up) {
                    const double u = up.data[0];
                    Tensor g = probs;
                    const int b = g.shape[0];
                    for (int r = 0; r < b; ++r) {
                        g.at(r, labels[static_cast<size_t>(r)]) -= 1.0;
                    }
                    for (double& v : g.data) v *= u / b;
                    t.accumulate(logits.id, g);
                });
}

void Tape::backward(Var loss) {
    const Tensor& L = value(loss);
    require(L.is_scalar(), "backward: loss must be scalar, got " + shape_str(L.shape));
    for (Node& n : nodes_) {
        n.grad_alive = false;
        n.grad = Tensor();
    }
    grad_ref(loss.id).data[0] = 1.0;
    for (int32_t id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad_alive && n.backward_fn) n.backward_fn(*this, n.grad);
    }
}

const Tensor& Tape::grad(Var v) {
    node(v);  // bounds check
    return grad_ref(v.id);
}

}  // namespace xmodal
