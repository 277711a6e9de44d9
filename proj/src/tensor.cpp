#include "disc/tensor.hpp"

#include "disc/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace disc {

namespace {

constexpr double kNormEps = 1e-8;

[[noreturn]] void dim_error(std::string_view op, const Matrix& a, const Matrix& b) {
    std::ostringstream os;
    os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
    throw DimensionError(os.str());
}

[[noreturn]] void dim_error(std::string_view op, const std::string& detail) {
    throw DimensionError(std::string(op) + ": " + detail);
}

Graph& graph_of(Var a) {
    if (!a.valid()) throw ContractError("op applied to an invalid Var");
    return *a.graph();
}

Graph& graph_of(Var a, Var b) {
    if (a.graph() != b.graph()) throw ContractError("op mixes Vars from different graphs");
    return graph_of(a);
}

} // namespace

std::string shape_str(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

const Matrix& Var::value() const { return graph_->value(id_); }
const Matrix& Var::grad() const { return graph_->grad(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::push_leaf(Matrix value, bool requires_grad, Parameter* p) {
    if (opts_.check_finite && !value.allFinite())
        throw NonFiniteError("non-finite value in leaf tensor " + shape_str(value));
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = p;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::constant(Matrix value) { return push_leaf(std::move(value), false, nullptr); }
Var Graph::variable(Matrix value) { return push_leaf(std::move(value), true, nullptr); }

Var Graph::param(Parameter& p) {
    if (opts_.no_grad) return push_leaf(p.value, false, nullptr);
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    return push_leaf(p.value, true, &p);
}

Var Graph::record(Matrix value, std::vector<int> inputs, BackwardFn fn, const char* op) {
    if (opts_.check_finite && !value.allFinite())
        throw NonFiniteError(std::string("non-finite output from op ") + op + " " + shape_str(value));
    Node n;
    n.value = std::move(value);
    for (int in : inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
    if (n.requires_grad) {
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
    }
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Graph::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

void Graph::backward(Var loss) {
    if (loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
    const Matrix& lv = loss.value();
    if (lv.rows() != 1 || lv.cols() != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(lv));
    for (auto& n : nodes_) n.grad.resize(0, 0);
    auto& root = nodes_[static_cast<std::size_t>(loss.id())];
    if (!root.requires_grad) return;
    root.grad = Matrix::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (opts_.check_finite && !n.grad.allFinite())
            throw NonFiniteError(std::string("non-finite gradient at op ") + n.op);
        if (n.backward) n.backward(*this, i);
        if (n.param) n.param->grad += n.grad;
    }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    if (A.cols() != B.rows()) dim_error("matmul", A, B);
    Matrix out(A.rows(), B.cols());
    out.noalias() = A * B;
    int ia = a.id(), ib = b.id();
    return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, int self) {
        const Matrix& dy = gr.grad(self);
        if (gr.requires_grad(ia)) {
            Matrix da(dy.rows(), gr.value(ib).rows());
            da.noalias() = dy * gr.value(ib).transpose();
            gr.accumulate(ia, da);
        }
        if (gr.requires_grad(ib)) {
            Matrix db(gr.value(ia).cols(), dy.cols());
            db.noalias() = gr.value(ia).transpose() * dy;
            gr.accumulate(ib, db);
        }
    }, "matmul");
}

Var transpose(Var a) {
    Graph& g = graph_of(a);
    int ia = a.id();
    return g.record(a.value().transpose(), {ia}, [ia](Graph& gr, int self) {
        gr.accumulate_expr(ia, gr.grad(self).transpose());
    }, "transpose");
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    int ia = a.id(), ib = b.id();
    if (A.rows() == B.rows() && A.cols() == B.cols()) {
        return g.record(A + B, {ia, ib}, [ia, ib](Graph& gr, int self) {
            gr.accumulate(ia, gr.grad(self));
            gr.accumulate(ib, gr.grad(self));
        }, "add");
    }
    if (B.rows() == 1 && B.cols() == A.cols()) {
        Matrix out = A.rowwise() + B.row(0);
        return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, int self) {
            gr.accumulate(ia, gr.grad(self));
            gr.accumulate_expr(ib, gr.grad(self).colwise().sum());
        }, "add");
    }
    dim_error("add", A, B);
}

Var sub(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols()) dim_error("sub", A, B);
    int ia = a.id(), ib = b.id();
    return g.record(A - B, {ia, ib}, [ia, ib](Graph& gr, int self) {
        gr.accumulate(ia, gr.grad(self));
        gr.accumulate_expr(ib, -gr.grad(self));
    }, "sub");
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols()) dim_error("mul", A, B);
    int ia = a.id(), ib = b.id();
    return g.record(A.cwiseProduct(B), {ia, ib}, [ia, ib](Graph& gr, int self) {
        const Matrix& dy = gr.grad(self);
        if (gr.requires_grad(ia)) gr.accumulate_expr(ia, dy.cwiseProduct(gr.value(ib)));
        if (gr.requires_grad(ib)) gr.accumulate_expr(ib, dy.cwiseProduct(gr.value(ia)));
    }, "mul");
}

Var scale(Var a, double s) {
    Graph& g = graph_of(a);
    int ia = a.id();
    return g.record(a.value() * s, {ia}, [ia, s](Graph& gr, int self) {
        gr.accumulate_expr(ia, gr.grad(self) * s);
    }, "scale");
}

Var relu(Var a) {
    Graph& g = graph_of(a);
    int ia = a.id();
    return g.record(a.value().cwiseMax(0.0), {ia}, [ia](Graph& gr, int self) {
        const Matrix& x = gr.value(ia);
        gr.accumulate_expr(ia, (x.array() > 0.0).select(gr.grad(self), 0.0));
    }, "relu");
}

Var tanh(Var a) {
    Graph& g = graph_of(a);
    int ia = a.id();
    // 1 - 2 / (exp(2x) + 1) keeps the vectorised exp path; clamp avoids inf/inf.
    Matrix out = (1.0 - 2.0 / ((2.0 * a.value().array().cwiseMin(40.0)).exp() + 1.0)).matrix();
    return g.record(std::move(out), {ia}, [ia](Graph& gr, int self) {
        const Matrix& y = gr.value(self);
        gr.accumulate_expr(ia, gr.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
    }, "tanh");
}

namespace {

void softmax_inplace(Matrix& m) {
    Vector mx = m.rowwise().maxCoeff();
    m.array().colwise() -= mx.array();
    m.array() = m.array().exp();
    Vector inv = m.rowwise().sum().cwiseInverse();
    m.array().colwise() *= inv.array();
}

// dS = P o (dP - rowsum(dP o P))
Matrix softmax_backward(const Matrix& p, const Matrix& dp) {
    Matrix ds = dp.cwiseProduct(p);
    Vector dots = ds.rowwise().sum();
    ds.array() -= p.array().colwise() * dots.array();
    return ds;
}

} // namespace

Var softmax_rows(Var a) {
    Graph& g = graph_of(a);
    int ia = a.id();
    Matrix out = a.value();
    softmax_inplace(out);
    return g.record(std::move(out), {ia}, [ia](Graph& gr, int self) {
        gr.accumulate(ia, softmax_backward(gr.value(self), gr.grad(self)));
    }, "softmax");
}

Var layer_norm(Var x, Var gain, Var bias) {
    Graph& g = graph_of(x, gain);
    graph_of(x, bias);
    const Matrix& X = x.value();
    const Index d = X.cols();
    if (gain.rows() != 1 || gain.cols() != d) dim_error("layer_norm", X, gain.value());
    if (bias.rows() != 1 || bias.cols() != d) dim_error("layer_norm", X, bias.value());
    Matrix xhat(X.rows(), d);
    Vector inv_std(X.rows());
    for (Index r = 0; r < X.rows(); ++r) {
        double mu = X.row(r).mean();
        auto centered = X.row(r).array() - mu;
        double var = centered.square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + kNormEps);
        xhat.row(r) = (centered * inv_std(r)).matrix();
    }
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += bias.value().row(0);
    int ix = x.id(), ig = gain.id(), ib = bias.id();
    return g.record(std::move(out), {ix, ig, ib},
        [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, int self) {
            const Matrix& dy = gr.grad(self);
            if (gr.requires_grad(ig)) gr.accumulate_expr(ig, dy.cwiseProduct(xhat).colwise().sum());
            if (gr.requires_grad(ib)) gr.accumulate_expr(ib, dy.colwise().sum());
            if (gr.requires_grad(ix)) {
                Matrix dxhat = (dy.array().rowwise() * gr.value(ig).row(0).array()).matrix();
                Matrix dx(dy.rows(), dy.cols());
                for (Index r = 0; r < dy.rows(); ++r) {
                    double m1 = dxhat.row(r).mean();
                    double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(dy.cols());
                    dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                }
                gr.accumulate(ix, dx);
            }
        }, "layer_norm");
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    Graph& g = graph_of(parts[0]);
    const Index cols = parts[0].cols();
    Index rows = 0;
    std::vector<int> ids;
    std::vector<Index> offsets;
    for (const Var& p : parts) {
        graph_of(parts[0], p);
        if (p.cols() != cols) dim_error("concat_rows", parts[0].value(), p.value());
        offsets.push_back(rows);
        rows += p.rows();
        ids.push_back(p.id());
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < parts.size(); ++i)
        out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
    auto idc = ids;
    return g.record(std::move(out), std::move(ids), [idc, offsets](Graph& gr, int self) {
        const Matrix& dy = gr.grad(self);
        for (std::size_t i = 0; i < idc.size(); ++i) {
            if (!gr.requires_grad(idc[i])) continue;
            gr.accumulate_expr(idc[i], dy.middleRows(offsets[i], gr.value(idc[i]).rows()));
        }
    }, "concat_rows");
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    Graph& g = graph_of(parts[0]);
    const Index rows = parts[0].rows();
    Index cols = 0;
    std::vector<int> ids;
    std::vector<Index> offsets;
    for (const Var& p : parts) {
        graph_of(parts[0], p);
        if (p.rows() != rows) dim_error("concat_cols", parts[0].value(), p.value());
        offsets.push_back(cols);
        cols += p.cols();
        ids.push_back(p.id());
    }
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < parts.size(); ++i)
        out.middleCols(offsets[i], parts[i].cols()) = parts[i].value();
    auto idc = ids;
    return g.record(std::move(out), std::move(ids), [idc, offsets](Graph& gr, int self) {
        const Matrix& dy = gr.grad(self);
        for (std::size_t i = 0; i < idc.size(); ++i) {
            if (!gr.requires_grad(idc[i])) continue;
            gr.accumulate_expr(idc[i], dy.middleCols(offsets[i], gr.value(idc[i]).cols()));
        }
    }, "concat_cols");
}

Var slice(Var a, Index row0, Index nrows, Index col0, Index ncols) {
    Graph& g = graph_of(a);
    const Matrix& A = a.value();
    if (row0 < 0 || nrows < 0 || col0 < 0 || ncols < 0 || row0 + nrows > A.rows() || col0 + ncols > A.cols()) {
        dim_error("slice", "block [" + std::to_string(row0) + "+" + std::to_string(nrows) + ", " +
                               std::to_string(col0) + "+" + std::to_string(ncols) + "] outside " + shape_str(A));
    }
    int ia = a.id();
    Matrix out = A.block(row0, col0, nrows, ncols);
    return g.record(std::move(out), {ia}, [ia, row0, col0](Graph& gr, int self) {
        const Matrix& dy = gr.grad(self);
        const Matrix& x = gr.value(ia);
        Matrix dx = Matrix::Zero(x.rows(), x.cols());
        dx.block(row0, col0, dy.rows(), dy.cols()) = dy;
        gr.accumulate(ia, dx);
    }, "slice");
}

Var reshape(Var a, Index rows, Index cols) {
    Graph& g = graph_of(a);
    const Matrix& A = a.value();
    if (rows * cols != A.size())
        dim_error("reshape", shape_str(A) + " cannot be viewed as (" + std::to_string(rows) + "x" +
                                 std::to_string(cols) + ")");
    Matrix out = Eigen::Map<const Matrix>(A.data(), rows, cols);
    int ia = a.id();
    return g.record(std::move(out), {ia}, [ia](Graph& gr, int self) {
        const Matrix& x = gr.value(ia);
        gr.accumulate(ia, Eigen::Map<const Matrix>(gr.grad(self).data(), x.rows(), x.cols()));
    }, "reshape");
}

Var mean(Var a) {
    Graph& g = graph_of(a);
    const Matrix& A = a.value();
    if (A.size() == 0) dim_error("mean", "empty input");
    Matrix out(1, 1);
    out(0, 0) = A.mean();
    int ia = a.id();
    return g.record(std::move(out), {ia}, [ia](Graph& gr, int self) {
        const Matrix& x = gr.value(ia);
        double s = gr.grad(self)(0, 0) / static_cast<double>(x.size());
        gr.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), s));
    }, "mean");
}

Var mse(Var pred, Var target) {
    Graph& g = graph_of(pred, target);
    const Matrix& P = pred.value();
    const Matrix& T = target.value();
    if (P.rows() != T.rows() || P.cols() != T.cols()) dim_error("mse", P, T);
    if (P.rows() == 0) dim_error("mse", "empty batch");
    Matrix diff = P - T;
    Matrix out(1, 1);
    out(0, 0) = diff.squaredNorm() / static_cast<double>(P.rows());
    int ip = pred.id(), it = target.id();
    return g.record(std::move(out), {ip, it}, [ip, it, diff = std::move(diff)](Graph& gr, int self) {
        double s = 2.0 * gr.grad(self)(0, 0) / static_cast<double>(diff.rows());
        if (gr.requires_grad(ip)) gr.accumulate_expr(ip, diff * s);
        if (gr.requires_grad(it)) gr.accumulate_expr(it, diff * -s);
    }, "mse");
}

Var gather_rows(Var a, std::vector<Index> rows) {
    Graph& g = graph_of(a);
    const Matrix& A = a.value();
    Matrix out(static_cast<Index>(rows.size()), A.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= A.rows())
            dim_error("gather_rows", "row index " + std::to_string(rows[i]) + " outside " + shape_str(A));
        out.row(static_cast<Index>(i)) = A.row(rows[i]);
    }
    int ia = a.id();
    return g.record(std::move(out), {ia}, [ia, rows = std::move(rows)](Graph& gr, int self) {
        const Matrix& dy = gr.grad(self);
        const Matrix& x = gr.value(ia);
        Matrix dx = Matrix::Zero(x.rows(), x.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += dy.row(static_cast<Index>(i));
        gr.accumulate(ia, dx);
    }, "gather_rows");
}

Var attention(Var q, Var k, Var v, int heads, int groups) {
    Graph& g = graph_of(q, k);
    graph_of(q, v);
    const Matrix& Q = q.value();
    const Matrix& K = k.value();
    const Matrix& V = v.value();
    const Index d = Q.cols();
    if (heads <= 0 || groups <= 0) dim_error("attention", "heads and groups must be positive");
    if (K.cols() != d) dim_error("attention", Q, K);
    if (V.rows() != K.rows() || V.cols() != d) dim_error("attention", K, V);
    if (d % heads != 0)
        dim_error("attention", "width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    if (Q.rows() % groups != 0 || K.rows() % groups != 0 || K.rows() == 0)
        dim_error("attention", "rows of " + shape_str(Q) + " / " + shape_str(K) + " not divisible into " +
                                   std::to_string(groups) + " groups");
    const Index nq = Q.rows() / groups;
    const Index nk = K.rows() / groups;
    const Index dk = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dk));

    // probs[g*heads + h] is the nq x nk attention map of group g, head h.
    std::vector<Matrix> probs(static_cast<std::size_t>(groups * heads));
    Matrix out(Q.rows(), d);
    // Heads are copied into contiguous buffers so every product runs as a packed GEMM.
    Matrix qh(nq, dk), kt(dk, nk), vh(nk, dk), oh(nq, dk);
    for (int gi = 0; gi < groups; ++gi) {
        for (int h = 0; h < heads; ++h) {
            qh = Q.block(gi * nq, h * dk, nq, dk) * s;
            kt = K.block(gi * nk, h * dk, nk, dk).transpose();
            vh = V.block(gi * nk, h * dk, nk, dk);
            Matrix& P = probs[static_cast<std::size_t>(gi * heads + h)];
            P.resize(nq, nk);
            P.noalias() = qh * kt;
            softmax_inplace(P);
            oh.noalias() = P * vh;
            out.block(gi * nq, h * dk, nq, dk) = oh;
        }
    }
    int iq = q.id(), ik = k.id(), iv = v.id();
    return g.record(std::move(out), {iq, ik, iv},
        [iq, ik, iv, heads, groups, nq, nk, dk, s, probs = std::move(probs)](Graph& gr, int self) {
            const Matrix& dy = gr.grad(self);
            const Matrix& Qv = gr.value(iq);
            const Matrix& Kv = gr.value(ik);
            const Matrix& Vv = gr.value(iv);
            Matrix dq(Qv.rows(), Qv.cols());
            Matrix dkm(Kv.rows(), Kv.cols());
            Matrix dv(Vv.rows(), Vv.cols());
            Matrix dp(nq, nk), doh(nq, dk), qh(nq, dk), kh(nk, dk), vt(dk, nk), dvh(nk, dk), dkh(nk, dk), dqh(nq, dk);
            for (int gi = 0; gi < groups; ++gi) {
                for (int h = 0; h < heads; ++h) {
                    const Matrix& P = probs[static_cast<std::size_t>(gi * heads + h)];
                    doh = dy.block(gi * nq, h * dk, nq, dk);
                    qh = Qv.block(gi * nq, h * dk, nq, dk);
                    kh = Kv.block(gi * nk, h * dk, nk, dk);
                    vt = Vv.block(gi * nk, h * dk, nk, dk).transpose();
                    dp.noalias() = doh * vt;
                    dvh.noalias() = P.transpose() * doh;
                    Matrix ds = softmax_backward(P, dp);
                    ds *= s;
                    dqh.noalias() = ds * kh;
                    dkh.noalias() = ds.transpose() * qh;
                    dq.block(gi * nq, h * dk, nq, dk) = dqh;
                    dkm.block(gi * nk, h * dk, nk, dk) = dkh;
                    dv.block(gi * nk, h * dk, nk, dk) = dvh;
                }
            }
            gr.accumulate(iq, dq);
            gr.accumulate(ik, dkm);
            gr.accumulate(iv, dv);
        }, "attention");
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 18> kOps = {
    "matmul", "transpose", "add", "sub", "mul", "scale", "relu", "tanh", "softmax",
    "layer_norm", "concat_rows", "concat_cols", "slice", "reshape", "mean", "mse",
    "gather_rows", "attention"};

void expect_arity(std::string_view kind, std::span<const Var> in, std::size_t n) {
    if (in.size() != n)
        throw ContractError(std::string(kind) + ": expected " + std::to_string(n) + " inputs, got " +
                            std::to_string(in.size()));
}

} // namespace

std::span<const std::string_view> supported_ops() { return kOps; }

Var forward_op(std::string_view kind, std::span<const Var> in, const OpAttrs& at) {
    if (kind == "matmul") { expect_arity(kind, in, 2); return matmul(in[0], in[1]); }
    if (kind == "transpose") { expect_arity(kind, in, 1); return transpose(in[0]); }
    if (kind == "add") { expect_arity(kind, in, 2); return add(in[0], in[1]); }
    if (kind == "sub") { expect_arity(kind, in, 2); return sub(in[0], in[1]); }
    if (kind == "mul") { expect_arity(kind, in, 2); return mul(in[0], in[1]); }
    if (kind == "scale") { expect_arity(kind, in, 1); return scale(in[0], at.scalar); }
    if (kind == "relu") { expect_arity(kind, in, 1); return relu(in[0]); }
    if (kind == "tanh") { expect_arity(kind, in, 1); return tanh(in[0]); }
    if (kind == "softmax") { expect_arity(kind, in, 1); return softmax_rows(in[0]); }
    if (kind == "layer_norm") { expect_arity(kind, in, 3); return layer_norm(in[0], in[1], in[2]); }
    if (kind == "concat_rows") return concat_rows(in);
    if (kind == "concat_cols") return concat_cols(in);
    if (kind == "slice") {
        expect_arity(kind, in, 1);
        Index nr = at.nrows < 0 ? in[0].rows() - at.row0 : at.nrows;
        Index nc = at.ncols < 0 ? in[0].cols() - at.col0 : at.ncols;
        return slice(in[0], at.row0, nr, at.col0, nc);
    }
    if (kind == "reshape") { expect_arity(kind, in, 1); return reshape(in[0], at.rows, at.cols); }
    if (kind == "mean") { expect_arity(kind, in, 1); return mean(in[0]); }
    if (kind == "mse") { expect_arity(kind, in, 2); return mse(in[0], in[1]); }
    if (kind == "gather_rows") { expect_arity(kind, in, 1); return gather_rows(in[0], at.indices); }
    if (kind == "attention") {
        expect_arity(kind, in, 3);
        return attention(in[0], in[1], in[2], at.heads, at.groups);
    }
    throw UnsupportedOpError("unsupported op kind '" + std::string(kind) + "'");
}

} // namespace disc
