#pragma once

// Define-by-run reverse-mode autodiff over dense row-major 2-D arrays.
//
// A Graph is rebuilt for every forward pass. Ops append nodes in topological
// order; Graph::backward walks them once in reverse. Leaves bound to a
// Parameter flush their gradient into Parameter::grad at the end of backward.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace disc {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

std::string shape_str(const Matrix& m);

/// Trainable tensor that outlives graphs. Gradients accumulate across backward
/// calls until zero_grad().
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    const Matrix& grad() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    bool requires_grad() const;
    int id() const { return id_; }
    Graph* graph() const { return graph_; }
    bool valid() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, int id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    int id_ = -1;
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int self)>;

    struct Options {
        /// Raise NonFiniteError as soon as any op produces NaN or Inf.
        bool check_finite = false;
        /// Inference mode: param() yields constants and no backward closures are kept.
        bool no_grad = false;
    };

    Graph() = default;
    explicit Graph(Options opts) : opts_(opts) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Matrix value);
    Var variable(Matrix value);
    Var param(Parameter& p);

    /// Reverse sweep from a 1x1 loss. Returns nothing; read gradients with
    /// grad(var) or from bound Parameters.
    void backward(Var loss);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    std::string_view op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }
    std::size_t size() const { return nodes_.size(); }

    /// Adds `g` into the gradient buffer of node `id` (no-op for constants).
    void accumulate(int id, const Matrix& g);
    template <typename Expr>
    void accumulate_expr(int id, const Expr& g) {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) n.grad = g;
        else n.grad += g;
    }

    /// Appends an op node. `fn` runs during backward when the node has a gradient.
    Var record(Matrix value, std::vector<int> inputs, BackwardFn fn, const char* op);

    const Options& options() const { return opts_; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::vector<int> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        const char* op = "leaf";
    };

    Var push_leaf(Matrix value, bool requires_grad, Parameter* p);

    Options opts_;
    std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops. All raise DimensionError on shape mismatch.

Var matmul(Var a, Var b);
Var transpose(Var a);
/// Elementwise sum. `b` may be a 1 x cols row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var tanh(Var a);
Var softmax_rows(Var a);
/// Row-wise normalization with learnable 1 x cols gain and bias; eps = 1e-8.
Var layer_norm(Var x, Var gain, Var bias);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice(Var a, Index row0, Index nrows, Index col0, Index ncols);
Var reshape(Var a, Index rows, Index cols);
/// Mean of all entries as a 1x1 value.
Var mean(Var a);
/// Mean over rows of the squared L2 row error: (1/n) sum_r ||p_r - t_r||^2.
Var mse(Var pred, Var target);
/// Row gather; repeated indices accumulate in backward.
Var gather_rows(Var a, std::vector<Index> rows);
/// Multi-head scaled dot-product attention over `groups` independent blocks.
/// q is (groups*nq) x d; k and v are (groups*nk) x d. Queries of group g only
/// see keys of group g.
Var attention(Var q, Var k, Var v, int heads, int groups = 1);

/// Extra arguments for the string-keyed dispatcher.
struct OpAttrs {
    double scalar = 1.0;
    Index row0 = 0, nrows = -1, col0 = 0, ncols = -1;
    Index rows = -1, cols = -1;
    int heads = 1;
    int groups = 1;
    std::vector<Index> indices;
};

/// Applies an op by name: "matmul", "transpose", "add", "sub", "mul", "scale",
/// "relu", "tanh", "softmax", "layer_norm", "concat_rows", "concat_cols",
/// "slice", "reshape", "mean", "mse", "gather_rows", "attention".
/// Unknown names raise UnsupportedOpError.
Var forward_op(std::string_view kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

/// Names accepted by forward_op.
std::span<const std::string_view> supported_ops();

} // namespace disc
