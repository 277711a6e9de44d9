#include "disc/gradcheck.hpp"

#include "disc/errors.hpp"
#include "disc/hash.hpp"
#include "disc/nn.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>

namespace disc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double eval(const TensorFn& f, const std::vector<Matrix>& inputs) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& m : inputs) vars.push_back(g.constant(m));
    Var out = f(g, vars);
    if (out.rows() != 1 || out.cols() != 1) throw ContractError("grad_check: function must be scalar-valued");
    return out.value()(0, 0);
}

double rel_error(double analytic, double numeric) {
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) return kInf;
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

} // namespace

GradCheckResult grad_check_detail(const TensorFn& f, const std::vector<Matrix>& inputs, double h) {
    if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
    std::vector<Matrix> analytic;
    {
        Graph g;
        std::vector<Var> vars;
        for (const auto& m : inputs) vars.push_back(g.variable(m));
        Var out = f(g, vars);
        if (out.rows() != 1 || out.cols() != 1) throw ContractError("grad_check: function must be scalar-valued");
        g.backward(out);
        for (const Var& v : vars) {
            const Matrix& gr = v.grad();
            analytic.push_back(gr.size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : gr);
        }
    }

    GradCheckResult res;
    std::vector<Matrix> probe = inputs;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        for (Index c = 0; c < probe[i].size(); ++c) {
            double& x = probe[i].data()[c];
            const double x0 = x;
            x = x0 + h;
            double fp = eval(f, probe);
            x = x0 - h;
            double fm = eval(f, probe);
            x = x0;
            double err = rel_error(analytic[i].data()[c], (fp - fm) / (2.0 * h));
            if (err > res.max_rel_error || std::isnan(err)) {
                res = {std::isnan(err) ? kInf : err, i, c};
            }
        }
    }
    return res;
}

double grad_check_params(const std::function<Var(Graph&)>& loss, std::span<Parameter* const> params,
                         const std::vector<std::pair<std::size_t, Index>>& coords, double h) {
    if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
    for (Parameter* p : params) p->zero_grad();
    {
        Graph g;
        Var l = loss(g);
        g.backward(l);
    }
    auto value_at = [&]() {
        Graph g;
        return loss(g).value()(0, 0);
    };
    double worst = 0.0;
    for (auto [pi, c] : coords) {
        Parameter& p = *params[pi];
        double analytic = p.grad.data()[c];
        double& x = p.value.data()[c];
        const double x0 = x;
        x = x0 + h;
        double fp = value_at();
        x = x0 - h;
        double fm = value_at();
        x = x0;
        worst = std::max(worst, rel_error(analytic, (fp - fm) / (2.0 * h)));
    }
    for (Parameter* p : params) p->zero_grad();
    return worst;
}

namespace {

Matrix normal_matrix_(Index r, Index c, Rng& rng) { return normal_matrix(r, c, 1.0, rng); }

struct OpCase {
    const char* name;
    std::function<std::vector<Matrix>(Rng&, Index, Index)> inputs;
    std::function<Var(Graph&, std::span<const Var>, Index, Index)> build;
};

std::vector<OpCase> op_cases() {
    auto one = [](Rng& r, Index a, Index b) { return std::vector<Matrix>{normal_matrix_(a, b, r)}; };
    auto two = [](Rng& r, Index a, Index b) { return std::vector<Matrix>{normal_matrix_(a, b, r), normal_matrix_(a, b, r)}; };
    return {
        {"matmul", [](Rng& r, Index a, Index b) { return std::vector<Matrix>{normal_matrix_(a, b, r), normal_matrix_(b, a + 1, r)}; },
         [](Graph&, std::span<const Var> in, Index, Index) { return matmul(in[0], in[1]); }},
        {"transpose", one, [](Graph&, std::span<const Var> in, Index, Index) { return transpose(in[0]); }},
        {"add", two, [](Graph&, std::span<const Var> in, Index, Index) { return add(in[0], in[1]); }},
        {"add_bias_row", [](Rng& r, Index a, Index b) { return std::vector<Matrix>{normal_matrix_(a, b, r), normal_matrix_(1, b, r)}; },
         [](Graph&, std::span<const Var> in, Index, Index) { return add(in[0], in[1]); }},
        {"sub", two, [](Graph&, std::span<const Var> in, Index, Index) { return sub(in[0], in[1]); }},
        {"mul", two, [](Graph&, std::span<const Var> in, Index, Index) { return mul(in[0], in[1]); }},
        {"scale", one, [](Graph&, std::span<const Var> in, Index, Index) { return scale(in[0], -1.7); }},
        {"relu",
         [](Rng& r, Index a, Index b) {
             Matrix m = normal_matrix_(a, b, r);
             // Keep entries away from the kink.
             for (Index i = 0; i < m.size(); ++i)
                 if (std::abs(m.data()[i]) < 0.05) m.data()[i] = 0.3;
             return std::vector<Matrix>{m};
         },
         [](Graph&, std::span<const Var> in, Index, Index) { return relu(in[0]); }},
        {"tanh", one, [](Graph&, std::span<const Var> in, Index, Index) { return tanh(in[0]); }},
        {"softmax", one, [](Graph&, std::span<const Var> in, Index, Index) { return softmax_rows(in[0]); }},
        {"layer_norm",
         [](Rng& r, Index a, Index b) {
             return std::vector<Matrix>{normal_matrix_(a, b + 1, r), normal_matrix_(1, b + 1, r), normal_matrix_(1, b + 1, r)};
         },
         [](Graph&, std::span<const Var> in, Index, Index) { return layer_norm(in[0], in[1], in[2]); }},
        {"concat_rows", two,
         [](Graph&, std::span<const Var> in, Index, Index) {
             const Var p[] = {in[0], in[1]};
             return concat_rows(p);
         }},
        {"concat_cols", two,
         [](Graph&, std::span<const Var> in, Index, Index) {
             const Var p[] = {in[1], in[0]};
             return concat_cols(p);
         }},
        {"slice", one,
         [](Graph&, std::span<const Var> in, Index a, Index b) { return slice(in[0], a / 2, a - a / 2, 0, b); }},
        {"reshape", one, [](Graph&, std::span<const Var> in, Index a, Index b) { return reshape(in[0], b, a); }},
        {"mean", one, [](Graph&, std::span<const Var> in, Index, Index) { return mean(in[0]); }},
        {"mse", two, [](Graph&, std::span<const Var> in, Index, Index) { return mse(in[0], in[1]); }},
        {"gather_rows", one,
         [](Graph&, std::span<const Var> in, Index a, Index) {
             return gather_rows(in[0], {0, a - 1, 0, a / 2});
         }},
        {"attention",
         [](Rng& r, Index a, Index b) {
             const Index d = 4;
             (void)b;
             return std::vector<Matrix>{normal_matrix_(2 * a, d, r), normal_matrix_(2 * (a + 1), d, r), normal_matrix_(2 * (a + 1), d, r)};
         },
         [](Graph&, std::span<const Var> in, Index, Index) { return attention(in[0], in[1], in[2], 2, 2); }},
    };
}

} // namespace

std::vector<OpCheck> op_gradcheck_suite(int shapes_per_op, std::uint64_t seed) {
    std::vector<OpCheck> out;
    for (const auto& c : op_cases()) {
        OpCheck r{c.name, 0.0, 0};
        for (int k = 0; k < shapes_per_op; ++k) {
            Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
            std::uniform_int_distribution<Index> dim(1, 5);
            const Index a = dim(rng) + 1, b = dim(rng);
            auto inputs = c.inputs(rng, a, b);
            // Random projection so every output entry matters.
            Matrix w;
            {
                Graph probe;
                std::vector<Var> vs;
                for (auto& m : inputs) vs.push_back(probe.constant(m));
                Var y = c.build(probe, vs, a, b);
                w = normal_matrix(y.rows(), y.cols(), 1.0, rng);
            }
            const double err = grad_check(
                [&](Graph& g, std::span<const Var> in) { return mean(mul(c.build(g, in, a, b), g.constant(w))); },
                inputs);
            if (!(err <= r.max_rel_error)) {
                r.max_rel_error = err;
                r.worst_case = k;
            }
        }
        out.push_back(r);
    }
    return out;
}

} // namespace disc
