#include "disc/analysis.hpp"

#include "disc/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace disc {

Matrix cosine_matrix(const Matrix& rows) {
    const Index n = rows.rows();
    Vector norms = rows.rowwise().norm();
    for (Index i = 0; i < n; ++i)
        if (!(norms(i) > 0.0)) throw ContractError("cosine_matrix: zero vector in row " + std::to_string(i));
    Matrix c(n, n);
    for (Index i = 0; i < n; ++i) {
        c(i, i) = 1.0;
        for (Index j = i + 1; j < n; ++j) c(i, j) = c(j, i) = rows.row(i).dot(rows.row(j)) / (norms(i) * norms(j));
    }
    return c;
}

Matrix pca_project(const Matrix& rows, int k) {
    const Index n = rows.rows();
    if (k <= 0 || k > n) throw ContractError("pca_project: invalid component count");
    Matrix x = rows.rowwise() - rows.colwise().mean();
    // Gram-matrix eigendecomposition: n is small, the dimension is not.
    Matrix gram = x * x.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    Matrix out(n, k);
    for (int c = 0; c < k; ++c) {
        const Index col = n - 1 - c;
        const double lam = std::max(0.0, es.eigenvalues()(col));
        Vector u = es.eigenvectors().col(col);
        Index arg = 0;
        u.cwiseAbs().maxCoeff(&arg);
        if (u(arg) < 0) u = -u;
        out.col(c) = u * std::sqrt(lam);
    }
    return out;
}

Manifold manifold_export(const GeneratorModel& model, const EmbeddingTable& emb, std::span<const Task> tasks,
                         int surface) {
    if (tasks.size() < 2) throw ContractError("manifold_export needs at least two tasks");
    Manifold m;
    m.tasks.assign(tasks.begin(), tasks.end());
    Matrix flat(static_cast<Index>(tasks.size()), param_count(model.arch()));
    for (std::size_t i = 0; i < tasks.size(); ++i)
        flat.row(static_cast<Index>(i)) = model.generate_policy(emb.get(tasks[i], surface)).flat.transpose();
    m.cosine = cosine_matrix(flat);
    m.coords = pca_project(flat, std::min<int>(2, static_cast<int>(tasks.size())));
    double same = 0, unrel = 0;
    int ns = 0, nu = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i)
        for (std::size_t j = i + 1; j < tasks.size(); ++j) {
            const double c = m.cosine(static_cast<Index>(i), static_cast<Index>(j));
            if (tasks[i].object == tasks[j].object && tasks[i].container != tasks[j].container) {
                same += c;
                ++ns;
            } else if (tasks[i].object != tasks[j].object && tasks[i].container != tasks[j].container) {
                unrel += c;
                ++nu;
            }
        }
    m.same_object_mean = ns ? same / ns : 0.0;
    m.unrelated_mean = nu ? unrel / nu : 0.0;
    return m;
}

std::string manifold_csv(const Manifold& m, const std::string& provenance) {
    std::string out = provenance;
    out += "object,container,pc1,pc2";
    for (const Task& t : m.tasks) out += ",cos_" + std::to_string(t.object) + "_" + std::to_string(t.container);
    out += "\n";
    char buf[64];
    for (std::size_t i = 0; i < m.tasks.size(); ++i) {
        const Index r = static_cast<Index>(i);
        out += std::to_string(m.tasks[i].object) + "," + std::to_string(m.tasks[i].container);
        for (Index c = 0; c < 2; ++c) {
            std::snprintf(buf, sizeof buf, ",%.17g", c < m.coords.cols() ? m.coords(r, c) : 0.0);
            out += buf;
        }
        for (Index j = 0; j < m.cosine.cols(); ++j) {
            std::snprintf(buf, sizeof buf, ",%.17g", m.cosine(r, j));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

TimingStat time_calls(const std::function<void()>& fn, int n_trials, int warmup, double min_sample_us) {
    if (n_trials <= 0) throw ContractError("time_calls: n_trials must be positive");
    for (int i = 0; i < warmup; ++i) fn();
    // Grow the batch until one sample spans enough clock ticks.
    int batch = 1;
    for (;;) {
        auto t0 = Clock::now();
        for (int i = 0; i < batch; ++i) fn();
        const double us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
        if (us >= min_sample_us || batch >= (1 << 20)) break;
        batch *= 2;
    }
    std::vector<double> ms;
    ms.reserve(static_cast<std::size_t>(n_trials));
    for (int t = 0; t < n_trials; ++t) {
        auto t0 = Clock::now();
        for (int i = 0; i < batch; ++i) fn();
        ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / batch);
    }
    return {quantile(ms, 0.5), quantile(ms, 0.95), batch};
}

TimingReport timing_bench(const GeneratorModel& model, const EmbeddingTable& emb, const Task& task,
                          const Model* baseline, int n_trials, int warmup) {
    const TaskEmbedding& e = emb.get(task, emb.lexicon().split().train.front());
    TimingReport r;
    volatile double sink = 0.0;
    r.weight_gen = time_calls([&] { sink = sink + model.generate_policy(e).flat(0); }, n_trials, warmup);

    Rng rng(7);
    std::normal_distribution<double> nd(0.5, 0.2);
    Vector obs(model.arch().obs_dim());
    for (Index i = 0; i < obs.size(); ++i) obs(i) = nd(rng);
    auto ctl = model.controller(e);
    r.target_step = time_calls([&] { sink = sink + ctl->act(obs)(0); }, n_trials, warmup);
    if (baseline) {
        auto bc = baseline->controller(e);
        r.baseline_step = time_calls([&] { sink = sink + bc->act(obs)(0); }, n_trials, warmup);
        r.has_baseline = true;
    }
    return r;
}

std::string timing_csv(const TimingReport& r, const std::string& provenance) {
    std::string out = provenance + "measure,median_ms,p95_ms,batch\n";
    char buf[128];
    auto row = [&](const char* name, const TimingStat& s) {
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%d\n", name, s.median_ms, s.p95_ms, s.batch);
        out += buf;
    };
    row("weight_gen", r.weight_gen);
    row("target_step", r.target_step);
    if (r.has_baseline) row("baseline_step", r.baseline_step);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kW = 480, kH = 360, kPad = 48;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Frame {
    double x0, x1, y0, y1;
    double px(double x) const { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); }
    double py(double y) const { return kH - kPad - (y - y0) / (y1 - y0) * (kH - 2 * kPad); }
};

Frame fit_frame(std::span<const double> xs, std::span<const double> ys) {
    Frame f{0, 1, 0, 1};
    if (!xs.empty()) {
        f.x0 = *std::min_element(xs.begin(), xs.end());
        f.x1 = *std::max_element(xs.begin(), xs.end());
        f.y0 = *std::min_element(ys.begin(), ys.end());
        f.y1 = *std::max_element(ys.begin(), ys.end());
    }
    auto widen = [](double& a, double& b) {
        const double m = std::max(1e-12, 0.05 * (b - a));
        a -= m;
        b += m;
    };
    widen(f.x0, f.x1);
    widen(f.y0, f.y1);
    return f;
}

std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

std::string header(const Frame& f, const std::string& title, const std::string& xl, const std::string& yl) {
    char buf[512];
    std::string o;
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" font-family=\"sans-serif\" "
                  "font-size=\"11\">\n<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
                  kW, kH);
    o += buf;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"#444\"/>\n", kPad, kPad,
                  kW - 2 * kPad, kH - 2 * kPad);
    o += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">", kW / 2);
    o += buf + escape(title) + "</text>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">", kW / 2, kH - 10);
    o += buf + escape(xl) + "</text>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"14\" y=\"%g\" text-anchor=\"middle\" transform=\"rotate(-90 14 %g)\">",
                  kH / 2, kH / 2);
    o += buf + escape(yl) + "</text>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\">%.3g</text><text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text>\n"
                  "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text><text x=\"%g\" y=\"%g\" "
                  "text-anchor=\"end\">%.3g</text>\n",
                  kPad, kH - kPad + 14, f.x0, kW - kPad, kH - kPad + 14, f.x1, kPad - 4, kH - kPad, f.y0, kPad - 4,
                  kPad + 8, f.y1);
    o += buf;
    return o;
}

} // namespace

std::string line_svg(std::span<const Series> series, const std::string& title, const std::string& x_label,
                     const std::string& y_label) {
    std::vector<double> xs, ys;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ContractError("line_svg: series '" + s.name + "' has mismatched x/y");
        xs.insert(xs.end(), s.x.begin(), s.x.end());
        ys.insert(ys.end(), s.y.begin(), s.y.end());
    }
    const Frame f = fit_frame(xs, ys);
    std::string o = header(f, title, x_label, y_label);
    char buf[256];
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* colour = kPalette[i % std::size(kPalette)];
        o += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < series[i].x.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", f.px(series[i].x[k]), f.py(series[i].y[k]));
            o += buf;
        }
        o += "\"/>\n";
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">", kW - kPad - 100,
                      kPad + 14 + 14 * static_cast<double>(i), colour);
        o += buf + escape(series[i].name) + "</text>\n";
    }
    return o + "</svg>\n";
}

std::string manifold_svg(const Manifold& m) {
    std::vector<double> xs, ys;
    for (Index r = 0; r < m.coords.rows(); ++r) {
        xs.push_back(m.coords(r, 0));
        ys.push_back(m.coords.cols() > 1 ? m.coords(r, 1) : 0.0);
    }
    const Frame f = fit_frame(xs, ys);
    std::string o = header(f, "generated policy parameters", "PC 1", "PC 2");
    char buf[256];
    for (std::size_t i = 0; i < m.tasks.size(); ++i) {
        const char* colour = kPalette[static_cast<std::size_t>(m.tasks[i].object) % std::size(kPalette)];
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"5\" fill=\"%s\"/><text x=\"%.2f\" y=\"%.2f\">%d/%d</text>\n",
                      f.px(xs[i]), f.py(ys[i]), colour, f.px(xs[i]) + 7, f.py(ys[i]) + 4, m.tasks[i].object,
                      m.tasks[i].container);
        o += buf;
    }
    return o + "</svg>\n";
}

} // namespace disc
