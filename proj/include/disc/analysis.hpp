#pragma once

// Parameter-manifold export, generation/step timing and plot output.

#include "disc/baselines.hpp"
#include "disc/trainer.hpp"

namespace disc {

struct Manifold {
    std::vector<Task> tasks;
    Matrix cosine;   // n x n cosine similarity of flattened generated theta
    Matrix coords;   // n x 2 principal-component projection of centered theta
    double same_object_mean = 0.0;   // pairs sharing the object, different container
    double unrelated_mean = 0.0;     // pairs sharing neither object nor container
};

/// One generated policy per task from instruction surface `surface`.
Manifold manifold_export(const GeneratorModel& model, const EmbeddingTable& emb, std::span<const Task> tasks,
                         int surface);

Matrix cosine_matrix(const Matrix& rows);
/// Top-k principal-component scores of the row-centered data (sign fixed so the
/// largest-magnitude loading of each component is positive).
Matrix pca_project(const Matrix& rows, int k);

std::string manifold_csv(const Manifold& m, const std::string& provenance);

struct Series {
    std::string name;
    std::vector<double> x, y;
};

/// Standalone SVG documents; the CSV files remain the reference output.
std::string line_svg(std::span<const Series> series, const std::string& title, const std::string& x_label,
                     const std::string& y_label);
/// PCA scatter, one point per task labelled "object/container", coloured by object.
std::string manifold_svg(const Manifold& m);

struct TimingStat {
    double median_ms = 0.0;
    double p95_ms = 0.0;
    int batch = 1;   // calls per timed sample
};

struct TimingReport {
    TimingStat weight_gen;
    TimingStat target_step;
    TimingStat baseline_step;
    bool has_baseline = false;
    double ratio() const { return weight_gen.median_ms / target_step.median_ms; }
};

/// Times `fn` n_trials times after `warmup` discarded calls. Calls faster than
/// `min_sample_us` are batched and the per-call time is the batch mean.
TimingStat time_calls(const std::function<void()>& fn, int n_trials, int warmup = 100, double min_sample_us = 50.0);

TimingReport timing_bench(const GeneratorModel& model, const EmbeddingTable& emb, const Task& task,
                          const Model* baseline, int n_trials = 1000, int warmup = 100);

std::string timing_csv(const TimingReport& r, const std::string& provenance);

} // namespace disc
