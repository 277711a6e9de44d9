// disc: command-line front end.
//
//   disc <subcommand> [--config FILE] [--seed N] [--out DIR] [--set key=value ...] [options]
//
// Exit codes: 0 success, 1 contract error (or failed gradient check), 2 config/usage error.

#include "disc/errors.hpp"
#include "disc/gradcheck.hpp"
#include "disc/hash.hpp"
#include "disc/pipeline.hpp"
#include "disc/weights_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace disc;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out = ".";
    std::vector<std::string> sets;
    bool svg = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "run seed");
    app->add_option("--out", c.out, "output directory");
    app->add_option("--set", c.sets, "override one key (key=value), repeatable");
}

RunConfig load_config(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

fs::path out_dir(const Common& c) {
    fs::create_directories(c.out);
    return c.out;
}

std::unique_ptr<Model> load_any(const std::string& path) {
    if (path.empty()) throw ConfigError("--model is required");
    return load_model(path);
}

const GeneratorModel& as_generator(const Model& m) {
    const auto* g = dynamic_cast<const GeneratorModel*>(&m);
    if (!g) throw ContractError("model kind '" + m.kind() + "' does not generate policy parameters");
    return *g;
}

void write_report(const fs::path& dir, const std::string& stem, const EvalReport& r, const RunConfig& cfg,
                  std::uint64_t seed) {
    write_text(dir / (stem + ".csv"), report_csv(r, cfg.provenance(seed)));
    nlohmann::json j = report_json(r);
    j["config_hash"] = hex64(cfg.hash());
    j["seed"] = seed;
    write_text(dir / (stem + ".json"), j.dump(2) + "\n");
}

std::vector<Series> adapt_series(std::span<const AdaptResult> rs) {
    std::vector<Series> out;
    for (const auto& r : rs) {
        Series s{r.init, {}, {}};
        for (const auto& p : r.points) {
            s.x.push_back(p.step);
            s.y.push_back(p.val_loss);
        }
        out.push_back(std::move(s));
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"DISC: instruction-conditioned policy generation on a pick-and-place desk benchmark"};
    app.require_subcommand(1);

    Common c;
    std::string data_path, model_path, baseline_path, lora_base;
    auto with_svg = [&](CLI::App* s) { s->add_flag("--svg", c.svg, "also write SVG plots"); };

    auto* gen = app.add_subcommand("gen-data", "generate expert demonstrations (dataset.jsonl)");
    auto* trn = app.add_subcommand("train", "train a model (model.bin, loss_curve.csv, checkpoints, eval report)");
    trn->add_option("--data", data_path, "dataset.jsonl from gen-data; generated from the seed when omitted");
    with_svg(trn);
    auto* evl = app.add_subcommand("eval", "rollout success and first-placement confusion");
    auto* adp = app.add_subcommand("adapt", "few-shot adaptation of generated parameters on adapt.task");
    adp->add_option("--lora-base", lora_base, "concat-mlp model.bin for the low-rank baseline");
    with_svg(adp);
    auto* lek = app.add_subcommand("leakage", "decorrelated evaluation of a model (confusion matrix)");
    auto* par = app.add_subcommand("paraphrase", "train vs held-out surface-form success");
    auto* man = app.add_subcommand("manifold", "cosine matrix and PCA of generated parameters");
    with_svg(man);
    auto* ben = app.add_subcommand("bench", "weight-generation vs target-step timing");
    ben->add_option("--baseline", baseline_path, "baseline model.bin to time as well");
    auto* grd = app.add_subcommand("gradcheck", "finite-difference check of every op and the DISC pipeline");
    auto* doc = app.add_subcommand("config-doc", "print the configuration key reference (markdown)");

    for (auto* s : {gen, trn, evl, adp, lek, par, man, ben, grd, doc}) add_common(s, c);
    for (auto* s : {evl, adp, lek, par, man, ben}) s->add_option("--model", model_path, "model.bin")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const RunConfig cfg = load_config(c);
    const std::uint64_t seed = c.seed;
    const std::string prov = cfg.provenance(seed);

    if (*doc) {
        std::cout << config_reference();
        return 0;
    }

    if (*grd) {
        const fs::path dir = out_dir(c);
        const auto ops = op_gradcheck_suite(20, seed);
        const double pipe = pipeline_gradcheck(seed);
        bool ok = pipe < 1e-4;
        std::string csv = prov + "check,max_rel_error,threshold,pass\n";
        char buf[160];
        for (const auto& o : ops) {
            const bool pass = o.max_rel_error < 1e-6;
            ok = ok && pass;
            std::snprintf(buf, sizeof buf, "%s,%.6g,1e-06,%d\n", o.op.c_str(), o.max_rel_error, pass);
            csv += buf;
        }
        std::snprintf(buf, sizeof buf, "disc_pipeline,%.6g,1e-04,%d\n", pipe, pipe < 1e-4);
        csv += buf;
        write_text(dir / "gradcheck.csv", csv);
        std::cout << csv.substr(prov.size());
        return ok ? 0 : 1;
    }

    Workspace ws(cfg);

    if (*gen) {
        const fs::path dir = out_dir(c);
        const Dataset d = make_dataset(ws, seed);
        save_dataset(dir / "dataset.jsonl", d);
        std::printf("dataset %s tasks %zu transitions %zu regenerated %d\n", hex64(d.content_hash()).c_str(),
                    d.tasks.size(), d.transitions.size(), d.regenerated);
        return 0;
    }

    if (*trn) {
        const fs::path dir = out_dir(c);
        const Dataset d = data_path.empty() ? make_dataset(ws, seed) : load_dataset(data_path);
        TrainedModel tm = train_model(ws, d, seed, dir);
        const EvalReport r = evaluate(ws, *tm.model, seed);
        write_report(dir, "eval", r, cfg, seed);
        if (c.svg) {
            const auto csv = read_text(dir / "loss_curve.csv");
            Series s{"bc loss", {}, {}};
            std::istringstream in(csv);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty() || line[0] == '#' || line.starts_with("step")) continue;
                int step;
                double lr, loss;
                if (std::sscanf(line.c_str(), "%d,%lf,%lf", &step, &lr, &loss) == 3) {
                    s.x.push_back(step);
                    s.y.push_back(loss);
                }
            }
            write_text(dir / "loss_curve.svg", line_svg(std::span(&s, 1), "training loss", "step", "loss"));
        }
        std::printf("%s trainable %zu loss %.4f -> %.4f (%.1f s) success %.3f\n", tm.summary.kind.c_str(),
                    tm.summary.trainable, tm.summary.initial_loss, tm.summary.final_loss, tm.summary.seconds,
                    r.overall);
        return 0;
    }

    auto model = load_any(model_path);

    if (*evl) {
        const EvalReport r = evaluate(ws, *model, seed);
        write_report(out_dir(c), "eval", r, cfg, seed);
        std::printf("success %.3f off_diagonal %.3f generations %zu\n", r.overall, r.off_diagonal_mass(),
                    r.generations);
        return 0;
    }
    if (*lek) {
        const EvalReport r = evaluate_leakage(ws, *model, seed);
        write_report(out_dir(c), "leakage", r, cfg, seed);
        std::printf("success %.3f off_diagonal %.3f\n", r.overall, r.off_diagonal_mass());
        return 0;
    }
    if (*par) {
        const fs::path dir = out_dir(c);
        const ParaphraseResult p = evaluate_paraphrase(ws, *model, seed);
        write_report(dir, "paraphrase_train", p.train, cfg, seed);
        write_report(dir, "paraphrase_heldout", p.heldout, cfg, seed);
        char buf[128];
        std::snprintf(buf, sizeof buf, "train_success,heldout_success,gap\n%.17g,%.17g,%.17g\n", p.train.overall,
                      p.heldout.overall, p.gap());
        write_text(dir / "paraphrase.csv", prov + buf);
        std::printf("train %.3f heldout %.3f gap %.3f\n", p.train.overall, p.heldout.overall, p.gap());
        return 0;
    }
    if (*adp) {
        const fs::path dir = out_dir(c);
        const AdaptComparison a = adapt_generator(ws, as_generator(*model), seed);
        std::vector<AdaptResult> rs{a.hypernet, a.random};
        if (!lora_base.empty()) {
            auto base = load_model(lora_base);
            const auto* concat = dynamic_cast<const ConcatMlp*>(base.get());
            if (!concat) throw ContractError("--lora-base must be a concat-mlp model");
            rs.push_back(adapt_lowrank(ws, *concat, seed));
        }
        write_text(dir / "adapt.csv", adapt_csv(rs, prov));
        if (c.svg) {
            const auto series = adapt_series(rs);
            write_text(dir / "adapt.svg", line_svg(series, "few-shot adaptation", "step", "validation loss"));
        }
        for (const auto& r : rs)
            for (const auto& p : r.points)
                std::printf("%-8s step %4d train %.4f val %.4f success %.3f\n", r.init.c_str(), p.step, p.train_loss,
                            p.val_loss, p.success);
        return 0;
    }
    if (*man) {
        const fs::path dir = out_dir(c);
        const auto tasks = ws.all();
        const Manifold m = manifold_export(as_generator(*model), ws.embeddings(), tasks, ws.lexicon().split().train.front());
        write_text(dir / "manifold.csv", manifold_csv(m, prov));
        if (c.svg) write_text(dir / "manifold.svg", manifold_svg(m));
        std::printf("same_object %.4f unrelated %.4f\n", m.same_object_mean, m.unrelated_mean);
        return 0;
    }
    if (*ben) {
        std::unique_ptr<Model> baseline;
        if (!baseline_path.empty()) baseline = load_model(baseline_path);
        const TimingReport t = timing_bench(as_generator(*model), ws.embeddings(), cfg.adapt_task(), baseline.get(),
                                            static_cast<int>(cfg.get_int("bench.trials")),
                                            static_cast<int>(cfg.get_int("bench.warmup")));
        write_text(out_dir(c) / "timing.csv", timing_csv(t, prov));
        std::printf("weight_gen %.4f ms target_step %.5f ms ratio %.1f\n", t.weight_gen.median_ms,
                    t.target_step.median_ms, t.ratio());
        return 0;
    }
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
