#include "disc/baselines.hpp"
#include "disc/errors.hpp"
#include "disc/trainer.hpp"
#include "disc/weights_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace disc;

namespace {

struct Fixture {
    EnvConfig env;
    Lexicon lex = Lexicon::build(LexiconConfig{});
    EmbeddingTable emb{lex, env};
    Dataset data;

    explicit Fixture(int n_demos = 4, int n_tasks = 9) {
        auto tasks = all_tasks(env);
        tasks.resize(static_cast<std::size_t>(n_tasks));
        data = generate_dataset(env, tasks, n_demos, lex, 11);
    }
};

ModelSpec tiny_spec(const std::string& kind) {
    ModelSpec s;
    s.kind = kind;
    s.arch = PolicyArch({19, 8, 8, 3});
    s.hypernet.d = 8;
    s.hypernet.heads = 2;
    s.hypernet.win_blocks = 1;
    s.hypernet.refine_steps = 1;
    s.d_lang = 64;
    s.baseline_width = 16;
    s.seed = 5;
    return s;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("disc_trainer_" + name);
    std::filesystem::remove_all(p);
    return p;
}

} // namespace

TEST(Trainer, EmbeddingTableMatchesEncoder) {
    Fixture f(1, 1);
    const TaskEmbedding& e = f.emb.get({2, 1}, 7);
    TaskEmbedding ref = encode_instruction(f.lex.instruction({2, 1}, 7), f.lex);
    EXPECT_EQ(e.tokens, ref.tokens);
    EXPECT_EQ(e.pooled, ref.pooled);
    EXPECT_THROW(f.emb.get({0, 0}, 60), LookupError);
}

TEST(Trainer, BatchTaskFrequenciesChiSquare) {
    Fixture f(6);
    std::vector<double> expected(9, 0.0), seen(9, 0.0);
    for (const auto& t : f.data.transitions) expected[static_cast<std::size_t>(t.task.object * 3 + t.task.container)] += 1;
    Rng rng(3);
    const int draws = 100000;
    for (int i = 0; i < draws / 1000; ++i) {
        Batch b = sample_batch(f.data, 1000, rng, true, f.lex.split());
        for (std::size_t idx : b.index) {
            const auto& t = f.data.transitions[idx];
            seen[static_cast<std::size_t>(t.task.object * 3 + t.task.container)] += 1;
        }
    }
    double chi2 = 0.0;
    const double total = static_cast<double>(f.data.transitions.size());
    for (std::size_t i = 0; i < 9; ++i) {
        const double e = expected[i] / total * draws;
        chi2 += (seen[i] - e) * (seen[i] - e) / e;
    }
    RecordProperty("chi2", std::to_string(chi2));
    EXPECT_LT(chi2, 26.12);   // 8 degrees of freedom, alpha = 0.001
}

TEST(Trainer, BatchDeterminismAndSurfaces) {
    Fixture f;
    Rng a(9), b(9);
    Batch x = sample_batch(f.data, 128, a, true, f.lex.split());
    Batch y = sample_batch(f.data, 128, b, true, f.lex.split());
    EXPECT_EQ(x.index, y.index);
    EXPECT_EQ(x.surface, y.surface);
    EXPECT_EQ(x.index.size(), 128u);
    std::map<std::pair<int, int>, int> per_task;
    for (std::size_t i = 0; i < x.index.size(); ++i) {
        EXPECT_EQ(f.lex.split_of(x.surface[i]), Split::train);
        const auto& t = f.data.transitions[x.index[i]];
        auto [it, fresh] = per_task.emplace(std::make_pair(t.task.object, t.task.container), x.surface[i]);
        if (!fresh) EXPECT_EQ(it->second, x.surface[i]);
    }
    // Without augmentation each task keeps the tag of its first drawn transition.
    Rng c(9);
    Batch z = sample_batch(f.data, 64, c, false, f.lex.split());
    std::map<std::pair<int, int>, int> first;
    for (std::size_t i = 0; i < z.index.size(); ++i) {
        const auto& t = f.data.transitions[z.index[i]];
        first.emplace(std::make_pair(t.task.object, t.task.container), t.surface);
        EXPECT_EQ(z.surface[i], first.at({t.task.object, t.task.container}));
    }
    Dataset empty;
    EXPECT_THROW(sample_batch(empty, 4, c, false, f.lex.split()), ContractError);
}

TEST(Trainer, GroupBatchKeepsRowsAndNormalizesTargets) {
    Fixture f;
    Rng rng(1);
    Batch b = sample_batch(f.data, 50, rng, true, f.lex.split());
    GroupedBatch gb = group_batch(f.data, b, f.emb);
    Index rows = 0;
    for (const auto& o : gb.obs) rows += o.rows();
    EXPECT_EQ(rows, 50);
    EXPECT_EQ(gb.targets.rows(), 50);
    EXPECT_EQ(gb.instr.size(), gb.obs.size());
    EXPECT_LE(gb.targets.leftCols(2).cwiseAbs().maxCoeff(), 1.0 + 1e-12);
}

TEST(Trainer, HandComputedTwoSampleLoss) {
    Fixture f(1, 1);
    Dataset d;
    d.env = f.env;
    Vector o1 = Vector::Constant(19, 0.1), o2 = Vector::Constant(19, -0.3);
    Vector a1(3), a2(3);
    a1 << 0.05, -0.025, 1.0;    // normalized: (1, -0.5, 1)
    a2 << 0.0, 0.01, -1.0;      // normalized: (0, 0.2, -1)
    d.transitions = {{{0, 0}, 3, o1, a1, 0, 0}, {{0, 1}, 4, o2, a2, 0, 0}};
    Batch b{{0, 1}, {3, 4}};
    GroupedBatch gb = group_batch(d, b, f.emb);

    auto m = make_model(tiny_spec("concat-mlp"));
    for (Parameter* p : m->params().all()) p->value.setZero();
    Parameter* last_bias = m->params().all().back();
    ASSERT_EQ(last_bias->value.cols(), 3);
    last_bias->value << 0.5, 0.0, 0.25;
    Graph g;
    const double loss = bc_loss(g, *m, gb).value()(0, 0);
    const double e1 = 0.25 + 0.25 + 0.5625;   // (0.5-1)^2 + (0+0.5)^2 + (0.25-1)^2
    const double e2 = 0.25 + 0.04 + 1.5625;   // (0.5-0)^2 + (0-0.2)^2 + (0.25+1)^2
    EXPECT_NEAR(loss, (e1 + e2) / 2, 1e-12);

    // Constant-zero policy: loss equals the mean squared norm of the targets.
    last_bias->value.setZero();
    Graph g2;
    EXPECT_NEAR(bc_loss(g2, *m, gb).value()(0, 0), gb.targets.rowwise().squaredNorm().mean(), 1e-12);
}

TEST(Trainer, PerfectPredictionsGiveZeroLoss) {
    Fixture f(1, 1);
    Rng rng(2);
    GroupedBatch gb = group_batch(f.data, sample_batch(f.data, 8, rng, false, f.lex.split()), f.emb);
    Graph g;
    EXPECT_EQ(mse(g.constant(gb.targets), g.constant(gb.targets)).value()(0, 0), 0.0);
}

TEST(Trainer, LearningRateFollowsCosineAndLossDrops) {
    Fixture f(10, 1);
    auto m = make_model(tiny_spec("concat-mlp"));
    TrainConfig cfg;
    cfg.steps = 400;
    cfg.batch_size = 32;
    cfg.lr = 3e-3;
    cfg.seed = 1;
    TrainResult r = train(*m, f.data, f.emb, cfg);
    ASSERT_EQ(r.curve.size(), 400u);
    for (const auto& p : r.curve) EXPECT_EQ(p.lr, cosine_lr(p.step, cfg.steps, cfg.lr));
    EXPECT_LT(r.final_loss, 0.5 * r.initial_loss);
}

TEST(Trainer, CheckpointsAndCurveFiles) {
    Fixture f(2, 2);
    auto m = make_model(tiny_spec("disc"));
    TrainConfig cfg;
    cfg.steps = 25;
    cfg.batch_size = 16;
    cfg.checkpoint_every = 10;
    cfg.seed = 4;
    cfg.out_dir = scratch("ckpt");
    cfg.provenance = "# config_hash=abc seed=4\n";
    TrainResult r = train(*m, f.data, f.emb, cfg);
    ASSERT_EQ(r.checkpoints.size(), 3u);
    EXPECT_EQ(r.checkpoints[0].filename(), "ckpt_000010.bin");
    EXPECT_EQ(r.checkpoints[2].filename(), "ckpt_000025.bin");
    auto back = load_model(r.checkpoints.back());
    EXPECT_EQ(back->kind(), "disc");
    EXPECT_EQ(back->params().hash(), m->params().hash());
    std::ifstream in(*cfg.out_dir / "loss_curve.csv");
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    EXPECT_EQ(l1, "# config_hash=abc seed=4");
    EXPECT_EQ(l2, "step,lr,loss");
    std::filesystem::remove_all(*cfg.out_dir);
}

TEST(Trainer, IdenticalSeedsGiveBitIdenticalCheckpoints) {
    Fixture f(2, 3);
    std::vector<std::vector<std::uint8_t>> bytes;
    for (int rep = 0; rep < 2; ++rep) {
        auto m = make_model(tiny_spec("disc"));
        TrainConfig cfg;
        cfg.steps = 15;
        cfg.batch_size = 16;
        cfg.checkpoint_every = 15;
        cfg.seed = 8;
        cfg.out_dir = scratch("det" + std::to_string(rep));
        TrainResult r = train(*m, f.data, f.emb, cfg);
        bytes.push_back(read_file(r.checkpoints.back()));
        std::filesystem::remove_all(*cfg.out_dir);
    }
    EXPECT_EQ(bytes[0], bytes[1]);
}

TEST(Trainer, GradientsReachBothStagesAndEncoderStaysFrozen) {
    Fixture f(2);
    auto m = make_model(tiny_spec("disc"));
    const auto lex_hash = f.lex.table_hash();
    const Matrix emb_before = f.emb.get({1, 1}, 2).tokens;
    AdamW opt(m->params().all(), AdamWOptions{1e-3});
    Rng rng(0);
    std::set<std::string> touched;
    for (int step = 0; step < 10; ++step) {
        GroupedBatch gb = group_batch(f.data, sample_batch(f.data, 32, rng, true, f.lex.split()), f.emb);
        Graph g;
        Var loss = bc_loss(g, *m, gb);
        opt.zero_grad();
        g.backward(loss);
        for (const Parameter* p : m->params().all())
            if (p->grad.cwiseAbs().maxCoeff() > 0.0) touched.insert(p->name);
        opt.step(1e-3);
    }
    int win = 0, refine = 0;
    for (const Parameter* p : m->params().all()) {
        const bool hit = touched.count(p->name) > 0;
        if (p->name.rfind("win.", 0) == 0) win += hit;
        if (p->name.rfind("refine.", 0) == 0) refine += hit;
        EXPECT_TRUE(hit) << p->name << " never received a gradient";
    }
    EXPECT_GT(win, 0);
    EXPECT_GT(refine, 0);
    EXPECT_EQ(f.lex.table_hash(), lex_hash);
    EXPECT_EQ(f.emb.get({1, 1}, 2).tokens, emb_before);
}

TEST(Trainer, DivergenceAborts) {
    Fixture f(1, 1);
    auto m = make_model(tiny_spec("concat-mlp"));
    TrainConfig cfg;
    cfg.steps = 50;
    cfg.batch_size = 8;
    cfg.diverge_factor = 0.0;   // every step counts as above the threshold
    cfg.diverge_patience = 3;
    EXPECT_THROW(train(*m, f.data, f.emb, cfg), DivergenceError);
}

TEST(Trainer, NonFiniteLossAborts) {
    Fixture f(1, 1);
    auto m = make_model(tiny_spec("concat-mlp"));
    m->params().all().front()->value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.batch_size = 8;
    EXPECT_THROW(train(*m, f.data, f.emb, cfg), NonFiniteError);
}

TEST(Trainer, ConfigErrors) {
    Fixture f(1, 1);
    auto m = make_model(tiny_spec("concat-mlp"));
    TrainConfig cfg;
    cfg.steps = 0;
    EXPECT_THROW(train(*m, f.data, f.emb, cfg), ConfigError);
    cfg.steps = 1;
    cfg.lr = 0.0;
    EXPECT_THROW(train(*m, f.data, f.emb, cfg), ConfigError);
}
