#include "disc/lang.hpp"

#include "disc/errors.hpp"
#include "disc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace disc {

namespace {

const char* role_name(Role r) {
    switch (r) {
    case Role::verb: return "verb";
    case Role::object: return "object";
    case Role::container: return "container";
    case Role::filler: return "filler";
    }
    return "?";
}

} // namespace

Lexicon Lexicon::build(const LexiconConfig& cfg) {
    if (cfg.surfaces < 60)
        throw ConfigError("lexicon needs at least 60 surface forms per concept, got " + std::to_string(cfg.surfaces));
    if (cfg.heldout <= 0 || cfg.heldout >= cfg.surfaces)
        throw ConfigError("held-out surface count must lie in (0, surfaces)");
    if (cfg.n_objects <= 0 || cfg.n_containers <= 0 || cfg.d_lang <= 0)
        throw ConfigError("lexicon sizes must be positive");
    if (cfg.sigma_syn < 0.0) throw ConfigError("sigma_syn must be non-negative");

    Lexicon lex;
    lex.cfg_ = cfg;
    lex.concepts_.push_back({0, Role::verb, "verb"});
    lex.concepts_.push_back({1, Role::filler, "filler"});
    for (int k = 0; k < cfg.n_objects; ++k)
        lex.concepts_.push_back({lex.object_concept(k), Role::object, "object" + std::to_string(k)});
    for (int j = 0; j < cfg.n_containers; ++j)
        lex.concepts_.push_back({lex.container_concept(j), Role::container, "container" + std::to_string(j)});

    Rng rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_lang));
    for (std::size_t c = 0; c < lex.concepts_.size(); ++c) {
        Matrix b(1, cfg.d_lang);
        for (Index i = 0; i < b.size(); ++i) b(0, i) = normal(rng) * inv_sqrt_d;
        Matrix table(cfg.surfaces, cfg.d_lang);
        for (int s = 0; s < cfg.surfaces; ++s) {
            for (int i = 0; i < cfg.d_lang; ++i) table(s, i) = b(0, i) + cfg.sigma_syn * normal(rng);
            table.row(s).normalize();
        }
        lex.bases_.push_back(std::move(b));
        lex.tables_.push_back(std::move(table));
    }

    Rng split_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<int> perm(static_cast<std::size_t>(cfg.surfaces));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), split_rng);
    const auto n_train = static_cast<std::size_t>(cfg.surfaces - cfg.heldout);
    lex.split_.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    lex.split_.heldout.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(lex.split_.train.begin(), lex.split_.train.end());
    std::sort(lex.split_.heldout.begin(), lex.split_.heldout.end());
    return lex;
}

Task Lexicon::task(int index) const {
    if (index < 0 || index >= task_count()) throw LookupError("task index " + std::to_string(index) + " out of range");
    return {index / cfg_.n_containers, index % cfg_.n_containers};
}

int Lexicon::task_index(const Task& t) const {
    if (t.object < 0 || t.object >= cfg_.n_objects || t.container < 0 || t.container >= cfg_.n_containers)
        throw LookupError("task (" + std::to_string(t.object) + "," + std::to_string(t.container) + ") out of range");
    return t.object * cfg_.n_containers + t.container;
}

const Matrix& Lexicon::base(int concept_id) const {
    if (concept_id < 0 || concept_id >= static_cast<int>(bases_.size()))
        throw LookupError("unknown concept id " + std::to_string(concept_id));
    return bases_[static_cast<std::size_t>(concept_id)];
}

Eigen::Ref<const Matrix> Lexicon::surface(int concept_id, int surface) const {
    if (concept_id < 0 || concept_id >= static_cast<int>(tables_.size()))
        throw LookupError("unknown concept id " + std::to_string(concept_id));
    if (surface < 0 || surface >= cfg_.surfaces)
        throw LookupError("unknown surface id " + std::to_string(surface) + " for concept " + std::to_string(concept_id));
    return tables_[static_cast<std::size_t>(concept_id)].row(surface);
}

Split Lexicon::split_of(int surface) const {
    if (std::binary_search(split_.heldout.begin(), split_.heldout.end(), surface)) return Split::heldout;
    if (std::binary_search(split_.train.begin(), split_.train.end(), surface)) return Split::train;
    throw LookupError("unknown surface id " + std::to_string(surface));
}

Instruction Lexicon::instruction(const Task& t, int surface) const {
    Instruction in;
    in.task = t;
    in.surface = surface;
    task_index(t);
    in.split = split_of(surface);
    in.tokens = {{verb_concept(), surface},
                 {object_concept(t.object), surface},
                 {filler_concept(), surface},
                 {container_concept(t.container), surface}};
    return in;
}

std::uint64_t Lexicon::table_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const Matrix& m) {
        const auto* b = reinterpret_cast<const unsigned char*>(m.data());
        for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& b : bases_) mix(b);
    for (const auto& t : tables_) mix(t);
    return h;
}

nlohmann::json Lexicon::to_json() const {
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& c : concepts_) concepts.push_back({{"id", c.id}, {"role", role_name(c.role)}, {"name", c.name}});
    return {{"n_objects", cfg_.n_objects},
            {"n_containers", cfg_.n_containers},
            {"surfaces", cfg_.surfaces},
            {"heldout", cfg_.heldout},
            {"sigma_syn", cfg_.sigma_syn},
            {"d_lang", cfg_.d_lang},
            {"seed", cfg_.seed},
            {"concepts", concepts},
            {"train_surfaces", split_.train},
            {"heldout_surfaces", split_.heldout}};
}

LexiconConfig parse_lexicon_config(const nlohmann::json& j) {
    LexiconConfig cfg;
    cfg.n_objects = j.at("n_objects").get<int>();
    cfg.n_containers = j.at("n_containers").get<int>();
    cfg.surfaces = j.at("surfaces").get<int>();
    cfg.heldout = j.at("heldout").get<int>();
    cfg.sigma_syn = j.at("sigma_syn").get<double>();
    cfg.d_lang = j.at("d_lang").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

Lexicon Lexicon::from_json(const nlohmann::json& j) { return build(parse_lexicon_config(j)); }

Lexicon build_lexicon(const LexiconConfig& cfg) { return Lexicon::build(cfg); }

TaskEmbedding encode_instruction(const Instruction& instr, const Lexicon& lex) {
    if (instr.tokens.empty()) throw ContractError("encode_instruction: empty instruction");
    if (instr.tokens.size() > static_cast<std::size_t>(kMaxInstructionTokens))
        throw ContractError("encode_instruction: " + std::to_string(instr.tokens.size()) +
                            " tokens exceed the maximum of " + std::to_string(kMaxInstructionTokens));
    TaskEmbedding e;
    e.tokens.resize(static_cast<Index>(instr.tokens.size()), lex.d_lang());
    for (std::size_t i = 0; i < instr.tokens.size(); ++i)
        e.tokens.row(static_cast<Index>(i)) = lex.surface(instr.tokens[i].concept_id, instr.tokens[i].surface);
    e.pooled = e.tokens.colwise().mean();
    return e;
}

ParaphraseSplit paraphrase_split(const Lexicon& lex) { return lex.split(); }

double cosine(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.cwiseProduct(b).sum() / (na * nb);
}

} // namespace disc
