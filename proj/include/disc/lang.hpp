#pragma once

// Synthetic instruction language and its frozen encoder.
//
// Every concept (one verb, one filler word, each object, each container) has
// a base vector b ~ N(0, I/d). Surface form s of that concept embeds as
// normalize(b + sigma_syn * n) with n ~ N(0, I). Paraphrases therefore land
// near each other while distinct concepts stay near-orthogonal.

#include "disc/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace disc {

inline constexpr int kMaxInstructionTokens = 32;

enum class Role { verb, object, container, filler };

struct Concept {
    int id = 0;
    Role role = Role::verb;
    std::string name;
};

struct Task {
    int object = 0;
    int container = 0;
    friend bool operator==(const Task&, const Task&) = default;
};

enum class Split { train, heldout };

struct LexiconConfig {
    int n_objects = 3;
    int n_containers = 3;
    int surfaces = 60;
    int heldout = 10;
    double sigma_syn = 0.1;
    int d_lang = 64;
    std::uint64_t seed = 0;
};

/// Per-concept partition of surface ids (the same ids for every concept).
struct ParaphraseSplit {
    std::vector<int> train;
    std::vector<int> heldout;
};

struct Token {
    int concept_id = 0;
    int surface = 0;
};

struct Instruction {
    Task task;
    int surface = 0;
    Split split = Split::train;
    std::vector<Token> tokens;
};

struct TaskEmbedding {
    Matrix tokens;     // L x d_lang, unit-norm rows
    Matrix pooled;     // 1 x d_lang, arithmetic mean of the rows
};

class Lexicon {
public:
    static Lexicon build(const LexiconConfig& cfg);

    const LexiconConfig& config() const { return cfg_; }
    const std::vector<Concept>& concepts() const { return concepts_; }
    int d_lang() const { return cfg_.d_lang; }
    int task_count() const { return cfg_.n_objects * cfg_.n_containers; }
    Task task(int index) const;
    int task_index(const Task& t) const;

    int verb_concept() const { return 0; }
    int filler_concept() const { return 1; }
    int object_concept(int k) const { return 2 + k; }
    int container_concept(int j) const { return 2 + cfg_.n_objects + j; }

    /// Base vector b_c (1 x d_lang).
    const Matrix& base(int concept_id) const;
    /// Surface embedding (1 x d_lang, unit norm). Throws LookupError for unknown ids.
    Eigen::Ref<const Matrix> surface(int concept_id, int surface) const;

    const ParaphraseSplit& split() const { return split_; }
    Split split_of(int surface) const;

    /// "<verb> <object> <filler> <container>", every slot rendered with surface id `surface`.
    Instruction instruction(const Task& t, int surface) const;

    /// FNV-1a over all base and surface tables.
    std::uint64_t table_hash() const;

    nlohmann::json to_json() const;
    static Lexicon from_json(const nlohmann::json& j);

private:
    LexiconConfig cfg_;
    std::vector<Concept> concepts_;
    std::vector<Matrix> bases_;
    std::vector<Matrix> tables_;   // one surfaces x d_lang table per concept
    ParaphraseSplit split_;
};

LexiconConfig parse_lexicon_config(const nlohmann::json& j);

Lexicon build_lexicon(const LexiconConfig& cfg);

/// Frozen encoder: pure lookup of each token's surface embedding.
TaskEmbedding encode_instruction(const Instruction& instr, const Lexicon& lex);

ParaphraseSplit paraphrase_split(const Lexicon& lex);

double cosine(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);

} // namespace disc
