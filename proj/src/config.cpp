#include "disc/config.hpp"

#include "disc/errors.hpp"
#include "disc/hash.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace disc {

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"env.n_objects", KeyType::integer, "3", "objects per scene"},
        {"env.n_containers", KeyType::integer, "3", "containers per scene"},
        {"env.n_distractors", KeyType::integer, "2", "inert distractors per scene"},
        {"env.eps_grasp", KeyType::real, "0.03", "grasp radius"},
        {"env.delta_place", KeyType::real, "0.05", "placement radius"},
        {"env.a_max", KeyType::real, "0.05", "per-axis step clip"},
        {"env.horizon", KeyType::integer, "200", "episode step limit"},
        {"env.layout", KeyType::text, "decorrelated", "training layout: decorrelated or correlated"},
        {"env.sigma_layout", KeyType::real, "0.05", "anchor jitter of the correlated layout"},
        {"env.obs_frame", KeyType::text, "egocentric", "entity coordinates: egocentric (relative to agent, / 4 a_max) or absolute"},
        {"lang.surfaces", KeyType::integer, "60", "surface forms per concept"},
        {"lang.heldout", KeyType::integer, "10", "surface forms reserved for paraphrase evaluation"},
        {"lang.sigma_syn", KeyType::real, "0.1", "paraphrase noise scale"},
        {"lang.d_lang", KeyType::integer, "64", "language embedding width"},
        {"lang.seed", KeyType::integer, "0", "lexicon seed (fixed across run seeds)"},
        {"data.n_demos", KeyType::integer, "100", "expert demonstrations per task"},
        {"data.exclude_adapt_task", KeyType::boolean, "false", "leave adapt.task out of the training data"},
        {"model.kind", KeyType::text, "disc",
         "disc, disc-win-only, disc-no-win, direct-hypernet, concat-mlp, film-mlp"},
        {"model.direct_hidden", KeyType::integer, "48", "hidden width of direct-hypernet"},
        {"model.baseline_width", KeyType::integer, "0", "baseline hidden width; 0 solves against the DISC budget"},
        {"policy.hidden", KeyType::int_list, "32,32,32", "target-policy hidden widths"},
        {"hypernet.d", KeyType::integer, "128", "token width"},
        {"hypernet.heads", KeyType::integer, "4", "attention heads"},
        {"hypernet.attn_layers", KeyType::integer, "1", "attention layers per block"},
        {"hypernet.win_blocks", KeyType::integer, "4", "WIN self-attention blocks"},
        {"hypernet.refine_steps", KeyType::integer, "3", "refinement steps T"},
        {"train.steps", KeyType::integer, "20000", "optimizer steps"},
        {"train.batch_size", KeyType::integer, "128", "transitions per step"},
        {"train.lr", KeyType::real, "1e-3", "peak learning rate (cosine schedule)"},
        {"train.weight_decay", KeyType::real, "1e-4", "decoupled weight decay"},
        {"train.augment", KeyType::boolean, "true", "re-draw instruction surfaces every batch"},
        {"train.checkpoint_every", KeyType::integer, "1000", "checkpoint interval; 0 disables"},
        {"train.grad_clip", KeyType::real, "0", "global gradient-norm clip; 0 disables"},
        {"eval.episodes", KeyType::integer, "30", "episodes per task"},
        {"eval.split", KeyType::text, "train", "paraphrase split used by eval: train or heldout"},
        {"adapt.task", KeyType::int_list, "2,2", "object,container of the held-out task"},
        {"adapt.k", KeyType::integer, "3", "demonstrations of the new task"},
        {"adapt.steps", KeyType::integer, "1000", "adaptation steps"},
        {"adapt.lr", KeyType::real, "1e-3", "adaptation learning rate"},
        {"adapt.checkpoints", KeyType::int_list, "0,50,200,500,1000", "steps at which loss and success are recorded"},
        {"adapt.val_demos", KeyType::integer, "10", "validation demonstrations"},
        {"adapt.eval_episodes", KeyType::integer, "30", "episodes per adaptation checkpoint"},
        {"adapt.rank", KeyType::integer, "0", "low-rank baseline rank; 0 solves against the policy size"},
        {"bench.trials", KeyType::integer, "1000", "timed calls per measure"},
        {"bench.warmup", KeyType::integer, "100", "discarded warm-up calls"},
    };
    return keys;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return &k;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_num(const std::string& s, T& out) {
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && p == end;
}

std::vector<long long> parse_list(const std::string& key, const std::string& v) {
    std::vector<long long> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        long long x = 0;
        if (!parse_num(trim(item), x)) throw ConfigError("config key '" + key + "': bad integer list '" + v + "'");
        out.push_back(x);
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

void check_value(const ConfigKey& k, const std::string& v) {
    long long i = 0;
    double d = 0;
    switch (k.type) {
    case KeyType::integer:
        if (!parse_num(v, i)) throw ConfigError("config key '" + k.name + "': expected an integer, got '" + v + "'");
        break;
    case KeyType::real:
        if (!parse_num(v, d)) throw ConfigError("config key '" + k.name + "': expected a number, got '" + v + "'");
        break;
    case KeyType::boolean:
        if (v != "true" && v != "false")
            throw ConfigError("config key '" + k.name + "': expected true or false, got '" + v + "'");
        break;
    case KeyType::int_list:
        parse_list(k.name, v);
        break;
    case KeyType::text:
        break;
    }
}

int to_int(const std::string& key, long long v) {
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw ConfigError("config key '" + key + "' out of range");
    return static_cast<int>(v);
}

} // namespace

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.fallback;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const ConfigKey* k = find_key(key);
    if (!k) throw ConfigError("unknown config key '" + key + "'");
    check_value(*k, value);
    values_[key] = value;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const std::string& RunConfig::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
    long long v = 0;
    parse_num(raw(key), v);
    return v;
}

double RunConfig::get_real(const std::string& key) const {
    double v = 0;
    parse_num(raw(key), v);
    return v;
}

bool RunConfig::get_bool(const std::string& key) const { return raw(key) == "true"; }

std::vector<long long> RunConfig::get_ints(const std::string& key) const { return parse_list(key, raw(key)); }

std::string RunConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::uint64_t RunConfig::hash() const { return fnv1a(canonical()); }

std::string RunConfig::provenance(std::uint64_t seed) const {
    return "# config_hash=" + hex64(hash()) + " seed=" + std::to_string(seed) + "\n";
}

EnvConfig RunConfig::env() const {
    EnvConfig e;
    e.n_objects = to_int("env.n_objects", get_int("env.n_objects"));
    e.n_containers = to_int("env.n_containers", get_int("env.n_containers"));
    e.n_distractors = to_int("env.n_distractors", get_int("env.n_distractors"));
    e.eps_grasp = get_real("env.eps_grasp");
    e.delta_place = get_real("env.delta_place");
    e.a_max = get_real("env.a_max");
    e.horizon = to_int("env.horizon", get_int("env.horizon"));
    const std::string& layout = raw("env.layout");
    if (layout == "decorrelated") e.layout = LayoutMode::decorrelated;
    else if (layout == "correlated") e.layout = LayoutMode::correlated;
    else throw ConfigError("env.layout must be decorrelated or correlated, got '" + layout + "'");
    e.sigma_layout = get_real("env.sigma_layout");
    const std::string& frame = raw("env.obs_frame");
    if (frame == "egocentric") e.obs_frame = ObsFrame::egocentric;
    else if (frame == "absolute") e.obs_frame = ObsFrame::absolute;
    else throw ConfigError("env.obs_frame must be egocentric or absolute, got '" + frame + "'");
    validate(e);
    return e;
}

LexiconConfig RunConfig::lexicon() const {
    LexiconConfig l;
    const EnvConfig e = env();
    l.n_objects = e.n_objects;
    l.n_containers = e.n_containers;
    l.surfaces = to_int("lang.surfaces", get_int("lang.surfaces"));
    l.heldout = to_int("lang.heldout", get_int("lang.heldout"));
    l.sigma_syn = get_real("lang.sigma_syn");
    l.d_lang = to_int("lang.d_lang", get_int("lang.d_lang"));
    l.seed = static_cast<std::uint64_t>(get_int("lang.seed"));
    return l;
}

PolicyArch RunConfig::arch() const {
    std::vector<Index> dims{env().obs_dim()};
    for (long long h : get_ints("policy.hidden")) {
        if (h <= 0) throw ConfigError("policy.hidden widths must be positive");
        dims.push_back(static_cast<Index>(h));
    }
    dims.push_back(EnvConfig::act_dim());
    return PolicyArch(dims);
}

ModelSpec RunConfig::model_spec(std::uint64_t seed) const {
    ModelSpec s;
    s.kind = raw("model.kind");
    s.arch = arch();
    s.d_lang = lexicon().d_lang;
    s.hypernet.d = to_int("hypernet.d", get_int("hypernet.d"));
    s.hypernet.heads = to_int("hypernet.heads", get_int("hypernet.heads"));
    s.hypernet.attn_layers_per_block = to_int("hypernet.attn_layers", get_int("hypernet.attn_layers"));
    s.hypernet.win_blocks = to_int("hypernet.win_blocks", get_int("hypernet.win_blocks"));
    s.hypernet.refine_steps = to_int("hypernet.refine_steps", get_int("hypernet.refine_steps"));
    s.direct_hidden = static_cast<Index>(get_int("model.direct_hidden"));
    s.baseline_width = static_cast<Index>(get_int("model.baseline_width"));
    s.seed = mix_seed(seed, 2);
    return s;
}

TrainConfig RunConfig::train(std::uint64_t seed) const {
    TrainConfig t;
    t.steps = to_int("train.steps", get_int("train.steps"));
    t.batch_size = to_int("train.batch_size", get_int("train.batch_size"));
    t.lr = get_real("train.lr");
    t.weight_decay = get_real("train.weight_decay");
    t.augment = get_bool("train.augment");
    t.checkpoint_every = to_int("train.checkpoint_every", get_int("train.checkpoint_every"));
    t.grad_clip = get_real("train.grad_clip");
    t.seed = mix_seed(seed, 3);
    t.provenance = provenance(seed);
    return t;
}

AdaptConfig RunConfig::adapt(std::uint64_t seed) const {
    AdaptConfig a;
    a.k = to_int("adapt.k", get_int("adapt.k"));
    a.steps = to_int("adapt.steps", get_int("adapt.steps"));
    a.lr = get_real("adapt.lr");
    a.val_demos = to_int("adapt.val_demos", get_int("adapt.val_demos"));
    a.eval_episodes = to_int("adapt.eval_episodes", get_int("adapt.eval_episodes"));
    a.checkpoints.clear();
    for (long long s : get_ints("adapt.checkpoints")) {
        if (s < 0 || s > a.steps) throw ConfigError("adapt.checkpoints must lie in [0, adapt.steps]");
        a.checkpoints.push_back(static_cast<int>(s));
    }
    a.seed = mix_seed(seed, 5);
    return a;
}

Task RunConfig::adapt_task() const {
    auto v = get_ints("adapt.task");
    const EnvConfig e = env();
    if (v.size() != 2 || v[0] < 0 || v[0] >= e.n_objects || v[1] < 0 || v[1] >= e.n_containers)
        throw ConfigError("adapt.task must be object,container within the scene");
    return {static_cast<int>(v[0]), static_cast<int>(v[1])};
}

std::string config_reference() {
    static const char* names[] = {"integer", "number", "bool", "text", "integer list"};
    std::string out = "| key | type | default | meaning |\n|---|---|---|---|\n";
    for (const auto& k : config_keys())
        out += "| `" + k.name + "` | " + names[static_cast<int>(k.type)] + " | `" + k.fallback + "` | " + k.doc + " |\n";
    return out;
}

} // namespace disc
