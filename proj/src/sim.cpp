#include "disc/sim.hpp"

#include "disc/errors.hpp"
#include "disc/hash.hpp"
#include "disc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace disc {

namespace {

constexpr int kMaxRejections = 10000;

Point clamp_arena(const Point& p) { return p.cwiseMax(0.0).cwiseMin(1.0); }

const char* layout_name(LayoutMode m) { return m == LayoutMode::correlated ? "correlated" : "decorrelated"; }
const char* frame_name(ObsFrame f) { return f == ObsFrame::egocentric ? "egocentric" : "absolute"; }

LayoutMode parse_layout(const std::string& s) {
    if (s == "decorrelated") return LayoutMode::decorrelated;
    if (s == "correlated") return LayoutMode::correlated;
    throw ConfigError("unknown layout mode '" + s + "'");
}

ObsFrame parse_frame(const std::string& s) {
    if (s == "absolute") return ObsFrame::absolute;
    if (s == "egocentric") return ObsFrame::egocentric;
    throw ConfigError("unknown observation frame '" + s + "'");
}

void check_task(const EnvConfig& cfg, const Task& t) {
    if (t.object < 0 || t.object >= cfg.n_objects || t.container < 0 || t.container >= cfg.n_containers)
        throw ContractError("task (" + std::to_string(t.object) + "," + std::to_string(t.container) +
                            ") outside the configured scene");
}

} // namespace

void validate(const EnvConfig& cfg) {
    if (cfg.n_objects <= 0 || cfg.n_containers <= 0 || cfg.n_distractors < 0)
        throw ConfigError("scene needs at least one object and one container");
    if (!(cfg.eps_grasp > 0.0 && cfg.eps_grasp < cfg.delta_place && cfg.delta_place < 1.0))
        throw ConfigError("need 0 < eps_grasp < delta_place < 1");
    if (!(cfg.a_max > 0.0)) throw ConfigError("a_max must be positive");
    if (cfg.horizon <= 0) throw ConfigError("horizon must be positive");
    // Worst case: two full diagonal traversals at max speed plus the two gripper steps.
    const int min_horizon = 2 * static_cast<int>(std::ceil(1.0 / cfg.a_max)) + 2;
    if (cfg.horizon < min_horizon)
        throw ConfigError("horizon " + std::to_string(cfg.horizon) + " below the longest expert path " +
                          std::to_string(min_horizon));
    if (cfg.sigma_layout < 0.0) throw ConfigError("sigma_layout must be non-negative");
}

nlohmann::json to_json(const EnvConfig& c) {
    return {{"n_objects", c.n_objects},       {"n_containers", c.n_containers}, {"n_distractors", c.n_distractors},
            {"eps_grasp", c.eps_grasp},       {"delta_place", c.delta_place},   {"a_max", c.a_max},
            {"horizon", c.horizon},           {"layout", layout_name(c.layout)}, {"sigma_layout", c.sigma_layout},
            {"obs_frame", frame_name(c.obs_frame)}};
}

EnvConfig env_config_from_json(const nlohmann::json& j) {
    EnvConfig c;
    c.n_objects = j.at("n_objects").get<int>();
    c.n_containers = j.at("n_containers").get<int>();
    c.n_distractors = j.at("n_distractors").get<int>();
    c.eps_grasp = j.at("eps_grasp").get<double>();
    c.delta_place = j.at("delta_place").get<double>();
    c.a_max = j.at("a_max").get<double>();
    c.horizon = j.at("horizon").get<int>();
    c.layout = parse_layout(j.at("layout").get<std::string>());
    c.sigma_layout = j.at("sigma_layout").get<double>();
    c.obs_frame = parse_frame(j.at("obs_frame").get<std::string>());
    return c;
}

std::uint64_t config_hash(const EnvConfig& cfg) { return fnv1a(to_json(cfg).dump()); }

std::vector<Task> all_tasks(const EnvConfig& cfg) {
    std::vector<Task> out;
    for (int k = 0; k < cfg.n_objects; ++k)
        for (int j = 0; j < cfg.n_containers; ++j) out.push_back({k, j});
    return out;
}

Point layout_anchor(const EnvConfig& cfg, const Task& task) {
    // Anchors on an evenly spaced grid inside [0.2, 0.8]^2: container index on x, object on y.
    auto coord = [](int i, int n) { return n == 1 ? 0.5 : 0.2 + 0.6 * i / (n - 1); };
    return {coord(task.container, cfg.n_containers), coord(task.object, cfg.n_objects)};
}

SceneState env_reset(const EnvConfig& cfg, const Task& task, std::uint64_t seed) {
    validate(cfg);
    check_task(cfg, task);
    Rng rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double min_sep = 2.0 * cfg.delta_place;

    SceneState s;
    s.agent = {uni(rng), uni(rng)};
    std::vector<Point> placed;
    auto far_enough = [&](const Point& p) {
        return std::all_of(placed.begin(), placed.end(), [&](const Point& q) { return (p - q).norm() >= min_sep; });
    };
    auto draw = [&](bool anchored) {
        for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
            Point p;
            if (anchored) {
                const Point a = layout_anchor(cfg, task);
                p = Point(a.x() + cfg.sigma_layout * normal(rng), a.y() + cfg.sigma_layout * normal(rng));
                if (p.x() < 0.0 || p.x() > 1.0 || p.y() < 0.0 || p.y() > 1.0) continue;
            } else {
                p = Point(uni(rng), uni(rng));
            }
            if (far_enough(p)) {
                placed.push_back(p);
                return p;
            }
        }
        throw ConfigError("scene sampling failed after " + std::to_string(kMaxRejections) +
                          " rejections; reduce delta_place or the number of entities");
    };
    const bool correlated = cfg.layout == LayoutMode::correlated;
    // Correlated: the instructed object goes first so its anchored draw is never
    // crowded out. Decorrelated: canonical order, so the scene for a given seed
    // does not depend on the task at all.
    s.objects.assign(static_cast<std::size_t>(cfg.n_objects), Point::Zero());
    if (correlated) s.objects[static_cast<std::size_t>(task.object)] = draw(true);
    for (int k = 0; k < cfg.n_objects; ++k)
        if (!correlated || k != task.object) s.objects[static_cast<std::size_t>(k)] = draw(false);
    for (int j = 0; j < cfg.n_containers; ++j) s.containers.push_back(draw(false));
    for (int d = 0; d < cfg.n_distractors; ++d) s.distractors.push_back(draw(false));
    return s;
}

SceneState env_step(const EnvConfig& cfg, const SceneState& s, const Eigen::Ref<const Vector>& action) {
    if (action.size() != EnvConfig::act_dim())
        throw DimensionError("env_step: action has " + std::to_string(action.size()) + " components, expected 3");
    SceneState n = s;
    n.placed.reset();
    const double dx = std::clamp(action(0), -cfg.a_max, cfg.a_max);
    const double dy = std::clamp(action(1), -cfg.a_max, cfg.a_max);
    const double g = std::clamp(action(2), -1.0, 1.0);
    n.agent = clamp_arena(s.agent + Point(dx, dy));
    if (n.carrying >= 0) n.objects[static_cast<std::size_t>(n.carrying)] = n.agent;

    if (g > 0.0 && n.carrying < 0) {
        int best = -1;
        double best_d = cfg.eps_grasp;
        for (int k = 0; k < cfg.n_objects; ++k) {
            double d = (n.objects[static_cast<std::size_t>(k)] - n.agent).norm();
            if (d <= best_d) {
                best = k;
                best_d = d;
            }
        }
        if (best >= 0) {
            n.carrying = best;
            n.objects[static_cast<std::size_t>(best)] = n.agent;
        }
    } else if (g < 0.0 && n.carrying >= 0) {
        const int k = n.carrying;
        n.carrying = -1;
        int best = -1;
        double best_d = 0.0;
        for (int j = 0; j < cfg.n_containers; ++j) {
            double d = (n.containers[static_cast<std::size_t>(j)] - n.agent).norm();
            if (d < cfg.delta_place && (best < 0 || d < best_d)) {
                best = j;
                best_d = d;
            }
        }
        if (best >= 0) n.placed = Placement{k, best};
    }
    ++n.step;
    return n;
}

Vector observe(const EnvConfig& cfg, const SceneState& s) {
    Vector o(cfg.obs_dim());
    Index i = 0;
    o(i++) = s.agent.x();
    o(i++) = s.agent.y();
    o(i++) = s.carrying >= 0 ? 1.0 : 0.0;
    const bool ego = cfg.obs_frame == ObsFrame::egocentric;
    const double scale = ego ? 1.0 / (4.0 * cfg.a_max) : 1.0;
    for (const auto* group : {&s.objects, &s.containers, &s.distractors})
        for (const Point& p : *group) {
            const Point q = ego ? Point((p - s.agent) * scale) : p;
            o(i++) = q.x();
            o(i++) = q.y();
        }
    return o;
}

Vector expert_action(const EnvConfig& cfg, const SceneState& s, const Task& task) {
    check_task(cfg, task);
    const bool holding = s.carrying == task.object;
    Point target = holding ? s.containers[static_cast<std::size_t>(task.container)]
                           : s.objects[static_cast<std::size_t>(task.object)];
    Vector a(3);
    if (s.carrying >= 0 && !holding) {
        // Holding the wrong object: put it down where we stand.
        a << 0.0, 0.0, -1.0;
        return a;
    }
    Point step = (target - s.agent).cwiseMax(-cfg.a_max).cwiseMin(cfg.a_max);
    Point next = clamp_arena(s.agent + step);
    double dist = (target - next).norm();
    double grip;
    if (holding) grip = dist <= 0.5 * cfg.delta_place ? -1.0 : 1.0;
    else grip = dist <= cfg.eps_grasp ? 1.0 : -1.0;
    a << step.x(), step.y(), grip;
    return a;
}

bool success(const EnvConfig& cfg, const SceneState& s, const Task& task) {
    check_task(cfg, task);
    if (s.carrying == task.object) return false;
    return (s.objects[static_cast<std::size_t>(task.object)] - s.containers[static_cast<std::size_t>(task.container)])
               .norm() < cfg.delta_place;
}

std::optional<Placement> first_placement(std::span<const SceneState> episode) {
    for (const auto& s : episode)
        if (s.placed) return s.placed;
    return std::nullopt;
}

Vector normalize_action(const EnvConfig& cfg, const Eigen::Ref<const Vector>& a) {
    Vector out = a;
    out(0) /= cfg.a_max;
    out(1) /= cfg.a_max;
    return out;
}

Vector denormalize_action(const EnvConfig& cfg, const Eigen::Ref<const Vector>& a) {
    Vector out = a;
    out(0) *= cfg.a_max;
    out(1) *= cfg.a_max;
    return out;
}

// ---------------------------------------------------------------------------

std::uint64_t Dataset::content_hash() const {
    std::uint64_t h = fnv1a(to_json(env).dump());
    h = fnv1a(&seed, sizeof seed, h);
    for (const auto& t : transitions) {
        int hdr[5] = {t.task.object, t.task.container, t.surface, t.episode, t.t};
        h = fnv1a(hdr, sizeof hdr, h);
        h = fnv1a(t.obs.data(), static_cast<std::size_t>(t.obs.size()) * sizeof(double), h);
        h = fnv1a(t.act.data(), static_cast<std::size_t>(t.act.size()) * sizeof(double), h);
    }
    return h;
}

Dataset generate_dataset(const EnvConfig& cfg, std::span<const Task> tasks, int n_demos, const Lexicon& lex,
                         std::uint64_t seed) {
    validate(cfg);
    if (n_demos <= 0) throw ConfigError("n_demos must be positive");
    if (tasks.empty()) throw ConfigError("no tasks to generate demonstrations for");
    const auto& train = lex.split().train;
    if (train.empty()) throw ConfigError("lexicon has no training surfaces");

    Dataset d;
    d.env = cfg;
    d.seed = seed;
    d.n_demos = n_demos;
    d.tasks.assign(tasks.begin(), tasks.end());
    int attempts = 0;
    for (const Task& task : tasks) {
        const auto ti = static_cast<std::uint64_t>(task.object * cfg.n_containers + task.container);
        for (int ep = 0; ep < n_demos; ++ep) {
            for (int retry = 0;; ++retry) {
                ++attempts;
                const std::uint64_t ep_seed = mix_seed(mix_seed(mix_seed(seed, ti), static_cast<std::uint64_t>(ep)),
                                                       static_cast<std::uint64_t>(retry));
                Rng surface_rng(mix_seed(ep_seed, 0x5f));
                std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
                SceneState s = env_reset(cfg, task, ep_seed);
                std::vector<Transition> episode;
                bool ok = false;
                for (int t = 0; t < cfg.horizon; ++t) {
                    Vector a = expert_action(cfg, s, task);
                    episode.push_back({task, train[pick(surface_rng)], observe(cfg, s), a, ep, t});
                    s = env_step(cfg, s, a);
                    if (s.placed) {
                        ok = *s.placed == Placement{task.object, task.container};
                        break;
                    }
                }
                if (ok) {
                    for (auto& tr : episode) d.transitions.push_back(std::move(tr));
                    break;
                }
                ++d.regenerated;
                if (retry > 100) throw ConfigError("expert keeps failing; environment misconfigured");
            }
        }
    }
    if (d.regenerated * 100 > attempts)
        throw ConfigError("expert failure rate " + std::to_string(d.regenerated) + "/" + std::to_string(attempts) +
                          " exceeds 1%; environment misconfigured");
    return d;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vec(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

} // namespace

std::string dataset_to_jsonl(const Dataset& d) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : d.tasks) tasks.push_back({t.object, t.container});
    nlohmann::json header = {{"format", "disc-dataset"},
                             {"version", 1},
                             {"config_hash", hex64(config_hash(d.env))},
                             {"seed", d.seed},
                             {"env", to_json(d.env)},
                             {"n_demos", d.n_demos},
                             {"tasks", tasks},
                             {"regenerated", d.regenerated},
                             {"transitions", d.transitions.size()}};
    std::string out = header.dump() + "\n";
    for (const auto& t : d.transitions) {
        nlohmann::json line = {{"task", {t.task.object, t.task.container}},
                               {"surface", t.surface},
                               {"obs", to_vec(t.obs)},
                               {"act", to_vec(t.act)},
                               {"episode", t.episode},
                               {"t", t.t}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
    std::size_t pos = 0;
    auto next_line = [&](std::string& line, std::size_t& start) {
        if (pos >= text.size()) return false;
        start = pos;
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        line.assign(text, pos, nl - pos);
        pos = nl + 1;
        return true;
    };
    std::string line;
    std::size_t start = 0;
    if (!next_line(line, start)) throw FormatError("dataset: missing header line", 0);
    Dataset d;
    std::size_t expected = 0;
    try {
        auto h = nlohmann::json::parse(line);
        if (h.at("format") != "disc-dataset") throw FormatError("dataset: not a disc dataset", 0);
        d.env = env_config_from_json(h.at("env"));
        d.seed = h.at("seed").get<std::uint64_t>();
        d.n_demos = h.at("n_demos").get<int>();
        d.regenerated = h.value("regenerated", 0);
        for (const auto& t : h.at("tasks")) d.tasks.push_back({t.at(0).get<int>(), t.at(1).get<int>()});
        expected = h.at("transitions").get<std::size_t>();
        if (h.at("config_hash").get<std::string>() != hex64(config_hash(d.env)))
            throw FormatError("dataset: header config hash does not match its env block", 0);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset header: ") + e.what(), 0);
    }
    while (next_line(line, start)) {
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            Transition t;
            t.task = {j.at("task").at(0).get<int>(), j.at("task").at(1).get<int>()};
            t.surface = j.at("surface").get<int>();
            t.obs = from_vec(j.at("obs").get<std::vector<double>>());
            t.act = from_vec(j.at("act").get<std::vector<double>>());
            t.episode = j.at("episode").get<int>();
            t.t = j.at("t").get<int>();
            if (t.obs.size() != d.env.obs_dim() || t.act.size() != EnvConfig::act_dim())
                throw FormatError("dataset: transition has wrong vector length", start);
            d.transitions.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("dataset transition: ") + e.what(), start);
        }
    }
    if (d.transitions.size() != expected)
        throw FormatError("dataset: header promises " + std::to_string(expected) + " transitions, found " +
                              std::to_string(d.transitions.size()),
                          text.size());
    return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << dataset_to_jsonl(d);
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return dataset_from_jsonl(ss.str());
}

} // namespace disc
