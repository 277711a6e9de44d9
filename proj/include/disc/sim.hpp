#pragma once

// 2-D pick-and-place benchmark: one agent, n objects, n containers and inert
// distractors in the unit square. Task (k, j) means "put object k into
// container j".
//
// Observation layout (canonical, never task dependent):
//   agent xy | carry flag | objects xy ... | containers xy ... | distractors xy ...
// The agent slot is always absolute; entity slots follow EnvConfig::obs_frame.
// Action: (dx, dy, g). g > 0 grasps the nearest object within eps_grasp,
// g < 0 releases the carried object, anything else is a no-op.

#include "disc/lang.hpp"
#include "disc/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace disc {

enum class LayoutMode { decorrelated, correlated };

/// absolute: entity positions in arena coordinates.
/// egocentric: entity positions relative to the agent, divided by 4 * a_max.
enum class ObsFrame { absolute, egocentric };

struct EnvConfig {
    int n_objects = 3;
    int n_containers = 3;
    int n_distractors = 2;
    double eps_grasp = 0.03;
    double delta_place = 0.05;
    double a_max = 0.05;
    int horizon = 200;
    LayoutMode layout = LayoutMode::decorrelated;
    double sigma_layout = 0.05;
    ObsFrame obs_frame = ObsFrame::egocentric;

    int obs_dim() const { return 3 + 2 * (n_objects + n_containers + n_distractors); }
    static constexpr int act_dim() { return 3; }
};

void validate(const EnvConfig& cfg);
nlohmann::json to_json(const EnvConfig& cfg);
EnvConfig env_config_from_json(const nlohmann::json& j);
std::uint64_t config_hash(const EnvConfig& cfg);

using Point = Eigen::Vector2d;

struct Placement {
    int object = -1;
    int container = -1;
    friend bool operator==(const Placement&, const Placement&) = default;
};

struct SceneState {
    Point agent = Point::Zero();
    int carrying = -1;
    std::vector<Point> objects;
    std::vector<Point> containers;
    std::vector<Point> distractors;
    int step = 0;
    /// Set by the step whose release put an object within delta of a container.
    std::optional<Placement> placed;
};

/// Task-specific anchor used by the correlated layout.
Point layout_anchor(const EnvConfig& cfg, const Task& task);

SceneState env_reset(const EnvConfig& cfg, const Task& task, std::uint64_t seed);
SceneState env_step(const EnvConfig& cfg, const SceneState& s, const Eigen::Ref<const Vector>& action);
Vector observe(const EnvConfig& cfg, const SceneState& s);

Vector expert_action(const EnvConfig& cfg, const SceneState& s, const Task& task);

/// Object `task.object` rests (not carried) within delta of container `task.container`.
bool success(const EnvConfig& cfg, const SceneState& s, const Task& task);
std::optional<Placement> first_placement(std::span<const SceneState> episode);

/// Policy-space actions are (dx / a_max, dy / a_max, g); datasets store env units.
Vector normalize_action(const EnvConfig& cfg, const Eigen::Ref<const Vector>& a);
Vector denormalize_action(const EnvConfig& cfg, const Eigen::Ref<const Vector>& a);

struct Transition {
    Task task;
    int surface = 0;
    Vector obs;
    Vector act;
    int episode = 0;
    int t = 0;
};

struct Dataset {
    EnvConfig env;
    std::uint64_t seed = 0;
    int n_demos = 0;
    std::vector<Task> tasks;
    std::vector<Transition> transitions;   // ordered by (task, episode, t)
    int regenerated = 0;                   // expert failures that were redrawn

    std::uint64_t content_hash() const;
};

/// Scripted-expert demonstrations, n_demos successful episodes per task.
/// Every transition carries a training-split surface id drawn uniformly.
Dataset generate_dataset(const EnvConfig& cfg, std::span<const Task> tasks, int n_demos, const Lexicon& lex,
                         std::uint64_t seed);

/// JSON Lines: header line, then one transition per line.
void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);
std::string dataset_to_jsonl(const Dataset& d);
Dataset dataset_from_jsonl(const std::string& text);

std::vector<Task> all_tasks(const EnvConfig& cfg);

} // namespace disc
