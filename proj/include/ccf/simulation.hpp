#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccf/scene.hpp"

namespace ccf {

struct AgentSpec {
    int id = 0;
    double height_m = 1.7;
    double speed_mps = 1.2;
    std::string sprite_id;  // empty: compositor picks by agent id
    CellIndex entry_cell;
    CellIndex exit_cell;
    int spawn_frame = 0;

    friend bool operator==(const AgentSpec&, const AgentSpec&) = default;
};

struct TrajectorySample {
    int frame = 0;
    WorldPoint pos;
    double heading_rad = 0.0;
    bool active = false;

    friend bool operator==(const TrajectorySample&, const TrajectorySample&) = default;
};

/// One sample per scenario frame; inactive before spawn and after arrival.
struct Trajectory {
    int agent_id = 0;
    std::vector<TrajectorySample> samples;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Scenario {
    std::vector<AgentSpec> agents;
    double fps = 25.0;
    int duration_frames = 0;
    std::uint64_t rng_seed = 0;

    const AgentSpec* find(int agent_id) const;
    void validate() const;
};

struct SamplingOptions {
    double height_min_m = 1.4;
    double height_max_m = 2.0;
    double speed_min_mps = 0.9;
    double speed_max_mps = 1.5;
    std::vector<std::string> sprite_ids;  // drawn uniformly when non-empty
};

/// Agents get ids 1..n. Each agent draws from its own stream seeded by
/// (rng_seed, id), so the list is independent of generation order.
std::vector<AgentSpec> sample_agents(const SceneConfig& cfg, int n_agents, int duration_frames,
                                     std::uint64_t rng_seed, const SamplingOptions& opts = {});

Scenario make_scenario(const SceneConfig& cfg, int n_agents, int duration_frames, double fps,
                       std::uint64_t rng_seed, const SamplingOptions& opts = {});

constexpr double kDiagonalCost = 1.4142135623730951;

/// Minimal-cost 8-connected path (inclusive of both ends). Diagonal moves
/// need both orthogonal neighbours walkable. Among equal-cost paths the one
/// taking the lexicographically smallest (col, row) successor at each step
/// wins. Throws Unreachable.
std::vector<CellIndex> plan_path(const GridMap& map, CellIndex entry, CellIndex exit);

/// Cost of a cell path under the planner's metric.
double path_cost(const std::vector<CellIndex>& path);

/// Every cell the segment between two cell centres touches, corners included.
std::vector<CellIndex> supercover(CellIndex a, CellIndex b);

/// Greedy line-of-sight shortcutting over cell centres.
std::vector<WorldPoint> smooth_path(const GridMap& map, const std::vector<CellIndex>& cells);

double polyline_length(const std::vector<WorldPoint>& line);

/// Moves each agent along its polyline by speed/fps per frame from its spawn
/// frame. `paths` is parallel to scenario.agents.
std::vector<Trajectory> step_simulation(const Scenario& scenario,
                                        const std::vector<std::vector<WorldPoint>>& paths);

/// Anything producing trajectories for a scenario on a scene.
class Simulator {
public:
    virtual ~Simulator() = default;
    virtual std::vector<Trajectory> run(const SceneConfig& cfg, const Scenario& scenario) const = 0;
};

/// plan_path -> smooth_path -> step_simulation per agent.
class DefaultSimulator final : public Simulator {
public:
    std::vector<Trajectory> run(const SceneConfig& cfg, const Scenario& scenario) const override;
};

/// Planned polylines for every agent, parallel to scenario.agents.
std::vector<std::vector<WorldPoint>> plan_polylines(const SceneConfig& cfg, const Scenario& scenario);

std::string serialize_scenario(const Scenario& s);
Scenario parse_scenario(std::string_view text);

/// CSV: frame,agent_id,world_x,world_y,heading_rad,active, rows ordered by
/// (frame, agent_id).
std::string serialize_trajectories(const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> parse_trajectories(std::string_view text);

}  // namespace ccf
