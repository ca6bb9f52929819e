#include "ccf/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "ccf/error.hpp"
#include "ccf/io.hpp"
#include "json_fields.hpp"

namespace ccf {

using detail::Fields;
using ojson = detail::ordered_json;
using detail::persisted;

namespace {

// std::uniform_real_distribution is implementation-defined; this is not.
double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

const WeightedCell& pick_weighted(std::mt19937_64& rng, const std::vector<WeightedCell>& list) {
    double total = 0.0;
    for (const auto& w : list) total += w.weight;
    const double u = uniform01(rng) * total;
    double acc = 0.0;
    for (const auto& w : list) {
        acc += w.weight;
        if (u < acc) return w;
    }
    return list.back();
}

std::mt19937_64 agent_stream(std::uint64_t seed, int id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id)};
    return std::mt19937_64(seq);
}

[[noreturn]] void invariant(const std::string& field, const std::string& what) {
    throw Error(Errc::InvariantViolation, field + ": " + what, field);
}

bool can_move(const GridMap& map, CellIndex from, int dc, int dr) {
    const CellIndex to{from.col + dc, from.row + dr};
    if (!map.walkable(to)) return false;
    if (dc != 0 && dr != 0) {
        return map.walkable({from.col + dc, from.row}) && map.walkable({from.col, from.row + dr});
    }
    return true;
}

double octile(CellIndex a, CellIndex b) {
    const double dx = std::abs(a.col - b.col);
    const double dy = std::abs(a.row - b.row);
    return std::max(dx, dy) + (kDiagonalCost - 1.0) * std::min(dx, dy);
}

constexpr double kCostEps = 1e-9;

}  // namespace

const AgentSpec* Scenario::find(int agent_id) const {
    for (const auto& a : agents) {
        if (a.id == agent_id) return &a;
    }
    return nullptr;
}

void Scenario::validate() const {
    if (!(fps > 0.0)) invariant("fps", "must be > 0");
    if (duration_frames < 1) invariant("duration_frames", "must be >= 1");
    std::set<int> ids;
    for (std::size_t n = 0; n < agents.size(); ++n) {
        const AgentSpec& a = agents[n];
        const std::string path = detail::index("agents", n);
        if (!ids.insert(a.id).second) invariant(path + ".id", "duplicate agent id");
        if (!(a.speed_mps > 0.0)) invariant(path + ".speed_mps", "must be > 0");
        if (!(a.height_m > 0.0)) invariant(path + ".height_m", "must be > 0");
        if (a.entry_cell == a.exit_cell) invariant(path + ".exit_cell", "equals entry_cell");
        if (a.spawn_frame < 0) invariant(path + ".spawn_frame", "must be >= 0");
    }
}

std::vector<AgentSpec> sample_agents(const SceneConfig& cfg, int n_agents, int duration_frames,
                                     std::uint64_t rng_seed, const SamplingOptions& opts) {
    const GridMap& map = cfg.grid_map;
    if (map.entrances.empty()) throw Error(Errc::NoEntrances, "grid map has no entrances", "grid_map.entrances");
    if (map.exits.empty()) throw Error(Errc::NoExits, "grid map has no exits", "grid_map.exits");
    if (n_agents < 0) invariant("n_agents", "must be >= 0");
    if (duration_frames < 1) invariant("duration_frames", "must be >= 1");
    if (!(opts.height_min_m > 0.0) || opts.height_max_m < opts.height_min_m) {
        invariant("height_range", "need 0 < min <= max");
    }
    if (!(opts.speed_min_mps > 0.0) || opts.speed_max_mps < opts.speed_min_mps) {
        invariant("speed_range", "need 0 < min <= max");
    }

    std::vector<AgentSpec> agents;
    agents.reserve(static_cast<std::size_t>(n_agents));
    for (int id = 1; id <= n_agents; ++id) {
        std::mt19937_64 rng = agent_stream(rng_seed, id);
        AgentSpec a;
        a.id = id;
        a.entry_cell = pick_weighted(rng, map.entrances).cell;
        int tries = 0;
        do {
            if (++tries > 1000) invariant("grid_map.exits", "no exit distinct from the entrance");
            a.exit_cell = pick_weighted(rng, map.exits).cell;
        } while (a.exit_cell == a.entry_cell);
        // Rounded so that the persisted scenario reloads to identical values.
        a.height_m = persisted(uniform(rng, opts.height_min_m, opts.height_max_m));
        a.speed_mps = persisted(uniform(rng, opts.speed_min_mps, opts.speed_max_mps));
        a.spawn_frame = std::min(duration_frames - 1,
                                 static_cast<int>(uniform01(rng) * duration_frames));
        if (!opts.sprite_ids.empty()) {
            const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(opts.sprite_ids.size()));
            a.sprite_id = opts.sprite_ids[std::min(k, opts.sprite_ids.size() - 1)];
        }
        agents.push_back(std::move(a));
    }
    return agents;
}

Scenario make_scenario(const SceneConfig& cfg, int n_agents, int duration_frames, double fps,
                       std::uint64_t rng_seed, const SamplingOptions& opts) {
    Scenario s;
    s.agents = sample_agents(cfg, n_agents, duration_frames, rng_seed, opts);
    s.fps = fps;
    s.duration_frames = duration_frames;
    s.rng_seed = rng_seed;
    s.validate();
    return s;
}

std::vector<CellIndex> plan_path(const GridMap& map, CellIndex entry, CellIndex exit) {
    if (!map.walkable(entry)) throw Error(Errc::Unreachable, "entry cell is not walkable");
    if (!map.walkable(exit)) throw Error(Errc::Unreachable, "exit cell is not walkable");

    // Search backward from the exit so that g is the exact cost-to-go for
    // every closed cell; the forward walk then picks tie-broken successors.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> g(map.cells.size(), inf);
    std::vector<char> closed(map.cells.size(), 0);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    g[map.flat(exit)] = 0.0;
    open.push({octile(exit, entry), map.flat(exit)});
    double best = inf;
    while (!open.empty()) {
        const auto [f, idx] = open.top();
        if (f > best + kCostEps) break;
        open.pop();
        if (closed[idx]) continue;
        closed[idx] = 1;
        const CellIndex cur{static_cast<int>(idx % static_cast<std::size_t>(map.cols)),
                            static_cast<int>(idx / static_cast<std::size_t>(map.cols))};
        if (cur == entry) best = g[idx];
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                if ((dc == 0 && dr == 0) || !can_move(map, cur, dc, dr)) continue;
                const CellIndex nb{cur.col + dc, cur.row + dr};
                const std::size_t ni = map.flat(nb);
                const double cand = g[idx] + ((dc != 0 && dr != 0) ? kDiagonalCost : 1.0);
                if (!closed[ni] && cand < g[ni]) {
                    g[ni] = cand;
                    open.push({cand + octile(nb, entry), ni});
                }
            }
        }
    }
    if (best == inf) throw Error(Errc::Unreachable, "no path between entry and exit");

    std::vector<CellIndex> path{entry};
    CellIndex cur = entry;
    while (cur != exit) {
        const double here = g[map.flat(cur)];
        std::optional<CellIndex> next;
        for (int dc = -1; dc <= 1 && !next; ++dc) {
            for (int dr = -1; dr <= 1; ++dr) {
                if ((dc == 0 && dr == 0) || !can_move(map, cur, dc, dr)) continue;
                const CellIndex nb{cur.col + dc, cur.row + dr};
                const std::size_t ni = map.flat(nb);
                if (!closed[ni]) continue;
                const double step = (dc != 0 && dr != 0) ? kDiagonalCost : 1.0;
                if (std::abs(g[ni] + step - here) <= kCostEps) {
                    next = nb;
                    break;
                }
            }
        }
        if (!next) throw Error(Errc::Unreachable, "path reconstruction failed");
        cur = *next;
        path.push_back(cur);
    }
    return path;
}

double path_cost(const std::vector<CellIndex>& path) {
    double cost = 0.0;
    for (std::size_t n = 1; n < path.size(); ++n) {
        const bool diag = path[n].col != path[n - 1].col && path[n].row != path[n - 1].row;
        cost += diag ? kDiagonalCost : 1.0;
    }
    return cost;
}

std::vector<CellIndex> supercover(CellIndex a, CellIndex b) {
    std::vector<CellIndex> out{a};
    int x = a.col;
    int y = a.row;
    int dx = b.col - a.col;
    int dy = b.row - a.row;
    const int xstep = dx < 0 ? -1 : 1;
    const int ystep = dy < 0 ? -1 : 1;
    dx = std::abs(dx);
    dy = std::abs(dy);
    const int ddx = 2 * dx;
    const int ddy = 2 * dy;
    if (ddx >= ddy) {
        int error = dx;
        int errorprev = dx;
        for (int i = 0; i < dx; ++i) {
            x += xstep;
            error += ddy;
            if (error > ddx) {
                y += ystep;
                error -= ddx;
                if (error + errorprev < ddx) {
                    out.push_back({x, y - ystep});
                } else if (error + errorprev > ddx) {
                    out.push_back({x - xstep, y});
                } else {
                    out.push_back({x, y - ystep});
                    out.push_back({x - xstep, y});
                }
            }
            out.push_back({x, y});
            errorprev = error;
        }
    } else {
        int error = dy;
        int errorprev = dy;
        for (int i = 0; i < dy; ++i) {
            y += ystep;
            error += ddx;
            if (error > ddy) {
                x += xstep;
                error -= ddy;
                if (error + errorprev < ddy) {
                    out.push_back({x - xstep, y});
                } else if (error + errorprev > ddy) {
                    out.push_back({x, y - ystep});
                } else {
                    out.push_back({x - xstep, y});
                    out.push_back({x, y - ystep});
                }
            }
            out.push_back({x, y});
            errorprev = error;
        }
    }
    return out;
}

namespace {

bool line_of_sight(const GridMap& map, CellIndex a, CellIndex b) {
    for (const CellIndex c : supercover(a, b)) {
        if (!map.walkable(c)) return false;
    }
    return true;
}

}  // namespace

std::vector<WorldPoint> smooth_path(const GridMap& map, const std::vector<CellIndex>& cells) {
    std::vector<WorldPoint> out;
    if (cells.empty()) return out;
    std::size_t anchor = 0;
    out.push_back(map.cell_center(cells[0]));
    while (anchor + 1 < cells.size()) {
        std::size_t reach = anchor + 1;
        for (std::size_t j = cells.size() - 1; j > anchor + 1; --j) {
            if (line_of_sight(map, cells[anchor], cells[j])) {
                reach = j;
                break;
            }
        }
        out.push_back(map.cell_center(cells[reach]));
        anchor = reach;
    }
    return out;
}

double polyline_length(const std::vector<WorldPoint>& line) {
    double len = 0.0;
    for (std::size_t n = 1; n < line.size(); ++n) len += distance(line[n - 1], line[n]);
    return len;
}

namespace {

struct PolylineWalker {
    const std::vector<WorldPoint>& pts;
    std::vector<double> cum;

    explicit PolylineWalker(const std::vector<WorldPoint>& p) : pts(p), cum(p.size(), 0.0) {
        for (std::size_t n = 1; n < p.size(); ++n) cum[n] = cum[n - 1] + distance(p[n - 1], p[n]);
    }
    double length() const { return cum.empty() ? 0.0 : cum.back(); }

    WorldPoint at(double s) const {
        if (s <= 0.0 || pts.size() == 1) return pts.front();
        if (s >= length()) return pts.back();
        const auto it = std::upper_bound(cum.begin(), cum.end(), s);
        const auto n = static_cast<std::size_t>(it - cum.begin());
        const double seg = cum[n] - cum[n - 1];
        const double t = seg > 0.0 ? (s - cum[n - 1]) / seg : 0.0;
        return pts[n - 1] + t * (pts[n] - pts[n - 1]);
    }
};

double initial_heading(const std::vector<WorldPoint>& line) {
    for (std::size_t n = 1; n < line.size(); ++n) {
        const WorldPoint d = line[n] - line[0];
        if (norm(d) > 1e-12) return std::atan2(d.y, d.x);
    }
    return 0.0;
}

}  // namespace

std::vector<Trajectory> step_simulation(const Scenario& scenario,
                                        const std::vector<std::vector<WorldPoint>>& paths) {
    scenario.validate();
    if (paths.size() != scenario.agents.size()) {
        invariant("paths", "need one polyline per agent");
    }
    std::vector<Trajectory> out;
    out.reserve(paths.size());
    for (std::size_t a = 0; a < paths.size(); ++a) {
        const AgentSpec& agent = scenario.agents[a];
        if (paths[a].empty()) invariant(detail::index("paths", a), "empty polyline");
        const PolylineWalker walk(paths[a]);
        const double step = agent.speed_mps / scenario.fps;
        const double len = walk.length();
        const long long count = len > 0.0 ? static_cast<long long>(std::ceil(len / step - 1e-9)) + 1 : 1;

        Trajectory t;
        t.agent_id = agent.id;
        t.samples.reserve(static_cast<std::size_t>(scenario.duration_frames));
        double heading = initial_heading(paths[a]);
        WorldPoint prev = paths[a].front();
        for (int f = 0; f < scenario.duration_frames; ++f) {
            TrajectorySample s;
            s.frame = f;
            const long long k = static_cast<long long>(f) - agent.spawn_frame;
            if (k < 0) {
                s.pos = paths[a].front();
            } else if (k < count) {
                s.pos = walk.at(std::min(static_cast<double>(k) * step, len));
                s.active = true;
                const WorldPoint d = s.pos - prev;
                if (k > 0 && norm(d) > 1e-12) heading = std::atan2(d.y, d.x);
            } else {
                s.pos = paths[a].back();
            }
            s.heading_rad = heading;
            prev = s.pos;
            t.samples.push_back(s);
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<std::vector<WorldPoint>> plan_polylines(const SceneConfig& cfg, const Scenario& scenario) {
    std::map<std::pair<CellIndex, CellIndex>, std::vector<WorldPoint>> cache;
    std::vector<std::vector<WorldPoint>> paths;
    paths.reserve(scenario.agents.size());
    for (const AgentSpec& a : scenario.agents) {
        const auto key = std::make_pair(a.entry_cell, a.exit_cell);
        auto it = cache.find(key);
        if (it == cache.end()) {
            const auto cells = plan_path(cfg.grid_map, a.entry_cell, a.exit_cell);
            it = cache.emplace(key, smooth_path(cfg.grid_map, cells)).first;
        }
        paths.push_back(it->second);
    }
    return paths;
}

std::vector<Trajectory> DefaultSimulator::run(const SceneConfig& cfg, const Scenario& scenario) const {
    return step_simulation(scenario, plan_polylines(cfg, scenario));
}

std::string serialize_scenario(const Scenario& s) {
    ojson doc;
    doc["version"] = 1;
    doc["fps"] = persisted(s.fps);
    doc["duration_frames"] = s.duration_frames;
    doc["rng_seed"] = s.rng_seed;
    ojson agents = ojson::array();
    for (const auto& a : s.agents) {
        ojson j;
        j["id"] = a.id;
        j["height_m"] = persisted(a.height_m);
        j["speed_mps"] = persisted(a.speed_mps);
        j["sprite_id"] = a.sprite_id;
        j["entry_cell"] = {a.entry_cell.col, a.entry_cell.row};
        j["exit_cell"] = {a.exit_cell.col, a.exit_cell.row};
        j["spawn_frame"] = a.spawn_frame;
        agents.push_back(std::move(j));
    }
    doc["agents"] = std::move(agents);
    return doc.dump(2) + "\n";
}

Scenario parse_scenario(std::string_view text) {
    const auto doc = detail::parse_json(text, "scenario");
    Fields f(doc, "");
    if (detail::as_int(f.required("version"), "version") != 1) {
        detail::schema_error("version", "unsupported version");
    }
    Scenario s;
    s.fps = f.number("fps");
    s.duration_frames = f.int32("duration_frames");
    s.rng_seed = f.uint64("rng_seed");
    const auto& agents = detail::as_array(f.required("agents"), "agents");
    for (std::size_t n = 0; n < agents.size(); ++n) {
        Fields a(agents[n], detail::index("agents", n));
        AgentSpec spec;
        spec.id = a.int32("id");
        spec.height_m = a.number("height_m");
        spec.speed_mps = a.number("speed_mps");
        spec.sprite_id = a.string("sprite_id");
        const auto entry = detail::as_int_pair(a.required("entry_cell"), a.at("entry_cell"));
        const auto exit = detail::as_int_pair(a.required("exit_cell"), a.at("exit_cell"));
        spec.entry_cell = {entry[0], entry[1]};
        spec.exit_cell = {exit[0], exit[1]};
        spec.spawn_frame = a.int32("spawn_frame");
        a.reject_unknown();
        s.agents.push_back(std::move(spec));
    }
    f.reject_unknown();
    s.validate();
    return s;
}

std::string serialize_trajectories(const std::vector<Trajectory>& trajectories) {
    std::vector<const Trajectory*> order;
    for (const auto& t : trajectories) order.push_back(&t);
    std::sort(order.begin(), order.end(),
              [](const Trajectory* a, const Trajectory* b) { return a->agent_id < b->agent_id; });
    std::size_t frames = 0;
    for (const auto* t : order) frames = std::max(frames, t->samples.size());

    std::string out = "frame,agent_id,world_x,world_y,heading_rad,active\n";
    char line[160];
    for (std::size_t f = 0; f < frames; ++f) {
        for (const auto* t : order) {
            if (f >= t->samples.size()) continue;
            const TrajectorySample& s = t->samples[f];
            // +0.0 folds negative zero so files compare byte-for-byte.
            std::snprintf(line, sizeof line, "%d,%d,%.6f,%.6f,%.6f,%d\n", s.frame, t->agent_id,
                          s.pos.x + 0.0, s.pos.y + 0.0, s.heading_rad + 0.0, s.active ? 1 : 0);
            out += line;
        }
    }
    return out;
}

std::vector<Trajectory> parse_trajectories(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) detail::schema_error("trajectories", "empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "frame,agent_id,world_x,world_y,heading_rad,active") {
        detail::schema_error("trajectories.header", "unexpected header '" + line + "'");
    }
    std::map<int, Trajectory> by_agent;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        TrajectorySample s;
        int agent = 0;
        int active = 0;
        char tail = 0;
        if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%d%c", &s.frame, &agent, &s.pos.x, &s.pos.y,
                        &s.heading_rad, &active, &tail) != 6 ||
            (active != 0 && active != 1)) {
            detail::schema_error("trajectories.line " + std::to_string(lineno), "malformed row");
        }
        s.active = active == 1;
        Trajectory& t = by_agent[agent];
        t.agent_id = agent;
        t.samples.push_back(s);
    }
    std::vector<Trajectory> out;
    for (auto& [id, t] : by_agent) {
        std::stable_sort(t.samples.begin(), t.samples.end(),
                         [](const auto& a, const auto& b) { return a.frame < b.frame; });
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace ccf
