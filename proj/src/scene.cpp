#include "ccf/scene.hpp"

#include <algorithm>
#include <cmath>

#include "ccf/error.hpp"
#include "ccf/io.hpp"
#include "json_fields.hpp"

namespace ccf {

using detail::Fields;
using detail::json;
using detail::ordered_json;
using detail::persisted;

GridMap GridMap::filled(int cols, int rows, double cell_size_m, WorldPoint origin) {
    GridMap m;
    m.cols = cols;
    m.rows = rows;
    m.cell_size_m = cell_size_m;
    m.origin = origin;
    m.cells.assign(static_cast<std::size_t>(std::max(cols, 0)) *
                       static_cast<std::size_t>(std::max(rows, 0)),
                   CellKind::Walkable);
    return m;
}

CellIndex GridMap::world_to_cell(WorldPoint wp) const {
    const double fx = (wp.x - origin.x) / cell_size_m;
    const double fy = (wp.y - origin.y) / cell_size_m;
    const CellIndex c{static_cast<int>(std::floor(fx)), static_cast<int>(std::floor(fy))};
    if (!std::isfinite(fx) || !std::isfinite(fy) || !in_bounds(c)) {
        throw Error(Errc::OutOfExtent, "world point outside the grid map");
    }
    return c;
}

WorldPoint GridMap::cell_center(CellIndex c) const {
    if (!in_bounds(c)) throw Error(Errc::OutOfExtent, "cell outside the grid map");
    return {origin.x + (c.col + 0.5) * cell_size_m, origin.y + (c.row + 0.5) * cell_size_m};
}

namespace {

[[noreturn]] void invariant(const std::string& field, const std::string& what) {
    throw Error(Errc::InvariantViolation, field + ": " + what, field);
}

void check_weighted(const GridMap& m, const std::vector<WeightedCell>& list,
                    const std::string& name) {
    if (list.empty()) invariant("grid_map." + name, "at least one required");
    for (std::size_t n = 0; n < list.size(); ++n) {
        const std::string path = "grid_map." + name + "[" + std::to_string(n) + "]";
        if (!m.in_bounds(list[n].cell)) invariant(path + ".cell", "outside the map");
        if (m.at(list[n].cell) != CellKind::Walkable) invariant(path + ".cell", "on an obstacle");
        if (!(list[n].weight > 0.0)) invariant(path + ".weight", "must be > 0");
    }
}

}  // namespace

void GridMap::validate() const {
    if (!(cell_size_m > 0.0)) invariant("grid_map.cell_size_m", "must be > 0");
    if (cols < 1) invariant("grid_map.cols", "must be >= 1");
    if (rows < 1) invariant("grid_map.rows", "must be >= 1");
    if (cells.size() != static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows)) {
        invariant("grid_map", "cell raster does not match cols x rows");
    }
    check_weighted(*this, entrances, "entrances");
    check_weighted(*this, exits, "exits");
}

namespace {

ordered_json pixel_json(PixelPoint p) { return ordered_json::array({persisted(p.x), persisted(p.y)}); }

ordered_json weighted_json(const std::vector<WeightedCell>& list) {
    ordered_json out = ordered_json::array();
    for (const auto& w : list) {
        ordered_json e;
        e["cell"] = {w.cell.col, w.cell.row};
        e["weight"] = persisted(w.weight);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<WeightedCell> parse_weighted(const json& v, const std::string& path) {
    detail::as_array(v, path);
    std::vector<WeightedCell> out;
    for (std::size_t n = 0; n < v.size(); ++n) {
        Fields f(v[n], detail::index(path, n));
        const auto cell = detail::as_int_pair(f.required("cell"), f.at("cell"));
        out.push_back({{cell[0], cell[1]}, f.number("weight")});
        f.reject_unknown();
    }
    return out;
}

CalibrationInput parse_calibration_object(const json& v) {
    Fields f(v, "calibration");
    CalibrationInput c;
    c.i = f.pixel("i");
    c.j = f.pixel("j");
    c.k = f.pixel("k");
    c.l = f.pixel("l");
    c.u1 = f.pixel("u1");
    c.u2 = f.pixel("u2");
    c.unit_m = f.number("unit_m");
    const auto size = detail::as_int_pair(f.required("image_size"), f.at("image_size"));
    c.image_width = size[0];
    c.image_height = size[1];
    f.reject_unknown();
    return c;
}

GridMap parse_grid_map(const json& v) {
    Fields f(v, "grid_map");
    const double cell = f.number("cell_size_m");
    const int cols = f.int32("cols");
    const int rows = f.int32("rows");
    if (cols < 1 || rows < 1) invariant("grid_map", "cols and rows must be >= 1");
    if (static_cast<std::int64_t>(cols) * rows > 50'000'000) {
        invariant("grid_map", "map too large");
    }
    WorldPoint origin;
    if (const json* o = f.optional("origin_m")) {
        const auto p = detail::as_pair(*o, f.at("origin_m"));
        origin = {p[0], p[1]};
    }
    GridMap m = GridMap::filled(cols, rows, cell, origin);

    const std::string obs_path = f.at("obstacles");
    const json& obstacles = detail::as_array(f.required("obstacles"), obs_path);
    for (std::size_t n = 0; n < obstacles.size(); ++n) {
        const std::string path = detail::index(obs_path, n);
        const auto c = detail::as_int_pair(obstacles[n], path);
        if (!m.in_bounds({c[0], c[1]})) invariant(path, "outside the map");
        m.set({c[0], c[1]}, CellKind::Obstacle);
    }
    m.entrances = parse_weighted(f.required("entrances"), f.at("entrances"));
    m.exits = parse_weighted(f.required("exits"), f.at("exits"));
    f.reject_unknown();
    return m;
}

}  // namespace

namespace {

ordered_json calibration_json(const CalibrationInput& c) {
    ordered_json calib;
    calib["i"] = pixel_json(c.i);
    calib["j"] = pixel_json(c.j);
    calib["k"] = pixel_json(c.k);
    calib["l"] = pixel_json(c.l);
    calib["u1"] = pixel_json(c.u1);
    calib["u2"] = pixel_json(c.u2);
    calib["unit_m"] = persisted(c.unit_m);
    calib["image_size"] = {c.image_width, c.image_height};
    return calib;
}

}  // namespace

CalibrationInput parse_calibration(std::string_view text) {
    const CalibrationInput c = parse_calibration_object(detail::parse_json(text, "calibration"));
    validate_calibration(c);
    return c;
}

std::string serialize_calibration(const CalibrationInput& calib) { return calibration_json(calib).dump(2) + "\n"; }

SceneConfig parse_scene(std::string_view text) {
    const json doc = detail::parse_json(text, "scene");
    Fields f(doc, "");
    if (f.int32("version") != 1) detail::schema_error("version", "unsupported version");
    SceneConfig cfg;
    cfg.calibration = parse_calibration_object(f.required("calibration"));
    cfg.grid_map = parse_grid_map(f.required("grid_map"));
    cfg.background = f.string("background");
    cfg.rng_seed = f.uint64("rng_seed");
    f.reject_unknown();

    validate_calibration(cfg.calibration);
    cfg.grid_map.validate();
    return cfg;
}

std::string serialize_scene(const SceneConfig& cfg) {
    const GridMap& m = cfg.grid_map;

    ordered_json map;
    map["cell_size_m"] = persisted(m.cell_size_m);
    map["cols"] = m.cols;
    map["rows"] = m.rows;
    if (m.origin.x != 0.0 || m.origin.y != 0.0) {
        map["origin_m"] = {persisted(m.origin.x), persisted(m.origin.y)};
    }
    ordered_json obstacles = ordered_json::array();
    for (int r = 0; r < m.rows; ++r) {
        for (int col = 0; col < m.cols; ++col) {
            if (m.at({col, r}) == CellKind::Obstacle) obstacles.push_back({col, r});
        }
    }
    map["obstacles"] = std::move(obstacles);
    map["entrances"] = weighted_json(m.entrances);
    map["exits"] = weighted_json(m.exits);

    ordered_json doc;
    doc["version"] = 1;
    doc["calibration"] = calibration_json(cfg.calibration);
    doc["grid_map"] = std::move(map);
    doc["background"] = cfg.background;
    doc["rng_seed"] = cfg.rng_seed;
    return doc.dump(2) + "\n";
}

SceneConfig load_scene(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw Error(Errc::SchemaViolation, "scene file not found: " + path.string(), path.string());
    }
    return parse_scene(read_file(path));
}

void save_scene(const SceneConfig& cfg, const std::filesystem::path& path) {
    write_file(path, serialize_scene(cfg));
}

WorldPoint RigPose::source_to_camera(WorldPoint wp) const {
    const double tx = distance_m * std::sin(bearing_rad);
    const double ty = distance_m * std::cos(bearing_rad);
    const double qx = wp.x - tx;
    const double qy = wp.y - ty;
    const double c = std::cos(orientation_rad);
    const double s = std::sin(orientation_rad);
    // camera lateral axis (c, -s), depth axis (s, c) in source coordinates
    return {qx * c - qy * s, qx * s + qy * c};
}

WorldPoint RigPose::camera_to_source(WorldPoint wp) const {
    const double tx = distance_m * std::sin(bearing_rad);
    const double ty = distance_m * std::cos(bearing_rad);
    const double c = std::cos(orientation_rad);
    const double s = std::sin(orientation_rad);
    return {tx + wp.x * c + wp.y * s, ty - wp.x * s + wp.y * c};
}

double RigPose::heading_to_camera(double heading_rad) const {
    const double vx = std::cos(heading_rad);
    const double vy = std::sin(heading_rad);
    const double c = std::cos(orientation_rad);
    const double s = std::sin(orientation_rad);
    return std::atan2(vx * s + vy * c, vx * c - vy * s);
}

CameraRig CameraRig::single(SceneConfig scene, std::string scene_path) {
    CameraRig rig;
    rig.cameras.push_back({std::move(scene_path), std::move(scene), {}});
    return rig;
}

void CameraRig::validate() const {
    if (cameras.empty()) invariant("cameras", "at least the source camera is required");
    for (std::size_t n = 0; n < cameras.size(); ++n) {
        const RigPose& p = cameras[n].pose;
        const std::string path = "cameras[" + std::to_string(n) + "]";
        if (!(p.distance_m >= 0.0)) invariant(path + ".distance_m", "must be >= 0");
        const bool at_source = p.distance_m == 0.0 && p.bearing_rad == 0.0 && p.orientation_rad == 0.0;
        if (n == 0 && !at_source) invariant(path, "camera 0 is the source and must be (0, 0, 0)");
        if (n > 0 && at_source) invariant(path, "only camera 0 may sit at the source pose");
    }
}

WorldPoint transform_world(const CameraRig& rig, std::size_t cam_index, WorldPoint wp) {
    if (cam_index >= rig.cameras.size()) throw Error(Errc::OutOfExtent, "camera index out of range");
    return rig.cameras[cam_index].pose.source_to_camera(wp);
}

WorldPoint inverse_transform_world(const CameraRig& rig, std::size_t cam_index, WorldPoint wp) {
    if (cam_index >= rig.cameras.size()) throw Error(Errc::OutOfExtent, "camera index out of range");
    return rig.cameras[cam_index].pose.camera_to_source(wp);
}

CameraRig load_rig(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw Error(Errc::SchemaViolation, "rig file not found: " + path.string(), path.string());
    }
    const json doc = detail::parse_json(read_file(path), "rig");
    Fields f(doc, "");
    if (f.int32("version") != 1) detail::schema_error("version", "unsupported version");
    const json& cams = detail::as_array(f.required("cameras"), "cameras");
    CameraRig rig;
    for (std::size_t n = 0; n < cams.size(); ++n) {
        Fields c(cams[n], detail::index("cameras", n));
        RigCamera cam;
        cam.scene_path = c.string("scene");
        cam.pose.distance_m = c.number("distance_m");
        cam.pose.bearing_rad = c.number("bearing_rad");
        cam.pose.orientation_rad = c.number("orientation_rad");
        c.reject_unknown();
        cam.scene = load_scene(resolve_relative(path, cam.scene_path));
        rig.cameras.push_back(std::move(cam));
    }
    f.reject_unknown();
    rig.validate();
    return rig;
}

std::string serialize_rig(const CameraRig& rig) {
    ordered_json cams = ordered_json::array();
    for (const auto& cam : rig.cameras) {
        ordered_json c;
        c["scene"] = cam.scene_path;
        c["distance_m"] = persisted(cam.pose.distance_m);
        c["bearing_rad"] = persisted(cam.pose.bearing_rad);
        c["orientation_rad"] = persisted(cam.pose.orientation_rad);
        cams.push_back(std::move(c));
    }
    ordered_json doc;
    doc["version"] = 1;
    doc["cameras"] = std::move(cams);
    return doc.dump(2) + "\n";
}

WorldBox visible_ground_extent(const PerspectiveGrid& grid, double margin_px) {
    const auto poly = visible_ground_polygon(grid, margin_px);
    if (poly.size() < 3) throw Error(Errc::GridTooSmall, "no ground visible below the horizon");
    WorldBox box{{1e300, 1e300}, {-1e300, -1e300}};
    for (const PixelPoint& p : poly) {
        const WorldPoint w = grid.image_to_world(p);
        box.min = {std::min(box.min.x, w.x), std::min(box.min.y, w.y)};
        box.max = {std::max(box.max.x, w.x), std::max(box.max.y, w.y)};
    }
    return box;
}

GridMap make_visible_grid_map(const PerspectiveGrid& grid, double cell_size_m, double margin_px,
                              double max_depth_m) {
    WorldBox box = visible_ground_extent(grid, margin_px);
    box.max.y = std::min(box.max.y, max_depth_m);
    if (box.max.y <= box.min.y) throw Error(Errc::GridTooSmall, "depth limit excludes the view");
    const WorldPoint origin{std::floor(box.min.x / cell_size_m) * cell_size_m,
                            std::floor(box.min.y / cell_size_m) * cell_size_m};
    const int cols = std::max(1, static_cast<int>(std::ceil((box.max.x - origin.x) / cell_size_m)));
    const int rows = std::max(1, static_cast<int>(std::ceil((box.max.y - origin.y) / cell_size_m)));
    GridMap m = GridMap::filled(cols, rows, cell_size_m, origin);

    const ImageBounds bounds = grid.calibration().bounds();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const WorldPoint center = m.cell_center({c, r});
            bool visible = center.y <= max_depth_m;
            if (visible) {
                try {
                    const PixelPoint p = grid.world_to_image(center);
                    visible = bounds.contains(p) && grid.horizon_distance(p) >= margin_px;
                } catch (const Error&) {
                    visible = false;
                }
            }
            if (!visible) m.set({c, r}, CellKind::Obstacle);
        }
    }
    return m;
}

}  // namespace ccf
