#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccf/geometry.hpp"

namespace ccf {

enum class CellKind : std::uint8_t { Walkable, Obstacle };

struct CellIndex {
    int col = 0;
    int row = 0;
    friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

struct WeightedCell {
    CellIndex cell;
    double weight = 1.0;
    friend bool operator==(const WeightedCell&, const WeightedCell&) = default;
};

/// Walkable/obstacle raster over the ground plane. Cell (0, 0) has its
/// lower-left corner at `origin`; columns run along +x, rows along +y.
struct GridMap {
    double cell_size_m = 1.0;
    int cols = 0;
    int rows = 0;
    WorldPoint origin;
    std::vector<CellKind> cells;  // row-major, cols * rows
    std::vector<WeightedCell> entrances;
    std::vector<WeightedCell> exits;

    static GridMap filled(int cols, int rows, double cell_size_m = 1.0, WorldPoint origin = {});

    bool in_bounds(CellIndex c) const {
        return c.col >= 0 && c.row >= 0 && c.col < cols && c.row < rows;
    }
    CellKind at(CellIndex c) const { return cells[flat(c)]; }
    void set(CellIndex c, CellKind kind) { cells[flat(c)] = kind; }
    bool walkable(CellIndex c) const { return in_bounds(c) && at(c) == CellKind::Walkable; }
    std::size_t flat(CellIndex c) const {
        return static_cast<std::size_t>(c.row) * static_cast<std::size_t>(cols) +
               static_cast<std::size_t>(c.col);
    }

    /// Throws OutOfExtent outside the map.
    CellIndex world_to_cell(WorldPoint wp) const;
    WorldPoint cell_center(CellIndex c) const;

    /// Throws InvariantViolation naming the failed field.
    void validate() const;

    friend bool operator==(const GridMap&, const GridMap&) = default;
};

struct SceneConfig {
    CalibrationInput calibration;
    GridMap grid_map;
    std::string background;  // relative to the scene file
    std::uint64_t rng_seed = 0;
};

/// Schema and invariant checks; SchemaViolation / InvariantViolation /
/// InvalidCalibration carry the field path.
SceneConfig parse_scene(std::string_view text);
/// The `calibration` object of a scene file on its own.
CalibrationInput parse_calibration(std::string_view text);
std::string serialize_calibration(const CalibrationInput& calib);
std::string serialize_scene(const SceneConfig& cfg);
SceneConfig load_scene(const std::filesystem::path& path);
void save_scene(const SceneConfig& cfg, const std::filesystem::path& path);

/// Ground placement of one camera relative to the source camera (camera 0).
/// Bearing is measured clockwise from the source +depth axis toward +lateral;
/// orientation is the clockwise rotation of this camera's depth axis.
struct RigPose {
    double distance_m = 0.0;
    double bearing_rad = 0.0;
    double orientation_rad = 0.0;

    WorldPoint source_to_camera(WorldPoint wp) const;
    WorldPoint camera_to_source(WorldPoint wp) const;
    /// Heading (atan2 convention) expressed in this camera's frame.
    double heading_to_camera(double heading_rad) const;
};

struct RigCamera {
    std::string scene_path;  // as written in the rig file
    SceneConfig scene;
    RigPose pose;
};

struct CameraRig {
    std::vector<RigCamera> cameras;

    /// Single-camera rig around a scene.
    static CameraRig single(SceneConfig scene, std::string scene_path = {});
    void validate() const;
};

WorldPoint transform_world(const CameraRig& rig, std::size_t cam_index, WorldPoint wp);
WorldPoint inverse_transform_world(const CameraRig& rig, std::size_t cam_index, WorldPoint wp);

/// Rig file: {version:1, cameras:[{scene, distance_m, bearing_rad, orientation_rad}]}.
/// Scene paths resolve relative to the rig file.
CameraRig load_rig(const std::filesystem::path& path);
std::string serialize_rig(const CameraRig& rig);

struct WorldBox {
    WorldPoint min;
    WorldPoint max;
};

/// Bounding box of the image region at least margin_px below the horizon,
/// mapped to the ground.
WorldBox visible_ground_extent(const PerspectiveGrid& grid, double margin_px = 20.0);

/// Map covering the visible ground; cells whose centre does not image inside
/// the frame (or lies within margin_px of the horizon) are obstacles.
/// `max_depth_m` clips the far end. Entrances and exits are left empty.
GridMap make_visible_grid_map(const PerspectiveGrid& grid, double cell_size_m = 1.0,
                              double margin_px = 20.0, double max_depth_m = 1e9);

}  // namespace ccf
