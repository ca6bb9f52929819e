#include "ccf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ccf/background.hpp"
#include "ccf/error.hpp"
#include "ccf/io.hpp"
#include "json_fields.hpp"

namespace ccf {

namespace fs = std::filesystem;
using detail::persisted;
using ojson = detail::ordered_json;

namespace {

void require_file(const fs::path& path, const std::string& what) {
    if (!fs::is_regular_file(path)) {
        throw Error(Errc::SchemaViolation, what + " not found: " + path.string(), path.string());
    }
}

std::string cam_dir(std::size_t cam) {
    char name[16];
    std::snprintf(name, sizeof name, "cam_%02zu", cam);
    return name;
}

}  // namespace

fs::path LoadedRig::background_path(std::size_t cam) const {
    return resolve_relative(scene_files.at(cam), rig.cameras.at(cam).scene.background);
}

LoadedRig load_cameras(const fs::path& scene, const fs::path& rig) {
    if (scene.empty() == rig.empty()) {
        throw Error(Errc::SchemaViolation, "give exactly one of a scene file or a camera rig file", "scene");
    }
    LoadedRig out;
    if (!scene.empty()) {
        out.rig = CameraRig::single(load_scene(scene), scene.filename().string());
        out.scene_files.push_back(scene);
        return out;
    }
    out.rig = load_rig(rig);
    for (const auto& c : out.rig.cameras) out.scene_files.push_back(resolve_relative(rig, c.scene_path));
    return out;
}

std::vector<cv::Mat> load_plates(const LoadedRig& cams) {
    std::vector<cv::Mat> plates;
    for (std::size_t c = 0; c < cams.rig.cameras.size(); ++c) {
        const fs::path path = cams.background_path(c);
        cv::Mat plate = cv::imread(path.string(), cv::IMREAD_COLOR);
        if (plate.empty()) {
            throw Error(Errc::MissingImage, "cannot read background plate " + path.string(), path.string());
        }
        const CalibrationInput& calib = cams.rig.cameras[c].scene.calibration;
        if (plate.cols != calib.image_width || plate.rows != calib.image_height) {
            throw Error(Errc::InvariantViolation,
                        path.string() + " is " + std::to_string(plate.cols) + "x" + std::to_string(plate.rows) +
                            " but the calibration says " + std::to_string(calib.image_width) + "x" +
                            std::to_string(calib.image_height),
                        "calibration.image_size");
        }
        plates.push_back(std::move(plate));
    }
    return plates;
}

std::string serialize_grid(const PerspectiveGrid& grid) {
    const CalibrationInput& c = grid.calibration();
    ojson doc;
    doc["version"] = 1;
    doc["image_size"] = {c.image_width, c.image_height};
    if (const auto& v = grid.construction().vanish) {
        doc["vanishing_point"] = {persisted(v->x), persisted(v->y)};
    } else {
        doc["vanishing_point"] = nullptr;
    }
    ojson h = ojson::array();
    for (int r = 0; r < 3; ++r) {
        h.push_back({persisted(grid.homography()(r, 0)), persisted(grid.homography()(r, 1)),
                     persisted(grid.homography()(r, 2))});
    }
    doc["homography"] = std::move(h);
    doc["rms_reprojection_px"] = persisted(grid.rms_reprojection_px());
    doc["max_reprojection_px"] = persisted(grid.max_reprojection_px());
    ojson nodes = ojson::array();
    for (const auto& n : grid.lattice().nodes()) nodes.push_back({n.col, n.row, persisted(n.px.x), persisted(n.px.y)});
    doc["lattice"] = std::move(nodes);
    return doc.dump() + "\n";
}

cv::Mat draw_grid_overlay(const cv::Mat& plate, const PerspectiveGrid& grid, const GridMap* map) {
    cv::Mat out = plate.clone();
    auto px = [](PixelPoint p) { return cv::Point2d(p.x, p.y); };
    if (map) {
        cv::Mat shade = out.clone();
        for (int r = 0; r < map->rows; ++r) {
            for (int c = 0; c < map->cols; ++c) {
                const bool obstacle = map->at({c, r}) == CellKind::Obstacle;
                const WorldPoint o{map->origin.x + c * map->cell_size_m, map->origin.y + r * map->cell_size_m};
                const double s = map->cell_size_m;
                std::vector<cv::Point> poly;
                try {
                    for (WorldPoint w : {o, WorldPoint{o.x + s, o.y}, WorldPoint{o.x + s, o.y + s}, WorldPoint{o.x, o.y + s}}) {
                        const PixelPoint p = grid.world_to_image(w);
                        if (!std::isfinite(p.x) || !std::isfinite(p.y) || std::abs(p.x) > 1e5 || std::abs(p.y) > 1e5) {
                            throw Error(Errc::HorizonSingularity, "cell beyond the horizon");
                        }
                        poly.emplace_back(cvRound(p.x), cvRound(p.y));
                    }
                } catch (const Error&) {
                    continue;
                }
                if (obstacle) cv::fillConvexPoly(shade, poly, cv::Scalar(40, 40, 200), cv::LINE_AA);
            }
        }
        cv::addWeighted(shade, 0.45, out, 0.55, 0.0, out);
        auto mark = [&](const std::vector<WeightedCell>& cells, cv::Scalar colour) {
            for (const auto& e : cells) {
                try {
                    const PixelPoint p = grid.world_to_image(map->cell_center(e.cell));
                    cv::circle(out, px(p), 4, colour, cv::FILLED, cv::LINE_AA);
                } catch (const Error&) {
                }
            }
        };
        mark(map->entrances, cv::Scalar(60, 200, 60));
        mark(map->exits, cv::Scalar(200, 80, 200));
    }
    const Lattice& lat = grid.lattice();
    for (const auto& n : lat.nodes()) {
        for (auto [dc, dr] : {std::pair{1, 0}, std::pair{0, 1}}) {
            if (auto q = lat.at(n.col + dc, n.row + dr)) {
                cv::line(out, px(n.px), px(*q), cv::Scalar(0, 220, 255), 1, cv::LINE_AA);
            }
        }
    }
    cv::circle(out, px(grid.calibration().i), 5, cv::Scalar(0, 0, 255), 2, cv::LINE_AA);
    return out;
}

PerspectiveGrid run_grid(const fs::path& scene_file, const fs::path& out_dir, std::uint64_t r_seed) {
    const SceneConfig scene = load_scene(scene_file);
    GridOptions opts;
    opts.r_seed = r_seed;
    PerspectiveGrid grid = build_grid(scene.calibration, opts);
    fs::create_directories(out_dir);
    write_file(out_dir / "grid.json", serialize_grid(grid));
    const fs::path bg = resolve_relative(scene_file, scene.background);
    const cv::Mat plate = cv::imread(bg.string(), cv::IMREAD_COLOR);
    if (plate.empty()) {
        std::cerr << "warning: " << bg.string() << " unreadable, skipping grid_overlay.png\n";
    } else if (!cv::imwrite((out_dir / "grid_overlay.png").string(), draw_grid_overlay(plate, grid, &scene.grid_map))) {
        throw Error(Errc::Io, "cannot write " + (out_dir / "grid_overlay.png").string());
    }
    return grid;
}

void run_simulate(const LoadedRig& cams, const fs::path& out_dir, const SimulateParams& params) {
    if (params.agents < 0) throw Error(Errc::InvariantViolation, "agent count must be >= 0", "agents");
    if (params.frames < 1) throw Error(Errc::InvariantViolation, "frame count must be >= 1", "frames");
    if (!(params.fps > 0.0)) throw Error(Errc::InvariantViolation, "fps must be > 0", "fps");
    const SceneConfig& scene = cams.rig.cameras.at(0).scene;
    const Scenario scenario =
        make_scenario(scene, params.agents, params.frames, params.fps, params.seed.value_or(scene.rng_seed));
    const auto trajectories = DefaultSimulator{}.run(scene, scenario);
    fs::create_directories(out_dir);
    write_file(out_dir / "scenario.json", serialize_scenario(scenario));
    write_file(out_dir / "trajectories.csv", serialize_trajectories(trajectories));
}

SpriteAtlas default_atlas() {
    SpriteAtlas atlas;
    for (int v = 0; v < 6; ++v) atlas.push_back(make_walker_sprite(v, 160));
    return atlas;
}

SequenceManifest run_render(const LoadedRig& cams, const fs::path& sim_dir, const fs::path& out_dir,
                            const RenderParams& params) {
    require_file(sim_dir / "scenario.json", "scenario");
    require_file(sim_dir / "trajectories.csv", "trajectories");
    if (!params.sprites.empty()) require_file(params.sprites, "sprite manifest");
    const Scenario scenario = parse_scenario(read_file(sim_dir / "scenario.json"));
    const auto trajectories = parse_trajectories(read_file(sim_dir / "trajectories.csv"));
    const SpriteAtlas atlas = params.sprites.empty() ? default_atlas() : load_sprite_atlas(params.sprites);
    RenderJob job;
    job.rig = &cams.rig;
    job.plates = load_plates(cams);
    job.scenario = &scenario;
    job.trajectories = &trajectories;
    job.atlas = &atlas;
    job.options = params.options;
    job.threads = params.threads;
    return render_sequence(job, out_dir);
}

PipelineResult run_pipeline(const LoadedRig& cams, const fs::path& out_dir, const PipelineParams& params) {
    PipelineResult result;
    for (std::size_t c = 0; c < cams.rig.cameras.size(); ++c) {
        run_grid(cams.scene_files[c], out_dir / "grid" / cam_dir(c));
    }
    run_simulate(cams, out_dir / "sim", params.simulate);
    result.manifest = run_render(cams, out_dir / "sim", out_dir / "render", params.render);
    result.annotations = export_dataset(out_dir / "render", out_dir / "annotations", params.annotate);
    const fs::path gt = out_dir / "annotations" / "ground_truth.jsonl";
    const fs::path det = out_dir / "eval" / "detections.jsonl";
    fs::create_directories(det.parent_path());
    write_file(det, serialize_detections(replay_ground_truth(parse_annotations(read_file(gt)))));
    result.report = evaluate_files(gt, det, out_dir / "eval", params.evaluate);
    return result;
}

// ---------------------------------------------------------------------------
// Demo scene

namespace {

/// Pinhole over flat ground, pitched down, no roll or yaw.
struct DemoCamera {
    double focal_px, cx, cy, height_m, tilt_rad;

    PixelPoint project(double x, double y) const {
        const double c = std::cos(tilt_rad), s = std::sin(tilt_rad);
        const double forward = y * c + height_m * s;
        const double down = -y * s + height_m * c;
        return {cx + focal_px * x / forward, cy + focal_px * down / forward};
    }

    CalibrationInput calibrate(double x0, double y0, double gap, int w, int h) const {
        CalibrationInput c;
        c.i = project(x0, y0);
        c.j = project(x0, y0 + 6.0);
        c.k = project(x0 + gap, y0);
        c.l = project(x0 + gap, y0 + 6.0);
        c.u1 = project(x0, y0 + 1.0);
        c.u2 = project(x0 + 1.0, y0);
        c.unit_m = 1.0;
        c.image_width = w;
        c.image_height = h;
        return c;
    }
};

struct Rect2 {
    double x0, y0, x1, y1;
    bool contains(WorldPoint p) const { return p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1; }
};

// Planters and a bench, source-camera ground frame.
const Rect2 kObstacles[] = {{2, 5, 4, 7}, {-3, 12, -1, 14}, {5, 18, 9, 19}};

std::uint32_t hash2(int x, int y) {
    std::uint32_t h = static_cast<std::uint32_t>(x) * 0x8da6b343u ^ static_cast<std::uint32_t>(y) * 0xd8163841u;
    h ^= h >> 13;
    h *= 0x85ebca6bu;
    return h ^ (h >> 16);
}

/// Ground albedo at a source-frame point: paving with mortar joints, a
/// darker cycle lane and the obstacle footprints.
cv::Vec3d ground_colour(WorldPoint p) {
    for (const auto& r : kObstacles) {
        if (r.contains(p)) {
            const bool rim = p.x - r.x0 < 0.15 || r.x1 - p.x < 0.15 || p.y - r.y0 < 0.15 || r.y1 - p.y < 0.15;
            return rim ? cv::Vec3d(90, 100, 110) : cv::Vec3d(40, 110, 60);
        }
    }
    const double tile = 0.5;
    const int tx = static_cast<int>(std::floor(p.x / tile)), ty = static_cast<int>(std::floor(p.y / tile));
    const double fx = p.x / tile - tx, fy = p.y / tile - ty;
    if (fx < 0.06 || fy < 0.06) return {105, 110, 115};
    const double jitter = static_cast<double>(hash2(tx, ty) % 21) - 10.0;
    if (p.x > 10.0 && p.x < 12.0) return {70 + jitter, 75 + jitter, 130 + jitter};
    return {150 + jitter, 160 + jitter, 168 + jitter};
}

cv::Mat render_demo_plate(const PerspectiveGrid& grid, const RigPose& pose, int w, int h) {
    cv::Mat plate(h, w, CV_8UC3);
    const double offsets[2] = {0.25, 0.75};
    for (int y = 0; y < h; ++y) {
        auto* row = plate.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            cv::Vec3d acc(0, 0, 0);
            for (double oy : offsets) {
                for (double ox : offsets) {
                    const PixelPoint p{x + ox, y + oy};
                    if (grid.horizon_distance(p) < 2.0) {
                        const double t = static_cast<double>(y) / h;
                        acc += cv::Vec3d(235 - 60 * t, 200 - 30 * t, 170 - 20 * t);  // sky
                        continue;
                    }
                    const WorldPoint src = pose.camera_to_source(grid.image_to_world(p));
                    // Fade to haze far away to hide aliasing.
                    const double far = std::clamp((src.y - 40.0) / 80.0, 0.0, 1.0);
                    acc += (1.0 - far) * ground_colour(src) + far * cv::Vec3d(170, 170, 165);
                }
            }
            acc *= 0.25;
            row[x] = cv::Vec3b(cv::saturate_cast<uchar>(acc[0]), cv::saturate_cast<uchar>(acc[1]),
                               cv::saturate_cast<uchar>(acc[2]));
        }
    }
    return plate;
}

/// Left/right edges of a band of rows become entrances/exits; the nearest
/// walkable row adds entrances, the farthest adds exits.
void add_portals(GridMap& m) {
    for (int r = m.rows / 6; r < 5 * m.rows / 6; r += 3) {
        for (int c = 0; c < m.cols; ++c) {
            if (m.walkable({c, r})) {
                m.entrances.push_back({{c, r}, 2.0});
                break;
            }
        }
        for (int c = m.cols - 1; c >= 0; --c) {
            if (m.walkable({c, r})) {
                m.exits.push_back({{c, r}, 2.0});
                break;
            }
        }
    }
    auto edge_row = [&](int r0, int dr, std::vector<WeightedCell>& out) {
        for (int r = r0; r >= 0 && r < m.rows; r += dr) {
            std::vector<CellIndex> row;
            for (int c = 0; c < m.cols; ++c) {
                if (m.walkable({c, r})) row.push_back({c, r});
            }
            if (row.size() < 3) continue;
            for (std::size_t n = 1; n + 1 < row.size(); n += 3) out.push_back({row[n], 1.0});
            return;
        }
    };
    edge_row(0, 1, m.entrances);
    edge_row(m.rows - 1, -1, m.exits);
    // Entrances and exits never share a cell.
    std::erase_if(m.exits, [&](const WeightedCell& e) {
        return std::any_of(m.entrances.begin(), m.entrances.end(), [&](const WeightedCell& n) { return n.cell == e.cell; });
    });
}

SceneConfig demo_scene(const DemoCamera& cam, double x0, double y0, const RigPose& pose, bool obstacles, int w, int h,
                       std::string background) {
    SceneConfig cfg;
    cfg.calibration = cam.calibrate(x0, y0, 3.0, w, h);
    const PerspectiveGrid grid = build_grid(cfg.calibration);
    GridMap m = make_visible_grid_map(grid, 1.0, 20.0, 34.0);
    if (obstacles) {
        for (int r = 0; r < m.rows; ++r) {
            for (int c = 0; c < m.cols; ++c) {
                const WorldPoint src = pose.camera_to_source(m.cell_center({c, r}));
                if (std::any_of(std::begin(kObstacles), std::end(kObstacles), [&](const Rect2& o) { return o.contains(src); })) {
                    m.set({c, r}, CellKind::Obstacle);
                }
            }
        }
    }
    add_portals(m);
    cfg.grid_map = std::move(m);
    cfg.background = std::move(background);
    cfg.rng_seed = 2845;
    validate_calibration(cfg.calibration);
    cfg.grid_map.validate();
    return cfg;
}

/// Plate plus a few moving blobs, each pixel covered in well under half the
/// frames so the temporal median recovers the plate.
std::vector<cv::Mat> demo_video(const cv::Mat& plate, int frames) {
    std::vector<cv::Mat> out;
    const int w = plate.cols, h = plate.rows;
    for (int f = 0; f < frames; ++f) {
        cv::Mat img = plate.clone();
        for (int b = 0; b < 5; ++b) {
            const double t = static_cast<double>(f) / std::max(1, frames - 1);
            const int bw = w / 24 + 6 * b, bh = h / 6 + 10 * b;
            const int x = static_cast<int>((b % 2 ? 1.0 - t : t) * (w + bw)) - bw;
            const int y = h / 2 + (b - 2) * h / 10;
            const cv::Scalar colour(30 + 40 * b, 200 - 35 * b, 90 + 25 * b);
            cv::rectangle(img, cv::Rect(x, y, bw, bh), colour, cv::FILLED);
        }
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace

void write_demo(const fs::path& out_dir, const DemoParams& params) {
    if (params.width < 64 || params.height < 48) {
        throw Error(Errc::InvariantViolation, "demo image must be at least 64x48", "width");
    }
    if (params.cameras < 1 || params.cameras > 2) throw Error(Errc::InvariantViolation, "demo supports 1 or 2 cameras", "cameras");
    if (params.video_frames < 1) throw Error(Errc::InvariantViolation, "video needs at least one frame", "video_frames");
    const int w = params.width, h = params.height;
    const double f = 1.05 * w;
    fs::create_directories(out_dir / "video");

    const DemoCamera cam0{f, w / 2.0, h / 2.0, 6.0, 0.36};
    const SceneConfig s0 = demo_scene(cam0, -3.0, 8.0, {}, true, w, h, "background.png");
    save_scene(s0, out_dir / "scene.json");
    const cv::Mat plate0 = render_demo_plate(build_grid(s0.calibration), {}, w, h);

    const auto video = demo_video(plate0, params.video_frames);
    for (std::size_t n = 0; n < video.size(); ++n) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", n);
        if (!cv::imwrite((out_dir / "video" / name).string(), video[n])) throw Error(Errc::Io, "cannot write demo video");
    }
    const int min_frames = std::min(25, params.video_frames);
    write_plate(extract_background({video, 25.0}, 1, min_frames), out_dir / "background.png");

    if (params.cameras == 2) {
        const RigPose pose{4.0, 0.5, -0.3};
        const DemoCamera cam1{f, w / 2.0, h / 2.0, 7.5, 0.42};
        const SceneConfig s1 = demo_scene(cam1, -2.0, 10.0, pose, true, w, h, "background_cam1.png");
        save_scene(s1, out_dir / "scene_cam1.json");
        const cv::Mat plate1 = render_demo_plate(build_grid(s1.calibration), pose, w, h);
        if (!cv::imwrite((out_dir / "background_cam1.png").string(), plate1)) throw Error(Errc::Io, "cannot write demo plate");
        CameraRig rig;
        rig.cameras.push_back({"scene.json", s0, {}});
        rig.cameras.push_back({"scene_cam1.json", s1, pose});
        rig.validate();
        write_file(out_dir / "rig.json", serialize_rig(rig));
    }
    save_sprite_atlas(default_atlas(), out_dir / "sprites");
}

}  // namespace ccf
