#pragma once

// File-based pipeline stages shared by the command line and the service.
// Each stage reads only its declared inputs and writes only into its output
// directory, so any stage can be re-run on its own.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "ccf/annotate.hpp"
#include "ccf/compositor.hpp"
#include "ccf/evaluate.hpp"
#include "ccf/scene.hpp"
#include "ccf/simulation.hpp"

namespace ccf {

/// A rig together with the scene files its cameras came from.
struct LoadedRig {
    CameraRig rig;
    std::vector<std::filesystem::path> scene_files;  // one per camera

    std::filesystem::path background_path(std::size_t cam) const;
};

/// Exactly one of scene / rig must be given.
LoadedRig load_cameras(const std::filesystem::path& scene, const std::filesystem::path& rig);

/// Background plates of every camera, resized checks included (MissingImage).
std::vector<cv::Mat> load_plates(const LoadedRig& cams);

/// grid.json: vanishing point, homography, fit residuals and the lattice.
std::string serialize_grid(const PerspectiveGrid& grid);
cv::Mat draw_grid_overlay(const cv::Mat& plate, const PerspectiveGrid& grid, const GridMap* map = nullptr);

/// Writes grid.json, plus grid_overlay.png when the background is readable.
PerspectiveGrid run_grid(const std::filesystem::path& scene_file, const std::filesystem::path& out_dir,
                         std::uint64_t r_seed = 0);

struct SimulateParams {
    int agents = 20;
    int frames = 250;
    double fps = 25.0;
    std::optional<std::uint64_t> seed;  // defaults to the scene's rng_seed
};

/// Writes scenario.json and trajectories.csv. Agents walk camera 0's map.
void run_simulate(const LoadedRig& cams, const std::filesystem::path& out_dir, const SimulateParams& params);

struct RenderParams {
    std::filesystem::path sprites;  // sprite manifest; empty: built-in walkers
    unsigned threads = 0;
    CompositorOptions options;
};

SpriteAtlas default_atlas();

/// Reads scenario.json and trajectories.csv from sim_dir.
SequenceManifest run_render(const LoadedRig& cams, const std::filesystem::path& sim_dir,
                            const std::filesystem::path& out_dir, const RenderParams& params);

struct PipelineParams {
    SimulateParams simulate;
    RenderParams render;
    AnnotateOptions annotate;
    EvalOptions evaluate;
};

struct PipelineResult {
    SequenceManifest manifest;
    ExportSummary annotations;
    EvalReport report;
};

/// grid/, sim/, render/, annotations/ and eval/ under out_dir. The evaluation
/// replays the ground truth as detections (eval/detections.jsonl), a closure
/// check of the whole chain.
PipelineResult run_pipeline(const LoadedRig& cams, const std::filesystem::path& out_dir,
                            const PipelineParams& params);

struct DemoParams {
    int width = 960;
    int height = 720;
    int cameras = 2;
    int video_frames = 30;
};

/// Writes a self-contained demo: scene.json (+ scene_cam1.json, rig.json),
/// a short synthetic video/ whose median is background.png, and sprites/.
void write_demo(const std::filesystem::path& out_dir, const DemoParams& params = {});

}  // namespace ccf
