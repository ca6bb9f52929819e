#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "ccf/scene.hpp"
#include "ccf/simulation.hpp"

namespace ccf {

struct NamedPoint {
    std::string name;
    PixelPoint p;  // normalized (u, v) in sprite space, or pixels once placed

    friend bool operator==(const NamedPoint&, const NamedPoint&) = default;
};

/// Joints every sprite has to label.
extern const std::array<const char*, 14> kRequiredKeypoints;

/// Pre-rendered billboard. The sprite faces +lateral (screen right); its
/// image spans the full figure height.
struct SpriteAsset {
    std::string id;
    std::vector<cv::Mat> walk_frames;  // CV_8UC4, straight alpha, equal sizes
    double physical_height_m = 1.75;
    PixelPoint anchor{0.5, 1.0};  // foot midpoint, normalized
    std::vector<NamedPoint> keypoints;

    /// Throws NoAlpha / BadKeypoint / SchemaViolation.
    void validate(const std::string& field = "sprite") const;
};

using SpriteAtlas = std::vector<SpriteAsset>;

/// Manifest: {sprites:[{id, frames:[png...], physical_height_m, anchor:[u,v], keypoints:{name:[u,v]}}]},
/// image paths relative to the manifest.
SpriteAtlas load_sprite_atlas(const std::filesystem::path& manifest);
/// Writes `<dir>/sprites.json` plus one PNG per walk frame.
std::filesystem::path save_sprite_atlas(const SpriteAtlas& atlas, const std::filesystem::path& dir);

/// Procedural walking figure with a 4-frame cycle; `variant` changes colours
/// and build. Used by the demo generator and tests.
SpriteAsset make_walker_sprite(int variant, int height_px = 160);

/// Sprite named by the agent, or (id - 1) mod atlas size when unnamed.
const SpriteAsset& select_sprite(const SpriteAtlas& atlas, const AgentSpec& agent);

struct CompositorOptions {
    int alpha_threshold = 8;  // of 255
    double stride_m = 0.75;
    double max_height_factor = 8.0;  // sprites taller than this x image height are skipped
};

struct Placement {
    int agent_id = 0;
    WorldPoint world_pos;  // rendering camera's ground frame
    double depth_m = 0.0;  // world_pos.y relative to the camera's depth reference
    PixelPoint foot_px;
    cv::Rect sprite_rect;  // full scaled sprite, may extend past the image
    cv::Rect screen_rect;  // tight bound of owned mask pixels; empty when hidden
    bool mirrored = false;
    int walk_frame = 0;
    std::vector<NamedPoint> keypoints_px;
    cv::Mat image;  // scaled (and mirrored) BGRA sprite
};

/// Throws HorizonSingularity when the foot point cannot be imaged.
Placement place_agent(const PerspectiveGrid& grid, const SpriteAsset& asset, const AgentSpec& agent,
                      WorldPoint pos, double heading_rad, double distance_travelled_m,
                      const CompositorOptions& opts = {}, double depth_reference_m = 0.0);

struct RenderedFrame {
    cv::Mat rgb;    // CV_8UC3 (BGR)
    cv::Mat mask;   // CV_16UC1, agent id or 0
    cv::Mat depth;  // CV_32FC1, metres, +inf where no agent
    std::vector<Placement> placements;  // screen_rect filled in
};

/// Painter's algorithm: farther first (ties: higher id first, so the lower id
/// ends on top). Pixels are blended only where alpha > threshold, which keeps
/// unmasked pixels equal to the plate.
RenderedFrame render_frame(const cv::Mat& plate, std::vector<Placement> placements,
                           const CompositorOptions& opts = {});

/// Ground depth of the bottom-centre image point; depth buffers are written
/// relative to it so visible agents have non-negative depth.
double depth_reference(const PerspectiveGrid& grid);

struct CameraOutput {
    std::size_t index = 0;
    std::string dir;  // relative to the output root
    int width = 0;
    int height = 0;
    double depth_reference_m = 0.0;
    std::size_t placements = 0;
    std::size_t skipped = 0;  // horizon or oversize
    std::string scene_hash;
};

struct SequenceManifest {
    int frames = 0;
    int agents = 0;
    double fps = 25.0;
    std::vector<CameraOutput> cameras;
    std::string scenario_hash;
    std::string trajectories_hash;
    std::string atlas_hash;
};

std::string serialize_manifest(const SequenceManifest& m);
SequenceManifest parse_manifest(std::string_view text);
SequenceManifest load_manifest(const std::filesystem::path& out_dir);

struct RenderJob {
    const CameraRig* rig = nullptr;
    std::vector<cv::Mat> plates;  // one per camera
    const Scenario* scenario = nullptr;
    const std::vector<Trajectory>* trajectories = nullptr;
    const SpriteAtlas* atlas = nullptr;
    CompositorOptions options;
    unsigned threads = 0;  // 0: hardware concurrency
};

/// Writes `cam_XX/{frame,mask,depth}_%06d.png`, `cam_XX/placements.jsonl`
/// and `manifest.json` under out_dir.
SequenceManifest render_sequence(const RenderJob& job, const std::filesystem::path& out_dir);

/// Placements for one frame as stored in placements.jsonl (no images).
struct PlacementRecord {
    int agent_id = 0;
    cv::Rect screen_rect;
    PixelPoint foot_px;
    WorldPoint world_pos;
    double depth_m = 0.0;
    std::vector<NamedPoint> keypoints_px;
};

struct FramePlacements {
    int frame = 0;
    std::vector<PlacementRecord> placements;
};

std::string serialize_frame_placements(int frame, const std::vector<Placement>& placements);
std::vector<FramePlacements> parse_placements(std::string_view jsonl);

/// 16-bit millimetre encoding; 65535 marks background.
cv::Mat encode_depth_mm(const cv::Mat& depth_m);

}  // namespace ccf
