#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "ccf/compositor.hpp"

namespace ccf {

/// Keypoint visibility, three-state as in common keypoint datasets.
enum class KeypointVisibility : int { NotLabeled = 0, Occluded = 1, Visible = 2 };

struct AnnotatedKeypoint {
    std::string name;
    int x = 0;
    int y = 0;
    KeypointVisibility v = KeypointVisibility::NotLabeled;  // off-image points are (0, 0, NotLabeled)

    friend bool operator==(const AnnotatedKeypoint&, const AnnotatedKeypoint&) = default;
};

struct AnnotationEntry {
    int track_id = 0;
    cv::Rect bbox;
    std::vector<AnnotatedKeypoint> keypoints;  // sorted by name
    int area_px = 0;

    friend bool operator==(const AnnotationEntry&, const AnnotationEntry&) = default;
};

struct FrameAnnotation {
    int frame = 0;
    int camera = 0;
    std::vector<AnnotationEntry> entries;  // ordered by track_id

    friend bool operator==(const FrameAnnotation&, const FrameAnnotation&) = default;
};

struct AnnotateOptions {
    int min_visible_px = 25;
    double density_sigma_px = 0.0;  // > 0 enables density maps in export_dataset
};

PlacementRecord to_record(const Placement& p);

/// One entry per placed agent with at least min_visible_px mask pixels; bbox
/// is the tight bound of those pixels. Throws ManifestMismatch when the mask
/// holds an id that has no placement.
FrameAnnotation annotate_frame(const cv::Mat& mask, const std::vector<PlacementRecord>& placements, int frame,
                               int camera, const AnnotateOptions& opts = {});
FrameAnnotation annotate_frame(const RenderedFrame& rendered, int frame, int camera,
                               const AnnotateOptions& opts = {});

/// Sum of unit-mass Gaussians (renormalized after clipping) at each entry's
/// head keypoint, or bbox top-centre when the head is off-image.
cv::Mat density_map(const FrameAnnotation& ann, cv::Size size, double sigma_px);

/// 16-byte header ("CCFDENS1", uint32 width, uint32 height, little endian)
/// followed by row-major float32.
std::string encode_density(const cv::Mat& density);
cv::Mat decode_density(std::string_view bytes);

std::string serialize_annotation(const FrameAnnotation& ann);  // one JSON line
std::vector<FrameAnnotation> parse_annotations(std::string_view jsonl);
std::string tracks_csv(const std::vector<FrameAnnotation>& anns);

struct ExportSummary {
    std::size_t records = 0;
    std::size_t entries = 0;
    /// (camera, track) pairs whose placed frames are not one contiguous run.
    std::vector<std::pair<int, int>> broken_tracks;
};

/// Agents whose placement frames per camera are not one contiguous run.
std::vector<std::pair<int, int>> broken_tracks(const std::vector<std::vector<FramePlacements>>& per_camera);

/// Reads a render directory (manifest.json, cam_XX/...) and writes
/// ground_truth.jsonl, tracks.csv and, with a density sigma,
/// density/cam_XX/density_%06d.bin into out_dir.
ExportSummary export_dataset(const std::filesystem::path& render_dir, const std::filesystem::path& out_dir,
                             const AnnotateOptions& opts = {});

}  // namespace ccf
