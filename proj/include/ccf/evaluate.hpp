#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ccf/annotate.hpp"
#include "ccf/geometry.hpp"

namespace ccf {

/// Axis-aligned box in continuous pixel coordinates, covering [x, x+w) x [y, y+h).
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    static BoundingBox from(const cv::Rect& r) { return {double(r.x), double(r.y), double(r.width), double(r.height)}; }
    PixelPoint center() const { return {x + 0.5 * w, y + 0.5 * h}; }
    void validate(const std::string& field = "bbox") const;

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Intersection over union in percent; 0 for disjoint boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Tight box around joint positions. Throws DegenerateSkeleton when the
/// joints do not span a box with positive width and height.
BoundingBox box_from_keypoints(const std::vector<PixelPoint>& joints);

struct Detection {
    BoundingBox bbox;
    double score = 1.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectionFrame {
    int frame = 0;
    int camera = 0;
    std::vector<Detection> detections;

    friend bool operator==(const DetectionFrame&, const DetectionFrame&) = default;
};

/// Which box point the Manhattan nearest-box search uses.
enum class MatchAnchor { Center, TopLeft };

struct EvalOptions {
    double score_threshold = 0.5;  // detections with score >= threshold survive
    double found_threshold = 80.0;  // percent IoU
    MatchAnchor anchor = MatchAnchor::Center;
};

/// Per-GT overlap (percent). Each surviving detection goes to the GT box with
/// the smallest Manhattan anchor distance (ties to the lowest GT index); each
/// GT keeps the highest IoU among its detections, 0 when it got none.
std::vector<double> match_detections(const std::vector<BoundingBox>& gt, const std::vector<Detection>& det,
                                     double score_threshold, MatchAnchor anchor = MatchAnchor::Center);

/// Mean GT overlap in percent. Frames without GT score 100 when no detection
/// survived and 0 otherwise.
double frame_accuracy(const std::vector<double>& overlaps, std::size_t surviving_detections);

struct FrameScore {
    int frame = 0;
    int camera = 0;
    int n_gt = 0;
    int n_detections = 0;  // surviving the score threshold
    int n_found = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    EvalOptions params;
    std::vector<FrameScore> frames;  // ground-truth order
    double global_accuracy = 0.0;    // mean accuracy over frames with GT
    double found_rate = 0.0;         // percent of GT boxes with overlap >= found_threshold
    int n_gt = 0;
    int n_found = 0;
};

/// Scores detections against ground truth frame by frame. Every (camera,
/// frame) must appear in both inputs exactly once, else FrameMismatch.
EvalReport evaluate(const std::vector<FrameAnnotation>& gt, const std::vector<DetectionFrame>& det,
                    const EvalOptions& opts = {});

std::string serialize_detections(const std::vector<DetectionFrame>& det);  // JSON lines
std::vector<DetectionFrame> parse_detections(std::string_view jsonl);

/// Ground-truth boxes as detections with the given score.
std::vector<DetectionFrame> replay_ground_truth(const std::vector<FrameAnnotation>& gt, double score = 1.0);

std::string serialize_report(const EvalReport& report);
std::string per_frame_csv(const EvalReport& report);

/// Reads ground_truth.jsonl and detection JSON lines, writes report.json and
/// per_frame.csv into out_dir.
EvalReport evaluate_files(const std::filesystem::path& gt_file, const std::filesystem::path& det_file,
                          const std::filesystem::path& out_dir, const EvalOptions& opts = {});

}  // namespace ccf
