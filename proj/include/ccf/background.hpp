#pragma once

#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

namespace ccf {

/// Source footage, 8-bit three-channel frames (OpenCV BGR order) of one size.
struct FrameSequence {
    std::vector<cv::Mat> frames;
    double fps = 25.0;

    int width() const { return frames.empty() ? 0 : frames.front().cols; }
    int height() const { return frames.empty() ? 0 : frames.front().rows; }
    /// Throws InvariantViolation on mixed sizes, wrong pixel type or fps <= 0.
    void validate() const;
};

struct BackgroundPlate {
    cv::Mat image;
    int n_samples = 0;
};

struct BackgroundOptions {
    int stride = 1;
    int min_frames = 25;
};

/// Seam for alternative background models.
class BackgroundExtractor {
public:
    virtual ~BackgroundExtractor() = default;
    virtual BackgroundPlate extract(const FrameSequence& seq, const BackgroundOptions& opts) const = 0;
};

/// Per-pixel, per-channel temporal median over every `stride`-th frame. For an
/// even sample count the element at index n/2 of the sorted samples is used,
/// so the result stays in the 8-bit domain.
class MedianBackgroundExtractor final : public BackgroundExtractor {
public:
    BackgroundPlate extract(const FrameSequence& seq, const BackgroundOptions& opts) const override;
};

BackgroundPlate extract_background(const FrameSequence& seq, int stride, int min_frames = 25);

/// Reads every .png in a directory (sorted by filename) or, when `source` is
/// a file, a manifest listing one image path per line (relative to the
/// manifest; blank lines and '#' comments ignored).
FrameSequence load_frames(const std::filesystem::path& source, double fps = 25.0);

void write_plate(const BackgroundPlate& plate, const std::filesystem::path& path);

}  // namespace ccf
