#include "ccf/background.hpp"

#include <algorithm>
#include <sstream>
#include <string>

#include <opencv2/imgcodecs.hpp>

#include "ccf/error.hpp"
#include "ccf/io.hpp"

namespace ccf {

void FrameSequence::validate() const {
    if (!(fps > 0.0)) throw Error(Errc::InvariantViolation, "fps must be > 0", "fps");
    for (std::size_t n = 0; n < frames.size(); ++n) {
        const cv::Mat& f = frames[n];
        if (f.type() != CV_8UC3) {
            throw Error(Errc::InvariantViolation,
                        "frame " + std::to_string(n) + " is not 8-bit 3-channel");
        }
        if (f.cols != width() || f.rows != height()) {
            throw Error(Errc::InvariantViolation,
                        "frame " + std::to_string(n) + " differs in size from frame 0");
        }
    }
}

BackgroundPlate MedianBackgroundExtractor::extract(const FrameSequence& seq,
                                                   const BackgroundOptions& opts) const {
    if (opts.stride < 1) throw Error(Errc::InvariantViolation, "stride must be >= 1", "stride");
    seq.validate();

    std::vector<const cv::Mat*> samples;
    for (std::size_t n = 0; n < seq.frames.size(); n += static_cast<std::size_t>(opts.stride)) {
        samples.push_back(&seq.frames[n]);
    }
    const int n = static_cast<int>(samples.size());
    if (n == 0 || n < opts.min_frames) {
        throw Error(Errc::TooFewFrames, std::to_string(n) + " sampled frames, need " +
                                            std::to_string(std::max(opts.min_frames, 1)));
    }

    const int rows = seq.height();
    const int row_bytes = seq.width() * 3;
    BackgroundPlate plate{cv::Mat(rows, seq.width(), CV_8UC3), n};
    const auto mid = static_cast<std::ptrdiff_t>(n / 2);
    std::vector<unsigned char> buf(static_cast<std::size_t>(n));
    for (int y = 0; y < rows; ++y) {
        unsigned char* out = plate.image.ptr<unsigned char>(y);
        for (int x = 0; x < row_bytes; ++x) {
            for (int s = 0; s < n; ++s) buf[static_cast<std::size_t>(s)] = samples[static_cast<std::size_t>(s)]->ptr<unsigned char>(y)[x];
            std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
            out[x] = buf[static_cast<std::size_t>(mid)];
        }
    }
    return plate;
}

BackgroundPlate extract_background(const FrameSequence& seq, int stride, int min_frames) {
    return MedianBackgroundExtractor{}.extract(seq, {stride, min_frames});
}

namespace {

cv::Mat read_frame(const std::filesystem::path& p) {
    cv::Mat img = cv::imread(p.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw Error(Errc::MissingImage, "cannot read frame " + p.string(), p.string());
    return img;
}

}  // namespace

FrameSequence load_frames(const std::filesystem::path& source, double fps) {
    FrameSequence seq;
    seq.fps = fps;
    std::vector<std::filesystem::path> paths;
    if (std::filesystem::is_directory(source)) {
        for (const auto& entry : std::filesystem::directory_iterator(source)) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") {
                paths.push_back(entry.path());
            }
        }
        std::sort(paths.begin(), paths.end(), [](const auto& a, const auto& b) {
            return a.filename().string() < b.filename().string();
        });
    } else if (std::filesystem::is_regular_file(source)) {
        std::istringstream lines(read_file(source));
        std::string line;
        while (std::getline(lines, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (line.empty() || line.front() == '#') continue;
            paths.push_back(resolve_relative(source, line));
        }
    } else {
        throw Error(Errc::MissingImage, "frame source not found: " + source.string(), source.string());
    }
    seq.frames.reserve(paths.size());
    for (const auto& p : paths) seq.frames.push_back(read_frame(p));
    seq.validate();
    return seq;
}

void write_plate(const BackgroundPlate& plate, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), plate.image)) {
        throw Error(Errc::Io, "cannot write " + path.string(), path.string());
    }
}

}  // namespace ccf
