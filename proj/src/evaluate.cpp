#include "ccf/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <tuple>

#include "ccf/error.hpp"
#include "ccf/io.hpp"
#include "json_fields.hpp"

namespace ccf {

using detail::Fields;
using ojson = detail::ordered_json;

void BoundingBox::validate(const std::string& field) const {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(w) || !std::isfinite(h)) {
        throw Error(Errc::SchemaViolation, field + ": box coordinates must be finite", field);
    }
    if (!(w > 0.0) || !(h > 0.0)) throw Error(Errc::SchemaViolation, field + ": box needs w > 0 and h > 0", field);
}

namespace {

// Overlap of [0, wa) and [d, d + wb). Working from the offset keeps identical
// intervals exact, where (x + w) - x would round.
double overlap_1d(double wa, double d, double wb) { return std::min(wa, d + wb) - std::max(0.0, d); }

}  // namespace

double iou(const BoundingBox& a, const BoundingBox& b) {
    // Canonical argument order makes the result bit-symmetric.
    if (std::tie(b.x, b.y, b.w, b.h) < std::tie(a.x, a.y, a.w, a.h)) return iou(b, a);
    const double iw = overlap_1d(a.w, b.x - a.x, b.w);
    const double ih = overlap_1d(a.h, b.y - a.y, b.h);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    if (!(uni > 0.0)) return 0.0;
    return std::clamp(100.0 * (inter / uni), 0.0, 100.0);
}

BoundingBox box_from_keypoints(const std::vector<PixelPoint>& joints) {
    if (joints.empty()) throw Error(Errc::DegenerateSkeleton, "no joints");
    double x0 = joints[0].x, y0 = joints[0].y, x1 = x0, y1 = y0;
    for (const auto& j : joints) {
        x0 = std::min(x0, j.x);
        y0 = std::min(y0, j.y);
        x1 = std::max(x1, j.x);
        y1 = std::max(y1, j.y);
    }
    if (!(x1 > x0) || !(y1 > y0)) throw Error(Errc::DegenerateSkeleton, "joints span no area");
    return {x0, y0, x1 - x0, y1 - y0};
}

namespace {

PixelPoint anchor_of(const BoundingBox& b, MatchAnchor anchor) {
    return anchor == MatchAnchor::Center ? b.center() : PixelPoint{b.x, b.y};
}

}  // namespace

std::vector<double> match_detections(const std::vector<BoundingBox>& gt, const std::vector<Detection>& det,
                                     double score_threshold, MatchAnchor anchor) {
    std::vector<double> overlap(gt.size(), 0.0);
    if (gt.empty()) return overlap;
    for (const auto& d : det) {
        if (d.score < score_threshold) continue;
        const PixelPoint p = anchor_of(d.bbox, anchor);
        std::size_t best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const PixelPoint q = anchor_of(gt[g], anchor);
            const double dist = std::abs(p.x - q.x) + std::abs(p.y - q.y);
            if (dist < best_dist) {
                best_dist = dist;
                best = g;
            }
        }
        overlap[best] = std::max(overlap[best], iou(gt[best], d.bbox));
    }
    return overlap;
}

double frame_accuracy(const std::vector<double>& overlaps, std::size_t surviving_detections) {
    if (overlaps.empty()) return surviving_detections == 0 ? 100.0 : 0.0;
    double sum = 0.0;
    for (double o : overlaps) sum += o;
    return sum / static_cast<double>(overlaps.size());
}

EvalReport evaluate(const std::vector<FrameAnnotation>& gt, const std::vector<DetectionFrame>& det,
                    const EvalOptions& opts) {
    if (!(opts.found_threshold >= 0.0 && opts.found_threshold <= 100.0)) {
        throw Error(Errc::InvariantViolation, "found threshold must be in [0, 100]", "found_threshold");
    }
    if (!std::isfinite(opts.score_threshold)) {
        throw Error(Errc::InvariantViolation, "score threshold must be finite", "score_threshold");
    }
    auto key_name = [](int camera, int frame) {
        return "camera " + std::to_string(camera) + " frame " + std::to_string(frame);
    };

    std::map<std::pair<int, int>, const DetectionFrame*> by_key;
    for (const auto& d : det) {
        if (!by_key.emplace(std::pair{d.camera, d.frame}, &d).second) {
            throw Error(Errc::FrameMismatch, "duplicate detections for " + key_name(d.camera, d.frame));
        }
    }
    std::vector<std::string> missing;
    std::map<std::pair<int, int>, bool> seen;
    for (const auto& a : gt) {
        if (!seen.emplace(std::pair{a.camera, a.frame}, true).second) {
            throw Error(Errc::FrameMismatch, "duplicate ground truth for " + key_name(a.camera, a.frame));
        }
        if (!by_key.count({a.camera, a.frame})) missing.push_back("detections lack " + key_name(a.camera, a.frame));
    }
    for (const auto& [k, d] : by_key) {
        if (!seen.count(k)) missing.push_back("ground truth lacks " + key_name(k.first, k.second));
    }
    if (!missing.empty()) {
        std::string msg;
        const std::size_t shown = std::min<std::size_t>(missing.size(), 10);
        for (std::size_t n = 0; n < shown; ++n) msg += (n ? "; " : "") + missing[n];
        if (missing.size() > shown) msg += "; ... (" + std::to_string(missing.size()) + " in total)";
        throw Error(Errc::FrameMismatch, msg);
    }

    EvalReport report;
    report.params = opts;
    double acc_sum = 0.0;
    int gt_frames = 0;
    for (const auto& a : gt) {
        const DetectionFrame& d = *by_key.at({a.camera, a.frame});
        std::vector<BoundingBox> boxes;
        boxes.reserve(a.entries.size());
        for (const auto& e : a.entries) boxes.push_back(BoundingBox::from(e.bbox));
        const auto overlaps = match_detections(boxes, d.detections, opts.score_threshold, opts.anchor);
        FrameScore s;
        s.frame = a.frame;
        s.camera = a.camera;
        s.n_gt = static_cast<int>(boxes.size());
        s.n_detections = static_cast<int>(std::count_if(d.detections.begin(), d.detections.end(), [&](const auto& x) {
            return x.score >= opts.score_threshold;
        }));
        s.n_found = static_cast<int>(
            std::count_if(overlaps.begin(), overlaps.end(), [&](double o) { return o >= opts.found_threshold; }));
        s.accuracy = frame_accuracy(overlaps, static_cast<std::size_t>(s.n_detections));
        if (s.n_gt > 0) {
            acc_sum += s.accuracy;
            ++gt_frames;
        }
        report.n_gt += s.n_gt;
        report.n_found += s.n_found;
        report.frames.push_back(s);
    }
    if (gt_frames > 0) {
        report.global_accuracy = acc_sum / gt_frames;
    } else {
        // Only empty frames: fall back to their convention.
        double sum = 0.0;
        for (const auto& s : report.frames) sum += s.accuracy;
        report.global_accuracy = report.frames.empty() ? 100.0 : sum / static_cast<double>(report.frames.size());
    }
    report.found_rate = report.n_gt > 0 ? 100.0 * report.n_found / report.n_gt : 100.0;
    return report;
}

std::string serialize_detections(const std::vector<DetectionFrame>& det) {
    std::string out;
    for (const auto& d : det) {
        ojson doc;
        doc["frame"] = d.frame;
        doc["camera"] = d.camera;
        ojson list = ojson::array();
        for (const auto& x : d.detections) {
            ojson j;
            j["bbox"] = {detail::persisted(x.bbox.x), detail::persisted(x.bbox.y), detail::persisted(x.bbox.w),
                         detail::persisted(x.bbox.h)};
            j["score"] = detail::persisted(x.score);
            list.push_back(std::move(j));
        }
        doc["detections"] = std::move(list);
        out += doc.dump();
        out += '\n';
    }
    return out;
}

std::vector<DetectionFrame> parse_detections(std::string_view jsonl) {
    std::vector<DetectionFrame> out;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos < jsonl.size()) {
        std::size_t end = jsonl.find('\n', pos);
        if (end == std::string_view::npos) end = jsonl.size();
        std::string_view line = jsonl.substr(pos, end - pos);
        pos = end + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        const std::string where = "line " + std::to_string(lineno);
        const auto doc = detail::parse_json(line, where);
        Fields f(doc, where);
        DetectionFrame d;
        d.frame = f.int32("frame");
        d.camera = f.optional("camera") ? detail::as_int32(doc["camera"], f.at("camera")) : 0;
        const auto& list = detail::as_array(f.required("detections"), f.at("detections"));
        f.reject_unknown();
        for (std::size_t n = 0; n < list.size(); ++n) {
            const std::string path = detail::index(f.at("detections"), n);
            Fields e(list[n], path);
            Detection x;
            const auto& bbox = detail::as_array(e.required("bbox"), e.at("bbox"));
            if (bbox.size() != 4) detail::schema_error(e.at("bbox"), "expected [x, y, w, h]");
            x.bbox = {detail::as_number(bbox[0], e.at("bbox")), detail::as_number(bbox[1], e.at("bbox")),
                      detail::as_number(bbox[2], e.at("bbox")), detail::as_number(bbox[3], e.at("bbox"))};
            x.bbox.validate(e.at("bbox"));
            x.score = e.number("score");
            if (x.score < 0.0 || x.score > 1.0) detail::schema_error(e.at("score"), "score must be in [0, 1]");
            e.reject_unknown();
            d.detections.push_back(x);
        }
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<DetectionFrame> replay_ground_truth(const std::vector<FrameAnnotation>& gt, double score) {
    std::vector<DetectionFrame> out;
    out.reserve(gt.size());
    for (const auto& a : gt) {
        DetectionFrame d{a.frame, a.camera, {}};
        for (const auto& e : a.entries) d.detections.push_back({BoundingBox::from(e.bbox), score});
        out.push_back(std::move(d));
    }
    return out;
}

std::string serialize_report(const EvalReport& r) {
    ojson doc;
    doc["params"] = {{"score_threshold", detail::persisted(r.params.score_threshold)},
                     {"found_threshold", detail::persisted(r.params.found_threshold)},
                     {"match_anchor", r.params.anchor == MatchAnchor::Center ? "center" : "top_left"}};
    doc["global_accuracy"] = detail::persisted(r.global_accuracy);
    doc["found_rate"] = detail::persisted(r.found_rate);
    doc["n_frames"] = r.frames.size();
    doc["n_gt"] = r.n_gt;
    doc["n_found"] = r.n_found;
    ojson per = ojson::array();
    for (const auto& s : r.frames) per.push_back(detail::persisted(s.accuracy));
    doc["per_frame_accuracy"] = std::move(per);
    return doc.dump(2) + "\n";
}

std::string per_frame_csv(const EvalReport& r) {
    std::string out = "camera,frame,n_gt,n_detections,n_found,accuracy\n";
    char line[128];
    for (const auto& s : r.frames) {
        std::snprintf(line, sizeof line, "%d,%d,%d,%d,%d,%.6f\n", s.camera, s.frame, s.n_gt, s.n_detections,
                      s.n_found, s.accuracy);
        out += line;
    }
    return out;
}

EvalReport evaluate_files(const std::filesystem::path& gt_file, const std::filesystem::path& det_file,
                          const std::filesystem::path& out_dir, const EvalOptions& opts) {
    const auto gt = parse_annotations(read_file(gt_file));
    const auto det = parse_detections(read_file(det_file));
    const EvalReport report = evaluate(gt, det, opts);
    std::filesystem::create_directories(out_dir);
    write_file(out_dir / "report.json", serialize_report(report));
    write_file(out_dir / "per_frame.csv", per_frame_csv(report));
    return report;
}

}  // namespace ccf
