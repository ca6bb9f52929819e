#include "ccf/annotate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <opencv2/imgcodecs.hpp>

#include "ccf/error.hpp"
#include "ccf/io.hpp"
#include "json_fields.hpp"

namespace ccf {

using detail::Fields;
using ojson = detail::ordered_json;

namespace {

constexpr char kDensityMagic[8] = {'C', 'C', 'F', 'D', 'E', 'N', 'S', '1'};

[[noreturn]] void mismatch(const std::string& what, const std::string& field = {}) {
    throw Error(Errc::ManifestMismatch, what, field);
}

struct Extent {
    int count = 0;
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
};

}  // namespace

PlacementRecord to_record(const Placement& p) {
    return {p.agent_id, p.screen_rect, p.foot_px, p.world_pos, p.depth_m, p.keypoints_px};
}

FrameAnnotation annotate_frame(const cv::Mat& mask, const std::vector<PlacementRecord>& placements, int frame,
                               int camera, const AnnotateOptions& opts) {
    if (mask.type() != CV_16UC1) mismatch("frame " + std::to_string(frame) + ": mask is not 16-bit single channel");
    int max_id = 0;
    for (const auto& p : placements) max_id = std::max(max_id, p.agent_id);
    std::vector<Extent> ext(static_cast<std::size_t>(max_id) + 1);
    for (int y = 0; y < mask.rows; ++y) {
        const std::uint16_t* m = mask.ptr<std::uint16_t>(y);
        for (int x = 0; x < mask.cols; ++x) {
            const int id = m[x];
            if (id == 0) continue;
            if (id > max_id) {
                mismatch("frame " + std::to_string(frame) + ": mask id " + std::to_string(id) + " has no placement");
            }
            Extent& e = ext[static_cast<std::size_t>(id)];
            if (e.count++ == 0) {
                e.x0 = e.x1 = x;
                e.y0 = e.y1 = y;
            } else {
                e.x0 = std::min(e.x0, x);
                e.x1 = std::max(e.x1, x);
                e.y1 = y;
            }
        }
    }

    std::vector<const PlacementRecord*> order;
    for (const auto& p : placements) order.push_back(&p);
    std::sort(order.begin(), order.end(),
              [](const PlacementRecord* a, const PlacementRecord* b) { return a->agent_id < b->agent_id; });

    FrameAnnotation ann{frame, camera, {}};
    for (const PlacementRecord* p : order) {
        if (p->agent_id <= 0) continue;
        const Extent& e = ext[static_cast<std::size_t>(p->agent_id)];
        if (e.count < opts.min_visible_px || e.count == 0) continue;
        AnnotationEntry entry;
        entry.track_id = p->agent_id;
        entry.bbox = cv::Rect(e.x0, e.y0, e.x1 - e.x0 + 1, e.y1 - e.y0 + 1);
        entry.area_px = e.count;
        for (const auto& kp : p->keypoints_px) {
            AnnotatedKeypoint k{kp.name, 0, 0, KeypointVisibility::NotLabeled};
            const double fx = std::floor(kp.p.x);
            const double fy = std::floor(kp.p.y);
            if (fx >= 0 && fy >= 0 && fx < mask.cols && fy < mask.rows) {
                k.x = static_cast<int>(fx);
                k.y = static_cast<int>(fy);
                k.v = mask.at<std::uint16_t>(k.y, k.x) == p->agent_id ? KeypointVisibility::Visible
                                                                       : KeypointVisibility::Occluded;
            }
            entry.keypoints.push_back(std::move(k));
        }
        // canonical order, matching what a JSON object parse yields
        std::sort(entry.keypoints.begin(), entry.keypoints.end(),
                  [](const auto& a, const auto& b) { return a.name < b.name; });
        ann.entries.push_back(std::move(entry));
    }
    return ann;
}

FrameAnnotation annotate_frame(const RenderedFrame& rendered, int frame, int camera, const AnnotateOptions& opts) {
    std::vector<PlacementRecord> records;
    for (const auto& p : rendered.placements) records.push_back(to_record(p));
    return annotate_frame(rendered.mask, records, frame, camera, opts);
}

cv::Mat density_map(const FrameAnnotation& ann, cv::Size size, double sigma_px) {
    if (!(sigma_px > 0.0)) {
        throw Error(Errc::InvariantViolation, "density sigma must be > 0", "density_sigma_px");
    }
    cv::Mat acc = cv::Mat::zeros(size, CV_64FC1);
    const int radius = static_cast<int>(std::ceil(4.0 * sigma_px));
    const double inv = 1.0 / (2.0 * sigma_px * sigma_px);
    std::vector<double> kernel;
    for (const auto& e : ann.entries) {
        // Centre of the pixel holding the point, as for keypoints.
        double cx = e.bbox.x + e.bbox.width / 2 + 0.5;
        double cy = e.bbox.y + 0.5;
        for (const auto& k : e.keypoints) {
            if (k.name == "head" && k.v != KeypointVisibility::NotLabeled) {
                cx = k.x + 0.5;
                cy = k.y + 0.5;
            }
        }
        const int px = static_cast<int>(std::floor(cx));
        const int py = static_cast<int>(std::floor(cy));
        const cv::Rect win = cv::Rect(px - radius, py - radius, 2 * radius + 1, 2 * radius + 1) &
                             cv::Rect(0, 0, size.width, size.height);
        if (win.empty()) continue;
        kernel.assign(static_cast<std::size_t>(win.area()), 0.0);
        double total = 0.0;
        std::size_t n = 0;
        for (int y = win.y; y < win.y + win.height; ++y) {
            for (int x = win.x; x < win.x + win.width; ++x, ++n) {
                const double dx = x + 0.5 - cx;
                const double dy = y + 0.5 - cy;
                kernel[n] = std::exp(-(dx * dx + dy * dy) * inv);
                total += kernel[n];
            }
        }
        n = 0;
        for (int y = win.y; y < win.y + win.height; ++y) {
            double* row = acc.ptr<double>(y);
            for (int x = win.x; x < win.x + win.width; ++x, ++n) row[x] += kernel[n] / total;
        }
    }
    cv::Mat out;
    acc.convertTo(out, CV_32FC1);
    return out;
}

std::string encode_density(const cv::Mat& density) {
    if (density.type() != CV_32FC1) throw Error(Errc::InvariantViolation, "density map must be float32");
    std::string out(16 + density.total() * 4, '\0');
    std::memcpy(out.data(), kDensityMagic, 8);
    auto put32 = [&](std::size_t at, std::uint32_t v) {
        for (int b = 0; b < 4; ++b) out[at + static_cast<std::size_t>(b)] = static_cast<char>((v >> (8 * b)) & 0xff);
    };
    put32(8, static_cast<std::uint32_t>(density.cols));
    put32(12, static_cast<std::uint32_t>(density.rows));
    std::size_t at = 16;
    for (int y = 0; y < density.rows; ++y) {
        const float* row = density.ptr<float>(y);
        for (int x = 0; x < density.cols; ++x, at += 4) {
            std::uint32_t bits;
            std::memcpy(&bits, &row[x], 4);
            put32(at, bits);
        }
    }
    return out;
}

cv::Mat decode_density(std::string_view bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kDensityMagic, 8) != 0) {
        detail::schema_error("density", "bad density header");
    }
    auto get32 = [&](std::size_t at) {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + static_cast<std::size_t>(b)])) << (8 * b);
        return v;
    };
    const std::uint32_t w = get32(8);
    const std::uint32_t h = get32(12);
    if (bytes.size() != 16 + static_cast<std::size_t>(w) * h * 4) detail::schema_error("density", "size does not match header");
    cv::Mat out(static_cast<int>(h), static_cast<int>(w), CV_32FC1);
    std::size_t at = 16;
    for (int y = 0; y < out.rows; ++y) {
        float* row = out.ptr<float>(y);
        for (int x = 0; x < out.cols; ++x, at += 4) {
            const std::uint32_t bits = get32(at);
            std::memcpy(&row[x], &bits, 4);
        }
    }
    return out;
}

std::string serialize_annotation(const FrameAnnotation& ann) {
    ojson doc;
    doc["frame"] = ann.frame;
    doc["camera"] = ann.camera;
    ojson entries = ojson::array();
    for (const auto& e : ann.entries) {
        ojson j;
        j["track_id"] = e.track_id;
        j["bbox"] = {e.bbox.x, e.bbox.y, e.bbox.width, e.bbox.height};
        ojson kps = ojson::object();
        for (const auto& k : e.keypoints) kps[k.name] = {k.x, k.y, static_cast<int>(k.v)};
        j["keypoints"] = std::move(kps);
        j["area_px"] = e.area_px;
        entries.push_back(std::move(j));
    }
    doc["entries"] = std::move(entries);
    return doc.dump();
}

std::vector<FrameAnnotation> parse_annotations(std::string_view jsonl) {
    std::vector<FrameAnnotation> out;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos < jsonl.size()) {
        std::size_t end = jsonl.find('\n', pos);
        if (end == std::string_view::npos) end = jsonl.size();
        const std::string_view line = jsonl.substr(pos, end - pos);
        pos = end + 1;
        ++lineno;
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(lineno);
        const auto doc = detail::parse_json(line, where);
        Fields f(doc, where);
        FrameAnnotation ann;
        ann.frame = f.int32("frame");
        ann.camera = f.int32("camera");
        const auto& entries = detail::as_array(f.required("entries"), f.at("entries"));
        f.reject_unknown();
        for (std::size_t n = 0; n < entries.size(); ++n) {
            const std::string epath = detail::index(f.at("entries"), n);
            Fields e(entries[n], epath);
            AnnotationEntry entry;
            entry.track_id = e.int32("track_id");
            const auto& bbox = detail::as_array(e.required("bbox"), e.at("bbox"));
            if (bbox.size() != 4) detail::schema_error(e.at("bbox"), "expected [x, y, w, h]");
            entry.bbox = cv::Rect(detail::as_int32(bbox[0], e.at("bbox")), detail::as_int32(bbox[1], e.at("bbox")),
                                  detail::as_int32(bbox[2], e.at("bbox")), detail::as_int32(bbox[3], e.at("bbox")));
            if (const auto* area = e.optional("area_px")) entry.area_px = detail::as_int32(*area, e.at("area_px"));
            const auto& kps = e.required("keypoints");
            if (!kps.is_object()) detail::schema_error(e.at("keypoints"), "expected an object");
            for (auto it = kps.begin(); it != kps.end(); ++it) {
                const std::string kpath = e.at("keypoints") + "." + it.key();
                if (!it.value().is_array() || it.value().size() != 3) detail::schema_error(kpath, "expected [x, y, v]");
                const int v = detail::as_int32(it.value()[2], kpath);
                if (v < 0 || v > 2) detail::schema_error(kpath, "visibility must be 0, 1 or 2");
                entry.keypoints.push_back({it.key(), detail::as_int32(it.value()[0], kpath),
                                           detail::as_int32(it.value()[1], kpath), static_cast<KeypointVisibility>(v)});
            }
            e.reject_unknown();
            ann.entries.push_back(std::move(entry));
        }
        out.push_back(std::move(ann));
    }
    return out;
}

std::string tracks_csv(const std::vector<FrameAnnotation>& anns) {
    std::string out = "frame,camera,track_id,x,y,w,h\n";
    char line[96];
    for (const auto& a : anns) {
        for (const auto& e : a.entries) {
            std::snprintf(line, sizeof line, "%d,%d,%d,%d,%d,%d,%d\n", a.frame, a.camera, e.track_id, e.bbox.x,
                          e.bbox.y, e.bbox.width, e.bbox.height);
            out += line;
        }
    }
    return out;
}

std::vector<std::pair<int, int>> broken_tracks(const std::vector<std::vector<FramePlacements>>& per_camera) {
    std::vector<std::pair<int, int>> broken;
    for (std::size_t cam = 0; cam < per_camera.size(); ++cam) {
        std::map<int, std::pair<int, int>> span;  // id -> (first, last)
        std::map<int, int> count;
        for (const auto& fp : per_camera[cam]) {
            for (const auto& p : fp.placements) {
                auto [it, fresh] = span.try_emplace(p.agent_id, fp.frame, fp.frame);
                if (!fresh) {
                    it->second.first = std::min(it->second.first, fp.frame);
                    it->second.second = std::max(it->second.second, fp.frame);
                }
                ++count[p.agent_id];
            }
        }
        for (const auto& [id, s] : span) {
            if (s.second - s.first + 1 != count[id]) broken.emplace_back(static_cast<int>(cam), id);
        }
    }
    return broken;
}

namespace {

std::string numbered(const char* prefix, int frame, const char* ext) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s_%06d.%s", prefix, frame, ext);
    return buf;
}

}  // namespace

ExportSummary export_dataset(const std::filesystem::path& render_dir, const std::filesystem::path& out_dir,
                             const AnnotateOptions& opts) {
    const SequenceManifest manifest = load_manifest(render_dir);
    std::vector<std::vector<FramePlacements>> placements;
    for (std::size_t c = 0; c < manifest.cameras.size(); ++c) {
        const CameraOutput& cam = manifest.cameras[c];
        const auto file = render_dir / cam.dir / "placements.jsonl";
        if (!std::filesystem::is_regular_file(file)) mismatch("missing " + file.string(), file.string());
        auto frames = parse_placements(read_file(file));
        if (static_cast<int>(frames.size()) != manifest.frames) {
            mismatch(cam.dir + ": " + std::to_string(frames.size()) + " placement records for " +
                         std::to_string(manifest.frames) + " frames",
                     file.string());
        }
        for (int f = 0; f < manifest.frames; ++f) {
            if (frames[static_cast<std::size_t>(f)].frame != f) {
                mismatch(cam.dir + ": placement record " + std::to_string(f) + " is for frame " +
                             std::to_string(frames[static_cast<std::size_t>(f)].frame),
                         file.string());
            }
        }
        placements.push_back(std::move(frames));
    }

    std::vector<FrameAnnotation> all;
    const unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t c = 0; c < manifest.cameras.size(); ++c) {
        const CameraOutput& cam = manifest.cameras[c];
        const auto cam_dir = render_dir / cam.dir;
        const auto density_dir = out_dir / "density" / cam.dir;
        if (opts.density_sigma_px > 0.0) std::filesystem::create_directories(density_dir);
        std::vector<FrameAnnotation> anns(static_cast<std::size_t>(manifest.frames));
        std::atomic<int> next{0};
        std::exception_ptr failure;
        std::mutex mu;
        auto worker = [&] {
            try {
                for (int f = next++; f < manifest.frames; f = next++) {
                    const auto mask_path = cam_dir / numbered("mask", f, "png");
                    const cv::Mat mask = cv::imread(mask_path.string(), cv::IMREAD_UNCHANGED);
                    if (mask.empty()) mismatch("frame " + std::to_string(f) + ": missing " + mask_path.string(), mask_path.string());
                    if (mask.cols != cam.width || mask.rows != cam.height) {
                        mismatch("frame " + std::to_string(f) + ": mask size differs from manifest", mask_path.string());
                    }
                    FrameAnnotation ann = annotate_frame(mask, placements[c][static_cast<std::size_t>(f)].placements, f,
                                                         static_cast<int>(cam.index), opts);
                    if (opts.density_sigma_px > 0.0) {
                        write_file(density_dir / numbered("density", f, "bin"),
                                   encode_density(density_map(ann, mask.size(), opts.density_sigma_px)));
                    }
                    anns[static_cast<std::size_t>(f)] = std::move(ann);
                }
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                next = manifest.frames;
            }
        };
        std::vector<std::thread> pool;
        for (unsigned n = 1; n < threads; ++n) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
        for (auto& a : anns) all.push_back(std::move(a));
    }

    ExportSummary summary;
    std::string gt;
    for (const auto& a : all) {
        gt += serialize_annotation(a);
        gt += '\n';
        summary.entries += a.entries.size();
    }
    summary.records = all.size();
    write_file(out_dir / "ground_truth.jsonl", gt);
    write_file(out_dir / "tracks.csv", tracks_csv(all));
    summary.broken_tracks = broken_tracks(placements);
    return summary;
}

}  // namespace ccf
