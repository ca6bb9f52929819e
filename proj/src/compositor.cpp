#include "ccf/compositor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ccf/error.hpp"
#include "ccf/io.hpp"
#include "json_fields.hpp"

namespace ccf {

using detail::Fields;
using ojson = detail::ordered_json;
using detail::persisted;

const std::array<const char*, 14> kRequiredKeypoints = {
    "head",    "neck",    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
    "r_wrist", "l_hip",   "r_hip",      "l_knee",     "r_knee",  "l_ankle", "r_ankle"};

namespace {

cv::Scalar shade(const cv::Scalar& c, double f) {
    return {c[0] * f, c[1] * f, c[2] * f, c[3]};
}

bool unit_square(PixelPoint p) {
    return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0;
}

[[noreturn]] void invariant(const std::string& field, const std::string& what) {
    throw Error(Errc::InvariantViolation, field + ": " + what, field);
}

}  // namespace

void SpriteAsset::validate(const std::string& field) const {
    if (walk_frames.empty()) detail::schema_error(field + ".frames", "at least one walk frame required");
    for (std::size_t n = 0; n < walk_frames.size(); ++n) {
        const cv::Mat& f = walk_frames[n];
        const std::string path = detail::index(field + ".frames", n);
        if (f.type() != CV_8UC4) throw Error(Errc::NoAlpha, path + ": sprite frame lacks an alpha channel", path);
        if (f.size() != walk_frames.front().size()) detail::schema_error(path, "walk frames differ in size");
        if (f.empty()) detail::schema_error(path, "empty image");
    }
    if (!(physical_height_m > 0.0)) detail::schema_error(field + ".physical_height_m", "must be > 0");
    if (!unit_square(anchor)) {
        throw Error(Errc::BadKeypoint, field + ".anchor: outside [0,1]^2", field + ".anchor");
    }
    for (const auto& kp : keypoints) {
        const std::string path = field + ".keypoints." + kp.name;
        if (!unit_square(kp.p)) throw Error(Errc::BadKeypoint, path + ": outside [0,1]^2", path);
    }
    for (const char* name : kRequiredKeypoints) {
        const bool found = std::any_of(keypoints.begin(), keypoints.end(),
                                       [&](const NamedPoint& kp) { return kp.name == name; });
        if (!found) {
            const std::string path = field + ".keypoints." + name;
            throw Error(Errc::BadKeypoint, path + ": required keypoint missing", path);
        }
    }
}

SpriteAtlas load_sprite_atlas(const std::filesystem::path& manifest) {
    if (!std::filesystem::is_regular_file(manifest)) {
        throw Error(Errc::MissingImage, "sprite manifest not found: " + manifest.string(), manifest.string());
    }
    const auto doc = detail::parse_json(read_file(manifest), "sprite manifest");
    Fields top(doc, "");
    const auto& sprites = detail::as_array(top.required("sprites"), "sprites");
    top.reject_unknown();
    if (sprites.empty()) detail::schema_error("sprites", "at least one sprite required");

    SpriteAtlas atlas;
    for (std::size_t n = 0; n < sprites.size(); ++n) {
        const std::string path = detail::index("sprites", n);
        Fields f(sprites[n], path);
        SpriteAsset a;
        a.id = f.string("id");
        a.physical_height_m = f.number("physical_height_m");
        const auto anchor = detail::as_pair(f.required("anchor"), f.at("anchor"));
        a.anchor = {anchor[0], anchor[1]};
        const auto& kps = f.required("keypoints");
        if (!kps.is_object()) detail::schema_error(f.at("keypoints"), "expected an object");
        for (auto it = kps.begin(); it != kps.end(); ++it) {
            const auto uv = detail::as_pair(it.value(), f.at("keypoints") + "." + it.key());
            a.keypoints.push_back({it.key(), {uv[0], uv[1]}});
        }
        const auto& frames = detail::as_array(f.required("frames"), f.at("frames"));
        for (std::size_t k = 0; k < frames.size(); ++k) {
            const std::string fpath = detail::index(f.at("frames"), k);
            const auto file = resolve_relative(manifest, detail::as_string(frames[k], fpath));
            cv::Mat img = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
            if (img.empty()) throw Error(Errc::MissingImage, fpath + ": cannot read " + file.string(), fpath);
            if (img.depth() == CV_16U) img.convertTo(img, CV_8U, 1.0 / 257.0);
            a.walk_frames.push_back(img);
        }
        f.reject_unknown();
        for (const auto& other : atlas) {
            if (other.id == a.id) detail::schema_error(f.at("id"), "duplicate sprite id '" + a.id + "'");
        }
        a.validate(path);
        atlas.push_back(std::move(a));
    }
    return atlas;
}

std::filesystem::path save_sprite_atlas(const SpriteAtlas& atlas, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    ojson sprites = ojson::array();
    for (const auto& a : atlas) {
        ojson s;
        s["id"] = a.id;
        ojson frames = ojson::array();
        for (std::size_t k = 0; k < a.walk_frames.size(); ++k) {
            const std::string name = a.id + "_" + std::to_string(k) + ".png";
            if (!cv::imwrite((dir / name).string(), a.walk_frames[k])) {
                throw Error(Errc::Io, "cannot write " + (dir / name).string());
            }
            frames.push_back(name);
        }
        s["frames"] = std::move(frames);
        s["physical_height_m"] = persisted(a.physical_height_m);
        s["anchor"] = {persisted(a.anchor.x), persisted(a.anchor.y)};
        ojson kps = ojson::object();
        for (const auto& kp : a.keypoints) kps[kp.name] = {persisted(kp.p.x), persisted(kp.p.y)};
        s["keypoints"] = std::move(kps);
        sprites.push_back(std::move(s));
    }
    ojson doc;
    doc["sprites"] = std::move(sprites);
    const auto path = dir / "sprites.json";
    write_file(path, doc.dump(2) + "\n");
    return path;
}

SpriteAsset make_walker_sprite(int variant, int height_px) {
    static const cv::Scalar shirts[] = {{40, 40, 200, 255},  {200, 90, 30, 255},  {40, 160, 40, 255},
                                        {30, 170, 220, 255}, {150, 50, 150, 255}, {90, 90, 90, 255}};
    static const cv::Scalar pants[] = {{60, 40, 30, 255}, {30, 30, 30, 255}, {110, 100, 90, 255},
                                       {140, 80, 40, 255}};
    static const cv::Scalar skins[] = {{140, 170, 220, 255}, {90, 120, 170, 255}, {60, 80, 120, 255}};
    const int v = std::abs(variant);
    const cv::Scalar shirt = shirts[v % 6];
    const cv::Scalar pant = pants[(v / 2) % 4];
    const cv::Scalar skin = skins[(v / 3) % 3];
    const double build = 0.85 + 0.1 * (v % 4);

    const double H = height_px;
    const int W = std::max(8, static_cast<int>(std::lround(0.45 * H)));
    const double cx = 0.5 * W;
    auto px = [&](double u, double vv) { return cv::Point(static_cast<int>(std::lround(u)), static_cast<int>(std::lround(vv))); };

    // Joint layout in pixels (mid-stance); the swing moves arms and legs.
    const double head_y = 0.085 * H, head_r = 0.065 * H;
    const double neck_y = 0.165 * H, shoulder_y = 0.2 * H, hip_y = 0.52 * H;
    const double knee_y = 0.74 * H, ankle_y = 0.955 * H;
    const double torso_w = 0.17 * H * build;

    SpriteAsset a;
    a.id = "walker_" + std::to_string(v);
    a.physical_height_m = 1.75;
    a.anchor = {0.5, ankle_y / H + 0.02};
    for (int k = 0; k < 4; ++k) {
        cv::Mat img(height_px, W, CV_8UC4, cv::Scalar::all(0));
        const double swing = std::sin(k * std::numbers::pi / 2.0) * 0.11 * H;
        const int leg_t = std::max(2, static_cast<int>(std::lround(0.075 * H * build)));
        const int arm_t = std::max(2, static_cast<int>(std::lround(0.05 * H * build)));
        // far leg and arm first
        cv::line(img, px(cx, hip_y), px(cx - 0.5 * swing, knee_y), shade(pant, 0.8), leg_t, cv::LINE_AA);
        cv::line(img, px(cx - 0.5 * swing, knee_y), px(cx - swing, ankle_y), shade(pant, 0.8), leg_t, cv::LINE_AA);
        cv::line(img, px(cx, shoulder_y), px(cx + 0.4 * swing, 0.36 * H), shade(shirt, 0.8), arm_t, cv::LINE_AA);
        cv::line(img, px(cx + 0.4 * swing, 0.36 * H), px(cx + 0.7 * swing, 0.5 * H), shade(skin, 0.85), arm_t, cv::LINE_AA);
        cv::ellipse(img, px(cx, 0.5 * (shoulder_y + hip_y)), cv::Size(static_cast<int>(torso_w / 2), static_cast<int>(0.5 * (hip_y - shoulder_y) + 0.02 * H)),
                    0, 0, 360, shirt, cv::FILLED, cv::LINE_AA);
        cv::line(img, px(cx, hip_y), px(cx + 0.5 * swing, knee_y), pant, leg_t, cv::LINE_AA);
        cv::line(img, px(cx + 0.5 * swing, knee_y), px(cx + swing, ankle_y), pant, leg_t, cv::LINE_AA);
        cv::line(img, px(cx, shoulder_y), px(cx - 0.4 * swing, 0.36 * H), shirt, arm_t, cv::LINE_AA);
        cv::line(img, px(cx - 0.4 * swing, 0.36 * H), px(cx - 0.7 * swing, 0.5 * H), skin, arm_t, cv::LINE_AA);
        cv::line(img, px(cx, neck_y), px(cx, shoulder_y), skin, std::max(2, arm_t), cv::LINE_AA);
        cv::circle(img, px(cx + 0.01 * H, head_y), static_cast<int>(std::lround(head_r)), skin, cv::FILLED, cv::LINE_AA);
        a.walk_frames.push_back(img);
    }
    auto kp = [&](const char* name, double x, double y) { a.keypoints.push_back({name, {x / W, y / H}}); };
    const double half = 0.25 * torso_w;
    kp("head", cx + 0.01 * H, head_y);
    kp("neck", cx, neck_y);
    kp("l_shoulder", cx - half, shoulder_y);
    kp("r_shoulder", cx + half, shoulder_y);
    kp("l_elbow", cx - half, 0.36 * H);
    kp("r_elbow", cx + half, 0.36 * H);
    kp("l_wrist", cx - half, 0.5 * H);
    kp("r_wrist", cx + half, 0.5 * H);
    kp("l_hip", cx - half, hip_y);
    kp("r_hip", cx + half, hip_y);
    kp("l_knee", cx - half, knee_y);
    kp("r_knee", cx + half, knee_y);
    kp("l_ankle", cx - half, ankle_y);
    kp("r_ankle", cx + half, ankle_y);
    a.validate();
    return a;
}

const SpriteAsset& select_sprite(const SpriteAtlas& atlas, const AgentSpec& agent) {
    if (atlas.empty()) throw Error(Errc::MissingImage, "sprite atlas is empty", "sprites");
    if (!agent.sprite_id.empty()) {
        for (const auto& a : atlas) {
            if (a.id == agent.sprite_id) return a;
        }
        throw Error(Errc::MissingImage,
                    "agent " + std::to_string(agent.id) + " uses unknown sprite '" + agent.sprite_id + "'",
                    "sprite_id");
    }
    const auto n = static_cast<long long>(atlas.size());
    const long long k = ((static_cast<long long>(agent.id) - 1) % n + n) % n;
    return atlas[static_cast<std::size_t>(k)];
}

Placement place_agent(const PerspectiveGrid& grid, const SpriteAsset& asset, const AgentSpec& agent,
                      WorldPoint pos, double heading_rad, double distance_travelled_m,
                      const CompositorOptions& opts, double depth_reference_m) {
    const PixelPoint foot = grid.world_to_image(pos);
    if (!(grid.horizon_distance(foot) >= 1.0)) {
        throw Error(Errc::HorizonSingularity, "agent " + std::to_string(agent.id) + " stands at the horizon");
    }
    const int img_h = grid.calibration().image_height;
    const int img_w = grid.calibration().image_width;
    const double h_real = grid.pixel_height_at(pos, agent.height_m);
    if (!(h_real <= opts.max_height_factor * img_h)) {
        throw Error(Errc::OutOfExtent, "agent " + std::to_string(agent.id) + " is too close to the camera");
    }

    Placement p;
    p.agent_id = agent.id;
    p.world_pos = pos;
    p.depth_m = pos.y - depth_reference_m;
    p.foot_px = foot;
    p.mirrored = std::cos(heading_rad) < 0.0;
    const auto n_frames = static_cast<long long>(asset.walk_frames.size());
    const long long cycle = static_cast<long long>(std::floor(std::max(0.0, distance_travelled_m) / opts.stride_m)) + agent.id;
    p.walk_frame = static_cast<int>(((cycle % n_frames) + n_frames) % n_frames);

    const cv::Mat& src = asset.walk_frames[static_cast<std::size_t>(p.walk_frame)];
    const int h = std::max(1, static_cast<int>(std::lround(h_real)));
    const int w = std::max(1, static_cast<int>(std::lround(h * static_cast<double>(src.cols) / src.rows)));
    const double au = p.mirrored ? 1.0 - asset.anchor.x : asset.anchor.x;
    const int x0 = static_cast<int>(std::lround(foot.x - au * w));
    const int y0 = static_cast<int>(std::lround(foot.y - asset.anchor.y * h));
    p.sprite_rect = cv::Rect(x0, y0, w, h);
    for (const auto& kp : asset.keypoints) {
        const double u = p.mirrored ? 1.0 - kp.p.x : kp.p.x;
        p.keypoints_px.push_back({kp.name, {x0 + u * w, y0 + kp.p.y * h}});
    }
    if ((p.sprite_rect & cv::Rect(0, 0, img_w, img_h)).empty()) return p;
    cv::resize(src, p.image, cv::Size(w, h), 0, 0, h < src.rows ? cv::INTER_AREA : cv::INTER_LINEAR);
    if (p.mirrored) cv::flip(p.image, p.image, 1);
    return p;
}

RenderedFrame render_frame(const cv::Mat& plate, std::vector<Placement> placements,
                           const CompositorOptions& opts) {
    if (plate.type() != CV_8UC3) invariant("plate", "expected an 8-bit 3-channel image");
    RenderedFrame out;
    out.rgb = plate.clone();
    out.mask = cv::Mat::zeros(plate.size(), CV_16UC1);
    out.depth = cv::Mat(plate.size(), CV_32FC1, cv::Scalar(std::numeric_limits<float>::infinity()));

    std::vector<std::size_t> order(placements.size());
    for (std::size_t n = 0; n < order.size(); ++n) order[n] = n;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const Placement& pa = placements[a];
        const Placement& pb = placements[b];
        if (pa.world_pos.y != pb.world_pos.y) return pa.world_pos.y > pb.world_pos.y;
        return pa.agent_id > pb.agent_id;
    });

    const cv::Rect frame(0, 0, plate.cols, plate.rows);
    for (const std::size_t idx : order) {
        const Placement& p = placements[idx];
        if (p.image.empty()) continue;
        if (p.agent_id <= 0 || p.agent_id > 65535) invariant("agent_id", "must be in [1, 65535] for the mask");
        const cv::Rect roi = p.sprite_rect & frame;
        const auto id = static_cast<std::uint16_t>(p.agent_id);
        const auto depth = static_cast<float>(p.depth_m);
        for (int y = roi.y; y < roi.y + roi.height; ++y) {
            const cv::Vec4b* s = p.image.ptr<cv::Vec4b>(y - p.sprite_rect.y) - p.sprite_rect.x;
            cv::Vec3b* d = out.rgb.ptr<cv::Vec3b>(y);
            std::uint16_t* m = out.mask.ptr<std::uint16_t>(y);
            float* z = out.depth.ptr<float>(y);
            for (int x = roi.x; x < roi.x + roi.width; ++x) {
                const int a = s[x][3];
                if (a <= opts.alpha_threshold) continue;
                for (int c = 0; c < 3; ++c) {
                    d[x][c] = static_cast<unsigned char>((a * s[x][c] + (255 - a) * d[x][c] + 127) / 255);
                }
                m[x] = id;
                z[x] = depth;
            }
        }
    }

    for (Placement& p : placements) {
        const cv::Rect roi = p.sprite_rect & frame;
        int x_min = std::numeric_limits<int>::max(), y_min = x_min, x_max = -1, y_max = -1;
        if (!p.image.empty()) {
            const auto id = static_cast<std::uint16_t>(p.agent_id);
            for (int y = roi.y; y < roi.y + roi.height; ++y) {
                const std::uint16_t* m = out.mask.ptr<std::uint16_t>(y);
                for (int x = roi.x; x < roi.x + roi.width; ++x) {
                    if (m[x] != id) continue;
                    x_min = std::min(x_min, x);
                    x_max = std::max(x_max, x);
                    y_min = std::min(y_min, y);
                    y_max = std::max(y_max, y);
                }
            }
        }
        p.screen_rect = x_max < 0 ? cv::Rect() : cv::Rect(x_min, y_min, x_max - x_min + 1, y_max - y_min + 1);
    }
    out.placements = std::move(placements);
    return out;
}

double depth_reference(const PerspectiveGrid& grid) {
    const auto& c = grid.calibration();
    const PixelPoint bottom{0.5 * c.image_width, static_cast<double>(c.image_height)};
    if (grid.horizon_distance(bottom) < 1.0) return 0.0;
    return grid.image_to_world(bottom).y;
}

cv::Mat encode_depth_mm(const cv::Mat& depth_m) {
    cv::Mat out(depth_m.size(), CV_16UC1);
    for (int y = 0; y < depth_m.rows; ++y) {
        const float* s = depth_m.ptr<float>(y);
        std::uint16_t* d = out.ptr<std::uint16_t>(y);
        for (int x = 0; x < depth_m.cols; ++x) {
            if (!std::isfinite(s[x])) {
                d[x] = 65535;
            } else {
                const double mm = std::clamp(std::round(static_cast<double>(s[x]) * 1000.0), 0.0, 65534.0);
                d[x] = static_cast<std::uint16_t>(mm);
            }
        }
    }
    return out;
}

// ---- placements.jsonl ------------------------------------------------------

std::string serialize_frame_placements(int frame, const std::vector<Placement>& placements) {
    std::vector<const Placement*> order;
    for (const auto& p : placements) order.push_back(&p);
    std::sort(order.begin(), order.end(),
              [](const Placement* a, const Placement* b) { return a->agent_id < b->agent_id; });
    ojson doc;
    doc["frame"] = frame;
    ojson list = ojson::array();
    for (const Placement* p : order) {
        ojson j;
        j["agent_id"] = p->agent_id;
        j["rect"] = {p->screen_rect.x, p->screen_rect.y, p->screen_rect.width, p->screen_rect.height};
        j["foot"] = {persisted(p->foot_px.x), persisted(p->foot_px.y)};
        j["world"] = {persisted(p->world_pos.x), persisted(p->world_pos.y)};
        j["depth_m"] = persisted(p->depth_m);
        ojson kps = ojson::object();
        for (const auto& kp : p->keypoints_px) kps[kp.name] = {persisted(kp.p.x), persisted(kp.p.y)};
        j["keypoints"] = std::move(kps);
        list.push_back(std::move(j));
    }
    doc["placements"] = std::move(list);
    return doc.dump() + "\n";
}

std::vector<FramePlacements> parse_placements(std::string_view jsonl) {
    std::vector<FramePlacements> out;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos < jsonl.size()) {
        std::size_t end = jsonl.find('\n', pos);
        if (end == std::string_view::npos) end = jsonl.size();
        const std::string_view line = jsonl.substr(pos, end - pos);
        pos = end + 1;
        ++lineno;
        if (line.empty()) continue;
        const std::string where = "placements.line " + std::to_string(lineno);
        const auto doc = detail::parse_json(line, where);
        Fields f(doc, where);
        FramePlacements fp;
        fp.frame = f.int32("frame");
        const auto& list = detail::as_array(f.required("placements"), f.at("placements"));
        for (std::size_t n = 0; n < list.size(); ++n) {
            Fields p(list[n], detail::index(f.at("placements"), n));
            PlacementRecord r;
            r.agent_id = p.int32("agent_id");
            const auto& rect = detail::as_array(p.required("rect"), p.at("rect"));
            if (rect.size() != 4) detail::schema_error(p.at("rect"), "expected [x, y, w, h]");
            r.screen_rect = cv::Rect(detail::as_int32(rect[0], p.at("rect")), detail::as_int32(rect[1], p.at("rect")),
                                     detail::as_int32(rect[2], p.at("rect")), detail::as_int32(rect[3], p.at("rect")));
            r.foot_px = p.pixel("foot");
            const auto world = detail::as_pair(p.required("world"), p.at("world"));
            r.world_pos = {world[0], world[1]};
            r.depth_m = p.number("depth_m");
            const auto& kps = p.required("keypoints");
            if (!kps.is_object()) detail::schema_error(p.at("keypoints"), "expected an object");
            for (auto it = kps.begin(); it != kps.end(); ++it) {
                r.keypoints_px.push_back({it.key(), detail::as_pixel(it.value(), p.at("keypoints") + "." + it.key())});
            }
            p.reject_unknown();
            fp.placements.push_back(std::move(r));
        }
        f.reject_unknown();
        out.push_back(std::move(fp));
    }
    return out;
}

// ---- manifest ----------------------------------------------------------------

std::string serialize_manifest(const SequenceManifest& m) {
    ojson doc;
    doc["version"] = 1;
    doc["frames"] = m.frames;
    doc["agents"] = m.agents;
    doc["fps"] = persisted(m.fps);
    ojson cams = ojson::array();
    for (const auto& c : m.cameras) {
        ojson j;
        j["index"] = c.index;
        j["dir"] = c.dir;
        j["width"] = c.width;
        j["height"] = c.height;
        j["depth_reference_m"] = persisted(c.depth_reference_m);
        j["placements"] = c.placements;
        j["skipped"] = c.skipped;
        j["scene_hash"] = c.scene_hash;
        cams.push_back(std::move(j));
    }
    doc["cameras"] = std::move(cams);
    doc["hashes"] = {{"scenario", m.scenario_hash}, {"trajectories", m.trajectories_hash}, {"atlas", m.atlas_hash}};
    return doc.dump(2) + "\n";
}

SequenceManifest parse_manifest(std::string_view text) {
    const auto doc = detail::parse_json(text, "manifest");
    Fields f(doc, "");
    if (detail::as_int(f.required("version"), "version") != 1) detail::schema_error("version", "unsupported version");
    SequenceManifest m;
    m.frames = f.int32("frames");
    m.agents = f.int32("agents");
    m.fps = f.number("fps");
    const auto& cams = detail::as_array(f.required("cameras"), "cameras");
    for (std::size_t n = 0; n < cams.size(); ++n) {
        Fields c(cams[n], detail::index("cameras", n));
        CameraOutput out;
        out.index = c.uint64("index");
        out.dir = c.string("dir");
        out.width = c.int32("width");
        out.height = c.int32("height");
        out.depth_reference_m = c.number("depth_reference_m");
        out.placements = c.uint64("placements");
        out.skipped = c.uint64("skipped");
        out.scene_hash = c.string("scene_hash");
        c.reject_unknown();
        m.cameras.push_back(std::move(out));
    }
    Fields h(f.required("hashes"), "hashes");
    m.scenario_hash = h.string("scenario");
    m.trajectories_hash = h.string("trajectories");
    m.atlas_hash = h.string("atlas");
    h.reject_unknown();
    f.reject_unknown();
    return m;
}

SequenceManifest load_manifest(const std::filesystem::path& out_dir) {
    const auto path = out_dir / "manifest.json";
    if (!std::filesystem::is_regular_file(path)) {
        throw Error(Errc::ManifestMismatch, "no manifest.json in " + out_dir.string(), path.string());
    }
    return parse_manifest(read_file(path));
}

// ---- sequence rendering ------------------------------------------------------

namespace {

std::string atlas_hash(const SpriteAtlas& atlas) {
    std::uint64_t h = fnv1a64("atlas");
    for (const auto& a : atlas) {
        h = fnv1a64(a.id, h);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g", a.physical_height_m, a.anchor.x, a.anchor.y);
        h = fnv1a64(buf, h);
        for (const auto& kp : a.keypoints) {
            std::snprintf(buf, sizeof buf, "%.9g,%.9g", kp.p.x, kp.p.y);
            h = fnv1a64(kp.name + buf, h);
        }
        for (const auto& f : a.walk_frames) {
            for (int y = 0; y < f.rows; ++y) {
                h = fnv1a64(std::string_view(f.ptr<char>(y), f.cols * f.elemSize()), h);
            }
        }
    }
    return hex64(h);
}

struct AgentTrack {
    const AgentSpec* spec = nullptr;
    const SpriteAsset* sprite = nullptr;
    const Trajectory* traj = nullptr;
    std::vector<double> travelled;  // cumulative, per frame
};

void write_png(const std::filesystem::path& path, const cv::Mat& img, int frame) {
    if (!cv::imwrite(path.string(), img)) {
        throw Error(Errc::Io, "frame " + std::to_string(frame) + ": cannot write " + path.string(), path.string());
    }
}

std::string frame_name(const char* prefix, int frame) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%06d.png", prefix, frame);
    return buf;
}

}  // namespace

SequenceManifest render_sequence(const RenderJob& job, const std::filesystem::path& out_dir) {
    if (!job.rig || !job.scenario || !job.trajectories || !job.atlas) invariant("render", "incomplete render job");
    const CameraRig& rig = *job.rig;
    const Scenario& scenario = *job.scenario;
    rig.validate();
    scenario.validate();
    if (job.plates.size() != rig.cameras.size()) invariant("plates", "need one background plate per camera");

    std::vector<AgentTrack> tracks;
    for (const Trajectory& t : *job.trajectories) {
        AgentTrack track;
        track.spec = scenario.find(t.agent_id);
        if (!track.spec) invariant("trajectories", "agent " + std::to_string(t.agent_id) + " not in scenario");
        if (static_cast<int>(t.samples.size()) != scenario.duration_frames) {
            invariant("trajectories", "agent " + std::to_string(t.agent_id) + " has " +
                                          std::to_string(t.samples.size()) + " samples, expected " +
                                          std::to_string(scenario.duration_frames));
        }
        track.sprite = &select_sprite(*job.atlas, *track.spec);
        track.traj = &t;
        track.travelled.assign(t.samples.size(), 0.0);
        for (std::size_t f = 1; f < t.samples.size(); ++f) {
            const auto& a = t.samples[f - 1];
            const auto& b = t.samples[f];
            track.travelled[f] = track.travelled[f - 1] + (a.active && b.active ? distance(a.pos, b.pos) : 0.0);
        }
        tracks.push_back(std::move(track));
    }
    std::sort(tracks.begin(), tracks.end(),
              [](const AgentTrack& a, const AgentTrack& b) { return a.spec->id < b.spec->id; });

    SequenceManifest manifest;
    manifest.frames = scenario.duration_frames;
    manifest.agents = static_cast<int>(scenario.agents.size());
    manifest.fps = scenario.fps;
    manifest.scenario_hash = hex64(fnv1a64(serialize_scenario(scenario)));
    manifest.trajectories_hash = hex64(fnv1a64(serialize_trajectories(*job.trajectories)));
    manifest.atlas_hash = atlas_hash(*job.atlas);

    const unsigned threads = job.threads ? job.threads : std::max(1u, std::thread::hardware_concurrency());
    constexpr int kBlock = 64;

    for (std::size_t cam = 0; cam < rig.cameras.size(); ++cam) {
        const RigCamera& rc = rig.cameras[cam];
        const PerspectiveGrid grid = build_grid(rc.scene.calibration);
        const cv::Mat& plate = job.plates[cam];
        if (plate.type() != CV_8UC3 || plate.cols != rc.scene.calibration.image_width ||
            plate.rows != rc.scene.calibration.image_height) {
            invariant(detail::index("plates", cam), "plate does not match the calibrated image size");
        }
        CameraOutput co;
        co.index = cam;
        char dir[16];
        std::snprintf(dir, sizeof dir, "cam_%02zu", cam);
        co.dir = dir;
        co.width = plate.cols;
        co.height = plate.rows;
        co.depth_reference_m = depth_reference(grid);
        co.scene_hash = hex64(fnv1a64(serialize_scene(rc.scene)));
        const auto cam_dir = out_dir / co.dir;
        std::filesystem::create_directories(cam_dir);
        std::ofstream jsonl(cam_dir / "placements.jsonl", std::ios::binary | std::ios::trunc);
        if (!jsonl) throw Error(Errc::Io, "cannot write " + (cam_dir / "placements.jsonl").string());

        std::atomic<std::size_t> placed{0}, skipped{0};
        const cv::Rect frame_rect(0, 0, plate.cols, plate.rows);
        for (int block = 0; block < scenario.duration_frames; block += kBlock) {
            const int block_end = std::min(scenario.duration_frames, block + kBlock);
            std::vector<std::string> lines(static_cast<std::size_t>(block_end - block));
            std::atomic<int> next{block};
            std::exception_ptr failure;
            std::mutex failure_mu;
            auto worker = [&] {
                try {
                    for (int f = next++; f < block_end; f = next++) {
                        std::vector<Placement> placements;
                        for (const AgentTrack& t : tracks) {
                            const TrajectorySample& s = t.traj->samples[static_cast<std::size_t>(f)];
                            if (!s.active) continue;
                            const WorldPoint pos = rc.pose.source_to_camera(s.pos);
                            const double heading = rc.pose.heading_to_camera(s.heading_rad);
                            try {
                                Placement p = place_agent(grid, *t.sprite, *t.spec, pos, heading,
                                                          t.travelled[static_cast<std::size_t>(f)], job.options,
                                                          co.depth_reference_m);
                                if ((p.sprite_rect & frame_rect).empty()) continue;
                                placements.push_back(std::move(p));
                            } catch (const Error& e) {
                                if (e.code() != Errc::HorizonSingularity && e.code() != Errc::OutOfExtent) throw;
                                ++skipped;
                            }
                        }
                        placed += placements.size();
                        RenderedFrame r = render_frame(plate, std::move(placements), job.options);
                        write_png(cam_dir / frame_name("frame", f), r.rgb, f);
                        write_png(cam_dir / frame_name("mask", f), r.mask, f);
                        write_png(cam_dir / frame_name("depth", f), encode_depth_mm(r.depth), f);
                        lines[static_cast<std::size_t>(f - block)] = serialize_frame_placements(f, r.placements);
                    }
                } catch (...) {
                    std::lock_guard lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                    next = block_end;
                }
            };
            std::vector<std::thread> pool;
            for (unsigned n = 1; n < threads; ++n) pool.emplace_back(worker);
            worker();
            for (auto& t : pool) t.join();
            if (failure) std::rethrow_exception(failure);
            for (const auto& line : lines) jsonl << line;
        }
        if (!jsonl.flush()) throw Error(Errc::Io, "cannot write " + (cam_dir / "placements.jsonl").string());
        co.placements = placed;
        co.skipped = skipped;
        if (co.skipped > 0) {
            std::cerr << "warning: camera " << cam << ": " << co.skipped
                      << " agent placements skipped (at or beyond the horizon, or too close)\n";
        }
        manifest.cameras.push_back(std::move(co));
    }
    write_file(out_dir / "manifest.json", serialize_manifest(manifest));
    return manifest;
}

}  // namespace ccf
