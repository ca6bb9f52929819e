#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "ccf/compositor.hpp"
#include "ccf/error.hpp"
#include "support/small_run.hpp"

using namespace ccf;
using ccf::testing::fresh_dir;

namespace {

Errc code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return Errc::Io;
}

bool same(const cv::Mat& a, const cv::Mat& b) {
    if (a.size() != b.size() || a.type() != b.type()) return false;
    cv::Mat diff;
    cv::compare(a.reshape(1), b.reshape(1), diff, cv::CMP_NE);
    return cv::countNonZero(diff) == 0;
}

cv::Rect mask_bound(const cv::Mat& mask, int id) {
    cv::Mat hit = mask == id;
    return cv::boundingRect(hit);
}

Placement synthetic_placement(std::mt19937_64& rng, int id, cv::Size frame) {
    std::uniform_int_distribution<int> pos_x(-20, frame.width), pos_y(-20, frame.height), size(3, 40);
    std::uniform_int_distribution<int> byte(0, 255);
    Placement p;
    p.agent_id = id;
    p.sprite_rect = cv::Rect(pos_x(rng), pos_y(rng), size(rng), size(rng));
    p.world_pos = {0.0, static_cast<double>(byte(rng) % 7)};  // frequent depth ties
    p.depth_m = p.world_pos.y;
    p.image = cv::Mat(p.sprite_rect.size(), CV_8UC4);
    for (int y = 0; y < p.image.rows; ++y) {
        for (int x = 0; x < p.image.cols; ++x) {
            const int a = byte(rng);
            p.image.at<cv::Vec4b>(y, x) = {static_cast<unsigned char>(byte(rng)), static_cast<unsigned char>(byte(rng)),
                                           static_cast<unsigned char>(byte(rng)),
                                           static_cast<unsigned char>(a < 60 ? a % 12 : a)};
        }
    }
    return p;
}

}  // namespace

TEST_CASE("sprite atlas round trip and validation") {
    const auto dir = fresh_dir("ccf_test_atlas");
    const SpriteAtlas atlas{make_walker_sprite(0), make_walker_sprite(5, 96)};
    const auto manifest = save_sprite_atlas(atlas, dir);
    const SpriteAtlas loaded = load_sprite_atlas(manifest);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[1].id == "walker_5");
    REQUIRE(loaded[0].walk_frames.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(same(loaded[0].walk_frames[k], atlas[0].walk_frames[k]));
    CHECK(loaded[0].keypoints.size() == kRequiredKeypoints.size());

    std::string text = read_file(manifest);
    std::string bad = text;
    const auto at = bad.find("\"head\": [");
    REQUIRE(at != std::string::npos);
    bad.replace(at, bad.find(']', at) - at + 1, "\"head\": [1.2, 0.5]");
    write_file(dir / "bad.json", bad);
    CHECK(code_of([&] { load_sprite_atlas(dir / "bad.json"); }) == Errc::BadKeypoint);

    cv::Mat opaque(20, 10, CV_8UC3, cv::Scalar(1, 2, 3));
    cv::imwrite((dir / "opaque.png").string(), opaque);
    std::string no_alpha = text;
    no_alpha.replace(no_alpha.find("walker_0_0.png"), 14, "opaque.png");
    write_file(dir / "no_alpha.json", no_alpha);
    CHECK(code_of([&] { load_sprite_atlas(dir / "no_alpha.json"); }) == Errc::NoAlpha);

    std::string missing = text;
    missing.replace(missing.find("walker_0_0.png"), 14, "nothing.png");
    write_file(dir / "missing.json", missing);
    CHECK(code_of([&] { load_sprite_atlas(dir / "missing.json"); }) == Errc::MissingImage);
    std::filesystem::remove_all(dir);
}

TEST_CASE("sprite selection") {
    const SpriteAtlas atlas{make_walker_sprite(0), make_walker_sprite(1), make_walker_sprite(2)};
    AgentSpec a;
    a.id = 5;
    CHECK(select_sprite(atlas, a).id == "walker_1");
    a.sprite_id = "walker_2";
    CHECK(select_sprite(atlas, a).id == "walker_2");
    a.sprite_id = "nobody";
    CHECK(code_of([&] { select_sprite(atlas, a); }) == Errc::MissingImage);
}

TEST_CASE("placement scale follows the grid") {
    const auto cam = ccf::testing::small_camera(640, 480);
    const auto calib = ccf::testing::calibrate(cam, -2.0, 10.0, 1.0, 3.0, 640, 480);
    const PerspectiveGrid grid = build_grid(calib);
    const SpriteAsset sprite = make_walker_sprite(3);
    AgentSpec agent;
    agent.id = 1;
    agent.height_m = sprite.physical_height_m;

    const Placement at_origin = place_agent(grid, sprite, agent, {0.0, 0.0}, 0.0, 0.0);
    CHECK(at_origin.sprite_rect.height == std::lround(grid.pixel_height_at({0.0, 0.0}, agent.height_m)));
    CHECK(std::abs(at_origin.foot_px.x - calib.i.x) < 1e-6);
    CHECK(std::abs(at_origin.foot_px.y - calib.i.y) < 1e-6);

    // Pinhole oracle: ground points at depths d and 2d from the camera.
    const double d = 14.0;
    const Placement near = place_agent(grid, sprite, agent, {1.0, d - 10.0}, 0.0, 0.0);
    const Placement far = place_agent(grid, sprite, agent, {1.0, 2 * d - 10.0}, 0.0, 0.0);
    auto oracle_height = [&](double y) {
        return cam.project(-1.0, y, 0.0).y - cam.project(-1.0, y, agent.height_m).y;
    };
    const double oracle = oracle_height(d) / oracle_height(2 * d);
    const double got = static_cast<double>(near.sprite_rect.height) / far.sprite_rect.height;
    CHECK(std::abs(got / oracle - 1.0) < 0.15);

    const Placement right = place_agent(grid, sprite, agent, {0.5, 5.0}, 0.1, 0.0);
    const Placement left = place_agent(grid, sprite, agent, {0.5, 5.0}, std::numbers::pi - 0.1, 0.0);
    CHECK_FALSE(right.mirrored);
    CHECK(left.mirrored);
    CHECK(right.sprite_rect.width == left.sprite_rect.width);
    cv::Mat flipped;
    cv::flip(right.image, flipped, 1);
    CHECK(same(flipped, left.image));

    // walk cycle advances every stride and starts at an id-dependent phase
    CHECK(place_agent(grid, sprite, agent, {0, 5}, 0, 0.0).walk_frame == 1);
    CHECK(place_agent(grid, sprite, agent, {0, 5}, 0, 0.8).walk_frame == 2);
    agent.id = 4;
    CHECK(place_agent(grid, sprite, agent, {0, 5}, 0, 0.0).walk_frame == 0);

    // beyond the horizon
    CHECK(code_of([&] { place_agent(grid, sprite, agent, {0.0, 1e6}, 0.0, 0.0); }) == Errc::HorizonSingularity);
}

TEST_CASE("zero agents leave the plate untouched") {
    const cv::Mat plate = ccf::testing::street_plate(64, 48);
    const RenderedFrame r = render_frame(plate, {});
    CHECK(same(r.rgb, plate));
    CHECK(cv::countNonZero(r.mask) == 0);
    for (int y = 0; y < r.depth.rows; ++y) {
        for (int x = 0; x < r.depth.cols; ++x) CHECK(std::isinf(r.depth.at<float>(y, x)));
    }
    const cv::Mat encoded = encode_depth_mm(r.depth);
    CHECK(cv::countNonZero(encoded != 65535) == 0);
}

TEST_CASE("opaque sprites replace pixels exactly") {
    const cv::Mat plate = ccf::testing::street_plate(64, 48);
    std::mt19937_64 rng(1);
    Placement p = synthetic_placement(rng, 3, plate.size());
    p.sprite_rect = cv::Rect(-5, 10, 30, 20);
    p.image = cv::Mat(20, 30, CV_8UC4);
    cv::randu(p.image, cv::Scalar::all(0), cv::Scalar::all(256));
    std::vector<cv::Mat> ch;
    cv::split(p.image, ch);
    ch[3].setTo(255);
    cv::merge(ch, p.image);
    const RenderedFrame r = render_frame(plate, {p});
    cv::Mat sprite_bgr;
    cv::cvtColor(p.image, sprite_bgr, cv::COLOR_BGRA2BGR);
    CHECK(same(r.rgb(cv::Rect(0, 10, 25, 20)), sprite_bgr(cv::Rect(5, 0, 25, 20))));
    CHECK(r.placements[0].screen_rect == cv::Rect(0, 10, 25, 20));
}

TEST_CASE("nearer agent owns the overlap") {
    const cv::Mat plate = ccf::testing::street_plate(64, 48);
    Placement far_p, near_p;
    far_p.agent_id = 1;
    far_p.world_pos = {0, 10};
    far_p.sprite_rect = cv::Rect(10, 10, 20, 20);
    far_p.image = cv::Mat(20, 20, CV_8UC4, cv::Scalar(0, 0, 255, 255));
    near_p = far_p;
    near_p.agent_id = 2;
    near_p.world_pos = {0, 5};
    near_p.sprite_rect = cv::Rect(20, 15, 20, 20);
    near_p.image = cv::Mat(20, 20, CV_8UC4, cv::Scalar(255, 0, 0, 255));
    for (const auto& input : {std::vector{far_p, near_p}, std::vector{near_p, far_p}}) {
        const RenderedFrame r = render_frame(plate, input);
        CHECK(r.mask.at<std::uint16_t>(20, 25) == 2);
        CHECK(r.mask.at<std::uint16_t>(12, 12) == 1);
        CHECK(r.rgb.at<cv::Vec3b>(20, 25) == cv::Vec3b(255, 0, 0));
        for (const auto& p : r.placements) CHECK(p.screen_rect == mask_bound(r.mask, p.agent_id));
    }
}

TEST_CASE("compositor invariants on random occlusion scenes") {
    const cv::Mat plate = ccf::testing::street_plate(80, 60);
    std::mt19937_64 rng(77);
    const CompositorOptions opts;
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<Placement> ps;
        const int n = 1 + trial % 8;
        for (int id = 1; id <= n; ++id) ps.push_back(synthetic_placement(rng, id, plate.size()));
        const RenderedFrame r = render_frame(plate, ps, opts);
        for (int y = 0; y < plate.rows; ++y) {
            for (int x = 0; x < plate.cols; ++x) {
                // brute force owner: minimal depth, then lowest id, among alpha > threshold
                const Placement* owner = nullptr;
                for (const auto& p : ps) {
                    if (!p.sprite_rect.contains({x, y})) continue;
                    const int a = p.image.at<cv::Vec4b>(y - p.sprite_rect.y, x - p.sprite_rect.x)[3];
                    if (a <= opts.alpha_threshold) continue;
                    if (!owner || p.world_pos.y < owner->world_pos.y ||
                        (p.world_pos.y == owner->world_pos.y && p.agent_id < owner->agent_id)) {
                        owner = &p;
                    }
                }
                const int id = r.mask.at<std::uint16_t>(y, x);
                REQUIRE(id == (owner ? owner->agent_id : 0));
                if (!owner) {
                    REQUIRE(r.rgb.at<cv::Vec3b>(y, x) == plate.at<cv::Vec3b>(y, x));
                    REQUIRE(std::isinf(r.depth.at<float>(y, x)));
                } else {
                    REQUIRE(r.depth.at<float>(y, x) == static_cast<float>(owner->depth_m));
                }
            }
        }
        for (const auto& p : r.placements) CHECK(p.screen_rect == mask_bound(r.mask, p.agent_id));
    }
}

TEST_CASE("placements file round trip") {
    const cv::Mat plate = ccf::testing::street_plate(64, 48);
    std::mt19937_64 rng(2);
    std::vector<Placement> ps{synthetic_placement(rng, 4, plate.size()), synthetic_placement(rng, 2, plate.size())};
    ps[0].keypoints_px = {{"head", {10.25, 3.5}}, {"neck", {10.0, 6.0}}};
    const RenderedFrame r = render_frame(plate, ps);
    const std::string line = serialize_frame_placements(17, r.placements);
    const auto parsed = parse_placements(line + line);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].frame == 17);
    REQUIRE(parsed[0].placements.size() == 2);
    CHECK(parsed[0].placements[0].agent_id == 2);  // sorted by id
    CHECK(parsed[0].placements[1].screen_rect == r.placements[0].screen_rect);
    CHECK(parsed[0].placements[1].keypoints_px[0].p == PixelPoint{10.25, 3.5});
}

using ccf::testing::small_run;
using ccf::testing::SmallRun;

TEST_CASE("sequence rendering writes consistent, deterministic outputs") {
    const SmallRun run = small_run(8, 30);
    const CameraRig rig = CameraRig::single(run.scene, "scene.json");
    RenderJob job{&rig, {run.plate}, &run.scenario, &run.trajectories, &run.atlas, {}, 3};
    const auto a = fresh_dir("ccf_test_render_a");
    const auto b = fresh_dir("ccf_test_render_b");
    const SequenceManifest m = render_sequence(job, a);
    job.threads = 1;
    render_sequence(job, b);
    CHECK(m.frames == 30);
    CHECK(m.cameras.size() == 1);
    CHECK(m.cameras[0].placements > 30);
    const auto da = ccf::testing::tree_digest(a);
    CHECK(da == ccf::testing::tree_digest(b));
    CHECK(da.size() == 30 * 3 + 2);
    CHECK(da.count("cam_00/frame_000029.png") == 1);
    CHECK(da.count("cam_00/mask_000000.png") == 1);
    CHECK(da.count("cam_00/depth_000012.png") == 1);

    const SequenceManifest loaded = load_manifest(a);
    CHECK(serialize_manifest(loaded) == read_file(a / "manifest.json"));

    const auto frames = parse_placements(read_file(a / "cam_00" / "placements.jsonl"));
    REQUIRE(frames.size() == 30);
    for (const auto& fp : frames) {
        const cv::Mat mask = cv::imread((a / "cam_00" / ("mask_" + std::string(6 - std::to_string(fp.frame).size(), '0') +
                                                         std::to_string(fp.frame) + ".png")).string(),
                                        cv::IMREAD_UNCHANGED);
        REQUIRE(mask.type() == CV_16UC1);
        const cv::Mat rgb = cv::imread((a / "cam_00" / ("frame_" + std::string(6 - std::to_string(fp.frame).size(), '0') +
                                                        std::to_string(fp.frame) + ".png")).string());
        for (const auto& p : fp.placements) CHECK(p.screen_rect == mask_bound(mask, p.agent_id));
        // background purity on disk
        cv::Mat bg = mask == 0;
        cv::Mat diff;
        cv::absdiff(rgb, run.plate, diff);
        cv::Mat diff_gray;
        cv::cvtColor(diff, diff_gray, cv::COLOR_BGR2GRAY);
        CHECK(cv::countNonZero(diff_gray & bg) == 0);
    }
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("replayed trajectories reproduce the render") {
    const SmallRun run = small_run(6, 20);
    const CameraRig rig = CameraRig::single(run.scene, "scene.json");
    const auto replay = parse_trajectories(serialize_trajectories(run.trajectories));
    const auto replay2 = parse_trajectories(serialize_trajectories(replay));
    RenderJob job{&rig, {run.plate}, &run.scenario, &replay, &run.atlas, {}, 2};
    const auto a = fresh_dir("ccf_test_replay_a");
    const auto b = fresh_dir("ccf_test_replay_b");
    render_sequence(job, a);
    job.trajectories = &replay2;
    render_sequence(job, b);
    CHECK(ccf::testing::tree_digest(a) == ccf::testing::tree_digest(b));
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

namespace {

class StandStill final : public Simulator {
public:
    std::vector<Trajectory> run(const SceneConfig& cfg, const Scenario& scenario) const override {
        std::vector<Trajectory> out;
        for (const auto& a : scenario.agents) {
            Trajectory t{a.id, {}};
            for (int f = 0; f < scenario.duration_frames; ++f) {
                t.samples.push_back({f, cfg.grid_map.cell_center(a.entry_cell), 0.0, true});
            }
            out.push_back(std::move(t));
        }
        return out;
    }
};

}  // namespace

TEST_CASE("compositor accepts any simulator") {
    SmallRun run = small_run(3, 5);
    const StandStill stub;
    run.trajectories = static_cast<const Simulator&>(stub).run(run.scene, run.scenario);
    const CameraRig rig = CameraRig::single(run.scene);
    const auto dir = fresh_dir("ccf_test_stub");
    const SequenceManifest m = render_sequence({&rig, {run.plate}, &run.scenario, &run.trajectories, &run.atlas, {}, 1}, dir);
    CHECK(m.cameras[0].placements == 15);
    std::filesystem::remove_all(dir);
}

TEST_CASE("two-camera rig views agree on the ground") {
    const SmallRun run = small_run(10, 40);
    CameraRig rig = CameraRig::single(run.scene, "a.json");
    rig.cameras.push_back({"b.json", run.scene, {2.5, 0.4, 0.15}});
    const auto dir = fresh_dir("ccf_test_rig");
    render_sequence({&rig, {run.plate, run.plate}, &run.scenario, &run.trajectories, &run.atlas, {}, 2}, dir);
    std::vector<std::vector<FramePlacements>> views;
    for (const char* cam : {"cam_00", "cam_01"}) views.push_back(parse_placements(read_file(dir / cam / "placements.jsonl")));
    std::vector<PerspectiveGrid> grids;
    for (const auto& c : rig.cameras) grids.push_back(build_grid(c.scene.calibration));

    int mutual = 0;
    double worst = 0.0;
    for (int f = 0; f < 40; ++f) {
        for (const auto& p0 : views[0][static_cast<std::size_t>(f)].placements) {
            for (const auto& p1 : views[1][static_cast<std::size_t>(f)].placements) {
                if (p0.agent_id != p1.agent_id || p0.screen_rect.empty() || p1.screen_rect.empty()) continue;
                const WorldPoint w0 = rig.cameras[0].pose.camera_to_source(grids[0].image_to_world(p0.foot_px));
                const WorldPoint w1 = rig.cameras[1].pose.camera_to_source(grids[1].image_to_world(p1.foot_px));
                worst = std::max(worst, distance(w0, w1));
                ++mutual;
            }
        }
    }
    CHECK(mutual > 20);
    CHECK(worst <= 0.1);
    std::filesystem::remove_all(dir);
}
