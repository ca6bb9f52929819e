#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ccf/error.hpp"
#include "ccf/scene.hpp"
#include "support/pinhole.hpp"

using namespace ccf;

namespace {

const char* kMinimalScene = R"({
  "version": 1,
  "calibration": {
    "i": [295.0, 630.0], "j": [400.0, 300.0], "k": [573.0, 630.0], "l": [520.0, 300.0],
    "u1": [303.0, 605.0], "u2": [387.7, 630.0], "unit_m": 1.0, "image_size": [960, 720]
  },
  "grid_map": {
    "cell_size_m": 1.0, "cols": 4, "rows": 3, "obstacles": [],
    "entrances": [{"cell": [0, 0], "weight": 1.0}],
    "exits": [{"cell": [3, 2], "weight": 2.5}]
  },
  "background": "background.png",
  "rng_seed": 7
})";

Errc error_code(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return Errc::Io;
}

std::string error_field(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.field();
    }
    return "<none>";
}

SceneConfig random_scene(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ccf::testing::Pinhole cam;
    cam.tilt_rad = 0.15 + 0.25 * unit(rng);
    cam.focal_px = 700 + 600 * unit(rng);
    SceneConfig cfg;
    cfg.calibration = ccf::testing::calibrate(cam, -1.0 - 2 * unit(rng), 14.0 + 6 * unit(rng),
                                              0.8 + 0.7 * unit(rng), 3.0, 960, 720);
    std::uniform_int_distribution<int> dim(2, 30);
    GridMap m = GridMap::filled(dim(rng), dim(rng), 0.25 + 2 * unit(rng));
    if (unit(rng) < 0.5) m.origin = {-20 * unit(rng), -5 * unit(rng)};
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            if (unit(rng) < 0.2) m.set({c, r}, CellKind::Obstacle);
        }
    }
    m.set({0, 0}, CellKind::Walkable);
    m.set({m.cols - 1, m.rows - 1}, CellKind::Walkable);
    m.entrances.push_back({{0, 0}, 0.1 + 3 * unit(rng)});
    m.exits.push_back({{m.cols - 1, m.rows - 1}, 0.1 + 3 * unit(rng)});
    if (m.walkable({1, 0})) m.exits.push_back({{1, 0}, unit(rng) + 1e-3});
    cfg.grid_map = std::move(m);
    cfg.background = "plate_" + std::to_string(rng() % 1000) + ".png";
    cfg.rng_seed = rng();
    return cfg;
}

}  // namespace

TEST_CASE("minimal scene loads") {
    const SceneConfig cfg = parse_scene(kMinimalScene);
    CHECK(cfg.grid_map.cols == 4);
    CHECK(cfg.grid_map.rows == 3);
    CHECK(cfg.grid_map.exits.at(0).weight == 2.5);
    CHECK(cfg.background == "background.png");
    CHECK(cfg.rng_seed == 7);
}

TEST_CASE("scene schema and invariant errors carry field paths") {
    std::string text = kMinimalScene;

    std::string on_obstacle = text;
    on_obstacle.replace(on_obstacle.find("\"obstacles\": []"), 15, "\"obstacles\": [[0, 0]]");
    CHECK(error_code([&] { parse_scene(on_obstacle); }) == Errc::InvariantViolation);
    CHECK(error_field([&] { parse_scene(on_obstacle); }) == "grid_map.entrances[0].cell");

    std::string unknown = text;
    unknown.replace(unknown.find("\"rng_seed\""), 10, "\"colour\": 1, \"rng_seed\"");
    CHECK(error_code([&] { parse_scene(unknown); }) == Errc::SchemaViolation);
    CHECK(error_field([&] { parse_scene(unknown); }) == "colour");

    std::string bad_type = text;
    bad_type.replace(bad_type.find("\"cols\": 4"), 9, "\"cols\": \"4\"");
    CHECK(error_field([&] { parse_scene(bad_type); }) == "grid_map.cols");

    std::string zero_weight = text;
    zero_weight.replace(zero_weight.find("\"weight\": 2.5"), 13, "\"weight\": 0");
    CHECK(error_field([&] { parse_scene(zero_weight); }) == "grid_map.exits[0].weight");

    std::string no_exit = text;
    no_exit.replace(no_exit.find("[{\"cell\": [3, 2], \"weight\": 2.5}]"), 33, "[]");
    CHECK(error_field([&] { parse_scene(no_exit); }) == "grid_map.exits");

    CHECK(error_code([&] { parse_scene("{not json"); }) == Errc::SchemaViolation);
    CHECK(error_code([&] { load_scene("/nonexistent/scene.json"); }) == Errc::SchemaViolation);
}

TEST_CASE("scene round trip is byte-stable over generated configs") {
    std::mt19937_64 rng(2024);
    for (int n = 0; n < 200; ++n) {
        const SceneConfig cfg = random_scene(rng);
        const std::string first = serialize_scene(cfg);
        const SceneConfig loaded = parse_scene(first);
        const std::string second = serialize_scene(loaded);
        REQUIRE(first == second);
        CHECK(loaded.grid_map.cells == cfg.grid_map.cells);
        CHECK(loaded.rng_seed == cfg.rng_seed);
        CHECK(std::abs(loaded.calibration.i.x - cfg.calibration.i.x) <=
              1e-8 * std::abs(cfg.calibration.i.x));
    }
}

TEST_CASE("cell lookup") {
    const GridMap m = GridMap::filled(10, 8, 1.0);
    CHECK(m.world_to_cell({0.5, 0.5}) == CellIndex{0, 0});
    CHECK(m.cell_center({0, 0}) == WorldPoint{0.5, 0.5});
    CHECK_THROWS_AS(m.world_to_cell({-0.1, 0.5}), Error);
    CHECK_THROWS_AS(m.world_to_cell({10.0, 0.5}), Error);

    const GridMap shifted = GridMap::filled(17, 23, 0.37, {-3.2, 1.1});
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ux(-3.2, -3.2 + 17 * 0.37), uy(1.1, 1.1 + 23 * 0.37);
    for (int n = 0; n < 1000; ++n) {
        const WorldPoint wp{ux(rng), uy(rng)};
        const CellIndex c = shifted.world_to_cell(wp);
        CHECK(shifted.world_to_cell(shifted.cell_center(c)) == c);
        const WorldPoint center = shifted.cell_center(c);
        CHECK(std::abs(center.x - wp.x) <= 0.5 * 0.37 + 1e-12);
        CHECK(std::abs(center.y - wp.y) <= 0.5 * 0.37 + 1e-12);
    }
}

TEST_CASE("rig transforms") {
    CameraRig rig = CameraRig::single(parse_scene(kMinimalScene));
    CHECK(transform_world(rig, 0, {3.5, -2.0}) == WorldPoint{3.5, -2.0});

    rig.cameras.push_back({"b.json", rig.cameras[0].scene, {10.0, 0.0, 0.0}});
    const WorldPoint p = transform_world(rig, 1, {0, 0});
    CHECK(p.x == doctest::Approx(0.0));
    CHECK(p.y == doctest::Approx(-10.0));

    // 90 degrees clockwise bearing puts the camera origin on +lateral.
    rig.cameras.push_back({"c.json", rig.cameras[0].scene, {4.0, std::numbers::pi / 2, 0.0}});
    const WorldPoint q = transform_world(rig, 2, {4.0, 0.0});
    CHECK(std::abs(q.x) < 1e-12);
    CHECK(std::abs(q.y) < 1e-12);

    rig.cameras.push_back({"d.json", rig.cameras[0].scene, {7.5, 2.1, -0.7}});
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int n = 0; n < 500; ++n) {
        const WorldPoint wp{u(rng), u(rng)};
        for (std::size_t cam = 0; cam < rig.cameras.size(); ++cam) {
            const WorldPoint back = inverse_transform_world(rig, cam, transform_world(rig, cam, wp));
            CHECK(distance(back, wp) <= 1e-9);
        }
        // distances are preserved
        const WorldPoint other{u(rng), u(rng)};
        CHECK(distance(transform_world(rig, 3, wp), transform_world(rig, 3, other)) ==
              doctest::Approx(distance(wp, other)));
    }
    CHECK_NOTHROW(rig.validate());
    CHECK_THROWS_AS(transform_world(rig, 9, {0, 0}), Error);

    CameraRig bad = rig;
    bad.cameras[0].pose.distance_m = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("heading expressed in a rotated camera frame") {
    const RigPose pose{0.0, 0.0, std::numbers::pi / 2};
    // Source +depth (heading pi/2) becomes camera -lateral after a 90 degree turn.
    const double h = pose.heading_to_camera(std::numbers::pi / 2);
    CHECK(std::cos(h) == doctest::Approx(-1.0));
    const WorldPoint a = pose.source_to_camera({0, 0});
    const WorldPoint b = pose.source_to_camera({0, 1});
    CHECK(std::atan2(b.y - a.y, b.x - a.x) == doctest::Approx(h));
}

TEST_CASE("visible grid map covers the view") {
    const auto calib = ccf::testing::calibrate(ccf::testing::Pinhole{}, -2.0, 10.0, 1.0, 3.0, 960, 720);
    const PerspectiveGrid grid = build_grid(calib);
    const GridMap m = make_visible_grid_map(grid, 1.0, 20.0, 60.0);
    CHECK(m.cols > 5);
    CHECK(m.rows > 5);
    int walkable = 0;
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            if (!m.walkable({c, r})) continue;
            ++walkable;
            const PixelPoint p = grid.world_to_image(m.cell_center({c, r}));
            CHECK(calib.bounds().contains(p));
        }
    }
    CHECK(walkable > 50);
    // i sits inside the map
    CHECK_NOTHROW(m.world_to_cell({0.0, 0.0}));
}
