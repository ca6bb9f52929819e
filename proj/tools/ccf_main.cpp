// ccf: command-line front end for every pipeline stage and the local service.
// Exit status: 0 success, 2 invalid input, 1 runtime failure.

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ccf/annotate.hpp"
#include "ccf/background.hpp"
#include "ccf/error.hpp"
#include "ccf/evaluate.hpp"
#include "ccf/pipeline.hpp"
#include "ccf/service.hpp"

namespace fs = std::filesystem;

namespace {

ccf::SceneService* g_service = nullptr;

void on_signal(int) {
    if (g_service) g_service->stop();
}

struct CameraArgs {
    std::string scene;
    std::string cameras;

    void add(CLI::App* app) {
        auto* s = app->add_option("--scene", scene, "Scene file")->check(CLI::ExistingFile);
        auto* c = app->add_option("--cameras", cameras, "Camera rig file (multi-camera)")->check(CLI::ExistingFile);
        s->excludes(c);
    }
    ccf::LoadedRig load() const { return ccf::load_cameras(scene, cameras); }
};

void add_simulate_flags(CLI::App* app, ccf::SimulateParams& p, std::optional<std::uint64_t>& seed) {
    app->add_option("--agents", p.agents, "Number of agents")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--frames", p.frames, "Sequence length in frames")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--fps", p.fps, "Frame rate")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--seed", seed, "Random seed (default: the scene's rng_seed)");
}

void add_eval_flags(CLI::App* app, ccf::EvalOptions& o, std::string& anchor) {
    app->add_option("--score-threshold", o.score_threshold, "Minimum detection score")->capture_default_str();
    app->add_option("--found-threshold", o.found_threshold, "IoU percent for a pedestrian to count as found")
        ->check(CLI::Range(0.0, 100.0))
        ->capture_default_str();
    app->add_option("--match-anchor", anchor, "Box point for nearest-box matching")
        ->check(CLI::IsMember({"center", "top_left"}))
        ->capture_default_str();
}

void add_annotate_flags(CLI::App* app, ccf::AnnotateOptions& o) {
    app->add_option("--min-visible", o.min_visible_px, "Minimum visible pixels for an entry")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--density-sigma", o.density_sigma_px, "Write density maps with this Gaussian sigma (px)")
        ->check(CLI::NonNegativeNumber);
}

void print_report(const ccf::EvalReport& r) {
    std::cout << "global_accuracy " << r.global_accuracy << "%  found_rate " << r.found_rate << "%  (" << r.n_found
              << "/" << r.n_gt << " found over " << r.frames.size() << " frames)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic crowd data: calibrate, simulate, render, annotate and evaluate"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Print progress");
    std::string out;

    // background
    auto* bg = app.add_subcommand("background", "Temporal median background plate from frames");
    std::string bg_input;
    ccf::BackgroundOptions bg_opts;
    double bg_fps = 25.0;
    bg->add_option("--input", bg_input, "PNG frame directory or frame list file")->required()->check(CLI::ExistingPath);
    bg->add_option("--out", out, "Output PNG")->required();
    bg->add_option("--stride", bg_opts.stride, "Use every n-th frame")->check(CLI::PositiveNumber)->capture_default_str();
    bg->add_option("--min-frames", bg_opts.min_frames, "Minimum sampled frames")->check(CLI::PositiveNumber)->capture_default_str();
    bg->add_option("--fps", bg_fps, "Frame rate of the input")->check(CLI::PositiveNumber);

    // grid
    auto* grid = app.add_subcommand("grid", "Perspective grid from the scene calibration");
    std::string grid_scene;
    std::uint64_t r_seed = 0;
    grid->add_option("--scene", grid_scene, "Scene file")->required()->check(CLI::ExistingFile);
    grid->add_option("--out", out, "Output directory")->required();
    grid->add_option("--r-seed", r_seed, "Reference point seed (0: deterministic)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Sample agents and plan trajectories");
    CameraArgs sim_cams;
    ccf::SimulateParams sim_params;
    std::optional<std::uint64_t> seed;
    sim_cams.add(sim);
    sim->add_option("--out", out, "Output directory")->required();
    add_simulate_flags(sim, sim_params, seed);

    // render
    auto* render = app.add_subcommand("render", "Composite agents onto the background plates");
    CameraArgs render_cams;
    ccf::RenderParams render_params;
    std::string sim_dir, sprites;
    render_cams.add(render);
    render->add_option("--sim", sim_dir, "Directory with scenario.json and trajectories.csv")->required()->check(CLI::ExistingDirectory);
    render->add_option("--sprites", sprites, "Sprite manifest (default: built-in walkers)")->check(CLI::ExistingFile);
    render->add_option("--threads", render_params.threads, "Worker threads (0: all cores)");
    render->add_option("--out", out, "Output directory")->required();

    // annotate
    auto* annotate = app.add_subcommand("annotate", "Ground truth from a rendered sequence");
    std::string render_dir;
    ccf::AnnotateOptions ann_opts;
    annotate->add_option("--render", render_dir, "Render output directory")->required()->check(CLI::ExistingDirectory);
    annotate->add_option("--out", out, "Output directory")->required();
    add_annotate_flags(annotate, ann_opts);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score detections against ground truth");
    std::string gt_file, det_file, anchor = "center";
    ccf::EvalOptions eval_opts;
    evaluate->add_option("--gt", gt_file, "ground_truth.jsonl")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--detections", det_file, "Detections (JSON lines)")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--out", out, "Output directory")->required();
    add_eval_flags(evaluate, eval_opts, anchor);

    // pipeline run
    auto* pipeline = app.add_subcommand("pipeline", "Chained stages");
    pipeline->require_subcommand(1);
    auto* run = pipeline->add_subcommand("run", "grid -> simulate -> render -> annotate -> evaluate (ground-truth replay)");
    CameraArgs run_cams;
    ccf::PipelineParams run_params;
    std::optional<std::uint64_t> run_seed;
    std::string run_sprites, run_anchor = "center";
    run_cams.add(run);
    run->add_option("--out", out, "Output directory")->required();
    add_simulate_flags(run, run_params.simulate, run_seed);
    add_annotate_flags(run, run_params.annotate);
    add_eval_flags(run, run_params.evaluate, run_anchor);
    run->add_option("--sprites", run_sprites, "Sprite manifest (default: built-in walkers)")->check(CLI::ExistingFile);
    run->add_option("--threads", run_params.render.threads, "Worker threads (0: all cores)");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP service for the calibration UI");
    std::string serve_scene, ui_dir, host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--scene", serve_scene, "Scene file to serve and update")->required()->check(CLI::ExistingFile);
    serve->add_option("--port", port, "Port (0: any free port)")->check(CLI::Range(0, 65535))->capture_default_str();
    serve->add_option("--host", host, "Bind address")->capture_default_str();
    serve->add_option("--ui", ui_dir, "Static UI bundle directory")->check(CLI::ExistingDirectory);

    // demo
    auto* demo = app.add_subcommand("demo", "Write the bundled demo scene, rig, video and sprites");
    ccf::DemoParams demo_params;
    demo->add_option("--out", out, "Output directory")->required();
    demo->add_option("--width", demo_params.width, "Image width")->capture_default_str();
    demo->add_option("--height", demo_params.height, "Image height")->capture_default_str();
    demo->add_option("--cameras", demo_params.cameras, "1 or 2")->check(CLI::Range(1, 2))->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    auto anchor_of = [](const std::string& a) { return a == "top_left" ? ccf::MatchAnchor::TopLeft : ccf::MatchAnchor::Center; };

    try {
        if (*bg) {
            const auto seq = ccf::load_frames(bg_input, bg_fps);
            const auto plate = ccf::extract_background(seq, bg_opts.stride, bg_opts.min_frames);
            if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
            ccf::write_plate(plate, out);
            if (verbose) std::cerr << "median of " << plate.n_samples << " frames -> " << out << "\n";
        } else if (*grid) {
            const auto g = ccf::run_grid(grid_scene, out, r_seed);
            if (verbose) {
                std::cerr << g.lattice().size() << " lattice points, reprojection rms " << g.rms_reprojection_px()
                          << " px\n";
            }
        } else if (*sim) {
            sim_params.seed = seed;
            ccf::run_simulate(sim_cams.load(), out, sim_params);
        } else if (*render) {
            render_params.sprites = sprites;
            const auto m = ccf::run_render(render_cams.load(), sim_dir, out, render_params);
            if (verbose) std::cerr << m.frames << " frames x " << m.cameras.size() << " cameras -> " << out << "\n";
        } else if (*annotate) {
            const auto s = ccf::export_dataset(render_dir, out, ann_opts);
            std::cout << s.records << " records, " << s.entries << " entries\n";
            for (const auto& [cam, track] : s.broken_tracks) {
                std::cerr << "warning: camera " << cam << " track " << track << " is not contiguous\n";
            }
        } else if (*evaluate) {
            eval_opts.anchor = anchor_of(anchor);
            print_report(ccf::evaluate_files(gt_file, det_file, out, eval_opts));
        } else if (*run) {
            run_params.simulate.seed = run_seed;
            run_params.render.sprites = run_sprites;
            run_params.evaluate.anchor = anchor_of(run_anchor);
            const auto r = ccf::run_pipeline(run_cams.load(), out, run_params);
            std::cout << r.annotations.records << " annotation records, " << r.annotations.entries << " entries\n";
            print_report(r.report);
        } else if (*serve) {
            ccf::SceneService service({serve_scene, ui_dir});
            const int bound = service.bind(host, port);
            std::cout << "serving " << serve_scene << " on http://" << host << ":" << bound << "/" << std::endl;
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            service.serve();
            g_service = nullptr;
        } else if (*demo) {
            ccf::write_demo(out, demo_params);
            std::cout << "demo written to " << out << "\n";
        }
    } catch (const ccf::Error& e) {
        std::cerr << "error: " << e.what();
        if (!e.field().empty()) std::cerr << " [" << e.field() << "]";
        std::cerr << "\n";
        return ccf::is_validation_error(e.code()) ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
