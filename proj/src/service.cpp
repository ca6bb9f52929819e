#include "ccf/service.hpp"

#include <mutex>
#include <shared_mutex>

#include "ccf/error.hpp"
#include "ccf/io.hpp"
#include "ccf/pipeline.hpp"
#include "json_fields.hpp"

// After the Eigen headers: <resolv.h> defines an `_res` macro.
#include <httplib.h>

namespace ccf {

namespace fs = std::filesystem;
using ojson = detail::ordered_json;

namespace {

constexpr const char* kJson = "application/json";

constexpr const char* kFallbackPage =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>ccf</title></head><body>"
    "<h1>ccf calibration service</h1><p>No UI bundle installed; start with <code>--ui DIR</code>. "
    "API: <code>GET /api/background</code>, <code>POST /api/grid/preview</code>, "
    "<code>GET|PUT /api/scene</code>, <code>POST /api/simulate/preview</code>.</p></body></html>";

int status_for(Errc code) {
    if (code == Errc::Io) return 500;
    return is_validation_error(code) || code == Errc::Unreachable || code == Errc::GridTooSmall ||
                   code == Errc::ReferenceSelectionFailed || code == Errc::RecursionStalled ||
                   code == Errc::HorizonSingularity
               ? 422
               : 500;
}

void send_error(httplib::Response& res, int status, const std::string& message, const std::string& field = {}) {
    ojson body;
    body["error"] = message;
    if (!field.empty()) body["field"] = field;
    res.status = status;
    res.set_content(body.dump(), kJson);
}

/// Runs a handler, mapping library errors to JSON error responses.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        send_error(res, status_for(e.code()), e.what(), e.field());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

}  // namespace

struct SceneService::Impl {
    ServiceConfig config;
    httplib::Server server;
    std::shared_mutex scene_mutex;  // readers share, writers exclusive

    explicit Impl(ServiceConfig c) : config(std::move(c)) { routes(); }

    void routes() {
        server.Get("/api/background", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                fs::path bg;
                {
                    std::shared_lock lock(scene_mutex);
                    bg = resolve_relative(config.scene, load_scene(config.scene).background);
                }
                if (!fs::is_regular_file(bg)) {
                    send_error(res, 404, "background not found: " + bg.string(), "background");
                    return;
                }
                res.set_content(read_file(bg), "image/png");
            });
        });

        server.Post("/api/grid/preview", [](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { res.set_content(serialize_grid(build_grid(parse_calibration(req.body))), kJson); });
        });

        server.Get("/api/scene", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                std::shared_lock lock(scene_mutex);
                if (!fs::is_regular_file(config.scene)) {
                    send_error(res, 404, "scene not found: " + config.scene.string());
                    return;
                }
                res.set_content(read_file(config.scene), kJson);
            });
        });

        server.Put("/api/scene", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const SceneConfig cfg = parse_scene(req.body);
                const std::string text = serialize_scene(cfg);
                std::unique_lock lock(scene_mutex);
                const fs::path tmp = config.scene.string() + ".tmp";
                write_file(tmp, text);
                fs::rename(tmp, config.scene);
                res.set_content(text, kJson);
            });
        });

        server.Post("/api/simulate/preview", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const SceneConfig cfg = parse_scene(req.body);
                int agents = config.preview_agents;
                std::uint64_t seed = cfg.rng_seed;
                try {
                    if (req.has_param("agents")) agents = std::stoi(req.get_param_value("agents"));
                    if (req.has_param("seed")) seed = std::stoull(req.get_param_value("seed"));
                } catch (const std::exception&) {
                    throw Error(Errc::SchemaViolation, "agents and seed must be integers", "agents");
                }
                if (agents < 0 || agents > 1000) throw Error(Errc::InvariantViolation, "agents must be in [0, 1000]", "agents");
                res.set_content(simulate_preview(cfg, agents, seed), kJson);
            });
        });

        if (!config.ui_dir.empty() && fs::is_directory(config.ui_dir)) {
            server.set_mount_point("/", config.ui_dir.string());
        } else {
            server.Get("/", [](const httplib::Request&, httplib::Response& res) {
                res.set_content(kFallbackPage, "text/html; charset=utf-8");
            });
        }
    }

    static std::string simulate_preview(const SceneConfig& cfg, int agents, std::uint64_t seed) {
        const Scenario scenario = make_scenario(cfg, agents, 1, 25.0, seed);
        ojson paths = ojson::array();
        for (const AgentSpec& a : scenario.agents) {
            ojson j;
            j["agent_id"] = a.id;
            j["entry_cell"] = {a.entry_cell.col, a.entry_cell.row};
            j["exit_cell"] = {a.exit_cell.col, a.exit_cell.row};
            try {
                const auto polyline = smooth_path(cfg.grid_map, plan_path(cfg.grid_map, a.entry_cell, a.exit_cell));
                ojson pts = ojson::array();
                for (const WorldPoint& p : polyline) pts.push_back({detail::persisted(p.x), detail::persisted(p.y)});
                j["polyline"] = std::move(pts);
            } catch (const Error& e) {
                j["error"] = std::string(errc_name(e.code()));
                j["message"] = e.what();
            }
            paths.push_back(std::move(j));
        }
        ojson doc;
        doc["paths"] = std::move(paths);
        return doc.dump();
    }
};

SceneService::SceneService(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

SceneService::~SceneService() { stop(); }

int SceneService::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(Errc::Io, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void SceneService::serve() { impl_->server.listen_after_bind(); }

void SceneService::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace ccf
