#pragma once

#include <filesystem>
#include <memory>
#include <string>

namespace ccf {

struct ServiceConfig {
    std::filesystem::path scene;   // scene file served and updated by /api/scene
    std::filesystem::path ui_dir;  // static bundle served at /, optional
    int preview_agents = 10;
};

/// Local HTTP service behind the calibration UI.
///   GET  /api/background       scene background as PNG
///   POST /api/grid/preview     calibration object -> grid.json body
///   GET  /api/scene            scene file verbatim
///   PUT  /api/scene            validated scene, stored canonically
///   POST /api/simulate/preview scene -> planned world polylines per agent
///   GET  /                     UI bundle
/// Errors are JSON {"error", "field"?}; validation failures are 422.
class SceneService {
public:
    explicit SceneService(ServiceConfig config);
    ~SceneService();
    SceneService(const SceneService&) = delete;
    SceneService& operator=(const SceneService&) = delete;

    /// Binds; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void serve();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ccf
