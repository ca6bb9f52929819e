#include "ccf/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "ccf/error.hpp"

namespace ccf {

double dot(PixelPoint a, PixelPoint b) { return a.x * b.x + a.y * b.y; }
double cross(PixelPoint a, PixelPoint b) { return a.x * b.y - a.y * b.x; }
double norm(PixelPoint a) { return std::hypot(a.x, a.y); }
double norm(WorldPoint a) { return std::hypot(a.x, a.y); }
double distance(PixelPoint a, PixelPoint b) { return norm(a - b); }
double distance(WorldPoint a, WorldPoint b) { return std::hypot(a.x - b.x, a.y - b.y); }

double distance_to_line(PixelPoint p, PixelPoint a, PixelPoint b) {
    const PixelPoint d = b - a;
    return std::abs(cross(d, p - a)) / norm(d);
}

PixelPoint project_onto_line(PixelPoint p, PixelPoint a, PixelPoint b) {
    const PixelPoint d = b - a;
    return a + (dot(p - a, d) / dot(d, d)) * d;
}

namespace {

constexpr double kSamePointPx = 1e-9;
constexpr double kStallPx = 1e-9;
// Minimum |sin| between any two lines the recursion intersects.
constexpr double kMinConditioning = 0.02;
constexpr int kMaxReferenceDraws = 2000;

bool finite(PixelPoint p) { return std::isfinite(p.x) && std::isfinite(p.y); }

double abs_sine(PixelPoint d1, PixelPoint d2) {
    return std::abs(cross(d1, d2)) / (norm(d1) * norm(d2));
}

[[noreturn]] void bad_calibration(const std::string& field, const std::string& what) {
    throw Error(Errc::InvalidCalibration, field + ": " + what, "calibration." + field);
}

PixelPoint must_intersect(PixelPoint a, PixelPoint b, PixelPoint c, PixelPoint d) {
    auto p = intersect(a, b, c, d);
    if (!p) throw Error(Errc::RecursionStalled, "construction lines became parallel");
    return *p;
}

// Strictly inside or on the boundary of triangle (a, b, c).
bool in_triangle(PixelPoint p, PixelPoint a, PixelPoint b, PixelPoint c) {
    const double d1 = cross(b - a, p - a);
    const double d2 = cross(c - b, p - b);
    const double d3 = cross(a - c, p - c);
    const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
    const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
    return !(has_neg && has_pos);
}

std::optional<ReferencePoints> try_reference(PixelPoint r, PixelPoint origin, PixelPoint unit,
                                             PixelPoint aux, PixelPoint vanish) {
    if (!finite(r) || in_triangle(r, origin, vanish, aux)) return std::nullopt;
    if (distance(r, vanish) < 1.0 || distance(r, origin) < 1.0) return std::nullopt;
    if (abs_sine(r - origin, vanish - aux) < kMinConditioning) return std::nullopt;
    auto t_prev = intersect(origin, r, aux, vanish);
    if (!t_prev) return std::nullopt;
    if (distance(*t_prev, vanish) < 1.0) return std::nullopt;
    if (abs_sine(*t_prev - unit, vanish - r) < kMinConditioning) return std::nullopt;
    if (abs_sine(*t_prev - unit, vanish - origin) < kMinConditioning) return std::nullopt;
    auto r0 = intersect(unit, *t_prev, r, vanish);
    if (!r0 || distance(*r0, vanish) < 1.0) return std::nullopt;
    return ReferencePoints{r, *t_prev, *r0};
}

}  // namespace

void validate_calibration(const CalibrationInput& c) {
    const std::array<std::pair<const char*, PixelPoint>, 6> points{{
        {"i", c.i}, {"j", c.j}, {"k", c.k}, {"l", c.l}, {"u1", c.u1}, {"u2", c.u2}}};
    for (const auto& [name, p] : points) {
        if (!finite(p)) bad_calibration(name, "coordinates must be finite");
    }
    if (!(c.unit_m > 0.0) || !std::isfinite(c.unit_m)) bad_calibration("unit_m", "must be > 0");
    if (c.image_width <= 0 || c.image_height <= 0) {
        bad_calibration("image_size", "width and height must be positive");
    }
    if (distance(c.i, c.j) <= kSamePointPx) bad_calibration("j", "i and j coincide");
    if (distance(c.k, c.l) <= kSamePointPx) bad_calibration("l", "k and l coincide");
    if (distance(c.i, c.k) <= kSamePointPx) bad_calibration("k", "i and k coincide");

    const ImageBounds bounds = c.bounds();
    if (!bounds.contains(c.i)) bad_calibration("i", "must lie inside the image");
    if (!bounds.contains(c.u1)) bad_calibration("u1", "must lie inside the image");
    if (!bounds.contains(c.u2)) bad_calibration("u2", "must lie inside the image");

    if (distance_to_line(c.u1, c.i, c.j) > tolerance::collinear_px) {
        bad_calibration("u1", "not on line i-j");
    }
    const double t = dot(c.u1 - c.i, c.j - c.i) / dot(c.j - c.i, c.j - c.i);
    if (!(t > 0.0 && t < 1.0)) bad_calibration("u1", "must lie strictly between i and j");

    if (distance_to_line(c.u2, c.i, c.k) > tolerance::collinear_px) {
        bad_calibration("u2", "not on line i-k");
    }
    if (distance(project_onto_line(c.u2, c.i, c.k), c.i) <= kSamePointPx) {
        bad_calibration("u2", "coincides with i");
    }
    if (abs_sine(c.j - c.i, c.k - c.i) < 1e-6) bad_calibration("k", "k lies on line i-j");

    // The depth axis must point from i toward the vanishing point.
    if (auto v = intersect(c.i, c.j, c.k, c.l)) {
        const PixelPoint to_v = *v - c.i;
        const PixelPoint to_u1 = c.u1 - c.i;
        if (dot(to_u1, to_v) <= 0.0 || norm(to_u1) >= norm(to_v)) {
            bad_calibration("u1", "must lie between i and the vanishing point");
        }
    }
}

std::optional<PixelPoint> intersect(PixelPoint a, PixelPoint b, PixelPoint c, PixelPoint d) {
    const PixelPoint d1 = b - a;
    const PixelPoint d2 = d - c;
    const double n1 = norm(d1);
    const double n2 = norm(d2);
    if (n1 <= kSamePointPx) throw Error(Errc::DegenerateLine, "first line has equal endpoints");
    if (n2 <= kSamePointPx) throw Error(Errc::DegenerateLine, "second line has equal endpoints");

    const double denom = cross(d1, d2);
    if (std::abs(denom) / (n1 * n2) < tolerance::parallel) {
        const double scale = std::max({1.0, norm(a), norm(c)});
        if (std::abs(cross(d1, c - a)) / n1 <= 1e-9 * scale) {
            throw Error(Errc::CoincidentLines, "lines are identical");
        }
        return std::nullopt;
    }
    const double t = cross(c - a, d2) / denom;
    return a + t * d1;
}

std::optional<PixelPoint> compute_vanishing_point(const CalibrationInput& calib) {
    return intersect(calib.i, calib.j, calib.k, calib.l);
}

ReferencePoints init_reference_points(PixelPoint origin, PixelPoint unit, PixelPoint aux,
                                      PixelPoint vanish, ImageBounds bounds,
                                      std::uint64_t r_seed) {
    if (r_seed == 0) {
        const PixelPoint centroid = (1.0 / 3.0) * (origin + vanish + aux);
        const PixelPoint foot = project_onto_line(centroid, origin, aux);
        if (auto refs = try_reference(2.0 * foot - centroid, origin, unit, aux, vanish)) {
            return *refs;
        }
    }

    // Draws come from the image box doubled about its centre.
    std::mt19937_64 rng(r_seed == 0 ? 0x9E3779B97F4A7C15ULL : r_seed);
    const double w = bounds.width;
    const double h = bounds.height;
    std::uniform_real_distribution<double> xs(-0.5 * w, 1.5 * w);
    std::uniform_real_distribution<double> ys(-0.5 * h, 1.5 * h);
    for (int attempt = 0; attempt < kMaxReferenceDraws; ++attempt) {
        const PixelPoint r{xs(rng), ys(rng)};
        if (auto refs = try_reference(r, origin, unit, aux, vanish)) return *refs;
    }
    throw Error(Errc::ReferenceSelectionFailed,
                "no well-conditioned point outside the reference triangle");
}

ReferencePoints init_reference_points(const CalibrationInput& calib, PixelPoint vanish,
                                      std::uint64_t r_seed) {
    const PixelPoint unit = project_onto_line(calib.u1, calib.i, calib.j);
    return init_reference_points(calib.i, unit, calib.k, vanish, calib.bounds(), r_seed);
}

ScalePoints generate_scale_points(PixelPoint origin, PixelPoint unit, PixelPoint aux,
                                  PixelPoint vanish, const ReferencePoints& refs,
                                  const RecursionLimits& limits) {
    ScalePoints out;
    const PixelPoint lateral = aux - origin;
    auto horizon_gap = [&](PixelPoint p) {
        return std::abs(cross(p - vanish, lateral)) / norm(lateral);
    };

    // Toward the vanishing point: T_n on the aux line, then G_{n+1} back on ours.
    PixelPoint g = unit;
    if (limits.bounds.contains(g) && horizon_gap(g) >= limits.horizon_margin_px) {
        out.forward.push_back(g);
        for (;;) {
            const PixelPoint t = must_intersect(g, refs.r, aux, vanish);
            const PixelPoint next = must_intersect(refs.r0, t, origin, vanish);
            if (distance(next, g) < kStallPx) {
                throw Error(Errc::RecursionStalled, "scale points collapsed before the border");
            }
            if (!limits.bounds.contains(next)) break;
            if (horizon_gap(next) < limits.horizon_margin_px) break;
            if (distance(next, vanish) >= distance(g, vanish)) break;
            if (out.forward.size() >= limits.max_points) {
                throw Error(Errc::RecursionStalled, "too many scale points");
            }
            out.forward.push_back(next);
            g = next;
        }
    }

    // Inverted recursion, away from the vanishing point.
    g = origin;
    for (;;) {
        const PixelPoint t = must_intersect(refs.r0, g, aux, vanish);
        const PixelPoint prev = must_intersect(t, refs.r, origin, vanish);
        if (distance(prev, g) < kStallPx) {
            throw Error(Errc::RecursionStalled, "scale points collapsed before the border");
        }
        if (!limits.bounds.contains(prev)) break;
        // Past the camera plane the image of the line folds back through infinity.
        if (distance(prev, vanish) <= distance(g, vanish)) break;
        if (dot(prev - vanish, origin - vanish) <= 0.0) break;
        if (out.backward.size() >= limits.max_points) {
            throw Error(Errc::RecursionStalled, "too many scale points");
        }
        out.backward.push_back(prev);
        g = prev;
    }
    return out;
}

ScalePoints generate_scale_points(const CalibrationInput& calib, PixelPoint vanish,
                                  const ReferencePoints& refs, const RecursionLimits& limits) {
    const PixelPoint unit = project_onto_line(calib.u1, calib.i, calib.j);
    return generate_scale_points(calib.i, unit, calib.k, vanish, refs, limits);
}

Lattice::Lattice(std::vector<Node> nodes) : nodes_(std::move(nodes)) {
    std::stable_sort(nodes_.begin(), nodes_.end(), [](const Node& a, const Node& b) {
        return a.col != b.col ? a.col < b.col : a.row < b.row;
    });
    nodes_.erase(std::unique(nodes_.begin(), nodes_.end(),
                             [](const Node& a, const Node& b) {
                                 return a.col == b.col && a.row == b.row;
                             }),
                 nodes_.end());
    if (nodes_.empty()) return;
    col_min_ = nodes_.front().col;
    col_max_ = nodes_.back().col;
    row_min_ = std::numeric_limits<int>::max();
    row_max_ = std::numeric_limits<int>::min();
    for (const Node& n : nodes_) {
        row_min_ = std::min(row_min_, n.row);
        row_max_ = std::max(row_max_, n.row);
    }
    const std::size_t cols = static_cast<std::size_t>(col_max_ - col_min_ + 1);
    const std::size_t rows = static_cast<std::size_t>(row_max_ - row_min_ + 1);
    index_.assign(cols * rows, -1);
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
        const auto c = static_cast<std::size_t>(nodes_[k].col - col_min_);
        const auto r = static_cast<std::size_t>(nodes_[k].row - row_min_);
        index_[c * rows + r] = static_cast<int>(k);
    }
}

std::optional<PixelPoint> Lattice::at(int col, int row) const {
    if (nodes_.empty() || col < col_min_ || col > col_max_ || row < row_min_ || row > row_max_) {
        return std::nullopt;
    }
    const std::size_t rows = static_cast<std::size_t>(row_max_ - row_min_ + 1);
    const int k = index_[static_cast<std::size_t>(col - col_min_) * rows +
                         static_cast<std::size_t>(row - row_min_)];
    if (k < 0) return std::nullopt;
    return nodes_[static_cast<std::size_t>(k)].px;
}

bool Lattice::has_cell() const {
    for (const Node& n : nodes_) {
        if (at(n.col + 1, n.row) && at(n.col, n.row + 1) && at(n.col + 1, n.row + 1)) return true;
    }
    return false;
}

PerspectiveGrid::PerspectiveGrid(CalibrationInput calib, GridConstruction construction,
                                 Lattice lattice, const Eigen::Matrix3d& homography)
    : calib_(calib), construction_(std::move(construction)), lattice_(std::move(lattice)) {
    if (std::abs(homography(2, 2)) < 1e-15) {
        throw Error(Errc::InvalidCalibration, "homography sends the origin to infinity");
    }
    h_ = homography / homography(2, 2);
    if (std::abs((h_ / h_.norm()).determinant()) <= 1e-12) {
        throw Error(Errc::InvalidCalibration, "ground-plane homography is singular");
    }
    h_inv_ = h_.inverse();

    const Eigen::Vector3d line = h_inv_.row(2).transpose();
    const double scale = std::hypot(line(0), line(1));
    const double at_origin = line.dot(Eigen::Vector3d(calib_.i.x, calib_.i.y, 1.0));
    has_horizon_ = scale > 1e-12 * std::abs(at_origin);
    if (has_horizon_) horizon_ = (at_origin > 0 ? 1.0 : -1.0) * line / scale;

    double sum_sq = 0.0;
    for (const auto& n : lattice_.nodes()) {
        const double err = distance(world_to_image(lattice_world(n.col, n.row)), n.px);
        sum_sq += err * err;
        max_px_ = std::max(max_px_, err);
    }
    if (!lattice_.nodes().empty()) {
        rms_px_ = std::sqrt(sum_sq / static_cast<double>(lattice_.size()));
    }
}

WorldPoint PerspectiveGrid::lattice_world(int col, int row) const {
    return {col * calib_.unit_m, row * calib_.unit_m};
}

PixelPoint PerspectiveGrid::world_to_image(WorldPoint wp) const {
    const Eigen::Vector3d p = h_ * Eigen::Vector3d(wp.x, wp.y, 1.0);
    if (!(p(2) > 1e-12)) {
        throw Error(Errc::HorizonSingularity, "world point lies at or beyond the horizon");
    }
    return {p(0) / p(2), p(1) / p(2)};
}

double PerspectiveGrid::horizon_distance(PixelPoint p) const {
    if (!has_horizon_) return std::numeric_limits<double>::infinity();
    return horizon_.dot(Eigen::Vector3d(p.x, p.y, 1.0));
}

WorldPoint PerspectiveGrid::image_to_world(PixelPoint p) const {
    if (!(horizon_distance(p) >= tolerance::horizon_px)) {
        throw Error(Errc::HorizonSingularity, "image point at or above the horizon");
    }
    const Eigen::Vector3d q = h_inv_ * Eigen::Vector3d(p.x, p.y, 1.0);
    return {q(0) / q(2), q(1) / q(2)};
}

double PerspectiveGrid::ground_scale_at(WorldPoint wp) const {
    if (!(horizon_distance(world_to_image(wp)) >= tolerance::horizon_px)) {
        throw Error(Errc::HorizonSingularity, "ground point too close to the horizon");
    }
    const PixelPoint a = world_to_image({wp.x - 0.5, wp.y});
    const PixelPoint b = world_to_image({wp.x + 0.5, wp.y});
    return distance(a, b);
}

double PerspectiveGrid::pixel_height_at(WorldPoint wp, double height_m) const {
    return height_m * ground_scale_at(wp);
}

namespace {

// Hartley normalization: centroid to the origin, mean distance sqrt(2).
template <typename Point>
Eigen::Matrix3d normalizer(std::span<const Point> pts) {
    double cx = 0.0, cy = 0.0;
    for (const auto& p : pts) {
        cx += p.x;
        cy += p.y;
    }
    cx /= static_cast<double>(pts.size());
    cy /= static_cast<double>(pts.size());
    double mean = 0.0;
    for (const auto& p : pts) mean += std::hypot(p.x - cx, p.y - cy);
    mean /= static_cast<double>(pts.size());
    const double s = mean > 0.0 ? std::sqrt(2.0) / mean : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
    return t;
}

}  // namespace

Eigen::Matrix3d fit_homography(std::span<const WorldPoint> world,
                               std::span<const PixelPoint> image) {
    if (world.size() != image.size() || world.size() < 4) {
        throw Error(Errc::GridTooSmall, "homography fit needs at least four correspondences");
    }
    const Eigen::Matrix3d tw = normalizer(world);
    const Eigen::Matrix3d ti = normalizer(image);

    Eigen::Matrix<double, 9, 9> ata = Eigen::Matrix<double, 9, 9>::Zero();
    for (std::size_t n = 0; n < world.size(); ++n) {
        const Eigen::Vector3d x = tw * Eigen::Vector3d(world[n].x, world[n].y, 1.0);
        const Eigen::Vector3d u = ti * Eigen::Vector3d(image[n].x, image[n].y, 1.0);
        Eigen::Matrix<double, 9, 1> r1, r2;
        r1 << 0, 0, 0, -x(0), -x(1), -x(2), u(1) * x(0), u(1) * x(1), u(1) * x(2);
        r2 << x(0), x(1), x(2), 0, 0, 0, -u(0) * x(0), -u(0) * x(1), -u(0) * x(2);
        ata.noalias() += r1 * r1.transpose();
        ata.noalias() += r2 * r2.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> solver(ata);
    const Eigen::Matrix<double, 9, 1> h = solver.eigenvectors().col(0);
    Eigen::Matrix3d hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    return ti.inverse() * hn * tw;
}

namespace {

Lattice affine_lattice(const CalibrationInput& calib, PixelPoint unit_depth,
                       PixelPoint unit_lateral, GridConstruction& construction) {
    const PixelPoint e_lat = unit_lateral - calib.i;
    const PixelPoint e_dep = unit_depth - calib.i;
    const ImageBounds bounds = calib.bounds();
    Eigen::Matrix2d basis;
    basis << e_lat.x, e_dep.x, e_lat.y, e_dep.y;
    const Eigen::Matrix2d inv = basis.inverse();

    double cmin = 1e300, cmax = -1e300, rmin = 1e300, rmax = -1e300;
    for (const PixelPoint corner : {PixelPoint{0, 0}, PixelPoint{double(bounds.width), 0},
                                    PixelPoint{0, double(bounds.height)},
                                    PixelPoint{double(bounds.width), double(bounds.height)}}) {
        const Eigen::Vector2d cr = inv * Eigen::Vector2d(corner.x - calib.i.x, corner.y - calib.i.y);
        cmin = std::min(cmin, cr(0));
        cmax = std::max(cmax, cr(0));
        rmin = std::min(rmin, cr(1));
        rmax = std::max(rmax, cr(1));
    }

    std::vector<Lattice::Node> nodes;
    for (int c = static_cast<int>(std::floor(cmin)); c <= static_cast<int>(std::ceil(cmax)); ++c) {
        for (int r = static_cast<int>(std::floor(rmin)); r <= static_cast<int>(std::ceil(rmax)); ++r) {
            const PixelPoint p = calib.i + double(c) * e_lat + double(r) * e_dep;
            if (!bounds.contains(p)) continue;
            nodes.push_back({c, r, p});
            if (c == 0 && r > 0) construction.scale_points.forward.push_back(p);
            if (c == 0 && r < 0) construction.scale_points.backward.push_back(p);
        }
    }
    std::reverse(construction.scale_points.backward.begin(),
                 construction.scale_points.backward.end());
    return Lattice(std::move(nodes));
}

void append_column(std::vector<Lattice::Node>& nodes, int col, PixelPoint seed,
                   const ScalePoints& sp) {
    nodes.push_back({col, 0, seed});
    for (std::size_t n = 0; n < sp.forward.size(); ++n) {
        nodes.push_back({col, static_cast<int>(n) + 1, sp.forward[n]});
    }
    for (std::size_t n = 0; n < sp.backward.size(); ++n) {
        nodes.push_back({col, -static_cast<int>(n) - 1, sp.backward[n]});
    }
}

std::uint64_t column_seed(std::uint64_t r_seed, int col) {
    if (r_seed == 0) return 0;
    // splitmix64 finalizer over (seed, column)
    std::uint64_t z = r_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(col + 0x10000);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z == 0 ? 1 : z;
}

}  // namespace

PerspectiveGrid build_grid(const CalibrationInput& calib, const GridOptions& options) {
    validate_calibration(calib);
    const ImageBounds bounds = calib.bounds();
    const PixelPoint unit_depth = project_onto_line(calib.u1, calib.i, calib.j);
    const PixelPoint unit_lateral = project_onto_line(calib.u2, calib.i, calib.k);

    GridConstruction construction;
    construction.vanish = compute_vanishing_point(calib);

    Lattice lattice;
    if (!construction.vanish) {
        lattice = affine_lattice(calib, unit_depth, unit_lateral, construction);
    } else {
        const PixelPoint vanish = *construction.vanish;
        const RecursionLimits limits{bounds, options.horizon_margin_px};
        construction.refs =
            init_reference_points(calib.i, unit_depth, calib.k, vanish, bounds, options.r_seed);
        construction.scale_points = generate_scale_points(calib.i, unit_depth, calib.k, vanish,
                                                          construction.refs, limits);

        std::vector<Lattice::Node> nodes;
        append_column(nodes, 0, calib.i, construction.scale_points);

        // Column seeds are equally spaced along i-k; each column's first
        // scale point sits on the row through u1, drawn parallel to i-k.
        const PixelPoint step = unit_lateral - calib.i;
        for (const int dir : {1, -1}) {
            for (int c = dir;; c += dir) {
                const PixelPoint seed = calib.i + double(c) * step;
                if (!bounds.contains(seed)) break;
                if (distance(seed, vanish) < 1.0) break;
                const auto unit = intersect(seed, vanish, unit_depth, unit_depth + step);
                if (!unit) continue;
                const PixelPoint aux = seed + step;
                const ReferencePoints refs = init_reference_points(
                    seed, *unit, aux, vanish, bounds, column_seed(options.r_seed, c));
                append_column(nodes, c, seed,
                              generate_scale_points(seed, *unit, aux, vanish, refs, limits));
            }
        }
        lattice = Lattice(std::move(nodes));
    }

    if (!lattice.has_cell()) {
        throw Error(Errc::GridTooSmall, "fewer than 2x2 lattice points inside the image");
    }

    std::vector<WorldPoint> world;
    std::vector<PixelPoint> image;
    world.reserve(lattice.size());
    image.reserve(lattice.size());
    for (const auto& n : lattice.nodes()) {
        world.push_back({n.col * calib.unit_m, n.row * calib.unit_m});
        image.push_back(n.px);
    }
    return PerspectiveGrid(calib, std::move(construction), std::move(lattice),
                           fit_homography(world, image));
}

std::vector<PixelPoint> visible_ground_polygon(const PerspectiveGrid& grid, double margin_px) {
    const double w = grid.calibration().image_width;
    const double h = grid.calibration().image_height;
    std::vector<PixelPoint> poly{{0, 0}, {w, 0}, {w, h}, {0, h}};
    if (std::isinf(grid.horizon_distance({0, 0}))) return poly;

    // Single-plane Sutherland-Hodgman clip against horizon_distance >= margin.
    std::vector<PixelPoint> out;
    for (std::size_t n = 0; n < poly.size(); ++n) {
        const PixelPoint a = poly[n];
        const PixelPoint b = poly[(n + 1) % poly.size()];
        const double da = grid.horizon_distance(a) - margin_px;
        const double db = grid.horizon_distance(b) - margin_px;
        if (da >= 0) out.push_back(a);
        if ((da >= 0) != (db >= 0)) out.push_back(a + (da / (da - db)) * (b - a));
    }
    return out;
}

}  // namespace ccf
