#pragma once

// Ground-plane perspective calibration from six user points.
//
// The user marks two image lines i-j and k-l that are parallel on the ground,
// a unit point u1 on i-j (|i u1| is one unit of distance along the depth
// axis) and u2 on i-k (one unit along the lateral axis). The vanishing point
// of the two lines plus an arbitrary helper point R drive a purely projective
// recursion that steps out equidistant ground points without ever recovering
// the camera. A homography is then fitted to the resulting lattice so that
// arbitrary image <-> ground queries are cheap.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace ccf {

struct PixelPoint {
    double x = 0.0;
    double y = 0.0;

    friend PixelPoint operator+(PixelPoint a, PixelPoint b) { return {a.x + b.x, a.y + b.y}; }
    friend PixelPoint operator-(PixelPoint a, PixelPoint b) { return {a.x - b.x, a.y - b.y}; }
    friend PixelPoint operator*(double s, PixelPoint a) { return {s * a.x, s * a.y}; }
    friend bool operator==(PixelPoint a, PixelPoint b) = default;
};

struct WorldPoint {
    double x = 0.0;  // lateral, meters
    double y = 0.0;  // depth, meters

    friend WorldPoint operator+(WorldPoint a, WorldPoint b) { return {a.x + b.x, a.y + b.y}; }
    friend WorldPoint operator*(double s, WorldPoint a) { return {s * a.x, s * a.y}; }
    friend WorldPoint operator-(WorldPoint a, WorldPoint b) { return {a.x - b.x, a.y - b.y}; }
    friend bool operator==(WorldPoint a, WorldPoint b) = default;
};

double dot(PixelPoint a, PixelPoint b);
double cross(PixelPoint a, PixelPoint b);
double norm(PixelPoint a);
double norm(WorldPoint a);
double distance(PixelPoint a, PixelPoint b);
double distance(WorldPoint a, WorldPoint b);

/// Perpendicular distance of p from the infinite line through a and b.
double distance_to_line(PixelPoint p, PixelPoint a, PixelPoint b);

/// Orthogonal projection of p onto the infinite line through a and b.
PixelPoint project_onto_line(PixelPoint p, PixelPoint a, PixelPoint b);

struct ImageBounds {
    int width = 0;
    int height = 0;

    bool contains(PixelPoint p) const {
        return p.x >= 0.0 && p.y >= 0.0 && p.x <= width && p.y <= height;
    }
};

namespace tolerance {
/// User clicks are only trusted to about a pixel and a half.
inline constexpr double collinear_px = 1.5;
/// Floor on |sin| of the angle between two lines before they count as parallel.
inline constexpr double parallel = 1e-9;
/// Points closer than this to the horizon cannot be lifted to the ground.
inline constexpr double horizon_px = 1.0;
}  // namespace tolerance

struct CalibrationInput {
    PixelPoint i, j, k, l, u1, u2;
    double unit_m = 1.0;
    int image_width = 0;
    int image_height = 0;

    ImageBounds bounds() const { return {image_width, image_height}; }
};

/// Throws Error{InvalidCalibration} naming the failing point.
void validate_calibration(const CalibrationInput& calib);

/// Intersection of line(a, b) with line(c, d); std::nullopt when the lines are
/// parallel (the intersection is the point at infinity).
std::optional<PixelPoint> intersect(PixelPoint a, PixelPoint b, PixelPoint c, PixelPoint d);

std::optional<PixelPoint> compute_vanishing_point(const CalibrationInput& calib);

/// Helper points of the recursion: R, T_{n-1} and R_0.
struct ReferencePoints {
    PixelPoint r;
    PixelPoint t_prev;
    PixelPoint r0;
};

/// Line-generic form. `origin` and `unit` lie on the line being stepped,
/// `aux` is any point on a second ground-parallel line through `vanish`.
/// r_seed == 0 picks R by reflecting the centroid of (origin, vanish, aux)
/// through edge origin-aux; any other seed draws R at random.
ReferencePoints init_reference_points(PixelPoint origin, PixelPoint unit, PixelPoint aux,
                                      PixelPoint vanish, ImageBounds bounds,
                                      std::uint64_t r_seed);

ReferencePoints init_reference_points(const CalibrationInput& calib, PixelPoint vanish,
                                      std::uint64_t r_seed);

struct RecursionLimits {
    ImageBounds bounds;
    /// Forward stepping stops this close to the horizon, where spacing collapses.
    double horizon_margin_px = 20.0;
    std::size_t max_points = 200000;
};

struct ScalePoints {
    std::vector<PixelPoint> forward;   // G_1, G_2, ... toward the vanishing point
    std::vector<PixelPoint> backward;  // G_-1, G_-2, ... away from it
};

ScalePoints generate_scale_points(PixelPoint origin, PixelPoint unit, PixelPoint aux,
                                  PixelPoint vanish, const ReferencePoints& refs,
                                  const RecursionLimits& limits);

ScalePoints generate_scale_points(const CalibrationInput& calib, PixelPoint vanish,
                                  const ReferencePoints& refs, const RecursionLimits& limits);

struct GridConstruction {
    std::optional<PixelPoint> vanish;  // nullopt: lines parallel in the image
    ReferencePoints refs;              // unset in the affine case
    ScalePoints scale_points;          // along line(i, vanish)
};

/// Sparse 2-D lattice of image points indexed by (col, row); col steps along
/// i-k, row steps toward the vanishing point. (0, 0) is i.
class Lattice {
public:
    struct Node {
        int col;
        int row;
        PixelPoint px;
    };

    Lattice() = default;
    /// Duplicate (col, row) entries keep the first occurrence.
    explicit Lattice(std::vector<Node> nodes);

    std::optional<PixelPoint> at(int col, int row) const;
    const std::vector<Node>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    int col_min() const { return col_min_; }
    int col_max() const { return col_max_; }
    int row_min() const { return row_min_; }
    int row_max() const { return row_max_; }
    /// True when some 2x2 block of neighbouring nodes exists.
    bool has_cell() const;

private:
    std::vector<Node> nodes_;  // sorted by (col, row)
    std::vector<int> index_;   // dense (col, row) -> position in nodes_, -1 if absent
    int col_min_ = 0, col_max_ = -1, row_min_ = 0, row_max_ = -1;
};

struct GridOptions {
    std::uint64_t r_seed = 0;
    double horizon_margin_px = 20.0;
};

class PerspectiveGrid {
public:
    PerspectiveGrid(CalibrationInput calib, GridConstruction construction, Lattice lattice,
                    const Eigen::Matrix3d& homography);

    const CalibrationInput& calibration() const { return calib_; }
    const GridConstruction& construction() const { return construction_; }
    const Lattice& lattice() const { return lattice_; }
    /// Maps homogeneous world (x, y, 1) to image; normalized so H(2,2) == 1.
    const Eigen::Matrix3d& homography() const { return h_; }
    double rms_reprojection_px() const { return rms_px_; }
    double max_reprojection_px() const { return max_px_; }
    bool is_affine() const { return !construction_.vanish.has_value(); }

    PixelPoint world_to_image(WorldPoint wp) const;
    WorldPoint image_to_world(PixelPoint p) const;

    /// Signed pixel distance below the horizon (positive on the ground side),
    /// +inf when the view has no finite horizon.
    double horizon_distance(PixelPoint p) const;

    /// Image length of a one metre lateral step centred at wp.
    double ground_scale_at(WorldPoint wp) const;
    double pixel_height_at(WorldPoint wp, double height_m) const;

    /// Lattice coordinates of a node in metres.
    WorldPoint lattice_world(int col, int row) const;

private:
    CalibrationInput calib_;
    GridConstruction construction_;
    Lattice lattice_;
    Eigen::Matrix3d h_;
    Eigen::Matrix3d h_inv_;
    Eigen::Vector3d horizon_;  // image line, scaled to signed pixel distance
    bool has_horizon_ = false;
    double rms_px_ = 0.0;
    double max_px_ = 0.0;
};

PerspectiveGrid build_grid(const CalibrationInput& calib, const GridOptions& options = {});

/// Normalized direct linear fit of a plane-to-image homography, least squares
/// over every correspondence. Requires at least four points.
Eigen::Matrix3d fit_homography(std::span<const WorldPoint> world, std::span<const PixelPoint> image);

/// The image rectangle clipped to points at least margin_px below the horizon,
/// as a convex polygon (possibly empty).
std::vector<PixelPoint> visible_ground_polygon(const PerspectiveGrid& grid, double margin_px);

}  // namespace ccf
