#pragma once

#include "nfem/mesh.hpp"
#include "nfem/rng.hpp"
#include "nfem/triangulate.hpp"

#include <string_view>
#include <variant>
#include <vector>

namespace nfem::mesh {

// Rectangle [0,length]x[0,height] minus a corner rectangle of size
// (length_factor*length) x (height_factor*height).
struct LShapeGeometry {
    double length = 1.0;
    double height = 1.0;
    double length_factor = 0.5;
    double height_factor = 0.5;
    int corner = 0;  // 0 top-right, 1 top-left, 2 bottom-left, 3 bottom-right
};

struct ConvexPolygonGeometry {
    std::vector<Vec2> hull;  // counter-clockwise hull vertices
};

struct HollowCylinderGeometry {
    double length = 4.0;
    double outer_radius = 1.0;
    double inner_fraction = 0.7;  // inner radius = inner_fraction * outer_radius
    int n_theta = 32;
    int n_r = 2;
    int n_x = 20;

    double inner_radius() const { return inner_fraction * outer_radius; }
};

// Strip of constant thickness whose centerline is
// y = amplitude * sin(2 pi x / component_length), clipped to x in [0, n L].
struct CorrugatedSheetGeometry {
    int components = 10;
    double component_length = 3.0;
    double thickness = 0.5;
    double amplitude = 0.75;
};

// Square plate with holes_per_side^2 square holes separated (and framed) by `spacing`.
struct GridPlateGeometry {
    double side = 4.0;
    int holes_per_side = 10;
    double spacing = 0.175;

    double hole_side() const { return (side - (holes_per_side + 1) * spacing) / holes_per_side; }
};

struct GeometrySpec {
    std::variant<LShapeGeometry, ConvexPolygonGeometry, HollowCylinderGeometry, CorrugatedSheetGeometry,
                 GridPlateGeometry>
        shape;
    double h = 0.1;  // target element size for triangulated variants
    bool long_cylinder = false;

    std::string_view variant_name() const;
};

// Throws Error(config) for non-positive lengths or inverted radii.
void validate(const GeometrySpec& geometry);

// Deterministic mesh for a fully specified geometry.
Mesh build_mesh(const GeometrySpec& geometry);

// Analytic measure of the domain (exact for polygons, exact cylinder for
// hollow cylinders, polygonized offset curves for the corrugated sheet).
double analytic_volume(const GeometrySpec& geometry);

struct GeneratedMesh {
    GeometrySpec geometry;
    Mesh mesh;
};

// Element-count window used when sampling training geometries. If the first
// triangulation misses the window, h is rescaled and the mesh rebuilt; after
// max_retries the generator gives up with Error(mesh).
struct CountWindow {
    std::size_t min_elements = 0;
    std::size_t max_elements = 0;
    int max_retries = 10;
};

struct LShapeDistribution {
    double length_lo = 0.5, length_hi = 1.0;
    double height_lo = 0.5, height_hi = 1.0;
    double factor_lo = 1.0 / 3.0, factor_hi = 2.0 / 3.0;
    double h = 0.075;
    CountWindow window{155, 524, 10};
};

struct ConvexPolygonDistribution {
    int points = 7;
    double length = 1.0;
    double height = 1.0;
    double h = 0.06;
    double min_area = 0.05;
    CountWindow window{148, 1122, 10};
};

struct HollowCylinderDistribution {
    double length_lo = 4.0, length_hi = 5.0;
    double outer_lo = 0.8, outer_hi = 1.0;
    double fraction_lo = 0.6, fraction_hi = 0.8;
    int n_theta = 32;
    int n_r = 2;
    int n_x = 20;
};

GeneratedMesh generate_lshape(Rng& rng, const LShapeDistribution& params = {});
GeneratedMesh generate_convex_polygon(Rng& rng, const ConvexPolygonDistribution& params = {});
GeneratedMesh generate_hollow_cylinder(Rng& rng, const HollowCylinderDistribution& params = {});

// Default target sizes calibrated against the reference element counts.
inline constexpr double kCorrugatedSheetH = 0.088;
inline constexpr double kGridPlateH = 0.0423;

GeneratedMesh generate_corrugated_sheet(int n_components, double h = kCorrugatedSheetH);
GeneratedMesh generate_grid_plate(double h = kGridPlateH);
GeneratedMesh generate_long_cylinder();

// Counter-clockwise convex hull (Andrew's monotone chain); collinear points dropped.
std::vector<Vec2> convex_hull(std::vector<Vec2> points);

// Boundary loops of a planar geometry (throws for cylinders).
std::vector<BoundaryLoop> boundary_loops(const GeometrySpec& geometry);

} // namespace nfem::mesh
