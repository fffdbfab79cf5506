#pragma once

#include "nfem/mesh.hpp"

#include <span>
#include <string>
#include <vector>

namespace nfem::mesh {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// A closed polygonal loop; the last point connects back to the first.
struct BoundaryLoop {
    std::vector<Vec2> points;
    std::string group;
};

struct TriangulationOptions {
    double min_angle_deg = 20.0;
    // Triangles whose shortest edge is below h * min_edge_fraction are never
    // split for angle quality; this bounds refinement near sharp input corners.
    double min_edge_fraction = 0.1;
    std::size_t max_vertices = 4'000'000;
};

// Conforming Delaunay refinement of the even-odd interior of `loops`.
// Every triangle has area at most sqrt(3)/4 h^2; every triangle not pinned by
// the short-edge floor has minimum angle >= options.min_angle_deg. Boundary
// facets carry the group of the loop they lie on and are tagged Dirichlet.
Mesh triangulate(std::span<const BoundaryLoop> loops, double h, const TriangulationOptions& options = {});

// Area bound used by triangulate() for a target size h.
double max_triangle_area(double h);

// Smallest interior angle of a triangle, in degrees.
double min_angle_deg(const Vec2& a, const Vec2& b, const Vec2& c);

// Area of the even-odd interior of a set of simple, non-intersecting loops.
double enclosed_area(std::span<const BoundaryLoop> loops);

} // namespace nfem::mesh
