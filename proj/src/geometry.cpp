#include "nfem/geometry.hpp"

#include "nfem/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace nfem::mesh {

namespace {

constexpr double kPi = std::numbers::pi;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::vector<Vec2> lshape_polygon(const LShapeGeometry& g) {
    const double L = g.length, H = g.height;
    const double ls = g.length_factor * L, hs = g.height_factor * H;
    // Top-right cut-out, counter-clockwise.
    std::vector<Vec2> pts{{0, 0}, {L, 0}, {L, H - hs}, {L - ls, H - hs}, {L - ls, H}, {0, H}};
    const bool mirror_x = g.corner == 1 || g.corner == 2;
    const bool mirror_y = g.corner == 2 || g.corner == 3;
    for (auto& p : pts) {
        if (mirror_x) p.x = L - p.x;
        if (mirror_y) p.y = H - p.y;
    }
    if (mirror_x != mirror_y) {
        std::reverse(pts.begin(), pts.end());
    }
    return pts;
}

// Offset curve of the sinusoidal centerline: side = +1 (top) or -1 (bottom).
struct OffsetCurve {
    const CorrugatedSheetGeometry& g;
    double side;

    double k() const { return 2.0 * kPi / g.component_length; }
    Vec2 at(double u) const {
        const double slope = g.amplitude * k() * std::cos(k() * u);
        const double norm = std::sqrt(1.0 + slope * slope);
        const double off = side * 0.5 * g.thickness;
        return {u - off * slope / norm, g.amplitude * std::sin(k() * u) + off / norm};
    }
    // Parameter u with at(u).x == x; x(u) is monotone when the offset stays
    // inside the radius of curvature.
    double solve(double x) const {
        double lo = x - g.thickness, hi = x + g.thickness;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (at(mid).x < x ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }
};

std::vector<Vec2> sample_curve(const OffsetCurve& c, double u0, double u1, double h) {
    // Dense arc-length estimate, then uniform-in-arc resampling at spacing <= h/2.
    const int dense = 2000 * std::max(1, c.g.components);
    std::vector<double> s(dense + 1, 0.0);
    Vec2 prev = c.at(u0);
    for (int i = 1; i <= dense; ++i) {
        const Vec2 p = c.at(u0 + (u1 - u0) * i / dense);
        s[i] = s[i - 1] + std::hypot(p.x - prev.x, p.y - prev.y);
        prev = p;
    }
    const int pieces = std::max(2, static_cast<int>(std::ceil(s.back() / (0.5 * h))));
    std::vector<Vec2> out;
    out.reserve(pieces + 1);
    std::size_t j = 0;
    for (int i = 0; i <= pieces; ++i) {
        const double target = s.back() * i / pieces;
        while (j + 1 < s.size() && s[j + 1] < target) ++j;
        double u;
        if (i == 0) {
            u = u0;
        } else if (i == pieces) {
            u = u1;
        } else {
            const double t = (target - s[j]) / (s[j + 1] - s[j]);
            u = u0 + (u1 - u0) * (j + t) / dense;
        }
        out.push_back(c.at(u));
    }
    return out;
}

std::vector<BoundaryLoop> corrugated_loops(const CorrugatedSheetGeometry& g, double h) {
    const double k = 2.0 * kPi / g.component_length;
    const double min_radius = 1.0 / (g.amplitude * k * k);
    if (!(0.5 * g.thickness < min_radius)) {
        fail(ErrorCategory::config, "corrugated sheet offset self-intersects; reduce amplitude or thickness");
    }
    const double x_end = g.components * g.component_length;
    const OffsetCurve top{g, 1.0}, bottom{g, -1.0};
    auto bottom_pts = sample_curve(bottom, bottom.solve(0.0), bottom.solve(x_end), h);
    auto top_pts = sample_curve(top, top.solve(0.0), top.solve(x_end), h);
    bottom_pts.front().x = 0.0;
    bottom_pts.back().x = x_end;
    top_pts.front().x = 0.0;
    top_pts.back().x = x_end;
    BoundaryLoop loop;
    loop.group = "outer";
    loop.points = bottom_pts;
    for (auto it = top_pts.rbegin(); it != top_pts.rend(); ++it) {
        loop.points.push_back(*it);
    }
    return {loop};
}

std::vector<BoundaryLoop> grid_loops(const GridPlateGeometry& g) {
    const double s = g.hole_side();
    std::vector<BoundaryLoop> loops;
    loops.push_back({{{0, 0}, {g.side, 0}, {g.side, g.side}, {0, g.side}}, "outer"});
    for (int j = 0; j < g.holes_per_side; ++j) {
        for (int i = 0; i < g.holes_per_side; ++i) {
            const double x0 = g.spacing + i * (s + g.spacing);
            const double y0 = g.spacing + j * (s + g.spacing);
            loops.push_back({{{x0, y0}, {x0, y0 + s}, {x0 + s, y0 + s}, {x0 + s, y0}},
                             "hole_" + std::to_string(j * g.holes_per_side + i)});
        }
    }
    return loops;
}

Mesh cylinder_mesh(const HollowCylinderGeometry& g) {
    const int nt = g.n_theta, nr = g.n_r, nx = g.n_x;
    const double ri = g.inner_radius(), ro = g.outer_radius;
    Mesh m;
    m.dim = 3;
    auto id = [&](int ix, int ir, int it) { return (ix * (nr + 1) + ir) * nt + (it % nt); };
    for (int ix = 0; ix <= nx; ++ix) {
        for (int ir = 0; ir <= nr; ++ir) {
            for (int it = 0; it < nt; ++it) {
                const double x = g.length * ix / nx;
                const double r = ri + (ro - ri) * ir / nr;
                const double th = 2.0 * kPi * it / nt;
                m.nodes.push_back({x, r * std::cos(th), r * std::sin(th)});
            }
        }
    }
    // Each hex (ix, ir, it) is split into the 6 tetrahedra along its main
    // diagonal; the split is translation invariant in index space, so faces
    // of neighbouring hexes match.
    static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (int ix = 0; ix < nx; ++ix) {
        for (int ir = 0; ir < nr; ++ir) {
            for (int it = 0; it < nt; ++it) {
                for (const auto& p : perms) {
                    std::array<int, 3> c{ix, ir, it};
                    std::array<int, 4> tet{};
                    tet[0] = id(c[0], c[1], c[2]);
                    for (int s = 0; s < 3; ++s) {
                        ++c[p[s]];
                        tet[s + 1] = id(c[0], c[1], c[2]);
                    }
                    m.elements.push_back(tet);
                    if (signed_volume(m, m.elements.size() - 1) < 0.0) {
                        std::swap(m.elements.back()[2], m.elements.back()[3]);
                    }
                    if (!(signed_volume(m, m.elements.size() - 1) > 0.0)) {
                        fail(ErrorCategory::internal, "hex-to-tet split produced a degenerate tetrahedron");
                    }
                }
            }
        }
    }
    auto layer_x = [&](int v) { return v / ((nr + 1) * nt); };
    auto layer_r = [&](int v) { return (v / nt) % (nr + 1); };
    for (const auto& f : exterior_facets(3, m.elements)) {
        BoundaryFacet facet{f, NodeTag::neumann, ""};
        auto all = [&](auto pred) { return pred(f[0]) && pred(f[1]) && pred(f[2]); };
        if (all([&](int v) { return layer_x(v) == 0; })) {
            facet = {f, NodeTag::dirichlet, "left"};
        } else if (all([&](int v) { return layer_x(v) == nx; })) {
            facet = {f, NodeTag::dirichlet, "right"};
        } else if (all([&](int v) { return layer_r(v) == 0; })) {
            facet = {f, NodeTag::neumann, "inner"};
        } else if (all([&](int v) { return layer_r(v) == nr; })) {
            facet = {f, NodeTag::neumann, "outer"};
        } else {
            fail(ErrorCategory::internal, "unclassified cylinder boundary facet");
        }
        m.boundary_facets.push_back(std::move(facet));
    }
    retag_nodes(m);
    return m;
}

Mesh mesh_with_window(GeometrySpec geometry, const CountWindow& window, GeometrySpec& used) {
    for (int attempt = 0; attempt <= window.max_retries; ++attempt) {
        Mesh m = build_mesh(geometry);
        const std::size_t n = m.num_elements();
        if (n >= window.min_elements && n <= window.max_elements) {
            used = geometry;
            return m;
        }
        // Element count scales like 1/h^2; aim a little inside the window.
        const double target = n < window.min_elements ? 1.1 * static_cast<double>(window.min_elements)
                                                      : 0.9 * static_cast<double>(window.max_elements);
        geometry.h *= std::sqrt(static_cast<double>(n) / target);
    }
    fail(ErrorCategory::mesh, "could not meet element-count window [" + std::to_string(window.min_elements) + ", " +
                                  std::to_string(window.max_elements) + "]; target size h is unsuitable");
}

} // namespace

std::string_view GeometrySpec::variant_name() const {
    if (long_cylinder) return "LongCylinder";
    return std::visit(overloaded{[](const LShapeGeometry&) { return std::string_view("LShape"); },
                                 [](const ConvexPolygonGeometry&) { return std::string_view("ConvexPolygon"); },
                                 [](const HollowCylinderGeometry&) { return std::string_view("HollowCylinder"); },
                                 [](const CorrugatedSheetGeometry&) { return std::string_view("CorrugatedSheet"); },
                                 [](const GridPlateGeometry&) { return std::string_view("GridPlate"); }},
                      shape);
}

void validate(const GeometrySpec& geometry) {
    auto positive = [](double v, const char* what) {
        if (!(v > 0.0)) {
            fail(ErrorCategory::config, std::string(what) + " must be strictly positive");
        }
    };
    std::visit(overloaded{[&](const LShapeGeometry& g) {
                              positive(g.length, "length");
                              positive(g.height, "height");
                              positive(g.length_factor, "length factor");
                              positive(g.height_factor, "height factor");
                              if (!(g.length_factor < 1.0 && g.height_factor < 1.0)) {
                                  fail(ErrorCategory::config, "L-shape factors must be below 1");
                              }
                              if (g.corner < 0 || g.corner > 3) {
                                  fail(ErrorCategory::config, "L-shape corner must be in 0..3");
                              }
                          },
                          [&](const ConvexPolygonGeometry& g) {
                              if (g.hull.size() < 3) {
                                  fail(ErrorCategory::config, "convex polygon needs at least 3 vertices");
                              }
                          },
                          [&](const HollowCylinderGeometry& g) {
                              positive(g.length, "length");
                              positive(g.outer_radius, "outer radius");
                              positive(g.inner_fraction, "inner radius fraction");
                              if (!(g.inner_fraction < 1.0)) {
                                  fail(ErrorCategory::config, "inner radius must be below outer radius");
                              }
                              if (g.n_theta < 3 || g.n_r < 1 || g.n_x < 1) {
                                  fail(ErrorCategory::config, "cylinder resolution too small");
                              }
                          },
                          [&](const CorrugatedSheetGeometry& g) {
                              positive(g.component_length, "component length");
                              positive(g.thickness, "thickness");
                              positive(g.amplitude, "amplitude");
                              if (g.components < 1) {
                                  fail(ErrorCategory::config, "corrugated sheet needs at least one component");
                              }
                          },
                          [&](const GridPlateGeometry& g) {
                              positive(g.side, "side");
                              positive(g.spacing, "hole spacing");
                              if (g.holes_per_side < 1 || !(g.hole_side() > 0.0)) {
                                  fail(ErrorCategory::config, "grid plate holes do not fit");
                              }
                          }},
               geometry.shape);
    if (!std::holds_alternative<HollowCylinderGeometry>(geometry.shape)) {
        positive(geometry.h, "target element size");
    }
}

std::vector<BoundaryLoop> boundary_loops(const GeometrySpec& geometry) {
    return std::visit(
        overloaded{[](const LShapeGeometry& g) { return std::vector<BoundaryLoop>{{lshape_polygon(g), "outer"}}; },
                   [](const ConvexPolygonGeometry& g) { return std::vector<BoundaryLoop>{{g.hull, "outer"}}; },
                   [](const HollowCylinderGeometry&) -> std::vector<BoundaryLoop> {
                       fail(ErrorCategory::config, "hollow cylinders have no planar boundary loops");
                   },
                   [&](const CorrugatedSheetGeometry& g) { return corrugated_loops(g, geometry.h); },
                   [](const GridPlateGeometry& g) { return grid_loops(g); }},
        geometry.shape);
}

Mesh build_mesh(const GeometrySpec& geometry) {
    validate(geometry);
    if (const auto* cyl = std::get_if<HollowCylinderGeometry>(&geometry.shape)) {
        return cylinder_mesh(*cyl);
    }
    const auto loops = boundary_loops(geometry);
    return triangulate(loops, geometry.h);
}

double analytic_volume(const GeometrySpec& geometry) {
    if (const auto* cyl = std::get_if<HollowCylinderGeometry>(&geometry.shape)) {
        const double ri = cyl->inner_radius(), ro = cyl->outer_radius;
        return kPi * (ro * ro - ri * ri) * cyl->length;
    }
    if (const auto* sheet = std::get_if<CorrugatedSheetGeometry>(&geometry.shape)) {
        // Area between the smooth offset curves by the trapezoid rule on a
        // parameterization much finer than the mesh.
        const OffsetCurve top{*sheet, 1.0}, bottom{*sheet, -1.0};
        const double x_end = sheet->components * sheet->component_length;
        auto area_under = [](const OffsetCurve& c, double u0, double u1) {
            const int n = 20000 * c.g.components;
            double a = 0.0;
            Vec2 prev = c.at(u0);
            for (int i = 1; i <= n; ++i) {
                const Vec2 p = c.at(u0 + (u1 - u0) * i / n);
                a += 0.5 * (p.y + prev.y) * (p.x - prev.x);
                prev = p;
            }
            return a;
        };
        return area_under(top, top.solve(0.0), top.solve(x_end)) -
               area_under(bottom, bottom.solve(0.0), bottom.solve(x_end));
    }
    return enclosed_area(boundary_loops(geometry));
}

std::vector<Vec2> convex_hull(std::vector<Vec2> points) {
    std::sort(points.begin(), points.end(), [](const Vec2& a, const Vec2& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    if (points.size() < 3) {
        return points;
    }
    auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<Vec2> hull(2 * points.size());
    std::size_t k = 0;
    for (const auto& p : points) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = points.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], points[i]) <= 0.0) --k;
        hull[k++] = points[i];
    }
    hull.resize(k - 1);
    return hull;
}

GeneratedMesh generate_lshape(Rng& rng, const LShapeDistribution& params) {
    GeometrySpec geometry;
    LShapeGeometry g;
    g.length = uniform(rng, params.length_lo, params.length_hi);
    g.height = uniform(rng, params.height_lo, params.height_hi);
    g.length_factor = uniform(rng, params.factor_lo, params.factor_hi);
    g.height_factor = uniform(rng, params.factor_lo, params.factor_hi);
    g.corner = static_cast<int>(uniform_index(rng, 4));
    geometry.shape = g;
    geometry.h = params.h;
    GeneratedMesh out;
    out.mesh = mesh_with_window(geometry, params.window, out.geometry);
    return out;
}

GeneratedMesh generate_convex_polygon(Rng& rng, const ConvexPolygonDistribution& params) {
    // Resample degenerate (nearly collinear) point sets.
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<Vec2> pts;
        for (int i = 0; i < params.points; ++i) {
            const double x = uniform(rng, 0.0, params.length);
            const double y = uniform(rng, 0.0, params.height);
            pts.push_back({x, y});
        }
        auto hull = convex_hull(pts);
        if (hull.size() < 3) {
            continue;
        }
        GeometrySpec geometry;
        geometry.shape = ConvexPolygonGeometry{hull};
        geometry.h = params.h;
        if (enclosed_area(boundary_loops(geometry)) < params.min_area) {
            continue;
        }
        GeneratedMesh out;
        out.mesh = mesh_with_window(geometry, params.window, out.geometry);
        return out;
    }
    fail(ErrorCategory::mesh, "could not sample a non-degenerate convex polygon");
}

GeneratedMesh generate_hollow_cylinder(Rng& rng, const HollowCylinderDistribution& params) {
    HollowCylinderGeometry g;
    g.length = uniform(rng, params.length_lo, params.length_hi);
    g.outer_radius = uniform(rng, params.outer_lo, params.outer_hi);
    g.inner_fraction = uniform(rng, params.fraction_lo, params.fraction_hi);
    g.n_theta = params.n_theta;
    g.n_r = params.n_r;
    g.n_x = params.n_x;
    GeneratedMesh out;
    out.geometry.shape = g;
    out.geometry.h = g.length / g.n_x;
    out.mesh = build_mesh(out.geometry);
    return out;
}

GeneratedMesh generate_corrugated_sheet(int n_components, double h) {
    CorrugatedSheetGeometry g;
    g.components = n_components;
    GeneratedMesh out;
    out.geometry.shape = g;
    out.geometry.h = h;
    out.mesh = build_mesh(out.geometry);
    return out;
}

GeneratedMesh generate_grid_plate(double h) {
    GeneratedMesh out;
    out.geometry.shape = GridPlateGeometry{};
    out.geometry.h = h;
    out.mesh = build_mesh(out.geometry);
    return out;
}

GeneratedMesh generate_long_cylinder() {
    HollowCylinderGeometry g;
    g.length = 200.0;
    g.outer_radius = 0.9;
    g.inner_fraction = 0.7;
    // Keep the axial spacing of the mean training cylinder (4.5 m over 20 cells).
    g.n_x = static_cast<int>(std::lround(g.length / (4.5 / 20.0)));
    GeneratedMesh out;
    out.geometry.shape = g;
    out.geometry.h = g.length / g.n_x;
    out.geometry.long_cylinder = true;
    out.mesh = build_mesh(out.geometry);
    return out;
}

} // namespace nfem::mesh
