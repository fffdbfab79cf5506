#include "doctest.h"

#include "nfem/error.hpp"
#include "nfem/geometry.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

using namespace nfem;
using namespace nfem::mesh;

namespace {

constexpr double kPi = std::numbers::pi;

Vec2 xy(const Mesh& m, int v) { return {m.nodes[v][0], m.nodes[v][1]}; }

void check_quality(const Mesh& m, double h) {
    const double max_area = max_triangle_area(h) * (1 + 1e-9);
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        auto el = m.element(e);
        const Vec2 a = xy(m, el[0]), b = xy(m, el[1]), c = xy(m, el[2]);
        CHECK(signed_volume(m, e) <= max_area);
        const double shortest = std::sqrt(std::min({std::pow(a.x - b.x, 2) + std::pow(a.y - b.y, 2),
                                                    std::pow(b.x - c.x, 2) + std::pow(b.y - c.y, 2),
                                                    std::pow(c.x - a.x, 2) + std::pow(c.y - a.y, 2)}));
        if (shortest > 0.1 * h) {
            CHECK(min_angle_deg(a, b, c) >= 20.0 - 1e-9);
        }
    }
}

void check_tags(const Mesh& m) {
    std::set<int> on_boundary;
    for (std::size_t f = 0; f < m.boundary_facets.size(); ++f) {
        for (int v : m.facet_nodes(f)) on_boundary.insert(v);
    }
    for (std::size_t v = 0; v < m.num_nodes(); ++v) {
        CHECK((m.node_tags[v] != NodeTag::interior) == (on_boundary.count(static_cast<int>(v)) == 1));
    }
}

} // namespace

TEST_CASE("L-shape with half cut-out has area 0.75") {
    for (int corner = 0; corner < 4; ++corner) {
        GeometrySpec g;
        g.shape = LShapeGeometry{1.0, 1.0, 0.5, 0.5, corner};
        g.h = 0.075;
        const Mesh m = build_mesh(g);
        validate(m);
        CHECK(total_volume(m) == doctest::Approx(0.75).epsilon(1e-12));
        CHECK(analytic_volume(g) == doctest::Approx(0.75).epsilon(1e-14));
        CHECK(min_signed_volume(m) > 0.0);
        check_quality(m, g.h);
        check_tags(m);
    }
}

TEST_CASE("generated L-shapes respect the element-count window and are all-Dirichlet") {
    for (int i = 0; i < 20; ++i) {
        auto rng = make_rng(11, i, 0);
        const auto gen = generate_lshape(rng);
        const auto n = gen.mesh.num_elements();
        CHECK(n >= 155);
        CHECK(n <= 524);
        CHECK(std::abs(total_volume(gen.mesh) - analytic_volume(gen.geometry)) <= 1e-12);
        for (const auto& f : gen.mesh.boundary_facets) CHECK(f.tag == NodeTag::dirichlet);
        check_tags(gen.mesh);
    }
}

TEST_CASE("mesh generation is deterministic byte for byte") {
    auto r1 = make_rng(5, 3, 0);
    auto r2 = make_rng(5, 3, 0);
    CHECK(mesh_to_json(generate_lshape(r1).mesh) == mesh_to_json(generate_lshape(r2).mesh));
    auto r3 = make_rng(5, 3, 1);
    auto r4 = make_rng(5, 3, 1);
    CHECK(mesh_to_json(generate_convex_polygon(r3).mesh) == mesh_to_json(generate_convex_polygon(r4).mesh));
}

TEST_CASE("convex hull ignores interior points") {
    const auto hull = convex_hull({{0, 0}, {1, 0}, {0.5, 0.5}, {1, 1}, {0.2, 0.7}, {0, 1}, {0.5, 0}});
    REQUIRE(hull.size() == 4);
    GeometrySpec g;
    g.shape = ConvexPolygonGeometry{hull};
    g.h = 0.1;
    CHECK(total_volume(build_mesh(g)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("generated convex polygons have 3 to 7 convex hull vertices") {
    for (int i = 0; i < 20; ++i) {
        auto rng = make_rng(7, i, 1);
        const auto gen = generate_convex_polygon(rng);
        const auto& hull = std::get<ConvexPolygonGeometry>(gen.geometry.shape).hull;
        CHECK(hull.size() >= 3);
        CHECK(hull.size() <= 7);
        for (std::size_t k = 0; k < hull.size(); ++k) {
            const Vec2 a = hull[k], b = hull[(k + 1) % hull.size()], c = hull[(k + 2) % hull.size()];
            CHECK((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x) > 0.0);
        }
        CHECK(gen.mesh.num_elements() >= 148);
        CHECK(gen.mesh.num_elements() <= 1122);
        CHECK(std::abs(total_volume(gen.mesh) - analytic_volume(gen.geometry)) <= 1e-12);
    }
}

TEST_CASE("hollow cylinder structure, radii, tags and facet area") {
    HollowCylinderGeometry c{4.0, 1.0, 0.75, 32, 2, 20};
    GeometrySpec g;
    g.shape = c;
    const Mesh m = build_mesh(g);
    validate(m);
    CHECK(m.num_elements() == static_cast<std::size_t>(6 * 32 * 2 * 20));
    for (const auto& p : m.nodes) {
        const double r = std::hypot(p[1], p[2]);
        CHECK(r >= 0.75 - 1e-12);
        CHECK(r <= 1.0 + 1e-12);
    }
    for (std::size_t v = 0; v < m.num_nodes(); ++v) {
        const double x = m.nodes[v][0];
        const double r = std::hypot(m.nodes[v][1], m.nodes[v][2]);
        const bool end = std::abs(x) < 1e-12 || std::abs(x - 4.0) < 1e-12;
        const bool surface = std::abs(r - 0.75) < 1e-12 || std::abs(r - 1.0) < 1e-12;
        if (end) {
            CHECK(m.node_tags[v] == NodeTag::dirichlet);
        } else if (surface) {
            CHECK(m.node_tags[v] == NodeTag::neumann);
        } else {
            CHECK(m.node_tags[v] == NodeTag::interior);
        }
    }
    // Exact area of the polygonal surface: inscribed perimeter factor on the
    // lateral faces and inscribed polygon area on the end caps.
    const double n = 32, ri = 0.75, ro = 1.0, L = 4.0;
    const double lateral = 2 * kPi * L * (ri + ro) * std::sin(kPi / n) / (kPi / n);
    const double caps = 2 * (n / 2) * std::sin(2 * kPi / n) * (ro * ro - ri * ri);
    double area = 0.0;
    for (std::size_t f = 0; f < m.boundary_facets.size(); ++f) area += facet_measure(m, f);
    CHECK(area == doctest::Approx(lateral + caps).epsilon(1e-12));
    // The smooth-surface value differs only by the polygonalization error.
    CHECK(std::abs(area / (2 * kPi * L * (ri + ro) + 2 * kPi * (ro * ro - ri * ri)) - 1) < 0.01);
    CHECK(std::abs(total_volume(m) / analytic_volume(g) - 1.0) < 0.01);
    CHECK(facets_in_group(m, "left").size() == static_cast<std::size_t>(2 * 32 * 2));
    CHECK(facets_in_group(m, "inner").size() == static_cast<std::size_t>(2 * 32 * 20));
}

TEST_CASE("sampled hollow cylinders stay inside the distribution") {
    for (int i = 0; i < 5; ++i) {
        auto rng = make_rng(2, i, 2);
        const auto gen = generate_hollow_cylinder(rng);
        const auto& c = std::get<HollowCylinderGeometry>(gen.geometry.shape);
        CHECK(c.length >= 4.0);
        CHECK(c.length <= 5.0);
        CHECK(c.outer_radius >= 0.8);
        CHECK(c.outer_radius <= 1.0);
        CHECK(c.inner_fraction >= 0.6);
        CHECK(c.inner_fraction <= 0.8);
        CHECK(std::abs(total_volume(gen.mesh) / analytic_volume(gen.geometry) - 1.0) < 0.01);
    }
}

TEST_CASE("corrugated sheet widths, areas and element counts") {
    const auto one = generate_corrugated_sheet(1);
    double xmin = 1e9, xmax = -1e9;
    for (const auto& p : one.mesh.nodes) {
        xmin = std::min(xmin, p[0]);
        xmax = std::max(xmax, p[0]);
    }
    CHECK(xmin == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(xmax == doctest::Approx(3.0).epsilon(1e-12));

    const auto ten = generate_corrugated_sheet(10);
    validate(ten.mesh);
    CHECK(std::abs(static_cast<double>(ten.mesh.num_elements()) / 10840.0 - 1.0) <= 0.25);
    CHECK(std::abs(total_volume(ten.mesh) / analytic_volume(ten.geometry) - 1.0) < 0.01);
    CHECK(boundary_loop_count(ten.mesh) == 1);
    check_quality(ten.mesh, kCorrugatedSheetH);
}

TEST_CASE("corrugated sheet with an over-thick offset is rejected") {
    GeometrySpec g;
    g.shape = CorrugatedSheetGeometry{1, 3.0, 2.0, 0.75};
    g.h = 0.1;
    CHECK_THROWS_AS(build_mesh(g), Error);
}

TEST_CASE("grid plate has 100 holes, analytic area and Euler characteristic") {
    const auto gen = generate_grid_plate();
    const Mesh& m = gen.mesh;
    validate(m);
    const double s = GridPlateGeometry{}.hole_side();
    CHECK(s == doctest::Approx(0.2075).epsilon(1e-14));
    CHECK(boundary_loop_count(m) == 101);
    CHECK(std::abs(total_volume(m) - (16.0 - 100 * s * s)) <= 1e-9);
    const long V = static_cast<long>(m.num_nodes());
    const long E = static_cast<long>(unique_edges(m).size());
    const long F = static_cast<long>(m.num_elements());
    CHECK(V - E + F == 1 - 100);
    CHECK(std::abs(static_cast<double>(F) / 23296.0 - 1.0) <= 0.25);
    for (const auto& f : m.boundary_facets) CHECK(f.tag == NodeTag::dirichlet);
    check_tags(m);
}

TEST_CASE("long cylinder uses the fixed large-mesh parameters") {
    const auto gen = generate_long_cylinder();
    const auto& c = std::get<HollowCylinderGeometry>(gen.geometry.shape);
    CHECK(c.length == 200.0);
    CHECK(c.outer_radius == 0.9);
    CHECK(c.inner_radius() == doctest::Approx(0.63));
    CHECK(gen.mesh.num_elements() == static_cast<std::size_t>(6 * c.n_theta * c.n_r * c.n_x));
    CHECK(std::abs(total_volume(gen.mesh) / analytic_volume(gen.geometry) - 1.0) < 0.01);
    CHECK(gen.geometry.variant_name() == "LongCylinder");
}

TEST_CASE("invalid geometry parameters raise config errors") {
    GeometrySpec g;
    g.shape = HollowCylinderGeometry{4.0, 1.0, 1.2, 32, 2, 20};
    try {
        validate(g);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::config);
    }
    g.shape = LShapeGeometry{-1.0, 1.0, 0.5, 0.5, 0};
    CHECK_THROWS_AS(validate(g), Error);
}

TEST_CASE("structured rectangle and exterior facets") {
    const Mesh m = structured_rectangle(4, 3, 2.0, 1.5);
    validate(m);
    CHECK(m.num_elements() == 24);
    CHECK(total_volume(m) == doctest::Approx(3.0));
    double perimeter = 0.0;
    for (std::size_t f = 0; f < m.boundary_facets.size(); ++f) perimeter += facet_measure(m, f);
    CHECK(perimeter == doctest::Approx(7.0));
    // Facets are oriented outward: the outward normal (dy, -dx) points away from the centroid.
    for (std::size_t f = 0; f < m.boundary_facets.size(); ++f) {
        auto fn = m.facet_nodes(f);
        const auto& a = m.nodes[fn[0]];
        const auto& b = m.nodes[fn[1]];
        const double nx = b[1] - a[1], ny = -(b[0] - a[0]);
        const double mx = 0.5 * (a[0] + b[0]) - 1.0, my = 0.5 * (a[1] + b[1]) - 0.75;
        CHECK(nx * mx + ny * my > 0.0);
    }
}

TEST_CASE("mesh JSON round trip is exact") {
    auto rng = make_rng(3, 0, 0);
    const Mesh m = generate_lshape(rng).mesh;
    const Mesh back = mesh_from_json(mesh_to_json(m));
    CHECK(back.nodes == m.nodes);
    CHECK(back.elements == m.elements);
    CHECK(back.node_tags == m.node_tags);
    REQUIRE(back.boundary_facets.size() == m.boundary_facets.size());
    for (std::size_t f = 0; f < m.boundary_facets.size(); ++f) {
        CHECK(back.boundary_facets[f].nodes == m.boundary_facets[f].nodes);
        CHECK(back.boundary_facets[f].group == m.boundary_facets[f].group);
    }
    const auto path = std::filesystem::temp_directory_path() / "nfem_mesh_roundtrip.json";
    write_mesh(m, path);
    CHECK(mesh_to_json(read_mesh(path)) == mesh_to_json(m));
    std::filesystem::remove(path);

    HollowCylinderGeometry c{4.0, 1.0, 0.7, 8, 1, 3};
    GeometrySpec g;
    g.shape = c;
    const Mesh cyl = build_mesh(g);
    CHECK(mesh_to_json(mesh_from_json(mesh_to_json(cyl))) == mesh_to_json(cyl));
}

TEST_CASE("malformed mesh files raise format errors") {
    try {
        mesh_from_json("{\"version\": 1, \"dim\": 2}");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::format);
    }
    CHECK_THROWS_AS(mesh_from_json("not json"), Error);
    Mesh bad = structured_rectangle(1, 1);
    bad.elements[0] = {0, 2, 1, -1};  // inverted
    CHECK_THROWS_AS(validate(bad), Error);
}
