#include "nfem/mesh.hpp"

#include "nfem/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace nfem::mesh {

namespace {

double det3(const Point& a, const Point& b, const Point& c) {
    return a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) +
           a[2] * (b[0] * c[1] - b[1] * c[0]);
}

Point diff(const Point& a, const Point& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

struct FacetKey {
    std::array<int, 3> sorted;
    bool operator==(const FacetKey&) const = default;
};

struct FacetKeyHash {
    std::size_t operator()(const FacetKey& k) const noexcept {
        std::uint64_t h = 1469598103934665603ULL;
        for (int v : k.sorted) {
            h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v));
            h *= 1099511628211ULL;
        }
        return static_cast<std::size_t>(h);
    }
};

FacetKey make_key(std::array<int, 3> nodes, int count) {
    std::sort(nodes.begin(), nodes.begin() + count);
    return FacetKey{nodes};
}

// Outward-oriented local facets of a positively oriented simplex.
std::array<std::array<int, 3>, 4> local_facets(int dim, const std::array<int, 4>& v) {
    if (dim == 2) {
        return {{{v[1], v[2], -1}, {v[2], v[0], -1}, {v[0], v[1], -1}, {-1, -1, -1}}};
    }
    return {{{v[1], v[2], v[3]}, {v[0], v[3], v[2]}, {v[0], v[1], v[3]}, {v[0], v[2], v[1]}}};
}

} // namespace

std::string_view to_string(NodeTag tag) noexcept {
    switch (tag) {
    case NodeTag::interior: return "interior";
    case NodeTag::dirichlet: return "dirichlet";
    case NodeTag::neumann: return "neumann";
    }
    return "interior";
}

NodeTag node_tag_from_string(std::string_view name) {
    if (name == "interior") return NodeTag::interior;
    if (name == "dirichlet") return NodeTag::dirichlet;
    if (name == "neumann") return NodeTag::neumann;
    fail(ErrorCategory::format, "unknown node tag '" + std::string(name) + "'");
}

double signed_volume(const Mesh& mesh, std::size_t e) {
    const auto& el = mesh.elements[e];
    const Point& p0 = mesh.nodes[el[0]];
    if (mesh.dim == 2) {
        const Point& p1 = mesh.nodes[el[1]];
        const Point& p2 = mesh.nodes[el[2]];
        return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]));
    }
    return det3(diff(mesh.nodes[el[1]], p0), diff(mesh.nodes[el[2]], p0), diff(mesh.nodes[el[3]], p0)) / 6.0;
}

double total_volume(const Mesh& mesh) {
    double sum = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        sum += signed_volume(mesh, e);
    }
    return sum;
}

double min_signed_volume(const Mesh& mesh) {
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        lo = std::min(lo, signed_volume(mesh, e));
    }
    return lo;
}

double facet_measure(const Mesh& mesh, std::size_t f) {
    const auto& n = mesh.boundary_facets[f].nodes;
    if (mesh.dim == 2) {
        const Point d = diff(mesh.nodes[n[1]], mesh.nodes[n[0]]);
        return std::hypot(d[0], d[1]);
    }
    const Point a = diff(mesh.nodes[n[1]], mesh.nodes[n[0]]);
    const Point b = diff(mesh.nodes[n[2]], mesh.nodes[n[0]]);
    const Point c{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
    return 0.5 * std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
}

std::vector<std::pair<int, int>> unique_edges(const Mesh& mesh) {
    std::vector<std::pair<int, int>> edges;
    const int k = mesh.nodes_per_element();
    edges.reserve(mesh.num_elements() * static_cast<std::size_t>(k * (k - 1) / 2));
    for (const auto& el : mesh.elements) {
        for (int a = 0; a < k; ++a) {
            for (int b = a + 1; b < k; ++b) {
                edges.emplace_back(std::min(el[a], el[b]), std::max(el[a], el[b]));
            }
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

std::vector<std::array<int, 3>> exterior_facets(int dim, std::span<const std::array<int, 4>> elements) {
    std::unordered_map<FacetKey, std::pair<int, std::array<int, 3>>, FacetKeyHash> count;
    count.reserve(elements.size() * static_cast<std::size_t>(dim + 1));
    for (const auto& el : elements) {
        const auto faces = local_facets(dim, el);
        for (int i = 0; i <= dim; ++i) {
            auto& slot = count[make_key(faces[i], dim)];
            if (slot.first++ == 0) {
                slot.second = faces[i];
            }
        }
    }
    std::vector<std::array<int, 3>> out;
    for (const auto& [key, value] : count) {
        if (value.first > 2) {
            fail(ErrorCategory::mesh, "non-manifold facet shared by more than two elements");
        }
        if (value.first == 1) {
            out.push_back(value.second);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void retag_nodes(Mesh& mesh) {
    mesh.node_tags.assign(mesh.num_nodes(), NodeTag::interior);
    for (const auto& facet : mesh.boundary_facets) {
        for (int i = 0; i < mesh.dim; ++i) {
            NodeTag& tag = mesh.node_tags[facet.nodes[i]];
            if (facet.tag == NodeTag::dirichlet || tag == NodeTag::interior) {
                tag = facet.tag;
            }
        }
    }
}

void validate(const Mesh& mesh) {
    if (mesh.dim != 2 && mesh.dim != 3) {
        fail(ErrorCategory::mesh, "mesh dimension must be 2 or 3");
    }
    const int n = static_cast<int>(mesh.num_nodes());
    const int k = mesh.nodes_per_element();
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        for (int i = 0; i < k; ++i) {
            const int v = mesh.elements[e][i];
            if (v < 0 || v >= n) {
                fail(ErrorCategory::mesh, "element " + std::to_string(e) + " references node out of range");
            }
        }
        if (!(signed_volume(mesh, e) > 0.0)) {
            fail(ErrorCategory::mesh, "element " + std::to_string(e) + " has non-positive signed volume");
        }
    }
    for (const auto& facet : mesh.boundary_facets) {
        for (int i = 0; i < mesh.dim; ++i) {
            if (facet.nodes[i] < 0 || facet.nodes[i] >= n) {
                fail(ErrorCategory::mesh, "boundary facet references node out of range");
            }
        }
        if (facet.tag == NodeTag::interior) {
            fail(ErrorCategory::mesh, "boundary facet tagged interior");
        }
    }
    if (mesh.node_tags.size() != mesh.num_nodes()) {
        fail(ErrorCategory::mesh, "node_tags length differs from node count");
    }

    // Facets listed as boundary must be exactly the facets with one owner.
    const auto exterior = exterior_facets(mesh.dim, mesh.elements);
    std::vector<FacetKey> expected;
    expected.reserve(exterior.size());
    for (const auto& f : exterior) {
        expected.push_back(make_key(f, mesh.dim));
    }
    std::vector<FacetKey> listed;
    listed.reserve(mesh.boundary_facets.size());
    for (const auto& f : mesh.boundary_facets) {
        listed.push_back(make_key(f.nodes, mesh.dim));
    }
    auto less = [](const FacetKey& a, const FacetKey& b) { return a.sorted < b.sorted; };
    std::sort(expected.begin(), expected.end(), less);
    std::sort(listed.begin(), listed.end(), less);
    if (expected != listed) {
        fail(ErrorCategory::mesh, "boundary facets do not match the facets owned by exactly one element");
    }

    std::vector<char> on_boundary(mesh.num_nodes(), 0);
    for (const auto& f : mesh.boundary_facets) {
        for (int i = 0; i < mesh.dim; ++i) {
            on_boundary[f.nodes[i]] = 1;
        }
    }
    for (std::size_t v = 0; v < mesh.num_nodes(); ++v) {
        const bool tagged = mesh.node_tags[v] != NodeTag::interior;
        if (tagged != static_cast<bool>(on_boundary[v])) {
            fail(ErrorCategory::mesh, "node " + std::to_string(v) + " tag inconsistent with boundary facets");
        }
    }
}

std::vector<std::size_t> facets_in_group(const Mesh& mesh, std::string_view group) {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < mesh.boundary_facets.size(); ++f) {
        if (mesh.boundary_facets[f].group == group) {
            out.push_back(f);
        }
    }
    return out;
}

std::size_t boundary_loop_count(const Mesh& mesh) {
    if (mesh.dim != 2) {
        fail(ErrorCategory::mesh, "boundary loops are defined for 2D meshes only");
    }
    std::vector<int> parent(mesh.num_nodes());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
        while (parent[v] != v) {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        return v;
    };
    std::vector<char> used(mesh.num_nodes(), 0);
    for (const auto& f : mesh.boundary_facets) {
        used[f.nodes[0]] = used[f.nodes[1]] = 1;
        parent[find(f.nodes[0])] = find(f.nodes[1]);
    }
    std::size_t loops = 0;
    for (std::size_t v = 0; v < mesh.num_nodes(); ++v) {
        if (used[v] && find(static_cast<int>(v)) == static_cast<int>(v)) {
            ++loops;
        }
    }
    return loops;
}

Mesh structured_rectangle(int nx, int ny, double lx, double ly) {
    if (nx < 1 || ny < 1 || !(lx > 0.0) || !(ly > 0.0)) {
        fail(ErrorCategory::mesh, "structured_rectangle needs positive counts and lengths");
    }
    Mesh m;
    m.dim = 2;
    const int px = nx + 1;
    for (int j = 0; j <= ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
            m.nodes.push_back({lx * i / nx, ly * j / ny, 0.0});
        }
    }
    auto id = [px](int i, int j) { return j * px + i; };
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            m.elements.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1), -1});
            m.elements.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1), -1});
        }
    }
    for (const auto& f : exterior_facets(2, m.elements)) {
        m.boundary_facets.push_back({{f[0], f[1], -1}, NodeTag::dirichlet, "outer"});
    }
    retag_nodes(m);
    return m;
}

} // namespace nfem::mesh
