#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nfem::mesh {

using Point = std::array<double, 3>;  // z == 0 for 2D meshes

enum class NodeTag : std::uint8_t { interior, dirichlet, neumann };

std::string_view to_string(NodeTag tag) noexcept;
NodeTag node_tag_from_string(std::string_view name);

struct BoundaryFacet {
    std::array<int, 3> nodes{-1, -1, -1};  // first `dim` entries are used
    NodeTag tag = NodeTag::dirichlet;
    std::string group;
};

// Simplicial mesh: triangles in 2D, tetrahedra in 3D. Element and facet
// index arrays are padded with -1 beyond dim+1 / dim entries.
struct Mesh {
    int dim = 2;
    std::vector<Point> nodes;
    std::vector<std::array<int, 4>> elements;
    std::vector<BoundaryFacet> boundary_facets;
    std::vector<NodeTag> node_tags;

    std::size_t num_nodes() const noexcept { return nodes.size(); }
    std::size_t num_elements() const noexcept { return elements.size(); }
    int nodes_per_element() const noexcept { return dim + 1; }

    std::span<const int> element(std::size_t e) const {
        return {elements[e].data(), static_cast<std::size_t>(dim + 1)};
    }
    std::span<const int> facet_nodes(std::size_t f) const {
        return {boundary_facets[f].nodes.data(), static_cast<std::size_t>(dim)};
    }
};

// Signed area (2D) or volume (3D) of element e; positive for the
// orientation used throughout the library.
double signed_volume(const Mesh& mesh, std::size_t e);
double total_volume(const Mesh& mesh);
double min_signed_volume(const Mesh& mesh);

// Area (3D) or length (2D) of a boundary facet.
double facet_measure(const Mesh& mesh, std::size_t f);

// Unique undirected edges (i < j), sorted lexicographically.
std::vector<std::pair<int, int>> unique_edges(const Mesh& mesh);

// Facets that belong to exactly one element, oriented outward.
std::vector<std::array<int, 3>> exterior_facets(int dim, std::span<const std::array<int, 4>> elements);

// Recomputes node_tags from boundary facets. Dirichlet wins over Neumann;
// nodes on no boundary facet are interior.
void retag_nodes(Mesh& mesh);

// Throws Error(mesh) if any structural invariant is violated: index ranges,
// positive orientation, facet multiplicity, tag completeness.
void validate(const Mesh& mesh);

// Indices into boundary_facets whose group equals `group`.
std::vector<std::size_t> facets_in_group(const Mesh& mesh, std::string_view group);

// Number of distinct closed boundary loops of a 2D mesh.
std::size_t boundary_loop_count(const Mesh& mesh);

// Structured right-triangle mesh of [0,lx]x[0,ly]; every
// boundary facet is Dirichlet in group "outer".
Mesh structured_rectangle(int nx, int ny, double lx = 1.0, double ly = 1.0);

// Versioned JSON mesh file.
void write_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh read_mesh(const std::filesystem::path& path);
std::string mesh_to_json(const Mesh& mesh);
Mesh mesh_from_json(std::string_view text);

} // namespace nfem::mesh
