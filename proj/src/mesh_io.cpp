#include "nfem/error.hpp"
#include "nfem/mesh.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace nfem::mesh {

namespace {

constexpr int kMeshFileVersion = 1;

using nlohmann::json;

} // namespace

std::string mesh_to_json(const Mesh& mesh) {
    json nodes = json::array();
    for (const auto& p : mesh.nodes) {
        json row = json::array();
        for (int d = 0; d < mesh.dim; ++d) {
            row.push_back(p[d]);
        }
        nodes.push_back(std::move(row));
    }
    json elements = json::array();
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto el = mesh.element(e);
        elements.push_back(json(std::vector<int>(el.begin(), el.end())));
    }
    json facets = json::array();
    for (std::size_t f = 0; f < mesh.boundary_facets.size(); ++f) {
        const auto nodes_f = mesh.facet_nodes(f);
        facets.push_back({{"nodes", std::vector<int>(nodes_f.begin(), nodes_f.end())},
                          {"tag", to_string(mesh.boundary_facets[f].tag)},
                          {"group", mesh.boundary_facets[f].group}});
    }
    json tags = json::array();
    for (NodeTag t : mesh.node_tags) {
        tags.push_back(to_string(t));
    }
    json doc;
    doc["version"] = kMeshFileVersion;
    doc["dim"] = mesh.dim;
    doc["nodes"] = std::move(nodes);
    doc["elements"] = std::move(elements);
    doc["boundary_facets"] = std::move(facets);
    doc["node_tags"] = std::move(tags);
    return doc.dump();
}

Mesh mesh_from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, std::string("mesh file is not valid JSON: ") + e.what());
    }
    try {
        if (doc.at("version").get<int>() != kMeshFileVersion) {
            fail(ErrorCategory::format, "unsupported mesh file version");
        }
        Mesh mesh;
        mesh.dim = doc.at("dim").get<int>();
        if (mesh.dim != 2 && mesh.dim != 3) {
            fail(ErrorCategory::format, "mesh dim must be 2 or 3");
        }
        for (const auto& row : doc.at("nodes")) {
            if (row.size() != static_cast<std::size_t>(mesh.dim)) {
                fail(ErrorCategory::format, "node coordinate count does not match dim");
            }
            Point p{0.0, 0.0, 0.0};
            for (int d = 0; d < mesh.dim; ++d) {
                p[d] = row[d].get<double>();
            }
            mesh.nodes.push_back(p);
        }
        for (const auto& row : doc.at("elements")) {
            if (row.size() != static_cast<std::size_t>(mesh.dim + 1)) {
                fail(ErrorCategory::format, "element node count does not match dim");
            }
            std::array<int, 4> el{-1, -1, -1, -1};
            for (int i = 0; i <= mesh.dim; ++i) {
                el[i] = row[i].get<int>();
            }
            mesh.elements.push_back(el);
        }
        for (const auto& item : doc.at("boundary_facets")) {
            BoundaryFacet facet;
            const auto& nodes = item.at("nodes");
            if (nodes.size() != static_cast<std::size_t>(mesh.dim)) {
                fail(ErrorCategory::format, "facet node count does not match dim");
            }
            for (int i = 0; i < mesh.dim; ++i) {
                facet.nodes[i] = nodes[i].get<int>();
            }
            facet.tag = node_tag_from_string(item.at("tag").get<std::string>());
            facet.group = item.value("group", std::string());
            mesh.boundary_facets.push_back(std::move(facet));
        }
        for (const auto& t : doc.at("node_tags")) {
            mesh.node_tags.push_back(node_tag_from_string(t.get<std::string>()));
        }
        validate(mesh);
        return mesh;
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, std::string("malformed mesh file: ") + e.what());
    }
}

void write_mesh(const Mesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorCategory::io, "cannot open '" + path.string() + "' for writing");
    }
    out << mesh_to_json(mesh) << '\n';
    if (!out) {
        fail(ErrorCategory::io, "failed writing '" + path.string() + "'");
    }
}

Mesh read_mesh(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCategory::io, "cannot open '" + path.string() + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return mesh_from_json(buffer.str());
}

} // namespace nfem::mesh
