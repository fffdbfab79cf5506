#pragma once

// Small hand-built problems shared by unit and acceptance tests.

#include "nfem/mesh.hpp"
#include "nfem/problems.hpp"
#include "nfem/rng.hpp"

#include <cmath>
#include <memory>

namespace nfem::testing {

// 5 x 1 strip split into 10 triangles; ends Dirichlet, long sides insulated
// (Neumann without flux), exp1 physics with one random Gaussian bump.
inline problems::ProblemSpec ten_element_problem(std::uint64_t seed) {
    mesh::Mesh m = mesh::structured_rectangle(5, 1, 1.0, 0.25);
    for (auto& f : m.boundary_facets) {
        const auto& a = m.nodes[static_cast<std::size_t>(f.nodes[0])];
        const auto& b = m.nodes[static_cast<std::size_t>(f.nodes[1])];
        if (a[0] == b[0]) continue;  // vertical end facet
        f.tag = mesh::NodeTag::neumann;
        f.group = "insulated";
    }
    mesh::retag_nodes(m);
    problems::ProblemSpec p;
    p.kind = problems::ProblemKind::exp1;
    p.experiment = problems::Experiment::exp1;
    p.constants = problems::default_constants(problems::Experiment::exp1);
    p.mesh = std::make_shared<const mesh::Mesh>(std::move(m));
    Rng rng = make_rng(seed, 0, 5);
    problems::GaussianBump b;
    b.a = uniform(rng, 0.5, 1.5);
    b.x0 = uniform(rng, 0.3, 0.7);
    b.y0 = 0.125;
    b.sx = uniform(rng, 0.01, 0.03);
    b.sy = uniform(rng, 0.01, 0.03);
    p.ic_params = {b};
    const auto& mm = *p.mesh;
    p.initial.resize(mm.num_nodes());
    p.dirichlet_values.assign(mm.num_nodes(), 0.0);
    for (std::size_t v = 0; v < mm.num_nodes(); ++v) {
        p.initial[v] = problems::gaussian_sum(p.ic_params, mm.nodes[v][0], mm.nodes[v][1]) + 0.1;
        if (mm.node_tags[v] == mesh::NodeTag::dirichlet) p.dirichlet_values[v] = p.initial[v];
    }
    return p;
}

} // namespace nfem::testing
