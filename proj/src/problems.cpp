#include "nfem/problems.hpp"

#include "nfem/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <sstream>

namespace nfem::problems {

namespace {

using nlohmann::json;

constexpr int kProblemFileVersion = 1;
constexpr double kPi = std::numbers::pi;

// Stream ids for derive_seed.
constexpr std::uint64_t kGeometryStream = 0;
constexpr std::uint64_t kMaterialStream = 1;
constexpr std::uint64_t kInitialStream = 2;
constexpr std::uint64_t kSplitStream = 3;

void fill_fields(ProblemSpec& p) {
    const auto& m = *p.mesh;
    const std::size_t n = m.num_nodes();
    p.fibre_fraction.clear();
    p.clamp_events = 0;
    switch (p.experiment) {
        case Experiment::exp1:
            p.initial.resize(n);
            for (std::size_t v = 0; v < n; ++v) {
                p.initial[v] = gaussian_sum(p.ic_params, m.nodes[v][0], m.nodes[v][1]);
            }
            p.dirichlet_values = p.initial;
            break;
        case Experiment::exp2:
            p.fibre_fraction = evaluate_material(m, p.material_params, p.constants.vf0, &p.clamp_events);
            p.initial.assign(n, p.constants.T0);
            p.dirichlet_values.assign(n, p.constants.T0);
            break;
        case Experiment::exp3:
            p.initial.assign(n, p.constants.T0);
            p.dirichlet_values.assign(n, p.constants.T0);
            break;
    }
    for (std::size_t v = 0; v < n; ++v) {
        if (m.node_tags[v] != mesh::NodeTag::dirichlet) {
            p.dirichlet_values[v] = 0.0;
        }
    }
    p.neumann_flux.clear();
    if (p.experiment == Experiment::exp3) {
        p.neumann_flux["inner"] = p.constants.h0;
        p.neumann_flux["outer"] = 0.0;
    }
}

mesh::GeneratedMesh make_geometry(ProblemKind kind, std::uint64_t geometry_seed, std::size_t index,
                                  const SampleOptions& o) {
    auto rng = make_rng(geometry_seed, index, kGeometryStream);
    switch (kind) {
        case ProblemKind::exp1: return mesh::generate_lshape(rng, o.lshape);
        case ProblemKind::exp2: return mesh::generate_convex_polygon(rng, o.polygon);
        case ProblemKind::exp3: return mesh::generate_hollow_cylinder(rng, o.cylinder);
        case ProblemKind::sheet10: return mesh::generate_corrugated_sheet(10);
        case ProblemKind::sheet100: return mesh::generate_corrugated_sheet(100);
        case ProblemKind::grid: return mesh::generate_grid_plate();
        case ProblemKind::longcyl: return mesh::generate_long_cylinder();
    }
    fail(ErrorCategory::internal, "unknown problem kind");
}

json constants_to_json(const Constants& c) {
    return {{"alpha", c.alpha}, {"alpha_f", c.alpha_f}, {"alpha_m", c.alpha_m}, {"q0", c.q0}, {"C", c.C},
            {"t0", c.t0},       {"T0", c.T0},           {"h0", c.h0},           {"vf0", c.vf0}};
}

Constants constants_from_json(const json& j) {
    Constants c;
    c.alpha = j.at("alpha").get<double>();
    c.alpha_f = j.at("alpha_f").get<double>();
    c.alpha_m = j.at("alpha_m").get<double>();
    c.q0 = j.at("q0").get<double>();
    c.C = j.at("C").get<double>();
    c.t0 = j.at("t0").get<double>();
    c.T0 = j.at("T0").get<double>();
    c.h0 = j.at("h0").get<double>();
    c.vf0 = j.at("vf0").get<double>();
    return c;
}

} // namespace

std::string_view to_string(Experiment e) noexcept {
    switch (e) {
        case Experiment::exp1: return "exp1";
        case Experiment::exp2: return "exp2";
        case Experiment::exp3: return "exp3";
    }
    return "?";
}

std::string_view to_string(ProblemKind k) noexcept {
    switch (k) {
        case ProblemKind::exp1: return "exp1";
        case ProblemKind::exp2: return "exp2";
        case ProblemKind::exp3: return "exp3";
        case ProblemKind::sheet10: return "sheet10";
        case ProblemKind::sheet100: return "sheet100";
        case ProblemKind::grid: return "grid";
        case ProblemKind::longcyl: return "longcyl";
    }
    return "?";
}

Experiment experiment_from_string(std::string_view name) {
    for (auto e : {Experiment::exp1, Experiment::exp2, Experiment::exp3}) {
        if (to_string(e) == name) return e;
    }
    fail(ErrorCategory::usage, "unknown experiment '" + std::string(name) + "'");
}

ProblemKind problem_kind_from_string(std::string_view name) {
    for (auto k : {ProblemKind::exp1, ProblemKind::exp2, ProblemKind::exp3, ProblemKind::sheet10,
                   ProblemKind::sheet100, ProblemKind::grid, ProblemKind::longcyl}) {
        if (to_string(k) == name) return k;
    }
    fail(ErrorCategory::usage, "unknown experiment '" + std::string(name) + "'");
}

Experiment experiment_of(ProblemKind k) noexcept {
    switch (k) {
        case ProblemKind::exp1:
        case ProblemKind::sheet10:
        case ProblemKind::sheet100: return Experiment::exp1;
        case ProblemKind::exp2:
        case ProblemKind::grid: return Experiment::exp2;
        case ProblemKind::exp3:
        case ProblemKind::longcyl: return Experiment::exp3;
    }
    return Experiment::exp1;
}

Constants default_constants(Experiment e) {
    Constants c;
    switch (e) {
        case Experiment::exp1:
            c.alpha = 0.05;
            c.T0 = 0.0;
            break;
        case Experiment::exp2:
            c.T0 = 100.0;
            c.C = 8.0 / c.T0;
            break;
        case Experiment::exp3:
            c.alpha = 1.0;
            c.T0 = 0.0;
            c.h0 = 1.0;
            break;
    }
    return c;
}

double diffusivity(double vf, const Constants& c) {
    if (!(vf > 0.0 && vf < 1.0)) {
        fail(ErrorCategory::domain, "fibre fraction " + std::to_string(vf) + " outside (0,1)");
    }
    return 1.0 / (vf / c.alpha_f + (1.0 - vf) / c.alpha_m);
}

double source_term(double T, double t, double vf, const Constants& c) {
    return c.q0 * (1.0 - vf) * std::exp(-c.C * T * t / c.t0) * c.C * T;
}

double source_term_dT(double T, double t, double vf, const Constants& c) {
    const double k = c.C * t / c.t0;
    return c.q0 * (1.0 - vf) * c.C * std::exp(-k * T) * (1.0 - k * T);
}

double gaussian_sum(std::span<const GaussianBump> bumps, double x, double y) {
    double s = 0.0;
    for (const auto& b : bumps) {
        s += b.a * std::exp(-((x - b.x0) * (x - b.x0) / (2.0 * b.sx) + (y - b.y0) * (y - b.y0) / (2.0 * b.sy)));
    }
    return s;
}

double material_field(std::span<const SineProduct> terms, double vf0, double x, double y) {
    double v = vf0;
    for (const auto& t : terms) {
        v += t.a * std::sin(t.kx * x + t.dx) * std::sin(t.ky * y + t.dy);
    }
    return v;
}

std::vector<double> sample_initial_condition(Rng& rng, const mesh::Mesh& mesh, int n_ic,
                                             std::vector<GaussianBump>* params) {
    std::vector<GaussianBump> bumps;
    bumps.reserve(n_ic);
    for (int i = 0; i < n_ic; ++i) {
        GaussianBump b;
        b.a = uniform(rng, 0.5, 1.0);
        b.sx = uniform(rng, 1.0 / 12.0, 1.0 / 6.0);
        b.sy = uniform(rng, 1.0 / 12.0, 1.0 / 6.0);
        const auto& c = mesh.nodes[uniform_index(rng, mesh.num_nodes())];
        b.x0 = c[0];
        b.y0 = c[1];
        bumps.push_back(b);
    }
    std::vector<double> values(mesh.num_nodes());
    for (std::size_t v = 0; v < mesh.num_nodes(); ++v) {
        values[v] = gaussian_sum(bumps, mesh.nodes[v][0], mesh.nodes[v][1]);
    }
    if (params) *params = std::move(bumps);
    return values;
}

std::vector<double> evaluate_material(const mesh::Mesh& mesh, std::span<const SineProduct> params, double vf0,
                                      int* clamp_events) {
    std::vector<double> values(mesh.num_nodes());
    int clamped = 0;
    for (std::size_t v = 0; v < mesh.num_nodes(); ++v) {
        const double raw = material_field(params, vf0, mesh.nodes[v][0], mesh.nodes[v][1]);
        values[v] = std::clamp(raw, kVfMin, kVfMax);
        if (values[v] != raw) ++clamped;
    }
    if (clamp_events) *clamp_events = clamped;
    return values;
}

MaterialSample sample_material_field(Rng& rng, const mesh::Mesh& mesh, int n_terms, double vf0) {
    MaterialSample out;
    for (int i = 0; i < n_terms; ++i) {
        SineProduct t;
        t.a = uniform(rng, 0.0, 1.0 / 20.0);
        t.kx = uniform(rng, 0.0, 8.0 * kPi);
        t.ky = uniform(rng, 0.0, 8.0 * kPi);
        t.dx = uniform(rng, 0.0, 2.0 * kPi);
        t.dy = uniform(rng, 0.0, 2.0 * kPi);
        out.params.push_back(t);
    }
    out.values = evaluate_material(mesh, out.params, vf0, &out.clamp_events);
    return out;
}

ProblemSpec sample_problem(ProblemKind kind, std::uint64_t geometry_seed, std::uint64_t field_seed, std::size_t index,
                           const SampleOptions& options) {
    ProblemSpec p;
    p.kind = kind;
    p.experiment = experiment_of(kind);
    p.geometry_seed = geometry_seed;
    p.field_seed = field_seed;
    p.index = index;
    p.constants = default_constants(p.experiment);
    p.time = options.time;
    auto generated = make_geometry(kind, geometry_seed, index, options);
    p.mesh = std::make_shared<const mesh::Mesh>(std::move(generated.mesh));
    if (p.experiment == Experiment::exp1) {
        auto rng = make_rng(field_seed, index, kInitialStream);
        const bool large = kind == ProblemKind::sheet10 || kind == ProblemKind::sheet100;
        sample_initial_condition(rng, *p.mesh, large ? options.n_ic_large : options.n_ic, &p.ic_params);
    } else if (p.experiment == Experiment::exp2) {
        // Material fields belong to the fixed geometry pool.
        auto rng = make_rng(geometry_seed, index, kMaterialStream);
        p.material_params = sample_material_field(rng, *p.mesh, options.n_material, p.constants.vf0).params;
    }
    fill_fields(p);
    return p;
}

Split split_indices(std::size_t count, std::uint64_t split_seed, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
        fail(ErrorCategory::config, "train fraction must lie in (0, 1]");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(split_seed, 0, kSplitStream);
    // Fisher-Yates with the portable uniform_index.
    for (std::size_t i = count; i > 1; --i) {
        std::swap(order[i - 1], order[uniform_index(rng, i)]);
    }
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    return s;
}

ProblemSet sample_problem_set(ProblemKind kind, std::size_t count, std::uint64_t geometry_seed,
                              std::uint64_t split_seed, const SampleOptions& options, double train_fraction) {
    ProblemSet set;
    set.problems.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        set.problems.push_back(sample_problem(kind, geometry_seed, split_seed, i, options));
    }
    set.split = split_indices(count, split_seed, train_fraction);
    return set;
}

std::vector<double> nodal_neumann_flux(const ProblemSpec& p) {
    const auto& m = *p.mesh;
    std::vector<double> out(m.num_nodes(), 0.0);
    for (std::size_t f = 0; f < m.boundary_facets.size(); ++f) {
        const auto& facet = m.boundary_facets[f];
        if (facet.tag != mesh::NodeTag::neumann) continue;
        const auto it = p.neumann_flux.find(facet.group);
        if (it == p.neumann_flux.end()) continue;
        for (int v : m.facet_nodes(f)) {
            if (m.node_tags[v] == mesh::NodeTag::neumann) {
                out[v] = it->second;
            }
        }
    }
    return out;
}

void validate(const ProblemSpec& p) {
    if (!p.mesh) {
        fail(ErrorCategory::config, "problem has no mesh");
    }
    const std::size_t n = p.mesh->num_nodes();
    if (p.initial.size() != n || p.dirichlet_values.size() != n) {
        fail(ErrorCategory::config, "nodal field length does not match the mesh");
    }
    if (p.experiment == Experiment::exp2) {
        if (p.fibre_fraction.size() != n) {
            fail(ErrorCategory::config, "fibre fraction length does not match the mesh");
        }
        for (double vf : p.fibre_fraction) {
            if (!(vf > 0.0 && vf < 1.0)) {
                fail(ErrorCategory::config, "fibre fraction outside (0,1)");
            }
        }
    }
    if (!(p.time.dt > 0.0) || p.time.steps < 1) {
        fail(ErrorCategory::config, "time grid needs dt > 0 and at least one step");
    }
}

std::string problem_to_json(const ProblemSpec& p) {
    json ic = json::array();
    for (const auto& b : p.ic_params) ic.push_back({b.a, b.x0, b.y0, b.sx, b.sy});
    json mat = json::array();
    for (const auto& t : p.material_params) mat.push_back({t.a, t.kx, t.ky, t.dx, t.dy});
    json doc;
    doc["version"] = kProblemFileVersion;
    doc["kind"] = to_string(p.kind);
    doc["experiment"] = to_string(p.experiment);
    doc["mesh_path"] = p.mesh_path;
    doc["geometry_seed"] = p.geometry_seed;
    doc["field_seed"] = p.field_seed;
    doc["index"] = p.index;
    doc["constants"] = constants_to_json(p.constants);
    doc["time"] = {{"dt", p.time.dt}, {"steps", p.time.steps}};
    doc["ic_params"] = std::move(ic);
    doc["material_params"] = std::move(mat);
    doc["neumann_flux"] = p.neumann_flux;
    doc["clamp_events"] = p.clamp_events;
    return doc.dump(1);
}

ProblemSpec problem_from_json(std::string_view text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, std::string("problem file is not valid JSON: ") + e.what());
    }
    ProblemSpec p;
    try {
        if (doc.at("version").get<int>() != kProblemFileVersion) {
            fail(ErrorCategory::format, "unsupported problem file version");
        }
        p.kind = problem_kind_from_string(doc.at("kind").get<std::string>());
        p.experiment = experiment_from_string(doc.at("experiment").get<std::string>());
        p.mesh_path = doc.at("mesh_path").get<std::string>();
        p.geometry_seed = doc.at("geometry_seed").get<std::uint64_t>();
        p.field_seed = doc.at("field_seed").get<std::uint64_t>();
        p.index = doc.at("index").get<std::size_t>();
        p.constants = constants_from_json(doc.at("constants"));
        p.time.dt = doc.at("time").at("dt").get<double>();
        p.time.steps = doc.at("time").at("steps").get<int>();
        for (const auto& r : doc.at("ic_params")) {
            p.ic_params.push_back({r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                                   r.at(3).get<double>(), r.at(4).get<double>()});
        }
        for (const auto& r : doc.at("material_params")) {
            p.material_params.push_back({r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                                         r.at(3).get<double>(), r.at(4).get<double>()});
        }
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, std::string("malformed problem file: ") + e.what());
    }
    if (p.mesh_path.empty()) {
        fail(ErrorCategory::format, "problem file has no mesh path");
    }
    std::filesystem::path mp(p.mesh_path);
    if (mp.is_relative()) mp = base_dir / mp;
    p.mesh = std::make_shared<const mesh::Mesh>(mesh::read_mesh(mp));
    fill_fields(p);
    validate(p);
    return p;
}

void write_problem(const ProblemSpec& p, const std::filesystem::path& path) {
    if (p.mesh_path.empty()) {
        fail(ErrorCategory::config, "problem needs a mesh path before it can be written");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorCategory::io, "cannot open '" + path.string() + "' for writing");
    }
    out << problem_to_json(p) << '\n';
    if (!out) {
        fail(ErrorCategory::io, "write to '" + path.string() + "' failed");
    }
}

ProblemSpec read_problem(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCategory::io, "cannot open problem file '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return problem_from_json(ss.str(), path.parent_path());
}

} // namespace nfem::problems
