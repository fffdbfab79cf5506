#pragma once

#include "nfem/geometry.hpp"
#include "nfem/mesh.hpp"
#include "nfem/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace nfem::problems {

// Physics family of a problem.
enum class Experiment { exp1, exp2, exp3 };

// Generator tag: the three training distributions plus the large meshes.
enum class ProblemKind { exp1, exp2, exp3, sheet10, sheet100, grid, longcyl };

std::string_view to_string(Experiment e) noexcept;
std::string_view to_string(ProblemKind k) noexcept;
Experiment experiment_from_string(std::string_view name);
ProblemKind problem_kind_from_string(std::string_view name);
Experiment experiment_of(ProblemKind k) noexcept;

struct GaussianBump {
    double a = 0.0;
    double x0 = 0.0;
    double y0 = 0.0;
    double sx = 0.0;  // variance-like: the exponent divides by 2 sx
    double sy = 0.0;
};

struct SineProduct {
    double a = 0.0;
    double kx = 0.0;
    double ky = 0.0;
    double dx = 0.0;
    double dy = 0.0;
};

struct Constants {
    double alpha = 0.05;    // exp1 / exp3 diffusivity
    double alpha_f = 0.1;   // exp2 fibre
    double alpha_m = 0.01;  // exp2 matrix
    double q0 = 20.0;
    double C = 0.08;
    double t0 = 1.0;
    double T0 = 100.0;
    double h0 = 1.0;
    double vf0 = 0.5;
};

Constants default_constants(Experiment e);

struct TimeGrid {
    double dt = 0.01;
    int steps = 100;
};

struct ProblemSpec {
    ProblemKind kind = ProblemKind::exp1;
    Experiment experiment = Experiment::exp1;
    std::shared_ptr<const mesh::Mesh> mesh;
    std::string mesh_path;  // relative to the problem file when written
    std::uint64_t geometry_seed = 0;
    std::uint64_t field_seed = 0;
    std::size_t index = 0;

    std::vector<GaussianBump> ic_params;
    std::vector<SineProduct> material_params;
    Constants constants;
    TimeGrid time;

    // Nodal fields, length num_nodes.
    std::vector<double> initial;
    std::vector<double> fibre_fraction;    // empty unless exp2
    std::vector<double> dirichlet_values;  // meaningful at Dirichlet nodes only
    std::map<std::string, double> neumann_flux;  // alpha*h_N per boundary group
    int clamp_events = 0;

    std::size_t num_nodes() const { return mesh ? mesh->num_nodes() : 0; }
};

// Mixture rule for the exp2 diffusivity. Throws Error(domain) outside (0,1).
double diffusivity(double vf, const Constants& c = default_constants(Experiment::exp2));

// Nonlinear exp2 heat source q(T, t, V_f) and its derivative in T.
double source_term(double T, double t, double vf, const Constants& c = default_constants(Experiment::exp2));
double source_term_dT(double T, double t, double vf, const Constants& c = default_constants(Experiment::exp2));

double gaussian_sum(std::span<const GaussianBump> bumps, double x, double y);
double material_field(std::span<const SineProduct> terms, double vf0, double x, double y);

// Gaussian bumps centered at uniformly chosen node positions; returns the
// nodal field and fills `params`.
std::vector<double> sample_initial_condition(Rng& rng, const mesh::Mesh& mesh, int n_ic,
                                             std::vector<GaussianBump>* params = nullptr);

struct MaterialSample {
    std::vector<SineProduct> params;
    std::vector<double> values;  // nodal V_f after clamping
    int clamp_events = 0;
};

inline constexpr double kVfMin = 0.01;
inline constexpr double kVfMax = 0.99;

MaterialSample sample_material_field(Rng& rng, const mesh::Mesh& mesh, int n_terms = 10, double vf0 = 0.5);

// Evaluate V_f at every node and clamp to [kVfMin, kVfMax]; counts clamped nodes.
std::vector<double> evaluate_material(const mesh::Mesh& mesh, std::span<const SineProduct> params, double vf0,
                                      int* clamp_events = nullptr);

struct SampleOptions {
    mesh::LShapeDistribution lshape;
    mesh::ConvexPolygonDistribution polygon;
    mesh::HollowCylinderDistribution cylinder;
    int n_ic = 10;        // exp1 Gaussians
    int n_ic_large = 1000;  // corrugated sheets
    int n_material = 10;
    TimeGrid time;
};

// Geometry (and exp2 material) from geometry_seed; exp1 initial condition from
// field_seed. Large-mesh kinds ignore the index for geometry.
ProblemSpec sample_problem(ProblemKind kind, std::uint64_t geometry_seed, std::uint64_t field_seed, std::size_t index,
                           const SampleOptions& options = {});

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

// Random partition of [0, count) with round(train_fraction * count) train entries.
Split split_indices(std::size_t count, std::uint64_t split_seed, double train_fraction = 0.75);

struct ProblemSet {
    std::vector<ProblemSpec> problems;
    Split split;
};

// count problems sharing geometry_seed; split and exp1 initial conditions vary with split_seed.
ProblemSet sample_problem_set(ProblemKind kind, std::size_t count, std::uint64_t geometry_seed,
                              std::uint64_t split_seed, const SampleOptions& options = {},
                              double train_fraction = 0.75);

// alpha*h_N at each node (0 on Dirichlet and interior nodes).
std::vector<double> nodal_neumann_flux(const ProblemSpec& p);

// Throws Error(config) on inconsistent fields.
void validate(const ProblemSpec& p);

// Versioned JSON. Nodal fields are recomputed from the stored parameters on
// load; the mesh is read from mesh_path resolved against the file's directory.
std::string problem_to_json(const ProblemSpec& p);
ProblemSpec problem_from_json(std::string_view text, const std::filesystem::path& base_dir);
void write_problem(const ProblemSpec& p, const std::filesystem::path& path);
ProblemSpec read_problem(const std::filesystem::path& path);

} // namespace nfem::problems
