#pragma once

#include "nfem/mesh.hpp"
#include "nfem/problems.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nfem::fem {

// Reference-element rule in barycentric coordinates; weights sum to 1 and
// multiply the element measure.
struct Quadrature {
    std::vector<std::array<double, 4>> points;
    std::vector<double> weights;
};

// 3 edge midpoints (triangles) or the symmetric 4-point rule (tetrahedra).
const Quadrature& volume_quadrature(int dim);
// Rule on a boundary facet of a dim-dimensional element (trace of the volume rule).
const Quadrature& facet_quadrature(int dim);

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Coefficients {
    double dt = 0.01;
    double alpha = 1.0;                  // constant diffusivity when fibre_fraction is empty
    std::vector<double> fibre_fraction;  // nodal V_f; alpha = mixture rule at each quadrature point
    bool nonlinear_source = false;       // exp2 source q(T, t, V_f)
    problems::Constants constants;
    std::map<std::string, double> neumann_flux;  // alpha*h_N per boundary group
    std::vector<double> dirichlet_values;        // nodal; read at Dirichlet nodes
    // Extra source independent of T, evaluated at physical quadrature points.
    std::function<double(const mesh::Point&, double t)> forcing;
};

Coefficients coefficients_from(const problems::ProblemSpec& p);

enum class LinearSolver { automatic, cg, dense };

struct SolverOptions {
    LinearSolver linear = LinearSolver::automatic;  // automatic: cg
    double cg_tolerance = 1e-13;                    // relative residual
    int cg_max_iterations = 0;                      // 0: 10 * unknowns
    int picard_max_iterations = 100;
    double picard_tolerance = 1e-8;
};

struct StepInfo {
    int picard_iterations = 0;
    bool converged = true;
    int cg_iterations = 0;
    double cg_error = 0.0;
};

// P1 Galerkin discretization of one implicit Euler step on a fixed mesh.
class FemSystem {
public:
    FemSystem(std::shared_ptr<const mesh::Mesh> mesh, Coefficients coefficients, SolverOptions options = {});
    explicit FemSystem(const problems::ProblemSpec& p, SolverOptions options = {});

    const mesh::Mesh& mesh() const { return *mesh_; }
    const Coefficients& coefficients() const { return coef_; }
    std::size_t num_nodes() const { return mesh_->num_nodes(); }
    std::size_t num_free() const { return free_.size(); }
    double dt() const { return coef_.dt; }

    const std::vector<int>& free_nodes() const { return free_; }
    const std::vector<int>& constrained_nodes() const { return constrained_; }
    // Position of each node in free_nodes(), or -1 for Dirichlet nodes.
    const std::vector<int>& free_index() const { return free_index_; }

    // Local residual contributions of element e for each of its basis functions.
    std::array<double, 4> element_residual(std::size_t e, std::span<const double> T_new,
                                           std::span<const double> T_old, double t_new) const;

    // Residual restricted to free test functions (length num_free()).
    std::vector<double> residual(std::span<const double> T_new, std::span<const double> T_old, double t_new) const;

    // Vector-Jacobian product of residual(): accumulates g^T dR/dT_new into
    // d_new and g^T dR/dT_old into d_old (both length num_nodes()).
    void residual_vjp(std::span<const double> T_new, std::span<const double> T_old, double t_new,
                      std::span<const double> g_free, std::span<double> d_new, std::span<double> d_old) const;

    // Global consistent mass, stiffness and Neumann load over all nodes.
    const SparseMatrix& mass() const { return mass_; }
    const SparseMatrix& stiffness() const { return stiffness_; }
    const Eigen::VectorXd& neumann_load() const { return neumann_load_; }

    // One implicit Euler step; Picard iteration when the source depends on T.
    std::vector<double> solve_step(std::span<const double> T_old, double t_new, StepInfo* info = nullptr) const;
    std::vector<double> solve_step_linear(std::span<const double> T_old, double t_new,
                                          StepInfo* info = nullptr) const;
    std::vector<double> solve_step_nonlinear(std::span<const double> T_old, double t_new,
                                             StepInfo* info = nullptr) const;

    // Picard iterates of one step, first entry T_old (for inspection).
    std::vector<std::vector<double>> picard_iterates(std::span<const double> T_old, double t_new) const;

private:
    struct ElementData {
        double measure = 0.0;
        std::array<std::array<double, 3>, 4> grad{};  // gradient of each barycentric function
        double alpha_bar = 0.0;                        // sum_q w_q alpha(x_q)
        std::array<double, 4> vf_q{};                  // V_f at quadrature points
    };

    void build();
    // Load from the source terms at the given state (T-independent part when T is empty).
    Eigen::VectorXd source_load(std::span<const double> T, double t_new) const;
    std::vector<double> solve_with_load(std::span<const double> T_old, const Eigen::VectorXd& load,
                                        std::span<const double> guess, StepInfo* info) const;

    std::shared_ptr<const mesh::Mesh> mesh_;
    Coefficients coef_;
    SolverOptions options_;
    std::vector<ElementData> elements_;
    std::vector<int> free_;
    std::vector<int> constrained_;
    std::vector<int> free_index_;
    SparseMatrix mass_;
    SparseMatrix stiffness_;
    Eigen::VectorXd neumann_load_;
    std::vector<std::array<double, 4>> neumann_local_;  // per element, per local node
    SparseMatrix system_ff_;  // (M/dt + K) restricted to free rows/cols
    SparseMatrix system_fc_;  // free rows, constrained cols
    Eigen::LLT<Eigen::MatrixXd> dense_;
    bool use_dense_ = false;
};

struct Trajectory {
    std::size_t rows = 0;  // N_t + 1
    std::size_t nodes = 0;
    std::vector<double> data;  // row-major

    std::span<const double> row(std::size_t n) const { return {data.data() + n * nodes, nodes}; }
    std::span<double> row(std::size_t n) { return {data.data() + n * nodes, nodes}; }
};

struct TrajectoryInfo {
    int max_picard_iterations = 0;
    int unconverged_steps = 0;
};

Trajectory solve_trajectory(const problems::ProblemSpec& p, const SolverOptions& options = {},
                            TrajectoryInfo* info = nullptr);

// Binary: magic "NFTRAJ1", u32 rows, u32 nodes, little-endian f64 row-major.
void write_trajectory(const Trajectory& t, const std::filesystem::path& path);
Trajectory read_trajectory(const std::filesystem::path& path);

} // namespace nfem::fem
