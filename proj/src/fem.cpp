#include "nfem/fem.hpp"

#include "nfem/error.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <unordered_map>

namespace nfem::fem {

namespace {

struct FacetKeyHash {
    std::size_t operator()(const std::array<int, 3>& k) const noexcept {
        std::size_t h = 1469598103934665603ull;
        for (int v : k) {
            h ^= static_cast<std::size_t>(static_cast<unsigned>(v));
            h *= 1099511628211ull;
        }
        return h;
    }
};

std::array<int, 3> sorted_key(std::span<const int> nodes) {
    std::array<int, 3> k{-1, -1, -1};
    std::copy(nodes.begin(), nodes.end(), k.begin());
    std::sort(k.begin(), k.begin() + static_cast<std::ptrdiff_t>(nodes.size()));
    return k;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace

const Quadrature& volume_quadrature(int dim) {
    static const Quadrature tri{{{0.5, 0.5, 0.0, 0.0}, {0.0, 0.5, 0.5, 0.0}, {0.5, 0.0, 0.5, 0.0}},
                                {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}};
    static const Quadrature tet = [] {
        const double a = 0.5854101966249685, b = 0.1381966011250105;
        return Quadrature{{{a, b, b, b}, {b, a, b, b}, {b, b, a, b}, {b, b, b, a}}, {0.25, 0.25, 0.25, 0.25}};
    }();
    if (dim == 2) return tri;
    if (dim == 3) return tet;
    fail(ErrorCategory::shape, "quadrature requested for unsupported dimension " + std::to_string(dim));
}

const Quadrature& facet_quadrature(int dim) {
    static const Quadrature segment{{{0.5, 0.5, 0.0, 0.0}}, {1.0}};
    if (dim == 2) return segment;
    if (dim == 3) return volume_quadrature(2);
    fail(ErrorCategory::shape, "facet quadrature requested for unsupported dimension " + std::to_string(dim));
}

Coefficients coefficients_from(const problems::ProblemSpec& p) {
    problems::validate(p);
    Coefficients c;
    c.dt = p.time.dt;
    c.constants = p.constants;
    c.alpha = p.constants.alpha;
    if (p.experiment == problems::Experiment::exp2) {
        c.fibre_fraction = p.fibre_fraction;
        c.nonlinear_source = true;
    }
    c.neumann_flux = p.neumann_flux;
    c.dirichlet_values = p.dirichlet_values;
    return c;
}

FemSystem::FemSystem(std::shared_ptr<const mesh::Mesh> mesh, Coefficients coefficients, SolverOptions options)
    : mesh_(std::move(mesh)), coef_(std::move(coefficients)), options_(options) {
    if (!mesh_) {
        fail(ErrorCategory::config, "FEM system needs a mesh");
    }
    build();
}

FemSystem::FemSystem(const problems::ProblemSpec& p, SolverOptions options)
    : FemSystem(p.mesh, coefficients_from(p), options) {}

void FemSystem::build() {
    const auto& m = *mesh_;
    const int dim = m.dim;
    const int npe = dim + 1;
    const std::size_t n = m.num_nodes();
    if (!(coef_.dt > 0.0)) {
        fail(ErrorCategory::config, "time step must be positive");
    }
    if (!coef_.fibre_fraction.empty() && coef_.fibre_fraction.size() != n) {
        fail(ErrorCategory::shape, "fibre fraction length does not match the mesh");
    }
    if (coef_.dirichlet_values.empty()) {
        coef_.dirichlet_values.assign(n, 0.0);
    }
    if (coef_.dirichlet_values.size() != n) {
        fail(ErrorCategory::shape, "Dirichlet value length does not match the mesh");
    }
    const Quadrature& quad = volume_quadrature(dim);

    elements_.resize(m.num_elements());
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        const auto el = m.element(e);
        ElementData& d = elements_[e];
        Eigen::Matrix3d J = Eigen::Matrix3d::Identity();
        for (int c = 0; c < dim; ++c) {
            for (int r = 0; r < dim; ++r) {
                J(r, c) = m.nodes[el[c + 1]][r] - m.nodes[el[0]][r];
            }
        }
        const double det = J.topLeftCorner(dim, dim).determinant();
        d.measure = std::abs(det) / (dim == 2 ? 2.0 : 6.0);
        if (!(d.measure > 0.0)) {
            fail(ErrorCategory::mesh, "degenerate element " + std::to_string(e) + " (zero volume)");
        }
        Eigen::MatrixXd inv = J.topLeftCorner(dim, dim).inverse();
        for (int i = 1; i <= dim; ++i) {
            for (int k = 0; k < dim; ++k) {
                d.grad[i][k] = inv(i - 1, k);
                d.grad[0][k] -= inv(i - 1, k);
            }
        }
        double alpha_bar = 0.0;
        for (std::size_t q = 0; q < quad.weights.size(); ++q) {
            double alpha = coef_.alpha;
            if (!coef_.fibre_fraction.empty()) {
                double vf = 0.0;
                for (int i = 0; i < npe; ++i) vf += quad.points[q][i] * coef_.fibre_fraction[el[i]];
                d.vf_q[q] = vf;
                alpha = problems::diffusivity(vf, coef_.constants);
            }
            alpha_bar += quad.weights[q] * alpha;
        }
        d.alpha_bar = alpha_bar;
    }

    // Dirichlet split.
    free_index_.assign(n, -1);
    free_.clear();
    constrained_.clear();
    for (std::size_t v = 0; v < n; ++v) {
        if (m.node_tags[v] == mesh::NodeTag::dirichlet) {
            constrained_.push_back(static_cast<int>(v));
        } else {
            free_index_[v] = static_cast<int>(free_.size());
            free_.push_back(static_cast<int>(v));
        }
    }

    // Global matrices.
    std::vector<Eigen::Triplet<double>> mt, kt;
    mt.reserve(m.num_elements() * npe * npe);
    kt.reserve(m.num_elements() * npe * npe);
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        const auto el = m.element(e);
        const ElementData& d = elements_[e];
        for (int i = 0; i < npe; ++i) {
            for (int j = 0; j < npe; ++j) {
                double mij = 0.0;
                for (std::size_t q = 0; q < quad.weights.size(); ++q) {
                    mij += quad.weights[q] * quad.points[q][i] * quad.points[q][j];
                }
                double gij = 0.0;
                for (int k = 0; k < dim; ++k) gij += d.grad[i][k] * d.grad[j][k];
                mt.emplace_back(el[i], el[j], d.measure * mij);
                kt.emplace_back(el[i], el[j], d.measure * d.alpha_bar * gij);
            }
        }
    }
    const auto ni = static_cast<Eigen::Index>(n);
    mass_.resize(ni, ni);
    mass_.setFromTriplets(mt.begin(), mt.end());
    stiffness_.resize(ni, ni);
    stiffness_.setFromTriplets(kt.begin(), kt.end());

    // Neumann load, also kept per element for element_residual().
    neumann_load_ = Eigen::VectorXd::Zero(ni);
    neumann_local_.assign(m.num_elements(), {0.0, 0.0, 0.0, 0.0});
    bool any_neumann = false;
    for (const auto& f : m.boundary_facets) {
        if (f.tag == mesh::NodeTag::neumann && coef_.neumann_flux.count(f.group) && coef_.neumann_flux.at(f.group) != 0.0) {
            any_neumann = true;
        }
    }
    if (any_neumann) {
        std::unordered_map<std::array<int, 3>, int, FacetKeyHash> owner;
        for (std::size_t e = 0; e < m.num_elements(); ++e) {
            const auto el = m.element(e);
            for (int skip = 0; skip < npe; ++skip) {
                std::array<int, 3> face{-1, -1, -1};
                int k = 0;
                for (int i = 0; i < npe; ++i) {
                    if (i != skip) face[k++] = el[i];
                }
                owner[sorted_key(std::span<const int>(face.data(), static_cast<std::size_t>(dim)))] =
                    static_cast<int>(e);
            }
        }
        const Quadrature& fq = facet_quadrature(dim);
        for (std::size_t f = 0; f < m.boundary_facets.size(); ++f) {
            const auto& facet = m.boundary_facets[f];
            if (facet.tag != mesh::NodeTag::neumann) continue;
            const auto it = coef_.neumann_flux.find(facet.group);
            if (it == coef_.neumann_flux.end() || it->second == 0.0) continue;
            const auto fn = m.facet_nodes(f);
            const auto own = owner.find(sorted_key(fn));
            if (own == owner.end()) {
                fail(ErrorCategory::mesh, "boundary facet " + std::to_string(f) + " has no owning element");
            }
            const double area = mesh::facet_measure(m, f);
            const auto el = m.element(own->second);
            for (int a = 0; a < dim; ++a) {
                double integral = 0.0;
                for (std::size_t q = 0; q < fq.weights.size(); ++q) integral += fq.weights[q] * fq.points[q][a];
                const double value = it->second * area * integral;
                neumann_load_[fn[a]] += value;
                for (int i = 0; i < npe; ++i) {
                    if (el[i] == fn[a]) neumann_local_[own->second][i] += value;
                }
            }
        }
    }

    // Free/free and free/constrained blocks of M/dt + K.
    const SparseMatrix A = mass_ / coef_.dt + stiffness_;
    std::vector<Eigen::Triplet<double>> ff, fc;
    std::vector<int> constrained_index(n, -1);
    for (std::size_t c = 0; c < constrained_.size(); ++c) constrained_index[constrained_[c]] = static_cast<int>(c);
    for (Eigen::Index r = 0; r < A.outerSize(); ++r) {
        const int fr = free_index_[r];
        if (fr < 0) continue;
        for (SparseMatrix::InnerIterator it(A, r); it; ++it) {
            const int fcol = free_index_[it.col()];
            if (fcol >= 0) {
                ff.emplace_back(fr, fcol, it.value());
            } else {
                fc.emplace_back(fr, constrained_index[it.col()], it.value());
            }
        }
    }
    const auto nf = static_cast<Eigen::Index>(free_.size());
    system_ff_.resize(nf, nf);
    system_ff_.setFromTriplets(ff.begin(), ff.end());
    system_fc_.resize(nf, static_cast<Eigen::Index>(constrained_.size()));
    system_fc_.setFromTriplets(fc.begin(), fc.end());

    use_dense_ = options_.linear == LinearSolver::dense;
    if (use_dense_) {
        if (free_.size() > 5000) {
            fail(ErrorCategory::config, "dense solver requested for " + std::to_string(free_.size()) + " unknowns");
        }
        dense_.compute(Eigen::MatrixXd(system_ff_));
        if (dense_.info() != Eigen::Success) {
            fail(ErrorCategory::numeric, "dense Cholesky factorization failed");
        }
    }
}

std::array<double, 4> FemSystem::element_residual(std::size_t e, std::span<const double> T_new,
                                                  std::span<const double> T_old, double t_new) const {
    const auto& m = *mesh_;
    const int dim = m.dim;
    const int npe = dim + 1;
    const auto el = m.element(e);
    const ElementData& d = elements_[e];
    const Quadrature& quad = volume_quadrature(dim);
    std::array<double, 4> r{0.0, 0.0, 0.0, 0.0};
    const double inv_dt = 1.0 / coef_.dt;
    for (std::size_t q = 0; q < quad.weights.size(); ++q) {
        const auto& b = quad.points[q];
        double tn = 0.0, to = 0.0;
        for (int i = 0; i < npe; ++i) {
            tn += b[i] * T_new[el[i]];
            to += b[i] * T_old[el[i]];
        }
        double src = 0.0;
        if (coef_.nonlinear_source) {
            src += problems::source_term(tn, t_new, d.vf_q[q], coef_.constants);
        }
        if (coef_.forcing) {
            mesh::Point x{0.0, 0.0, 0.0};
            for (int i = 0; i < npe; ++i) {
                for (int k = 0; k < 3; ++k) x[k] += b[i] * m.nodes[el[i]][k];
            }
            src += coef_.forcing(x, t_new);
        }
        const double c = quad.weights[q] * d.measure * ((tn - to) * inv_dt - src);
        for (int i = 0; i < npe; ++i) r[i] += c * b[i];
    }
    std::array<double, 3> g{0.0, 0.0, 0.0};
    for (int i = 0; i < npe; ++i) {
        for (int k = 0; k < dim; ++k) g[k] += T_new[el[i]] * d.grad[i][k];
    }
    const double s = d.alpha_bar * d.measure;
    for (int i = 0; i < npe; ++i) {
        double dot = 0.0;
        for (int k = 0; k < dim; ++k) dot += g[k] * d.grad[i][k];
        r[i] += s * dot - neumann_local_[e][i];
    }
    return r;
}

std::vector<double> FemSystem::residual(std::span<const double> T_new, std::span<const double> T_old,
                                        double t_new) const {
    const auto& m = *mesh_;
    if (T_new.size() != m.num_nodes() || T_old.size() != m.num_nodes()) {
        fail(ErrorCategory::shape, "residual state length " + std::to_string(T_new.size()) + "/" +
                                       std::to_string(T_old.size()) + " does not match " +
                                       std::to_string(m.num_nodes()) + " nodes");
    }
    std::vector<double> out(free_.size(), 0.0);
    const int npe = m.dim + 1;
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        const auto r = element_residual(e, T_new, T_old, t_new);
        const auto el = m.element(e);
        for (int i = 0; i < npe; ++i) {
            const int f = free_index_[el[i]];
            if (f >= 0) out[f] += r[i];
        }
    }
    return out;
}

void FemSystem::residual_vjp(std::span<const double> T_new, std::span<const double> /*T_old*/, double t_new,
                             std::span<const double> g_free, std::span<double> d_new, std::span<double> d_old) const {
    const auto& m = *mesh_;
    const int dim = m.dim;
    const int npe = dim + 1;
    if (g_free.size() != free_.size() || d_new.size() != m.num_nodes() || d_old.size() != m.num_nodes()) {
        fail(ErrorCategory::shape, "residual VJP buffer sizes do not match the system");
    }
    const Quadrature& quad = volume_quadrature(dim);
    const double inv_dt = 1.0 / coef_.dt;
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        const auto el = m.element(e);
        std::array<double, 4> gl{0.0, 0.0, 0.0, 0.0};
        bool any = false;
        for (int i = 0; i < npe; ++i) {
            const int f = free_index_[el[i]];
            if (f >= 0 && g_free[f] != 0.0) {
                gl[i] = g_free[f];
                any = true;
            }
        }
        if (!any) continue;
        const ElementData& d = elements_[e];
        for (std::size_t q = 0; q < quad.weights.size(); ++q) {
            const auto& b = quad.points[q];
            double gq = 0.0;
            for (int i = 0; i < npe; ++i) gq += gl[i] * b[i];
            double dsrc = 0.0;
            if (coef_.nonlinear_source) {
                double tn = 0.0;
                for (int i = 0; i < npe; ++i) tn += b[i] * T_new[el[i]];
                dsrc = problems::source_term_dT(tn, t_new, d.vf_q[q], coef_.constants);
            }
            const double w = quad.weights[q] * d.measure * gq;
            for (int j = 0; j < npe; ++j) {
                d_new[el[j]] += w * (inv_dt - dsrc) * b[j];
                d_old[el[j]] -= w * inv_dt * b[j];
            }
        }
        std::array<double, 3> gg{0.0, 0.0, 0.0};
        for (int i = 0; i < npe; ++i) {
            for (int k = 0; k < dim; ++k) gg[k] += gl[i] * d.grad[i][k];
        }
        const double s = d.alpha_bar * d.measure;
        for (int j = 0; j < npe; ++j) {
            double dot = 0.0;
            for (int k = 0; k < dim; ++k) dot += gg[k] * d.grad[j][k];
            d_new[el[j]] += s * dot;
        }
    }
}

Eigen::VectorXd FemSystem::source_load(std::span<const double> T, double t_new) const {
    const auto& m = *mesh_;
    const int npe = m.dim + 1;
    Eigen::VectorXd load = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.num_nodes()));
    const bool nonlinear = coef_.nonlinear_source && !T.empty();
    if (!nonlinear && !coef_.forcing) {
        return load;
    }
    const Quadrature& quad = volume_quadrature(m.dim);
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        const auto el = m.element(e);
        const ElementData& d = elements_[e];
        for (std::size_t q = 0; q < quad.weights.size(); ++q) {
            const auto& b = quad.points[q];
            double src = 0.0;
            if (nonlinear) {
                double tn = 0.0;
                for (int i = 0; i < npe; ++i) tn += b[i] * T[el[i]];
                src += problems::source_term(tn, t_new, d.vf_q[q], coef_.constants);
            }
            if (coef_.forcing) {
                mesh::Point x{0.0, 0.0, 0.0};
                for (int i = 0; i < npe; ++i) {
                    for (int k = 0; k < 3; ++k) x[k] += b[i] * m.nodes[el[i]][k];
                }
                src += coef_.forcing(x, t_new);
            }
            const double c = quad.weights[q] * d.measure * src;
            for (int i = 0; i < npe; ++i) load[el[i]] += c * b[i];
        }
    }
    return load;
}

std::vector<double> FemSystem::solve_with_load(std::span<const double> T_old, const Eigen::VectorXd& load,
                                               std::span<const double> guess, StepInfo* info) const {
    const std::size_t n = num_nodes();
    if (T_old.size() != n) {
        fail(ErrorCategory::shape, "state length " + std::to_string(T_old.size()) + " does not match " +
                                       std::to_string(n) + " nodes");
    }
    const Eigen::Map<const Eigen::VectorXd> to(T_old.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd full = mass_ * to / coef_.dt + load + neumann_load_;
    Eigen::VectorXd tc(static_cast<Eigen::Index>(constrained_.size()));
    for (std::size_t c = 0; c < constrained_.size(); ++c) tc[c] = coef_.dirichlet_values[constrained_[c]];
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(free_.size()));
    for (std::size_t f = 0; f < free_.size(); ++f) rhs[f] = full[free_[f]];
    if (tc.size() > 0) rhs -= system_fc_ * tc;

    Eigen::VectorXd x;
    if (free_.empty()) {
        x.resize(0);
    } else if (use_dense_) {
        x = dense_.solve(rhs);
    } else {
        Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
        cg.setTolerance(options_.cg_tolerance);
        const int max_it = options_.cg_max_iterations > 0 ? options_.cg_max_iterations
                                                          : static_cast<int>(10 * free_.size() + 100);
        cg.setMaxIterations(max_it);
        cg.compute(system_ff_);
        Eigen::VectorXd x0(static_cast<Eigen::Index>(free_.size()));
        for (std::size_t f = 0; f < free_.size(); ++f) x0[f] = guess.empty() ? T_old[free_[f]] : guess[free_[f]];
        x = cg.solveWithGuess(rhs, x0);
        if (info) {
            info->cg_iterations += static_cast<int>(cg.iterations());
            info->cg_error = std::max(info->cg_error, cg.error());
        }
        if (cg.info() != Eigen::Success) {
            fail(ErrorCategory::numeric, "conjugate gradient did not converge: " + std::to_string(cg.iterations()) +
                                             " iterations, relative residual " + std::to_string(cg.error()));
        }
    }
    std::vector<double> out(n);
    for (std::size_t f = 0; f < free_.size(); ++f) out[free_[f]] = x[static_cast<Eigen::Index>(f)];
    for (std::size_t c = 0; c < constrained_.size(); ++c) out[constrained_[c]] = tc[static_cast<Eigen::Index>(c)];
    return out;
}

std::vector<double> FemSystem::solve_step_linear(std::span<const double> T_old, double t_new, StepInfo* info) const {
    if (coef_.nonlinear_source) {
        fail(ErrorCategory::config, "linear step requested for a temperature-dependent source");
    }
    return solve_with_load(T_old, source_load({}, t_new), {}, info);
}

std::vector<std::vector<double>> FemSystem::picard_iterates(std::span<const double> T_old, double t_new) const {
    std::vector<std::vector<double>> its;
    its.emplace_back(T_old.begin(), T_old.end());
    for (int k = 0; k < options_.picard_max_iterations; ++k) {
        const auto& cur = its.back();
        auto next = solve_with_load(T_old, source_load(cur, t_new), cur, nullptr);
        double diff = 0.0;
        for (std::size_t v = 0; v < next.size(); ++v) diff = std::max(diff, std::abs(next[v] - cur[v]));
        const double scale = std::max(1.0, max_abs(cur));
        its.push_back(std::move(next));
        if (diff <= options_.picard_tolerance * scale) break;
    }
    return its;
}

std::vector<double> FemSystem::solve_step_nonlinear(std::span<const double> T_old, double t_new,
                                                    StepInfo* info) const {
    std::vector<double> cur(T_old.begin(), T_old.end());
    StepInfo local;
    local.converged = false;
    for (int k = 0; k < options_.picard_max_iterations; ++k) {
        auto next = solve_with_load(T_old, source_load(cur, t_new), cur, &local);
        double diff = 0.0;
        for (std::size_t v = 0; v < next.size(); ++v) diff = std::max(diff, std::abs(next[v] - cur[v]));
        const double scale = std::max(1.0, max_abs(cur));
        cur = std::move(next);
        local.picard_iterations = k + 1;
        if (diff <= options_.picard_tolerance * scale) {
            local.converged = true;
            break;
        }
    }
    if (!local.converged) {
        std::cerr << "warning: Picard iteration did not converge in " << options_.picard_max_iterations
                  << " iterations at t = " << t_new << "; using the last iterate\n";
    }
    if (info) *info = local;
    return cur;
}

std::vector<double> FemSystem::solve_step(std::span<const double> T_old, double t_new, StepInfo* info) const {
    return coef_.nonlinear_source ? solve_step_nonlinear(T_old, t_new, info) : solve_step_linear(T_old, t_new, info);
}

Trajectory solve_trajectory(const problems::ProblemSpec& p, const SolverOptions& options, TrajectoryInfo* info) {
    const FemSystem sys(p, options);
    Trajectory traj;
    traj.rows = static_cast<std::size_t>(p.time.steps) + 1;
    traj.nodes = p.num_nodes();
    traj.data.resize(traj.rows * traj.nodes);
    std::copy(p.initial.begin(), p.initial.end(), traj.row(0).begin());
    TrajectoryInfo ti;
    for (std::size_t n = 1; n < traj.rows; ++n) {
        StepInfo si;
        const auto next = sys.solve_step(traj.row(n - 1), static_cast<double>(n) * p.time.dt, &si);
        std::copy(next.begin(), next.end(), traj.row(n).begin());
        ti.max_picard_iterations = std::max(ti.max_picard_iterations, si.picard_iterations);
        if (!si.converged) ++ti.unconverged_steps;
    }
    if (info) *info = ti;
    return traj;
}

namespace {

constexpr char kTrajMagic[7] = {'N', 'F', 'T', 'R', 'A', 'J', '1'};

template <class T>
void put_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) fail(ErrorCategory::format, "truncated trajectory file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

} // namespace

void write_trajectory(const Trajectory& t, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCategory::io, "cannot open '" + path.string() + "' for writing");
    out.write(kTrajMagic, sizeof(kTrajMagic));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.nodes));
    for (double v : t.data) put_le<double>(out, v);
    if (!out) fail(ErrorCategory::io, "write to '" + path.string() + "' failed");
}

Trajectory read_trajectory(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::io, "cannot open trajectory '" + path.string() + "'");
    char magic[7];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kTrajMagic, sizeof(magic)) != 0) {
        fail(ErrorCategory::format, "'" + path.string() + "' is not a trajectory file");
    }
    Trajectory t;
    t.rows = get_le<std::uint32_t>(in);
    t.nodes = get_le<std::uint32_t>(in);
    t.data.resize(t.rows * t.nodes);
    for (double& v : t.data) v = get_le<double>(in);
    return t;
}

} // namespace nfem::fem
