#include "doctest.h"

#include "nfem/error.hpp"
#include "nfem/fem.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace nfem;
using namespace nfem::fem;

namespace {

double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

// Independent dense P1 triangle assembly from closed-form element matrices.
struct DenseTri {
    Eigen::MatrixXd M, K;
};

DenseTri dense_triangle_matrices(const mesh::Mesh& m, double alpha) {
    const auto n = static_cast<Eigen::Index>(m.num_nodes());
    DenseTri d{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        const auto el = m.element(e);
        const double x1 = m.nodes[el[0]][0], y1 = m.nodes[el[0]][1];
        const double x2 = m.nodes[el[1]][0], y2 = m.nodes[el[1]][1];
        const double x3 = m.nodes[el[2]][0], y3 = m.nodes[el[2]][1];
        const double A = 0.5 * ((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1));
        const double b[3] = {y2 - y3, y3 - y1, y1 - y2};
        const double c[3] = {x3 - x2, x1 - x3, x2 - x1};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                d.M(el[i], el[j]) += A / 12.0 * (i == j ? 2.0 : 1.0);
                d.K(el[i], el[j]) += alpha * (b[i] * b[j] + c[i] * c[j]) / (4.0 * A);
            }
        }
    }
    return d;
}

std::shared_ptr<const mesh::Mesh> unit_right_triangle() {
    mesh::Mesh m;
    m.dim = 2;
    m.nodes = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    m.elements = {{0, 1, 2, -1}};
    for (const auto& f : mesh::exterior_facets(2, m.elements)) {
        m.boundary_facets.push_back({{f[0], f[1], -1}, mesh::NodeTag::neumann, "outer"});
    }
    mesh::retag_nodes(m);
    return std::make_shared<const mesh::Mesh>(std::move(m));
}

Eigen::MatrixXd to_dense(const SparseMatrix& s) { return Eigen::MatrixXd(s); }

} // namespace

TEST_CASE("quadrature rules integrate degree-2 barycentric monomials exactly") {
    for (int dim : {2, 3}) {
        const auto& q = volume_quadrature(dim);
        double wsum = 0.0;
        for (double w : q.weights) wsum += w;
        CHECK(wsum == doctest::Approx(1.0).epsilon(1e-15));
        // Average of lambda^a over the simplex: dim! prod(a_k!) / (dim + sum a)!.
        const int nb = dim + 1;
        for (int i = 0; i < nb; ++i) {
            for (int j = 0; j < nb; ++j) {
                int a[4] = {0, 0, 0, 0};
                ++a[i];
                ++a[j];
                double quad = 0.0;
                for (std::size_t k = 0; k < q.weights.size(); ++k) {
                    quad += q.weights[k] * q.points[k][i] * q.points[k][j];
                }
                double exact = factorial(dim) / factorial(dim + 2);
                for (int k = 0; k < 4; ++k) exact *= factorial(a[k]);
                CHECK(quad == doctest::Approx(exact).epsilon(1e-14));
            }
            double lin = 0.0;
            for (std::size_t k = 0; k < q.weights.size(); ++k) lin += q.weights[k] * q.points[k][i];
            CHECK(lin == doctest::Approx(1.0 / nb).epsilon(1e-14));
        }
    }
}

TEST_CASE("unit right triangle element matrices") {
    Coefficients c;
    c.alpha = 1.0;
    c.dt = 1.0;
    const FemSystem sys(unit_right_triangle(), c);
    const Eigen::MatrixXd K = to_dense(sys.stiffness());
    const Eigen::MatrixXd M = to_dense(sys.mass());
    Eigen::Matrix3d Kref, Mref;
    Kref << 2, -1, -1, -1, 1, 0, -1, 0, 1;
    Kref *= 0.5;
    Mref << 2, 1, 1, 1, 2, 1, 1, 1, 2;
    Mref *= 0.5 / 12.0;
    CHECK((K - Kref).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((M - Mref).cwiseAbs().maxCoeff() <= 1e-15);

    // Element residual reproduces the matrices: R = M (Tn - To)/dt + K Tn.
    const std::vector<double> tn{0.3, -1.2, 2.0}, to{0.1, 0.5, -0.7};
    const auto r = sys.element_residual(0, tn, to, 1.0);
    Eigen::Vector3d vn(tn.data()), vo(to.data());
    const Eigen::Vector3d ref = Mref * (vn - vo) + Kref * vn;
    for (int i = 0; i < 3; ++i) CHECK(r[i] == doctest::Approx(ref[i]).epsilon(1e-14));
}

TEST_CASE("constants lie in the kernel of the element residual") {
    auto rng = make_rng(2);
    const auto p = problems::sample_problem(problems::ProblemKind::exp1, 1, 1, 0);
    const FemSystem sys(p);
    const std::vector<double> c(p.num_nodes(), 3.7);
    for (std::size_t e = 0; e < p.mesh->num_elements(); ++e) {
        for (double v : sys.element_residual(e, c, c, 0.01)) CHECK(std::abs(v) <= 1e-13);
    }
}

TEST_CASE("global matrices are symmetric and match the dense oracle") {
    const auto m = std::make_shared<const mesh::Mesh>(mesh::structured_rectangle(5, 4, 1.3, 0.9));
    Coefficients c;
    c.alpha = 0.05;
    const FemSystem sys(m, c);
    const Eigen::MatrixXd M = to_dense(sys.mass()), K = to_dense(sys.stiffness());
    CHECK((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() <= 1e-13);
    const auto ref = dense_triangle_matrices(*m, 0.05);
    CHECK((M - ref.M).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((K - ref.K).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("3D matrices are symmetric and annihilate constants") {
    const auto p = problems::sample_problem(problems::ProblemKind::exp3, 1, 1, 0);
    const FemSystem sys(p);
    const Eigen::MatrixXd K = to_dense(sys.stiffness());
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK((K * Eigen::VectorXd::Ones(K.rows())).cwiseAbs().maxCoeff() <= 1e-12);
    // Mass matrix entries sum to the volume.
    CHECK(to_dense(sys.mass()).sum() == doctest::Approx(mesh::total_volume(*p.mesh)).epsilon(1e-12));
}

TEST_CASE("Neumann load integrates the flux over the inner surface") {
    const auto p = problems::sample_problem(problems::ProblemKind::exp3, 1, 1, 0);
    const FemSystem sys(p);
    double inner_area = 0.0;
    for (auto f : mesh::facets_in_group(*p.mesh, "inner")) inner_area += mesh::facet_measure(*p.mesh, f);
    CHECK(sys.neumann_load().sum() == doctest::Approx(inner_area).epsilon(1e-12));

    // Persistence on the heated problem leaves residual only next to the heated surface.
    const auto r = sys.residual(p.initial, p.initial, 0.01);
    double ri = 1e9;
    for (const auto& x : p.mesh->nodes) ri = std::min(ri, std::hypot(x[1], x[2]));
    for (std::size_t f = 0; f < sys.num_free(); ++f) {
        const auto& x = p.mesh->nodes[sys.free_nodes()[f]];
        const bool inner = std::abs(std::hypot(x[1], x[2]) - ri) < 1e-9;
        if (inner) {
            CHECK(r[f] < 0.0);
        } else {
            CHECK(std::abs(r[f]) <= 1e-14);
        }
    }
}

TEST_CASE("assembled residual matches the matrix form in any summation order") {
    const auto p = problems::sample_problem(problems::ProblemKind::exp1, 2, 2, 3);
    const FemSystem sys(p);
    auto rng = make_rng(8);
    std::vector<double> tn(p.num_nodes()), to(p.num_nodes());
    for (auto& v : tn) v = uniform(rng, -1, 1);
    for (auto& v : to) v = uniform(rng, -1, 1);
    const auto r = sys.residual(tn, to, 0.5);
    const Eigen::Map<const Eigen::VectorXd> vn(tn.data(), tn.size()), vo(to.data(), to.size());
    const Eigen::VectorXd full = sys.mass() * (vn - vo) / sys.dt() + sys.stiffness() * vn;
    // Reverse element order.
    std::vector<double> rev(sys.num_free(), 0.0);
    for (std::size_t e = p.mesh->num_elements(); e-- > 0;) {
        const auto re = sys.element_residual(e, tn, to, 0.5);
        const auto el = p.mesh->element(e);
        for (int i = 0; i < 3; ++i) {
            if (sys.free_index()[el[i]] >= 0) rev[sys.free_index()[el[i]]] += re[i];
        }
    }
    double scale = 0.0;
    for (double v : r) scale = std::max(scale, std::abs(v));
    for (std::size_t f = 0; f < sys.num_free(); ++f) {
        CHECK(std::abs(r[f] - full[sys.free_nodes()[f]]) <= 1e-12 * scale);
        CHECK(std::abs(r[f] - rev[f]) <= 1e-13 * scale);
    }
}

TEST_CASE("linear step: solve then residual vanishes; dense and CG agree") {
    const auto p = problems::sample_problem(problems::ProblemKind::exp1, 3, 3, 1);
    const FemSystem cg(p);
    SolverOptions dense_opt;
    dense_opt.linear = LinearSolver::dense;
    const FemSystem dense(p, dense_opt);
    const auto t1 = cg.solve_step_linear(p.initial, 0.01);
    const auto t2 = dense.solve_step_linear(p.initial, 0.01);
    double diff = 0.0;
    for (std::size_t v = 0; v < t1.size(); ++v) diff = std::max(diff, std::abs(t1[v] - t2[v]));
    CHECK(diff <= 1e-12);
    for (double r : cg.residual(t1, p.initial, 0.01)) CHECK(std::abs(r) <= 1e-10);
    for (int v : cg.constrained_nodes()) CHECK(t1[v] == p.dirichlet_values[v]);
}

TEST_CASE("small patch against an independent dense solve") {
    // 2x2 square: one free node in the middle.
    const auto m = std::make_shared<const mesh::Mesh>(mesh::structured_rectangle(2, 2));
    Coefficients c;
    c.alpha = 0.7;
    c.dt = 0.05;
    c.dirichlet_values.assign(m->num_nodes(), 0.0);
    std::vector<double> to(m->num_nodes());
    for (std::size_t v = 0; v < m->num_nodes(); ++v) {
        to[v] = 1.0 + m->nodes[v][0] - 0.5 * m->nodes[v][1];
        c.dirichlet_values[v] = 2.0 * m->nodes[v][0] + m->nodes[v][1];
    }
    const FemSystem sys(m, c);
    REQUIRE(sys.num_free() == 1);
    const auto t = sys.solve_step_linear(to, 0.05);
    const auto ref = dense_triangle_matrices(*m, 0.7);
    const Eigen::MatrixXd A = ref.M / 0.05 + ref.K;
    const int u = sys.free_nodes()[0];
    double rhs = 0.0;
    for (std::size_t v = 0; v < m->num_nodes(); ++v) {
        rhs += ref.M(u, v) * to[v] / 0.05;
        if (static_cast<int>(v) != u) rhs -= A(u, v) * c.dirichlet_values[v];
    }
    CHECK(std::abs(t[u] - rhs / A(u, u)) <= 1e-12);
}

TEST_CASE("uniform state with matching boundary stays put") {
    const auto m = std::make_shared<const mesh::Mesh>(mesh::structured_rectangle(6, 6));
    Coefficients c;
    c.alpha = 0.05;
    c.dirichlet_values.assign(m->num_nodes(), 4.2);
    const FemSystem sys(m, c);
    const std::vector<double> to(m->num_nodes(), 4.2);
    const auto t = sys.solve_step_linear(to, 0.01);
    for (double v : t) CHECK(std::abs(v - 4.2) <= 1e-10);
}

TEST_CASE("nonlinear step with vanishing source equals the linear step") {
    auto p = problems::sample_problem(problems::ProblemKind::exp2, 4, 4, 0);
    p.constants.q0 = 0.0;
    const FemSystem nl(p);
    auto c = coefficients_from(p);
    c.nonlinear_source = false;
    const FemSystem lin(p.mesh, c);
    const auto a = nl.solve_step_nonlinear(p.initial, 0.01);
    const auto b = lin.solve_step_linear(p.initial, 0.01);
    for (std::size_t v = 0; v < a.size(); ++v) CHECK(std::abs(a[v] - b[v]) <= 1e-12);
}

TEST_CASE("nonlinear step converges to a small residual") {
    const auto p = problems::sample_problem(problems::ProblemKind::exp2, 5, 5, 2);
    const FemSystem sys(p);
    std::vector<double> T = p.initial;
    for (int n = 1; n <= 5; ++n) {
        StepInfo info;
        const auto next = sys.solve_step_nonlinear(T, n * 0.01, &info);
        CHECK(info.converged);
        for (double r : sys.residual(next, T, n * 0.01)) CHECK(std::abs(r) <= 1e-6);
        T = next;
    }
}

TEST_CASE("Picard iterates on a single free node match a scalar fixed-point loop") {
    const auto m = std::make_shared<const mesh::Mesh>(mesh::structured_rectangle(2, 2));
    Coefficients c;
    c.dt = 0.01;
    c.constants = problems::default_constants(problems::Experiment::exp2);
    c.fibre_fraction.assign(m->num_nodes(), 0.3);
    c.nonlinear_source = true;
    c.dirichlet_values.assign(m->num_nodes(), 100.0);
    const FemSystem sys(m, c);
    REQUIRE(sys.num_free() == 1);
    const int u = sys.free_nodes()[0];
    std::vector<double> to(m->num_nodes(), 100.0);
    to[u] = 90.0;
    const double t_new = 0.02;
    const auto its = sys.picard_iterates(to, t_new);

    // Scalar oracle: closed-form matrices, edge-midpoint source quadrature.
    const double alpha = 1.0 / (0.3 / 0.1 + 0.7 / 0.01);
    const auto ref = dense_triangle_matrices(*m, alpha);
    const Eigen::MatrixXd A = ref.M / c.dt + ref.K;
    auto load_u = [&](double uval) {
        double q = 0.0;
        for (std::size_t e = 0; e < m->num_elements(); ++e) {
            const auto el = m->element(e);
            const double area = mesh::signed_volume(*m, e);
            for (int a = 0; a < 3; ++a) {
                const int i = el[a], j = el[(a + 1) % 3];
                const double ti = i == u ? uval : 100.0;
                const double tj = j == u ? uval : 100.0;
                const double phi = (i == u || j == u) ? 0.5 : 0.0;
                q += area / 3.0 * problems::source_term(0.5 * (ti + tj), t_new, 0.3, c.constants) * phi;
            }
        }
        return q;
    };
    double x = to[u];
    for (std::size_t k = 1; k < its.size(); ++k) {
        double rhs = load_u(x);
        for (std::size_t v = 0; v < m->num_nodes(); ++v) {
            rhs += ref.M(u, v) * to[v] / c.dt;
            if (static_cast<int>(v) != u) rhs -= A(u, v) * 100.0;
        }
        x = rhs / A(u, u);
        CHECK(std::abs(its[k][u] - x) <= 1e-10);
    }
    CHECK(its.size() >= 3);
}

TEST_CASE("residual VJP matches finite differences") {
    for (auto kind : {problems::ProblemKind::exp1, problems::ProblemKind::exp2, problems::ProblemKind::exp3}) {
        auto p = problems::sample_problem(kind, 6, 6, 0);
        const FemSystem sys(p);
        auto rng = make_rng(12, static_cast<int>(kind));
        const double scale = kind == problems::ProblemKind::exp2 ? 100.0 : 1.0;
        std::vector<double> tn(p.num_nodes()), to(p.num_nodes()), g(sys.num_free());
        for (auto& v : tn) v = scale * uniform(rng, 0.5, 1.5);
        for (auto& v : to) v = scale * uniform(rng, 0.5, 1.5);
        for (auto& v : g) v = uniform(rng, -1, 1);
        std::vector<double> dn(p.num_nodes(), 0.0), dold(p.num_nodes(), 0.0);
        sys.residual_vjp(tn, to, 0.3, g, dn, dold);
        auto f = [&](const std::vector<double>& a, const std::vector<double>& b) {
            const auto r = sys.residual(a, b, 0.3);
            double s = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) s += g[i] * r[i];
            return s;
        };
        for (int probe = 0; probe < 10; ++probe) {
            const std::size_t v = uniform_index(rng, p.num_nodes());
            const double h = 1e-6 * scale;
            auto a = tn, b = tn;
            a[v] += h;
            b[v] -= h;
            const double fd_new = (f(a, to) - f(b, to)) / (2 * h);
            auto c = to, d = to;
            c[v] += h;
            d[v] -= h;
            const double fd_old = (f(tn, c) - f(tn, d)) / (2 * h);
            CHECK(dn[v] == doctest::Approx(fd_new).epsilon(1e-6).scale(1.0));
            CHECK(dold[v] == doctest::Approx(fd_old).epsilon(1e-6).scale(1.0));
        }
    }
}

TEST_CASE("trajectories: initial row, Dirichlet rows, constant preservation, overshoot") {
    const auto p = problems::sample_problem(problems::ProblemKind::exp1, 7, 7, 0);
    const auto traj = solve_trajectory(p);
    CHECK(traj.rows == 101);
    for (std::size_t v = 0; v < p.num_nodes(); ++v) CHECK(traj.row(0)[v] == p.initial[v]);
    double max0 = 0.0;
    for (double v : p.initial) max0 = std::max(max0, v);
    for (std::size_t n = 0; n < traj.rows; ++n) {
        for (std::size_t v = 0; v < p.num_nodes(); ++v) {
            if (p.mesh->node_tags[v] == mesh::NodeTag::dirichlet) CHECK(traj.row(n)[v] == p.dirichlet_values[v]);
            CHECK(traj.row(n)[v] <= max0 + 1e-6);
        }
    }

    auto flat = p;
    flat.initial.assign(p.num_nodes(), 2.5);
    flat.dirichlet_values.assign(p.num_nodes(), 2.5);
    const auto ct = solve_trajectory(flat);
    for (double v : ct.data) CHECK(std::abs(v - 2.5) <= 1e-10);
}

TEST_CASE("trajectory file round trip and format errors") {
    Trajectory t;
    t.rows = 3;
    t.nodes = 4;
    for (int i = 0; i < 12; ++i) t.data.push_back(std::sin(i) * 1e3 + 1.0 / 3.0);
    const auto path = std::filesystem::temp_directory_path() / "nfem_traj_rt.bin";
    write_trajectory(t, path);
    CHECK(std::filesystem::file_size(path) == 7 + 4 + 4 + 12 * 8);
    const auto back = read_trajectory(path);
    CHECK(back.rows == 3);
    CHECK(back.nodes == 4);
    CHECK(back.data == t.data);
    {
        std::ofstream out(path, std::ios::binary);
        out << "garbage";
    }
    try {
        read_trajectory(path);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::format);
    }
    std::filesystem::remove(path);
}

TEST_CASE("degenerate elements are rejected") {
    mesh::Mesh m;
    m.dim = 2;
    m.nodes = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    m.elements = {{0, 1, 2, -1}};
    m.node_tags.assign(3, mesh::NodeTag::dirichlet);
    CHECK_THROWS_AS(FemSystem(std::make_shared<const mesh::Mesh>(m), Coefficients{}), Error);
}
