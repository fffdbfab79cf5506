#include "doctest.h"

#include "../common/fixtures.hpp"

#include "nfem/error.hpp"
#include "nfem/eval.hpp"

#include <cmath>
#include <regex>

using namespace nfem;
using namespace nfem::eval;

namespace {

fem::Trajectory random_traj(Rng& rng, std::size_t rows, std::size_t nodes) {
    fem::Trajectory t;
    t.rows = rows;
    t.nodes = nodes;
    for (std::size_t i = 0; i < rows * nodes; ++i) t.data.push_back(standard_normal(rng));
    return t;
}

std::size_t count_of(const std::string& s, const std::string& what) {
    std::size_t n = 0;
    for (auto p = s.find(what); p != std::string::npos; p = s.find(what, p + 1)) ++n;
    return n;
}

} // namespace

TEST_CASE("normalized L2 oracle cases") {
    Rng rng = make_rng(1);
    const auto truth = random_traj(rng, 6, 9);
    CHECK(normalized_l2(truth, truth) == 0.0);
    auto twice = truth;
    for (auto& v : twice.data) v *= 2;
    CHECK(normalized_l2(twice, truth) == doctest::Approx(1.0).epsilon(1e-15));

    const auto pred = random_traj(rng, 6, 9);
    double num = 0, den = 0;
    for (std::size_t n = 1; n < 6; ++n)
        for (std::size_t v = 0; v < 9; ++v) {
            num += std::pow(pred.row(n)[v] - truth.row(n)[v], 2);
            den += std::pow(truth.row(n)[v], 2);
        }
    const double ref = std::sqrt(num / den);
    CHECK(std::abs(normalized_l2(pred, truth) - ref) <= 1e-13 * ref);

    // initial row is excluded
    auto p0 = truth;
    p0.row(0)[3] += 100.0;
    CHECK(normalized_l2(p0, truth) == 0.0);

    auto sp = pred, st = truth;
    for (auto& v : sp.data) v *= -3.5;
    for (auto& v : st.data) v *= -3.5;
    CHECK(normalized_l2(sp, st) == doctest::Approx(normalized_l2(pred, truth)).epsilon(1e-13));

    auto zero = truth;
    std::fill(zero.data.begin() + static_cast<long>(zero.nodes), zero.data.end(), 0.0);
    CHECK_THROWS_AS(normalized_l2(pred, zero), Error);
    CHECK_THROWS_AS(normalized_l2(random_traj(rng, 5, 9), truth), Error);
}

TEST_CASE("relative error field") {
    Rng rng = make_rng(2);
    const auto truth = random_traj(rng, 4, 7);
    for (double v : relative_error_field(truth, truth, 2)) CHECK(v == 0.0);
    auto off = truth;
    for (auto& v : off.data) v += 0.25;
    const auto [lo, hi] = std::minmax_element(truth.data.begin(), truth.data.end());
    for (double v : relative_error_field(off, truth, 3)) CHECK(v == doctest::Approx(0.25 / (*hi - *lo)));
    auto flat = truth;
    std::fill(flat.data.begin(), flat.data.end(), 1.0);
    CHECK_THROWS_AS(relative_error_field(truth, flat, 1), Error);
}

TEST_CASE("compare groups repetitions and is deterministic") {
    std::vector<Evaluation> evals;
    auto mk = [](std::string method, std::string exp, std::string rep, double mean) {
        Evaluation e;
        e.method = std::move(method);
        e.experiment = std::move(exp);
        e.repetition = std::move(rep);
        e.mean_l2 = mean;
        e.l2 = {mean};
        e.problems = {"0"};
        return e;
    };
    evals.push_back(mk("pi", "exp1", "1", 0.010));
    evals.push_back(mk("data", "exp1", "1", 0.030));
    evals.push_back(mk("pi", "exp1", "2", 0.020));
    evals.push_back(mk("pi", "exp1", "3", 0.030));
    const auto r = compare(evals);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].method == "data");
    CHECK(r.rows[1].method == "pi");
    CHECK(r.rows[1].l2.mean == doctest::Approx(0.020));
    CHECK(r.rows[1].l2.stddev == doctest::Approx(0.010));
    CHECK(r.rows[0].l2.stddev == 0.0);
    CHECK(summary_csv(r) == summary_csv(compare(evals)));
    CHECK(summary_csv(r).find("pi,exp1,1;2;3,20.000000,10.000000") != std::string::npos);
    CHECK(format_table(r).find("20.00 +- 10.00") != std::string::npos);
    CHECK(count_of(detail_csv(r), "\n") == 5);
}

TEST_CASE("SVG plots of 2D and 3D fields") {
    const auto p = problems::sample_problem(problems::ProblemKind::exp1, 3, 3, 0);
    const auto svg = plot_field_svg(*p.mesh, p.initial, {"initial", 600, 0.0});
    CHECK(count_of(svg, "<polygon") == p.mesh->num_elements());
    CHECK(svg.find("min ") != std::string::npos);
    CHECK(svg.find("max ") != std::string::npos);
    CHECK_THROWS_AS(plot_field_svg(*p.mesh, std::vector<double>(3, 0.0)), Error);

    const auto c = problems::sample_problem(problems::ProblemKind::exp3, 3, 3, 0);
    std::vector<double> f(c.num_nodes());
    for (std::size_t v = 0; v < f.size(); ++v) f[v] = c.mesh->nodes[v][0] + c.mesh->nodes[v][1];
    const auto cut = plot_field_svg(*c.mesh, f);
    CHECK(count_of(cut, "<polygon") > 100);
}

TEST_CASE("bench times rollout and reference separately") {
    const auto p = testing::ten_element_problem(2);
    mgn::ModelConfig cfg;
    cfg.latent = 16;
    cfg.blocks = 1;
    cfg.decoder = mgn::DecoderKind::mlp;
    const mgn::Model model(cfg, 1);
    const auto b = bench(model, p, 2);
    CHECK(b.model_calls == 5);
    CHECK(b.rollout_seconds > 0.0);
    CHECK(b.fem_seconds > 0.0);
    CHECK(b.ratio == doctest::Approx(b.rollout_seconds / b.fem_seconds));
    CHECK(b.elements == 10);
}
