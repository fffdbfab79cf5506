#include "doctest.h"

#include "../common/gradcheck.hpp"

#include "nfem/error.hpp"
#include "nfem/mgn.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace nfem;
using namespace nfem::mgn;
using problems::ProblemKind;

namespace {

ModelConfig small_config(problems::Experiment e = problems::Experiment::exp1) {
    ModelConfig c;
    c.experiment = e;
    c.latent = 16;
    c.blocks = 2;
    c.tbs = 4;
    return c;
}

problems::ProblemSpec small_problem(ProblemKind k = ProblemKind::exp1, std::uint64_t seed = 11) {
    return problems::sample_problem(k, seed, seed, 0);
}

// new label of old node v is perm[v]
problems::ProblemSpec permute_problem(const problems::ProblemSpec& p, const std::vector<int>& perm) {
    auto q = p;
    mesh::Mesh m = *p.mesh;
    const std::size_t N = m.num_nodes();
    auto remap = [&](auto& arr, std::size_t used) {
        for (std::size_t i = 0; i < used; ++i) arr[i] = perm[static_cast<std::size_t>(arr[i])];
    };
    for (std::size_t v = 0; v < N; ++v) {
        m.nodes[static_cast<std::size_t>(perm[v])] = p.mesh->nodes[v];
        m.node_tags[static_cast<std::size_t>(perm[v])] = p.mesh->node_tags[v];
    }
    for (auto& e : m.elements) remap(e, static_cast<std::size_t>(m.dim + 1));
    for (auto& f : m.boundary_facets) remap(f.nodes, static_cast<std::size_t>(m.dim));
    q.mesh = std::make_shared<const mesh::Mesh>(m);
    auto permute_field = [&](std::vector<double>& f) {
        if (f.empty()) return;
        std::vector<double> out(N);
        for (std::size_t v = 0; v < N; ++v) out[static_cast<std::size_t>(perm[v])] = f[v];
        f = out;
    };
    permute_field(q.initial);
    permute_field(q.fibre_fraction);
    permute_field(q.dirichlet_values);
    return q;
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

} // namespace

TEST_CASE("graph has both edge directions plus self-loops") {
    const auto p = small_problem();
    const auto cfg = small_config();
    const auto g = build_graph(p, cfg, p.initial, 0.0);
    const auto edges = mesh::unique_edges(*p.mesh);
    CHECK(g.num_edges() == static_cast<int>(2 * edges.size() + p.num_nodes()));
    int self = 0;
    for (int e = 0; e < g.num_edges(); ++e) {
        if (g.senders[static_cast<std::size_t>(e)] != g.receivers[static_cast<std::size_t>(e)]) continue;
        ++self;
        CHECK(g.edge_features.row(e).isZero(0.0));
    }
    CHECK(self == static_cast<int>(p.num_nodes()));
    for (std::size_t v = 0; v < p.num_nodes(); ++v) {
        const auto tag = p.mesh->node_tags[v];
        const Matrix row = g.node_features.row(static_cast<Index>(v)).leftCols(3);
        if (tag == mesh::NodeTag::dirichlet) CHECK(row == (Matrix(1, 3) << 1, 0, 0).finished());
        if (tag == mesh::NodeTag::interior) CHECK(row == (Matrix(1, 3) << 0, 0, 1).finished());
    }
    CHECK(g.global_features.rows() == 1);
    CHECK(g.global_features(0, 0) == 1.0);
}

TEST_CASE("edge features: exact differences without noise, antisymmetric pairs") {
    const auto p = small_problem();
    const auto cfg = small_config();
    const auto g = build_graph(p, cfg, p.initial, 0.0);
    const auto& T = p.initial;
    for (int e = 0; e + 1 < static_cast<int>(2 * mesh::unique_edges(*p.mesh).size()); e += 2) {
        const auto s = static_cast<std::size_t>(g.senders[static_cast<std::size_t>(e)]);
        const auto r = static_cast<std::size_t>(g.receivers[static_cast<std::size_t>(e)]);
        CHECK(g.edge_features(e, 3) == T[r] - T[s]);
        CHECK(g.senders[static_cast<std::size_t>(e + 1)] == static_cast<int>(r));
        CHECK(g.edge_features(e + 1, 0) == -g.edge_features(e, 0));
        CHECK(g.edge_features(e + 1, 1) == -g.edge_features(e, 1));
        CHECK(g.edge_features(e + 1, 2) == g.edge_features(e, 2));
        CHECK(g.edge_features(e + 1, 3) == -g.edge_features(e, 3));
    }
    Rng rng = make_rng(3);
    const auto noisy = build_graph(p, cfg, p.initial, 0.0, 0.01, &rng);
    CHECK(max_abs(noisy.edge_features.col(3) - g.edge_features.col(3)) > 0.0);
    CHECK(max_abs(noisy.edge_features.leftCols(3) - g.edge_features.leftCols(3)) == 0.0);
    CHECK(max_abs(noisy.state - g.state) == 0.0);
}

TEST_CASE("exp2 and exp3 node features") {
    const auto p2 = small_problem(ProblemKind::exp2);
    ModelConfig c2 = small_config(problems::Experiment::exp2);
    std::vector<double> T(p2.num_nodes(), 150.0);
    const auto g2 = build_graph(p2, c2, T, 0.4);
    REQUIRE(g2.node_features.cols() == 6);
    for (std::size_t v = 0; v < p2.num_nodes(); ++v) {
        CHECK(g2.node_features(static_cast<Index>(v), 3) == doctest::Approx(0.4));
        CHECK(g2.node_features(static_cast<Index>(v), 4) == doctest::Approx(1.5));
        CHECK(g2.node_features(static_cast<Index>(v), 5) == p2.fibre_fraction[v]);
    }
    CHECK(g2.global_features(0, 0) == doctest::Approx(0.4));

    const auto p3 = small_problem(ProblemKind::exp3);
    ModelConfig c3 = small_config(problems::Experiment::exp3);
    const auto g3 = build_graph(p3, c3, p3.initial, 0.0);
    REQUIRE(g3.node_features.cols() == 4);
    REQUIRE(g3.edge_features.cols() == 5);
    const auto flux = problems::nodal_neumann_flux(p3);
    for (std::size_t v = 0; v < p3.num_nodes(); ++v) CHECK(g3.node_features(static_cast<Index>(v), 3) == flux[v]);

    ModelConfig bad = small_config(problems::Experiment::exp2);
    CHECK_THROWS_AS(build_graph(small_problem(), bad, small_problem().initial, 0.0), Error);
    CHECK_THROWS_AS(build_graph(p2, c2, std::vector<double>(3, 0.0), 0.0), Error);
}

TEST_CASE("decoder output lengths") {
    CHECK(conv_decoder_outputs(conv_decoder_shape(20, 128), 128) == 20);
    CHECK(conv_decoder_outputs(conv_decoder_shape(10, 128), 128) == 10);
    CHECK(conv_decoder_outputs(conv_decoder_shape(50, 128), 128) == 50);
    const auto s = conv_decoder_shape(20, 128);
    CHECK(s.kernel1 == 15);
    CHECK(s.stride1 == 4);
    CHECK(s.kernel2 == 10);
    Rng rng = make_rng(1);
    auto latent = diff::constant(testing::random_matrix(rng, 7, 128));
    for (int tbs : {10, 20, 50})
        for (auto d : {DecoderKind::cnn, DecoderKind::mlp}) {
            ModelConfig c;
            c.blocks = 0;
            c.tbs = tbs;
            c.decoder = d;
            Model m(c, 1);
            auto o = m.decode(latent);
            CHECK(o->value.rows() == 7);
            CHECK(o->value.cols() == tbs);
        }
    ModelConfig bad;
    bad.tbs = 200;
    CHECK_THROWS_AS(Model(bad, 1), Error);
}

TEST_CASE("forward is permutation equivariant") {
    const auto p = small_problem();
    auto cfg = small_config();
    const Model model(cfg, 5);
    std::vector<int> perm(p.num_nodes());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(9);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto q = permute_problem(p, perm);
    diff::NoGrad ng;
    const auto a = model.forward(build_graph(p, cfg, p.initial, 0.0))->value;
    const auto b = model.forward(build_graph(q, cfg, q.initial, 0.0))->value;
    double err = 0;
    for (std::size_t v = 0; v < p.num_nodes(); ++v)
        err = std::max(err, max_abs(a.row(static_cast<Index>(v)) - b.row(perm[v])));
    CHECK(err <= 1e-12);
}

TEST_CASE("forward is translation invariant with relative encoding") {
    const auto p = small_problem();
    auto cfg = small_config();
    auto shifted = p;
    mesh::Mesh m = *p.mesh;
    for (auto& x : m.nodes) {
        x[0] += 0.375;
        x[1] -= 1.25;
    }
    shifted.mesh = std::make_shared<const mesh::Mesh>(m);
    diff::NoGrad ng;
    const Model model(cfg, 6);
    const auto a = model.forward(build_graph(p, cfg, p.initial, 0.0))->value;
    const auto b = model.forward(build_graph(shifted, cfg, p.initial, 0.0))->value;
    CHECK(max_abs(a - b) <= 1e-12);

    cfg.abs_pos = true;
    const Model abs_model(cfg, 6);
    const auto c = abs_model.forward(build_graph(p, cfg, p.initial, 0.0))->value;
    const auto d = abs_model.forward(build_graph(shifted, cfg, p.initial, 0.0))->value;
    CHECK(max_abs(c - d) > 1e-6);
}

TEST_CASE("zeroed decoder output gives the persistence rollout") {
    const auto p = small_problem();
    auto cfg = small_config();
    cfg.tbs = 20;
    cfg.decoder = DecoderKind::mlp;
    Model model(cfg, 7);
    model.parameter("decoder.mlp.W2")->value.setZero();
    model.parameter("decoder.mlp.b2")->value.setZero();
    int calls = 0;
    const auto traj = rollout(model, p, &calls);
    CHECK(calls == 5);
    double err = 0;
    for (std::size_t n = 0; n < traj.rows; ++n)
        for (std::size_t v = 0; v < traj.nodes; ++v) err = std::max(err, std::abs(traj.row(n)[v] - p.initial[v]));
    CHECK(err == 0.0);
}

TEST_CASE("rollout: call counts, Dirichlet exactness, determinism, truncation") {
    const auto p = small_problem(ProblemKind::exp1, 12);
    for (int tbs : {10, 20, 50}) {
        auto cfg = small_config();
        cfg.tbs = tbs;
        cfg.decoder = DecoderKind::mlp;
        Model model(cfg, 8);
        int calls = 0;
        const auto a = rollout(model, p, &calls);
        CHECK(calls == 100 / tbs);
        const auto b = rollout(model, p);
        CHECK(a.data == b.data);
        for (std::size_t n = 1; n < a.rows; ++n)
            for (std::size_t v = 0; v < a.nodes; ++v)
                if (p.mesh->node_tags[v] == mesh::NodeTag::dirichlet) CHECK(a.row(n)[v] == p.dirichlet_values[v]);
    }
    auto q = p;
    q.time.steps = 30;
    auto cfg = small_config();
    cfg.tbs = 20;
    cfg.decoder = DecoderKind::mlp;
    int calls = 0;
    const auto t = rollout(Model(cfg, 8), q, &calls);
    CHECK(calls == 2);
    CHECK(t.rows == 31);
}

TEST_CASE("uniform state with uniform Dirichlet data stays uniform under zero decoder") {
    auto p = small_problem();
    std::fill(p.initial.begin(), p.initial.end(), 0.7);
    for (std::size_t v = 0; v < p.num_nodes(); ++v)
        p.dirichlet_values[v] = p.mesh->node_tags[v] == mesh::NodeTag::dirichlet ? 0.7 : 0.0;
    auto cfg = small_config();
    Model model(cfg, 9);
    model.parameter("decoder.conv2.W")->value.setZero();
    model.parameter("decoder.conv2.b")->value.setZero();
    const auto t = rollout(model, p);
    for (double v : t.data) CHECK(v == 0.7);
}

TEST_CASE("zero-weight blocks without layer norm reduce to their biases") {
    const auto p = small_problem();
    auto cfg = small_config();
    cfg.layer_norm = false;
    cfg.residual = false;
    cfg.blocks = 1;
    Model model(cfg, 10);
    for (const auto& [name, v] : model.named_parameters())
        if (name.rfind("block", 0) == 0 && name.find(".W") != std::string::npos) v->value.setZero();
    diff::NoGrad ng;
    const auto x = model.process(build_graph(p, cfg, p.initial, 0.0))->value;
    const Matrix b2 = model.parameter("block0.node.b2")->value;
    double err = 0;
    for (Index v = 0; v < x.rows(); ++v) err = std::max(err, max_abs(x.row(v) - b2));
    CHECK(err == 0.0);
}

TEST_CASE("two disconnected identical components match a single component") {
    const auto p = small_problem();
    auto cfg = small_config();
    const Model model(cfg, 11);
    mesh::Mesh two = *p.mesh;
    const int N = static_cast<int>(p.num_nodes());
    for (std::size_t v = 0; v < p.num_nodes(); ++v) {
        auto x = p.mesh->nodes[v];
        x[0] += 10.0;
        two.nodes.push_back(x);
        two.node_tags.push_back(p.mesh->node_tags[v]);
    }
    for (auto e : p.mesh->elements) {
        for (int k = 0; k < 3; ++k) e[static_cast<std::size_t>(k)] += N;
        two.elements.push_back(e);
    }
    for (auto f : p.mesh->boundary_facets) {
        for (int k = 0; k < 2; ++k) f.nodes[static_cast<std::size_t>(k)] += N;
        two.boundary_facets.push_back(f);
    }
    auto q = p;
    q.mesh = std::make_shared<const mesh::Mesh>(two);
    auto dup = [](std::vector<double> f) {
        const auto n = f.size();
        for (std::size_t i = 0; i < n; ++i) f.push_back(f[i]);
        return f;
    };
    q.initial = dup(p.initial);
    q.dirichlet_values = dup(p.dirichlet_values);
    diff::NoGrad ng;
    const auto one = model.forward(build_graph(p, cfg, p.initial, 0.0))->value;
    const auto both = model.forward(build_graph(q, cfg, q.initial, 0.0))->value;
    CHECK(max_abs(both.topRows(N) - one) <= 1e-12);
    CHECK(max_abs(both.bottomRows(N) - one) <= 1e-12);
}

TEST_CASE("batched forward equals separate forwards") {
    const auto p1 = small_problem(ProblemKind::exp2, 21);
    const auto p2 = small_problem(ProblemKind::exp2, 22);
    auto cfg = small_config(problems::Experiment::exp2);
    const Model model(cfg, 12);
    diff::NoGrad ng;
    const auto g1 = build_graph(p1, cfg, p1.initial, 0.2);
    const auto g2 = build_graph(p2, cfg, p2.initial, 0.2);
    const auto b = batch_graphs({g1, g2});
    CHECK(b.num_graphs == 2);
    CHECK(b.offsets == std::vector<int>{0, g1.num_nodes, g1.num_nodes + g2.num_nodes});
    const auto ob = model.forward(b)->value;
    const auto o1 = model.forward(g1)->value;
    const auto o2 = model.forward(g2)->value;
    CHECK(max_abs(ob.topRows(g1.num_nodes) - o1) <= 1e-12);
    CHECK(max_abs(ob.bottomRows(g2.num_nodes) - o2) <= 1e-12);
}

TEST_CASE("ablation variants run and no-global removes the global stream") {
    const auto p = small_problem();
    for (int variant = 0; variant < 5; ++variant) {
        auto cfg = small_config();
        cfg.latent = 128;
        cfg.blocks = 1;
        cfg.tbs = 20;
        if (variant == 0) cfg.abs_pos = true;
        if (variant == 1) cfg.use_global = false;
        if (variant == 2) cfg.decoder = DecoderKind::mlp;
        if (variant == 3) cfg.tbs = 10;
        if (variant == 4) cfg.tbs = 50;
        Model model(cfg, 13);
        const auto t = rollout(model, p);
        for (double v : t.data) CHECK(std::isfinite(v));
        if (variant == 1)
            for (const auto& [name, v] : model.named_parameters()) CHECK(name.find("global") == std::string::npos);
    }
}

TEST_CASE("model gradients pass the finite-difference check") {
    const auto p = small_problem(ProblemKind::exp2, 23);
    auto cfg = small_config(problems::Experiment::exp2);
    cfg.latent = 8;
    const Model model(cfg, 14);
    const auto g = build_graph(p, cfg, p.initial, 0.1);
    Rng rng = make_rng(15);
    const Matrix w = testing::random_matrix(rng, g.num_nodes, cfg.tbs);
    auto loss = [&] { return diff::mean(diff::mul(diff::square(model.forward(g)), diff::constant(w))); };
    const auto r = testing::check_gradients(model.parameters(), loss, 60, rng);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact") {
    auto cfg = small_config(problems::Experiment::exp3);
    cfg.use_global = false;
    cfg.decoder = DecoderKind::mlp;
    const Model model(cfg, 16);
    const auto dir = std::filesystem::temp_directory_path() / "nfem_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "m.ckpt";
    save_checkpoint(model, path, R"({"epoch": 3})");
    std::string extra;
    const Model back = load_checkpoint(path, &extra);
    CHECK(extra == R"({"epoch":3})");
    CHECK(config_to_json(back.config()) == config_to_json(model.config()));
    REQUIRE(back.named_parameters().size() == model.named_parameters().size());
    for (std::size_t i = 0; i < model.named_parameters().size(); ++i)
        CHECK(back.named_parameters()[i].second->value == model.named_parameters()[i].second->value);
    CHECK(back.parameter_count() == model.parameter_count());

    std::ofstream(dir / "bad.ckpt") << "NFCKPT0 nope";
    try {
        load_checkpoint(dir / "bad.ckpt");
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::format);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("clone shares no parameter storage") {
    const Model a(small_config(), 17);
    Model b = a.clone();
    b.parameters()[0]->value.setZero();
    CHECK(max_abs(a.parameters()[0]->value) > 0.0);
}
