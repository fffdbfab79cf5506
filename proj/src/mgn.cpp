#include "nfem/mgn.hpp"

#include "nfem/error.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace nfem::mgn {

using json = nlohmann::json;
using problems::Experiment;

std::string_view to_string(DecoderKind d) noexcept { return d == DecoderKind::cnn ? "cnn" : "mlp"; }

DecoderKind decoder_from_string(std::string_view s) {
    if (s == "cnn") return DecoderKind::cnn;
    if (s == "mlp") return DecoderKind::mlp;
    fail(ErrorCategory::usage, "unknown decoder '" + std::string(s) + "' (cnn, mlp)");
}

std::string_view to_string(OutputMode m) noexcept { return m == OutputMode::offset ? "offset" : "absolute"; }

OutputMode output_mode_from_string(std::string_view s) {
    if (s == "offset") return OutputMode::offset;
    if (s == "absolute") return OutputMode::absolute;
    fail(ErrorCategory::usage, "unknown output mode '" + std::string(s) + "' (offset, absolute)");
}

ConvDecoderShape conv_decoder_shape(int tbs, int latent) {
    if (latent == 128) {
        if (tbs == 20) return {8, 15, 4, 10};
        if (tbs == 10) return {8, 18, 5, 14};
        if (tbs == 50) return {8, 12, 2, 10};
    }
    // Small test models: stride 1, split the shrinkage between both kernels.
    if (tbs < 1 || latent < tbs)
        fail(ErrorCategory::config, "conv decoder cannot emit " + std::to_string(tbs) + " values from latent " +
                                        std::to_string(latent));
    ConvDecoderShape s;
    s.stride1 = 1;
    s.kernel1 = (latent - tbs) / 2 + 1;
    s.kernel2 = (latent - s.kernel1 + 1) - tbs + 1;
    return s;
}

int conv_decoder_outputs(const ConvDecoderShape& s, int latent) {
    const auto l1 = diff::conv1d_output_length(latent, s.kernel1, s.stride1);
    return static_cast<int>(diff::conv1d_output_length(l1, s.kernel2, 1));
}

int ModelConfig::dim() const { return experiment == Experiment::exp3 ? 3 : 2; }

int ModelConfig::node_features() const {
    int n = 3;
    if (experiment == Experiment::exp2) n += 3;
    if (experiment == Experiment::exp3) n += 1;
    if (abs_pos) n += dim();
    return n;
}

int ModelConfig::edge_features() const { return dim() + 2; }

int ModelConfig::global_features() const { return use_global ? 1 : 0; }

double ModelConfig::t_scale() const {
    if (temperature_scale > 0) return temperature_scale;
    return experiment == Experiment::exp2 ? 100.0 : 1.0;
}

double ModelConfig::out_scale() const {
    if (output_scale > 0) return output_scale;
    return experiment == Experiment::exp2 ? 100.0 : 1.0;
}

void ModelConfig::validate() const {
    if (latent < 1 || blocks < 0 || tbs < 1)
        fail(ErrorCategory::config, "model needs latent >= 1, blocks >= 0, tbs >= 1");
    if (decoder == DecoderKind::cnn) {
        const auto s = conv_decoder_shape(tbs, latent);
        if (conv_decoder_outputs(s, latent) != tbs)
            fail(ErrorCategory::config, "conv decoder emits " + std::to_string(conv_decoder_outputs(s, latent)) +
                                            " values, bundle size is " + std::to_string(tbs));
    }
}

std::string config_to_json(const ModelConfig& c) {
    json j;
    j["experiment"] = std::string(problems::to_string(c.experiment));
    j["latent"] = c.latent;
    j["blocks"] = c.blocks;
    j["tbs"] = c.tbs;
    j["decoder"] = std::string(to_string(c.decoder));
    j["output"] = std::string(to_string(c.output));
    j["abs_pos"] = c.abs_pos;
    j["use_global"] = c.use_global;
    j["residual"] = c.residual;
    j["layer_norm"] = c.layer_norm;
    j["temperature_scale"] = c.temperature_scale;
    j["output_scale"] = c.output_scale;
    return j.dump();
}

ModelConfig config_from_json(std::string_view text) {
    ModelConfig c;
    try {
        const json j = json::parse(text);
        c.experiment = problems::experiment_from_string(j.at("experiment").get<std::string>());
        c.latent = j.at("latent").get<int>();
        c.blocks = j.at("blocks").get<int>();
        c.tbs = j.at("tbs").get<int>();
        c.decoder = decoder_from_string(j.at("decoder").get<std::string>());
        c.output = output_mode_from_string(j.at("output").get<std::string>());
        c.abs_pos = j.at("abs_pos").get<bool>();
        c.use_global = j.at("use_global").get<bool>();
        c.residual = j.at("residual").get<bool>();
        c.layer_norm = j.at("layer_norm").get<bool>();
        c.temperature_scale = j.at("temperature_scale").get<double>();
        c.output_scale = j.at("output_scale").get<double>();
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

FeatureSchema feature_schema(const ModelConfig& c) {
    FeatureSchema s;
    s.node = {"is_dirichlet", "is_neumann", "is_interior"};
    if (c.experiment == Experiment::exp2) {
        s.node.push_back("t_over_t0");
        s.node.push_back("T_over_scale");
        s.node.push_back("V_f");
    }
    if (c.experiment == Experiment::exp3) s.node.push_back("alpha_h_N");
    const char* axes[] = {"x", "y", "z"};
    if (c.abs_pos)
        for (int d = 0; d < c.dim(); ++d) s.node.push_back(axes[d]);
    for (int d = 0; d < c.dim(); ++d) s.edge.push_back(std::string("rel_") + axes[d]);
    s.edge.push_back("distance");
    s.edge.push_back("dT_over_scale");
    if (c.use_global) s.global.push_back(c.experiment == Experiment::exp2 ? "t_over_t0" : "one");
    return s;
}

std::string schema_to_json(const ModelConfig& c) {
    const auto s = feature_schema(c);
    json j;
    j["experiment"] = std::string(problems::to_string(c.experiment));
    j["node"] = s.node;
    j["edge"] = s.edge;
    j["global"] = s.global;
    j["temperature_scale"] = c.t_scale();
    j["edges"] = "both directions of every mesh edge, then one self-loop per node; rel = x_receiver - x_sender";
    return j.dump(1);
}

GraphTemplate make_template(const problems::ProblemSpec& p) {
    if (!p.mesh) fail(ErrorCategory::config, "problem has no mesh");
    const auto& m = *p.mesh;
    GraphTemplate t;
    t.num_nodes = static_cast<int>(m.num_nodes());
    t.dim = m.dim;
    t.experiment = p.experiment;
    t.t0 = p.constants.t0;
    const auto edges = mesh::unique_edges(m);
    const std::size_t E = 2 * edges.size() + m.num_nodes();
    t.senders.reserve(E);
    t.receivers.reserve(E);
    for (const auto& [a, b] : edges) {
        t.senders.push_back(a);
        t.receivers.push_back(b);
        t.senders.push_back(b);
        t.receivers.push_back(a);
    }
    for (int v = 0; v < t.num_nodes; ++v) {
        t.senders.push_back(v);
        t.receivers.push_back(v);
    }
    t.rel.resize(static_cast<Index>(E), m.dim);
    t.dist.resize(static_cast<Index>(E), 1);
    for (std::size_t e = 0; e < E; ++e) {
        const auto& xs = m.nodes[static_cast<std::size_t>(t.senders[e])];
        const auto& xr = m.nodes[static_cast<std::size_t>(t.receivers[e])];
        double s2 = 0;
        for (int d = 0; d < m.dim; ++d) {
            const double r = xr[static_cast<std::size_t>(d)] - xs[static_cast<std::size_t>(d)];
            t.rel(static_cast<Index>(e), d) = r;
            s2 += r * r;
        }
        t.dist(static_cast<Index>(e), 0) = std::sqrt(s2);
    }
    t.node_type = Matrix::Zero(t.num_nodes, 3);
    t.positions.resize(t.num_nodes, m.dim);
    t.dirichlet.assign(m.num_nodes(), 0);
    for (int v = 0; v < t.num_nodes; ++v) {
        const auto tag = m.node_tags[static_cast<std::size_t>(v)];
        const int slot = tag == mesh::NodeTag::dirichlet ? 0 : tag == mesh::NodeTag::neumann ? 1 : 2;
        t.node_type(v, slot) = 1.0;
        t.dirichlet[static_cast<std::size_t>(v)] = tag == mesh::NodeTag::dirichlet;
        for (int d = 0; d < m.dim; ++d) t.positions(v, d) = m.nodes[static_cast<std::size_t>(v)][static_cast<std::size_t>(d)];
    }
    t.fibre_fraction = p.fibre_fraction;
    t.neumann_value = problems::nodal_neumann_flux(p);
    t.dirichlet_values = p.dirichlet_values;
    if (t.dirichlet_values.size() != m.num_nodes()) t.dirichlet_values.assign(m.num_nodes(), 0.0);
    return t;
}

Graph build_graph(const GraphTemplate& tpl, const ModelConfig& cfg, std::span<const double> state, double t_n,
                  double noise_sigma, Rng* rng) {
    const int N = tpl.num_nodes;
    if (static_cast<int>(state.size()) != N)
        fail(ErrorCategory::shape, "state has " + std::to_string(state.size()) + " values for " + std::to_string(N) +
                                       " nodes");
    if (cfg.experiment != tpl.experiment)
        fail(ErrorCategory::config, "model is configured for " + std::string(problems::to_string(cfg.experiment)) +
                                        ", problem is " + std::string(problems::to_string(tpl.experiment)));
    if (cfg.dim() != tpl.dim)
        fail(ErrorCategory::config, "model expects " + std::to_string(cfg.dim()) + "D meshes, got " +
                                        std::to_string(tpl.dim) + "D");
    if (cfg.experiment == Experiment::exp2 && tpl.fibre_fraction.size() != static_cast<std::size_t>(N))
        fail(ErrorCategory::config, "exp2 graph needs a fibre fraction field");
    if (noise_sigma > 0 && !rng) fail(ErrorCategory::usage, "noise requested without a generator");

    const double ts = cfg.t_scale();
    std::vector<double> noisy(state.begin(), state.end());
    if (noise_sigma > 0)
        for (auto& v : noisy) v += noise_sigma * standard_normal(*rng);

    Graph g;
    g.num_nodes = N;
    g.num_graphs = 1;
    g.senders = tpl.senders;
    g.receivers = tpl.receivers;
    g.node_graph.assign(static_cast<std::size_t>(N), 0);
    g.edge_graph.assign(tpl.senders.size(), 0);
    g.offsets = {0, N};

    const int F = cfg.node_features();
    g.node_features.resize(N, F);
    g.node_features.leftCols(3) = tpl.node_type;
    int col = 3;
    if (cfg.experiment == Experiment::exp2) {
        for (int v = 0; v < N; ++v) {
            g.node_features(v, col) = t_n / tpl.t0;
            g.node_features(v, col + 1) = noisy[static_cast<std::size_t>(v)] / ts;
            g.node_features(v, col + 2) = tpl.fibre_fraction[static_cast<std::size_t>(v)];
        }
        col += 3;
    }
    if (cfg.experiment == Experiment::exp3) {
        for (int v = 0; v < N; ++v) g.node_features(v, col) = tpl.neumann_value[static_cast<std::size_t>(v)];
        col += 1;
    }
    if (cfg.abs_pos) {
        g.node_features.middleCols(col, tpl.dim) = tpl.positions;
        col += tpl.dim;
    }

    const Index E = static_cast<Index>(tpl.senders.size());
    g.edge_features.resize(E, cfg.edge_features());
    g.edge_features.leftCols(tpl.dim) = tpl.rel;
    g.edge_features.col(tpl.dim) = tpl.dist.col(0);
    for (Index e = 0; e < E; ++e) {
        const auto s = static_cast<std::size_t>(tpl.senders[static_cast<std::size_t>(e)]);
        const auto r = static_cast<std::size_t>(tpl.receivers[static_cast<std::size_t>(e)]);
        g.edge_features(e, tpl.dim + 1) = (noisy[r] - noisy[s]) / ts;
    }

    g.global_features.resize(1, cfg.global_features());
    if (cfg.use_global) g.global_features(0, 0) = cfg.experiment == Experiment::exp2 ? t_n / tpl.t0 : 1.0;

    g.state.resize(N, 1);
    g.dirichlet_mask.resize(N, 1);
    g.dirichlet_values.resize(N, 1);
    for (int v = 0; v < N; ++v) {
        const bool d = tpl.dirichlet[static_cast<std::size_t>(v)];
        g.state(v, 0) = state[static_cast<std::size_t>(v)];
        g.dirichlet_mask(v, 0) = d ? 1.0 : 0.0;
        g.dirichlet_values(v, 0) = d ? tpl.dirichlet_values[static_cast<std::size_t>(v)] : 0.0;
    }
    return g;
}

Graph build_graph(const problems::ProblemSpec& p, const ModelConfig& cfg, std::span<const double> state, double t_n,
                  double noise_sigma, Rng* rng) {
    return build_graph(make_template(p), cfg, state, t_n, noise_sigma, rng);
}

Graph batch_graphs(const std::vector<Graph>& graphs) {
    if (graphs.empty()) fail(ErrorCategory::usage, "empty batch");
    if (graphs.size() == 1) return graphs[0];
    Graph b;
    b.num_graphs = 0;
    Index N = 0, E = 0;
    for (const auto& g : graphs) {
        N += g.num_nodes;
        E += g.num_edges();
    }
    const Index F = graphs[0].node_features.cols(), FE = graphs[0].edge_features.cols(),
                FG = graphs[0].global_features.cols();
    b.node_features.resize(N, F);
    b.edge_features.resize(E, FE);
    b.state.resize(N, 1);
    b.dirichlet_mask.resize(N, 1);
    b.dirichlet_values.resize(N, 1);
    Index gcount = 0;
    for (const auto& g : graphs) gcount += g.num_graphs;
    b.global_features.resize(gcount, FG);
    Index n0 = 0, e0 = 0;
    int g0 = 0;
    b.offsets.clear();
    for (const auto& g : graphs) {
        if (g.node_features.cols() != F || g.edge_features.cols() != FE || g.global_features.cols() != FG)
            fail(ErrorCategory::shape, "batched graphs have different feature widths");
        b.node_features.middleRows(n0, g.num_nodes) = g.node_features;
        b.edge_features.middleRows(e0, g.num_edges()) = g.edge_features;
        b.global_features.middleRows(g0, g.num_graphs) = g.global_features;
        b.state.middleRows(n0, g.num_nodes) = g.state;
        b.dirichlet_mask.middleRows(n0, g.num_nodes) = g.dirichlet_mask;
        b.dirichlet_values.middleRows(n0, g.num_nodes) = g.dirichlet_values;
        for (int e = 0; e < g.num_edges(); ++e) {
            b.senders.push_back(g.senders[static_cast<std::size_t>(e)] + static_cast<int>(n0));
            b.receivers.push_back(g.receivers[static_cast<std::size_t>(e)] + static_cast<int>(n0));
            b.edge_graph.push_back(g.edge_graph[static_cast<std::size_t>(e)] + g0);
        }
        for (int v = 0; v < g.num_nodes; ++v) b.node_graph.push_back(g.node_graph[static_cast<std::size_t>(v)] + g0);
        for (std::size_t k = 0; k + 1 < g.offsets.size(); ++k) b.offsets.push_back(g.offsets[k] + static_cast<int>(n0));
        n0 += g.num_nodes;
        e0 += g.num_edges();
        g0 += g.num_graphs;
    }
    b.offsets.push_back(static_cast<int>(N));
    b.num_nodes = static_cast<int>(N);
    b.num_graphs = g0;
    return b;
}

namespace {

Matrix uniform_init(Rng& rng, Index rows, Index cols, double bound) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -bound, bound);
    return m;
}

} // namespace

Var Model::add_param(const std::string& name, Matrix value) {
    auto v = diff::parameter(std::move(value));
    params_.emplace_back(name, v);
    return v;
}

Mlp Model::make_mlp(const std::string& prefix, int in, int hidden, int out, bool norm, Rng& rng) {
    Mlp m;
    const double b1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    m.W1 = add_param(prefix + ".W1", uniform_init(rng, in, hidden, b1));
    m.b1 = add_param(prefix + ".b1", uniform_init(rng, 1, hidden, b1));
    m.W2 = add_param(prefix + ".W2", uniform_init(rng, hidden, out, b2));
    m.b2 = add_param(prefix + ".b2", uniform_init(rng, 1, out, b2));
    if (norm) {
        m.gamma = add_param(prefix + ".gamma", Matrix::Ones(1, out));
        m.beta = add_param(prefix + ".beta", Matrix::Zero(1, out));
    }
    return m;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng = make_rng(seed, 0, 7);
    const int L = config_.latent;
    auto enc = [&](const std::string& name, int in, Var& W, Var& b) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(in, 1)));
        W = add_param(name + ".W", uniform_init(rng, in, L, bound));
        b = add_param(name + ".b", uniform_init(rng, 1, L, bound));
    };
    enc("encoder.node", config_.node_features(), enc_node_W_, enc_node_b_);
    enc("encoder.edge", config_.edge_features(), enc_edge_W_, enc_edge_b_);
    if (config_.use_global) enc("encoder.global", config_.global_features(), enc_glob_W_, enc_glob_b_);
    const int gw = config_.use_global ? 1 : 0;
    for (int l = 0; l < config_.blocks; ++l) {
        Block b;
        const std::string p = "block" + std::to_string(l);
        b.edge = make_mlp(p + ".edge", (3 + gw) * L, L, L, config_.layer_norm, rng);
        b.node = make_mlp(p + ".node", (2 + gw) * L, L, L, config_.layer_norm, rng);
        if (config_.use_global) b.global = make_mlp(p + ".global", 3 * L, L, L, config_.layer_norm, rng);
        blocks_.push_back(std::move(b));
    }
    if (config_.decoder == DecoderKind::cnn) {
        const auto s = conv_decoder_shape(config_.tbs, L);
        const double b1 = 1.0 / std::sqrt(static_cast<double>(s.kernel1));
        const double b2 = 1.0 / std::sqrt(static_cast<double>(s.channels * s.kernel2));
        dec_W1_ = add_param("decoder.conv1.W", uniform_init(rng, s.channels, s.kernel1, b1));
        dec_b1_ = add_param("decoder.conv1.b", uniform_init(rng, 1, s.channels, b1));
        dec_W2_ = add_param("decoder.conv2.W", uniform_init(rng, 1, s.channels * s.kernel2, b2));
        dec_b2_ = add_param("decoder.conv2.b", uniform_init(rng, 1, 1, b2));
    } else {
        const double b = 1.0 / std::sqrt(static_cast<double>(L));
        dec_W1_ = add_param("decoder.mlp.W1", uniform_init(rng, L, L, b));
        dec_b1_ = add_param("decoder.mlp.b1", uniform_init(rng, 1, L, b));
        dec_W2_ = add_param("decoder.mlp.W2", uniform_init(rng, L, config_.tbs, b));
        dec_b2_ = add_param("decoder.mlp.b2", uniform_init(rng, 1, config_.tbs, b));
    }
}

std::vector<Var> Model::parameters() const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& [n, v] : params_) out.push_back(v);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_) n += static_cast<std::size_t>(v->value.size());
    return n;
}

Var Model::parameter(const std::string& name) const {
    for (const auto& [n, v] : params_)
        if (n == name) return v;
    fail(ErrorCategory::usage, "no parameter named '" + name + "'");
}

Model Model::clone() const {
    Model m = *this;
    m.copy_weights_from(*this);
    return m;
}

void Model::copy_weights_from(const Model& other) {
    if (other.params_.size() != params_.size()) fail(ErrorCategory::shape, "models have different parameter sets");
    // Rebind every member handle to fresh nodes so the copy shares nothing.
    std::map<const diff::Node*, Var> fresh;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& src = other.params_[i].second;
        if (params_[i].first != other.params_[i].first || params_[i].second->value.rows() != src->value.rows() ||
            params_[i].second->value.cols() != src->value.cols())
            fail(ErrorCategory::shape, "parameter mismatch at " + params_[i].first);
        auto v = diff::parameter(src->value);
        fresh[params_[i].second.get()] = v;
        params_[i].second = v;
    }
    auto rebind = [&](Var& v) {
        if (!v) return;
        auto it = fresh.find(v.get());
        if (it != fresh.end()) v = it->second;
    };
    rebind(enc_node_W_);
    rebind(enc_node_b_);
    rebind(enc_edge_W_);
    rebind(enc_edge_b_);
    rebind(enc_glob_W_);
    rebind(enc_glob_b_);
    for (auto& b : blocks_)
        for (Mlp* m : {&b.edge, &b.node, &b.global}) {
            rebind(m->W1);
            rebind(m->b1);
            rebind(m->W2);
            rebind(m->b2);
            rebind(m->gamma);
            rebind(m->beta);
        }
    rebind(dec_W1_);
    rebind(dec_b1_);
    rebind(dec_W2_);
    rebind(dec_b2_);
}

namespace {

Var finish_mlp(const Mlp& m, const Var& pre, bool norm) {
    auto h = diff::linear(diff::relu(pre), m.W2, m.b2);
    return norm ? diff::layer_norm(h, m.gamma, m.beta) : h;
}

} // namespace

Var Model::process(const Graph& g) const {
    using namespace diff;
    const int L = config_.latent;
    const Index N = g.num_nodes, E = g.num_edges(), B = g.num_graphs;
    if (g.node_features.cols() != config_.node_features() || g.edge_features.cols() != config_.edge_features() ||
        g.global_features.cols() != config_.global_features())
        fail(ErrorCategory::shape, "graph features (" + std::to_string(g.node_features.cols()) + ", " +
                                       std::to_string(g.edge_features.cols()) + ", " +
                                       std::to_string(g.global_features.cols()) + ") do not match the model (" +
                                       std::to_string(config_.node_features()) + ", " +
                                       std::to_string(config_.edge_features()) + ", " +
                                       std::to_string(config_.global_features()) + ")");
    Var X = linear(constant(g.node_features), enc_node_W_, enc_node_b_);
    Var Ee = linear(constant(g.edge_features), enc_edge_W_, enc_edge_b_);
    Var G;
    if (config_.use_global) G = linear(constant(g.global_features), enc_glob_W_, enc_glob_b_);
    const bool glob = config_.use_global;
    const bool norm = config_.layer_norm;

    for (const auto& blk : blocks_) {
        // Edge update. The first layer acts on [x_v, x_u, e, g]; its row blocks
        // are applied per node / per graph and gathered onto edges.
        const auto& em = blk.edge;
        Var Pv = matmul(X, slice_rows(em.W1, 0, L));
        Var Pu = matmul(X, slice_rows(em.W1, L, L));
        std::vector<IndexedTerm> terms{{Pv, &g.receivers}, {Pu, &g.senders}};
        if (glob) {
            terms.push_back({matmul(Ee, slice_rows(em.W1, 2 * L, L)), nullptr});
            terms.push_back({linear(G, slice_rows(em.W1, 3 * L, L), em.b1), &g.edge_graph});
        } else {
            terms.push_back({linear(Ee, slice_rows(em.W1, 2 * L, L), em.b1), nullptr});
        }
        Var de = finish_mlp(em, indexed_sum(terms, E), norm);
        Var E2 = config_.residual ? add(Ee, de) : de;

        // Node update on [x_v, sum of incoming edges, g].
        const auto& nm = blk.node;
        Var agg = scatter_add_rows(E2, g.receivers, N);
        std::vector<IndexedTerm> nterms{{linear(X, slice_rows(nm.W1, 0, L), nm.b1), nullptr},
                                        {matmul(agg, slice_rows(nm.W1, L, L)), nullptr}};
        if (glob) nterms.push_back({matmul(G, slice_rows(nm.W1, 2 * L, L)), &g.node_graph});
        Var dx = finish_mlp(nm, indexed_sum(nterms, N), norm);
        Var X2 = config_.residual ? add(X, dx) : dx;

        if (glob) {
            const auto& gm = blk.global;
            Var in = concat_cols({segment_mean(X2, g.node_graph, B), segment_mean(E2, g.edge_graph, B), G});
            Var dg = finish_mlp(gm, linear(in, gm.W1, gm.b1), norm);
            G = config_.residual ? add(G, dg) : dg;
        }
        X = X2;
        Ee = E2;
    }
    return X;
}

Var Model::decode(const Var& node_latent) const {
    using namespace diff;
    if (config_.decoder == DecoderKind::mlp)
        return linear(relu(linear(node_latent, dec_W1_, dec_b1_)), dec_W2_, dec_b2_);
    const auto s = conv_decoder_shape(config_.tbs, config_.latent);
    Shape in;
    in.dims = {node_latent->value.rows(), 1, config_.latent};
    in.rank = 3;
    Var h = relu(conv1d(reshape(node_latent, in), dec_W1_, dec_b1_, s.kernel1, s.stride1));
    Var o = conv1d(h, dec_W2_, dec_b2_, s.kernel2, 1);
    if (o->value.cols() != config_.tbs)
        fail(ErrorCategory::config, "decoder emitted " + std::to_string(o->value.cols()) + " values, bundle size is " +
                                        std::to_string(config_.tbs));
    Shape out;
    out.dims = {o->value.rows(), config_.tbs, 1};
    return reshape(o, out);
}

Var Model::forward(const Graph& g) const {
    using namespace diff;
    Var raw = decode(process(g));
    Var pred = scale(raw, config_.out_scale());
    if (config_.output == OutputMode::offset) pred = add(pred, constant(g.state));
    Matrix free = (1.0 - g.dirichlet_mask.array()).matrix();
    return add(mul(pred, constant(std::move(free))), constant(g.dirichlet_values));
}

fem::Trajectory rollout(const Model& model, const problems::ProblemSpec& p, const GraphTemplate& tpl, int* model_calls) {
    diff::NoGrad ng;
    const int steps = p.time.steps;
    const int tbs = model.config().tbs;
    const std::size_t N = p.num_nodes();
    fem::Trajectory traj;
    traj.rows = static_cast<std::size_t>(steps) + 1;
    traj.nodes = N;
    traj.data.assign(traj.rows * N, 0.0);
    std::copy(p.initial.begin(), p.initial.end(), traj.row(0).begin());
    std::vector<double> state(p.initial.begin(), p.initial.end());
    int calls = 0;
    for (int n = 0; n < steps; n += tbs) {
        const Graph g = build_graph(tpl, model.config(), state, n * p.time.dt);
        const Var out = model.forward(g);
        ++calls;
        const int k_max = std::min(tbs, steps - n);
        for (int k = 0; k < k_max; ++k) {
            auto row = traj.row(static_cast<std::size_t>(n + k + 1));
            for (std::size_t v = 0; v < N; ++v) row[v] = out->value(static_cast<Index>(v), k);
        }
        const auto last = traj.row(static_cast<std::size_t>(n + k_max));
        state.assign(last.begin(), last.end());
    }
    if (model_calls) *model_calls = calls;
    return traj;
}

fem::Trajectory rollout(const Model& model, const problems::ProblemSpec& p, int* model_calls) {
    return rollout(model, p, make_template(p), model_calls);
}

namespace {

constexpr char kMagic[8] = {'N', 'F', 'C', 'K', 'P', 'T', '1', '\0'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) fail(ErrorCategory::format, "truncated checkpoint " + path.string());
    return v;
}

} // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path, const std::string& extra_json) {
    json meta;
    meta["model"] = json::parse(config_to_json(model.config()));
    try {
        meta["extra"] = json::parse(extra_json);
    } catch (const json::exception& e) {
        fail(ErrorCategory::usage, std::string("checkpoint metadata: ") + e.what());
    }
    const std::string text = meta.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCategory::io, "cannot write " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(model.named_parameters().size()));
    for (const auto& [name, v] : model.named_parameters()) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint64_t>(os, static_cast<std::uint64_t>(v->value.rows()));
        put<std::uint64_t>(os, static_cast<std::uint64_t>(v->value.cols()));
        os.write(reinterpret_cast<const char*>(v->value.data()), static_cast<std::streamsize>(v->value.size() * 8));
    }
    if (!os) fail(ErrorCategory::io, "write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, std::string* extra_json) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCategory::io, "cannot read " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        fail(ErrorCategory::format, path.string() + " is not an NFCKPT1 checkpoint");
    const auto len = get<std::uint64_t>(is, path);
    if (len > (1u << 24)) fail(ErrorCategory::format, "implausible config block in " + path.string());
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) fail(ErrorCategory::format, "truncated checkpoint " + path.string());
    json meta;
    try {
        meta = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, std::string("checkpoint config: ") + e.what());
    }
    if (!meta.contains("model")) fail(ErrorCategory::format, "checkpoint config lacks a model block");
    Model model(config_from_json(meta["model"].dump()), 0);
    if (extra_json) *extra_json = meta.contains("extra") ? meta["extra"].dump() : "{}";
    const auto count = get<std::uint32_t>(is, path);
    if (count != model.named_parameters().size())
        fail(ErrorCategory::format, "checkpoint has " + std::to_string(count) + " arrays, model needs " +
                                        std::to_string(model.named_parameters().size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto nlen = get<std::uint32_t>(is, path);
        if (nlen > 4096) fail(ErrorCategory::format, "implausible array name in " + path.string());
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const auto rows = get<std::uint64_t>(is, path);
        const auto cols = get<std::uint64_t>(is, path);
        Var p = model.parameter(name);
        if (static_cast<Index>(rows) != p->value.rows() || static_cast<Index>(cols) != p->value.cols())
            fail(ErrorCategory::format, "array " + name + " has shape (" + std::to_string(rows) + ", " +
                                            std::to_string(cols) + "), model expects " + p->shape.str());
        is.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(rows * cols * 8));
        if (!is) fail(ErrorCategory::format, "truncated checkpoint " + path.string());
    }
    return model;
}

} // namespace nfem::mgn
