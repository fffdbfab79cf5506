#pragma once

#include "nfem/diff.hpp"
#include "nfem/fem.hpp"
#include "nfem/mesh.hpp"
#include "nfem/problems.hpp"
#include "nfem/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nfem::mgn {

using diff::Index;
using diff::Matrix;
using diff::Var;

enum class DecoderKind { cnn, mlp };
enum class OutputMode { offset, absolute };

std::string_view to_string(DecoderKind d) noexcept;
DecoderKind decoder_from_string(std::string_view s);
std::string_view to_string(OutputMode m) noexcept;
OutputMode output_mode_from_string(std::string_view s);

// Two-stage conv decoder over the latent axis.
struct ConvDecoderShape {
    int channels = 8;
    int kernel1 = 15;
    int stride1 = 4;
    int kernel2 = 10;
};

// Kernel/stride pairs for bundle sizes 10, 20, 50 at latent 128.
ConvDecoderShape conv_decoder_shape(int tbs, int latent);
int conv_decoder_outputs(const ConvDecoderShape& s, int latent);

struct ModelConfig {
    problems::Experiment experiment = problems::Experiment::exp1;
    int latent = 128;
    int blocks = 12;
    int tbs = 20;
    DecoderKind decoder = DecoderKind::cnn;
    OutputMode output = OutputMode::offset;
    bool abs_pos = false;
    bool use_global = true;
    bool residual = true;      // x + f(x) around every update function
    bool layer_norm = true;    // terminal layer norm of the block MLPs
    double temperature_scale = 0;  // 0: per experiment (1, 100, 1)
    double output_scale = 0;       // 0: per experiment (1, 100, 1)

    int dim() const;
    int node_features() const;
    int edge_features() const;
    int global_features() const;
    double t_scale() const;
    double out_scale() const;
    void validate() const;
};

std::string config_to_json(const ModelConfig& c);
ModelConfig config_from_json(std::string_view text);

// Column names of the node / edge / global feature matrices.
struct FeatureSchema {
    std::vector<std::string> node;
    std::vector<std::string> edge;
    std::vector<std::string> global;
};
FeatureSchema feature_schema(const ModelConfig& c);
std::string schema_to_json(const ModelConfig& c);

// Static part of a problem graph: connectivity, geometry, node types.
struct GraphTemplate {
    int num_nodes = 0;
    int dim = 2;
    std::vector<int> senders;
    std::vector<int> receivers;
    Matrix rel;        // x_receiver - x_sender, E x dim
    Matrix dist;       // E x 1
    Matrix node_type;  // N x 3 one-hot (Dirichlet, Neumann, interior)
    Matrix positions;  // N x dim
    std::vector<double> fibre_fraction;
    std::vector<double> neumann_value;  // alpha*h_N per node
    std::vector<double> dirichlet_values;
    std::vector<char> dirichlet;
    double t0 = 1.0;
    problems::Experiment experiment = problems::Experiment::exp1;
};

GraphTemplate make_template(const problems::ProblemSpec& p);

struct Graph {
    int num_nodes = 0;
    int num_graphs = 1;
    std::vector<int> senders;
    std::vector<int> receivers;
    std::vector<int> node_graph;  // graph id per node
    std::vector<int> edge_graph;  // graph id per edge
    Matrix node_features;
    Matrix edge_features;
    Matrix global_features;  // num_graphs rows
    Matrix state;            // noiseless T^n, N x 1
    Matrix dirichlet_mask;   // 1 at Dirichlet nodes
    Matrix dirichlet_values; // T-bar at Dirichlet nodes, 0 elsewhere
    std::vector<int> offsets;  // first node of each graph, plus total

    int num_edges() const { return static_cast<int>(senders.size()); }
};

// Features at time t_n for nodal state T. When noise_sigma > 0 every node
// gets one draw of N(0, sigma^2) that perturbs edge differences (and the
// temperature node feature of exp2); `state` stays noiseless.
Graph build_graph(const GraphTemplate& tpl, const ModelConfig& cfg, std::span<const double> state, double t_n,
                  double noise_sigma = 0.0, Rng* rng = nullptr);
Graph build_graph(const problems::ProblemSpec& p, const ModelConfig& cfg, std::span<const double> state, double t_n,
                  double noise_sigma = 0.0, Rng* rng = nullptr);

// Block-diagonal composition.
Graph batch_graphs(const std::vector<Graph>& graphs);

struct Mlp {
    Var W1, b1, W2, b2, gamma, beta;
};

struct Block {
    Mlp edge;
    Mlp node;
    Mlp global;  // unused without the global stream
};

class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const std::vector<std::pair<std::string, Var>>& named_parameters() const { return params_; }
    std::vector<Var> parameters() const;
    std::size_t parameter_count() const;
    Var parameter(const std::string& name) const;

    // Bundle of tbs nodal fields (N x tbs), Dirichlet rows overwritten.
    Var forward(const Graph& g) const;
    // Latent node states after encoder and processor.
    Var process(const Graph& g) const;
    // Raw decoder output (N x tbs).
    Var decode(const Var& node_latent) const;

    // Deep copy of all weights.
    Model clone() const;
    void copy_weights_from(const Model& other);

private:
    Var add_param(const std::string& name, Matrix value);
    Mlp make_mlp(const std::string& prefix, int in, int hidden, int out, bool norm, Rng& rng);

    ModelConfig config_;
    std::vector<std::pair<std::string, Var>> params_;
    Var enc_node_W_, enc_node_b_, enc_edge_W_, enc_edge_b_, enc_glob_W_, enc_glob_b_;
    std::vector<Block> blocks_;
    Var dec_W1_, dec_b1_, dec_W2_, dec_b2_;
};

// Autoregressive rollout from the problem's initial condition, noise-free.
// A final partial bundle is truncated to the remaining steps.
fem::Trajectory rollout(const Model& model, const problems::ProblemSpec& p, int* model_calls = nullptr);
fem::Trajectory rollout(const Model& model, const problems::ProblemSpec& p, const GraphTemplate& tpl,
                        int* model_calls = nullptr);

// magic "NFCKPT1", u64 config length + JSON, u32 count, then per array:
// u32 name length, name, u64 rows, u64 cols, f64 data (little-endian).
void save_checkpoint(const Model& model, const std::filesystem::path& path, const std::string& extra_json = "{}");
Model load_checkpoint(const std::filesystem::path& path, std::string* extra_json = nullptr);

} // namespace nfem::mgn
