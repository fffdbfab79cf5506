#pragma once

#include "nfem/diff.hpp"
#include "nfem/fem.hpp"
#include "nfem/mgn.hpp"
#include "nfem/problems.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nfem::training {

using diff::Var;

enum class Mode { pi, data };
std::string_view to_string(Mode m) noexcept;
Mode mode_from_string(std::string_view s);

struct TrainConfig {
    Mode mode = Mode::pi;
    int epochs = 500;
    int batch_size = 2;
    double lr_start = 1e-3;
    double lr_end = 1e-5;
    double clip_norm = 1.0;
    bool noise = true;
    double noise_sigma = -1.0;  // < 0: 0.01 * temperature scale
    std::uint64_t seed = 0;     // model init, shuffling and noise
    int validate_every = 10;
    double divergence_limit = 1e12;
    mgn::ModelConfig model;

    // Problem set.
    problems::ProblemKind kind = problems::ProblemKind::exp1;
    std::size_t count = 100;
    std::uint64_t geometry_seed = 0;
    std::optional<std::uint64_t> split_seed;  // unset: same as seed
    double train_fraction = 0.75;
    std::size_t max_elements = 0;  // 0: no cap; larger meshes are skipped
    std::string metrics_path;      // CSV, empty: none
    bool verbose = false;

    double sigma() const;
    std::uint64_t effective_split_seed() const { return split_seed.value_or(seed); }
    void validate() const;
};

// Experiment defaults (exp3 uses lr 1e-4 -> 1e-5).
TrainConfig default_config(problems::Experiment e);

// Flat key=value text; '#' starts a comment. Unknown keys are config errors.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig read_config(const std::filesystem::path& path);
std::string config_to_text(const TrainConfig& c);
std::string config_to_json(const TrainConfig& c);
// All accepted keys with a one-line description each.
const std::vector<std::pair<std::string, std::string>>& config_keys();

// abs_pos, no_noise, no_global, mlp_decoder, tbs10, tbs50 (and "base").
TrainConfig run_ablation(const TrainConfig& base, std::string_view variant);

// Problem set honoring max_elements: indices are scanned until `count`
// problems fit under the cap.
problems::ProblemSet make_problem_set(const TrainConfig& c, const problems::SampleOptions& options = {});

// Mean over graphs of (1 / (k * N_F)) * sum of squared free residuals, where
// column j of each bundle is checked against column j-1 (T^n for j = 0).
// `bundle` holds the stacked graphs (rows by `offsets`); only the first k
// columns are used. t_n is the time of the input state.
Var physics_loss(const Var& bundle, const mgn::Graph& g, const std::vector<const fem::FemSystem*>& systems,
                 const std::vector<double>& t_n, int k);

// Mean over graphs of (1 / (k * N_F)) * sum over free nodes of squared errors
// against truth (same row layout as bundle, at least k columns).
Var data_loss(const Var& bundle, const mgn::Graph& g, const diff::Matrix& truth, int k);

// Learning rate of optimizer step `step` out of `total` (0-based).
double learning_rate(const TrainConfig& c, long step, long total);

// Global gradient norm before clipping; gradients are rescaled in place to norm <= max_norm.
double clip_gradients(const std::vector<Var>& params, double max_norm);

class Adam {
public:
    explicit Adam(const std::vector<Var>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(double lr);
    long steps() const { return t_; }
    const std::vector<diff::Matrix>& first_moment() const { return m_; }
    const std::vector<diff::Matrix>& second_moment() const { return v_; }

private:
    std::vector<Var> params_;
    std::vector<diff::Matrix> m_, v_;
    double b1_, b2_, eps_;
    long t_ = 0;
};

struct MetricsRow {
    int epoch = 0;
    long step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_l2 = std::numeric_limits<double>::quiet_NaN();  // NaN when not validated
};

struct TrainResult {
    std::unique_ptr<mgn::Model> best;  // best validation checkpoint (last if never validated)
    std::unique_ptr<mgn::Model> last;
    std::vector<MetricsRow> metrics;
    double best_val_l2 = std::numeric_limits<double>::quiet_NaN();
    int best_epoch = 0;
    long optimizer_steps = 0;
    double seconds = 0.0;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> validation_indices;
};

// Prepared data for train(): problems with their reference trajectories.
struct Dataset {
    std::vector<problems::ProblemSpec> train;
    std::vector<fem::Trajectory> train_truth;  // needed in data mode
    std::vector<problems::ProblemSpec> validation;
    std::vector<fem::Trajectory> validation_truth;
};

Dataset make_dataset(const TrainConfig& c, const problems::SampleOptions& options = {});

using Progress = std::function<void(const MetricsRow&)>;

TrainResult train(const TrainConfig& c, const Dataset& data, const Progress& progress = {});

std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

// Means of consecutive blocks of `window` epochs of train_loss.
std::vector<double> smoothed_losses(const std::vector<MetricsRow>& rows, int window = 10);

} // namespace nfem::training
