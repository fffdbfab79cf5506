#pragma once

#include "nfem/fem.hpp"
#include "nfem/mesh.hpp"
#include "nfem/mgn.hpp"
#include "nfem/problems.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nfem::eval {

// sqrt(sum |pred - truth|^2) / sqrt(sum |truth|^2) over rows 1..N_t and all nodes.
double normalized_l2(const fem::Trajectory& predicted, const fem::Trajectory& truth);

// (pred^n - truth^n) / (max truth - min truth), range over the whole truth trajectory.
std::vector<double> relative_error_field(const fem::Trajectory& predicted, const fem::Trajectory& truth,
                                         std::size_t n);

struct Summary {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single value
    std::size_t count = 0;
};
Summary summarize(std::span<const double> values);

// One evaluated checkpoint on one problem set.
struct Evaluation {
    std::string method;       // e.g. "pi", "data", "pi/no_global"
    std::string experiment;   // problem kind of the set
    std::string repetition;   // seed or checkpoint id
    std::string checkpoint;
    std::string problem_set;
    std::vector<std::string> problems;
    std::vector<double> l2;
    double mean_l2 = 0.0;
};

Evaluation evaluate(const mgn::Model& model, const std::vector<problems::ProblemSpec>& problems,
                    const std::vector<fem::Trajectory>& truths, std::vector<std::string> problem_ids = {});

struct ReportRow {
    std::string method;
    std::string experiment;   // problem kind of the set
    std::vector<std::string> repetitions;
    Summary l2;  // over repetition means
};

struct EvalReport {
    std::vector<Evaluation> evaluations;
    std::vector<ReportRow> rows;  // sorted by (experiment, method)
};

// Groups evaluations by (method, experiment); mean and std over repetitions.
EvalReport compare(std::vector<Evaluation> evaluations);

// "method,experiment,repetitions,mu_x1e3,sigma_x1e3" plus one line per row.
std::string summary_csv(const EvalReport& r);
// One line per (evaluation, problem).
std::string detail_csv(const EvalReport& r);
// Table with "mu +- sigma" in units of 1e-3.
std::string format_table(const EvalReport& r);

struct BenchResult {
    double rollout_seconds = 0.0;  // model rollout only
    double fem_seconds = 0.0;      // reference solve only
    double ratio = 0.0;            // rollout / fem
    int model_calls = 0;
    std::size_t nodes = 0;
    std::size_t elements = 0;
    int repeats = 1;
};

// Graph template and FEM system setup are excluded from the timed regions.
BenchResult bench(const mgn::Model& model, const problems::ProblemSpec& p, int repeats = 1);

struct PlotOptions {
    std::string title;
    int width = 800;
    double cut_z = 0.0;  // 3D meshes: plane z = cut_z through the cylinder axis
};

// Color-mapped SVG of a nodal field: triangles in 2D, a planar cut in 3D.
std::string plot_field_svg(const mesh::Mesh& mesh, std::span<const double> field, const PlotOptions& options = {});
void plot_field(const mesh::Mesh& mesh, std::span<const double> field, const std::filesystem::path& path,
                const PlotOptions& options = {});

} // namespace nfem::eval
