// nfem command line: problem generation, reference solves, training,
// evaluation, timing and plots.

#include "nfem/error.hpp"
#include "nfem/eval.hpp"
#include "nfem/fem.hpp"
#include "nfem/mesh.hpp"
#include "nfem/mgn.hpp"
#include "nfem/problems.hpp"
#include "nfem/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace nfem;
using json = nlohmann::json;

namespace {

int exit_code(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::usage: return 2;
    case ErrorCategory::io: return 3;
    case ErrorCategory::format: return 4;
    case ErrorCategory::config: return 5;
    case ErrorCategory::mesh: return 6;
    case ErrorCategory::shape: return 7;
    case ErrorCategory::domain: return 8;
    case ErrorCategory::numeric: return 9;
    case ErrorCategory::internal: return 10;
    }
    return 1;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorCategory::io, "cannot open '" + p.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorCategory::io, "cannot open '" + p.string() + "' for writing");
    out << text;
    if (!out) fail(ErrorCategory::io, "write to '" + p.string() + "' failed");
}

std::string problem_stem(std::size_t i) {
    std::ostringstream s;
    s << "problem_" << std::setw(4) << std::setfill('0') << i;
    return s.str();
}

// ---- gen

struct GenArgs {
    std::string experiment = "exp1";
    std::size_t count = 1;
    std::uint64_t seed = 0;
    std::uint64_t geometry_seed = 0;
    std::size_t max_elements = 0;
    double train_fraction = 0.75;
    std::string out;
    std::string truth;
};

void run_gen(const GenArgs& a) {
    training::TrainConfig c;
    c.kind = problems::problem_kind_from_string(a.experiment);
    c.count = a.count;
    c.seed = a.seed;
    c.geometry_seed = a.geometry_seed;
    c.max_elements = a.max_elements;
    c.train_fraction = a.train_fraction;
    const auto set = training::make_problem_set(c);
    const fs::path dir(a.out);
    fs::create_directories(dir);

    for (std::size_t i = 0; i < set.problems.size(); ++i) {
        auto p = set.problems[i];
        const std::string mesh_name = "mesh_" + problem_stem(i).substr(8) + ".json";
        mesh::write_mesh(*p.mesh, dir / mesh_name);
        p.mesh_path = mesh_name;
        problems::write_problem(p, dir / (problem_stem(i) + ".json"));
        if (!a.truth.empty()) {
            fs::create_directories(a.truth);
            fem::write_trajectory(fem::solve_trajectory(p), fs::path(a.truth) / (problem_stem(i) + ".traj"));
        }
        std::cout << problem_stem(i) << " nodes " << p.num_nodes() << " elements " << p.mesh->num_elements()
                  << "\n";
    }
    json split;
    split["train"] = set.split.train;
    split["validation"] = set.split.validation;
    split["kind"] = a.experiment;
    split["seed"] = a.seed;
    split["geometry_seed"] = a.geometry_seed;
    write_text(dir / "split.json", split.dump(2) + "\n");

    mgn::ModelConfig mc;
    mc.experiment = problems::experiment_of(c.kind);
    write_text(dir / "schema.json", mgn::schema_to_json(mc) + "\n");
}

// ---- fem

void run_fem(const std::string& problem, const std::string& out) {
    const auto p = problems::read_problem(problem);
    fem::TrajectoryInfo info;
    const auto t0 = std::chrono::steady_clock::now();
    const auto traj = fem::solve_trajectory(p, {}, &info);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fem::write_trajectory(traj, out);
    std::cout << "steps " << traj.rows - 1 << " nodes " << traj.nodes << " seconds " << s;
    if (p.experiment == problems::Experiment::exp2)
        std::cout << " max_picard " << info.max_picard_iterations << " unconverged " << info.unconverged_steps;
    std::cout << "\n";
}

// ---- train

struct TrainArgs {
    std::string config;
    std::string mode;
    bool abs_pos = false;
    bool no_noise = false;
    bool no_global = false;
    std::string decoder;
    int tbs = 0;
    std::string out;
    std::string metrics;
    std::vector<std::string> overrides;
};

void run_train(const TrainArgs& a) {
    std::string text = read_text(a.config);
    for (const auto& o : a.overrides) text += "\n" + o;
    auto c = training::parse_config(text);
    std::string variant;
    auto tag = [&](const std::string& v) { variant += (variant.empty() ? "" : ",") + v; };
    if (!a.mode.empty()) c.mode = training::mode_from_string(a.mode);
    if (a.abs_pos) c.model.abs_pos = true, tag("abs_pos");
    if (a.no_noise) c.noise = false, tag("no_noise");
    if (a.no_global) c.model.use_global = false, tag("no_global");
    if (!a.decoder.empty()) {
        c.model.decoder = mgn::decoder_from_string(a.decoder);
        if (c.model.decoder == mgn::DecoderKind::mlp) tag("mlp_decoder");
    }
    if (a.tbs != 0) {
        c.model.tbs = a.tbs;
        if (a.tbs != 20) tag("tbs" + std::to_string(a.tbs));
    }
    if (!a.metrics.empty()) c.metrics_path = a.metrics;
    c.validate();

    const auto data = training::make_dataset(c);
    std::cerr << "train " << data.train.size() << " validation " << data.validation.size() << " parameters "
              << mgn::Model(c.model, c.seed).parameter_count() << "\n";
    const auto r = training::train(c, data);

    const std::string method = std::string(training::to_string(c.mode)) + (variant.empty() ? "" : "/" + variant);
    json extra;
    extra["method"] = method;
    extra["seed"] = c.seed;
    extra["best_epoch"] = r.best_epoch;
    extra["best_val_l2"] = r.best_val_l2;
    extra["seconds"] = r.seconds;
    extra["optimizer_steps"] = r.optimizer_steps;
    extra["train"] = json::parse(training::config_to_json(c));
    mgn::save_checkpoint(*r.best, a.out, extra.dump());
    if (!c.metrics_path.empty()) training::write_metrics(r.metrics, c.metrics_path);
    std::cout << "method " << method << " best_val_l2 " << r.best_val_l2 << " best_epoch " << r.best_epoch
              << " steps " << r.optimizer_steps << " seconds " << r.seconds << "\n";
}

// ---- eval

struct EvalArgs {
    std::vector<std::string> ckpts;
    std::string problems;
    std::string truth;
    std::string report;
    std::string split = "all";
    bool solve_missing = false;
};

void run_eval(const EvalArgs& a) {
    const fs::path dir(a.problems);
    if (!fs::is_directory(dir)) fail(ErrorCategory::io, "problem directory '" + a.problems + "' not found");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.starts_with("problem_") && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (a.split != "all") {
        const auto split = json::parse(read_text(dir / "split.json"));
        if (!split.contains(a.split)) fail(ErrorCategory::usage, "unknown split '" + a.split + "'");
        std::vector<fs::path> picked;
        for (std::size_t i : split[a.split].get<std::vector<std::size_t>>()) {
            if (i >= files.size()) fail(ErrorCategory::format, "split index out of range");
            picked.push_back(files[i]);
        }
        files = std::move(picked);
    }
    if (files.empty()) fail(ErrorCategory::io, "no problem_*.json files in '" + a.problems + "'");

    std::vector<problems::ProblemSpec> ps;
    std::vector<fem::Trajectory> truths;
    std::vector<std::string> ids;
    for (const auto& f : files) {
        ps.push_back(problems::read_problem(f));
        const auto t = fs::path(a.truth) / (f.stem().string() + ".traj");
        if (fs::exists(t)) {
            truths.push_back(fem::read_trajectory(t));
        } else if (a.solve_missing) {
            truths.push_back(fem::solve_trajectory(ps.back()));
            fs::create_directories(a.truth);
            fem::write_trajectory(truths.back(), t);
        } else {
            fail(ErrorCategory::io, "missing reference trajectory '" + t.string() + "'");
        }
        ids.push_back(f.stem().string());
    }

    std::vector<eval::Evaluation> evals;
    for (const auto& path : a.ckpts) {
        std::string extra_text;
        const auto model = mgn::load_checkpoint(path, &extra_text);
        if (model.config().experiment != ps.front().experiment)
            fail(ErrorCategory::config, "checkpoint '" + path + "' was trained on " +
                                            std::string(problems::to_string(model.config().experiment)) +
                                            " but the problems are " +
                                            std::string(problems::to_string(ps.front().experiment)));
        auto e = eval::evaluate(model, ps, truths, ids);
        const auto extra = json::parse(extra_text.empty() ? "{}" : extra_text);
        e.method = extra.value("method", std::string("model"));
        e.repetition = extra.contains("seed") ? std::to_string(extra["seed"].get<std::uint64_t>())
                                              : fs::path(path).stem().string();
        e.checkpoint = path;
        e.problem_set = dir.filename().string();
        std::cerr << path << " mean_l2 " << e.mean_l2 << "\n";
        evals.push_back(std::move(e));
    }
    const auto r = eval::compare(std::move(evals));
    const fs::path report(a.report);
    write_text(report, eval::summary_csv(r));
    auto detail = report;
    detail.replace_extension(".detail.csv");
    write_text(detail, eval::detail_csv(r));
    std::cout << eval::format_table(r);
}

// ---- bench

void run_bench(const std::string& ckpt, const std::string& problem, int repeats) {
    const auto model = mgn::load_checkpoint(ckpt);
    const auto p = problems::read_problem(problem);
    const auto b = eval::bench(model, p, repeats);
    std::cout << "nodes " << b.nodes << " elements " << b.elements << " repeats " << b.repeats << "\n"
              << "rollout_seconds " << b.rollout_seconds << " model_calls " << b.model_calls << "\n"
              << "fem_seconds " << b.fem_seconds << "\n"
              << "ratio " << b.ratio << "\n"
              << "timing excludes mesh and problem generation, graph templates and FEM system setup\n";
}

// ---- plot

void run_plot(const std::string& traj_path, const std::string& mesh_path, std::size_t step, const std::string& out,
              const std::string& truth_path, double cut_z) {
    // A problem file is accepted in place of a mesh file.
    const auto text = read_text(mesh_path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCategory::format, "'" + mesh_path + "' is not JSON: " + e.what());
    }
    mesh::Mesh m = j.contains("mesh_path") ? *problems::read_problem(mesh_path).mesh : mesh::mesh_from_json(text);
    const auto traj = fem::read_trajectory(traj_path);
    if (step >= traj.rows)
        fail(ErrorCategory::usage,
             "step " + std::to_string(step) + " out of range (trajectory has " + std::to_string(traj.rows) + " rows)");
    eval::PlotOptions o;
    o.cut_z = cut_z;
    if (truth_path.empty()) {
        o.title = fs::path(traj_path).filename().string() + " step " + std::to_string(step);
        const auto row = traj.row(step);
        eval::plot_field(m, row, out, o);
    } else {
        o.title = "relative error step " + std::to_string(step);
        const auto err = eval::relative_error_field(traj, fem::read_trajectory(truth_path), step);
        eval::plot_field(m, err, out, o);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nfem: neural finite element workbench"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "sample problems and write problem/mesh JSON, split.json and schema.json");
    g->add_option("--experiment", gen.experiment, "exp1, exp2, exp3, sheet10, sheet100, grid or longcyl")->required();
    g->add_option("--count", gen.count, "number of problems")->check(CLI::PositiveNumber);
    g->add_option("--seed", gen.seed, "split and initial condition seed");
    g->add_option("--geometry-seed", gen.geometry_seed, "geometry and material seed");
    g->add_option("--max-elements", gen.max_elements, "skip meshes with more elements (0: no cap)");
    g->add_option("--train-fraction", gen.train_fraction, "share of problems in the train split");
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--truth", gen.truth, "also solve and write reference trajectories here");

    std::string fem_problem, fem_out;
    auto* f = app.add_subcommand("fem", "reference FEM trajectory of one problem");
    f->add_option("--problem", fem_problem)->required();
    f->add_option("--out", fem_out)->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a surrogate and write the best-validation checkpoint");
    t->add_option("--config", tr.config, "key = value config file")->required();
    t->add_option("--mode", tr.mode, "pi or data")->check(CLI::IsMember({"pi", "data"}));
    t->add_flag("--abs-pos", tr.abs_pos, "absolute positions as node features");
    t->add_flag("--no-noise", tr.no_noise, "disable training noise");
    t->add_flag("--no-global", tr.no_global, "drop the global update");
    t->add_option("--decoder", tr.decoder, "cnn or mlp")->check(CLI::IsMember({"cnn", "mlp"}));
    t->add_option("--tbs", tr.tbs, "time bundle size")->check(CLI::IsMember({10, 20, 50}));
    t->add_option("--out", tr.out, "checkpoint path")->required();
    t->add_option("--metrics", tr.metrics, "per-epoch metrics CSV");
    t->add_option("--set", tr.overrides, "extra key=value config lines");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "normalized L2 of checkpoints against reference trajectories");
    e->add_option("--ckpt", ev.ckpts, "checkpoint (repeatable)")->required();
    e->add_option("--problems", ev.problems, "directory written by gen")->required();
    e->add_option("--truth", ev.truth, "directory with <problem>.traj files")->required();
    e->add_option("--report", ev.report, "summary CSV; details go to <stem>.detail.csv")->required();
    e->add_option("--split", ev.split, "all, train or validation")->check(CLI::IsMember({"all", "train", "validation"}));
    e->add_flag("--solve-missing", ev.solve_missing, "solve and store references that are missing");

    std::string b_ckpt, b_problem;
    int b_repeats = 1;
    auto* b = app.add_subcommand("bench", "wall-clock rollout vs FEM");
    b->add_option("--ckpt", b_ckpt)->required();
    b->add_option("--problem", b_problem)->required();
    b->add_option("--repeats", b_repeats)->check(CLI::PositiveNumber);

    std::string p_traj, p_mesh, p_out, p_truth;
    std::size_t p_step = 0;
    double p_cut = 0.0;
    auto* pl = app.add_subcommand("plot", "SVG of one trajectory row");
    pl->add_option("--traj", p_traj)->required();
    pl->add_option("--mesh", p_mesh, "mesh or problem JSON")->required();
    pl->add_option("--step", p_step)->required();
    pl->add_option("--out", p_out)->required();
    pl->add_option("--truth", p_truth, "plot the relative error against this trajectory instead");
    pl->add_option("--cut-z", p_cut, "3D meshes: cut plane z");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        std::cerr << "usage: " << one_line(ex.what()) << "\n";
        return exit_code(ErrorCategory::usage);
    }

    try {
        if (*g) run_gen(gen);
        else if (*f) run_fem(fem_problem, fem_out);
        else if (*t) run_train(tr);
        else if (*e) run_eval(ev);
        else if (*b) run_bench(b_ckpt, b_problem, b_repeats);
        else if (*pl) run_plot(p_traj, p_mesh, p_step, p_out, p_truth, p_cut);
    } catch (const Error& ex) {
        std::cerr << category_name(ex.category()) << ": " << one_line(ex.what()) << "\n";
        return exit_code(ex.category());
    } catch (const json::exception& ex) {
        std::cerr << "format: " << one_line(ex.what()) << "\n";
        return exit_code(ErrorCategory::format);
    } catch (const fs::filesystem_error& ex) {
        std::cerr << "io: " << one_line(ex.what()) << "\n";
        return exit_code(ErrorCategory::io);
    } catch (const std::exception& ex) {
        std::cerr << "internal: " << one_line(ex.what()) << "\n";
        return exit_code(ErrorCategory::internal);
    }
    return 0;
}
