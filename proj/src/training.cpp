#include "nfem/training.hpp"

#include "nfem/error.hpp"
#include "nfem/eval.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

namespace nfem::training {

using diff::Index;
using diff::Matrix;
using json = nlohmann::json;

std::string_view to_string(Mode m) noexcept { return m == Mode::pi ? "pi" : "data"; }

Mode mode_from_string(std::string_view s) {
    if (s == "pi") return Mode::pi;
    if (s == "data") return Mode::data;
    fail(ErrorCategory::usage, "unknown training mode '" + std::string(s) + "' (pi, data)");
}

double TrainConfig::sigma() const {
    if (!noise) return 0.0;
    return noise_sigma >= 0 ? noise_sigma : 0.01 * model.t_scale();
}

void TrainConfig::validate() const {
    if (epochs < 1) fail(ErrorCategory::config, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorCategory::config, "batch_size must be >= 1");
    if (!(lr_start > 0) || !(lr_end > 0) || lr_end > lr_start)
        fail(ErrorCategory::config, "learning rates need 0 < lr_end <= lr_start");
    if (!(clip_norm > 0)) fail(ErrorCategory::config, "clip_norm must be positive");
    if (validate_every < 1) fail(ErrorCategory::config, "validate_every must be >= 1");
    if (count < 1) fail(ErrorCategory::config, "count must be >= 1");
    if (!(train_fraction > 0 && train_fraction <= 1)) fail(ErrorCategory::config, "train_fraction must be in (0, 1]");
    if (model.experiment != problems::experiment_of(kind))
        fail(ErrorCategory::config, "model experiment does not match the problem kind");
    model.validate();
}

TrainConfig default_config(problems::Experiment e) {
    TrainConfig c;
    c.model.experiment = e;
    switch (e) {
    case problems::Experiment::exp1: c.kind = problems::ProblemKind::exp1; break;
    case problems::Experiment::exp2: c.kind = problems::ProblemKind::exp2; break;
    case problems::Experiment::exp3:
        c.kind = problems::ProblemKind::exp3;
        c.lr_start = 1e-4;
        c.lr_end = 1e-5;
        break;
    }
    return c;
}

const std::vector<std::pair<std::string, std::string>>& config_keys() {
    static const std::vector<std::pair<std::string, std::string>> keys{
        {"experiment", "problem kind: exp1, exp2, exp3 (sets experiment defaults; give it first)"},
        {"mode", "pi or data"},
        {"epochs", "number of epochs (>= 1)"},
        {"batch_size", "graphs per optimizer step"},
        {"lr_start", "learning rate of the first optimizer step"},
        {"lr_end", "learning rate of the last optimizer step"},
        {"clip_norm", "global gradient norm limit"},
        {"noise", "true/false: noise on the input state during training"},
        {"noise_sigma", "noise standard deviation; negative means 0.01 * temperature scale"},
        {"seed", "model init, shuffling and noise; also the split seed unless split_seed is given"},
        {"split_seed", "train/validation split and exp1 initial conditions"},
        {"geometry_seed", "mesh pool (and exp2 material fields)"},
        {"count", "problems in the set before splitting"},
        {"train_fraction", "share of problems used for training"},
        {"max_elements", "skip meshes with more elements (0: no cap)"},
        {"validate_every", "validation cadence in epochs"},
        {"divergence_limit", "abort when a batch loss exceeds this"},
        {"metrics", "CSV path for per-epoch metrics"},
        {"latent", "latent width"},
        {"blocks", "message passing blocks"},
        {"tbs", "bundle size: 10, 20 or 50 with the conv decoder"},
        {"decoder", "cnn or mlp"},
        {"output", "offset or absolute"},
        {"abs_pos", "true/false: absolute coordinates as node features"},
        {"global", "true/false: global feature stream"},
        {"residual", "true/false: residual connections in the processor"},
        {"layer_norm", "true/false: layer norm at the end of each block MLP"},
        {"verbose", "true/false: print progress to stderr"},
    };
    return keys;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(const std::string& k, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(ErrorCategory::config, "key '" + k + "' expects true/false, got '" + v + "'");
}

double parse_double(const std::string& k, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorCategory::config, "key '" + k + "' expects a number, got '" + v + "'");
}

long long parse_int(const std::string& k, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorCategory::config, "key '" + k + "' expects an integer, got '" + v + "'");
}

std::uint64_t parse_seed(const std::string& k, const std::string& v) {
    try {
        std::size_t pos = 0;
        const auto d = std::stoull(v, &pos);
        if (pos == v.size() && v.find('-') == std::string::npos) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorCategory::config, "key '" + k + "' expects a non-negative integer, got '" + v + "'");
}

} // namespace

TrainConfig parse_config(std::string_view text, TrainConfig c) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::istringstream is{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            fail(ErrorCategory::config, "line " + std::to_string(lineno) + ": expected key=value");
        entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    // The experiment key resets the experiment-dependent defaults first.
    for (const auto& [k, v] : entries)
        if (k == "experiment") {
            const auto kind = problems::problem_kind_from_string(v);
            const auto e = problems::experiment_of(kind);
            if (e != c.model.experiment) {
                const auto d = default_config(e);
                c.lr_start = d.lr_start;
                c.lr_end = d.lr_end;
                c.model.experiment = e;
            }
            c.kind = kind;
        }
    const auto& keys = config_keys();
    for (const auto& [k, v] : entries) {
        if (std::none_of(keys.begin(), keys.end(), [&](const auto& kv) { return kv.first == k; }))
            fail(ErrorCategory::config, "unknown config key '" + k + "'");
        if (k == "experiment") continue;
        if (k == "mode") c.mode = mode_from_string(v);
        else if (k == "epochs") c.epochs = static_cast<int>(parse_int(k, v));
        else if (k == "batch_size") c.batch_size = static_cast<int>(parse_int(k, v));
        else if (k == "lr_start") c.lr_start = parse_double(k, v);
        else if (k == "lr_end") c.lr_end = parse_double(k, v);
        else if (k == "clip_norm") c.clip_norm = parse_double(k, v);
        else if (k == "noise") c.noise = parse_bool(k, v);
        else if (k == "noise_sigma") c.noise_sigma = parse_double(k, v);
        else if (k == "seed") c.seed = parse_seed(k, v);
        else if (k == "split_seed") c.split_seed = parse_seed(k, v);
        else if (k == "geometry_seed") c.geometry_seed = parse_seed(k, v);
        else if (k == "count") c.count = static_cast<std::size_t>(parse_seed(k, v));
        else if (k == "train_fraction") c.train_fraction = parse_double(k, v);
        else if (k == "max_elements") c.max_elements = static_cast<std::size_t>(parse_seed(k, v));
        else if (k == "validate_every") c.validate_every = static_cast<int>(parse_int(k, v));
        else if (k == "divergence_limit") c.divergence_limit = parse_double(k, v);
        else if (k == "metrics") c.metrics_path = v;
        else if (k == "latent") c.model.latent = static_cast<int>(parse_int(k, v));
        else if (k == "blocks") c.model.blocks = static_cast<int>(parse_int(k, v));
        else if (k == "tbs") c.model.tbs = static_cast<int>(parse_int(k, v));
        else if (k == "decoder") c.model.decoder = mgn::decoder_from_string(v);
        else if (k == "output") c.model.output = mgn::output_mode_from_string(v);
        else if (k == "abs_pos") c.model.abs_pos = parse_bool(k, v);
        else if (k == "global") c.model.use_global = parse_bool(k, v);
        else if (k == "residual") c.model.residual = parse_bool(k, v);
        else if (k == "layer_norm") c.model.layer_norm = parse_bool(k, v);
        else if (k == "verbose") c.verbose = parse_bool(k, v);
    }
    c.validate();
    return c;
}

TrainConfig read_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCategory::io, "cannot read " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_text(const TrainConfig& c) {
    std::ostringstream os;
    os << std::setprecision(17);
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "experiment = " << problems::to_string(c.kind) << '\n';
    os << "mode = " << to_string(c.mode) << '\n';
    os << "epochs = " << c.epochs << '\n';
    os << "batch_size = " << c.batch_size << '\n';
    os << "lr_start = " << c.lr_start << '\n';
    os << "lr_end = " << c.lr_end << '\n';
    os << "clip_norm = " << c.clip_norm << '\n';
    os << "noise = " << b(c.noise) << '\n';
    os << "noise_sigma = " << c.noise_sigma << '\n';
    os << "seed = " << c.seed << '\n';
    if (c.split_seed) os << "split_seed = " << *c.split_seed << '\n';
    os << "geometry_seed = " << c.geometry_seed << '\n';
    os << "count = " << c.count << '\n';
    os << "train_fraction = " << c.train_fraction << '\n';
    os << "max_elements = " << c.max_elements << '\n';
    os << "validate_every = " << c.validate_every << '\n';
    os << "divergence_limit = " << c.divergence_limit << '\n';
    if (!c.metrics_path.empty()) os << "metrics = " << c.metrics_path << '\n';
    os << "latent = " << c.model.latent << '\n';
    os << "blocks = " << c.model.blocks << '\n';
    os << "tbs = " << c.model.tbs << '\n';
    os << "decoder = " << mgn::to_string(c.model.decoder) << '\n';
    os << "output = " << mgn::to_string(c.model.output) << '\n';
    os << "abs_pos = " << b(c.model.abs_pos) << '\n';
    os << "global = " << b(c.model.use_global) << '\n';
    os << "residual = " << b(c.model.residual) << '\n';
    os << "layer_norm = " << b(c.model.layer_norm) << '\n';
    return os.str();
}

std::string config_to_json(const TrainConfig& c) {
    json j;
    j["experiment"] = std::string(problems::to_string(c.kind));
    j["mode"] = std::string(to_string(c.mode));
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr_start"] = c.lr_start;
    j["lr_end"] = c.lr_end;
    j["noise_sigma"] = c.sigma();
    j["seed"] = c.seed;
    j["split_seed"] = c.effective_split_seed();
    j["geometry_seed"] = c.geometry_seed;
    j["count"] = c.count;
    j["max_elements"] = c.max_elements;
    return j.dump();
}

TrainConfig run_ablation(const TrainConfig& base, std::string_view variant) {
    TrainConfig c = base;
    if (variant == "base" || variant.empty()) return c;
    if (variant == "abs_pos") c.model.abs_pos = true;
    else if (variant == "no_noise") c.noise = false;
    else if (variant == "no_global") c.model.use_global = false;
    else if (variant == "mlp_decoder") c.model.decoder = mgn::DecoderKind::mlp;
    else if (variant == "tbs10") c.model.tbs = 10;
    else if (variant == "tbs50") c.model.tbs = 50;
    else
        fail(ErrorCategory::usage, "unknown ablation '" + std::string(variant) +
                                       "' (abs_pos, no_noise, no_global, mlp_decoder, tbs10, tbs50)");
    c.validate();
    return c;
}

problems::ProblemSet make_problem_set(const TrainConfig& c, const problems::SampleOptions& options) {
    const auto split_seed = c.effective_split_seed();
    if (c.max_elements == 0)
        return problems::sample_problem_set(c.kind, c.count, c.geometry_seed, split_seed, options, c.train_fraction);
    problems::ProblemSet set;
    const std::size_t limit = 100 * c.count + 100;
    for (std::size_t i = 0; set.problems.size() < c.count; ++i) {
        if (i >= limit)
            fail(ErrorCategory::config, "fewer than " + std::to_string(c.count) + " meshes with at most " +
                                            std::to_string(c.max_elements) + " elements in " + std::to_string(limit) +
                                            " draws");
        auto p = problems::sample_problem(c.kind, c.geometry_seed, split_seed, i, options);
        if (p.mesh->num_elements() <= c.max_elements) set.problems.push_back(std::move(p));
    }
    set.split = problems::split_indices(c.count, split_seed, c.train_fraction);
    return set;
}

Dataset make_dataset(const TrainConfig& c, const problems::SampleOptions& options) {
    const auto set = make_problem_set(c, options);
    Dataset d;
    for (auto i : set.split.train) {
        d.train.push_back(set.problems[i]);
        if (c.mode == Mode::data) d.train_truth.push_back(fem::solve_trajectory(set.problems[i]));
    }
    for (auto i : set.split.validation) {
        d.validation.push_back(set.problems[i]);
        d.validation_truth.push_back(fem::solve_trajectory(set.problems[i]));
    }
    return d;
}

Var physics_loss(const Var& bundle, const mgn::Graph& g, const std::vector<const fem::FemSystem*>& systems,
                 const std::vector<double>& t_n, int k) {
    using namespace diff;
    const int B = g.num_graphs;
    if (static_cast<int>(systems.size()) != B || static_cast<int>(t_n.size()) != B)
        fail(ErrorCategory::shape, "physics loss needs one system and one time per graph");
    if (k < 1 || k > bundle->value.cols()) fail(ErrorCategory::shape, "bundle has too few steps for the loss");
    std::vector<Var> per_graph;
    for (int b = 0; b < B; ++b) {
        const int off = g.offsets[static_cast<std::size_t>(b)];
        const int n = g.offsets[static_cast<std::size_t>(b) + 1] - off;
        const auto& sys = *systems[static_cast<std::size_t>(b)];
        if (static_cast<int>(sys.num_nodes()) != n) fail(ErrorCategory::shape, "system size differs from graph");
        if (sys.num_free() == 0) fail(ErrorCategory::config, "problem has no free nodes");
        Var rows = slice_rows(bundle, off, n);
        Var prev = constant(g.state.middleRows(off, n));
        Var acc;
        for (int j = 0; j < k; ++j) {
            Var cur = slice_cols(rows, j, 1);
            Var r = fem_residual(sys, cur, prev, t_n[static_cast<std::size_t>(b)] + (j + 1) * sys.dt());
            Var s = sum(square(r));
            acc = acc ? add(acc, s) : s;
            prev = cur;
        }
        per_graph.push_back(scale(acc, 1.0 / (static_cast<double>(k) * static_cast<double>(sys.num_free()))));
    }
    Var total = per_graph[0];
    for (std::size_t b = 1; b < per_graph.size(); ++b) total = add(total, per_graph[b]);
    Var loss = scale(total, 1.0 / B);
    if (!std::isfinite(loss->value(0, 0))) {
        std::ostringstream os;
        os << "non-finite physics loss; bundle range [" << bundle->value.minCoeff() << ", " << bundle->value.maxCoeff()
           << "], times";
        for (double t : t_n) os << ' ' << t;
        fail(ErrorCategory::numeric, os.str());
    }
    return loss;
}

Var data_loss(const Var& bundle, const mgn::Graph& g, const Matrix& truth, int k) {
    using namespace diff;
    if (truth.rows() != bundle->value.rows() || truth.cols() < k || k < 1 || k > bundle->value.cols())
        fail(ErrorCategory::shape, "truth (" + std::to_string(truth.rows()) + ", " + std::to_string(truth.cols()) +
                                       ") does not cover bundle " + bundle->shape.str());
    std::vector<Var> per_graph;
    for (int b = 0; b < g.num_graphs; ++b) {
        const int off = g.offsets[static_cast<std::size_t>(b)];
        const int n = g.offsets[static_cast<std::size_t>(b) + 1] - off;
        const Matrix free = (1.0 - g.dirichlet_mask.middleRows(off, n).array()).matrix();
        const double nf = free.sum();
        if (nf == 0) fail(ErrorCategory::config, "problem has no free nodes");
        Var pred = slice_cols(slice_rows(bundle, off, n), 0, k);
        Var diffv = mul(sub(pred, constant(truth.block(off, 0, n, k))), constant(free));
        per_graph.push_back(scale(sum(square(diffv)), 1.0 / (static_cast<double>(k) * nf)));
    }
    Var total = per_graph[0];
    for (std::size_t b = 1; b < per_graph.size(); ++b) total = add(total, per_graph[b]);
    Var loss = scale(total, 1.0 / g.num_graphs);
    if (!std::isfinite(loss->value(0, 0))) fail(ErrorCategory::numeric, "non-finite data loss");
    return loss;
}

double learning_rate(const TrainConfig& c, long step, long total) {
    if (total <= 1) return c.lr_start;
    const double f = static_cast<double>(step) / static_cast<double>(total - 1);
    return c.lr_start * std::pow(c.lr_end / c.lr_start, f);
}

double clip_gradients(const std::vector<Var>& params, double max_norm) {
    double s = 0;
    for (const auto& p : params)
        if (p->has_grad()) s += p->grad.squaredNorm();
    const double norm = std::sqrt(s);
    if (norm > max_norm) {
        const double f = max_norm / norm;
        for (const auto& p : params)
            if (p->has_grad()) p->grad *= f;
    }
    return norm;
}

Adam::Adam(const std::vector<Var>& params, double beta1, double beta2, double eps)
    : params_(params), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        if (p.has_grad()) {
            m_[i] = b1_ * m_[i] + (1 - b1_) * p.grad;
            v_[i] = b2_ * v_[i] + (1 - b2_) * p.grad.cwiseProduct(p.grad);
        } else {
            m_[i] *= b1_;
            v_[i] *= b2_;
        }
        p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

double validation_l2(const mgn::Model& model, const Dataset& data, const std::vector<mgn::GraphTemplate>& tpls) {
    double s = 0;
    for (std::size_t i = 0; i < data.validation.size(); ++i)
        s += eval::normalized_l2(mgn::rollout(model, data.validation[i], tpls[i]), data.validation_truth[i]);
    return s / static_cast<double>(data.validation.size());
}

} // namespace

TrainResult train(const TrainConfig& c, const Dataset& data, const Progress& progress) {
    c.validate();
    if (data.train.empty()) fail(ErrorCategory::config, "no training problems");
    if (c.mode == Mode::data && data.train_truth.size() != data.train.size())
        fail(ErrorCategory::config, "data mode needs reference trajectories for every training problem");
    if (data.validation.size() != data.validation_truth.size())
        fail(ErrorCategory::config, "validation problems and references differ in number");
    for (const auto& p : data.train)
        if (p.experiment != c.model.experiment) fail(ErrorCategory::config, "training problem of another experiment");

    const auto start = std::chrono::steady_clock::now();
    TrainResult result;
    auto model = std::make_unique<mgn::Model>(c.model, c.seed);
    const auto params = model->parameters();
    Adam opt(params);
    Rng rng = make_rng(c.seed, 0, 11);

    std::vector<mgn::GraphTemplate> tpls;
    std::vector<std::unique_ptr<fem::FemSystem>> systems;
    for (const auto& p : data.train) {
        tpls.push_back(mgn::make_template(p));
        if (c.mode == Mode::pi) systems.push_back(std::make_unique<fem::FemSystem>(p));
    }
    std::vector<mgn::GraphTemplate> val_tpls;
    for (const auto& p : data.validation) val_tpls.push_back(mgn::make_template(p));

    const int tbs = c.model.tbs;
    const int steps = data.train[0].time.steps;
    const long windows = (steps + tbs - 1) / tbs;
    const long batches = (static_cast<long>(data.train.size()) + c.batch_size - 1) / c.batch_size;
    const long total = static_cast<long>(c.epochs) * batches * windows;
    const double sigma = c.sigma();
    long step = 0;
    double best = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= c.epochs; ++epoch) {
        shuffle(order, rng);
        double loss_sum = 0;
        long loss_count = 0;
        double lr = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(c.batch_size)) {
            std::vector<std::size_t> members(order.begin() + static_cast<long>(b0),
                                             order.begin() + static_cast<long>(std::min(order.size(), b0 + c.batch_size)));
            std::vector<std::vector<double>> states;
            for (auto i : members) states.push_back(data.train[i].initial);
            for (int n = 0; n < steps; n += tbs) {
                const int k = std::min(tbs, steps - n);
                std::vector<mgn::Graph> graphs;
                std::vector<const fem::FemSystem*> sys;
                std::vector<double> times;
                for (std::size_t m = 0; m < members.size(); ++m) {
                    const auto i = members[m];
                    const double t_n = n * data.train[i].time.dt;
                    graphs.push_back(mgn::build_graph(tpls[i], c.model, states[m], t_n, sigma, &rng));
                    if (c.mode == Mode::pi) sys.push_back(systems[i].get());
                    times.push_back(t_n);
                }
                const mgn::Graph g = mgn::batch_graphs(graphs);
                Matrix out;
                double loss_value = 0;
                diff::zero_grad(params);
                {
                    diff::Tape tape;
                    Var bundle = model->forward(g);
                    Var loss;
                    if (c.mode == Mode::pi) {
                        loss = physics_loss(bundle, g, sys, times, k);
                    } else {
                        Matrix truth(g.num_nodes, k);
                        for (std::size_t m = 0; m < members.size(); ++m) {
                            const auto& tr = data.train_truth[members[m]];
                            const int off = g.offsets[m];
                            for (int j = 0; j < k; ++j) {
                                const auto row = tr.row(static_cast<std::size_t>(n + j + 1));
                                for (std::size_t v = 0; v < row.size(); ++v)
                                    truth(off + static_cast<Index>(v), j) = row[v];
                            }
                        }
                        loss = data_loss(bundle, g, truth, k);
                    }
                    loss_value = loss->value(0, 0);
                    if (loss_value > c.divergence_limit)
                        fail(ErrorCategory::numeric, "training diverged at epoch " + std::to_string(epoch) +
                                                         ", step " + std::to_string(step) + ": loss " +
                                                         std::to_string(loss_value));
                    tape.backward(loss);
                    out = bundle->value;
                }
                clip_gradients(params, c.clip_norm);
                lr = learning_rate(c, step, total);
                opt.step(lr);
                ++step;
                loss_sum += loss_value;
                ++loss_count;
                // Next window input: detached prediction (pi) or ground truth (data).
                for (std::size_t m = 0; m < members.size(); ++m) {
                    auto& s = states[m];
                    if (c.mode == Mode::pi) {
                        const int off = g.offsets[m];
                        for (std::size_t v = 0; v < s.size(); ++v) s[v] = out(off + static_cast<Index>(v), k - 1);
                    } else {
                        const auto row = data.train_truth[members[m]].row(static_cast<std::size_t>(n + k));
                        s.assign(row.begin(), row.end());
                    }
                }
            }
        }
        MetricsRow row;
        row.epoch = epoch;
        row.step = step;
        row.lr = lr;
        row.train_loss = loss_sum / static_cast<double>(loss_count);
        if (!data.validation.empty() && (epoch % c.validate_every == 0 || epoch == c.epochs)) {
            row.val_l2 = validation_l2(*model, data, val_tpls);
            if (row.val_l2 < best) {
                best = row.val_l2;
                result.best = std::make_unique<mgn::Model>(model->clone());
                result.best_epoch = epoch;
                result.best_val_l2 = best;
            }
        }
        if (c.verbose) {
            std::cerr << "epoch " << epoch << " step " << step << " lr " << lr << " loss " << row.train_loss;
            if (std::isfinite(row.val_l2)) std::cerr << " val_l2 " << row.val_l2;
            std::cerr << '\n';
        }
        result.metrics.push_back(row);
        if (progress) progress(row);
    }
    if (!result.best) {
        result.best = std::make_unique<mgn::Model>(model->clone());
        result.best_epoch = c.epochs;
    }
    result.last = std::move(model);
    result.optimizer_steps = step;
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!c.metrics_path.empty()) write_metrics(result.metrics, c.metrics_path);
    return result;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "epoch,step,lr,train_loss,val_L2_mean\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.train_loss << ',';
        if (std::isfinite(r.val_l2)) os << r.val_l2;
        os << '\n';
    }
    return os.str();
}

void write_metrics(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) fail(ErrorCategory::io, "cannot write " + path.string());
    os << metrics_csv(rows);
}

std::vector<double> smoothed_losses(const std::vector<MetricsRow>& rows, int window) {
    std::vector<double> out;
    if (window < 1) fail(ErrorCategory::usage, "smoothing window must be >= 1");
    for (std::size_t i = 0; i + static_cast<std::size_t>(window) <= rows.size(); i += static_cast<std::size_t>(window)) {
        double s = 0;
        for (int j = 0; j < window; ++j) s += rows[i + static_cast<std::size_t>(j)].train_loss;
        out.push_back(s / window);
    }
    return out;
}

} // namespace nfem::training
