#include "nfem/eval.hpp"

#include "nfem/error.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace nfem::eval {

namespace {

void check_same_shape(const fem::Trajectory& a, const fem::Trajectory& b) {
    if (a.rows != b.rows || a.nodes != b.nodes || a.data.size() != b.data.size())
        fail(ErrorCategory::shape, "trajectory shapes differ: (" + std::to_string(a.rows) + ", " +
                                       std::to_string(a.nodes) + ") vs (" + std::to_string(b.rows) + ", " +
                                       std::to_string(b.nodes) + ")");
}

} // namespace

double normalized_l2(const fem::Trajectory& predicted, const fem::Trajectory& truth) {
    check_same_shape(predicted, truth);
    double num = 0, den = 0;
    for (std::size_t i = truth.nodes; i < truth.data.size(); ++i) {
        const double d = predicted.data[i] - truth.data[i];
        num += d * d;
        den += truth.data[i] * truth.data[i];
    }
    if (den == 0.0) fail(ErrorCategory::domain, "normalized L2 undefined: truth is zero after the initial step");
    return std::sqrt(num) / std::sqrt(den);
}

std::vector<double> relative_error_field(const fem::Trajectory& predicted, const fem::Trajectory& truth,
                                         std::size_t n) {
    check_same_shape(predicted, truth);
    if (n >= truth.rows) fail(ErrorCategory::usage, "step " + std::to_string(n) + " beyond trajectory");
    const auto [lo, hi] = std::minmax_element(truth.data.begin(), truth.data.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) fail(ErrorCategory::domain, "relative error undefined: truth trajectory is constant");
    std::vector<double> out(truth.nodes);
    const auto p = predicted.row(n), t = truth.row(n);
    for (std::size_t v = 0; v < truth.nodes; ++v) out[v] = (p[v] - t[v]) / range;
    return out;
}

Summary summarize(std::span<const double> values) {
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

Evaluation evaluate(const mgn::Model& model, const std::vector<problems::ProblemSpec>& problems,
                    const std::vector<fem::Trajectory>& truths, std::vector<std::string> problem_ids) {
    if (problems.size() != truths.size())
        fail(ErrorCategory::usage, std::to_string(problems.size()) + " problems but " + std::to_string(truths.size()) +
                                       " reference trajectories");
    if (problems.empty()) fail(ErrorCategory::usage, "no problems to evaluate");
    Evaluation e;
    e.experiment = std::string(problems::to_string(problems[0].kind));
    if (problem_ids.empty())
        for (const auto& p : problems) problem_ids.push_back(std::to_string(p.index));
    e.problems = std::move(problem_ids);
    double sum = 0;
    for (std::size_t i = 0; i < problems.size(); ++i) {
        const auto pred = mgn::rollout(model, problems[i]);
        e.l2.push_back(normalized_l2(pred, truths[i]));
        sum += e.l2.back();
    }
    e.mean_l2 = sum / static_cast<double>(e.l2.size());
    return e;
}

EvalReport compare(std::vector<Evaluation> evaluations) {
    EvalReport r;
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < evaluations.size(); ++i)
        groups[{evaluations[i].experiment, evaluations[i].method}].push_back(i);
    for (const auto& [key, idx] : groups) {
        ReportRow row;
        row.experiment = key.first;
        row.method = key.second;
        std::vector<double> means;
        for (auto i : idx) {
            row.repetitions.push_back(evaluations[i].repetition);
            means.push_back(evaluations[i].mean_l2);
        }
        row.l2 = summarize(means);
        r.rows.push_back(std::move(row));
    }
    r.evaluations = std::move(evaluations);
    return r;
}

std::string summary_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "method,experiment,repetitions,mu_x1e3,sigma_x1e3\n";
    os << std::setprecision(6) << std::fixed;
    for (const auto& row : r.rows) {
        std::string reps;
        for (const auto& s : row.repetitions) reps += (reps.empty() ? "" : ";") + s;
        os << row.method << ',' << row.experiment << ',' << reps << ',' << row.l2.mean * 1e3 << ','
           << row.l2.stddev * 1e3 << '\n';
    }
    return os.str();
}

std::string detail_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "method,experiment,repetition,checkpoint,problem_set,problem,l2_x1e3\n";
    os << std::setprecision(6) << std::fixed;
    for (const auto& e : r.evaluations)
        for (std::size_t i = 0; i < e.l2.size(); ++i)
            os << e.method << ',' << e.experiment << ',' << e.repetition << ',' << e.checkpoint << ','
               << e.problem_set << ',' << e.problems[i] << ',' << e.l2[i] * 1e3 << '\n';
    return os.str();
}

std::string format_table(const EvalReport& r) {
    std::ostringstream os;
    os << std::left << std::setw(22) << "method" << std::setw(12) << "experiment" << std::setw(6) << "reps"
       << "L2 x1e3 (mu +- sigma)\n";
    for (const auto& row : r.rows) {
        std::ostringstream v;
        v << std::fixed << std::setprecision(2) << row.l2.mean * 1e3 << " +- " << row.l2.stddev * 1e3;
        os << std::left << std::setw(22) << row.method << std::setw(12) << row.experiment << std::setw(6)
           << row.l2.count << v.str() << '\n';
    }
    return os.str();
}

BenchResult bench(const mgn::Model& model, const problems::ProblemSpec& p, int repeats) {
    if (repeats < 1) fail(ErrorCategory::usage, "bench needs at least one repeat");
    using clock = std::chrono::steady_clock;
    BenchResult b;
    b.repeats = repeats;
    b.nodes = p.num_nodes();
    b.elements = p.mesh->num_elements();
    const auto tpl = mgn::make_template(p);
    double roll = 0, femt = 0;
    for (int r = 0; r < repeats; ++r) {
        auto t0 = clock::now();
        mgn::rollout(model, p, tpl, &b.model_calls);
        roll += std::chrono::duration<double>(clock::now() - t0).count();
    }
    const fem::FemSystem sys(p);
    for (int r = 0; r < repeats; ++r) {
        std::vector<double> T = p.initial;
        auto t0 = clock::now();
        for (int n = 1; n <= p.time.steps; ++n) T = sys.solve_step(T, n * p.time.dt);
        femt += std::chrono::duration<double>(clock::now() - t0).count();
    }
    b.rollout_seconds = roll / repeats;
    b.fem_seconds = femt / repeats;
    b.ratio = b.fem_seconds > 0 ? b.rollout_seconds / b.fem_seconds : 0.0;
    return b;
}

namespace {

// Perceptually ordered blue-green-yellow ramp.
std::string color(double s) {
    static const std::array<std::array<double, 3>, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                                             {94, 201, 98}, {253, 231, 37}}};
    s = std::clamp(std::isfinite(s) ? s : 0.0, 0.0, 1.0);
    const double x = s * (stops.size() - 1);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(x), stops.size() - 2);
    const double f = x - static_cast<double>(i);
    char buf[8];
    int c[3];
    for (int k = 0; k < 3; ++k)
        c[k] = static_cast<int>(std::lround(stops[i][static_cast<std::size_t>(k)] * (1 - f) +
                                            stops[i + 1][static_cast<std::size_t>(k)] * f));
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c[0], c[1], c[2]);
    return buf;
}

struct Polygon {
    std::vector<std::array<double, 2>> pts;
    double value = 0.0;
};

std::vector<Polygon> planar_polygons(const mesh::Mesh& m, std::span<const double> f, double cut_z) {
    std::vector<Polygon> out;
    if (m.dim == 2) {
        for (std::size_t e = 0; e < m.num_elements(); ++e) {
            Polygon p;
            for (int k = 0; k < 3; ++k) {
                const auto v = static_cast<std::size_t>(m.elements[e][static_cast<std::size_t>(k)]);
                p.pts.push_back({m.nodes[v][0], m.nodes[v][1]});
                p.value += f[v] / 3.0;
            }
            out.push_back(std::move(p));
        }
        return out;
    }
    // Cut every tetrahedron with the plane z = cut_z, interpolating linearly.
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        const auto& el = m.elements[e];
        std::array<double, 4> d{};
        for (int k = 0; k < 4; ++k) d[static_cast<std::size_t>(k)] = m.nodes[static_cast<std::size_t>(el[static_cast<std::size_t>(k)])][2] - cut_z;
        Polygon p;
        std::vector<double> vals;
        for (int a = 0; a < 4; ++a) {
            const auto ia = static_cast<std::size_t>(el[static_cast<std::size_t>(a)]);
            if (d[static_cast<std::size_t>(a)] == 0.0) {
                p.pts.push_back({m.nodes[ia][0], m.nodes[ia][1]});
                vals.push_back(f[ia]);
            }
            for (int b = a + 1; b < 4; ++b) {
                const double da = d[static_cast<std::size_t>(a)], db = d[static_cast<std::size_t>(b)];
                if (!((da < 0 && db > 0) || (da > 0 && db < 0))) continue;
                const auto ib = static_cast<std::size_t>(el[static_cast<std::size_t>(b)]);
                const double s = da / (da - db);
                p.pts.push_back({m.nodes[ia][0] + s * (m.nodes[ib][0] - m.nodes[ia][0]),
                                 m.nodes[ia][1] + s * (m.nodes[ib][1] - m.nodes[ia][1])});
                vals.push_back(f[ia] + s * (f[ib] - f[ia]));
            }
        }
        if (p.pts.size() < 3) continue;
        double cx = 0, cy = 0;
        for (const auto& q : p.pts) {
            cx += q[0];
            cy += q[1];
        }
        cx /= static_cast<double>(p.pts.size());
        cy /= static_cast<double>(p.pts.size());
        std::sort(p.pts.begin(), p.pts.end(), [&](const auto& a, const auto& b) {
            return std::atan2(a[1] - cy, a[0] - cx) < std::atan2(b[1] - cy, b[0] - cx);
        });
        for (double v : vals) p.value += v / static_cast<double>(vals.size());
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace

std::string plot_field_svg(const mesh::Mesh& mesh, std::span<const double> field, const PlotOptions& options) {
    if (field.size() != mesh.num_nodes())
        fail(ErrorCategory::shape, "field has " + std::to_string(field.size()) + " values for " +
                                       std::to_string(mesh.num_nodes()) + " nodes");
    const auto polys = planar_polygons(mesh, field, options.cut_z);
    if (polys.empty()) fail(ErrorCategory::usage, "nothing to draw (cut plane misses the mesh?)");
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& p : polys)
        for (const auto& q : p.pts) {
            xmin = std::min(xmin, q[0]);
            xmax = std::max(xmax, q[0]);
            ymin = std::min(ymin, q[1]);
            ymax = std::max(ymax, q[1]);
        }
    const auto [fmin_it, fmax_it] = std::minmax_element(field.begin(), field.end());
    const double fmin = *fmin_it, fmax = *fmax_it;
    const double span = fmax > fmin ? fmax - fmin : 1.0;

    const double W = options.width, margin = 20, legend = 60;
    const double sx = (W - 2 * margin) / std::max(xmax - xmin, 1e-300);
    const double plot_h = std::max(40.0, (ymax - ymin) * sx);
    const double H = plot_h + 2 * margin + legend;
    std::ostringstream os;
    os << std::setprecision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!options.title.empty())
        os << "<text x=\"" << margin << "\" y=\"14\" font-size=\"12\" font-family=\"sans-serif\">" << options.title
           << "</text>\n";
    for (const auto& p : polys) {
        os << "<polygon points=\"";
        for (const auto& q : p.pts)
            os << margin + (q[0] - xmin) * sx << ',' << margin + plot_h - (q[1] - ymin) * sx << ' ';
        const std::string c = color((p.value - fmin) / span);
        os << "\" fill=\"" << c << "\" stroke=\"" << c << "\" stroke-width=\"0.3\"/>\n";
    }
    const double ly = H - legend + 20;
    const int steps = 64;
    const double bw = (W - 2 * margin) / steps;
    for (int i = 0; i < steps; ++i)
        os << "<rect x=\"" << margin + i * bw << "\" y=\"" << ly << "\" width=\"" << bw + 0.5
           << "\" height=\"12\" fill=\"" << color((i + 0.5) / steps) << "\"/>\n";
    os << "<text x=\"" << margin << "\" y=\"" << ly + 28 << "\" font-size=\"12\" font-family=\"sans-serif\">min "
       << fmin << "</text>\n";
    os << "<text x=\"" << W - margin << "\" y=\"" << ly + 28
       << "\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"end\">max " << fmax << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

void plot_field(const mesh::Mesh& mesh, std::span<const double> field, const std::filesystem::path& path,
                const PlotOptions& options) {
    const std::string svg = plot_field_svg(mesh, field, options);
    std::ofstream os(path);
    if (!os) fail(ErrorCategory::io, "cannot write " + path.string());
    os << svg;
}

} // namespace nfem::eval
