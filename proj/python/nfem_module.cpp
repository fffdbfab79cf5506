// Python bindings for problem sampling, reference solves, surrogate models,
// training and evaluation. Arrays cross the boundary as numpy float64.

#include "nfem/error.hpp"
#include "nfem/eval.hpp"
#include "nfem/fem.hpp"
#include "nfem/mesh.hpp"
#include "nfem/mgn.hpp"
#include "nfem/problems.hpp"
#include "nfem/training.hpp"

#include "json.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace nfem;
using json = nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const fem::Trajectory& t) {
    Array a({t.rows, t.nodes});
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

Array to_array(const std::vector<double>& v) {
    Array a(v.size());
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

fem::Trajectory to_traj(const Array& a) {
    if (a.ndim() != 2) fail(ErrorCategory::shape, "trajectory must be a 2D array (steps + 1, nodes)");
    fem::Trajectory t;
    t.rows = static_cast<std::size_t>(a.shape(0));
    t.nodes = static_cast<std::size_t>(a.shape(1));
    t.data.assign(a.data(), a.data() + a.size());
    return t;
}

std::vector<double> to_vector(const Array& a, std::size_t expected) {
    if (a.ndim() != 1 || static_cast<std::size_t>(a.size()) != expected)
        fail(ErrorCategory::shape, "expected a 1D array of length " + std::to_string(expected));
    return {a.data(), a.data() + a.size()};
}

mgn::ModelConfig model_config(const py::dict& overrides) {
    json j = json::parse(mgn::config_to_json({}));
    for (const auto& [k, v] : overrides) {
        const auto key = py::str(k).cast<std::string>();
        if (!j.contains(key)) fail(ErrorCategory::config, "unknown model option '" + key + "'");
        if (py::isinstance<py::bool_>(v)) j[key] = v.cast<bool>();
        else if (py::isinstance<py::int_>(v)) j[key] = v.cast<long>();
        else if (py::isinstance<py::float_>(v)) j[key] = v.cast<double>();
        else j[key] = py::str(v).cast<std::string>();
    }
    auto c = mgn::config_from_json(j.dump());
    c.validate();
    return c;
}

// nfem::Error surfaces as NfemError with a `category` attribute.
PyObject* g_error = nullptr;

} // namespace

PYBIND11_MODULE(nfem, m) {
    m.doc() = "neural finite element workbench";

    g_error = PyErr_NewException("nfem.NfemError", PyExc_RuntimeError, nullptr);
    m.attr("NfemError") = py::handle(g_error);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(g_error)(e.what());
            exc.attr("category") = std::string(category_name(e.category()));
            PyErr_SetObject(g_error, exc.ptr());
        }
    });

    py::class_<problems::ProblemSpec>(m, "Problem")
        .def_property_readonly("kind", [](const problems::ProblemSpec& p) { return std::string(to_string(p.kind)); })
        .def_property_readonly("experiment",
                               [](const problems::ProblemSpec& p) { return std::string(to_string(p.experiment)); })
        .def_readonly("index", &problems::ProblemSpec::index)
        .def_property_readonly("num_nodes", &problems::ProblemSpec::num_nodes)
        .def_property_readonly("num_elements", [](const problems::ProblemSpec& p) { return p.mesh->num_elements(); })
        .def_property_readonly("dim", [](const problems::ProblemSpec& p) { return p.mesh->dim; })
        .def_property_readonly("steps", [](const problems::ProblemSpec& p) { return p.time.steps; })
        .def_property_readonly("dt", [](const problems::ProblemSpec& p) { return p.time.dt; })
        .def_property_readonly("nodes",
                               [](const problems::ProblemSpec& p) {
                                   const auto& m = *p.mesh;
                                   Array a({m.num_nodes(), std::size_t{3}});
                                   for (std::size_t v = 0; v < m.num_nodes(); ++v)
                                       for (int d = 0; d < 3; ++d) a.mutable_at(v, d) = m.nodes[v][d];
                                   return a;
                               })
        .def_property_readonly("elements",
                               [](const problems::ProblemSpec& p) {
                                   const auto& m = *p.mesh;
                                   const auto k = static_cast<std::size_t>(m.nodes_per_element());
                                   py::array_t<int> a({m.num_elements(), k});
                                   for (std::size_t e = 0; e < m.num_elements(); ++e)
                                       for (std::size_t j = 0; j < k; ++j) a.mutable_at(e, j) = m.elements[e][j];
                                   return a;
                               })
        .def_property_readonly("initial", [](const problems::ProblemSpec& p) { return to_array(p.initial); })
        .def_property_readonly("dirichlet_mask",
                               [](const problems::ProblemSpec& p) {
                                   std::vector<double> mask(p.num_nodes());
                                   for (std::size_t v = 0; v < mask.size(); ++v)
                                       mask[v] = p.mesh->node_tags[v] == mesh::NodeTag::dirichlet ? 1.0 : 0.0;
                                   return to_array(mask);
                               })
        .def("to_json", &problems::problem_to_json)
        .def("__repr__", [](const problems::ProblemSpec& p) {
            return "<Problem " + std::string(to_string(p.kind)) + " #" + std::to_string(p.index) + " nodes " +
                   std::to_string(p.num_nodes()) + " elements " + std::to_string(p.mesh->num_elements()) + ">";
        });

    m.def(
        "sample_problem",
        [](const std::string& kind, std::uint64_t geometry_seed, std::uint64_t field_seed, std::size_t index) {
            return problems::sample_problem(problems::problem_kind_from_string(kind), geometry_seed, field_seed, index);
        },
        py::arg("kind"), py::arg("geometry_seed") = 0, py::arg("field_seed") = 0, py::arg("index") = 0);
    m.def("read_problem", [](const std::string& path) { return problems::read_problem(path); }, py::arg("path"));
    m.def("diffusivity", [](double vf) { return problems::diffusivity(vf); }, py::arg("vf"));
    m.def(
        "source_term", [](double T, double t, double vf) { return problems::source_term(T, t, vf); }, py::arg("T"),
        py::arg("t"), py::arg("vf"));

    m.def(
        "solve", [](const problems::ProblemSpec& p) { return to_array(fem::solve_trajectory(p)); }, py::arg("problem"),
        "reference trajectory, shape (steps + 1, nodes)");
    m.def(
        "residual",
        [](const problems::ProblemSpec& p, const Array& T_new, const Array& T_old, double t_new) {
            const fem::FemSystem sys(p);
            return to_array(sys.residual(to_vector(T_new, p.num_nodes()), to_vector(T_old, p.num_nodes()), t_new));
        },
        py::arg("problem"), py::arg("T_new"), py::arg("T_old"), py::arg("t_new"),
        "implicit Euler residual at the free test functions");
    m.def(
        "read_trajectory", [](const std::string& path) { return to_array(fem::read_trajectory(path)); },
        py::arg("path"));
    m.def(
        "write_trajectory", [](const Array& a, const std::string& path) { fem::write_trajectory(to_traj(a), path); },
        py::arg("trajectory"), py::arg("path"));

    m.def("decoder_outputs", [](int tbs, int latent) {
        return mgn::conv_decoder_outputs(mgn::conv_decoder_shape(tbs, latent), latent);
    }, py::arg("tbs"), py::arg("latent") = 128);

    py::class_<mgn::Model>(m, "Model")
        .def(py::init([](const py::dict& config, std::uint64_t seed) { return mgn::Model(model_config(config), seed); }),
             py::arg("config") = py::dict(), py::arg("seed") = 0)
        .def_property_readonly("config",
                               [](const mgn::Model& mo) {
                                   return py::module_::import("json").attr("loads")(mgn::config_to_json(mo.config()));
                               })
        .def("parameter_count", &mgn::Model::parameter_count)
        .def(
            "rollout",
            [](const mgn::Model& mo, const problems::ProblemSpec& p) {
                py::gil_scoped_release release;
                auto t = mgn::rollout(mo, p);
                py::gil_scoped_acquire acquire;
                return to_array(t);
            },
            py::arg("problem"))
        .def(
            "save", [](const mgn::Model& mo, const std::string& path, const std::string& extra) {
                mgn::save_checkpoint(mo, path, extra);
            },
            py::arg("path"), py::arg("extra") = "{}");

    m.def(
        "load_checkpoint",
        [](const std::string& path) {
            std::string extra;
            auto mo = mgn::load_checkpoint(path, &extra);
            return py::make_tuple(std::move(mo), py::module_::import("json").attr("loads")(extra));
        },
        py::arg("path"), "returns (model, extra metadata dict)");

    m.def(
        "train",
        [](const std::string& config_text, const std::function<void(py::dict)>& progress) {
            const auto c = training::parse_config(config_text);
            const auto data = training::make_dataset(c);
            training::Progress cb;
            if (progress) {
                cb = [&](const training::MetricsRow& r) {
                    py::gil_scoped_acquire acquire;
                    py::dict d;
                    d["epoch"] = r.epoch;
                    d["step"] = r.step;
                    d["lr"] = r.lr;
                    d["train_loss"] = r.train_loss;
                    d["val_l2"] = r.val_l2;
                    progress(d);
                };
            }
            training::TrainResult r;
            {
                py::gil_scoped_release release;
                r = training::train(c, data, cb);
            }
            py::list rows;
            for (const auto& row : r.metrics) {
                py::dict d;
                d["epoch"] = row.epoch;
                d["step"] = row.step;
                d["lr"] = row.lr;
                d["train_loss"] = row.train_loss;
                d["val_l2"] = row.val_l2;
                rows.append(d);
            }
            py::dict out;
            out["model"] = std::move(*r.best);
            out["metrics"] = rows;
            out["best_val_l2"] = r.best_val_l2;
            out["best_epoch"] = r.best_epoch;
            out["seconds"] = r.seconds;
            return out;
        },
        py::arg("config"), py::arg("progress") = nullptr,
        "train from key = value config text; returns dict with model, metrics, best_val_l2");
    m.def("config_keys", &training::config_keys);

    m.def(
        "normalized_l2",
        [](const Array& pred, const Array& truth) { return eval::normalized_l2(to_traj(pred), to_traj(truth)); },
        py::arg("predicted"), py::arg("truth"));
    m.def(
        "relative_error_field",
        [](const Array& pred, const Array& truth, std::size_t n) {
            return to_array(eval::relative_error_field(to_traj(pred), to_traj(truth), n));
        },
        py::arg("predicted"), py::arg("truth"), py::arg("step"));
    m.def(
        "bench",
        [](const mgn::Model& mo, const problems::ProblemSpec& p, int repeats) {
            const auto b = eval::bench(mo, p, repeats);
            py::dict d;
            d["rollout_seconds"] = b.rollout_seconds;
            d["fem_seconds"] = b.fem_seconds;
            d["ratio"] = b.ratio;
            d["model_calls"] = b.model_calls;
            d["nodes"] = b.nodes;
            d["elements"] = b.elements;
            return d;
        },
        py::arg("model"), py::arg("problem"), py::arg("repeats") = 1);
    m.def(
        "plot_svg",
        [](const problems::ProblemSpec& p, const Array& field, const std::string& title) {
            eval::PlotOptions o;
            o.title = title;
            return eval::plot_field_svg(*p.mesh, to_vector(field, p.num_nodes()), o);
        },
        py::arg("problem"), py::arg("field"), py::arg("title") = "");
}
