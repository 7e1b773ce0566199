#include "cardioem/config.hpp"
#include "cardioem/orchestrator.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace cardioem;

namespace {

// Accepts a dict (serialized through the json module) or JSON text.
SimConfig to_config(const py::object& obj) {
    std::string text;
    if (py::isinstance<py::str>(obj))
        text = obj.cast<std::string>();
    else
        text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
    SimConfig c = parse_config(text);
    validate(c);
    return c;
}

py::object to_dict(const std::string& json_text) { return py::module_::import("json").attr("loads")(json_text); }

py::array_t<double> column_array(std::size_t rows, std::size_t cols) {
    return py::array_t<double>({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cardiac electromechanics simulator";
    m.attr("__version__") = "1.0.0";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

    m.def("default_config", [] { return to_dict(dump_config(SimConfig{})); },
          "Complete default configuration as a dict.");
    m.def("normalize_config", [](const py::object& c) { return to_dict(dump_config(to_config(c))); },
          py::arg("config"), "Validate a configuration and return it with every default filled in.");
    m.def("postprocess_run",
          [](const std::string& dir) {
              const Metrics mt = postprocess_run(dir);
              return std::map<std::string, std::string>(mt.begin(), mt.end());
          },
          py::arg("run_dir"), "Recompute metrics.txt and the per-cycle tables of a run directory.");

    py::class_<Simulation>(m, "Simulation")
        .def(py::init([](const py::object& c) { return std::make_unique<Simulation>(to_config(c)); }),
             py::arg("config"))
        .def("open_outputs", &Simulation::open_outputs, py::arg("run_dir"))
        .def(
            "step",
            [](Simulation& s, int n) {
                py::gil_scoped_release release;
                for (int k = 0; k < n; ++k) s.step();
            },
            py::arg("n") = 1, "Advance n macro steps.")
        .def(
            "advance_to",
            [](Simulation& s, double t) {
                py::gil_scoped_release release;
                while (s.time() < t - 1e-12) s.step();
            },
            py::arg("t"))
        .def("run", [](Simulation& s) {
            py::gil_scoped_release release;
            s.run();
        })
        .def_property_readonly("time", &Simulation::time)
        .def_property_readonly("macro_steps", &Simulation::macro_steps)
        .def_property_readonly("macro_dt", &Simulation::macro_dt)
        .def_property_readonly("p_lv", &Simulation::p_lv)
        .def_property_readonly("physics_hash", &Simulation::physics_hash)
        .def_property_readonly("circulation",
                               [](const Simulation& s) {
                                   py::dict d;
                                   const auto& names = circ_state_names();
                                   for (std::size_t i = 0; i < names.size(); ++i) d[py::str(names[i])] = s.circulation()[i];
                                   return d;
                               })
        .def_property_readonly("total_blood_volume",
                               [](const Simulation& s) {
                                   return total_blood_volume(s.circulation(), s.config().circulation);
                               })
        .def("potential",
             [](const Simulation& s) {
                 if (!s.ep()) return py::array_t<double>(0);
                 const Vector& u = s.ep()->u();
                 return py::array_t<double>(u.size(), u.data());
             })
        .def("probe_traces",
             [](const Simulation& s) {
                 // Columns: t, u_0, ca_0, u_1, ca_1, ...
                 const auto& rows = s.probe_rows();
                 const std::size_t np = s.probe_vertices().size();
                 auto a = column_array(rows.size(), 1 + 2 * np);
                 auto r = a.mutable_unchecked<2>();
                 for (std::size_t i = 0; i < rows.size(); ++i) {
                     r(i, 0) = rows[i].t;
                     for (std::size_t j = 0; j < np; ++j) {
                         r(i, 1 + 2 * j) = rows[i].u[j];
                         r(i, 2 + 2 * j) = rows[i].ca[j];
                     }
                 }
                 return a;
             })
        .def("tension",
             [](const Simulation& s) {
                 // Columns: t, Ta_min, Ta_avg, Ta_max.
                 const auto& ts = s.tension();
                 auto a = column_array(ts.size(), 4);
                 auto r = a.mutable_unchecked<2>();
                 for (std::size_t i = 0; i < ts.size(); ++i) {
                     r(i, 0) = ts[i].t;
                     r(i, 1) = ts[i].min;
                     r(i, 2) = ts[i].avg;
                     r(i, 3) = ts[i].max;
                 }
                 return a;
             })
        .def("records",
             [](const Simulation& s) {
                 // Columns: t, newton_iterations, multiplier_iterations, p_lv, v3d, residual.
                 const auto& rs = s.records();
                 auto a = column_array(rs.size(), 6);
                 auto r = a.mutable_unchecked<2>();
                 for (std::size_t i = 0; i < rs.size(); ++i) {
                     r(i, 0) = rs[i].t;
                     r(i, 1) = rs[i].newton_iterations;
                     r(i, 2) = rs[i].multiplier_iterations;
                     r(i, 3) = rs[i].p_lv;
                     r(i, 4) = rs[i].v3d;
                     r(i, 5) = rs[i].residual;
                 }
                 return a;
             })
        .def("save_checkpoint", &Simulation::save_checkpoint_file, py::arg("path"))
        .def("load_checkpoint", &Simulation::load_checkpoint_file, py::arg("path"));
}
