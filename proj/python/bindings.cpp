// Python bindings for the main maskclu operations. Point sets are (n, 3)
// float64 arrays; matrices come back as 2-D numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "maskclu/checkpoint.hpp"
#include "maskclu/config.hpp"
#include "maskclu/dataset.hpp"
#include "maskclu/errors.hpp"
#include "maskclu/gradcheck.hpp"
#include "maskclu/model.hpp"
#include "maskclu/probe.hpp"
#include "maskclu/trainer.hpp"

namespace py = pybind11;
using namespace maskclu;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Array& a) {
    if (a.ndim() != 2 || a.shape(1) != 3) {
        throw DimensionError("expected an (n, 3) array of points");
    }
    const auto r = a.unchecked<2>();
    std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
        out[i] = {r(i, 0), r(i, 1), r(i, 2)};
    }
    return out;
}

Array from_points(const std::vector<Vec3>& pts) {
    Array out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            w(i, c) = pts[i][c];
        }
    }
    return out;
}

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) {
        throw DimensionError("expected a 2-D array");
    }
    const std::size_t n = a.shape(0), m = a.shape(1);
    return Tensor::from({n, m}, std::vector<double>(a.data(), a.data() + n * m));
}

Array from_tensor(const Tensor& t) {
    Array out({static_cast<py::ssize_t>(t.rows()), static_cast<py::ssize_t>(t.cols())});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict record_dict(const MetricsRecord& r) {
    py::dict d;
    d["step"] = r.step;
    d["l_ass"] = r.l_ass;
    d["l_cts"] = r.l_cts;
    d["l_contras"] = r.l_contras;
    d["l_total"] = r.l_total;
    d["sinkhorn_iters"] = r.sinkhorn_iters;
    d["sinkhorn_marginal_err"] = r.sinkhorn_marginal_err;
    d["grad_norm"] = r.grad_norm;
    d["lr"] = r.lr;
    d["wall_ms"] = r.wall_ms;
    return d;
}

std::vector<PointCloud> to_clouds(const std::vector<Array>& clouds, const std::vector<int>& labels) {
    if (!labels.empty() && labels.size() != clouds.size()) {
        throw DimensionError("labels must match the number of clouds");
    }
    std::vector<PointCloud> out;
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        PointCloud c{to_points(clouds[i]), std::nullopt};
        if (!labels.empty()) {
            c.label = labels[i];
        }
        out.push_back(std::move(c));
    }
    return out;
}

/// Trainer plus the config it was built with, owning its data.
class Session {
  public:
    Session(const std::string& config_json, const std::vector<Array>& clouds)
        : cfg_(config_from_json(config_json)),
          trainer_(cfg_, clouds.empty() ? clouds_of(four_class_dataset(cfg_.clouds_per_class, cfg_.noise, cfg_.seed,
                                                                       cfg_.points_per_cloud))
                                        : to_clouds(clouds, {})) {}

    py::list train() {
        py::list out;
        for (const auto& r : trainer_.run()) {
            out.append(record_dict(r));
        }
        return out;
    }

    py::dict probe(const std::vector<Array>& clouds, const std::vector<int>& labels, std::size_t epochs,
                   std::uint64_t seed, bool shuffle) {
        const auto data = to_clouds(clouds, labels);
        const ProbeResult r = linear_probe(trainer_.model(), cfg_, data, {epochs, 0.01, seed, shuffle});
        py::dict d;
        d["accuracy"] = r.accuracy;
        d["train_accuracy"] = r.train_accuracy;
        d["train_count"] = r.train_count;
        d["test_count"] = r.test_count;
        d["classes"] = r.classes;
        return d;
    }

    Array cluster(const Array& cloud, std::uint64_t seed) {
        NoGradGuard no_grad;
        const PatchSet p = build_patches(PointCloud{to_points(cloud), std::nullopt}, cfg_.patches, cfg_.k_patch, seed);
        return from_tensor(cluster_cloud(trainer_.model(), cfg_, p));
    }

    void save(const std::string& path) const { save_checkpoint(path, trainer_.model().parameters()); }
    void load(const std::string& path) { load_checkpoint(path, trainer_.model().parameters()); }
    std::string config() const { return to_json(cfg_); }

  private:
    TrainConfig cfg_;
    mutable Trainer trainer_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "maskclu core operations";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<SizeError>(m, "SizeError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "farthest_point_sample",
        [](const Array& pts, std::size_t n, std::uint64_t seed) {
            return farthest_point_sample(PointCloud{to_points(pts), std::nullopt}, n, seed);
        },
        py::arg("points"), py::arg("n"), py::arg("seed") = 0);

    m.def(
        "knn",
        [](const Array& queries, const Array& reference, std::size_t k) {
            const auto q = to_points(queries);
            const auto flat = knn(q, to_points(reference), k);
            py::array_t<std::int64_t> out({static_cast<py::ssize_t>(q.size()), static_cast<py::ssize_t>(k)});
            std::copy(flat.begin(), flat.end(), out.mutable_data());
            return out;
        },
        py::arg("queries"), py::arg("reference"), py::arg("k"));

    m.def(
        "chamfer",
        [](const Array& a, const Array& b) { return chamfer(to_points(a), to_tensor(b)).item(); }, py::arg("a"),
        py::arg("b"));

    m.def(
        "sinkhorn",
        [](const Array& points, const Array& targets, double epsilon, std::size_t max_iters, double marginal_tol,
           bool epsilon_scaling) {
            const SinkhornResult r =
                sinkhorn_assign(to_points(points), to_points(targets), {epsilon, max_iters, marginal_tol, epsilon_scaling});
            py::dict d;
            d["plan"] = from_tensor(r.plan);
            d["converged"] = r.converged;
            d["iterations"] = r.iterations;
            d["marginal_error"] = r.marginal_error;
            return d;
        },
        py::arg("points"), py::arg("targets"), py::arg("epsilon") = 5e-4, py::arg("max_iters") = 200,
        py::arg("marginal_tol") = 1e-6, py::arg("epsilon_scaling") = true);

    m.def(
        "build_graph",
        [](const Array& centers, const Array& features, std::size_t k_graph) {
            return from_tensor(build_graph(to_points(centers), to_tensor(features), k_graph).weights);
        },
        py::arg("centers"), py::arg("features"), py::arg("k_graph"));

    m.def(
        "generate_dataset",
        [](const std::vector<std::pair<std::string, std::size_t>>& shapes, double noise, std::uint64_t seed,
           std::size_t points) {
            std::vector<DatasetRequest> req;
            for (const auto& [g, c] : shapes) {
                req.push_back({g, c});
            }
            py::list clouds;
            std::vector<int> labels;
            for (const auto& s : generate_dataset(req, noise, seed, points)) {
                clouds.append(from_points(s.cloud.points));
                labels.push_back(s.label);
            }
            return py::make_tuple(clouds, labels);
        },
        py::arg("shapes"), py::arg("noise") = 0.01, py::arg("seed") = 0, py::arg("points") = 1024);

    m.def(
        "gradcheck",
        [](std::uint64_t seed) {
            py::list out;
            for (const auto& r : run_gradcheck_suite(seed)) {
                py::dict d;
                d["name"] = r.name;
                d["max_error"] = r.max_error;
                d["worst_input"] = r.worst_input;
                d["passed"] = r.passed;
                out.append(d);
            }
            return out;
        },
        py::arg("seed") = 0);

    m.def(
        "default_config", [] { return to_json(TrainConfig{}); }, "Default configuration as a JSON string");

    py::class_<Session>(m, "Session")
        .def(py::init<const std::string&, const std::vector<Array>&>(), py::arg("config_json"),
             py::arg("clouds") = std::vector<Array>{})
        .def("train", &Session::train)
        .def("probe", &Session::probe, py::arg("clouds"), py::arg("labels"), py::arg("epochs") = 300,
             py::arg("seed") = 0, py::arg("shuffle_labels") = false)
        .def("cluster", &Session::cluster, py::arg("cloud"), py::arg("seed") = 0)
        .def("save", &Session::save)
        .def("load", &Session::load)
        .def_property_readonly("config", &Session::config);
}
