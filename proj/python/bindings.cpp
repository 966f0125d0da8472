#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "spinereg/error.hpp"
#include "spinereg/metrics.hpp"
#include "spinereg/pipeline.hpp"
#include "spinereg/records.hpp"
#include "spinereg/registration.hpp"
#include "spinereg/synth.hpp"
#include "spinereg/volume_io.hpp"

namespace py = pybind11;
using namespace spinereg;

namespace {

// (N, 3) float array <-> 3xN point matrix.
PointSet to_points(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(1) != 3) throw PreconditionError("expected an (N, 3) array of points");
    PointSet P(3, a.shape(0));
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (int k = 0; k < 3; ++k) P(k, i) = r(i, k);
    return P;
}

py::array_t<double> vertices_array(const TriangleMesh& m) {
    py::array_t<double> out({static_cast<py::ssize_t>(m.vertices.size()), py::ssize_t{3}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
        for (int k = 0; k < 3; ++k) w(i, k) = m.vertices[i][k];
    return out;
}

py::array_t<std::int32_t> triangles_array(const TriangleMesh& m) {
    py::array_t<std::int32_t> out({static_cast<py::ssize_t>(m.triangles.size()), py::ssize_t{3}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < m.triangles.size(); ++i)
        for (int k = 0; k < 3; ++k) w(i, k) = m.triangles[i][k];
    return out;
}

TriangleMesh mesh_from_arrays(const py::array_t<double, py::array::c_style | py::array::forcecast>& v,
                              const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& f) {
    const PointSet P = to_points(v);
    if (f.ndim() != 2 || f.shape(1) != 3) throw PreconditionError("expected an (F, 3) array of triangles");
    TriangleMesh m;
    for (Eigen::Index i = 0; i < P.cols(); ++i) m.vertices.emplace_back(P.col(i));
    auto r = f.unchecked<2>();
    for (py::ssize_t i = 0; i < f.shape(0); ++i) m.triangles.push_back({r(i, 0), r(i, 1), r(i, 2)});
    m.validate();
    return m;
}

// Voxels exposed as a (nx, ny, nz) array, first index fastest like the file layout.
py::array_t<std::uint16_t> labels_array(const LabelVolume& vol) {
    const auto& d = vol.geometry().dims;
    const std::vector<py::ssize_t> shape{d[0], d[1], d[2]};
    const std::vector<py::ssize_t> strides{2, 2 * d[0], 2 * d[0] * d[1]};
    return py::array_t<std::uint16_t>(shape, strides, vol.voxels().data());
}

LabelVolume volume_from_array(const py::array_t<std::uint16_t, py::array::f_style | py::array::forcecast>& a,
                              const Vec3& spacing, const Vec3& origin, const Mat3& direction) {
    if (a.ndim() != 3) throw PreconditionError("expected a 3-D label array");
    VolumeGeometry g;
    g.dims = {a.shape(0), a.shape(1), a.shape(2)};
    g.spacing = spacing;
    g.origin = origin;
    g.direction = direction;
    return LabelVolume(g, std::vector<LabelVolume::Label>(a.data(), a.data() + a.size()));
}

}  // namespace

PYBIND11_MODULE(_spinereg, m) {
    m.doc() = "Per-vertebra GMM rigid registration of longitudinal spine label volumes.";

    auto& base_exc = py::register_exception<Error>(m, "SpineregError");
    py::register_exception<IoError>(m, "IoError", base_exc.ptr());
    py::register_exception<PreconditionError>(m, "PreconditionError", base_exc.ptr());
    py::register_exception<DegenerateError>(m, "DegenerateError", base_exc.ptr());

    py::class_<RigidTransform>(m, "RigidTransform")
        .def(py::init<>())
        .def(py::init<const Mat3&, const Vec3&, double>(), py::arg("rotation"), py::arg("translation"),
             py::arg("scale") = 1.0)
        .def_static("from_axis_angle", &RigidTransform::from_axis_angle, py::arg("axis"), py::arg("angle"),
                    py::arg("translation") = Vec3::Zero())
        .def_property_readonly("rotation", [](const RigidTransform& T) { return T.rotation(); })
        .def_property_readonly("translation", [](const RigidTransform& T) { return T.translation(); })
        .def_property_readonly("scale", &RigidTransform::scale)
        .def("apply", [](const RigidTransform& T, const py::array_t<double, py::array::c_style | py::array::forcecast>& pts) {
            PointSet P = to_points(pts);
            for (Eigen::Index i = 0; i < P.cols(); ++i) P.col(i) = T(Vec3(P.col(i)));
            Eigen::MatrixXd out = P.transpose();
            return out;
        })
        .def("inverse", [](const RigidTransform& T) { return invert(T); })
        .def("__matmul__", [](const RigidTransform& a, const RigidTransform& b) { return compose(a, b); })
        .def("__repr__", [](const RigidTransform& T) {
            return "RigidTransform(t=[" + std::to_string(T.translation().x()) + ", " +
                   std::to_string(T.translation().y()) + ", " + std::to_string(T.translation().z()) +
                   "], s=" + std::to_string(T.scale()) + ")";
        });
    m.def("rotation_angle_between", &rotation_angle_between);

    py::class_<TriangleMesh>(m, "TriangleMesh")
        .def(py::init(&mesh_from_arrays), py::arg("vertices"), py::arg("triangles"))
        .def_property_readonly("vertices", &vertices_array)
        .def_property_readonly("triangles", &triangles_array)
        .def("is_watertight", &is_watertight)
        .def("enclosed_volume", &enclosed_volume)
        .def("surface_area", &surface_area)
        .def("transformed", &apply_transform_to_mesh)
        .def("write_ply", [](const TriangleMesh& mesh, const std::filesystem::path& p) { write_ply(mesh, p); });
    m.def("read_ply", &read_ply);
    m.def("make_icosphere", &make_icosphere, py::arg("level"), py::arg("radius"), py::arg("center") = Vec3::Zero());

    py::class_<LabelVolume>(m, "LabelVolume")
        .def(py::init(&volume_from_array), py::arg("labels"), py::arg("spacing") = Vec3::Ones(),
             py::arg("origin") = Vec3::Zero(), py::arg("direction") = Mat3::Identity())
        .def_property_readonly("labels_array", &labels_array)
        .def_property_readonly("dims", [](const LabelVolume& v) { return v.geometry().dims; })
        .def_property_readonly("spacing", [](const LabelVolume& v) { return v.geometry().spacing; })
        .def_property_readonly("origin", [](const LabelVolume& v) { return v.geometry().origin; })
        .def_property_readonly("direction", [](const LabelVolume& v) { return v.geometry().direction; })
        .def("labels", &LabelVolume::labels)
        .def("count", &LabelVolume::count);
    m.def("read_volume", &read_volume);
    m.def("write_volume", &write_volume);

    py::class_<DecimationParams>(m, "DecimationParams")
        .def(py::init<>())
        .def_readwrite("target_triangles", &DecimationParams::target_triangles)
        .def_readwrite("max_geometric_error", &DecimationParams::max_geometric_error)
        .def_readwrite("max_edge_length", &DecimationParams::max_edge_length);
    m.def("label_surface", &label_surface, py::arg("volume"), py::arg("label"),
          py::arg("params") = DecimationParams{});
    m.def("marching_cubes", [](const LabelVolume& vol, int label) {
        return marching_cubes(extract_label(vol, static_cast<LabelVolume::Label>(label)));
    });
    m.def("decimate", &decimate, py::arg("mesh"), py::arg("params") = DecimationParams{});

    py::class_<GmmConfig>(m, "GmmConfig")
        .def(py::init<>())
        .def_readwrite("outlier_weight", &GmmConfig::outlier_weight)
        .def_readwrite("max_iterations", &GmmConfig::max_iterations)
        .def_readwrite("rel_tolerance", &GmmConfig::rel_tolerance)
        .def_readwrite("estimate_scale", &GmmConfig::estimate_scale)
        .def_readwrite("prealign_centroids", &GmmConfig::prealign_centroids)
        .def_readwrite("sigma2_floor", &GmmConfig::sigma2_floor)
        .def_readwrite("threads", &GmmConfig::threads);
    py::class_<RegistrationResult>(m, "RegistrationResult")
        .def_readonly("transform", &RegistrationResult::transform)
        .def_readonly("sigma2", &RegistrationResult::sigma2)
        .def_readonly("iterations", &RegistrationResult::iterations)
        .def_readonly("converged", &RegistrationResult::converged)
        .def_readonly("objective_history", &RegistrationResult::objective_history)
        .def_readonly("weighted_objective_history", &RegistrationResult::weighted_objective_history);
    m.def(
        "register_point_sets",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& data,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& centroids, const GmmConfig& cfg) {
            const PointSet X = to_points(data), Y = to_points(centroids);
            py::gil_scoped_release release;
            return register_point_sets(X, Y, cfg);
        },
        py::arg("data"), py::arg("centroids"), py::arg("config") = GmmConfig{},
        "Fits T with data ~ T(centroids); arrays are (N, 3).");
    m.def("register_meshes", &register_meshes, py::arg("followup"), py::arg("baseline"),
          py::arg("config") = GmmConfig{}, py::call_guard<py::gil_scoped_release>());

    py::class_<SurfaceDistanceStats>(m, "SurfaceDistanceStats")
        .def_readonly("mean", &SurfaceDistanceStats::mean)
        .def_readonly("max", &SurfaceDistanceStats::max)
        .def_readonly("p95", &SurfaceDistanceStats::p95)
        .def_readonly("count", &SurfaceDistanceStats::count);
    m.def("hausdorff_stats", &hausdorff_stats);
    m.def("dice", [](const LabelVolume& a, const LabelVolume& b, int label) {
        const auto l = static_cast<LabelVolume::Label>(label);
        return dice(extract_label(a, l), extract_label(b, l));
    });

    py::class_<PhantomSpec>(m, "PhantomSpec")
        .def(py::init<>())
        .def_readwrite("n_vertebrae", &PhantomSpec::n_vertebrae)
        .def_readwrite("dims", &PhantomSpec::dims)
        .def_readwrite("spacing", &PhantomSpec::spacing)
        .def_readwrite("body_radii", &PhantomSpec::body_radii)
        .def_readwrite("process_size", &PhantomSpec::process_size)
        .def_readwrite("inter_body_gap", &PhantomSpec::inter_body_gap)
        .def_readwrite("margin", &PhantomSpec::margin)
        .def_readwrite("shape_jitter", &PhantomSpec::shape_jitter)
        .def_readwrite("max_tilt", &PhantomSpec::max_tilt)
        .def_readwrite("seed", &PhantomSpec::seed);
    py::class_<PerturbationSpec>(m, "PerturbationSpec")
        .def(py::init<>())
        .def_readwrite("max_rotation", &PerturbationSpec::max_rotation)
        .def_readwrite("max_translation", &PerturbationSpec::max_translation)
        .def_readwrite("lesion_fraction", &PerturbationSpec::lesion_fraction)
        .def_readwrite("vertex_noise_sd", &PerturbationSpec::vertex_noise_sd)
        .def_readwrite("max_grid_offset", &PerturbationSpec::max_grid_offset)
        .def_readwrite("seed", &PerturbationSpec::seed);
    m.def("make_phantom", [](const PhantomSpec& spec) {
        Phantom p = make_phantom(spec);
        return py::make_tuple(std::move(p.volume), p.voxel_counts);
    });
    m.def("make_followup", [](const LabelVolume& vol, const PerturbationSpec& spec) {
        FollowUp f = make_followup(vol, spec);
        return py::make_tuple(std::move(f.volume), f.transforms);
    });

    m.def("default_label_map", &default_label_map);
    m.def(
        "run_study_manifest",
        [](const std::filesystem::path& manifest, const std::filesystem::path& out, int threads) {
            const StudySeries series = load_series(read_manifest(manifest));
            PipelineConfig cfg;
            cfg.threads = threads;
            const StudyReport report = run_study(series, cfg);
            write_study_report(report, out);
            return report.count(EntryStatus::Registered);
        },
        py::arg("manifest"), py::arg("out_dir"), py::arg("threads") = 1,
        "Runs a study with default settings and writes the report tree; returns the number of registrations.");
}
