#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "bagnet/checkpoint.hpp"
#include "bagnet/data_io.hpp"
#include "bagnet/error.hpp"
#include "bagnet/metrics.hpp"
#include "bagnet/model_gradcheck.hpp"
#include "bagnet/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace bagnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> tensor_from_2d(const FloatArray& a, const char* what) {
    if (a.ndim() != 2) {
        throw ShapeError(std::string(what) + " must be a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
    }
    const int h = static_cast<int>(a.shape(0));
    const int w = static_cast<int>(a.shape(1));
    return Tensor<float>({1, 1, h, w}, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray array_from_plane(const Tensor<float>& t) {
    FloatArray out({t.shape().h, t.shape().w});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict metrics_dict(const MetricsReport& r) {
    py::dict d;
    const auto v = r.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        d[py::str(std::string(kMetricNames[i]))] = v[i];
    }
    return d;
}

std::string train_json(const fs::path& manifest_path, const std::string& config_json, const fs::path& out_dir,
                       std::optional<int> fold) {
    const DatasetManifest manifest = parse_manifest(manifest_path);
    RunConfig defaults;
    defaults.model.input_height = manifest.target_height;
    defaults.model.input_width = manifest.target_width;
    const RunConfig rc = config_json.empty() ? defaults : run_config_from_json(config_json, defaults);
    TrainOptions opt;
    opt.out_dir = out_dir;
    opt.only_fold = fold;
    TrainResult r;
    {
        py::gil_scoped_release release;
        r = train(manifest, rc, opt);
    }
    return run_record_to_json(r.record, -1);
}

py::list evaluate_rows(const fs::path& checkpoint, const fs::path& manifest_path, double threshold_value) {
    Checkpoint<float> ck = read_checkpoint<float>(checkpoint);
    const DatasetManifest manifest = parse_manifest(manifest_path);
    std::vector<int> all(manifest.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = static_cast<int>(i);
    }
    EvaluateOptions opt;
    opt.threshold = threshold_value;
    const auto rows = evaluate(ck.params, manifest, all, opt);
    py::list out;
    for (const ImageMetrics& im : rows) {
        out.append(py::make_tuple(im.id, metrics_dict(im.metrics)));
    }
    return out;
}

FloatArray predict_array(const fs::path& checkpoint, const FloatArray& image) {
    Checkpoint<float> ck = read_checkpoint<float>(checkpoint);
    const Tensor<float> x = tensor_from_2d(image, "image");
    return array_from_plane(predict(ck.params, x));
}

py::dict gradcheck_dict(const std::string& precision, std::size_t coordinates, std::uint64_t seed) {
    ModelGradcheckOptions o;
    o.coordinates = coordinates;
    o.seed = seed;
    ModelGradcheckResult r;
    double tol = 0.0;
    if (precision == "f64") {
        r = model_gradcheck<double>(o);
        tol = model_gradcheck_tolerance<double>();
    } else if (precision == "f32") {
        r = model_gradcheck<float>(o);
        tol = model_gradcheck_tolerance<float>();
    } else {
        throw ConfigError("precision must be 'f32' or 'f64', got '" + precision + "'");
    }
    py::dict d;
    d["max_rel_error"] = r.report.max_rel_error;
    d["tolerance"] = tol;
    d["passed"] = r.report.max_rel_error < tol;
    d["loss"] = r.loss;
    d["seconds"] = r.seconds;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "BAGNet segmentation: training, evaluation, prediction and checks";

    auto base = py::register_exception<Error>(m, "BagnetError", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<NumericError>(m, "NumericError", base);
    py::register_exception<UsageError>(m, "UsageError", base);
    auto ckpt = py::register_exception<CheckpointError>(m, "CheckpointError", base);
    py::register_exception<CheckpointVersionError>(m, "CheckpointVersionError", ckpt);
    py::register_exception<CheckpointTruncatedError>(m, "CheckpointTruncatedError", ckpt);
    py::register_exception<CheckpointIntegrityError>(m, "CheckpointIntegrityError", ckpt);
    py::register_exception<CheckpointShapeError>(m, "CheckpointShapeError", ckpt);
    auto data = py::register_exception<DataError>(m, "DataError", base);
    py::register_exception<MissingFileError>(m, "MissingFileError", data);
    py::register_exception<DecodeError>(m, "DecodeError", data);
    py::register_exception<SizeMismatchError>(m, "SizeMismatchError", data);
    py::register_exception<ManifestError>(m, "ManifestError", data);

    m.def(
        "synth_dataset",
        [](int n, int height, int width, std::uint64_t seed, const fs::path& out_dir) {
            synth_dataset(n, height, width, seed, out_dir);
            return out_dir / "manifest.tsv";
        },
        py::arg("n"), py::arg("height"), py::arg("width"), py::arg("seed"), py::arg("out_dir"),
        "Write n synthetic lesion images and masks plus manifest.tsv; returns the manifest path.");

    m.def("train_json", &train_json, py::arg("manifest"), py::arg("config_json") = "",
          py::arg("out_dir") = fs::path(), py::arg("fold") = py::none(),
          "Run the training harness; returns the run record as JSON text.");

    m.def("evaluate", &evaluate_rows, py::arg("checkpoint"), py::arg("manifest"), py::arg("threshold") = 0.5,
          "Per-sample metrics of a checkpoint over every manifest sample, as (id, metrics) pairs.");

    m.def("predict", &predict_array, py::arg("checkpoint"), py::arg("image"),
          "Foreground probabilities for one 2-d image; height and width must be multiples of 16.");

    m.def("gradcheck", &gradcheck_dict, py::arg("precision") = "f64", py::arg("coordinates") = 20,
          py::arg("seed") = 7, "Full-network gradient check on the tiny configuration.");

    m.def(
        "confusion",
        [](const FloatArray& prediction, const FloatArray& truth) {
            const ConfusionCounts c = confusion(tensor_from_2d(prediction, "prediction"), tensor_from_2d(truth, "truth"));
            return py::make_tuple(c.tp, c.fp, c.tn, c.fn);
        },
        py::arg("prediction"), py::arg("truth"), "Binary masks -> (tp, fp, tn, fn).");

    m.def(
        "compute_metrics",
        [](std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
            return metrics_dict(compute_metrics({tp, fp, tn, fn}));
        },
        py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

    m.def(
        "threshold",
        [](const FloatArray& p, double t) { return array_from_plane(threshold(tensor_from_2d(p, "probabilities"), t)); },
        py::arg("probabilities"), py::arg("threshold") = 0.5);

    m.def("kfold_split", &kfold_split, py::arg("n"), py::arg("k"), py::arg("seed"));

    m.def(
        "param_count",
        [](const std::string& config_json) {
            return param_count(config_json.empty() ? BagnetConfig{} : run_config_from_json(config_json).model);
        },
        py::arg("config_json") = "", "Learnable parameter count of a model configuration.");
}
