#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "headprobe/driver.hpp"
#include "headprobe/error.hpp"
#include "headprobe/synth.hpp"

namespace py = pybind11;
using namespace headprobe;

namespace {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

DumpHeader make_header(const std::string& model_name, const std::string& capture_point, std::uint32_t n_layers,
                       std::uint32_t n_heads, std::uint32_t head_dim, const std::vector<std::string>& ids,
                       const std::string& mode, const std::vector<std::uint64_t>& token_counts,
                       const std::map<std::string, std::string>& attributes) {
    DumpHeader h;
    h.model_name = model_name;
    h.capture_point = capture_point;
    h.n_layers = n_layers;
    h.n_heads = n_heads;
    h.head_dim = head_dim;
    h.n_examples = ids.size();
    h.token_mode = token_mode_from_string(mode);
    h.example_ids = ids;
    h.token_counts = token_counts;
    h.attributes = attributes;
    return h;
}

py::dict header_dict(const DumpHeader& h) {
    py::dict d;
    d["version"] = h.version;
    d["model_name"] = h.model_name;
    d["capture_point"] = h.capture_point;
    d["n_layers"] = h.n_layers;
    d["n_heads"] = h.n_heads;
    d["head_dim"] = h.head_dim;
    d["n_examples"] = h.n_examples;
    d["token_mode"] = to_string(h.token_mode);
    d["example_ids"] = h.example_ids;
    d["token_counts"] = h.token_counts;
    d["attributes"] = h.attributes;
    return d;
}

TraitRange make_range(int lo, int hi) {
    TraitRange r;
    r.min_score = lo;
    r.max_score = hi;
    return r;
}

}  // namespace

PYBIND11_MODULE(_headprobe, m) {
    m.doc() = "Per-attention-head probing core";
    m.attr("__version__") = kToolVersion;

    static py::exception<Error> error_type(m, "HeadprobeError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            const auto msg = std::string("[") + to_string(e.kind()) + "] " + e.what();
            PyErr_SetString(error_type.ptr(), msg.c_str());
        }
    });

    // activation store
    m.def("read_header", [](const std::filesystem::path& p) { return header_dict(read_header(p)); }, py::arg("path"));
    m.def(
        "write_dump",
        [](const std::filesystem::path& path, const RowMatrixF& data, const std::vector<std::string>& ids,
           std::uint32_t n_layers, std::uint32_t n_heads, const std::string& model_name, const std::string& mode,
           const std::vector<std::uint64_t>& token_counts, const std::string& capture_point,
           const std::map<std::string, std::string>& attributes) {
            // data: (n_layers * n_heads * total_rows) x head_dim in canonical order.
            const auto head_dim = static_cast<std::uint32_t>(data.cols());
            const auto h = make_header(model_name, capture_point, n_layers, n_heads, head_dim, ids, mode,
                                       token_counts, attributes);
            h.validate();
            const auto rows = h.total_rows();
            if (static_cast<std::uint64_t>(data.rows()) != h.n_heads_total() * rows) {
                fail(ErrorKind::Contract, "activation array has " + std::to_string(data.rows()) + " rows, expected " +
                                              std::to_string(h.n_heads_total() * rows));
            }
            py::gil_scoped_release release;
            DumpWriter w(path, h);
            for (std::uint32_t l = 0; l < n_layers; ++l) {
                for (std::uint32_t hd = 0; hd < n_heads; ++hd) {
                    const std::uint64_t base = (std::uint64_t{l} * n_heads + hd) * rows;
                    for (std::uint64_t e = 0; e < h.n_examples; ++e) {
                        for (std::uint64_t t = 0; t < h.rows_of(e); ++t) {
                            const auto r = static_cast<Eigen::Index>(base + h.row_of(e) + t);
                            w.write(e, t, {static_cast<int>(l), static_cast<int>(hd)},
                                    std::span<const float>(data.row(r).data(), head_dim));
                        }
                    }
                }
            }
            w.finish();
        },
        py::arg("path"), py::arg("data"), py::arg("example_ids"), py::arg("n_layers"), py::arg("n_heads"),
        py::arg("model_name"), py::arg("mode") = "LAST", py::arg("token_counts") = std::vector<std::uint64_t>{},
        py::arg("capture_point") = "", py::arg("attributes") = std::map<std::string, std::string>{});

    py::class_<DumpReader>(m, "DumpReader")
        .def(py::init<std::filesystem::path>(), py::arg("path"))
        .def_property_readonly("header", [](const DumpReader& r) { return header_dict(r.header()); })
        .def("find_example", &DumpReader::find_example)
        .def(
            "load_head_matrix",
            [](const DumpReader& r, int layer, int head, std::optional<std::vector<std::size_t>> sel) {
                if (sel) return r.load_head_matrix({layer, head}, std::span<const std::size_t>(*sel)).values;
                return r.load_head_matrix({layer, head}).values;
            },
            py::arg("layer"), py::arg("head"), py::arg("selection") = std::nullopt)
        .def(
            "load_token_series",
            [](const DumpReader& r, const std::string& id, int layer, int head) {
                return r.load_token_series(id, {layer, head});
            },
            py::arg("example_id"), py::arg("layer"), py::arg("head"));

    // probes
    m.def(
        "fit_ridge",
        [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda, bool bias) {
            return fit_ridge(x, y, lambda, bias).weights;
        },
        py::arg("x"), py::arg("y"), py::arg("lam") = kDefaultRidgeLambda, py::arg("add_bias") = false);
    m.def(
        "predict_ridge",
        [](const Eigen::VectorXd& w, const Eigen::MatrixXd& x, bool bias) {
            RidgeProbe p;
            p.weights = w;
            p.used_bias = bias;
            return predict_ridge(p, x);
        },
        py::arg("weights"), py::arg("x"), py::arg("used_bias") = false);
    m.def(
        "fit_mlp",
        [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int hidden, double wd, int batch, double lr,
           int epochs, std::uint64_t seed) {
            MlpFitConfig c{hidden, wd, batch, lr, epochs, seed};
            auto fit = fit_mlp(x, y, c);
            py::dict d;
            d["w1"] = fit.probe.w1;
            d["b1"] = fit.probe.b1;
            d["w2"] = fit.probe.w2;
            d["b2"] = fit.probe.b2;
            d["loss_curve"] = fit.loss_curve;
            return d;
        },
        py::arg("x"), py::arg("y"), py::arg("hidden") = 256, py::arg("weight_decay") = 0.1,
        py::arg("batch_size") = 2048, py::arg("learning_rate") = 1e-3, py::arg("max_epochs") = 100,
        py::arg("seed") = 0);
    m.def(
        "predict_mlp",
        [](const Eigen::MatrixXd& w1, const Eigen::VectorXd& b1, const Eigen::VectorXd& w2, double b2,
           const Eigen::MatrixXd& x) { return predict_mlp(MlpProbe{w1, b1, w2, b2}, x); },
        py::arg("w1"), py::arg("b1"), py::arg("w2"), py::arg("b2"), py::arg("x"));

    // metrics and label mapping
    m.def(
        "qwk",
        [](const std::vector<int>& human, const std::vector<int>& pred, int lo, int hi) {
            return qwk(human, pred, make_range(lo, hi));
        },
        py::arg("human"), py::arg("predicted"), py::arg("min_score"), py::arg("max_score"));
    m.def(
        "normalize_score", [](int raw, int lo, int hi) { return normalize_score(raw, make_range(lo, hi)); },
        py::arg("raw"), py::arg("min_score"), py::arg("max_score"));
    m.def(
        "denormalize_and_round",
        [](double y, int lo, int hi) { return denormalize_and_round(y, make_range(lo, hi)); }, py::arg("yhat"),
        py::arg("min_score"), py::arg("max_score"));

    // directions and PCA
    m.def("binary_direction", &binary_direction, py::arg("pos"), py::arg("neg"));
    m.def(
        "graded_direction",
        [](const std::map<int, Eigen::MatrixXd>& groups, int lo, int hi) {
            return graded_direction(groups, make_range(lo, hi)).unit;
        },
        py::arg("groups"), py::arg("min_score"), py::arg("max_score"));
    m.def("cosine", &cosine, py::arg("u"), py::arg("v"));
    m.def("pca_2d", &pca_2d, py::arg("x"));

    // commands
    m.def(
        "synth",
        [](const std::string& spec_json, const std::filesystem::path& out) {
            const auto o = cmd_synth(synth_spec_from_json(nlohmann::json::parse(spec_json)), out);
            py::dict d;
            d["dump"] = o.dump;
            d["table"] = o.table;
            d["metadata"] = o.metadata;
            d["run_config"] = o.run_config;
            return d;
        },
        py::arg("spec_json"), py::arg("out_dir"));
    m.def(
        "sweep",
        [](const std::filesystem::path& config_path, std::optional<std::filesystem::path> out, int workers) {
            auto c = load_run_config(config_path);
            if (out) c.output_dir = *out;
            c.workers = workers;
            SweepRun run;
            {
                py::gil_scoped_release release;
                run = cmd_sweep(c);
            }
            py::list rows;
            for (const auto& r : run.records) {
                py::dict d;
                d["trait"] = r.trait;
                d["test_prompt"] = r.plan.test_prompt;
                d["layer"] = r.selected.coord.layer;
                d["head"] = r.selected.coord.head;
                d["qwk"] = r.reported_qwk;
                d["grid"] = r.test_grid.qwk;
                rows.append(d);
            }
            return rows;
        },
        py::arg("config"), py::arg("out_dir") = std::nullopt, py::arg("workers") = 1);
    m.def("inspect", &cmd_inspect, py::arg("path"));
}
