// Python bindings for the main operations: layout planning, text embedding,
// matching, metrics, the poly schedule, and a handful of tensor ops.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mrovseg/flops.hpp"
#include "mrovseg/geometry.hpp"
#include "mrovseg/hungarian.hpp"
#include "mrovseg/metrics.hpp"
#include "mrovseg/model.hpp"
#include "mrovseg/optim.hpp"
#include "mrovseg/text_embed.hpp"

namespace py = pybind11;
using namespace mrovseg;

namespace {

std::vector<double> softmax1d(const std::vector<double>& x) {
    TensorT<double> t({static_cast<int>(x.size())}, x);
    auto y = softmax(t, 0);
    return std::vector<double>(y.ptr(), y.ptr() + y.numel());
}

std::vector<std::vector<double>> matmul2d(const std::vector<std::vector<double>>& a,
                                          const std::vector<std::vector<double>>& b) {
    if (a.empty() || b.empty()) throw ContractError("matmul: empty operand");
    int m = static_cast<int>(a.size()), k = static_cast<int>(a[0].size());
    int k2 = static_cast<int>(b.size()), p = static_cast<int>(b[0].size());
    TensorT<double> ta({m, k});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) ta[i * k + j] = a[static_cast<size_t>(i)][static_cast<size_t>(j)];
    TensorT<double> tb({k2, p});
    for (int i = 0; i < k2; ++i)
        for (int j = 0; j < p; ++j) tb[i * p + j] = b[static_cast<size_t>(i)][static_cast<size_t>(j)];
    auto c = matmul(ta, tb);
    std::vector<std::vector<double>> out(static_cast<size_t>(m), std::vector<double>(static_cast<size_t>(p)));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) out[static_cast<size_t>(i)][static_cast<size_t>(j)] = c[i * p + j];
    return out;
}

py::dict layout_dict(const SliceLayout& lo) {
    py::dict d;
    d["input_h"] = lo.input_h;
    d["input_w"] = lo.input_w;
    d["p"] = lo.p;
    d["patch"] = lo.patch;
    d["window"] = py::make_tuple(lo.window_h, lo.window_w);
    d["stride"] = py::make_tuple(lo.stride_h, lo.stride_w);
    d["grid"] = py::make_tuple(lo.grid_m, lo.grid_n);
    d["slices"] = lo.slices();
    d["overlapped"] = lo.overlapped;
    d["tokens_per_slice"] = lo.slice_tokens();
    std::vector<std::pair<int, int>> org = lo.origins();
    d["origins"] = org;
    return d;
}

}  // namespace

PYBIND11_MODULE(mrovseg, m) {
    m.doc() = "multi-resolution open-vocabulary segmentation (desk-scale core)";

    py::register_exception<LayoutError>(m, "LayoutError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

    m.def("plan_layout",
          [](int h, int w, double p, int patch) { return layout_dict(plan_layout(h, w, p, patch)); },
          py::arg("input_h"), py::arg("input_w"), py::arg("p"), py::arg("patch") = 16,
          "sliding-window decomposition for crop ratio p");

    m.def("default_templates", [] { return default_prompt_templates(); },
          "the built-in prompt template set");

    m.def("embed_vocabulary",
          [](const std::vector<std::string>& names, int dim, uint64_t seed) {
              TextEmbedder e(dim, seed);
              return e.embed_vocabulary(names);
          },
          py::arg("names"), py::arg("dim") = 512, py::arg("seed") = 0,
          "unit-norm class embeddings via template ensembling");

    m.def("hungarian_match",
          [](const std::vector<std::vector<double>>& cost) {
              int rows = static_cast<int>(cost.size());
              int cols = rows ? static_cast<int>(cost[0].size()) : 0;
              std::vector<double> flat;
              for (const auto& r : cost) {
                  if (static_cast<int>(r.size()) != cols)
                      throw ContractError("hungarian_match: ragged cost matrix");
                  flat.insert(flat.end(), r.begin(), r.end());
              }
              return hungarian_match(flat, rows, cols);
          },
          py::arg("cost"), "min-cost row->column assignment (rows <= cols)");

    m.def("poly_lr", &poly_lr, py::arg("base_lr"), py::arg("step"), py::arg("total_steps"),
          py::arg("power") = 0.9);

    m.def("miou",
          [](const std::vector<int>& pred, const std::vector<int>& gt, int num_classes,
             int ignore) {
              auto rep = compute_miou(pred, gt, num_classes, ignore);
              py::dict d;
              d["miou"] = rep.miou;
              d["has_classes"] = rep.has_classes;
              d["per_class"] = rep.per_class;
              d["present"] = rep.present;
              return d;
          },
          py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("ignore") = kIgnoreLabel);

    m.def("panoptic_quality",
          [](const std::vector<std::pair<int, std::vector<uint8_t>>>& pred,
             const std::vector<std::pair<int, std::vector<uint8_t>>>& gt, int h, int w) {
              auto to_segments = [](const std::vector<std::pair<int, std::vector<uint8_t>>>& xs) {
                  std::vector<Segment> out;
                  for (const auto& [c, mask] : xs) out.push_back({c, mask});
                  return out;
              };
              auto res = panoptic_quality(to_segments(pred), to_segments(gt), h, w);
              py::dict d;
              d["pq"] = res.pq;
              d["sq"] = res.sq;
              d["rq"] = res.rq;
              d["tp"] = res.stats.tp;
              d["fp"] = res.stats.fp;
              d["fn"] = res.stats.fn;
              return d;
          },
          py::arg("pred"), py::arg("gt"), py::arg("height"), py::arg("width"));

    m.def("softmax", &softmax1d, py::arg("x"), "stabilized softmax over a vector");
    m.def("matmul", &matmul2d, py::arg("a"), py::arg("b"));

    m.def("masked_attention_macs",
          [](int queries, int keys, int dim, int mlp_hidden) {
              return masked_attention_layer_macs(queries, keys, dim, mlp_hidden).total();
          },
          py::arg("queries"), py::arg("keys"), py::arg("dim"), py::arg("mlp_hidden"),
          "closed-form MAC count of one masked cross-attention layer");

    m.def("default_config",
          [](bool toy) {
              auto cfg = toy ? RunConfig::toy() : RunConfig::defaults();
              return run_config_to_json(cfg).dump();
          },
          py::arg("toy") = false, "run configuration JSON");
}
