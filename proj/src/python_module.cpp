#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "virt/checkpoint.hpp"
#include "virt/config.hpp"
#include "virt/error.hpp"
#include "virt/experiments.hpp"

namespace py = pybind11;
using namespace virt;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  auto data = t.data();
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::list maps_to_python(const std::vector<CrossMaps>& layers) {
  py::list out;
  for (const auto& layer : layers) {
    py::list xy, yx;
    for (const auto& m : layer.xy) xy.append(to_numpy(m));
    for (const auto& m : layer.yx) yx.append(to_numpy(m));
    out.append(py::make_tuple(xy, yx));
  }
  return out;
}

std::vector<CrossMaps> maps_from_python(const py::list& layers) {
  std::vector<CrossMaps> out;
  for (const auto& item : layers) {
    auto pair = item.cast<py::tuple>();
    CrossMaps m;
    for (const auto& a : pair[0].cast<py::list>())
      m.xy.push_back(from_numpy(a.cast<py::array_t<double>>()));
    for (const auto& a : pair[1].cast<py::list>())
      m.yx.push_back(from_numpy(a.cast<py::array_t<double>>()));
    out.push_back(std::move(m));
  }
  return out;
}

py::list examples_to_python(const std::vector<Example>& data) {
  py::list out;
  for (const auto& ex : data) out.append(py::make_tuple(ex.x, ex.y, ex.label));
  return out;
}

std::vector<Example> examples_from_python(const py::list& data) {
  std::vector<Example> out;
  for (const auto& item : data) {
    auto t = item.cast<py::tuple>();
    out.push_back({t[0].cast<std::vector<int>>(), t[1].cast<std::vector<int>>(), t[2].cast<int>()});
  }
  return out;
}

RunConfig config_from(const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  for (const auto& [k, v] : overrides) c.set(k, v);
  return c;
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["auc"] = r.has_auc ? py::cast(r.auc) : py::none();
  d["count"] = r.count;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Virtual-interaction distillation from cross-encoder to dual-encoder";

  static py::exception<Error> base_error(m, "VirtError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(base_error.ptr(), (e.category() + ": " + e.what()).c_str());
    }
  });

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def(py::init([](const std::map<std::string, std::string>& o) { return config_from(o); }))
      .def("set", &RunConfig::set)
      .def("get", &RunConfig::get)
      .def("apply_text", &RunConfig::apply_text)
      .def("to_text", &RunConfig::to_text)
      .def("entries", &RunConfig::entries);

  m.def("gen_keymatch",
        [](std::size_t n, int vocab, std::uint64_t seed, int max_len_x, int max_len_y, int min_len) {
          GeneratorOptions o{max_len_x, max_len_y, min_len};
          return examples_to_python(gen_keymatch(n, vocab, seed, o));
        },
        py::arg("n"), py::arg("vocab_size"), py::arg("seed"), py::arg("max_len_x") = 12,
        py::arg("max_len_y") = 12, py::arg("min_len") = 1);
  m.def("gen_overlap",
        [](std::size_t n, int vocab, std::uint64_t seed, int max_len_x, int max_len_y, int min_len) {
          GeneratorOptions o{max_len_x, max_len_y, min_len};
          return examples_to_python(gen_overlap(n, vocab, seed, o));
        },
        py::arg("n"), py::arg("vocab_size"), py::arg("seed"), py::arg("max_len_x") = 12,
        py::arg("max_len_y") = 12, py::arg("min_len") = 1);

  m.def("select_layers", [](const std::string& strategy, int num_layers) {
    return select_layers(LayerStrategy::parse(strategy), num_layers);
  });
  m.def("virt_loss",
        [](const py::list& student, const py::list& teacher, std::size_t m, std::size_t n,
           const std::vector<int>& layers, const std::string& norm) {
          const DistanceNorm d =
              norm == "frobenius" ? DistanceNorm::Frobenius : DistanceNorm::SquaredFrobenius;
          if (norm != "frobenius" && norm != "squared_frobenius")
            throw ConfigError("norm must be frobenius or squared_frobenius");
          return virt_loss(maps_from_python(student), maps_from_python(teacher), m, n, layers, d)
              .item();
        },
        py::arg("student"), py::arg("teacher"), py::arg("m"), py::arg("n"), py::arg("layers"),
        py::arg("norm") = "frobenius");
  m.def("auc_roc", [](const std::vector<double>& scores, const std::vector<int>& labels) {
    return auc_roc(scores, labels);
  });
  m.def("alpha_grid", &alpha_grid);

  py::class_<CrossEncoder>(m, "CrossEncoder")
      .def(py::init([](const RunConfig& c, std::uint64_t seed) {
             std::mt19937_64 rng(seed);
             return CrossEncoder(encoder_config(c), rng);
           }),
           py::arg("config"), py::arg("seed"))
      .def_static("load", [](const std::string& path) { return load_teacher(load_checkpoint(path)); })
      .def("save", [](const CrossEncoder& t, const std::string& path) {
        save_checkpoint(path, to_checkpoint(t));
      })
      .def("logits", [](const CrossEncoder& t, const std::vector<int>& x, const std::vector<int>& y) {
        return to_numpy(t.forward(x, y, false).logits);
      })
      .def("target_maps",
           [](const CrossEncoder& t, const std::vector<int>& x, const std::vector<int>& y) {
             std::vector<CrossMaps> maps;
             for (const auto& part : t.forward(x, y, true).partitions)
               maps.push_back(extract_target_maps(part, x.size(), y.size()));
             return maps_to_python(maps);
           })
      .def("attention_scores",
           [](const CrossEncoder& t, const std::vector<int>& x, const std::vector<int>& y) {
             py::list layers;
             for (const auto& layer : t.forward(x, y, true).layers) {
               py::list heads;
               for (const auto& s : layer.scores) heads.append(to_numpy(s));
               layers.append(heads);
             }
             return layers;
           })
      .def("evaluate", [](const CrossEncoder& t, const py::list& data) {
        return eval_dict(evaluate(t, examples_from_python(data)));
      });

  py::class_<DualEncoder>(m, "DualEncoder")
      .def(py::init([](const RunConfig& c, std::uint64_t seed) {
             std::mt19937_64 rng(seed);
             return DualEncoder(encoder_config(c), student_options(c), rng);
           }),
           py::arg("config"), py::arg("seed"))
      .def_static("load", [](const std::string& path) { return load_student(load_checkpoint(path)); })
      .def("save", [](const DualEncoder& s, const std::string& path) {
        save_checkpoint(path, to_checkpoint(s));
      })
      .def("logits", [](const DualEncoder& s, const std::vector<int>& x, const std::vector<int>& y) {
        return to_numpy(s.forward(x, y, false).logits);
      })
      .def("virtual_maps",
           [](const DualEncoder& s, const std::vector<int>& x, const std::vector<int>& y) {
             return maps_to_python(s.forward(x, y, true).virtual_maps);
           })
      .def("cached_logits",
           [](const DualEncoder& s, const std::vector<int>& x, const std::vector<int>& y) {
             const auto q = s.encode_side(x, 0, false);
             const auto c = s.encode_side(y, 1, false);
             return to_numpy(s.score(q, c).logits);
           })
      .def("evaluate", [](const DualEncoder& s, const py::list& data) {
        return eval_dict(evaluate(s, examples_from_python(data)));
      });

  m.def("train_teacher",
        [](const RunConfig& c, const py::list& train, const py::list& dev, std::uint64_t seed) {
          auto tr = examples_from_python(train), dv = examples_from_python(dev);
          auto r = [&] {
            py::gil_scoped_release release;
            return train_teacher(encoder_config(c), tr, dv, teacher_hyper(c, seed));
          }();
          return py::make_tuple(std::move(r.model), r.history.to_csv());
        },
        py::arg("config"), py::arg("train"), py::arg("dev"), py::arg("seed"));
  m.def("train_student",
        [](const RunConfig& c, const CrossEncoder* teacher, const py::list& train,
           const py::list& dev, std::uint64_t seed) {
          auto tr = examples_from_python(train), dv = examples_from_python(dev);
          const Arm arm = parse_arm(c.get("student.arm"));
          auto r = [&] {
            py::gil_scoped_release release;
            return train_student(teacher, encoder_config(c), student_options(c), tr, dv,
                                 distill_config(c), student_hyper(c, seed), arm);
          }();
          return py::make_tuple(std::move(r.model), r.history.to_csv(), r.teacher_calls);
        },
        py::arg("config"), py::arg("teacher"), py::arg("train"), py::arg("dev"), py::arg("seed"));

  m.def("bench_latency",
        [](const RunConfig& c, std::size_t candidates, std::size_t repetitions) {
          LatencyOptions o;
          o.candidates = candidates;
          o.repetitions = repetitions;
          auto r = bench_latency(encoder_config(c), student_options(c), o);
          py::dict d;
          d["cross_median_ms"] = r.cross_median_ms;
          d["dual_median_ms"] = r.dual_median_ms;
          d["precompute_ms"] = r.precompute_ms;
          d["speedup"] = r.speedup;
          return d;
        },
        py::arg("config"), py::arg("candidates") = 256, py::arg("repetitions") = 30);
}
