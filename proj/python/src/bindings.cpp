#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nfm/error.hpp"
#include "nfm/freq_manip.hpp"
#include "nfm/harness.hpp"
#include "nfm/spectral.hpp"

namespace py = pybind11;

namespace {

using Real = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Cplx = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const Real& a) { return {a.data(), a.data() + a.size()}; }

Real to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Real out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Real to_array(const std::vector<double>& v) { return to_array(v, {static_cast<py::ssize_t>(v.size())}); }

Cplx spectrum_array(const nfm::Spectrum& s) {
  Cplx out(static_cast<py::ssize_t>(s.data.size()));
  std::copy(s.data.begin(), s.data.end(), out.mutable_data());
  return out;
}

nfm::Rational rational(const std::pair<std::int64_t, std::int64_t>& r) { return nfm::Rational(r.first, r.second); }

nfm::ExtensionFactors factors(const std::pair<std::int64_t, std::int64_t>& m_tau,
                              const std::pair<std::int64_t, std::int64_t>& m_f) {
  nfm::ExtensionFactors f;
  f.m_tau = rational(m_tau);
  f.m_f = rational(m_f);
  return f;
}

nfm::RunConfig parse_config(const std::string& text) { return nfm::config_from_json(nlohmann::json::parse(text)); }

py::dict metrics_dict(const nfm::Metrics& m) {
  py::dict d;
  for (const auto& [k, v] : m) d[py::str(k)] = v;
  return d;
}

// Owns a model plus the run config it was resolved from.
struct PyModel {
  nfm::RunConfig cfg;
  std::unique_ptr<nfm::NfmModel> model;

  PyModel(const std::string& config, std::size_t channels, std::uint64_t seed)
      : cfg(parse_config(config)), model(std::make_unique<nfm::NfmModel>(nfm::resolved_model(cfg, channels), seed)) {}

  Real forward(const Real& x, std::pair<std::int64_t, std::int64_t> m_tau, std::pair<std::int64_t, std::int64_t> m_f) const {
    if (x.ndim() != 3) throw nfm::Error("forward expects x with shape [batch, length, channels]");
    nfm::ad::Tape tape(false);
    const nfm::ad::Shape shape{static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1)),
                               static_cast<std::size_t>(x.shape(2))};
    const nfm::ad::Var y = model->forward(tape, tape.constant(shape, to_vec(x)), factors(m_tau, m_f), {});
    std::vector<py::ssize_t> out_shape(y.shape().begin(), y.shape().end());
    return to_array({y.value().begin(), y.value().end()}, out_shape);
  }
};

}  // namespace

PYBIND11_MODULE(_nfm, m) {
  m.doc() = "Bindings for the nfm C++ engine";
  py::register_exception<nfm::Error>(m, "NfmError", PyExc_ValueError);

  m.def("rfft", [](const Real& x) { return spectrum_array(nfm::rfft(to_vec(x))); }, py::arg("x"),
        "Unnormalized half spectrum (first n//2 + 1 bins).");
  m.def(
      "irfft",
      [](const Cplx& spec, std::size_t n) {
        nfm::Spectrum s;
        s.n_time = n;
        s.data.assign(spec.data(), spec.data() + spec.size());
        if (s.data.size() != s.bins()) throw nfm::Error("irfft: expected n//2 + 1 bins");
        return to_array(nfm::irfft(s));
      },
      py::arg("spectrum"), py::arg("n"));
  m.def("naive_dft", [](const Real& x) {
    const auto v = nfm::naive_dft(to_vec(x));
    Cplx out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
  });
  m.def(
      "extend",
      [](const Real& x, std::pair<std::int64_t, std::int64_t> m_tau, std::pair<std::int64_t, std::int64_t> m_f) {
        return to_array(nfm::irfft(nfm::extend_spectrum(nfm::rfft(to_vec(x)), factors(m_tau, m_f))));
      },
      py::arg("x"), py::arg("m_tau") = std::pair<std::int64_t, std::int64_t>{1, 1},
      py::arg("m_f") = std::pair<std::int64_t, std::int64_t>{1, 1},
      "Time-domain result of the spectral extension with rational factors given as (num, den).");
  m.def("sinc_resample", [](const Real& x, std::size_t l) { return to_array(nfm::sinc_resample(to_vec(x), l)); });
  m.def("decimate", [](const Real& x, std::size_t f) { return to_array(nfm::decimate(to_vec(x), f)); });

  m.def(
      "synth_generate",
      [](std::size_t classes, std::size_t fixed, std::size_t random, std::size_t length, std::size_t band_lo,
         std::size_t band_hi, double noise, std::size_t per_class, double phase, std::size_t random_max,
         std::uint64_t seed) {
        nfm::SynthSpec s{classes, fixed, random, length, band_lo, band_hi, noise, per_class, phase, random_max};
        nfm::Rng rng(seed);
        const nfm::SynthData d = nfm::synth_generate(s, rng);
        return py::make_tuple(to_array(d.signals, {static_cast<py::ssize_t>(d.count()), static_cast<py::ssize_t>(length)}),
                              d.labels, d.class_freqs);
      },
      py::arg("classes") = 10, py::arg("fixed") = 20, py::arg("random") = 40, py::arg("length") = 2000,
      py::arg("band_lo") = 320, py::arg("band_hi") = 590, py::arg("noise") = 0.5, py::arg("per_class") = 100,
      py::arg("phase") = 0.0, py::arg("random_max") = 0, py::arg("seed") = 0);

  m.def("threshold_by_ratio", [](const Real& s, double r) { return nfm::threshold_by_ratio(to_vec(s), r); });
  m.def("point_adjust", [](const std::vector<int>& p, const std::vector<int>& t) { return nfm::point_adjust(p, t); });

  m.def("validate_config", [](const std::string& c) { return nfm::config_to_json(parse_config(c)).dump(); },
        "Parse, validate and return the canonical JSON of a run config.");
  m.def("config_hash", [](const std::string& c) { return nfm::hash_hex(nfm::config_hash(parse_config(c))); });
  m.def("param_count", [](const std::string& c, std::size_t channels) {
    return nfm::param_count(nfm::resolved_model(parse_config(c), channels));
  });
  m.def(
      "run",
      [](const std::string& c) {
        const nfm::RunConfig cfg = parse_config(c);
        py::gil_scoped_release release;
        const nfm::PreparedData d = nfm::prepare_data(cfg);
        nfm::NfmModel model(nfm::resolved_model(cfg, d.channels), nfm::derive_seed(cfg.seed, "model"));
        const nfm::TrainResult r = nfm::train_model(cfg, d, model);
        const nfm::Metrics metrics = nfm::evaluate(cfg, d, model, "test");
        py::gil_scoped_acquire acquire;
        py::dict out = metrics_dict(metrics);
        out["epochs"] = r.log.size();
        return out;
      },
      "Train on the configured data and return test metrics.");
  m.def("gradcheck", [](std::uint64_t seed) {
    const nfm::GradReport r = nfm::gradcheck_suite(nfm::toy_model_config(), seed);
    py::dict out;
    for (const auto& [k, v] : r.components) out[py::str(k)] = v;
    return out;
  }, py::arg("seed") = 0);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, std::size_t, std::uint64_t>(), py::arg("config"), py::arg("channels") = 1,
           py::arg("seed") = 0)
      .def("forward", &PyModel::forward, py::arg("x"), py::arg("m_tau") = std::pair<std::int64_t, std::int64_t>{1, 1},
           py::arg("m_f") = std::pair<std::int64_t, std::int64_t>{1, 1})
      .def_property_readonly("param_count", [](const PyModel& p) { return p.model->param_count(); })
      .def_property_readonly("channels", [](const PyModel& p) { return p.model->config().channels; });
}
