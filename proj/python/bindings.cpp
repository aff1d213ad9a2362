#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "committee/amp.hpp"
#include "committee/cli.hpp"
#include "committee/error.hpp"
#include "committee/large_k.hpp"
#include "committee/state_evolution.hpp"

namespace py = pybind11;
using namespace committee;

namespace {

template <class E>
std::string enum_repr(E e) {
  return std::string(to_string(e));
}

py::dict se_point_dict(const SeFixedPoint& p) {
  py::dict d;
  d["q"] = p.q;
  d["q_hat"] = p.q_hat;
  d["alpha"] = p.alpha;
  d["q00"] = p.q00;
  d["q01"] = p.q01;
  d["f_rs"] = p.f_rs;
  d["eps_g"] = p.eps_g;
  d["branch"] = p.branch;
  d["iterations"] = p.iterations;
  d["converged"] = p.converged;
  d["residual"] = p.residual;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayes-optimal learning in two-layer committee machines: state evolution, AMP, large-K limit";

  // Module-lifetime reference, never released.
  static PyObject* error_type = PyErr_NewException("committee._core.CommitteeError", PyExc_RuntimeError, nullptr);
  m.add_object("CommitteeError", py::handle(error_type).inc_ref());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      // args = (code name, message) so callers can branch on the code
      py::tuple args = py::make_tuple(std::string(to_string(e.code())), e.what());
      PyErr_SetObject(error_type, args.ptr());
    }
  });

  py::enum_<ErrorCode>(m, "ErrorCode")
      .value("NonPsd", ErrorCode::NonPsd)
      .value("SingularCovariance", ErrorCode::SingularCovariance)
      .value("ZeroMass", ErrorCode::ZeroMass)
      .value("UnsupportedLabel", ErrorCode::UnsupportedLabel)
      .value("ImpossibleOutcome", ErrorCode::ImpossibleOutcome)
      .value("SingularSigma", ErrorCode::SingularSigma)
      .value("Domain", ErrorCode::Domain)
      .value("ChannelUnderflow", ErrorCode::ChannelUnderflow)
      .value("NonPdCovariance", ErrorCode::NonPdCovariance)
      .value("Bracket", ErrorCode::Bracket)
      .value("Config", ErrorCode::Config);

  py::enum_<PriorKind>(m, "PriorKind").value("Gaussian", PriorKind::Gaussian).value("Rademacher", PriorKind::Rademacher);
  py::enum_<ChannelKind>(m, "ChannelKind")
      .value("Committee", ChannelKind::CommitteeSign)
      .value("Parity", ChannelKind::Parity)
      .value("Linear", ChannelKind::Linear);
  py::enum_<Branch>(m, "Branch")
      .value("NonSpecialized", Branch::NonSpecialized)
      .value("Specialized", Branch::Specialized)
      .value("Perfect", Branch::Perfect)
      .def("__str__", &enum_repr<Branch>);
  py::enum_<SeInit>(m, "SeInit")
      .value("Uninformed", SeInit::Uninformed)
      .value("NonSpecialized", SeInit::NonSpecialized)
      .value("Informed", SeInit::Informed);
  py::enum_<TransitionKind>(m, "TransitionKind")
      .value("Spec", TransitionKind::Spec)
      .value("Spinodal", TransitionKind::Spinodal)
      .value("IT", TransitionKind::IT)
      .value("Perf", TransitionKind::Perf);
  py::enum_<AmpInit>(m, "AmpInit").value("Random", AmpInit::Random).value("Informed", AmpInit::Informed);

  // Models
  py::class_<PriorModel>(m, "Prior")
      .def_static("gaussian", py::overload_cast<int>(&PriorModel::gaussian), py::arg("k"))
      .def_static("gaussian_rho", py::overload_cast<const Mat&>(&PriorModel::gaussian), py::arg("rho"))
      .def_static("rademacher", &PriorModel::rademacher, py::arg("k"))
      .def_readonly("kind", &PriorModel::kind)
      .def_readonly("k", &PriorModel::k)
      .def_readonly("rho", &PriorModel::rho)
      .def("__repr__", [](const PriorModel& p) {
        return "Prior(" + std::string(to_string(p.kind)) + ", k=" + std::to_string(p.k) + ")";
      });

  py::class_<ChannelModel>(m, "Channel")
      .def_static("committee", &ChannelModel::committee, py::arg("k"))
      .def_static("parity", &ChannelModel::parity, py::arg("k") = 2)
      .def_static("linear", &ChannelModel::linear, py::arg("k"), py::arg("delta") = 0.0)
      .def_readonly("kind", &ChannelModel::kind)
      .def_readonly("k", &ChannelModel::k)
      .def_readonly("delta", &ChannelModel::delta)
      .def_property_readonly("discrete", &ChannelModel::discrete)
      .def("__repr__", [](const ChannelModel& c) {
        return "Channel(" + std::string(to_string(c.kind)) + ", k=" + std::to_string(c.k) + ")";
      });

  m.def("label_support", &label_support, py::arg("channel"));
  m.def("z_out", [](double y, const Vec& w, const Mat& v, const ChannelModel& ch) { return z_out(y, w, v, ch); },
        py::arg("y"), py::arg("omega"), py::arg("v"), py::arg("channel"));
  m.def("g_out", [](const Vec& w, double y, const Mat& v, const ChannelModel& ch) { return g_out(w, y, v, ch); },
        py::arg("omega"), py::arg("y"), py::arg("v"), py::arg("channel"));
  m.def("dg_out", [](const Vec& w, double y, const Mat& v, const ChannelModel& ch) { return dg_out(w, y, v, ch); },
        py::arg("omega"), py::arg("y"), py::arg("v"), py::arg("channel"));
  m.def("f_w", &f_w, py::arg("sigma"), py::arg("t"), py::arg("prior"));
  m.def("f_c", &f_c, py::arg("sigma"), py::arg("t"), py::arg("prior"));
  m.def("psi_p0", [](const Mat& r, const PriorModel& p) { return psi_p0(r, p); }, py::arg("r"), py::arg("prior"));
  m.def("psi_pout", [](const Mat& q, const Mat& rho, const ChannelModel& ch) { return psi_pout(q, rho, ch); },
        py::arg("q"), py::arg("rho"), py::arg("channel"));

  // State evolution
  py::class_<SeConfig>(m, "SeConfig")
      .def(py::init<>())
      .def_readwrite("tol", &SeConfig::tol)
      .def_readwrite("max_iters", &SeConfig::max_iters)
      .def_readwrite("damping", &SeConfig::damping)
      .def_readwrite("record_trace", &SeConfig::record_trace);

  m.def("initial_overlap", &initial_overlap, py::arg("init"), py::arg("prior"), py::arg("config") = SeConfig{});
  m.def(
      "se_step",
      [](const Mat& q, double alpha, const PriorModel& p, const ChannelModel& ch, const SeConfig& cfg) {
        const SeStep s = se_step(q, alpha, p, ch, cfg);
        return py::make_tuple(s.q_next, s.q_hat, s.perfect);
      },
      py::arg("q"), py::arg("alpha"), py::arg("prior"), py::arg("channel"), py::arg("config") = SeConfig{});
  m.def(
      "se_run",
      [](const Mat& q0, double alpha, const PriorModel& p, const ChannelModel& ch, const SeConfig& cfg) {
        SeFixedPoint fp;
        {
          py::gil_scoped_release release;
          fp = se_run(q0, alpha, p, ch, cfg);
        }
        py::dict d = se_point_dict(fp);
        py::list trace;
        for (const auto& t : fp.trace) {
          trace.append(py::make_tuple(t.residual, t.min_eig_q, t.min_eig_rho_minus_q));
        }
        d["trace"] = trace;
        return d;
      },
      py::arg("q0"), py::arg("alpha"), py::arg("prior"), py::arg("channel"), py::arg("config") = SeConfig{},
      "Iterates to a fixed point. The trace holds (residual, min eig q, min eig rho - q) per step.");
  m.def(
      "se_phase",
      [](double alpha, const std::vector<SeInit>& inits, const PriorModel& p, const ChannelModel& ch,
         const SeConfig& cfg) {
        SePhase ph;
        {
          py::gil_scoped_release release;
          ph = se_phase(alpha, inits, p, ch, cfg);
        }
        py::list points;
        for (const auto& [init, fp] : ph.points) {
          py::dict d = se_point_dict(fp);
          d["init"] = init;
          points.append(d);
        }
        py::dict out;
        out["points"] = points;
        out["dominant"] = ph.dominant;
        out["degenerate"] = ph.degenerate;
        return out;
      },
      py::arg("alpha"), py::arg("inits"), py::arg("prior"), py::arg("channel"), py::arg("config") = SeConfig{});
  m.def(
      "free_entropy",
      [](const Mat& q, const Mat& q_hat, double alpha, const PriorModel& p, const ChannelModel& ch) {
        return free_entropy(q, q_hat, alpha, p, ch);
      },
      py::arg("q"), py::arg("q_hat"), py::arg("alpha"), py::arg("prior"), py::arg("channel"));
  m.def("gen_error", [](const Mat& q, const Mat& rho, const ChannelModel& ch) { return gen_error(q, rho, ch); },
        py::arg("q"), py::arg("rho"), py::arg("channel"));
  m.def(
      "gen_error_k2",
      [](double q_d, double q_a, int samples, std::uint64_t seed) {
        const McEstimate e = gen_error_k2(q_d, q_a, samples, seed);
        return py::make_tuple(e.value, e.std_error);
      },
      py::arg("q_d"), py::arg("q_a"), py::arg("samples") = 1'000'000, py::arg("seed") = 1,
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "gibbs_vs_bayes",
      [](const Mat& q, const Mat& rho, const ChannelModel& ch, int samples, std::uint64_t seed) {
        const GibbsBayes g = gibbs_vs_bayes(q, rho, ch, samples, seed);
        py::dict d;
        d["gibbs"] = g.gibbs.value;
        d["gibbs_stderr"] = g.gibbs.std_error;
        d["bayes"] = g.bayes.value;
        d["bayes_stderr"] = g.bayes.std_error;
        d["ratio"] = g.ratio;
        d["ratio_stderr"] = g.ratio_stderr;
        return d;
      },
      py::arg("q"), py::arg("rho"), py::arg("channel"), py::arg("samples") = 400'000, py::arg("seed") = 1);
  m.def(
      "specialization_growth",
      [](double alpha, const PriorModel& p, const ChannelModel& ch) { return specialization_growth(alpha, p, ch); },
      py::arg("alpha"), py::arg("prior"), py::arg("channel"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "find_transition",
      [](TransitionKind kind, double lo, double hi, const PriorModel& p, const ChannelModel& ch, double tol) {
        const TransitionResult r = find_transition(kind, lo, hi, p, ch, tol);
        return py::make_tuple(r.alpha, r.lo, r.hi);
      },
      py::arg("kind"), py::arg("alpha_lo"), py::arg("alpha_hi"), py::arg("prior"), py::arg("channel"),
      py::arg("tol") = 1e-3, py::call_guard<py::gil_scoped_release>(),
      "Returns (alpha, lo, hi) of the final bracket.");

  // Large K
  py::class_<LargeKBranch>(m, "LargeKBranch")
      .def_readonly("alpha", &LargeKBranch::alpha)
      .def_property_readonly("q_d", [](const LargeKBranch& b) { return b.point.q_d; })
      .def_property_readonly("q_a", [](const LargeKBranch& b) { return b.point.q_a; })
      .def_property_readonly("chi", [](const LargeKBranch& b) { return b.point.chi; })
      .def_property_readonly("gamma", [](const LargeKBranch& b) { return b.point.gamma; })
      .def_readonly("f", &LargeKBranch::f)
      .def_readonly("eps_g", &LargeKBranch::eps_g)
      .def_readonly("branch", &LargeKBranch::branch)
      .def_readonly("stable", &LargeKBranch::stable)
      .def_readonly("converged", &LargeKBranch::converged);
  m.def("gen_error_large_k", &gen_error_large_k, py::arg("q_d"), py::arg("q_a"));
  m.def("solve_unscaled", [](double a) { return solve_unscaled(a); }, py::arg("alpha"));
  m.def("solve_scaled", [](double a) { return solve_scaled(a); }, py::arg("alpha_bar"));
  m.def("dominant_scaled", [](double a) { return dominant_scaled(a); }, py::arg("alpha_bar"));
  m.def(
      "large_k_spinodal",
      [](double lo, double hi, double tol) { return large_k_spinodal(lo, hi, tol).alpha; }, py::arg("lo"),
      py::arg("hi"), py::arg("tol") = 1e-4);
  m.def(
      "large_k_spec_transition",
      [](double lo, double hi, double tol) { return large_k_spec_transition(lo, hi, tol).alpha; }, py::arg("lo"),
      py::arg("hi"), py::arg("tol") = 1e-4);

  // AMP
  py::class_<TeacherInstance>(m, "TeacherInstance")
      .def_readonly("n", &TeacherInstance::n)
      .def_readonly("m", &TeacherInstance::m)
      .def_readonly("k", &TeacherInstance::k)
      .def_readonly("alpha", &TeacherInstance::alpha)
      .def_readonly("seed", &TeacherInstance::seed)
      .def_readonly("w_star", &TeacherInstance::w_star)
      .def_readonly("y", &TeacherInstance::y)
      .def_property_readonly("x", [](const TeacherInstance& t) {
        py::array_t<float> a({t.m, t.n});
        std::copy(t.x.begin(), t.x.end(), a.mutable_data());
        return a;
      });
  m.def("generate_instance", &generate_instance, py::arg("n"), py::arg("alpha"), py::arg("prior"),
        py::arg("channel"), py::arg("seed"), py::call_guard<py::gil_scoped_release>());

  py::class_<AmpConfig>(m, "AmpConfig")
      .def(py::init<>())
      .def_readwrite("damping", &AmpConfig::damping)
      .def_readwrite("tol", &AmpConfig::tol)
      .def_readwrite("max_iters", &AmpConfig::max_iters)
      .def_readwrite("onsager", &AmpConfig::onsager)
      .def_readwrite("init_seed", &AmpConfig::init_seed);

  m.def(
      "amp_run",
      [](const TeacherInstance& inst, AmpInit init, const AmpConfig& cfg, int n_test, std::uint64_t test_seed) {
        std::pair<AmpState, RunReport> r;
        {
          py::gil_scoped_release release;
          r = amp_run(inst, init, cfg, n_test, test_seed);
        }
        const auto& [state, rep] = r;
        py::dict d;
        d["w_hat"] = state.w_hat_matrix();
        d["q"] = rep.overlap.q;
        d["q00"] = rep.overlap.q00;
        d["q01"] = rep.overlap.q01;
        d["permutation"] = rep.overlap.permutation;
        d["q_self"] = rep.q_self;
        d["eps_g_closed"] = rep.eps_g_closed;
        if (n_test > 0) {
          d["eps_g_empirical"] = rep.eps_g_empirical.value;
          d["eps_g_empirical_stderr"] = rep.eps_g_empirical.std_error;
        }
        d["iterations"] = rep.iterations;
        d["converged"] = rep.converged;
        return d;
      },
      py::arg("instance"), py::arg("init") = AmpInit::Random, py::arg("config") = AmpConfig{},
      py::arg("n_test") = 0, py::arg("test_seed") = 1);
  m.def(
      "measure_overlap",
      [](const Eigen::MatrixXd& w_hat, const Eigen::MatrixXd& w_star) {
        const OverlapReport r = measure_overlap(w_hat, w_star);
        return py::make_tuple(r.q, r.permutation);
      },
      py::arg("w_hat"), py::arg("w_star"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv = {"committee-sweep"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the sweep driver in-process; returns (exit code, stdout, stderr).");
}
