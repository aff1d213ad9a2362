#include "committee/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

#include "CLI11.hpp"
#include "json.hpp"

#include "committee/amp.hpp"
#include "committee/error.hpp"
#include "committee/large_k.hpp"
#include "committee/state_evolution.hpp"

namespace committee::cli {

namespace {

using Json = nlohmann::ordered_json;

std::string normalize(std::string name) {
  for (char& c : name) {
    if (c == '_') c = '-';
  }
  return name;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  std::istringstream is(s);
  T v{};
  is >> v;
  if (is.fail()) return false;
  is >> std::ws;
  if (!is.eof()) return false;
  out = v;
  return true;
}

bool parse_seeds(const std::string& s, std::vector<std::uint64_t>& out) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) return false;
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      std::uint64_t v = 0;
      if (!parse_number(item, v)) return false;
      seeds.push_back(v);
    } else {
      std::uint64_t lo = 0, hi = 0;
      if (!parse_number(item.substr(0, dash), lo) || !parse_number(item.substr(dash + 1), hi) || hi < lo) return false;
      if (hi - lo > 1'000'000) return false;
      for (std::uint64_t v = lo; v <= hi; ++v) seeds.push_back(v);
    }
  }
  out = std::move(seeds);
  return true;
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
  } else if (s == "false" || s == "0") {
    out = false;
  } else {
    return false;
  }
  return true;
}

using Setter = std::function<bool(SweepConfig&, const std::string&)>;

template <class T>
Setter number_setter(T SweepConfig::*field) {
  return [field](SweepConfig& c, const std::string& v) { return parse_number(v, c.*field); };
}

Setter string_setter(std::string SweepConfig::*field) {
  return [field](SweepConfig& c, const std::string& v) {
    c.*field = v;
    return true;
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"mode",
       [](SweepConfig& c, const std::string& v) {
         static const std::map<std::string, Mode> modes = {{"se", Mode::Se},
                                                           {"amp", Mode::Amp},
                                                           {"largek", Mode::LargeK},
                                                           {"transition", Mode::Transition},
                                                           {"generror", Mode::GenError}};
         const auto it = modes.find(v);
         if (it == modes.end()) return false;
         c.mode = it->second;
         return true;
       }},
      {"format",
       [](SweepConfig& c, const std::string& v) {
         if (v == "csv") {
           c.format = Format::Csv;
         } else if (v == "jsonl") {
           c.format = Format::Jsonl;
         } else {
           return false;
         }
         return true;
       }},
      {"channel", string_setter(&SweepConfig::channel)},
      {"prior", string_setter(&SweepConfig::prior)},
      {"init", string_setter(&SweepConfig::init)},
      {"kind", string_setter(&SweepConfig::kind)},
      {"regime", string_setter(&SweepConfig::regime)},
      {"out", string_setter(&SweepConfig::out)},
      {"k", number_setter(&SweepConfig::k)},
      {"delta", number_setter(&SweepConfig::delta)},
      {"alpha-min", number_setter(&SweepConfig::alpha_min)},
      {"alpha-max", number_setter(&SweepConfig::alpha_max)},
      {"alpha-steps", number_setter(&SweepConfig::alpha_steps)},
      {"n", number_setter(&SweepConfig::n)},
      {"damping", number_setter(&SweepConfig::damping)},
      {"mc-samples", number_setter(&SweepConfig::mc_samples)},
      {"se-tol", number_setter(&SweepConfig::se_tol)},
      {"amp-tol", number_setter(&SweepConfig::amp_tol)},
      {"max-iters", number_setter(&SweepConfig::max_iters)},
      {"alpha-tol", number_setter(&SweepConfig::alpha_tol)},
      {"threads", number_setter(&SweepConfig::threads)},
      {"seeds", [](SweepConfig& c, const std::string& v) { return parse_seeds(v, c.seeds); }},
      {"timing", [](SweepConfig& c, const std::string& v) { return parse_bool(v, c.timing); }},
  };
  return table;
}

// ---------------------------------------------------------------------------

PriorModel make_prior(const SweepConfig& c) {
  return c.prior == "rademacher" ? PriorModel::rademacher(c.k) : PriorModel::gaussian(c.k);
}

ChannelModel make_channel(const SweepConfig& c) {
  if (c.channel == "parity") return ChannelModel::parity(c.k);
  if (c.channel == "linear") return ChannelModel::linear(c.k, c.delta);
  return ChannelModel::committee(c.k);
}

std::vector<SeInit> se_inits(const SweepConfig& c) {
  if (c.init == "uninformed") return {SeInit::Uninformed};
  if (c.init == "informed") return {SeInit::Informed};
  return {SeInit::Uninformed, SeInit::Informed};
}

SeConfig se_config(const SweepConfig& c) {
  SeConfig s;
  s.tol = c.se_tol;
  return s;
}

bool is_largek_kind(const std::string& kind) { return kind == "largek-spinodal" || kind == "largek-spec"; }

TransitionKind transition_kind(const std::string& kind) {
  if (kind == "spinodal") return TransitionKind::Spinodal;
  if (kind == "it") return TransitionKind::IT;
  if (kind == "perf") return TransitionKind::Perf;
  return TransitionKind::Spec;
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Runs task(i) for i < count on a pool of threads; each task fills its own slot.
void run_pool(int count, int threads, const std::function<void(int)>& task) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int pool = std::max(1, std::min(threads, count));
  if (pool == 1) {
    worker();
  } else {
    std::vector<std::thread> ts;
    for (int t = 0; t < pool; ++t) ts.emplace_back(worker);
    for (auto& t : ts) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<ResultRow> se_rows(const SweepConfig& c, double alpha) {
  const PriorModel prior = make_prior(c);
  const ChannelModel ch = make_channel(c);
  const SePhase phase = se_phase(alpha, se_inits(c), prior, ch, se_config(c));
  std::vector<ResultRow> rows;
  for (std::size_t j = 0; j < phase.points.size(); ++j) {
    const auto& [init, fp] = phase.points[j];
    ResultRow r;
    r.mode = "se";
    r.alpha = alpha;
    r.init = std::string(to_string(init));
    r.branch = std::string(to_string(fp.branch));
    r.dominant = static_cast<int>(j) == phase.dominant;
    r.q00 = fp.q00;
    r.q01 = fp.q01;
    r.f_rs = fp.f_rs;
    r.eps_g = fp.eps_g;
    r.iterations = fp.iterations;
    r.converged = fp.converged;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ResultRow> generror_rows(const SweepConfig& c, double alpha) {
  const PriorModel prior = make_prior(c);
  const ChannelModel ch = make_channel(c);
  const SeConfig se = se_config(c);
  const SePhase phase = se_phase(alpha, se_inits(c), prior, ch, se);
  const SeFixedPoint& fp = phase.points[phase.dominant].second;
  ResultRow r;
  r.mode = "generror";
  r.alpha = alpha;
  r.init = std::string(to_string(phase.points[phase.dominant].first));
  r.branch = std::string(to_string(fp.branch));
  r.dominant = true;
  r.q00 = fp.q00;
  r.q01 = fp.q01;
  r.f_rs = fp.f_rs;
  r.eps_g = fp.eps_g;
  r.iterations = fp.iterations;
  r.converged = fp.converged;
  const GibbsBayes gb = gibbs_vs_bayes(fp.q, prior.rho, ch, c.mc_samples, c.seeds.front(), se);
  r.eps_g_mc = gb.bayes.value;
  r.eps_g_mc_stderr = gb.bayes.std_error;
  r.eps_g_gibbs = gb.gibbs.value;
  r.gibbs_bayes_ratio = gb.ratio;
  return {r};
}

std::vector<ResultRow> largek_rows(const SweepConfig& c, double alpha) {
  std::vector<ResultRow> rows;
  auto row_of = [&](const LargeKBranch& b, bool dominant) {
    ResultRow r;
    r.mode = "largek";
    r.alpha = alpha;
    r.kind = c.regime;
    r.branch = std::string(to_string(b.branch));
    r.dominant = dominant;
    r.stable = b.stable;
    r.converged = b.converged;
    r.q_d = b.point.q_d;
    r.q_a = b.point.q_a;
    r.f_rs = b.f;
    r.eps_g = b.eps_g;
    return r;
  };
  if (c.regime == "unscaled") {
    rows.push_back(row_of(solve_unscaled(alpha), true));
    return rows;
  }
  const auto branches = solve_scaled(alpha);
  const LargeKBranch top = dominant_scaled(alpha);
  for (const auto& b : branches) rows.push_back(row_of(b, b.point.q_d == top.point.q_d && b.f == top.f));
  return rows;
}

std::vector<ResultRow> transition_rows(const SweepConfig& c) {
  TransitionResult t;
  if (c.kind == "largek-spinodal") {
    t = large_k_spinodal(c.alpha_min, c.alpha_max, c.alpha_tol);
  } else if (c.kind == "largek-spec") {
    t = large_k_spec_transition(c.alpha_min, c.alpha_max, c.alpha_tol);
  } else {
    t = find_transition(transition_kind(c.kind), c.alpha_min, c.alpha_max, make_prior(c), make_channel(c),
                        c.alpha_tol, se_config(c));
  }
  ResultRow r;
  r.mode = "transition";
  r.alpha = t.alpha;
  r.kind = c.kind;
  r.bracket_lo = t.lo;
  r.bracket_hi = t.hi;
  r.iterations = t.evaluations;
  r.converged = true;
  return {r};
}

struct AmpJob {
  double alpha;
  AmpInit init;
  std::uint64_t seed;
};

ResultRow amp_row(const SweepConfig& c, const AmpJob& job, const SeFixedPoint& se) {
  const TeacherInstance inst = generate_instance(c.n, job.alpha, make_prior(c), make_channel(c), job.seed);
  AmpConfig ac;
  ac.damping = c.damping;
  ac.tol = c.amp_tol;
  ac.max_iters = c.max_iters;
  const auto [state, rep] = amp_run(inst, job.init, ac, c.mc_samples, job.seed);
  ResultRow r;
  r.mode = "amp";
  r.alpha = job.alpha;
  r.kind = "run";
  r.init = std::string(to_string(job.init));
  r.seed = job.seed;
  r.q00 = rep.overlap.q00;
  r.q01 = rep.overlap.q01;
  r.eps_g = rep.eps_g_closed;
  if (c.mc_samples > 0) {
    r.eps_g_mc = rep.eps_g_empirical.value;
    r.eps_g_mc_stderr = rep.eps_g_empirical.std_error;
  }
  r.se_q00 = se.q00;
  r.se_q01 = se.q01;
  r.se_eps_g = se.eps_g;
  r.iterations = rep.iterations;
  r.converged = rep.converged;
  return r;
}

ResultRow amp_summary(const std::vector<ResultRow>& runs) {
  const double count = static_cast<double>(runs.size());
  auto mean_se = [&](auto get) {
    double s = 0.0, s2 = 0.0;
    for (const auto& r : runs) {
      const double v = get(r);
      s += v;
      s2 += v * v;
    }
    const double mean = s / count;
    const double var = runs.size() > 1 ? std::max(0.0, (s2 - count * mean * mean) / (count - 1.0)) : 0.0;
    return std::pair{mean, std::sqrt(var / count)};
  };
  ResultRow r = runs.front();
  r.kind = "summary";
  r.seed.reset();
  r.iterations.reset();
  r.wall_time_ms.reset();
  std::tie(r.q00, r.q00_stderr) = mean_se([](const ResultRow& x) { return *x.q00; });
  std::tie(r.q01, r.q01_stderr) = mean_se([](const ResultRow& x) { return *x.q01; });
  std::tie(r.eps_g, r.eps_g_stderr) = mean_se([](const ResultRow& x) { return *x.eps_g; });
  if (runs.front().eps_g_mc) {
    std::tie(r.eps_g_mc, r.eps_g_mc_stderr) = mean_se([](const ResultRow& x) { return *x.eps_g_mc; });
  }
  bool all = true;
  for (const auto& x : runs) all = all && *x.converged;
  r.converged = all;
  return r;
}

std::vector<ResultRow> run_amp(const SweepConfig& c) {
  const std::vector<double> alphas = alpha_grid(c);
  std::vector<AmpInit> inits;
  if (c.init != "informed") inits.push_back(AmpInit::Random);
  if (c.init != "uninformed") inits.push_back(AmpInit::Informed);

  // SE reference per (alpha, init): random starts track the uninformed SE fixed point.
  const PriorModel prior = make_prior(c);
  const ChannelModel ch = make_channel(c);
  std::vector<SeFixedPoint> refs(alphas.size() * inits.size());
  run_pool(static_cast<int>(refs.size()), c.threads, [&](int j) {
    const AmpInit init = inits[j % inits.size()];
    const SeInit si = init == AmpInit::Random ? SeInit::Uninformed : SeInit::Informed;
    refs[j] = se_run(initial_overlap(si, prior, se_config(c)), alphas[j / inits.size()], prior, ch, se_config(c));
  });

  std::vector<AmpJob> jobs;
  for (double a : alphas) {
    for (AmpInit init : inits) {
      for (std::uint64_t seed : c.seeds) jobs.push_back({a, init, seed});
    }
  }
  std::vector<ResultRow> runs(jobs.size());
  run_pool(static_cast<int>(jobs.size()), c.threads, [&](int j) {
    const auto start = Clock::now();
    runs[j] = amp_row(c, jobs[j], refs[j / c.seeds.size()]);
    if (c.timing) runs[j].wall_time_ms = elapsed_ms(start);
  });

  std::vector<ResultRow> rows;
  const std::size_t per_group = c.seeds.size();
  for (std::size_t g = 0; g < refs.size(); ++g) {
    const std::vector<ResultRow> group(runs.begin() + g * per_group, runs.begin() + (g + 1) * per_group);
    rows.insert(rows.end(), group.begin(), group.end());
    rows.push_back(amp_summary(group));
  }
  return rows;
}

// ---------------------------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

// Field values as strings keyed by column; missing values are absent.
std::vector<std::optional<std::string>> cells(const ResultRow& r) {
  auto num = [](const std::optional<double>& v) -> std::optional<std::string> {
    if (!v) return std::nullopt;
    return format_number(*v);
  };
  auto text = [](const std::string& s) -> std::optional<std::string> {
    if (s.empty()) return std::nullopt;
    return s;
  };
  auto flag = [](const std::optional<bool>& b) -> std::optional<std::string> {
    if (!b) return std::nullopt;
    return std::string(*b ? "true" : "false");
  };
  std::optional<std::string> seed, iterations;
  if (r.seed) seed = std::to_string(*r.seed);
  if (r.iterations) iterations = std::to_string(*r.iterations);
  return {text(r.mode),          num(r.alpha),       text(r.kind),        text(r.init),
          seed,                  text(r.branch),     flag(r.dominant),    flag(r.stable),
          num(r.q00),            num(r.q01),         num(r.q_d),          num(r.q_a),
          num(r.f_rs),           num(r.eps_g),       num(r.eps_g_mc),     num(r.eps_g_mc_stderr),
          num(r.eps_g_gibbs),    num(r.gibbs_bayes_ratio), num(r.se_q00), num(r.se_q01),
          num(r.se_eps_g),       num(r.q00_stderr),  num(r.q01_stderr),   num(r.eps_g_stderr),
          num(r.bracket_lo),     num(r.bracket_hi),  iterations,          flag(r.converged),
          num(r.wall_time_ms)};
}

}  // namespace

const std::vector<std::string>& columns() {
  static const std::vector<std::string> names = {
      "mode",       "alpha",     "kind",       "init",         "seed",        "branch",
      "dominant",   "stable",    "q00",        "q01",          "q_d",         "q_a",
      "f_rs",       "eps_g",     "eps_g_mc",   "eps_g_mc_stderr", "eps_g_gibbs", "gibbs_bayes_ratio",
      "se_q00",     "se_q01",    "se_eps_g",   "q00_stderr",   "q01_stderr",  "eps_g_stderr",
      "bracket_lo", "bracket_hi", "iterations", "converged",   "wall_time_ms"};
  return names;
}

std::vector<double> alpha_grid(const SweepConfig& cfg) {
  std::vector<double> grid;
  if (cfg.alpha_steps < 1) return grid;
  if (cfg.alpha_steps == 1) return {cfg.alpha_min};
  for (int i = 0; i < cfg.alpha_steps; ++i) {
    grid.push_back(cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * i / (cfg.alpha_steps - 1));
  }
  return grid;
}

std::vector<Diagnostic> validate(const SweepConfig& c) {
  std::vector<Diagnostic> d;
  auto bad = [&](std::string field, std::string msg) { d.push_back({std::move(field), std::move(msg)}); };
  const bool largek = c.mode == Mode::LargeK || (c.mode == Mode::Transition && is_largek_kind(c.kind));

  if (c.channel != "committee" && c.channel != "parity" && c.channel != "linear") {
    bad("channel", "must be committee, parity or linear");
  }
  if (c.prior != "gaussian" && c.prior != "rademacher") bad("prior", "must be gaussian or rademacher");
  if (c.k < 1 || c.k > kMaxK) bad("k", "must be between 1 and " + std::to_string(kMaxK));
  if (c.channel == "parity" && c.k != 2) bad("k", "parity requires K=2");
  if (!(c.delta >= 0.0)) bad("delta", "must be nonnegative");
  if (c.delta > 0.0 && c.channel != "linear") bad("delta", "output noise needs the linear channel");
  if (c.init != "uninformed" && c.init != "informed" && c.init != "both") {
    bad("init", "must be uninformed, informed or both");
  }
  if (!(c.se_tol > 0.0)) bad("se-tol", "must be positive");
  if (c.threads < 1) bad("threads", "must be at least 1");
  if (largek && (c.prior != "gaussian" || c.channel != "committee")) {
    bad("prior", "the large-K limit is implemented for the Gaussian committee only");
  }

  if (c.mode == Mode::Transition) {
    static const std::vector<std::string> kinds = {"spec", "spinodal", "it", "perf", "largek-spinodal",
                                                   "largek-spec"};
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) {
      bad("kind", "must be spec, spinodal, it, perf, largek-spinodal or largek-spec");
    }
    if (!(c.alpha_min >= 0.0 && c.alpha_max > c.alpha_min)) bad("alpha-max", "bracket needs alpha-min < alpha-max");
    if (!(c.alpha_tol > 0.0)) bad("alpha-tol", "must be positive");
  } else {
    if (c.alpha_steps < 1) bad("alpha-steps", "alpha grid is empty");
    if (!(c.alpha_min >= 0.0)) bad("alpha-min", "must be nonnegative");
    if (c.alpha_steps > 1 && !(c.alpha_max > c.alpha_min)) bad("alpha-max", "alpha grid must be strictly increasing");
  }
  if (c.mode == Mode::LargeK && c.regime != "scaled" && c.regime != "unscaled") {
    bad("regime", "must be scaled or unscaled");
  }
  if (c.mode == Mode::Amp) {
    if (c.seeds.empty()) bad("seeds", "amp mode needs at least one seed");
    if (c.n < 10) bad("n", "must be at least 10");
    if (!(c.damping >= 0.0 && c.damping < 1.0)) bad("damping", "must lie in [0, 1)");
    if (!(c.amp_tol > 0.0)) bad("amp-tol", "must be positive");
    if (c.max_iters < 1) bad("max-iters", "must be positive");
    if (c.mc_samples < 0) bad("mc-samples", "must be nonnegative");
  }
  if (c.mode == Mode::GenError) {
    if (c.mc_samples < 1) bad("mc-samples", "must be positive");
    if (c.seeds.empty()) bad("seeds", "generror mode needs a seed");
  }
  return d;
}

std::optional<Diagnostic> set_field(SweepConfig& cfg, const std::string& name, const std::string& value) {
  const std::string key = normalize(name);
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) return Diagnostic{key, "unknown option"};
  if (!it->second(cfg, value)) return Diagnostic{key, "cannot parse '" + value + "'"};
  return std::nullopt;
}

std::vector<Diagnostic> apply_json(SweepConfig& cfg, const std::string& json_text) {
  std::vector<Diagnostic> d;
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    return {{"config", std::string("invalid JSON: ") + e.what()}};
  }
  if (!doc.is_object()) return {{"config", "top level must be an object"}};
  for (const auto& [key, val] : doc.items()) {
    std::string text;
    if (val.is_string()) {
      text = val.get<std::string>();
    } else if (val.is_array()) {
      for (const auto& item : val) {
        if (!text.empty()) text += ',';
        text += item.is_string() ? item.get<std::string>() : item.dump();
      }
    } else {
      text = val.dump();
    }
    if (auto diag = set_field(cfg, key, text)) d.push_back(*diag);
  }
  return d;
}

std::vector<ResultRow> run_sweep(const SweepConfig& cfg) {
  const auto diags = validate(cfg);
  if (!diags.empty()) throw Error(ErrorCode::Config, diags.front().field + ": " + diags.front().message);
  if (cfg.mode == Mode::Amp) return run_amp(cfg);
  if (cfg.mode == Mode::Transition) {
    const auto start = Clock::now();
    auto rows = transition_rows(cfg);
    if (cfg.timing) rows.front().wall_time_ms = elapsed_ms(start);
    return rows;
  }

  const std::vector<double> alphas = alpha_grid(cfg);
  std::vector<std::vector<ResultRow>> slots(alphas.size());
  run_pool(static_cast<int>(alphas.size()), cfg.threads, [&](int i) {
    const auto start = Clock::now();
    switch (cfg.mode) {
      case Mode::Se: slots[i] = se_rows(cfg, alphas[i]); break;
      case Mode::GenError: slots[i] = generror_rows(cfg, alphas[i]); break;
      default: slots[i] = largek_rows(cfg, alphas[i]); break;
    }
    if (cfg.timing) {
      const double ms = elapsed_ms(start);
      for (auto& r : slots[i]) r.wall_time_ms = ms;
    }
  });
  std::vector<ResultRow> rows;
  for (auto& s : slots) rows.insert(rows.end(), s.begin(), s.end());
  return rows;
}

void write_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  const auto& names = columns();
  for (std::size_t j = 0; j < names.size(); ++j) os << (j ? "," : "") << names[j];
  os << "\r\n";
  for (const auto& r : rows) {
    const auto values = cells(r);
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (j) os << ',';
      if (values[j]) os << csv_escape(*values[j]);
    }
    os << "\r\n";
  }
}

void write_jsonl(std::ostream& os, const std::vector<ResultRow>& rows) {
  const auto& names = columns();
  for (const auto& r : rows) {
    const auto values = cells(r);
    Json obj = Json::object();
    for (std::size_t j = 0; j < names.size(); ++j) {
      const auto& v = values[j];
      if (!v) {
        obj[names[j]] = nullptr;
      } else if (*v == "true" || *v == "false") {
        obj[names[j]] = *v == "true";
      } else if (names[j] == "seed" || names[j] == "iterations") {
        obj[names[j]] = std::stoll(*v);
      } else if (names[j] == "mode" || names[j] == "kind" || names[j] == "init" || names[j] == "branch") {
        obj[names[j]] = *v;
      } else {
        obj[names[j]] = std::stod(*v);
      }
    }
    os << obj.dump() << '\n';
  }
}

void write_summary(std::ostream& os, const std::vector<ResultRow>& rows) {
  auto num = [](const std::optional<double>& a, const std::optional<double>& b, int digits) {
    const std::optional<double>& v = a ? a : b;
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
    return std::string(buf);
  };
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %9s %-15s %-16s %9s %9s %9s %6s\n", "mode", "alpha", "kind/init", "branch",
                "q00|q_d", "q01|q_a", "eps_g", "iters");
  os << line;
  for (const auto& r : rows) {
    const std::string label = !r.kind.empty() && !r.init.empty() ? r.kind + "/" + r.init : r.kind + r.init;
    const std::string iters = r.iterations ? std::to_string(*r.iterations) : "-";
    std::snprintf(line, sizeof line, "%-10s %9s %-15s %-16s %9s %9s %9s %6s\n", r.mode.c_str(),
                  num(r.alpha, {}, 4).c_str(), label.c_str(), r.branch.empty() ? "-" : r.branch.c_str(),
                  num(r.q00, r.q_d, 4).c_str(), num(r.q01, r.q_a, 4).c_str(), num(r.eps_g, {}, 5).c_str(),
                  iters.c_str());
    os << line;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Committee machine: state evolution, AMP and large-K sweeps"};
  std::map<std::string, std::string> raw;
  std::string config_path;
  bool timing = false;
  app.add_option("--config", config_path, "JSON file with option values; flags override it");
  app.add_option("--mode", raw["mode"], "se | amp | largek | transition | generror");
  app.add_option("--channel", raw["channel"], "committee | parity | linear");
  app.add_option("--prior", raw["prior"], "gaussian | rademacher");
  app.add_option("--k", raw["k"], "number of hidden units");
  app.add_option("--delta", raw["delta"], "output noise variance (linear channel)");
  app.add_option("--alpha-min", raw["alpha-min"], "first grid point, or lower bracket for transitions");
  app.add_option("--alpha-max", raw["alpha-max"], "last grid point, or upper bracket for transitions");
  app.add_option("--alpha-steps", raw["alpha-steps"], "number of grid points");
  app.add_option("--n", raw["n"], "input dimension for AMP");
  app.add_option("--seeds", raw["seeds"], "comma-separated seeds or ranges, e.g. 1-10");
  app.add_option("--init", raw["init"], "uninformed | informed | both");
  app.add_option("--damping", raw["damping"], "AMP damping in [0, 1)");
  app.add_option("--mc-samples", raw["mc-samples"], "Monte Carlo samples for test errors");
  app.add_option("--kind", raw["kind"], "transition: spec | spinodal | it | perf | largek-spinodal | largek-spec");
  app.add_option("--regime", raw["regime"], "large-K regime: scaled | unscaled");
  app.add_option("--se-tol", raw["se-tol"], "state evolution tolerance");
  app.add_option("--amp-tol", raw["amp-tol"], "AMP tolerance on the mean update");
  app.add_option("--max-iters", raw["max-iters"], "AMP iteration cap");
  app.add_option("--alpha-tol", raw["alpha-tol"], "bisection tolerance for transitions");
  app.add_option("--threads", raw["threads"], "worker threads");
  app.add_option("--out", raw["out"], "output file (default: stdout)");
  app.add_option("--format", raw["format"], "csv | jsonl");
  app.add_flag("--timing", timing, "record wall_time_ms per row");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  SweepConfig cfg;
  std::vector<Diagnostic> diags;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      diags.push_back({"config", "cannot read " + config_path});
    } else {
      std::stringstream buf;
      buf << in.rdbuf();
      const auto d = apply_json(cfg, buf.str());
      diags.insert(diags.end(), d.begin(), d.end());
    }
  }
  for (const auto& [name, value] : raw) {
    if (app.count("--" + name) == 0) continue;
    if (auto d = set_field(cfg, name, value)) diags.push_back(*d);
  }
  if (timing) cfg.timing = true;
  const auto checks = validate(cfg);
  diags.insert(diags.end(), checks.begin(), checks.end());
  if (!diags.empty()) {
    for (const auto& d : diags) err << "error: " << d.field << ": " << d.message << '\n';
    return 2;
  }

  std::vector<ResultRow> rows;
  try {
    rows = run_sweep(cfg);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::Config ? 2 : 3;
  }

  std::ofstream file;
  std::ostream* data = &out;
  std::ostream* summary = &err;
  if (!cfg.out.empty()) {
    file.open(cfg.out, std::ios::binary);
    if (!file) {
      err << "error: out: cannot write " << cfg.out << '\n';
      return 2;
    }
    data = &file;
    summary = &out;
  }
  if (cfg.format == Format::Csv) {
    write_csv(*data, rows);
  } else {
    write_jsonl(*data, rows);
  }
  write_summary(*summary, rows);
  return 0;
}

}  // namespace committee::cli
