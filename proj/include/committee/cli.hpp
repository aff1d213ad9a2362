#pragma once

// Batch driver: parameter sweeps, transition searches and finite-size AMP runs
// written as CSV or JSON lines.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace committee::cli {

enum class Mode { Se, Amp, LargeK, Transition, GenError };
enum class Format { Csv, Jsonl };

struct SweepConfig {
  Mode mode = Mode::Se;
  std::string channel = "committee";  // committee | parity | linear
  std::string prior = "gaussian";     // gaussian | rademacher
  int k = 2;
  double delta = 0.0;                 // output noise, linear channel only
  double alpha_min = 0.5;
  double alpha_max = 4.0;
  int alpha_steps = 71;               // grid points, endpoints included
  int n = 1000;
  std::vector<std::uint64_t> seeds = {1};
  std::string init = "both";          // uninformed | informed | both
  double damping = 0.0;
  int mc_samples = 100'000;
  std::string kind = "spec";          // spec | spinodal | it | perf | largek-spinodal | largek-spec
  std::string regime = "scaled";      // large-K regime: scaled (alpha = alpha_bar K) | unscaled
  double se_tol = 1e-10;
  double amp_tol = 1e-7;
  int max_iters = 1000;
  double alpha_tol = 1e-3;            // transition bisection
  int threads = 1;
  bool timing = false;                // fill wall_time_ms (breaks byte-identical output)
  std::string out;                    // empty: data to stdout, summary to stderr
  Format format = Format::Csv;
};

struct Diagnostic {
  std::string field;
  std::string message;
};

/// Empty iff the configuration is runnable.
std::vector<Diagnostic> validate(const SweepConfig& cfg);

/// The alpha grid implied by alpha_min, alpha_max and alpha_steps.
std::vector<double> alpha_grid(const SweepConfig& cfg);

/// Sets one field from its flag name (without dashes, '_' and '-' both accepted).
/// Returns a diagnostic when the name is unknown or the value does not parse.
std::optional<Diagnostic> set_field(SweepConfig& cfg, const std::string& name, const std::string& value);

/// Applies a JSON object of flag names to values.
std::vector<Diagnostic> apply_json(SweepConfig& cfg, const std::string& json_text);

struct ResultRow {
  std::string mode;
  std::optional<double> alpha;
  std::string kind;
  std::string init;
  std::optional<std::uint64_t> seed;
  std::string branch;
  std::optional<bool> dominant, stable, converged;
  std::optional<double> q00, q01, q_d, q_a, f_rs, eps_g;
  std::optional<double> eps_g_mc, eps_g_mc_stderr, eps_g_gibbs, gibbs_bayes_ratio;
  std::optional<double> se_q00, se_q01, se_eps_g;
  std::optional<double> q00_stderr, q01_stderr, eps_g_stderr;
  std::optional<double> bracket_lo, bracket_hi;
  std::optional<int> iterations;
  std::optional<double> wall_time_ms;
};

/// Column names in output order.
const std::vector<std::string>& columns();

/// Runs the sweep; rows come back in grid order whatever the thread count.
/// Throws committee::Error on numerical failure.
std::vector<ResultRow> run_sweep(const SweepConfig& cfg);

void write_csv(std::ostream& os, const std::vector<ResultRow>& rows);
void write_jsonl(std::ostream& os, const std::vector<ResultRow>& rows);
void write_summary(std::ostream& os, const std::vector<ResultRow>& rows);

/// Full command line: exit 0 on success, 2 on validation errors, 3 on numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace committee::cli
