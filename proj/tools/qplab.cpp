// Command line front end: one subcommand per task, JSON config in, CSV/JSON
// (and an SVG line plot where the task has a primary curve) out. Exit codes:
// 0 success, 2 config error, 3 task error, 4 partial sweep failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "qplab/runner.hpp"

namespace {

const char* blurb(const std::string& task) {
  if (task == "freq") return "continued fraction data and quotient growth of a frequency";
  if (task == "lyap") return "top Lyapunov exponent of the transfer cocycle";
  if (task == "accel") return "Lyapunov exponent against the phase-strip offset, slopes snapped";
  if (task == "classify") return "regime label and type at one energy";
  if (task == "ids") return "eigenvalue counting fraction, optionally checked against the rotation number";
  if (task == "holder") return "local Holder exponent of the counting function";
  if (task == "localize") return "eigenvector decay rates of a long Dirichlet truncation";
  if (task == "dual-spectrum") return "full Lyapunov spectrum of the finite-range dual cocycle";
  if (task == "jensen") return "strip-offset profile of the dual exterior exponent with breakpoint fits";
  if (task == "haro-puig") return "residual of the exponent identity linking operator and dual";
  if (task == "dominated") return "finite-scale domination certificate for the dual cocycle";
  if (task == "center") return "canonical frame of the slow two-dimensional subbundle";
  if (task == "rotation") return "fibered rotation numbers of the center frame";
  if (task == "duality-check") return "rotation pair against the counting function over an energy grid";
  if (task == "truncation-study") return "frame convergence under growing truncation order";
  if (task == "bloch") return "quasiperiodic wave pair reconstructed from the center frame";
  if (task == "sweep") return "run another task over a parameter grid";
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for one-frequency quasiperiodic Schrodinger operators "
               "and their finite-range dual operators"};
  app.set_version_flag("--version", std::string(qplab::kToolName) + " " + qplab::kToolVersion);
  app.require_subcommand(1);

  std::string config_path, out_override;
  int jobs_override = 0;
  bool no_cache = false;
  for (const auto& name : qplab::task_names()) {
    auto* sc = app.add_subcommand(name, blurb(name));
    sc->add_option("--config", config_path, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    sc->add_option("--jobs", jobs_override, "parallelism degree (overrides the config)");
    sc->add_option("--out", out_override, "output prefix (overrides the config)");
    sc->add_flag("--no-cache", no_cache, "compute fresh and leave the cache untouched");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string task = app.get_subcommands().front()->get_name();

  try {
    std::ifstream f(config_path);
    std::ostringstream ss;
    ss << f.rdbuf();
    if (!f.good() && !f.eof())
      qplab::config_fail("cannot read config '" + config_path + "'");
    qplab::json raw;
    try {
      raw = qplab::json::parse(ss.str());
    } catch (const std::exception& e) {
      qplab::config_fail("config '" + config_path + "' is not valid JSON: " + e.what());
    }
    qplab::RunConfig cfg = qplab::parse_config(raw, task);
    if (jobs_override > 0) cfg.jobs = jobs_override;
    if (!out_override.empty()) cfg.out = out_override;
    if (const char* env = std::getenv("QPLAB_CACHE"))
      if (*env) cfg.cache_dir = env;

    auto res = qplab::run(cfg, no_cache);
    std::string files = res.csv_path + " " + res.json_path;
    if (!res.svg_path.empty()) files += " " + res.svg_path;
    std::fprintf(stderr, "%s %s: %s [%s, %.3fs, hash %s]\n", qplab::kToolName, task.c_str(),
                 files.c_str(), res.cache_hit ? "cache hit" : "fresh", res.wall_time_s,
                 res.config_hash.c_str());
    return res.exit_hint;
  } catch (const qplab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == qplab::errc::config_error ? 2 : 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
