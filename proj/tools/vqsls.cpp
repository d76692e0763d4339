#include <cstdlib>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "vqsls/pipeline.hpp"

using namespace vqsls;

namespace {

enum ExitCode { ok = 0, config_error = 2, missing_prerequisite = 3, numerical_failure = 4 };

// Checkpoints each stage owns; --force removes them before the stage runs.
const std::map<std::string, std::vector<std::string>> kStageFiles = {
    {"surrogate", {"surrogate.json"}},
    {"hessian", {"hessian.json"}},
    {"windows", {"windows.json"}},
    {"linesearch", {"linesearch.json", "history.csv", "evaluations.csv"}},
    {"powell", {"powell.json", "powell_history.csv", "powell_evaluations.csv"}},
    {"shots", {"shots.json", "shots.csv"}},
};

void remove_outputs(const std::filesystem::path& dir, const std::string& stage) {
  for (const auto& [name, files] : kStageFiles)
    if (stage == "run-all" || name == stage)
      for (const auto& f : files) std::filesystem::remove(dir / f);
  if (stage == "run-all") std::filesystem::remove(dir / "summary.json");
}

int run_stage(const std::string& stage, Workspace& ws) {
  if (stage == "surrogate") {
    const auto s = stage_surrogate(ws);
    std::cout << "surrogate energy " << csv_number(s.energy) << " after " << s.iterations << " iterations\n";
  } else if (stage == "hessian") {
    const auto [h, d] = stage_hessian(ws);
    std::cout << "hessian eigenvalues";
    for (double v : h.eigenvalues) std::cout << ' ' << csv_number(v);
    std::cout << "\nkept " << d.size() << " of " << h.eigenvalues.size() << " directions\n";
  } else if (stage == "windows") {
    const auto w = stage_windows(ws);
    std::cout << "window half-widths";
    for (double v : w.half_widths) std::cout << ' ' << csv_number(v);
    std::cout << "\nnoise level " << csv_number(w.delta_e) << '\n';
  } else if (stage == "linesearch") {
    const auto run = stage_linesearch(ws);
    const auto& last = run.iterations.back();
    std::cout << "line search energy " << csv_number(last.energy) << " +/- " << csv_number(last.sigma) << " after "
              << run.iterations.size() << " iterations, " << last.calls_after << " calls"
              << (run.converged ? "" : " (not converged)") << '\n';
  } else if (stage == "powell") {
    const auto r = stage_powell(ws);
    std::cout << "powell energy " << csv_number(r.result.value) << " after " << r.result.calls << " calls"
              << (r.converged ? "" : " (not converged)") << '\n';
  } else if (stage == "shots") {
    const auto j = stage_shots(ws);
    for (const auto& e : j["estimates"])
      std::cout << "epsilon " << csv_number(e["epsilon"].get<double>()) << ": n_ungrouped "
                << csv_number(e["n_ungrouped"].get<double>()) << ", r_hat " << csv_number(e["r_hat"].get<double>())
                << ", n_shots " << csv_number(e["n_shots"].get<double>()) << '\n';
  } else {
    const auto r = run_all(ws);
    std::cout << r.summary.dump(2) << '\n';
    return r.converged ? ok : numerical_failure;
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate-guided line search for noisy variational energy minimization"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  int jobs = 1;
  std::optional<long long> seed;
  bool force = false;
  const std::pair<const char*, const char*> stages[] = {
      {"surrogate", "minimize the classical surrogate energy"},
      {"hessian", "finite-difference Hessian and search directions at the surrogate minimum"},
      {"windows", "choose per-direction window widths for the noise target"},
      {"linesearch", "noisy line search from the surrogate minimum (resumes)"},
      {"powell", "Powell baseline from the same start and directions"},
      {"shots", "shot-count estimates per target error"},
      {"run-all", "every stage in order; exit 0 iff the line search converged"},
  };
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--jobs", jobs, "parallel evaluations")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "override the configured seed")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", out_dir, "override the configured output directory");
    sub->add_flag("--force", force, "discard this stage's existing outputs first");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : config_error;
  }
  const std::string stage = app.get_subcommands().front()->get_name();

  try {
    auto config = load_config(config_path);
    if (seed) config.seed = static_cast<std::uint64_t>(*seed);
    if (!out_dir.empty()) config.output = out_dir;
    Workspace ws(config, config.output, jobs);
    if (force) remove_outputs(ws.dir(), stage);
    ws.write_text("resolved_config.json", resolved_config(ws.config()).dump(2) + "\n");
    return run_stage(stage, ws);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const PrerequisiteError& e) {
    std::cerr << stage << ": missing prerequisite from stage '" << e.stage() << "': " << e.what() << '\n';
    return missing_prerequisite;
  } catch (const std::exception& e) {
    std::cerr << stage << ": " << e.what() << '\n';
    return numerical_failure;
  }
}
