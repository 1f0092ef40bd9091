#include <CLI11.hpp>
#include <iostream>

#include "imfbridge/commands.hpp"

int main(int argc, char** argv) {
  imfb::init_logging();

  CLI::App app{"Iterated Markovian fitting for Gaussian Schroedinger bridges"};
  app.require_subcommand(1);

  std::string config_path;
  imfb::RunOverrides overrides;
  std::string output;
  std::uint64_t seed = 0;
  int threads = 0;

  auto* converge = app.add_subcommand("converge", "Run IMF or DSBM and write the KL trace");
  converge->add_option("--config", config_path, "JSON experiment config")->required();
  converge->add_option("--output", output, "CSV output path");
  converge->add_option("--seed", seed, "Seed (unused by the deterministic loop)");

  auto* particle = app.add_subcommand("particle", "Particle-level marginal checks");
  particle->add_option("--config", config_path, "JSON experiment config")->required();
  particle->add_option("--output", output, "CSV output path");
  particle->add_option("--seed", seed, "Seed of the random streams");
  particle->add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  imfb::BoundsArgs bounds_args;
  double beta_mu = 0.0;
  double beta_nu = 0.0;
  auto* bounds = app.add_subcommand("bounds", "Evaluate a contraction rate bound");
  bounds->add_option("--theorem", bounds_args.theorem, "t1, t2, t5 or t6")
      ->required()
      ->check(CLI::IsMember({"t1", "t2", "t5", "t6"}));
  bounds->add_option("--alpha-mu", bounds_args.alpha_mu, "Convexity of -log mu")->required();
  bounds->add_option("--alpha-nu", bounds_args.alpha_nu, "Convexity of -log nu")->required();
  auto* beta_mu_opt = bounds->add_option("--beta-mu", beta_mu, "Hessian upper bound of -log mu");
  auto* beta_nu_opt = bounds->add_option("--beta-nu", beta_nu, "Hessian upper bound of -log nu");
  bounds->add_option("--alpha", bounds_args.alpha, "Convexity constant of the reference")->required();
  bounds->add_option("--l-mu", bounds_args.L_mu, "Deviation constant of mu");
  bounds->add_option("--l-nu", bounds_args.L_nu, "Deviation constant of nu");
  bounds->add_option("--l", bounds_args.L, "Deviation constant of the reference");
  bounds->add_option("--l-u", bounds_args.L_U, "Lipschitz constant of the transition score")->required();
  bounds->add_option("--t", bounds_args.horizon, "Horizon T")->required();
  bounds->add_option("--output", output, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return imfb::kExitConfig;
  }

  auto pick_overrides = [&](CLI::App* cmd) {
    if (cmd->count("--output")) overrides.output = output;
    if (cmd->count("--seed")) overrides.seed = seed;
    if (cmd->get_option_no_throw("--threads") && cmd->count("--threads")) overrides.threads = threads;
  };

  if (*converge) {
    pick_overrides(converge);
    return imfb::run_converge(config_path, overrides, std::cout, std::cerr);
  }
  if (*particle) {
    pick_overrides(particle);
    return imfb::run_particle(config_path, overrides, std::cout, std::cerr);
  }
  if (*beta_mu_opt) bounds_args.beta_mu = beta_mu;
  if (*beta_nu_opt) bounds_args.beta_nu = beta_nu;
  if (bounds->count("--output")) bounds_args.output = output;
  return imfb::run_bounds(bounds_args, std::cout, std::cerr);
}
