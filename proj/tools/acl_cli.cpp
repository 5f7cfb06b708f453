#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acl/config.hpp"
#include "acl/experiment.hpp"
#include "acl/verify.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) { return acl::detail::split_list(s); }

acl::RunConfig load_with_overrides(const std::string& path, const std::string& seeds, const std::string& out) {
  acl::RunConfig config = acl::load_run_config(path);
  if (!seeds.empty()) {
    config.seeds.clear();
    for (const auto& s : split_csv(seeds)) config.seeds.push_back(acl::detail::to_uint("--seeds", s));
  }
  if (!out.empty()) config.out_dir = out;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-anchored backbone adaptation for class-incremental learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", acl::kToolVersion);

  std::string config_path, seeds, out, axis, values, checkpoint, dump_out = ".", split = "all";
  std::uint64_t verify_seed = 1993;
  std::optional<std::size_t> verify_n;

  auto* run = app.add_subcommand("run", "run every configured mode on every seed");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--seeds", seeds, "comma-separated seeds (overrides run.seeds)");
  run->add_option("--out", out, "output directory (overrides run.out)");

  auto* sweep = app.add_subcommand("sweep", "repeat run over one adaptation hyperparameter");
  sweep->add_option("--config", config_path, "config file")->required();
  sweep->add_option("--axis", axis, "temperature or epochs")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--seeds", seeds, "comma-separated seeds (overrides run.seeds)");
  sweep->add_option("--out", out, "output directory (overrides run.out)");

  auto* verify = app.add_subcommand("verify", "run the bound and gradient verification battery");
  verify->add_option("--seed", verify_seed, "base seed");
  verify->add_option("--n", verify_n, "case count for every campaign (0 = skip)");

  auto* dump = app.add_subcommand("dump-embeddings", "export embeddings of the incremental stream");
  dump->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  dump->add_option("--config", config_path, "take the data spec from this config instead of the checkpoint");
  dump->add_option("--out", dump_out, "output directory")->capture_default_str();
  dump->add_option("--split", split, "train, test or all")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : acl::kExitConfig;
  }

  try {
    if (run->parsed()) {
      acl::RunConfig config;
      try {
        config = load_with_overrides(config_path, seeds, out);
      } catch (const acl::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return acl::kExitConfig;
      }
      return acl::cmd_run(config);
    }
    if (sweep->parsed()) {
      acl::RunConfig config;
      std::vector<std::string> list = split_csv(values);
      try {
        config = load_with_overrides(config_path, seeds, out);
        if (list.empty()) throw acl::InvalidConfig("--values is empty");
        for (const auto& v : list) acl::with_axis_value(config, acl::parse_sweep_axis(axis), v);
      } catch (const acl::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return acl::kExitConfig;
      }
      return acl::cmd_sweep(config, axis, list);
    }
    if (verify->parsed()) {
      acl::VerifySizes sizes;
      if (verify_n) {
        const std::size_t n = *verify_n;
        sizes.lemma1_pairs = sizes.lemma2_sets = sizes.threshold_draws = n;
        sizes.markov_draws = sizes.stability_draws = sizes.grad_probes = n;
      }
      return acl::cmd_verify(verify_seed, sizes);
    }
    if (dump->parsed()) {
      std::optional<acl::RunConfig> config;
      acl::SplitSelection which{};
      try {
        if (!config_path.empty()) config = acl::load_run_config(config_path);
        which = acl::parse_split_selection(split);
      } catch (const acl::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return acl::kExitConfig;
      }
      return acl::cmd_dump_embeddings(checkpoint, config, dump_out, which);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return acl::kExitFailure;
  }
  return acl::kExitFailure;
}
