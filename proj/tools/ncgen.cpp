// ncgen: command-line front end for the experiment commands.
#include "ncgen/ncgen.hpp"

#include <CLI11.hpp>

#include <functional>

namespace {

struct CommonFlags {
  std::string config;
  std::string output = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file (built-in defaults when omitted)");
  cmd->add_option("--output", f.output, "output directory")->capture_default_str();
  cmd->add_option("--seed", f.seed, "master seed (overrides the config)");
  cmd->add_option("--trials", f.trials, "trial count (overrides the config)");
}

int dispatch(const CommonFlags& f, const std::function<int(const ncgen::Json&, const ncgen::CommandOptions&)>& body) {
  return ncgen::run_guarded([&] {
    ncgen::CommandOptions opts;
    opts.output = f.output;
    opts.seed = f.seed;
    opts.trials = f.trials;
    ncgen::Json cfg = ncgen::Json::object();
    if (!f.config.empty()) {
      cfg = ncgen::load_config(f.config);
      opts.config_path = f.config;
      opts.config_dir = std::filesystem::path(f.config).parent_path();
      if (opts.config_dir.empty()) opts.config_dir = ".";
    }
    if (opts.trials && *opts.trials < 1) throw ncgen::InvalidArgument("--trials must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(opts.output, ec);
    if (ec) throw ncgen::IoError("cannot create " + opts.output.string() + ": " + ec.message());
    return body(cfg, opts);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-collapse generalization lab: ETF geometry, margin dynamics, bounds and sweeps"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::function<int()> run;

  auto* ufm = app.add_subcommand("train-ufm", "gradient descent on the unconstrained feature model");
  add_common(ufm, flags);
  ufm->callback([&] { run = [&] { return dispatch(flags, ncgen::cmd_train_ufm); }; });

  std::string kind = "perm";
  auto* sweep = app.add_subcommand("sweep", "train one network per permuted or rotated ETF classifier");
  add_common(sweep, flags);
  sweep->add_option("--kind", kind, "transform family")->check(CLI::IsMember({"perm", "rot"}))->capture_default_str();
  sweep->callback([&] {
    run = [&] {
      return dispatch(flags, [&](const ncgen::Json& cfg, const ncgen::CommandOptions& opts) {
        return ncgen::cmd_sweep(cfg, opts, ncgen::kind_from_string(kind));
      });
    };
  });

  auto* bounds = app.add_subcommand("bounds", "fit a network and evaluate the three generalization bounds");
  add_common(bounds, flags);
  bounds->callback([&] { run = [&] { return dispatch(flags, ncgen::cmd_bounds); }; });

  auto* lemmas = app.add_subcommand("check-lemmas", "Monte-Carlo checks of the covering and Hoeffding lemmas");
  add_common(lemmas, flags);
  lemmas->callback([&] { run = [&] { return dispatch(flags, ncgen::cmd_check_lemmas); }; });

  auto* gen = app.add_subcommand("gen-data", "write a synthetic train/test dataset as CSV");
  add_common(gen, flags);
  gen->callback([&] { run = [&] { return dispatch(flags, ncgen::cmd_gen_data); }; });

  auto* etf = app.add_subcommand("etf", "simplex ETF utilities");
  etf->require_subcommand(1);
  auto* make = etf->add_subcommand("make", "construct a simplex ETF");
  add_common(make, flags);
  make->callback([&] { run = [&] { return dispatch(flags, ncgen::cmd_etf_make); }; });
  auto* transform = etf->add_subcommand("transform", "permute or rotate an ETF");
  add_common(transform, flags);
  transform->callback([&] { run = [&] { return dispatch(flags, ncgen::cmd_etf_transform); }; });
  auto* check = etf->add_subcommand("check", "classify how two ETFs are related");
  add_common(check, flags);
  check->callback([&] {
    run = [&] {
      return dispatch(flags, [](const ncgen::Json& cfg, const ncgen::CommandOptions& opts) {
        return ncgen::cmd_etf_check(cfg, opts);
      });
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ncgen::kExitInvalidConfig;
  }
  return run ? run() : ncgen::kExitInvalidConfig;
}
