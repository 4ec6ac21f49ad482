// multisub: train, evaluate and benchmark subspace proxy clustering from the
// command line. Exit codes: 0 success, 2 usage/validation error, 3 runtime
// or numerical error.

#include "multisub/commands.hpp"
#include "multisub/errors.hpp"
#include "multisub/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <limits>
#include <sstream>

namespace {

using namespace multisub;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct SharedOptions {
  std::string bundle;
  std::string concept_name;
  std::string clustering;
  std::string out;
  std::string subspace = "token";
  std::string features = "concat";
  std::string convergence_tol;
  TrainConfig config;
};

void add_train_options(CLI::App* cmd, SharedOptions& o, bool needs_out) {
  cmd->add_option("--bundle", o.bundle, "Bundle directory (or synthetic root with --concept)")->required();
  cmd->add_option("--concept", o.concept_name, "Concept sub-bundle to load / expected manifest concept");
  cmd->add_option("--clustering", o.clustering, "Ground-truth clustering to score against");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option("--lambda", o.config.lambda, "Intra/inter balance in [0, 1]")->capture_default_str();
  cmd->add_option("--margin", o.config.margin, "Inter-cluster hinge margin")->capture_default_str();
  cmd->add_option("--lr", o.config.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--weight-decay", o.config.weight_decay, "Decoupled weight decay")->capture_default_str();
  cmd->add_option("--phase1-epochs", o.config.phase1_epochs, "Alignment epochs per round")->capture_default_str();
  cmd->add_option("--phase2-epochs", o.config.phase2_epochs, "Clustering epochs per round")->capture_default_str();
  cmd->add_option("--total-epochs", o.config.total_epochs, "Epoch budget")->capture_default_str();
  cmd->add_option("--pair-budget", o.config.pair_budget, "Pairs per category per epoch")->capture_default_str();
  cmd->add_option("--batch-size", o.config.batch_size, "Alignment mini-batch rows (0 = full batch)")->capture_default_str();
  cmd->add_option("--subspace", o.subspace, "token | word_text | prompt")->capture_default_str();
  cmd->add_option("--features", o.features, "text | concat")->capture_default_str();
  cmd->add_option("--seed", o.config.seed, "Random seed")->capture_default_str();
  cmd->add_option("--convergence-tol", o.convergence_tol, "Relative alignment-loss change that stops training (or inf)");
}

RunSpec make_spec(const SharedOptions& o) {
  RunSpec spec;
  spec.bundle = o.bundle;
  if (!o.concept_name.empty()) spec.concept_name = o.concept_name;
  if (!o.clustering.empty()) spec.clustering = o.clustering;
  spec.out = o.out;
  spec.config = o.config;
  spec.config.subspace = parse_subspace_mode(o.subspace);
  spec.config.features = parse_feature_mode(o.features);
  if (!o.convergence_tol.empty()) {
    try {
      spec.config.convergence_tol = o.convergence_tol == "inf" ? std::numeric_limits<double>::infinity()
                                                               : std::stod(o.convergence_tol);
    } catch (const std::exception&) {
      throw ValidationError("config", "invalid --convergence-tol '" + o.convergence_tol + "'");
    }
  }
  validate(spec.config);
  return spec;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ValidationError("config", "invalid number '" + item + "' in list");
    }
  }
  if (out.empty()) throw ValidationError("config", "empty list");
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void print_diagnostic(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subspace proxy learning for user-guided multiple clustering"};
  app.require_subcommand(1);

  SharedOptions run_opts, ablate_opts, zs_opts, sweep_opts, grid_opts;

  auto* run = app.add_subcommand("run", "Train on a bundle and write report.json, loss.csv, labels.u32");
  add_train_options(run, run_opts, true);

  std::string pred, truth;
  auto* eval = app.add_subcommand("eval", "NMI / Rand index between two .u32 label files");
  eval->add_option("--pred", pred, "Predicted labels")->required();
  eval->add_option("--truth", truth, "Ground-truth labels")->required();

  std::string subspaces = "token,word_text,prompt", feature_modes = "text,concat";
  auto* ablate = app.add_subcommand("ablate", "Subspace x feature ablation table (ablation.csv)");
  add_train_options(ablate, ablate_opts, false);
  ablate->add_option("--subspaces", subspaces, "Comma list of subspace modes")->capture_default_str();
  ablate->add_option("--feature-modes", feature_modes, "Comma list of feature modes")->capture_default_str();

  std::string prompts = "reference";
  auto* zeroshot = app.add_subcommand("zeroshot", "Zero-shot assignment with the initial projection");
  add_train_options(zeroshot, zs_opts, false);
  zeroshot->add_option("--prompts", prompts, "reference | truth-label")->capture_default_str();

  std::string lambda_grid;
  auto* sweep = app.add_subcommand("sweep-lambda", "One run per lambda (sweep.csv)");
  add_train_options(sweep, sweep_opts, false);
  sweep->add_option("--grid", lambda_grid, "Comma list of lambda values (default 0,0.1,...,1)");

  std::string lr_grid, wd_grid;
  auto* grid = app.add_subcommand("grid", "Learning-rate x weight-decay search on the final loss");
  add_train_options(grid, grid_opts, false);
  grid->add_option("--lr-grid", lr_grid, "Comma list of learning rates");
  grid->add_option("--wd-grid", wd_grid, "Comma list of weight decays");

  SyntheticSpec synth_spec;
  std::vector<std::string> concept_specs;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-concept bundle set");
  synth->add_option("--n", synth_spec.n, "Samples")->capture_default_str();
  synth->add_option("--dim", synth_spec.dim, "Feature dimension")->capture_default_str();
  synth->add_option("--concept", concept_specs, "name:categories[:dim], repeatable (default A:3 B:3)");
  synth->add_option("--sigma", synth_spec.sigma, "Feature noise")->capture_default_str();
  synth->add_option("--overlap", synth_spec.overlap, "Cosine between categories of one concept")->capture_default_str();
  synth->add_option("--perturb", synth_spec.perturb_degrees, "Basis perturbation angle in degrees")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Random seed")->capture_default_str();
  synth->add_option("--template", synth_spec.prompt_template, "Prompt template with one '*'");
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string mmd_x, mmd_y, mmd_matrix = "ref_prompt";
  double bandwidth = 0.0;
  auto* mmd = app.add_subcommand("mmd", "Unbiased MMD^2 between the same matrix of two bundles");
  mmd->add_option("--bundle", mmd_x, "First bundle")->required();
  mmd->add_option("--other", mmd_y, "Second bundle")->required();
  mmd->add_option("--matrix", mmd_matrix, "ref_prompt | ref_word_text | ref_token | raw_features")->capture_default_str();
  mmd->add_option("--bandwidth", bandwidth, "RBF sigma (default: median heuristic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) {
      const RunOutcome out = cmd_run(make_spec(run_opts));
      json summary = {{"out", run_opts.out}, {"rounds", out.report.rounds},
                      {"convergence_reason", to_string(out.report.reason)},
                      {"final_loss", out.report.final_loss}, {"evaluation", out.document["evaluation"]}};
      std::cout << summary.dump(2) << "\n";
    } else if (*eval) {
      std::cout << cmd_eval(pred, truth).dump(2) << "\n";
    } else if (*ablate) {
      std::vector<SubspaceMode> modes;
      for (const auto& s : split_names(subspaces)) modes.push_back(parse_subspace_mode(s));
      std::vector<FeatureMode> feats;
      for (const auto& f : split_names(feature_modes)) feats.push_back(parse_feature_mode(f));
      std::cout << ablation_csv(cmd_ablate(make_spec(ablate_opts), modes, feats));
    } else if (*zeroshot) {
      std::cout << cmd_zeroshot(make_spec(zs_opts), parse_prompt_source(prompts)).dump(2) << "\n";
    } else if (*sweep) {
      const auto rows =
          cmd_sweep_lambda(make_spec(sweep_opts), lambda_grid.empty() ? kDefaultLambdaGrid : parse_list(lambda_grid));
      std::cout << sweep_csv(rows);
    } else if (*grid) {
      std::cout << cmd_grid(make_spec(grid_opts), lr_grid.empty() ? kDefaultLrGrid : parse_list(lr_grid),
                            wd_grid.empty() ? kDefaultWeightDecayGrid : parse_list(wd_grid))
                       .dump(2)
                << "\n";
    } else if (*synth) {
      if (!concept_specs.empty()) {
        synth_spec.concepts.clear();
        for (const auto& c : concept_specs) synth_spec.concepts.push_back(parse_concept(c));
      }
      cmd_synth(synth_spec, synth_out);
      std::cout << json{{"out", synth_out}, {"concepts", synth_spec.concepts.size()}}.dump() << "\n";
    } else if (*mmd) {
      auto pick = [&](const EmbeddingBundle& b) -> Mat {
        if (mmd_matrix == "ref_prompt") return b.ref_prompt;
        if (mmd_matrix == "ref_token") return b.ref_token;
        if (mmd_matrix == "raw_features") return b.raw_features;
        if (mmd_matrix == "ref_word_text" && b.ref_word_text) return *b.ref_word_text;
        throw ValidationError("missing_matrix", "matrix '" + mmd_matrix + "' unavailable");
      };
      const Mat x = pick(load_bundle(mmd_x));
      const Mat y = pick(load_bundle(mmd_y));
      const double value = mmd->count("--bandwidth") ? mmd2_unbiased(x, y, bandwidth) : mmd2_unbiased(x, y);
      std::cout << json{{"mmd2", value}, {"matrix", mmd_matrix}}.dump() << "\n";
    }
  } catch (const ValidationError& e) {
    print_diagnostic(e.kind(), e.what());
    return kExitUsage;
  } catch (const Error& e) {
    print_diagnostic(e.kind(), e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    print_diagnostic("internal", e.what());
    return kExitRuntime;
  }
  return 0;
}
