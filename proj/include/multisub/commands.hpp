#pragma once

#include "multisub/bundle.hpp"
#include "multisub/synthetic.hpp"
#include "multisub/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace multisub {

struct RunSpec {
  std::filesystem::path bundle;
  std::optional<std::string> concept_name;
  std::optional<std::string> clustering;
  TrainConfig config;
  std::filesystem::path out;
};

/// Loads `path` when it is a bundle directory, otherwise `path/<concept>`
/// (the layout write_synthetic produces). A given concept must match the
/// manifest.
EmbeddingBundle resolve_bundle(const std::filesystem::path& path, const std::optional<std::string>& concept_name);

/// Ground-truth clusterings to score against: the requested one, or all.
std::vector<std::string> clusterings_to_score(const EmbeddingBundle& bundle,
                                              const std::optional<std::string>& clustering);

/// The clustering a single-target command scores: the requested one, else
/// the bundle's concept when it names a ground truth, else the only one.
std::string default_clustering(const EmbeddingBundle& bundle, const std::optional<std::string>& clustering);

/// Embedding handed to k-means: normalized proxies (text) or [proxy, x] (concat).
Mat evaluation_features(const TrainReport& report, const EmbeddingBundle& bundle, FeatureMode mode);

struct ClusteringScore {
  double pseudo_nmi = 0.0;
  double pseudo_ri = 0.0;
  double kmeans_nmi_mean = 0.0;  // averaged over restarts
  double kmeans_ri_mean = 0.0;
  double kmeans_nmi_best = 0.0;  // best-inertia restart
  double kmeans_ri_best = 0.0;
  std::size_t clusters = 0;
};

inline constexpr std::size_t kEvalRestarts = 10;

ClusteringScore score(const TrainReport& report, const EmbeddingBundle& bundle, const Labels& truth,
                      FeatureMode mode);

struct RunOutcome {
  TrainReport report;
  std::map<std::string, ClusteringScore> scores;
  nlohmann::json document;  // report.json contents
};

/// Trains and scores without touching the filesystem.
RunOutcome run_pipeline(const EmbeddingBundle& bundle, const RunSpec& spec);

/// Writes report.json, loss.csv, labels.u32, projection.f32, latent.f32
/// and timing.json into spec.out.
RunOutcome cmd_run(const RunSpec& spec);

nlohmann::json cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& truth);

struct AblationRow {
  SubspaceMode subspace;
  FeatureMode features;
  std::string clustering;
  ClusteringScore score;
};

/// Every requested (subspace, features) cell, in request order; writes
/// ablation.csv into spec.out when it is non-empty.
std::vector<AblationRow> cmd_ablate(const RunSpec& spec, const std::vector<SubspaceMode>& subspaces,
                                    const std::vector<FeatureMode>& features);

enum class PromptSource { reference, truth_label };

PromptSource parse_prompt_source(std::string_view name);

nlohmann::json cmd_zeroshot(const RunSpec& spec, PromptSource prompts);

struct SweepRow {
  double lambda = 0.0;
  bool ok = false;
  double nmi = 0.0;
  double ri = 0.0;
  double final_loss = 0.0;
  std::string error;
};

inline const std::vector<double> kDefaultLambdaGrid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

/// One run per lambda, scored by pseudo-label NMI/RI; failed cells are
/// recorded and the sweep continues. Writes sweep.csv into spec.out when set.
std::vector<SweepRow> cmd_sweep_lambda(const RunSpec& spec, const std::vector<double>& grid);

/// grid_search over the bundle; returns {best, rows} and writes grid.json
/// into spec.out when set.
nlohmann::json cmd_grid(const RunSpec& spec, const std::vector<double>& lr_grid, const std::vector<double>& wd_grid);

void cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace multisub
