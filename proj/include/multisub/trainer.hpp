#pragma once

#include "multisub/bundle.hpp"
#include "multisub/errors.hpp"
#include "multisub/rng.hpp"
#include "multisub/cluster_objective.hpp"
#include "multisub/matrix.hpp"
#include "multisub/subspace.hpp"

#include <json.hpp>

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace multisub {

enum class FeatureMode { text, concat };

std::string_view to_string(FeatureMode mode);
FeatureMode parse_feature_mode(std::string_view name);

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int phase1_epochs = 100;
  int phase2_epochs = 10;
  int total_epochs = 1000;
  double lambda = 0.5;
  double margin = 1.0;
  std::size_t pair_budget = 4096;
  std::size_t batch_size = 0;  // alignment mini-batch rows; 0 = full batch
  SubspaceMode subspace = SubspaceMode::token;
  FeatureMode features = FeatureMode::concat;
  std::uint64_t seed = 0;
  double convergence_tol = 1e-5;
};

/// Throws ValidationError on out-of-range fields.
void validate(const TrainConfig& config);

nlohmann::json to_json(const TrainConfig& config);

struct AdamState {
  Mat first;
  Mat second;
  std::int64_t step = 0;

  static AdamState zeros_like(const Mat& param) {
    return {Mat::Zero(param.rows(), param.cols()), Mat::Zero(param.rows(), param.cols()), 0};
  }
};

struct AdamParams {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam with decoupled weight decay: param is first scaled
/// by (1 - lr * weight_decay), then the Adam delta is applied.
void adam_step(Mat& param, const Mat& grad, AdamState& state, const AdamParams& params);

enum class Phase { alignment = 1, clustering = 2 };

struct EpochRecord {
  int epoch = 0;  // global, 0-based
  int round = 0;  // 1-based outer round
  Phase phase = Phase::alignment;
  double loss = 0.0;
  // Clustering epochs only.
  double intra = 0.0;
  double inter = 0.0;
  bool intra_empty = false;
  bool inter_empty = false;
};

struct TrainState {
  Mat latent;      // P, n x d_token
  Mat projection;  // W, d_joint x d_raw
  AdamState adam_latent;
  AdamState adam_projection;
};

/// P ~ N(0, 0.01^2); W = W0 when the bundle has one, else N(0, (1/sqrt(d_raw))^2).
TrainState initial_state(const EmbeddingBundle& bundle, Rng& rng);

AdamParams adam_params(const TrainConfig& config);

/// Adam steps on (P, W) against the alignment loss: one full-batch step per
/// epoch, or one step per shuffled mini-batch when config.batch_size is set
/// (shuffles drawn from `rng`, required then). Appends one record per
/// epoch; `epoch_offset` and `round` only label the records.
void run_phase1(TrainState& state, const EmbeddingBundle& bundle, const TrainConfig& config, int epochs,
                std::vector<EpochRecord>& records, int epoch_offset = 0, int round = 1, Rng* rng = nullptr);

/// Freezes P, fixes pseudo-labels from the current proxies, then takes
/// Adam steps on W against the clustering loss with fresh pairs per epoch.
/// Pair seeds are drawn from `rng`.
void run_phase2(TrainState& state, const EmbeddingBundle& bundle, const TrainConfig& config, int epochs,
                Rng& rng, std::vector<EpochRecord>& records, int epoch_offset = 0, int round = 1);

enum class ConvergenceReason { tolerance, epoch_budget, aborted };

std::string_view to_string(ConvergenceReason reason);

struct TrainReport {
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  int rounds = 0;
  ConvergenceReason reason = ConvergenceReason::epoch_budget;
  Mat latent;
  Mat projection;
  Labels labels;
  double final_alignment_loss = 0.0;
  double final_cluster_loss = 0.0;
  double final_loss = 0.0;  // alignment + clustering at the final state
  std::size_t empty_intra_epochs = 0;
  std::size_t empty_inter_epochs = 0;
  std::optional<std::string> abort_message;
  double wall_seconds = 0.0;  // not serialized
};

/// Alternates phase1_epochs of alignment with phase2_epochs of clustering
/// until total_epochs is spent (the last round is truncated) or the last
/// alignment loss of a round changes by less than convergence_tol relative
/// to the previous round.
///
/// On a numerical failure the partially filled report is attached to the
/// thrown TrainingAborted.
TrainReport alternate(const EmbeddingBundle& bundle, const TrainConfig& config);

class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const NumericalError& cause, TrainReport partial)
      : NumericalError(cause.kind(), cause.what(), cause.index()), partial_(std::move(partial)) {}
  const TrainReport& partial() const { return partial_; }

 private:
  TrainReport partial_;
};

/// Report without the matrices or timing; byte-stable for a fixed seed.
nlohmann::json to_json(const TrainReport& report);

/// One row per epoch: epoch,round,phase,loss,intra,inter.
std::string loss_csv(const TrainReport& report);

struct GridRow {
  double lr = 0.0;
  double weight_decay = 0.0;
  bool ok = false;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct GridResult {
  TrainConfig best;
  std::vector<GridRow> rows;
};

inline const std::vector<double> kDefaultLrGrid = {1e-1, 5e-2, 1e-2, 5e-3, 1e-3, 5e-4};
inline const std::vector<double> kDefaultWeightDecayGrid = {5e-4, 1e-4, 5e-5, 1e-5, 0.0};

/// Runs `alternate` for every (lr, weight_decay) cell and keeps the one
/// with minimal final loss; ties go to the smaller lr, then smaller decay.
/// Failed cells are recorded and skipped. Never reads ground truth.
GridResult grid_search(const EmbeddingBundle& bundle, const std::vector<double>& lr_grid,
                       const std::vector<double>& wd_grid, const TrainConfig& base);

}  // namespace multisub
