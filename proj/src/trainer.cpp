#include "multisub/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

namespace multisub {

using nlohmann::json;

std::string_view to_string(FeatureMode mode) { return mode == FeatureMode::text ? "text" : "concat"; }

FeatureMode parse_feature_mode(std::string_view name) {
  if (name == "text") return FeatureMode::text;
  if (name == "concat") return FeatureMode::concat;
  throw ValidationError("config", "unknown feature mode '" + std::string(name) + "'");
}

std::string_view to_string(ConvergenceReason reason) {
  switch (reason) {
    case ConvergenceReason::tolerance: return "tolerance";
    case ConvergenceReason::epoch_budget: return "epoch_budget";
    case ConvergenceReason::aborted: return "aborted";
  }
  return "epoch_budget";
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw ValidationError("config", what); };
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) fail("lr must be positive");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (c.phase1_epochs < 1) fail("phase1_epochs must be >= 1");
  if (c.phase2_epochs < 1) fail("phase2_epochs must be >= 1");
  if (c.total_epochs < 1) fail("total_epochs must be >= 1");
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) fail("lambda must lie in [0, 1]");
  if (!(c.margin > 0.0)) fail("margin must be > 0");
  if (c.pair_budget < 1) fail("pair_budget must be >= 1");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0)) fail("adam_beta1 must lie in [0, 1)");
  if (!(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) fail("adam_beta2 must lie in [0, 1)");
  if (!(c.adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (!(c.convergence_tol >= 0.0)) fail("convergence_tol must be non-negative");
}

json to_json(const TrainConfig& c) {
  json tol = std::isfinite(c.convergence_tol) ? json(c.convergence_tol) : json("inf");
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"phase1_epochs", c.phase1_epochs},
          {"phase2_epochs", c.phase2_epochs},
          {"total_epochs", c.total_epochs},
          {"lambda", c.lambda},
          {"margin", c.margin},
          {"pair_budget", c.pair_budget},
          {"batch_size", c.batch_size},
          {"subspace", to_string(c.subspace)},
          {"features", to_string(c.features)},
          {"seed", c.seed},
          {"convergence_tol", tol}};
}

AdamParams adam_params(const TrainConfig& c) {
  return {c.lr, c.weight_decay, c.adam_beta1, c.adam_beta2, c.adam_eps};
}

void adam_step(Mat& param, const Mat& grad, AdamState& state, const AdamParams& p) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
    throw ValidationError("shape_mismatch", "gradient shape differs from parameter shape");
  }
  if (!grad.allFinite()) throw NumericalError("non_finite_gradient", "non-finite gradient");
  if (state.first.size() == 0) state = AdamState::zeros_like(param);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(p.beta1, t);
  const double correction2 = 1.0 - std::pow(p.beta2, t);
  state.first = p.beta1 * state.first + (1.0 - p.beta1) * grad;
  state.second = p.beta2 * state.second + (1.0 - p.beta2) * grad.cwiseProduct(grad);
  if (p.weight_decay != 0.0) param *= (1.0 - p.lr * p.weight_decay);
  const auto m_hat = state.first.array() / correction1;
  const auto v_hat = state.second.array() / correction2;
  param.array() -= p.lr * m_hat / (v_hat.sqrt() + p.eps);
}

TrainState initial_state(const EmbeddingBundle& bundle, Rng& rng) {
  const auto& m = bundle.manifest;
  TrainState s;
  s.latent.resize(static_cast<Eigen::Index>(m.n), static_cast<Eigen::Index>(m.d_token));
  for (Eigen::Index i = 0; i < s.latent.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.latent.cols(); ++j) s.latent(i, j) = rng.normal(0.0, 0.01);
  }
  if (bundle.projection_init) {
    s.projection = *bundle.projection_init;
  } else {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(m.d_raw));
    s.projection.resize(static_cast<Eigen::Index>(m.d_joint), static_cast<Eigen::Index>(m.d_raw));
    for (Eigen::Index i = 0; i < s.projection.rows(); ++i) {
      for (Eigen::Index j = 0; j < s.projection.cols(); ++j) s.projection(i, j) = rng.normal(0.0, stddev);
    }
  }
  s.adam_latent = AdamState::zeros_like(s.latent);
  s.adam_projection = AdamState::zeros_like(s.projection);
  return s;
}

namespace {

NumericalError with_context(const NumericalError& e, Phase phase, int epoch) {
  return NumericalError(e.kind(),
                        std::string(e.what()) + " (phase " + std::to_string(static_cast<int>(phase)) + ", epoch " +
                            std::to_string(epoch) + ")",
                        e.index());
}

}  // namespace

namespace {

// Rows `rows` of the sample-indexed inputs; the reference bases are shared.
EmbeddingBundle batch_view(const EmbeddingBundle& bundle, const std::vector<Eigen::Index>& rows) {
  EmbeddingBundle b;
  b.manifest = bundle.manifest;
  b.manifest.n = rows.size();
  b.raw_features = bundle.raw_features(rows, Eigen::all);
  b.ref_token = bundle.ref_token;
  b.ref_prompt = bundle.ref_prompt;
  b.ref_word_text = bundle.ref_word_text;
  return b;
}

double minibatch_epoch(TrainState& state, const EmbeddingBundle& bundle, const TrainConfig& config,
                       const AdamParams& params, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(bundle.raw_features.rows());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  double weighted = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), start + config.batch_size)));
    const Mat latent = state.latent(rows, Eigen::all);
    const Phase1Result g = phase1_gradients(latent, state.projection, batch_view(bundle, rows), config.subspace);
    // Rows outside the batch get a zero gradient (their moments still decay).
    Mat grad_latent = Mat::Zero(state.latent.rows(), state.latent.cols());
    grad_latent(rows, Eigen::all) = g.grad_latent;
    adam_step(state.latent, grad_latent, state.adam_latent, params);
    adam_step(state.projection, g.grad_projection, state.adam_projection, params);
    weighted += g.loss * static_cast<double>(rows.size());
  }
  return weighted / static_cast<double>(n);
}

}  // namespace

void run_phase1(TrainState& state, const EmbeddingBundle& bundle, const TrainConfig& config, int epochs,
                std::vector<EpochRecord>& records, int epoch_offset, int round, Rng* rng) {
  const AdamParams params = adam_params(config);
  const bool minibatch = config.batch_size > 0 && config.batch_size < bundle.manifest.n;
  if (minibatch && !rng) throw ValidationError("config", "mini-batch alignment needs a random generator");
  for (int e = 0; e < epochs; ++e) {
    const int epoch = epoch_offset + e;
    try {
      if (minibatch) {
        records.push_back({epoch, round, Phase::alignment, minibatch_epoch(state, bundle, config, params, *rng)});
        continue;
      }
      const Phase1Result g = phase1_gradients(state.latent, state.projection, bundle, config.subspace);
      adam_step(state.latent, g.grad_latent, state.adam_latent, params);
      adam_step(state.projection, g.grad_projection, state.adam_projection, params);
      records.push_back({epoch, round, Phase::alignment, g.loss});
    } catch (const NumericalError& err) {
      throw with_context(err, Phase::alignment, epoch);
    }
  }
}

void run_phase2(TrainState& state, const EmbeddingBundle& bundle, const TrainConfig& config, int epochs, Rng& rng,
                std::vector<EpochRecord>& records, int epoch_offset, int round) {
  const AdamParams params = adam_params(config);
  Mat proxy;
  Labels labels;
  try {
    const ProxyState fwd = forward(state.latent, state.projection, bundle, config.subspace);
    proxy = fwd.proxy;
    labels = assign_pseudo_labels(proxy, proxy_basis(bundle, config.subspace));
  } catch (const NumericalError& err) {
    throw with_context(err, Phase::clustering, epoch_offset);
  }
  for (int e = 0; e < epochs; ++e) {
    const int epoch = epoch_offset + e;
    try {
      const PairBatch pairs = sample_pairs(labels, config.pair_budget, rng.split());
      const Phase2Result g =
          phase2_gradients(state.projection, bundle, proxy, pairs, config.margin, config.lambda);
      adam_step(state.projection, g.grad_projection, state.adam_projection, params);
      records.push_back({epoch, round, Phase::clustering, g.loss, g.intra, g.inter, g.intra_empty, g.inter_empty});
    } catch (const NumericalError& err) {
      throw with_context(err, Phase::clustering, epoch);
    }
  }
}

namespace {

void finalize(TrainReport& report, const TrainState& state, const EmbeddingBundle& bundle) {
  const TrainConfig& c = report.config;
  report.latent = state.latent;
  report.projection = state.projection;
  const ProxyState fwd = forward(state.latent, state.projection, bundle, c.subspace);
  report.labels = assign_pseudo_labels(fwd.proxy, proxy_basis(bundle, c.subspace));
  report.final_alignment_loss = alignment_loss(fwd.vision, fwd.text);
  const PairBatch pairs = sample_pairs(report.labels, c.pair_budget, c.seed);
  report.final_cluster_loss =
      phase2_gradients(state.projection, bundle, fwd.proxy, pairs, c.margin, c.lambda).loss;
  report.final_loss = report.final_alignment_loss + report.final_cluster_loss;
  for (const auto& r : report.epochs) {
    if (r.phase != Phase::clustering) continue;
    report.empty_intra_epochs += r.intra_empty;
    report.empty_inter_epochs += r.inter_empty;
  }
}

}  // namespace

TrainReport alternate(const EmbeddingBundle& bundle, const TrainConfig& config) {
  validate(config);
  const auto started = std::chrono::steady_clock::now();
  Rng rng(config.seed);
  TrainReport report;
  report.config = config;
  TrainState state = initial_state(bundle, rng);

  int spent = 0;
  std::optional<double> previous;
  try {
    while (spent < config.total_epochs) {
      ++report.rounds;
      const int p1 = std::min(config.phase1_epochs, config.total_epochs - spent);
      run_phase1(state, bundle, config, p1, report.epochs, spent, report.rounds, &rng);
      const double first_loss = report.epochs.front().loss;
      const double round_loss = report.epochs.back().loss;
      spent += p1;
      const int p2 = std::min(config.phase2_epochs, config.total_epochs - spent);
      if (p2 > 0) {
        run_phase2(state, bundle, config, p2, rng, report.epochs, spent, report.rounds);
        spent += p2;
      }
      const double reference = previous.value_or(first_loss);
      const double change = std::abs(round_loss - reference) / std::max(std::abs(reference), 1e-300);
      previous = round_loss;
      if (change < config.convergence_tol) {
        report.reason = ConvergenceReason::tolerance;
        break;
      }
    }
    finalize(report, state, bundle);
  } catch (const NumericalError& err) {
    report.reason = ConvergenceReason::aborted;
    report.abort_message = err.what();
    report.latent = state.latent;
    report.projection = state.projection;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    throw TrainingAborted(err, std::move(report));
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

json to_json(const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    json row = {{"epoch", e.epoch}, {"round", e.round}, {"phase", static_cast<int>(e.phase)}, {"loss", e.loss}};
    if (e.phase == Phase::clustering) {
      row["intra"] = e.intra;
      row["inter"] = e.inter;
      if (e.intra_empty) row["intra_empty"] = true;
      if (e.inter_empty) row["inter_empty"] = true;
    }
    epochs.push_back(std::move(row));
  }
  int phase1 = 0, phase2 = 0;
  for (const auto& e : r.epochs) (e.phase == Phase::alignment ? phase1 : phase2)++;
  json j = {{"config", to_json(r.config)},
            {"seed", r.config.seed},
            {"rounds", r.rounds},
            {"epochs_executed", r.epochs.size()},
            {"phase1_epochs_executed", phase1},
            {"phase2_epochs_executed", phase2},
            {"convergence_reason", to_string(r.reason)},
            {"final_alignment_loss", r.final_alignment_loss},
            {"final_cluster_loss", r.final_cluster_loss},
            {"final_loss", r.final_loss},
            {"warnings", {{"empty_intra_epochs", r.empty_intra_epochs}, {"empty_inter_epochs", r.empty_inter_epochs}}},
            {"epochs", std::move(epochs)}};
  if (r.abort_message) j["abort_message"] = *r.abort_message;
  return j;
}

std::string loss_csv(const TrainReport& r) {
  std::string out = "epoch,round,phase,loss,intra,inter\n";
  char buf[160];
  for (const auto& e : r.epochs) {
    if (e.phase == Phase::clustering) {
      std::snprintf(buf, sizeof buf, "%d,%d,2,%.17g,%.17g,%.17g\n", e.epoch, e.round, e.loss, e.intra, e.inter);
    } else {
      std::snprintf(buf, sizeof buf, "%d,%d,1,%.17g,,\n", e.epoch, e.round, e.loss);
    }
    out += buf;
  }
  return out;
}

GridResult grid_search(const EmbeddingBundle& bundle, const std::vector<double>& lr_grid,
                       const std::vector<double>& wd_grid, const TrainConfig& base) {
  if (lr_grid.empty() || wd_grid.empty()) throw ValidationError("config", "grid search needs non-empty grids");
  GridResult result;
  const GridRow* best = nullptr;
  for (double lr : lr_grid) {
    for (double wd : wd_grid) {
      GridRow row;
      row.lr = lr;
      row.weight_decay = wd;
      TrainConfig config = base;
      config.lr = lr;
      config.weight_decay = wd;
      try {
        row.final_loss = alternate(bundle, config).final_loss;
        row.ok = std::isfinite(row.final_loss);
        if (!row.ok) row.error = "non-finite final loss";
      } catch (const Error& e) {
        row.error = e.what();
      }
      result.rows.push_back(row);
    }
  }
  for (const auto& row : result.rows) {
    if (!row.ok) continue;
    const bool better = !best || row.final_loss < best->final_loss ||
                        (row.final_loss == best->final_loss &&
                         (row.lr < best->lr || (row.lr == best->lr && row.weight_decay < best->weight_decay)));
    if (better) best = &row;
  }
  if (!best) throw NumericalError("grid_search_failed", "every grid cell failed");
  result.best = base;
  result.best.lr = best->lr;
  result.best.weight_decay = best->weight_decay;
  return result;
}

}  // namespace multisub
