#include "multisub/commands.hpp"

#include "multisub/errors.hpp"
#include "multisub/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace multisub {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("unwritable_path", "cannot write " + file.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("unwritable_path", "cannot create " + dir.string() + ": " + ec.message());
}

json score_json(const ClusteringScore& s) {
  return {{"clusters", s.clusters},
          {"pseudo_labels", {{"nmi", s.pseudo_nmi}, {"ri", s.pseudo_ri}}},
          {"kmeans",
           {{"restarts", kEvalRestarts},
            {"nmi_mean", s.kmeans_nmi_mean},
            {"ri_mean", s.kmeans_ri_mean},
            {"nmi_best_inertia", s.kmeans_nmi_best},
            {"ri_best_inertia", s.kmeans_ri_best}}}};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

EmbeddingBundle resolve_bundle(const fs::path& path, const std::optional<std::string>& concept_name) {
  if (fs::exists(path / "manifest.json")) {
    EmbeddingBundle b = load_bundle(path);
    if (concept_name && *concept_name != b.manifest.concept_name) {
      throw ValidationError("concept_mismatch", "bundle " + path.string() + " holds concept '" +
                                                    b.manifest.concept_name + "', not '" + *concept_name + "'");
    }
    return b;
  }
  if (concept_name && fs::exists(path / *concept_name / "manifest.json")) return load_bundle(path / *concept_name);
  if (!fs::exists(path)) throw ValidationError("missing_file", "bundle path " + path.string() + " does not exist");
  throw ValidationError("missing_file", path.string() + " has no manifest.json" +
                                            (concept_name ? " and no sub-bundle '" + *concept_name + "'"
                                                          : std::string(" (pass --concept to pick a sub-bundle)")));
}

std::vector<std::string> clusterings_to_score(const EmbeddingBundle& bundle,
                                              const std::optional<std::string>& clustering) {
  if (clustering) {
    if (!bundle.ground_truth.contains(*clustering)) {
      throw ValidationError("unknown_clustering", "bundle has no ground truth named '" + *clustering + "'");
    }
    return {*clustering};
  }
  std::vector<std::string> names;
  for (const auto& [name, labels] : bundle.ground_truth) names.push_back(name);
  return names;
}

std::string default_clustering(const EmbeddingBundle& bundle, const std::optional<std::string>& clustering) {
  if (clustering) return clusterings_to_score(bundle, clustering).front();
  if (bundle.ground_truth.contains(bundle.manifest.concept_name)) return bundle.manifest.concept_name;
  if (bundle.ground_truth.size() == 1) return bundle.ground_truth.begin()->first;
  throw ValidationError("unknown_clustering", bundle.ground_truth.empty()
                                                  ? "bundle has no ground truth"
                                                  : "bundle has several ground truths; pass --clustering");
}

Mat evaluation_features(const TrainReport& report, const EmbeddingBundle& bundle, FeatureMode mode) {
  const ProxyState fwd = forward(report.latent, report.projection, bundle, report.config.subspace);
  if (mode == FeatureMode::text) return normalize_rows(fwd.proxy);
  return concat_features(fwd.proxy, fwd.vision);
}

ClusteringScore score(const TrainReport& report, const EmbeddingBundle& bundle, const Labels& truth,
                      FeatureMode mode) {
  ClusteringScore s;
  s.clusters = cluster_count(truth);
  s.pseudo_nmi = nmi(report.labels, truth);
  s.pseudo_ri = rand_index(report.labels, truth);
  const Mat features = evaluation_features(report, bundle, mode);
  const KMeansResult km = kmeans(features, s.clusters, kEvalRestarts, report.config.seed);
  for (const auto& run : km.runs) {
    s.kmeans_nmi_mean += nmi(run.labels, truth);
    s.kmeans_ri_mean += rand_index(run.labels, truth);
  }
  s.kmeans_nmi_mean /= static_cast<double>(km.runs.size());
  s.kmeans_ri_mean /= static_cast<double>(km.runs.size());
  s.kmeans_nmi_best = nmi(km.labels, truth);
  s.kmeans_ri_best = rand_index(km.labels, truth);
  return s;
}

RunOutcome run_pipeline(const EmbeddingBundle& bundle, const RunSpec& spec) {
  RunOutcome out;
  const auto names = clusterings_to_score(bundle, spec.clustering);
  out.report = alternate(bundle, spec.config);
  json evaluation = json::object();
  for (const auto& name : names) {
    out.scores[name] = score(out.report, bundle, bundle.ground_truth.at(name), spec.config.features);
    evaluation[name] = score_json(out.scores[name]);
  }
  out.document = {{"bundle", {{"path", spec.bundle.generic_string()},
                              {"concept", bundle.manifest.concept_name},
                              {"n", bundle.manifest.n},
                              {"K", bundle.manifest.K},
                              {"reference_words", bundle.manifest.reference_words}}},
                  {"final_clustering", "pseudo_labels"},
                  {"train", to_json(out.report)},
                  {"evaluation", evaluation}};
  return out;
}

RunOutcome cmd_run(const RunSpec& spec) {
  const EmbeddingBundle bundle = resolve_bundle(spec.bundle, spec.concept_name);
  RunOutcome out = run_pipeline(bundle, spec);
  ensure_dir(spec.out);
  write_text(spec.out / "report.json", out.document.dump(2) + "\n");
  write_text(spec.out / "loss.csv", loss_csv(out.report));
  write_u32(out.report.labels, spec.out / "labels.u32");
  write_f32(out.report.projection, spec.out / "projection.f32");
  write_f32(out.report.latent, spec.out / "latent.f32");
  write_text(spec.out / "timing.json", json{{"wall_seconds", out.report.wall_seconds}}.dump() + "\n");
  return out;
}

json cmd_eval(const fs::path& pred, const fs::path& truth) {
  const Labels p = read_u32(pred);
  const Labels q = read_u32(truth);
  if (p.size() != q.size()) {
    throw ValidationError("length_mismatch", pred.filename().string() + " has " + std::to_string(p.size()) +
                                                 " labels, " + truth.filename().string() + " has " +
                                                 std::to_string(q.size()));
  }
  return {{"nmi", nmi(p, q)},
          {"ri", rand_index(p, q)},
          {"n", p.size()},
          {"clusters_pred", cluster_count(p)},
          {"clusters_truth", cluster_count(q)}};
}

std::vector<AblationRow> cmd_ablate(const RunSpec& spec, const std::vector<SubspaceMode>& subspaces,
                                    const std::vector<FeatureMode>& features) {
  const EmbeddingBundle bundle = resolve_bundle(spec.bundle, spec.concept_name);
  const std::string clustering = default_clustering(bundle, spec.clustering);
  for (auto mode : subspaces) proxy_basis(bundle, mode);  // fail before any training

  std::vector<AblationRow> rows;
  for (auto mode : subspaces) {
    TrainConfig config = spec.config;
    config.subspace = mode;
    // The feature mode only selects the evaluation embedding, so one run
    // per subspace serves every feature column.
    const TrainReport report = alternate(bundle, config);
    for (auto feature : features) {
      TrainReport scored = report;
      scored.config.features = feature;
      rows.push_back({mode, feature, clustering, score(scored, bundle, bundle.ground_truth.at(clustering), feature)});
    }
  }
  if (!spec.out.empty()) {
    ensure_dir(spec.out);
    write_text(spec.out / "ablation.csv", ablation_csv(rows));
  }
  return rows;
}

PromptSource parse_prompt_source(std::string_view name) {
  if (name == "reference") return PromptSource::reference;
  if (name == "truth-label") return PromptSource::truth_label;
  throw ValidationError("config", "unknown prompt source '" + std::string(name) + "'");
}

json cmd_zeroshot(const RunSpec& spec, PromptSource prompts) {
  const EmbeddingBundle bundle = resolve_bundle(spec.bundle, spec.concept_name);
  const std::string clustering = default_clustering(bundle, spec.clustering);
  if (!bundle.projection_init) {
    throw ValidationError("missing_matrix", "zero-shot assignment needs projection_init (W0) in the bundle");
  }
  const Mat* class_prompts = &bundle.ref_prompt;
  if (prompts == PromptSource::truth_label) {
    auto it = bundle.class_prompts.find(clustering);
    if (it == bundle.class_prompts.end()) {
      throw ValidationError("missing_matrix", "truth-label prompts need class_prompts for '" + clustering + "'");
    }
    class_prompts = &it->second;
  }
  const Mat vision = project_vision(*bundle.projection_init, bundle.raw_features);
  const Labels labels = zero_shot_assign(vision, *class_prompts);
  const Labels& truth = bundle.ground_truth.at(clustering);
  json result = {{"prompts", prompts == PromptSource::reference ? "reference" : "truth-label"},
                 {"clustering", clustering},
                 {"nmi", nmi(labels, truth)},
                 {"ri", rand_index(labels, truth)},
                 {"n", labels.size()}};
  if (!spec.out.empty()) {
    ensure_dir(spec.out);
    write_u32(labels, spec.out / "zeroshot_labels.u32");
    write_text(spec.out / "zeroshot.json", result.dump(2) + "\n");
  }
  return result;
}

std::vector<SweepRow> cmd_sweep_lambda(const RunSpec& spec, const std::vector<double>& grid) {
  const EmbeddingBundle bundle = resolve_bundle(spec.bundle, spec.concept_name);
  const std::string clustering = default_clustering(bundle, spec.clustering);
  const Labels& truth = bundle.ground_truth.at(clustering);
  std::vector<SweepRow> rows;
  for (double lambda : grid) {
    SweepRow row;
    row.lambda = lambda;
    TrainConfig config = spec.config;
    config.lambda = lambda;
    try {
      const TrainReport report = alternate(bundle, config);
      row.nmi = nmi(report.labels, truth);
      row.ri = rand_index(report.labels, truth);
      row.final_loss = report.final_loss;
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(row);
  }
  if (!spec.out.empty()) {
    ensure_dir(spec.out);
    write_text(spec.out / "sweep.csv", sweep_csv(rows));
  }
  return rows;
}

json cmd_grid(const RunSpec& spec, const std::vector<double>& lr_grid, const std::vector<double>& wd_grid) {
  const EmbeddingBundle bundle = resolve_bundle(spec.bundle, spec.concept_name);
  const GridResult result = grid_search(bundle, lr_grid, wd_grid, spec.config);
  json rows = json::array();
  for (const auto& r : result.rows) {
    json row = {{"lr", r.lr}, {"weight_decay", r.weight_decay}, {"ok", r.ok}};
    if (r.ok) row["final_loss"] = r.final_loss; else row["error"] = r.error;
    rows.push_back(std::move(row));
  }
  json doc = {{"best", to_json(result.best)}, {"rows", std::move(rows)}};
  if (!spec.out.empty()) {
    ensure_dir(spec.out);
    write_text(spec.out / "grid.json", doc.dump(2) + "\n");
  }
  return doc;
}

void cmd_synth(const SyntheticSpec& spec, const fs::path& out) { write_synthetic(spec, out); }

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "lambda,nmi,ri,final_loss,error\n";
  for (const auto& r : rows) {
    out += fmt(r.lambda) + ",";
    out += r.ok ? fmt(r.nmi) + "," + fmt(r.ri) + "," + fmt(r.final_loss) + "," : std::string(",,,");
    // Commas would break the column layout.
    std::string err = r.error;
    for (auto& ch : err) if (ch == ',' || ch == '\n') ch = ';';
    out += err + "\n";
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      "subspace,features,clustering,pseudo_nmi,pseudo_ri,kmeans_nmi_mean,kmeans_ri_mean,kmeans_nmi_best,kmeans_ri_best\n";
  for (const auto& r : rows) {
    out += std::string(to_string(r.subspace)) + "," + std::string(to_string(r.features)) + "," + r.clustering + "," +
           fmt(r.score.pseudo_nmi) + "," + fmt(r.score.pseudo_ri) + "," + fmt(r.score.kmeans_nmi_mean) + "," +
           fmt(r.score.kmeans_ri_mean) + "," + fmt(r.score.kmeans_nmi_best) + "," + fmt(r.score.kmeans_ri_best) +
           "\n";
  }
  return out;
}

}  // namespace multisub
