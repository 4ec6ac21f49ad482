#include "multisub/subspace.hpp"

#include "multisub/errors.hpp"

#include <string>

namespace multisub {

std::string_view to_string(SubspaceMode mode) {
  switch (mode) {
    case SubspaceMode::token: return "token";
    case SubspaceMode::word_text: return "word_text";
    case SubspaceMode::prompt: return "prompt";
  }
  return "token";
}

SubspaceMode parse_subspace_mode(std::string_view name) {
  if (name == "token") return SubspaceMode::token;
  if (name == "word_text") return SubspaceMode::word_text;
  if (name == "prompt") return SubspaceMode::prompt;
  throw ValidationError("config", "unknown subspace mode '" + std::string(name) + "'");
}

const Mat& proxy_basis(const EmbeddingBundle& bundle, SubspaceMode mode) {
  switch (mode) {
    case SubspaceMode::token: return bundle.ref_token;
    case SubspaceMode::prompt: return bundle.ref_prompt;
    case SubspaceMode::word_text: break;
  }
  if (!bundle.ref_word_text) {
    throw ValidationError("missing_matrix", "word_text subspace requires ref_word_text (S) in the bundle");
  }
  return *bundle.ref_word_text;
}

const Mat& alignment_basis(const EmbeddingBundle& bundle, SubspaceMode mode) {
  return mode == SubspaceMode::word_text ? proxy_basis(bundle, mode) : bundle.ref_prompt;
}

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - peak).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Mat mixture_weights(const Mat& latent, const Mat& ref_token) {
  if (latent.cols() != ref_token.cols()) {
    throw ValidationError("shape_mismatch", "latent factors have " + std::to_string(latent.cols()) +
                                                " columns, token basis has " + std::to_string(ref_token.cols()));
  }
  return softmax_rows(latent * ref_token.transpose());
}

Mat proxy_embedding(const Mat& weights, const Mat& basis, SubspaceMode mode) {
  if (weights.cols() != basis.rows()) {
    throw ValidationError("shape_mismatch", "weights have " + std::to_string(weights.cols()) +
                                                " columns, basis has " + std::to_string(basis.rows()) + " rows");
  }
  Mat combined = weights * basis;
  if (mode == SubspaceMode::token) return combined;
  try {
    return normalize_rows(combined);
  } catch (const NumericalError& e) {
    throw NumericalError("degenerate_proxy", "proxy of sample " + std::to_string(e.index()) + " has zero norm",
                         e.index());
  }
}

Mat project_vision(const Mat& projection, const Mat& raw_features) {
  if (projection.cols() != raw_features.cols()) {
    throw ValidationError("shape_mismatch", "projection expects " + std::to_string(projection.cols()) +
                                                "-dim features, got " + std::to_string(raw_features.cols()));
  }
  try {
    return normalize_rows(raw_features * projection.transpose());
  } catch (const NumericalError& e) {
    throw NumericalError("zero_image", "sample " + std::to_string(e.index()) + " projects to the zero vector",
                         e.index());
  }
}

double alignment_loss(const Mat& vision, const Mat& text) {
  if (vision.rows() != text.rows() || vision.cols() != text.cols()) {
    throw ValidationError("shape_mismatch", "alignment loss needs equally shaped vision and text matrices");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < vision.rows(); ++i) sum -= vision.row(i).dot(text.row(i));
  return sum / static_cast<double>(vision.rows());
}

ProxyState forward(const Mat& latent, const Mat& projection, const EmbeddingBundle& bundle, SubspaceMode mode) {
  ProxyState s;
  s.weights = mixture_weights(latent, bundle.ref_token);
  s.proxy = proxy_embedding(s.weights, proxy_basis(bundle, mode), mode);
  s.text = proxy_embedding(s.weights, alignment_basis(bundle, mode), SubspaceMode::prompt);
  s.vision = project_vision(projection, bundle.raw_features);
  return s;
}

Mat normalize_rows_backward(const Mat& raw, const Mat& normalized, const Mat& grad_normalized) {
  Mat grad(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double norm = raw.row(i).norm();
    const double radial = grad_normalized.row(i).dot(normalized.row(i));
    grad.row(i) = (grad_normalized.row(i) - radial * normalized.row(i)) / norm;
  }
  return grad;
}

// L = -(1/n) sum_i <x_i, t_i>,  t_i = normalize(A_i B),  A = softmax(P Z^T),
// x_i = normalize(W u_i).
Phase1Result phase1_gradients(const Mat& latent, const Mat& projection, const EmbeddingBundle& bundle,
                              SubspaceMode mode) {
  const Mat& Z = bundle.ref_token;
  const Mat& B = alignment_basis(bundle, mode);
  const Mat& U = bundle.raw_features;
  const double inv_n = 1.0 / static_cast<double>(U.rows());

  const Mat weights = mixture_weights(latent, Z);
  const Mat mixed = weights * B;
  Mat text;
  try {
    text = normalize_rows(mixed);
  } catch (const NumericalError& e) {
    throw NumericalError("degenerate_proxy", "text proxy of sample " + std::to_string(e.index()) +
                                                 " has zero norm", e.index());
  }
  const Mat raw_projected = U * projection.transpose();
  const Mat vision = project_vision(projection, U);

  Phase1Result r;
  r.loss = alignment_loss(vision, text);

  const Mat grad_text = -inv_n * vision;
  const Mat grad_vision = -inv_n * text;

  const Mat grad_mixed = normalize_rows_backward(mixed, text, grad_text);
  const Mat grad_weights = grad_mixed * B.transpose();
  Mat grad_logits(weights.rows(), weights.cols());
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    const double mean = weights.row(i).dot(grad_weights.row(i));
    grad_logits.row(i) = weights.row(i).array() * (grad_weights.row(i).array() - mean);
  }
  r.grad_latent = grad_logits * Z;

  const Mat grad_raw = normalize_rows_backward(raw_projected, vision, grad_vision);
  r.grad_projection = grad_raw.transpose() * U;
  return r;
}

}  // namespace multisub
