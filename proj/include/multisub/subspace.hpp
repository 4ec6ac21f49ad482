#pragma once

#include "multisub/bundle.hpp"
#include "multisub/matrix.hpp"

#include <string>
#include <string_view>

namespace multisub {

/// Which reference-word embedding spans the proxy subspace.
enum class SubspaceMode {
  token,      // Z: token embeddings, proxy left unnormalized
  word_text,  // S: text embedding of the bare word
  prompt,     // T: text embedding of the filled prompt
};

std::string_view to_string(SubspaceMode mode);
SubspaceMode parse_subspace_mode(std::string_view name);

/// Basis used to form proxies (and pseudo-labels) in `mode`.
const Mat& proxy_basis(const EmbeddingBundle& bundle, SubspaceMode mode);

/// Joint-space basis whose mixture stands in for the prompt embedding that
/// the vision side is aligned to: S in word_text mode, T otherwise.
const Mat& alignment_basis(const EmbeddingBundle& bundle, SubspaceMode mode);

/// Row-wise softmax of P * Z^T (n x K).
Mat mixture_weights(const Mat& latent, const Mat& ref_token);

/// Row-wise softmax of precomputed logits.
Mat softmax_rows(const Mat& logits);

/// A * basis; renormalized to unit rows unless mode is token.
Mat proxy_embedding(const Mat& weights, const Mat& basis, SubspaceMode mode);

/// x_i = W u_i / |W u_i|.
Mat project_vision(const Mat& projection, const Mat& raw_features);

/// Mean negative inner product of matching rows.
double alignment_loss(const Mat& vision, const Mat& text);

/// Everything the forward pass produces for one (P, W) state.
struct ProxyState {
  Mat weights;     // A, n x K
  Mat proxy;       // proxy in the mode's subspace (w_i for token mode)
  Mat text;        // normalized mixture of the alignment basis, n x d_joint
  Mat vision;      // X, n x d_joint
};

ProxyState forward(const Mat& latent, const Mat& projection, const EmbeddingBundle& bundle, SubspaceMode mode);

struct Phase1Result {
  Mat grad_latent;      // n x d_token
  Mat grad_projection;  // d_joint x d_raw
  double loss = 0.0;
};

/// Analytic gradients of the alignment loss with respect to the latent
/// factors and the projection layer.
Phase1Result phase1_gradients(const Mat& latent, const Mat& projection, const EmbeddingBundle& bundle,
                              SubspaceMode mode);

/// Backpropagates a gradient on normalize(r_i) to r_i, row by row.
Mat normalize_rows_backward(const Mat& raw, const Mat& normalized, const Mat& grad_normalized);

}  // namespace multisub
