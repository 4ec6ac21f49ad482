#include "multisub/matrix.hpp"

#include "multisub/errors.hpp"

#include <string>

namespace multisub {

Mat normalize_rows(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (!(norm > 0.0)) {
      throw NumericalError("degenerate_row", "row " + std::to_string(i) + " has zero norm", i);
    }
    out.row(i) = m.row(i) / norm;
  }
  return out;
}

Vec row_norms(const Mat& m) { return m.rowwise().norm(); }

bool all_finite(const Mat& m) { return m.allFinite(); }

Mat round_to_float(const Mat& m) {
  // Materialize the single-precision copy: Eigen is free to fold a chained
  // cast<float>().cast<double>() expression into a no-op.
  const Eigen::MatrixXf single = m.cast<float>();
  return single.cast<double>();
}

}  // namespace multisub
