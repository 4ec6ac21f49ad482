#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace multisub {

// Computation happens in double; bundles are stored as binary32 on disk.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Labels = std::vector<std::uint32_t>;

/// Rows scaled to unit L2 norm. Throws NumericalError("degenerate_row")
/// naming the first zero-norm row.
Mat normalize_rows(const Mat& m);

/// Row norms, in row order.
Vec row_norms(const Mat& m);

bool all_finite(const Mat& m);

// Round every entry through binary32, i.e. what a save/load cycle would yield.
Mat round_to_float(const Mat& m);

}  // namespace multisub
