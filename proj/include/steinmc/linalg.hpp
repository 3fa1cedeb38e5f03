#pragma once

#include <Eigen/Dense>

namespace steinmc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Largest singular value.
double spectral_norm(const Mat& a);

// Eigenvalues of the symmetric part of a, ascending.
Vec symmetric_eigenvalues(const Mat& a);

double min_eigenvalue(const Mat& a);

// Lower Cholesky factor of a symmetric positive definite matrix; throws
// NumericError if a is not positive definite.
Mat cholesky_lower(const Mat& a);

// Max |a_ij - a_ji|.
double asymmetry(const Mat& a);

}  // namespace steinmc
