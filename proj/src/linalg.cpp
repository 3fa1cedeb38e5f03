#include "steinmc/linalg.hpp"

#include "steinmc/errors.hpp"

namespace steinmc {

double spectral_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues()(0);
}

Vec symmetric_eigenvalues(const Mat& a) {
  const Mat s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("symmetric eigensolver failed");
  return es.eigenvalues();
}

double min_eigenvalue(const Mat& a) { return symmetric_eigenvalues(a)(0); }

Mat cholesky_lower(const Mat& a) {
  Eigen::LLT<Mat> llt(0.5 * (a + a.transpose()));
  if (llt.info() != Eigen::Success) throw NumericError("matrix is not positive definite");
  return llt.matrixL();
}

double asymmetry(const Mat& a) { return (a - a.transpose()).cwiseAbs().maxCoeff(); }

}  // namespace steinmc
