#include "steinmc/test_functions.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "steinmc/errors.hpp"

namespace steinmc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int order_of(const std::vector<int>& t) { return std::accumulate(t.begin(), t.end(), 0); }

}  // namespace

void TestFunction::evaluate(const double* w, double* v, double* g, double* H) const {
  if (v) *v = value(w);
  if (g) gradient(w, g);
  if (H) hessian(w, H);
}

double TestFunction::norm(int order) const {
  const std::size_t d = dim();
  double worst = 0.0;
  std::vector<int> t(d, 0);
  // Enumerate multi-indices of the given order.
  std::function<void(std::size_t, int)> rec = [&](std::size_t a, int left) {
    if (a + 1 == d) {
      t[a] = left;
      worst = std::max(worst, partial_sup(t));
      return;
    }
    for (int k = 0; k <= left; ++k) {
      t[a] = k;
      rec(a + 1, left - k);
    }
  };
  rec(0, order);
  return worst;
}

namespace {

class Affine final : public TestFunction {
 public:
  Affine(Vec v, double c) : v_(std::move(v)), c_(c) {}
  std::size_t dim() const override { return static_cast<std::size_t>(v_.size()); }
  std::string name() const override { return "affine"; }
  double value(const double* w) const override {
    double s = c_;
    for (Eigen::Index a = 0; a < v_.size(); ++a) s += v_(a) * w[a];
    return s;
  }
  void gradient(const double*, double* g) const override {
    for (Eigen::Index a = 0; a < v_.size(); ++a) g[a] = v_(a);
  }
  void hessian(const double*, double* H) const override { std::fill(H, H + dim() * dim(), 0.0); }
  void third(const double*, double* T) const override { std::fill(T, T + dim() * dim() * dim(), 0.0); }
  double partial_sup(const std::vector<int>& t) const override {
    const int k = order_of(t);
    if (k == 0) return v_.isZero() ? std::abs(c_) : kInf;
    if (k == 1)
      for (std::size_t a = 0; a < t.size(); ++a)
        if (t[a] == 1) return std::abs(v_(static_cast<Eigen::Index>(a)));
    return 0.0;
  }
  double lipschitz() const override { return v_.norm(); }

 private:
  Vec v_;
  double c_;
};

class Quadratic final : public TestFunction {
 public:
  Quadratic(Mat Q, Vec v, double c) : Q_(0.5 * (Q + Q.transpose())), v_(std::move(v)), c_(c) {
    if (Q_.rows() != v_.size() || Q_.cols() != v_.size()) throw DomainError("quadratic: dimension mismatch");
  }
  std::size_t dim() const override { return static_cast<std::size_t>(v_.size()); }
  std::string name() const override { return "quadratic"; }
  double value(const double* w) const override {
    double v;
    evaluate(w, &v, nullptr, nullptr);
    return v;
  }
  void gradient(const double* w, double* g) const override { evaluate(w, nullptr, g, nullptr); }
  void hessian(const double* w, double* H) const override { evaluate(w, nullptr, nullptr, H); }
  // Plain loops: this sits in the innermost quadrature loop, where Eigen
  // temporaries would allocate.
  void evaluate(const double* w, double* v, double* g, double* H) const override {
    const auto d = v_.size();
    if (v) {
      double s = c_;
      for (Eigen::Index a = 0; a < d; ++a) {
        double qa = 0.0;
        for (Eigen::Index b = 0; b < d; ++b) qa += Q_(a, b) * w[b];
        s += w[a] * qa + v_(a) * w[a];
      }
      *v = s;
    }
    if (g)
      for (Eigen::Index a = 0; a < d; ++a) {
        double qa = 0.0;
        for (Eigen::Index b = 0; b < d; ++b) qa += Q_(a, b) * w[b];
        g[a] = 2.0 * qa + v_(a);
      }
    if (H)
      for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b) H[a * d + b] = 2.0 * Q_(a, b);
  }
  void third(const double*, double* T) const override { std::fill(T, T + dim() * dim() * dim(), 0.0); }
  double partial_sup(const std::vector<int>& t) const override {
    const int k = order_of(t);
    if (k == 0) return Q_.isZero() && v_.isZero() ? std::abs(c_) : kInf;
    if (k == 1) {
      for (std::size_t a = 0; a < t.size(); ++a)
        if (t[a] == 1) {
          const auto i = static_cast<Eigen::Index>(a);
          return Q_.row(i).isZero() ? std::abs(v_(i)) : kInf;
        }
    }
    if (k == 2) {
      std::vector<Eigen::Index> idx;
      for (std::size_t a = 0; a < t.size(); ++a)
        for (int r = 0; r < t[a]; ++r) idx.push_back(static_cast<Eigen::Index>(a));
      return 2.0 * std::abs(Q_(idx[0], idx[1]));
    }
    return 0.0;
  }
  double lipschitz() const override { return Q_.isZero() ? v_.norm() : kInf; }

 private:
  Mat Q_;
  Vec v_;
  double c_;
};

// tanh and its derivatives at u; sups of |tanh^(k)| are 1, 1, 4/(3 sqrt 3), 2.
inline void tanh_derivs(double u, double* out) {
  const double T = std::tanh(u);
  const double S = 1.0 - T * T;
  out[0] = T;
  out[1] = S;
  out[2] = -2.0 * T * S;
  out[3] = -2.0 * S * (1.0 - 3.0 * T * T);
}
const double kTanhSup[4] = {1.0, 1.0, 4.0 / (3.0 * std::sqrt(3.0)), 2.0};

double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

// One-variable factor with derivatives up to order three and bounds on
// their sups.
struct Factor {
  enum class Kind { Tanh, TanhRamp, Gaussian, Sin, SoftClip, SoftAbs };
  Kind kind;
  double p = 0.0, q = 0.0;
  double sups[4] = {0.0, 0.0, 0.0, 0.0};

  void eval(double x, double* out) const {
    switch (kind) {
      case Kind::Tanh:  // tanh(p x + q)
        tanh_derivs(p * x + q, out);
        out[1] *= p;
        out[2] *= p * p;
        out[3] *= p * p * p;
        return;
      case Kind::TanhRamp:  // tanh(p x + q) / p
        tanh_derivs(p * x + q, out);
        out[0] /= p;
        out[2] *= p;
        out[3] *= p * p;
        return;
      case Kind::Gaussian: {  // exp(-(x - p)^2 / (2 q^2))
        const double t = (x - p) / q;
        const double e = std::exp(-0.5 * t * t);
        out[0] = e;
        out[1] = -t * e / q;
        out[2] = (t * t - 1.0) * e / (q * q);
        out[3] = -(t * t * t - 3.0 * t) * e / (q * q * q);
        return;
      }
      case Kind::Sin: {  // sin(p x) / p
        const double s = std::sin(p * x), c = std::cos(p * x);
        out[0] = s / p;
        out[1] = c;
        out[2] = -p * s;
        out[3] = -p * p * c;
        return;
      }
      case Kind::SoftClip: {  // (log cosh(q(x+p)) - log cosh(q(x-p))) / (2q)
        double a[4], b[4];
        tanh_derivs(q * (x + p), a);
        tanh_derivs(q * (x - p), b);
        out[0] = (log_cosh(q * (x + p)) - log_cosh(q * (x - p))) / (2.0 * q);
        out[1] = 0.5 * (a[0] - b[0]);
        out[2] = 0.5 * q * (a[1] - b[1]);
        out[3] = 0.5 * q * q * (a[2] - b[2]);
        return;
      }
      case Kind::SoftAbs: {  // sqrt(1 + x^2) - 1
        const double r = std::sqrt(1.0 + x * x);
        out[0] = r - 1.0;
        out[1] = x / r;
        out[2] = 1.0 / (r * r * r);
        out[3] = -3.0 * x / (r * r * r * r * r);
        return;
      }
    }
  }
};

// h(w) = prod_a phi_a(w_a).
class SeparableProduct final : public TestFunction {
 public:
  SeparableProduct(std::vector<Factor> factors, std::string name)
      : factors_(std::move(factors)), name_(std::move(name)) {}
  std::size_t dim() const override { return factors_.size(); }
  std::string name() const override { return name_; }

  double value(const double* w) const override {
    double v;
    evaluate(w, &v, nullptr, nullptr);
    return v;
  }
  void gradient(const double* w, double* g) const override { evaluate(w, nullptr, g, nullptr); }
  void hessian(const double* w, double* H) const override { evaluate(w, nullptr, nullptr, H); }

  void evaluate(const double* w, double* v, double* g, double* H) const override {
    const std::size_t d = factors_.size();
    double D[3][4];
    for (std::size_t a = 0; a < d; ++a) factors_[a].eval(w[a], D[a]);
    if (v) {
      double p = 1.0;
      for (std::size_t a = 0; a < d; ++a) p *= D[a][0];
      *v = p;
    }
    if (g) {
      for (std::size_t a = 0; a < d; ++a) {
        double p = 1.0;
        for (std::size_t c = 0; c < d; ++c) p *= D[c][c == a ? 1 : 0];
        g[a] = p;
      }
    }
    if (H) {
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
          double p = 1.0;
          for (std::size_t c = 0; c < d; ++c) p *= D[c][(c == a) + (c == b)];
          H[a * d + b] = H[b * d + a] = p;
        }
    }
  }

  void third(const double* w, double* T) const override {
    const std::size_t d = factors_.size();
    double D[3][4];
    for (std::size_t a = 0; a < d; ++a) factors_[a].eval(w[a], D[a]);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        for (std::size_t e = 0; e < d; ++e) {
          double p = 1.0;
          for (std::size_t c = 0; c < d; ++c) p *= D[c][(c == a) + (c == b) + (c == e)];
          T[(a * d + b) * d + e] = p;
        }
  }

  double partial_sup(const std::vector<int>& t) const override {
    double p = 1.0;
    for (std::size_t a = 0; a < factors_.size(); ++a) p *= factors_[a].sups[t[a]];
    return p;
  }

  double lipschitz() const override {
    double s = 0.0;
    std::vector<int> t(dim(), 0);
    for (std::size_t a = 0; a < dim(); ++a) {
      t[a] = 1;
      const double p = partial_sup(t);
      s += p * p;
      t[a] = 0;
    }
    return std::sqrt(s);
  }

 private:
  std::vector<Factor> factors_;
  std::string name_;
};

class Scaled final : public TestFunction {
 public:
  Scaled(TestFunctionPtr h, double s) : h_(std::move(h)), s_(s) {}
  std::size_t dim() const override { return h_->dim(); }
  std::string name() const override { return h_->name(); }
  double value(const double* w) const override { return s_ * h_->value(w); }
  void gradient(const double* w, double* g) const override {
    h_->gradient(w, g);
    for (std::size_t a = 0; a < dim(); ++a) g[a] *= s_;
  }
  void hessian(const double* w, double* H) const override {
    h_->hessian(w, H);
    for (std::size_t a = 0; a < dim() * dim(); ++a) H[a] *= s_;
  }
  void evaluate(const double* w, double* v, double* g, double* H) const override {
    h_->evaluate(w, v, g, H);
    if (v) *v *= s_;
    if (g)
      for (std::size_t a = 0; a < dim(); ++a) g[a] *= s_;
    if (H)
      for (std::size_t a = 0; a < dim() * dim(); ++a) H[a] *= s_;
  }
  void third(const double* w, double* T) const override {
    h_->third(w, T);
    for (std::size_t a = 0; a < dim() * dim() * dim(); ++a) T[a] *= s_;
  }
  double partial_sup(const std::vector<int>& t) const override { return std::abs(s_) * h_->partial_sup(t); }
  double lipschitz() const override { return std::abs(s_) * h_->lipschitz(); }

 private:
  TestFunctionPtr h_;
  double s_;
};

// sup_t |He_3(t)| e^{-t^2/2}, attained at t^2 = 3 - sqrt 6.
double hermite3_sup() {
  const double t = std::sqrt(3.0 - std::sqrt(6.0));
  return std::abs(t * t * t - 3.0 * t) * std::exp(-0.5 * t * t);
}

Factor tanh_factor(double a, double b) {
  Factor f{Factor::Kind::Tanh, a, b};
  for (int k = 0; k < 4; ++k) f.sups[k] = kTanhSup[k] * std::pow(std::abs(a), k);
  return f;
}

Factor gaussian_factor(double c, double s) {
  Factor f{Factor::Kind::Gaussian, c, s};
  f.sups[0] = 1.0;
  f.sups[1] = std::exp(-0.5) / s;
  f.sups[2] = 1.0 / (s * s);
  f.sups[3] = hermite3_sup() / (s * s * s);
  return f;
}

TestFunctionPtr single(Factor f, std::string name) {
  return std::make_shared<SeparableProduct>(std::vector<Factor>{f}, std::move(name));
}

std::string fmt(const char* base, double x) {
  std::ostringstream os;
  os << base << '(' << x << ')';
  return os.str();
}

}  // namespace

TestFunctionPtr make_affine(Vec v, double c) { return std::make_shared<Affine>(std::move(v), c); }

TestFunctionPtr make_quadratic(Mat Q, Vec v, double c) {
  return std::make_shared<Quadratic>(std::move(Q), std::move(v), c);
}

TestFunctionPtr make_tanh_product(Vec a, Vec b) {
  if (a.size() != b.size() || a.size() < 1 || a.size() > 3) throw DomainError("tanh product needs 1 <= d <= 3");
  std::vector<Factor> fs;
  for (Eigen::Index i = 0; i < a.size(); ++i) fs.push_back(tanh_factor(a(i), b(i)));
  return std::make_shared<SeparableProduct>(std::move(fs), "tanh_product");
}

TestFunctionPtr make_gaussian_bump(Vec center, double width) {
  if (!(width > 0.0)) throw DomainError("bump width must be positive");
  if (center.size() < 1 || center.size() > 3) throw DomainError("bump needs 1 <= d <= 3");
  std::vector<Factor> fs;
  for (Eigen::Index i = 0; i < center.size(); ++i) fs.push_back(gaussian_factor(center(i), width));
  return std::make_shared<SeparableProduct>(std::move(fs), "gaussian_bump");
}

TestFunctionPtr make_scaled(TestFunctionPtr h, double scale) { return std::make_shared<Scaled>(std::move(h), scale); }

TestFunctionPtr make_sin(double k) {
  if (!(k > 0.0)) throw DomainError("frequency must be positive");
  Factor f{Factor::Kind::Sin, k, 0.0, {1.0 / k, 1.0, k, k * k}};
  return single(f, fmt("sin", k));
}

TestFunctionPtr make_tanh_ramp(double a, double b) {
  if (!(a > 0.0)) throw DomainError("ramp slope must be positive");
  Factor f{Factor::Kind::TanhRamp, a, b};
  for (int k = 0; k < 4; ++k) f.sups[k] = kTanhSup[k] * std::pow(a, k - 1);
  return single(f, fmt("tanh_ramp", a));
}

TestFunctionPtr make_soft_clip(double c, double k) {
  if (!(c > 0.0 && k > 0.0)) throw DomainError("soft clip needs positive level and sharpness");
  // The derivative (tanh(k(w+c)) - tanh(k(w-c)))/2 lies in [0, tanh(kc)].
  Factor f{Factor::Kind::SoftClip, c, k, {c, std::tanh(k * c), 0.5 * k, k * k * kTanhSup[2]}};
  return single(f, fmt("soft_clip", k));
}

TestFunctionPtr make_soft_abs() {
  // |f'''| peaks at x = 1/2.
  Factor f{Factor::Kind::SoftAbs, 0.0, 0.0, {kInf, 1.0, 1.0, 1.5 * std::pow(1.25, -2.5)}};
  return single(f, "soft_abs");
}

std::vector<TestFunctionPtr> builtin_family(std::size_t d) {
  if (d < 1 || d > 3) throw DomainError("built-in family supports 1 <= d <= 3");
  const auto n = static_cast<Eigen::Index>(d);
  Vec v(n), a(n), b(n), c(n);
  Mat Q = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v(i) = 1.0 / std::sqrt(static_cast<double>(d)) * (i % 2 == 0 ? 1.0 : -1.0);
    a(i) = 0.7 + 0.15 * static_cast<double>(i);
    b(i) = 0.2 - 0.25 * static_cast<double>(i);
    c(i) = 0.3 - 0.2 * static_cast<double>(i);
    Q(i, i) = 0.5;
    if (i + 1 < n) Q(i, i + 1) = Q(i + 1, i) = 0.1;
  }
  return {make_affine(v, 0.5), make_quadratic(Q, Vec::Zero(n)), make_tanh_product(a, b),
          make_gaussian_bump(c, 1.2)};
}

std::vector<TestFunctionPtr> lipschitz_family_1d() {
  return {make_tanh_ramp(1.0, 0.0),  make_tanh_ramp(2.0, 0.5),  make_tanh_ramp(0.5, -1.0),
          make_soft_clip(1.0, 1.0),  make_soft_clip(1.0, 3.0),  make_soft_clip(2.0, 2.0),
          make_sin(1.0),             make_sin(2.0),             make_soft_abs(),
          make_affine(Vec::Constant(1, 1.0))};
}

}  // namespace steinmc
