#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nhmc/core.hpp"
#include "nhmc/rng.hpp"

namespace nhmc {

// Forward measurement operator A: R^n -> R^m. Linear kinds expose an exact
// matrix representation for oracle use.
class ForwardOperator {
 public:
  enum class Kind {
    identity,
    mask,
    avgpool,
    circular_blur,
    dft_magnitude,
    tonemap_clip
  };

  static ForwardOperator identity(int n) {
    require(n >= 1, "operator dimension must be >= 1");
    ForwardOperator op;
    op.kind_ = Kind::identity;
    op.n_ = op.m_ = n;
    return op;
  }

  static ForwardOperator mask(int n, std::vector<int> keep) {
    require(n >= 1, "operator dimension must be >= 1");
    require(!keep.empty(), "mask must keep at least one index");
    for (std::size_t i = 0; i < keep.size(); ++i) {
      require(keep[i] >= 0 && keep[i] < n, "mask index out of range");
      if (i > 0)
        require(keep[i] > keep[i - 1],
                "mask indices must be strictly increasing");
    }
    ForwardOperator op;
    op.kind_ = Kind::mask;
    op.n_ = n;
    op.m_ = static_cast<int>(keep.size());
    op.keep_ = std::move(keep);
    return op;
  }

  static ForwardOperator avgpool(int n, int factor) {
    require(n >= 1, "operator dimension must be >= 1");
    require(factor >= 1, "pool factor must be >= 1");
    require(n % factor == 0, "pool factor must divide the signal length");
    ForwardOperator op;
    op.kind_ = Kind::avgpool;
    op.n_ = n;
    op.m_ = n / factor;
    op.factor_ = factor;
    return op;
  }

  // Circular convolution with a Gaussian kernel truncated at 4 sigma and
  // renormalized. With a shape (rows, cols), rows*cols = n, the blur is
  // applied separably along both axes of the row-major signal.
  static ForwardOperator circular_blur(int n, double sigma,
                                       std::optional<std::pair<int, int>>
                                           shape = std::nullopt) {
    require(n >= 1, "operator dimension must be >= 1");
    require(sigma > 0.0, "blur sigma must be positive");
    ForwardOperator op;
    op.kind_ = Kind::circular_blur;
    op.n_ = op.m_ = n;
    op.blur_sigma_ = sigma;
    if (shape) {
      require(shape->first >= 1 && shape->second >= 1 &&
                  shape->first * shape->second == n,
              "blur shape must multiply to the signal length");
      op.rows_ = shape->first;
      op.cols_ = shape->second;
    } else {
      op.rows_ = 1;
      op.cols_ = n;
    }
    const int half = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    op.kernel_.resize(static_cast<std::size_t>(2 * half + 1));
    double sum = 0.0;
    for (int j = -half; j <= half; ++j) {
      const double w = std::exp(-0.5 * j * j / (sigma * sigma));
      op.kernel_[static_cast<std::size_t>(j + half)] = w;
      sum += w;
    }
    for (double& w : op.kernel_) w /= sum;
    return op;
  }

  // Modulus of the non-redundant half of the real-input DFT: m = n/2 + 1.
  static ForwardOperator dft_magnitude(int n) {
    require(n >= 1, "operator dimension must be >= 1");
    ForwardOperator op;
    op.kind_ = Kind::dft_magnitude;
    op.n_ = n;
    op.m_ = n / 2 + 1;
    return op;
  }

  static ForwardOperator tonemap_clip(int n, double scale = 2.0,
                                      double lo = 0.0, double hi = 1.0) {
    require(n >= 1, "operator dimension must be >= 1");
    require(lo < hi, "clip bounds must satisfy lo < hi");
    require(scale != 0.0, "tonemap scale must be nonzero");
    ForwardOperator op;
    op.kind_ = Kind::tonemap_clip;
    op.n_ = op.m_ = n;
    op.scale_ = scale;
    op.lo_ = lo;
    op.hi_ = hi;
    return op;
  }

  Kind kind() const { return kind_; }
  int input_dim() const { return n_; }
  int output_dim() const { return m_; }

  bool is_linear() const {
    return kind_ == Kind::identity || kind_ == Kind::mask ||
           kind_ == Kind::avgpool || kind_ == Kind::circular_blur;
  }

  Vector apply(const Vector& x) const {
    require(static_cast<int>(x.size()) == n_,
            "operator input has wrong dimension");
    switch (kind_) {
      case Kind::identity:
        return x;
      case Kind::mask: {
        Vector y(m_);
        for (int i = 0; i < m_; ++i)
          y[i] = x[keep_[static_cast<std::size_t>(i)]];
        return y;
      }
      case Kind::avgpool: {
        Vector y(m_);
        for (int b = 0; b < m_; ++b) {
          double acc = 0.0;
          for (int j = 0; j < factor_; ++j) acc += x[b * factor_ + j];
          y[b] = acc / factor_;
        }
        return y;
      }
      case Kind::circular_blur:
        return blur_apply(x, /*adjoint=*/false);
      case Kind::dft_magnitude: {
        Vector y(m_);
        for (int k = 0; k < m_; ++k) {
          auto [a, b] = dft_bin(x, k);
          y[k] = std::hypot(a, b);
        }
        return y;
      }
      case Kind::tonemap_clip: {
        Vector y(m_);
        for (int i = 0; i < n_; ++i)
          y[i] = std::clamp(scale_ * x[i], lo_, hi_);
        return y;
      }
    }
    throw ConfigError("unreachable operator kind");
  }

  // cotangent^T dA/dx. Linear kinds return A^T cotangent exactly.
  Vector vjp(const Vector& x, const Vector& cotangent) const {
    require(static_cast<int>(x.size()) == n_,
            "operator input has wrong dimension");
    require(static_cast<int>(cotangent.size()) == m_,
            "cotangent has wrong dimension");
    switch (kind_) {
      case Kind::identity:
        return cotangent;
      case Kind::mask: {
        Vector g = Vector::Zero(n_);
        for (int i = 0; i < m_; ++i)
          g[keep_[static_cast<std::size_t>(i)]] = cotangent[i];
        return g;
      }
      case Kind::avgpool: {
        Vector g(n_);
        for (int b = 0; b < m_; ++b)
          for (int j = 0; j < factor_; ++j)
            g[b * factor_ + j] = cotangent[b] / factor_;
        return g;
      }
      case Kind::circular_blur:
        return blur_apply(cotangent, /*adjoint=*/true);
      case Kind::dft_magnitude: {
        Vector g = Vector::Zero(n_);
        const double omega = 2.0 * std::numbers::pi / n_;
        for (int k = 0; k < m_; ++k) {
          auto [a, b] = dft_bin(x, k);
          const double mag = std::hypot(a, b);
          if (mag < std::numeric_limits<double>::min())
            throw NondifferentiablePointError(
                "dft_magnitude has a zero-modulus bin", k);
          const double w = cotangent[k] / mag;
          for (int j = 0; j < n_; ++j) {
            const double th = omega * k * j;
            g[j] += w * (a * std::cos(th) - b * std::sin(th));
          }
        }
        return g;
      }
      case Kind::tonemap_clip: {
        Vector g(n_);
        for (int i = 0; i < n_; ++i) {
          const double v = scale_ * x[i];
          g[i] = (v > lo_ && v < hi_) ? scale_ * cotangent[i] : 0.0;
        }
        return g;
      }
    }
    throw ConfigError("unreachable operator kind");
  }

  // Exact matrix representation; linear kinds only.
  Matrix matrix() const {
    require(is_linear(), "matrix representation requires a linear operator");
    Matrix A(m_, n_);
    Vector e = Vector::Zero(n_);
    for (int j = 0; j < n_; ++j) {
      e[j] = 1.0;
      A.col(j) = apply(e);
      e[j] = 0.0;
    }
    return A;
  }

  std::string kind_name() const {
    switch (kind_) {
      case Kind::identity: return "identity";
      case Kind::mask: return "mask";
      case Kind::avgpool: return "avgpool";
      case Kind::circular_blur: return "circular_blur";
      case Kind::dft_magnitude: return "dft_magnitude";
      case Kind::tonemap_clip: return "tonemap_clip";
    }
    return "unknown";
  }

  const std::vector<int>& mask_keep() const { return keep_; }
  int pool_factor() const { return factor_; }
  double blur_sigma() const { return blur_sigma_; }
  std::pair<int, int> blur_shape() const { return {rows_, cols_}; }
  double clip_scale() const { return scale_; }
  double clip_lo() const { return lo_; }
  double clip_hi() const { return hi_; }

 private:
  ForwardOperator() = default;

  std::pair<double, double> dft_bin(const Vector& x, int k) const {
    const double omega = 2.0 * std::numbers::pi / n_;
    double a = 0.0, b = 0.0;
    for (int j = 0; j < n_; ++j) {
      const double th = omega * k * j;
      a += x[j] * std::cos(th);
      b -= x[j] * std::sin(th);
    }
    return {a, b};
  }

  // Separable circular convolution; the adjoint correlates with the
  // reversed kernel (a no-op for the symmetric Gaussian, kept explicit).
  Vector blur_apply(const Vector& x, bool adjoint) const {
    const int half = static_cast<int>(kernel_.size() / 2);
    auto conv_axis = [&](const Vector& in, int stride, int len, int base) {
      Vector out(len);
      for (int i = 0; i < len; ++i) {
        double acc = 0.0;
        for (int d = -half; d <= half; ++d) {
          const double w = adjoint
                               ? kernel_[static_cast<std::size_t>(half - d)]
                               : kernel_[static_cast<std::size_t>(half + d)];
          int src = (i - d) % len;
          if (src < 0) src += len;
          acc += w * in[base + src * stride];
        }
        out[i] = acc;
      }
      return out;
    };
    Vector cur = x;
    // along rows (contiguous)
    if (cols_ > 1) {
      Vector next(n_);
      for (int r = 0; r < rows_; ++r) {
        Vector line = conv_axis(cur, 1, cols_, r * cols_);
        for (int c = 0; c < cols_; ++c) next[r * cols_ + c] = line[c];
      }
      cur = next;
    }
    // along columns
    if (rows_ > 1) {
      Vector next(n_);
      for (int c = 0; c < cols_; ++c) {
        Vector line = conv_axis(cur, cols_, rows_, c);
        for (int r = 0; r < rows_; ++r) next[r * cols_ + c] = line[r];
      }
      cur = next;
    }
    return cur;
  }

  Kind kind_ = Kind::identity;
  int n_ = 0;
  int m_ = 0;
  std::vector<int> keep_;
  int factor_ = 1;
  double blur_sigma_ = 0.0;
  int rows_ = 1;
  int cols_ = 1;
  std::vector<double> kernel_;
  double scale_ = 2.0;
  double lo_ = 0.0;
  double hi_ = 1.0;
};

struct NoiseModel {
  enum class Kind { gaussian, impulse, speckle };
  Kind kind = Kind::gaussian;
  double sigma = 0.0;  // gaussian
  double p = 0.0;      // impulse replacement probability
  double bound = 0.0;  // speckle amplitude bound

  static NoiseModel gaussian(double sigma) {
    require(sigma >= 0.0, "gaussian sigma must be nonnegative");
    NoiseModel nm;
    nm.kind = Kind::gaussian;
    nm.sigma = sigma;
    return nm;
  }
  static NoiseModel impulse(double p) {
    require(p >= 0.0 && p <= 1.0, "impulse probability must lie in [0, 1]");
    NoiseModel nm;
    nm.kind = Kind::impulse;
    nm.p = p;
    return nm;
  }
  static NoiseModel speckle(double bound) {
    require(bound >= 0.0, "speckle bound must be nonnegative");
    NoiseModel nm;
    nm.kind = Kind::speckle;
    nm.bound = bound;
    return nm;
  }

  std::string kind_name() const {
    switch (kind) {
      case Kind::gaussian: return "gaussian";
      case Kind::impulse: return "impulse";
      case Kind::speckle: return "speckle";
    }
    return "unknown";
  }
};

// A measurement together with everything needed to regenerate it bitwise.
struct ForwardProblem {
  ForwardOperator op;
  NoiseModel noise;
  Vector y;
  std::optional<Vector> x_true;
  std::uint64_t seed = 0;
};

// gaussian: y = A(x) + sigma z; impulse: each element replaced by 0 or 1
// with probability p/2 each; speckle: y = A(x) .* (1 + eps), eps ~ U[0,
// bound] per element.
inline ForwardProblem synthesize_measurement(const ForwardOperator& op,
                                             const NoiseModel& noise,
                                             const Vector& x_true,
                                             std::uint64_t seed) {
  RngStream rng(seed, "problem-synthesis");
  const Vector clean = op.apply(x_true);
  Vector y = clean;
  const int m = op.output_dim();
  switch (noise.kind) {
    case NoiseModel::Kind::gaussian:
      for (int i = 0; i < m; ++i) y[i] += noise.sigma * rng.normal();
      break;
    case NoiseModel::Kind::impulse:
      for (int i = 0; i < m; ++i) {
        const double u = rng.uniform();
        if (u < noise.p / 2.0)
          y[i] = 0.0;
        else if (u < noise.p)
          y[i] = 1.0;
      }
      break;
    case NoiseModel::Kind::speckle:
      for (int i = 0; i < m; ++i)
        y[i] = clean[i] * (1.0 + noise.bound * rng.uniform());
      break;
  }
  return ForwardProblem{op, noise, std::move(y), x_true, seed};
}

}  // namespace nhmc
