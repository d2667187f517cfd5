#include "attnfactor/nn_core.hpp"

#include <cmath>

namespace attnfactor::nn {

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "gelu") return Activation::Gelu;
  throw ConfigError("unknown activation: '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
  }
  return "identity";
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Matrix activate(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::Identity:
      return pre;
    case Activation::Relu:
      return pre.cwiseMax(0.0);
    case Activation::Gelu: {
      Matrix out = pre;
      for (Eigen::Index i = 0; i < out.size(); ++i) {
        double x = out.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
      }
      return out;
    }
  }
  return pre;
}

Matrix activate_backward(const Matrix& pre, const Matrix& grad_out, Activation a) {
  switch (a) {
    case Activation::Identity:
      return grad_out;
    case Activation::Relu: {
      Matrix d = grad_out;
      for (Eigen::Index i = 0; i < d.size(); ++i)
        if (pre.data()[i] <= 0.0) d.data()[i] = 0.0;
      return d;
    }
    case Activation::Gelu: {
      Matrix d = grad_out;
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        double x = pre.data()[i];
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        d.data()[i] *= cdf + x * pdf;
      }
      return d;
    }
  }
  return grad_out;
}

void Linear::init(int out, int in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max(in, 1)));
  w = Matrix(out, in);
  b = Vector(out);
  for (int i = 0; i < out; ++i) {
    for (int j = 0; j < in; ++j) w(i, j) = rng.uniform(-bound, bound);
    b(i) = rng.uniform(-bound, bound);
  }
  zero_grad();
}

void Linear::zero_grad() {
  gw = Matrix::Zero(w.rows(), w.cols());
  gb = Vector::Zero(b.size());
}

void Linear::gd_step(double lr) {
  w -= lr * gw;
  b -= lr * gb;
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix out = x * w.transpose();
  out.rowwise() += b.transpose();
  return out;
}

Matrix Linear::backward(const Matrix& x, const Matrix& grad_out) {
  gw += grad_out.transpose() * x;
  gb += grad_out.colwise().sum();
  return grad_out * w;
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    double m = scores.row(i).maxCoeff();
    Eigen::RowVectorXd e = (scores.row(i).array() - m).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

Matrix softmax_backward(const Matrix& softmax_out, const Matrix& grad_out) {
  Matrix d(softmax_out.rows(), softmax_out.cols());
  for (Eigen::Index i = 0; i < softmax_out.rows(); ++i) {
    double dot = softmax_out.row(i).dot(grad_out.row(i));
    d.row(i) = softmax_out.row(i).cwiseProduct(grad_out.row(i).array().matrix() -
                                               Eigen::RowVectorXd::Constant(softmax_out.cols(), dot));
  }
  return d;
}

}  // namespace attnfactor::nn
