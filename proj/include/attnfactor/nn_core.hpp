#ifndef ATTNFACTOR_NN_CORE_HPP
#define ATTNFACTOR_NN_CORE_HPP

#include <string>
#include <vector>

#include "attnfactor/common.hpp"
#include "attnfactor/rng.hpp"

namespace attnfactor::nn {

enum class Activation { Identity, Relu, Gelu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

Matrix activate(const Matrix& pre, Activation a);
// Given pre-activation values and the gradient w.r.t. the activation output,
// returns the gradient w.r.t. the pre-activation values.
Matrix activate_backward(const Matrix& pre, const Matrix& grad_out, Activation a);

// Row-major dense layer: rows are samples, forward(x) = x W^T + b.
struct Linear {
  Matrix w;   // out x in
  Vector b;   // out
  Matrix gw;
  Vector gb;

  void init(int out, int in, Rng& rng);  // uniform(-1/sqrt(in), 1/sqrt(in))
  void zero_grad();
  void gd_step(double lr);
  Matrix forward(const Matrix& x) const;
  // Accumulates gw/gb and returns the gradient w.r.t. x.
  Matrix backward(const Matrix& x, const Matrix& grad_out);
};

// Row-wise softmax and its backward map.
Matrix softmax_rows(const Matrix& scores);
Matrix softmax_backward(const Matrix& softmax_out, const Matrix& grad_out);

}  // namespace attnfactor::nn

#endif
