#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "changediff/tensor.hpp"

namespace changediff {
namespace ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated only when requires_grad
  bool requires_grad = false;
  std::function<void()> backward;
};

using Var = Node*;

// Named trainable tensor; optimizers consume (value, grad) pairs.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Dynamic reverse-mode tape. One tape per forward pass; nodes are owned by
// the tape and freed with it. With grad disabled the same op code path runs
// value-only, which is the inference mode used by samplers.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_on_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_on_; }

  // Constant leaf (never receives gradient).
  Var input(Tensor value);
  // Gradient-tracked leaf owned by the tape; read grad from the node.
  Var leaf(Tensor value);
  // Leaf bound to an external parameter; backward accumulates into p.grad.
  Var use(Param& p);

  Var make(Tensor value, bool requires_grad, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs the tape in reverse. `loss` must be a
  // scalar node from this tape.
  void backward(Var loss);

 private:
  std::deque<Node> nodes_;
  std::vector<Node*> order_;
  bool grad_on_;
};

// ---- elementwise ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_const(Tape& t, Var a, double c);
Var silu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var abs_val(Tape& t, Var a);

// ---- matrix ----
Var matmul(Tape& t, Var a, Var b);     // [m,k] x [k,n]
Var matmul_nt(Tape& t, Var a, Var b);  // [m,k] x [n,k]^T -> [m,n]
Var transpose(Tape& t, Var x);         // [r,c] -> [c,r]
Var linear(Tape& t, Var x, Var w, Var b);  // [n,din] x [din,dout] + row bias
Var add_bias_rows(Tape& t, Var x, Var b);  // x [r,c] + b [c] per row
Var slice_cols(Tape& t, Var x, int c0, int c1);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var mean_cols(Tape& t, Var x, int c0, int c1);  // [r,c] -> [r]
Var softmax_rows(Tape& t, Var x);
Var layer_norm_rows(Tape& t, Var x, Var gamma, Var beta);
Var gather_rows(Tape& t, Var table, const std::vector<int>& rows);

// ---- image (C,H,W) ----
Var conv3x3(Tape& t, Var x, Var w, Var b);  // pad 1, stride 1
Var conv1x1(Tape& t, Var x, Var w, Var b);
Var group_norm(Tape& t, Var x, Var gamma, Var beta, int groups);
Var add_bias_ch(Tape& t, Var x, Var b);  // + b[c] per channel
Var avgpool2(Tape& t, Var x);
Var upsample2(Tape& t, Var x);
Var concat_ch(Tape& t, Var a, Var b);
Var reshape(Tape& t, Var x, std::vector<int> shape);

// ---- reductions / broadcast scalars ----
Var sum_all(Tape& t, Var x);
Var mean_all(Tape& t, Var x);
Var max_all(Tape& t, Var x);           // grad to first argmax
Var sub_bcast(Tape& t, Var x, Var s);  // x - scalar node
Var mse(Tape& t, Var a, Var b);        // mean squared error, scalar

}  // namespace ad
}  // namespace changediff
