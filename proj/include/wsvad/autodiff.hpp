#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wsvad/types.hpp"

namespace wsvad::ad {

using wsvad::Mat;

// Named learnable tensor. Gradients accumulate across Tape::backward calls
// until zero_grad(); the optimizer walks the store in insertion order.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class ParameterStore {
 public:
  Parameter& add(const std::string& name, Mat init, bool trainable = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

// Handle into a Tape node. Plain value; cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Eager reverse-mode tape over row-major double matrices. Each op computes
// its value at build time and records a closure for the reverse sweep.
// Scalars are 1x1 matrices.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves -------------------------------------------------------------
  Var constant(Mat v);
  Var scalar(double v);
  Var leaf(Parameter& p);  // gradient lands in p.grad after backward()

  // --- elementwise / structural --------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  Var add_const(Var a, double c);
  Var cwise_mul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var hconcat(Var a, Var b);
  Var vconcat(const std::vector<Var>& parts);
  Var slice_rows(Var a, int start, int count);
  Var slice_cols(Var a, int start, int count);
  // place a (k x d) block into a zero (n x d) matrix at row offset
  Var scatter_rows(Var a, int n, int row_offset);
  // multiply row i by weights[i] (constant weights)
  Var row_scale(Var a, const Vec& weights);
  // a (n x k) + broadcast of b (1 x k) to every row
  Var add_row_broadcast(Var a, Var b);
  Var stop_gradient(Var a);

  // --- nonlinearities -------------------------------------------------------
  Var gelu(Var a);     // exact erf form
  Var sigmoid(Var a);
  Var relu(Var a);     // hinge max(0, x)
  Var log(Var a);

  // --- reductions / rows ----------------------------------------------------
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var mean_rows(Var a);  // (n x k) -> (1 x k)
  Var entry(Var a, int i, int j);
  Var stack_scalars(const std::vector<Var>& scalars);  // k x 1
  Var div_by_scalar(Var a, Var s);                     // s is 1x1

  // row softmax; additive_mask (same shape, entries 0 or -inf) applied first.
  // Every row must keep at least one unmasked entry.
  Var softmax_rows(Var a, const Mat* additive_mask = nullptr);
  Var logsumexp_row(Var a);  // (1 x k) -> 1x1, numerically stable
  Var layer_norm_rows(Var a, double eps = 1e-5);
  // x / max(||x||_2, eps) per row; maps the zero row to itself
  Var l2_normalize_rows(Var a, double eps = 1e-8);

  // cosine(a_i, b_j) for all pairs -> (p x q). Rows with norm < guard get
  // similarity 0 everywhere; 1 on the diagonal when self_pairs is set (a and
  // b are the same sequence).
  Var cosine_pairs(Var a, Var b, bool self_pairs = false, double guard = 1e-12);

  // mean of the k largest entries of column `col`, restricted to the first
  // valid_rows rows. Ties break toward the lower row index.
  Var topk_mean_col(Var a, int col, int k, int valid_rows);

  // binary cross-entropy of probability p (1x1) against y in {0,1}
  Var bce(Var p, int y, double floor = 1e-12);

  // --- execution -------------------------------------------------------------
  const Mat& value(Var v) const;
  double scalar_value(Var v) const;
  const Mat& grad(Var v) const;
  // reverse sweep from a 1x1 loss; accumulates into Parameter::grad
  void backward(Var loss);
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&)> back;  // pulls from grad, pushes to parents
  };

  // deque: push_back never invalidates references held by ops mid-build
  std::deque<Node> nodes_;

  Node& node(Var v);
  const Node& node(Var v) const;
  Var push(Mat val, bool needs_grad, std::function<void(Tape&)> back);
  void accumulate(int id, const Mat& g);
  void check_same_tape(Var a) const;

  friend struct Var;
};

// Decoupled weight decay update. Step order follows store insertion order,
// so trajectories are a pure function of (parameters, gradients, config).
class AdamW {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  explicit AdamW(Config cfg) : cfg_(cfg) {}
  void step(ParameterStore& params);
  const Config& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  struct Moments {
    Mat m, v;
  };
  Config cfg_;
  std::map<std::string, Moments> moments_;
  long t_ = 0;
};

}  // namespace wsvad::ad
