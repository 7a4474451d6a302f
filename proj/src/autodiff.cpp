#include "wsvad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "wsvad/error.hpp"

namespace wsvad::ad {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}
}  // namespace

// --- ParameterStore ---------------------------------------------------------

Parameter& ParameterStore::add(const std::string& name, Mat init, bool trainable) {
  if (index_.count(name)) throw Error(Errc::invalid_config, "duplicate parameter: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(init);
  p->trainable = trainable;
  p->zero_grad();
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(Errc::invalid_config, "unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(Errc::invalid_config, "unknown parameter: " + name);
  return *params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// --- Tape plumbing -----------------------------------------------------------

Tape::Node& Tape::node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
const Tape::Node& Tape::node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

void Tape::check_same_tape(Var a) const {
  if (a.tape != this || a.id < 0 || a.id >= static_cast<int>(nodes_.size()))
    throw Error(Errc::invalid_config, "Var does not belong to this tape");
}

Var Tape::push(Mat val, bool needs_grad, std::function<void(Tape&)> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  n.back = needs_grad ? std::move(back) : nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

const Mat& Tape::value(Var v) const {
  check_same_tape(v);
  return node(v).val;
}

double Tape::scalar_value(Var v) const {
  const Mat& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw Error(Errc::shape_mismatch, "expected 1x1 value");
  return m(0, 0);
}

const Mat& Tape::grad(Var v) const {
  check_same_tape(v);
  return node(v).grad;
}

void Tape::backward(Var loss) {
  check_same_tape(loss);
  Node& l = node(loss);
  if (l.val.rows() != 1 || l.val.cols() != 1)
    throw Error(Errc::shape_mismatch, "backward expects a 1x1 loss");
  accumulate(loss.id, Mat::Ones(1, 1));
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this);
    if (n.param) n.param->grad += n.grad;
  }
}

// --- leaves -------------------------------------------------------------------

Var Tape::constant(Mat v) { return push(std::move(v), false, nullptr); }

Var Tape::scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::leaf(Parameter& p) {
  Var v = push(p.value, p.trainable, nullptr);
  node(v).param = p.trainable ? &p : nullptr;
  return v;
}

// --- elementwise / structural ---------------------------------------------------

Var Tape::add(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat &va = node(a).val, &vb = node(b).val;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw Error(Errc::shape_mismatch, "add: shape mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(va + vb, ng, nullptr);
  if (ng) {
    int oa = a.id, ob = b.id, oo = out.id;
    node(out).back = [oa, ob, oo](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      t.accumulate(oa, g);
      t.accumulate(ob, g);
    };
  }
  return out;
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat &va = node(a).val, &vb = node(b).val;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw Error(Errc::shape_mismatch, "sub: shape mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(va - vb, ng, nullptr);
  if (ng) {
    int oa = a.id, ob = b.id, oo = out.id;
    node(out).back = [oa, ob, oo](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      t.accumulate(oa, g);
      t.accumulate(ob, Mat(-g));
    };
  }
  return out;
}

Var Tape::scale(Var a, double s) {
  check_same_tape(a);
  bool ng = node(a).needs_grad;
  Var out = push(node(a).val * s, ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo, s](Tape& t) { t.accumulate(oa, Mat(t.nodes_[oo].grad * s)); };
  }
  return out;
}

Var Tape::add_const(Var a, double c) {
  check_same_tape(a);
  bool ng = node(a).needs_grad;
  Var out = push(node(a).val.array() + c, ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) { t.accumulate(oa, t.nodes_[oo].grad); };
  }
  return out;
}

Var Tape::cwise_mul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat &va = node(a).val, &vb = node(b).val;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw Error(Errc::shape_mismatch, "cwise_mul: shape mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(va.cwiseProduct(vb), ng, nullptr);
  if (ng) {
    int oa = a.id, ob = b.id, oo = out.id;
    node(out).back = [oa, ob, oo](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      t.accumulate(oa, g.cwiseProduct(t.nodes_[ob].val));
      t.accumulate(ob, g.cwiseProduct(t.nodes_[oa].val));
    };
  }
  return out;
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat &va = node(a).val, &vb = node(b).val;
  if (va.cols() != vb.rows()) throw Error(Errc::shape_mismatch, "matmul: inner dims differ");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(va * vb, ng, nullptr);
  if (ng) {
    int oa = a.id, ob = b.id, oo = out.id;
    node(out).back = [oa, ob, oo](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      t.accumulate(oa, Mat(g * t.nodes_[ob].val.transpose()));
      t.accumulate(ob, Mat(t.nodes_[oa].val.transpose() * g));
    };
  }
  return out;
}

Var Tape::transpose(Var a) {
  check_same_tape(a);
  bool ng = node(a).needs_grad;
  Var out = push(node(a).val.transpose(), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) {
      t.accumulate(oa, Mat(t.nodes_[oo].grad.transpose()));
    };
  }
  return out;
}

Var Tape::hconcat(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat &va = node(a).val, &vb = node(b).val;
  if (va.rows() != vb.rows()) throw Error(Errc::shape_mismatch, "hconcat: row counts differ");
  Mat v(va.rows(), va.cols() + vb.cols());
  v << va, vb;
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, ob = b.id, oo = out.id;
    const int ca = static_cast<int>(va.cols()), cb = static_cast<int>(vb.cols());
    node(out).back = [oa, ob, oo, ca, cb](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      t.accumulate(oa, Mat(g.leftCols(ca)));
      t.accumulate(ob, Mat(g.rightCols(cb)));
    };
  }
  return out;
}

Var Tape::vconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(Errc::shape_mismatch, "vconcat: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = node(parts.front()).val.cols();
  bool ng = false;
  for (Var p : parts) {
    check_same_tape(p);
    if (node(p).val.cols() != cols) throw Error(Errc::shape_mismatch, "vconcat: col counts differ");
    rows += node(p).val.rows();
    ng = ng || node(p).needs_grad;
  }
  Mat v(rows, cols);
  Eigen::Index r = 0;
  std::vector<std::pair<int, int>> layout;  // (id, rows)
  for (Var p : parts) {
    const Mat& vp = node(p).val;
    v.middleRows(r, vp.rows()) = vp;
    layout.emplace_back(p.id, static_cast<int>(vp.rows()));
    r += vp.rows();
  }
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oo = out.id;
    node(out).back = [layout, oo](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      int r0 = 0;
      for (auto [id, nr] : layout) {
        t.accumulate(id, Mat(g.middleRows(r0, nr)));
        r0 += nr;
      }
    };
  }
  return out;
}

Var Tape::slice_rows(Var a, int start, int count) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  if (start < 0 || count < 0 || start + count > va.rows())
    throw Error(Errc::shape_mismatch, "slice_rows: out of range");
  bool ng = node(a).needs_grad;
  Var out = push(va.middleRows(start, count), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    const int rows = static_cast<int>(va.rows()), cols = static_cast<int>(va.cols());
    node(out).back = [oa, oo, start, count, rows, cols](Tape& t) {
      Mat g = Mat::Zero(rows, cols);
      g.middleRows(start, count) = t.nodes_[oo].grad;
      t.accumulate(oa, g);
    };
  }
  return out;
}

Var Tape::slice_cols(Var a, int start, int count) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  if (start < 0 || count < 0 || start + count > va.cols())
    throw Error(Errc::shape_mismatch, "slice_cols: out of range");
  bool ng = node(a).needs_grad;
  Var out = push(va.middleCols(start, count), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    const int rows = static_cast<int>(va.rows()), cols = static_cast<int>(va.cols());
    node(out).back = [oa, oo, start, count, rows, cols](Tape& t) {
      Mat g = Mat::Zero(rows, cols);
      g.middleCols(start, count) = t.nodes_[oo].grad;
      t.accumulate(oa, g);
    };
  }
  return out;
}

Var Tape::scatter_rows(Var a, int n, int row_offset) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  if (row_offset < 0 || row_offset + va.rows() > n)
    throw Error(Errc::shape_mismatch, "scatter_rows: out of range");
  Mat v = Mat::Zero(n, va.cols());
  v.middleRows(row_offset, va.rows()) = va;
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    const int k = static_cast<int>(va.rows());
    node(out).back = [oa, oo, row_offset, k](Tape& t) {
      t.accumulate(oa, Mat(t.nodes_[oo].grad.middleRows(row_offset, k)));
    };
  }
  return out;
}

Var Tape::row_scale(Var a, const Vec& weights) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  if (weights.size() != va.rows()) throw Error(Errc::shape_mismatch, "row_scale: weight count");
  bool ng = node(a).needs_grad;
  Var out = push(weights.asDiagonal() * va, ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    Vec w = weights;
    node(out).back = [oa, oo, w](Tape& t) {
      t.accumulate(oa, Mat(w.asDiagonal() * t.nodes_[oo].grad));
    };
  }
  return out;
}

Var Tape::add_row_broadcast(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat &va = node(a).val, &vb = node(b).val;
  if (vb.rows() != 1 || vb.cols() != va.cols())
    throw Error(Errc::shape_mismatch, "add_row_broadcast: b must be 1 x cols(a)");
  Mat v = va.rowwise() + vb.row(0);
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, ob = b.id, oo = out.id;
    node(out).back = [oa, ob, oo](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      t.accumulate(oa, g);
      t.accumulate(ob, Mat(g.colwise().sum()));
    };
  }
  return out;
}

Var Tape::stop_gradient(Var a) {
  check_same_tape(a);
  return push(node(a).val, false, nullptr);
}

// --- nonlinearities ----------------------------------------------------------

Var Tape::gelu(Var a) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  Mat v = va.unaryExpr([](double x) { return gelu_scalar(x); });
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) {
      const Mat d = t.nodes_[oa].val.unaryExpr([](double x) { return gelu_grad_scalar(x); });
      t.accumulate(oa, t.nodes_[oo].grad.cwiseProduct(d));
    };
  }
  return out;
}

Var Tape::sigmoid(Var a) {
  check_same_tape(a);
  Mat v = node(a).val.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) {
      const Mat& y = t.nodes_[oo].val;
      const Mat d = y.cwiseProduct(Mat(Mat::Ones(y.rows(), y.cols()) - y));
      t.accumulate(oa, t.nodes_[oo].grad.cwiseProduct(d));
    };
  }
  return out;
}

Var Tape::relu(Var a) {
  check_same_tape(a);
  Mat v = node(a).val.cwiseMax(0.0);
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) {
      const Mat d = t.nodes_[oa].val.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
      t.accumulate(oa, t.nodes_[oo].grad.cwiseProduct(d));
    };
  }
  return out;
}

Var Tape::log(Var a) {
  check_same_tape(a);
  Mat v = node(a).val.array().log();
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) {
      t.accumulate(oa, Mat(t.nodes_[oo].grad.cwiseQuotient(t.nodes_[oa].val)));
    };
  }
  return out;
}

// --- reductions -----------------------------------------------------------------

Var Tape::sum_all(Var a) {
  check_same_tape(a);
  Mat v(1, 1);
  v(0, 0) = node(a).val.sum();
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) {
      const Mat& va = t.nodes_[oa].val;
      t.accumulate(oa, Mat(Mat::Constant(va.rows(), va.cols(), t.nodes_[oo].grad(0, 0))));
    };
  }
  return out;
}

Var Tape::mean_all(Var a) {
  check_same_tape(a);
  return scale(sum_all(a), 1.0 / static_cast<double>(node(a).val.size()));
}

Var Tape::mean_rows(Var a) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  Mat v = va.colwise().mean();
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    const double inv_n = 1.0 / static_cast<double>(va.rows());
    const int rows = static_cast<int>(va.rows());
    node(out).back = [oa, oo, inv_n, rows](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;  // 1 x k
      Mat ga(rows, g.cols());
      ga.rowwise() = g.row(0) * inv_n;
      t.accumulate(oa, ga);
    };
  }
  return out;
}

Var Tape::entry(Var a, int i, int j) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  if (i < 0 || j < 0 || i >= va.rows() || j >= va.cols())
    throw Error(Errc::shape_mismatch, "entry: out of range");
  Mat v(1, 1);
  v(0, 0) = va(i, j);
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    const int rows = static_cast<int>(va.rows()), cols = static_cast<int>(va.cols());
    node(out).back = [oa, oo, i, j, rows, cols](Tape& t) {
      Mat g = Mat::Zero(rows, cols);
      g(i, j) = t.nodes_[oo].grad(0, 0);
      t.accumulate(oa, g);
    };
  }
  return out;
}

Var Tape::stack_scalars(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw Error(Errc::shape_mismatch, "stack_scalars: empty");
  Mat v(static_cast<Eigen::Index>(scalars.size()), 1);
  bool ng = false;
  std::vector<int> ids;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    check_same_tape(scalars[i]);
    const Mat& s = node(scalars[i]).val;
    if (s.rows() != 1 || s.cols() != 1) throw Error(Errc::shape_mismatch, "stack_scalars: not 1x1");
    v(static_cast<Eigen::Index>(i), 0) = s(0, 0);
    ng = ng || node(scalars[i]).needs_grad;
    ids.push_back(scalars[i].id);
  }
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oo = out.id;
    node(out).back = [ids, oo](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Mat gi(1, 1);
        gi(0, 0) = g(static_cast<Eigen::Index>(i), 0);
        t.accumulate(ids[i], gi);
      }
    };
  }
  return out;
}

Var Tape::div_by_scalar(Var a, Var s) {
  check_same_tape(a);
  check_same_tape(s);
  const Mat& vs = node(s).val;
  if (vs.rows() != 1 || vs.cols() != 1) throw Error(Errc::shape_mismatch, "div_by_scalar: s not 1x1");
  const double sv = vs(0, 0);
  bool ng = node(a).needs_grad || node(s).needs_grad;
  Var out = push(node(a).val / sv, ng, nullptr);
  if (ng) {
    int oa = a.id, os = s.id, oo = out.id;
    node(out).back = [oa, os, oo, sv](Tape& t) {
      const Mat& g = t.nodes_[oo].grad;
      t.accumulate(oa, Mat(g / sv));
      Mat gs(1, 1);
      gs(0, 0) = -(g.cwiseProduct(t.nodes_[oo].val)).sum() / sv;
      t.accumulate(os, gs);
    };
  }
  return out;
}

// --- softmax family --------------------------------------------------------------

Var Tape::softmax_rows(Var a, const Mat* additive_mask) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  Mat z = va;
  if (additive_mask) {
    if (additive_mask->rows() != va.rows() || additive_mask->cols() != va.cols())
      throw Error(Errc::shape_mismatch, "softmax_rows: mask shape");
    z += *additive_mask;
  }
  Mat y(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    if (mx == -kInf)
      throw Error(Errc::invalid_config, "softmax_rows: fully masked row");
    Eigen::ArrayXd e = (z.row(i).array() - mx).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  bool ng = node(a).needs_grad;
  Var out = push(std::move(y), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) {
      const Mat& yv = t.nodes_[oo].val;
      const Mat& g = t.nodes_[oo].grad;
      Mat ga(yv.rows(), yv.cols());
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        const double dot = g.row(i).dot(yv.row(i));
        ga.row(i) = yv.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
      }
      t.accumulate(oa, ga);
    };
  }
  return out;
}

Var Tape::logsumexp_row(Var a) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  if (va.rows() != 1) throw Error(Errc::shape_mismatch, "logsumexp_row: expects 1 x k");
  const double mx = va.maxCoeff();
  Mat v(1, 1);
  v(0, 0) = mx + std::log((va.array() - mx).exp().sum());
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    node(out).back = [oa, oo](Tape& t) {
      const Mat& va2 = t.nodes_[oa].val;
      const double m2 = va2.maxCoeff();
      Eigen::ArrayXXd e = (va2.array() - m2).exp();
      Mat soft = (e / e.sum()).matrix();
      t.accumulate(oa, Mat(soft * t.nodes_[oo].grad(0, 0)));
    };
  }
  return out;
}

Var Tape::layer_norm_rows(Var a, double eps) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  const Eigen::Index k = va.cols();
  Mat y(va.rows(), k);
  Vec inv_std(va.rows());
  for (Eigen::Index i = 0; i < va.rows(); ++i) {
    const double mu = va.row(i).mean();
    const double var = (va.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    y.row(i) = ((va.row(i).array() - mu) * inv_std(i)).matrix();
  }
  bool ng = node(a).needs_grad;
  Var out = push(std::move(y), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    Vec is = inv_std;
    node(out).back = [oa, oo, is, k](Tape& t) {
      const Mat& yv = t.nodes_[oo].val;
      const Mat& g = t.nodes_[oo].grad;
      Mat ga(yv.rows(), k);
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        const double gm = g.row(i).mean();
        const double gym = g.row(i).cwiseProduct(yv.row(i)).mean();
        ga.row(i) = is(i) * (g.row(i).array() - gm - yv.row(i).array() * gym).matrix();
      }
      t.accumulate(oa, ga);
    };
  }
  return out;
}

Var Tape::l2_normalize_rows(Var a, double eps) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  Mat y(va.rows(), va.cols());
  Vec norms(va.rows());
  for (Eigen::Index i = 0; i < va.rows(); ++i) {
    norms(i) = va.row(i).norm();
    y.row(i) = va.row(i) / std::max(norms(i), eps);
  }
  bool ng = node(a).needs_grad;
  Var out = push(std::move(y), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    Vec nv = norms;
    node(out).back = [oa, oo, nv, eps](Tape& t) {
      const Mat& yv = t.nodes_[oo].val;
      const Mat& g = t.nodes_[oo].grad;
      Mat ga(yv.rows(), yv.cols());
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        if (nv(i) > eps) {
          const double dot = g.row(i).dot(yv.row(i));
          ga.row(i) = (g.row(i) - dot * yv.row(i)) / nv(i);
        } else {
          ga.row(i) = g.row(i) / eps;
        }
      }
      t.accumulate(oa, ga);
    };
  }
  return out;
}

Var Tape::cosine_pairs(Var a, Var b, bool self_pairs, double guard) {
  check_same_tape(a);
  check_same_tape(b);
  const Mat &va = node(a).val, &vb = node(b).val;
  if (va.cols() != vb.cols()) throw Error(Errc::shape_mismatch, "cosine_pairs: dims differ");
  if (self_pairs && (va.rows() != vb.rows()))
    throw Error(Errc::shape_mismatch, "cosine_pairs: self_pairs needs square result");
  const Eigen::Index p = va.rows(), q = vb.rows();
  Vec na(p), nb(q);
  for (Eigen::Index i = 0; i < p; ++i) na(i) = va.row(i).norm();
  for (Eigen::Index j = 0; j < q; ++j) nb(j) = vb.row(j).norm();
  Mat y(p, q);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < q; ++j) {
      if (na(i) < guard || nb(j) < guard)
        y(i, j) = (self_pairs && i == j) ? 1.0 : 0.0;
      else
        y(i, j) = va.row(i).dot(vb.row(j)) / (na(i) * nb(j));
    }
  }
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(std::move(y), ng, nullptr);
  if (ng) {
    int oa = a.id, ob = b.id, oo = out.id;
    Vec nav = na, nbv = nb;
    node(out).back = [oa, ob, oo, nav, nbv, guard](Tape& t) {
      const Mat &av = t.nodes_[oa].val, &bv = t.nodes_[ob].val;
      const Mat &yv = t.nodes_[oo].val, &g = t.nodes_[oo].grad;
      Mat ga = Mat::Zero(av.rows(), av.cols());
      Mat gb = Mat::Zero(bv.rows(), bv.cols());
      for (Eigen::Index i = 0; i < av.rows(); ++i) {
        if (nav(i) < guard) continue;
        for (Eigen::Index j = 0; j < bv.rows(); ++j) {
          if (nbv(j) < guard) continue;
          const double gij = g(i, j);
          if (gij == 0.0) continue;
          const double c = yv(i, j);
          ga.row(i) += gij * (bv.row(j) / (nav(i) * nbv(j)) - c * av.row(i) / (nav(i) * nav(i)));
          gb.row(j) += gij * (av.row(i) / (nav(i) * nbv(j)) - c * bv.row(j) / (nbv(j) * nbv(j)));
        }
      }
      // oa may equal ob (self similarity); two accumulate calls handle it
      t.accumulate(oa, ga);
      t.accumulate(ob, gb);
    };
  }
  return out;
}

Var Tape::topk_mean_col(Var a, int col, int k, int valid_rows) {
  check_same_tape(a);
  const Mat& va = node(a).val;
  if (col < 0 || col >= va.cols()) throw Error(Errc::shape_mismatch, "topk_mean_col: bad column");
  if (valid_rows < 1 || valid_rows > va.rows())
    throw Error(Errc::shape_mismatch, "topk_mean_col: bad valid_rows");
  const int kk = std::min(k, valid_rows);
  std::vector<int> idx(static_cast<std::size_t>(valid_rows));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int x, int y) { return va(x, col) > va(y, col); });
  idx.resize(static_cast<std::size_t>(kk));
  double s = 0.0;
  for (int i : idx) s += va(i, col);
  Mat v(1, 1);
  v(0, 0) = s / kk;
  bool ng = node(a).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int oa = a.id, oo = out.id;
    const int rows = static_cast<int>(va.rows()), cols = static_cast<int>(va.cols());
    node(out).back = [oa, oo, idx, kk, col, rows, cols](Tape& t) {
      Mat g = Mat::Zero(rows, cols);
      const double gv = t.nodes_[oo].grad(0, 0) / kk;
      for (int i : idx) g(i, col) = gv;
      t.accumulate(oa, g);
    };
  }
  return out;
}

Var Tape::bce(Var p, int y, double floor) {
  check_same_tape(p);
  const Mat& vp = node(p).val;
  if (vp.rows() != 1 || vp.cols() != 1) throw Error(Errc::shape_mismatch, "bce: p not 1x1");
  const double pv = vp(0, 0);
  const double target = y ? std::max(pv, floor) : std::max(1.0 - pv, floor);
  Mat v(1, 1);
  v(0, 0) = -std::log(target);
  bool ng = node(p).needs_grad;
  Var out = push(std::move(v), ng, nullptr);
  if (ng) {
    int op = p.id, oo = out.id;
    node(out).back = [op, oo, y, floor](Tape& t) {
      const double pv2 = t.nodes_[op].val(0, 0);
      double d = 0.0;
      if (y) {
        if (pv2 > floor) d = -1.0 / pv2;
      } else {
        if (1.0 - pv2 > floor) d = 1.0 / (1.0 - pv2);
      }
      Mat g(1, 1);
      g(0, 0) = d * t.nodes_[oo].grad(0, 0);
      t.accumulate(op, g);
    };
  }
  return out;
}

// --- AdamW --------------------------------------------------------------------

void AdamW::step(ParameterStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.trainable) continue;
    auto& mom = moments_[p.name];
    if (mom.m.size() == 0) {
      mom.m = Mat::Zero(p.value.rows(), p.value.cols());
      mom.v = Mat::Zero(p.value.rows(), p.value.cols());
    }
    mom.m = cfg_.beta1 * mom.m + (1.0 - cfg_.beta1) * p.grad;
    mom.v = cfg_.beta2 * mom.v + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    const Mat m_hat = mom.m / bc1;
    const Mat v_hat = mom.v / bc2;
    p.value -= cfg_.lr * (m_hat.array() / (v_hat.array().sqrt() + cfg_.eps)).matrix();
    if (cfg_.weight_decay > 0.0) p.value -= cfg_.lr * cfg_.weight_decay * p.value;
  }
}

}  // namespace wsvad::ad
