#include "panofocus/autodiff.hpp"

#include <cmath>
#include <utility>

#include "panofocus/errors.hpp"

namespace panofocus::autodiff {

namespace {

double softplus(double z) {
  // log(1 + e^z) without overflow for large |z|.
  return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Tape::NodeId Tape::push(Mat value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  if (needs_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.back = std::move(back);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::accumulate(NodeId id, const Mat& g) {
  if (nodes_[id].needs_grad) nodes_[id].grad += g;
}

Tape::NodeId Tape::leaf(Mat value) { return push(std::move(value), true); }

Tape::NodeId Tape::constant(Mat value) { return push(std::move(value), false); }

Tape::NodeId Tape::constant_scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(m);
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  Mat v = nodes_[a].value + nodes_[b].value;
  NodeId out = push(std::move(v), tracked(a) || tracked(b));
  nodes_[out].back = [this, a, b, out] {
    accumulate(a, nodes_[out].grad);
    accumulate(b, nodes_[out].grad);
  };
  return out;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  Mat v = nodes_[a].value - nodes_[b].value;
  NodeId out = push(std::move(v), tracked(a) || tracked(b));
  nodes_[out].back = [this, a, b, out] {
    accumulate(a, nodes_[out].grad);
    accumulate(b, -nodes_[out].grad);
  };
  return out;
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  Mat v = nodes_[a].value * c;
  NodeId out = push(std::move(v), tracked(a));
  nodes_[out].back = [this, a, c, out] { accumulate(a, nodes_[out].grad * c); };
  return out;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  if (nodes_[a].value.cols() != nodes_[b].value.rows())
    throw InternalError("matmul shape mismatch");
  Mat v = nodes_[a].value * nodes_[b].value;
  NodeId out = push(std::move(v), tracked(a) || tracked(b));
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (tracked(a)) accumulate(a, g * nodes_[b].value.transpose());
    if (tracked(b)) accumulate(b, nodes_[a].value.transpose() * g);
  };
  return out;
}

Tape::NodeId Tape::transpose(NodeId a) {
  Mat v = nodes_[a].value.transpose();
  NodeId out = push(std::move(v), tracked(a));
  nodes_[out].back = [this, a, out] { accumulate(a, nodes_[out].grad.transpose()); };
  return out;
}

Tape::NodeId Tape::hadamard(NodeId a, NodeId b) {
  Mat v = nodes_[a].value.cwiseProduct(nodes_[b].value);
  NodeId out = push(std::move(v), tracked(a) || tracked(b));
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (tracked(a)) accumulate(a, g.cwiseProduct(nodes_[b].value));
    if (tracked(b)) accumulate(b, g.cwiseProduct(nodes_[a].value));
  };
  return out;
}

Tape::NodeId Tape::softmax_rows(NodeId a) {
  const Mat& x = nodes_[a].value;
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp();
    y.row(i) = e / e.sum();
  }
  NodeId out = push(std::move(y), tracked(a));
  nodes_[out].back = [this, a, out] {
    const Mat& g = nodes_[out].grad;
    const Mat& y2 = nodes_[out].value;
    Mat gx(y2.rows(), y2.cols());
    for (Eigen::Index i = 0; i < y2.rows(); ++i) {
      const double dot = g.row(i).dot(y2.row(i));
      gx.row(i) = (g.row(i).array() - dot) * y2.row(i).array();
    }
    accumulate(a, gx);
  };
  return out;
}

Tape::NodeId Tape::gelu(NodeId a) {
  const Mat& x = nodes_[a].value;
  Mat y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
  NodeId out = push(std::move(y), tracked(a));
  nodes_[out].back = [this, a, out] {
    const Mat& x2 = nodes_[a].value;
    Mat d = x2.unaryExpr([](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
      return cdf + v * pdf;
    });
    accumulate(a, nodes_[out].grad.cwiseProduct(d));
  };
  return out;
}

Tape::NodeId Tape::add_row_broadcast(NodeId a, NodeId row) {
  if (nodes_[row].value.rows() != 1 || nodes_[row].value.cols() != nodes_[a].value.cols())
    throw InternalError("add_row_broadcast shape mismatch");
  Mat v = nodes_[a].value.rowwise() + nodes_[row].value.row(0);
  NodeId out = push(std::move(v), tracked(a) || tracked(row));
  nodes_[out].back = [this, a, row, out] {
    const Mat& g = nodes_[out].grad;
    accumulate(a, g);
    if (tracked(row)) accumulate(row, g.colwise().sum());
  };
  return out;
}

Tape::NodeId Tape::vstack(const std::vector<NodeId>& parts) {
  Eigen::Index total = 0;
  const Eigen::Index cols = nodes_[parts.front()].value.cols();
  bool needs = false;
  for (NodeId p : parts) {
    total += nodes_[p].value.rows();
    needs = needs || tracked(p);
  }
  Mat v(total, cols);
  Eigen::Index r = 0;
  for (NodeId p : parts) {
    v.middleRows(r, nodes_[p].value.rows()) = nodes_[p].value;
    r += nodes_[p].value.rows();
  }
  NodeId out = push(std::move(v), needs);
  std::vector<NodeId> ps = parts;
  nodes_[out].back = [this, ps, out] {
    Eigen::Index r2 = 0;
    for (NodeId p : ps) {
      accumulate(p, nodes_[out].grad.middleRows(r2, nodes_[p].value.rows()));
      r2 += nodes_[p].value.rows();
    }
  };
  return out;
}

Tape::NodeId Tape::hstack(const std::vector<NodeId>& parts) {
  Eigen::Index total = 0;
  const Eigen::Index rows = nodes_[parts.front()].value.rows();
  bool needs = false;
  for (NodeId p : parts) {
    total += nodes_[p].value.cols();
    needs = needs || tracked(p);
  }
  Mat v(rows, total);
  Eigen::Index c = 0;
  for (NodeId p : parts) {
    v.middleCols(c, nodes_[p].value.cols()) = nodes_[p].value;
    c += nodes_[p].value.cols();
  }
  NodeId out = push(std::move(v), needs);
  std::vector<NodeId> ps = parts;
  nodes_[out].back = [this, ps, out] {
    Eigen::Index c2 = 0;
    for (NodeId p : ps) {
      accumulate(p, nodes_[out].grad.middleCols(c2, nodes_[p].value.cols()));
      c2 += nodes_[p].value.cols();
    }
  };
  return out;
}

Tape::NodeId Tape::rows(NodeId a, int start, int count) {
  Mat v = nodes_[a].value.middleRows(start, count);
  NodeId out = push(std::move(v), tracked(a));
  nodes_[out].back = [this, a, start, count, out] {
    if (!tracked(a)) return;
    Mat g = Mat::Zero(nodes_[a].value.rows(), nodes_[a].value.cols());
    g.middleRows(start, count) = nodes_[out].grad;
    accumulate(a, g);
  };
  return out;
}

Tape::NodeId Tape::cols(NodeId a, int start, int count) {
  Mat v = nodes_[a].value.middleCols(start, count);
  NodeId out = push(std::move(v), tracked(a));
  nodes_[out].back = [this, a, start, count, out] {
    if (!tracked(a)) return;
    Mat g = Mat::Zero(nodes_[a].value.rows(), nodes_[a].value.cols());
    g.middleCols(start, count) = nodes_[out].grad;
    accumulate(a, g);
  };
  return out;
}

Tape::NodeId Tape::gather_rows(NodeId a, std::vector<int> indices) {
  Mat v(static_cast<Eigen::Index>(indices.size()), nodes_[a].value.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) v.row(i) = nodes_[a].value.row(indices[i]);
  NodeId out = push(std::move(v), tracked(a));
  nodes_[out].back = [this, a, idx = std::move(indices), out] {
    if (!tracked(a)) return;
    Mat g = Mat::Zero(nodes_[a].value.rows(), nodes_[a].value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += nodes_[out].grad.row(i);
    accumulate(a, g);
  };
  return out;
}

Tape::NodeId Tape::mean_rows(NodeId a) {
  const Eigen::Index m = nodes_[a].value.rows();
  Mat v = nodes_[a].value.colwise().mean();
  NodeId out = push(std::move(v), tracked(a));
  nodes_[out].back = [this, a, m, out] {
    accumulate(a, nodes_[out].grad.replicate(m, 1) / static_cast<double>(m));
  };
  return out;
}

Tape::NodeId Tape::mean_all(NodeId a) {
  const double n = static_cast<double>(nodes_[a].value.size());
  Mat v(1, 1);
  v(0, 0) = nodes_[a].value.sum() / n;
  NodeId out = push(std::move(v), tracked(a));
  nodes_[out].back = [this, a, n, out] {
    accumulate(a, Mat::Constant(nodes_[a].value.rows(), nodes_[a].value.cols(),
                                nodes_[out].grad(0, 0) / n));
  };
  return out;
}

Tape::NodeId Tape::sum_all(NodeId a) {
  Mat v(1, 1);
  v(0, 0) = nodes_[a].value.sum();
  NodeId out = push(std::move(v), tracked(a));
  nodes_[out].back = [this, a, out] {
    accumulate(a, Mat::Constant(nodes_[a].value.rows(), nodes_[a].value.cols(),
                                nodes_[out].grad(0, 0)));
  };
  return out;
}

Tape::NodeId Tape::rowwise_div_guarded(NodeId num, NodeId den, double guard_eps,
                                       int* guard_count) {
  const Mat& n = nodes_[num].value;
  const Mat& d = nodes_[den].value;
  if (d.cols() != 1 || d.rows() != n.rows())
    throw InternalError("rowwise_div_guarded expects a column of per-row denominators");
  Mat v(n.rows(), n.cols());
  std::vector<bool> guarded(static_cast<std::size_t>(n.rows()), false);
  int guards = 0;
  for (Eigen::Index j = 0; j < n.rows(); ++j) {
    if (d(j, 0) < guard_eps) {
      v.row(j).setZero();
      guarded[static_cast<std::size_t>(j)] = true;
      ++guards;
    } else {
      v.row(j) = n.row(j) / d(j, 0);
    }
  }
  if (guard_count) *guard_count += guards;
  NodeId out = push(std::move(v), tracked(num) || tracked(den));
  nodes_[out].back = [this, num, den, guarded, out] {
    const Mat& g = nodes_[out].grad;
    const Mat& n2 = nodes_[num].value;
    const Mat& d2 = nodes_[den].value;
    Mat gn = Mat::Zero(n2.rows(), n2.cols());
    Mat gd = Mat::Zero(d2.rows(), 1);
    for (Eigen::Index j = 0; j < n2.rows(); ++j) {
      if (guarded[static_cast<std::size_t>(j)]) continue;
      gn.row(j) = g.row(j) / d2(j, 0);
      gd(j, 0) = -g.row(j).dot(n2.row(j)) / (d2(j, 0) * d2(j, 0));
    }
    accumulate(num, gn);
    accumulate(den, gd);
  };
  return out;
}

Tape::NodeId Tape::bce_with_logits_mean(NodeId logits, Mat targets) {
  const Mat& z = nodes_[logits].value;
  if (z.rows() != targets.rows() || z.cols() != targets.cols())
    throw ValidationError("BCE logits and targets have mismatched shapes");
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      total += targets(i, j) * softplus(-z(i, j)) + (1.0 - targets(i, j)) * softplus(z(i, j));
  Mat v(1, 1);
  v(0, 0) = total / n;
  NodeId out = push(std::move(v), tracked(logits));
  nodes_[out].back = [this, logits, t = std::move(targets), n, out] {
    const Mat& z2 = nodes_[logits].value;
    Mat g(z2.rows(), z2.cols());
    for (Eigen::Index i = 0; i < z2.rows(); ++i)
      for (Eigen::Index j = 0; j < z2.cols(); ++j) g(i, j) = sigmoid(z2(i, j)) - t(i, j);
    accumulate(logits, g * (nodes_[out].grad(0, 0) / n));
  };
  return out;
}

void Tape::backward(NodeId output) {
  if (nodes_[output].value.rows() != 1 || nodes_[output].value.cols() != 1)
    throw InternalError("backward() requires a scalar output node");
  if (!nodes_[output].needs_grad) return;
  nodes_[output].grad(0, 0) = 1.0;
  for (NodeId id = output; id >= 0; --id) {
    if (nodes_[id].needs_grad && nodes_[id].back) nodes_[id].back();
  }
}

}  // namespace panofocus::autodiff
