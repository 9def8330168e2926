#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

namespace panofocus::autodiff {

using Mat = Eigen::MatrixXd;

// Eager Wengert-list tape over dense matrices. Each op computes its value on
// creation and records a closure that scatters the upstream gradient to its
// parents; backward() walks the list in reverse creation order. This covers
// exactly the operations the encoder and losses need, nothing more.
class Tape {
 public:
  using NodeId = int;

  NodeId leaf(Mat value);      // gradient is tracked and retrievable
  NodeId constant(Mat value);  // no gradient flows through
  NodeId constant_scalar(double v);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId softmax_rows(NodeId a);
  NodeId gelu(NodeId a);
  // a: MxN plus a 1xN row broadcast over all rows of a.
  NodeId add_row_broadcast(NodeId a, NodeId row);
  NodeId vstack(const std::vector<NodeId>& parts);
  NodeId hstack(const std::vector<NodeId>& parts);
  NodeId rows(NodeId a, int start, int count);
  NodeId cols(NodeId a, int start, int count);
  NodeId gather_rows(NodeId a, std::vector<int> indices);
  NodeId mean_rows(NodeId a);  // MxN -> 1xN
  NodeId mean_all(NodeId a);   // MxN -> 1x1
  NodeId sum_all(NodeId a);    // MxN -> 1x1
  // Divides each row j of num by den(j,0); rows with den(j,0) < guard_eps
  // yield a zero row and block gradient flow. guard_count, when non-null,
  // receives the number of guarded rows.
  NodeId rowwise_div_guarded(NodeId num, NodeId den, double guard_eps, int* guard_count = nullptr);
  // Mean binary cross-entropy between logits and fixed 0/1 targets, computed
  // in the numerically stable softplus form. Returns a 1x1 node.
  NodeId bce_with_logits_mean(NodeId logits, Mat targets);

  const Mat& value(NodeId id) const { return nodes_[id].value; }
  const Mat& grad(NodeId id) const { return nodes_[id].grad; }
  double scalar(NodeId id) const { return nodes_[id].value(0, 0); }

  // Seeds d(output)/d(output) = 1 and accumulates gradients into every node
  // that transitively feeds it. The output node must be 1x1.
  void backward(NodeId output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;  // empty for leaves and constants
    bool needs_grad = false;
  };

  NodeId push(Mat value, bool needs_grad, std::function<void()> back = {});
  bool tracked(NodeId id) const { return nodes_[id].needs_grad; }
  void accumulate(NodeId id, const Mat& g);

  std::vector<Node> nodes_;
};

}  // namespace panofocus::autodiff
