#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace transit::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode differentiation tape. Nodes are matrix-valued and created in
// topological order; backward() walks them in reverse. Gradients accumulate, so a
// node used twice receives the sum of both paths. Tapes are single-use per forward
// pass and must outlive the Vars handed out.
class Tape {
 public:
  // Leaf that never receives a gradient.
  Var constant(Mat value);
  // Leaf tracked for gradients (parameters, or inputs under test).
  Var param(Mat value);

  const Mat& val(Var v) const { return nodes_[v.id].value; }
  // Zero matrix when no gradient reached the node.
  Mat grad(Var v) const;

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  // Adds a 1 x c row vector to every row of a.
  Var add_rowvec(Var a, Var row);
  Var scale(Var a, double s);
  Var cmul(Var a, Var b);  // elementwise
  Var matmul(Var a, Var b);
  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var softmax_rows(Var a);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  // Each row repeated `times` consecutive times: rows R -> R*times.
  Var repeat_rows(Var a, int times);
  // Rows split into consecutive blocks of `group`; each block stacked `times`
  // times: rows R -> R*times. group == R reproduces a plain vertical tile.
  Var tile_rows_grouped(Var a, int group, int times);
  // R x 1 column reshaped row-major into (R/cols) x cols.
  Var rows_to_matrix(Var a, int cols);
  // Block-diagonal product: A is (G*n) x n, B is (G*n) x d; block g of the result
  // is A_g * B_g. Realizes per-graph attention aggregation in a stacked batch.
  Var bmm_grouped(Var a, Var b, int n);
  Var mean_rows(Var a);  // 1 x c column means
  Var gather_rows(Var a, std::vector<int> idx);
  // out(g) = sum of rows[groups[g]]; rows may appear in several groups.
  Var aggregate_rows(Var a, std::vector<std::vector<int>> groups);
  // Per-group log-softmax down a column vector; sizes must sum to the row count.
  Var log_softmax_grouped(Var a, std::vector<int> group_sizes);

  // Seeds d(root)/d(root) = seed and propagates to all tracked leaves.
  void backward(Var root, const Mat& seed);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    bool grad_alive = false;  // grad allocated and possibly nonzero
    std::function<void(Tape&, const Node&)> back;
  };

  std::vector<Node> nodes_;

  Var make(Mat value, bool needs_grad, std::function<void(Tape&, const Node&)> back);
  void bump(int id, const Mat& g);
  friend struct NodeAccess;
};

}  // namespace transit::ad
