#include "transit/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace transit::ad {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument("autodiff: " + what);
}

}  // namespace

Var Tape::make(Mat value, bool needs_grad, std::function<void(Tape&, const Node&)> back) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::bump(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (!n.grad_alive) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad_alive = true;
  }
  n.grad += g;
}

Var Tape::constant(Mat value) { return make(std::move(value), false, nullptr); }

Var Tape::param(Mat value) { return make(std::move(value), true, nullptr); }

Mat Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.grad_alive) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::add(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add: shape mismatch");
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return make(av + bv, ng, [a, b](Tape& t, const Node& self) {
    t.bump(a.id, self.grad);
    t.bump(b.id, self.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "sub: shape mismatch");
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return make(av - bv, ng, [a, b](Tape& t, const Node& self) {
    t.bump(a.id, self.grad);
    t.bump(b.id, -self.grad);
  });
}

Var Tape::add_rowvec(Var a, Var row) {
  const Mat& av = val(a);
  const Mat& rv = val(row);
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_rowvec: need 1 x cols(a)");
  bool ng = nodes_[a.id].needs_grad || nodes_[row.id].needs_grad;
  Mat out = av.rowwise() + rv.row(0);
  return make(std::move(out), ng, [a, row](Tape& t, const Node& self) {
    t.bump(a.id, self.grad);
    t.bump(row.id, self.grad.colwise().sum());
  });
}

Var Tape::scale(Var a, double s) {
  bool ng = nodes_[a.id].needs_grad;
  return make(val(a) * s, ng, [a, s](Tape& t, const Node& self) {
    t.bump(a.id, Mat(self.grad * s));
  });
}

Var Tape::cmul(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "cmul: shape mismatch");
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return make(av.cwiseProduct(bv), ng, [a, b](Tape& t, const Node& self) {
    t.bump(a.id, self.grad.cwiseProduct(t.val(b)));
    t.bump(b.id, self.grad.cwiseProduct(t.val(a)));
  });
}

Var Tape::matmul(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  require(av.cols() == bv.rows(), "matmul: inner dimension mismatch");
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return make(av * bv, ng, [a, b](Tape& t, const Node& self) {
    t.bump(a.id, Mat(self.grad * t.val(b).transpose()));
    t.bump(b.id, Mat(t.val(a).transpose() * self.grad));
  });
}

Var Tape::relu(Var a) {
  bool ng = nodes_[a.id].needs_grad;
  return make(val(a).cwiseMax(0.0), ng, [a](Tape& t, const Node& self) {
    Mat mask = (t.val(a).array() > 0.0).cast<double>();
    t.bump(a.id, self.grad.cwiseProduct(mask));
  });
}

Var Tape::leaky_relu(Var a, double slope) {
  const Mat& av = val(a);
  Mat out = av.array().max(av.array() * slope);
  bool ng = nodes_[a.id].needs_grad;
  return make(std::move(out), ng, [a, slope](Tape& t, const Node& self) {
    Mat mask =
        (t.val(a).array() > 0.0).cast<double>() * (1.0 - slope) + slope;
    t.bump(a.id, self.grad.cwiseProduct(mask));
  });
}

Var Tape::sigmoid(Var a) {
  Mat out = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
  bool ng = nodes_[a.id].needs_grad;
  Var v = make(std::move(out), ng, nullptr);
  nodes_[v.id].back = [a, v](Tape& t, const Node& self) {
    const Mat& y = t.val(v);
    Mat dm = y.array() * (1.0 - y.array());
    t.bump(a.id, self.grad.cwiseProduct(dm));
  };
  return v;
}

Var Tape::softplus(Var a) {
  // log(1 + e^x), computed as max(x, 0) + log1p(e^-|x|) for stability.
  Mat out = val(a).unaryExpr([](double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  });
  bool ng = nodes_[a.id].needs_grad;
  return make(std::move(out), ng, [a](Tape& t, const Node& self) {
    Mat dm = t.val(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    t.bump(a.id, self.grad.cwiseProduct(dm));
  });
}

Var Tape::softmax_rows(Var a) {
  const Mat& av = val(a);
  Mat out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    Eigen::ArrayXd row = av.row(i).array();
    double m = row.maxCoeff();
    Eigen::ArrayXd e = (row - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  bool ng = nodes_[a.id].needs_grad;
  Var v = make(std::move(out), ng, nullptr);
  nodes_[v.id].back = [a, v](Tape& t, const Node& self) {
    const Mat& y = t.val(v);
    Mat ga(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      double dot = self.grad.row(i).dot(y.row(i));
      ga.row(i) = y.row(i).cwiseProduct((self.grad.row(i).array() - dot).matrix());
    }
    t.bump(a.id, ga);
  };
  return v;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  Eigen::Index rows = val(parts[0]).rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Var p : parts) {
    require(val(p).rows() == rows, "concat_cols: row mismatch");
    cols += val(p).cols();
    ng = ng || nodes_[p.id].needs_grad;
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, val(p).cols()) = val(p);
    at += val(p).cols();
  }
  return make(std::move(out), ng, [parts](Tape& t, const Node& self) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      Eigen::Index c = t.val(p).cols();
      t.bump(p.id, self.grad.middleCols(at, c));
      at += c;
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  Eigen::Index cols = val(parts[0]).cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (Var p : parts) {
    require(val(p).cols() == cols, "concat_rows: column mismatch");
    rows += val(p).rows();
    ng = ng || nodes_[p.id].needs_grad;
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, val(p).rows()) = val(p);
    at += val(p).rows();
  }
  return make(std::move(out), ng, [parts](Tape& t, const Node& self) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      Eigen::Index r = t.val(p).rows();
      t.bump(p.id, self.grad.middleRows(at, r));
      at += r;
    }
  });
}

Var Tape::repeat_rows(Var a, int times) {
  require(times >= 1, "repeat_rows: times must be positive");
  const Mat& av = val(a);
  Mat out(av.rows() * times, av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i)
    for (int k = 0; k < times; ++k) out.row(i * times + k) = av.row(i);
  bool ng = nodes_[a.id].needs_grad;
  return make(std::move(out), ng, [a, times](Tape& t, const Node& self) {
    const Mat& av = t.val(a);
    Mat ga = Mat::Zero(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i)
      for (int k = 0; k < times; ++k) ga.row(i) += self.grad.row(i * times + k);
    t.bump(a.id, ga);
  });
}

Var Tape::tile_rows_grouped(Var a, int group, int times) {
  const Mat& av = val(a);
  require(group >= 1 && av.rows() % group == 0, "tile_rows_grouped: bad group");
  require(times >= 1, "tile_rows_grouped: times must be positive");
  Eigen::Index blocks = av.rows() / group;
  Mat out(av.rows() * times, av.cols());
  for (Eigen::Index b = 0; b < blocks; ++b)
    for (int k = 0; k < times; ++k)
      out.middleRows((b * times + k) * group, group) = av.middleRows(b * group, group);
  bool ng = nodes_[a.id].needs_grad;
  return make(std::move(out), ng, [a, group, times](Tape& t, const Node& self) {
    const Mat& av = t.val(a);
    Eigen::Index blocks = av.rows() / group;
    Mat ga = Mat::Zero(av.rows(), av.cols());
    for (Eigen::Index b = 0; b < blocks; ++b)
      for (int k = 0; k < times; ++k)
        ga.middleRows(b * group, group) += self.grad.middleRows((b * times + k) * group, group);
    t.bump(a.id, ga);
  });
}

Var Tape::rows_to_matrix(Var a, int cols) {
  const Mat& av = val(a);
  require(av.cols() == 1, "rows_to_matrix: input must be a column");
  require(cols >= 1 && av.rows() % cols == 0, "rows_to_matrix: rows not divisible");
  Eigen::Index rows = av.rows() / cols;
  Mat out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = av(i * cols + j, 0);
  bool ng = nodes_[a.id].needs_grad;
  return make(std::move(out), ng, [a, cols](Tape& t, const Node& self) {
    Mat ga(t.val(a).rows(), 1);
    for (Eigen::Index i = 0; i < self.grad.rows(); ++i)
      for (Eigen::Index j = 0; j < cols; ++j) ga(i * cols + j, 0) = self.grad(i, j);
    t.bump(a.id, ga);
  });
}

Var Tape::bmm_grouped(Var a, Var b, int n) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  require(n >= 1 && av.cols() == n, "bmm_grouped: A cols must equal n");
  require(av.rows() == bv.rows() && av.rows() % n == 0, "bmm_grouped: bad block rows");
  Eigen::Index groups = av.rows() / n;
  Mat out(av.rows(), bv.cols());
  for (Eigen::Index g = 0; g < groups; ++g)
    out.middleRows(g * n, n) = av.middleRows(g * n, n) * bv.middleRows(g * n, n);
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return make(std::move(out), ng, [a, b, n](Tape& t, const Node& self) {
    const Mat& av = t.val(a);
    const Mat& bv = t.val(b);
    Eigen::Index groups = av.rows() / n;
    Mat ga(av.rows(), av.cols());
    Mat gb(bv.rows(), bv.cols());
    for (Eigen::Index g = 0; g < groups; ++g) {
      ga.middleRows(g * n, n) =
          self.grad.middleRows(g * n, n) * bv.middleRows(g * n, n).transpose();
      gb.middleRows(g * n, n) =
          av.middleRows(g * n, n).transpose() * self.grad.middleRows(g * n, n);
    }
    t.bump(a.id, ga);
    t.bump(b.id, gb);
  });
}

Var Tape::mean_rows(Var a) {
  const Mat& av = val(a);
  require(av.rows() >= 1, "mean_rows: empty");
  Mat out = av.colwise().mean();
  bool ng = nodes_[a.id].needs_grad;
  return make(std::move(out), ng, [a](Tape& t, const Node& self) {
    const Mat& av = t.val(a);
    double inv = 1.0 / static_cast<double>(av.rows());
    Mat ga = (self.grad * inv).replicate(av.rows(), 1);
    t.bump(a.id, ga);
  });
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
  const Mat& av = val(a);
  Mat out(static_cast<Eigen::Index>(idx.size()), av.cols());
  for (size_t k = 0; k < idx.size(); ++k) {
    require(idx[k] >= 0 && idx[k] < av.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = av.row(idx[k]);
  }
  bool ng = nodes_[a.id].needs_grad;
  return make(std::move(out), ng, [a, idx = std::move(idx)](Tape& t, const Node& self) {
    const Mat& av = t.val(a);
    Mat ga = Mat::Zero(av.rows(), av.cols());
    for (size_t k = 0; k < idx.size(); ++k)
      ga.row(idx[k]) += self.grad.row(static_cast<Eigen::Index>(k));
    t.bump(a.id, ga);
  });
}

Var Tape::aggregate_rows(Var a, std::vector<std::vector<int>> groups) {
  const Mat& av = val(a);
  Mat out = Mat::Zero(static_cast<Eigen::Index>(groups.size()), av.cols());
  for (size_t g = 0; g < groups.size(); ++g)
    for (int r : groups[g]) {
      require(r >= 0 && r < av.rows(), "aggregate_rows: index out of range");
      out.row(static_cast<Eigen::Index>(g)) += av.row(r);
    }
  bool ng = nodes_[a.id].needs_grad;
  return make(std::move(out), ng,
              [a, groups = std::move(groups)](Tape& t, const Node& self) {
                const Mat& av = t.val(a);
                Mat ga = Mat::Zero(av.rows(), av.cols());
                for (size_t g = 0; g < groups.size(); ++g)
                  for (int r : groups[g])
                    ga.row(r) += self.grad.row(static_cast<Eigen::Index>(g));
                t.bump(a.id, ga);
              });
}

Var Tape::log_softmax_grouped(Var a, std::vector<int> group_sizes) {
  const Mat& av = val(a);
  require(av.cols() == 1, "log_softmax_grouped: input must be a column");
  Eigen::Index total = 0;
  for (int s : group_sizes) {
    require(s >= 1, "log_softmax_grouped: empty group");
    total += s;
  }
  require(total == av.rows(), "log_softmax_grouped: sizes must cover all rows");
  Mat out(av.rows(), 1);
  Eigen::Index at = 0;
  for (int s : group_sizes) {
    Eigen::ArrayXd seg = av.col(0).segment(at, s).array();
    double m = seg.maxCoeff();
    double lse = m + std::log((seg - m).exp().sum());
    out.col(0).segment(at, s) = (seg - lse).matrix();
    at += s;
  }
  bool ng = nodes_[a.id].needs_grad;
  Var v = make(std::move(out), ng, nullptr);
  nodes_[v.id].back = [a, v, group_sizes = std::move(group_sizes)](Tape& t, const Node& self) {
    const Mat& y = t.val(v);
    Mat ga(y.rows(), 1);
    Eigen::Index at = 0;
    for (int s : group_sizes) {
      double gsum = self.grad.col(0).segment(at, s).sum();
      ga.col(0).segment(at, s) =
          self.grad.col(0).segment(at, s).array() -
          y.col(0).segment(at, s).array().exp() * gsum;
      at += s;
    }
    t.bump(a.id, ga);
  };
  return v;
}

void Tape::backward(Var root, const Mat& seed) {
  require(root.valid() && root.id < static_cast<int>(nodes_.size()), "backward: bad root");
  Node& r = nodes_[root.id];
  require(seed.rows() == r.value.rows() && seed.cols() == r.value.cols(),
          "backward: seed shape mismatch");
  require(r.needs_grad, "backward: root does not require gradients");
  bump(root.id, seed);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.grad_alive || !n.back) continue;
    n.back(*this, n);
  }
}

}  // namespace transit::ad
