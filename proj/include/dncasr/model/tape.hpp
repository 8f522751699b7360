// Reverse-mode autodiff over dense double matrices. Nodes are created in
// topological order, so the backward sweep is a single reverse pass over the
// creation sequence. Masked softmax uses additive -inf semantics: masked keys
// receive exactly zero weight and zero gradient.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace dncasr::model {

using Mat = Eigen::MatrixXd;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;
  Mat adam_m, adam_v;  // lazily sized by the optimizer

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape {
 public:
  struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var constant(Mat value);
  Var param(Parameter& p);

  const Mat& val(Var v) const { return nodes_[v.i].value; }
  const Mat& grad_of(Var v) const { return nodes_[v.i].grad; }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var add_rowvec(Var a, Var row);  // broadcast a 1xC row over all rows of a
  Var scale(Var a, double s);
  Var relu(Var a);
  Var layer_norm(Var x, Var gain, Var bias);
  // allowed==nullptr means a full softmax; otherwise allowed(i,j) gates key j
  // for query i. A row with no allowed key is an error.
  Var softmax_rows(Var scores, const BoolMat* allowed);
  Var slice_cols(Var a, int start, int len);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var select_rows(Var table, std::vector<int> ids);
  Var mean_cross_entropy(Var logits, std::vector<int> targets);
  Var mean_squared_error(Var x, const Mat& target);

  // Seeds d(loss)/d(loss)=1, sweeps the tape in reverse, then accumulates
  // leaf gradients into their Parameters.
  void backward(Var loss);

  int size() const { return static_cast<int>(nodes_.size()); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool grad_alloc = false;
    Parameter* leaf = nullptr;
    std::function<void(Tape&)> back;
  };

  Var emplace(Mat value);
  Mat& g(int i);  // grad buffer, allocated on first touch

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

using Var = Tape::Var;

}  // namespace dncasr::model
