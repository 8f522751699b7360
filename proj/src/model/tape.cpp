#include "dncasr/model/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace dncasr::model {

namespace {
constexpr double kLnEps = 1e-5;

void check_finite_dims(const Mat& m, const char* where) {
  if (m.rows() == 0 || m.cols() == 0)
    throw std::invalid_argument(std::string(where) + ": empty matrix");
}
}  // namespace

Tape::Var Tape::emplace(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::g(int i) {
  Node& n = nodes_[i];
  if (!n.grad_alloc) {
    n.grad.setZero(n.value.rows(), n.value.cols());
    n.grad_alloc = true;
  }
  return n.grad;
}

Tape::Var Tape::constant(Mat value) { return emplace(std::move(value)); }

Tape::Var Tape::param(Parameter& p) {
  Var v = emplace(p.value);
  if (grad_enabled_ && p.trainable) nodes_[v.i].leaf = &p;
  return v;
}

Tape::Var Tape::matmul(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  if (av.cols() != bv.rows()) throw std::invalid_argument("matmul shape mismatch");
  Var out = emplace(av * bv);
  if (grad_enabled_)
    nodes_[out.i].back = [a, b, out](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      t.g(a.i).noalias() += go * t.val(b).transpose();
      t.g(b.i).noalias() += t.val(a).transpose() * go;
    };
  return out;
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  if (av.cols() != bv.cols()) throw std::invalid_argument("matmul_nt shape mismatch");
  Var out = emplace(av * bv.transpose());
  if (grad_enabled_)
    nodes_[out.i].back = [a, b, out](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      t.g(a.i).noalias() += go * t.val(b);
      t.g(b.i).noalias() += go.transpose() * t.val(a);
    };
  return out;
}

Tape::Var Tape::add(Var a, Var b) {
  if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
    throw std::invalid_argument("add shape mismatch");
  Var out = emplace(val(a) + val(b));
  if (grad_enabled_)
    nodes_[out.i].back = [a, b, out](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      t.g(a.i) += go;
      t.g(b.i) += go;
    };
  return out;
}

Tape::Var Tape::add_rowvec(Var a, Var row) {
  if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
    throw std::invalid_argument("add_rowvec shape mismatch");
  Var out = emplace(val(a).rowwise() + val(row).row(0));
  if (grad_enabled_)
    nodes_[out.i].back = [a, row, out](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      t.g(a.i) += go;
      t.g(row.i).row(0) += go.colwise().sum();
    };
  return out;
}

Tape::Var Tape::scale(Var a, double s) {
  Var out = emplace(val(a) * s);
  if (grad_enabled_)
    nodes_[out.i].back = [a, s, out](Tape& t) {
      t.g(a.i) += t.nodes_[out.i].grad * s;
    };
  return out;
}

Tape::Var Tape::relu(Var a) {
  Var out = emplace(val(a).cwiseMax(0.0));
  if (grad_enabled_)
    nodes_[out.i].back = [a, out](Tape& t) {
      t.g(a.i).array() +=
          t.nodes_[out.i].grad.array() * (t.val(a).array() > 0.0).cast<double>();
    };
  return out;
}

Tape::Var Tape::layer_norm(Var x, Var gain, Var bias) {
  const Mat& xv = val(x);
  check_finite_dims(xv, "layer_norm");
  const int rows = static_cast<int>(xv.rows());
  const int cols = static_cast<int>(xv.cols());
  if (val(gain).cols() != cols || val(bias).cols() != cols)
    throw std::invalid_argument("layer_norm gain/bias shape mismatch");

  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (int i = 0; i < rows; ++i) {
    double mu = xv.row(i).mean();
    double var = (xv.row(i).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + kLnEps);
    inv_std[i] = is;
    xhat.row(i) = (xv.row(i).array() - mu) * is;
  }
  Mat y = xhat.cwiseProduct(val(gain).row(0).replicate(rows, 1)) +
          val(bias).row(0).replicate(rows, 1);
  Var out = emplace(std::move(y));
  if (grad_enabled_)
    nodes_[out.i].back = [x, gain, bias, out, xhat, inv_std](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      t.g(gain.i).row(0) += (go.array() * xhat.array()).colwise().sum().matrix();
      t.g(bias.i).row(0) += go.colwise().sum();
      Mat& gx = t.g(x.i);
      for (int i = 0; i < go.rows(); ++i) {
        Eigen::RowVectorXd dxhat =
            (go.row(i).array() * t.val(gain).row(0).array()).matrix();
        double m1 = dxhat.mean();
        double m2 = (dxhat.array() * xhat.row(i).array()).mean();
        gx.row(i) +=
            (inv_std[i] * (dxhat.array() - m1 - xhat.row(i).array() * m2)).matrix();
      }
    };
  return out;
}

Tape::Var Tape::softmax_rows(Var scores, const BoolMat* allowed) {
  const Mat& s = val(scores);
  check_finite_dims(s, "softmax_rows");
  if (allowed && (allowed->rows() != s.rows() || allowed->cols() != s.cols()))
    throw std::invalid_argument("softmax mask shape mismatch");

  Mat p(s.rows(), s.cols());
  for (int i = 0; i < s.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < s.cols(); ++j)
      if (!allowed || (*allowed)(i, j)) mx = std::max(mx, s(i, j));
    if (!std::isfinite(mx))
      throw std::runtime_error("softmax_rows: query with no unmasked key");
    double z = 0.0;
    for (int j = 0; j < s.cols(); ++j) {
      double e = (!allowed || (*allowed)(i, j)) ? std::exp(s(i, j) - mx) : 0.0;
      p(i, j) = e;
      z += e;
    }
    p.row(i) /= z;
  }
  Var out = emplace(std::move(p));
  if (grad_enabled_)
    nodes_[out.i].back = [scores, out](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      const Mat& pv = t.val(out);
      Mat& gs = t.g(scores.i);
      for (int i = 0; i < go.rows(); ++i) {
        double dot = go.row(i).dot(pv.row(i));
        gs.row(i).array() += pv.row(i).array() * (go.row(i).array() - dot);
      }
    };
  return out;
}

Tape::Var Tape::slice_cols(Var a, int start, int len) {
  const Mat& av = val(a);
  if (start < 0 || len < 1 || start + len > av.cols())
    throw std::invalid_argument("slice_cols out of range");
  Var out = emplace(av.middleCols(start, len));
  if (grad_enabled_)
    nodes_[out.i].back = [a, start, len, out](Tape& t) {
      t.g(a.i).middleCols(start, len) += t.nodes_[out.i].grad;
    };
  return out;
}

Tape::Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  int rows = static_cast<int>(val(parts[0]).rows());
  int cols = 0;
  for (Var p : parts) {
    if (val(p).rows() != rows) throw std::invalid_argument("concat_cols row mismatch");
    cols += static_cast<int>(val(p).cols());
  }
  Mat m(rows, cols);
  int at = 0;
  for (Var p : parts) {
    m.middleCols(at, val(p).cols()) = val(p);
    at += static_cast<int>(val(p).cols());
  }
  Var out = emplace(std::move(m));
  if (grad_enabled_)
    nodes_[out.i].back = [parts, out](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      int at2 = 0;
      for (Var p : parts) {
        int w = static_cast<int>(t.val(p).cols());
        t.g(p.i) += go.middleCols(at2, w);
        at2 += w;
      }
    };
  return out;
}

Tape::Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  int cols = static_cast<int>(val(parts[0]).cols());
  int rows = 0;
  for (Var p : parts) {
    if (val(p).cols() != cols) throw std::invalid_argument("concat_rows col mismatch");
    rows += static_cast<int>(val(p).rows());
  }
  Mat m(rows, cols);
  int at = 0;
  for (Var p : parts) {
    m.middleRows(at, val(p).rows()) = val(p);
    at += static_cast<int>(val(p).rows());
  }
  Var out = emplace(std::move(m));
  if (grad_enabled_)
    nodes_[out.i].back = [parts, out](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      int at2 = 0;
      for (Var p : parts) {
        int h = static_cast<int>(t.val(p).rows());
        t.g(p.i) += go.middleRows(at2, h);
        at2 += h;
      }
    };
  return out;
}

Tape::Var Tape::select_rows(Var table, std::vector<int> ids) {
  const Mat& tv = val(table);
  Mat m(static_cast<int>(ids.size()), tv.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= tv.rows())
      throw std::invalid_argument("select_rows: id out of range");
    m.row(static_cast<int>(k)) = tv.row(ids[k]);
  }
  Var out = emplace(std::move(m));
  if (grad_enabled_)
    nodes_[out.i].back = [table, ids = std::move(ids), out](Tape& t) {
      const Mat& go = t.nodes_[out.i].grad;
      Mat& gt = t.g(table.i);
      for (std::size_t k = 0; k < ids.size(); ++k)
        gt.row(ids[k]) += go.row(static_cast<int>(k));
    };
  return out;
}

Tape::Var Tape::mean_cross_entropy(Var logits, std::vector<int> targets) {
  const Mat& lv = val(logits);
  if (static_cast<int>(targets.size()) != lv.rows())
    throw std::invalid_argument("cross entropy target count mismatch");
  const int n = static_cast<int>(lv.rows());
  Mat p(lv.rows(), lv.cols());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= lv.cols())
      throw std::invalid_argument("cross entropy target out of range");
    double mx = lv.row(i).maxCoeff();
    Eigen::ArrayXd e = (lv.row(i).array() - mx).exp();
    double z = e.sum();
    p.row(i) = (e / z).matrix();
    loss -= std::log(p(i, targets[i]));
  }
  Mat out(1, 1);
  out(0, 0) = loss / n;
  Var v = emplace(std::move(out));
  if (grad_enabled_)
    nodes_[v.i].back = [logits, targets = std::move(targets), p, n, v](Tape& t) {
      double go = t.nodes_[v.i].grad(0, 0);
      Mat& gl = t.g(logits.i);
      gl += p * (go / n);
      for (int i = 0; i < n; ++i) gl(i, targets[i]) -= go / n;
    };
  return v;
}

Tape::Var Tape::mean_squared_error(Var x, const Mat& target) {
  const Mat& xv = val(x);
  if (xv.rows() != target.rows() || xv.cols() != target.cols())
    throw std::invalid_argument("mean_squared_error shape mismatch");
  const double n = static_cast<double>(xv.size());
  Mat out(1, 1);
  out(0, 0) = (xv - target).squaredNorm() / n;
  Var v = emplace(std::move(out));
  if (grad_enabled_)
    nodes_[v.i].back = [x, target, n, v](Tape& t) {
      double go = t.nodes_[v.i].grad(0, 0);
      t.g(x.i) += (t.val(x) - target) * (2.0 * go / n);
    };
  return v;
}

void Tape::backward(Var loss) {
  if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
  if (val(loss).rows() != 1 || val(loss).cols() != 1)
    throw std::invalid_argument("backward expects a scalar loss");
  g(loss.i)(0, 0) = 1.0;
  for (int i = loss.i; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.grad_alloc) continue;
    if (n.back) n.back(*this);
    if (n.leaf) {
      if (n.leaf->grad.size() == 0) n.leaf->zero_grad();
      n.leaf->grad += n.grad;
    }
  }
}

}  // namespace dncasr::model
