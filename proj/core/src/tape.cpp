#include "vilsum/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "vilsum/errors.hpp"

namespace vilsum {

namespace {

constexpr float kLayerNormEps = 1e-5f;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + t.shape_str());
  }
}

}  // namespace

Var Tape::push(Tensor value, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.i >= static_cast<int>(nodes_.size())) {
    throw ContractError("invalid tape variable");
  }
  return nodes_[static_cast<size_t>(v.i)];
}

const Tensor& Tape::val(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

std::vector<float> Tape::grad_of(Var v) const {
  const Node& n = node(v);
  if (!n.grad.empty()) return n.grad;
  const Tensor& t = n.external ? *n.external : n.value;
  return std::vector<float>(t.size(), 0.0f);
}

std::vector<float>& Tape::acc(int idx) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  if (n.grad.empty()) {
    const Tensor& t = n.external ? *n.external : n.value;
    n.grad.assign(t.size(), 0.0f);
  }
  n.touched = true;
  return n.grad;
}

Var Tape::leaf(Tensor& param) {
  Node n;
  n.external = &param;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  check_rank2(A, "matmul");
  check_rank2(B, "matmul");
  if (A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree, " + A.shape_str() + " x " + B.shape_str());
  }
  const int m = A.dim(0), kk = A.dim(1), nn = B.dim(1);
  Tensor C({m, nn});
  {
    const float* pa = A.data().data();
    const float* pb = B.data().data();
    float* pc = C.data().data();
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < kk; ++p) {
        const float av = pa[static_cast<size_t>(i) * kk + p];
        const float* brow = pb + static_cast<size_t>(p) * nn;
        float* crow = pc + static_cast<size_t>(i) * nn;
        for (int j = 0; j < nn; ++j) crow[j] += av * brow[j];
      }
    }
  }
  Var out = push(std::move(C), nullptr);
  const int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [ai, bi, oi, m, kk, nn](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    const float* pa = t.val(Var{ai}).data().data();
    const float* pb = t.val(Var{bi}).data().data();
    {
      std::vector<float>& da = t.acc(ai);
      // dA = g . B^T
      for (int i = 0; i < m; ++i) {
        const float* grow = g.data() + static_cast<size_t>(i) * nn;
        for (int p = 0; p < kk; ++p) {
          const float* brow = pb + static_cast<size_t>(p) * nn;
          float s = 0.0f;
          for (int j = 0; j < nn; ++j) s += grow[j] * brow[j];
          da[static_cast<size_t>(i) * kk + p] += s;
        }
      }
    }
    {
      std::vector<float>& db = t.acc(bi);
      // dB = A^T . g
      for (int i = 0; i < m; ++i) {
        const float* grow = g.data() + static_cast<size_t>(i) * nn;
        for (int p = 0; p < kk; ++p) {
          const float av = pa[static_cast<size_t>(i) * kk + p];
          float* dbrow = db.data() + static_cast<size_t>(p) * nn;
          for (int j = 0; j < nn; ++j) dbrow[j] += av * grow[j];
        }
      }
    }
  };
  return out;
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  check_rank2(A, "matmul_nt");
  check_rank2(B, "matmul_nt");
  if (A.dim(1) != B.dim(1)) {
    throw ShapeError("matmul_nt: inner dimensions disagree, " + A.shape_str() + " x " +
                     B.shape_str() + "^T");
  }
  const int m = A.dim(0), kk = A.dim(1), nn = B.dim(0);
  Tensor C({m, nn});
  {
    const float* pa = A.data().data();
    const float* pb = B.data().data();
    float* pc = C.data().data();
    for (int i = 0; i < m; ++i) {
      const float* arow = pa + static_cast<size_t>(i) * kk;
      for (int j = 0; j < nn; ++j) {
        const float* brow = pb + static_cast<size_t>(j) * kk;
        float s = 0.0f;
        for (int p = 0; p < kk; ++p) s += arow[p] * brow[p];
        pc[static_cast<size_t>(i) * nn + j] = s;
      }
    }
  }
  Var out = push(std::move(C), nullptr);
  const int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [ai, bi, oi, m, kk, nn](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    const float* pa = t.val(Var{ai}).data().data();
    const float* pb = t.val(Var{bi}).data().data();
    {
      std::vector<float>& da = t.acc(ai);
      // dA = g . B
      for (int i = 0; i < m; ++i) {
        const float* grow = g.data() + static_cast<size_t>(i) * nn;
        float* darow = da.data() + static_cast<size_t>(i) * kk;
        for (int j = 0; j < nn; ++j) {
          const float gv = grow[j];
          const float* brow = pb + static_cast<size_t>(j) * kk;
          for (int p = 0; p < kk; ++p) darow[p] += gv * brow[p];
        }
      }
    }
    {
      std::vector<float>& db = t.acc(bi);
      // dB = g^T . A
      for (int i = 0; i < m; ++i) {
        const float* grow = g.data() + static_cast<size_t>(i) * nn;
        const float* arow = pa + static_cast<size_t>(i) * kk;
        for (int j = 0; j < nn; ++j) {
          const float gv = grow[j];
          float* dbrow = db.data() + static_cast<size_t>(j) * kk;
          for (int p = 0; p < kk; ++p) dbrow[p] += gv * arow[p];
        }
      }
    }
  };
  return out;
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.shape() != B.shape()) {
    throw ShapeError("add: shape mismatch, " + A.shape_str() + " vs " + B.shape_str());
  }
  Tensor C(A.shape());
  for (size_t i = 0; i < C.size(); ++i) C[i] = A[i] + B[i];
  Var out = push(std::move(C), nullptr);
  const int ai = a.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [ai, bi, oi](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    std::vector<float>& da = t.acc(ai);
    for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    std::vector<float>& db = t.acc(bi);
    for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
  };
  return out;
}

Var Tape::add_rowvec(Var x, Var b) {
  const Tensor& X = val(x);
  const Tensor& B = val(b);
  check_rank2(X, "add_rowvec");
  if (B.rank() != 1 || B.dim(0) != X.dim(1)) {
    throw ShapeError("add_rowvec: " + X.shape_str() + " + " + B.shape_str());
  }
  const int m = X.dim(0), nn = X.dim(1);
  Tensor C({m, nn});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < nn; ++j) C.at(i, j) = X.at(i, j) + B[static_cast<size_t>(j)];
  Var out = push(std::move(C), nullptr);
  const int xi = x.i, bi = b.i, oi = out.i;
  nodes_[oi].back = [xi, bi, oi, m, nn](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    std::vector<float>& dx = t.acc(xi);
    for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    std::vector<float>& db = t.acc(bi);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nn; ++j) db[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * nn + j];
  };
  return out;
}

Var Tape::scale(Var x, float c) {
  const Tensor& X = val(x);
  Tensor C(X.shape());
  for (size_t i = 0; i < C.size(); ++i) C[i] = c * X[i];
  Var out = push(std::move(C), nullptr);
  const int xi = x.i, oi = out.i;
  nodes_[oi].back = [xi, oi, c](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    std::vector<float>& dx = t.acc(xi);
    for (size_t i = 0; i < g.size(); ++i) dx[i] += c * g[i];
  };
  return out;
}

Var Tape::reshape(Var x, std::vector<int> shape) {
  const Tensor& X = val(x);
  if (checked_numel(shape) != X.size()) {
    throw ShapeError("reshape: cannot view " + X.shape_str() + " as " + Tensor::shape_str(shape));
  }
  Tensor C(std::move(shape), std::vector<float>(X.data().begin(), X.data().end()));
  Var out = push(std::move(C), nullptr);
  const int xi = x.i, oi = out.i;
  nodes_[oi].back = [xi, oi](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    std::vector<float>& dx = t.acc(xi);
    for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  };
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  int total = 0;
  const int nn = val(parts[0]).rank() == 2 ? val(parts[0]).dim(1) : -1;
  for (Var p : parts) {
    const Tensor& t = val(p);
    check_rank2(t, "concat_rows");
    if (t.dim(1) != nn) {
      throw ShapeError("concat_rows: column mismatch, " + t.shape_str() + " vs " +
                       std::to_string(nn) + " cols");
    }
    total += t.dim(0);
  }
  Tensor C({total, nn});
  int r = 0;
  for (Var p : parts) {
    const Tensor& t = val(p);
    std::memcpy(C.data().data() + static_cast<size_t>(r) * nn, t.data().data(),
                t.size() * sizeof(float));
    r += t.dim(0);
  }
  Var out = push(std::move(C), nullptr);
  std::vector<int> idxs;
  std::vector<int> rows;
  for (Var p : parts) {
    idxs.push_back(p.i);
    rows.push_back(val(p).dim(0));
  }
  const int oi = out.i;
  nodes_[oi].back = [idxs, rows, nn, oi](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    int r = 0;
    for (size_t part = 0; part < idxs.size(); ++part) {
      std::vector<float>& dx = t.acc(idxs[part]);
      const size_t count = static_cast<size_t>(rows[part]) * nn;
      const float* src = g.data() + static_cast<size_t>(r) * nn;
      for (size_t i = 0; i < count; ++i) dx[i] += src[i];
      r += rows[part];
    }
  };
  return out;
}

Var Tape::slice_rows(Var x, int row_begin, int row_end) {
  const Tensor& X = val(x);
  check_rank2(X, "slice_rows");
  if (row_begin < 0 || row_end > X.dim(0) || row_begin >= row_end) {
    throw ShapeError("slice_rows: rows [" + std::to_string(row_begin) + "," +
                     std::to_string(row_end) + ") out of " + X.shape_str());
  }
  const int nn = X.dim(1);
  const int m = row_end - row_begin;
  Tensor C({m, nn});
  std::memcpy(C.data().data(), X.data().data() + static_cast<size_t>(row_begin) * nn,
              static_cast<size_t>(m) * nn * sizeof(float));
  Var out = push(std::move(C), nullptr);
  const int xi = x.i, oi = out.i;
  nodes_[oi].back = [xi, oi, row_begin, m, nn](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    std::vector<float>& dx = t.acc(xi);
    float* dst = dx.data() + static_cast<size_t>(row_begin) * nn;
    for (size_t i = 0; i < static_cast<size_t>(m) * nn; ++i) dst[i] += g[i];
  };
  return out;
}

Var Tape::embed(Var table, std::span<const int> ids) {
  const Tensor& T = val(table);
  check_rank2(T, "embed");
  if (ids.empty()) throw ContractError("embed: empty id list");
  const int V = T.dim(0), d = T.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= V) {
      throw ContractError("embed: id " + std::to_string(id) + " out of table rows " +
                          std::to_string(V));
    }
  }
  const int n = static_cast<int>(ids.size());
  Tensor C({n, d});
  for (int i = 0; i < n; ++i) {
    std::memcpy(C.data().data() + static_cast<size_t>(i) * d,
                T.data().data() + static_cast<size_t>(ids[i]) * d, static_cast<size_t>(d) * sizeof(float));
  }
  Var out = push(std::move(C), nullptr);
  const int ti = table.i, oi = out.i;
  std::vector<int> idvec(ids.begin(), ids.end());
  nodes_[oi].back = [ti, oi, idvec, d](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    std::vector<float>& dt = t.acc(ti);
    for (size_t i = 0; i < idvec.size(); ++i) {
      float* drow = dt.data() + static_cast<size_t>(idvec[i]) * d;
      const float* grow = g.data() + i * d;
      for (int j = 0; j < d; ++j) drow[j] += grow[j];
    }
  };
  return out;
}

Var Tape::softmax(Var x, int axis) {
  const Tensor& X = val(x);
  if (axis < 0) axis += X.rank();
  if (axis < 0 || axis >= X.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of rank " +
                     std::to_string(X.rank()));
  }
  size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(X.dim(i));
  const size_t n = static_cast<size_t>(X.dim(axis));
  for (int i = axis + 1; i < X.rank(); ++i) inner *= static_cast<size_t>(X.dim(i));

  Tensor Y(X.shape());
  const float* px = X.data().data();
  float* py = Y.data().data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * n * inner + in;
      float mx = px[base];
      for (size_t i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
      double sum = 0.0;
      for (size_t i = 0; i < n; ++i) {
        const float e = std::exp(px[base + i * inner] - mx);
        py[base + i * inner] = e;
        sum += e;
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (size_t i = 0; i < n; ++i) py[base + i * inner] *= inv;
    }
  }
  Var out = push(std::move(Y), nullptr);
  const int xi = x.i, oi = out.i;
  nodes_[oi].back = [xi, oi, outer, n, inner](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    const float* py = t.nodes_[oi].value.data().data();
    std::vector<float>& dx = t.acc(xi);
    for (size_t o = 0; o < outer; ++o) {
      for (size_t in = 0; in < inner; ++in) {
        const size_t base = o * n * inner + in;
        double dot = 0.0;
        for (size_t i = 0; i < n; ++i) dot += static_cast<double>(py[base + i * inner]) * g[base + i * inner];
        for (size_t i = 0; i < n; ++i) {
          const size_t k = base + i * inner;
          dx[k] += py[k] * (g[k] - static_cast<float>(dot));
        }
      }
    }
  };
  return out;
}

Var Tape::layer_norm(Var x, Var gain, Var bias) {
  const Tensor& X = val(x);
  const Tensor& G = val(gain);
  const Tensor& B = val(bias);
  if (X.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const int d = X.dim(X.rank() - 1);
  if (G.rank() != 1 || B.rank() != 1 || G.dim(0) != d || B.dim(0) != d) {
    throw ShapeError("layer_norm: gain " + G.shape_str() + " / bias " + B.shape_str() +
                     " do not match last dim of " + X.shape_str());
  }
  const size_t rows = X.size() / static_cast<size_t>(d);
  Tensor Y(X.shape());
  std::vector<float> mean(rows), rstd(rows);
  const float* px = X.data().data();
  float* py = Y.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const float* xr = px + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= d;
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    mean[r] = static_cast<float>(mu);
    rstd[r] = static_cast<float>(rs);
    float* yr = py + r * d;
    for (int j = 0; j < d; ++j) {
      const float xh = (xr[j] - mean[r]) * rstd[r];
      yr[j] = G[static_cast<size_t>(j)] * xh + B[static_cast<size_t>(j)];
    }
  }
  Var out = push(std::move(Y), nullptr);
  const int xi = x.i, gi = gain.i, bi = bias.i, oi = out.i;
  nodes_[oi].back = [xi, gi, bi, oi, rows, d, mean, rstd](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    const float* px = t.val(Var{xi}).data().data();
    const float* pg = t.val(Var{gi}).data().data();
    std::vector<float>& dx = t.acc(xi);
    std::vector<float>& dgain = t.acc(gi);
    std::vector<float>& dbias = t.acc(bi);
    std::vector<float> dxhat(static_cast<size_t>(d));
    for (size_t r = 0; r < rows; ++r) {
      const float* xr = px + r * d;
      const float* gr = g.data() + r * d;
      double m1 = 0.0, m2 = 0.0;
      for (int j = 0; j < d; ++j) {
        const float xh = (xr[j] - mean[r]) * rstd[r];
        dgain[static_cast<size_t>(j)] += gr[j] * xh;
        dbias[static_cast<size_t>(j)] += gr[j];
        const float dh = gr[j] * pg[j];
        dxhat[static_cast<size_t>(j)] = dh;
        m1 += dh;
        m2 += static_cast<double>(dh) * xh;
      }
      m1 /= d;
      m2 /= d;
      float* dxr = dx.data() + r * d;
      for (int j = 0; j < d; ++j) {
        const float xh = (xr[j] - mean[r]) * rstd[r];
        dxr[j] += rstd[r] * (dxhat[static_cast<size_t>(j)] - static_cast<float>(m1) -
                             xh * static_cast<float>(m2));
      }
    }
  };
  return out;
}

Var Tape::gelu(Var x) {
  const Tensor& X = val(x);
  Tensor Y(X.shape());
  for (size_t i = 0; i < X.size(); ++i) {
    const double v = X[i];
    Y[i] = static_cast<float>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
  }
  Var out = push(std::move(Y), nullptr);
  const int xi = x.i, oi = out.i;
  nodes_[oi].back = [xi, oi](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    const float* px = t.val(Var{xi}).data().data();
    std::vector<float>& dx = t.acc(xi);
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = px[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      dx[i] += g[i] * static_cast<float>(cdf + v * pdf);
    }
  };
  return out;
}

Var Tape::rowmax(Var x) {
  const Tensor& X = val(x);
  check_rank2(X, "rowmax");
  const int r = X.dim(0), c = X.dim(1);
  Tensor Y({c});
  std::vector<int> arg(static_cast<size_t>(c), 0);
  for (int j = 0; j < c; ++j) {
    float best = X.at(0, j);
    int bi = 0;
    for (int i = 1; i < r; ++i) {
      if (X.at(i, j) > best) {
        best = X.at(i, j);
        bi = i;
      }
    }
    Y[static_cast<size_t>(j)] = best;
    arg[static_cast<size_t>(j)] = bi;
  }
  Var out = push(std::move(Y), nullptr);
  const int xi = x.i, oi = out.i;
  nodes_[oi].back = [xi, oi, arg, c](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    std::vector<float>& dx = t.acc(xi);
    const int cols = c;
    for (int j = 0; j < cols; ++j) {
      dx[static_cast<size_t>(arg[static_cast<size_t>(j)]) * cols + j] += g[static_cast<size_t>(j)];
    }
  };
  return out;
}

Var Tape::row_l2_normalize(Var x) {
  const Tensor& X = val(x);
  check_rank2(X, "row_l2_normalize");
  const int m = X.dim(0), nn = X.dim(1);
  Tensor Y({m, nn});
  std::vector<float> norms(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < nn; ++j) s += static_cast<double>(X.at(i, j)) * X.at(i, j);
    const float nrm = static_cast<float>(std::sqrt(std::max(s, 1e-24)));
    norms[static_cast<size_t>(i)] = nrm;
    for (int j = 0; j < nn; ++j) Y.at(i, j) = X.at(i, j) / nrm;
  }
  Var out = push(std::move(Y), nullptr);
  const int xi = x.i, oi = out.i;
  nodes_[oi].back = [xi, oi, norms, m, nn](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    const float* py = t.nodes_[oi].value.data().data();
    std::vector<float>& dx = t.acc(xi);
    for (int i = 0; i < m; ++i) {
      const float* ur = py + static_cast<size_t>(i) * nn;
      const float* gr = g.data() + static_cast<size_t>(i) * nn;
      double dot = 0.0;
      for (int j = 0; j < nn; ++j) dot += static_cast<double>(ur[j]) * gr[j];
      float* dxr = dx.data() + static_cast<size_t>(i) * nn;
      const float inv = 1.0f / norms[static_cast<size_t>(i)];
      for (int j = 0; j < nn; ++j) {
        dxr[j] += (gr[j] - static_cast<float>(dot) * ur[j]) * inv;
      }
    }
  };
  return out;
}

Var Tape::attention(Var q, Var k, Var v, int n_heads,
                    const std::vector<std::uint8_t>* key_padding, bool causal,
                    AttnProbe* probe) {
  const Tensor& Q = val(q);
  const Tensor& K = val(k);
  const Tensor& V = val(v);
  check_rank2(Q, "attention");
  check_rank2(K, "attention");
  check_rank2(V, "attention");
  const int d = Q.dim(1);
  if (K.dim(1) != d || V.dim(1) != d || K.dim(0) != V.dim(0)) {
    throw ShapeError("attention: q " + Q.shape_str() + ", k " + K.shape_str() + ", v " +
                     V.shape_str());
  }
  if (n_heads < 1 || d % n_heads != 0) {
    throw ConfigError("attention: model dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  const int tq = Q.dim(0), tk = K.dim(0);
  if (key_padding && static_cast<int>(key_padding->size()) != tk) {
    throw ShapeError("attention: key padding has " + std::to_string(key_padding->size()) +
                     " entries for " + std::to_string(tk) + " keys");
  }
  const int dh = d / n_heads;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));

  std::vector<std::uint8_t> pad;
  if (key_padding) pad = *key_padding;

  auto allowed = [&](int i, int j) {
    if (!pad.empty() && pad[static_cast<size_t>(j)]) return false;
    if (causal && j > i) return false;
    return true;
  };

  // weights[h][i*tk + j]
  std::vector<float> weights(static_cast<size_t>(n_heads) * tq * tk, 0.0f);
  Tensor O({tq, d});
  std::vector<float> scores(static_cast<size_t>(tk));
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * dh;
    float* wh = weights.data() + static_cast<size_t>(h) * tq * tk;
    for (int i = 0; i < tq; ++i) {
      const float* qi = Q.data().data() + static_cast<size_t>(i) * d + off;
      float mx = -std::numeric_limits<float>::infinity();
      for (int j = 0; j < tk; ++j) {
        if (!allowed(i, j)) continue;
        const float* kj = K.data().data() + static_cast<size_t>(j) * d + off;
        float s = 0.0f;
        for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= sc;
        scores[static_cast<size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      if (!std::isfinite(mx)) continue;  // every key masked: zero weights, zero output
      double sum = 0.0;
      for (int j = 0; j < tk; ++j) {
        if (!allowed(i, j)) continue;
        sum += std::exp(static_cast<double>(scores[static_cast<size_t>(j)]) - mx);
      }
      const double inv = 1.0 / sum;
      float* orow = O.data().data() + static_cast<size_t>(i) * d + off;
      for (int j = 0; j < tk; ++j) {
        if (!allowed(i, j)) continue;
        const float w = static_cast<float>(
            std::exp(static_cast<double>(scores[static_cast<size_t>(j)]) - mx) * inv);
        wh[static_cast<size_t>(i) * tk + j] = w;
        const float* vj = V.data().data() + static_cast<size_t>(j) * d + off;
        for (int c = 0; c < dh; ++c) orow[c] += w * vj[c];
      }
    }
  }
  if (probe) {
    Tensor avg({tq, tk});
    for (int h = 0; h < n_heads; ++h) {
      const float* wh = weights.data() + static_cast<size_t>(h) * tq * tk;
      for (size_t i = 0; i < static_cast<size_t>(tq) * tk; ++i) avg[i] += wh[i] / n_heads;
    }
    probe->weights.push_back(std::move(avg));
  }
  Var out = push(std::move(O), nullptr);
  const int qi_ = q.i, ki_ = k.i, vi_ = v.i, oi = out.i;
  nodes_[oi].back = [qi_, ki_, vi_, oi, n_heads, dh, d, tq, tk, sc, weights = std::move(weights)](Tape& t) {
    const std::vector<float>& g = t.nodes_[oi].grad;
    const float* pq = t.val(Var{qi_}).data().data();
    const float* pk = t.val(Var{ki_}).data().data();
    const float* pv = t.val(Var{vi_}).data().data();
    std::vector<float>& dq = t.acc(qi_);
    std::vector<float>& dk = t.acc(ki_);
    std::vector<float>& dv = t.acc(vi_);
    std::vector<float> dwrow(static_cast<size_t>(tk));
    for (int h = 0; h < n_heads; ++h) {
      const int off = h * dh;
      const float* wh = weights.data() + static_cast<size_t>(h) * tq * tk;
      for (int i = 0; i < tq; ++i) {
        const float* grow = g.data() + static_cast<size_t>(i) * d + off;
        const float* wrow = wh + static_cast<size_t>(i) * tk;
        // dW = g . V^T and dV += W^T . g, restricted to nonzero weights
        for (int j = 0; j < tk; ++j) {
          const float w = wrow[j];
          if (w == 0.0f) {
            dwrow[static_cast<size_t>(j)] = 0.0f;
            continue;
          }
          const float* vj = pv + static_cast<size_t>(j) * d + off;
          float* dvj = dv.data() + static_cast<size_t>(j) * d + off;
          float s = 0.0f;
          for (int c = 0; c < dh; ++c) {
            s += grow[c] * vj[c];
            dvj[c] += w * grow[c];
          }
          dwrow[static_cast<size_t>(j)] = s;
        }
        // softmax backward over the row, then propagate through the scores
        double dot = 0.0;
        for (int j = 0; j < tk; ++j) dot += static_cast<double>(wrow[j]) * dwrow[static_cast<size_t>(j)];
        const float* qi = pq + static_cast<size_t>(i) * d + off;
        float* dqi = dq.data() + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < tk; ++j) {
          const float w = wrow[j];
          if (w == 0.0f) continue;
          const float ds = sc * w * (dwrow[static_cast<size_t>(j)] - static_cast<float>(dot));
          const float* kj = pk + static_cast<size_t>(j) * d + off;
          float* dkj = dk.data() + static_cast<size_t>(j) * d + off;
          for (int c = 0; c < dh; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
  };
  return out;
}

Var Tape::cross_entropy(Var logits, std::span<const int> targets, int ignore_index) {
  const Tensor& X = val(logits);
  check_rank2(X, "cross_entropy");
  const int n = X.dim(0), V = X.dim(1);
  if (static_cast<int>(targets.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " logit rows");
  }
  int counted = 0;
  for (int tgt : targets) {
    if (tgt == ignore_index) continue;
    if (tgt < 0 || tgt >= V) {
      throw ContractError("cross_entropy: target " + std::to_string(tgt) + " out of range " +
                          std::to_string(V));
    }
    ++counted;
  }
  if (counted == 0) throw ContractError("cross_entropy: no targets to score");

  std::vector<float> probs(static_cast<size_t>(n) * V);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = X.data().data() + static_cast<size_t>(i) * V;
    float mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < V; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(sum);
    float* prow = probs.data() + static_cast<size_t>(i) * V;
    for (int j = 0; j < V; ++j) {
      prow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - lse));
    }
    if (targets[static_cast<size_t>(i)] != ignore_index) {
      total += lse - static_cast<double>(row[targets[static_cast<size_t>(i)]]);
    }
  }
  Tensor L({1});
  L[0] = static_cast<float>(total / counted);
  Var out = push(std::move(L), nullptr);
  const int xi = logits.i, oi = out.i;
  std::vector<int> tgts(targets.begin(), targets.end());
  nodes_[oi].back = [xi, oi, tgts, ignore_index, n, V, counted, probs = std::move(probs)](Tape& t) {
    const float g = t.nodes_[oi].grad[0];
    std::vector<float>& dx = t.acc(xi);
    const float coef = g / static_cast<float>(counted);
    for (int i = 0; i < n; ++i) {
      const int tgt = tgts[static_cast<size_t>(i)];
      if (tgt == ignore_index) continue;
      const float* prow = probs.data() + static_cast<size_t>(i) * V;
      float* drow = dx.data() + static_cast<size_t>(i) * V;
      for (int j = 0; j < V; ++j) drow[j] += coef * prow[j];
      drow[tgt] -= coef;
    }
  };
  return out;
}

Var Tape::bce_logits(Var logits, std::span<const float> labels) {
  const Tensor& X = val(logits);
  if (X.rank() != 1) {
    throw ShapeError("bce_logits: expected rank-1 logits, got " + X.shape_str());
  }
  const int m = X.dim(0);
  if (static_cast<int>(labels.size()) != m) {
    throw ShapeError("bce_logits: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(m) + " logits");
  }
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double x = X[static_cast<size_t>(i)];
    const double y = labels[static_cast<size_t>(i)];
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor L({1});
  L[0] = static_cast<float>(total / m);
  Var out = push(std::move(L), nullptr);
  const int xi = logits.i, oi = out.i;
  std::vector<float> ys(labels.begin(), labels.end());
  nodes_[oi].back = [xi, oi, ys, m](Tape& t) {
    const float g = t.nodes_[oi].grad[0];
    const float* px = t.val(Var{xi}).data().data();
    std::vector<float>& dx = t.acc(xi);
    const float coef = g / static_cast<float>(m);
    for (int i = 0; i < m; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(px[i])));
      dx[static_cast<size_t>(i)] += coef * static_cast<float>(sig - ys[static_cast<size_t>(i)]);
    }
  };
  return out;
}

Var Tape::triplet_hinge(Var sim, float margin) {
  const Tensor& S = val(sim);
  check_rank2(S, "triplet_hinge");
  if (S.dim(0) != S.dim(1) || S.dim(0) < 2) {
    throw ShapeError("triplet_hinge: expected square similarity matrix of order >= 2, got " +
                     S.shape_str());
  }
  const int n = S.dim(0);
  const int terms = 2 * n * (n - 1);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double img_anchor = margin - S.at(i, i) + S.at(i, j);
      const double txt_anchor = margin - S.at(j, j) + S.at(i, j);
      if (img_anchor > 0.0) total += img_anchor;
      if (txt_anchor > 0.0) total += txt_anchor;
    }
  }
  Tensor L({1});
  L[0] = static_cast<float>(total / terms);
  Var out = push(std::move(L), nullptr);
  const int si = sim.i, oi = out.i;
  nodes_[oi].back = [si, oi, n, terms, margin](Tape& t) {
    const float g = t.nodes_[oi].grad[0];
    const Tensor& S = t.val(Var{si});
    std::vector<float>& ds = t.acc(si);
    const float coef = g / static_cast<float>(terms);
    auto at = [n](std::vector<float>& v, int i, int j) -> float& {
      return v[static_cast<size_t>(i) * n + j];
    };
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        if (margin - S.at(i, i) + S.at(i, j) > 0.0f) {
          at(ds, i, j) += coef;
          at(ds, i, i) -= coef;
        }
        if (margin - S.at(j, j) + S.at(i, j) > 0.0f) {
          at(ds, i, j) += coef;
          at(ds, j, j) -= coef;
        }
      }
    }
  };
  return out;
}

void Tape::backward(Var loss) {
  if (ran_backward_) throw ContractError("backward: tape already replayed");
  const Tensor& L = val(loss);
  if (L.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + L.shape_str());
  }
  ran_backward_ = true;
  acc(loss.i)[0] = 1.0f;
  for (size_t idx = nodes_.size(); idx-- > 0;) {
    Node& n = nodes_[idx];
    if (n.touched && n.back) n.back(*this);
  }
  // Fold leaf gradients into their parameter tensors.
  for (Node& n : nodes_) {
    if (n.external && n.touched) {
      n.external->ensure_grad();
      std::vector<float>& g = n.external->grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

float warmup_lr(long step, float base_lr, long warmup_steps) {
  if (warmup_steps <= 0) return base_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr * static_cast<float>(std::min(1.0, frac));
}

float cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine: length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0f;
  return static_cast<float>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

}  // namespace vilsum
