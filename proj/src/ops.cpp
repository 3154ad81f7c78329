#include "fedlgt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedlgt::ops {
namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                   shape_to_string(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": shape " + shape_to_string(a) + " " + why);
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

// y[n, m] += x[n, k] * w[k, m]
void gemm_acc(const double* x, const double* w, double* y, std::size_t n, std::size_t k,
              std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* yr = y + i * m;
    const double* xr = x + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xr[p];
      const double* wr = w + p * m;
      for (std::size_t j = 0; j < m; ++j) yr[j] += xv * wr[j];
    }
  }
}

void check_3d(const char* op, const Tensor& t) {
  if (t.rank() != 3) shape_fail(op, t.shape(), "is not [batch, tokens, width]");
}

}  // namespace

Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  if (A.rank() < 1 || B.rank() != 2 || A.shape().back() != B.dim(0)) {
    shape_fail("matmul", A.shape(), B.shape());
  }
  const std::size_t k = B.dim(0), m = B.dim(1), n = A.size() / k;
  Shape out_shape = A.shape();
  out_shape.back() = m;
  Tensor out(out_shape);
  gemm_acc(A.data().data(), B.data().data(), out.data().data(), n, k, m);
  return tape.record("matmul", std::move(out), {a, b},
                     [a, b, n, k, m](const Tape& t, const Tensor& g, GradBuffer& buf) {
                       const double* av = t.value(a).data().data();
                       const double* bv = t.value(b).data().data();
                       const double* gv = g.data().data();
                       // dA = G * B^T
                       double* ga = buf.at(a).data().data();
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           double acc = 0.0;
                           const double* br = bv + p * m;
                           const double* gr = gv + i * m;
                           for (std::size_t j = 0; j < m; ++j) acc += gr[j] * br[j];
                           ga[i * k + p] += acc;
                         }
                       }
                       // dB = A^T * G
                       double* gb = buf.at(b).data().data();
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           const double x = av[i * k + p];
                           double* gbr = gb + p * m;
                           const double* gr = gv + i * m;
                           for (std::size_t j = 0; j < m; ++j) gbr[j] += x * gr[j];
                         }
                       }
                     });
}

Var matmul_bt(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1)) {
    shape_fail("matmul_bt", A.shape(), B.shape());
  }
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(0);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      out[i * m + j] = acc;
    }
  }
  return tape.record("matmul_bt", std::move(out), {a, b},
                     [a, b, n, k, m](const Tape& t, const Tensor& g, GradBuffer& buf) {
                       const Tensor& A = t.value(a);
                       const Tensor& B = t.value(b);
                       Tensor& ga = buf.at(a);
                       Tensor& gb = buf.at(b);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < m; ++j) {
                           const double gij = g[i * m + j];
                           for (std::size_t p = 0; p < k; ++p) {
                             ga[i * k + p] += gij * B[j * k + p];
                             gb[j * k + p] += gij * A[i * k + p];
                           }
                         }
                       }
                     });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  if (A.shape() != B.shape()) shape_fail("add", A.shape(), B.shape());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return tape.record("add", std::move(out), {a, b},
                     [a, b](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& ga = buf.at(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       Tensor& gb = buf.at(b);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                     });
}

Var mul(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& B = tape.value(b);
  if (A.shape() != B.shape()) shape_fail("mul", A.shape(), B.shape());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return tape.record("mul", std::move(out), {a, b},
                     [a, b](const Tape& t, const Tensor& g, GradBuffer& buf) {
                       const Tensor& A = t.value(a);
                       const Tensor& B = t.value(b);
                       Tensor& ga = buf.at(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
                       Tensor& gb = buf.at(b);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
                     });
}

Var scale(Tape& tape, Var x, double factor) {
  Tensor out = tape.value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return tape.record("scale", std::move(out), {x},
                     [x, factor](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                     });
}

Var add_broadcast(Tape& tape, Var x, Var b) {
  const Tensor& X = tape.value(x);
  const Tensor& Bt = tape.value(b);
  const Shape& xs = X.shape();
  const Shape& bs = Bt.shape();
  if (bs.size() > xs.size() || !std::equal(bs.rbegin(), bs.rend(), xs.rbegin()) || Bt.empty()) {
    shape_fail("add_broadcast", xs, bs);
  }
  const std::size_t block = Bt.size();
  Tensor out = X;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += Bt[i % block];
  return tape.record("add_broadcast", std::move(out), {x, b},
                     [x, b, block](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       Tensor& gb = buf.at(b);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i % block] += g[i];
                     });
}

Var relu(Tape& tape, Var x) {
  Tensor out = tape.value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return tape.record("relu", std::move(out), {x},
                     [x](const Tape& t, const Tensor& g, GradBuffer& buf) {
                       const Tensor& X = t.value(x);
                       Tensor& gx = buf.at(x);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (X[i] > 0.0) gx[i] += g[i];
                       }
                     });
}

Var sigmoid(Tape& tape, Var x) {
  Tensor out = tape.value(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = out[i];
    // Stable on both tails.
    out[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  Tensor saved = out;
  return tape.record("sigmoid", std::move(out), {x},
                     [x, saved = std::move(saved)](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gx[i] += g[i] * saved[i] * (1.0 - saved[i]);
                       }
                     });
}

Var softmax(Tape& tape, Var x) {
  const Tensor& X = tape.value(x);
  if (X.empty()) shape_fail("softmax", X.shape(), "is empty");
  const std::size_t d = last_dim(X.shape());
  const std::size_t rows = X.size() / d;
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data().data() + r * d;
    double* yr = out.data().data() + r * d;
    double mx = xr[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < d; ++j) yr[j] /= z;
  }
  Tensor saved = out;
  return tape.record("softmax", std::move(out), {x},
                     [x, d, rows, saved = std::move(saved)](const Tape&, const Tensor& g,
                                                            GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * saved[r * d + j];
                         for (std::size_t j = 0; j < d; ++j) {
                           gx[r * d + j] += saved[r * d + j] * (g[r * d + j] - dot);
                         }
                       }
                     });
}

Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = tape.value(x);
  const Tensor& G = tape.value(gamma);
  const Tensor& Bt = tape.value(beta);
  const std::size_t d = last_dim(X.shape());
  if (X.empty() || G.rank() != 1 || G.dim(0) != d || Bt.shape() != G.shape()) {
    shape_fail("layer_norm", X.shape(), G.shape());
  }
  const std::size_t rows = X.size() / d;
  Tensor out(X.shape());
  Tensor xhat(X.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * G[j] + Bt[j];
    }
  }
  return tape.record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tape& t, const Tensor& g, GradBuffer& buf) {
        const Tensor& G = t.value(gamma);
        Tensor& gx = buf.at(x);
        Tensor& gg = buf.at(gamma);
        Tensor& gbeta = buf.at(beta);
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gi = g[r * d + j];
            gg[j] += gi * xhat[r * d + j];
            gbeta[j] += gi;
            dh[j] = gi * G[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * xhat[r * d + j];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[r * d + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      });
}

Var attention(Tape& tape, Var q, Var k, Var v, std::size_t heads) {
  const Tensor& Q = tape.value(q);
  const Tensor& K = tape.value(k);
  const Tensor& V = tape.value(v);
  check_3d("attention", Q);
  if (K.shape() != Q.shape()) shape_fail("attention", Q.shape(), K.shape());
  if (V.shape() != Q.shape()) shape_fail("attention", Q.shape(), V.shape());
  const std::size_t B = Q.dim(0), T = Q.dim(1), D = Q.dim(2);
  if (heads == 0 || D % heads != 0) {
    shape_fail("attention", Q.shape(), "width not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = D / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs layout [B, heads, T, T]
  Tensor probs({B, heads, T, T});
  Tensor out(Q.shape());
  std::vector<double> row(T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = Q.data().data() + (b * T + i) * D + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < T; ++j) {
          const double* kj = K.data().data() + (b * T + j) * D + h * dh;
          double s = 0.0;
          for (std::size_t p = 0; p < dh; ++p) s += qi[p] * kj[p];
          row[j] = s * sc;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        double* pr = probs.data().data() + ((b * heads + h) * T + i) * T;
        double* oi = out.data().data() + (b * T + i) * D + h * dh;
        for (std::size_t j = 0; j < T; ++j) {
          pr[j] = row[j] / z;
          const double* vj = V.data().data() + (b * T + j) * D + h * dh;
          for (std::size_t p = 0; p < dh; ++p) oi[p] += pr[j] * vj[p];
        }
      }
    }
  }
  return tape.record(
      "attention", std::move(out), {q, k, v},
      [q, k, v, B, T, D, heads, dh, sc, probs = std::move(probs)](const Tape& t, const Tensor& g,
                                                                  GradBuffer& buf) {
        const double* Qd = t.value(q).data().data();
        const double* Kd = t.value(k).data().data();
        const double* Vd = t.value(v).data().data();
        double* gq = buf.at(q).data().data();
        double* gk = buf.at(k).data().data();
        double* gv = buf.at(v).data().data();
        std::vector<double> dp(T);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
              const double* pr = probs.data().data() + ((b * heads + h) * T + i) * T;
              const double* go = g.data().data() + (b * T + i) * D + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < T; ++j) {
                const double* vj = Vd + (b * T + j) * D + h * dh;
                double* gvj = gv + (b * T + j) * D + h * dh;
                double s = 0.0;
                for (std::size_t p = 0; p < dh; ++p) {
                  s += go[p] * vj[p];
                  gvj[p] += pr[j] * go[p];
                }
                dp[j] = s;
                dot += s * pr[j];
              }
              const double* qi = Qd + (b * T + i) * D + h * dh;
              double* gqi = gq + (b * T + i) * D + h * dh;
              for (std::size_t j = 0; j < T; ++j) {
                const double ds = pr[j] * (dp[j] - dot) * sc;
                const double* kj = Kd + (b * T + j) * D + h * dh;
                double* gkj = gk + (b * T + j) * D + h * dh;
                for (std::size_t p = 0; p < dh; ++p) {
                  gqi[p] += ds * kj[p];
                  gkj[p] += ds * qi[p];
                }
              }
            }
          }
        }
      });
}

Var concat_tokens(Tape& tape, Var a, Var b) {
  const Tensor& A = tape.value(a);
  const Tensor& Bt = tape.value(b);
  check_3d("concat_tokens", A);
  check_3d("concat_tokens", Bt);
  if (A.dim(0) != Bt.dim(0) || A.dim(2) != Bt.dim(2)) shape_fail("concat_tokens", A.shape(), Bt.shape());
  const std::size_t n = A.dim(0), ta = A.dim(1), tb = Bt.dim(1), d = A.dim(2);
  Tensor out({n, ta + tb, d});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(A.data().data() + s * ta * d, ta * d, out.data().data() + s * (ta + tb) * d);
    std::copy_n(Bt.data().data() + s * tb * d, tb * d, out.data().data() + (s * (ta + tb) + ta) * d);
  }
  return tape.record("concat_tokens", std::move(out), {a, b},
                     [a, b, n, ta, tb, d](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& ga = buf.at(a);
                       Tensor& gb = buf.at(b);
                       for (std::size_t s = 0; s < n; ++s) {
                         const double* gs = g.data().data() + s * (ta + tb) * d;
                         for (std::size_t i = 0; i < ta * d; ++i) ga[s * ta * d + i] += gs[i];
                         for (std::size_t i = 0; i < tb * d; ++i) gb[s * tb * d + i] += gs[ta * d + i];
                       }
                     });
}

Var slice_tokens(Tape& tape, Var x, std::size_t start, std::size_t count) {
  const Tensor& X = tape.value(x);
  check_3d("slice_tokens", X);
  const std::size_t n = X.dim(0), T = X.dim(1), d = X.dim(2);
  if (start + count > T) {
    shape_fail("slice_tokens", X.shape(),
               "has no tokens [" + std::to_string(start) + ", " + std::to_string(start + count) + ")");
  }
  Tensor out({n, count, d});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(X.data().data() + (s * T + start) * d, count * d, out.data().data() + s * count * d);
  }
  return tape.record("slice_tokens", std::move(out), {x},
                     [x, n, T, d, start, count](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t s = 0; s < n; ++s) {
                         for (std::size_t i = 0; i < count * d; ++i) {
                           gx[(s * T + start) * d + i] += g[s * count * d + i];
                         }
                       }
                     });
}

Var mean_tokens(Tape& tape, Var x, std::size_t start, std::size_t count) {
  const Tensor& X = tape.value(x);
  check_3d("mean_tokens", X);
  const std::size_t n = X.dim(0), T = X.dim(1), d = X.dim(2);
  if (count == 0 || start + count > T) shape_fail("mean_tokens", X.shape(), "has too few tokens");
  const double inv = 1.0 / static_cast<double>(count);
  Tensor out({n, d});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = start; t < start + count; ++t) {
      for (std::size_t j = 0; j < d; ++j) out[s * d + j] += X[(s * T + t) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[s * d + j] *= inv;
  }
  return tape.record("mean_tokens", std::move(out), {x},
                     [x, n, T, d, start, count, inv](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t s = 0; s < n; ++s) {
                         for (std::size_t t = start; t < start + count; ++t) {
                           for (std::size_t j = 0; j < d; ++j) {
                             gx[(s * T + t) * d + j] += g[s * d + j] * inv;
                           }
                         }
                       }
                     });
}

Var embedding_lookup(Tape& tape, Var table, std::span<const std::size_t> indices, Shape prefix) {
  const Tensor& W = tape.value(table);
  if (W.rank() != 2) shape_fail("embedding_lookup", W.shape(), "is not a [rows, width] table");
  if (shape_numel(prefix) != indices.size()) {
    shape_fail("embedding_lookup", prefix, "does not match " + std::to_string(indices.size()) + " indices");
  }
  const std::size_t rows = W.dim(0), d = W.dim(1);
  for (auto idx : indices) {
    if (idx >= rows) {
      shape_fail("embedding_lookup", W.shape(), "has no row " + std::to_string(idx));
    }
  }
  Shape out_shape = std::move(prefix);
  out_shape.push_back(d);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(W.data().data() + indices[i] * d, d, out.data().data() + i * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return tape.record("embedding_lookup", std::move(out), {table},
                     [table, d, idx = std::move(idx)](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gw = buf.at(table);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) gw[idx[i] * d + j] += g[i * d + j];
                       }
                     });
}

Var broadcast_batch(Tape& tape, Var x, std::size_t batch) {
  const Tensor& X = tape.value(x);
  if (X.rank() != 2) shape_fail("broadcast_batch", X.shape(), "is not [rows, width]");
  const std::size_t block = X.size();
  Tensor out({batch, X.dim(0), X.dim(1)});
  for (std::size_t s = 0; s < batch; ++s) std::copy_n(X.data().data(), block, out.data().data() + s * block);
  return tape.record("broadcast_batch", std::move(out), {x},
                     [x, batch, block](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t s = 0; s < batch; ++s) {
                         for (std::size_t i = 0; i < block; ++i) gx[i] += g[s * block + i];
                       }
                     });
}

Var classwise_dot(Tape& tape, Var h, Var w) {
  const Tensor& H = tape.value(h);
  const Tensor& W = tape.value(w);
  check_3d("classwise_dot", H);
  if (W.rank() != 2 || W.dim(0) != H.dim(1) || W.dim(1) != H.dim(2)) {
    shape_fail("classwise_dot", H.shape(), W.shape());
  }
  const std::size_t n = H.dim(0), C = H.dim(1), d = H.dim(2);
  Tensor out({n, C});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += H[(s * C + c) * d + j] * W[c * d + j];
      out[s * C + c] = acc;
    }
  }
  return tape.record("classwise_dot", std::move(out), {h, w},
                     [h, w, n, C, d](const Tape& t, const Tensor& g, GradBuffer& buf) {
                       const Tensor& H = t.value(h);
                       const Tensor& W = t.value(w);
                       Tensor& gh = buf.at(h);
                       Tensor& gw = buf.at(w);
                       for (std::size_t s = 0; s < n; ++s) {
                         for (std::size_t c = 0; c < C; ++c) {
                           const double gc = g[s * C + c];
                           for (std::size_t j = 0; j < d; ++j) {
                             gh[(s * C + c) * d + j] += gc * W[c * d + j];
                             gw[c * d + j] += gc * H[(s * C + c) * d + j];
                           }
                         }
                       }
                     });
}

Var reshape(Tape& tape, Var x, Shape shape) {
  Tensor out = tape.value(x).reshaped(std::move(shape));
  return tape.record("reshape", std::move(out), {x},
                     [x](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Var sum(Tape& tape, Var x) {
  const Tensor& X = tape.value(x);
  double acc = 0.0;
  for (double v : X.data()) acc += v;
  return tape.record("sum", Tensor::scalar(acc), {x},
                     [x](const Tape&, const Tensor& g, GradBuffer& buf) {
                       Tensor& gx = buf.at(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                     });
}

Var mean(Tape& tape, Var x) {
  const std::size_t n = tape.value(x).size();
  if (n == 0) shape_fail("mean", tape.value(x).shape(), "is empty");
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(n));
}

Var masked_bce_with_logits(Tape& tape, Var logits, const Tensor& targets, const Tensor& mask,
                           double normalizer) {
  const Tensor& Z = tape.value(logits);
  if (targets.shape() != Z.shape()) shape_fail("masked_bce_with_logits", Z.shape(), targets.shape());
  if (mask.shape() != Z.shape()) shape_fail("masked_bce_with_logits", Z.shape(), mask.shape());
  if (!(normalizer > 0.0)) throw std::invalid_argument("masked_bce_with_logits: normalizer must be > 0");
  double acc = 0.0;
  for (std::size_t i = 0; i < Z.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double z = Z[i];
    // -[y ln s(z) + (1-y) ln(1 - s(z))] = max(z,0) - z y + ln(1 + e^{-|z|})
    acc += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return tape.record(
      "masked_bce_with_logits", Tensor::scalar(acc / normalizer), {logits},
      [logits, targets, mask, normalizer](const Tape& t, const Tensor& g, GradBuffer& buf) {
        const Tensor& Z = t.value(logits);
        Tensor& gz = buf.at(logits);
        const double f = g[0] / normalizer;
        for (std::size_t i = 0; i < Z.size(); ++i) {
          if (mask[i] == 0.0) continue;
          const double z = Z[i];
          const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
          gz[i] += f * (s - targets[i]);
        }
      });
}

}  // namespace fedlgt::ops
