#include "maskprop/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace maskprop::ag {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

bool any_grad(const std::vector<NodeP>& ps) {
  for (const auto& p : ps)
    if (p->requires_grad) return true;
  return false;
}

void check_rank4(const NodeP& x, const char* who) {
  require(x->val.rank() == 4, std::string(who) + ": expected rank-4 tensor, got " + x->val.shape_str());
}

// 'same' padding split for kernel k: total pad k-1, more on the left for
// even kernels so output index i reads inputs centered at i.
int pad_lo(int k) { return (k - 1) / 2; }

}  // namespace

NodeP make_param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->grad = Tensor(t.dims);
  n->val = std::move(t);
  n->requires_grad = true;
  return n;
}

NodeP make_const(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = false;
  return n;
}

void zero_grad(const NodeP& n) { n->grad.fill(0.0); }

NodeP Tape::record(Tensor val, std::vector<NodeP> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  if (!grad_enabled_) {
    n->val = std::move(val);
    return n;
  }
  n->requires_grad = any_grad(parents);
  if (n->requires_grad) {
    n->grad = Tensor(val.dims);
    n->backprop = std::move(bw);
  }
  n->val = std::move(val);
  n->parents = std::move(parents);
  order_.push_back(n);
  return n;
}

NodeP Tape::constant(Tensor t) { return make_const(std::move(t)); }

void Tape::backward(const NodeP& root) {
  require(root->val.numel() == 1, "backward: root must be scalar");
  require(root->requires_grad, "backward: root does not depend on any parameter");
  root->grad.fill(1.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (n.requires_grad && n.backprop) n.backprop(n);
  }
}

// ---------------------------------------------------------------------------
// elementwise / shape
// ---------------------------------------------------------------------------

NodeP add(Tape& tp, NodeP a, NodeP b) {
  require(a->val.same_shape(b->val), "add: shape mismatch " + a->val.shape_str() + " vs " + b->val.shape_str());
  Tensor out(a->val.dims);
  for (long i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] + b->val.v[i];
  return tp.record(std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *n.parents[k];
      if (!p.requires_grad) continue;
      for (long i = 0; i < n.grad.numel(); ++i) p.grad.v[i] += n.grad.v[i];
    }
  });
}

NodeP sub(Tape& tp, NodeP a, NodeP b) {
  require(a->val.same_shape(b->val), "sub: shape mismatch");
  Tensor out(a->val.dims);
  for (long i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] - b->val.v[i];
  return tp.record(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    for (long i = 0; i < n.grad.numel(); ++i) {
      if (pa.requires_grad) pa.grad.v[i] += n.grad.v[i];
      if (pb.requires_grad) pb.grad.v[i] -= n.grad.v[i];
    }
  });
}

NodeP mul(Tape& tp, NodeP a, NodeP b) {
  require(a->val.same_shape(b->val), "mul: shape mismatch");
  Tensor out(a->val.dims);
  for (long i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] * b->val.v[i];
  return tp.record(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    for (long i = 0; i < n.grad.numel(); ++i) {
      if (pa.requires_grad) pa.grad.v[i] += n.grad.v[i] * pb.val.v[i];
      if (pb.requires_grad) pb.grad.v[i] += n.grad.v[i] * pa.val.v[i];
    }
  });
}

NodeP scale(Tape& tp, NodeP a, double s) {
  Tensor out(a->val.dims);
  for (long i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] * s;
  return tp.record(std::move(out), {a}, [s](Node& n) {
    Node& p = *n.parents[0];
    for (long i = 0; i < n.grad.numel(); ++i) p.grad.v[i] += n.grad.v[i] * s;
  });
}

NodeP add_scalar(Tape& tp, NodeP a, double s) {
  Tensor out(a->val.dims);
  for (long i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] + s;
  return tp.record(std::move(out), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    for (long i = 0; i < n.grad.numel(); ++i) p.grad.v[i] += n.grad.v[i];
  });
}

NodeP elu(Tape& tp, NodeP x) {
  Tensor out(x->val.dims);
  for (long i = 0; i < out.numel(); ++i) {
    const double xv = x->val.v[i];
    out.v[i] = xv > 0.0 ? xv : std::expm1(xv);
  }
  return tp.record(std::move(out), {x}, [](Node& n) {
    Node& p = *n.parents[0];
    for (long i = 0; i < n.grad.numel(); ++i) {
      const double xv = p.val.v[i];
      p.grad.v[i] += n.grad.v[i] * (xv > 0.0 ? 1.0 : n.val.v[i] + 1.0);
    }
  });
}

NodeP sigmoid(Tape& tp, NodeP x) {
  Tensor out(x->val.dims);
  for (long i = 0; i < out.numel(); ++i) out.v[i] = 1.0 / (1.0 + std::exp(-x->val.v[i]));
  return tp.record(std::move(out), {x}, [](Node& n) {
    Node& p = *n.parents[0];
    for (long i = 0; i < n.grad.numel(); ++i) {
      const double y = n.val.v[i];
      p.grad.v[i] += n.grad.v[i] * y * (1.0 - y);
    }
  });
}

NodeP tanh_op(Tape& tp, NodeP x) {
  Tensor out(x->val.dims);
  for (long i = 0; i < out.numel(); ++i) out.v[i] = std::tanh(x->val.v[i]);
  return tp.record(std::move(out), {x}, [](Node& n) {
    Node& p = *n.parents[0];
    for (long i = 0; i < n.grad.numel(); ++i) {
      const double y = n.val.v[i];
      p.grad.v[i] += n.grad.v[i] * (1.0 - y * y);
    }
  });
}

NodeP softmax_c(Tape& tp, NodeP x) {
  const int c = x->val.dims.back();
  Tensor out(x->val.dims);
  const long rows = x->val.numel() / c;
  for (long r = 0; r < rows; ++r) {
    const double* xv = &x->val.v[r * c];
    double* ov = &out.v[r * c];
    double m = xv[0];
    for (int i = 1; i < c; ++i) m = std::max(m, xv[i]);
    double z = 0.0;
    for (int i = 0; i < c; ++i) {
      ov[i] = std::exp(xv[i] - m);
      z += ov[i];
    }
    for (int i = 0; i < c; ++i) ov[i] /= z;
  }
  return tp.record(std::move(out), {x}, [c](Node& n) {
    Node& p = *n.parents[0];
    const long rows = n.val.numel() / c;
    for (long r = 0; r < rows; ++r) {
      const double* y = &n.val.v[r * c];
      const double* dy = &n.grad.v[r * c];
      double dotv = 0.0;
      for (int i = 0; i < c; ++i) dotv += dy[i] * y[i];
      for (int i = 0; i < c; ++i) p.grad.v[r * c + i] += y[i] * (dy[i] - dotv);
    }
  });
}

NodeP concat_c(Tape& tp, NodeP a, NodeP b) {
  check_rank4(a, "concat_c");
  check_rank4(b, "concat_c");
  for (int i = 0; i < 3; ++i)
    require(a->val.dims[i] == b->val.dims[i], "concat_c: spatial shape mismatch");
  const int ca = a->val.dims[3], cb = b->val.dims[3];
  Tensor out({a->val.dims[0], a->val.dims[1], a->val.dims[2], ca + cb});
  const long pos = a->val.numel() / ca;
  for (long r = 0; r < pos; ++r) {
    std::copy_n(&a->val.v[r * ca], ca, &out.v[r * (ca + cb)]);
    std::copy_n(&b->val.v[r * cb], cb, &out.v[r * (ca + cb) + ca]);
  }
  return tp.record(std::move(out), {a, b}, [ca, cb](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    const long pos = n.val.numel() / (ca + cb);
    for (long r = 0; r < pos; ++r) {
      const double* g = &n.grad.v[r * (ca + cb)];
      if (pa.requires_grad)
        for (int i = 0; i < ca; ++i) pa.grad.v[r * ca + i] += g[i];
      if (pb.requires_grad)
        for (int i = 0; i < cb; ++i) pb.grad.v[r * cb + i] += g[ca + i];
    }
  });
}

NodeP slice_c(Tape& tp, NodeP x, int c0, int c1) {
  check_rank4(x, "slice_c");
  const int c = x->val.dims[3];
  require(0 <= c0 && c0 < c1 && c1 <= c, "slice_c: bad channel range");
  const int cs = c1 - c0;
  Tensor out({x->val.dims[0], x->val.dims[1], x->val.dims[2], cs});
  const long pos = x->val.numel() / c;
  for (long r = 0; r < pos; ++r) std::copy_n(&x->val.v[r * c + c0], cs, &out.v[r * cs]);
  return tp.record(std::move(out), {x}, [c, c0, cs](Node& n) {
    Node& p = *n.parents[0];
    const long pos = p.val.numel() / c;
    for (long r = 0; r < pos; ++r)
      for (int i = 0; i < cs; ++i) p.grad.v[r * c + c0 + i] += n.grad.v[r * cs + i];
  });
}

NodeP slice_t(Tape& tp, NodeP x, int t) {
  check_rank4(x, "slice_t");
  require(0 <= t && t < x->val.dims[0], "slice_t: index out of range");
  const long stride = x->val.numel() / x->val.dims[0];
  Tensor out({1, x->val.dims[1], x->val.dims[2], x->val.dims[3]});
  std::copy_n(&x->val.v[t * stride], stride, out.v.data());
  return tp.record(std::move(out), {x}, [t, stride](Node& n) {
    Node& p = *n.parents[0];
    for (long i = 0; i < stride; ++i) p.grad.v[t * stride + i] += n.grad.v[i];
  });
}

NodeP concat_t(Tape& tp, const std::vector<NodeP>& xs) {
  require(!xs.empty(), "concat_t: empty list");
  int tt = 0;
  for (const auto& x : xs) {
    check_rank4(x, "concat_t");
    require(x->val.dims[1] == xs[0]->val.dims[1] && x->val.dims[2] == xs[0]->val.dims[2] &&
                x->val.dims[3] == xs[0]->val.dims[3],
            "concat_t: shape mismatch");
    tt += x->val.dims[0];
  }
  Tensor out({tt, xs[0]->val.dims[1], xs[0]->val.dims[2], xs[0]->val.dims[3]});
  long off = 0;
  for (const auto& x : xs) {
    std::copy_n(x->val.v.data(), x->val.numel(), &out.v[off]);
    off += x->val.numel();
  }
  return tp.record(std::move(out), std::vector<NodeP>(xs), [](Node& n) {
    long off = 0;
    for (auto& pp : n.parents) {
      Node& p = *pp;
      if (p.requires_grad)
        for (long i = 0; i < p.val.numel(); ++i) p.grad.v[i] += n.grad.v[off + i];
      off += p.val.numel();
    }
  });
}

NodeP pad_channels_to(Tape& tp, NodeP x, int c_total) {
  check_rank4(x, "pad_channels_to");
  const int c = x->val.dims[3];
  require(c_total >= c, "pad_channels_to: target narrower than input");
  if (c_total == c) return x;
  Tensor zeros({x->val.dims[0], x->val.dims[1], x->val.dims[2], c_total - c});
  return concat_c(tp, x, tp.constant(std::move(zeros)));
}

// ---------------------------------------------------------------------------
// reductions and scalar arithmetic
// ---------------------------------------------------------------------------

NodeP dot(Tape& tp, NodeP a, NodeP b) {
  require(a->val.same_shape(b->val), "dot: shape mismatch");
  double s = 0.0;
  for (long i = 0; i < a->val.numel(); ++i) s += a->val.v[i] * b->val.v[i];
  return tp.record(Tensor::scalar(s), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    const double g = n.grad.v[0];
    for (long i = 0; i < pa.val.numel(); ++i) {
      if (pa.requires_grad) pa.grad.v[i] += g * pb.val.v[i];
      if (pb.requires_grad) pb.grad.v[i] += g * pa.val.v[i];
    }
  });
}

NodeP sum_sq(Tape& tp, NodeP a) {
  double s = 0.0;
  for (long i = 0; i < a->val.numel(); ++i) s += a->val.v[i] * a->val.v[i];
  return tp.record(Tensor::scalar(s), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    const double g = n.grad.v[0];
    for (long i = 0; i < p.val.numel(); ++i) p.grad.v[i] += g * 2.0 * p.val.v[i];
  });
}

NodeP s_add(Tape& tp, NodeP a, NodeP b) { return add(tp, a, b); }
NodeP s_sub(Tape& tp, NodeP a, NodeP b) { return sub(tp, a, b); }
NodeP s_mul(Tape& tp, NodeP a, NodeP b) { return mul(tp, a, b); }

NodeP s_div(Tape& tp, NodeP a, NodeP b) {
  require(a->val.numel() == 1 && b->val.numel() == 1, "s_div: scalars only");
  return tp.record(Tensor::scalar(a->val.v[0] / b->val.v[0]), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    const double g = n.grad.v[0];
    const double bv = pb.val.v[0];
    if (pa.requires_grad) pa.grad.v[0] += g / bv;
    if (pb.requires_grad) pb.grad.v[0] -= g * pa.val.v[0] / (bv * bv);
  });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

namespace {

// Gathers 'same'-padded patches of x into col (rows = t*y*x positions,
// cols = kt*ky*kx*cin).
void im2col(const Tensor& x, int kt, int ky, int kx, std::vector<double>& col) {
  const int T = x.dims[0], Y = x.dims[1], X = x.dims[2], C = x.dims[3];
  const int pt = pad_lo(kt), py = pad_lo(ky), px = pad_lo(kx);
  const long K = static_cast<long>(kt) * ky * kx * C;
  col.assign(static_cast<std::size_t>(T) * Y * X * K, 0.0);
  long row = 0;
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < Y; ++y)
      for (int xx = 0; xx < X; ++xx, ++row) {
        double* dst = &col[row * K];
        for (int a = 0; a < kt; ++a) {
          const int ts = t + a - pt;
          if (ts < 0 || ts >= T) {
            dst += static_cast<long>(ky) * kx * C;
            continue;
          }
          for (int b = 0; b < ky; ++b) {
            const int ys = y + b - py;
            if (ys < 0 || ys >= Y) {
              dst += static_cast<long>(kx) * C;
              continue;
            }
            for (int g = 0; g < kx; ++g) {
              const int xs = xx + g - px;
              if (xs >= 0 && xs < X) std::copy_n(&x.v[x.idx4(ts, ys, xs, 0)], C, dst);
              dst += C;
            }
          }
        }
      }
}

// Scatter-adds col-layout gradients back onto the input grid.
void col2im_acc(const std::vector<double>& col, int kt, int ky, int kx, Tensor& gx) {
  const int T = gx.dims[0], Y = gx.dims[1], X = gx.dims[2], C = gx.dims[3];
  const int pt = pad_lo(kt), py = pad_lo(ky), px = pad_lo(kx);
  const long K = static_cast<long>(kt) * ky * kx * C;
  long row = 0;
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < Y; ++y)
      for (int xx = 0; xx < X; ++xx, ++row) {
        const double* src = &col[row * K];
        for (int a = 0; a < kt; ++a) {
          const int ts = t + a - pt;
          if (ts < 0 || ts >= T) {
            src += static_cast<long>(ky) * kx * C;
            continue;
          }
          for (int b = 0; b < ky; ++b) {
            const int ys = y + b - py;
            if (ys < 0 || ys >= Y) {
              src += static_cast<long>(kx) * C;
              continue;
            }
            for (int g = 0; g < kx; ++g) {
              const int xs = xx + g - px;
              if (xs >= 0 && xs < X) {
                double* dst = &gx.v[gx.idx4(ts, ys, xs, 0)];
                for (int c = 0; c < C; ++c) dst[c] += src[c];
              }
              src += C;
            }
          }
        }
      }
}

}  // namespace

NodeP conv_full(Tape& tp, NodeP x, NodeP w, NodeP b, int kt, int ky, int kx) {
  check_rank4(x, "conv_full");
  const int C = x->val.dims[3];
  const long K = static_cast<long>(kt) * ky * kx * C;
  require(w->val.numel() % K == 0 && w->val.numel() >= K, "conv_full: weight size mismatch");
  const int Co = static_cast<int>(w->val.numel() / K);
  require(b->val.numel() == Co, "conv_full: bias size mismatch");
  const long M = static_cast<long>(x->val.dims[0]) * x->val.dims[1] * x->val.dims[2];

  Tensor out({x->val.dims[0], x->val.dims[1], x->val.dims[2], Co});
  {
    std::vector<double> col;
    im2col(x->val, kt, ky, kx, col);
    CMatMap A(col.data(), M, K);
    CMatMap W(w->val.v.data(), K, Co);
    MatMap O(out.v.data(), M, Co);
    O.noalias() = A * W;
    for (long r = 0; r < M; ++r)
      for (int c = 0; c < Co; ++c) out.v[r * Co + c] += b->val.v[c];
  }
  return tp.record(std::move(out), {x, w, b}, [kt, ky, kx, K, Co, M](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    Node& pb = *n.parents[2];
    std::vector<double> col;
    im2col(px.val, kt, ky, kx, col);  // recomputed; not stored on the tape
    CMatMap A(col.data(), M, K);
    CMatMap dY(n.grad.v.data(), M, Co);
    if (pw.requires_grad) {
      MatMap dW(pw.grad.v.data(), K, Co);
      dW.noalias() += A.transpose() * dY;
    }
    if (pb.requires_grad) {
      for (long r = 0; r < M; ++r)
        for (int c = 0; c < Co; ++c) pb.grad.v[c] += n.grad.v[r * Co + c];
    }
    if (px.requires_grad) {
      std::vector<double> dcol(static_cast<std::size_t>(M) * K);
      CMatMap W(pw.val.v.data(), K, Co);
      MatMap dA(dcol.data(), M, K);
      dA.noalias() = dY * W.transpose();
      col2im_acc(dcol, kt, ky, kx, px.grad);
    }
  });
}

NodeP conv_dw3(Tape& tp, NodeP x, NodeP w, int dil) {
  check_rank4(x, "conv_dw3");
  const int T = x->val.dims[0], Y = x->val.dims[1], X = x->val.dims[2], C = x->val.dims[3];
  require(w->val.rank() == 4 && w->val.dims[0] == C && w->val.dims[1] == 3 && w->val.dims[2] == 3 &&
              w->val.dims[3] == 3,
          "conv_dw3: weight must be (c,3,3,3) matching input channels");
  Tensor out({T, Y, X, C});
  auto run = [T, Y, X, C, dil](const Tensor& xin, const Tensor& wt, Tensor& o) {
    for (int t = 0; t < T; ++t)
      for (int a = -1; a <= 1; ++a) {
        const int ts = t + a * dil;
        if (ts < 0 || ts >= T) continue;
        for (int y = 0; y < Y; ++y)
          for (int bq = -1; bq <= 1; ++bq) {
            const int ys = y + bq * dil;
            if (ys < 0 || ys >= Y) continue;
            for (int xx = 0; xx < X; ++xx)
              for (int g = -1; g <= 1; ++g) {
                const int xs = xx + g * dil;
                if (xs < 0 || xs >= X) continue;
                const double* src = &xin.v[xin.idx4(ts, ys, xs, 0)];
                double* dst = &o.v[o.idx4(t, y, xx, 0)];
                const long wo = ((a + 1) * 3 + (bq + 1)) * 3 + (g + 1);
                for (int c = 0; c < C; ++c) dst[c] += src[c] * wt.v[c * 27 + wo];
              }
          }
      }
  };
  run(x->val, w->val, out);
  return tp.record(std::move(out), {x, w}, [T, Y, X, C, dil](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    for (int t = 0; t < T; ++t)
      for (int a = -1; a <= 1; ++a) {
        const int ts = t + a * dil;
        if (ts < 0 || ts >= T) continue;
        for (int y = 0; y < Y; ++y)
          for (int bq = -1; bq <= 1; ++bq) {
            const int ys = y + bq * dil;
            if (ys < 0 || ys >= Y) continue;
            for (int xx = 0; xx < X; ++xx)
              for (int g = -1; g <= 1; ++g) {
                const int xs = xx + g * dil;
                if (xs < 0 || xs >= X) continue;
                const long wo = ((a + 1) * 3 + (bq + 1)) * 3 + (g + 1);
                const double* gout = &n.grad.v[n.grad.idx4(t, y, xx, 0)];
                if (px.requires_grad) {
                  double* gx = &px.grad.v[px.grad.idx4(ts, ys, xs, 0)];
                  for (int c = 0; c < C; ++c) gx[c] += gout[c] * pw.val.v[c * 27 + wo];
                }
                if (pw.requires_grad) {
                  const double* src = &px.val.v[px.val.idx4(ts, ys, xs, 0)];
                  for (int c = 0; c < C; ++c) pw.grad.v[c * 27 + wo] += gout[c] * src[c];
                }
              }
          }
      }
  });
}

NodeP conv_pw(Tape& tp, NodeP x, NodeP w, NodeP b) {
  check_rank4(x, "conv_pw");
  const int C = x->val.dims[3];
  require(w->val.rank() == 2 && w->val.dims[0] == C, "conv_pw: weight must be (cin,cout)");
  const int Co = w->val.dims[1];
  require(b->val.numel() == Co, "conv_pw: bias size mismatch");
  const long M = x->val.numel() / C;
  Tensor out({x->val.dims[0], x->val.dims[1], x->val.dims[2], Co});
  {
    CMatMap A(x->val.v.data(), M, C);
    CMatMap W(w->val.v.data(), C, Co);
    MatMap O(out.v.data(), M, Co);
    O.noalias() = A * W;
    for (long r = 0; r < M; ++r)
      for (int c = 0; c < Co; ++c) out.v[r * Co + c] += b->val.v[c];
  }
  return tp.record(std::move(out), {x, w, b}, [C, Co, M](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    Node& pb = *n.parents[2];
    CMatMap dY(n.grad.v.data(), M, Co);
    if (pw.requires_grad) {
      CMatMap A(px.val.v.data(), M, C);
      MatMap dW(pw.grad.v.data(), C, Co);
      dW.noalias() += A.transpose() * dY;
    }
    if (pb.requires_grad)
      for (long r = 0; r < M; ++r)
        for (int c = 0; c < Co; ++c) pb.grad.v[c] += n.grad.v[r * Co + c];
    if (px.requires_grad) {
      CMatMap W(pw.val.v.data(), C, Co);
      MatMap dX(px.grad.v.data(), M, C);
      dX.noalias() += dY * W.transpose();
    }
  });
}

NodeP conv_tr22(Tape& tp, NodeP x, NodeP w, NodeP b) {
  check_rank4(x, "conv_tr22");
  const int T = x->val.dims[0], Y = x->val.dims[1], X = x->val.dims[2], C = x->val.dims[3];
  require(w->val.rank() == 4 && w->val.dims[0] == C && w->val.dims[1] == 2 && w->val.dims[2] == 2,
          "conv_tr22: weight must be (cin,2,2,cout)");
  const int Co = w->val.dims[3];
  require(b->val.numel() == Co, "conv_tr22: bias size mismatch");
  const long M = x->val.numel() / C;
  // block(m, (ry*2+rx)*Co + co): the four output sub-positions of source m
  std::vector<double> block(static_cast<std::size_t>(M) * 4 * Co);
  {
    CMatMap A(x->val.v.data(), M, C);
    CMatMap W(w->val.v.data(), C, 4 * Co);
    MatMap O(block.data(), M, 4 * Co);
    O.noalias() = A * W;
  }
  Tensor out({T, 2 * Y, 2 * X, Co});
  long m = 0;
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < Y; ++y)
      for (int xx = 0; xx < X; ++xx, ++m)
        for (int ry = 0; ry < 2; ++ry)
          for (int rx = 0; rx < 2; ++rx) {
            double* dst = &out.v[out.idx4(t, 2 * y + ry, 2 * xx + rx, 0)];
            const double* src = &block[(m * 4 + ry * 2 + rx) * Co];
            for (int c = 0; c < Co; ++c) dst[c] = src[c] + b->val.v[c];
          }
  return tp.record(std::move(out), {x, w, b}, [T, Y, X, C, Co, M](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    Node& pb = *n.parents[2];
    std::vector<double> dblock(static_cast<std::size_t>(M) * 4 * Co);
    long m = 0;
    for (int t = 0; t < T; ++t)
      for (int y = 0; y < Y; ++y)
        for (int xx = 0; xx < X; ++xx, ++m)
          for (int ry = 0; ry < 2; ++ry)
            for (int rx = 0; rx < 2; ++rx) {
              const double* g = &n.grad.v[n.grad.idx4(t, 2 * y + ry, 2 * xx + rx, 0)];
              std::copy_n(g, Co, &dblock[(m * 4 + ry * 2 + rx) * Co]);
            }
    CMatMap dB(dblock.data(), M, 4 * Co);
    if (pw.requires_grad) {
      CMatMap A(px.val.v.data(), M, C);
      MatMap dW(pw.grad.v.data(), C, 4 * Co);
      dW.noalias() += A.transpose() * dB;
    }
    if (px.requires_grad) {
      CMatMap W(pw.val.v.data(), C, 4 * Co);
      MatMap dX(px.grad.v.data(), M, C);
      dX.noalias() += dB * W.transpose();
    }
    if (pb.requires_grad)
      for (long i = 0; i < n.grad.numel(); ++i) pb.grad.v[i % Co] += n.grad.v[i];
  });
}

NodeP maxpool_hw(Tape& tp, NodeP x) {
  check_rank4(x, "maxpool_hw");
  const int T = x->val.dims[0], Y = x->val.dims[1], X = x->val.dims[2], C = x->val.dims[3];
  require(Y % 2 == 0 && X % 2 == 0, "maxpool_hw: spatial dims must be even");
  Tensor out({T, Y / 2, X / 2, C});
  auto arg = std::make_shared<std::vector<std::int64_t>>(out.v.size());
  long o = 0;
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < Y; y += 2)
      for (int xx = 0; xx < X; xx += 2)
        for (int c = 0; c < C; ++c, ++o) {
          long best_i = x->val.idx4(t, y, xx, c);
          double best = x->val.v[best_i];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const long i = x->val.idx4(t, y + dy, xx + dx, c);
              if (x->val.v[i] > best) {
                best = x->val.v[i];
                best_i = i;
              }
            }
          out.v[o] = best;
          (*arg)[o] = best_i;
        }
  return tp.record(std::move(out), {x}, [arg](Node& n) {
    Node& p = *n.parents[0];
    for (long i = 0; i < n.grad.numel(); ++i) p.grad.v[(*arg)[i]] += n.grad.v[i];
  });
}

NodeP dropout_channels(Tape& tp, NodeP x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  check_rank4(x, "dropout_channels");
  const int C = x->val.dims[3];
  auto keep = std::make_shared<std::vector<double>>(C);
  const double inv = 1.0 / (1.0 - p);
  for (int c = 0; c < C; ++c) (*keep)[c] = rng.bernoulli(p) ? 0.0 : inv;
  Tensor out(x->val.dims);
  const long pos = x->val.numel() / C;
  for (long r = 0; r < pos; ++r)
    for (int c = 0; c < C; ++c) out.v[r * C + c] = x->val.v[r * C + c] * (*keep)[c];
  return tp.record(std::move(out), {x}, [keep, C](Node& n) {
    Node& px = *n.parents[0];
    const long pos = n.val.numel() / C;
    for (long r = 0; r < pos; ++r)
      for (int c = 0; c < C; ++c) px.grad.v[r * C + c] += n.grad.v[r * C + c] * (*keep)[c];
  });
}

}  // namespace maskprop::ag
