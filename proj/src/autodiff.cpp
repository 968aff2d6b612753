#include "bhfa/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "bhfa/numeric.hpp"

namespace bhfa::ad {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accum(int id, const Tensor& g) {
  Tensor& buf = grad_buf(id);
  double* dst = buf.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < buf.numel(); ++i) dst[i] += src[i];
}

const Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  require(root.valid() && val(root).numel() == 1, "Tape::backward: root must be a scalar");
  grad_buf(root.id)[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.has_grad && n.back) n.back(*this);
  }
}

Var Tape::leaf(const Tensor& value, bool requires_grad) {
  return push(value, requires_grad);
}

Var Tape::leaf(Tensor&& value, bool requires_grad) {
  return push(std::move(value), requires_grad);
}

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, bi = b.id, oi = o.id;
    nodes_[o.id].back = [ai, bi, oi](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      if (t.nodes_[ai].requires_grad) t.accum(ai, go);
      if (t.nodes_[bi].requires_grad) t.accum(bi, go);
    };
  }
  return o;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, bi = b.id, oi = o.id;
    nodes_[o.id].back = [ai, bi, oi](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      if (t.nodes_[ai].requires_grad) {
        Tensor& ga = t.grad_buf(ai);
        const Tensor& bv2 = t.nodes_[bi].value;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go[i] * bv2[i];
      }
      if (t.nodes_[bi].requires_grad) {
        Tensor& gb = t.grad_buf(bi);
        const Tensor& av2 = t.nodes_[ai].value;
        for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += go[i] * av2[i];
      }
    };
  }
  return o;
}

Var Tape::scale(Var a, double c) {
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  bool rg = requires_grad(a);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, oi = o.id;
    nodes_[o.id].back = [ai, oi, c](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += c * go[i];
    };
  }
  return o;
}

Var Tape::add_scalar(Var a, double c) {
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c;
  bool rg = requires_grad(a);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, oi = o.id;
    nodes_[o.id].back = [ai, oi](Tape& t) { t.accum(ai, t.nodes_[oi].grad); };
  }
  return o;
}

Var Tape::exp(Var a) {
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  bool rg = requires_grad(a);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, oi = o.id;
    nodes_[o.id].back = [ai, oi](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& ov = t.nodes_[oi].value;
      Tensor& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go[i] * ov[i];
    };
  }
  return o;
}

Var Tape::relu(Var a) {
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  bool rg = requires_grad(a);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, oi = o.id;
    nodes_[o.id].back = [ai, oi](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& ov = t.nodes_[oi].value;
      Tensor& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) {
        if (ov[i] > 0.0) ga[i] += go[i];
      }
    };
  }
  return o;
}

Var Tape::sigmoid(Var a) {
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  bool rg = requires_grad(a);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, oi = o.id;
    nodes_[o.id].back = [ai, oi](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& ov = t.nodes_[oi].value;
      Tensor& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go[i] * ov[i] * (1.0 - ov[i]);
    };
  }
  return o;
}

Var Tape::clamp(Var a, double lo, double hi) {
  const Tensor& av = val(a);
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = bhfa::clamp(out[i], lo, hi);
  bool rg = requires_grad(a);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, oi = o.id;
    nodes_[o.id].back = [ai, oi, lo, hi](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& av2 = t.nodes_[ai].value;
      Tensor& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) {
        if (av2[i] >= lo && av2[i] <= hi) ga[i] += go[i];
      }
    };
  }
  return o;
}

Var Tape::mul_const(Var a, const Tensor& c) {
  const Tensor& av = val(a);
  check_same_shape(av, c, "mul_const");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
  bool rg = requires_grad(a);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, oi = o.id;
    nodes_[o.id].back = [ai, oi, c](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go[i] * c[i];
    };
  }
  return o;
}

// ------------------------------------------------------------- linear algebra

Var Tape::matmul_wt(Var x, Var w) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  require(xv.ndim() == 2 && wv.ndim() == 2 && xv.dim(1) == wv.dim(1),
          "matmul_wt: need (N,F) x (O,F), got " + xv.shape_str() + " and " + wv.shape_str());
  const int n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  Tensor out({n, o});
  for (int i = 0; i < n; ++i) {
    const double* xr = xv.data() + static_cast<std::size_t>(i) * f;
    for (int j = 0; j < o; ++j) {
      const double* wr = wv.data() + static_cast<std::size_t>(j) * f;
      double acc = 0.0;
      for (int k = 0; k < f; ++k) acc += xr[k] * wr[k];
      out.at(i, j) = acc;
    }
  }
  bool rg = requires_grad(x) || requires_grad(w);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, wi = w.id, oi = ov.id;
    nodes_[ov.id].back = [xi, wi, oi, n, f, o](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& xv2 = t.nodes_[xi].value;
      const Tensor& wv2 = t.nodes_[wi].value;
      if (t.nodes_[xi].requires_grad) {
        Tensor& gx = t.grad_buf(xi);
        for (int i = 0; i < n; ++i) {
          double* gxr = gx.data() + static_cast<std::size_t>(i) * f;
          for (int j = 0; j < o; ++j) {
            const double g = go.at(i, j);
            const double* wr = wv2.data() + static_cast<std::size_t>(j) * f;
            for (int k = 0; k < f; ++k) gxr[k] += g * wr[k];
          }
        }
      }
      if (t.nodes_[wi].requires_grad) {
        Tensor& gw = t.grad_buf(wi);
        for (int j = 0; j < o; ++j) {
          double* gwr = gw.data() + static_cast<std::size_t>(j) * f;
          for (int i = 0; i < n; ++i) {
            const double g = go.at(i, j);
            const double* xr = xv2.data() + static_cast<std::size_t>(i) * f;
            for (int k = 0; k < f; ++k) gwr[k] += g * xr[k];
          }
        }
      }
    };
  }
  return ov;
}

Var Tape::add_rowvec(Var x, Var b) {
  const Tensor& xv = val(x);
  const Tensor& bv = val(b);
  require(xv.ndim() == 2 && bv.ndim() == 1 && xv.dim(1) == bv.dim(0),
          "add_rowvec: need (N,O) + (O)");
  const int n = xv.dim(0), o = xv.dim(1);
  Tensor out = xv;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < o; ++j) out.at(i, j) += bv[static_cast<std::size_t>(j)];
  bool rg = requires_grad(x) || requires_grad(b);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, bi = b.id, oi = ov.id;
    nodes_[ov.id].back = [xi, bi, oi, n, o](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      if (t.nodes_[xi].requires_grad) t.accum(xi, go);
      if (t.nodes_[bi].requires_grad) {
        Tensor& gb = t.grad_buf(bi);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < o; ++j) gb[static_cast<std::size_t>(j)] += go.at(i, j);
      }
    };
  }
  return ov;
}

// ----------------------------------------------------------------- image ops

Var Tape::conv2d(Var x, Var w, Var b, int pad) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  require(xv.ndim() == 4 && wv.ndim() == 4, "conv2d: need NCHW input and OIKK kernel");
  const int n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wdt = xv.dim(3);
  const int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  require(wv.dim(1) == ci, "conv2d: kernel channel mismatch");
  const int ho = h + 2 * pad - kh + 1;
  const int wo = wdt + 2 * pad - kw + 1;
  require(ho >= 1 && wo >= 1, "conv2d: kernel larger than padded input");
  const int hp = h + 2 * pad, wp = wdt + 2 * pad;

  // zero-padded copy; shared with the backward pass
  Tensor xp({n, ci, hp, wp});
  for (int in = 0; in < n; ++in)
    for (int c = 0; c < ci; ++c)
      for (int y = 0; y < h; ++y) {
        const double* src = xv.data() + ((static_cast<std::size_t>(in) * ci + c) * h + y) * wdt;
        double* dst = xp.data() + ((static_cast<std::size_t>(in) * ci + c) * hp + (y + pad)) * wp + pad;
        std::copy(src, src + wdt, dst);
      }

  Tensor out({n, co, ho, wo});
  const bool has_bias = b.valid();
  if (has_bias) {
    const Tensor& bv = val(b);
    require(bv.ndim() == 1 && bv.dim(0) == co, "conv2d: bias shape mismatch");
    for (int in = 0; in < n; ++in)
      for (int c = 0; c < co; ++c) {
        double* dst = out.data() + (static_cast<std::size_t>(in) * co + c) * ho * wo;
        const double bvv = bv[static_cast<std::size_t>(c)];
        for (int i = 0; i < ho * wo; ++i) dst[i] = bvv;
      }
  }
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < co; ++oc)
      for (int c = 0; c < ci; ++c)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const double wvv = wv.at(oc, c, ky, kx);
            if (wvv == 0.0) continue;
            for (int y = 0; y < ho; ++y) {
              const double* xr =
                  xp.data() + ((static_cast<std::size_t>(in) * ci + c) * hp + (y + ky)) * wp + kx;
              double* orow = out.data() + ((static_cast<std::size_t>(in) * co + oc) * ho + y) * wo;
              for (int xx = 0; xx < wo; ++xx) orow[xx] += wvv * xr[xx];
            }
          }

  bool rg = requires_grad(x) || requires_grad(w) || (has_bias && requires_grad(b));
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, wi = w.id, bi = has_bias ? b.id : -1, oi = ov.id;
    nodes_[ov.id].back = [xi, wi, bi, oi, xp = std::move(xp), n, ci, co, h, wdt, hp, wp, ho, wo, kh,
                          kw, pad](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& wv2 = t.nodes_[wi].value;
      if (bi >= 0 && t.nodes_[bi].requires_grad) {
        Tensor& gb = t.grad_buf(bi);
        for (int in = 0; in < n; ++in)
          for (int oc = 0; oc < co; ++oc) {
            const double* gr = go.data() + (static_cast<std::size_t>(in) * co + oc) * ho * wo;
            double acc = 0.0;
            for (int i = 0; i < ho * wo; ++i) acc += gr[i];
            gb[static_cast<std::size_t>(oc)] += acc;
          }
      }
      if (t.nodes_[wi].requires_grad) {
        Tensor& gw = t.grad_buf(wi);
        for (int in = 0; in < n; ++in)
          for (int oc = 0; oc < co; ++oc)
            for (int c = 0; c < ci; ++c)
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  double acc = 0.0;
                  for (int y = 0; y < ho; ++y) {
                    const double* xr =
                        xp.data() + ((static_cast<std::size_t>(in) * ci + c) * hp + (y + ky)) * wp + kx;
                    const double* gr =
                        go.data() + ((static_cast<std::size_t>(in) * co + oc) * ho + y) * wo;
                    for (int xx = 0; xx < wo; ++xx) acc += gr[xx] * xr[xx];
                  }
                  gw.at(oc, c, ky, kx) += acc;
                }
      }
      if (t.nodes_[xi].requires_grad) {
        Tensor gxp({n, ci, hp, wp});
        for (int in = 0; in < n; ++in)
          for (int oc = 0; oc < co; ++oc)
            for (int c = 0; c < ci; ++c)
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  const double wvv = wv2.at(oc, c, ky, kx);
                  if (wvv == 0.0) continue;
                  for (int y = 0; y < ho; ++y) {
                    double* gxr =
                        gxp.data() + ((static_cast<std::size_t>(in) * ci + c) * hp + (y + ky)) * wp + kx;
                    const double* gr =
                        go.data() + ((static_cast<std::size_t>(in) * co + oc) * ho + y) * wo;
                    for (int xx = 0; xx < wo; ++xx) gxr[xx] += wvv * gr[xx];
                  }
                }
        Tensor& gx = t.grad_buf(xi);
        for (int in = 0; in < n; ++in)
          for (int c = 0; c < ci; ++c)
            for (int y = 0; y < h; ++y) {
              const double* src =
                  gxp.data() + ((static_cast<std::size_t>(in) * ci + c) * hp + (y + pad)) * wp + pad;
              double* dst = gx.data() + ((static_cast<std::size_t>(in) * ci + c) * h + y) * wdt;
              for (int xx = 0; xx < wdt; ++xx) dst[xx] += src[xx];
            }
      }
    };
  }
  return ov;
}

Var Tape::maxpool2(Var x) {
  const Tensor& xv = val(x);
  require(xv.ndim() == 4, "maxpool2: need NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ho = h / 2, wo = w / 2;
  require(ho >= 1 && wo >= 1, "maxpool2: input too small");
  Tensor out({n, c, ho, wo});
  std::vector<std::size_t> arg(out.numel());
  std::size_t oidx = 0;
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double best = -1e308;
          std::size_t besti = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              std::size_t idx =
                  ((static_cast<std::size_t>(in) * c + ic) * h + (2 * y + dy)) * w + (2 * xx + dx);
              if (xv[idx] > best) {
                best = xv[idx];
                besti = idx;
              }
            }
          out[oidx] = best;
          arg[oidx] = besti;
          ++oidx;
        }
  bool rg = requires_grad(x);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, oi = ov.id;
    nodes_[ov.id].back = [xi, oi, arg = std::move(arg)](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& gx = t.grad_buf(xi);
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += go[i];
    };
  }
  return ov;
}

Var Tape::upsample2(Var x) {
  const Tensor& xv = val(x);
  require(xv.ndim() == 4, "upsample2: need NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          double v = xv.at(in, ic, y, xx);
          out.at(in, ic, 2 * y, 2 * xx) = v;
          out.at(in, ic, 2 * y, 2 * xx + 1) = v;
          out.at(in, ic, 2 * y + 1, 2 * xx) = v;
          out.at(in, ic, 2 * y + 1, 2 * xx + 1) = v;
        }
  bool rg = requires_grad(x);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, oi = ov.id;
    nodes_[ov.id].back = [xi, oi, n, c, h, w](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& gx = t.grad_buf(xi);
      for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              gx.at(in, ic, y, xx) += go.at(in, ic, 2 * y, 2 * xx) + go.at(in, ic, 2 * y, 2 * xx + 1) +
                                      go.at(in, ic, 2 * y + 1, 2 * xx) +
                                      go.at(in, ic, 2 * y + 1, 2 * xx + 1);
    };
  }
  return ov;
}

Var Tape::pool_hw_avg(Var x) {
  const Tensor& xv = val(x);
  require(xv.ndim() == 4, "pool_hw_avg: need NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out({n, c});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const double* src = xv.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
      double acc = 0.0;
      for (int i = 0; i < h * w; ++i) acc += src[i];
      out.at(in, ic) = acc * inv;
    }
  bool rg = requires_grad(x);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, oi = ov.id;
    nodes_[ov.id].back = [xi, oi, n, c, h, w, inv](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& gx = t.grad_buf(xi);
      for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
          const double g = go.at(in, ic) * inv;
          double* dst = gx.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
          for (int i = 0; i < h * w; ++i) dst[i] += g;
        }
    };
  }
  return ov;
}

Var Tape::pool_hw_max(Var x) {
  const Tensor& xv = val(x);
  require(xv.ndim() == 4, "pool_hw_max: need NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c});
  std::vector<std::size_t> arg(out.numel());
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * h * w;
      double best = xv[base];
      std::size_t besti = base;
      for (int i = 1; i < h * w; ++i) {
        if (xv[base + i] > best) {
          best = xv[base + i];
          besti = base + i;
        }
      }
      out.at(in, ic) = best;
      arg[static_cast<std::size_t>(in) * c + ic] = besti;
    }
  bool rg = requires_grad(x);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, oi = ov.id;
    nodes_[ov.id].back = [xi, oi, arg = std::move(arg)](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& gx = t.grad_buf(xi);
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += go[i];
    };
  }
  return ov;
}

Var Tape::spatial_stats(Var x) {
  const Tensor& xv = val(x);
  require(xv.ndim() == 4, "spatial_stats: need NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const double inv = 1.0 / static_cast<double>(c);
  Tensor out({n, 2, h, w});
  std::vector<int> arg(static_cast<std::size_t>(n) * h * w);
  for (int in = 0; in < n; ++in)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        double best = xv.at(in, 0, y, xx);
        int besti = 0;
        for (int ic = 0; ic < c; ++ic) {
          const double v = xv.at(in, ic, y, xx);
          acc += v;
          if (v > best) {
            best = v;
            besti = ic;
          }
        }
        out.at(in, 0, y, xx) = acc * inv;
        out.at(in, 1, y, xx) = best;
        arg[(static_cast<std::size_t>(in) * h + y) * w + xx] = besti;
      }
  bool rg = requires_grad(x);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, oi = ov.id;
    nodes_[ov.id].back = [xi, oi, arg = std::move(arg), n, c, h, w, inv](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& gx = t.grad_buf(xi);
      for (int in = 0; in < n; ++in)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            const double gavg = go.at(in, 0, y, xx) * inv;
            for (int ic = 0; ic < c; ++ic) gx.at(in, ic, y, xx) += gavg;
            const int bc = arg[(static_cast<std::size_t>(in) * h + y) * w + xx];
            gx.at(in, bc, y, xx) += go.at(in, 1, y, xx);
          }
    };
  }
  return ov;
}

Var Tape::mul_channels(Var x, Var s) {
  const Tensor& xv = val(x);
  const Tensor& sv = val(s);
  require(xv.ndim() == 4 && sv.ndim() == 2 && sv.dim(0) == xv.dim(0) && sv.dim(1) == xv.dim(1),
          "mul_channels: need (N,C,H,W) and (N,C)");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out = xv;
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const double sc = sv.at(in, ic);
      double* dst = out.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
      for (int i = 0; i < h * w; ++i) dst[i] *= sc;
    }
  bool rg = requires_grad(x) || requires_grad(s);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, si = s.id, oi = ov.id;
    nodes_[ov.id].back = [xi, si, oi, n, c, h, w](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& xv2 = t.nodes_[xi].value;
      const Tensor& sv2 = t.nodes_[si].value;
      if (t.nodes_[xi].requires_grad) {
        Tensor& gx = t.grad_buf(xi);
        for (int in = 0; in < n; ++in)
          for (int ic = 0; ic < c; ++ic) {
            const double sc = sv2.at(in, ic);
            const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * h * w;
            for (int i = 0; i < h * w; ++i) gx[base + i] += go[base + i] * sc;
          }
      }
      if (t.nodes_[si].requires_grad) {
        Tensor& gs = t.grad_buf(si);
        for (int in = 0; in < n; ++in)
          for (int ic = 0; ic < c; ++ic) {
            const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * h * w;
            double acc = 0.0;
            for (int i = 0; i < h * w; ++i) acc += go[base + i] * xv2[base + i];
            gs.at(in, ic) += acc;
          }
      }
    };
  }
  return ov;
}

Var Tape::mul_spatial(Var x, Var m) {
  const Tensor& xv = val(x);
  const Tensor& mv = val(m);
  require(xv.ndim() == 4 && mv.ndim() == 4 && mv.dim(0) == xv.dim(0) && mv.dim(1) == 1 &&
              mv.dim(2) == xv.dim(2) && mv.dim(3) == xv.dim(3),
          "mul_spatial: need (N,C,H,W) and (N,1,H,W)");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out = xv;
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const double* mp = mv.data() + static_cast<std::size_t>(in) * h * w;
      double* dst = out.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
      for (int i = 0; i < h * w; ++i) dst[i] *= mp[i];
    }
  bool rg = requires_grad(x) || requires_grad(m);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, mi = m.id, oi = ov.id;
    nodes_[ov.id].back = [xi, mi, oi, n, c, h, w](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& xv2 = t.nodes_[xi].value;
      const Tensor& mv2 = t.nodes_[mi].value;
      if (t.nodes_[xi].requires_grad) {
        Tensor& gx = t.grad_buf(xi);
        for (int in = 0; in < n; ++in)
          for (int ic = 0; ic < c; ++ic) {
            const double* mp = mv2.data() + static_cast<std::size_t>(in) * h * w;
            const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * h * w;
            for (int i = 0; i < h * w; ++i) gx[base + i] += go[base + i] * mp[i];
          }
      }
      if (t.nodes_[mi].requires_grad) {
        Tensor& gm = t.grad_buf(mi);
        for (int in = 0; in < n; ++in) {
          double* gmp = gm.data() + static_cast<std::size_t>(in) * h * w;
          for (int ic = 0; ic < c; ++ic) {
            const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * h * w;
            for (int i = 0; i < h * w; ++i) gmp[i] += go[base + i] * xv2[base + i];
          }
        }
      }
    };
  }
  return ov;
}

Var Tape::reshape(Var x, std::vector<int> shape) {
  Tensor out = val(x).reshaped(std::move(shape));
  bool rg = requires_grad(x);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, oi = ov.id;
    nodes_[ov.id].back = [xi, oi](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& gx = t.grad_buf(xi);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += go[i];
    };
  }
  return ov;
}

Var Tape::slice_cols(Var x, int c0, int len) {
  const Tensor& xv = val(x);
  require(xv.ndim() == 2 && c0 >= 0 && len >= 1 && c0 + len <= xv.dim(1),
          "slice_cols: range out of bounds");
  const int n = xv.dim(0), c = xv.dim(1);
  Tensor out({n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = xv.at(i, c0 + j);
  bool rg = requires_grad(x);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, oi = ov.id;
    nodes_[ov.id].back = [xi, oi, c0, len, n, c](Tape& t) {
      (void)c;
      const Tensor& go = t.nodes_[oi].grad;
      Tensor& gx = t.grad_buf(xi);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j) gx.at(i, c0 + j) += go.at(i, j);
    };
  }
  return ov;
}

// ----------------------------------------------------------- distribution ops

Var Tape::bc_matrix(Var mu_a, Var ls_a, Var mu_b, Var ls_b) {
  const Tensor& ma = val(mu_a);
  const Tensor& la = val(ls_a);
  const Tensor& mb = val(mu_b);
  const Tensor& lb = val(ls_b);
  require(ma.ndim() == 2 && mb.ndim() == 2 && ma.same_shape(la) && mb.same_shape(lb) &&
              ma.dim(1) == mb.dim(1),
          "bc_matrix: inconsistent shapes");
  const int na = ma.dim(0), nb = mb.dim(0), d = ma.dim(1);
  Tensor out({na, nb});
  std::vector<unsigned char> clamped(static_cast<std::size_t>(na) * nb, 0);
  for (int i = 0; i < na; ++i) {
    const double* mar = ma.data() + static_cast<std::size_t>(i) * d;
    const double* lar = la.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < nb; ++j) {
      const double* mbr = mb.data() + static_cast<std::size_t>(j) * d;
      const double* lbr = lb.data() + static_cast<std::size_t>(j) * d;
      double bc = 1.0;
      for (int k = 0; k < d; ++k) {
        const double sa = std::exp(lar[k]);
        const double sb = std::exp(lbr[k]);
        const double s = sa * sa + sb * sb;
        const double diff = mar[k] - mbr[k];
        bc *= std::sqrt(2.0 * sa * sb / s) * std::exp(-diff * diff / (4.0 * s));
      }
      if (!(bc >= kBcFloor)) {
        bc = kBcFloor;
        clamped[static_cast<std::size_t>(i) * nb + j] = 1;
      } else if (bc > 1.0) {
        bc = 1.0;
        clamped[static_cast<std::size_t>(i) * nb + j] = 1;
      }
      out.at(i, j) = bc;
    }
  }
  bool rg = requires_grad(mu_a) || requires_grad(ls_a) || requires_grad(mu_b) || requires_grad(ls_b);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int mai = mu_a.id, lai = ls_a.id, mbi = mu_b.id, lbi = ls_b.id, oi = ov.id;
    nodes_[ov.id].back = [mai, lai, mbi, lbi, oi, clamped = std::move(clamped), na, nb, d](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& ov2 = t.nodes_[oi].value;
      const Tensor& ma2 = t.nodes_[mai].value;
      const Tensor& la2 = t.nodes_[lai].value;
      const Tensor& mb2 = t.nodes_[mbi].value;
      const Tensor& lb2 = t.nodes_[lbi].value;
      const bool ga = t.nodes_[mai].requires_grad, gla = t.nodes_[lai].requires_grad;
      const bool gb = t.nodes_[mbi].requires_grad, glb = t.nodes_[lbi].requires_grad;
      Tensor* gma = ga ? &t.grad_buf(mai) : nullptr;
      Tensor* glat = gla ? &t.grad_buf(lai) : nullptr;
      Tensor* gmb = gb ? &t.grad_buf(mbi) : nullptr;
      Tensor* glbt = glb ? &t.grad_buf(lbi) : nullptr;
      for (int i = 0; i < na; ++i) {
        const double* mar = ma2.data() + static_cast<std::size_t>(i) * d;
        const double* lar = la2.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < nb; ++j) {
          if (clamped[static_cast<std::size_t>(i) * nb + j]) continue;
          const double g = go.at(i, j);
          if (g == 0.0) continue;
          const double dlog = g * ov2.at(i, j);
          const double* mbr = mb2.data() + static_cast<std::size_t>(j) * d;
          const double* lbr = lb2.data() + static_cast<std::size_t>(j) * d;
          for (int k = 0; k < d; ++k) {
            const double va = std::exp(2.0 * lar[k]);
            const double vb = std::exp(2.0 * lbr[k]);
            const double s = va + vb;
            const double diff = mar[k] - mbr[k];
            const double dmu = -diff / (2.0 * s);
            const double common = diff * diff / (2.0 * s * s);
            if (gma) (*gma)[static_cast<std::size_t>(i) * d + k] += dlog * dmu;
            if (gmb) (*gmb)[static_cast<std::size_t>(j) * d + k] -= dlog * dmu;
            if (glat)
              (*glat)[static_cast<std::size_t>(i) * d + k] += dlog * (0.5 - va / s + common * va);
            if (glbt)
              (*glbt)[static_cast<std::size_t>(j) * d + k] += dlog * (0.5 - vb / s + common * vb);
          }
        }
      }
    };
  }
  return ov;
}

Var Tape::aggregate_gaussians(Var mu, Var ls, const std::vector<int>& group, int k) {
  const Tensor& mv = val(mu);
  const Tensor& lv = val(ls);
  require(mv.ndim() == 2 && mv.same_shape(lv), "aggregate_gaussians: need matching (M,d) inputs");
  const int m = mv.dim(0), d = mv.dim(1);
  require(static_cast<int>(group.size()) == m, "aggregate_gaussians: group size mismatch");
  std::vector<std::vector<int>> members(static_cast<std::size_t>(k));
  for (int i = 0; i < m; ++i) {
    require(group[i] >= 0 && group[i] < k, "aggregate_gaussians: group index out of range");
    members[static_cast<std::size_t>(group[i])].push_back(i);
  }
  for (int c = 0; c < k; ++c)
    require(!members[static_cast<std::size_t>(c)].empty(), "aggregate_gaussians: empty group");

  constexpr double kVarFloor = 1e-6;
  Tensor out({k, 2 * d});
  Tensor var_store({k, d});
  std::vector<unsigned char> floored(static_cast<std::size_t>(k) * d, 0);
  std::vector<double> acc;
  for (int c = 0; c < k; ++c) {
    const auto& mem = members[static_cast<std::size_t>(c)];
    const double mm = static_cast<double>(mem.size());
    for (int j = 0; j < d; ++j) {
      acc.clear();
      for (int idx : mem) acc.push_back(mv.at(idx, j));
      const double mean = exact_sum(acc) / mm;
      acc.clear();
      for (int idx : mem) {
        const double mu_v = mv.at(idx, j);
        const double sig2 = std::exp(2.0 * lv.at(idx, j));
        acc.push_back(sig2 + mu_v * mu_v);
      }
      const double m2 = exact_sum(acc) / mm;
      double var = m2 - mean * mean;
      if (var < kVarFloor) {
        var = kVarFloor;
        floored[static_cast<std::size_t>(c) * d + j] = 1;
      }
      out.at(c, j) = mean;
      out.at(c, d + j) = 0.5 * std::log(var);
      var_store.at(c, j) = var;
    }
  }
  bool rg = requires_grad(mu) || requires_grad(ls);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int mi = mu.id, li = ls.id, oi = ov.id;
    nodes_[ov.id].back = [mi, li, oi, members = std::move(members), var_store = std::move(var_store),
                          floored = std::move(floored), k, d](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& ov2 = t.nodes_[oi].value;
      const Tensor& mv2 = t.nodes_[mi].value;
      const Tensor& lv2 = t.nodes_[li].value;
      const bool gm = t.nodes_[mi].requires_grad, gl = t.nodes_[li].requires_grad;
      Tensor* gmu = gm ? &t.grad_buf(mi) : nullptr;
      Tensor* gls = gl ? &t.grad_buf(li) : nullptr;
      for (int c = 0; c < k; ++c) {
        const auto& mem = members[static_cast<std::size_t>(c)];
        const double inv_m = 1.0 / static_cast<double>(mem.size());
        for (int j = 0; j < d; ++j) {
          const double gmean_out = go.at(c, j);
          const double gls_out = go.at(c, d + j);
          const double var = var_store.at(c, j);
          const double dvar =
              floored[static_cast<std::size_t>(c) * d + j] ? 0.0 : gls_out * 0.5 / var;
          const double mean = ov2.at(c, j);
          const double dmean = gmean_out - 2.0 * mean * dvar;
          for (int idx : mem) {
            if (gmu) {
              const double mu_v = mv2.at(idx, j);
              (*gmu)[static_cast<std::size_t>(idx) * d + j] += dmean * inv_m + dvar * 2.0 * mu_v * inv_m;
            }
            if (gls) {
              const double sig2 = std::exp(2.0 * lv2.at(idx, j));
              (*gls)[static_cast<std::size_t>(idx) * d + j] += dvar * 2.0 * sig2 * inv_m;
            }
          }
        }
      }
    };
  }
  return ov;
}

// ----------------------------------------------------------------------- loss

Var Tape::sum(Var a) {
  const Tensor& av = val(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i];
  Tensor out({1});
  out[0] = acc;
  bool rg = requires_grad(a);
  Var o = push(std::move(out), rg);
  if (rg) {
    int ai = a.id, oi = o.id;
    nodes_[o.id].back = [ai, oi](Tape& t) {
      const double g = t.nodes_[oi].grad[0];
      Tensor& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    };
  }
  return o;
}

Var Tape::log_softmax_rows(Var logits) {
  const Tensor& lv = val(logits);
  require(lv.ndim() == 2, "log_softmax_rows: need (R,K)");
  const int r = lv.dim(0), k = lv.dim(1);
  Tensor out = lv;
  for (int i = 0; i < r; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += std::exp(row[j] - mx);
    const double lse = mx + std::log(acc);
    for (int j = 0; j < k; ++j) row[j] -= lse;
  }
  bool rg = requires_grad(logits);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int li = logits.id, oi = ov.id;
    nodes_[ov.id].back = [li, oi, r, k](Tape& t) {
      const Tensor& go = t.nodes_[oi].grad;
      const Tensor& ov2 = t.nodes_[oi].value;
      Tensor& gl = t.grad_buf(li);
      for (int i = 0; i < r; ++i) {
        const double* gr = go.data() + static_cast<std::size_t>(i) * k;
        const double* lr = ov2.data() + static_cast<std::size_t>(i) * k;
        double gsum = 0.0;
        for (int j = 0; j < k; ++j) gsum += gr[j];
        double* dst = gl.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) dst[j] += gr[j] - std::exp(lr[j]) * gsum;
      }
    };
  }
  return ov;
}

Var Tape::nll_rows(Var logp, const std::vector<int>& labels) {
  const Tensor& lv = val(logp);
  require(lv.ndim() == 2, "nll_rows: need (R,K)");
  const int r = lv.dim(0), k = lv.dim(1);
  require(static_cast<int>(labels.size()) == r, "nll_rows: labels size mismatch");
  double acc = 0.0;
  for (int i = 0; i < r; ++i) {
    require(labels[i] >= 0 && labels[i] < k, "nll_rows: label out of range");
    acc -= lv.at(i, labels[i]);
  }
  Tensor out({1});
  out[0] = acc / r;
  bool rg = requires_grad(logp);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int li = logp.id, oi = ov.id;
    nodes_[ov.id].back = [li, oi, labels, r, k](Tape& t) {
      const double g = t.nodes_[oi].grad[0];
      Tensor& gl = t.grad_buf(li);
      for (int i = 0; i < r; ++i) gl[static_cast<std::size_t>(i) * k + labels[i]] -= g / r;
    };
  }
  return ov;
}

Var Tape::mean_abs_ref(Var x, const Tensor& ref) {
  const Tensor& xv = val(x);
  check_same_shape(xv, ref, "mean_abs_ref");
  const double inv = 1.0 / static_cast<double>(xv.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += std::abs(xv[i] - ref[i]);
  Tensor out({1});
  out[0] = acc * inv;
  bool rg = requires_grad(x);
  Var ov = push(std::move(out), rg);
  if (rg) {
    int xi = x.id, oi = ov.id;
    nodes_[ov.id].back = [xi, oi, ref, inv](Tape& t) {
      const double g = t.nodes_[oi].grad[0] * inv;
      const Tensor& xv2 = t.nodes_[xi].value;
      Tensor& gx = t.grad_buf(xi);
      for (std::size_t i = 0; i < gx.numel(); ++i) {
        const double diff = xv2[i] - ref[i];
        if (diff > 0.0)
          gx[i] += g;
        else if (diff < 0.0)
          gx[i] -= g;
      }
    };
  }
  return ov;
}

}  // namespace bhfa::ad
