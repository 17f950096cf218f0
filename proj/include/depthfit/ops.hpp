#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "depthfit/tensor.hpp"

namespace depthfit {

// ---------------------------------------------------------------------------
// broadcast handling
//
// Broadcasting is intentionally restricted to two forms: a 1-element scalar
// against anything, and a per-channel vector ((C) or (1,C,1,1)) against an
// (N,C,H,W) tensor. Anything else is a shape error.
// ---------------------------------------------------------------------------

enum class Bc { Same, ScalarA, ScalarB, ChanA, ChanB };

namespace detail {

inline bool is_channel_vector(const Shape& small, const Shape& big) {
  if (big.size() != 4) return false;
  int c = big[1];
  if (small.size() == 1 && small[0] == c) return true;
  if (small.size() == 4 && small[0] == 1 && small[1] == c && small[2] == 1 && small[3] == 1) return true;
  return false;
}

inline Bc resolve_broadcast(const Tensor& a, const Tensor& b, const char* name) {
  if (a.shape == b.shape) return Bc::Same;
  if (numel(a.shape) == 1) return Bc::ScalarA;
  if (numel(b.shape) == 1) return Bc::ScalarB;
  if (is_channel_vector(b.shape, a.shape)) return Bc::ChanB;
  if (is_channel_vector(a.shape, b.shape)) return Bc::ChanA;
  throw std::invalid_argument(std::string(name) + ": incompatible shapes " + shape_str(a.shape) + " vs " +
                              shape_str(b.shape));
}

// Maps an output flat index to the flat index of a broadcast operand.
struct BcIndex {
  int mode;   // 0: same, 1: scalar, 2: per-channel
  int inner;  // H*W of the big shape (per-channel only)
  int chans;  // C of the big shape (per-channel only)
  int operator()(int i) const {
    if (mode == 0) return i;
    if (mode == 1) return 0;
    return (i / inner) % chans;
  }
};

inline BcIndex bc_index_for(Bc bc, bool left, const Shape& big) {
  bool is_small = (left && (bc == Bc::ScalarA || bc == Bc::ChanA)) || (!left && (bc == Bc::ScalarB || bc == Bc::ChanB));
  if (!is_small) return BcIndex{0, 0, 0};
  if (bc == Bc::ScalarA || bc == Bc::ScalarB) return BcIndex{1, 0, 0};
  return BcIndex{2, big[2] * big[3], big[1]};
}

inline void check_finite_if_debug(const Tensor& t, const char* name) {
  if (debug_checks()) t.check_finite(name);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops
// ---------------------------------------------------------------------------

template <class F, class DA, class DB>
inline Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  Bc bc = detail::resolve_broadcast(a, b, name);
  const Tensor& big = (bc == Bc::ScalarA || bc == Bc::ChanA) ? b : a;
  const Shape oshape = big.shape;
  const int n = numel(oshape);
  detail::BcIndex ia = detail::bc_index_for(bc, true, oshape);
  detail::BcIndex ib = detail::bc_index_for(bc, false, oshape);

  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  const double* pa = a.values->data();
  const double* pb = b.values->data();
  double* po = out_vals->data();
  for (int i = 0; i < n; ++i) po[i] = f(pa[ia(i)], pb[ib(i)]);

  Tensor out(oshape, out_vals);
  detail::check_finite_if_debug(out, name);

  Tape* tp = tape_of(a, b);
  if (tp) {
    Tensor ac = a, bc_t = b;  // keep values alive for backward
    int na = a.on_tape() ? a.node : -1;
    int nb = b.on_tape() ? b.node : -1;
    out.tape = tp;
    out.node = tp->push(oshape, [ac, bc_t, na, nb, ia, ib, da, db, n](Tape& t, const std::vector<double>& g) {
      const double* pa2 = ac.values->data();
      const double* pb2 = bc_t.values->data();
      if (na >= 0) {
        std::vector<double>& ga = t.acc(na);
        for (int i = 0; i < n; ++i) ga[static_cast<size_t>(ia(i))] += g[static_cast<size_t>(i)] * da(pa2[ia(i)], pb2[ib(i)]);
      }
      if (nb >= 0) {
        std::vector<double>& gb = t.acc(nb);
        for (int i = 0; i < n; ++i) gb[static_cast<size_t>(ib(i))] += g[static_cast<size_t>(i)] * db(pa2[ia(i)], pb2[ib(i)]);
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  if (debug_checks()) {
    for (double v : *b.values)
      if (v == 0.0) throw std::runtime_error("div: exact zero divisor");
  }
  return binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}
// Per-pixel minimum; gradient routes to the argmin operand, ties to a.
inline Tensor min2(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "min2", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}
inline Tensor max2(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "max2", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; }, [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

inline Tensor add(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor sub(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor sub(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }
inline Tensor mul(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor div(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }
inline Tensor div(double s, const Tensor& a) { return div(Tensor::scalar(s), a); }

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

template <class F, class D>
inline Tensor unary_elementwise(const char* name, const Tensor& x, F f, D dfdx) {
  const int n = x.size();
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  const double* px = x.values->data();
  double* po = out_vals->data();
  for (int i = 0; i < n; ++i) po[i] = f(px[i]);

  Tensor out(x.shape, out_vals);
  detail::check_finite_if_debug(out, name);
  if (x.on_tape()) {
    Tensor xc = x;
    Tensor oc = out;
    int nx = x.node;
    out.tape = x.tape;
    out.node = x.tape->push(x.shape, [xc, oc, nx, dfdx, n](Tape& t, const std::vector<double>& g) {
      const double* px2 = xc.values->data();
      const double* py2 = oc.values->data();
      std::vector<double>& gx = t.acc(nx);
      for (int i = 0; i < n; ++i) gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * dfdx(px2[i], py2[i]);
    });
  }
  return out;
}

inline Tensor abs_t(const Tensor& x) {
  return unary_elementwise(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}
inline Tensor exp_t(const Tensor& x) {
  return unary_elementwise("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}
inline Tensor log_t(const Tensor& x) {
  return unary_elementwise("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}
inline Tensor sqrt_t(const Tensor& x) {
  return unary_elementwise("sqrt", x, [](double v) { return std::sqrt(v); },
                           [](double, double y) { return 0.5 / y; });
}
inline Tensor sin_t(const Tensor& x) {
  return unary_elementwise("sin", x, [](double v) { return std::sin(v); },
                           [](double v, double) { return std::cos(v); });
}
inline Tensor cos_t(const Tensor& x) {
  return unary_elementwise("cos", x, [](double v) { return std::cos(v); },
                           [](double v, double) { return -std::sin(v); });
}
inline Tensor neg(const Tensor& x) {
  return unary_elementwise("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}
inline Tensor relu(const Tensor& x) {
  return unary_elementwise("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                           [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}
// elu(x) = x for x > 0, exp(x) - 1 otherwise; derivative elu(x) + 1 below 0
inline Tensor elu(const Tensor& x) {
  return unary_elementwise("elu", x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
                           [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}
inline Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {

struct ReducePlan {
  Shape keep_shape;   // input shape with reduced axes set to 1
  Shape out_shape;    // keep_shape, or squeezed when !keepdim
  long long reduced;  // number of elements folded into each output slot
};

inline ReducePlan reduce_plan(const Shape& in, std::vector<int> axes, bool keepdim) {
  ReducePlan p;
  p.keep_shape = in;
  if (axes.empty()) {
    axes.resize(in.size());
    std::iota(axes.begin(), axes.end(), 0);
  }
  std::vector<char> is_axis(in.size(), 0);
  for (int a : axes) {
    if (a < 0 || a >= static_cast<int>(in.size())) throw std::invalid_argument("reduce: axis out of range");
    if (is_axis[static_cast<size_t>(a)]) throw std::invalid_argument("reduce: duplicate axis");
    is_axis[static_cast<size_t>(a)] = 1;
  }
  p.reduced = 1;
  for (size_t i = 0; i < in.size(); ++i)
    if (is_axis[i]) {
      p.reduced *= in[i];
      p.keep_shape[i] = 1;
    }
  if (keepdim) {
    p.out_shape = p.keep_shape;
  } else {
    for (size_t i = 0; i < in.size(); ++i)
      if (!is_axis[i]) p.out_shape.push_back(in[i]);
    if (p.out_shape.empty()) p.out_shape = {1};
  }
  return p;
}

// Walks input flat indices in order while tracking the matching output flat
// index (keepdim layout). Callback: (in_flat, out_flat).
template <class Fn>
inline void reduce_walk(const Shape& in, const Shape& keep, Fn fn) {
  int rank = static_cast<int>(in.size());
  std::vector<int> idx(static_cast<size_t>(rank), 0);
  std::vector<long long> out_strides(static_cast<size_t>(rank));
  long long s = 1;
  for (int d = rank - 1; d >= 0; --d) {
    out_strides[static_cast<size_t>(d)] = (keep[static_cast<size_t>(d)] == 1) ? 0 : s;
    s *= keep[static_cast<size_t>(d)];
  }
  long long total = 1;
  for (int d : in) total *= d;
  long long out_flat = 0;
  for (long long i = 0; i < total; ++i) {
    fn(i, out_flat);
    for (int d = rank - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      out_flat += out_strides[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < in[static_cast<size_t>(d)]) break;
      out_flat -= out_strides[static_cast<size_t>(d)] * in[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace detail

inline Tensor reduce_sum(const Tensor& x, std::vector<int> axes = {}, bool keepdim = false) {
  if (x.size() == 0) throw std::invalid_argument("reduce: empty tensor");
  detail::ReducePlan p = detail::reduce_plan(x.shape, axes, keepdim);
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(numel(p.out_shape)), 0.0);
  const double* px = x.values->data();
  double* po = out_vals->data();
  if (static_cast<long long>(x.size()) == p.reduced) {  // full reduction fast path
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += px[i];
    po[0] = acc;
  } else {
    detail::reduce_walk(x.shape, p.keep_shape, [&](long long i, long long o) { po[o] += px[i]; });
  }
  Tensor out(p.out_shape, out_vals);
  if (x.on_tape()) {
    int nx = x.node;
    Shape in_shape = x.shape, keep = p.keep_shape;
    out.tape = x.tape;
    out.node = x.tape->push(p.out_shape, [nx, in_shape, keep](Tape& t, const std::vector<double>& g) {
      std::vector<double>& gx = t.acc(nx);
      if (g.size() == 1) {
        for (double& v : gx) v += g[0];
      } else {
        detail::reduce_walk(in_shape, keep, [&](long long i, long long o) { gx[static_cast<size_t>(i)] += g[static_cast<size_t>(o)]; });
      }
    });
  }
  return out;
}

inline Tensor reduce_mean(const Tensor& x, std::vector<int> axes = {}, bool keepdim = false) {
  detail::ReducePlan p = detail::reduce_plan(x.shape, axes, keepdim);
  Tensor s = reduce_sum(x, axes, keepdim);
  return div(s, static_cast<double>(p.reduced));
}

// ---------------------------------------------------------------------------
// shape ops: reshape, slice, concat
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel(new_shape) != x.size()) throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(new_shape, x.values);
  if (x.on_tape()) {
    int nx = x.node;
    int n = x.size();
    out.tape = x.tape;
    out.node = x.tape->push(new_shape, [nx, n](Tape& t, const std::vector<double>& g) {
      std::vector<double>& gx = t.acc(nx);
      for (int i = 0; i < n; ++i) gx[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
    });
  }
  return out;
}

namespace detail {
struct AxisSplit {
  long long outer, axis, inner;
};
inline AxisSplit axis_split(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw std::invalid_argument("axis out of range");
  AxisSplit a{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) a.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}
}  // namespace detail

inline Tensor slice(const Tensor& x, int axis, int start, int len) {
  detail::AxisSplit sp = detail::axis_split(x.shape, axis);
  if (start < 0 || len < 1 || start + len > sp.axis) throw std::invalid_argument("slice: range out of bounds");
  Shape oshape = x.shape;
  oshape[static_cast<size_t>(axis)] = len;
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(numel(oshape)));
  const double* px = x.values->data();
  double* po = out_vals->data();
  for (long long o = 0; o < sp.outer; ++o)
    std::copy(px + (o * sp.axis + start) * sp.inner, px + (o * sp.axis + start + len) * sp.inner,
              po + o * len * sp.inner);
  Tensor out(oshape, out_vals);
  if (x.on_tape()) {
    int nx = x.node;
    out.tape = x.tape;
    out.node = x.tape->push(oshape, [nx, sp, start, len](Tape& t, const std::vector<double>& g) {
      std::vector<double>& gx = t.acc(nx);
      for (long long o = 0; o < sp.outer; ++o) {
        const double* gs = g.data() + o * len * sp.inner;
        double* gd = gx.data() + (o * sp.axis + start) * sp.inner;
        for (long long i = 0; i < len * sp.inner; ++i) gd[i] += gs[i];
      }
    });
  }
  return out;
}

inline Tensor concat(int axis, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape oshape = parts[0].shape;
  int axis_total = 0;
  Tape* tp = nullptr;
  for (const Tensor& p : parts) {
    if (static_cast<int>(p.shape.size()) != static_cast<int>(oshape.size()))
      throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < static_cast<int>(oshape.size()); ++d)
      if (d != axis && p.shape[static_cast<size_t>(d)] != oshape[static_cast<size_t>(d)])
        throw std::invalid_argument("concat: shape mismatch off the concat axis");
    axis_total += p.shape[static_cast<size_t>(axis)];
    if (p.on_tape()) {
      if (tp && tp != p.tape) throw std::invalid_argument("concat: mixed tapes");
      tp = p.tape;
    }
  }
  oshape[static_cast<size_t>(axis)] = axis_total;
  detail::AxisSplit sp = detail::axis_split(oshape, axis);
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(numel(oshape)));
  double* po = out_vals->data();
  long long off = 0;
  for (const Tensor& p : parts) {
    long long alen = p.shape[static_cast<size_t>(axis)];
    const double* pp = p.values->data();
    for (long long o = 0; o < sp.outer; ++o)
      std::copy(pp + o * alen * sp.inner, pp + (o + 1) * alen * sp.inner, po + (o * sp.axis + off) * sp.inner);
    off += alen;
  }
  Tensor out(oshape, out_vals);
  if (tp) {
    std::vector<int> ids;
    std::vector<long long> lens;
    for (const Tensor& p : parts) {
      ids.push_back(p.on_tape() ? p.node : -1);
      lens.push_back(p.shape[static_cast<size_t>(axis)]);
    }
    out.tape = tp;
    out.node = tp->push(oshape, [ids, lens, sp](Tape& t, const std::vector<double>& g) {
      long long off2 = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] >= 0) {
          std::vector<double>& gp = t.acc(ids[k]);
          for (long long o = 0; o < sp.outer; ++o) {
            const double* gs = g.data() + (o * sp.axis + off2) * sp.inner;
            double* gd = gp.data() + o * lens[k] * sp.inner;
            for (long long i = 0; i < lens[k] * sp.inner; ++i) gd[i] += gs[i];
          }
        }
        off2 += lens[k];
      }
    });
  }
  return out;
}

// Channel concatenation of two image tensors (N,Ca,H,W)+(N,Cb,H,W).
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4) throw std::invalid_argument("concat_channels: rank-4 tensors required");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: batch/spatial mismatch");
  return concat(1, {a, b});
}

// ---------------------------------------------------------------------------
// resize (nearest / bilinear), pixel centers at (i + 0.5) / size
// ---------------------------------------------------------------------------

inline Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 4) throw std::invalid_argument("resize: rank-4 tensor required");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: output size must be >= 1");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Shape oshape{n, c, out_h, out_w};
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(numel(oshape)));
  std::vector<int> src_y(static_cast<size_t>(out_h)), src_x(static_cast<size_t>(out_w));
  double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (int i = 0; i < out_h; ++i) src_y[static_cast<size_t>(i)] = std::min(static_cast<int>((i + 0.5) * sy), h - 1);
  for (int i = 0; i < out_w; ++i) src_x[static_cast<size_t>(i)] = std::min(static_cast<int>((i + 0.5) * sx), w - 1);
  const double* px = x.values->data();
  double* po = out_vals->data();
  for (int nc = 0; nc < n * c; ++nc) {
    const double* plane = px + static_cast<long long>(nc) * h * w;
    for (int oy = 0; oy < out_h; ++oy) {
      const double* row = plane + static_cast<long long>(src_y[static_cast<size_t>(oy)]) * w;
      for (int ox = 0; ox < out_w; ++ox) *po++ = row[src_x[static_cast<size_t>(ox)]];
    }
  }
  Tensor out(oshape, out_vals);
  if (x.on_tape()) {
    int nx = x.node;
    out.tape = x.tape;
    out.node = x.tape->push(oshape, [nx, n, c, h, w, out_h, out_w, src_y, src_x](Tape& t, const std::vector<double>& g) {
      std::vector<double>& gx = t.acc(nx);
      const double* pg = g.data();
      for (int nc = 0; nc < n * c; ++nc) {
        double* plane = gx.data() + static_cast<long long>(nc) * h * w;
        for (int oy = 0; oy < out_h; ++oy) {
          double* row = plane + static_cast<long long>(src_y[static_cast<size_t>(oy)]) * w;
          for (int ox = 0; ox < out_w; ++ox) row[src_x[static_cast<size_t>(ox)]] += *pg++;
        }
      }
    });
  }
  return out;
}

namespace detail {
struct LinTap {
  int i0, i1;
  double w1;  // weight of i1; weight of i0 is 1 - w1
};
inline std::vector<LinTap> linear_taps(int in_size, int out_size) {
  std::vector<LinTap> taps(static_cast<size_t>(out_size));
  double scale = static_cast<double>(in_size) / out_size;
  for (int i = 0; i < out_size; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(in_size - 1));
    int i0 = static_cast<int>(std::floor(s));
    if (i0 > in_size - 1) i0 = in_size - 1;
    int i1 = std::min(i0 + 1, in_size - 1);
    taps[static_cast<size_t>(i)] = LinTap{i0, i1, s - i0};
  }
  return taps;
}
}  // namespace detail

inline Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 4) throw std::invalid_argument("resize: rank-4 tensor required");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: output size must be >= 1");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Shape oshape{n, c, out_h, out_w};
  auto ty = detail::linear_taps(h, out_h);
  auto tx = detail::linear_taps(w, out_w);
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(numel(oshape)));
  const double* px = x.values->data();
  double* po = out_vals->data();
  for (int nc = 0; nc < n * c; ++nc) {
    const double* plane = px + static_cast<long long>(nc) * h * w;
    for (int oy = 0; oy < out_h; ++oy) {
      const detail::LinTap& y = ty[static_cast<size_t>(oy)];
      const double* r0 = plane + static_cast<long long>(y.i0) * w;
      const double* r1 = plane + static_cast<long long>(y.i1) * w;
      for (int ox = 0; ox < out_w; ++ox) {
        const detail::LinTap& xx = tx[static_cast<size_t>(ox)];
        double top = r0[xx.i0] + xx.w1 * (r0[xx.i1] - r0[xx.i0]);
        double bot = r1[xx.i0] + xx.w1 * (r1[xx.i1] - r1[xx.i0]);
        *po++ = top + y.w1 * (bot - top);
      }
    }
  }
  Tensor out(oshape, out_vals);
  if (x.on_tape()) {
    int nx = x.node;
    out.tape = x.tape;
    out.node = x.tape->push(oshape, [nx, n, c, h, w, out_h, out_w, ty, tx](Tape& t, const std::vector<double>& g) {
      std::vector<double>& gx = t.acc(nx);
      const double* pg = g.data();
      for (int nc = 0; nc < n * c; ++nc) {
        double* plane = gx.data() + static_cast<long long>(nc) * h * w;
        for (int oy = 0; oy < out_h; ++oy) {
          const detail::LinTap& y = ty[static_cast<size_t>(oy)];
          double* r0 = plane + static_cast<long long>(y.i0) * w;
          double* r1 = plane + static_cast<long long>(y.i1) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const detail::LinTap& xx = tx[static_cast<size_t>(ox)];
            double gv = *pg++;
            double g0 = gv * (1.0 - y.w1), g1 = gv * y.w1;
            r0[xx.i0] += g0 * (1.0 - xx.w1);
            r0[xx.i1] += g0 * xx.w1;
            r1[xx.i0] += g1 * (1.0 - xx.w1);
            r1[xx.i1] += g1 * xx.w1;
          }
        }
      }
    });
  }
  return out;
}

inline Tensor resize(const Tensor& x, int out_h, int out_w, bool bilinear) {
  return bilinear ? resize_bilinear(x, out_h, out_w) : resize_nearest(x, out_h, out_w);
}

// ---------------------------------------------------------------------------
// grid_sample: bilinear sampling at absolute pixel coordinates, border clamp
// ---------------------------------------------------------------------------

// source (N,C,H,W), grid (N,2,GH,GW) with channel 0 = x, channel 1 = y.
// Differentiable w.r.t. both source values and grid coordinates.
inline Tensor grid_sample_bilinear(const Tensor& source, const Tensor& grid) {
  if (source.rank() != 4 || grid.rank() != 4) throw std::invalid_argument("grid_sample: rank-4 tensors required");
  if (grid.dim(1) != 2) throw std::invalid_argument("grid_sample: grid must have 2 channels (x,y)");
  if (grid.dim(0) != source.dim(0)) throw std::invalid_argument("grid_sample: batch mismatch");
  int n = source.dim(0), c = source.dim(1), h = source.dim(2), w = source.dim(3);
  int gh = grid.dim(2), gw = grid.dim(3);
  Shape oshape{n, c, gh, gw};
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(numel(oshape)));
  const double* ps = source.values->data();
  const double* pgr = grid.values->data();
  double* po = out_vals->data();
  const long long plane = static_cast<long long>(h) * w;
  const long long gplane = static_cast<long long>(gh) * gw;
  for (int b = 0; b < n; ++b) {
    const double* gx = pgr + (static_cast<long long>(b) * 2) * gplane;
    const double* gy = gx + gplane;
    for (long long p = 0; p < gplane; ++p) {
      double x = std::min(std::max(gx[p], 0.0), static_cast<double>(w - 1));
      double y = std::min(std::max(gy[p], 0.0), static_cast<double>(h - 1));
      int x0 = static_cast<int>(std::floor(x));
      int y0 = static_cast<int>(std::floor(y));
      if (x0 > w - 1) x0 = w - 1;
      if (y0 > h - 1) y0 = h - 1;
      int x1 = std::min(x0 + 1, w - 1);
      int y1 = std::min(y0 + 1, h - 1);
      double wx = x - x0, wy = y - y0;
      for (int ch = 0; ch < c; ++ch) {
        const double* sp = ps + (static_cast<long long>(b) * c + ch) * plane;
        double v00 = sp[static_cast<long long>(y0) * w + x0];
        double v01 = sp[static_cast<long long>(y0) * w + x1];
        double v10 = sp[static_cast<long long>(y1) * w + x0];
        double v11 = sp[static_cast<long long>(y1) * w + x1];
        po[(static_cast<long long>(b) * c + ch) * gplane + p] =
            (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
      }
    }
  }
  Tensor out(oshape, out_vals);
  Tape* tp = tape_of(source, grid);
  if (tp) {
    Tensor sc = source, gc = grid;
    int ns = source.on_tape() ? source.node : -1;
    int ng = grid.on_tape() ? grid.node : -1;
    out.tape = tp;
    out.node = tp->push(oshape, [sc, gc, ns, ng, n, c, h, w, gh, gw](Tape& t, const std::vector<double>& g) {
      const double* ps2 = sc.values->data();
      const double* pgr2 = gc.values->data();
      const long long plane = static_cast<long long>(h) * w;
      const long long gplane = static_cast<long long>(gh) * gw;
      std::vector<double>* gs = ns >= 0 ? &t.acc(ns) : nullptr;
      std::vector<double>* gg = ng >= 0 ? &t.acc(ng) : nullptr;
      for (int b = 0; b < n; ++b) {
        const double* gxv = pgr2 + (static_cast<long long>(b) * 2) * gplane;
        const double* gyv = gxv + gplane;
        for (long long p = 0; p < gplane; ++p) {
          double xr = gxv[p], yr = gyv[p];
          bool in_x = xr > 0.0 && xr < static_cast<double>(w - 1);
          bool in_y = yr > 0.0 && yr < static_cast<double>(h - 1);
          double x = std::min(std::max(xr, 0.0), static_cast<double>(w - 1));
          double y = std::min(std::max(yr, 0.0), static_cast<double>(h - 1));
          int x0 = static_cast<int>(std::floor(x));
          int y0 = static_cast<int>(std::floor(y));
          if (x0 > w - 1) x0 = w - 1;
          if (y0 > h - 1) y0 = h - 1;
          int x1 = std::min(x0 + 1, w - 1);
          int y1 = std::min(y0 + 1, h - 1);
          double wx = x - x0, wy = y - y0;
          double dx_acc = 0.0, dy_acc = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            const double* sp = ps2 + (static_cast<long long>(b) * c + ch) * plane;
            double v00 = sp[static_cast<long long>(y0) * w + x0];
            double v01 = sp[static_cast<long long>(y0) * w + x1];
            double v10 = sp[static_cast<long long>(y1) * w + x0];
            double v11 = sp[static_cast<long long>(y1) * w + x1];
            double gv = g[static_cast<size_t>((static_cast<long long>(b) * c + ch) * gplane + p)];
            if (gs) {
              double* sg = gs->data() + (static_cast<long long>(b) * c + ch) * plane;
              sg[static_cast<long long>(y0) * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
              sg[static_cast<long long>(y0) * w + x1] += gv * (1.0 - wy) * wx;
              sg[static_cast<long long>(y1) * w + x0] += gv * wy * (1.0 - wx);
              sg[static_cast<long long>(y1) * w + x1] += gv * wy * wx;
            }
            if (gg) {
              dx_acc += gv * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
              dy_acc += gv * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
            }
          }
          if (gg) {
            if (in_x) (*gg)[static_cast<size_t>((static_cast<long long>(b) * 2) * gplane + p)] += dx_acc;
            if (in_y) (*gg)[static_cast<size_t>((static_cast<long long>(b) * 2 + 1) * gplane + p)] += dy_acc;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, zero padding
// ---------------------------------------------------------------------------

// input (N,IC,H,W), kernel (OC,IC,KH,KW), bias (OC) or undefined for none.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride = 1, int pad = 0) {
  if (input.rank() != 4 || kernel.rank() != 4) throw std::invalid_argument("conv2d: rank-4 tensors required");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  int n = input.dim(0), ic = input.dim(1), h = input.dim(2), w = input.dim(3);
  int oc = kernel.dim(0), kic = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kic != ic) throw std::invalid_argument("conv2d: channel mismatch: input " + shape_str(input.shape) +
                                             " kernel " + shape_str(kernel.shape));
  bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != oc))
    throw std::invalid_argument("conv2d: bias must be (out_channels)");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (w + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || w + 2 * pad < kw || oh < 1 || ow < 1)
    throw std::invalid_argument("conv2d: output would be empty");

  Shape oshape{n, oc, oh, ow};
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(numel(oshape)), 0.0);
  const double* pin = input.values->data();
  const double* pk = kernel.values->data();
  double* po = out_vals->data();
  if (has_bias) {
    const double* pb = bias.values->data();
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < oc; ++o)
        std::fill(po + (static_cast<long long>(b) * oc + o) * oh * ow,
                  po + (static_cast<long long>(b) * oc + o + 1) * oh * ow, pb[o]);
  }
  // valid output-column range for a given kernel column: iw = ox*stride - pad + kx in [0, w)
  auto ox_range = [&](int kx, int& lo, int& hi) {
    lo = 0;
    while (lo < ow && lo * stride - pad + kx < 0) ++lo;
    hi = ow;
    while (hi > lo && (hi - 1) * stride - pad + kx >= w) --hi;
  };
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < oc; ++o) {
      double* oplane = po + (static_cast<long long>(b) * oc + o) * oh * ow;
      for (int i = 0; i < ic; ++i) {
        const double* iplane = pin + (static_cast<long long>(b) * ic + i) * h * w;
        const double* kplane = pk + (static_cast<long long>(o) * ic + i) * kh * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            double kv = kplane[ky * kw + kx];
            if (kv == 0.0) continue;
            int lo, hi;
            ox_range(kx, lo, hi);
            for (int oy = 0; oy < oh; ++oy) {
              int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              const double* irow = iplane + static_cast<long long>(iy) * w - pad + kx;
              double* orow = oplane + static_cast<long long>(oy) * ow;
              if (stride == 1) {
                for (int ox = lo; ox < hi; ++ox) orow[ox] += kv * irow[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox) orow[ox] += kv * irow[ox * stride];
              }
            }
          }
        }
      }
    }
  }
  Tensor out(oshape, out_vals);
  detail::check_finite_if_debug(out, "conv2d");
  Tape* tp = tape_of(input, kernel);
  if (bias.on_tape()) {
    if (tp && tp != bias.tape) throw std::invalid_argument("conv2d: mixed tapes");
    tp = bias.tape;
  }
  if (tp) {
    Tensor in_c = input, k_c = kernel;
    int nin = input.on_tape() ? input.node : -1;
    int nk = kernel.on_tape() ? kernel.node : -1;
    int nb = bias.on_tape() ? bias.node : -1;
    out.tape = tp;
    out.node = tp->push(oshape, [in_c, k_c, nin, nk, nb, n, ic, h, w, oc, kh, kw, oh, ow, stride,
                                 pad](Tape& t, const std::vector<double>& g) {
      const double* pin2 = in_c.values->data();
      const double* pk2 = k_c.values->data();
      auto ox_range = [&](int kx, int& lo, int& hi) {
        lo = 0;
        while (lo < ow && lo * stride - pad + kx < 0) ++lo;
        hi = ow;
        while (hi > lo && (hi - 1) * stride - pad + kx >= w) --hi;
      };
      if (nin >= 0) {
        std::vector<double>& gin = t.acc(nin);
        for (int b = 0; b < n; ++b) {
          for (int o = 0; o < oc; ++o) {
            const double* gplane = g.data() + (static_cast<long long>(b) * oc + o) * oh * ow;
            for (int i = 0; i < ic; ++i) {
              double* iplane = gin.data() + (static_cast<long long>(b) * ic + i) * h * w;
              const double* kplane = pk2 + (static_cast<long long>(o) * ic + i) * kh * kw;
              for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                  double kv = kplane[ky * kw + kx];
                  if (kv == 0.0) continue;
                  int lo, hi;
                  ox_range(kx, lo, hi);
                  for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    double* irow = iplane + static_cast<long long>(iy) * w - pad + kx;
                    const double* grow = gplane + static_cast<long long>(oy) * ow;
                    if (stride == 1) {
                      for (int ox = lo; ox < hi; ++ox) irow[ox] += kv * grow[ox];
                    } else {
                      for (int ox = lo; ox < hi; ++ox) irow[ox * stride] += kv * grow[ox];
                    }
                  }
                }
              }
            }
          }
        }
      }
      if (nk >= 0) {
        std::vector<double>& gk = t.acc(nk);
        for (int b = 0; b < n; ++b) {
          for (int o = 0; o < oc; ++o) {
            const double* gplane = g.data() + (static_cast<long long>(b) * oc + o) * oh * ow;
            for (int i = 0; i < ic; ++i) {
              const double* iplane = pin2 + (static_cast<long long>(b) * ic + i) * h * w;
              double* kplane = gk.data() + (static_cast<long long>(o) * ic + i) * kh * kw;
              for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                  int lo, hi;
                  ox_range(kx, lo, hi);
                  // four independent accumulators break the add latency
                  // chain; the summation order is fixed, so results stay
                  // bit-reproducible
                  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                  for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* irow = iplane + static_cast<long long>(iy) * w - pad + kx;
                    const double* grow = gplane + static_cast<long long>(oy) * ow;
                    int ox = lo;
                    if (stride == 1) {
                      for (; ox + 4 <= hi; ox += 4) {
                        a0 += grow[ox] * irow[ox];
                        a1 += grow[ox + 1] * irow[ox + 1];
                        a2 += grow[ox + 2] * irow[ox + 2];
                        a3 += grow[ox + 3] * irow[ox + 3];
                      }
                      for (; ox < hi; ++ox) a0 += grow[ox] * irow[ox];
                    } else {
                      for (; ox < hi; ++ox) a0 += grow[ox] * irow[ox * stride];
                    }
                  }
                  kplane[ky * kw + kx] += ((a0 + a1) + (a2 + a3));
                }
              }
            }
          }
        }
      }
      if (nb >= 0) {
        std::vector<double>& gb = t.acc(nb);
        for (int b = 0; b < n; ++b)
          for (int o = 0; o < oc; ++o) {
            const double* gplane = g.data() + (static_cast<long long>(b) * oc + o) * oh * ow;
            double acc = 0.0;
            for (long long i = 0; i < static_cast<long long>(oh) * ow; ++i) acc += gplane[i];
            gb[static_cast<size_t>(o)] += acc;
          }
      }
    });
  }
  return out;
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int pad = 0) {
  return conv2d(input, kernel, Tensor(), stride, pad);
}

// ---------------------------------------------------------------------------
// 3x3 box mean with reflect padding (SSIM windows)
// ---------------------------------------------------------------------------

namespace detail {
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}
}  // namespace detail

inline Tensor box_mean3(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("box_mean3: rank-4 tensor required");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto out_vals = std::make_shared<std::vector<double>>(static_cast<size_t>(x.size()));
  const double* px = x.values->data();
  double* po = out_vals->data();
  const double k = 1.0 / 9.0;
  for (int nc = 0; nc < n * c; ++nc) {
    const double* plane = px + static_cast<long long>(nc) * h * w;
    double* oplane = po + static_cast<long long>(nc) * h * w;
    for (int y = 0; y < h; ++y) {
      const double* r0 = plane + static_cast<long long>(detail::reflect_index(y - 1, h)) * w;
      const double* r1 = plane + static_cast<long long>(y) * w;
      const double* r2 = plane + static_cast<long long>(detail::reflect_index(y + 1, h)) * w;
      for (int xib = 0; xib < w; ++xib) {
        int xm = detail::reflect_index(xib - 1, w);
        int xp = detail::reflect_index(xib + 1, w);
        oplane[static_cast<long long>(y) * w + xib] =
            k * (r0[xm] + r0[xib] + r0[xp] + r1[xm] + r1[xib] + r1[xp] + r2[xm] + r2[xib] + r2[xp]);
      }
    }
  }
  Tensor out(x.shape, out_vals);
  if (x.on_tape()) {
    int nx = x.node;
    out.tape = x.tape;
    out.node = x.tape->push(x.shape, [nx, n, c, h, w](Tape& t, const std::vector<double>& g) {
      std::vector<double>& gx = t.acc(nx);
      const double k2 = 1.0 / 9.0;
      for (int nc = 0; nc < n * c; ++nc) {
        const double* gplane = g.data() + static_cast<long long>(nc) * h * w;
        double* xplane = gx.data() + static_cast<long long>(nc) * h * w;
        for (int y = 0; y < h; ++y) {
          int ys[3] = {detail::reflect_index(y - 1, h), y, detail::reflect_index(y + 1, h)};
          for (int xib = 0; xib < w; ++xib) {
            double gv = k2 * gplane[static_cast<long long>(y) * w + xib];
            int xs[3] = {detail::reflect_index(xib - 1, w), xib, detail::reflect_index(xib + 1, w)};
            for (int yy : ys)
              for (int xx : xs) xplane[static_cast<long long>(yy) * w + xx] += gv;
          }
        }
      }
    });
  }
  return out;
}

// Scalar readout helpers.
inline double value_of(const Tensor& t) {
  if (t.size() != 1) throw std::invalid_argument("value_of: tensor is not scalar");
  return (*t.values)[0];
}

}  // namespace depthfit
