#include "cgmlp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "gemm.hpp"

namespace cgmlp::ops {
namespace {

using detail::gemm_nn;
using detail::gemm_nt;
using detail::gemm_tn;

// Accumulator for reductions: one step wider than the element type.
template <typename T>
using Wide = std::conditional_t<std::is_same_v<T, float>, double, long double>;

// tanh through a single exp; absolute error stays within a few ulp of 1.
template <typename T>
T fast_tanh(T u) {
  return T(1) - T(2) / (std::exp(T(2) * u) + T(1));
}

template <typename T>
void require_finite(const char* op, const Tensor<T>& t) {
  if (!finite_checks_enabled()) return;
  // x * 0 is NaN exactly when x is NaN or infinite; the sum keeps the NaN.
  constexpr std::size_t kLanes = 16;
  const T* v = t.raw();
  const std::size_t size = t.data().size();
  T lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= size; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += v[i + l] * T(0);
  T probe = T(0);
  for (; i < size; ++i) probe += v[i] * T(0);
  for (T l : lanes) probe += l;
  if (probe != probe) {
    throw NonFiniteError(std::string(op) + ": input of shape " + to_string(t.shape()) +
                         " contains a non-finite value");
  }
}

template <typename T>
Tape<T>* tape_of(const char* op, std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : inputs) {
    require_finite(op, *t);
    if (t->tape() == nullptr) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw TapeError(std::string(op) + ": inputs are attached to different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

template <typename T>
bool on_tape(const Tape<T>* tape, const Tensor<T>& t) {
  return tape != nullptr && t.tape() == tape;
}

template <typename T>
std::vector<TensorId> ids_on_tape(const Tape<T>* tape,
                                  std::initializer_list<const Tensor<T>*> inputs) {
  std::vector<TensorId> ids;
  for (const Tensor<T>* t : inputs) {
    if (on_tape(tape, *t)) ids.push_back(t->id());
  }
  return ids;
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// Output element i reads input element index[i]. Used for pure data-movement
// ops whose gradient is the inverse scatter.
template <typename T>
Tensor<T> gather(const char* tag, const Tensor<T>& x, Shape out_shape,
                 std::shared_ptr<const std::vector<std::size_t>> index) {
  Tape<T>* tape = tape_of(tag, {&x});
  Tensor<T> out(std::move(out_shape));
  auto dst = out.mutable_data();
  auto src = x.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[(*index)[i]];
  if (!tape) return out;
  return tape->record(out, {x.id()}, tag,
                      [xid = x.id(), xshape = x.shape(), index](const Tensor<T>& g,
                                                                Gradients<T>& sink) {
                        Tensor<T> dx(xshape);
                        auto d = dx.mutable_data();
                        auto gv = g.data();
                        for (std::size_t i = 0; i < gv.size(); ++i) d[(*index)[i]] += gv[i];
                        sink.accumulate(xid, dx);
                      });
}

struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit axis_split(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Output extent and leading pad for one spatial axis.
struct ConvAxis {
  std::size_t out;
  std::ptrdiff_t pad_before;
};

ConvAxis conv_axis(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (padding == Padding::kValid) {
    if (k > in) {
      throw ShapeError("conv2d: kernel extent " + std::to_string(k) +
                       " larger than padded input extent " + std::to_string(in));
    }
    return {(in - k) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + k;
  const std::size_t total = needed > in ? needed - in : 0;
  if (k > in + total) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  return {out, static_cast<std::ptrdiff_t>(total / 2)};
}

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, stride;
  ConvAxis oh, ow;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_pixels() const { return oh.out * ow.out; }
};

// cols[(c, ky, kx) x (oy, ox)] for one sample.
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* cols) {
  const std::size_t npix = g.out_pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * npix;
        // Output columns whose input column lies inside the image: [lo, hi).
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - g.ow.pad_before;
        const auto st = static_cast<std::ptrdiff_t>(g.stride);
        const auto ow = static_cast<std::ptrdiff_t>(g.ow.out);
        const std::ptrdiff_t lo = std::min(ow, off >= 0 ? 0 : (-off + st - 1) / st);
        const std::ptrdiff_t hi =
            std::clamp((static_cast<std::ptrdiff_t>(g.w) - off + st - 1) / st, lo, ow);
        for (std::size_t oy = 0; oy < g.oh.out; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.oh.pad_before;
          T* dst = row + oy * g.ow.out;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          std::fill(dst, dst + lo, T(0));
          for (std::ptrdiff_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * st + off];
          std::fill(dst + hi, dst + ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* img) {
  const std::size_t npix = g.out_pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * npix;
        for (std::size_t oy = 0; oy < g.oh.out; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.oh.pad_before;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow.out; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.ow.pad_before;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(c * g.h + iy) * g.w + ix] += row[oy * g.ow.out + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T>* tape = tape_of("matmul", {&a, &b});
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  gemm_nn(m, n, k, a.raw(), b.raw(), out.mutable_data().data(), false);
  if (!tape) return out;
  const bool need_a = on_tape(tape, a), need_b = on_tape(tape, b);
  return tape->record(out, ids_on_tape(tape, {&a, &b}), "matmul",
                      [a, b, need_a, need_b, m, n, k](const Tensor<T>& g, Gradients<T>& sink) {
                        if (need_a) {
                          Tensor<T> da({m, k});
                          gemm_nt(m, k, n, g.raw(), b.raw(), da.mutable_data().data(), false);
                          sink.accumulate(a.id(), da);
                        }
                        if (need_b) {
                          Tensor<T> db({k, n});
                          gemm_tn(k, n, m, a.raw(), g.raw(), db.mutable_data().data(), false);
                          sink.accumulate(b.id(), db);
                        }
                      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  Tape<T>* tape = tape_of("linear", {&x, &weight, &bias});
  if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    shape_mismatch("linear", x.shape(), weight.shape());
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(1)) {
    shape_mismatch("linear(bias)", bias.shape(), weight.shape());
  }
  const std::size_t d = weight.dim(0), e = weight.dim(1), rows = x.numel() / d;
  Shape out_shape = x.shape();
  out_shape.back() = e;
  Tensor<T> out(out_shape);
  T* y = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bias.raw(), bias.raw() + e, y + r * e);
  gemm_nn(rows, e, d, x.raw(), weight.raw(), y, true);
  if (!tape) return out;
  const bool nx = on_tape(tape, x), nw = on_tape(tape, weight), nb = on_tape(tape, bias);
  return tape->record(
      out, ids_on_tape(tape, {&x, &weight, &bias}), "linear",
      [x, weight, bias, nx, nw, nb, rows, d, e](const Tensor<T>& g, Gradients<T>& sink) {
        if (nx) {
          Tensor<T> dx(x.shape());
          gemm_nt(rows, d, e, g.raw(), weight.raw(), dx.mutable_data().data(), false);
          sink.accumulate(x.id(), dx);
        }
        if (nw) {
          Tensor<T> dw({d, e});
          gemm_tn(d, e, rows, x.raw(), g.raw(), dw.mutable_data().data(), false);
          sink.accumulate(weight.id(), dw);
        }
        if (nb) {
          Tensor<T> db({e});
          auto dbv = db.mutable_data();
          const T* gv = g.raw();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < e; ++j) dbv[j] += gv[r * e + j];
          }
          sink.accumulate(bias.id(), db);
        }
      });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  Tape<T>* tape = tape_of("add_bias", {&x, &bias});
  if (x.rank() < 1 || bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
    shape_mismatch("add_bias", x.shape(), bias.shape());
  }
  const std::size_t e = bias.dim(0), rows = x.numel() / e;
  Tensor<T> out(x.shape());
  auto y = out.mutable_data();
  auto xv = x.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < e; ++j) y[r * e + j] = xv[r * e + j] + bv[j];
  }
  if (!tape) return out;
  const bool nx = on_tape(tape, x), nb = on_tape(tape, bias);
  return tape->record(out, ids_on_tape(tape, {&x, &bias}), "add_bias",
                      [xid = x.id(), bid = bias.id(), nx, nb, rows, e](const Tensor<T>& g,
                                                                      Gradients<T>& sink) {
                        if (nx) sink.accumulate(xid, g);
                        if (nb) {
                          Tensor<T> db({e});
                          auto dbv = db.mutable_data();
                          auto gv = g.data();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t j = 0; j < e; ++j) dbv[j] += gv[r * e + j];
                          }
                          sink.accumulate(bid, db);
                        }
                      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T>* tape = tape_of("add", {&a, &b});
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto y = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  if (!tape) return out;
  const bool na = on_tape(tape, a), nb = on_tape(tape, b);
  return tape->record(out, ids_on_tape(tape, {&a, &b}), "add",
                      [aid = a.id(), bid = b.id(), na, nb](const Tensor<T>& g,
                                                           Gradients<T>& sink) {
                        if (na) sink.accumulate(aid, g);
                        if (nb) sink.accumulate(bid, g);
                      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T>* tape = tape_of("mul", {&a, &b});
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto y = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  if (!tape) return out;
  const bool na = on_tape(tape, a), nb = on_tape(tape, b);
  return tape->record(out, ids_on_tape(tape, {&a, &b}), "mul",
                      [a, b, na, nb](const Tensor<T>& g, Gradients<T>& sink) {
                        auto gv = g.data();
                        if (na) {
                          Tensor<T> da(a.shape());
                          auto d = da.mutable_data();
                          auto bv = b.data();
                          for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * bv[i];
                          sink.accumulate(a.id(), da);
                        }
                        if (nb) {
                          Tensor<T> db(b.shape());
                          auto d = db.mutable_data();
                          auto av = a.data();
                          for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * av[i];
                          sink.accumulate(b.id(), db);
                        }
                      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, Padding padding) {
  Tape<T>* tape = tape_of("conv2d", {&input, &kernel, &bias});
  if (stride < 1) throw ShapeError("conv2d: stride must be positive, got " + std::to_string(stride));
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    shape_mismatch("conv2d", input.shape(), kernel.shape());
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    shape_mismatch("conv2d(bias)", bias.shape(), kernel.shape());
  }
  ConvGeometry geo{input.dim(0),
                   input.dim(1),
                   input.dim(2),
                   input.dim(3),
                   kernel.dim(0),
                   kernel.dim(2),
                   kernel.dim(3),
                   static_cast<std::size_t>(stride),
                   conv_axis(input.dim(2), kernel.dim(2), stride, padding),
                   conv_axis(input.dim(3), kernel.dim(3), stride, padding)};
  const std::size_t npix = geo.out_pixels(), patch = geo.patch();
  Tensor<T> out({geo.batch, geo.cout, geo.oh.out, geo.ow.out});
  std::vector<T> cols(patch * npix);
  T* y = out.mutable_data().data();
  for (std::size_t b = 0; b < geo.batch; ++b) {
    im2col(geo, input.raw() + b * geo.cin * geo.h * geo.w, cols.data());
    T* yb = y + b * geo.cout * npix;
    for (std::size_t co = 0; co < geo.cout; ++co) {
      std::fill(yb + co * npix, yb + (co + 1) * npix, bias.raw()[co]);
    }
    gemm_nn(geo.cout, npix, patch, kernel.raw(), cols.data(), yb, true);
  }
  if (!tape) return out;
  const bool nx = on_tape(tape, input), nk = on_tape(tape, kernel), nb = on_tape(tape, bias);
  return tape->record(
      out, ids_on_tape(tape, {&input, &kernel, &bias}), "conv2d",
      [input, kernel, bias, geo, nx, nk, nb](const Tensor<T>& g, Gradients<T>& sink) {
        const std::size_t npix = geo.out_pixels(), patch = geo.patch();
        std::vector<T> cols(patch * npix);
        Tensor<T> dx, dk, db;
        if (nx) dx = Tensor<T>(input.shape());
        if (nk) dk = Tensor<T>(kernel.shape());
        if (nb) db = Tensor<T>(bias.shape());
        for (std::size_t b = 0; b < geo.batch; ++b) {
          const T* gb = g.raw() + b * geo.cout * npix;
          if (nk) {
            im2col(geo, input.raw() + b * geo.cin * geo.h * geo.w, cols.data());
            gemm_nt(geo.cout, patch, npix, gb, cols.data(), dk.mutable_data().data(), true);
          }
          if (nx) {
            gemm_tn(patch, npix, geo.cout, kernel.raw(), gb, cols.data(), false);
            col2im(geo, cols.data(), dx.mutable_data().data() + b * geo.cin * geo.h * geo.w);
          }
          if (nb) {
            auto dbv = db.mutable_data();
            for (std::size_t co = 0; co < geo.cout; ++co) {
              T acc = T(0);
              for (std::size_t p = 0; p < npix; ++p) acc += gb[co * npix + p];
              dbv[co] += acc;
            }
          }
        }
        if (nx) sink.accumulate(input.id(), dx);
        if (nk) sink.accumulate(kernel.id(), dk);
        if (nb) sink.accumulate(bias.id(), db);
      });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input) {
  Tape<T>* tape = tape_of("maxpool2d", {&input});
  if (input.rank() != 4) throw ShapeError("maxpool2d: expected rank-4 input, got " + to_string(input.shape()));
  const std::size_t bc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2d: spatial extents must be even, got " + to_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({input.dim(0), input.dim(1), oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  auto y = out.mutable_data();
  const T* x = input.raw();
  for (std::size_t p = 0; p < bc; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (p * h + 2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (p * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        y[o] = x[best];
        (*argmax)[o] = best;
      }
    }
  }
  if (!tape) return out;
  return tape->record(out, {input.id()}, "maxpool2d",
                      [xid = input.id(), xshape = input.shape(), argmax](const Tensor<T>& g,
                                                                          Gradients<T>& sink) {
                        Tensor<T> dx(xshape);
                        auto d = dx.mutable_data();
                        auto gv = g.data();
                        for (std::size_t o = 0; o < gv.size(); ++o) d[(*argmax)[o]] += gv[o];
                        sink.accumulate(xid, dx);
                      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  Tape<T>* tape = tape_of("layer_norm", {&x, &gamma, &beta});
  if (gamma.rank() != 1 || gamma.dim(0) == 0) {
    throw ShapeError("layer_norm: gamma must be a non-empty vector");
  }
  const std::size_t d = gamma.dim(0);
  if (x.rank() < 1 || x.shape().back() != d) shape_mismatch("layer_norm", x.shape(), gamma.shape());
  if (beta.shape() != gamma.shape()) shape_mismatch("layer_norm(beta)", beta.shape(), gamma.shape());
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  auto y = out.mutable_data();
  const T* xv = x.raw();
  const T* gv = gamma.raw();
  const T* bv = beta.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    Wide<T> mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    Wide<T> var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const Wide<T> c = row[j] - mean;
      var += c * c;
    }
    var /= d;
    const Wide<T> is = 1 / std::sqrt(var + static_cast<Wide<T>>(eps));
    (*inv_std)[r] = static_cast<T>(is);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>((row[j] - mean) * is);
      (*xhat)[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  if (!tape) return out;
  const bool nx = on_tape(tape, x), ng = on_tape(tape, gamma), nb = on_tape(tape, beta);
  return tape->record(
      out, ids_on_tape(tape, {&x, &gamma, &beta}), "layer_norm",
      [x, gamma, beta, xhat, inv_std, nx, ng, nb, rows, d](const Tensor<T>& g,
                                                          Gradients<T>& sink) {
        const T* gr = g.raw();
        if (nx) {
          Tensor<T> dx(x.shape());
          auto dxv = dx.mutable_data();
          const T* gam = gamma.raw();
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_g = 0.0, mean_gh = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = static_cast<double>(gr[r * d + j]) * gam[j];
              mean_g += gh;
              mean_gh += gh * (*xhat)[r * d + j];
            }
            mean_g /= static_cast<double>(d);
            mean_gh /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = static_cast<double>(gr[r * d + j]) * gam[j];
              dxv[r * d + j] = static_cast<T>(
                  (*inv_std)[r] * (gh - mean_g - (*xhat)[r * d + j] * mean_gh));
            }
          }
          sink.accumulate(x.id(), dx);
        }
        if (ng || nb) {
          Tensor<T> dg({d}), db({d});
          auto dgv = dg.mutable_data();
          auto dbv = db.mutable_data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              dgv[j] += gr[r * d + j] * (*xhat)[r * d + j];
              dbv[j] += gr[r * d + j];
            }
          }
          if (ng) sink.accumulate(gamma.id(), dg);
          if (nb) sink.accumulate(beta.id(), db);
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tape<T>* tape = tape_of("gelu", {&x});
  Tensor<T> out(x.shape());
  auto y = out.mutable_data();
  auto xv = x.data();
  const T c = static_cast<T>(kGeluSqrt2OverPi), a = static_cast<T>(kGeluCubic);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = xv[i];
    y[i] = T(0.5) * v * (T(1) + fast_tanh(c * (v + a * v * v * v)));
  }
  if (!tape) return out;
  return tape->record(out, {x.id()}, "gelu", [x, c, a](const Tensor<T>& g, Gradients<T>& sink) {
    Tensor<T> dx(x.shape());
    auto d = dx.mutable_data();
    auto xv = x.data();
    auto gv = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T v = xv[i];
      const T t = fast_tanh(c * (v + a * v * v * v));
      const T dt = (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      d[i] = gv[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
    }
    sink.accumulate(x.id(), dx);
  });
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_axis(const Tensor<T>& x, std::size_t axis) {
  tape_of("split_axis", {&x});
  if (axis >= x.rank()) throw ShapeError("split_axis: axis out of range for " + to_string(x.shape()));
  if (x.dim(axis) % 2 != 0) {
    throw ShapeError("split_axis: extent " + std::to_string(x.dim(axis)) + " along axis " +
                     std::to_string(axis) + " is odd");
  }
  const AxisSplit s = axis_split(x.shape(), axis);
  const std::size_t half = s.extent / 2;
  Shape half_shape = x.shape();
  half_shape[axis] = half;
  auto first = std::make_shared<std::vector<std::size_t>>();
  auto second = std::make_shared<std::vector<std::size_t>>();
  first->reserve(x.numel() / 2);
  second->reserve(x.numel() / 2);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      auto& dst = e < half ? *first : *second;
      for (std::size_t i = 0; i < s.inner; ++i) dst.push_back((o * s.extent + e) * s.inner + i);
    }
  }
  return {gather<T>("split_axis", x, half_shape, first),
          gather<T>("split_axis", x, half_shape, second)};
}

template <typename T>
Tensor<T> concat_axis(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  Tape<T>* tape = tape_of("concat_axis", {&a, &b});
  if (axis >= a.rank() || a.rank() != b.rank()) shape_mismatch("concat_axis", a.shape(), b.shape());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) shape_mismatch("concat_axis", a.shape(), b.shape());
  }
  const AxisSplit sa = axis_split(a.shape(), axis), sb = axis_split(b.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] += b.dim(axis);
  Tensor<T> out(out_shape);
  auto y = out.mutable_data();
  const std::size_t ca = sa.extent * sa.inner, cb = sb.extent * sb.inner;
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy(a.raw() + o * ca, a.raw() + (o + 1) * ca, y.data() + o * (ca + cb));
    std::copy(b.raw() + o * cb, b.raw() + (o + 1) * cb, y.data() + o * (ca + cb) + ca);
  }
  if (!tape) return out;
  const bool na = on_tape(tape, a), nb = on_tape(tape, b);
  return tape->record(
      out, ids_on_tape(tape, {&a, &b}), "concat_axis",
      [aid = a.id(), bid = b.id(), as = a.shape(), bs = b.shape(), na, nb, outer = sa.outer, ca,
       cb](const Tensor<T>& g, Gradients<T>& sink) {
        Tensor<T> da(as), db(bs);
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g.raw() + o * (ca + cb);
          std::copy(src, src + ca, da.mutable_data().data() + o * ca);
          std::copy(src + ca, src + ca + cb, db.mutable_data().data() + o * cb);
        }
        if (na) sink.accumulate(aid, da);
        if (nb) sink.accumulate(bid, db);
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Tape<T>* tape = tape_of("reshape", {&x});
  if (cgmlp::numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (!tape) return out;
  return tape->record(out, {x.id()}, "reshape",
                      [xid = x.id(), xs = x.shape()](const Tensor<T>& g, Gradients<T>& sink) {
                        sink.accumulate(xid, Tensor<T>(xs, std::vector<T>(g.data().begin(),
                                                                          g.data().end())));
                      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tape<T>* tape = tape_of("sum", {&x});
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (!tape) return out;
  return tape->record(out, {x.id()}, "sum",
                      [xid = x.id(), xs = x.shape()](const Tensor<T>& g, Gradients<T>& sink) {
                        sink.accumulate(xid, Tensor<T>::full(xs, g.item()));
                      });
}

template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
  Tape<T>* tape = tape_of("mean_tokens", {&x});
  if (x.rank() != 3) throw ShapeError("mean_tokens: expected [B x n x d], got " + to_string(x.shape()));
  const std::size_t bsz = x.dim(0), n = x.dim(1), d = x.dim(2);
  Tensor<T> out({bsz, d});
  auto y = out.mutable_data();
  const T* xv = x.raw();
  std::vector<Wide<T>> acc(d);
  for (std::size_t b = 0; b < bsz; ++b) {
    std::fill(acc.begin(), acc.end(), Wide<T>(0));
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < d; ++j) acc[j] += xv[(b * n + t) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) y[b * d + j] = static_cast<T>(acc[j] / n);
  }
  if (!tape) return out;
  return tape->record(out, {x.id()}, "mean_tokens",
                      [xid = x.id(), xs = x.shape()](const Tensor<T>& g, Gradients<T>& sink) {
                        const std::size_t bsz = xs[0], n = xs[1], d = xs[2];
                        Tensor<T> dx(xs);
                        auto dv = dx.mutable_data();
                        const T* gv = g.raw();
                        const T scale = T(1) / static_cast<T>(n);
                        for (std::size_t b = 0; b < bsz; ++b) {
                          for (std::size_t t = 0; t < n; ++t) {
                            for (std::size_t j = 0; j < d; ++j) {
                              dv[(b * n + t) * d + j] = gv[b * d + j] * scale;
                            }
                          }
                        }
                        sink.accumulate(xid, dx);
                      });
}

template <typename T>
Tensor<T> token_affine(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  Tape<T>* tape = tape_of("token_affine", {&x, &weight, &bias});
  if (x.rank() != 3 || weight.rank() != 2 || weight.dim(1) != x.dim(1)) {
    shape_mismatch("token_affine", x.shape(), weight.shape());
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    shape_mismatch("token_affine(bias)", bias.shape(), weight.shape());
  }
  const std::size_t bsz = x.dim(0), n = x.dim(1), c = x.dim(2), m = weight.dim(0);
  Tensor<T> out({bsz, m, c});
  T* y = out.mutable_data().data();
  for (std::size_t b = 0; b < bsz; ++b) {
    T* yb = y + b * m * c;
    for (std::size_t i = 0; i < m; ++i) std::fill(yb + i * c, yb + (i + 1) * c, bias.raw()[i]);
    gemm_nn(m, c, n, weight.raw(), x.raw() + b * n * c, yb, true);
  }
  if (!tape) return out;
  const bool nx = on_tape(tape, x), nw = on_tape(tape, weight), nb = on_tape(tape, bias);
  return tape->record(
      out, ids_on_tape(tape, {&x, &weight, &bias}), "token_affine",
      [x, weight, bias, nx, nw, nb, bsz, n, c, m](const Tensor<T>& g, Gradients<T>& sink) {
        Tensor<T> dx, dw, db;
        if (nx) dx = Tensor<T>(x.shape());
        if (nw) dw = Tensor<T>(weight.shape());
        if (nb) db = Tensor<T>(bias.shape());
        for (std::size_t b = 0; b < bsz; ++b) {
          const T* gb = g.raw() + b * m * c;
          if (nx) gemm_tn(n, c, m, weight.raw(), gb, dx.mutable_data().data() + b * n * c, false);
          if (nw) gemm_nt(m, n, c, gb, x.raw() + b * n * c, dw.mutable_data().data(), true);
          if (nb) {
            auto dbv = db.mutable_data();
            for (std::size_t i = 0; i < m; ++i) {
              T acc = T(0);
              for (std::size_t j = 0; j < c; ++j) acc += gb[i * c + j];
              dbv[i] += acc;
            }
          }
        }
        if (nx) sink.accumulate(x.id(), dx);
        if (nw) sink.accumulate(weight.id(), dw);
        if (nb) sink.accumulate(bias.id(), db);
      });
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& img, std::size_t patch) {
  if (img.rank() != 4) throw ShapeError("patchify: expected [B x C x H x W], got " + to_string(img.shape()));
  const std::size_t bsz = img.dim(0), ch = img.dim(1), h = img.dim(2), w = img.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: image " + to_string(img.shape()) + " not divisible by patch size " +
                     std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch, feat = ch * patch * patch;
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(img.numel());
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        for (std::size_t c = 0; c < ch; ++c) {
          for (std::size_t dy = 0; dy < patch; ++dy) {
            for (std::size_t dx = 0; dx < patch; ++dx) {
              index->push_back(((b * ch + c) * h + py * patch + dy) * w + px * patch + dx);
            }
          }
        }
      }
    }
  }
  return gather<T>("patchify", img, {bsz, gh * gw, feat}, index);
}

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& feature_map) {
  if (feature_map.rank() != 4) {
    throw ShapeError("to_tokens: expected [B x C x h x w], got " + to_string(feature_map.shape()));
  }
  const std::size_t bsz = feature_map.dim(0), ch = feature_map.dim(1);
  const std::size_t hw = feature_map.dim(2) * feature_map.dim(3);
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(feature_map.numel());
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t c = 0; c < ch; ++c) index->push_back((b * ch + c) * hw + p);
    }
  }
  return gather<T>("to_tokens", feature_map, {bsz, hw, ch}, index);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  Tape<T>* tape = tape_of("cross_entropy", {&logits});
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t bsz = logits.dim(0), k = logits.dim(1);
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  Wide<T> total = 0;
  const T* z = logits.raw();
  for (std::size_t b = 0; b < bsz; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw Error("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                  std::to_string(k) + ")");
    }
    const T* row = z + b * k;
    const Wide<T> mx = *std::max_element(row, row + k);
    Wide<T> denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const Wide<T> log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      (*probs)[b * k + j] = static_cast<T>(std::exp(row[j] - mx - log_denom));
    }
    total += log_denom - (row[label] - mx);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<Wide<T>>(bsz)));
  if (!tape) return out;
  std::vector<int> lab(labels.begin(), labels.end());
  return tape->record(out, {logits.id()}, "cross_entropy",
                      [lid = logits.id(), ls = logits.shape(), probs, lab = std::move(lab)](
                          const Tensor<T>& g, Gradients<T>& sink) {
                        const std::size_t bsz = ls[0], k = ls[1];
                        Tensor<T> dz(ls);
                        auto d = dz.mutable_data();
                        const T scale = g.item() / static_cast<T>(bsz);
                        for (std::size_t b = 0; b < bsz; ++b) {
                          for (std::size_t j = 0; j < k; ++j) {
                            T p = (*probs)[b * k + j];
                            if (static_cast<int>(j) == lab[b]) p -= T(1);
                            d[b * k + j] = p * scale;
                          }
                        }
                        sink.accumulate(lid, dz);
                      });
}

#define CGMLP_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,        \
                            Padding);                                                         \
  template Tensor<T> maxpool2d(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template std::pair<Tensor<T>, Tensor<T>> split_axis(const Tensor<T>&, std::size_t);         \
  template Tensor<T> concat_axis(const Tensor<T>&, const Tensor<T>&, std::size_t);            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean_tokens(const Tensor<T>&);                                           \
  template Tensor<T> token_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> to_tokens(const Tensor<T>&);                                             \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);

CGMLP_INSTANTIATE_OPS(float)
CGMLP_INSTANTIATE_OPS(double)

#undef CGMLP_INSTANTIATE_OPS

}  // namespace cgmlp::ops
