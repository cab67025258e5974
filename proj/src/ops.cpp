#include "nasrl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nasrl/errors.hpp"

namespace nasrl {

namespace {

using StoragePtr = std::shared_ptr<detail::Storage>;

// Grad buffer of an input, or null if the input does not take gradients.
double* grad_of(const StoragePtr& s) {
  if (!s->requires_grad) return nullptr;
  s->ensure_grad();
  return s->grad.data();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* operand) {
  if (!t.defined()) throw ContractViolation(std::string(op) + ": " + operand + " is empty");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + operand + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

struct ConvGeom {
  int n, cin, h, w, cout, cg, kh, kw, oh, ow, opg;
};

// Source offset inside one input plane for every (kernel tap, output pixel),
// or -1 where the tap reads padding. Shared by all channels.
std::vector<std::ptrdiff_t> tap_offsets(const ConvGeom& g, const Conv2dOptions& opt) {
  const std::size_t taps = std::size_t(g.kh) * g.kw, pixels = std::size_t(g.oh) * g.ow;
  std::vector<std::ptrdiff_t> off(taps * pixels, -1);
  for (int ki = 0; ki < g.kh; ++ki)
    for (int kj = 0; kj < g.kw; ++kj) {
      std::ptrdiff_t* row = off.data() + (std::size_t(ki) * g.kw + kj) * pixels;
      for (int oh = 0; oh < g.oh; ++oh) {
        const int ih = oh * opt.stride - opt.pad_h + ki * opt.dilation;
        if (ih < 0 || ih >= g.h) continue;
        for (int ow = 0; ow < g.ow; ++ow) {
          const int iw = ow * opt.stride - opt.pad_w + kj * opt.dilation;
          if (iw >= 0 && iw < g.w) row[std::size_t(oh) * g.ow + ow] = std::ptrdiff_t(ih) * g.w + iw;
        }
      }
    }
  return off;
}

// Column matrix of one sample and group: row (icg, tap), column output pixel.
void im2col(const double* x_group, const ConvGeom& g, const std::vector<std::ptrdiff_t>& off, double* cols) {
  const std::size_t taps = std::size_t(g.kh) * g.kw, pixels = std::size_t(g.oh) * g.ow;
  const std::size_t plane = std::size_t(g.h) * g.w;
  for (int icg = 0; icg < g.cg; ++icg) {
    const double* src = x_group + std::size_t(icg) * plane;
    for (std::size_t t = 0; t < taps; ++t) {
      const std::ptrdiff_t* o = off.data() + t * pixels;
      double* dst = cols + (std::size_t(icg) * taps + t) * pixels;
      for (std::size_t p = 0; p < pixels; ++p) dst[p] = o[p] >= 0 ? src[o[p]] : 0.0;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  if (opt.groups < 1 || opt.stride < 1 || opt.dilation < 1) {
    throw ContractViolation("conv2d: stride, dilation and groups must be positive");
  }
  ConvGeom g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.cg = w.dim(1);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  if (g.cin % opt.groups != 0) {
    throw DimensionError("conv2d: input channels (axis 1) = " + std::to_string(g.cin) +
                         " not divisible by groups = " + std::to_string(opt.groups));
  }
  if (g.cg * opt.groups != g.cin) {
    throw DimensionError("conv2d: weight axis 1 = " + std::to_string(g.cg) + " but input axis 1 / groups = " +
                         std::to_string(g.cin / opt.groups));
  }
  if (g.cout % opt.groups != 0) {
    throw DimensionError("conv2d: weight axis 0 = " + std::to_string(g.cout) + " not divisible by groups");
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw DimensionError("conv2d: kernel axes 2,3 must be odd, got " + shape_str(w.shape()));
  }
  g.oh = (g.h + 2 * opt.pad_h - opt.dilation * (g.kh - 1) - 1) / opt.stride + 1;
  g.ow = (g.w + 2 * opt.pad_w - opt.dilation * (g.kw - 1) - 1) / opt.stride + 1;
  if (g.oh < 1 || g.ow < 1) {
    throw DimensionError("conv2d: input spatial axes 2,3 " + shape_str(x.shape()) + " too small for kernel");
  }
  g.opg = g.cout / opt.groups;

  Tensor out({g.n, g.cout, g.oh, g.ow});
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  double* od = out.data().data();
  // 1x1, stride 1, no padding: input planes already are the column matrix.
  const bool pointwise = g.kh == 1 && g.kw == 1 && opt.stride == 1 && opt.pad_h == 0 && opt.pad_w == 0;
  const auto offsets = pointwise ? std::vector<std::ptrdiff_t>{} : tap_offsets(g, opt);
  const std::size_t plane = std::size_t(g.h) * g.w, pixels = std::size_t(g.oh) * g.ow;
  const std::size_t kdim = std::size_t(g.cg) * g.kh * g.kw;
  std::vector<double> cols(pointwise ? 0 : kdim * pixels);

  for (int n = 0; n < g.n; ++n) {
    for (int grp = 0; grp < opt.groups; ++grp) {
      const double* xg = xd + (std::size_t(n) * g.cin + std::size_t(grp) * g.cg) * plane;
      const double* cm = xg;
      if (!pointwise) {
        im2col(xg, g, offsets, cols.data());
        cm = cols.data();
      }
      for (int oc = grp * g.opg; oc < (grp + 1) * g.opg; ++oc) {
        double* orow = od + (std::size_t(n) * g.cout + oc) * pixels;
        const double* wrow = wd + std::size_t(oc) * kdim;
        for (std::size_t k = 0; k < kdim; ++k) {
          const double wv = wrow[k];
          const double* crow = cm + k * pixels;
          for (std::size_t p = 0; p < pixels; ++p) orow[p] += wv * crow[p];
        }
      }
    }
  }

  if (should_record({&x, &w})) {
    out.set_requires_grad(true);
    auto xs = x.storage();
    auto ws = w.storage();
    auto os = out.storage();
    active_tape()->record({x, w}, out, [xs, ws, os, g, opt, offsets, pointwise]() {
      double* gx = grad_of(xs);
      double* gw = grad_of(ws);
      const double* xd = xs->data.data();
      const double* wd = ws->data.data();
      const double* go = os->grad.data();
      const std::size_t plane = std::size_t(g.h) * g.w, pixels = std::size_t(g.oh) * g.ow;
      const std::size_t taps = std::size_t(g.kh) * g.kw, kdim = std::size_t(g.cg) * taps;
      std::vector<double> cols(pointwise ? 0 : kdim * pixels), gcols(kdim * pixels);
      for (int n = 0; n < g.n; ++n) {
        for (int grp = 0; grp < opt.groups; ++grp) {
          const std::size_t in_off = (std::size_t(n) * g.cin + std::size_t(grp) * g.cg) * plane;
          const double* cm = xd + in_off;
          if (!pointwise) {
            im2col(xd + in_off, g, offsets, cols.data());
            cm = cols.data();
          }
          // Pointwise convs scatter straight into gx; others collect column gradients first.
          double* gc = pointwise ? (gx ? gx + in_off : nullptr) : gcols.data();
          if (!pointwise) std::fill(gcols.begin(), gcols.end(), 0.0);
          for (int oc = grp * g.opg; oc < (grp + 1) * g.opg; ++oc) {
            const double* grow = go + (std::size_t(n) * g.cout + oc) * pixels;
            const std::size_t w_off = std::size_t(oc) * kdim;
            for (std::size_t k = 0; k < kdim; ++k) {
              const double* crow = cm + k * pixels;
              if (gw) {
                double acc = 0.0;
                for (std::size_t p = 0; p < pixels; ++p) acc += grow[p] * crow[p];
                gw[w_off + k] += acc;
              }
              if (gx) {
                const double wv = wd[w_off + k];
                double* gcrow = gc + k * pixels;
                for (std::size_t p = 0; p < pixels; ++p) gcrow[p] += wv * grow[p];
              }
            }
          }
          if (gx && !pointwise) {
            for (int icg = 0; icg < g.cg; ++icg) {
              double* dst = gx + in_off + std::size_t(icg) * plane;
              for (std::size_t t = 0; t < taps; ++t) {
                const std::ptrdiff_t* o = offsets.data() + t * pixels;
                const double* src = gcols.data() + (std::size_t(icg) * taps + t) * pixels;
                for (std::size_t p = 0; p < pixels; ++p)
                  if (o[p] >= 0) dst[o[p]] += src[p];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pool2d

Tensor pool2d(const Tensor& x, PoolKind kind, int kernel, int stride, int padding) {
  require_rank(x, 4, "pool2d", "input");
  if (kernel < 1 || stride < 1 || padding < 0) throw ContractViolation("pool2d: invalid window parameters");
  if (kernel % 2 == 0 && stride == 1) {
    throw ContractViolation("pool2d: invalid kernel " + std::to_string(kernel) +
                            " (even windows have no centred stride-1 form)");
  }
  if (2 * padding > kernel) throw ContractViolation("pool2d: padding exceeds half the kernel");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = (h + 2 * padding - kernel) / stride + 1;
  const int ow = (w + 2 * padding - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw DimensionError("pool2d: spatial axes 2,3 of " + shape_str(x.shape()) + " too small");

  Tensor out({n, c, oh, ow});
  const std::size_t out_n = out.numel();
  // Max: flat input index of the winner. Avg: number of valid cells.
  std::vector<std::size_t> aux(out_n);
  const double* xd = x.data().data();
  double* od = out.data().data();

  for (int p = 0; p < n * c; ++p) {
    const std::size_t in_base = static_cast<std::size_t>(p) * h * w;
    for (int i = 0; i < oh; ++i) {
      const int h0 = std::max(0, i * stride - padding);
      const int h1 = std::min(h, i * stride - padding + kernel);
      for (int j = 0; j < ow; ++j) {
        const int w0 = std::max(0, j * stride - padding);
        const int w1 = std::min(w, j * stride - padding + kernel);
        const std::size_t o = (static_cast<std::size_t>(p) * oh + i) * ow + j;
        if (kind == PoolKind::max) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = in_base + static_cast<std::size_t>(h0) * w + w0;
          for (int a = h0; a < h1; ++a) {
            for (int b = w0; b < w1; ++b) {
              const std::size_t idx = in_base + static_cast<std::size_t>(a) * w + b;
              if (xd[idx] > best) {
                best = xd[idx];
                arg = idx;
              }
            }
          }
          od[o] = best;
          aux[o] = arg;
        } else {
          double acc = 0.0;
          for (int a = h0; a < h1; ++a)
            for (int b = w0; b < w1; ++b) acc += xd[in_base + static_cast<std::size_t>(a) * w + b];
          const std::size_t count = static_cast<std::size_t>(h1 - h0) * static_cast<std::size_t>(w1 - w0);
          od[o] = acc / static_cast<double>(count);
          aux[o] = count;
        }
      }
    }
  }

  if (should_record({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage();
    auto os = out.storage();
    active_tape()->record({x}, out, [xs, os, aux = std::move(aux), kind, kernel, stride, padding, n, c, h, w, oh,
                                     ow]() {
      double* gx = grad_of(xs);
      if (!gx) return;
      const double* go = os->grad.data();
      if (kind == PoolKind::max) {
        for (std::size_t o = 0; o < aux.size(); ++o) gx[aux[o]] += go[o];
        return;
      }
      for (int p = 0; p < n * c; ++p) {
        const std::size_t in_base = static_cast<std::size_t>(p) * h * w;
        for (int i = 0; i < oh; ++i) {
          const int h0 = std::max(0, i * stride - padding);
          const int h1 = std::min(h, i * stride - padding + kernel);
          for (int j = 0; j < ow; ++j) {
            const int w0 = std::max(0, j * stride - padding);
            const int w1 = std::min(w, j * stride - padding + kernel);
            const std::size_t o = (static_cast<std::size_t>(p) * oh + i) * ow + j;
            const double share = go[o] / static_cast<double>(aux[o]);
            for (int a = h0; a < h1; ++a)
              for (int b = w0; b < w1; ++b) gx[in_base + static_cast<std::size_t>(a) * w + b] += share;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats* running,
                   BnMode mode, double momentum, double eps) {
  require_rank(x, 4, "batchnorm2d", "input");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const bool affine = gamma.defined();
  if (affine != beta.defined()) throw ContractViolation("batchnorm2d: gamma and beta must both be set or both empty");
  if (affine && (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c))) {
    throw DimensionError("batchnorm2d: gamma/beta length must equal channel axis 1 = " + std::to_string(c));
  }
  if (mode != BnMode::batch_stats) {
    if (!running) throw ContractViolation("batchnorm2d: running statistics required in this mode");
    if (running->mean.size() != static_cast<std::size_t>(c)) {
      throw DimensionError("batchnorm2d: running stats length must equal channel axis 1");
    }
  }
  const std::size_t m = static_cast<std::size_t>(n) * hw;
  if (mode != BnMode::eval && m == 0) throw DimensionError("batchnorm2d: empty batch");

  std::vector<double> mean(c), invstd(c);
  const double* xd = x.data().data();
  for (int ch = 0; ch < c; ++ch) {
    if (mode == BnMode::eval) {
      mean[ch] = running->mean[ch];
      invstd[ch] = 1.0 / std::sqrt(running->var[ch] + eps);
      continue;
    }
    double s = 0.0;
    for (int b = 0; b < n; ++b) {
      const double* p = xd + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) s += p[i];
    }
    const double mu = s / static_cast<double>(m);
    double v = 0.0;
    for (int b = 0; b < n; ++b) {
      const double* p = xd + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
    }
    v /= static_cast<double>(m);
    mean[ch] = mu;
    invstd[ch] = 1.0 / std::sqrt(v + eps);
    if (mode == BnMode::train) {
      const double unbiased = m > 1 ? v * static_cast<double>(m) / static_cast<double>(m - 1) : v;
      running->mean[ch] = (1.0 - momentum) * running->mean[ch] + momentum * mu;
      running->var[ch] = (1.0 - momentum) * running->var[ch] + momentum * unbiased;
    }
  }

  Tensor out(x.shape());
  double* od = out.data().data();
  const double* gd = affine ? gamma.data().data() : nullptr;
  const double* bd = affine ? beta.data().data() : nullptr;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
      const double gm = gd ? gd[ch] : 1.0;
      const double bt = bd ? bd[ch] : 0.0;
      for (int i = 0; i < hw; ++i) od[off + i] = gm * (xd[off + i] - mean[ch]) * invstd[ch] + bt;
    }
  }

  if (should_record({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xs = x.storage();
    auto gs = affine ? gamma.storage() : nullptr;
    auto bs = affine ? beta.storage() : nullptr;
    auto os = out.storage();
    const bool use_batch = mode != BnMode::eval;
    active_tape()->record({x, gamma, beta}, out, [=, mean = std::move(mean), invstd = std::move(invstd)]() {
      double* gx = grad_of(xs);
      double* gg = gs ? grad_of(gs) : nullptr;
      double* gb = bs ? grad_of(bs) : nullptr;
      const double* xd = xs->data.data();
      const double* go = os->grad.data();
      const double* gd = gs ? gs->data.data() : nullptr;
      const double md = static_cast<double>(m);
      for (int ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < n; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
          for (int i = 0; i < hw; ++i) {
            const double xhat = (xd[off + i] - mean[ch]) * invstd[ch];
            sum_dy += go[off + i];
            sum_dy_xhat += go[off + i] * xhat;
          }
        }
        if (gg) gg[ch] += sum_dy_xhat;
        if (gb) gb[ch] += sum_dy;
        if (!gx) continue;
        const double gm = gd ? gd[ch] : 1.0;
        for (int b = 0; b < n; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
          for (int i = 0; i < hw; ++i) {
            if (use_batch) {
              const double xhat = (xd[off + i] - mean[ch]) * invstd[ch];
              gx[off + i] += gm * invstd[ch] / md * (md * go[off + i] - sum_dy - xhat * sum_dy_xhat);
            } else {
              gx[off + i] += gm * invstd[ch] * go[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and structural ops

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (should_record({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage();
    auto os = out.storage();
    active_tape()->record({x}, out, [xs, os]() {
      double* gx = grad_of(xs);
      if (!gx) return;
      for (std::size_t i = 0; i < os->grad.size(); ++i) {
        if (xs->data[i] > 0.0) gx[i] += os->grad[i];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  const int n = x.dim(0), in = x.dim(1), outf = w.dim(0);
  if (w.dim(1) != in) {
    throw DimensionError("linear: weight axis 1 = " + std::to_string(w.dim(1)) + " but input axis 1 = " +
                         std::to_string(in));
  }
  if (b.defined() && b.numel() != static_cast<std::size_t>(outf)) {
    throw DimensionError("linear: bias length must equal weight axis 0 = " + std::to_string(outf));
  }
  Tensor out({n, outf});
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  double* od = out.data().data();
  for (int r = 0; r < n; ++r) {
    for (int o = 0; o < outf; ++o) {
      double acc = b.defined() ? b.data()[o] : 0.0;
      for (int i = 0; i < in; ++i) acc += xd[r * in + i] * wd[o * in + i];
      od[r * outf + o] = acc;
    }
  }
  if (should_record({&x, &w, &b})) {
    out.set_requires_grad(true);
    auto xs = x.storage();
    auto ws = w.storage();
    auto bs = b.defined() ? b.storage() : nullptr;
    auto os = out.storage();
    active_tape()->record({x, w, b}, out, [=]() {
      double* gx = grad_of(xs);
      double* gw = grad_of(ws);
      double* gb = bs ? grad_of(bs) : nullptr;
      const double* go = os->grad.data();
      for (int r = 0; r < n; ++r) {
        for (int o = 0; o < outf; ++o) {
          const double g = go[r * outf + o];
          if (gb) gb[o] += g;
          for (int i = 0; i < in; ++i) {
            if (gx) gx[r * in + i] += g * ws->data[o * in + i];
            if (gw) gw[o * in + i] += g * xs->data[r * in + i];
          }
        }
      }
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> xs, int axis) {
  if (xs.empty()) throw ContractViolation("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis < 0 || static_cast<std::size_t>(axis) >= s0.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(s0.size()));
  }
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    if (t.rank() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t a = 0; a < s0.size(); ++a) {
      if (static_cast<int>(a) != axis && t.shape()[a] != s0[a]) {
        throw DimensionError("concat: axis " + std::to_string(a) + " mismatch (" + shape_str(t.shape()) + " vs " +
                             shape_str(s0) + ")");
      }
    }
    out_shape[axis] += t.shape()[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s0[a];
  for (std::size_t a = axis + 1; a < s0.size(); ++a) inner *= s0[a];

  Tensor out(out_shape);
  double* od = out.data().data();
  const std::size_t out_row = static_cast<std::size_t>(out_shape[axis]) * inner;
  std::size_t offset = 0;
  for (const auto& t : xs) {
    const std::size_t row = static_cast<std::size_t>(t.shape()[axis]) * inner;
    const double* td = t.data().data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(td + o * row, row, od + o * out_row + offset);
    offset += row;
  }
  if (should_record(xs)) {
    out.set_requires_grad(true);
    std::vector<StoragePtr> ins;
    std::vector<Tensor> keep;
    for (const auto& t : xs) {
      ins.push_back(t.storage());
      keep.push_back(t);
    }
    auto os = out.storage();
    active_tape()->record(keep, out, [ins, os, outer, inner, out_row, axis]() {
      std::size_t offset = 0;
      for (const auto& s : ins) {
        const std::size_t row = static_cast<std::size_t>(s->shape[axis]) * inner;
        if (double* g = grad_of(s)) {
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < row; ++i) g[o * row + i] += os->grad[o * out_row + offset + i];
        }
        offset += row;
      }
    });
  }
  return out;
}

Tensor weighted_sum(std::span<const Tensor> xs, std::span<const double> weights) {
  if (xs.empty()) throw ContractViolation("weighted_sum: no inputs");
  if (xs.size() != weights.size()) throw ContractViolation("weighted_sum: weight count mismatch");
  const Shape& s0 = xs[0].shape();
  for (const auto& t : xs) {
    if (t.shape() != s0) {
      throw DimensionError("add: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(s0));
    }
  }
  Tensor out(s0);
  auto od = out.data();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto td = xs[k].data();
    const double wk = weights[k];
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += wk * td[i];
  }
  if (should_record(xs)) {
    out.set_requires_grad(true);
    std::vector<StoragePtr> ins;
    std::vector<Tensor> keep(xs.begin(), xs.end());
    for (const auto& t : xs) ins.push_back(t.storage());
    std::vector<double> w(weights.begin(), weights.end());
    auto os = out.storage();
    active_tape()->record(keep, out, [ins, w, os]() {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        double* g = grad_of(ins[k]);
        if (!g) continue;
        for (std::size_t i = 0; i < os->grad.size(); ++i) g[i] += w[k] * os->grad[i];
      }
    });
  }
  return out;
}

Tensor add(std::span<const Tensor> xs) {
  const std::vector<double> ones(xs.size(), 1.0);
  return weighted_sum(xs, ones);
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Tensor xs[] = {a, b};
  return add(xs);
}

Tensor scale(const Tensor& x, double factor) {
  const Tensor xs[] = {x};
  const double w[] = {factor};
  return weighted_sum(xs, w);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out(a.shape());
  auto ad = a.data(), bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    active_tape()->record({a, b}, out, [as, bs, os]() {
      // Gradients are computed before either buffer is written so that
      // mul(x, x) accumulates 2x.
      std::vector<double> da(os->grad.size()), db(os->grad.size());
      for (std::size_t i = 0; i < da.size(); ++i) {
        da[i] = os->grad[i] * bs->data[i];
        db[i] = os->grad[i] * as->data[i];
      }
      if (double* g = grad_of(as))
        for (std::size_t i = 0; i < da.size(); ++i) g[i] += da[i];
      if (double* g = grad_of(bs))
        for (std::size_t i = 0; i < db.size(); ++i) g[i] += db[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  auto xd = x.data();
  Tensor out = Tensor::scalar(std::accumulate(xd.begin(), xd.end(), 0.0));
  if (should_record({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    active_tape()->record({x}, out, [xs, os]() {
      double* g = grad_of(xs);
      if (!g) return;
      for (std::size_t i = 0; i < xs->data.size(); ++i) g[i] += os->grad[0];
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  const double* xd = x.data().data();
  double* od = out.data().data();
  for (int p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += xd[static_cast<std::size_t>(p) * hw + i];
    od[p] = s / hw;
  }
  if (should_record({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    active_tape()->record({x}, out, [xs, os, n, c, hw]() {
      double* g = grad_of(xs);
      if (!g) return;
      for (int p = 0; p < n * c; ++p)
        for (int i = 0; i < hw; ++i) g[static_cast<std::size_t>(p) * hw + i] += os->grad[p] / hw;
    });
  }
  return out;
}

Tensor factorized_subsample(const Tensor& x) {
  require_rank(x, 4, "factorized_subsample", "input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  const int half = c / 2;
  Tensor out({n, c, oh, ow});
  // index map output -> input (or npos for zero fill)
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> src(out.numel(), npos);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const int off = ch < half ? 0 : 1;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const int ih = 2 * i + off, iw = 2 * j + off;
          const std::size_t o = ((static_cast<std::size_t>(b) * c + ch) * oh + i) * ow + j;
          if (ih < h && iw < w) src[o] = ((static_cast<std::size_t>(b) * c + ch) * h + ih) * w + iw;
        }
      }
    }
  }
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t o = 0; o < src.size(); ++o) od[o] = src[o] == npos ? 0.0 : xd[src[o]];
  if (should_record({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    active_tape()->record({x}, out, [xs, os, src = std::move(src)]() {
      double* g = grad_of(xs);
      if (!g) return;
      for (std::size_t o = 0; o < src.size(); ++o)
        if (src[o] != npos) g[src[o]] += os->grad[o];
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const int n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw DimensionError("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                         " != logits axis 0 = " + std::to_string(n));
  }
  if (n == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  std::vector<double> probs(static_cast<std::size_t>(n) * k);
  const double* ld = logits.data().data();
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    if (labels[r] < 0 || labels[r] >= k) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                       " outside [0," + std::to_string(k) + ")");
    }
    const double* row = ld + static_cast<std::size_t>(r) * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(r) * k + j] = std::exp(row[j] - mx) / z;
    loss += -(row[labels[r]] - mx - std::log(z));
  }
  Tensor out = Tensor::scalar(loss / n);
  if (should_record({&logits})) {
    out.set_requires_grad(true);
    auto ls = logits.storage(), os = out.storage();
    std::vector<int> lab(labels.begin(), labels.end());
    active_tape()->record({logits}, out, [ls, os, probs = std::move(probs), lab = std::move(lab), n, k]() {
      double* g = grad_of(ls);
      if (!g) return;
      const double up = os->grad[0] / n;
      for (int r = 0; r < n; ++r) {
        for (int j = 0; j < k; ++j) {
          const std::size_t idx = static_cast<std::size_t>(r) * k + j;
          g[idx] += up * (probs[idx] - (j == lab[r] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

}  // namespace nasrl
