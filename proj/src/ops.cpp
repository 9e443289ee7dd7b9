#include "jointdiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace jointdiff::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXf>;

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b,
                              std::string_view rule) {
  throw ContractViolation(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()) + " (" + std::string(rule) + ")");
}

void require_rank(std::string_view op, const Tensor& x, int rank) {
  if (!x.defined()) throw ContractViolation(std::string(op) + ": undefined input");
  if (x.rank() != rank)
    throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) +
                            " input, got " + shape_str(x.shape()));
}

Tensor finish(Tensor out, std::string_view op, bool record) {
  require_finite(out, op);
  if (record) out.set_requires_grad(true);
  return out;
}


struct ConvGeom {
  int batch, cin, h, w, cout, k, stride, pad, ho, wo;
  int rows() const { return cin * k * k; }
  int cols() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose input column ow * stride - pad + kj lies inside [0, w).
void valid_cols(const ConvGeom& g, int kj, int& lo, int& hi) {
  const int off = kj - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  hi = g.w - off <= 0 ? 0 : std::min(g.wo, (g.w - off - 1) / g.stride + 1);
  if (hi < lo) hi = lo;
}

void im2col(const float* x, const ConvGeom& g, float* cols) {
  const int n = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        float* dst = cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * n;
        int lo, hi;
        valid_cols(g, kj, lo, hi);
        const int off = kj - g.pad;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          float* row = dst + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(row, row + g.wo, 0.0f);
            continue;
          }
          const float* src = xc + ih * g.w + off;
          std::fill(row, row + lo, 0.0f);
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) row[ow] = src[ow * g.stride];
          }
          std::fill(row + hi, row + g.wo, 0.0f);
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeom& g, float* dx) {
  const int n = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    float* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const float* src = cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * n;
        int lo, hi;
        valid_cols(g, kj, lo, hi);
        const int off = kj - g.pad;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          float* dst = xc + ih * g.w + off;
          const float* row = src + oh * g.wo;
          for (int ow = lo; ow < hi; ++ow) dst[ow * g.stride] += row[ow];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3))
    shape_error("conv2d", x, w, "weight must be [Co, Ci, k, k] with Ci matching the input");
  if (stride < 1) throw ContractViolation("conv2d: stride must be >= 1");
  ConvGeom g{};
  g.batch = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.k = w.dim(2);
  g.stride = stride;
  g.pad = padding < 0 ? g.k / 2 : padding;
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) shape_error("conv2d", x, w, "kernel larger than padded input");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != g.cout))
    shape_error("conv2d", w, b, "bias must be [Co]");

  const bool record = needs_grad({&x, &w, &b});
  Tensor out(Shape{g.batch, g.cout, g.ho, g.wo});
  const int kr = g.rows();
  const int n = g.cols();
  const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(g.cout) * n;
  FloatBuffer cols(g.pointwise() ? 0 : static_cast<std::size_t>(kr) * n);
  ConstMapMat wm(w.data().data(), g.cout, kr);
  const float* xp = x.data().data();
  float* yp = out.data().data();
  for (int bi = 0; bi < g.batch; ++bi) {
    const float* xb = xp + bi * in_stride;
    MapMat y(yp + bi * out_stride, g.cout, n);
    if (g.pointwise()) {
      y.noalias() = wm * ConstMapMat(xb, kr, n);
    } else {
      im2col(xb, g, cols.data());
      y.noalias() = wm * ConstMapMat(cols.data(), kr, n);
    }
    if (b.defined()) y.colwise() += ConstMapVec(b.data().data(), g.cout);
  }
  out = finish(std::move(out), "conv2d", record);

  if (record) {
    active_tape()->record("conv2d", [x, w, b, out, g]() mutable {
      if (!out.has_grad()) return;
      const int kr = g.rows();
      const int n = g.cols();
      const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
      const std::size_t out_stride = static_cast<std::size_t>(g.cout) * n;
      const float* gy = out.grad().data();
      ConstMapMat wm(w.data().data(), g.cout, kr);
      FloatBuffer cols(g.pointwise() ? 0 : static_cast<std::size_t>(kr) * n);
      FloatBuffer dcols(static_cast<std::size_t>(kr) * n);
      const bool want_x = x.requires_grad();
      const bool want_w = w.requires_grad();
      const bool want_b = b.defined() && b.requires_grad();
      float* gx = want_x ? x.ensure_grad().data() : nullptr;
      float* gw = want_w ? w.ensure_grad().data() : nullptr;
      float* gb = want_b ? b.ensure_grad().data() : nullptr;
      for (int bi = 0; bi < g.batch; ++bi) {
        ConstMapMat dy(gy + bi * out_stride, g.cout, n);
        const float* xb = x.data().data() + bi * in_stride;
        if (want_w) {
          MapMat dw(gw, g.cout, kr);
          if (g.pointwise()) {
            dw.noalias() += dy * ConstMapMat(xb, kr, n).transpose();
          } else {
            im2col(xb, g, cols.data());
            dw.noalias() += dy * ConstMapMat(cols.data(), kr, n).transpose();
          }
        }
        if (want_b) {
          Eigen::Map<Eigen::VectorXf> db(gb, g.cout);
          db += dy.rowwise().sum();
        }
        if (want_x) {
          float* dxb = gx + bi * in_stride;
          if (g.pointwise()) {
            MapMat dx(dxb, kr, n);
            dx.noalias() += wm.transpose() * dy;
          } else {
            MapMat dc(dcols.data(), kr, n);
            dc.noalias() = wm.transpose() * dy;
            col2im_add(dcols.data(), g, dxb);
          }
        }
      }
    });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank("upsample_nearest", x, 4);
  const int bsz = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const bool record = needs_grad({&x});
  Tensor out(Shape{bsz, c, 2 * h, 2 * w});
  const float* src = x.data().data();
  float* dst = out.data().data();
  const int planes = bsz * c;
  for (int p = 0; p < planes; ++p) {
    const float* s = src + static_cast<std::size_t>(p) * h * w;
    float* d = dst + static_cast<std::size_t>(p) * 4 * h * w;
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j) d[i * 2 * w + j] = s[(i / 2) * w + j / 2];
  }
  out = finish(std::move(out), "upsample_nearest", record);
  if (record) {
    active_tape()->record("upsample_nearest", [x, out, planes, h, w]() mutable {
      if (!out.has_grad()) return;
      const float* gy = out.grad().data();
      float* gx = x.ensure_grad().data();
      for (int p = 0; p < planes; ++p) {
        const float* s = gy + static_cast<std::size_t>(p) * 4 * h * w;
        float* d = gx + static_cast<std::size_t>(p) * h * w;
        for (int i = 0; i < 2 * h; ++i)
          for (int j = 0; j < 2 * w; ++j) d[(i / 2) * w + j / 2] += s[i * 2 * w + j];
      }
    });
  }
  return out;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank("dense", x, 2);
  require_rank("dense", w, 2);
  if (w.dim(1) != x.dim(1)) shape_error("dense", x, w, "weight must be [out, in]");
  const int bsz = x.dim(0), in = x.dim(1), outw = w.dim(0);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != outw))
    shape_error("dense", w, b, "bias must be [out]");
  const bool record = needs_grad({&x, &w, &b});
  Tensor out(Shape{bsz, outw});
  const float* xp = x.data().data();
  const float* wp = w.data().data();
  float* yp = out.data().data();
  for (int r = 0; r < bsz; ++r) {
    const float* xr = xp + static_cast<std::size_t>(r) * in;
    for (int o = 0; o < outw; ++o) {
      const float* wr = wp + static_cast<std::size_t>(o) * in;
      float acc = b.defined() ? b.data()[o] : 0.0f;
      for (int i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yp[r * outw + o] = acc;
    }
  }
  out = finish(std::move(out), "dense", record);
  if (record) {
    active_tape()->record("dense", [x, w, b, out, bsz, in, outw]() mutable {
      if (!out.has_grad()) return;
      const float* gy = out.grad().data();
      const float* xp = x.data().data();
      const float* wp = w.data().data();
      if (w.requires_grad()) {
        float* gw = w.ensure_grad().data();
        for (int r = 0; r < bsz; ++r)
          for (int o = 0; o < outw; ++o) {
            const float g = gy[r * outw + o];
            if (g == 0.0f) continue;
            float* gwr = gw + static_cast<std::size_t>(o) * in;
            const float* xr = xp + static_cast<std::size_t>(r) * in;
            for (int i = 0; i < in; ++i) gwr[i] += g * xr[i];
          }
      }
      if (b.defined() && b.requires_grad()) {
        float* gb = b.ensure_grad().data();
        for (int r = 0; r < bsz; ++r)
          for (int o = 0; o < outw; ++o) gb[o] += gy[r * outw + o];
      }
      if (x.requires_grad()) {
        float* gx = x.ensure_grad().data();
        for (int r = 0; r < bsz; ++r)
          for (int o = 0; o < outw; ++o) {
            const float g = gy[r * outw + o];
            if (g == 0.0f) continue;
            const float* wr = wp + static_cast<std::size_t>(o) * in;
            float* gxr = gx + static_cast<std::size_t>(r) * in;
            for (int i = 0; i < in; ++i) gxr[i] += g * wr[i];
          }
      }
    });
  }
  return out;
}

namespace {

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, std::string_view name) {
  if (!a.defined() || !b.defined()) throw ContractViolation(std::string(name) + ": undefined input");
  const bool same = a.shape() == b.shape();
  const bool channel_bcast = kind == Binary::add && a.rank() == 4 && b.rank() == 2 &&
                             a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1);
  if (!same && !channel_bcast)
    shape_error(name, a, b,
                kind == Binary::add ? "shapes must match or be [B,C,H,W] + [B,C]"
                                    : "shapes must match");
  const bool record = needs_grad({&a, &b});
  Tensor out(a.shape());
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  if (same) {
    switch (kind) {
      case Binary::add:
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
        break;
      case Binary::sub:
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
        break;
      case Binary::mul:
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
        break;
    }
  } else {
    const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
    for (std::size_t p = 0; p < bv.size(); ++p)
      for (std::size_t i = 0; i < hw; ++i) ov[p * hw + i] = av[p * hw + i] + bv[p];
  }
  out = finish(std::move(out), name, record);
  if (record) {
    active_tape()->record(std::string(name), [a, b, out, kind, same]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        if (kind == Binary::mul) {
          auto bv = b.data();
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
        } else {
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        if (kind == Binary::mul) {
          auto av = a.data();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
        } else if (kind == Binary::sub) {
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
        } else if (same) {
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
        } else {
          const std::size_t hw = gy.size() / gb.size();
          for (std::size_t p = 0; p < gb.size(); ++p) {
            float acc = 0.0f;
            for (std::size_t i = 0; i < hw; ++i) acc += gy[p * hw + i];
            gb[p] += acc;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, Binary::mul, "elementwise_mul");
}

Tensor scale(const Tensor& a, float s) {
  if (!a.defined()) throw ContractViolation("scale: undefined input");
  const bool record = needs_grad({&a});
  Tensor out(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  out = finish(std::move(out), "scale", record);
  if (record) {
    active_tape()->record("scale", [a, out, s]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * s;
    });
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractViolation("concat_channels: no inputs");
  const Tensor& first = parts[0];
  if (!first.defined() || (first.rank() != 2 && first.rank() != 4))
    throw ContractViolation("concat_channels: inputs must be rank 2 or 4");
  int channels = 0;
  bool record = false;
  for (const auto& p : parts) {
    if (!p.defined() || p.rank() != first.rank() || p.dim(0) != first.dim(0) ||
        (first.rank() == 4 && (p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3))))
      shape_error("concat_channels", first, p, "all axes except 1 must agree");
    channels += p.dim(1);
    record = record || needs_grad({&p});
  }
  Shape shape = first.shape();
  shape[1] = channels;
  Tensor out(shape);
  const int bsz = first.dim(0);
  const std::size_t inner = first.rank() == 4 ? static_cast<std::size_t>(first.dim(2)) * first.dim(3) : 1;
  auto ov = out.data();
  for (int bi = 0; bi < bsz; ++bi) {
    std::size_t offset = static_cast<std::size_t>(bi) * channels * inner;
    for (const auto& p : parts) {
      const std::size_t block = static_cast<std::size_t>(p.dim(1)) * inner;
      auto pv = p.data().subspan(static_cast<std::size_t>(bi) * block, block);
      std::copy(pv.begin(), pv.end(), ov.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += block;
    }
  }
  out = finish(std::move(out), "concat_channels", record);
  if (record) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    active_tape()->record("concat_channels", [inputs, out, bsz, channels, inner]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      for (int bi = 0; bi < bsz; ++bi) {
        std::size_t offset = static_cast<std::size_t>(bi) * channels * inner;
        for (auto& p : inputs) {
          const std::size_t block = static_cast<std::size_t>(p.dim(1)) * inner;
          if (p.requires_grad()) {
            auto gp = p.ensure_grad().subspan(static_cast<std::size_t>(bi) * block, block);
            for (std::size_t i = 0; i < block; ++i) gp[i] += gy[offset + i];
          }
          offset += block;
        }
      }
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Tensor parts[2] = {a, b};
  return concat_channels(std::span<const Tensor>(parts, 2));
}

Tensor leaky_relu(const Tensor& x, float slope) {
  if (!x.defined()) throw ContractViolation("leaky_relu: undefined input");
  const bool record = needs_grad({&x});
  Tensor out(x.shape());
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0f ? xv[i] : slope * xv[i];
  out = finish(std::move(out), "leaky_relu", record);
  if (record) {
    active_tape()->record("leaky_relu", [x, out, slope]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto xv = x.data();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += xv[i] > 0.0f ? gy[i] : slope * gy[i];
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  if (!x.defined()) throw ContractViolation("silu: undefined input");
  const bool record = needs_grad({&x});
  Tensor out(x.shape());
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] / (1.0f + std::exp(-xv[i]));
  out = finish(std::move(out), "silu", record);
  if (record) {
    active_tape()->record("silu", [x, out]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto xv = x.data();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-xv[i]));
        gx[i] += gy[i] * s * (1.0f + xv[i] * (1.0f - s));
      }
    });
  }
  return out;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, float eps) {
  if (!x.defined() || (x.rank() != 4 && x.rank() != 2))
    throw ContractViolation("group_norm: input must be rank 2 or 4");
  const int bsz = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.rank() == 4 ? static_cast<std::size_t>(x.dim(2)) * x.dim(3) : 1;
  if (groups < 1 || c % groups != 0)
    throw ContractViolation("group_norm: " + std::to_string(c) + " channels not divisible into " +
                            std::to_string(groups) + " groups");
  if (!gamma.defined() || gamma.shape() != Shape{c}) shape_error("group_norm", x, gamma, "gamma must be [C]");
  if (!beta.defined() || beta.shape() != Shape{c}) shape_error("group_norm", x, beta, "beta must be [C]");
  const bool record = needs_grad({&x, &gamma, &beta});
  const int cpg = c / groups;
  const std::size_t gsize = static_cast<std::size_t>(cpg) * hw;
  Tensor out(x.shape());
  std::vector<float> xhat(x.size());
  std::vector<float> inv_std(static_cast<std::size_t>(bsz) * groups);
  auto xv = x.data();
  auto ov = out.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (int bi = 0; bi < bsz; ++bi) {
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(bi) * c + static_cast<std::size_t>(gi) * cpg) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) s += xv[base + i];
      const double m = s / static_cast<double>(gsize);
      double v = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) {
        const double d = xv[base + i] - m;
        v += d * d;
      }
      v /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(v + static_cast<double>(eps));
      inv_std[static_cast<std::size_t>(bi) * groups + gi] = static_cast<float>(is);
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = gi * cpg + cc;
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = base + cc * hw + i;
          const float xh = static_cast<float>((xv[idx] - m) * is);
          xhat[idx] = xh;
          ov[idx] = xh * gv[ch] + bv[ch];
        }
      }
    }
  }
  out = finish(std::move(out), "group_norm", record);
  if (record) {
    active_tape()->record("group_norm", [x, gamma, beta, out, xhat = std::move(xhat),
                                         inv_std = std::move(inv_std), bsz, c, hw, groups,
                                         cpg, gsize]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto gv = gamma.data();
      if (gamma.requires_grad() || beta.requires_grad()) {
        std::vector<double> dg(static_cast<std::size_t>(c), 0.0), db(static_cast<std::size_t>(c), 0.0);
        for (int bi = 0; bi < bsz; ++bi)
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(bi) * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              dg[ch] += static_cast<double>(gy[base + i]) * xhat[base + i];
              db[ch] += gy[base + i];
            }
          }
        if (gamma.requires_grad()) {
          auto gg = gamma.ensure_grad();
          for (int ch = 0; ch < c; ++ch) gg[ch] += static_cast<float>(dg[ch]);
        }
        if (beta.requires_grad()) {
          auto gb = beta.ensure_grad();
          for (int ch = 0; ch < c; ++ch) gb[ch] += static_cast<float>(db[ch]);
        }
      }
      if (x.requires_grad()) {
        auto gx = x.ensure_grad();
        for (int bi = 0; bi < bsz; ++bi)
          for (int gi = 0; gi < groups; ++gi) {
            const std::size_t base =
                (static_cast<std::size_t>(bi) * c + static_cast<std::size_t>(gi) * cpg) * hw;
            double sum_d = 0.0, sum_dx = 0.0;
            for (int cc = 0; cc < cpg; ++cc) {
              const float gch = gv[gi * cpg + cc];
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = base + cc * hw + i;
                const double d = static_cast<double>(gy[idx]) * gch;
                sum_d += d;
                sum_dx += d * xhat[idx];
              }
            }
            const double md = sum_d / static_cast<double>(gsize);
            const double mdx = sum_dx / static_cast<double>(gsize);
            const double is = inv_std[static_cast<std::size_t>(bi) * groups + gi];
            for (int cc = 0; cc < cpg; ++cc) {
              const float gch = gv[gi * cpg + cc];
              for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = base + cc * hw + i;
                const double d = static_cast<double>(gy[idx]) * gch;
                gx[idx] += static_cast<float>(is * (d - md - xhat[idx] * mdx));
              }
            }
          }
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const int bsz = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const bool record = needs_grad({&x});
  Tensor out(Shape{bsz, c});
  auto xv = x.data();
  auto ov = out.data();
  for (std::size_t p = 0; p < ov.size(); ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[p * hw + i];
    ov[p] = static_cast<float>(s / static_cast<double>(hw));
  }
  out = finish(std::move(out), "global_avg_pool", record);
  if (record) {
    active_tape()->record("global_avg_pool", [x, out, hw]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto gx = x.ensure_grad();
      const float inv = 1.0f / static_cast<float>(hw);
      for (std::size_t p = 0; p < gy.size(); ++p) {
        const float g = gy[p] * inv;
        for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g;
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  require_rank("log_softmax", x, 2);
  const int bsz = x.dim(0), k = x.dim(1);
  const bool record = needs_grad({&x});
  Tensor out(x.shape());
  auto xv = x.data();
  auto ov = out.data();
  for (int r = 0; r < bsz; ++r) {
    const float* row = xv.data() + static_cast<std::size_t>(r) * k;
    const float mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < k; ++j) ov[r * k + j] = static_cast<float>(row[j] - lse);
  }
  out = finish(std::move(out), "log_softmax", record);
  if (record) {
    active_tape()->record("log_softmax", [x, out, bsz, k]() mutable {
      if (!out.has_grad()) return;
      auto gy = out.grad();
      auto yv = out.data();
      auto gx = x.ensure_grad();
      for (int r = 0; r < bsz; ++r) {
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += gy[r * k + j];
        for (int j = 0; j < k; ++j)
          gx[r * k + j] += static_cast<float>(gy[r * k + j] - std::exp(static_cast<double>(yv[r * k + j])) * s);
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  if (!x.defined()) throw ContractViolation("sum: undefined input");
  const bool record = needs_grad({&x});
  double s = 0.0;
  for (float v : x.data()) s += v;
  Tensor out = finish(Tensor::scalar(static_cast<float>(s)), "sum", record);
  if (record) {
    active_tape()->record("sum", [x, out]() mutable {
      if (!out.has_grad()) return;
      const float g = out.grad()[0];
      for (float& v : x.ensure_grad()) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (!x.defined()) throw ContractViolation("mean: undefined input");
  const bool record = needs_grad({&x});
  double s = 0.0;
  for (float v : x.data()) s += v;
  const double n = static_cast<double>(x.size());
  Tensor out = finish(Tensor::scalar(static_cast<float>(s / n)), "mean", record);
  if (record) {
    active_tape()->record("mean", [x, out, n]() mutable {
      if (!out.has_grad()) return;
      const float g = static_cast<float>(out.grad()[0] / n);
      for (float& v : x.ensure_grad()) v += g;
    });
  }
  return out;
}

Tensor nll(const Tensor& logp, std::span<const int> labels) {
  require_rank("nll", logp, 2);
  const int bsz = logp.dim(0), k = logp.dim(1);
  if (static_cast<int>(labels.size()) != bsz)
    throw ContractViolation("nll: " + std::to_string(labels.size()) + " labels for batch of " +
                            std::to_string(bsz));
  for (int y : labels)
    if (y < 0 || y >= k)
      throw ContractViolation("nll: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(k) + ")");
  const bool record = needs_grad({&logp});
  auto lv = logp.data();
  double s = 0.0;
  for (int r = 0; r < bsz; ++r) s -= lv[static_cast<std::size_t>(r) * k + labels[r]];
  Tensor out = finish(Tensor::scalar(static_cast<float>(s / bsz)), "nll", record);
  if (record) {
    std::vector<int> ys(labels.begin(), labels.end());
    active_tape()->record("nll", [logp, out, ys = std::move(ys), bsz, k]() mutable {
      if (!out.has_grad()) return;
      const float g = out.grad()[0] / static_cast<float>(bsz);
      auto gl = logp.ensure_grad();
      for (int r = 0; r < bsz; ++r) gl[static_cast<std::size_t>(r) * k + ys[r]] -= g;
    });
  }
  return out;
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::upsample_nearest: return "upsample_nearest";
    case OpKind::dense: return "dense";
    case OpKind::add: return "add";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::silu: return "silu";
    case OpKind::group_norm: return "group_norm";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::elementwise_mul: return "elementwise_mul";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
  }
  return "unknown";
}

Tensor forward_op(OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi)
      throw ContractViolation(std::string(op_name(kind)) + ": wrong number of inputs (" +
                              std::to_string(in.size()) + ")");
  };
  const Tensor none;
  switch (kind) {
    case OpKind::conv2d:
      arity(2, 3);
      return conv2d(in[0], in[1], in.size() > 2 ? in[2] : none, attrs.stride, attrs.padding);
    case OpKind::upsample_nearest: arity(1, 1); return upsample_nearest2x(in[0]);
    case OpKind::dense: arity(2, 3); return dense(in[0], in[1], in.size() > 2 ? in[2] : none);
    case OpKind::add: arity(2, 2); return add(in[0], in[1]);
    case OpKind::concat_channels: arity(1, in.size() + 1); return concat_channels(in);
    case OpKind::leaky_relu: arity(1, 1); return leaky_relu(in[0], attrs.slope);
    case OpKind::silu: arity(1, 1); return silu(in[0]);
    case OpKind::group_norm:
      arity(3, 3);
      return group_norm(in[0], in[1], in[2], attrs.groups, attrs.eps);
    case OpKind::global_avg_pool: arity(1, 1); return global_avg_pool(in[0]);
    case OpKind::log_softmax: arity(1, 1); return log_softmax(in[0]);
    case OpKind::elementwise_mul: arity(2, 2); return mul(in[0], in[1]);
    case OpKind::sum: arity(1, 1); return sum(in[0]);
    case OpKind::mean: arity(1, 1); return mean(in[0]);
  }
  throw ContractViolation("unknown op kind");
}

}  // namespace jointdiff::ops
