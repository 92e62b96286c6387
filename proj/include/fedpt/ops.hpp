#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "fedpt/tape.hpp"

namespace fedpt {

// Layer ops recorded on the tape. Each backward closure captures only what it
// can actually need given the requires-grad flags of its inputs: a frozen
// weight's gradient path saves no activations and allocates no gradient, so
// freezing a block shrinks both backward compute and live tensor bytes.

namespace detail {

inline void check_rank(const char* op, int got, int want) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

// im2col for stride-1 "same" zero padding, NHWC layout. Rows are output
// pixels, columns are (ky, kx, cin).
template <typename S>
MatrixRM<S> im2col_same(const Tensor<S>& x, int kh, int kw) {
  const int b = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const int ph = kh / 2, pw = kw / 2;
  MatrixRM<S> cols = MatrixRM<S>::Zero(static_cast<int64_t>(b) * h * w,
                                       static_cast<int64_t>(kh) * kw * cin);
  const S* src = x.data();
  for (int bi = 0; bi < b; ++bi) {
    for (int yi = 0; yi < h; ++yi) {
      for (int xi = 0; xi < w; ++xi) {
        const int64_t row = (static_cast<int64_t>(bi) * h + yi) * w + xi;
        S* dst = cols.data() + row * cols.cols();
        for (int ky = 0; ky < kh; ++ky) {
          const int sy = yi + ky - ph;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, xi - pw);
          const int x1 = std::min(w - 1, xi + pw);
          const int64_t src_off = ((static_cast<int64_t>(bi) * h + sy) * w + x0) * cin;
          const int64_t dst_off = (static_cast<int64_t>(ky) * kw + (x0 - (xi - pw))) * cin;
          std::copy_n(src + src_off, static_cast<size_t>(x1 - x0 + 1) * cin, dst + dst_off);
        }
      }
    }
  }
  return cols;
}

// Scatter-add transpose of im2col_same.
template <typename S>
void col2im_same_add(const MatrixRM<S>& cols, int b, int h, int w, int cin, int kh, int kw,
                     Tensor<S>& dx) {
  const int ph = kh / 2, pw = kw / 2;
  S* dst = dx.data();
  for (int bi = 0; bi < b; ++bi) {
    for (int yi = 0; yi < h; ++yi) {
      for (int xi = 0; xi < w; ++xi) {
        const int64_t row = (static_cast<int64_t>(bi) * h + yi) * w + xi;
        const S* src = cols.data() + row * cols.cols();
        for (int ky = 0; ky < kh; ++ky) {
          const int sy = yi + ky - ph;
          if (sy < 0 || sy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int sx = xi + kx - pw;
            if (sx < 0 || sx >= w) continue;
            const int64_t dst_off = ((static_cast<int64_t>(bi) * h + sy) * w + sx) * cin;
            const int64_t src_off = (static_cast<int64_t>(ky) * kw + kx) * cin;
            for (int c = 0; c < cin; ++c) dst[dst_off + c] += src[src_off + c];
          }
        }
      }
    }
  }
}

}  // namespace detail

// out = x W + b for x:[batch,in], W:[in,out], b:[out].
template <typename S>
typename Tape<S>::Index affine(Tape<S>& tape, typename Tape<S>::Index x,
                               typename Tape<S>::Index w, typename Tape<S>::Index b) {
  const Tensor<S>& xv = tape.value(x);
  const Tensor<S>& wv = tape.value(w);
  const Tensor<S>& bv = tape.value(b);
  detail::check_rank("affine", xv.rank(), 2);
  detail::check_rank("affine", wv.rank(), 2);
  if (xv.dim(1) != wv.dim(0) || bv.size() != wv.dim(1)) {
    throw DimensionError("affine: inner dimensions disagree (" + xv.shape_str() + " x " +
                         wv.shape_str() + " + " + bv.shape_str() + ")");
  }
  const int batch = xv.dim(0), in = xv.dim(1), out = wv.dim(1);

  Tensor<S> y({batch, out});
  y.matrix(batch, out).noalias() = xv.matrix(batch, in) * wv.matrix(in, out);
  y.matrix(batch, out).rowwise() += bv.matrix(1, out).row(0);

  const bool xr = tape.requires_grad(x), wr = tape.requires_grad(w), br = tape.requires_grad(b);
  if (!(xr || wr || br)) return tape.emit(std::move(y), false, nullptr);

  return tape.emit(std::move(y), true,
                   [x, w, b, xr, wr, br, batch, in, out](Tape<S>& t, const Tensor<S>& g) {
                     auto gm = g.matrix(batch, out);
                     if (xr) {
                       Tensor<S> dx({batch, in});
                       dx.matrix(batch, in).noalias() = gm * t.value(w).matrix(in, out).transpose();
                       t.accumulate(x, std::move(dx));
                     }
                     if (wr) {
                       Tensor<S> dw({in, out});
                       dw.matrix(in, out).noalias() = t.value(x).matrix(batch, in).transpose() * gm;
                       t.accumulate(w, std::move(dw));
                     }
                     if (br) {
                       Tensor<S> db({out});
                       db.matrix(1, out) = gm.colwise().sum();
                       t.accumulate(b, std::move(db));
                     }
                   });
}

// Stride-1 cross-correlation with zero "same" padding.
// x:[b,h,w,cin], k:[kh,kw,cin,cout] (kh,kw odd), bias:[cout] -> [b,h,w,cout].
template <typename S>
typename Tape<S>::Index conv2d_same(Tape<S>& tape, typename Tape<S>::Index x,
                                    typename Tape<S>::Index k, typename Tape<S>::Index bias) {
  const Tensor<S>& xv = tape.value(x);
  const Tensor<S>& kv = tape.value(k);
  const Tensor<S>& bv = tape.value(bias);
  detail::check_rank("conv2d", xv.rank(), 4);
  detail::check_rank("conv2d", kv.rank(), 4);
  const int b = xv.dim(0), h = xv.dim(1), w = xv.dim(2), cin = xv.dim(3);
  const int kh = kv.dim(0), kw = kv.dim(1), cout = kv.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: kernel extents must be odd");
  if (kv.dim(2) != cin) {
    throw DimensionError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(kv.dim(2)));
  }
  if (bv.size() != cout) throw DimensionError("conv2d: bias length must equal output channels");

  MatrixRM<S> cols = detail::im2col_same(xv, kh, kw);
  const int64_t rows = cols.rows(), kdim = cols.cols();
  ScopedAlloc cols_bytes(rows * kdim * static_cast<int64_t>(sizeof(S)));

  Tensor<S> y({b, h, w, cout});
  y.matrix(rows, cout).noalias() = cols * kv.matrix(kdim, cout);
  y.matrix(rows, cout).rowwise() += bv.matrix(1, cout).row(0);

  const bool xr = tape.requires_grad(x), kr = tape.requires_grad(k),
             br = tape.requires_grad(bias);
  if (!(xr || kr || br)) return tape.emit(std::move(y), false, nullptr);

  // The column matrix is only needed to form dK; a frozen kernel drops it.
  auto saved = kr ? std::make_shared<std::pair<MatrixRM<S>, ScopedAlloc>>(std::move(cols),
                                                                          std::move(cols_bytes))
                  : nullptr;

  return tape.emit(
      std::move(y), true,
      [x, k, bias, xr, kr, br, saved, b, h, w, cin, kh, kw, cout, rows,
       kdim](Tape<S>& t, const Tensor<S>& g) {
        auto gm = g.matrix(rows, cout);
        if (br) {
          Tensor<S> db({cout});
          db.matrix(1, cout) = gm.colwise().sum();
          t.accumulate(bias, std::move(db));
        }
        if (kr) {
          Tensor<S> dk({kh, kw, cin, cout});
          dk.matrix(kdim, cout).noalias() = saved->first.transpose() * gm;
          t.accumulate(k, std::move(dk));
        }
        if (xr) {
          MatrixRM<S> dcols(rows, kdim);
          ScopedAlloc dcols_bytes(rows * kdim * static_cast<int64_t>(sizeof(S)));
          dcols.noalias() = gm * t.value(k).matrix(kdim, cout).transpose();
          Tensor<S> dx({b, h, w, cin});
          detail::col2im_same_add(dcols, b, h, w, cin, kh, kw, dx);
          t.accumulate(x, std::move(dx));
        }
      });
}

// 2x2/stride-2 max pool; gradient routes to the first maximum in row-major
// window order.
template <typename S>
typename Tape<S>::Index maxpool2x2(Tape<S>& tape, typename Tape<S>::Index x) {
  const Tensor<S>& xv = tape.value(x);
  detail::check_rank("maxpool2x2", xv.rank(), 4);
  const int b = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2x2: spatial extents must be even, got " + xv.shape_str());
  }
  const int oh = h / 2, ow = w / 2;
  const bool xr = tape.requires_grad(x);

  struct ArgBuf {
    std::vector<int64_t> idx;
    ScopedAlloc bytes;
  };
  auto args = xr ? std::make_shared<ArgBuf>() : nullptr;
  if (args) {
    args->idx.resize(static_cast<size_t>(b) * oh * ow * c);
    args->bytes = ScopedAlloc(static_cast<int64_t>(args->idx.size() * sizeof(int64_t)));
  }

  Tensor<S> y({b, oh, ow, c});
  const S* src = xv.data();
  S* dst = y.data();
  int64_t o = 0;
  for (int bi = 0; bi < b; ++bi) {
    for (int yi = 0; yi < oh; ++yi) {
      for (int xi = 0; xi < ow; ++xi) {
        for (int ci = 0; ci < c; ++ci, ++o) {
          int64_t best = -1;
          S best_v{};
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int64_t off =
                  ((static_cast<int64_t>(bi) * h + (2 * yi + dy)) * w + (2 * xi + dx)) * c + ci;
              if (best < 0 || src[off] > best_v) {
                best = off;
                best_v = src[off];
              }
            }
          }
          dst[o] = best_v;
          if (args) args->idx[static_cast<size_t>(o)] = best;
        }
      }
    }
  }

  if (!xr) return tape.emit(std::move(y), false, nullptr);
  std::vector<int> in_shape = xv.shape();
  return tape.emit(std::move(y), true, [x, args, in_shape](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S> dx(in_shape);
    S* d = dx.data();
    const S* gs = g.data();
    for (int64_t i = 0; i < g.size(); ++i) d[args->idx[static_cast<size_t>(i)]] += gs[i];
    t.accumulate(x, std::move(dx));
  });
}

// Group normalization over NHWC input: per (sample, channel-group)
// standardization followed by per-channel scale/shift.
template <typename S>
typename Tape<S>::Index group_norm(Tape<S>& tape, typename Tape<S>::Index x,
                                   typename Tape<S>::Index gamma, typename Tape<S>::Index beta,
                                   int groups, double eps = 1e-5) {
  const Tensor<S>& xv = tape.value(x);
  detail::check_rank("group_norm", xv.rank(), 4);
  const int b = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  if (groups < 1 || c % groups != 0) {
    throw ConfigError("group_norm: channels (" + std::to_string(c) +
                      ") not divisible by groups (" + std::to_string(groups) + ")");
  }
  if (tape.value(gamma).size() != c || tape.value(beta).size() != c) {
    throw DimensionError("group_norm: scale/shift length must equal channel count");
  }
  const int cg = c / groups;
  const int64_t n_group = static_cast<int64_t>(h) * w * cg;

  Tensor<S> xhat({b, h, w, c});
  Tensor<S> inv_std({b, groups});
  const S* src = xv.data();
  S* xh = xhat.data();
  for (int bi = 0; bi < b; ++bi) {
    for (int g = 0; g < groups; ++g) {
      double sum = 0.0, sq = 0.0;
      for (int yi = 0; yi < h; ++yi) {
        for (int xi = 0; xi < w; ++xi) {
          const int64_t base = ((static_cast<int64_t>(bi) * h + yi) * w + xi) * c + g * cg;
          for (int ci = 0; ci < cg; ++ci) {
            const double v = static_cast<double>(src[base + ci]);
            sum += v;
            sq += v * v;
          }
        }
      }
      const double mean = sum / static_cast<double>(n_group);
      const double var = std::max(0.0, sq / static_cast<double>(n_group) - mean * mean);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<int64_t>(bi) * groups + g] = static_cast<S>(inv);
      for (int yi = 0; yi < h; ++yi) {
        for (int xi = 0; xi < w; ++xi) {
          const int64_t base = ((static_cast<int64_t>(bi) * h + yi) * w + xi) * c + g * cg;
          for (int ci = 0; ci < cg; ++ci) {
            xh[base + ci] = static_cast<S>((static_cast<double>(src[base + ci]) - mean) * inv);
          }
        }
      }
    }
  }

  const Tensor<S>& gv = tape.value(gamma);
  const Tensor<S>& bv = tape.value(beta);
  Tensor<S> y({b, h, w, c});
  {
    S* out = y.data();
    const S* gp = gv.data();
    const S* bp = bv.data();
    const int64_t pixels = static_cast<int64_t>(b) * h * w;
    for (int64_t p = 0; p < pixels; ++p) {
      for (int ci = 0; ci < c; ++ci) {
        out[p * c + ci] = gp[ci] * xh[p * c + ci] + bp[ci];
      }
    }
  }

  const bool xr = tape.requires_grad(x), gr = tape.requires_grad(gamma),
             br = tape.requires_grad(beta);
  if (!(xr || gr || br)) return tape.emit(std::move(y), false, nullptr);

  // x-hat and the inverse stddevs serve both d-gamma and d-x; neither is kept
  // when only the shift is trainable.
  struct Saved {
    Tensor<S> xhat;
    Tensor<S> inv_std;
  };
  auto saved = (xr || gr) ? std::make_shared<Saved>(Saved{std::move(xhat), std::move(inv_std)})
                          : nullptr;

  return tape.emit(
      std::move(y), true,
      [x, gamma, beta, xr, gr, br, saved, b, h, w, c, groups, cg](Tape<S>& t, const Tensor<S>& g) {
        const int64_t pixels = static_cast<int64_t>(b) * h * w;
        const S* gs = g.data();
        if (br) {
          Tensor<S> db({c});
          for (int64_t p = 0; p < pixels; ++p) {
            for (int ci = 0; ci < c; ++ci) db[ci] += gs[p * c + ci];
          }
          t.accumulate(beta, std::move(db));
        }
        if (gr) {
          Tensor<S> dg({c});
          const S* xh = saved->xhat.data();
          for (int64_t p = 0; p < pixels; ++p) {
            for (int ci = 0; ci < c; ++ci) dg[ci] += gs[p * c + ci] * xh[p * c + ci];
          }
          t.accumulate(gamma, std::move(dg));
        }
        if (xr) {
          const S* xh = saved->xhat.data();
          const S* gp = t.value(gamma).data();
          Tensor<S> dx({b, h, w, c});
          S* d = dx.data();
          const int64_t n_group = static_cast<int64_t>(h) * w * cg;
          for (int bi = 0; bi < b; ++bi) {
            for (int gi = 0; gi < groups; ++gi) {
              double m1 = 0.0, m2 = 0.0;
              for (int yi = 0; yi < h; ++yi) {
                for (int xi = 0; xi < w; ++xi) {
                  const int64_t base =
                      ((static_cast<int64_t>(bi) * h + yi) * w + xi) * c + gi * cg;
                  for (int ci = 0; ci < cg; ++ci) {
                    const double dxh = static_cast<double>(gs[base + ci]) * gp[gi * cg + ci];
                    m1 += dxh;
                    m2 += dxh * static_cast<double>(xh[base + ci]);
                  }
                }
              }
              m1 /= static_cast<double>(n_group);
              m2 /= static_cast<double>(n_group);
              const double inv =
                  static_cast<double>(saved->inv_std[static_cast<int64_t>(bi) * groups + gi]);
              for (int yi = 0; yi < h; ++yi) {
                for (int xi = 0; xi < w; ++xi) {
                  const int64_t base =
                      ((static_cast<int64_t>(bi) * h + yi) * w + xi) * c + gi * cg;
                  for (int ci = 0; ci < cg; ++ci) {
                    const double dxh = static_cast<double>(gs[base + ci]) * gp[gi * cg + ci];
                    d[base + ci] = static_cast<S>(
                        inv * (dxh - m1 - static_cast<double>(xh[base + ci]) * m2));
                  }
                }
              }
            }
          }
          t.accumulate(x, std::move(dx));
        }
      });
}

template <typename S>
typename Tape<S>::Index relu(Tape<S>& tape, typename Tape<S>::Index x) {
  const Tensor<S>& xv = tape.value(x);
  Tensor<S> y(xv.shape());
  y.array() = xv.array().max(S{0});
  if (!tape.requires_grad(x)) return tape.emit(std::move(y), false, nullptr);
  return tape.emit(std::move(y), true, [x](Tape<S>& t, const Tensor<S>& g) {
    const Tensor<S>& xv2 = t.value(x);
    Tensor<S> dx(xv2.shape());
    dx.array() = (xv2.array() > S{0}).select(g.array(), ArrayX<S>::Zero(g.size()));
    t.accumulate(x, std::move(dx));
  });
}

// [b, d1, ..., dk] -> [b, d1*...*dk].
template <typename S>
typename Tape<S>::Index flatten(Tape<S>& tape, typename Tape<S>::Index x) {
  const Tensor<S>& xv = tape.value(x);
  if (xv.rank() < 2) throw DimensionError("flatten: input must have a batch dimension");
  const int batch = xv.dim(0);
  const int rest = static_cast<int>(xv.size() / batch);
  Tensor<S> y = xv.reshaped({batch, rest});
  if (!tape.requires_grad(x)) return tape.emit(std::move(y), false, nullptr);
  std::vector<int> in_shape = xv.shape();
  return tape.emit(std::move(y), true, [x, in_shape](Tape<S>& t, const Tensor<S>& g) {
    t.accumulate(x, g.reshaped(in_shape));
  });
}

// Mean negative log-softmax of the true class. Returns a scalar node.
template <typename S>
typename Tape<S>::Index softmax_cross_entropy(Tape<S>& tape, typename Tape<S>::Index logits,
                                              std::vector<int32_t> labels) {
  const Tensor<S>& lv = tape.value(logits);
  detail::check_rank("softmax_cross_entropy", lv.rank(), 2);
  const int batch = lv.dim(0), k = lv.dim(1);
  if (static_cast<int>(labels.size()) != batch) {
    throw DimensionError("softmax_cross_entropy: one label per row required");
  }
  for (int32_t l : labels) {
    if (l < 0 || l >= k) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " +
                      std::to_string(k) + ")");
    }
  }

  Tensor<S> probs({batch, k});
  double loss_acc = 0.0;
  for (int r = 0; r < batch; ++r) {
    const S* row = lv.data() + static_cast<int64_t>(r) * k;
    S* prow = probs.data() + static_cast<int64_t>(r) * k;
    double m = static_cast<double>(row[0]);
    for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - m);
    for (int j = 0; j < k; ++j) {
      prow[j] = static_cast<S>(std::exp(static_cast<double>(row[j]) - m) / z);
    }
    loss_acc += std::log(z) - (static_cast<double>(row[labels[static_cast<size_t>(r)]]) - m);
  }
  Tensor<S> loss({1});
  loss[0] = static_cast<S>(loss_acc / batch);

  if (!tape.requires_grad(logits)) return tape.emit(std::move(loss), false, nullptr);

  struct Saved {
    Tensor<S> probs;
    std::vector<int32_t> labels;
  };
  auto saved = std::make_shared<Saved>(Saved{std::move(probs), std::move(labels)});
  return tape.emit(std::move(loss), true,
                   [logits, saved, batch, k](Tape<S>& t, const Tensor<S>& g) {
                     const S scale = g[0] / static_cast<S>(batch);
                     Tensor<S> dl({batch, k});
                     S* d = dl.data();
                     const S* p = saved->probs.data();
                     for (int64_t i = 0; i < dl.size(); ++i) d[i] = p[i] * scale;
                     for (int r = 0; r < batch; ++r) {
                       d[static_cast<int64_t>(r) * k + saved->labels[static_cast<size_t>(r)]] -=
                           scale;
                     }
                     t.accumulate(logits, std::move(dl));
                   });
}

// Scalar sum over all elements (used as a plain test loss).
template <typename S>
typename Tape<S>::Index reduce_sum(Tape<S>& tape, typename Tape<S>::Index x) {
  const Tensor<S>& xv = tape.value(x);
  Tensor<S> y({1});
  y[0] = xv.array().sum();
  if (!tape.requires_grad(x)) return tape.emit(std::move(y), false, nullptr);
  std::vector<int> in_shape = xv.shape();
  return tape.emit(std::move(y), true, [x, in_shape](Tape<S>& t, const Tensor<S>& g) {
    t.accumulate(x, Tensor<S>::constant(in_shape, g[0]));
  });
}

}  // namespace fedpt
