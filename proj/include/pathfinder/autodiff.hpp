#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pathfinder/grid.hpp"
#include "pathfinder/tensor.hpp"

namespace pathfinder {

using VarId = int;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using ConstMatMap = Eigen::Map<const EMat>;

inline ConstMatMap as_matrix(const Tensor& t, int rows, int cols) {
  return ConstMatMap(t.data(), rows, cols);
}
inline MatMap as_matrix_mut(Tensor& t, int rows, int cols) {
  return MatMap(t.mut(), rows, cols);
}

// Reverse-mode tape over Tensors. Nodes are created in topological order,
// so backward() is a single reverse sweep. One tape per forward pass; not
// reusable after backward().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  VarId leaf(Tensor value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, {});
  }

  // Memoized leaf for a named parameter; grads retrievable by name later.
  VarId param(const std::string& name, const Tensor& value) {
    auto it = params_.find(name);
    if (it != params_.end()) return it->second;
    VarId id = leaf(value, true);
    params_.emplace(name, id);
    return id;
  }

  const Tensor& value(VarId id) const { return nodes_[std::size_t(id)].val; }

  const Tensor& grad(VarId id) const {
    const Node& n = nodes_[std::size_t(id)];
    require(n.has_grad, "Tape::grad: no gradient at node ", id);
    return n.grad;
  }

  bool has_grad(VarId id) const { return nodes_[std::size_t(id)].has_grad; }

  std::map<std::string, Tensor> param_grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : params_) {
      if (nodes_[std::size_t(id)].has_grad) out.emplace(name, nodes_[std::size_t(id)].grad);
    }
    return out;
  }

  void backward(VarId root) {
    require(!swept_, "Tape::backward: already swept");
    require(value(root).size() == 1, "Tape::backward: root must be scalar");
    swept_ = true;
    gref(root).mut()[0] = 1.0;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (n.back && n.req && n.has_grad) n.back();
    }
  }

  // ---- elementwise ----

  VarId add(VarId a, VarId b) {
    require(value(a).same_shape(value(b)), "add: shape mismatch ", shape_string(value(a)),
            " vs ", shape_string(value(b)));
    Tensor out = value(a).clone();
    const double* pb = value(b).data();
    double* po = out.mut();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += pb[i];
    VarId id = push(std::move(out), needs_grad(a) || needs_grad(b), {a, b});
    set_back(id, [this, id, a, b] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      if (needs_grad(a)) axpy(gref(a), g, 1.0);
      if (needs_grad(b)) axpy(gref(b), g, 1.0);
    });
    return id;
  }

  VarId scale(VarId a, double s) {
    Tensor out = value(a).clone();
    double* po = out.mut();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] *= s;
    VarId id = push(std::move(out), needs_grad(a), {a});
    set_back(id, [this, id, a, s] {
      if (needs_grad(a)) axpy(gref(a), nodes_[std::size_t(id)].grad, s);
    });
    return id;
  }

  VarId relu(VarId a) {
    Tensor out = value(a).clone();
    double* po = out.mut();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = po[i] > 0.0 ? po[i] : 0.0;
    VarId id = push(std::move(out), needs_grad(a), {a});
    set_back(id, [this, id, a] {
      if (!needs_grad(a)) return;
      const Tensor& g = nodes_[std::size_t(id)].grad;
      const Tensor& x = value(a);
      double* da = gref(a).mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x.data()[i] > 0.0) da[i] += g.data()[i];
      }
    });
    return id;
  }

  VarId sigmoid(VarId a) {
    Tensor out = value(a).clone();
    double* po = out.mut();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = 1.0 / (1.0 + std::exp(-po[i]));
    VarId id = push(std::move(out), needs_grad(a), {a});
    set_back(id, [this, id, a] {
      if (!needs_grad(a)) return;
      const Tensor& g = nodes_[std::size_t(id)].grad;
      const Tensor& y = value(id);
      double* da = gref(a).mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double s = y.data()[i];
        da[i] += g.data()[i] * s * (1.0 - s);
      }
    });
    return id;
  }

  // Broadcast a {0,1} pixel mask over the channels of a (C,H,W) map.
  VarId mask_mul(VarId x, const Grid& mask) {
    const Tensor& xv = value(x);
    require(xv.ndim() == 3 && xv.dim(1) == mask.rows && xv.dim(2) == mask.cols,
            "mask_mul: mask ", mask.rows, "x", mask.cols, " vs map ", shape_string(xv));
    Tensor out = xv.clone();
    const std::size_t plane = mask.size();
    double* po = out.mut();
    for (int c = 0; c < xv.dim(0); ++c) {
      for (std::size_t p = 0; p < plane; ++p) po[c * plane + p] *= mask.v[p];
    }
    VarId id = push(std::move(out), needs_grad(x), {x});
    set_back(id, [this, id, x, mask] {
      if (!needs_grad(x)) return;
      const Tensor& g = nodes_[std::size_t(id)].grad;
      double* dx = gref(x).mut();
      const std::size_t plane = mask.size();
      for (int c = 0; c < value(x).dim(0); ++c) {
        for (std::size_t p = 0; p < plane; ++p) {
          dx[c * plane + p] += g.data()[c * plane + p] * mask.v[p];
        }
      }
    });
    return id;
  }

  // ---- linear algebra ----

  VarId matmul(VarId a, VarId b) {
    const Tensor &av = value(a), &bv = value(b);
    require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(1) == bv.dim(0),
            "matmul: ", shape_string(av), " x ", shape_string(bv));
    const int r = av.dim(0), k = av.dim(1), c = bv.dim(1);
    Tensor out({r, c});
    as_matrix_mut(out, r, c).noalias() = as_matrix(av, r, k) * as_matrix(bv, k, c);
    VarId id = push(std::move(out), needs_grad(a) || needs_grad(b), {a, b});
    set_back(id, [this, id, a, b, r, k, c] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      auto gm = as_matrix(g, r, c);
      if (needs_grad(a)) {
        as_matrix_mut(gref(a), r, k).noalias() += gm * as_matrix(value(b), k, c).transpose();
      }
      if (needs_grad(b)) {
        as_matrix_mut(gref(b), k, c).noalias() += as_matrix(value(a), r, k).transpose() * gm;
      }
    });
    return id;
  }

  // A * B^T without materializing the transpose.
  VarId matmul_nt(VarId a, VarId b) {
    const Tensor &av = value(a), &bv = value(b);
    require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(1) == bv.dim(1),
            "matmul_nt: ", shape_string(av), " x ", shape_string(bv), "^T");
    const int r = av.dim(0), k = av.dim(1), n = bv.dim(0);
    Tensor out({r, n});
    as_matrix_mut(out, r, n).noalias() =
        as_matrix(av, r, k) * as_matrix(bv, n, k).transpose();
    VarId id = push(std::move(out), needs_grad(a) || needs_grad(b), {a, b});
    set_back(id, [this, id, a, b, r, k, n] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      auto gm = as_matrix(g, r, n);
      if (needs_grad(a)) {
        as_matrix_mut(gref(a), r, k).noalias() += gm * as_matrix(value(b), n, k);
      }
      if (needs_grad(b)) {
        as_matrix_mut(gref(b), n, k).noalias() += gm.transpose() * as_matrix(value(a), r, k);
      }
    });
    return id;
  }

  // ---- layout ----

  // (C,H,W) map -> (HW,C) token matrix.
  VarId map_to_tokens(VarId x) {
    const Tensor& xv = value(x);
    require(xv.ndim() == 3, "map_to_tokens: expected (C,H,W)");
    const int c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
    Tensor out({hw, c});
    as_matrix_mut(out, hw, c).noalias() = as_matrix(xv, c, hw).transpose();
    VarId id = push(std::move(out), needs_grad(x), {x});
    set_back(id, [this, id, x, c, hw] {
      if (!needs_grad(x)) return;
      as_matrix_mut(gref(x), c, hw).noalias() +=
          as_matrix(nodes_[std::size_t(id)].grad, hw, c).transpose();
    });
    return id;
  }

  VarId tokens_to_map(VarId t, int h, int w) {
    const Tensor& tv = value(t);
    require(tv.ndim() == 2 && tv.dim(0) == h * w, "tokens_to_map: ", shape_string(tv),
            " vs ", h, "x", w);
    const int c = tv.dim(1), hw = h * w;
    Tensor out({c, h, w});
    as_matrix_mut(out, c, hw).noalias() = as_matrix(tv, hw, c).transpose();
    VarId id = push(std::move(out), needs_grad(t), {t});
    set_back(id, [this, id, t, c, hw] {
      if (!needs_grad(t)) return;
      as_matrix_mut(gref(t), hw, c).noalias() +=
          as_matrix(nodes_[std::size_t(id)].grad, c, hw).transpose();
    });
    return id;
  }

  VarId concat_channels(VarId a, VarId b) {
    const Tensor &av = value(a), &bv = value(b);
    require(av.ndim() == 3 && bv.ndim() == 3 && av.dim(1) == bv.dim(1) &&
                av.dim(2) == bv.dim(2),
            "concat_channels: ", shape_string(av), " vs ", shape_string(bv));
    const int ca = av.dim(0), cb = bv.dim(0);
    Tensor out({ca + cb, av.dim(1), av.dim(2)});
    std::copy(av.data(), av.data() + av.size(), out.mut());
    std::copy(bv.data(), bv.data() + bv.size(), out.mut() + av.size());
    VarId id = push(std::move(out), needs_grad(a) || needs_grad(b), {a, b});
    set_back(id, [this, id, a, b] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      const std::size_t na = value(a).size();
      if (needs_grad(a)) {
        double* da = gref(a).mut();
        for (std::size_t i = 0; i < na; ++i) da[i] += g.data()[i];
      }
      if (needs_grad(b)) {
        double* db = gref(b).mut();
        for (std::size_t i = 0; i < value(b).size(); ++i) db[i] += g.data()[na + i];
      }
    });
    return id;
  }

  VarId slice_cols(VarId a, int c0, int c1) {
    const Tensor& av = value(a);
    require(av.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= av.dim(1), "slice_cols: bad range");
    const int r = av.dim(0), c = av.dim(1), w = c1 - c0;
    Tensor out({r, w});
    for (int i = 0; i < r; ++i) {
      std::copy(av.data() + std::size_t(i) * c + c0, av.data() + std::size_t(i) * c + c1,
                out.mut() + std::size_t(i) * w);
    }
    VarId id = push(std::move(out), needs_grad(a), {a});
    set_back(id, [this, id, a, c0, r, c, w] {
      if (!needs_grad(a)) return;
      const Tensor& g = nodes_[std::size_t(id)].grad;
      double* da = gref(a).mut();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < w; ++j) {
          da[std::size_t(i) * c + c0 + j] += g.data()[std::size_t(i) * w + j];
        }
      }
    });
    return id;
  }

  VarId concat_cols(const std::vector<VarId>& parts) {
    require(!parts.empty(), "concat_cols: empty");
    const int r = value(parts[0]).dim(0);
    int total = 0;
    bool req = false;
    for (VarId p : parts) {
      require(value(p).ndim() == 2 && value(p).dim(0) == r, "concat_cols: row mismatch");
      total += value(p).dim(1);
      req = req || needs_grad(p);
    }
    Tensor out({r, total});
    int off = 0;
    for (VarId p : parts) {
      const Tensor& pv = value(p);
      const int w = pv.dim(1);
      for (int i = 0; i < r; ++i) {
        std::copy(pv.data() + std::size_t(i) * w, pv.data() + std::size_t(i) * w + w,
                  out.mut() + std::size_t(i) * total + off);
      }
      off += w;
    }
    VarId id = push(std::move(out), req, parts);
    set_back(id, [this, id, parts, r, total] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      int off = 0;
      for (VarId p : parts) {
        const int w = value(p).dim(1);
        if (needs_grad(p)) {
          double* dp = gref(p).mut();
          for (int i = 0; i < r; ++i) {
            for (int j = 0; j < w; ++j) {
              dp[std::size_t(i) * w + j] += g.data()[std::size_t(i) * total + off + j];
            }
          }
        }
        off += w;
      }
    });
    return id;
  }

  // Rows of a (n,C) matrix gathered from map pixels; scatter-add on the way back.
  VarId gather_rows(VarId x, const std::vector<std::pair<int, int>>& pos) {
    const Tensor& xv = value(x);
    require(xv.ndim() == 3, "gather_rows: expected (C,H,W)");
    require(!pos.empty(), "gather_rows: no positions");
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({static_cast<int>(pos.size()), c});
    const std::size_t plane = std::size_t(h) * w;
    for (std::size_t k = 0; k < pos.size(); ++k) {
      auto [i, j] = pos[k];
      require(i >= 0 && i < h && j >= 0 && j < w, "gather_rows: position ", k, " at (", i,
              ",", j, ") outside ", h, "x", w);
      for (int ch = 0; ch < c; ++ch) {
        out.mut()[k * c + ch] = xv.data()[ch * plane + std::size_t(i) * w + j];
      }
    }
    VarId id = push(std::move(out), needs_grad(x), {x});
    set_back(id, [this, id, x, pos, c, w, plane] {
      if (!needs_grad(x)) return;
      const Tensor& g = nodes_[std::size_t(id)].grad;
      double* dx = gref(x).mut();
      for (std::size_t k = 0; k < pos.size(); ++k) {
        auto [i, j] = pos[k];
        for (int ch = 0; ch < c; ++ch) {
          dx[ch * plane + std::size_t(i) * w + j] += g.data()[k * c + ch];
        }
      }
    });
    return id;
  }

  // ---- convolution ----

  // x:(C,H,W) w:(F,C,kh,kw) b:(F). Zero padding.
  VarId conv2d(VarId x, VarId w, VarId b, int stride, int pad) {
    const Tensor &xv = value(x), &wv = value(w), &bv = value(b);
    require(xv.ndim() == 3 && wv.ndim() == 4 && xv.dim(0) == wv.dim(1),
            "conv2d: input ", shape_string(xv), " vs kernel ", shape_string(wv));
    const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const int F = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    require(bv.size() == std::size_t(F), "conv2d: bias size");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    require(Ho > 0 && Wo > 0, "conv2d: empty output");
    const int K = C * kh * kw, N = Ho * Wo;

    Tensor col = im2col(xv, kh, kw, stride, pad, Ho, Wo);
    Tensor out({F, Ho, Wo});
    as_matrix_mut(out, F, N).noalias() = as_matrix(wv, F, K) * as_matrix(col, K, N);
    for (int f = 0; f < F; ++f) {
      double* row = out.mut() + std::size_t(f) * N;
      const double bias = bv.data()[f];
      for (int i = 0; i < N; ++i) row[i] += bias;
    }
    VarId id = push(std::move(out), needs_grad(x) || needs_grad(w) || needs_grad(b), {x, w, b});
    set_back(id, [this, id, x, w, b, stride, pad, C, H, W, F, kh, kw, Ho, Wo, K, N] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      auto gm = as_matrix(g, F, N);
      if (needs_grad(b)) {
        double* db = gref(b).mut();
        for (int f = 0; f < F; ++f) db[f] += gm.row(f).sum();
      }
      if (needs_grad(w)) {
        // im2col is recomputed here instead of kept alive on the tape; it
        // is the largest intermediate by far.
        Tensor col = im2col(value(x), kh, kw, stride, pad, Ho, Wo);
        as_matrix_mut(gref(w), F, K).noalias() += gm * as_matrix(col, K, N).transpose();
      }
      if (needs_grad(x)) {
        Tensor dcol({K, N});
        as_matrix_mut(dcol, K, N).noalias() =
            as_matrix(value(w), F, K).transpose() * gm;
        col2im_add(gref(x), dcol, C, H, W, kh, kw, stride, pad, Ho, Wo);
      }
    });
    return id;
  }

  // ---- normalization ----

  // Statistics over groups of channels (per sample). groups == C gives the
  // per-channel spatial statistics used by the batch-norm stand-in.
  VarId group_norm(VarId x, int groups, VarId gamma, VarId beta, double eps,
                   Tensor* out_means = nullptr, Tensor* out_vars = nullptr) {
    const Tensor& xv = value(x);
    require(xv.ndim() == 3, "group_norm: expected (C,H,W)");
    const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    require(groups > 0 && C % groups == 0, "group_norm: ", groups,
            " groups do not divide ", C, " channels");
    require(value(gamma).size() == std::size_t(C) && value(beta).size() == std::size_t(C),
            "group_norm: affine size");
    const int cpg = C / groups;
    const std::size_t plane = std::size_t(H) * W;
    const std::size_t m = cpg * plane;

    Tensor xhat({C, H, W});
    Tensor inv_std({groups});
    Tensor means({groups}), vars({groups});
    for (int g = 0; g < groups; ++g) {
      const double* src = xv.data() + std::size_t(g) * m;
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += src[i];
      mu /= double(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double d = src[i] - mu;
        var += d * d;
      }
      var /= double(m);
      const double inv = 1.0 / std::sqrt(var + eps);
      double* dst = xhat.mut() + std::size_t(g) * m;
      for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - mu) * inv;
      inv_std.mut()[g] = inv;
      means.mut()[g] = mu;
      vars.mut()[g] = var;
    }
    if (out_means) *out_means = means;
    if (out_vars) *out_vars = vars;

    Tensor out({C, H, W});
    for (int c = 0; c < C; ++c) {
      const double gam = value(gamma).data()[c], bet = value(beta).data()[c];
      const double* src = xhat.data() + std::size_t(c) * plane;
      double* dst = out.mut() + std::size_t(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = gam * src[i] + bet;
    }
    VarId id =
        push(std::move(out), needs_grad(x) || needs_grad(gamma) || needs_grad(beta), {x, gamma, beta});
    set_back(id, [this, id, x, gamma, beta, xhat, inv_std, groups, cpg, plane, C, m] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      if (needs_grad(gamma)) {
        double* dg = gref(gamma).mut();
        for (int c = 0; c < C; ++c) {
          double s = 0.0;
          const double* gp = g.data() + std::size_t(c) * plane;
          const double* xp = xhat.data() + std::size_t(c) * plane;
          for (std::size_t i = 0; i < plane; ++i) s += gp[i] * xp[i];
          dg[c] += s;
        }
      }
      if (needs_grad(beta)) {
        double* db = gref(beta).mut();
        for (int c = 0; c < C; ++c) {
          double s = 0.0;
          const double* gp = g.data() + std::size_t(c) * plane;
          for (std::size_t i = 0; i < plane; ++i) s += gp[i];
          db[c] += s;
        }
      }
      if (needs_grad(x)) {
        double* dx = gref(x).mut();
        const double* gam = value(gamma).data();
        for (int grp = 0; grp < groups; ++grp) {
          // dxhat = g * gamma (per channel); then the group-statistic terms.
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int cc = 0; cc < cpg; ++cc) {
            const int c = grp * cpg + cc;
            const double* gp = g.data() + std::size_t(c) * plane;
            const double* xp = xhat.data() + std::size_t(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double dxh = gp[i] * gam[c];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xp[i];
            }
          }
          const double inv = inv_std.data()[grp];
          const double mean_dxhat = sum_dxhat / double(m);
          const double mean_dxhat_xhat = sum_dxhat_xhat / double(m);
          for (int cc = 0; cc < cpg; ++cc) {
            const int c = grp * cpg + cc;
            const double* gp = g.data() + std::size_t(c) * plane;
            const double* xp = xhat.data() + std::size_t(c) * plane;
            double* dp = dx + std::size_t(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double dxh = gp[i] * gam[c];
              dp[i] += inv * (dxh - mean_dxhat - xp[i] * mean_dxhat_xhat);
            }
          }
        }
      }
    });
    return id;
  }

  // Normalization with fixed per-channel statistics (inference-mode batch
  // norm). Statistics are constants; gradients flow to gamma/beta/x only.
  VarId channel_norm_fixed(VarId x, VarId gamma, VarId beta, const Tensor& mean,
                           const Tensor& var, double eps) {
    const Tensor& xv = value(x);
    require(xv.ndim() == 3, "channel_norm_fixed: expected (C,H,W)");
    const int C = xv.dim(0);
    const std::size_t plane = std::size_t(xv.dim(1)) * xv.dim(2);
    require(mean.size() == std::size_t(C) && var.size() == std::size_t(C),
            "channel_norm_fixed: stats size");
    Tensor out({C, xv.dim(1), xv.dim(2)});
    Tensor inv({C});
    for (int c = 0; c < C; ++c) inv.mut()[c] = 1.0 / std::sqrt(var.data()[c] + eps);
    for (int c = 0; c < C; ++c) {
      const double gam = value(gamma).data()[c], bet = value(beta).data()[c];
      const double mu = mean.data()[c], iv = inv.data()[c];
      const double* src = xv.data() + std::size_t(c) * plane;
      double* dst = out.mut() + std::size_t(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = gam * (src[i] - mu) * iv + bet;
    }
    VarId id =
        push(std::move(out), needs_grad(x) || needs_grad(gamma) || needs_grad(beta), {x, gamma, beta});
    set_back(id, [this, id, x, gamma, beta, mean, inv, plane, C] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      for (int c = 0; c < C; ++c) {
        const double* gp = g.data() + std::size_t(c) * plane;
        const double* xp = value(x).data() + std::size_t(c) * plane;
        const double mu = mean.data()[c], iv = inv.data()[c];
        if (needs_grad(gamma)) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += gp[i] * (xp[i] - mu) * iv;
          gref(gamma).mut()[c] += s;
        }
        if (needs_grad(beta)) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += gp[i];
          gref(beta).mut()[c] += s;
        }
        if (needs_grad(x)) {
          const double k = value(gamma).data()[c] * iv;
          double* dp = gref(x).mut() + std::size_t(c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dp[i] += gp[i] * k;
        }
      }
    });
    return id;
  }

  // Per-row normalization over the feature dimension of an (R,E) matrix.
  VarId layer_norm_rows(VarId x, VarId gamma, VarId beta, double eps) {
    const Tensor& xv = value(x);
    require(xv.ndim() == 2, "layer_norm_rows: expected (R,E)");
    const int R = xv.dim(0), E = xv.dim(1);
    require(value(gamma).size() == std::size_t(E) && value(beta).size() == std::size_t(E),
            "layer_norm_rows: affine size");
    Tensor xhat({R, E});
    Tensor inv_std({R});
    for (int r = 0; r < R; ++r) {
      const double* src = xv.data() + std::size_t(r) * E;
      double mu = 0.0;
      for (int i = 0; i < E; ++i) mu += src[i];
      mu /= E;
      double var = 0.0;
      for (int i = 0; i < E; ++i) {
        double d = src[i] - mu;
        var += d * d;
      }
      var /= E;
      const double inv = 1.0 / std::sqrt(var + eps);
      double* dst = xhat.mut() + std::size_t(r) * E;
      for (int i = 0; i < E; ++i) dst[i] = (src[i] - mu) * inv;
      inv_std.mut()[r] = inv;
    }
    Tensor out({R, E});
    for (int r = 0; r < R; ++r) {
      const double* src = xhat.data() + std::size_t(r) * E;
      double* dst = out.mut() + std::size_t(r) * E;
      for (int i = 0; i < E; ++i) {
        dst[i] = value(gamma).data()[i] * src[i] + value(beta).data()[i];
      }
    }
    VarId id =
        push(std::move(out), needs_grad(x) || needs_grad(gamma) || needs_grad(beta), {x, gamma, beta});
    set_back(id, [this, id, x, gamma, beta, xhat, inv_std, R, E] {
      const Tensor& g = nodes_[std::size_t(id)].grad;
      if (needs_grad(gamma) || needs_grad(beta)) {
        for (int i = 0; i < E; ++i) {
          double sg = 0.0, sb = 0.0;
          for (int r = 0; r < R; ++r) {
            const double gv = g.data()[std::size_t(r) * E + i];
            sg += gv * xhat.data()[std::size_t(r) * E + i];
            sb += gv;
          }
          if (needs_grad(gamma)) gref(gamma).mut()[i] += sg;
          if (needs_grad(beta)) gref(beta).mut()[i] += sb;
        }
      }
      if (needs_grad(x)) {
        double* dx = gref(x).mut();
        const double* gam = value(gamma).data();
        for (int r = 0; r < R; ++r) {
          const double* gp = g.data() + std::size_t(r) * E;
          const double* xp = xhat.data() + std::size_t(r) * E;
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (int i = 0; i < E; ++i) {
            const double dxh = gp[i] * gam[i];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xp[i];
          }
          const double inv = inv_std.data()[r];
          for (int i = 0; i < E; ++i) {
            const double dxh = gp[i] * gam[i];
            dx[std::size_t(r) * E + i] +=
                inv * (dxh - sum_dxh / E - xp[i] * sum_dxh_xh / E);
          }
        }
      }
    });
    return id;
  }

  // ---- attention pieces ----

  // Row-wise softmax where rows with keep==0 are entirely -inf filled
  // before the softmax; such rows produce exact zero rows, never NaN.
  VarId row_masked_softmax(VarId scores, std::vector<std::uint8_t> keep) {
    const Tensor& sv = value(scores);
    require(sv.ndim() == 2, "row_masked_softmax: expected (R,N)");
    const int R = sv.dim(0), N = sv.dim(1);
    require(keep.size() == std::size_t(R), "row_masked_softmax: keep length ", keep.size(),
            " vs ", R, " rows");
    Tensor out({R, N});
    for (int r = 0; r < R; ++r) {
      double* dst = out.mut() + std::size_t(r) * N;
      if (!keep[std::size_t(r)]) continue;  // stays zero
      const double* src = sv.data() + std::size_t(r) * N;
      double mx = src[0];
      for (int i = 1; i < N; ++i) mx = std::max(mx, src[i]);
      double sum = 0.0;
      for (int i = 0; i < N; ++i) {
        dst[i] = std::exp(src[i] - mx);
        sum += dst[i];
      }
      for (int i = 0; i < N; ++i) dst[i] /= sum;
    }
    VarId id = push(std::move(out), needs_grad(scores), {scores});
    set_back(id, [this, id, scores, keep = std::move(keep), R, N] {
      if (!needs_grad(scores)) return;
      const Tensor& g = nodes_[std::size_t(id)].grad;
      const Tensor& p = value(id);
      double* ds = gref(scores).mut();
      for (int r = 0; r < R; ++r) {
        if (!keep[std::size_t(r)]) continue;
        const double* gp = g.data() + std::size_t(r) * N;
        const double* pp = p.data() + std::size_t(r) * N;
        double dot = 0.0;
        for (int i = 0; i < N; ++i) dot += gp[i] * pp[i];
        for (int i = 0; i < N; ++i) ds[std::size_t(r) * N + i] += pp[i] * (gp[i] - dot);
      }
    });
    return id;
  }

  // ---- resampling ----

  VarId upsample_nearest2(VarId x) {
    const Tensor& xv = value(x);
    require(xv.ndim() == 3, "upsample_nearest2: expected (C,H,W)");
    const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const double v = xv.at(c, i, j);
          double* base = out.mut() + ((std::size_t(c) * 2 * H + 2 * i) * 2 * W + 2 * j);
          base[0] = v;
          base[1] = v;
          base[2 * W] = v;
          base[2 * W + 1] = v;
        }
      }
    }
    VarId id = push(std::move(out), needs_grad(x), {x});
    set_back(id, [this, id, x, C, H, W] {
      if (!needs_grad(x)) return;
      const Tensor& g = nodes_[std::size_t(id)].grad;
      double* dx = gref(x).mut();
      for (int c = 0; c < C; ++c) {
        for (int i = 0; i < H; ++i) {
          for (int j = 0; j < W; ++j) {
            const double* base =
                g.data() + ((std::size_t(c) * 2 * H + 2 * i) * 2 * W + 2 * j);
            dx[(std::size_t(c) * H + i) * W + j] +=
                base[0] + base[1] + base[2 * W] + base[2 * W + 1];
          }
        }
      }
    });
    return id;
  }

  // ---- reductions / losses ----

  VarId mean_all(VarId x) {
    const Tensor& xv = value(x);
    require(xv.size() > 0, "mean_all: empty");
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv.data()[i];
    Tensor out({1});
    out.mut()[0] = s / double(xv.size());
    VarId id = push(std::move(out), needs_grad(x), {x});
    set_back(id, [this, id, x] {
      if (!needs_grad(x)) return;
      const double g = nodes_[std::size_t(id)].grad.data()[0] / double(value(x).size());
      double* dx = gref(x).mut();
      for (std::size_t i = 0; i < value(x).size(); ++i) dx[i] += g;
    });
    return id;
  }

  VarId mse_loss(VarId pred, const Tensor& target) {
    const Tensor& pv = value(pred);
    require(pv.same_shape(target), "mse_loss: shape mismatch ", shape_string(pv), " vs ",
            shape_string(target));
    const std::size_t n = pv.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = pv.data()[i] - target.data()[i];
      s += r * r;
    }
    Tensor out({1});
    out.mut()[0] = s / double(n);
    VarId id = push(std::move(out), needs_grad(pred), {pred});
    set_back(id, [this, id, pred, target, n] {
      if (!needs_grad(pred)) return;
      const double g = nodes_[std::size_t(id)].grad.data()[0];
      double* dp = gref(pred).mut();
      for (std::size_t i = 0; i < n; ++i) {
        dp[i] += g * 2.0 * (value(pred).data()[i] - target.data()[i]) / double(n);
      }
    });
    return id;
  }

  // Huber-style momentum prediction loss with switch point delta:
  // quadratic e^2/2 inside |e| <= delta, linear delta*|e| - delta^2/2 outside.
  VarId mpl_loss(VarId pred, const Tensor& target, double delta) {
    require(delta > 0.0, "mpl_loss: delta must be positive, got ", delta);
    const Tensor& pv = value(pred);
    require(pv.same_shape(target), "mpl_loss: shape mismatch");
    const std::size_t n = pv.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = pv.data()[i] - target.data()[i];
      const double a = std::abs(e);
      s += a <= delta ? 0.5 * e * e : delta * a - 0.5 * delta * delta;
    }
    Tensor out({1});
    out.mut()[0] = s / double(n);
    VarId id = push(std::move(out), needs_grad(pred), {pred});
    set_back(id, [this, id, pred, target, delta, n] {
      if (!needs_grad(pred)) return;
      const double g = nodes_[std::size_t(id)].grad.data()[0];
      double* dp = gref(pred).mut();
      for (std::size_t i = 0; i < n; ++i) {
        const double e = value(pred).data()[i] - target.data()[i];
        const double d = std::abs(e) <= delta ? e : (e > 0.0 ? delta : -delta);
        dp[i] += g * d / double(n);
      }
    });
    return id;
  }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool has_grad = false;
    bool req = false;
    std::function<void()> back;
  };

  bool needs_grad(VarId id) const { return nodes_[std::size_t(id)].req; }

  Tensor& gref(VarId id) {
    Node& n = nodes_[std::size_t(id)];
    if (!n.has_grad) {
      n.grad = Tensor::zeros(n.val.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  static void axpy(Tensor& acc, const Tensor& g, double s) {
    double* a = acc.mut();
    for (std::size_t i = 0; i < g.size(); ++i) a[i] += s * g.data()[i];
  }

  VarId push(Tensor val, bool req, std::vector<VarId> /*parents*/) {
    nodes_.push_back(Node{std::move(val), Tensor{}, false, req, nullptr});
    return static_cast<VarId>(nodes_.size() - 1);
  }

  void set_back(VarId id, std::function<void()> fn) {
    if (nodes_[std::size_t(id)].req) nodes_[std::size_t(id)].back = std::move(fn);
  }

  static Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad, int Ho,
                       int Wo) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int K = C * kh * kw, N = Ho * Wo;
    Tensor col({K, N});
    double* out = col.mut();
    for (int c = 0; c < C; ++c) {
      const double* plane = x.data() + std::size_t(c) * H * W;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          double* row = out + (std::size_t(c) * kh * kw + std::size_t(u) * kw + v) * N;
          for (int oi = 0; oi < Ho; ++oi) {
            const int si = oi * stride - pad + u;
            if (si < 0 || si >= H) {
              std::fill(row + std::size_t(oi) * Wo, row + std::size_t(oi) * Wo + Wo, 0.0);
              continue;
            }
            for (int oj = 0; oj < Wo; ++oj) {
              const int sj = oj * stride - pad + v;
              row[std::size_t(oi) * Wo + oj] =
                  (sj >= 0 && sj < W) ? plane[std::size_t(si) * W + sj] : 0.0;
            }
          }
        }
      }
    }
    return col;
  }

  static void col2im_add(Tensor& dx, const Tensor& dcol, int C, int H, int W, int kh,
                         int kw, int stride, int pad, int Ho, int Wo) {
    const int N = Ho * Wo;
    double* out = dx.mut();
    for (int c = 0; c < C; ++c) {
      double* plane = out + std::size_t(c) * H * W;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          const double* row =
              dcol.data() + (std::size_t(c) * kh * kw + std::size_t(u) * kw + v) * N;
          for (int oi = 0; oi < Ho; ++oi) {
            const int si = oi * stride - pad + u;
            if (si < 0 || si >= H) continue;
            for (int oj = 0; oj < Wo; ++oj) {
              const int sj = oj * stride - pad + v;
              if (sj >= 0 && sj < W) plane[std::size_t(si) * W + sj] += row[std::size_t(oi) * Wo + oj];
            }
          }
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, VarId> params_;
  bool swept_ = false;
};

}  // namespace pathfinder
