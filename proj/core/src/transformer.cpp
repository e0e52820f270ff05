#include "transformer.hpp"

#include <algorithm>
#include <cmath>

#include "grlab/rng.hpp"

namespace grlab::detail {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) +
         0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void layer_norm(const double* x, const double* g, const double* b, int n,
                double* xhat, double* rstd, double* y) {
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    mean += x[i];
  }
  mean /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= n;
  const double r = 1.0 / std::sqrt(var + kLayerNormEps);
  *rstd = r;
  for (int i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mean) * r;
    y[i] = g[i] * xhat[i] + b[i];
  }
}

// dx += LN'(dy); dg += dy * xhat; db += dy.
void layer_norm_backward(const double* dy, const double* xhat, double rstd,
                         const double* g, int n, double* dg, double* db,
                         double* dx) {
  double mean1 = 0.0;
  double mean2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dxh = dy[i] * g[i];
    dg[i] += dy[i] * xhat[i];
    db[i] += dy[i];
    mean1 += dxh;
    mean2 += dxh * xhat[i];
  }
  mean1 /= n;
  mean2 /= n;
  for (int i = 0; i < n; ++i) {
    const double dxh = dy[i] * g[i];
    dx[i] += rstd * (dxh - mean1 - xhat[i] * mean2);
  }
}

// y = x W (+ bias); W is in x out.
void matvec(const double* x, const double* w, const double* bias, int in,
            int out, double* y) {
  if (bias != nullptr) {
    std::copy(bias, bias + out, y);
  } else {
    std::fill(y, y + out, 0.0);
  }
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* row = w + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) {
      y[j] += xi * row[j];
    }
  }
}

// dW += x^T dy; dx += dy W^T.
void matvec_backward(const double* x, const double* w, const double* dy,
                     int in, int out, double* dw, double* dx) {
  for (int i = 0; i < in; ++i) {
    const double* row = w + static_cast<std::size_t>(i) * out;
    double* drow = dw + static_cast<std::size_t>(i) * out;
    const double xi = x[i];
    double acc = 0.0;
    for (int j = 0; j < out; ++j) {
      drow[j] += xi * dy[j];
      acc += dy[j] * row[j];
    }
    if (dx != nullptr) {
      dx[i] += acc;
    }
  }
}

void fill_normal(Rng& rng, double* out, std::size_t n, double stddev) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = rng.normal() * stddev;
  }
}

}  // namespace

TransformerLayout::TransformerLayout(const ArchDescriptor& arch)
    : vocab(arch.vocab_size),
      positions(arch.max_seq_len),
      dim(arch.embed_dim),
      layers(arch.num_layers),
      heads(arch.num_heads),
      ffn(arch.ffn_dim),
      head_dim(arch.num_heads > 0 ? arch.embed_dim / arch.num_heads : 0) {
  const std::size_t V = static_cast<std::size_t>(vocab);
  const std::size_t P = static_cast<std::size_t>(positions);
  const std::size_t d = static_cast<std::size_t>(dim);
  const std::size_t F = static_cast<std::size_t>(ffn);
  std::size_t off = 0;
  auto take = [&off](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  tok_emb = take(V * d);
  pos_emb = take(P * d);
  for (int l = 0; l < layers; ++l) {
    Block b{};
    b.ln1_g = take(d);
    b.ln1_b = take(d);
    b.wq = take(d * d);
    b.wk = take(d * d);
    b.wv = take(d * d);
    b.wo = take(d * d);
    b.ln2_g = take(d);
    b.ln2_b = take(d);
    b.w1 = take(d * F);
    b.b1 = take(F);
    b.w2 = take(F * d);
    b.b2 = take(d);
    blocks.push_back(b);
  }
  lnf_g = take(d);
  lnf_b = take(d);
  head = take(d * V);
  total = off;
}

void init_transformer(const TransformerLayout& L, std::span<double> values,
                      std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t V = static_cast<std::size_t>(L.vocab);
  const std::size_t d = static_cast<std::size_t>(L.dim);
  const std::size_t F = static_cast<std::size_t>(L.ffn);
  double* p = values.data();
  std::fill(values.begin(), values.end(), 0.0);
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double ffn_scale = 1.0 / std::sqrt(static_cast<double>(F));
  const double depth_scale =
      1.0 / std::sqrt(2.0 * static_cast<double>(std::max(1, L.layers)));
  fill_normal(rng, p + L.tok_emb, V * d, 0.5);
  fill_normal(rng, p + L.pos_emb, static_cast<std::size_t>(L.positions) * d, 0.5);
  for (const auto& b : L.blocks) {
    std::fill(p + b.ln1_g, p + b.ln1_g + d, 1.0);
    std::fill(p + b.ln2_g, p + b.ln2_g + d, 1.0);
    fill_normal(rng, p + b.wq, d * d, in_scale);
    fill_normal(rng, p + b.wk, d * d, in_scale);
    fill_normal(rng, p + b.wv, d * d, in_scale);
    fill_normal(rng, p + b.wo, d * d, in_scale * depth_scale);
    fill_normal(rng, p + b.w1, d * F, in_scale);
    fill_normal(rng, p + b.w2, F * d, ffn_scale * depth_scale);
  }
  std::fill(p + L.lnf_g, p + L.lnf_g + d, 1.0);
  fill_normal(rng, p + L.head, d * V, in_scale);
}

TransformerState::TransformerState(const TransformerLayout& layout,
                                   std::span<const double> params,
                                   int capacity)
    : L_(layout), p_(params), capacity_(capacity) {
  const std::size_t n = static_cast<std::size_t>(capacity);
  const std::size_t d = static_cast<std::size_t>(L_.dim);
  const std::size_t F = static_cast<std::size_t>(L_.ffn);
  const std::size_t H = static_cast<std::size_t>(L_.heads);
  inputs_.reserve(n);
  cache_.resize(static_cast<std::size_t>(L_.layers));
  for (auto& c : cache_) {
    c.h_in.resize(n * d);
    c.xhat1.resize(n * d);
    c.rstd1.resize(n);
    c.a.resize(n * d);
    c.q.resize(n * d);
    c.k.resize(n * d);
    c.v.resize(n * d);
    c.probs.resize(H * n * n);
    c.attn.resize(n * d);
    c.h_mid.resize(n * d);
    c.xhat2.resize(n * d);
    c.rstd2.resize(n);
    c.m.resize(n * d);
    c.u.resize(n * F);
    c.z.resize(n * F);
  }
  h_last_.resize(n * d);
  xhatf_.resize(n * d);
  rstdf_.resize(n);
  final_.resize(n * d);
}

void TransformerState::push(Token input) {
  if (size_ >= capacity_) {
    throw std::out_of_range("transformer: sequence exceeds capacity");
  }
  if (input < 0 || input >= L_.vocab) {
    throw std::out_of_range("transformer: token id out of range");
  }
  const int t = size_;
  const int d = L_.dim;
  const int F = L_.ffn;
  const int dh = L_.head_dim;
  const std::size_t n = static_cast<std::size_t>(capacity_);
  const std::size_t row = static_cast<std::size_t>(t) * d;
  const double* P = p_.data();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  inputs_.push_back(input);

  std::vector<double> scores(static_cast<std::size_t>(t) + 1);
  std::vector<double> proj(static_cast<std::size_t>(std::max(d, F)));

  double* h = cache_.empty() ? h_last_.data() + row : cache_[0].h_in.data() + row;
  const double* te = P + L_.tok_emb + static_cast<std::size_t>(input) * d;
  const double* pe = P + L_.pos_emb + row;
  for (int i = 0; i < d; ++i) {
    h[i] = te[i] + pe[i];
  }

  for (std::size_t l = 0; l < cache_.size(); ++l) {
    LayerCache& c = cache_[l];
    const auto& b = L_.blocks[l];
    const double* hin = c.h_in.data() + row;
    layer_norm(hin, P + b.ln1_g, P + b.ln1_b, d, c.xhat1.data() + row,
               &c.rstd1[static_cast<std::size_t>(t)], c.a.data() + row);
    matvec(c.a.data() + row, P + b.wq, nullptr, d, d, c.q.data() + row);
    matvec(c.a.data() + row, P + b.wk, nullptr, d, d, c.k.data() + row);
    matvec(c.a.data() + row, P + b.wv, nullptr, d, d, c.v.data() + row);

    double* out = c.attn.data() + row;
    std::fill(out, out + d, 0.0);
    for (int hh = 0; hh < L_.heads; ++hh) {
      const int off = hh * dh;
      const double* q = c.q.data() + row + off;
      double mx = -INFINITY;
      for (int s = 0; s <= t; ++s) {
        const double* k = c.k.data() + static_cast<std::size_t>(s) * d + off;
        double dot = 0.0;
        for (int i = 0; i < dh; ++i) {
          dot += q[i] * k[i];
        }
        scores[static_cast<std::size_t>(s)] = dot * scale;
        mx = std::max(mx, scores[static_cast<std::size_t>(s)]);
      }
      double sum = 0.0;
      for (int s = 0; s <= t; ++s) {
        scores[static_cast<std::size_t>(s)] =
            std::exp(scores[static_cast<std::size_t>(s)] - mx);
        sum += scores[static_cast<std::size_t>(s)];
      }
      double* probs = c.probs.data() + (static_cast<std::size_t>(hh) * n +
                                        static_cast<std::size_t>(t)) * n;
      for (int s = 0; s <= t; ++s) {
        const double ps = scores[static_cast<std::size_t>(s)] / sum;
        probs[s] = ps;
        const double* v = c.v.data() + static_cast<std::size_t>(s) * d + off;
        for (int i = 0; i < dh; ++i) {
          out[off + i] += ps * v[i];
        }
      }
    }

    double* hmid = c.h_mid.data() + row;
    matvec(out, P + b.wo, nullptr, d, d, proj.data());
    for (int i = 0; i < d; ++i) {
      hmid[i] = hin[i] + proj[static_cast<std::size_t>(i)];
    }
    layer_norm(hmid, P + b.ln2_g, P + b.ln2_b, d, c.xhat2.data() + row,
               &c.rstd2[static_cast<std::size_t>(t)], c.m.data() + row);
    const std::size_t frow = static_cast<std::size_t>(t) * F;
    matvec(c.m.data() + row, P + b.w1, P + b.b1, d, F, c.u.data() + frow);
    for (int j = 0; j < F; ++j) {
      c.z[frow + j] = gelu(c.u[frow + j]);
    }
    matvec(c.z.data() + frow, P + b.w2, P + b.b2, F, d, proj.data());
    double* hout = (l + 1 < cache_.size()) ? cache_[l + 1].h_in.data() + row
                                           : h_last_.data() + row;
    for (int i = 0; i < d; ++i) {
      hout[i] = hmid[i] + proj[static_cast<std::size_t>(i)];
    }
  }

  layer_norm(h_last_.data() + row, P + L_.lnf_g, P + L_.lnf_b, d,
             xhatf_.data() + row, &rstdf_[static_cast<std::size_t>(t)],
             final_.data() + row);
  ++size_;
}

std::span<const double> TransformerState::final_hidden(int pos) const {
  const std::size_t d = static_cast<std::size_t>(L_.dim);
  return {final_.data() + static_cast<std::size_t>(pos) * d, d};
}

void TransformerState::logits(int pos, std::span<double> out) const {
  matvec(final_hidden(pos).data(), p_.data() + L_.head, nullptr, L_.dim,
         L_.vocab, out.data());
}

void TransformerState::head_backward(int pos, std::span<const double> dlogits,
                                     std::span<double> d_final_row,
                                     std::span<double> grad) const {
  matvec_backward(final_hidden(pos).data(), p_.data() + L_.head,
                  dlogits.data(), L_.dim, L_.vocab, grad.data() + L_.head,
                  d_final_row.data());
}

void TransformerState::backward(std::span<const double> d_final,
                                std::span<double> grad) const {
  const int T = size_;
  const int d = L_.dim;
  const int F = L_.ffn;
  const int dh = L_.head_dim;
  const std::size_t n = static_cast<std::size_t>(capacity_);
  const std::size_t Td = static_cast<std::size_t>(T) * d;
  const double* P = p_.data();
  double* G = grad.data();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> dh_cur(Td, 0.0);
  for (int t = 0; t < T; ++t) {
    const std::size_t row = static_cast<std::size_t>(t) * d;
    layer_norm_backward(d_final.data() + row, xhatf_.data() + row,
                        rstdf_[static_cast<std::size_t>(t)], P + L_.lnf_g, d,
                        G + L_.lnf_g, G + L_.lnf_b, dh_cur.data() + row);
  }

  std::vector<double> dmid(Td), dz(static_cast<std::size_t>(F)),
      dm(static_cast<std::size_t>(d)), dattn(Td), dq(Td), dk(Td), dv(Td),
      da(static_cast<std::size_t>(d)), dp(static_cast<std::size_t>(T));

  for (std::size_t li = cache_.size(); li-- > 0;) {
    const LayerCache& c = cache_[li];
    const auto& b = L_.blocks[li];

    // Feed-forward residual branch.
    dmid = dh_cur;
    for (int t = 0; t < T; ++t) {
      const std::size_t row = static_cast<std::size_t>(t) * d;
      const std::size_t frow = static_cast<std::size_t>(t) * F;
      const double* dout = dh_cur.data() + row;
      std::fill(dz.begin(), dz.end(), 0.0);
      matvec_backward(c.z.data() + frow, P + b.w2, dout, F, d, G + b.w2,
                      dz.data());
      for (int i = 0; i < d; ++i) {
        G[b.b2 + static_cast<std::size_t>(i)] += dout[i];
      }
      for (int j = 0; j < F; ++j) {
        dz[static_cast<std::size_t>(j)] *= gelu_grad(c.u[frow + j]);
        G[b.b1 + static_cast<std::size_t>(j)] += dz[static_cast<std::size_t>(j)];
      }
      std::fill(dm.begin(), dm.end(), 0.0);
      matvec_backward(c.m.data() + row, P + b.w1, dz.data(), d, F, G + b.w1,
                      dm.data());
      layer_norm_backward(dm.data(), c.xhat2.data() + row,
                          c.rstd2[static_cast<std::size_t>(t)], P + b.ln2_g, d,
                          G + b.ln2_g, G + b.ln2_b, dmid.data() + row);
    }

    // Attention residual branch.
    dh_cur = dmid;
    std::fill(dattn.begin(), dattn.end(), 0.0);
    for (int t = 0; t < T; ++t) {
      const std::size_t row = static_cast<std::size_t>(t) * d;
      matvec_backward(c.attn.data() + row, P + b.wo, dmid.data() + row, d, d,
                      G + b.wo, dattn.data() + row);
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (int hh = 0; hh < L_.heads; ++hh) {
      const int off = hh * dh;
      for (int t = 0; t < T; ++t) {
        const std::size_t row = static_cast<std::size_t>(t) * d;
        const double* probs = c.probs.data() + (static_cast<std::size_t>(hh) * n +
                                                static_cast<std::size_t>(t)) * n;
        const double* go = dattn.data() + row + off;
        double dot = 0.0;
        for (int s = 0; s <= t; ++s) {
          const std::size_t srow = static_cast<std::size_t>(s) * d;
          const double* v = c.v.data() + srow + off;
          double g = 0.0;
          for (int i = 0; i < dh; ++i) {
            g += go[i] * v[i];
            dv[srow + off + i] += probs[s] * go[i];
          }
          dp[static_cast<std::size_t>(s)] = g;
          dot += probs[s] * g;
        }
        const double* q = c.q.data() + row + off;
        for (int s = 0; s <= t; ++s) {
          const std::size_t srow = static_cast<std::size_t>(s) * d;
          const double ds = probs[s] * (dp[static_cast<std::size_t>(s)] - dot) * scale;
          const double* k = c.k.data() + srow + off;
          for (int i = 0; i < dh; ++i) {
            dq[row + off + i] += ds * k[i];
            dk[srow + off + i] += ds * q[i];
          }
        }
      }
    }
    for (int t = 0; t < T; ++t) {
      const std::size_t row = static_cast<std::size_t>(t) * d;
      std::fill(da.begin(), da.end(), 0.0);
      const double* a = c.a.data() + row;
      matvec_backward(a, P + b.wq, dq.data() + row, d, d, G + b.wq, da.data());
      matvec_backward(a, P + b.wk, dk.data() + row, d, d, G + b.wk, da.data());
      matvec_backward(a, P + b.wv, dv.data() + row, d, d, G + b.wv, da.data());
      layer_norm_backward(da.data(), c.xhat1.data() + row,
                          c.rstd1[static_cast<std::size_t>(t)], P + b.ln1_g, d,
                          G + b.ln1_g, G + b.ln1_b, dh_cur.data() + row);
    }
  }

  for (int t = 0; t < T; ++t) {
    const std::size_t row = static_cast<std::size_t>(t) * d;
    double* te = G + L_.tok_emb +
                 static_cast<std::size_t>(inputs_[static_cast<std::size_t>(t)]) * d;
    double* pe = G + L_.pos_emb + row;
    for (int i = 0; i < d; ++i) {
      te[i] += dh_cur[row + i];
      pe[i] += dh_cur[row + i];
    }
  }
}

}  // namespace grlab::detail
