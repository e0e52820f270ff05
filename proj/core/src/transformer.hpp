#pragma once

#include <span>
#include <vector>

#include "grlab/policy.hpp"

namespace grlab::detail {

// Offsets of every tensor inside the flat parameter vector. Matrices are
// row-major (in x out) and applied as y = x W.
struct TransformerLayout {
  struct Block {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  explicit TransformerLayout(const ArchDescriptor& arch);

  int vocab, positions, dim, layers, heads, ffn, head_dim;
  std::size_t tok_emb, pos_emb;
  std::vector<Block> blocks;
  std::size_t lnf_g, lnf_b, head;
  std::size_t total;
};

void init_transformer(const TransformerLayout& layout, std::span<double> values,
                      std::uint64_t seed);

// Causal decoder state for one sequence. Positions are computed one at a time
// so incremental sampling and full re-scoring run identical arithmetic.
class TransformerState {
 public:
  TransformerState(const TransformerLayout& layout,
                   std::span<const double> params, int capacity);

  // Runs the network on the next input token.
  void push(Token input);
  int size() const { return size_; }

  // Post-norm hidden row feeding the unembedding.
  std::span<const double> final_hidden(int pos) const;
  void logits(int pos, std::span<double> out) const;

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(final_hidden)
  // for all size() rows (row-major size() x dim).
  void backward(std::span<const double> d_final, std::span<double> grad) const;

  // Accumulates the head gradient and returns d_final for a set of dlogit rows.
  void head_backward(int pos, std::span<const double> dlogits,
                     std::span<double> d_final_row,
                     std::span<double> grad) const;

 private:
  struct LayerCache {
    std::vector<double> h_in, xhat1, rstd1, a, q, k, v, probs, attn, h_mid,
        xhat2, rstd2, m, u, z;
  };

  const TransformerLayout& L_;
  std::span<const double> p_;
  int capacity_;
  int size_ = 0;
  std::vector<Token> inputs_;
  std::vector<LayerCache> cache_;
  std::vector<double> h_last_, xhatf_, rstdf_, final_;
};

}  // namespace grlab::detail
