#include "grlab/chunked_loss.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace grlab {

namespace {

thread_local ScratchTracker* g_tracker = nullptr;

// Scratch block whose lifetime is reported to the active tracker.
class ScratchBlock {
 public:
  explicit ScratchBlock(std::size_t n) : data_(n, 0.0) {
    if (g_tracker != nullptr) {
      g_tracker->live += n;
      g_tracker->allocations += 1;
      g_tracker->peak = std::max(g_tracker->peak, g_tracker->live);
    }
  }
  ~ScratchBlock() {
    if (g_tracker != nullptr) {
      g_tracker->live -= data_.size();
    }
  }
  ScratchBlock(const ScratchBlock&) = delete;
  ScratchBlock& operator=(const ScratchBlock&) = delete;

  double* row(std::size_t r, std::size_t width) { return data_.data() + r * width; }

 private:
  std::vector<double> data_;
};

std::size_t count_active(const HeadInputs& in) {
  std::size_t n = 0;
  for (std::size_t t = 0; t < in.num_rows; ++t) {
    n += in.ignored(t) ? 0 : 1;
  }
  return n;
}

void row_logits(const HeadInputs& in, std::size_t t, double* out) {
  const std::size_t d = in.hidden_dim;
  const std::size_t V = in.vocab_size;
  std::fill(out, out + V, 0.0);
  const double* h = in.hidden.data() + t * d;
  for (std::size_t i = 0; i < d; ++i) {
    const double hi = h[i];
    const double* w = in.head_weights.data() + i * V;
    for (std::size_t v = 0; v < V; ++v) {
      out[v] += hi * w[v];
    }
  }
}

// Turns a logit row into (softmax - onehot) * scale in place; returns the
// token's negative log-likelihood.
double row_nll_grad(double* logits, std::size_t V, std::int32_t target,
                    double scale) {
  double mx = logits[0];
  for (std::size_t v = 1; v < V; ++v) {
    mx = std::max(mx, logits[v]);
  }
  double sum = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    sum += std::exp(logits[v] - mx);
  }
  const double lse = mx + std::log(sum);
  const double nll = lse - logits[static_cast<std::size_t>(target)];
  for (std::size_t v = 0; v < V; ++v) {
    logits[v] = std::exp(logits[v] - lse) * scale;
  }
  logits[static_cast<std::size_t>(target)] -= scale;
  return nll;
}

void row_backward(const HeadInputs& in, std::size_t t, const double* dlogits,
                  std::vector<double>& grad_hidden,
                  std::vector<double>& grad_head) {
  const std::size_t d = in.hidden_dim;
  const std::size_t V = in.vocab_size;
  const double* h = in.hidden.data() + t * d;
  double* gh = grad_hidden.data() + t * d;
  for (std::size_t i = 0; i < d; ++i) {
    const double* w = in.head_weights.data() + i * V;
    double acc = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      acc += dlogits[v] * w[v];
    }
    gh[i] = acc;
    double* gw = grad_head.data() + i * V;
    const double hi = h[i];
    for (std::size_t v = 0; v < V; ++v) {
      gw[v] += hi * dlogits[v];
    }
  }
}

HeadLossResult empty_result(const HeadInputs& in) {
  HeadLossResult r;
  r.grad_hidden.assign(in.num_rows * in.hidden_dim, 0.0);
  r.grad_head.assign(in.hidden_dim * in.vocab_size, 0.0);
  return r;
}

}  // namespace

void HeadInputs::validate() const {
  if (num_rows == 0 || hidden_dim == 0 || vocab_size == 0) {
    throw std::invalid_argument("HeadInputs: dimensions must be positive");
  }
  if (hidden.size() != num_rows * hidden_dim) {
    throw std::invalid_argument("HeadInputs: hidden is not T x d");
  }
  if (head_weights.size() != hidden_dim * vocab_size) {
    throw std::invalid_argument("HeadInputs: head_weights is not d x V");
  }
  if (targets.size() != num_rows) {
    throw std::invalid_argument("HeadInputs: targets length != T");
  }
  if (!ignore_mask.empty() && ignore_mask.size() != num_rows) {
    throw std::invalid_argument("HeadInputs: ignore_mask length != T");
  }
  for (std::size_t t = 0; t < num_rows; ++t) {
    if (!ignored(t) && (targets[t] < 0 ||
                        static_cast<std::size_t>(targets[t]) >= vocab_size)) {
      throw std::invalid_argument("HeadInputs: target out of range at row " +
                                  std::to_string(t));
    }
  }
}

ScratchScope::ScratchScope(ScratchTracker& tracker) : previous_(g_tracker) {
  g_tracker = &tracker;
}

ScratchScope::~ScratchScope() { g_tracker = previous_; }

HeadLossResult monolithic_nll(const HeadInputs& in) {
  in.validate();
  HeadLossResult r = empty_result(in);
  r.num_active = count_active(in);
  if (r.num_active == 0) {
    r.degenerate = true;
    return r;
  }
  const std::size_t T = in.num_rows;
  const std::size_t V = in.vocab_size;
  const double scale = 1.0 / static_cast<double>(r.num_active);

  ScratchBlock logits(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    row_logits(in, t, logits.row(t, V));
  }
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (in.ignored(t)) {
      continue;
    }
    total += row_nll_grad(logits.row(t, V), V, in.targets[t], scale);
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (in.ignored(t)) {
      continue;
    }
    row_backward(in, t, logits.row(t, V), r.grad_hidden, r.grad_head);
  }
  r.loss = total * scale;
  return r;
}

HeadLossResult chunked_nll(const HeadInputs& in, const ChunkPlan& plan) {
  in.validate();
  if (plan.chunk_size < 1 || plan.chunk_size > in.num_rows) {
    throw std::invalid_argument("chunked_nll: chunk size must be in [1, T]");
  }
  const std::size_t T = in.num_rows;
  const std::size_t V = in.vocab_size;
  const std::size_t C = plan.chunk_size;
  const std::size_t num_chunks = plan.num_chunks(T);

  std::vector<std::size_t> order = plan.order;
  const bool ascending = order.empty();
  if (ascending) {
    order.resize(num_chunks);
    for (std::size_t c = 0; c < num_chunks; ++c) {
      order[c] = c;
    }
  } else {
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t c = 0; c < num_chunks; ++c) {
      if (sorted.size() != num_chunks || sorted[c] != c) {
        throw std::invalid_argument(
            "chunked_nll: order must be a permutation of chunk indices");
      }
    }
  }

  HeadLossResult r = empty_result(in);
  r.num_active = count_active(in);
  if (r.num_active == 0) {
    r.degenerate = true;
    return r;
  }
  const double scale = 1.0 / static_cast<double>(r.num_active);

  double total = 0.0;
  std::vector<double> partial_head;
  for (std::size_t c : order) {
    const std::size_t begin = c * C;
    const std::size_t end = std::min(T, begin + C);
    ScratchBlock block(C * V);
    double chunk_total = 0.0;
    for (std::size_t t = begin; t < end; ++t) {
      if (in.ignored(t)) {
        continue;
      }
      double* row = block.row(t - begin, V);
      row_logits(in, t, row);
      const double nll = row_nll_grad(row, V, in.targets[t], scale);
      if (ascending) {
        total += nll;
      } else {
        chunk_total += nll;
      }
    }
    if (ascending) {
      for (std::size_t t = begin; t < end; ++t) {
        if (!in.ignored(t)) {
          row_backward(in, t, block.row(t - begin, V), r.grad_hidden,
                       r.grad_head);
        }
      }
    } else {
      partial_head.assign(r.grad_head.size(), 0.0);
      for (std::size_t t = begin; t < end; ++t) {
        if (!in.ignored(t)) {
          row_backward(in, t, block.row(t - begin, V), r.grad_hidden,
                       partial_head);
        }
      }
      for (std::size_t i = 0; i < partial_head.size(); ++i) {
        r.grad_head[i] += partial_head[i];
      }
      total += chunk_total;
    }
  }
  r.loss = total * scale;
  return r;
}

MemoryReport memory_report(std::size_t T, std::size_t d, std::size_t V,
                           std::size_t C) {
  if (T == 0 || d == 0 || V == 0 || C == 0) {
    throw std::invalid_argument("memory_report: dimensions must be positive");
  }
  if (C > T) {
    throw std::invalid_argument("memory_report: chunk size exceeds T");
  }
  auto sorted = [](std::vector<MemoryTerm> terms) {
    std::stable_sort(terms.begin(), terms.end(),
                     [](const MemoryTerm& a, const MemoryTerm& b) {
                       return a.elements > b.elements;
                     });
    return terms;
  };
  MemoryReport rep;
  rep.monolithic_terms = sorted({{"logits T*V", T * V},
                                 {"grad_hidden T*d", T * d},
                                 {"grad_head d*V", d * V}});
  rep.chunked_terms = sorted({{"logit block C*V", C * V},
                              {"grad_hidden T*d", T * d},
                              {"grad_head d*V", d * V}});
  for (const auto& t : rep.monolithic_terms) {
    rep.monolithic_peak += t.elements;
  }
  for (const auto& t : rep.chunked_terms) {
    rep.chunked_peak += t.elements;
  }
  return rep;
}

std::string MemoryReport::to_string() const {
  std::ostringstream os;
  os << "monolithic peak elements = T*V + T*d + d*V = " << monolithic_peak
     << "\n";
  for (const auto& t : monolithic_terms) {
    os << "  " << t.name << " = " << t.elements << "\n";
  }
  os << "chunked peak elements = C*V + T*d + d*V = " << chunked_peak << "\n";
  for (const auto& t : chunked_terms) {
    os << "  " << t.name << " = " << t.elements << "\n";
  }
  return os.str();
}

}  // namespace grlab
