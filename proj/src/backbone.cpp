#include "deltasub/backbone.hpp"

#include <cmath>
#include <numeric>

#include "deltasub/rng.hpp"

namespace deltasub {

void ModelConfig::validate() const {
  if (n_layers < 1 || d < 1 || n_heads < 1 || vocab < 2 || max_len < 1)
    throw ConfigInvalidError("model dimensions must be positive");
  if (d % n_heads != 0) throw ConfigInvalidError("d must be divisible by n_heads");
  if (d_m <= d) throw ConfigInvalidError("d_m must exceed d");
}

BackboneWeights BackboneWeights::init(const ModelConfig& cfg, bool requires_grad) {
  cfg.validate();
  auto rng = make_rng(cfg.seed, "backbone-init");
  const float sigma = 0.08f;
  BackboneWeights w;
  w.config = cfg;
  w.token_embedding = Tensor::randn(cfg.vocab, cfg.d, rng, sigma, requires_grad);
  w.position_embedding = Tensor::randn(cfg.max_len, cfg.d, rng, sigma, requires_grad);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    for (int h = 0; h < cfg.n_heads; ++h) {
      lw.w_q.push_back(Tensor::randn(cfg.d, cfg.d_head(), rng, sigma, requires_grad));
      lw.w_k.push_back(Tensor::randn(cfg.d, cfg.d_head(), rng, sigma, requires_grad));
      lw.w_v.push_back(Tensor::randn(cfg.d, cfg.d_head(), rng, sigma, requires_grad));
    }
    lw.w_o = Tensor::randn(cfg.d, cfg.d, rng, sigma, requires_grad);
    lw.w1 = Tensor::randn(cfg.d, cfg.d_m, rng, sigma, requires_grad);
    lw.b1 = Tensor::zeros(1, cfg.d_m, requires_grad);
    lw.w2 = Tensor::randn(cfg.d_m, cfg.d, rng, sigma, requires_grad);
    lw.b2 = Tensor::zeros(1, cfg.d, requires_grad);
    w.layers.push_back(std::move(lw));
  }
  return w;
}

std::vector<Tensor> BackboneWeights::all_tensors() const {
  std::vector<Tensor> out{token_embedding, position_embedding};
  for (const auto& lw : layers) {
    for (const auto& t : lw.w_q) out.push_back(t);
    for (const auto& t : lw.w_k) out.push_back(t);
    for (const auto& t : lw.w_v) out.push_back(t);
    out.push_back(lw.w_o);
    out.push_back(lw.w1);
    out.push_back(lw.b1);
    out.push_back(lw.w2);
    out.push_back(lw.b2);
  }
  return out;
}

size_t BackboneWeights::parameter_count() const {
  size_t n = 0;
  for (const auto& t : all_tensors()) n += t.size();
  return n;
}

uint64_t BackboneWeights::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : all_tensors()) {
    uint64_t th = tensor_hash(t);
    h ^= th;
    h *= 0x100000001b3ull;
  }
  return h;
}

void BackboneWeights::freeze() {
  for (auto& t : all_tensors()) t.node()->requires_grad = false;
}

BackboneWeights BackboneWeights::clone(bool requires_grad) const {
  BackboneWeights copy;
  copy.config = config;
  auto dup = [requires_grad](const Tensor& t) {
    return Tensor::from_flat(t.rows(), t.cols(),
                             std::vector<float>(t.data().begin(), t.data().end()), requires_grad);
  };
  copy.token_embedding = dup(token_embedding);
  copy.position_embedding = dup(position_embedding);
  for (const auto& lw : layers) {
    LayerWeights c;
    for (const auto& t : lw.w_q) c.w_q.push_back(dup(t));
    for (const auto& t : lw.w_k) c.w_k.push_back(dup(t));
    for (const auto& t : lw.w_v) c.w_v.push_back(dup(t));
    c.w_o = dup(lw.w_o);
    c.w1 = dup(lw.w1);
    c.b1 = dup(lw.b1);
    c.w2 = dup(lw.w2);
    c.b2 = dup(lw.b2);
    copy.layers.push_back(std::move(c));
  }
  return copy;
}

Tensor mha_forward(const BackboneWeights& w, const Tensor& x, int layer,
                   const LayerPrefix* prefix, const LoraParams* lora, float lora_scale) {
  const auto& cfg = w.config;
  if (x.cols() != cfg.d) throw ShapeMismatchError("mha_forward: input width must equal d");
  const auto& lw = w.layers[layer];
  const int dh = cfg.d_head();
  if (prefix) {
    if (static_cast<int>(prefix->p_k.size()) != cfg.n_heads ||
        static_cast<int>(prefix->p_v.size()) != cfg.n_heads)
      throw PrefixShapeMismatchError("prefix must provide P_K and P_V for every head");
    for (int h = 0; h < cfg.n_heads; ++h) {
      if (prefix->p_k[h].cols() != dh || prefix->p_v[h].cols() != dh ||
          prefix->p_k[h].rows() != prefix->p_v[h].rows())
        throw PrefixShapeMismatchError("per-head prefix blocks must be m x d_head");
    }
  }

  std::vector<Tensor> heads;
  heads.reserve(cfg.n_heads);
  for (int h = 0; h < cfg.n_heads; ++h) {
    Tensor q = matmul(x, lw.w_q[h]);
    Tensor v = matmul(x, lw.w_v[h]);
    if (lora) {
      Tensor dq = matmul(matmul(x, lora->a_q), slice_cols(lora->b_q, h * dh, (h + 1) * dh));
      q = add(q, scale(dq, lora_scale));
      Tensor dv = matmul(matmul(x, lora->a_v), slice_cols(lora->b_v, h * dh, (h + 1) * dh));
      v = add(v, scale(dv, lora_scale));
    }
    Tensor k = matmul(x, lw.w_k[h]);
    if (prefix && prefix->p_k[h].rows() > 0) {
      k = concat_rows(prefix->p_k[h], k);
      v = concat_rows(prefix->p_v[h], v);
    }
    Tensor scores = scale(matmul(q, transpose(k)), 1.0f / std::sqrt(static_cast<float>(dh)));
    heads.push_back(matmul(softmax_rows(scores), v));
  }
  return matmul(concat_cols(heads), lw.w_o);
}

Tensor ffn_forward(const BackboneWeights& w, const Tensor& x, int layer) {
  const auto& lw = w.layers[layer];
  if (x.cols() != w.config.d) throw ShapeMismatchError("ffn_forward: input width must equal d");
  Tensor inner = relu(add(matmul(x, lw.w1), lw.b1));
  return add(matmul(inner, lw.w2), lw.b2);
}

namespace {

Tensor apply_adapter(const Tensor& x, const AdapterParams& a) {
  return add(x, matmul(silu(matmul(x, a.w_down)), a.w_up));
}

}  // namespace

Tensor model_forward(const BackboneWeights& w, const std::vector<int>& tokens,
                     const PetHooks& hooks) {
  const auto& cfg = w.config;
  const int n = static_cast<int>(tokens.size());
  if (n == 0) throw ShapeMismatchError("model_forward: empty token sequence");
  if (n > cfg.max_len)
    throw SequenceTooLongError("sequence length " + std::to_string(n) + " exceeds max_len " +
                               std::to_string(cfg.max_len));
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab)
      throw TokenOutOfRangeError("token " + std::to_string(t) + " outside vocab");

  Tensor x = add(gather_rows(w.token_embedding, tokens), slice_rows(w.position_embedding, 0, n));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerPrefix* prefix =
        hooks.prefix.empty() ? nullptr : &hooks.prefix[static_cast<size_t>(l)];
    const LoraParams* lora = hooks.lora.empty() ? nullptr : &hooks.lora[static_cast<size_t>(l)];
    x = add(x, mha_forward(w, x, l, prefix, lora, hooks.lora_scale));
    if (!hooks.adapters.empty()) x = apply_adapter(x, hooks.adapters[static_cast<size_t>(2 * l)]);
    x = add(x, ffn_forward(w, x, l));
    if (!hooks.adapters.empty())
      x = apply_adapter(x, hooks.adapters[static_cast<size_t>(2 * l + 1)]);
  }
  return matmul(x, transpose(w.token_embedding));
}

Tensor label_logits(const BackboneWeights& w, const std::vector<int>& tokens,
                    const PetHooks& hooks) {
  Tensor logits = model_forward(w, tokens, hooks);
  return slice_rows(logits, logits.rows() - 1, logits.rows());
}

void pretrain_backbone(BackboneWeights& w, int steps, float lr, int batch, uint64_t seed) {
  const auto& cfg = w.config;
  for (auto& t : w.all_tensors()) t.node()->requires_grad = true;

  // Generic synthetic curriculum mixing three prediction objectives, so the
  // frozen weights carry next-token, position-addressing and token-matching
  // circuitry for the PETs to reuse:
  //   (a) bigram LM: predict the successor of the final token,
  //   (b) position copy: first token indexes a position, predict its content,
  //   (c) occurrence probe: predict the token that appears twice.
  auto grammar_rng = make_rng(seed, "pretrain-grammar");
  const int fanout = 4;
  std::vector<std::vector<int>> successors(cfg.vocab);
  for (int t = 0; t < cfg.vocab; ++t) {
    for (int j = 0; j < fanout; ++j)
      successors[t].push_back(static_cast<int>(grammar_rng() % cfg.vocab));
  }
  auto rng = make_rng(seed, "pretrain-sample");
  auto random_len = [&] { return 4 + static_cast<int>(rng() % (cfg.max_len - 4)); };

  auto sample_pair = [&](int objective) {
    std::vector<int> seq;
    int target = 0;
    switch (objective) {
      case 0: {  // bigram chain
        const int len = random_len();
        int cur = static_cast<int>(rng() % cfg.vocab);
        seq.push_back(cur);
        for (int i = 1; i < len; ++i) {
          cur = successors[cur][rng() % fanout];
          seq.push_back(cur);
        }
        target = successors[cur][rng() % fanout];
        break;
      }
      case 1: {  // position copy
        const int len = random_len();
        for (int i = 0; i < len; ++i) seq.push_back(static_cast<int>(rng() % cfg.vocab));
        const int pos = 1 + static_cast<int>(rng() % (len - 1));
        seq[0] = pos % cfg.vocab;  // position cue
        target = seq[pos];
        break;
      }
      default: {  // the token occurring twice
        const int len = random_len();
        for (int i = 0; i < len; ++i) seq.push_back(static_cast<int>(rng() % cfg.vocab));
        target = static_cast<int>(rng() % cfg.vocab);
        const int p1 = static_cast<int>(rng() % len);
        int p2 = static_cast<int>(rng() % len);
        if (p2 == p1) p2 = (p1 + 1) % len;
        seq[p1] = target;
        seq[p2] = target;
        break;
      }
    }
    return std::make_pair(seq, target);
  };

  Adam opt(w.all_tensors(), lr);
  PetHooks no_hooks;
  for (int step = 0; step < steps; ++step) {
    opt.zero_grad();
    Tensor loss;
    for (int b = 0; b < batch; ++b) {
      auto [seq, target] = sample_pair(static_cast<int>(rng() % 3));
      Tensor ce = cross_entropy(label_logits(w, seq, no_hooks), {target});
      loss = loss.defined() ? add(loss, ce) : ce;
    }
    loss = scale(loss, 1.0f / static_cast<float>(batch));
    if (!std::isfinite(loss.item())) throw DivergedLossError("pretraining loss became non-finite");
    backward(loss);
    opt.step();
  }
  w.freeze();
}

}  // namespace deltasub
