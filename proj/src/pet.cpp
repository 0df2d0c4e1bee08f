#include "deltasub/pet.hpp"

#include <cmath>

#include "deltasub/rng.hpp"

namespace deltasub {

const char* kind_name(PetKind k) {
  switch (k) {
    case PetKind::Adapter: return "adapter";
    case PetKind::Prefix: return "prefix";
    case PetKind::Lora: return "lora";
    default: return "finetune";
  }
}

PetKind kind_from_name(const std::string& name) {
  if (name == "adapter") return PetKind::Adapter;
  if (name == "prefix") return PetKind::Prefix;
  if (name == "lora") return PetKind::Lora;
  if (name == "finetune") return PetKind::FullFineTune;
  throw ConfigInvalidError("unknown tuning method: " + name);
}

PetLayout PetLayout::make(PetKind kind, const PetHyper& hyper, const ModelConfig& cfg) {
  PetLayout layout;
  layout.kind_ = kind;
  layout.hyper_ = hyper;
  size_t off = 0;
  auto push = [&](const std::string& name, int rows, int cols) {
    layout.entries_.push_back(LayoutEntry{name, rows, cols, off});
    off += static_cast<size_t>(rows) * cols;
  };
  switch (kind) {
    case PetKind::Adapter:
      for (int l = 0; l < cfg.n_layers; ++l)
        for (int slot = 0; slot < 2; ++slot) {
          const std::string base = "adapter." + std::to_string(l) + "." + std::to_string(slot);
          push(base + ".down", cfg.d, hyper.r_adapter);
          push(base + ".up", hyper.r_adapter, cfg.d);
        }
      break;
    case PetKind::Lora:
      for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string base = "lora." + std::to_string(l);
        push(base + ".q.a", cfg.d, hyper.r_lora);
        push(base + ".q.b", hyper.r_lora, cfg.d);
        push(base + ".v.a", cfg.d, hyper.r_lora);
        push(base + ".v.b", hyper.r_lora, cfg.d);
      }
      break;
    case PetKind::Prefix:
      // source embedding -> two-layer MLP emitting per-layer K and V blocks
      push("prefix.source", hyper.prefix_tokens, cfg.d);
      push("prefix.w1", cfg.d, hyper.prefix_hidden);
      push("prefix.w2", hyper.prefix_hidden, 2 * cfg.n_layers * cfg.d);
      break;
    case PetKind::FullFineTune: {
      auto base = BackboneWeights::init(cfg);
      auto tensors = base.all_tensors();
      for (size_t i = 0; i < tensors.size(); ++i)
        push("full." + std::to_string(i), tensors[i].rows(), tensors[i].cols());
      break;
    }
  }
  layout.total_ = off;
  return layout;
}

const LayoutEntry& PetLayout::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw ConfigInvalidError("no layout entry named " + name);
}

size_t pet_param_count(PetKind kind, const PetHyper& hyper, const ModelConfig& cfg) {
  return PetLayout::make(kind, hyper, cfg).total();
}

size_t lora_param_count_at(int d, int r_lora, int attention_modules) {
  return static_cast<size_t>(attention_modules) * 2 *
         (static_cast<size_t>(d) * r_lora + static_cast<size_t>(r_lora) * d);
}

void check_parity(const PetHyper& hyper, const ModelConfig& cfg) {
  const size_t a = pet_param_count(PetKind::Adapter, hyper, cfg);
  const size_t p = pet_param_count(PetKind::Prefix, hyper, cfg);
  const size_t l = pet_param_count(PetKind::Lora, hyper, cfg);
  if (a != p || a != l)
    throw ParityViolationError("parameter counts differ: adapter=" + std::to_string(a) +
                               " prefix=" + std::to_string(p) + " lora=" + std::to_string(l));
}

PetSolution init_pet(PetKind kind, const PetHyper& hyper, const ModelConfig& cfg,
                     const std::string& task_id, uint64_t seed, float sigma) {
  if (kind != PetKind::FullFineTune) check_parity(hyper, cfg);
  PetSolution sol;
  sol.kind = kind;
  sol.hyper = hyper;
  sol.task_id = task_id;
  sol.layout = PetLayout::make(kind, hyper, cfg);
  sol.flat = Tensor::zeros(1, static_cast<int>(sol.layout.total()), true);

  auto rng = make_rng(seed, std::string("init-") + kind_name(kind) + "-" + task_id);
  auto data = sol.flat.raw_data();
  for (const auto& e : sol.layout.entries()) {
    const bool zero_init =
        kind == PetKind::FullFineTune ||
        (kind == PetKind::Lora && e.name.ends_with(".b"));  // W_B = 0: identity at start
    if (zero_init) continue;
    for (size_t i = 0; i < e.extent(); ++i) data[e.offset + i] = normal_float(rng, sigma);
  }
  return sol;
}

PetHooks hooks_from_flat(const Tensor& flat, const PetLayout& layout, const ModelConfig& cfg) {
  if (flat.rows() != 1 || flat.size() != layout.total())
    throw ShapeMismatchError("flat vector length does not match layout");
  PetHooks hooks;
  auto view = [&](const LayoutEntry& e) { return slice_reshape(flat, e.offset, e.rows, e.cols); };

  switch (layout.kind()) {
    case PetKind::Adapter:
      for (int l = 0; l < cfg.n_layers; ++l)
        for (int slot = 0; slot < 2; ++slot) {
          const std::string base = "adapter." + std::to_string(l) + "." + std::to_string(slot);
          hooks.adapters.push_back(
              AdapterParams{view(layout.entry(base + ".down")), view(layout.entry(base + ".up"))});
        }
      break;
    case PetKind::Lora:
      hooks.lora_scale = layout.hyper().lora_scale;
      for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string base = "lora." + std::to_string(l);
        hooks.lora.push_back(LoraParams{
            view(layout.entry(base + ".q.a")), view(layout.entry(base + ".q.b")),
            view(layout.entry(base + ".v.a")), view(layout.entry(base + ".v.b"))});
      }
      break;
    case PetKind::Prefix: {
      const int m = layout.hyper().prefix_tokens;
      if (m == 0) break;  // no virtual tokens: hooks stay empty
      Tensor source = view(layout.entry("prefix.source"));
      Tensor w1 = view(layout.entry("prefix.w1"));
      Tensor w2 = view(layout.entry("prefix.w2"));
      Tensor all = matmul(deltasub::tanh(matmul(source, w1)), w2);  // m x (2*L*d)
      const int dh = cfg.d_head();
      for (int l = 0; l < cfg.n_layers; ++l) {
        LayerPrefix lp;
        const int base = l * 2 * cfg.d;
        for (int h = 0; h < cfg.n_heads; ++h) {
          lp.p_k.push_back(slice_cols(all, base + h * dh, base + (h + 1) * dh));
          lp.p_v.push_back(slice_cols(all, base + cfg.d + h * dh, base + cfg.d + (h + 1) * dh));
        }
        hooks.prefix.push_back(std::move(lp));
      }
      break;
    }
    case PetKind::FullFineTune:
      throw ConfigInvalidError("fine-tuning applies through weights_with_delta, not hooks");
  }
  return hooks;
}

BackboneWeights weights_with_delta(const BackboneWeights& base, const Tensor& delta_flat) {
  auto tensors = base.all_tensors();
  size_t total = 0;
  for (const auto& t : tensors) total += t.size();
  if (delta_flat.rows() != 1 || delta_flat.size() != total)
    throw ShapeMismatchError("delta length does not match backbone parameter count");

  BackboneWeights out;
  out.config = base.config;
  size_t off = 0;
  auto shifted = [&](const Tensor& t) {
    Tensor d = slice_reshape(delta_flat, off, t.rows(), t.cols());
    off += t.size();
    return add(t, d);
  };
  out.token_embedding = shifted(base.token_embedding);
  out.position_embedding = shifted(base.position_embedding);
  for (const auto& lw : base.layers) {
    LayerWeights nl;
    for (const auto& t : lw.w_q) nl.w_q.push_back(shifted(t));
    for (const auto& t : lw.w_k) nl.w_k.push_back(shifted(t));
    for (const auto& t : lw.w_v) nl.w_v.push_back(shifted(t));
    nl.w_o = shifted(lw.w_o);
    nl.w1 = shifted(lw.w1);
    nl.b1 = shifted(lw.b1);
    nl.w2 = shifted(lw.w2);
    nl.b2 = shifted(lw.b2);
    out.layers.push_back(std::move(nl));
  }
  return out;
}

PetTrainResult train_pet(const BackboneWeights& w, const Task& task, PetKind kind,
                         const PetHyper& hyper, const PetTrainConfig& tcfg) {
  const auto& cfg = w.config;
  PetSolution sol = init_pet(kind, hyper, cfg, task.spec.name, tcfg.seed, tcfg.init_sigma);
  auto batch_rng = make_rng(tcfg.seed, std::string("train-") + kind_name(kind) + "-" + task.spec.name);
  const auto& train = task.split(Split::Train);

  auto eval_with_flat = [&](const Tensor& flat, Split split) {
    if (kind == PetKind::FullFineTune) {
      NoGradGuard guard;
      return evaluate(weights_with_delta(w, flat), PetHooks{}, task, split);
    }
    return evaluate(w, hooks_from_flat(flat, sol.layout, cfg), task, split);
  };

  Adam opt({sol.flat}, tcfg.lr);
  std::vector<float> best(sol.flat.data().begin(), sol.flat.data().end());
  double best_dev = eval_with_flat(sol.flat, Split::Dev);
  PetTrainResult result;
  result.dev_curve.emplace_back(0, best_dev);

  for (int step = 1; step <= tcfg.steps; ++step) {
    opt.zero_grad();
    Tensor loss;
    PetHooks hooks;
    BackboneWeights tuned;
    if (kind == PetKind::FullFineTune)
      tuned = weights_with_delta(w, sol.flat);
    else
      hooks = hooks_from_flat(sol.flat, sol.layout, cfg);
    for (int b = 0; b < tcfg.batch; ++b) {
      const auto& ex = train[batch_rng() % train.size()];
      Tensor logits = kind == PetKind::FullFineTune
                          ? label_logits(tuned, ex.tokens, PetHooks{})
                          : label_logits(w, ex.tokens, hooks);
      Tensor ce = cross_entropy(logits, {task.spec.label_tokens[ex.label_index]});
      loss = loss.defined() ? add(loss, ce) : ce;
    }
    loss = scale(loss, 1.0f / static_cast<float>(tcfg.batch));
    if (!std::isfinite(loss.item()))
      throw DivergedLossError("training loss became non-finite for " +
                              std::string(kind_name(kind)) + " on " + task.spec.name);
    backward(loss);
    opt.step();

    if (step % tcfg.eval_every == 0 || step == tcfg.steps) {
      double dev = eval_with_flat(sol.flat, Split::Dev);
      result.dev_curve.emplace_back(step, dev);
      if (dev > best_dev) {
        best_dev = dev;
        best.assign(sol.flat.data().begin(), sol.flat.data().end());
      }
    }
  }

  auto data = sol.flat.raw_data();
  std::copy(best.begin(), best.end(), data.begin());
  result.e_dev = best_dev;
  result.e_test = eval_with_flat(sol.flat, Split::Test);
  result.solution = std::move(sol);
  return result;
}

}  // namespace deltasub
