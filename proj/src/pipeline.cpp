#include "deltasub/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "deltasub/rng.hpp"

namespace deltasub {

void ApproximationConfig::validate() const {
  if (dist_weight <= 0.0f) throw ConfigInvalidError("dist_weight must be positive");
  if (y < 1) throw ConfigInvalidError("subspace dimension must be positive");
  if (kinds.size() != 1 && kinds.size() != 3)
    throw ConfigInvalidError("approximation runs with the three methods or a single one");
}

std::vector<PetKind> SubspaceArtifacts::kinds() const {
  std::vector<PetKind> out;
  for (const auto& [kind, pair] : projections) out.push_back(kind);
  if (fastfood.has_value()) out.push_back(PetKind::FullFineTune);
  return out;
}

void SubspaceArtifacts::freeze() {
  for (auto& [kind, pair] : projections) {
    if (pair.down.layer1.defined()) {
      pair.down.layer1.node()->requires_grad = false;
      pair.down.layer2.node()->requires_grad = false;
    }
    pair.up.weight.node()->requires_grad = false;
  }
  if (fastfood.has_value()) fastfood->g().node()->requires_grad = false;
}

uint64_t SubspaceArtifacts::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ull;
  };
  for (const auto& [kind, pair] : projections) {
    mix(static_cast<uint64_t>(kind));
    if (pair.down.layer1.defined()) {
      mix(tensor_hash(pair.down.layer1));
      mix(tensor_hash(pair.down.layer2));
    }
    mix(tensor_hash(pair.up.weight));
  }
  if (fastfood.has_value()) mix(tensor_hash(fastfood->g()));
  return h;
}

Tensor dist_loss(const Tensor& reconstructed, const Tensor& target) {
  if (reconstructed.rows() != target.rows() || reconstructed.cols() != target.cols())
    throw ShapeMismatchError("dist_loss: vectors must have equal length");
  Tensor diff = sub(reconstructed, target);
  return sum(mul(diff, diff));
}

namespace {

Tensor batch_task_loss(const BackboneWeights& w, const Task& task, PetKind kind,
                       const PetLayout& layout, const Tensor& theta_bar,
                       const std::vector<size_t>& indices) {
  Tensor loss;
  PetHooks hooks;
  BackboneWeights tuned;
  if (kind == PetKind::FullFineTune)
    tuned = weights_with_delta(w, theta_bar);
  else
    hooks = hooks_from_flat(theta_bar, layout, w.config);
  for (size_t idx : indices) {
    const auto& ex = task.train[idx];
    Tensor logits = kind == PetKind::FullFineTune ? label_logits(tuned, ex.tokens, PetHooks{})
                                                  : label_logits(w, ex.tokens, hooks);
    Tensor ce = cross_entropy(logits, {task.spec.label_tokens[ex.label_index]});
    loss = loss.defined() ? add(loss, ce) : ce;
  }
  return scale(loss, 1.0f / static_cast<float>(indices.size()));
}

std::vector<size_t> sample_indices(std::mt19937& rng, size_t pool, int count) {
  std::vector<size_t> out(count);
  for (auto& v : out) v = rng() % pool;
  return out;
}

}  // namespace

SubspaceArtifacts approximate_subspace(const BackboneWeights& w,
                                       const std::vector<ApproxInput>& inputs,
                                       const ApproximationConfig& cfg) {
  cfg.validate();
  if (inputs.empty()) throw MissingSolutionError("no training tasks provided");
  for (const auto& in : inputs)
    for (PetKind kind : cfg.kinds)
      if (!in.solutions.count(kind))
        throw MissingSolutionError("task " + in.task.spec.name + " lacks a " +
                                   kind_name(kind) + " solution");

  SubspaceArtifacts art;
  art.y = cfg.y;
  art.hyper = inputs[0].solutions.begin()->second.hyper;
  art.artifact_id = derive_seed(cfg.seed, "approx-artifacts");
  art.has_down = true;

  // Frozen copies of the stored solutions; stage 1 must leave them untouched.
  struct TaskState {
    const Task* task;
    std::map<PetKind, Tensor> theta;
    std::map<PetKind, const PetLayout*> layouts;
  };
  std::vector<TaskState> states;
  for (const auto& in : inputs) {
    TaskState st;
    st.task = &in.task;
    for (PetKind kind : cfg.kinds) {
      const auto& sol = in.solutions.at(kind);
      st.theta[kind] = Tensor::from_flat(
          1, static_cast<int>(sol.flat.size()),
          std::vector<float>(sol.flat.data().begin(), sol.flat.data().end()), false);
      st.layouts[kind] = &sol.layout;
    }
    states.push_back(std::move(st));
  }

  auto rng = make_rng(cfg.seed, "approximate");
  std::vector<Tensor> params;
  for (PetKind kind : cfg.kinds) {
    const size_t theta_len = states[0].theta.at(kind).size();
    ProjectionPair pair;
    pair.down = init_down_projection(theta_len, cfg.y, rng);
    pair.up = init_up_projection(theta_len, cfg.y, rng, cfg.init_sigma_up);
    pair.up.artifact_id = art.artifact_id;
    params.push_back(pair.down.layer1);
    params.push_back(pair.down.layer2);
    params.push_back(pair.up.weight);
    art.projections.emplace(kind, std::move(pair));
  }

  Adam opt(params, cfg.lr_proj);
  double window_dist = 0.0, window_task = 0.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto& st = states[rng() % states.size()];
    auto [alpha, beta] = sample_ratios(rng);
    auto batch = sample_indices(rng, st.task->train.size(), cfg.batch);

    // one intrinsic vector per method, interpolated into a single point
    std::map<PetKind, Tensor> intrinsics;
    for (PetKind kind : cfg.kinds)
      intrinsics[kind] = project_down(art.projections.at(kind).down, st.theta.at(kind));
    Tensor mix;
    if (cfg.kinds.size() == 3)
      mix = interpolate(intrinsics.at(PetKind::Adapter), intrinsics.at(PetKind::Prefix),
                        intrinsics.at(PetKind::Lora), alpha, beta);
    else
      mix = intrinsics.begin()->second;  // degenerate single-method runs

    opt.zero_grad();
    Tensor total;
    double dist_val = 0.0, task_val = 0.0;
    for (PetKind kind : cfg.kinds) {
      Tensor theta_bar = project_up(art.projections.at(kind).up, mix);
      Tensor d = scale(dist_loss(theta_bar, st.theta.at(kind)), cfg.dist_weight);
      dist_val += d.item();
      Tensor term = d;
      if (cfg.task_loss) {
        Tensor t = batch_task_loss(w, *st.task, kind, *st.layouts.at(kind), theta_bar, batch);
        task_val += t.item();
        term = add(term, t);
      }
      total = total.defined() ? add(total, term) : term;
    }
    if (!std::isfinite(total.item()))
      throw DivergedLossError("subspace approximation loss became non-finite");
    backward(total);
    opt.step();

    window_dist += dist_val;
    window_task += task_val;
    if (step % cfg.eval_every == 0) {
      art.log.push_back(LossRecord{step, window_dist / cfg.eval_every,
                                   window_task / cfg.eval_every});
      window_dist = window_task = 0.0;
    }
  }
  art.freeze();
  return art;
}

SubspaceArtifacts shared_intrinsic_approximate(const BackboneWeights& w,
                                               const std::vector<Task>& train_tasks,
                                               const PetHyper& hyper,
                                               const ApproximationConfig& cfg,
                                               bool include_finetune) {
  cfg.validate();
  if (train_tasks.empty()) throw MissingSolutionError("no training tasks provided");

  SubspaceArtifacts art;
  art.y = cfg.y;
  art.hyper = hyper;
  art.artifact_id = derive_seed(cfg.seed, "shared-artifacts");
  art.has_down = false;

  auto rng = make_rng(cfg.seed, "shared-intrinsic");
  std::map<PetKind, PetLayout> layouts;
  std::vector<Tensor> proj_params;
  for (PetKind kind : cfg.kinds) {
    layouts.emplace(kind, PetLayout::make(kind, hyper, w.config));
    ProjectionPair pair;
    pair.up = init_up_projection(layouts.at(kind).total(), cfg.y, rng, cfg.init_sigma_up);
    pair.up.artifact_id = art.artifact_id;
    proj_params.push_back(pair.up.weight);
    art.projections.emplace(kind, std::move(pair));
  }
  size_t n_kinds = cfg.kinds.size();
  if (include_finetune) {
    art.fastfood = FastfoodProjector::create(cfg.y, w.parameter_count(),
                                             derive_seed(cfg.seed, "fastfood"),
                                             cfg.fastfood_gain);
    art.fastfood->artifact_id = art.artifact_id;
    proj_params.push_back(art.fastfood->g());
    ++n_kinds;
  }

  std::vector<Tensor> intrinsics;
  for (size_t i = 0; i < train_tasks.size(); ++i)
    intrinsics.push_back(Tensor::randn(1, cfg.y, rng, 1.0f, true));

  Adam proj_opt(proj_params, cfg.lr_proj);
  Adam intr_opt(intrinsics, cfg.lr_shared_intrinsic);
  const float kind_weight = 1.0f / static_cast<float>(n_kinds);

  double window_task = 0.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    const size_t ti = rng() % train_tasks.size();
    const auto& task = train_tasks[ti];
    auto batch = sample_indices(rng, task.train.size(), cfg.batch);

    proj_opt.zero_grad();
    intr_opt.zero_grad();
    Tensor total;
    auto add_term = [&](PetKind kind, const PetLayout* layout) {
      Tensor theta_bar = kind == PetKind::FullFineTune
                             ? art.fastfood->delta(intrinsics[ti])
                             : project_up(art.projections.at(kind).up, intrinsics[ti]);
      Tensor t = batch_task_loss(w, task, kind, layout ? *layout : PetLayout{}, theta_bar, batch);
      total = total.defined() ? add(total, t) : t;
    };
    for (PetKind kind : cfg.kinds) add_term(kind, &layouts.at(kind));
    if (include_finetune) add_term(PetKind::FullFineTune, nullptr);
    total = scale(total, kind_weight);
    if (!std::isfinite(total.item()))
      throw DivergedLossError("shared-intrinsic loss became non-finite");
    backward(total);
    proj_opt.step();
    intr_opt.step();

    window_task += total.item();
    if (step % cfg.eval_every == 0) {
      art.log.push_back(LossRecord{step, 0.0, window_task / cfg.eval_every});
      window_task = 0.0;
    }
  }

  for (size_t ti = 0; ti < train_tasks.size(); ++ti) {
    IntrinsicVector iv;
    iv.values.assign(intrinsics[ti].data().begin(), intrinsics[ti].data().end());
    iv.artifact_id = art.artifact_id;
    art.shared_intrinsic.emplace(train_tasks[ti].spec.name, std::move(iv));
  }
  art.freeze();
  return art;
}

Tensor generate_theta(const SubspaceArtifacts& art, PetKind kind, const Tensor& intrinsic_row) {
  if (intrinsic_row.cols() != art.y)
    throw SubspaceMismatchError("intrinsic dimension does not match artifacts");
  if (kind == PetKind::FullFineTune) {
    if (!art.fastfood.has_value())
      throw MissingSolutionError("artifacts carry no fine-tuning generator");
    return art.fastfood->delta(intrinsic_row);
  }
  auto it = art.projections.find(kind);
  if (it == art.projections.end())
    throw MissingSolutionError(std::string("artifacts carry no ") + kind_name(kind) +
                               " projection");
  return project_up(it->second.up, intrinsic_row);
}

double evaluate_intrinsic(const BackboneWeights& w, const SubspaceArtifacts& art, PetKind kind,
                          const Tensor& intrinsic_row, const Task& task, Split split, int cap) {
  NoGradGuard guard;
  Tensor theta_bar = generate_theta(art, kind, intrinsic_row);
  if (kind == PetKind::FullFineTune)
    return evaluate(weights_with_delta(w, theta_bar), PetHooks{}, task, split, cap);
  PetLayout layout = PetLayout::make(kind, art.hyper, w.config);
  return evaluate(w, hooks_from_flat(theta_bar, layout, w.config), task, split, cap);
}

SubspaceOptResult subspace_optimize(const BackboneWeights& w, const Task& task, PetKind kind,
                                    const SubspaceArtifacts& art, const ApproximationConfig& cfg) {
  PetLayout layout = kind == PetKind::FullFineTune ? PetLayout{}
                                                   : PetLayout::make(kind, art.hyper, w.config);
  std::vector<float> lr_grid = cfg.opt_lr_grid;
  if (lr_grid.empty()) lr_grid.push_back(cfg.lr_intrinsic);

  SubspaceOptResult result;
  result.kind = kind;
  result.task_id = task.spec.name;

  for (float lr : lr_grid) {
    auto rng = make_rng(cfg.seed, std::string("subspace-opt-") + kind_name(kind) + "-" +
                                      task.spec.name);
    Tensor intrinsic = Tensor::randn(1, art.y, rng, cfg.opt_init_sigma, true);
    auto snapshot = [&] {
      IntrinsicVector iv;
      iv.values.assign(intrinsic.data().begin(), intrinsic.data().end());
      iv.artifact_id = art.artifact_id;
      result.checkpoints.push_back(std::move(iv));
      result.checkpoint_dev.push_back(
          evaluate_intrinsic(w, art, kind, intrinsic, task, Split::Dev));
    };
    snapshot();
    Adam opt({intrinsic}, lr);
    for (int step = 1; step <= cfg.opt_steps; ++step) {
      auto batch = sample_indices(rng, task.train.size(), cfg.opt_batch);
      opt.zero_grad();
      Tensor theta_bar = generate_theta(art, kind, intrinsic);
      Tensor loss = batch_task_loss(w, task, kind, layout, theta_bar, batch);
      if (!std::isfinite(loss.item()))
        throw DivergedLossError("subspace optimization loss became non-finite");
      backward(loss);
      opt.step();
      if (step % cfg.opt_eval_every == 0 || step == cfg.opt_steps) snapshot();
    }
  }

  size_t best = 0;
  for (size_t i = 1; i < result.checkpoint_dev.size(); ++i)
    if (result.checkpoint_dev[i] > result.checkpoint_dev[best]) best = i;
  result.best = result.checkpoints[best];
  result.e_dev = result.checkpoint_dev[best];
  Tensor best_row = Tensor::from_flat(1, art.y, result.best.values, false);
  result.e_sub = evaluate_intrinsic(w, art, kind, best_row, task, Split::Test);
  return result;
}

TransferResult transfer(const BackboneWeights& w, const Task& task,
                        const SubspaceOptResult& source, PetKind target,
                        const SubspaceArtifacts& art, TransferSelection selection) {
  if (source.checkpoints.empty()) throw MissingSolutionError("source has no checkpoints");
  for (const auto& ckpt : source.checkpoints)
    if (ckpt.artifact_id != art.artifact_id || ckpt.y() != art.y)
      throw SubspaceMismatchError(
          "source intrinsic vectors come from a different subspace artifact");

  TransferResult result;
  result.source = source.kind;
  result.target = target;
  result.task_id = task.spec.name;

  size_t pick = 0;
  if (selection == TransferSelection::SourceBest) {
    for (size_t i = 1; i < source.checkpoint_dev.size(); ++i)
      if (source.checkpoint_dev[i] > source.checkpoint_dev[pick]) pick = i;
  } else {
    double best_dev = -1.0;
    for (size_t i = 0; i < source.checkpoints.size(); ++i) {
      Tensor row = Tensor::from_flat(1, art.y, source.checkpoints[i].values, false);
      double dev = evaluate_intrinsic(w, art, target, row, task, Split::Dev);
      if (dev > best_dev) {
        best_dev = dev;
        pick = i;
      }
    }
  }
  Tensor row = Tensor::from_flat(1, art.y, source.checkpoints[pick].values, false);
  result.checkpoint_index = static_cast<int>(pick);
  result.e_transfer = evaluate_intrinsic(w, art, target, row, task, Split::Test);
  return result;
}

double relative_performance(double e_sub, double e_ori) {
  if (e_ori <= 0.0) throw ZeroBaselineError("original-space metric must be positive");
  return e_sub / e_ori;
}

}  // namespace deltasub
