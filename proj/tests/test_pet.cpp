#include <doctest.h>

#include <cmath>
#include <random>

#include "deltasub/pet.hpp"
#include "oracles.hpp"

using namespace deltasub;

namespace {

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.seed = 11;
  return cfg;
}

oracles::Mat to_mat(const Tensor& t) {
  oracles::Mat m(t.rows(), std::vector<double>(t.cols()));
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

Tensor random_tensor(int rows, int cols, uint32_t seed, float stddev, bool requires_grad = false) {
  std::mt19937 rng(seed);
  return Tensor::randn(rows, cols, rng, stddev, requires_grad);
}

}  // namespace

TEST_CASE("desk hyper satisfies exact parameter parity") {
  auto cfg = desk_config();
  PetHyper hyper;
  const size_t a = pet_param_count(PetKind::Adapter, hyper, cfg);
  const size_t p = pet_param_count(PetKind::Prefix, hyper, cfg);
  const size_t l = pet_param_count(PetKind::Lora, hyper, cfg);
  CHECK(a == p);
  CHECK(a == l);
  CHECK(a == 1536);
  CHECK_NOTHROW(check_parity(hyper, cfg));

  PetHyper bad = hyper;
  bad.r_adapter = 5;
  CHECK_THROWS_AS(check_parity(bad, cfg), ParityViolationError);
  CHECK_THROWS_AS(init_pet(PetKind::Adapter, bad, cfg, "t", 1), ParityViolationError);
}

TEST_CASE("full-scale LoRA count reproduces 1105920") {
  CHECK(lora_param_count_at(768, 10, 36) == 1105920u);
}

TEST_CASE("layouts tile the flat vector exactly and views round-trip") {
  auto cfg = desk_config();
  PetHyper hyper;
  for (auto kind : {PetKind::Adapter, PetKind::Prefix, PetKind::Lora}) {
    auto layout = PetLayout::make(kind, hyper, cfg);
    size_t expect_off = 0;
    for (const auto& e : layout.entries()) {
      CHECK(e.offset == expect_off);
      expect_off += e.extent();
    }
    CHECK(expect_off == layout.total());

    auto sol = init_pet(kind, hyper, cfg, "roundtrip", 5);
    for (const auto& e : layout.entries()) {
      auto view = slice_reshape(sol.flat, e.offset, e.rows, e.cols);
      for (size_t i = 0; i < e.extent(); ++i)
        CHECK(view.data()[i] == sol.flat.data()[e.offset + i]);
    }
  }
}

TEST_CASE("same seed gives bit-identical init; LoRA init is output neutral") {
  auto cfg = desk_config();
  PetHyper hyper;
  auto a = init_pet(PetKind::Prefix, hyper, cfg, "det", 9);
  auto b = init_pet(PetKind::Prefix, hyper, cfg, "det", 9);
  CHECK(a.content_hash() == b.content_hash());

  auto w = BackboneWeights::init(cfg);
  auto lora = init_pet(PetKind::Lora, hyper, cfg, "neutral", 9);
  auto hooks = hooks_from_flat(lora.flat, lora.layout, cfg);
  std::vector<int> tokens{3, 9, 4, 17};
  auto base = model_forward(w, tokens, PetHooks{});
  auto hooked = model_forward(w, tokens, hooks);
  for (size_t i = 0; i < base.size(); ++i) CHECK(base.data()[i] == hooked.data()[i]);
}

TEST_CASE("adapter hand case and low-rank residual map") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d = 2;
  cfg.n_heads = 1;
  cfg.d_m = 4;
  cfg.vocab = 4;
  cfg.max_len = 4;

  // d=2, r_A=1: delta = silu(x . wdown) * wup
  AdapterParams ad;
  ad.w_down = Tensor::from_rows({{0.6f}, {-0.4f}});
  ad.w_up = Tensor::from_rows({{1.5f, -2.0f}});
  auto x = Tensor::from_rows({{0.8f, 0.5f}});
  auto out = add(x, matmul(silu(matmul(x, ad.w_down)), ad.w_up));
  const double z = 0.8 * 0.6 + 0.5 * (-0.4);
  const double s = z / (1.0 + std::exp(-z));
  CHECK(std::fabs(out.at(0, 0) - (0.8 + s * 1.5)) < 1e-6);
  CHECK(std::fabs(out.at(0, 1) - (0.5 - s * 2.0)) < 1e-6);

  // Residual delta has rank <= r_A as a map, checked via elimination rank.
  auto big_cfg = desk_config();
  const int r_a = 3;
  auto w_down = random_tensor(big_cfg.d, r_a, 31, 0.5f);
  auto w_up = random_tensor(r_a, big_cfg.d, 32, 0.5f);
  auto inputs = random_tensor(24, big_cfg.d, 33, 1.0f);
  auto delta = matmul(silu(matmul(inputs, w_down)), w_up);
  CHECK(oracles::matrix_rank(to_mat(delta), 1e-3) <= r_a);
}

TEST_CASE("lora hook equals explicit materialized product") {
  auto cfg = desk_config();
  auto w = BackboneWeights::init(cfg);
  PetHyper hyper;
  hyper.lora_scale = 1.0f;
  auto sol = init_pet(PetKind::Lora, hyper, cfg, "mat", 21);
  // give W_B real values so the delta is active
  auto rng = std::mt19937(99);
  auto data = sol.flat.raw_data();
  for (const auto& e : sol.layout.entries())
    if (e.name.ends_with(".b")) {
      std::normal_distribution<float> dist(0.0f, 0.1f);
      for (size_t i = 0; i < e.extent(); ++i) data[e.offset + i] = dist(rng);
    }
  auto hooks = hooks_from_flat(sol.flat, sol.layout, cfg);
  auto x = random_tensor(3, cfg.d, 55, 0.7f);
  auto hooked = mha_forward(w, x, 0, nullptr, &hooks.lora[0], hyper.lora_scale);

  // oracle: per head, Q and V projections use W + s*W_A W_B column slice
  const int dh = cfg.d_head();
  auto xm = to_mat(x);
  auto aq = to_mat(hooks.lora[0].a_q), bq = to_mat(hooks.lora[0].b_q);
  auto av = to_mat(hooks.lora[0].a_v), bv = to_mat(hooks.lora[0].b_v);
  oracles::Mat concat(xm.size());
  for (int h = 0; h < cfg.n_heads; ++h) {
    auto wq = to_mat(w.layers[0].w_q[h]);
    auto wv = to_mat(w.layers[0].w_v[h]);
    auto dq = oracles::matmul(aq, bq);
    auto dv = oracles::matmul(av, bv);
    for (int i = 0; i < cfg.d; ++i)
      for (int j = 0; j < dh; ++j) {
        wq[i][j] += hyper.lora_scale * dq[i][h * dh + j];
        wv[i][j] += hyper.lora_scale * dv[i][h * dh + j];
      }
    auto q = oracles::matmul(xm, wq);
    auto k = oracles::matmul(xm, to_mat(w.layers[0].w_k[h]));
    auto v = oracles::matmul(xm, wv);
    auto head = oracles::attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(dh)));
    for (size_t i = 0; i < xm.size(); ++i)
      concat[i].insert(concat[i].end(), head[i].begin(), head[i].end());
  }
  auto expect = oracles::matmul(concat, to_mat(w.layers[0].w_o));
  for (int i = 0; i < hooked.rows(); ++i)
    for (int j = 0; j < hooked.cols(); ++j) CHECK(std::fabs(hooked.at(i, j) - expect[i][j]) < 1e-5);
}

TEST_CASE("doubling lora scale doubles the first-order logit delta") {
  auto cfg = desk_config();
  auto w = BackboneWeights::init(cfg);
  PetHyper hyper;
  std::vector<int> tokens{3, 9, 4};
  auto base = model_forward(w, tokens, PetHooks{});

  auto delta_for = [&](float s) {
    PetHyper h2 = hyper;
    h2.lora_scale = s;
    auto sol = init_pet(PetKind::Lora, h2, cfg, "dir", 77);
    auto data = sol.flat.raw_data();
    std::mt19937 rng(123);
    std::normal_distribution<float> dist(0.0f, 1e-3f);  // W_B -> 0 limit
    for (const auto& e : sol.layout.entries())
      if (e.name.ends_with(".b"))
        for (size_t i = 0; i < e.extent(); ++i) data[e.offset + i] = dist(rng);
    auto hooks = hooks_from_flat(sol.flat, sol.layout, cfg);
    auto out = model_forward(w, tokens, hooks);
    std::vector<double> d(out.size());
    for (size_t i = 0; i < out.size(); ++i) d[i] = out.data()[i] - base.data()[i];
    return d;
  };

  auto d1 = delta_for(1.0f);
  auto d2 = delta_for(2.0f);
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < d1.size(); ++i) {
    num += d2[i] * d1[i];
    den += d1[i] * d1[i];
  }
  CHECK(num / den == doctest::Approx(2.0).epsilon(1e-2));
}

TEST_CASE("prefix hook matches explicit MLP oracle; m=0 is inert") {
  auto cfg = desk_config();
  PetHyper hyper;
  auto sol = init_pet(PetKind::Prefix, hyper, cfg, "mlp", 41);
  auto hooks = hooks_from_flat(sol.flat, sol.layout, cfg);
  REQUIRE(static_cast<int>(hooks.prefix.size()) == cfg.n_layers);

  const auto& layout = sol.layout;
  auto view = [&](const char* n) {
    const auto& e = layout.entry(n);
    return to_mat(slice_reshape(sol.flat, e.offset, e.rows, e.cols));
  };
  auto all = oracles::matmul(oracles::tanh_mat(oracles::matmul(view("prefix.source"), view("prefix.w1"))),
                             view("prefix.w2"));
  const int dh = cfg.d_head();
  for (int l = 0; l < cfg.n_layers; ++l)
    for (int h = 0; h < cfg.n_heads; ++h)
      for (int i = 0; i < hyper.prefix_tokens; ++i)
        for (int j = 0; j < dh; ++j) {
          CHECK(std::fabs(hooks.prefix[l].p_k[h].at(i, j) - all[i][l * 2 * cfg.d + h * dh + j]) <
                1e-5);
          CHECK(std::fabs(hooks.prefix[l].p_v[h].at(i, j) -
                          all[i][l * 2 * cfg.d + cfg.d + h * dh + j]) < 1e-5);
        }

  // attention rows over [P;K] still sum to one
  auto w = BackboneWeights::init(cfg);
  auto x = random_tensor(3, cfg.d, 5, 0.6f);
  auto q = oracles::matmul(to_mat(x), to_mat(w.layers[0].w_q[0]));
  auto k = oracles::concat_rows(to_mat(hooks.prefix[0].p_k[0]),
                                oracles::matmul(to_mat(x), to_mat(w.layers[0].w_k[0])));
  auto v = oracles::concat_rows(to_mat(hooks.prefix[0].p_v[0]),
                                oracles::matmul(to_mat(x), to_mat(w.layers[0].w_v[0])));
  oracles::Mat weights;
  oracles::attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(dh)), &weights);
  for (const auto& row : weights) {
    double s = 0.0;
    for (double p : row) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }

  PetHyper no_tokens = hyper;
  no_tokens.prefix_tokens = 0;
  no_tokens.prefix_hidden = 8;  // parity no longer holds; layout still valid
  auto layout0 = PetLayout::make(PetKind::Prefix, no_tokens, cfg);
  auto flat0 = Tensor::zeros(1, static_cast<int>(layout0.total()), true);
  auto hooks0 = hooks_from_flat(flat0, layout0, cfg);
  CHECK(hooks0.prefix.empty());
}

TEST_CASE("train_pet: zero steps returns init at chance; seeds reproduce") {
  auto cfg = desk_config();
  auto w = BackboneWeights::init(cfg);
  TaskSpec spec;
  spec.family = TaskFamily::ContainsToken;
  spec.name = "train_smoke";
  spec.target_token = 13;
  auto task = generate_task(spec, cfg);

  PetHyper hyper;
  PetTrainConfig tcfg;
  tcfg.steps = 0;
  tcfg.seed = 3;
  auto r0 = train_pet(w, task, PetKind::Adapter, hyper, tcfg);
  auto fresh = init_pet(PetKind::Adapter, hyper, cfg, task.spec.name, 3, tcfg.init_sigma);
  CHECK(r0.solution.content_hash() == fresh.content_hash());
  CHECK(r0.e_test > 0.35);
  CHECK(r0.e_test < 0.65);

  tcfg.steps = 12;
  tcfg.eval_every = 6;
  auto r1 = train_pet(w, task, PetKind::Lora, hyper, tcfg);
  auto r2 = train_pet(w, task, PetKind::Lora, hyper, tcfg);
  CHECK(r1.solution.content_hash() == r2.solution.content_hash());
  CHECK(r1.e_test == doctest::Approx(r2.e_test));
}

TEST_CASE("adapter reaches high dev accuracy on a separable task") {
  auto cfg = desk_config();
  cfg.seed = 42;
  auto w = BackboneWeights::init(cfg);
  pretrain_backbone(w, 400, 3e-3f, 8, 42);
  TaskSpec spec;
  spec.family = TaskFamily::PositionProbe;
  spec.name = "separable";
  spec.target_token = 11;
  spec.second_token = 19;
  spec.probe_position = 3;
  auto task = generate_task(spec, cfg);

  PetHyper hyper;
  PetTrainConfig tcfg;
  tcfg.steps = 400;
  tcfg.lr = 2e-2f;
  tcfg.seed = 9;
  auto result = train_pet(w, task, PetKind::Adapter, hyper, tcfg);
  CHECK(result.e_dev >= 0.95);
}

TEST_CASE("weights_with_delta shifts every tensor and keeps the base frozen") {
  auto cfg = desk_config();
  auto w = BackboneWeights::init(cfg);
  const auto before = w.content_hash();
  const size_t n = w.parameter_count();
  auto delta = Tensor::zeros(1, static_cast<int>(n), true);
  delta.raw_data()[0] = 0.5f;   // token embedding [0][0]
  delta.raw_data()[n - 1] = -0.25f;  // last FFN bias entry
  auto shifted = weights_with_delta(w, delta);
  CHECK(shifted.token_embedding.at(0, 0) ==
        doctest::Approx(w.token_embedding.at(0, 0) + 0.5f));
  const auto& b2 = shifted.layers.back().b2;
  CHECK(b2.at(0, b2.cols() - 1) ==
        doctest::Approx(w.layers.back().b2.at(0, b2.cols() - 1) - 0.25f));
  CHECK(w.content_hash() == before);
  CHECK_THROWS_AS(weights_with_delta(w, Tensor::zeros(1, 3)), ShapeMismatchError);
}
