#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <numeric>

#include "repro/autodiff/adam.hpp"
#include "repro/autodiff/ops.hpp"
#include "repro/reprogram/reprogram.hpp"
#include "repro/util/errors.hpp"
#include "support/gradcheck.hpp"
#include "support/small_models.hpp"

using namespace repro;
using namespace repro::reprog;
using ad::Tensor;
using repro::testing::random_features;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

Tensor random_probs(std::size_t rows, std::size_t k, Rng& rng) {
  Tensor t({rows, k});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) s += (t.data()[r * k + c] = static_cast<float>(rng.uniform(0.01, 1.0)));
    for (std::size_t c = 0; c < k; ++c) t.data()[r * k + c] = static_cast<float>(t.data()[r * k + c] / s);
  }
  return t;
}

Tensor random_waves(std::size_t n, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, len});
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  return t;
}

}  // namespace

TEST_SUITE("reprogram") {

TEST_CASE("label map examples") {
  auto lm = LabelMap::explicit_map(4, {{0, 1}, {2, 3}});
  auto out = map_labels(lm, Tensor({1, 4}, {0.1f, 0.3f, 0.4f, 0.2f}));
  CHECK(out.data()[0] == doctest::Approx(0.2).epsilon(1e-7));
  CHECK(out.data()[1] == doctest::Approx(0.3).epsilon(1e-7));
  CHECK(ad::argmax_rows(out) == std::vector<int>{1});

  auto id = LabelMap::blocks(5, 5, 1);
  Rng rng(1);
  auto p = random_probs(3, 5, rng);
  CHECK(same_bits(map_labels(id, p), p));

  auto speech = LabelMap::blocks(35, 10, 2);
  CHECK(speech.num_target() == 10);
  std::size_t used = 0;
  for (const auto& row : speech.assignment()) used += row.size();
  CHECK(used == 20);
  CHECK(map_labels(speech, random_probs(2, 35, rng)).shape() == ad::Shape{2, 10});
}

TEST_CASE("label map contracts") {
  CHECK_THROWS_AS(LabelMap::blocks(19, 10, 2), ConfigError);
  CHECK_THROWS_AS(LabelMap::explicit_map(4, {{0, 4}}), ConfigError);
  CHECK_THROWS_AS(LabelMap::explicit_map(4, {{0, 1}, {1, 2}}), ConfigError);
  CHECK_THROWS_AS(LabelMap::explicit_map(4, {{0, 1}, {2}}), ConfigError);
  auto lm = LabelMap::explicit_map(6, {{5, 0}, {2, 3}});
  auto back = LabelMap::from_json(lm.to_json());
  CHECK(back.assignment() == lm.assignment());
  CHECK(back.num_source() == 6);
}

TEST_CASE("map_labels matches a brute-force mean oracle and keeps argmax under scaling") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t kt = 2 + rng.index(6), n = 1 + rng.index(4);
    const std::size_t ks = kt * n + rng.index(5);
    std::vector<std::size_t> perm(ks);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    std::vector<std::vector<std::size_t>> a(kt);
    for (std::size_t t = 0; t < kt; ++t) a[t].assign(perm.begin() + t * n, perm.begin() + (t + 1) * n);
    auto lm = LabelMap::explicit_map(ks, a);
    auto p = random_probs(20, ks, rng);
    auto out = map_labels(lm, p);
    for (std::size_t r = 0; r < 20; ++r) {
      for (std::size_t t = 0; t < kt; ++t) {
        long double acc = 0;
        for (std::size_t s : a[t]) acc += p.data()[r * ks + s];
        CHECK(std::abs(static_cast<double>(acc / n) - out.data()[r * kt + t]) < 1e-7);
      }
    }
    const float c = static_cast<float>(rng.uniform(0.1, 10.0));
    CHECK(ad::argmax_rows(map_labels(lm, ad::scale(p, c))) == ad::argmax_rows(out));
  }
}

TEST_CASE("chunk averaging") {
  auto one = Tensor({1, 3}, {0.2f, 0.5f, 0.3f});
  CHECK(same_bits(chunk_average(one), Tensor({3}, {0.2f, 0.5f, 0.3f})));
  auto two = chunk_average(Tensor({2, 2}, {1, 0, 0, 1}));
  CHECK(two.data()[0] == 0.5f);
  CHECK(two.data()[1] == 0.5f);
  const std::size_t empty[2] = {2, 0};
  CHECK_THROWS_AS(segment_average(Tensor::zeros({2, 3}), std::span<const std::size_t>(empty)), EmptyInputError);

  Rng rng(3);
  auto p = random_probs(30, 4, rng);
  auto avg = chunk_average(p);
  for (std::size_t k = 0; k < 4; ++k) {
    long double s = 0;
    for (std::size_t r = 0; r < 30; ++r) s += p.data()[r * 4 + k];
    CHECK(std::abs(static_cast<double>(s / 30) - avg.data()[k]) < 1e-7);
  }
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> order(30);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    Tensor shuffled({30, 4});
    for (std::size_t r = 0; r < 30; ++r)
      std::copy_n(p.data().begin() + order[r] * 4, 4, shuffled.data().begin() + r * 4);
    CHECK(same_bits(chunk_average(shuffled), avg));
  }
}

TEST_CASE("segment_average groups rows per clip") {
  auto rows = Tensor({5, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  const std::vector<std::size_t> counts = {2, 3};
  auto out = segment_average(rows, std::span<const std::size_t>(counts));
  CHECK(out.shape() == ad::Shape{2, 2});
  CHECK(out.data()[0] == 2.0f);
  CHECK(out.data()[1] == 3.0f);
  CHECK(out.data()[2] == 7.0f);
  CHECK(out.data()[3] == 8.0f);
  const std::vector<std::size_t> bad = {2, 2};
  CHECK_THROWS(segment_average(rows, std::span<const std::size_t>(bad)));
}

TEST_CASE("II noise: zero init, additive, identity Jacobian") {
  ad::ParameterStore store;
  auto noise = IINoise::create(store, 16);
  CHECK(noise.length() == 16);
  CHECK(store.count_scalars(true) == 16);
  for (float v : noise.theta.data()) CHECK(v == 0.0f);
  auto x = random_waves(3, 16, 4);
  CHECK(same_bits(apply_ii(noise, x), x));

  Rng rng(5);
  for (float& v : noise.theta.data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto zeros = Tensor::zeros({1, 16});
  auto out = apply_ii(noise, zeros);
  for (std::size_t i = 0; i < 16; ++i) CHECK(out.data()[i] == noise.theta.data()[i]);
  CHECK_THROWS_AS(apply_ii(noise, Tensor::zeros({2, 15})), DimensionError);

  // d loss / d theta == sum over batch of d loss / d x'
  auto w = random_waves(3, 16, 6);
  auto xp = apply_ii(noise, x);
  ad::backward(ad::sum_all(ad::mul(xp, w)));
  for (std::size_t i = 0; i < 16; ++i) {
    const double expect = w.data()[i] + w.data()[16 + i] + w.data()[32 + i];
    CHECK(noise.theta.grad()[i] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("II noise gradient agrees with finite differences") {
  Rng rng(7);
  auto x = repro::testing::random_tensor({2, 8}, rng, -1, 1, false);
  auto theta = repro::testing::random_tensor({8}, rng, -1, 1, true);
  auto w = repro::testing::random_tensor({2, 8}, rng, -1, 1, false);
  auto result = repro::testing::grad_check(
      [&](std::vector<ad::Tensor64>& in) {
        return ad::sum_all(ad::mul(ad::add_trailing(x, in[0]), w));
      },
      {theta}, 1e-4);
  CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("ID transform: identity at init, same shape, input dependent after a step") {
  ad::ParameterStore store;
  Rng rng(8);
  auto t = FeatureTransform::create(store, 4, 3, rng);
  CHECK(store.count_scalars(true) == id_parameter_count(4, 3));

  Tensor x({1, 64, 98});
  for (float& v : x.data()) v = static_cast<float>(rng.uniform(-5, 1));
  CHECK(same_bits(apply_id(t, x), x));

  auto x1 = random_features(repro::testing::small_attention(), 1, 9);
  auto x2 = random_features(repro::testing::small_attention(), 1, 10);
  ad::Adam opt({0.05});
  auto loss = ad::mean_all(ad::mul(apply_id(t, ad::concat(std::vector<Tensor>{x1, x2}, std::size_t{0})),
                                   apply_id(t, ad::concat(std::vector<Tensor>{x1, x2}, std::size_t{0}))));
  ad::backward(loss);
  auto params = store.trainable();
  opt.step(params);
  ad::NoGradGuard guard;
  auto d1 = ad::sub(apply_id(t, x1), x1), d2 = ad::sub(apply_id(t, x2), x2);
  double diff = 0, mag = 0;
  for (std::size_t i = 0; i < d1.size(); ++i) {
    diff += std::abs(d1.data()[i] - d2.data()[i]);
    mag += std::abs(d1.data()[i]);
  }
  CHECK(mag > 0.0);
  CHECK(diff > 0.0);
  CHECK_THROWS_AS(apply_id(t, Tensor::zeros({2, 16})), DimensionError);
}

TEST_CASE("initialization neutrality for every method") {
  for (auto cfg : {repro::testing::small_attention(), repro::testing::small_patch()}) {
    auto model = repro::testing::frozen_model(cfg);
    auto lm = LabelMap::blocks(cfg.num_classes, 3, 2);
    auto feats = random_features(cfg, 3, 11);
    auto waves = random_waves(3, cfg.chunk_samples(), 12);
    ad::NoGradGuard guard;
    const auto base_feat = map_labels(lm, model->forward(feats));
    const auto base_wave = map_labels(lm, model->forward(dsp::log_mel_op(waves, cfg.mel)));
    for (Method m : {Method::II, Method::ID, Method::IDS}) {
      Reprogrammer r(m, model, lm, AdapterConfig{6, 3, 5}, 0);
      const auto out = r.chunk_scores(m == Method::II ? waves : feats);
      CHECK(same_bits(out, m == Method::II ? base_wave : base_feat));
    }
  }
}

TEST_CASE("IDS output is a distribution and backward stays off the trunk") {
  for (auto cfg : {repro::testing::small_attention(), repro::testing::small_patch()}) {
    auto model = repro::testing::frozen_model(cfg);
    auto lm = LabelMap::blocks(cfg.num_classes, 2, 2);
    Reprogrammer ids(Method::IDS, model, lm, {6, 3, 5}, 1);
    Reprogrammer id(Method::ID, model, lm, {6, 3, 5}, 1);
    auto feats = random_features(cfg, 2, 13);
    auto probs = ids.source_probs(feats);
    for (std::size_t r = 0; r < 2; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < cfg.num_classes; ++k) s += probs.data()[r * cfg.num_classes + k];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    const auto ids_nodes = ad::backward(ad::sum_all(ids.chunk_scores(feats))).nodes_visited;
    const auto id_nodes = ad::backward(ad::sum_all(id.chunk_scores(feats))).nodes_visited;
    CHECK(ids_nodes < id_nodes);
    for (const auto& p : model->params().all()) CHECK_FALSE(p.tensor.has_grad());
  }
}

TEST_CASE("parameter accounting") {
  CHECK(ii_parameter_count(160000) == 160000);
  CHECK(ii_parameter_count(16000) == 16000);
  CHECK(ad::ParameterStore{}.count_scalars(true) == 0);
  CHECK(id_parameter_count(136, 3) == 169185);
  CHECK(ids_parameter_count(384, 64) == 49600);
  for (auto cfg : {repro::testing::small_attention(), repro::testing::small_patch()}) {
    auto model = repro::testing::frozen_model(cfg);
    auto lm = LabelMap::blocks(cfg.num_classes, 4, 2);
    AdapterConfig ac{6, 3, 5};
    CHECK(Reprogrammer(Method::II, model, lm, ac, 0).count_trainable() == ii_parameter_count(cfg.chunk_samples()));
    CHECK(Reprogrammer(Method::ID, model, lm, ac, 0).count_trainable() == id_parameter_count(6, 3));
    CHECK(Reprogrammer(Method::IDS, model, lm, ac, 0).count_trainable() ==
          ids_parameter_count(model->tap_dim(), 5));
  }
}

TEST_CASE("reprogrammer contracts") {
  auto cfg = repro::testing::small_attention();
  std::shared_ptr<models::SourceModel> unfrozen = models::build_source_model(cfg);
  auto lm = LabelMap::blocks(cfg.num_classes, 2, 2);
  CHECK_THROWS_AS(Reprogrammer(Method::ID, unfrozen, lm, {}, 0), ContractViolation);
  auto model = repro::testing::frozen_model(cfg);
  CHECK_THROWS_AS(Reprogrammer(Method::ID, model, LabelMap::blocks(cfg.num_classes + 2, 2, 2), {}, 0),
                  ConfigError);
  CHECK_THROWS_AS(method_from_string("nmr"), ConfigError);
}

TEST_CASE("adapter checkpoints round trip") {
  auto cfg = repro::testing::small_patch();
  auto model = repro::testing::frozen_model(cfg);
  auto lm = LabelMap::explicit_map(cfg.num_classes, {{7, 1}, {2, 5}});
  for (Method m : {Method::II, Method::ID, Method::IDS}) {
    Reprogrammer r(m, model, lm, {6, 3, 5}, 4);
    Rng rng(14);
    for (auto* p : r.params().trainable())
      for (float& v : p->tensor.data()) v = static_cast<float>(rng.uniform(-0.01, 0.01));
    auto ck = r.to_checkpoint();
    CHECK(ck.metadata.at("method") == to_string(m));
    auto back = Reprogrammer::from_checkpoint(models::Checkpoint::deserialize(ck.serialize()), model);
    CHECK(back->label_map().assignment() == lm.assignment());
    auto in = m == Method::II ? random_waves(2, cfg.chunk_samples(), 15) : random_features(cfg, 2, 15);
    ad::NoGradGuard guard;
    CHECK(same_bits(back->chunk_scores(in), r.chunk_scores(in)));
  }
  // an adapter is bound to the source weights it was trained against
  Reprogrammer r(Method::IDS, model, lm, {6, 3, 5}, 4);
  auto other = models::build_source_model(cfg);
  other->params().all().front().tensor.data()[0] += 1.0f;
  other->freeze();
  CHECK_THROWS_AS(Reprogrammer::from_checkpoint(r.to_checkpoint(), std::move(other)), ConfigError);
}

}  // TEST_SUITE
