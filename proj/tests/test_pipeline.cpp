#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "clear/expcli/dataset.hpp"
#include "clear/numerics/ops.hpp"
#include "clear/pipeline/pipeline.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace clear;
using namespace clear::pipeline;
using nn::constant;

namespace {

ModelConfig tiny_model(int hw = 8, int base = 4) {
  ModelConfig m;
  m.codec.height = m.codec.width = hw;
  m.codec.stages = 2;
  m.codec.base_filters = base;
  m.denoiser.width = 8;
  m.denoiser.depth = 2;
  m.denoiser.time_dim = 8;
  m.denoiser.embed_dim = 16;
  m.link.channel.max_delay = 2;
  m.link.channel.paths = 3;
  return m;
}

TrainConfig quick_train(double lr = 1e-3) {
  TrainConfig t;
  t.batch_size = 8;
  t.learning_rate = lr;
  t.max_epochs = 20;
  t.patience = 5;
  t.channel.profile = channel::Profile::awgn;
  return t;
}

Tensor images(int n, int hw, std::uint64_t seed) {
  return expcli::synthetic_images(expcli::SyntheticKind::mixed, n, hw, hw, seed);
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double area(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("mse_loss") {
  const Tensor a = images(2, 4, 1);
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(Tensor::full({2, 3, 4, 4}, 1.0), Tensor({2, 3, 4, 4})) == 1.0);
  CHECK_THROWS_AS(mse_loss(Tensor({1, 3, 4, 4}), Tensor({1, 3, 4, 5})), std::invalid_argument);

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = rng.normal_tensor({3, 5, 7});
    const Tensor y = rng.normal_tensor({3, 5, 7});
    long double acc = 0.0L;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 5; ++j)
        for (int k = 0; k < 7; ++k) {
          const std::size_t f = (static_cast<std::size_t>(i) * 5 + j) * 7 + k;
          const long double d = static_cast<long double>(x[f]) - y[f];
          acc += d * d;
        }
    CHECK(mse_loss(x, y) == doctest::Approx(static_cast<double>(acc / 105.0L)).epsilon(1e-12));
  }
}

TEST_CASE("psnr") {
  CHECK(psnr_from_mse(1.0) == doctest::Approx(0.0));
  CHECK(psnr_from_mse(4.0, 2.0) == doctest::Approx(0.0));
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr_from_mse(0.0) == kPsnrCapDb);
  CHECK(psnr_from_mse(1e-30) == kPsnrCapDb);
  const Tensor a = images(1, 4, 2);
  CHECK(psnr(a, a) == kPsnrCapDb);
  CHECK_THROWS_AS(psnr_from_mse(0.1, 0.0), std::invalid_argument);

  double prev = std::numeric_limits<double>::infinity();
  for (double m = 1e-9; m < 10.0; m *= 1.7) {
    const double p = psnr_from_mse(m);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("early stop rule") {
  CHECK_FALSE(early_stop_update({1.0, 0.9, 0.8, 0.7, 0.6, 0.5}, 3));
  CHECK(early_stop_update({1.0, 1.0, 1.0, 1.0}, 3));
  CHECK_FALSE(early_stop_update({1.0, 1.0, 1.0}, 3));
  CHECK_THROWS_AS(early_stop_update({}, 3), std::invalid_argument);

  // The third epoch after the best improves, which resets the counter.
  CHECK_FALSE(early_stop_update({1.0, 1.0, 1.0, 0.5}, 3));
  CHECK_FALSE(early_stop_update({1.0, 1.0, 1.0, 0.5, 0.6, 0.5}, 3));
  CHECK(early_stop_update({1.0, 1.0, 1.0, 0.5, 0.6, 0.5, 0.5}, 3));

  // Gains at or below the minimum delta do not count.
  CHECK(early_stop_update({1.0, 1.0 - 5e-7, 1.0 - 1e-6, 1.0 - 1e-6}, 3));
  CHECK_FALSE(early_stop_update({1.0, 1.0 - 5e-7, 1.0 - 1e-6, 1.0 - 3e-6}, 3));

  // Stops exactly once along a growing history.
  std::vector<double> h{1.0, 0.8, 0.9, 0.85, 0.81, 0.95, 0.7};
  int first = -1;
  for (std::size_t n = 1; n <= h.size(); ++n)
    if (first < 0 && early_stop_update({h.begin(), h.begin() + n}, 3)) first = static_cast<int>(n);
  CHECK(first == 5);
}

TEST_CASE("link: affine map with exact adjoint") {
  ModelConfig m = tiny_model();
  LinkConfig lc = m.link;
  lc.channel.profile = channel::Profile::time_varying;
  lc.channel.ds = 0.05;
  lc.channel.pn = 0.05;
  lc.channel.snr_db = 10.0;
  Rng rng(5);
  const nn::Shape shape{2, 8, 2, 4};
  Tensor mask(shape);
  for (double& v : mask.vec()) v = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 8; c += 2)
      for (int k = 0; k < 5; ++k) mask.at(b, c, k / 4, k % 4) = mask.at(b, c + 1, k / 4, k % 4) = 1.0;
  const Link link(lc, mask, shape, 9);
  Tensor x = rng.normal_tensor(shape), y = rng.normal_tensor(shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    x[i] *= mask[i];
    y[i] *= mask[i];
  }
  const Tensor zero(shape);
  const Tensor ax = link.forward(x) - link.forward(zero);
  CHECK(dot(ax, y) == doctest::Approx(dot(x, link.adjoint(y))).epsilon(1e-10));
  // Unselected coefficients stay zero.
  const Tensor fx = link.forward(x);
  for (std::size_t i = 0; i < fx.numel(); ++i)
    if (mask[i] == 0.0) CHECK(fx[i] == 0.0);
  const Tensor c = link.conditioning();
  CHECK(c.shape() == nn::Shape{2, 3});
  for (double v : c.vec()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("link: noiseless AWGN is the identity, high-SNR fading nearly so") {
  ModelConfig m = tiny_model();
  LinkConfig lc = m.link;
  Rng rng(6);
  const nn::Shape shape{4, 8, 2, 2};
  const Tensor x = rng.normal_tensor(shape);

  lc.channel.profile = channel::Profile::awgn;
  lc.channel.snr_db = INFINITY;
  const Tensor y = Link(lc, Tensor(), shape, 1).forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-9));

  lc.channel.profile = channel::Profile::rayleigh;
  lc.channel.snr_db = 40.0;
  double err = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) err += mse_loss(Link(lc, Tensor(), shape, s).forward(x), x);
  CHECK(err / 10.0 < 2e-2);
  const Link hi(lc, Tensor(), shape, 3);
  lc.channel.snr_db = 0.0;
  const Link lo(lc, Tensor(), shape, 3);
  CHECK(lo.states()[0].nsr > hi.states()[0].nsr);
}

TEST_CASE("joint loss gradient through codec, link and denoiser") {
  ModelConfig m = tiny_model();
  const ClearModel model(m);
  ParamSet ps;
  model.init(ps, 3);
  TrainConfig t = quick_train();
  t.channel.profile = channel::Profile::time_varying;
  t.channel.ds = 0.05;
  t.channel.pn = 0.05;
  t.snr_train = 5.0;
  t.eps_weight = 0.5;
  const Tensor batch = images(3, 8, 4);
  auto loss = [&] { return joint_loss(model, ps, batch, t, 77); };
  for (const std::string probe : {"enc.s0.conv.w", "enc.out.w", "enc.afb.w1", "addm.in.w", "addm.out.w",
                                  "dec.afb.w2", "dec.s0.up.w", "dec.out.w"}) {
    CAPTURE(probe);
    REQUIRE(ps.params().count(probe));
    CHECK(testing::grad_check(loss, {ps.get(probe)}).max_rel_error < 1e-4);
  }
}

TEST_CASE("training overfits a tiny noiseless batch") {
  const ClearModel model(tiny_model(8, 8));
  ParamSet ps;
  model.init(ps, 11);
  TrainConfig t = quick_train(3e-3);
  t.addm_enabled = false;
  t.snr_train = INFINITY;
  const Tensor data = images(8, 8, 12);
  const double first = train_batch(model, ps, data, t, 0);
  double best = first;
  for (int s = 1; s < 500 && best * 10.0 > first; ++s) best = std::min(best, train_batch(model, ps, data, t, s));
  MESSAGE("initial " << first << ", best " << best);
  CHECK(best * 10.0 <= first);
}

TEST_CASE("smaller learning rate converges more slowly") {
  const Tensor data = images(16, 8, 21);
  auto run = [&](double lr) {
    const ClearModel model(tiny_model(8, 8));
    ParamSet ps;
    model.init(ps, 22);
    TrainConfig t = quick_train(lr);
    t.addm_enabled = false;
    t.max_steps = 120;
    t.max_epochs = 100;
    t.patience = 99;
    return train_clear(model, ps, data, data, t).step_loss;
  };
  const auto slow = run(1e-4), fast = run(1e-3);
  MESSAGE("area lr=1e-4 " << area(slow) << ", lr=1e-3 " << area(fast));
  REQUIRE(slow.size() == fast.size());
  CHECK(area(slow) > area(fast));
}

TEST_CASE("training is deterministic and reports bad batches") {
  const Tensor data = images(16, 8, 31);
  TrainConfig t = quick_train();
  t.channel.profile = channel::Profile::rayleigh;
  t.max_epochs = 2;
  t.patience = 1;
  auto run = [&](ParamSet& ps) {
    const ClearModel model(tiny_model());
    model.init(ps, 32);
    return train_clear(model, ps, data, data, t);
  };
  ParamSet a, b;
  const TrainResult ra = run(a), rb = run(b);
  CHECK(ra.step_loss == rb.step_loss);
  CHECK(ra.val_loss == rb.val_loss);
  CHECK(ra.steps == 4);
  for (const auto& [name, v] : a.params()) CHECK(v.value().vec() == b.get(name).value().vec());

  const ClearModel model(tiny_model());
  ParamSet bad;
  model.init(bad, 33);
  bad.get("enc.out.w").mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_clear(model, bad, data, data, t);
    FAIL("expected a non-finite loss error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
  }

  CHECK_THROWS_AS(train_clear(model, bad, images(4, 16, 1), data, t), std::invalid_argument);
  t.patience = 5;
  CHECK_THROWS_AS(train_clear(model, bad, data, data, t), std::invalid_argument);
}

TEST_CASE("early stop fires once on a stalled model") {
  const ClearModel model(tiny_model());
  ParamSet ps;
  model.init(ps, 41);
  TrainConfig t = quick_train(1e-12);
  t.addm_enabled = false;
  t.max_epochs = 60;
  t.patience = 2;
  const Tensor data = images(8, 8, 42);
  const TrainResult r = train_clear(model, ps, data, data, t);
  MESSAGE("epochs " << r.epochs_run);
  CHECK(r.early_stopped);
  CHECK(r.epochs_run < 60);
  REQUIRE(r.val_loss.size() == static_cast<std::size_t>(r.epochs_run));
  for (int e = 1; e < r.epochs_run; ++e) CHECK_FALSE(early_stop_update({r.val_loss.begin(), r.val_loss.begin() + e}, 2));
  CHECK(early_stop_update(r.val_loss, 2));
}

TEST_CASE("staged mode pre-trains the denoiser after the codec") {
  const ClearModel model(tiny_model());
  ParamSet ps;
  model.init(ps, 51);
  TrainConfig t = quick_train();
  t.mode = TrainMode::staged;
  t.max_epochs = 2;
  t.patience = 1;
  const Tensor before = ps.get("addm.out.w").value();
  const TrainResult r = train_clear(model, ps, images(16, 8, 52), images(8, 8, 53), t);
  CHECK(r.steps == 8);
  CHECK(r.val_loss.size() == 3);
  CHECK(ps.get("addm.out.w").value().vec() != before.vec());
}

TEST_CASE("evaluate_grid layout, determinism and paired channel draws") {
  const ClearModel model(tiny_model());
  ParamSet ps;
  model.init(ps, 61);
  const Tensor data = images(4, 8, 62);
  const auto conds = standard_conditions();
  REQUIRE(conds.size() == 5);
  CHECK(conds[4].ds == 0.5);
  CHECK(conds[4].pn == 0.2);

  const EvalResult r = evaluate_grid(model, ps, data, {0.0, 20.0}, conds, {0.6}, 2, 7);
  REQUIRE(r.cells.size() == 10);
  for (const auto& c : r.cells) {
    CHECK(c.trials == 2);
    CHECK(c.trial_psnr.size() == 2);
    CHECK(std::isfinite(c.mean_psnr_db));
    CHECK(c.mean_psnr_db <= kPsnrCapDb);
    CHECK(c.mean_mse >= 0.0);
  }
  const EvalResult again = evaluate_grid(model, ps, data, {0.0, 20.0}, conds, {0.6}, 2, 7);
  for (std::size_t i = 0; i < r.cells.size(); ++i) CHECK(r.cells[i].trial_psnr == again.cells[i].trial_psnr);

  // A cell's draws do not depend on which other cells share the grid.
  const EvalResult solo = evaluate_grid(model, ps, data, {20.0}, {conds[3]}, {0.6}, 2, 7);
  CHECK(solo.cells[0].trial_psnr == r.cells[7].trial_psnr);
  const EvalResult other = evaluate_grid(model, ps, data, {20.0}, {conds[3]}, {0.6}, 2, 8);
  CHECK(other.cells[0].trial_psnr != solo.cells[0].trial_psnr);

  const EvalResult threaded = evaluate_grid(model, ps, data, {0.0, 20.0}, conds, {0.6}, 2, 7, true, 3);
  for (std::size_t i = 0; i < r.cells.size(); ++i) CHECK(r.cells[i].trial_psnr == threaded.cells[i].trial_psnr);

  CHECK_THROWS_AS(evaluate_grid(model, ps, data, {0.0}, conds, {0.6}, 0, 7), std::invalid_argument);
}
