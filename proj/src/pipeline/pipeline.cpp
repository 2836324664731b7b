#include "clear/pipeline/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "clear/numerics/ops.hpp"

namespace clear::pipeline {

using namespace nn;

namespace {

addm::DenoiserConfig bind_channels(addm::DenoiserConfig d, const codec::CodecConfig& c) {
  d.channels = c.feature_channels();
  return d;
}

Tensor rows(const Tensor& x, const std::vector<int>& idx) {
  Shape shape = x.shape();
  const std::size_t per = x.numel() / shape[0];
  shape[0] = static_cast<int>(idx.size());
  Tensor out(shape);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.vec().begin() + idx[r] * per, per, out.vec().begin() + r * per);
  return out;
}

void scatter_rows(Tensor& dst, const Tensor& src, const std::vector<int>& idx) {
  const std::size_t per = dst.numel() / dst.dim(0);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(src.vec().begin() + r * per, per, dst.vec().begin() + idx[r] * per);
}

Tensor range_rows(const Tensor& x, int begin, int end) {
  std::vector<int> idx(static_cast<std::size_t>(end - begin));
  std::iota(idx.begin(), idx.end(), begin);
  return rows(x, idx);
}

LinkConfig link_for(const ClearModel& model, const channel::ChannelConfig& ch, double snr_db) {
  LinkConfig lc = model.config().link;
  lc.channel = ch;
  lc.channel.snr_db = snr_db;
  return lc;
}

std::vector<int> start_steps(const addm::NoiseSchedule& sched, const Link& link) {
  std::vector<int> steps;
  for (const auto& st : link.states()) steps.push_back(addm::start_step(sched, st.nsr));
  return steps;
}

// Single reverse jump from each sample's matched step, on the tape. Samples
// whose residual noise is negligible pass through untouched.
Var addm_jump(const ClearModel& model, ParamSet& ps, const Var& x_hat, const Tensor& mask, const Link& link,
              std::uint64_t seed) {
  const auto& sched = model.schedule();
  const std::vector<int> steps = start_steps(sched, link);
  if (std::all_of(steps.begin(), steps.end(), [](int t) { return t == 0; })) return x_hat;

  const int n = x_hat.dim(0);
  const std::size_t per = x_hat.numel() / n;
  const Var z = scale(x_hat, std::sqrt(2.0));
  Tensor active({n}), fill(x_hat.shape()), k_norm({n}), k_pass({n}), k_eps({n});
  Rng rng(seed);
  std::vector<int> net_steps(steps.size());
  for (int b = 0; b < n; ++b) {
    const int t = steps[b];
    const double ab = sched.alpha_bar[t];
    net_steps[b] = std::max(t, 1);
    double a = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double m = mask.empty() ? 1.0 : mask[i];
      a += m;
      fill[i] = t > 0 && m == 0.0 ? std::sqrt(1.0 - ab) * rng.normal() : 0.0;
    }
    active[b] = a;
    k_norm[b] = t > 0 ? 1.0 / std::sqrt(ab) : 0.0;
    k_pass[b] = t > 0 ? 0.0 : 1.0;
    k_eps[b] = t > 0 ? std::sqrt((1.0 - ab) / ab) : 0.0;
  }
  const Var unit = sqrt(mul(reciprocal(add_scalar(sum_per_sample(square(z)), 1e-12)), constant(active)));
  const Var z_t = add(mul_per_sample(z, unit), constant(fill));
  const Var eps_hat = model.denoiser().forward(ps, z_t, net_steps, link.conditioning());
  Var x0 = sub(add(mul_per_sample(z_t, constant(k_norm)), mul_per_sample(z, constant(k_pass))),
               mul_per_sample(eps_hat, constant(k_eps)));
  if (!mask.empty()) x0 = mul(x0, constant(mask));
  return scale(x0, 1.0 / std::sqrt(2.0));
}

// Full reverse chain, grouped by start step.
Tensor addm_sample(const ClearModel& model, ParamSet& ps, const Tensor& x_hat, const Tensor& mask, const Link& link,
                   const addm::SamplerOptions& opts, std::uint64_t seed) {
  const auto& sched = model.schedule();
  const std::vector<int> steps = start_steps(sched, link);
  const Tensor cond = link.conditioning();
  Tensor out = x_hat;
  std::map<int, std::vector<int>> groups;
  for (std::size_t b = 0; b < steps.size(); ++b)
    if (steps[b] > 0) groups[steps[b]].push_back(static_cast<int>(b));
  for (const auto& [t, idx] : groups) {
    const Tensor z = std::sqrt(2.0) * rows(x_hat, idx);
    const Tensor m = mask.empty() ? Tensor() : rows(mask, idx);
    const auto predictor = addm::network_predictor(model.denoiser(), ps, rows(cond, idx));
    const Tensor x0 = addm::sample(z, m, predictor, sched, t, derive_seed(seed, "addm", t), opts);
    scatter_rows(out, (1.0 / std::sqrt(2.0)) * x0, idx);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be at least 1");
  if (patience < 1 || patience >= max_epochs) throw std::invalid_argument("train: patience must lie in [1, max_epochs)");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (batch_size < 2) throw std::invalid_argument("train: batch_size must be at least 2");
  if (!(compression_rate > 0.0 && compression_rate <= 1.0))
    throw std::invalid_argument("train: compression_rate must lie in (0, 1]");
  if (eps_weight < 0.0) throw std::invalid_argument("train: eps_weight must be non-negative");
  if (max_steps < 0) throw std::invalid_argument("train: max_steps must be non-negative");
  channel.validate();
}

void ModelConfig::validate() const {
  codec.validate();
  link.validate();
  if (schedule_stride < 1 || schedule_steps % schedule_stride)
    throw std::invalid_argument("model: schedule_stride must divide schedule_steps");
  const int fh = codec.feature_height(), fw = codec.feature_width(), scale = 1 << (denoiser.depth - 1);
  if (fh % scale || fw % scale)
    throw std::invalid_argument("model: feature extent " + std::to_string(fh) + "x" + std::to_string(fw) +
                                " not divisible by the denoiser's 2^(depth-1) = " + std::to_string(scale));
}

ClearModel::ClearModel(ModelConfig cfg)
    : cfg_((cfg.validate(), cfg)),
      codec_(cfg_.codec),
      den_(bind_channels(cfg_.denoiser, cfg_.codec)),
      sched_(addm::subsample(addm::make_schedule(cfg_.schedule_steps, cfg_.schedule_target), cfg_.schedule_stride)) {
  cfg_.denoiser.channels = cfg_.codec.feature_channels();
}

void ClearModel::init(ParamSet& ps, std::uint64_t seed) const {
  Rng codec_rng(derive_seed(seed, "init.codec"));
  codec_.init(ps, codec_rng);
  Rng den_rng(derive_seed(seed, "init.addm"));
  den_.init(ps, den_rng);
}

double mse_loss(const Tensor& s_hat, const Tensor& s) {
  require_same_shape(s_hat, s, "mse_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) acc += (s_hat[i] - s[i]) * (s_hat[i] - s[i]);
  return acc / static_cast<double>(s.numel());
}

double psnr_from_mse(double mse, double max_val) {
  if (!(max_val > 0.0)) throw std::invalid_argument("psnr: max_val must be positive");
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(max_val * max_val / mse));
}

double psnr(const Tensor& s_hat, const Tensor& s, double max_val) { return psnr_from_mse(mse_loss(s_hat, s), max_val); }

bool early_stop_update(const std::vector<double>& history, int patience) {
  if (history.empty()) throw std::invalid_argument("early_stop_update: empty history");
  double best = history.front();
  int since = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < best - kEarlyStopMinDelta) {
      best = history[i];
      since = 0;
    } else {
      ++since;
    }
  }
  return since >= patience;
}

Var joint_loss(const ClearModel& model, ParamSet& ps, const Tensor& batch, const TrainConfig& cfg, std::uint64_t seed) {
  const auto& codec = model.codec();
  const Var images = constant(batch);
  const codec::SemanticFeatures f = codec.encode(ps, images, cfg.snr_train, true, cfg.compression_rate);
  const Link link(link_for(model, cfg.channel, cfg.snr_train), f.mask, f.x.shape(), derive_seed(seed, "link"));
  codec::SemanticFeatures rx{link.apply(f.x), f.mask, f.gain};
  if (!cfg.addm_enabled) return mse(codec.decode(ps, rx, cfg.snr_train, true), images);

  rx.x = addm_jump(model, ps, rx.x, f.mask, link, derive_seed(seed, "jump"));
  Var loss = mse(codec.decode(ps, rx, cfg.snr_train, true), images);
  if (cfg.eps_weight > 0.0) {
    const Var eps_loss =
        addm::denoiser_loss(scale(f.x, std::sqrt(2.0)), model.schedule(), model.denoiser(), ps, link.conditioning(), derive_seed(seed, "eps"));
    loss = add(loss, scale(eps_loss, cfg.eps_weight));
  }
  return loss;
}

double train_batch(const ClearModel& model, ParamSet& ps, const Tensor& batch, const TrainConfig& cfg,
                   std::uint64_t seed) {
  const Var loss = joint_loss(model, ps, batch, cfg, seed);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) return value;
  backward(loss, ps);
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  adam_step(ps, adam);
  return value;
}

Tensor reconstruct(const ClearModel& model, ParamSet& ps, const Tensor& images, const InferenceOptions& opt,
                   std::uint64_t seed) {
  NoGradGuard guard;
  const auto& codec = model.codec();
  const codec::SemanticFeatures f = codec.encode(ps, constant(images), opt.snr_db, false, opt.rate);
  const Link link(link_for(model, opt.channel, opt.snr_db), f.mask, f.x.shape(), derive_seed(seed, "link"));
  Tensor x_hat = link.forward(f.x.value());
  if (opt.use_addm) x_hat = addm_sample(model, ps, x_hat, f.mask, link, opt.sampler, derive_seed(seed, "sample"));
  return codec.decode(ps, codec::SemanticFeatures{constant(x_hat), f.mask, f.gain}, opt.snr_db, false).value();
}

namespace {
double validation_mse(const ClearModel& model, ParamSet& ps, const Tensor& val, const TrainConfig& cfg) {
  InferenceOptions opt;
  opt.snr_db = cfg.snr_train;
  opt.channel = cfg.channel;
  opt.rate = cfg.compression_rate;
  opt.use_addm = cfg.addm_enabled;
  double acc = 0.0;
  const int n = val.dim(0), chunk = std::max(cfg.batch_size, 2);
  for (int b = 0; b < n; b += chunk) {
    const int e = std::min(n, b + chunk);
    const Tensor part = range_rows(val, b, e);
    acc += mse_loss(reconstruct(model, ps, part, opt, derive_seed(cfg.seed, "validation", b)), part) * (e - b);
  }
  return acc / n;
}

void check_dataset(const ClearModel& model, const Tensor& data, const char* what) {
  const auto& c = model.config().codec;
  if (data.rank() != 4 || data.dim(0) < 1 || data.dim(1) != 3 || data.dim(2) != c.height || data.dim(3) != c.width)
    throw std::invalid_argument(std::string("train_clear: ") + what + " must be (N, 3, " + std::to_string(c.height) +
                                ", " + std::to_string(c.width) + "), got " + shape_str(data.shape()));
}
}  // namespace

TrainResult train_clear(const ClearModel& model, ParamSet& ps, const Tensor& train, const Tensor& validation,
                        const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  check_dataset(model, train, "training set");
  check_dataset(model, validation, "validation set");
  const int n = train.dim(0);
  const int batch = std::min(cfg.batch_size, n);
  if (batch < 2) throw std::invalid_argument("train_clear: need at least two training images");

  TrainConfig phase = cfg;
  if (cfg.mode == TrainMode::staged) phase.addm_enabled = false;

  TrainResult res;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double epoch_acc = 0.0;
    int batches = 0;
    for (int b = 0; b + batch <= n; b += batch) {
      const std::vector<int> idx(order.begin() + b, order.begin() + b + batch);
      const std::string where = "batch " + std::to_string(res.steps) + " (epoch " + std::to_string(epoch) + ")";
      double loss = 0.0;
      try {
        loss = train_batch(model, ps, rows(train, idx), phase, derive_seed(cfg.seed, "batch", res.steps));
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train_clear: " + where + ": " + e.what());
      }
      if (!std::isfinite(loss)) throw std::runtime_error("train_clear: non-finite loss at " + where);
      res.step_loss.push_back(loss);
      epoch_acc += loss;
      ++batches;
      ++res.steps;
      if (cfg.max_steps > 0 && res.steps >= static_cast<std::size_t>(cfg.max_steps)) break;
    }
    res.epoch_loss.push_back(epoch_acc / batches);
    res.val_loss.push_back(validation_mse(model, ps, validation, phase));
    res.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(epoch, res.epoch_loss.back(), res.val_loss.back());
    if (early_stop_update(res.val_loss, cfg.patience)) {
      res.early_stopped = true;
      break;
    }
    if (cfg.max_steps > 0 && res.steps >= static_cast<std::size_t>(cfg.max_steps)) break;
  }

  if (cfg.mode == TrainMode::staged && cfg.addm_enabled) {
    // Denoiser pre-training on the frozen encoder's clean features.
    AdamConfig adam;
    adam.learning_rate = cfg.learning_rate;
    const std::size_t codec_steps = res.steps;
    for (std::size_t s = 0; s < codec_steps; ++s) {
      Rng pick(derive_seed(cfg.seed, "staged.pick", s));
      std::vector<int> idx(static_cast<std::size_t>(batch));
      for (int& i : idx) i = pick.uniform_int(0, n - 1);
      Tensor x0;
      {
        NoGradGuard guard;
        x0 = std::sqrt(2.0) * model.codec().encode(ps, constant(rows(train, idx)), cfg.snr_train, false,
                                                   cfg.compression_rate).x.value();
      }
      const auto r = addm::train_step(x0, nullptr, model.schedule(), model.denoiser(), ps, adam,
                                      Tensor::full({batch, 3}, codec::normalized_snr(cfg.snr_train)),
                                      derive_seed(cfg.seed, "staged.step", s));
      res.step_loss.push_back(r.loss);
      ++res.steps;
    }
    res.val_loss.push_back(validation_mse(model, ps, validation, cfg));
  }
  return res;
}

std::vector<ChannelCondition> standard_conditions() {
  using channel::Profile;
  return {{"awgn", Profile::awgn, 0.0, 0.0},
          {"rayleigh", Profile::rayleigh, 0.0, 0.0},
          {"tv", Profile::time_varying, 0.01, 0.01},
          {"tv", Profile::time_varying, 0.05, 0.05},
          {"tv", Profile::time_varying, 0.5, 0.2}};
}

EvalResult evaluate_grid(const ClearModel& model, ParamSet& ps, const Tensor& images, const std::vector<double>& snrs,
                         const std::vector<ChannelCondition>& conditions, const std::vector<double>& rates, int trials,
                         std::uint64_t seed, bool use_addm, int threads) {
  if (trials < 1) throw std::invalid_argument("evaluate_grid: trials must be at least 1");
  EvalResult res;
  res.seed = seed;
  for (const auto& cond : conditions)
    for (double rate : rates)
      for (double snr : snrs) {
        EvalCell cell;
        cell.snr_db = snr;
        cell.condition = cond;
        cell.rate = rate;
        cell.trials = trials;
        res.cells.push_back(std::move(cell));
      }

  auto run_cell = [&](EvalCell& cell) {
    InferenceOptions opt;
    opt.snr_db = cell.snr_db;
    opt.channel = model.config().link.channel;
    opt.channel.profile = cell.condition.profile;
    opt.channel.ds = cell.condition.ds;
    opt.channel.pn = cell.condition.pn;
    opt.rate = cell.rate;
    opt.use_addm = use_addm;
    std::ostringstream key;
    key << cell.condition.name << '|' << cell.condition.ds << '|' << cell.condition.pn << '|' << cell.rate << '|'
        << cell.snr_db;
    double mse_acc = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Tensor out = reconstruct(model, ps, images, opt, derive_seed(seed, key.str(), t));
      double p = 0.0, m = 0.0;
      for (int b = 0; b < images.dim(0); ++b) {
        const double e = mse_loss(range_rows(out, b, b + 1), range_rows(images, b, b + 1));
        m += e;
        p += psnr_from_mse(e);
      }
      cell.trial_psnr.push_back(p / images.dim(0));
      mse_acc += m / images.dim(0);
    }
    cell.mean_psnr_db = std::accumulate(cell.trial_psnr.begin(), cell.trial_psnr.end(), 0.0) / trials;
    cell.mean_mse = mse_acc / trials;
  };

  const int workers = std::clamp(threads, 1, static_cast<int>(res.cells.size()));
  if (workers == 1) {
    for (auto& cell : res.cells) run_cell(cell);
    return res;
  }
  // Inference only reads the parameter set, so workers share it.
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < res.cells.size(); i = next++) {
        try {
          run_cell(res.cells[i]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return res;
}

}  // namespace clear::pipeline
