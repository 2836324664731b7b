#include "clear/expcli/results.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace clear::expcli {

using pipeline::EvalCell;
using pipeline::EvalResult;

namespace {

std::string g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

auto cell_key(const EvalCell& c) { return std::tie(c.condition.name, c.condition.ds, c.condition.pn, c.rate, c.snr_db); }

std::vector<const EvalCell*> sorted_cells(const EvalResult& r) {
  std::vector<const EvalCell*> cells;
  for (const auto& c : r.cells) cells.push_back(&c);
  std::stable_sort(cells.begin(), cells.end(), [](const EvalCell* a, const EvalCell* b) { return cell_key(*a) < cell_key(*b); });
  return cells;
}

std::string cell_prefix(const EvalCell& c) {
  return g6(c.snr_db) + "," + c.condition.name + "," + g6(c.condition.ds) + "," + g6(c.condition.pn) + "," + g6(c.rate) +
         "," + std::to_string(c.trials);
}

}  // namespace

std::string eval_csv(const EvalResult& result) {
  std::string out = "snr_test_db,channel,ds,pn,rate,trials,mean_psnr_db,mean_mse\n";
  for (const EvalCell* c : sorted_cells(result))
    out += cell_prefix(*c) + "," + g6(c->mean_psnr_db) + "," + g6(c->mean_mse) + "\n";
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void emit_csv(const EvalResult& result, const std::filesystem::path& path) { write_text(path, eval_csv(result)); }

std::string step_loss_csv(const pipeline::TrainResult& r) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < r.step_loss.size(); ++i) out += std::to_string(i) + "," + g6(r.step_loss[i]) + "\n";
  return out;
}

std::string epoch_loss_csv(const pipeline::TrainResult& r) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (std::size_t i = 0; i < r.val_loss.size(); ++i)
    out += std::to_string(i) + "," + (i < r.epoch_loss.size() ? g6(r.epoch_loss[i]) : std::string()) + "," +
           g6(r.val_loss[i]) + "\n";
  return out;
}

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("paired_t_test: need two equal samples of size >= 2");
  PairedTest res;
  res.n = static_cast<int>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  res.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / res.n;
  double ss = 0.0;
  for (double v : d) ss += (v - res.mean_diff) * (v - res.mean_diff);
  const double se = std::sqrt(ss / (res.n - 1) / res.n);
  if (se == 0.0) {
    res.t = res.mean_diff > 0.0 ? INFINITY : (res.mean_diff < 0.0 ? -INFINITY : 0.0);
    res.p_value = res.mean_diff > 0.0 ? 0.0 : 1.0;
    return res;
  }
  res.t = res.mean_diff / se;
  const boost::math::students_t dist(res.n - 1);
  res.p_value = boost::math::cdf(boost::math::complement(dist, res.t));
  return res;
}

std::string ablation_csv(const EvalResult& with_addm, const EvalResult& without_addm) {
  const auto a = sorted_cells(with_addm), b = sorted_cells(without_addm);
  if (a.size() != b.size()) throw std::invalid_argument("ablation_csv: grids differ in size");
  std::string out =
      "snr_test_db,channel,ds,pn,rate,trials,psnr_addm_db,psnr_no_addm_db,gain_db,t_stat,p_value\n";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (cell_key(*a[i]) != cell_key(*b[i]) || a[i]->trials != b[i]->trials)
      throw std::invalid_argument("ablation_csv: grids cover different cells");
    std::string stats = ",,";
    if (a[i]->trials >= 2) {
      const PairedTest t = paired_t_test(a[i]->trial_psnr, b[i]->trial_psnr);
      stats = g6(t.t) + "," + g6(t.p_value);
    }
    out += cell_prefix(*a[i]) + "," + g6(a[i]->mean_psnr_db) + "," + g6(b[i]->mean_psnr_db) + "," +
           g6(a[i]->mean_psnr_db - b[i]->mean_psnr_db) + "," + stats + "\n";
  }
  return out;
}

}  // namespace clear::expcli
