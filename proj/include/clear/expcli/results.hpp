#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "clear/pipeline/pipeline.hpp"

namespace clear::expcli {

/// `snr_test_db,channel,ds,pn,rate,trials,mean_psnr_db,mean_mse`, rows sorted
/// by (channel, ds, pn, rate, snr_test_db), numbers at 6 significant digits.
std::string eval_csv(const pipeline::EvalResult& result);
void emit_csv(const pipeline::EvalResult& result, const std::filesystem::path& path);

/// `step,loss` and `epoch,train_loss,val_loss`.
std::string step_loss_csv(const pipeline::TrainResult& r);
std::string epoch_loss_csv(const pipeline::TrainResult& r);

/// One-sided paired t-test of mean(a - b) > 0.
struct PairedTest {
  int n = 0;
  double mean_diff = 0.0;
  double t = 0.0;
  double p_value = 1.0;
};
PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Cell-by-cell comparison of two grids evaluated with the same seed:
/// `snr_test_db,channel,ds,pn,rate,trials,psnr_addm_db,psnr_no_addm_db,gain_db,t_stat,p_value`.
std::string ablation_csv(const pipeline::EvalResult& with_addm, const pipeline::EvalResult& without_addm);

/// Writes `text` to `path`, surfacing failures with the path.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace clear::expcli
