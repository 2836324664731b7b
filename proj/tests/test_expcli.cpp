#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "clear/expcli/checkpoint.hpp"
#include "clear/expcli/config.hpp"
#include "clear/expcli/dataset.hpp"
#include "clear/expcli/results.hpp"
#include "clear/expcli/runner.hpp"
#include "doctest.h"

using namespace clear;
using namespace clear::expcli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("clear_test_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_string(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Encoded by an independent PNG writer.
const std::vector<std::uint8_t> kPngRgb3x2 = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x03, 0x00, 0x00, 0x00, 0x02, 0x08, 0x02, 0x00, 0x00, 0x00, 0x12, 0x16, 0xf1, 0x4d, 0x00, 0x00, 0x00, 0x18, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8, 0xcf, 0xc0, 0xc0, 0x00, 0xc1, 0x5c, 0x22, 0x72, 0x27, 0x52, 0x8c, 0xfe,
    0xff, 0xff, 0x0f, 0x00, 0x3c, 0x19, 0x07, 0x95, 0xef, 0xc2, 0xc6, 0xd8, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e,
    0x44, 0xae, 0x42, 0x60, 0x82};
const std::vector<std::uint8_t> kPngGray2x2 = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
    0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x08, 0x00, 0x00, 0x00, 0x00, 0x57, 0xdd, 0x52, 0xf8, 0x00, 0x00, 0x00,
    0x0e, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x60, 0x70, 0x60, 0x68, 0xf8, 0x0f, 0x00, 0x03, 0x05, 0x01,
    0xc0, 0x4e, 0x33, 0x5b, 0xe9, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};

Image8 pattern(int w, int h, int salt) {
  Image8 img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * w * h))};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>((i * 37 + salt) % 256);
  return img;
}

pipeline::EvalCell cell(const std::string& name, double ds, double snr, double psnr) {
  pipeline::EvalCell c;
  c.snr_db = snr;
  c.condition.name = name;
  c.condition.ds = ds;
  c.condition.pn = ds;
  c.rate = 0.6;
  c.trials = 1;
  c.mean_psnr_db = psnr;
  c.mean_mse = std::pow(10.0, -psnr / 10.0);
  c.trial_psnr = {psnr};
  return c;
}

ExperimentConfig fast_config(const fs::path& out) {
  ExperimentConfig c = smoke_config();
  c.out = out.string();
  c.data.count = 16;
  c.validation_count = 8;
  c.test_count = 4;
  c.train.batch_size = 8;
  c.train.max_steps = 6;
  c.eval_snrs = {0, 20};
  c.eval_conditions = {"awgn", "rayleigh"};
  c.eval_trials = 2;
  c.resolve();
  return c;
}

}  // namespace

TEST_CASE("synthetic checkerboard is exact") {
  const Tensor x = synthetic_images(SyntheticKind::checkerboard, 2, 8, 8, 5);
  REQUIRE(x.shape() == nn::Shape{2, 3, 8, 8});
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) CHECK(x.at(n, c, i, j) == static_cast<float>((i + j) % 2));
}

TEST_CASE("synthetic generators are seeded and bounded") {
  for (auto kind : {SyntheticKind::gradient, SyntheticKind::noise, SyntheticKind::mixed}) {
    CAPTURE(synthetic_name(kind));
    CHECK(parse_synthetic(synthetic_name(kind)) == kind);
    const Tensor a = synthetic_images(kind, 6, 8, 8, 3);
    const Tensor b = synthetic_images(kind, 6, 8, 8, 3);
    const Tensor c = synthetic_images(kind, 6, 8, 8, 4);
    CHECK(a.vec() == b.vec());
    CHECK(a.vec() != c.vec());
    for (float v : a.vec()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK_THROWS_AS(parse_synthetic("stripes"), std::invalid_argument);
}

TEST_CASE("ppm round trip is byte exact") {
  TempDir dir("ppm");
  const Image8 img = pattern(5, 3, 11);
  write_ppm(dir.path / "a.ppm", img);
  const Image8 back = read_ppm(dir.path / "a.ppm");
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  CHECK(back.rgb == img.rgb);
  CHECK(to_image8(to_tensor(img), 0).rgb == img.rgb);
  write_ppm(dir.path / "b.ppm", back);
  CHECK(read_bytes(dir.path / "a.ppm") == read_bytes(dir.path / "b.ppm"));
  write_bytes(dir.path / "c.ppm", {'P', '6', '\n', '5', ' ', '3', '\n', '2', '5', '5', '\n', 1, 2, 3});
  CHECK_THROWS_AS(read_ppm(dir.path / "c.ppm"), std::runtime_error);
}

TEST_CASE("png decoding matches reference pixels") {
  TempDir dir("png");
  write_bytes(dir.path / "rgb.png", kPngRgb3x2);
  write_bytes(dir.path / "gray.png", kPngGray2x2);
  const Image8 rgb = read_image(dir.path / "rgb.png");
  CHECK(rgb.width == 3);
  CHECK(rgb.height == 2);
  CHECK(rgb.rgb == std::vector<std::uint8_t>{255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30, 200, 100, 50, 255, 255, 255});
  const Image8 gray = read_png(dir.path / "gray.png");
  CHECK(gray.rgb == std::vector<std::uint8_t>{0, 0, 0, 64, 64, 64, 128, 128, 128, 255, 255, 255});
  write_bytes(dir.path / "bad.png", {0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0, 0});
  CHECK_THROWS_AS(read_image(dir.path / "bad.png"), std::runtime_error);
}

TEST_CASE("center crop window") {
  const CropWindow w = center_window(300, 300, 256, 256);
  CHECK(w.top == 22);
  CHECK(w.left == 22);
  CHECK(w.top + w.height - 1 == 277);
  CHECK(center_window(257, 300, 256, 256).top == 0);
  CHECK_THROWS_AS(center_window(200, 300, 256, 256), std::invalid_argument);

  const Image8 img = pattern(6, 5, 0);
  const Image8 c = center_crop(img, 3, 2);
  REQUIRE(c.rgb.size() == 18u);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 3; ++k)
        CHECK(c.rgb[(i * 2 + j) * 3 + k] == img.rgb[((i + 1) * 6 + (j + 2)) * 3 + k]);
}

TEST_CASE("directory dataset skips bad files and shuffles by seed") {
  TempDir dir("data");
  for (int i = 0; i < 6; ++i) write_ppm(dir.path / ("img" + std::to_string(i) + ".ppm"), pattern(10, 9, i));
  write_ppm(dir.path / "small.ppm", pattern(4, 4, 0));
  write_bytes(dir.path / "broken.png", {1, 2, 3});
  write_bytes(dir.path / "notes.txt", {'x'});

  DatasetSpec spec;
  spec.path = dir.path.string();
  spec.count = 0;
  spec.height = 8;
  spec.width = 8;
  std::ostringstream log;
  const Dataset a = load_dataset(spec, &log);
  CHECK(a.images.dim(0) == 6);
  CHECK(a.skipped == 2);
  CHECK(log.str().find("broken.png") != std::string::npos);
  CHECK(log.str().find("small.ppm") != std::string::npos);

  const Dataset b = load_dataset(spec);
  CHECK(a.files == b.files);
  CHECK(a.images.vec() == b.images.vec());
  spec.seed = 2;
  const Dataset c = load_dataset(spec);
  std::vector<std::string> sa = a.files, sc = c.files;
  std::sort(sa.begin(), sa.end());
  std::sort(sc.begin(), sc.end());
  CHECK(sa == sc);
  CHECK(a.files != c.files);

  spec.count = 3;
  CHECK(load_dataset(spec).images.dim(0) == 3);
  spec.crop = false;
  spec.count = 0;
  CHECK_THROWS_AS(load_dataset(spec), std::runtime_error);

  TempDir empty("empty");
  spec.path = empty.path.string();
  CHECK_THROWS_AS(load_dataset(spec), std::runtime_error);
}

TEST_CASE("empty config gives desk defaults") {
  const ExperimentConfig c = parse_config("");
  CHECK(echo_config(c) == echo_config(desk_defaults()));
  CHECK(c.seed == 1u);
  CHECK(c.preset == "desk");
  CHECK(c.data.height == 16);
  CHECK(c.data.width == 16);
  CHECK(c.data.count == 256);
  CHECK(c.train.snr_train == 15.0);
  CHECK(c.train.batch_size == 16);
  CHECK(c.train.learning_rate == 1e-3);
  CHECK(c.model.link.channel.ds == 0.2);
  CHECK(c.model.link.channel.pn == 0.2);
  CHECK(c.eval_trials == 20);
}

TEST_CASE("config sets fields and labels conditions") {
  const ExperimentConfig c = parse_config(
      "; comment\n[run]\nseed = 7\n[channel]\nprofile = tv\nds = 0.05\npn = 0.05\n"
      "[train]\nsnr_train = 15\n[eval]\nsnrs = 0, 10\nconditions = awgn, tv:0.1:0.02\n");
  CHECK(c.seed == 7u);
  CHECK(c.train.seed == 7u);
  CHECK(c.data.seed == 7u);
  CHECK(condition_label(c.train.channel) == "tv-medium");
  CHECK(c.train.snr_train == 15.0);
  CHECK(c.eval_snrs == std::vector<double>{0, 10});
  const auto tv = parse_condition("tv:0.1:0.02");
  CHECK(tv.name == "tv");
  CHECK(tv.ds == 0.1);
  CHECK(tv.pn == 0.02);
  CHECK(parse_condition("tv-high").ds == 0.5);
  CHECK(parse_condition("tv-high").pn == 0.2);
  CHECK_THROWS_AS(parse_condition("tv-extreme"), std::invalid_argument);
}

TEST_CASE("config errors carry line and suggestion") {
  try {
    parse_config("[run]\nseed = 3\n\n[train]\nlearnig_rate = 0.01\n", "x.ini");
    FAIL("accepted a misspelled key");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("x.ini:5") != std::string::npos);
    CHECK(msg.find("learnig_rate") != std::string::npos);
    CHECK(msg.find("train.learning_rate") != std::string::npos);
  }
  try {
    parse_config("[run]\nseed = 3\n[train\n", "y.ini");
    FAIL("accepted a malformed header");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("y.ini:3") != std::string::npos);
  }
  try {
    parse_config("[train]\n\nbatch_size = many\n", "z.ini");
    FAIL("accepted a non-numeric value");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("z.ini:3") != std::string::npos);
    CHECK(msg.find("train.batch_size") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[sensors]\nx = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[eval]\ntrials = 0\n"), std::invalid_argument);
  CHECK(edit_distance("kitten", "sitting") == 3u);
  CHECK(edit_distance("", "abc") == 3u);
}

TEST_CASE("echo replays identically") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const std::string once = echo_config(preset_config(name));
    CHECK(echo_config(parse_config(once)) == once);
  }
  const std::string custom = echo_config(parse_config("[run]\npreset = cifar10\nseed = 9\n[eval]\nrates = 0.25, 0.5\n"));
  CHECK(echo_config(parse_config(custom)) == custom);
  CHECK(custom.find("rates = 0.25, 0.5") != std::string::npos);
  CHECK(config_keys().size() >= 40u);
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(INFINITY) == "inf");
}

TEST_CASE("checkpoint round trip is byte identical") {
  TempDir dir("ckpt");
  const ExperimentConfig cfg = fast_config(dir.path / "unused");
  const pipeline::ClearModel model(cfg.model);
  nn::ParamSet ps;
  model.init(ps, 3);
  auto& st = ps.adam()[ps.names().front()];
  st.m = nn::Tensor(ps.get(ps.names().front()).value().shape(), 0.25f);
  st.v = nn::Tensor(ps.get(ps.names().front()).value().shape(), 0.5f);
  st.step = 12;
  const CheckpointMeta meta{echo_config(cfg), 0xfedcba9876543210ull, 77};

  save_checkpoint(dir.path / "a.clr", ps, meta);
  nn::ParamSet loaded;
  const CheckpointMeta back = load_checkpoint(dir.path / "a.clr", loaded);
  CHECK(back.config == meta.config);
  CHECK(back.seed == meta.seed);
  CHECK(back.cursor == meta.cursor);
  CHECK(loaded.names() == ps.names());
  CHECK(loaded.adam().at(ps.names().front()).step == 12);
  save_checkpoint(dir.path / "b.clr", loaded, back);
  CHECK(read_bytes(dir.path / "a.clr") == read_bytes(dir.path / "b.clr"));

  auto bytes = read_bytes(dir.path / "a.clr");
  auto bumped = bytes;
  bumped[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  nn::ParamSet scratch;
  CHECK_THROWS_AS(decode_checkpoint(bumped, scratch), std::runtime_error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  nn::ParamSet scratch2;
  CHECK_THROWS_AS(decode_checkpoint(truncated, scratch2), std::runtime_error);
  auto magic = bytes;
  magic[0] = 'X';
  nn::ParamSet scratch3;
  CHECK_THROWS_AS(decode_checkpoint(magic, scratch3), std::runtime_error);

  nn::ParamSet wrong;
  wrong.add(ps.names().front(), nn::Tensor({1}));
  CHECK_THROWS(decode_checkpoint(bytes, wrong));
  try {
    load_checkpoint(dir.path / "missing.clr", scratch);
    FAIL("loaded a missing file");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("missing.clr") != std::string::npos);
  }
}

TEST_CASE("eval csv is sorted and stable") {
  pipeline::EvalResult one;
  one.cells = {cell("awgn", 0, 10, 25.5)};
  const std::string s = eval_csv(one);
  CHECK(std::count(s.begin(), s.end(), '\n') == 2);
  CHECK(s == "snr_test_db,channel,ds,pn,rate,trials,mean_psnr_db,mean_mse\n10,awgn,0,0,0.6,1,25.5,0.00281838\n");

  pipeline::EvalResult grid;
  for (const char* name : {"awgn", "rayleigh", "tv"})
    for (double snr : {0.0, 10.0, 20.0, 30.0}) grid.cells.push_back(cell(name, name[0] == 't' ? 0.05 : 0.0, snr, 10 + snr));
  const std::string sorted = eval_csv(grid);
  std::mt19937 g(4);
  std::shuffle(grid.cells.begin(), grid.cells.end(), g);
  CHECK(eval_csv(grid) == sorted);
  std::istringstream lines(sorted);
  std::string line;
  std::getline(lines, line);
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  REQUIRE(rows.size() == 12u);
  CHECK(rows.front().rfind("0,awgn,", 0) == 0);
  CHECK(rows[3].rfind("30,awgn,", 0) == 0);
  CHECK(rows.back().rfind("30,tv,0.05,", 0) == 0);

  TempDir dir("csv");
  emit_csv(grid, dir.path / "a.csv");
  emit_csv(grid, dir.path / "b.csv");
  CHECK(read_string(dir.path / "a.csv") == sorted);
  CHECK(read_bytes(dir.path / "a.csv") == read_bytes(dir.path / "b.csv"));
}

TEST_CASE("paired t-test matches reference values") {
  const std::vector<double> a{21.3, 22.1, 20.8, 23.4, 22.0, 21.7, 22.9, 21.1, 20.5, 22.6};
  const std::vector<double> b{21.0, 21.5, 20.9, 22.8, 21.2, 21.9, 22.1, 20.7, 20.6, 21.8};
  const PairedTest t = paired_t_test(a, b);
  CHECK(t.n == 10);
  CHECK(t.t == doctest::Approx(3.0950648090384774).epsilon(1e-12));
  CHECK(t.p_value == doctest::Approx(0.006412095658542003).epsilon(1e-9));
  const PairedTest u = paired_t_test({1, 2, 3, 4, 5}, {1.5, 2.1, 3.9, 4.2, 5.8});
  CHECK(u.t == doctest::Approx(-3.1622776601683804).epsilon(1e-12));
  CHECK(u.p_value == doctest::Approx(0.9829452884162952).epsilon(1e-9));
  CHECK(paired_t_test({2, 3}, {1, 2}).p_value == 0.0);
  CHECK_THROWS_AS(paired_t_test({1}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(paired_t_test({1, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("fnv1a reference vectors") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("run_experiment writes reproducible artifacts") {
  TempDir root("run");
  const ExperimentConfig cfg = fast_config(root.path / "a");
  RunOptions opts;
  const RunSummary s = run_experiment(cfg, opts);
  for (const char* f : {"config.ini", "run.log", "checkpoint.clr", "loss_steps.csv", "loss_epochs.csv", "eval.csv",
                        "manifest.json"})
    CHECK_MESSAGE(fs::exists(s.out / f), f);
  CHECK(s.eval.cells.size() == 4u);
  CHECK(read_string(s.out / "config.ini") == echo_config(cfg));
  CHECK(read_string(s.out / "manifest.json").find(s.config_hash) != std::string::npos);

  CHECK_THROWS_AS(run_experiment(cfg, opts), std::runtime_error);

  RunOptions again;
  again.out = root.path / "b";
  run_experiment(cfg, again);
  CHECK(read_bytes(root.path / "a" / "eval.csv") == read_bytes(root.path / "b" / "eval.csv"));
  CHECK(read_bytes(root.path / "a" / "checkpoint.clr") == read_bytes(root.path / "b" / "checkpoint.clr"));
  CHECK(read_bytes(root.path / "a" / "loss_steps.csv") == read_bytes(root.path / "b" / "loss_steps.csv"));

  const std::string before = read_string(root.path / "a" / "eval.csv");
  run_evaluation(root.path / "a", std::nullopt, 2);
  CHECK(read_string(root.path / "a" / "eval.csv") == before);

  opts.force = true;
  opts.ablate = true;
  const RunSummary ab = run_experiment(cfg, opts);
  REQUIRE(ab.eval_no_addm.has_value());
  const std::string abl = read_string(ab.out / "ablation.csv");
  CHECK(std::count(abl.begin(), abl.end(), '\n') == 5);
  CHECK(fs::exists(ab.out / "eval_no_addm.csv"));
  CHECK(read_bytes(ab.out / "checkpoint.clr") == read_bytes(root.path / "b" / "checkpoint.clr"));
  CHECK(read_string(ab.out / "eval.csv") == before);
}
