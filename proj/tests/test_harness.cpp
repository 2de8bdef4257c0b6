// Training harness: checkpoint durability, run-config parsing, artifact
// layout, bitwise log reproducibility, grid sweeps with worker processes,
// CSV round trips, and report rendering.
#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "doctest.h"
#include "gblab/checkpoint.hpp"
#include "gblab/data.hpp"
#include "gblab/errors.hpp"
#include "gblab/genesis.hpp"
#include "gblab/harness.hpp"
#include "gblab/png_io.hpp"
#include "gblab/rng.hpp"

namespace fs = std::filesystem;
using gblab::CheckpointMeta;
using gblab::ComponentArch;
using gblab::Dataset;
using gblab::GenesisConfig;
using gblab::GenesisModel;
using gblab::IncompatibleVersion;
using gblab::InvalidArgument;
using gblab::IoError;
using gblab::LoadedCheckpoint;
using gblab::Rng;
using gblab::RunConfig;
using gblab::RunMode;
using gblab::SceneSpec;
using gblab::SweepConfig;
using gblab::SweepResultRow;
using gblab::Tensor;
using gblab::TrainResult;
namespace nn = gblab::nn;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("gblab_harness_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

GenesisConfig small_model(int64_t K) {
  GenesisConfig cfg;
  cfg.K = K;
  cfg.mask_latent_dim = 4;
  cfg.component_latent_dim = 3;
  cfg.component_arch = ComponentArch::SYMMETRIC_DC;
  cfg.rnn_hidden = 16;
  cfg.prior_mlp_hidden = 16;
  return cfg;
}

// 16px dataset with 8 train / 4 validation images.
void make_dataset(const std::string& dir, uint64_t seed = 5) {
  SceneSpec spec;
  spec.image_size = 16;
  spec.min_size = 5;
  spec.max_size = 9;
  spec.min_sprites = 1;
  spec.max_sprites = 2;
  gblab::save_manifest(dir, gblab::split(gblab::write_dataset(dir, 12, seed, spec), 4));
}

RunConfig small_run(const std::string& data_dir, const std::string& out_dir) {
  RunConfig cfg;
  cfg.dataset_dir = data_dir;
  cfg.model = small_model(2);
  cfg.optimiser.batch_size = 2;
  cfg.optimiser.max_steps = 6;
  cfg.eval_every = 4;
  cfg.eval_images = 3;
  cfg.seed = 21;
  cfg.out_dir = out_dir;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

bool same_or_both_nan(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

}  // namespace

TEST_CASE("checkpoints round-trip metadata and every tensor bitwise") {
  TempDir tmp("ckpt");
  Rng rng(9);
  nn::ParamSet<float> ps;
  GenesisModel<float> model(ps, small_model(2), rng, 16);

  CheckpointMeta meta;
  meta.model = small_model(2);
  meta.image_size = 16;
  meta.step = 123;
  meta.geco = gblab::geco_init(0.5655);
  meta.geco.beta = 0.25;
  meta.geco.err_ema = 0.6125;
  meta.geco.steps_to_goal = 77;
  const std::string path = tmp.str() + "/model.gblab";
  gblab::write_checkpoint(path, meta, ps);

  LoadedCheckpoint ckpt = gblab::read_checkpoint(path);
  CHECK(ckpt.meta.model.K == 2);
  CHECK(ckpt.meta.model.component_latent_dim == 3);
  CHECK(ckpt.meta.model.component_arch == ComponentArch::SYMMETRIC_DC);
  CHECK(ckpt.meta.image_size == 16);
  CHECK(ckpt.meta.step == 123);
  CHECK(ckpt.meta.geco.beta == 0.25);
  CHECK(ckpt.meta.geco.err_ema.value() == 0.6125);
  CHECK(ckpt.meta.geco.steps_to_goal.value() == 77);
  CHECK(ckpt.meta.geco.goal == 0.5655);

  REQUIRE(ckpt.params.size() == ps.params().size());
  REQUIRE(ckpt.buffers.size() == ps.buffers().size());
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    CHECK(ckpt.params[i].first == ps.params()[i].first);
    const Tensor<float>& got = ckpt.params[i].second;
    const Tensor<float>& want = ps.params()[i].second;
    REQUIRE(got.same_shape(want));
    for (int64_t j = 0; j < got.numel(); ++j) CHECK(got.data()[j] == want.data()[j]);
  }

  // A freshly initialised copy behaves identically once the weights land.
  Rng rng2(1234);
  nn::ParamSet<float> ps2;
  GenesisModel<float> twin(ps2, small_model(2), rng2, 16);
  gblab::load_into(ckpt, ps2);
  Tensor<float> x = Tensor<float>::rand_uniform({1, 3, 16, 16}, rng, 0.0f, 1.0f);
  gblab::ad::Tape<float> ta, tb;
  nn::Binding<float> ba(ta, false), bb(tb, false);
  gblab::ZeroNoise<float> noise;
  const float nll_a = model.forward(ba, x, noise).nll_per_pixel.value().data()[0];
  const float nll_b = twin.forward(bb, x, noise).nll_per_pixel.value().data()[0];
  CHECK(nll_a == nll_b);

  // err_ema / steps_to_goal stay unset through a round trip.
  CheckpointMeta fresh = meta;
  fresh.geco = gblab::geco_init(0.5655);
  gblab::write_checkpoint(path, fresh, ps);
  LoadedCheckpoint again = gblab::read_checkpoint(path);
  CHECK(!again.meta.geco.err_ema.has_value());
  CHECK(!again.meta.geco.steps_to_goal.has_value());
}

TEST_CASE("damaged or mismatched checkpoints are rejected") {
  TempDir tmp("ckpt_bad");
  Rng rng(9);
  nn::ParamSet<float> ps;
  GenesisModel<float> model(ps, small_model(2), rng, 16);
  CheckpointMeta meta;
  meta.model = small_model(2);
  meta.image_size = 16;
  const std::string path = tmp.str() + "/model.gblab";
  gblab::write_checkpoint(path, meta, ps);

  CHECK_THROWS_AS(gblab::read_checkpoint(tmp.str() + "/absent.gblab"), IoError);

  {  // wrong magic
    std::string bytes = slurp(path);
    bytes[0] = 'X';
    std::ofstream(tmp.str() + "/magic.gblab", std::ios::binary) << bytes;
    CHECK_THROWS_AS(gblab::read_checkpoint(tmp.str() + "/magic.gblab"), IncompatibleVersion);
  }
  {  // truncated tensor section
    std::string bytes = slurp(path);
    bytes.resize(bytes.size() - 64);
    std::ofstream(tmp.str() + "/short.gblab", std::ios::binary) << bytes;
    CHECK_THROWS_AS(gblab::read_checkpoint(tmp.str() + "/short.gblab"), IoError);
  }
  {  // corrupt header json
    std::string bytes = slurp(path);
    bytes[16] = '\x01';
    std::ofstream(tmp.str() + "/garbled.gblab", std::ios::binary) << bytes;
    CHECK_THROWS(gblab::read_checkpoint(tmp.str() + "/garbled.gblab"));
  }

  LoadedCheckpoint ckpt = gblab::read_checkpoint(path);
  {  // parameters are shared across slots, so K alone never blocks a load
    Rng r(1);
    nn::ParamSet<float> other;
    GenesisModel<float> m(other, small_model(3), r, 16);
    CHECK_NOTHROW(gblab::load_into(ckpt, other));
  }
  {  // different decoder family: directory names disagree
    GenesisConfig sbd = small_model(2);
    sbd.component_arch = ComponentArch::ASYMMETRIC_SBD;
    Rng r(1);
    nn::ParamSet<float> other;
    GenesisModel<float> m(other, sbd, r, 16);
    CHECK_THROWS_AS(gblab::load_into(ckpt, other), IncompatibleVersion);
  }
  {  // same names, different shapes
    GenesisConfig wider = small_model(2);
    wider.component_latent_dim = 5;
    Rng r(1);
    nn::ParamSet<float> other;
    GenesisModel<float> m(other, wider, r, 16);
    CHECK_THROWS_AS(gblab::load_into(ckpt, other), IncompatibleVersion);
  }
}

TEST_CASE("run config json is strict and validated") {
  RunConfig cfg;
  cfg.dataset_dir = "data";
  cfg.out_dir = "out";
  cfg.model = small_model(2);
  cfg.seed = 77;
  cfg.eval_every = 10;
  cfg.eval_images = 5;
  cfg.mode = RunMode::GENESIS;

  RunConfig back = RunConfig::from_json_text(cfg.to_json_text());
  CHECK(back.dataset_dir == "data");
  CHECK(back.out_dir == "out");
  CHECK(back.model.K == 2);
  CHECK(back.geco.goal == cfg.geco.goal);
  CHECK(back.optimiser.batch_size == cfg.optimiser.batch_size);
  CHECK(back.optimiser.max_steps == cfg.optimiser.max_steps);
  CHECK(back.seed == 77);
  CHECK(back.eval_every == 10);
  CHECK(back.eval_images == 5);
  CHECK(back.mode == RunMode::GENESIS);

  nlohmann::json j = nlohmann::json::parse(cfg.to_json_text());
  {
    nlohmann::json bad = j;
    bad.erase("seed");
    CHECK_THROWS_AS(RunConfig::from_json_text(bad.dump()), InvalidArgument);
  }
  {
    nlohmann::json bad = j;
    bad["momentum"] = 0.9;
    CHECK_THROWS_AS(RunConfig::from_json_text(bad.dump()), InvalidArgument);
  }
  {
    nlohmann::json bad = j;
    bad["mode"] = "TURBO";
    CHECK_THROWS_AS(RunConfig::from_json_text(bad.dump()), InvalidArgument);
  }
  {
    nlohmann::json bad = j;
    bad["optimiser"]["batch_size"] = 0;
    CHECK_THROWS_AS(RunConfig::from_json_text(bad.dump()), InvalidArgument);
  }
  CHECK_THROWS(RunConfig::from_json_text("not json"));
  CHECK_THROWS_AS(RunConfig::from_json_text("[1,2]"), InvalidArgument);

  // The single-component baseline refuses a mixture config.
  RunConfig vanilla = cfg;
  vanilla.mode = RunMode::VANILLA;
  CHECK_THROWS_AS(vanilla.validate(), InvalidArgument);
  vanilla.model = small_model(1);
  CHECK_NOTHROW(vanilla.validate());

  RunConfig bad_geco = cfg;
  bad_geco.geco.ema_decay = 1.0;
  CHECK_THROWS_AS(bad_geco.validate(), InvalidArgument);
  RunConfig bad_eval = cfg;
  bad_eval.eval_every = 0;
  CHECK_THROWS_AS(bad_eval.validate(), InvalidArgument);

  CHECK(gblab::to_string(RunMode::GENESIS) == "GENESIS");
  CHECK(gblab::to_string(RunMode::VANILLA) == "VANILLA");
  CHECK(gblab::run_mode_from_string("VANILLA") == RunMode::VANILLA);
  CHECK_THROWS_AS(gblab::run_mode_from_string("genesis"), InvalidArgument);
}

TEST_CASE("training writes the documented artifacts") {
  TempDir tmp("train");
  const std::string data = tmp.str() + "/data";
  make_dataset(data);
  RunConfig cfg = small_run(data, tmp.str() + "/run");

  TrainResult result = gblab::train(cfg);
  CHECK(result.steps == 6);
  CHECK(result.checkpoint_path == cfg.out_dir + "/ckpt_final.gblab");
  CHECK(result.geco.err_ema.has_value());
  CHECK(result.final_report.num_images == 3);
  CHECK(result.final_report.component_usage.size() == 2);

  RunConfig persisted = RunConfig::from_json_text(slurp(cfg.out_dir + "/run_config.json"));
  CHECK(persisted.seed == cfg.seed);
  CHECK(persisted.optimiser.max_steps == 6);

  std::vector<std::string> log = lines_of(slurp(cfg.out_dir + "/train_log.csv"));
  REQUIRE(log.size() == 7);
  CHECK(log[0] == "step,batch_err,err_ema,beta,loss");
  for (int64_t step = 1; step <= 6; ++step)
    CHECK(log[size_t(step)].rfind(std::to_string(step) + ",", 0) == 0);

  std::vector<std::string> history = lines_of(slurp(cfg.out_dir + "/metrics.jsonl"));
  REQUIRE(history.size() == 2);  // eval_every = 4 fires at 4; completion adds 6
  nlohmann::json first = nlohmann::json::parse(history[0]);
  nlohmann::json last = nlohmann::json::parse(history[1]);
  CHECK(first.at("step") == 4);
  CHECK(last.at("step") == 6);
  gblab::MetricsReport report = gblab::MetricsReport::from_json_text(last.at("report").dump());
  CHECK(report.ari_mean == result.final_report.ari_mean);

  LoadedCheckpoint final_ckpt = gblab::read_checkpoint(cfg.out_dir + "/ckpt_final.gblab");
  CHECK(final_ckpt.meta.step == 6);
  CHECK(final_ckpt.meta.geco.beta == result.geco.beta);
  CHECK(fs::exists(cfg.out_dir + "/ckpt_latest.gblab"));

  // The resident evaluation matches re-evaluating the stored final weights.
  Rng rng(0);
  nn::ParamSet<float> ps;
  GenesisModel<float> model(ps, final_ckpt.meta.model, rng, 16);
  gblab::load_into(final_ckpt, ps);
  Dataset ds = Dataset::load(data);
  gblab::MetricsReport re = gblab::evaluate(model, ds, 3, cfg.seed);
  CHECK(re.ari_mean == doctest::Approx(result.final_report.ari_mean).epsilon(1e-12));
  CHECK(re.recon_err_mean == doctest::Approx(result.final_report.recon_err_mean).epsilon(1e-12));

  RunConfig hungry = cfg;
  hungry.out_dir = tmp.str() + "/run2";
  hungry.eval_images = 5;  // only 4 validation images exist
  CHECK_THROWS_AS(gblab::train(hungry), InvalidArgument);
}

TEST_CASE("identical seeds reproduce the training log bitwise") {
  TempDir tmp("repro");
  const std::string data = tmp.str() + "/data";
  make_dataset(data);

  RunConfig a = small_run(data, tmp.str() + "/a");
  RunConfig b = small_run(data, tmp.str() + "/b");
  RunConfig c = small_run(data, tmp.str() + "/c");
  c.seed = a.seed + 1;
  gblab::train(a);
  gblab::train(b);
  gblab::train(c);

  CHECK(slurp(a.out_dir + "/train_log.csv") == slurp(b.out_dir + "/train_log.csv"));
  CHECK(slurp(a.out_dir + "/metrics.jsonl") == slurp(b.out_dir + "/metrics.jsonl"));
  CHECK(slurp(a.out_dir + "/train_log.csv") != slurp(c.out_dir + "/train_log.csv"));
}

TEST_CASE("vanilla mode trains the single-component baseline") {
  TempDir tmp("vanilla");
  const std::string data = tmp.str() + "/data";
  make_dataset(data);
  RunConfig cfg = small_run(data, tmp.str() + "/run");
  cfg.model = small_model(1);
  cfg.mode = RunMode::VANILLA;
  cfg.optimiser.max_steps = 4;
  cfg.eval_every = 4;

  TrainResult result = gblab::train(cfg);
  CHECK(result.steps == 4);
  REQUIRE(result.final_report.component_usage.size() == 1);
  CHECK(result.final_report.component_usage[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(lines_of(slurp(cfg.out_dir + "/train_log.csv")).size() == 5);
}

TEST_CASE("sweeps cover the grid in order and survive a failing cell") {
  TempDir tmp("sweep");
  const std::string data = tmp.str() + "/data";
  make_dataset(data);

  SweepConfig sc;
  sc.base = small_run(data, tmp.str() + "/grid");
  sc.base.optimiser.max_steps = 3;
  sc.base.eval_every = 3;
  sc.base.eval_images = 2;
  sc.base.geco.goal = 0.01;  // unreachable: per pixel-channel NLL is floored near 0.56
  sc.grid.push_back({ComponentArch::SYMMETRIC_DC, {2, 3}, {7, 8}});

  // JSON round trip.
  SweepConfig back = SweepConfig::from_json_text(sc.to_json_text());
  CHECK(back.grid.size() == 1);
  CHECK(back.grid[0].latent_dims == std::vector<int64_t>{2, 3});
  CHECK(back.grid[0].seeds == std::vector<uint64_t>{7, 8});
  {
    nlohmann::json bad = nlohmann::json::parse(sc.to_json_text());
    bad["extra"] = 1;
    CHECK_THROWS_AS(SweepConfig::from_json_text(bad.dump()), InvalidArgument);
  }
  {
    SweepConfig dup = sc;
    dup.grid.push_back({ComponentArch::SYMMETRIC_DC, {2}, {7}});
    CHECK_THROWS_AS(dup.validate(), InvalidArgument);
  }
  {
    SweepConfig empty = sc;
    empty.grid.clear();
    CHECK_THROWS_AS(empty.validate(), InvalidArgument);
  }

  const std::string ds_name = gblab::dataset_name(data);
  CHECK(ds_name == "data");
  CHECK(gblab::sweep_cell_dir(ds_name, ComponentArch::SYMMETRIC_DC, 2, 7) ==
        "data_SYMMETRIC_DC_L2_s7");

  // Sabotage one cell: a plain file where its run directory must go.
  fs::create_directories(tmp.str() + "/grid");
  std::ofstream(tmp.str() + "/grid/data_SYMMETRIC_DC_L3_s7") << "roadblock";

  std::vector<SweepResultRow> rows = gblab::sweep(sc);
  REQUIRE(rows.size() == 4);
  const std::pair<int64_t, uint64_t> expect[] = {{2, 7}, {2, 8}, {3, 7}, {3, 8}};
  for (size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].dataset == "data");
    CHECK(rows[i].architecture == ComponentArch::SYMMETRIC_DC);
    CHECK(rows[i].latent_dim == expect[i].first);
    CHECK(rows[i].seed == expect[i].second);
  }
  for (size_t i : {size_t(0), size_t(1), size_t(3)}) {
    CHECK(std::isfinite(rows[i].ari_mean));
    CHECK(std::isfinite(rows[i].recon_err_final));
    CHECK(rows[i].steps_to_goal == -1);  // goal 0.01 is unreachable
    const std::string cell = tmp.str() + "/grid/" +
                             gblab::sweep_cell_dir("data", ComponentArch::SYMMETRIC_DC,
                                                   rows[i].latent_dim, rows[i].seed);
    CHECK(fs::exists(cell + "/result.json"));
    CHECK(fs::exists(cell + "/ckpt_final.gblab"));
  }
  CHECK(std::isnan(rows[2].ari_mean));
  CHECK(std::isnan(rows[2].recon_err_final));
  CHECK(rows[2].steps_to_goal == -1);
  CHECK(!rows[2].collapsed);

  // Worker processes produce the same rows.
  SweepConfig par = sc;
  par.base.out_dir = tmp.str() + "/grid_par";
  fs::create_directories(par.base.out_dir);
  std::ofstream(par.base.out_dir + "/data_SYMMETRIC_DC_L3_s7") << "roadblock";
  ::setenv("GBLAB_THREADS", "2", 1);
  std::vector<SweepResultRow> par_rows = gblab::sweep(par);
  ::unsetenv("GBLAB_THREADS");
  REQUIRE(par_rows.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(par_rows[i].latent_dim == rows[i].latent_dim);
    CHECK(par_rows[i].seed == rows[i].seed);
    CHECK(same_or_both_nan(par_rows[i].ari_mean, rows[i].ari_mean));
    CHECK(same_or_both_nan(par_rows[i].msc_mean, rows[i].msc_mean));
    CHECK(same_or_both_nan(par_rows[i].recon_err_final, rows[i].recon_err_final));
    CHECK(par_rows[i].steps_to_goal == rows[i].steps_to_goal);
    CHECK(par_rows[i].collapsed == rows[i].collapsed);
  }

  // CSV round trip, then a report over the sequential results.
  const std::string csv = tmp.str() + "/grid/results.csv";
  gblab::write_sweep_csv(csv, rows);
  std::vector<std::string> csv_lines = lines_of(slurp(csv));
  REQUIRE(csv_lines.size() == 5);
  CHECK(csv_lines[0] == gblab::kSweepCsvHeader);
  std::vector<SweepResultRow> parsed = gblab::read_sweep_csv(csv);
  REQUIRE(parsed.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(parsed[i].dataset == rows[i].dataset);
    CHECK(parsed[i].architecture == rows[i].architecture);
    CHECK(parsed[i].latent_dim == rows[i].latent_dim);
    CHECK(parsed[i].seed == rows[i].seed);
    if (std::isnan(rows[i].ari_mean)) {
      CHECK(std::isnan(parsed[i].ari_mean));
    } else {
      CHECK(parsed[i].ari_mean == doctest::Approx(rows[i].ari_mean).epsilon(1e-4));
    }
    CHECK(parsed[i].steps_to_goal == rows[i].steps_to_goal);
    CHECK(parsed[i].collapsed == rows[i].collapsed);
  }

  const std::string out = tmp.str() + "/report";
  gblab::report(csv, out);
  CHECK(fs::exists(out + "/metrics_data_SYMMETRIC_DC.svg"));
  CHECK(fs::exists(out + "/recon_data_SYMMETRIC_DC.svg"));
  const std::string table = slurp(out + "/table.txt");
  CHECK(table.find("not reached") != std::string::npos);
  CHECK(table.find("SYMMETRIC_DC") != std::string::npos);
  const std::string svg = slurp(out + "/metrics_data_SYMMETRIC_DC.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("ARI") != std::string::npos);
  CHECK(svg.find("MSC") != std::string::npos);

  // Panels exist exactly for the cells whose run directories hold weights;
  // layout is rows of [input | reconstruction | K masked components].
  CHECK(fs::exists(out + "/panel_data_SYMMETRIC_DC_L2_s7.png"));
  CHECK(fs::exists(out + "/panel_data_SYMMETRIC_DC_L2_s8.png"));
  CHECK(fs::exists(out + "/panel_data_SYMMETRIC_DC_L3_s8.png"));
  CHECK(!fs::exists(out + "/panel_data_SYMMETRIC_DC_L3_s7.png"));
  gblab::ImageU8 panel = gblab::read_png(out + "/panel_data_SYMMETRIC_DC_L2_s7.png");
  CHECK(panel.channels == 3);
  CHECK(panel.width == 4 * 16 + 5 * 2);   // input, recon, two components
  CHECK(panel.height == 3 * 16 + 4 * 2);  // three validation rows
}

TEST_CASE("sweep csv parse failures carry line numbers") {
  TempDir tmp("csv");
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(tmp.str() + "/" + name) << body;
    return tmp.str() + "/" + name;
  };
  const std::string header = gblab::kSweepCsvHeader;
  const std::string good =
      "toys,SYMMETRIC_DC,4,1,0.5,0.01,0.6,0.02,0.57,1200,false\n";

  CHECK_THROWS_AS(gblab::read_sweep_csv(tmp.str() + "/absent.csv"), IoError);
  CHECK_THROWS_WITH_AS(gblab::read_sweep_csv(write("h.csv", "wrong,header\n" + good)),
                       doctest::Contains(":1:"), IoError);
  CHECK_THROWS_WITH_AS(
      gblab::read_sweep_csv(write("f.csv", header + "\ntoys,SYMMETRIC_DC,4,1,0.5\n")),
      doctest::Contains(":2:"), IoError);
  CHECK_THROWS_WITH_AS(
      gblab::read_sweep_csv(write(
          "n.csv", header + "\n" + good + "toys,SYMMETRIC_DC,4,1,zap,0.01,0.6,0.02,0.57,12,false\n")),
      doctest::Contains(":3:"), IoError);
  CHECK_THROWS_WITH_AS(
      gblab::read_sweep_csv(write(
          "b.csv", header + "\ntoys,SYMMETRIC_DC,4,1,0.5,0.01,0.6,0.02,0.57,12,maybe\n")),
      doctest::Contains(":2:"), IoError);
  CHECK_THROWS_WITH_AS(
      gblab::read_sweep_csv(write(
          "a.csv", header + "\ntoys,PYRAMID,4,1,0.5,0.01,0.6,0.02,0.57,12,false\n")),
      doctest::Contains(":2:"), IoError);

  // NaN metrics survive a write/read cycle.
  SweepResultRow nan_row;
  nan_row.dataset = "toys";
  nan_row.architecture = ComponentArch::ASYMMETRIC_SBD;
  nan_row.latent_dim = 8;
  nan_row.seed = 3;
  nan_row.ari_mean = nan_row.ari_std = std::nan("");
  nan_row.msc_mean = nan_row.msc_std = std::nan("");
  nan_row.recon_err_final = std::nan("");
  const std::string path = tmp.str() + "/nan.csv";
  gblab::write_sweep_csv(path, {nan_row});
  std::vector<SweepResultRow> parsed = gblab::read_sweep_csv(path);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].architecture == ComponentArch::ASYMMETRIC_SBD);
  CHECK(std::isnan(parsed[0].ari_mean));
  CHECK(parsed[0].steps_to_goal == -1);

  // A header-only file reports cleanly and an empty report is refused.
  const std::string empty = write("empty.csv", header + "\n");
  CHECK(gblab::read_sweep_csv(empty).empty());
  CHECK_THROWS_AS(gblab::report(empty, tmp.str() + "/rep"), InvalidArgument);
}
