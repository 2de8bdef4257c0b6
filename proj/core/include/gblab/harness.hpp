#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gblab/data.hpp"
#include "gblab/genesis.hpp"
#include "gblab/metrics.hpp"
#include "gblab/objective.hpp"

namespace gblab {

// GENESIS trains the full mixture model; VANILLA trains the single-component
// baseline (requires K = 1) through the same loop and objective.
enum class RunMode { GENESIS, VANILLA };
std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& name);

struct GecoConfig {
  double goal = 0.5655;
  double ema_decay = 0.99;
  double step_size = 1e-5;
};

struct OptimiserConfig {
  double learning_rate = 1e-4;
  int64_t batch_size = 32;
  int64_t max_steps = 20000;
};

struct RunConfig {
  std::string dataset_dir;
  GenesisConfig model;
  GecoConfig geco;
  OptimiserConfig optimiser;
  uint64_t seed = 1;
  int64_t eval_every = 1000;
  int64_t eval_images = 300;
  std::string out_dir;
  RunMode mode = RunMode::GENESIS;

  void validate() const;
  std::string to_json_text(int indent = 2) const;
  static RunConfig from_json_text(const std::string& text);
};

struct TrainResult {
  GecoState geco;              // final multiplier state, including steps_to_goal
  MetricsReport final_report;  // evaluation at the last step
  std::string checkpoint_path;
  int64_t steps = 0;
};

// Runs one seeded training job. Artifacts under cfg.out_dir: run_config.json,
// train_log.csv (`step,batch_err,err_ema,beta,loss`), metrics.jsonl (one
// {"step", "report"} line per evaluation), ckpt_latest.gblab at eval points,
// ckpt_final.gblab at completion.
TrainResult train(const RunConfig& cfg);

// One sweep axis: every latent_dim x seed combination under one architecture.
struct SweepAxis {
  ComponentArch architecture = ComponentArch::SYMMETRIC_DC;
  std::vector<int64_t> latent_dims;
  std::vector<uint64_t> seeds;
};

struct SweepConfig {
  RunConfig base;
  std::vector<SweepAxis> grid;

  void validate() const;
  std::string to_json_text(int indent = 2) const;
  static SweepConfig from_json_text(const std::string& text);
};

struct SweepResultRow {
  std::string dataset;
  ComponentArch architecture = ComponentArch::SYMMETRIC_DC;
  int64_t latent_dim = 0;
  uint64_t seed = 0;
  double ari_mean = 0, ari_std = 0, msc_mean = 0, msc_std = 0;
  double recon_err_final = 0;
  int64_t steps_to_goal = -1;  // -1: goal not reached (or run failed)
  bool collapsed = false;
};

extern const char* const kSweepCsvHeader;

// Directory under the sweep output root holding one cell's run artifacts.
std::string sweep_cell_dir(const std::string& dataset, ComponentArch arch, int64_t latent_dim,
                           uint64_t seed);

// Short dataset name used in result rows (basename of the dataset directory).
std::string dataset_name(const std::string& dataset_dir);

// Runs the full grid; one row per (architecture, latent_dim, seed) in grid
// order. A failed cell contributes a row with NaN metrics and continues the
// sweep. GBLAB_THREADS > 1 runs cells in that many worker processes.
std::vector<SweepResultRow> sweep(const SweepConfig& cfg);

void write_sweep_csv(const std::string& path, const std::vector<SweepResultRow>& rows);
std::vector<SweepResultRow> read_sweep_csv(const std::string& path);

// Renders sweep results: per-architecture ARI/MSC and reconstruction-error
// SVG plots, a goal-iteration text table, and qualitative PNG panels for
// rows whose run directories sit next to the CSV.
void report(const std::string& csv_path, const std::string& out_dir);

}  // namespace gblab
