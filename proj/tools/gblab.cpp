// Command-line front end: dataset generation, training, evaluation, sweeps,
// and report rendering over the library's JSON configs.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gblab/checkpoint.hpp"
#include "gblab/data.hpp"
#include "gblab/errors.hpp"
#include "gblab/harness.hpp"
#include "gblab/metrics.hpp"
#include "gblab/rng.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw gblab::IoError("cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object-centric generative model workbench"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, data_dir, csv_path, out_path;
  int64_t num_images = 300;
  int64_t num = 0, min_sprites = 1, max_sprites = 4, val_count = -1;
  uint64_t seed = 1;

  CLI::App* cmd_train = app.add_subcommand("train", "run one training job from a JSON run config");
  cmd_train->add_option("--config", config_path, "run config JSON file")->required();

  CLI::App* cmd_eval =
      app.add_subcommand("eval", "evaluate a checkpoint on a dataset's validation split");
  cmd_eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  cmd_eval->add_option("--data", data_dir, "dataset directory")->required();
  cmd_eval->add_option("--num-images", num_images, "validation images to evaluate")->required();

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "run a grid of training jobs and write a CSV");
  cmd_sweep->add_option("--config", config_path, "sweep config JSON file")->required();
  cmd_sweep->add_option("--out", csv_path, "output CSV path")->required();

  CLI::App* cmd_report =
      app.add_subcommand("report", "render plots, a table, and panels from a sweep CSV");
  cmd_report->add_option("--csv", csv_path, "sweep results CSV")->required();
  cmd_report->add_option("--out", out_path, "output directory")->required();

  CLI::App* cmd_gen =
      app.add_subcommand("gen-data", "generate a sprite dataset with ground-truth masks");
  cmd_gen->add_option("--out", out_path, "dataset directory")->required();
  cmd_gen->add_option("--num", num, "number of scenes")->required();
  cmd_gen->add_option("--seed", seed, "generation seed");
  cmd_gen->add_option("--min-sprites", min_sprites, "minimum sprites per scene");
  cmd_gen->add_option("--max-sprites", max_sprites, "maximum sprites per scene");
  cmd_gen->add_option("--val-count", val_count, "validation images (default num/5)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_train) {
      gblab::RunConfig cfg = gblab::RunConfig::from_json_text(slurp(config_path));
      gblab::TrainResult result = gblab::train(cfg);
      std::cout << "trained " << result.steps << " steps -> " << result.checkpoint_path << "\n";
      if (result.geco.steps_to_goal.has_value())
        std::cout << "goal reached at step " << *result.geco.steps_to_goal << "\n";
      else
        std::cout << "goal not reached; final err_ema "
                  << result.geco.err_ema.value_or(std::nan("")) << "\n";
      std::cout << result.final_report.to_json_text(2) << "\n";
    } else if (*cmd_eval) {
      gblab::LoadedCheckpoint ckpt = gblab::read_checkpoint(ckpt_path);
      gblab::Rng rng(0);
      gblab::nn::ParamSet<float> ps;
      gblab::GenesisModel<float> model(ps, ckpt.meta.model, rng, ckpt.meta.image_size);
      gblab::load_into(ckpt, ps);
      gblab::Dataset data = gblab::Dataset::load(data_dir);
      gblab::MetricsReport report = gblab::evaluate(model, data, num_images, /*seed=*/0);
      std::cout << report.to_json_text(2) << "\n";
    } else if (*cmd_sweep) {
      gblab::SweepConfig cfg = gblab::SweepConfig::from_json_text(slurp(config_path));
      std::vector<gblab::SweepResultRow> rows = gblab::sweep(cfg);
      gblab::write_sweep_csv(csv_path, rows);
      std::cout << "wrote " << rows.size() << " rows -> " << csv_path << "\n";
    } else if (*cmd_report) {
      gblab::report(csv_path, out_path);
      std::cout << "report -> " << out_path << "\n";
    } else if (*cmd_gen) {
      gblab::SceneSpec spec;
      spec.min_sprites = min_sprites;
      spec.max_sprites = max_sprites;
      gblab::DatasetManifest manifest = gblab::write_dataset(out_path, num, seed, spec);
      const int64_t val = val_count < 0 ? num / 5 : val_count;
      gblab::save_manifest(out_path, gblab::split(manifest, val));
      std::cout << "wrote " << num << " scenes (" << num - val << " train, " << val
                << " val) -> " << out_path << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
