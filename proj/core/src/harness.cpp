#include "gblab/harness.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gblab/checkpoint.hpp"
#include "gblab/errors.hpp"
#include "gblab/nn.hpp"
#include "gblab/png_io.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;

namespace gblab {

std::string to_string(RunMode mode) {
  return mode == RunMode::VANILLA ? "VANILLA" : "GENESIS";
}

RunMode run_mode_from_string(const std::string& name) {
  if (name == "GENESIS") return RunMode::GENESIS;
  if (name == "VANILLA") return RunMode::VANILLA;
  throw InvalidArgument("unknown run mode: " + name);
}

void RunConfig::validate() const {
  if (dataset_dir.empty()) throw InvalidArgument("run config: dataset_dir is empty");
  if (out_dir.empty()) throw InvalidArgument("run config: out_dir is empty");
  model.validate();
  if (!(geco.goal == geco.goal)) throw InvalidArgument("run config: geco goal is NaN");
  if (!(geco.ema_decay > 0 && geco.ema_decay < 1))
    throw InvalidArgument("run config: geco ema_decay must lie in (0,1)");
  if (!(geco.step_size > 0)) throw InvalidArgument("run config: geco step_size must be > 0");
  if (!(optimiser.learning_rate > 0))
    throw InvalidArgument("run config: learning_rate must be > 0");
  if (optimiser.batch_size < 1) throw InvalidArgument("run config: batch_size must be >= 1");
  if (optimiser.max_steps < 1) throw InvalidArgument("run config: max_steps must be >= 1");
  if (eval_every < 1) throw InvalidArgument("run config: eval_every must be >= 1");
  if (eval_images < 1) throw InvalidArgument("run config: eval_images must be >= 1");
  if (mode == RunMode::VANILLA && model.K != 1)
    throw InvalidArgument("run config: single-component mode requires K = 1");
}

namespace {
constexpr const char* kRunKeys[] = {"dataset_dir", "model",      "geco",
                                    "optimiser",   "seed",       "eval_every",
                                    "eval_images", "out_dir",    "mode"};
}

std::string RunConfig::to_json_text(int indent) const {
  nlohmann::json j;
  j["dataset_dir"] = dataset_dir;
  j["model"] = nlohmann::json::parse(model.to_json_text());
  j["geco"] = {{"goal", geco.goal},
               {"ema_decay", geco.ema_decay},
               {"step_size", geco.step_size}};
  j["optimiser"] = {{"learning_rate", optimiser.learning_rate},
                    {"batch_size", optimiser.batch_size},
                    {"max_steps", optimiser.max_steps}};
  j["seed"] = seed;
  j["eval_every"] = eval_every;
  j["eval_images"] = eval_images;
  j["out_dir"] = out_dir;
  j["mode"] = to_string(mode);
  return indent < 0 ? j.dump() : j.dump(indent);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("run config: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("run config: expected a JSON object");
  for (const char* key : kRunKeys)
    if (!j.contains(key)) throw InvalidArgument(std::string("run config: missing key ") + key);
  for (const auto& item : j.items()) {
    const bool known = std::any_of(std::begin(kRunKeys), std::end(kRunKeys),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw InvalidArgument("run config: unknown key " + item.key());
  }
  RunConfig cfg;
  try {
    cfg.dataset_dir = j.at("dataset_dir").get<std::string>();
    cfg.model = GenesisConfig::from_json_text(j.at("model").dump());
    cfg.geco.goal = j.at("geco").at("goal").get<double>();
    cfg.geco.ema_decay = j.at("geco").at("ema_decay").get<double>();
    cfg.geco.step_size = j.at("geco").at("step_size").get<double>();
    cfg.optimiser.learning_rate = j.at("optimiser").at("learning_rate").get<double>();
    cfg.optimiser.batch_size = j.at("optimiser").at("batch_size").get<int64_t>();
    cfg.optimiser.max_steps = j.at("optimiser").at("max_steps").get<int64_t>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.eval_every = j.at("eval_every").get<int64_t>();
    cfg.eval_images = j.at("eval_images").get<int64_t>();
    cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.mode = run_mode_from_string(j.at("mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("run config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  openblas_set_num_threads(1);  // sequential kernels keep logs bitwise reproducible
  Dataset ds = Dataset::load(cfg.dataset_dir);
  if (ds.train_count() < 1) throw InvalidArgument("train: dataset has no training images");
  if (cfg.eval_images > ds.val_count())
    throw InvalidArgument("train: eval_images (" + std::to_string(cfg.eval_images) +
                          ") exceeds the validation partition (" +
                          std::to_string(ds.val_count()) + ")");
  const int64_t S = ds.manifest().image_size;

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.out_dir + ": " + ec.message());
  {
    std::ofstream out(cfg.out_dir + "/run_config.json", std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + cfg.out_dir + "/run_config.json");
    out << cfg.to_json_text(2) << "\n";
  }

  // All randomness descends from cfg.seed: weight init consumes the master
  // stream, minibatch sampling and latent noise get forked streams.
  Rng master(cfg.seed);
  nn::ParamSet<float> ps;
  GenesisModel<float> model(ps, cfg.model, master, S);
  Rng batch_rng = master.fork(1);
  Rng noise_rng = master.fork(2);
  RngNoise<float> noise(noise_rng);
  nn::Adam<float> opt(ps, float(cfg.optimiser.learning_rate));
  GecoState geco = geco_init(cfg.geco.goal, cfg.geco.ema_decay, cfg.geco.step_size);

  std::vector<Tensor<float>> cache(size_t(ds.train_count()));
  auto train_image = [&](int64_t j) -> const Tensor<float>& {
    Tensor<float>& slot = cache[size_t(j)];
    if (!slot.defined()) slot = ds.image(ds.train_index(j));
    return slot;
  };

  std::ofstream log(cfg.out_dir + "/train_log.csv", std::ios::trunc);
  if (!log) throw IoError("cannot open for writing: " + cfg.out_dir + "/train_log.csv");
  log << "step,batch_err,err_ema,beta,loss\n";
  std::ofstream history(cfg.out_dir + "/metrics.jsonl", std::ios::trunc);
  if (!history) throw IoError("cannot open for writing: " + cfg.out_dir + "/metrics.jsonl");

  const int64_t B = cfg.optimiser.batch_size;
  Tensor<float> batch({B, 3, S, S});
  TrainResult result;

  for (int64_t step = 1; step <= cfg.optimiser.max_steps; ++step) {
    for (int64_t b = 0; b < B; ++b) {
      const Tensor<float>& img =
          train_image(int64_t(batch_rng.below(uint64_t(ds.train_count()))));
      std::memcpy(batch.data() + b * 3 * S * S, img.data(), sizeof(float) * size_t(3 * S * S));
    }

    ad::Tape<float> tape;
    nn::Binding<float> bind(tape, true);
    ForwardOutput<float> out = cfg.mode == RunMode::VANILLA
                                   ? model.vanilla_forward(bind, batch, noise)
                                   : model.forward(bind, batch, noise);
    ad::Var<float> loss = total_loss(out.nll_per_pixel, out.kl_mask, out.kl_component, geco);
    const double loss_v = double(loss.value().data()[0]);
    const double batch_err = double(out.nll_per_pixel.value().data()[0]);
    if (!std::isfinite(loss_v))
      throw DivergenceError("non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    opt.step(bind);
    geco = geco_step(geco, batch_err, step);

    char line[192];
    std::snprintf(line, sizeof(line), "%lld,%.8g,%.8g,%.8g,%.8g\n",
                  static_cast<long long>(step), batch_err, *geco.err_ema, geco.beta, loss_v);
    log << line;

    if (step % cfg.eval_every == 0 || step == cfg.optimiser.max_steps) {
      result.final_report = evaluate(model, ds, cfg.eval_images, cfg.seed);
      nlohmann::json entry;
      entry["step"] = step;
      entry["report"] = nlohmann::json::parse(result.final_report.to_json_text(-1));
      history << entry.dump() << "\n";
      history.flush();
      log.flush();
      write_checkpoint(cfg.out_dir + "/ckpt_latest.gblab",
                       CheckpointMeta{cfg.model, S, step, geco}, ps);
    }
  }

  result.geco = geco;
  result.steps = cfg.optimiser.max_steps;
  result.checkpoint_path = cfg.out_dir + "/ckpt_final.gblab";
  write_checkpoint(result.checkpoint_path,
                   CheckpointMeta{cfg.model, S, cfg.optimiser.max_steps, geco}, ps);
  return result;
}

// ---------------------------------------------------------------------------
// Sweep

void SweepConfig::validate() const {
  base.validate();
  if (grid.empty()) throw InvalidArgument("sweep config: grid is empty");
  std::set<std::tuple<std::string, int64_t, uint64_t>> seen;
  for (const SweepAxis& axis : grid) {
    if (axis.latent_dims.empty())
      throw InvalidArgument("sweep config: an axis has no latent_dims");
    if (axis.seeds.empty()) throw InvalidArgument("sweep config: an axis has no seeds");
    for (int64_t dim : axis.latent_dims) {
      if (dim < 1) throw InvalidArgument("sweep config: latent_dims must be >= 1");
      for (uint64_t seed : axis.seeds)
        if (!seen.insert({to_string(axis.architecture), dim, seed}).second)
          throw InvalidArgument("sweep config: duplicate (architecture, latent_dim, seed) cell");
    }
  }
}

namespace {
constexpr const char* kSweepKeys[] = {"base", "grid"};
}

std::string SweepConfig::to_json_text(int indent) const {
  nlohmann::json j;
  j["base"] = nlohmann::json::parse(base.to_json_text());
  j["grid"] = nlohmann::json::array();
  for (const SweepAxis& axis : grid)
    j["grid"].push_back({{"architecture", to_string(axis.architecture)},
                         {"latent_dims", axis.latent_dims},
                         {"seeds", axis.seeds}});
  return indent < 0 ? j.dump() : j.dump(indent);
}

SweepConfig SweepConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("sweep config: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("sweep config: expected a JSON object");
  for (const char* key : kSweepKeys)
    if (!j.contains(key)) throw InvalidArgument(std::string("sweep config: missing key ") + key);
  for (const auto& item : j.items()) {
    const bool known = std::any_of(std::begin(kSweepKeys), std::end(kSweepKeys),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw InvalidArgument("sweep config: unknown key " + item.key());
  }
  SweepConfig cfg;
  try {
    cfg.base = RunConfig::from_json_text(j.at("base").dump());
    for (const auto& axis_json : j.at("grid")) {
      SweepAxis axis;
      axis.architecture =
          component_arch_from_string(axis_json.at("architecture").get<std::string>());
      axis.latent_dims = axis_json.at("latent_dims").get<std::vector<int64_t>>();
      axis.seeds = axis_json.at("seeds").get<std::vector<uint64_t>>();
      cfg.grid.push_back(std::move(axis));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("sweep config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

const char* const kSweepCsvHeader =
    "dataset,architecture,latent_dim,seed,ari_mean,ari_std,msc_mean,msc_std,"
    "recon_err_final,steps_to_goal,collapsed";

std::string dataset_name(const std::string& dataset_dir) {
  fs::path p = fs::path(dataset_dir).lexically_normal();
  std::string name = p.filename().string();
  if (name.empty() || name == ".") name = p.parent_path().filename().string();
  return name.empty() ? dataset_dir : name;
}

std::string sweep_cell_dir(const std::string& dataset, ComponentArch arch, int64_t latent_dim,
                           uint64_t seed) {
  return dataset + "_" + to_string(arch) + "_L" + std::to_string(latent_dim) + "_s" +
         std::to_string(seed);
}

namespace {

nlohmann::json row_to_json(const SweepResultRow& row) {
  nlohmann::json j;
  j["dataset"] = row.dataset;
  j["architecture"] = to_string(row.architecture);
  j["latent_dim"] = row.latent_dim;
  j["seed"] = row.seed;
  j["ari_mean"] = row.ari_mean;
  j["ari_std"] = row.ari_std;
  j["msc_mean"] = row.msc_mean;
  j["msc_std"] = row.msc_std;
  j["recon_err_final"] = row.recon_err_final;
  j["steps_to_goal"] = row.steps_to_goal;
  j["collapsed"] = row.collapsed;
  return j;
}

SweepResultRow row_from_json(const nlohmann::json& j) {
  SweepResultRow row;
  row.dataset = j.at("dataset").get<std::string>();
  row.architecture = component_arch_from_string(j.at("architecture").get<std::string>());
  row.latent_dim = j.at("latent_dim").get<int64_t>();
  row.seed = j.at("seed").get<uint64_t>();
  auto num = [&](const char* key) {
    const nlohmann::json& v = j.at(key);
    return v.is_null() ? std::nan("") : v.get<double>();
  };
  row.ari_mean = num("ari_mean");
  row.ari_std = num("ari_std");
  row.msc_mean = num("msc_mean");
  row.msc_std = num("msc_std");
  row.recon_err_final = num("recon_err_final");
  row.steps_to_goal = j.at("steps_to_goal").get<int64_t>();
  row.collapsed = j.at("collapsed").get<bool>();
  return row;
}

SweepResultRow failure_row(SweepResultRow stub) {
  const double nan = std::nan("");
  stub.ari_mean = stub.ari_std = stub.msc_mean = stub.msc_std = nan;
  stub.recon_err_final = nan;
  stub.steps_to_goal = -1;
  stub.collapsed = false;
  return stub;
}

SweepResultRow run_cell(const RunConfig& cfg, SweepResultRow row) {
  TrainResult r = train(cfg);
  row.ari_mean = r.final_report.ari_mean;
  row.ari_std = r.final_report.ari_std;
  row.msc_mean = r.final_report.msc_mean;
  row.msc_std = r.final_report.msc_std;
  row.recon_err_final = r.geco.err_ema.value_or(std::nan(""));
  row.steps_to_goal = r.geco.steps_to_goal.value_or(-1);
  double top = 0;
  for (double u : r.final_report.component_usage) top = std::max(top, u);
  row.collapsed = top > 0.95;
  return row;
}

void write_row_json(const std::string& path, const SweepResultRow& row) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    std::fprintf(stderr, "cannot record sweep row at %s\n", path.c_str());
    return;
  }
  out << row_to_json(row).dump() << "\n";
}

int64_t worker_count() {
  const char* env = std::getenv("GBLAB_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long long v = std::strtoll(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) return 1;
  return std::min<int64_t>(v, 64);
}

}  // namespace

std::vector<SweepResultRow> sweep(const SweepConfig& cfg) {
  cfg.validate();
  openblas_set_num_threads(1);  // also required before forking workers

  struct Cell {
    RunConfig run;
    SweepResultRow stub;
  };
  const std::string dataset = dataset_name(cfg.base.dataset_dir);
  std::vector<Cell> cells;
  for (const SweepAxis& axis : cfg.grid)
    for (int64_t dim : axis.latent_dims)
      for (uint64_t seed : axis.seeds) {
        Cell cell;
        cell.run = cfg.base;
        cell.run.model.component_arch = axis.architecture;
        cell.run.model.component_latent_dim = dim;
        cell.run.seed = seed;
        cell.run.out_dir =
            cfg.base.out_dir + "/" + sweep_cell_dir(dataset, axis.architecture, dim, seed);
        cell.stub.dataset = dataset;
        cell.stub.architecture = axis.architecture;
        cell.stub.latent_dim = dim;
        cell.stub.seed = seed;
        cells.push_back(std::move(cell));
      }

  std::error_code ec;
  fs::create_directories(cfg.base.out_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.base.out_dir + ": " + ec.message());

  std::vector<SweepResultRow> rows(cells.size());
  const int64_t workers = worker_count();

  if (workers <= 1) {
    for (size_t i = 0; i < cells.size(); ++i) {
      try {
        rows[i] = run_cell(cells[i].run, cells[i].stub);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "sweep cell %s failed: %s\n",
                     cells[i].run.out_dir.c_str(), e.what());
        rows[i] = failure_row(cells[i].stub);
      }
      write_row_json(cells[i].run.out_dir + "/result.json", rows[i]);
    }
    return rows;
  }

  // Process-per-cell execution: a crashing cell cannot take the sweep down,
  // and results come back through result.json files.
  std::map<pid_t, size_t> active;
  size_t next = 0;
  std::vector<bool> ok(cells.size(), false);
  auto reap = [&](bool block) {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, block ? 0 : WNOHANG);
    if (pid <= 0) return false;
    auto it = active.find(pid);
    if (it == active.end()) return true;
    ok[it->second] = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    active.erase(it);
    return true;
  };
  while (next < cells.size() || !active.empty()) {
    while (next < cells.size() && int64_t(active.size()) < workers) {
      fs::create_directories(cells[next].run.out_dir, ec);  // before fork, for result.json
      const pid_t pid = fork();
      if (pid < 0) throw IoError("fork failed while scheduling sweep cells");
      if (pid == 0) {
        int code = 0;
        try {
          SweepResultRow row = run_cell(cells[next].run, cells[next].stub);
          write_row_json(cells[next].run.out_dir + "/result.json", row);
        } catch (const std::exception& e) {
          std::fprintf(stderr, "sweep cell %s failed: %s\n",
                       cells[next].run.out_dir.c_str(), e.what());
          code = 1;
        }
        _exit(code);
      }
      active.emplace(pid, next);
      ++next;
    }
    if (!active.empty()) reap(true);
  }

  for (size_t i = 0; i < cells.size(); ++i) {
    const std::string path = cells[i].run.out_dir + "/result.json";
    if (!ok[i] || !fs::exists(path)) {
      rows[i] = failure_row(cells[i].stub);
      write_row_json(path, rows[i]);
      continue;
    }
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      rows[i] = row_from_json(nlohmann::json::parse(text));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "sweep cell %s: unreadable result: %s\n",
                   cells[i].run.out_dir.c_str(), e.what());
      rows[i] = failure_row(cells[i].stub);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

void write_sweep_csv(const std::string& path, const std::vector<SweepResultRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << kSweepCsvHeader << "\n";
  for (const SweepResultRow& row : rows) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%s,%lld,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%lld,%s\n",
                  row.dataset.c_str(), to_string(row.architecture).c_str(),
                  static_cast<long long>(row.latent_dim),
                  static_cast<unsigned long long>(row.seed), row.ari_mean, row.ari_std,
                  row.msc_mean, row.msc_std, row.recon_err_final,
                  static_cast<long long>(row.steps_to_goal),
                  row.collapsed ? "true" : "false");
    out << buf;
  }
  if (!out) throw IoError("short write: " + path);
}

std::vector<SweepResultRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  int64_t lineno = 0;
  if (!std::getline(in, line)) throw IoError(path + ":1: empty csv");
  ++lineno;
  if (line != kSweepCsvHeader)
    throw IoError(path + ":1: unexpected csv header (expected `" +
                  std::string(kSweepCsvHeader) + "`)");

  std::vector<SweepResultRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() != 11)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected 11 fields, got " +
                    std::to_string(fields.size()));
    try {
      SweepResultRow row;
      row.dataset = fields[0];
      row.architecture = component_arch_from_string(fields[1]);
      row.latent_dim = std::stoll(fields[2]);
      row.seed = std::stoull(fields[3]);
      row.ari_mean = std::stod(fields[4]);
      row.ari_std = std::stod(fields[5]);
      row.msc_mean = std::stod(fields[6]);
      row.msc_std = std::stod(fields[7]);
      row.recon_err_final = std::stod(fields[8]);
      row.steps_to_goal = std::stoll(fields[9]);
      if (fields[10] == "true") row.collapsed = true;
      else if (fields[10] == "false") row.collapsed = false;
      else throw InvalidArgument("collapsed must be true or false");
      rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report

namespace {

double vec_mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / double(v.size());
}

double vec_std(const std::vector<double>& v) {
  if (v.empty()) return 0;
  const double m = vec_mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size()));
}

struct PlotPoint {
  double x = 0, y = 0, err = 0;
};

struct PlotSeries {
  std::string label;
  std::string color;
  std::vector<PlotPoint> pts;  // x carries the raw latent dimension
};

// Minimal self-contained SVG line plot; x is laid out on a log2 axis with a
// tick per distinct latent dimension.
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::string& ylabel, const std::vector<PlotSeries>& series) {
  const double W = 640, H = 420, L = 70, R = 20, T = 46, Bm = 54;
  std::vector<double> xs;
  double ymin = 1e300, ymax = -1e300;
  for (const PlotSeries& s : series)
    for (const PlotPoint& p : s.pts) {
      if (!std::isfinite(p.y)) continue;
      xs.push_back(p.x);
      ymin = std::min(ymin, p.y - p.err);
      ymax = std::max(ymax, p.y + p.err);
    }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  if (xs.empty()) {
    xs = {1};
    ymin = 0;
    ymax = 1;
  }
  if (ymin == ymax) {
    ymin -= 0.05;
    ymax += 0.05;
  } else {
    const double pad = 0.06 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
  }
  const double lx0 = std::log2(xs.front()), lx1 = std::log2(xs.back());
  const double span = lx1 > lx0 ? lx1 - lx0 : 1.0;
  auto px = [&](double x) { return L + (std::log2(x) - lx0) / span * (W - L - R); };
  auto py = [&](double y) { return H - Bm - (y - ymin) / (ymax - ymin) * (H - T - Bm); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"15\">" << title << "</text>\n";
  // Axes.
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - Bm
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - Bm << "\" x2=\"" << W - R << "\" y2=\""
      << H - Bm << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = ymin + (ymax - ymin) * i / 5.0;
    char label[32];
    std::snprintf(label, sizeof(label), "%.3g", y);
    svg << "<line x1=\"" << L - 4 << "\" y1=\"" << py(y) << "\" x2=\"" << L << "\" y2=\""
        << py(y) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << L - 8 << "\" y=\"" << py(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << label
        << "</text>\n"
        << "<line x1=\"" << L << "\" y1=\"" << py(y) << "\" x2=\"" << W - R << "\" y2=\""
        << py(y) << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
  }
  for (double x : xs)
    svg << "<line x1=\"" << px(x) << "\" y1=\"" << H - Bm << "\" x2=\"" << px(x) << "\" y2=\""
        << H - Bm + 4 << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << px(x) << "\" y=\"" << H - Bm + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << int64_t(x) << "</text>\n";
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">latent dimension"
      << "</text>\n"
      << "<text x=\"18\" y=\"" << (T + H - Bm) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\""
      << " transform=\"rotate(-90 18 " << (T + H - Bm) / 2 << ")\">" << ylabel << "</text>\n";

  double legend_x = L + 12;
  for (const PlotSeries& s : series) {
    std::ostringstream pts;
    for (const PlotPoint& p : s.pts)
      if (std::isfinite(p.y)) pts << px(p.x) << "," << py(p.y) << " ";
    svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"1.5\"/>\n";
    for (const PlotPoint& p : s.pts) {
      if (!std::isfinite(p.y)) continue;
      if (p.err > 0)
        svg << "<line x1=\"" << px(p.x) << "\" y1=\"" << py(p.y - p.err) << "\" x2=\""
            << px(p.x) << "\" y2=\"" << py(p.y + p.err) << "\" stroke=\"" << s.color
            << "\" stroke-width=\"1\"/>\n";
      svg << "<circle cx=\"" << px(p.x) << "\" cy=\"" << py(p.y) << "\" r=\"3\" fill=\""
          << s.color << "\"/>\n";
    }
    svg << "<rect x=\"" << legend_x << "\" y=\"" << T - 12 << "\" width=\"10\" height=\"10\""
        << " fill=\"" << s.color << "\"/>\n"
        << "<text x=\"" << legend_x + 14 << "\" y=\"" << T - 3
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label << "</text>\n";
    legend_x += 14 + 10 * double(s.label.size()) + 16;
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << svg.str();
}

// Horizontal concatenation cell for the qualitative grids.
void blit(ImageU8& canvas, int64_t x0, int64_t y0, const std::vector<float>& rgb, int64_t S) {
  for (int64_t y = 0; y < S; ++y)
    for (int64_t x = 0; x < S; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const float v = rgb[size_t((c * S + y) * S + x)];
        canvas.at(y0 + y, x0 + x, c) =
            uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
}

bool render_panel(const fs::path& cell_dir, const std::string& out_png) {
  const fs::path ckpt_path = cell_dir / "ckpt_final.gblab";
  const fs::path cfg_path = cell_dir / "run_config.json";
  if (!fs::exists(ckpt_path) || !fs::exists(cfg_path)) return false;

  std::ifstream cfg_in(cfg_path);
  std::string cfg_text((std::istreambuf_iterator<char>(cfg_in)),
                       std::istreambuf_iterator<char>());
  const RunConfig cfg = RunConfig::from_json_text(cfg_text);
  LoadedCheckpoint ckpt = read_checkpoint(ckpt_path.string());

  Rng rng(0);
  nn::ParamSet<float> ps;
  GenesisModel<float> model(ps, ckpt.meta.model, rng, ckpt.meta.image_size);
  load_into(ckpt, ps);
  Dataset ds = Dataset::load(cfg.dataset_dir);
  if (ds.val_count() < 1 || ds.manifest().image_size != ckpt.meta.image_size) return false;

  const int64_t S = ckpt.meta.image_size;
  const int64_t K = ckpt.meta.model.K;
  const int64_t n = std::min<int64_t>(3, ds.val_count());
  const int64_t pad = 2, cols = 2 + K;
  ImageU8 canvas{cols * S + (cols + 1) * pad, n * S + (n + 1) * pad, 3, {}};
  canvas.pixels.assign(size_t(canvas.width * canvas.height * 3), 255);

  for (int64_t i = 0; i < n; ++i) {
    Tensor<float> x = ds.image(ds.val_index(i)).reshape({1, 3, S, S});
    ad::Tape<float> tape;
    nn::Binding<float> bind(tape, false);
    ZeroNoise<float> noise;
    ForwardOutput<float> out = model.forward(bind, x, noise);

    const int64_t y0 = pad + i * (S + pad);
    std::vector<float> cell(size_t(3 * S * S));
    std::memcpy(cell.data(), x.data(), sizeof(float) * cell.size());
    blit(canvas, pad, y0, cell, S);  // column 0: input

    const float* pi = out.masks.pi.data();
    const float* mu = out.appearances.data();
    std::vector<float> recon(size_t(3 * S * S), 0.0f);
    for (int64_t k = 0; k < K; ++k)
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t p = 0; p < S * S; ++p)
          recon[size_t(c * S * S + p)] += pi[k * S * S + p] * mu[(k * 3 + c) * S * S + p];
    blit(canvas, pad + (S + pad), y0, recon, S);  // column 1: reconstruction

    for (int64_t k = 0; k < K; ++k) {  // masked appearance per component
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t p = 0; p < S * S; ++p)
          cell[size_t(c * S * S + p)] = pi[k * S * S + p] * mu[(k * 3 + c) * S * S + p];
      blit(canvas, pad + (k + 2) * (S + pad), y0, cell, S);
    }
  }
  write_png(out_png, canvas);
  return true;
}

std::string fmt_mean_std(double mean, double sd, const char* unit) {
  char buf[96];
  if (!std::isfinite(mean)) return "n/a";
  std::snprintf(buf, sizeof(buf), "%.4f +- %.4f%s", mean, sd, unit);
  return buf;
}

}  // namespace

void report(const std::string& csv_path, const std::string& out_dir) {
  const std::vector<SweepResultRow> rows = read_sweep_csv(csv_path);
  if (rows.empty()) throw InvalidArgument("report: csv has no data rows");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  // (dataset, architecture) -> latent_dim -> rows
  std::map<std::pair<std::string, std::string>, std::map<int64_t, std::vector<const SweepResultRow*>>>
      groups;
  for (const SweepResultRow& row : rows)
    groups[{row.dataset, to_string(row.architecture)}][row.latent_dim].push_back(&row);

  for (const auto& [key, by_dim] : groups) {
    const auto& [dataset, arch] = key;
    PlotSeries ari{"ARI", "#1f77b4", {}}, msc{"MSC", "#d62728", {}};
    PlotSeries err{"reconstruction error", "#2ca02c", {}};
    for (const auto& [dim, cell_rows] : by_dim) {
      std::vector<double> a, m, e;
      for (const SweepResultRow* r : cell_rows) {
        if (std::isfinite(r->ari_mean)) a.push_back(r->ari_mean);
        if (std::isfinite(r->msc_mean)) m.push_back(r->msc_mean);
        if (std::isfinite(r->recon_err_final)) e.push_back(r->recon_err_final);
      }
      if (!a.empty()) ari.pts.push_back({double(dim), vec_mean(a), vec_std(a)});
      if (!m.empty()) msc.pts.push_back({double(dim), vec_mean(m), vec_std(m)});
      if (!e.empty()) err.pts.push_back({double(dim), vec_mean(e), vec_std(e)});
    }
    write_svg_plot(out_dir + "/metrics_" + dataset + "_" + arch + ".svg",
                   "Segmentation vs component capacity (" + dataset + ", " + arch + ")",
                   "score", {ari, msc});
    write_svg_plot(out_dir + "/recon_" + dataset + "_" + arch + ".svg",
                   "Reconstruction error vs component capacity (" + dataset + ", " + arch + ")",
                   "per pixel-channel NLL", {err});
  }

  // Goal-iteration table; unreached cells fall back to the final error.
  {
    std::ofstream table(out_dir + "/table.txt", std::ios::trunc);
    if (!table) throw IoError("cannot open for writing: " + out_dir + "/table.txt");
    table << "goal iterations by component capacity (unreached cells show final error)\n\n";
    char head[160];
    std::snprintf(head, sizeof(head), "%-12s %-16s %6s %6s  %-26s %s\n", "dataset",
                  "architecture", "latent", "seeds", "steps_to_goal", "final_err");
    table << head;
    for (const auto& [key, by_dim] : groups)
      for (const auto& [dim, cell_rows] : by_dim) {
        std::vector<double> reached, errs;
        for (const SweepResultRow* r : cell_rows) {
          if (r->steps_to_goal >= 0) reached.push_back(double(r->steps_to_goal));
          if (std::isfinite(r->recon_err_final)) errs.push_back(r->recon_err_final);
        }
        std::string goal_col;
        if (reached.empty()) {
          goal_col = "not reached";
        } else {
          char buf[64];
          std::snprintf(buf, sizeof(buf), "%.0f +- %.0f (%zu/%zu)", vec_mean(reached),
                        vec_std(reached), reached.size(), cell_rows.size());
          goal_col = buf;
        }
        char line[256];
        std::snprintf(line, sizeof(line), "%-12s %-16s %6lld %6zu  %-26s %s\n",
                      key.first.c_str(), key.second.c_str(), static_cast<long long>(dim),
                      cell_rows.size(), goal_col.c_str(),
                      fmt_mean_std(vec_mean(errs), vec_std(errs), "").c_str());
        table << line;
      }
  }

  // Qualitative panels for rows whose run directories sit beside the CSV.
  const fs::path csv_dir = fs::path(csv_path).parent_path();
  for (const SweepResultRow& row : rows) {
    const std::string cell =
        sweep_cell_dir(row.dataset, row.architecture, row.latent_dim, row.seed);
    try {
      render_panel(csv_dir / cell, out_dir + "/panel_" + cell + ".png");
    } catch (const std::exception& e) {
      std::fprintf(stderr, "panel for %s skipped: %s\n", cell.c_str(), e.what());
    }
  }
}

}  // namespace gblab
