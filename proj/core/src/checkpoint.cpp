#include "gblab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "gblab/errors.hpp"

namespace gblab {
namespace {

constexpr char kMagic[6] = {'G', 'B', 'L', 'A', 'B', '1'};

nlohmann::json geco_to_json(const GecoState& s) {
  nlohmann::json j;
  j["beta"] = s.beta;
  j["err_ema"] = s.err_ema ? nlohmann::json(*s.err_ema) : nlohmann::json(nullptr);
  j["goal"] = s.goal;
  j["ema_decay"] = s.ema_decay;
  j["step_size"] = s.step_size;
  j["beta_min"] = s.beta_min;
  j["beta_max"] = s.beta_max;
  j["steps_to_goal"] =
      s.steps_to_goal ? nlohmann::json(*s.steps_to_goal) : nlohmann::json(nullptr);
  return j;
}

GecoState geco_from_json(const nlohmann::json& j) {
  GecoState s;
  s.beta = j.at("beta").get<double>();
  if (!j.at("err_ema").is_null()) s.err_ema = j.at("err_ema").get<double>();
  s.goal = j.at("goal").get<double>();
  s.ema_decay = j.at("ema_decay").get<double>();
  s.step_size = j.at("step_size").get<double>();
  s.beta_min = j.at("beta_min").get<double>();
  s.beta_max = j.at("beta_max").get<double>();
  if (!j.at("steps_to_goal").is_null())
    s.steps_to_goal = j.at("steps_to_goal").get<int64_t>();
  return s;
}

nlohmann::json directory(const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : tensors) list.push_back({{"name", name}, {"shape", t.shape()}});
  return list;
}

void write_blob(std::ofstream& out, const Tensor<float>& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            std::streamsize(size_t(t.numel()) * sizeof(float)));
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointMeta& meta,
                      const nn::ParamSet<float>& ps) {
  nlohmann::json header;
  header["model"] = nlohmann::json::parse(meta.model.to_json_text());
  header["image_size"] = meta.image_size;
  header["step"] = meta.step;
  header["geco"] = geco_to_json(meta.geco);
  header["params"] = directory(ps.params());
  header["buffers"] = directory(ps.buffers());
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), std::streamsize(text.size()));
  for (const auto& [name, t] : ps.params()) write_blob(out, t);
  for (const auto& [name, t] : ps.buffers()) write_blob(out, t);
  if (!out) throw IoError("short write: " + path);
}

namespace {

std::vector<std::pair<std::string, Tensor<float>>> read_section(std::ifstream& in,
                                                                const nlohmann::json& dir,
                                                                const std::string& path) {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& entry : dir) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            std::streamsize(size_t(t.numel()) * sizeof(float)));
    if (!in) throw IoError("truncated tensor data (" + name + ") in " + path);
    out.emplace_back(name, std::move(t));
  }
  return out;
}

}  // namespace

LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IncompatibleVersion("not a GBLAB1 checkpoint: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw IoError("corrupt header length in " + path);
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  if (!in) throw IoError("truncated header in " + path);

  nlohmann::json header;
  LoadedCheckpoint ckpt;
  try {
    header = nlohmann::json::parse(text);
    ckpt.meta.model = GenesisConfig::from_json_text(header.at("model").dump());
    ckpt.meta.image_size = header.at("image_size").get<int64_t>();
    ckpt.meta.step = header.at("step").get<int64_t>();
    ckpt.meta.geco = geco_from_json(header.at("geco"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  ckpt.params = read_section(in, header.at("params"), path);
  ckpt.buffers = read_section(in, header.at("buffers"), path);
  return ckpt;
}

namespace {

void copy_section(const std::vector<std::pair<std::string, Tensor<float>>>& stored,
                  const std::vector<std::pair<std::string, Tensor<float>>>& live,
                  nn::ParamSet<float>& ps, const char* what) {
  if (stored.size() != live.size())
    throw IncompatibleVersion(std::string("checkpoint ") + what +
                              " directory does not match the model");
  for (const auto& [name, t] : stored) {
    Tensor<float>* dst = ps.find(name);
    if (dst == nullptr)
      throw IncompatibleVersion("checkpoint tensor " + name + " is unknown to the model");
    if (dst->shape() != t.shape())
      throw IncompatibleVersion("checkpoint tensor " + name + " has shape " +
                                shape_str(t.shape()) + ", model expects " +
                                shape_str(dst->shape()));
    std::memcpy(dst->data(), t.data(), size_t(t.numel()) * sizeof(float));
  }
}

}  // namespace

void load_into(const LoadedCheckpoint& ckpt, nn::ParamSet<float>& ps) {
  copy_section(ckpt.params, ps.params(), ps, "param");
  copy_section(ckpt.buffers, ps.buffers(), ps, "buffer");
}

}  // namespace gblab
