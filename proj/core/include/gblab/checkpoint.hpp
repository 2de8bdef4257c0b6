#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gblab/genesis.hpp"
#include "gblab/nn.hpp"
#include "gblab/objective.hpp"
#include "gblab/tensor.hpp"

namespace gblab {

// Everything needed to resume or evaluate a run besides the weights.
struct CheckpointMeta {
  GenesisConfig model;
  int64_t image_size = 64;
  int64_t step = 0;
  GecoState geco;
};

// On-disk format: magic "GBLAB1", a little-endian u64 header length, a JSON
// header (metadata plus an ordered tensor directory), then raw float32
// little-endian blobs in directory order, params before buffers.
void write_checkpoint(const std::string& path, const CheckpointMeta& meta,
                      const nn::ParamSet<float>& ps);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor<float>>> params;
  std::vector<std::pair<std::string, Tensor<float>>> buffers;
};

LoadedCheckpoint read_checkpoint(const std::string& path);

// Copies stored tensors into an already-constructed parameter set. The two
// directories must agree exactly on names and shapes.
void load_into(const LoadedCheckpoint& ckpt, nn::ParamSet<float>& ps);

}  // namespace gblab
