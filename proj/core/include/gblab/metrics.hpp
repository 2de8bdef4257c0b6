#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gblab/data.hpp"
#include "gblab/genesis.hpp"
#include "gblab/tensor.hpp"

namespace gblab {

// Hard pixel partition: every pixel carries one label in [0, num_labels).
struct Segmentation {
  Tensor<int32_t> labels;  // (H,W)
  int64_t num_labels = 0;

  void validate() const;
};

// Arg-max readout of the mixture masks, one segmentation per batch element;
// ties break toward the lowest component index.
template <typename T>
std::vector<Segmentation> predict_segmentation(const MixtureMasks<T>& masks);

// Adjusted Rand index between two partitions of the same pixels. With
// exclude_background, ground-truth label 0 marks pixels to drop; dropping
// everything raises UndefinedMetric. Identical-in-structure degenerate
// partitions (e.g. both single clusters) score 1.
double ari(const Segmentation& gt, const Segmentation& pred, bool exclude_background = true);

// Mean segmentation covering: mean over ground-truth foreground segments of
// the best intersection-over-union against any predicted segment. Unweighted
// by default; pixel_weighted weights each segment by its area.
double msc(const Segmentation& gt, const Segmentation& pred, bool pixel_weighted = false);

struct MetricsReport {
  double ari_mean = 0;
  double ari_std = 0;
  double msc_mean = 0;
  double msc_std = 0;
  double recon_err_mean = 0;
  int64_t num_images = 0;
  std::vector<double> component_usage;  // mean mask mass per component, sums to 1

  std::string to_json_text(int indent = 2) const;
  static MetricsReport from_json_text(const std::string& text);
};

// Deterministic evaluation on a seeded selection of validation images using
// posterior means (zero latent noise). Standard deviations are population
// statistics across the evaluated images.
template <typename T>
MetricsReport evaluate(GenesisModel<T>& model, const Dataset& data, int64_t num_images,
                       uint64_t seed);

}  // namespace gblab
