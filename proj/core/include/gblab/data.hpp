#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gblab/tensor.hpp"

namespace gblab {

enum class SpriteShape { SQUARE, ELLIPSE, TRIANGLE };
std::string to_string(SpriteShape shape);
SpriteShape sprite_shape_from_string(const std::string& name);

// Uniform per-channel colour sampling in [lo, hi].
struct ColorRule {
  std::array<double, 3> lo{0.0, 0.0, 0.0};
  std::array<double, 3> hi{1.0, 1.0, 1.0};
};

// Procedural scene recipe. Sprites are sampled back to front; later sprites
// occlude earlier ones. Edges are hard so instance masks are exact.
struct SceneSpec {
  int64_t min_sprites = 1;
  int64_t max_sprites = 4;
  std::vector<SpriteShape> shapes = {SpriteShape::SQUARE, SpriteShape::ELLIPSE,
                                     SpriteShape::TRIANGLE};
  int64_t min_size = 11;  // sprite diameter, pixels
  int64_t max_size = 21;
  ColorRule palette{{0.15, 0.15, 0.15}, {1.0, 1.0, 1.0}};
  ColorRule background{{0.0, 0.0, 0.0}, {0.35, 0.35, 0.35}};
  bool allow_occlusion = true;
  int64_t image_size = 64;

  void validate() const;
};

struct SpriteMeta {
  SpriteShape shape = SpriteShape::SQUARE;
  std::array<double, 3> color{0, 0, 0};
  double cx = 0, cy = 0;  // centre in pixel coordinates
  double size = 0;        // diameter, pixels
  double angle = 0;       // radians (squares stay axis-aligned)
  double aspect = 1;      // ellipse minor/major ratio
};

struct SpriteScene {
  Tensor<float> image;             // (3,S,S) in [0,1]
  Tensor<int32_t> instance_masks;  // (S,S); 0 background, k+1 = sprites[k]
  std::array<double, 3> background{0, 0, 0};
  std::vector<SpriteMeta> sprites;
  int64_t dropped = 0;  // sprites removed after repeated full occlusion
};

struct DatasetManifest {
  std::string version = "gblab-dataset-1";
  int64_t count = 0;
  int64_t image_size = 64;
  uint64_t seed = 0;
  int64_t train_count = 0;
  int64_t val_count = 0;
  SceneSpec scene_spec;

  std::string to_json_text(int indent = 2) const;
  static DatasetManifest from_json_text(const std::string& text);
};

// Deterministic in (rng_seed, spec): same inputs give a bitwise-equal scene.
SpriteScene generate_scene(uint64_t rng_seed, const SceneSpec& spec);

// Writes manifest.json plus images/NNNNNN.png (RGB) and masks/NNNNNN.png
// (single channel, pixel value = instance label); scene i uses seed xor i.
DatasetManifest write_dataset(const std::string& dir, int64_t n, uint64_t seed,
                              const SceneSpec& spec);

// Marks the trailing val_count indices as the validation partition.
DatasetManifest split(DatasetManifest manifest, int64_t val_count);

void save_manifest(const std::string& dir, const DatasetManifest& manifest);

// Lazy directory-backed handle; pixels are decoded on access.
class Dataset {
 public:
  static Dataset load(const std::string& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::string& dir() const { return dir_; }
  int64_t size() const { return manifest_.count; }
  int64_t train_count() const { return manifest_.train_count; }
  int64_t val_count() const { return manifest_.val_count; }

  Tensor<float> image(int64_t index) const;    // (3,S,S) in [0,1]
  Tensor<int32_t> mask(int64_t index) const;   // (S,S) instance labels

  // The validation partition is the trailing block of indices.
  int64_t train_index(int64_t j) const;
  int64_t val_index(int64_t j) const;

 private:
  std::string dir_;
  DatasetManifest manifest_;
};

}  // namespace gblab
