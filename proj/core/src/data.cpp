#include "gblab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "gblab/errors.hpp"
#include "gblab/png_io.hpp"
#include "gblab/rng.hpp"

namespace fs = std::filesystem;

namespace gblab {

std::string to_string(SpriteShape shape) {
  switch (shape) {
    case SpriteShape::SQUARE: return "square";
    case SpriteShape::ELLIPSE: return "ellipse";
    case SpriteShape::TRIANGLE: return "triangle";
  }
  throw InvalidArgument("unknown sprite shape");
}

SpriteShape sprite_shape_from_string(const std::string& name) {
  if (name == "square") return SpriteShape::SQUARE;
  if (name == "ellipse") return SpriteShape::ELLIPSE;
  if (name == "triangle") return SpriteShape::TRIANGLE;
  throw InvalidArgument("unknown sprite shape: " + name);
}

namespace {

void validate_rule(const ColorRule& rule, const char* what) {
  for (int c = 0; c < 3; ++c)
    if (!(rule.lo[c] >= 0 && rule.lo[c] <= rule.hi[c] && rule.hi[c] <= 1))
      throw InvalidArgument(std::string(what) + ": colour rule needs 0 <= lo <= hi <= 1");
}

}  // namespace

void SceneSpec::validate() const {
  if (min_sprites < 1) throw InvalidArgument("scene spec: min_sprites must be >= 1");
  if (max_sprites < min_sprites)
    throw InvalidArgument("scene spec: max_sprites must be >= min_sprites");
  if (shapes.empty()) throw InvalidArgument("scene spec: needs at least one shape");
  if (image_size < 4) throw InvalidArgument("scene spec: image_size must be >= 4");
  if (min_size < 1 || max_size < min_size || max_size > image_size)
    throw InvalidArgument("scene spec: need 1 <= min_size <= max_size <= image_size");
  validate_rule(palette, "scene spec palette");
  validate_rule(background, "scene spec background");
}

namespace {

std::array<double, 3> sample_color(Rng& rng, const ColorRule& rule) {
  std::array<double, 3> c;
  for (int i = 0; i < 3; ++i) c[i] = rng.uniform(rule.lo[i], rule.hi[i]);
  return c;
}

// Sprite colours must stay visibly distinct from the background: at least
// one channel at distance >= 0.1.
std::array<double, 3> sample_sprite_color(Rng& rng, const ColorRule& rule,
                                          const std::array<double, 3>& bg) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::array<double, 3> c = sample_color(rng, rule);
    double dist = 0;
    for (int i = 0; i < 3; ++i) dist = std::max(dist, std::abs(c[i] - bg[i]));
    if (dist >= 0.1) return c;
  }
  throw InvalidArgument("scene spec: palette cannot produce contrast against the background");
}

SpriteMeta sample_sprite(Rng& rng, const SceneSpec& spec, const std::array<double, 3>& bg) {
  SpriteMeta m;
  m.shape = spec.shapes[rng.below(uint64_t(spec.shapes.size()))];
  m.size = rng.uniform(double(spec.min_size), double(spec.max_size));
  m.color = sample_sprite_color(rng, spec.palette, bg);
  m.angle = m.shape == SpriteShape::SQUARE ? 0.0 : rng.uniform(0.0, 2.0 * M_PI);
  m.aspect = m.shape == SpriteShape::ELLIPSE ? rng.uniform(0.5, 1.0) : 1.0;
  const double r = m.size / 2;
  const double lo = r, hi = double(spec.image_size - 1) - r;
  // Oversized sprites pin to the centre so full coverage stays reachable.
  m.cx = lo <= hi ? rng.uniform(lo, hi) : double(spec.image_size - 1) / 2;
  m.cy = lo <= hi ? rng.uniform(lo, hi) : double(spec.image_size - 1) / 2;
  return m;
}

bool inside_sprite(const SpriteMeta& m, double px, double py) {
  const double dx = px - m.cx, dy = py - m.cy;
  const double r = m.size / 2;
  switch (m.shape) {
    case SpriteShape::SQUARE:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case SpriteShape::ELLIPSE: {
      const double ca = std::cos(m.angle), sa = std::sin(m.angle);
      const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
      const double b = r * m.aspect;
      return (u * u) / (r * r) + (v * v) / (b * b) <= 1.0;
    }
    case SpriteShape::TRIANGLE: {
      double vx[3], vy[3];
      for (int i = 0; i < 3; ++i) {
        const double a = m.angle + M_PI / 2 + i * (2.0 * M_PI / 3);
        vx[i] = m.cx + r * std::cos(a);
        vy[i] = m.cy + r * std::sin(a);
      }
      double sign = 0;
      for (int i = 0; i < 3; ++i) {
        const int j = (i + 1) % 3;
        const double cross = (vx[j] - vx[i]) * (py - vy[i]) - (vy[j] - vy[i]) * (px - vx[i]);
        if (cross == 0) continue;
        if (sign == 0)
          sign = cross > 0 ? 1 : -1;
        else if ((cross > 0 ? 1 : -1) != sign)
          return false;
      }
      return true;
    }
  }
  return false;
}

void render(const SceneSpec& spec, const std::array<double, 3>& bg,
            const std::vector<SpriteMeta>& sprites, Tensor<float>& image,
            Tensor<int32_t>& labels, std::vector<int64_t>& visible) {
  const int64_t S = spec.image_size;
  float* img = image.data();
  int32_t* lab = labels.data();
  for (int c = 0; c < 3; ++c)
    for (int64_t p = 0; p < S * S; ++p) img[c * S * S + p] = float(bg[size_t(c)]);
  for (int64_t p = 0; p < S * S; ++p) lab[p] = 0;

  visible.assign(sprites.size(), 0);
  for (size_t k = 0; k < sprites.size(); ++k) {
    const SpriteMeta& m = sprites[k];
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x)
        if (inside_sprite(m, double(x) + 0.5, double(y) + 0.5)) {
          const int64_t p = y * S + x;
          const int32_t old = lab[p];
          if (old > 0) --visible[size_t(old - 1)];
          lab[p] = int32_t(k + 1);
          ++visible[k];
          for (int c = 0; c < 3; ++c) img[c * S * S + p] = float(m.color[size_t(c)]);
        }
  }
}

bool overlaps_any(const SpriteMeta& m, const std::vector<SpriteMeta>& sprites, size_t skip) {
  for (size_t j = 0; j < sprites.size(); ++j) {
    if (j == skip) continue;
    const double dx = m.cx - sprites[j].cx, dy = m.cy - sprites[j].cy;
    const double min_dist = (m.size + sprites[j].size) / 2;
    if (dx * dx + dy * dy < min_dist * min_dist) return true;
  }
  return false;
}

}  // namespace

SpriteScene generate_scene(uint64_t rng_seed, const SceneSpec& spec) {
  spec.validate();
  Rng rng(rng_seed);
  const int64_t S = spec.image_size;

  SpriteScene scene;
  scene.background = sample_color(rng, spec.background);
  const int64_t n =
      spec.min_sprites + int64_t(rng.below(uint64_t(spec.max_sprites - spec.min_sprites + 1)));
  for (int64_t k = 0; k < n; ++k) {
    SpriteMeta m = sample_sprite(rng, spec, scene.background);
    if (!spec.allow_occlusion) {
      int attempts = 0;
      while (overlaps_any(m, scene.sprites, scene.sprites.size()) && ++attempts <= 100)
        m = sample_sprite(rng, spec, scene.background);
      if (attempts > 100) {
        ++scene.dropped;  // no non-overlapping placement found
        continue;
      }
    }
    scene.sprites.push_back(m);
  }

  scene.image = Tensor<float>({3, S, S});
  scene.instance_masks = Tensor<int32_t>({S, S});
  std::vector<int64_t> visible;
  std::vector<int> attempts(scene.sprites.size(), 0);
  for (;;) {
    render(spec, scene.background, scene.sprites, scene.image, scene.instance_masks, visible);
    size_t hidden = scene.sprites.size();
    for (size_t k = 0; k < visible.size(); ++k)
      if (visible[k] == 0) {
        hidden = k;
        break;
      }
    if (hidden == scene.sprites.size()) break;
    if (attempts[hidden]++ < 100) {
      scene.sprites[hidden] = sample_sprite(rng, spec, scene.background);
    } else {
      scene.sprites.erase(scene.sprites.begin() + int64_t(hidden));
      attempts.erase(attempts.begin() + int64_t(hidden));
      ++scene.dropped;  // label ids above the gap shift down on re-render
    }
  }
  return scene;
}

namespace {

nlohmann::json rule_to_json(const ColorRule& rule) {
  return nlohmann::json{{"lo", rule.lo}, {"hi", rule.hi}};
}

ColorRule rule_from_json(const nlohmann::json& j) {
  ColorRule rule;
  rule.lo = j.at("lo").get<std::array<double, 3>>();
  rule.hi = j.at("hi").get<std::array<double, 3>>();
  return rule;
}

nlohmann::json spec_to_json(const SceneSpec& spec) {
  std::vector<std::string> names;
  for (SpriteShape s : spec.shapes) names.push_back(to_string(s));
  return nlohmann::json{{"num_sprites_range", {spec.min_sprites, spec.max_sprites}},
                        {"shapes", names},
                        {"size_range", {spec.min_size, spec.max_size}},
                        {"palette", rule_to_json(spec.palette)},
                        {"background", rule_to_json(spec.background)},
                        {"allow_occlusion", spec.allow_occlusion},
                        {"image_size", spec.image_size}};
}

SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec spec;
  spec.min_sprites = j.at("num_sprites_range").at(0).get<int64_t>();
  spec.max_sprites = j.at("num_sprites_range").at(1).get<int64_t>();
  spec.shapes.clear();
  for (const auto& name : j.at("shapes"))
    spec.shapes.push_back(sprite_shape_from_string(name.get<std::string>()));
  spec.min_size = j.at("size_range").at(0).get<int64_t>();
  spec.max_size = j.at("size_range").at(1).get<int64_t>();
  spec.palette = rule_from_json(j.at("palette"));
  spec.background = rule_from_json(j.at("background"));
  spec.allow_occlusion = j.at("allow_occlusion").get<bool>();
  spec.image_size = j.at("image_size").get<int64_t>();
  return spec;
}

constexpr const char* kManifestKeys[] = {"version", "count", "image_size",
                                         "seed",    "split", "scene_spec"};
constexpr const char* kDatasetVersion = "gblab-dataset-1";

std::string index_name(int64_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06lld.png", static_cast<long long>(i));
  return buf;
}

}  // namespace

std::string DatasetManifest::to_json_text(int indent) const {
  nlohmann::json j;
  j["version"] = version;
  j["count"] = count;
  j["image_size"] = image_size;
  j["seed"] = seed;
  j["split"] = {{"train_count", train_count}, {"val_count", val_count}};
  j["scene_spec"] = spec_to_json(scene_spec);
  return indent < 0 ? j.dump() : j.dump(indent);
}

DatasetManifest DatasetManifest::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("dataset manifest: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("dataset manifest: expected a JSON object");
  for (const char* key : kManifestKeys)
    if (!j.contains(key))
      throw InvalidArgument(std::string("dataset manifest: missing key ") + key);
  for (const auto& item : j.items()) {
    const bool known = std::any_of(std::begin(kManifestKeys), std::end(kManifestKeys),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw InvalidArgument("dataset manifest: unknown key " + item.key());
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<std::string>();
    m.count = j.at("count").get<int64_t>();
    m.image_size = j.at("image_size").get<int64_t>();
    m.seed = j.at("seed").get<uint64_t>();
    m.train_count = j.at("split").at("train_count").get<int64_t>();
    m.val_count = j.at("split").at("val_count").get<int64_t>();
    m.scene_spec = spec_from_json(j.at("scene_spec"));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("dataset manifest: ") + e.what());
  }
  if (m.version != kDatasetVersion)
    throw IncompatibleVersion("dataset manifest version " + m.version + " (expected " +
                              kDatasetVersion + ")");
  if (m.count < 0 || m.train_count < 0 || m.val_count < 0 ||
      m.train_count + m.val_count != m.count)
    throw InvalidArgument("dataset manifest: split does not partition the dataset");
  m.scene_spec.validate();
  return m;
}

void save_manifest(const std::string& dir, const DatasetManifest& manifest) {
  const std::string path = dir + "/manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << manifest.to_json_text(2) << "\n";
  if (!out) throw IoError("short write: " + path);
}

DatasetManifest write_dataset(const std::string& dir, int64_t n, uint64_t seed,
                              const SceneSpec& spec) {
  spec.validate();
  if (n < 1) throw InvalidArgument("write_dataset: need n >= 1");
  std::error_code ec;
  fs::create_directories(dir + "/images", ec);
  if (ec) throw IoError("cannot create " + dir + "/images: " + ec.message());
  fs::create_directories(dir + "/masks", ec);
  if (ec) throw IoError("cannot create " + dir + "/masks: " + ec.message());

  const int64_t S = spec.image_size;
  for (int64_t i = 0; i < n; ++i) {
    SpriteScene scene = generate_scene(seed ^ uint64_t(i), spec);

    ImageU8 rgb{S, S, 3, std::vector<uint8_t>(size_t(S * S * 3))};
    const float* img = scene.image.data();
    for (int64_t y = 0; y < S; ++y)
      for (int64_t x = 0; x < S; ++x)
        for (int64_t c = 0; c < 3; ++c) {
          const float v = img[(c * S + y) * S + x];
          rgb.at(y, x, c) = uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
    write_png(dir + "/images/" + index_name(i), rgb);

    ImageU8 gray{S, S, 1, std::vector<uint8_t>(size_t(S * S))};
    const int32_t* lab = scene.instance_masks.data();
    for (int64_t p = 0; p < S * S; ++p) {
      if (lab[p] < 0 || lab[p] > 255)
        throw IoError("instance label out of 8-bit range in scene " + std::to_string(i));
      gray.pixels[size_t(p)] = uint8_t(lab[p]);
    }
    write_png(dir + "/masks/" + index_name(i), gray);
  }

  DatasetManifest manifest;
  manifest.count = n;
  manifest.image_size = S;
  manifest.seed = seed;
  manifest.train_count = n;
  manifest.val_count = 0;
  manifest.scene_spec = spec;
  save_manifest(dir, manifest);
  return manifest;
}

DatasetManifest split(DatasetManifest manifest, int64_t val_count) {
  if (val_count < 0 || val_count >= manifest.count)
    throw InvalidArgument("split: val_count must lie in [0, count)");
  manifest.val_count = val_count;
  manifest.train_count = manifest.count - val_count;
  return manifest;
}

Dataset Dataset::load(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Dataset ds;
  ds.dir_ = dir;
  ds.manifest_ = DatasetManifest::from_json_text(text);
  return ds;
}

Tensor<float> Dataset::image(int64_t index) const {
  if (index < 0 || index >= manifest_.count)
    throw InvalidArgument("dataset image index out of range");
  const std::string rel = "images/" + index_name(index);
  ImageU8 png = read_png(dir_ + "/" + rel);
  const int64_t S = manifest_.image_size;
  if (png.channels != 3 || png.width != S || png.height != S)
    throw IoError("unexpected image geometry in " + rel);
  Tensor<float> out({3, S, S});
  float* dst = out.data();
  for (int64_t y = 0; y < S; ++y)
    for (int64_t x = 0; x < S; ++x)
      for (int64_t c = 0; c < 3; ++c)
        dst[(c * S + y) * S + x] = float(png.at(y, x, c)) / 255.0f;
  return out;
}

Tensor<int32_t> Dataset::mask(int64_t index) const {
  if (index < 0 || index >= manifest_.count)
    throw InvalidArgument("dataset mask index out of range");
  const std::string rel = "masks/" + index_name(index);
  ImageU8 png = read_png(dir_ + "/" + rel);
  const int64_t S = manifest_.image_size;
  if (png.channels != 1 || png.width != S || png.height != S)
    throw IoError("unexpected mask geometry in " + rel);
  Tensor<int32_t> out({S, S});
  int32_t* dst = out.data();
  for (int64_t p = 0; p < S * S; ++p) dst[p] = int32_t(png.pixels[size_t(p)]);
  return out;
}

int64_t Dataset::train_index(int64_t j) const {
  if (j < 0 || j >= manifest_.train_count)
    throw InvalidArgument("train index out of range");
  return j;
}

int64_t Dataset::val_index(int64_t j) const {
  if (j < 0 || j >= manifest_.val_count) throw InvalidArgument("val index out of range");
  return manifest_.train_count + j;
}

}  // namespace gblab
