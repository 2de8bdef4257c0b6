// Sprite-scene generator, PNG codec, and dataset persistence: determinism,
// partition invariants, quantisation bounds, and the on-disk layout contract.
#include <zlib.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "doctest.h"
#include "gblab/data.hpp"
#include "gblab/errors.hpp"
#include "gblab/png_io.hpp"
#include "gblab/rng.hpp"

namespace fs = std::filesystem;
using gblab::ColorRule;
using gblab::Dataset;
using gblab::DatasetManifest;
using gblab::ImageU8;
using gblab::IncompatibleVersion;
using gblab::InvalidArgument;
using gblab::IoError;
using gblab::Rng;
using gblab::SceneSpec;
using gblab::SpriteScene;
using gblab::SpriteShape;
using gblab::Tensor;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("gblab_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

template <typename D>
bool same_values(const Tensor<D>& a, const Tensor<D>& b) {
  if (a.numel() != b.numel()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

// Minimal PNG encoder with a chosen per-row filter, used as an independent
// producer to exercise the reader's filter reconstruction.
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

void chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& body) {
  put_u32(out, uint32_t(body.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), body.begin(), body.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + start, uInt(out.size() - start));
  put_u32(out, crc);
}

int paeth_ref(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

void write_filtered_png(const std::string& path, const ImageU8& img, uint8_t filter) {
  const int64_t stride = img.width * img.channels, bpp = img.channels;
  std::vector<uint8_t> raw;
  for (int64_t y = 0; y < img.height; ++y) {
    raw.push_back(filter);
    for (int64_t i = 0; i < stride; ++i) {
      const int cur = img.pixels[size_t(y * stride + i)];
      const int left = i >= bpp ? img.pixels[size_t(y * stride + i - bpp)] : 0;
      const int above = y > 0 ? img.pixels[size_t((y - 1) * stride + i)] : 0;
      const int corner = (y > 0 && i >= bpp) ? img.pixels[size_t((y - 1) * stride + i - bpp)] : 0;
      int enc = cur;
      switch (filter) {
        case 0: break;
        case 1: enc = cur - left; break;
        case 2: enc = cur - above; break;
        case 3: enc = cur - (left + above) / 2; break;
        case 4: enc = cur - paeth_ref(left, above, corner); break;
      }
      raw.push_back(uint8_t(enc & 0xff));
    }
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<uint8_t> idat(bound);
  REQUIRE(compress2(idat.data(), &bound, raw.data(), uLong(raw.size()), 9) == Z_OK);
  idat.resize(bound);

  std::vector<uint8_t> ihdr;
  put_u32(ihdr, uint32_t(img.width));
  put_u32(ihdr, uint32_t(img.height));
  ihdr.push_back(8);
  ihdr.push_back(img.channels == 1 ? 0 : 2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  std::vector<uint8_t> file = {137, 80, 78, 71, 13, 10, 26, 10};
  chunk(file, "IHDR", ihdr);
  chunk(file, "IDAT", idat);
  chunk(file, "IEND", {});
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(file.data()), std::streamsize(file.size()));
}

ImageU8 random_image(int64_t w, int64_t h, int64_t c, Rng& rng) {
  ImageU8 img{w, h, c, std::vector<uint8_t>(size_t(w * h * c))};
  for (auto& px : img.pixels) px = uint8_t(rng.below(256));
  return img;
}

}  // namespace

TEST_CASE("png codec round-trips rgb and grayscale exactly") {
  TempDir tmp("png");
  Rng rng(5);
  for (int64_t channels : {1, 3}) {
    ImageU8 img = random_image(13, 9, channels, rng);
    const std::string path = tmp.str() + "/rt.png";
    gblab::write_png(path, img);
    ImageU8 back = gblab::read_png(path);
    CHECK(back.width == 13);
    CHECK(back.height == 9);
    CHECK(back.channels == channels);
    CHECK(back.pixels == img.pixels);
  }
  CHECK_THROWS_AS(gblab::read_png(tmp.str() + "/absent.png"), IoError);

  // Corrupt a byte inside the IDAT payload: the crc check must notice.
  ImageU8 img = random_image(8, 8, 3, rng);
  const std::string path = tmp.str() + "/bad.png";
  gblab::write_png(path, img);
  std::vector<uint8_t> bytes = slurp(path);
  bytes[bytes.size() - 20] ^= 0xff;
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  CHECK_THROWS_AS(gblab::read_png(path), IoError);
}

TEST_CASE("png reader reconstructs every scanline filter") {
  TempDir tmp("filters");
  Rng rng(6);
  for (uint8_t filter : {0, 1, 2, 3, 4}) {
    for (int64_t channels : {1, 3}) {
      ImageU8 img = random_image(7, 5, channels, rng);
      const std::string path = tmp.str() + "/f.png";
      write_filtered_png(path, img, filter);
      ImageU8 back = gblab::read_png(path);
      CHECK(back.pixels == img.pixels);
    }
  }
}

TEST_CASE("scene generation is a pure function of seed and spec") {
  SceneSpec spec;
  SpriteScene a = generate_scene(42, spec);
  SpriteScene b = generate_scene(42, spec);
  SpriteScene c = generate_scene(43, spec);
  CHECK(same_values(a.image, b.image));
  CHECK(same_values(a.instance_masks, b.instance_masks));
  CHECK_FALSE(same_values(a.image, c.image));
}

TEST_CASE("instance masks partition the pixels with contiguous labels") {
  SceneSpec spec;
  spec.min_sprites = 1;
  spec.max_sprites = 5;
  for (uint64_t seed = 0; seed < 40; ++seed) {
    SpriteScene scene = generate_scene(seed, spec);
    const int64_t S = spec.image_size;
    REQUIRE(scene.image.shape() == gblab::Shape{3, S, S});
    REQUIRE(scene.instance_masks.shape() == gblab::Shape{S, S});
    const int32_t n = int32_t(scene.sprites.size());
    REQUIRE(n >= 1);
    std::vector<int64_t> count(size_t(n) + 1, 0);
    for (int64_t p = 0; p < S * S; ++p) {
      const int32_t lab = scene.instance_masks.data()[p];
      REQUIRE(lab >= 0);
      REQUIRE(lab <= n);
      ++count[size_t(lab)];
    }
    for (int32_t k = 1; k <= n; ++k) CHECK(count[size_t(k)] >= 1);
    for (int64_t i = 0; i < scene.image.numel(); ++i) {
      CHECK(scene.image.data()[i] >= 0.0f);
      CHECK(scene.image.data()[i] <= 1.0f);
    }
  }
}

TEST_CASE("sprite colours keep channel contrast against the background") {
  SceneSpec spec;
  spec.min_sprites = 2;
  spec.max_sprites = 4;
  for (uint64_t seed = 100; seed < 130; ++seed) {
    SpriteScene scene = generate_scene(seed, spec);
    for (const auto& sprite : scene.sprites) {
      double dist = 0;
      for (int c = 0; c < 3; ++c)
        dist = std::max(dist, std::abs(sprite.color[size_t(c)] - scene.background[size_t(c)]));
      CHECK(dist >= 0.1 - 1e-12);
    }
  }
}

TEST_CASE("a frame-filling sprite leaves no background label") {
  SceneSpec spec;
  spec.min_sprites = 1;
  spec.max_sprites = 1;
  spec.shapes = {SpriteShape::SQUARE};
  spec.min_size = 64;
  spec.max_size = 64;
  SpriteScene scene = generate_scene(9, spec);
  REQUIRE(scene.sprites.size() == 1);
  for (int64_t p = 0; p < 64 * 64; ++p) CHECK(scene.instance_masks.data()[p] == 1);
  const float* img = scene.image.data();
  for (int c = 0; c < 3; ++c)
    for (int64_t p = 0; p < 64 * 64; ++p)
      CHECK(img[c * 64 * 64 + p] == doctest::Approx(scene.sprites[0].color[size_t(c)]));
}

TEST_CASE("occlusion-free mode keeps sprite discs disjoint") {
  SceneSpec spec;
  spec.min_sprites = 3;
  spec.max_sprites = 3;
  spec.allow_occlusion = false;
  spec.min_size = 8;
  spec.max_size = 12;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    SpriteScene scene = generate_scene(seed, spec);
    for (size_t i = 0; i < scene.sprites.size(); ++i)
      for (size_t j = i + 1; j < scene.sprites.size(); ++j) {
        const auto &a = scene.sprites[i], &b = scene.sprites[j];
        const double dx = a.cx - b.cx, dy = a.cy - b.cy;
        CHECK(std::sqrt(dx * dx + dy * dy) >= (a.size + b.size) / 2 - 1e-9);
      }
  }
}

TEST_CASE("three requested sprites label the mask with a compact range") {
  SceneSpec spec;
  spec.min_sprites = 3;
  spec.max_sprites = 3;
  for (uint64_t seed = 300; seed < 320; ++seed) {
    SpriteScene scene = generate_scene(seed, spec);
    CHECK(int64_t(scene.sprites.size()) + scene.dropped == 3);
    std::set<int32_t> seen;
    for (int64_t p = 0; p < 64 * 64; ++p) seen.insert(scene.instance_masks.data()[p]);
    for (int32_t k = 1; k <= int32_t(scene.sprites.size()); ++k) CHECK(seen.count(k) == 1);
    CHECK(*seen.rbegin() == int32_t(scene.sprites.size()));
  }
}

TEST_CASE("scene spec validation rejects out-of-range fields") {
  SceneSpec spec;
  spec.min_sprites = 0;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = SceneSpec{};
  spec.max_sprites = 0;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = SceneSpec{};
  spec.max_size = 100;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = SceneSpec{};
  spec.shapes.clear();
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = SceneSpec{};
  spec.palette.lo[0] = 0.9;
  spec.palette.hi[0] = 0.2;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);

  // A palette pinned to the background colour can never reach contrast.
  spec = SceneSpec{};
  spec.palette = ColorRule{{0.2, 0.2, 0.2}, {0.2, 0.2, 0.2}};
  spec.background = ColorRule{{0.2, 0.2, 0.2}, {0.2, 0.2, 0.2}};
  CHECK_THROWS_AS(generate_scene(1, spec), InvalidArgument);
}

TEST_CASE("dataset writes the documented layout and round-trips pixels") {
  TempDir tmp("ds");
  SceneSpec spec;
  spec.min_sprites = 1;
  spec.max_sprites = 3;
  DatasetManifest manifest = gblab::write_dataset(tmp.str(), 12, 77, spec);
  CHECK(manifest.count == 12);
  CHECK(manifest.train_count == 12);
  CHECK(manifest.val_count == 0);

  int64_t images = 0, masks = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(tmp.path / "images")) ++images;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(tmp.path / "masks")) ++masks;
  CHECK(images == 12);
  CHECK(masks == 12);
  CHECK(fs::exists(tmp.path / "manifest.json"));
  CHECK(fs::exists(tmp.path / "images" / "000000.png"));
  CHECK(fs::exists(tmp.path / "masks" / "000011.png"));

  Dataset ds = Dataset::load(tmp.str());
  CHECK(ds.size() == 12);
  for (int64_t i : {int64_t(0), int64_t(7), int64_t(11)}) {
    SpriteScene scene = generate_scene(77 ^ uint64_t(i), spec);
    Tensor<float> img = ds.image(i);
    REQUIRE(img.shape() == gblab::Shape{3, 64, 64});
    double worst = 0;
    for (int64_t p = 0; p < img.numel(); ++p)
      worst = std::max(worst, std::abs(double(img.data()[p]) - double(scene.image.data()[p])));
    CHECK(worst <= 1.0 / 255.0);
    CHECK(same_values(ds.mask(i), scene.instance_masks));
  }
}

TEST_CASE("identical seed and spec give byte-identical datasets") {
  TempDir a("bytes_a"), b("bytes_b");
  SceneSpec spec;
  gblab::write_dataset(a.str(), 4, 123, spec);
  gblab::write_dataset(b.str(), 4, 123, spec);
  for (const char* rel : {"images/000000.png", "images/000003.png", "masks/000001.png",
                          "manifest.json"})
    CHECK(slurp(a.path / rel) == slurp(b.path / rel));
}

TEST_CASE("manifest json uses the documented keys and stays strict") {
  SceneSpec spec;
  spec.allow_occlusion = false;
  DatasetManifest m;
  m.count = 10;
  m.train_count = 7;
  m.val_count = 3;
  m.seed = 99;
  m.scene_spec = spec;
  const std::string text = m.to_json_text();
  nlohmann::json j = nlohmann::json::parse(text);
  CHECK(j.size() == 6);
  for (const char* key : {"version", "count", "image_size", "seed", "split", "scene_spec"})
    CHECK(j.contains(key));
  CHECK(j["split"]["train_count"] == 7);
  CHECK(j["split"]["val_count"] == 3);
  CHECK(j["scene_spec"]["allow_occlusion"] == false);
  CHECK(j["scene_spec"]["num_sprites_range"][0] == 1);

  DatasetManifest back = DatasetManifest::from_json_text(text);
  CHECK(back.count == 10);
  CHECK(back.train_count == 7);
  CHECK(back.val_count == 3);
  CHECK(back.scene_spec.allow_occlusion == false);

  j["extra"] = 1;
  CHECK_THROWS_AS(DatasetManifest::from_json_text(j.dump()), InvalidArgument);
  j.erase("extra");
  j.erase("seed");
  CHECK_THROWS_AS(DatasetManifest::from_json_text(j.dump()), InvalidArgument);

  nlohmann::json wrong = nlohmann::json::parse(text);
  wrong["version"] = "gblab-dataset-2";
  CHECK_THROWS_AS(DatasetManifest::from_json_text(wrong.dump()), IncompatibleVersion);

  nlohmann::json bad_split = nlohmann::json::parse(text);
  bad_split["split"]["val_count"] = 5;
  CHECK_THROWS_AS(DatasetManifest::from_json_text(bad_split.dump()), InvalidArgument);
}

TEST_CASE("split marks the trailing block as validation") {
  TempDir tmp("split");
  SceneSpec spec;
  DatasetManifest manifest = gblab::write_dataset(tmp.str(), 10, 5, spec);
  manifest = gblab::split(manifest, 3);
  CHECK(manifest.train_count == 7);
  CHECK(manifest.val_count == 3);
  gblab::save_manifest(tmp.str(), manifest);

  Dataset ds = Dataset::load(tmp.str());
  CHECK(ds.train_count() == 7);
  CHECK(ds.val_count() == 3);
  std::set<int64_t> train, val;
  for (int64_t j = 0; j < 7; ++j) train.insert(ds.train_index(j));
  for (int64_t j = 0; j < 3; ++j) val.insert(ds.val_index(j));
  CHECK(train.size() == 7);
  CHECK(val.size() == 3);
  CHECK(*val.begin() == 7);
  CHECK(*val.rbegin() == 9);
  for (int64_t i : val) CHECK(train.count(i) == 0);

  CHECK_THROWS_AS(gblab::split(manifest, 10), InvalidArgument);
  CHECK_THROWS_AS(gblab::split(manifest, 11), InvalidArgument);
  CHECK_THROWS_AS(gblab::split(manifest, -1), InvalidArgument);
  DatasetManifest none = gblab::split(manifest, 0);
  CHECK(none.val_count == 0);
  CHECK_THROWS_AS(ds.val_index(3), InvalidArgument);
  CHECK_THROWS_AS(ds.train_index(7), InvalidArgument);
}

TEST_CASE("load errors name the offending file") {
  TempDir tmp("err");
  SceneSpec spec;
  gblab::write_dataset(tmp.str(), 5, 1, spec);
  fs::remove(tmp.path / "masks" / "000003.png");
  Dataset ds = Dataset::load(tmp.str());
  CHECK(same_values(ds.mask(2), ds.mask(2)));
  try {
    ds.mask(3);
    FAIL("expected an error for the missing mask");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("masks/000003.png") != std::string::npos);
  }
  CHECK_THROWS_AS(ds.image(5), InvalidArgument);
  CHECK_THROWS_AS(ds.image(-1), InvalidArgument);
  CHECK_THROWS_AS(Dataset::load(tmp.str() + "/nowhere"), IoError);
}
