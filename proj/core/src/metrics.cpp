#include "gblab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "gblab/errors.hpp"

namespace gblab {

void Segmentation::validate() const {
  if (!labels.defined() || labels.ndim() != 2)
    throw InvalidArgument("segmentation labels must be a (H, W) map");
  if (num_labels < 1) throw InvalidArgument("segmentation needs num_labels >= 1");
  for (int64_t i = 0; i < labels.numel(); ++i)
    if (labels.data()[i] < 0 || labels.data()[i] >= num_labels)
      throw InvalidArgument("segmentation label outside [0, num_labels)");
}

template <typename T>
std::vector<Segmentation> predict_segmentation(const MixtureMasks<T>& masks) {
  masks.validate(1e-4);
  const int64_t B = masks.pi.size(0), K = masks.pi.size(1);
  const int64_t H = masks.pi.size(3), W = masks.pi.size(4);
  const T* p = masks.pi.data();
  std::vector<Segmentation> out;
  out.reserve(size_t(B));
  for (int64_t b = 0; b < B; ++b) {
    Segmentation seg;
    seg.labels = Tensor<int32_t>({H, W});
    seg.num_labels = K;
    for (int64_t pix = 0; pix < H * W; ++pix) {
      int32_t best = 0;
      T best_val = p[(b * K) * H * W + pix];
      for (int64_t k = 1; k < K; ++k) {
        const T v = p[(b * K + k) * H * W + pix];
        if (v > best_val) {  // strict: ties keep the lower index
          best_val = v;
          best = int32_t(k);
        }
      }
      seg.labels.data()[pix] = best;
    }
    out.push_back(std::move(seg));
  }
  return out;
}

namespace {

double choose2(double n) { return n * (n - 1) / 2; }

// Label-pair contingency counts over an explicit pixel subset.
struct Contingency {
  std::vector<double> cells;  // gt-major
  std::vector<double> gt_sizes, pred_sizes;
  int64_t rows = 0, cols = 0;
  double total = 0;

  Contingency(const Segmentation& gt, const Segmentation& pred,
              const std::vector<int64_t>& pixels)
      : cells(size_t(gt.num_labels * pred.num_labels), 0.0),
        gt_sizes(size_t(gt.num_labels), 0.0),
        pred_sizes(size_t(pred.num_labels), 0.0),
        rows(gt.num_labels),
        cols(pred.num_labels),
        total(double(pixels.size())) {
    for (int64_t p : pixels) {
      const int32_t a = gt.labels.data()[p], b = pred.labels.data()[p];
      cells[size_t(a * cols + b)] += 1;
      gt_sizes[size_t(a)] += 1;
      pred_sizes[size_t(b)] += 1;
    }
  }
};

void require_comparable(const Segmentation& gt, const Segmentation& pred) {
  gt.validate();
  pred.validate();
  if (gt.labels.shape() != pred.labels.shape())
    throw InvalidArgument("segmentations cover different spatial sizes");
}

}  // namespace

double ari(const Segmentation& gt, const Segmentation& pred, bool exclude_background) {
  require_comparable(gt, pred);
  std::vector<int64_t> pixels;
  pixels.reserve(size_t(gt.labels.numel()));
  for (int64_t p = 0; p < gt.labels.numel(); ++p)
    if (!exclude_background || gt.labels.data()[p] != 0) pixels.push_back(p);
  if (pixels.empty())
    throw UndefinedMetric("adjusted Rand index over zero pixels after background exclusion");
  if (pixels.size() < 2) return 1.0;  // one pixel: both partitions are trivially identical

  const Contingency table(gt, pred, pixels);
  double sum_cells = 0, sum_gt = 0, sum_pred = 0;
  for (double c : table.cells) sum_cells += choose2(c);
  for (double a : table.gt_sizes) sum_gt += choose2(a);
  for (double b : table.pred_sizes) sum_pred += choose2(b);
  const double expected = sum_gt * sum_pred / choose2(table.total);
  const double max_index = (sum_gt + sum_pred) / 2;
  const double denom = max_index - expected;
  if (std::abs(denom) < 1e-12) return 1.0;  // both partitions degenerate the same way
  return (sum_cells - expected) / denom;
}

double msc(const Segmentation& gt, const Segmentation& pred, bool pixel_weighted) {
  require_comparable(gt, pred);
  std::vector<int64_t> pixels(size_t(gt.labels.numel()));
  std::iota(pixels.begin(), pixels.end(), 0);
  const Contingency table(gt, pred, pixels);

  double total_weight = 0, covered = 0;
  for (int64_t g = 1; g < table.rows; ++g) {
    const double size_g = table.gt_sizes[size_t(g)];
    if (size_g == 0) continue;
    double best = 0;
    for (int64_t p = 0; p < table.cols; ++p) {
      const double inter = table.cells[size_t(g * table.cols + p)];
      if (inter == 0) continue;
      const double u = size_g + table.pred_sizes[size_t(p)] - inter;
      best = std::max(best, inter / u);
    }
    const double w = pixel_weighted ? size_g : 1.0;
    total_weight += w;
    covered += w * best;
  }
  if (total_weight == 0)
    throw UndefinedMetric("segmentation covering needs at least one foreground segment");
  return covered / total_weight;
}

namespace {
constexpr const char* kReportKeys[] = {"ari_mean",       "ari_std",    "msc_mean",
                                       "msc_std",        "recon_err_mean", "num_images",
                                       "component_usage"};
}

std::string MetricsReport::to_json_text(int indent) const {
  nlohmann::json j;
  j["ari_mean"] = ari_mean;
  j["ari_std"] = ari_std;
  j["msc_mean"] = msc_mean;
  j["msc_std"] = msc_std;
  j["recon_err_mean"] = recon_err_mean;
  j["num_images"] = num_images;
  j["component_usage"] = component_usage;
  return indent < 0 ? j.dump() : j.dump(indent);
}

MetricsReport MetricsReport::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("metrics report: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("metrics report: expected a JSON object");
  for (const char* key : kReportKeys)
    if (!j.contains(key))
      throw InvalidArgument(std::string("metrics report: missing key ") + key);
  for (const auto& item : j.items()) {
    const bool known = std::any_of(std::begin(kReportKeys), std::end(kReportKeys),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw InvalidArgument("metrics report: unknown key " + item.key());
  }
  MetricsReport r;
  try {
    r.ari_mean = j.at("ari_mean").get<double>();
    r.ari_std = j.at("ari_std").get<double>();
    r.msc_mean = j.at("msc_mean").get<double>();
    r.msc_std = j.at("msc_std").get<double>();
    r.recon_err_mean = j.at("recon_err_mean").get<double>();
    r.num_images = j.at("num_images").get<int64_t>();
    r.component_usage = j.at("component_usage").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("metrics report: ") + e.what());
  }
  return r;
}

namespace {

struct Moments {
  double sum = 0, sum_sq = 0;
  int64_t n = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / double(n) : 0; }
  double stddev() const {
    if (!n) return 0;
    const double m = mean();
    return std::sqrt(std::max(0.0, sum_sq / double(n) - m * m));
  }
};

}  // namespace

template <typename T>
MetricsReport evaluate(GenesisModel<T>& model, const Dataset& data, int64_t num_images,
                       uint64_t seed) {
  if (num_images < 1) throw InvalidArgument("evaluate: need num_images >= 1");
  if (num_images > data.val_count())
    throw InvalidArgument("evaluate: only " + std::to_string(data.val_count()) +
                          " validation images available, need " + std::to_string(num_images));
  if (model.image_size() != data.manifest().image_size)
    throw InvalidArgument("evaluate: model expects " + std::to_string(model.image_size()) +
                          "px images, dataset provides " +
                          std::to_string(data.manifest().image_size) + "px");

  // Seeded selection without replacement from the validation partition.
  std::vector<int64_t> order(size_t(data.val_count()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[size_t(rng.below(uint64_t(i)))]);

  const int64_t K = model.config().K;
  Moments ari_m, msc_m, err_m;
  std::vector<double> usage(size_t(K), 0.0);

  for (int64_t i = 0; i < num_images; ++i) {
    const int64_t index = data.val_index(order[size_t(i)]);
    Tensor<float> image = data.image(index);
    Tensor<int32_t> gt_labels = data.mask(index);

    ad::Tape<T> tape;
    nn::Binding<T> bind(tape, false);
    ZeroNoise<T> noise;
    const int64_t S = data.manifest().image_size;
    Tensor<T> x = image.template cast<T>().reshape({1, 3, S, S});
    ForwardOutput<T> out = model.forward(bind, x, noise);

    err_m.add(double(out.nll_per_pixel.value().data()[0]));
    const T* pi = out.masks.pi.data();
    for (int64_t k = 0; k < K; ++k) {
      double mass = 0;
      for (int64_t p = 0; p < S * S; ++p) mass += double(pi[k * S * S + p]);
      usage[size_t(k)] += mass / double(S * S);
    }

    Segmentation pred = predict_segmentation(out.masks).at(0);
    int32_t max_label = 0;
    for (int64_t p = 0; p < gt_labels.numel(); ++p)
      max_label = std::max(max_label, gt_labels.data()[p]);
    Segmentation gt{gt_labels, int64_t(max_label) + 1};

    ari_m.add(ari(gt, pred, /*exclude_background=*/true));
    msc_m.add(msc(gt, pred));
  }

  MetricsReport report;
  report.ari_mean = ari_m.mean();
  report.ari_std = ari_m.stddev();
  report.msc_mean = msc_m.mean();
  report.msc_std = msc_m.stddev();
  report.recon_err_mean = err_m.mean();
  report.num_images = num_images;
  for (double& u : usage) u /= double(num_images);
  report.component_usage = usage;
  return report;
}

template std::vector<Segmentation> predict_segmentation(const MixtureMasks<float>&);
template std::vector<Segmentation> predict_segmentation(const MixtureMasks<double>&);
template MetricsReport evaluate(GenesisModel<float>&, const Dataset&, int64_t, uint64_t);
template MetricsReport evaluate(GenesisModel<double>&, const Dataset&, int64_t, uint64_t);

}  // namespace gblab
