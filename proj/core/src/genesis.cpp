#include "gblab/genesis.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <utility>

#include <json.hpp>

#include "gblab/errors.hpp"

namespace gblab {

std::string to_string(ComponentArch arch) {
  return arch == ComponentArch::ASYMMETRIC_SBD ? "ASYMMETRIC_SBD" : "SYMMETRIC_DC";
}

ComponentArch component_arch_from_string(const std::string& name) {
  if (name == "ASYMMETRIC_SBD") return ComponentArch::ASYMMETRIC_SBD;
  if (name == "SYMMETRIC_DC") return ComponentArch::SYMMETRIC_DC;
  throw InvalidArgument("unknown component_arch: " + name);
}

void GenesisConfig::validate() const {
  if (K < 1) throw InvalidArgument("model config: K must be >= 1");
  if (mask_latent_dim < 1) throw InvalidArgument("model config: mask_latent_dim must be >= 1");
  if (component_latent_dim < 1)
    throw InvalidArgument("model config: component_latent_dim must be >= 1");
  if (!(pixel_sigma > 0)) throw InvalidArgument("model config: pixel_sigma must be > 0");
  if (rnn_hidden < 1) throw InvalidArgument("model config: rnn_hidden must be >= 1");
  if (prior_mlp_hidden < 1) throw InvalidArgument("model config: prior_mlp_hidden must be >= 1");
}

namespace {
constexpr const char* kConfigKeys[] = {"K",           "mask_latent_dim", "component_latent_dim",
                                       "component_arch", "pixel_sigma",  "rnn_hidden",
                                       "prior_mlp_hidden"};
}

std::string GenesisConfig::to_json_text(int indent) const {
  nlohmann::json j;
  j["K"] = K;
  j["mask_latent_dim"] = mask_latent_dim;
  j["component_latent_dim"] = component_latent_dim;
  j["component_arch"] = to_string(component_arch);
  j["pixel_sigma"] = pixel_sigma;
  j["rnn_hidden"] = rnn_hidden;
  j["prior_mlp_hidden"] = prior_mlp_hidden;
  return indent < 0 ? j.dump() : j.dump(indent);
}

GenesisConfig GenesisConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("model config: expected a JSON object");
  for (const char* key : kConfigKeys)
    if (!j.contains(key)) throw InvalidArgument(std::string("model config: missing key ") + key);
  for (const auto& item : j.items()) {
    const bool known = std::any_of(std::begin(kConfigKeys), std::end(kConfigKeys),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw InvalidArgument("model config: unknown key " + item.key());
  }
  GenesisConfig cfg;
  try {
    cfg.K = j.at("K").get<int64_t>();
    cfg.mask_latent_dim = j.at("mask_latent_dim").get<int64_t>();
    cfg.component_latent_dim = j.at("component_latent_dim").get<int64_t>();
    cfg.component_arch = component_arch_from_string(j.at("component_arch").get<std::string>());
    cfg.pixel_sigma = j.at("pixel_sigma").get<double>();
    cfg.rnn_hidden = j.at("rnn_hidden").get<int64_t>();
    cfg.prior_mlp_hidden = j.at("prior_mlp_hidden").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

template <typename T>
void MixtureMasks<T>::validate(double tol) const {
  if (pi.ndim() != 5 || pi.size(2) != 1)
    throw InvalidArgument("mixture masks must be (B, K, 1, S, S), got " + shape_str(pi.shape()));
  const int64_t B = pi.size(0), K = pi.size(1), H = pi.size(3), W = pi.size(4);
  const T* p = pi.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double sum = 0;
        for (int64_t k = 0; k < K; ++k) {
          const T v = p[((b * K + k) * H + y) * W + x];
          if (!(v >= T(0) && v <= T(1)))
            throw InvalidArgument("mixture mask entry outside [0, 1]");
          sum += static_cast<double>(v);
        }
        if (std::abs(sum - 1.0) > tol)
          throw InvalidArgument("mixture masks do not sum to 1 per pixel");
      }
}

template <typename T>
ad::Var<T> sgmm_log_lik_map(ad::Var<T> x, const std::vector<ad::Var<T>>& log_pi,
                            const std::vector<ad::Var<T>>& means, double sigma) {
  if (log_pi.empty() || log_pi.size() != means.size())
    throw InvalidArgument("mixture likelihood needs matching mask and mean lists");
  std::vector<ad::Var<T>> terms;
  terms.reserve(log_pi.size());
  for (size_t k = 0; k < log_pi.size(); ++k)
    terms.push_back(ad::add_bc(dist::gauss_log_prob(x, means[k], static_cast<T>(sigma)),
                               log_pi[k]));
  return ad::logsumexp_list(terms);
}

template <typename T>
ad::Var<T> sgmm_nll(ad::Var<T> x, ad::Var<T> pi, ad::Var<T> appearances, double sigma) {
  const Shape xs = x.value().shape();
  const Shape ps = pi.value().shape();
  const Shape as = appearances.value().shape();
  if (xs.size() != 4) throw InvalidArgument("images must be (B, C, S, S)");
  if (ps.size() != 5 || ps[2] != 1 || ps[0] != xs[0] || ps[3] != xs[2] || ps[4] != xs[3])
    throw InvalidArgument("mixture weights must be (B, K, 1, S, S) matching the images");
  if (as.size() != 5 || as[0] != xs[0] || as[1] != ps[1] || as[2] != xs[1] || as[3] != xs[2] ||
      as[4] != xs[3])
    throw InvalidArgument("appearances must be (B, K, C, S, S) matching the images");
  const T* pv = pi.value().data();
  for (int64_t i = 0; i < pi.value().numel(); ++i)
    if (pv[i] < T(0)) throw InvalidArgument("mixture weights must be non-negative");
  const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3], K = ps[1];
  std::vector<ad::Var<T>> log_pi, means;
  for (int64_t k = 0; k < K; ++k) {
    log_pi.push_back(ad::log_of(ad::reshape(ad::slice_channels(pi, k, k + 1), {B, 1, H, W})));
    means.push_back(ad::reshape(ad::slice_channels(appearances, k, k + 1), {B, C, H, W}));
  }
  ad::Var<T> map = sgmm_log_lik_map(x, log_pi, means, sigma);
  return ad::neg(ad::row_sum(ad::reshape(map, {B, C * H * W})));
}

namespace {

// param (1, n) tiled to (B, n); gradient reduces back into the parameter.
template <typename T>
ad::Var<T> tile_rows(nn::Binding<T>& bind, const Tensor<T>& param, int64_t rows) {
  ad::Var<T> zero = bind.tape().constant(Tensor<T>({rows, param.size(1)}));
  return ad::add_bc(zero, bind(param));
}

template <typename T>
ad::Var<T> accumulate_mean_kl(ad::Var<T> acc, const dist::DiagGaussVar<T>& q,
                              const dist::DiagGaussVar<T>& p) {
  ad::Var<T> term = ad::vec_mean(dist::kl_diag_gauss(q, p));
  return acc.defined() ? ad::add(acc, term) : term;
}

}  // namespace

template <typename T>
GenesisModel<T>::GenesisModel(nn::ParamSet<T>& ps, const GenesisConfig& cfg, Rng& rng,
                              int64_t image_size)
    : cfg_(cfg), size_(image_size) {
  cfg_.validate();
  const int64_t H = cfg_.rnn_hidden;
  const int64_t Lm = cfg_.mask_latent_dim;
  const int64_t Lc = cfg_.component_latent_dim;
  mask_trunk_ = net::DcTrunk<T>(ps, "mask_encoder.trunk", 4, rng, size_);
  mask_feat_ = nn::Linear<T>(ps, "mask_encoder.fc.0", mask_trunk_.flat_dim(), 2 * H, rng);
  mask_init_ = nn::Linear<T>(ps, "mask_encoder.fc.1", H, 2 * H, rng);
  q_cell_ = nn::LstmCell<T>(ps, "mask_rnn_q.cell", Lm, H, rng);
  q_head_ = nn::Linear<T>(ps, "mask_rnn_q.head", H, 2 * Lm, rng);
  p_cell_ = nn::LstmCell<T>(ps, "mask_rnn_p.cell", Lm, H, rng);
  p_head_ = nn::Linear<T>(ps, "mask_rnn_p.head", H, 2 * Lm, rng);
  p_start_ = ps.add_param("mask_rnn_p.start.w", Tensor<T>({1, Lm}));
  p_init_ = ps.add_param("mask_rnn_p.init.w", Tensor<T>({1, 2 * H}));
  mask_decoder_ = net::DcDecoder<T>(ps, "mask_decoder", Lm, 1, rng, size_);
  if (cfg_.component_arch == ComponentArch::ASYMMETRIC_SBD) {
    sbd_enc_ = std::make_unique<net::SbdEncoder<T>>(ps, "comp_encoder", Lc, rng, size_);
    sbd_dec_ = std::make_unique<net::SbdDecoder<T>>(ps, "comp_decoder", Lc, rng, size_);
  } else {
    dc_enc_ = std::make_unique<net::DcEncoder<T>>(ps, "comp_encoder", Lc, rng, size_);
    dc_dec_ = std::make_unique<net::DcDecoder<T>>(ps, "comp_decoder", Lc, 3, rng, size_);
  }
  comp_prior_fc0_ = nn::Linear<T>(ps, "comp_prior.fc.0", Lm, cfg_.prior_mlp_hidden, rng);
  comp_prior_fc1_ =
      nn::Linear<T>(ps, "comp_prior.fc.1", cfg_.prior_mlp_hidden, cfg_.prior_mlp_hidden, rng);
  comp_prior_head_ = nn::Linear<T>(ps, "comp_prior.head", cfg_.prior_mlp_hidden, 2 * Lc, rng);
}

template <typename T>
ad::Var<T> GenesisModel<T>::validated_input(nn::Binding<T>& bind, const Tensor<T>& x) const {
  if (x.ndim() != 4 || x.size(1) != 3 || x.size(2) != size_ || x.size(3) != size_)
    throw InvalidArgument("images must be (B, 3, " + std::to_string(size_) + ", " +
                          std::to_string(size_) + "), got " + shape_str(x.shape()));
  const T* v = x.data();
  for (int64_t i = 0; i < x.numel(); ++i)
    if (!(v[i] >= T(0) && v[i] <= T(1)))
      throw InvalidArgument("image values must lie in [0, 1]");
  return bind.tape().constant(x);
}

template <typename T>
dist::DiagGaussVar<T> GenesisModel<T>::encode_component(nn::Binding<T>& bind, ad::Var<T> x4) {
  return sbd_enc_ ? (*sbd_enc_)(bind, x4) : (*dc_enc_)(bind, x4);
}

template <typename T>
ad::Var<T> GenesisModel<T>::decode_component(nn::Binding<T>& bind, ad::Var<T> z) {
  return sbd_dec_ ? (*sbd_dec_)(bind, z) : (*dc_dec_)(bind, z);
}

template <typename T>
MaskInference<T> GenesisModel<T>::infer_mask_latents(nn::Binding<T>& bind, ad::Var<T> x,
                                                     NoiseSource<T>& noise) {
  const Shape s = x.value().shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != size_ || s[3] != size_)
    throw InvalidArgument("mask inference expects (B, 3, S, S) images");
  const int64_t B = s[0];
  const int64_t Lm = cfg_.mask_latent_dim;
  const int64_t H = cfg_.rnn_hidden;
  ad::Var<T> ones = bind.tape().constant(Tensor<T>::full({B, 1, size_, size_}, T(1)));
  ad::Var<T> x4 = ad::concat_channels(std::vector<ad::Var<T>>{x, ones});
  ad::Var<T> f = ad::glu(mask_feat_(bind, mask_trunk_(bind, x4)));
  ad::Var<T> hc = mask_init_(bind, f);
  ad::Var<T> h = ad::slice_cols(hc, 0, H);
  ad::Var<T> c = ad::slice_cols(hc, H, 2 * H);
  ad::Var<T> z_prev = bind.tape().constant(Tensor<T>({B, Lm}));
  MaskInference<T> out;
  for (int64_t k = 0; k < cfg_.K; ++k) {
    std::tie(h, c) = q_cell_(bind, z_prev, h, c);
    ad::Var<T> stats = q_head_(bind, h);
    dist::DiagGaussVar<T> q{ad::slice_cols(stats, 0, Lm), ad::slice_cols(stats, Lm, 2 * Lm)};
    ad::Var<T> eps = bind.tape().constant(noise.draw({B, Lm}));
    ad::Var<T> z = dist::sample_reparam(q, eps);
    out.samples.push_back(z);
    out.posteriors.push_back(q);
    z_prev = z;
  }
  return out;
}

template <typename T>
std::vector<dist::DiagGaussVar<T>> GenesisModel<T>::mask_prior(
    nn::Binding<T>& bind, const std::vector<ad::Var<T>>& mask_samples) {
  if (mask_samples.empty()) throw InvalidArgument("mask prior needs at least one step");
  const int64_t K = static_cast<int64_t>(mask_samples.size());
  const int64_t B = mask_samples[0].value().size(0);
  const int64_t Lm = cfg_.mask_latent_dim;
  const int64_t H = cfg_.rnn_hidden;
  ad::Var<T> state = tile_rows(bind, p_init_, B);
  ad::Var<T> h = ad::slice_cols(state, 0, H);
  ad::Var<T> c = ad::slice_cols(state, H, 2 * H);
  ad::Var<T> inp = tile_rows(bind, p_start_, B);
  std::vector<dist::DiagGaussVar<T>> priors;
  for (int64_t k = 0; k < K; ++k) {
    std::tie(h, c) = p_cell_(bind, inp, h, c);
    ad::Var<T> stats = p_head_(bind, h);
    priors.push_back({ad::slice_cols(stats, 0, Lm), ad::slice_cols(stats, Lm, 2 * Lm)});
    if (k + 1 < K) inp = mask_samples[k];
  }
  return priors;
}

template <typename T>
MaskDecode<T> GenesisModel<T>::decode_masks(nn::Binding<T>& bind,
                                            const std::vector<ad::Var<T>>& mask_samples) {
  if (mask_samples.empty()) throw InvalidArgument("mask decode needs at least one slot");
  const int64_t K = static_cast<int64_t>(mask_samples.size());
  const int64_t B = mask_samples[0].value().size(0);
  ad::Tape<T>& tape = bind.tape();
  MaskDecode<T> out;
  std::vector<ad::Var<T>> pis;
  if (K == 1) {
    pis.push_back(tape.constant(Tensor<T>::full({B, 1, size_, size_}, T(1))));
    out.log_pi.push_back(tape.constant(Tensor<T>({B, 1, size_, size_})));
  } else {
    std::vector<ad::Var<T>> scope_latents(mask_samples.begin(), mask_samples.end() - 1);
    ad::Var<T> z_all =
        K == 2 ? scope_latents[0] : ad::concat_batch(scope_latents);  // (B*(K-1), Lm)
    ad::Var<T> s_all = mask_decoder_(bind, z_all);                    // (B*(K-1), 1, S, S)
    ad::Var<T> stick = tape.constant(Tensor<T>::full({B, 1, size_, size_}, T(1)));
    ad::Var<T> log_stick = tape.constant(Tensor<T>({B, 1, size_, size_}));
    for (int64_t k = 0; k + 1 < K; ++k) {
      ad::Var<T> s_k = K == 2 ? s_all : ad::slice_batch(s_all, k * B, (k + 1) * B);
      out.scope_logits.push_back(s_k);
      ad::Var<T> pi_k = ad::mul(stick, ad::sigmoid(s_k));
      stick = ad::sub(stick, pi_k);
      pis.push_back(pi_k);
      // log sigma(s) = -softplus(-s); log (1 - sigma(s)) = -softplus(s)
      out.log_pi.push_back(ad::add(log_stick, ad::neg(ad::softplus(ad::neg(s_k)))));
      log_stick = ad::add(log_stick, ad::neg(ad::softplus(s_k)));
    }
    pis.push_back(stick);
    out.log_pi.push_back(log_stick);
  }
  std::vector<ad::Var<T>> lifted;
  for (ad::Var<T>& p : pis) lifted.push_back(ad::reshape(p, {B, 1, 1, size_, size_}));
  out.pi = K == 1 ? lifted[0] : ad::concat_channels(lifted);
  return out;
}

template <typename T>
ComponentInference<T> GenesisModel<T>::infer_component_latents(nn::Binding<T>& bind,
                                                               ad::Var<T> x,
                                                               const MaskDecode<T>& masks,
                                                               NoiseSource<T>& noise) {
  const int64_t B = x.value().size(0);
  const int64_t K = static_cast<int64_t>(masks.log_pi.size());
  const int64_t Lc = cfg_.component_latent_dim;
  std::vector<ad::Var<T>> stacked;
  for (int64_t k = 0; k < K; ++k) {
    ad::Var<T> pi_k =
        ad::reshape(ad::slice_channels(masks.pi, k, k + 1), {B, 1, size_, size_});
    stacked.push_back(ad::concat_channels(std::vector<ad::Var<T>>{x, pi_k}));
  }
  ad::Var<T> big = K == 1 ? stacked[0] : ad::concat_batch(stacked);  // (B*K, 4, S, S)
  dist::DiagGaussVar<T> post = encode_component(bind, big);
  ad::Var<T> eps = bind.tape().constant(noise.draw({B * K, Lc}));
  ad::Var<T> z_all = dist::sample_reparam(post, eps);
  ComponentInference<T> out;
  for (int64_t k = 0; k < K; ++k) {
    if (K == 1) {
      out.samples.push_back(z_all);
      out.posteriors.push_back(post);
    } else {
      out.samples.push_back(ad::slice_batch(z_all, k * B, (k + 1) * B));
      out.posteriors.push_back({ad::slice_batch(post.mean, k * B, (k + 1) * B),
                                ad::slice_batch(post.log_var, k * B, (k + 1) * B)});
    }
  }
  return out;
}

template <typename T>
std::vector<dist::DiagGaussVar<T>> GenesisModel<T>::component_prior(
    nn::Binding<T>& bind, const std::vector<ad::Var<T>>& mask_samples) {
  if (mask_samples.empty()) throw InvalidArgument("component prior needs at least one slot");
  const int64_t K = static_cast<int64_t>(mask_samples.size());
  const int64_t B = mask_samples[0].value().size(0);
  const int64_t Lc = cfg_.component_latent_dim;
  ad::Var<T> z_all =
      K == 1 ? mask_samples[0] : ad::concat_batch(mask_samples);  // (B*K, Lm)
  ad::Var<T> h = ad::elu(comp_prior_fc0_(bind, z_all));
  h = ad::elu(comp_prior_fc1_(bind, h));
  ad::Var<T> stats = comp_prior_head_(bind, h);  // (B*K, 2*Lc)
  ad::Var<T> mean = ad::slice_cols(stats, 0, Lc);
  ad::Var<T> log_var = ad::slice_cols(stats, Lc, 2 * Lc);
  std::vector<dist::DiagGaussVar<T>> priors;
  for (int64_t k = 0; k < K; ++k) {
    if (K == 1)
      priors.push_back({mean, log_var});
    else
      priors.push_back({ad::slice_batch(mean, k * B, (k + 1) * B),
                        ad::slice_batch(log_var, k * B, (k + 1) * B)});
  }
  return priors;
}

template <typename T>
ad::Var<T> GenesisModel<T>::decode_components(nn::Binding<T>& bind,
                                              const std::vector<ad::Var<T>>& comp_samples) {
  if (comp_samples.empty()) throw InvalidArgument("component decode needs at least one slot");
  const int64_t K = static_cast<int64_t>(comp_samples.size());
  const int64_t B = comp_samples[0].value().size(0);
  ad::Var<T> z_all = K == 1 ? comp_samples[0] : ad::concat_batch(comp_samples);
  ad::Var<T> mu = decode_component(bind, z_all);  // (B*K, 3, S, S)
  std::vector<ad::Var<T>> lifted;
  for (int64_t k = 0; k < K; ++k) {
    ad::Var<T> mu_k = K == 1 ? mu : ad::slice_batch(mu, k * B, (k + 1) * B);
    lifted.push_back(ad::reshape(mu_k, {B, 1, 3, size_, size_}));
  }
  return K == 1 ? lifted[0] : ad::concat_channels(lifted);
}

template <typename T>
ForwardOutput<T> GenesisModel<T>::finish_forward(
    nn::Binding<T>& bind, ad::Var<T> x, const MaskInference<T>& mi, const MaskDecode<T>& md,
    const std::vector<dist::DiagGaussVar<T>>& mask_priors, ad::Var<T> kl_mask,
    NoiseSource<T>& noise) {
  const int64_t K = static_cast<int64_t>(mi.samples.size());
  const int64_t B = x.value().size(0);
  ComponentInference<T> ci = infer_component_latents(bind, x, md, noise);
  std::vector<dist::DiagGaussVar<T>> comp_priors = component_prior(bind, mi.samples);
  ad::Var<T> kl_comp;
  for (int64_t k = 0; k < K; ++k)
    kl_comp = accumulate_mean_kl(kl_comp, ci.posteriors[k], comp_priors[k]);
  ad::Var<T> apps = decode_components(bind, ci.samples);  // (B, K, 3, S, S)
  std::vector<ad::Var<T>> means;
  for (int64_t k = 0; k < K; ++k)
    means.push_back(
        ad::reshape(K == 1 ? apps : ad::slice_channels(apps, k, k + 1), {B, 3, size_, size_}));
  ad::Var<T> lik = sgmm_log_lik_map(x, md.log_pi, means, cfg_.pixel_sigma);
  ForwardOutput<T> out;
  out.nll_per_pixel = ad::neg(ad::reduce_mean_all(lik));
  out.kl_mask = kl_mask;
  out.kl_component = kl_comp;
  out.masks.pi = md.pi.value();
  out.appearances = apps.value();
  for (int64_t k = 0; k < K; ++k) {
    out.latents.mask_samples.push_back(mi.samples[k].value());
    out.latents.mask_posteriors.push_back(mi.posteriors[k].detach());
    out.latents.comp_samples.push_back(ci.samples[k].value());
    out.latents.comp_posteriors.push_back(ci.posteriors[k].detach());
    out.latents.comp_priors.push_back(comp_priors[k].detach());
  }
  for (const dist::DiagGaussVar<T>& p : mask_priors) out.latents.mask_priors.push_back(p.detach());
  return out;
}

template <typename T>
ForwardOutput<T> GenesisModel<T>::forward(nn::Binding<T>& bind, const Tensor<T>& x,
                                          NoiseSource<T>& noise) {
  ad::Var<T> xv = validated_input(bind, x);
  MaskInference<T> mi = infer_mask_latents(bind, xv, noise);
  MaskDecode<T> md = decode_masks(bind, mi.samples);
  std::vector<dist::DiagGaussVar<T>> mask_priors = mask_prior(bind, mi.samples);
  ad::Var<T> kl_mask;
  for (int64_t k = 0; k < cfg_.K; ++k)
    kl_mask = accumulate_mean_kl(kl_mask, mi.posteriors[k], mask_priors[k]);
  return finish_forward(bind, xv, mi, md, mask_priors, kl_mask, noise);
}

template <typename T>
ForwardOutput<T> GenesisModel<T>::vanilla_forward(nn::Binding<T>& bind, const Tensor<T>& x,
                                                  NoiseSource<T>& noise) {
  if (cfg_.K != 1) throw InvalidArgument("vanilla forward requires K = 1");
  ad::Var<T> xv = validated_input(bind, x);
  const int64_t B = xv.value().size(0);
  // Mask latent still drives the component prior; mask prior, decode, and
  // kl_mask are skipped and pi is pinned to 1.
  MaskInference<T> mi = infer_mask_latents(bind, xv, noise);
  MaskDecode<T> md;
  md.pi = bind.tape().constant(Tensor<T>::full({B, 1, 1, size_, size_}, T(1)));
  md.log_pi.push_back(bind.tape().constant(Tensor<T>({B, 1, size_, size_})));
  ad::Var<T> kl_zero = bind.tape().constant(Tensor<T>({1}));
  return finish_forward(bind, xv, mi, md, {}, kl_zero, noise);
}

template <typename T>
GeneratedBatch<T> GenesisModel<T>::generate(int64_t n, NoiseSource<T>& noise) {
  if (n < 1) throw InvalidArgument("generate needs n >= 1");
  ad::Tape<T> tape;
  nn::Binding<T> bind(tape, /*training=*/false);
  const int64_t K = cfg_.K;
  const int64_t Lm = cfg_.mask_latent_dim;
  const int64_t Lc = cfg_.component_latent_dim;
  const int64_t H = cfg_.rnn_hidden;
  ad::Var<T> state = tile_rows(bind, p_init_, n);
  ad::Var<T> h = ad::slice_cols(state, 0, H);
  ad::Var<T> c = ad::slice_cols(state, H, 2 * H);
  ad::Var<T> inp = tile_rows(bind, p_start_, n);
  std::vector<ad::Var<T>> mask_z;
  for (int64_t k = 0; k < K; ++k) {
    std::tie(h, c) = p_cell_(bind, inp, h, c);
    ad::Var<T> stats = p_head_(bind, h);
    dist::DiagGaussVar<T> p{ad::slice_cols(stats, 0, Lm), ad::slice_cols(stats, Lm, 2 * Lm)};
    ad::Var<T> eps = tape.constant(noise.draw({n, Lm}));
    ad::Var<T> z = dist::sample_reparam(p, eps);
    mask_z.push_back(z);
    inp = z;
  }
  MaskDecode<T> md = decode_masks(bind, mask_z);
  std::vector<dist::DiagGaussVar<T>> comp_priors = component_prior(bind, mask_z);
  std::vector<ad::Var<T>> comp_z;
  for (int64_t k = 0; k < K; ++k) {
    ad::Var<T> eps = tape.constant(noise.draw({n, Lc}));
    comp_z.push_back(dist::sample_reparam(comp_priors[k], eps));
  }
  ad::Var<T> apps = decode_components(bind, comp_z);  // (n, K, 3, S, S)
  GeneratedBatch<T> out;
  out.masks = md.pi.value();
  out.appearances = apps.value();
  out.images = Tensor<T>({n, 3, size_, size_});
  const T* pv = out.masks.data();
  const T* av = out.appearances.data();
  T* iv = out.images.data();
  const int64_t S = size_;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x) {
          double acc = 0;
          for (int64_t k = 0; k < K; ++k)
            acc += static_cast<double>(pv[(((b * K + k) * 1 + 0) * S + y) * S + x]) *
                   static_cast<double>(av[(((b * K + k) * 3 + ch) * S + y) * S + x]);
          iv[((b * 3 + ch) * S + y) * S + x] =
              static_cast<T>(std::clamp(acc, 0.0, 1.0));
        }
  return out;
}

#define GBLAB_INSTANTIATE(T)                                                              \
  template struct MixtureMasks<T>;                                                       \
  template ad::Var<T> sgmm_log_lik_map(ad::Var<T>, const std::vector<ad::Var<T>>&,       \
                                       const std::vector<ad::Var<T>>&, double);          \
  template ad::Var<T> sgmm_nll(ad::Var<T>, ad::Var<T>, ad::Var<T>, double);              \
  template class GenesisModel<T>;

GBLAB_INSTANTIATE(float)
GBLAB_INSTANTIATE(double)

#undef GBLAB_INSTANTIATE

}  // namespace gblab
