#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gblab/autodiff.hpp"
#include "gblab/distributions.hpp"
#include "gblab/networks.hpp"
#include "gblab/nn.hpp"
#include "gblab/rng.hpp"
#include "gblab/tensor.hpp"

namespace gblab {

enum class ComponentArch { ASYMMETRIC_SBD, SYMMETRIC_DC };

std::string to_string(ComponentArch arch);
ComponentArch component_arch_from_string(const std::string& name);

struct GenesisConfig {
  int64_t K = 5;
  int64_t mask_latent_dim = 64;
  int64_t component_latent_dim = 16;
  ComponentArch component_arch = ComponentArch::SYMMETRIC_DC;
  double pixel_sigma = 0.7;
  int64_t rnn_hidden = 256;
  int64_t prior_mlp_hidden = 256;

  void validate() const;
  // Strict JSON round-trip: exactly the seven fields above, no extras.
  std::string to_json_text(int indent = -1) const;
  static GenesisConfig from_json_text(const std::string& text);
};

// Standard-normal noise consumed by reparameterised sampling; ZeroNoise
// evaluates at distribution means.
template <typename T>
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Tensor<T> draw(const Shape& shape) = 0;
};

template <typename T>
class RngNoise final : public NoiseSource<T> {
 public:
  explicit RngNoise(Rng& rng) : rng_(&rng) {}
  Tensor<T> draw(const Shape& shape) override { return Tensor<T>::randn(shape, *rng_); }

 private:
  Rng* rng_;
};

template <typename T>
class ZeroNoise final : public NoiseSource<T> {
 public:
  Tensor<T> draw(const Shape& shape) override { return Tensor<T>(shape); }
};

// Mixture weights over components: (B, K, 1, S, S), each pixel a probability
// vector over the K components.
template <typename T>
struct MixtureMasks {
  Tensor<T> pi;

  // Entries in [0, 1] and per-pixel sum over K within tol of 1.
  void validate(double tol = 1e-6) const;
};

// Plain-tensor record of every latent quantity from one forward pass.
template <typename T>
struct LatentSet {
  std::vector<Tensor<T>> mask_samples;
  std::vector<dist::DiagGauss<T>> mask_posteriors;
  std::vector<dist::DiagGauss<T>> mask_priors;
  std::vector<Tensor<T>> comp_samples;
  std::vector<dist::DiagGauss<T>> comp_posteriors;
  std::vector<dist::DiagGauss<T>> comp_priors;
};

template <typename T>
struct ForwardOutput {
  MixtureMasks<T> masks;
  Tensor<T> appearances;  // (B, K, 3, S, S)
  LatentSet<T> latents;
  ad::Var<T> nll_per_pixel;  // batch-mean NLL per pixel-channel
  ad::Var<T> kl_mask;        // sum over steps of batch-mean KL(q_mask || p_mask)
  ad::Var<T> kl_component;   // sum over slots of batch-mean KL(q_comp || p_comp)
};

template <typename T>
struct MaskInference {
  std::vector<ad::Var<T>> samples;                // K of (B, mask_latent_dim)
  std::vector<dist::DiagGaussVar<T>> posteriors;  // K
};

// Stick-breaking decode of the mask latents. pi carries linear-space
// probabilities; log_pi carries the same shares computed directly in log
// space for use inside the mixture likelihood.
template <typename T>
struct MaskDecode {
  ad::Var<T> pi;                         // (B, K, 1, S, S)
  std::vector<ad::Var<T>> log_pi;        // K of (B, 1, S, S)
  std::vector<ad::Var<T>> scope_logits;  // K-1 of (B, 1, S, S), raw decoder output
};

template <typename T>
struct ComponentInference {
  std::vector<ad::Var<T>> samples;                // K of (B, component_latent_dim)
  std::vector<dist::DiagGaussVar<T>> posteriors;  // K
};

template <typename T>
struct GeneratedBatch {
  Tensor<T> images;       // (n, 3, S, S), clipped to [0, 1]
  Tensor<T> masks;        // (n, K, 1, S, S)
  Tensor<T> appearances;  // (n, K, 3, S, S)
};

// log sum_k exp(log_pi_k + log N(x; mean_k, sigma^2)) per pixel-channel.
// log_pi entries are (B, 1, S, S) and broadcast over channels.
template <typename T>
ad::Var<T> sgmm_log_lik_map(ad::Var<T> x, const std::vector<ad::Var<T>>& log_pi,
                            const std::vector<ad::Var<T>>& means, double sigma);

// Negative mixture log-likelihood summed over pixels and channels, one entry
// per batch element. pi holds linear probabilities (B, K, 1, S, S) and must
// be non-negative; appearances is (B, K, C, S, S).
template <typename T>
ad::Var<T> sgmm_nll(ad::Var<T> x, ad::Var<T> pi, ad::Var<T> appearances, double sigma);

// K-component VAE: autoregressive mask latents decoded into stick-breaking
// mixture masks, per-component appearance VAEs conditioned on [x; pi_k], and
// a pixelwise Gaussian-mixture likelihood.
template <typename T>
class GenesisModel {
 public:
  GenesisModel(nn::ParamSet<T>& params, const GenesisConfig& cfg, Rng& rng,
               int64_t image_size = 64);

  const GenesisConfig& config() const { return cfg_; }
  int64_t image_size() const { return size_; }

  // Sequential posterior q(z^m_k | x, z^m_{<k}): image features set the
  // recurrent start state; each step consumes the previous sample.
  MaskInference<T> infer_mask_latents(nn::Binding<T>& bind, ad::Var<T> x, NoiseSource<T>& noise);

  // Autoregressive prior p(z^m_k | z^m_{<k}); step 1 sees a learned start
  // token and a learned start state.
  std::vector<dist::DiagGaussVar<T>> mask_prior(nn::Binding<T>& bind,
                                                const std::vector<ad::Var<T>>& mask_samples);

  // Scope logits for slots 1..K-1; the final slot takes the leftover stick.
  MaskDecode<T> decode_masks(nn::Binding<T>& bind, const std::vector<ad::Var<T>>& mask_samples);

  // q(z^c_k | x, pi_k) from the configured component encoder over [x; pi_k].
  ComponentInference<T> infer_component_latents(nn::Binding<T>& bind, ad::Var<T> x,
                                                const MaskDecode<T>& masks,
                                                NoiseSource<T>& noise);

  // p(z^c_k | z^m_k): a two-hidden-layer ELU MLP applied per slot.
  std::vector<dist::DiagGaussVar<T>> component_prior(
      nn::Binding<T>& bind, const std::vector<ad::Var<T>>& mask_samples);

  // Appearance means (B, K, 3, S, S) from the configured component decoder.
  ad::Var<T> decode_components(nn::Binding<T>& bind, const std::vector<ad::Var<T>>& comp_samples);

  ForwardOutput<T> forward(nn::Binding<T>& bind, const Tensor<T>& x, NoiseSource<T>& noise);

  // Single-component VAE: pi fixed to 1, no mask prior or mask decode,
  // kl_mask identically 0. Requires K = 1.
  ForwardOutput<T> vanilla_forward(nn::Binding<T>& bind, const Tensor<T>& x,
                                   NoiseSource<T>& noise);

  // Ancestral sampling through the mask prior, component prior, and decoders;
  // images are the mixture means sum_k pi_k * mu_k.
  GeneratedBatch<T> generate(int64_t n, NoiseSource<T>& noise);

 private:
  ad::Var<T> validated_input(nn::Binding<T>& bind, const Tensor<T>& x) const;
  dist::DiagGaussVar<T> encode_component(nn::Binding<T>& bind, ad::Var<T> x4);
  ad::Var<T> decode_component(nn::Binding<T>& bind, ad::Var<T> z);
  ForwardOutput<T> finish_forward(nn::Binding<T>& bind, ad::Var<T> x, const MaskInference<T>& mi,
                                  const MaskDecode<T>& md,
                                  const std::vector<dist::DiagGaussVar<T>>& mask_priors,
                                  ad::Var<T> kl_mask, NoiseSource<T>& noise);

  GenesisConfig cfg_;
  int64_t size_ = 64;

  net::DcTrunk<T> mask_trunk_;
  nn::Linear<T> mask_feat_;  // trunk flat dim -> 2H, GLU to H
  nn::Linear<T> mask_init_;  // H -> 2H: posterior start state (h0, c0)
  nn::LstmCell<T> q_cell_;
  nn::Linear<T> q_head_;
  nn::LstmCell<T> p_cell_;
  nn::Linear<T> p_head_;
  Tensor<T> p_start_;  // (1, mask_latent_dim): learned prior start token
  Tensor<T> p_init_;   // (1, 2H): learned prior start state
  net::DcDecoder<T> mask_decoder_;

  // Exactly one encoder/decoder pair is built, per cfg.component_arch.
  std::unique_ptr<net::SbdEncoder<T>> sbd_enc_;
  std::unique_ptr<net::DcEncoder<T>> dc_enc_;
  std::unique_ptr<net::SbdDecoder<T>> sbd_dec_;
  std::unique_ptr<net::DcDecoder<T>> dc_dec_;

  nn::Linear<T> comp_prior_fc0_;
  nn::Linear<T> comp_prior_fc1_;
  nn::Linear<T> comp_prior_head_;
};

}  // namespace gblab
