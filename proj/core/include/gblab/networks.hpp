#pragma once

#include <string>
#include <vector>

#include "gblab/distributions.hpp"
#include "gblab/nn.hpp"

namespace gblab::net {

enum class Activation { ELU, BN_GLU, GLU, NONE };

// One convolutional layer row. out_channels is the pre-activation count;
// GLU-family activations halve it.
struct ConvLayerSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 0;
  int stride = 1;
  int padding = 0;
  bool transposed = false;
  Activation activation = Activation::NONE;
  int out_pad = 0;

  int64_t post_channels() const {
    return (activation == Activation::BN_GLU || activation == Activation::GLU)
               ? out_channels / 2
               : out_channels;
  }
  int64_t out_spatial(int64_t in) const {
    return transposed ? (in - 1) * stride - 2 * padding + kernel + out_pad
                      : (in + 2 * padding - kernel) / stride + 1;
  }
};

enum class ArchVariant { SBD_ENCODER, SBD_DECODER, DC_ENCODER, DC_DECODER };

std::string to_string(ArchVariant v);

// The fixed conv-trunk layer list for a variant, including the final 1x1
// projection for decoders. first_in sets the input channel count where it is
// not fixed by the table (SBD decoder: latent + 2 coordinates); decoders also
// take the output channel count of the 1x1 head.
std::vector<ConvLayerSpec> conv_trunk(ArchVariant v, int64_t first_in = 4,
                                      int64_t head_out = 3);

// Spatial sizes after each layer given the input size.
std::vector<int64_t> spatial_trace(const std::vector<ConvLayerSpec>& specs, int64_t in);

// z (B, L) broadcast to (B, L+2, h, w); the two extra channels are linear
// ramps over [-1, 1] along height and width.
template <typename T>
ad::Var<T> broadcast_grid(nn::Binding<T>& bind, ad::Var<T> z, int64_t height, int64_t width);

// Runs a ConvLayerSpec list; optionally records post-activation shapes.
template <typename T>
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(nn::ParamSet<T>& ps, const std::string& prefix, std::vector<ConvLayerSpec> specs,
            Rng& rng);
  ad::Var<T> operator()(nn::Binding<T>& bind, ad::Var<T> x,
                        std::vector<Shape>* trace = nullptr);
  const std::vector<ConvLayerSpec>& specs() const { return specs_; }

 private:
  std::vector<ConvLayerSpec> specs_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::ConvTranspose2d<T>> tconvs_;
  std::vector<nn::BatchNorm2d<T>> bns_;
  std::vector<int> conv_index_, bn_index_;
};

// Gated-convolution feature trunk shared by the DC encoder and the mask
// feature extractor: five 5x5 BN-GLU convolutions, flattened to
// (B, 64 * (S/4)^2) for input size S (16384 at the default 64).
template <typename T>
class DcTrunk {
 public:
  DcTrunk() = default;
  DcTrunk(nn::ParamSet<T>& ps, const std::string& prefix, int64_t in_channels, Rng& rng,
          int64_t image_size = 64);
  ad::Var<T> operator()(nn::Binding<T>& bind, ad::Var<T> x,
                        std::vector<Shape>* trace = nullptr);
  int64_t flat_dim() const { return flat_dim_; }

 private:
  ConvStack<T> stack_;
  int64_t flat_dim_ = 0;
};

template <typename T>
class SbdEncoder {
 public:
  SbdEncoder() = default;
  SbdEncoder(nn::ParamSet<T>& ps, const std::string& prefix, int64_t latent_dim, Rng& rng,
             int64_t image_size = 64);
  // x (B, 4, S, S) -> DiagGauss over (B, latent_dim)
  dist::DiagGaussVar<T> operator()(nn::Binding<T>& bind, ad::Var<T> x,
                                   std::vector<Shape>* trace = nullptr);
  int64_t latent_dim() const { return latent_dim_; }

 private:
  ConvStack<T> trunk_;
  nn::Linear<T> fc_;
  nn::Linear<T> head_;
  int64_t latent_dim_ = 0;
  int64_t size_ = 0;
  int64_t flat_dim_ = 0;
};

template <typename T>
class SbdDecoder {
 public:
  SbdDecoder() = default;
  SbdDecoder(nn::ParamSet<T>& ps, const std::string& prefix, int64_t latent_dim, Rng& rng,
             int64_t image_size = 64);
  // z (B, L) -> (B, 3, S, S); z is broadcast to an (S+8)-wide grid first
  ad::Var<T> operator()(nn::Binding<T>& bind, ad::Var<T> z,
                        std::vector<Shape>* trace = nullptr);

 private:
  ConvStack<T> trunk_;
  int64_t latent_dim_ = 0;
  int64_t size_ = 0;
};

template <typename T>
class DcEncoder {
 public:
  DcEncoder() = default;
  DcEncoder(nn::ParamSet<T>& ps, const std::string& prefix, int64_t latent_dim, Rng& rng,
            int64_t image_size = 64);
  // x (B, 4, S, S) -> DiagGauss over (B, latent_dim)
  dist::DiagGaussVar<T> operator()(nn::Binding<T>& bind, ad::Var<T> x,
                                   std::vector<Shape>* trace = nullptr);
  int64_t latent_dim() const { return latent_dim_; }

 private:
  DcTrunk<T> trunk_;
  nn::Linear<T> head_;  // trunk flat dim -> 4L, GLU halves to 2L
  int64_t latent_dim_ = 0;
  int64_t size_ = 0;
};

template <typename T>
class DcDecoder {
 public:
  DcDecoder() = default;
  DcDecoder(nn::ParamSet<T>& ps, const std::string& prefix, int64_t latent_dim,
            int64_t out_channels, Rng& rng, int64_t image_size = 64);
  // z (B, L) -> (B, out_channels, S, S)
  ad::Var<T> operator()(nn::Binding<T>& bind, ad::Var<T> z,
                        std::vector<Shape>* trace = nullptr);

 private:
  nn::Linear<T> fc_;  // L -> (S/4)^2 * 128, GLU halves to (64, S/4, S/4)
  ConvStack<T> trunk_;
  int64_t latent_dim_ = 0;
  int64_t seed_spatial_ = 0;
};

}  // namespace gblab::net
