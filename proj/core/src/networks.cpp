#include "gblab/networks.hpp"

#include "gblab/errors.hpp"

namespace gblab::net {

namespace ad = gblab::ad;

std::string to_string(ArchVariant v) {
  switch (v) {
    case ArchVariant::SBD_ENCODER: return "sbd_encoder";
    case ArchVariant::SBD_DECODER: return "sbd_decoder";
    case ArchVariant::DC_ENCODER: return "dc_encoder";
    case ArchVariant::DC_DECODER: return "dc_decoder";
  }
  return "?";
}

std::vector<ConvLayerSpec> conv_trunk(ArchVariant v, int64_t first_in, int64_t head_out) {
  using A = Activation;
  switch (v) {
    case ArchVariant::SBD_ENCODER:
      return {{4, 32, 3, 2, 1, false, A::ELU},
              {32, 32, 3, 2, 1, false, A::ELU},
              {32, 64, 3, 2, 1, false, A::ELU},
              {64, 64, 3, 2, 1, false, A::ELU}};
    case ArchVariant::SBD_DECODER:
      return {{first_in, 32, 3, 1, 0, false, A::ELU},
              {32, 32, 3, 1, 0, false, A::ELU},
              {32, 32, 3, 1, 0, false, A::ELU},
              {32, 32, 3, 1, 0, false, A::ELU},
              {32, head_out, 1, 1, 0, false, A::NONE}};
    case ArchVariant::DC_ENCODER:
      return {{4, 64, 5, 1, 2, false, A::BN_GLU},
              {32, 64, 5, 2, 2, false, A::BN_GLU},
              {32, 128, 5, 1, 2, false, A::BN_GLU},
              {64, 128, 5, 2, 2, false, A::BN_GLU},
              {64, 128, 5, 1, 2, false, A::BN_GLU}};
    case ArchVariant::DC_DECODER:
      return {{64, 128, 5, 1, 2, true, A::BN_GLU, 0},
              {64, 64, 5, 2, 2, true, A::BN_GLU, 1},
              {32, 64, 5, 1, 2, true, A::BN_GLU, 0},
              {32, 64, 5, 2, 2, true, A::BN_GLU, 1},
              {32, 64, 5, 1, 2, true, A::BN_GLU, 0},
              {32, head_out, 1, 1, 0, false, A::NONE}};
  }
  return {};
}

std::vector<int64_t> spatial_trace(const std::vector<ConvLayerSpec>& specs, int64_t in) {
  std::vector<int64_t> sizes;
  for (const auto& s : specs) {
    in = s.out_spatial(in);
    sizes.push_back(in);
  }
  return sizes;
}

template <typename T>
ad::Var<T> broadcast_grid(nn::Binding<T>& bind, ad::Var<T> z, int64_t height, int64_t width) {
  if (height < 1 || width < 1) throw InvalidArgument("broadcast_grid: bad grid size");
  const int64_t B = z.value().size(0);
  ad::Var<T> tiles = ad::broadcast_spatial(z, height, width);
  Tensor<T> coords({B, 2, height, width});
  T* c = coords.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < height; ++i)
      for (int64_t j = 0; j < width; ++j) {
        const T y = height > 1 ? T(-1) + T(2) * i / static_cast<T>(height - 1) : T(0);
        const T x = width > 1 ? T(-1) + T(2) * j / static_cast<T>(width - 1) : T(0);
        c[((b * 2 + 0) * height + i) * width + j] = y;
        c[((b * 2 + 1) * height + i) * width + j] = x;
      }
  return ad::concat_channels(
      std::vector<ad::Var<T>>{tiles, bind.tape().constant(std::move(coords))});
}

template <typename T>
ConvStack<T>::ConvStack(nn::ParamSet<T>& ps, const std::string& prefix,
                        std::vector<ConvLayerSpec> specs, Rng& rng)
    : specs_(std::move(specs)) {
  for (size_t i = 0; i < specs_.size(); ++i) {
    const ConvLayerSpec& s = specs_[i];
    if ((s.activation == Activation::BN_GLU || s.activation == Activation::GLU) &&
        s.out_channels % 2 != 0)
      throw InvalidArgument("gated layer needs even channel count");
    const std::string name = prefix + ".conv." + std::to_string(i);
    if (s.transposed) {
      conv_index_.push_back(static_cast<int>(tconvs_.size()));
      tconvs_.emplace_back(ps, name, s.in_channels, s.out_channels, s.kernel, s.stride,
                           s.padding, s.out_pad, rng);
    } else {
      conv_index_.push_back(static_cast<int>(convs_.size()));
      convs_.emplace_back(ps, name, s.in_channels, s.out_channels, s.kernel, s.stride,
                          s.padding, rng);
    }
    if (s.activation == Activation::BN_GLU) {
      bn_index_.push_back(static_cast<int>(bns_.size()));
      bns_.emplace_back(ps, prefix + ".bn." + std::to_string(i), s.out_channels);
    } else {
      bn_index_.push_back(-1);
    }
  }
}

template <typename T>
ad::Var<T> ConvStack<T>::operator()(nn::Binding<T>& bind, ad::Var<T> x,
                                    std::vector<Shape>* trace) {
  for (size_t i = 0; i < specs_.size(); ++i) {
    const ConvLayerSpec& s = specs_[i];
    x = s.transposed ? tconvs_[conv_index_[i]](bind, x) : convs_[conv_index_[i]](bind, x);
    switch (s.activation) {
      case Activation::ELU: x = ad::elu(x); break;
      case Activation::BN_GLU: x = ad::glu(bns_[bn_index_[i]](bind, x)); break;
      case Activation::GLU: x = ad::glu(x); break;
      case Activation::NONE: break;
    }
    if (trace) trace->push_back(x.value().shape());
  }
  return x;
}

// Gated trunks halve the grid twice, so sizes must divide by 4 cleanly.
static void require_dc_size(int64_t image_size, const char* who) {
  if (image_size < 8 || image_size % 4 != 0)
    throw InvalidArgument(std::string(who) + ": image size must be a multiple of 4, >= 8");
}

template <typename T>
DcTrunk<T>::DcTrunk(nn::ParamSet<T>& ps, const std::string& prefix, int64_t in_channels,
                    Rng& rng, int64_t image_size) {
  require_dc_size(image_size, "dc trunk");
  auto specs = conv_trunk(ArchVariant::DC_ENCODER);
  specs[0].in_channels = in_channels;
  const int64_t side = spatial_trace(specs, image_size).back();
  flat_dim_ = specs.back().post_channels() * side * side;
  stack_ = ConvStack<T>(ps, prefix, std::move(specs), rng);
}

template <typename T>
ad::Var<T> DcTrunk<T>::operator()(nn::Binding<T>& bind, ad::Var<T> x,
                                  std::vector<Shape>* trace) {
  ad::Var<T> h = stack_(bind, x, trace);
  const int64_t B = h.value().size(0);
  return ad::reshape(h, {B, flat_dim_});
}

template <typename T>
SbdEncoder<T>::SbdEncoder(nn::ParamSet<T>& ps, const std::string& prefix, int64_t latent_dim,
                          Rng& rng, int64_t image_size)
    : latent_dim_(latent_dim), size_(image_size) {
  if (image_size < 8) throw InvalidArgument("sbd encoder: image size must be >= 8");
  auto specs = conv_trunk(ArchVariant::SBD_ENCODER);
  const int64_t side = spatial_trace(specs, image_size).back();
  flat_dim_ = specs.back().post_channels() * side * side;
  trunk_ = ConvStack<T>(ps, prefix, std::move(specs), rng);
  fc_ = nn::Linear<T>(ps, prefix + ".fc.0", flat_dim_, 256, rng);
  head_ = nn::Linear<T>(ps, prefix + ".fc.1", 256, 2 * latent_dim, rng);
}

template <typename T>
dist::DiagGaussVar<T> SbdEncoder<T>::operator()(nn::Binding<T>& bind, ad::Var<T> x,
                                                std::vector<Shape>* trace) {
  const Shape s = x.value().shape();
  if (s.size() != 4 || s[1] != 4 || s[2] != size_ || s[3] != size_)
    throw InvalidArgument("sbd encoder expects (B, 4, " + std::to_string(size_) + ", " +
                          std::to_string(size_) + "), got " + shape_str(s));
  ad::Var<T> h = trunk_(bind, x, trace);
  h = ad::reshape(h, {s[0], flat_dim_});
  h = ad::elu(fc_(bind, h));
  if (trace) trace->push_back(h.value().shape());
  ad::Var<T> out = head_(bind, h);
  if (trace) trace->push_back(out.value().shape());
  return {ad::slice_cols(out, 0, latent_dim_), ad::slice_cols(out, latent_dim_, 2 * latent_dim_)};
}

template <typename T>
SbdDecoder<T>::SbdDecoder(nn::ParamSet<T>& ps, const std::string& prefix, int64_t latent_dim,
                          Rng& rng, int64_t image_size)
    : latent_dim_(latent_dim), size_(image_size) {
  if (image_size < 1) throw InvalidArgument("sbd decoder: image size must be >= 1");
  trunk_ = ConvStack<T>(ps, prefix, conv_trunk(ArchVariant::SBD_DECODER, latent_dim + 2), rng);
}

template <typename T>
ad::Var<T> SbdDecoder<T>::operator()(nn::Binding<T>& bind, ad::Var<T> z,
                                     std::vector<Shape>* trace) {
  if (z.value().ndim() != 2 || z.value().size(1) != latent_dim_)
    throw InvalidArgument("sbd decoder expects (B, " + std::to_string(latent_dim_) + ")");
  ad::Var<T> grid = broadcast_grid(bind, z, size_ + 8, size_ + 8);
  if (trace) trace->push_back(grid.value().shape());
  return trunk_(bind, grid, trace);
}

template <typename T>
DcEncoder<T>::DcEncoder(nn::ParamSet<T>& ps, const std::string& prefix, int64_t latent_dim,
                        Rng& rng, int64_t image_size)
    : latent_dim_(latent_dim), size_(image_size) {
  trunk_ = DcTrunk<T>(ps, prefix, 4, rng, image_size);
  head_ = nn::Linear<T>(ps, prefix + ".fc.0", trunk_.flat_dim(), 4 * latent_dim, rng);
}

template <typename T>
dist::DiagGaussVar<T> DcEncoder<T>::operator()(nn::Binding<T>& bind, ad::Var<T> x,
                                               std::vector<Shape>* trace) {
  const Shape s = x.value().shape();
  if (s.size() != 4 || s[1] != 4 || s[2] != size_ || s[3] != size_)
    throw InvalidArgument("dc encoder expects (B, 4, " + std::to_string(size_) + ", " +
                          std::to_string(size_) + "), got " + shape_str(s));
  ad::Var<T> h = trunk_(bind, x, trace);
  ad::Var<T> out = ad::glu(head_(bind, h));
  if (trace) trace->push_back(out.value().shape());
  return {ad::slice_cols(out, 0, latent_dim_), ad::slice_cols(out, latent_dim_, 2 * latent_dim_)};
}

template <typename T>
DcDecoder<T>::DcDecoder(nn::ParamSet<T>& ps, const std::string& prefix, int64_t latent_dim,
                        int64_t out_channels, Rng& rng, int64_t image_size)
    : latent_dim_(latent_dim), seed_spatial_(image_size / 4) {
  require_dc_size(image_size, "dc decoder");
  if (out_channels != 1 && out_channels != 3)
    throw InvalidArgument("dc decoder head must emit 1 or 3 channels");
  fc_ = nn::Linear<T>(ps, prefix + ".fc.0", latent_dim, seed_spatial_ * seed_spatial_ * 128, rng);
  trunk_ = ConvStack<T>(ps, prefix, conv_trunk(ArchVariant::DC_DECODER, 64, out_channels), rng);
}

template <typename T>
ad::Var<T> DcDecoder<T>::operator()(nn::Binding<T>& bind, ad::Var<T> z,
                                    std::vector<Shape>* trace) {
  if (z.value().ndim() != 2 || z.value().size(1) != latent_dim_)
    throw InvalidArgument("dc decoder expects (B, " + std::to_string(latent_dim_) + ")");
  const int64_t B = z.value().size(0);
  ad::Var<T> h = ad::glu(fc_(bind, z));
  h = ad::reshape(h, {B, 64, seed_spatial_, seed_spatial_});
  if (trace) trace->push_back(h.value().shape());
  return trunk_(bind, h, trace);
}

#define GBLAB_INSTANTIATE(T)                                                        \
  template ad::Var<T> broadcast_grid(nn::Binding<T>&, ad::Var<T>, int64_t, int64_t); \
  template class ConvStack<T>;                                                      \
  template class DcTrunk<T>;                                                        \
  template class SbdEncoder<T>;                                                     \
  template class SbdDecoder<T>;                                                     \
  template class DcEncoder<T>;                                                      \
  template class DcDecoder<T>;

GBLAB_INSTANTIATE(float)
GBLAB_INSTANTIATE(double)

#undef GBLAB_INSTANTIATE

}  // namespace gblab::net
