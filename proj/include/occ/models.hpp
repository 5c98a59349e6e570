#pragma once

#include <array>
#include <vector>

#include "occ/layers.hpp"

namespace occ {

struct OccNetConfig {
  // Scales the 64..512 channel ladder of the 13-layer encoder.
  double width_multiplier = 0.125;
  int input_size = 64;

  // Channels of each of the 13 encoder convolutions.
  std::vector<int> encoder_channels() const;
};

/// Encoder-decoder fence segmenter: 13 conv/BN/ReLU encoder layers in five
/// blocks with four 2x2 max-pools, an ASPP bottleneck (rates 2, 4, 6, 8), a
/// mirrored decoder with transposed-convolution upsampling and concatenated
/// skip connections, and a sigmoid head.
class OccNet {
 public:
  static constexpr std::array<int, 5> kBlockDepths{2, 2, 3, 3, 3};

  OccNet(const OccNetConfig& config, Rng& rng);
  OccNet(const OccNet&) = delete;
  OccNet& operator=(const OccNet&) = delete;

  // image N x 3 x H x W with H, W divisible by 16; returns N x 1 x H x W in (0, 1).
  Tensor forward(const Tensor& image, bool training);

  const OccNetConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  int encoder_conv_count() const { return static_cast<int>(encoder_.size()); }
  int decoder_conv_count() const { return static_cast<int>(decoder_.size()); }
  // Number of forward() calls so far.
  long forward_count() const { return forward_count_; }

 private:
  struct ConvBnRelu {
    Conv2d conv;
    BatchNorm2d bn;
  };
  // Transposed 2x2 stride-2 convolution, weight C_in x C_out x 2 x 2.
  struct UpConv {
    Tensor weight;
    Tensor bias;
  };
  Tensor apply(ConvBnRelu& layer, const Tensor& x, bool training);

  OccNetConfig config_;
  ParamStore store_;
  std::vector<ConvBnRelu> encoder_;
  ASPP aspp_;
  std::vector<UpConv> upsamplers_;
  std::vector<ConvBnRelu> decoder_;
  Conv2d head_;
  long forward_count_ = 0;
};

struct GeneratorConfig {
  int base_channels = 16;
  int growth = 8;
  int dense_layers = 4;
  std::vector<int> dilation_rates{2, 4, 6, 8};
  int dilated_blocks = 1;
  Activation feature_activation = Activation::elu;
};

/// Gated-convolution inpainting generator: two dense blocks each followed by
/// max-pooling, dilated dense blocks, self-attention, then a nearest-upsample
/// decoder back to full resolution with a tanh-gated output layer.
class Generator {
 public:
  Generator(const GeneratorConfig& config, Rng& rng);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  // image N x 3 x H x W in [-1, 1], mask N x 1 x H x W in {0, 1}; H, W divisible by 4.
  Tensor forward(const Tensor& image, const Tensor& mask);

  const GeneratorConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const SelfAttention& attention() const { return attention_; }
  long forward_count() const { return forward_count_; }

 private:
  GeneratorConfig config_;
  ParamStore store_;
  GatedConv stem_;
  DenseBlock dense1_, dense2_;
  GatedConv transition1_, transition2_;
  std::vector<DenseBlock> dilated_;
  std::vector<GatedConv> dilated_transitions_;
  SelfAttention attention_;
  std::vector<GatedConv> decoder_;
  GatedConv output_;
  long forward_count_ = 0;
};

struct DiscriminatorConfig {
  std::vector<int> channels{64, 128, 256, 256, 256, 256, 256};
  int kernel = 4;
  int padding = 2;
  int input_size = 64;
  int input_channels = 3;
  int power_iterations = 1;

  // Stride of each conv: all 2, except the last two become 1 below 256 pixels.
  std::vector<int> strides() const;
  // Spatial extent after each conv; throws if any collapses to zero.
  std::vector<int> spatial_trace() const;
};

/// Seven spectrally normalized 4x4 convolutions with leaky ReLU(0.2) and a
/// spectrally normalized fully connected layer to one score per image.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, Rng& rng);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  // Returns N x 1. update_norm advances the spectral-norm power iteration.
  Tensor forward(const Tensor& image, bool update_norm);
  // Feature maps after every conv (for shape checks).
  std::vector<Shape> trace_shapes(const Tensor& image);

  const DiscriminatorConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  std::vector<SNConv2d>& convs() { return convs_; }

 private:
  DiscriminatorConfig config_;
  ParamStore store_;
  std::vector<SNConv2d> convs_;
  SNLinear fc_;
};

/// mask * raw + (1 - mask) * input; visible pixels equal the input exactly.
/// raw and input are N x C x H x W, mask is N x 1 x H x W.
Tensor composite_output(const Tensor& raw, const Tensor& input, const Tensor& mask);

}  // namespace occ
