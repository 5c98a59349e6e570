#include "occ/models.hpp"

#include <cmath>

namespace occ {

namespace {

void require_image(const Tensor& t, int channels, const char* who) {
  if (t.rank() != 4 || t.dim(1) != channels) {
    throw ShapeError(std::string(who) + " expects N x " + std::to_string(channels) +
                     " x H x W, got " + to_string(t.shape()));
  }
}

}  // namespace

std::vector<int> OccNetConfig::encoder_channels() const {
  static constexpr int ladder[] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
  std::vector<int> out;
  for (int c : ladder) out.push_back(std::max(1, static_cast<int>(std::lround(c * width_multiplier))));
  return out;
}

OccNet::OccNet(const OccNetConfig& config, Rng& rng) : config_(config) {
  if (config.input_size % 16 != 0) {
    throw ShapeError("OccNet input size must be divisible by 16, got " +
                     std::to_string(config.input_size));
  }
  const std::vector<int> channels = config.encoder_channels();
  std::vector<int> block_channels;
  int in = 3, idx = 0;
  for (std::size_t b = 0; b < kBlockDepths.size(); ++b) {
    for (int j = 0; j < kBlockDepths[b]; ++j, ++idx) {
      const int out = channels[static_cast<std::size_t>(idx)];
      const std::string name = "enc" + std::to_string(idx);
      encoder_.push_back({Conv2d(store_, name + ".conv", in, out, 3, {1, 1, 1}, rng),
                          BatchNorm2d(store_, name + ".bn", out)});
      in = out;
    }
    block_channels.push_back(in);
  }

  aspp_ = ASPP(store_, "aspp", ASPPSpec{in, in, {2, 4, 6, 8}}, rng);

  idx = 0;
  for (int b = static_cast<int>(kBlockDepths.size()) - 1; b >= 0; --b) {
    const int width = block_channels[static_cast<std::size_t>(b)];
    int layer_in = in;
    if (b < static_cast<int>(kBlockDepths.size()) - 1) {
      const std::string name = "up" + std::to_string(b);
      UpConv up;
      up.weight = store_.add_parameter(name + ".weight",
                                       normal_tensor({in, width, 2, 2}, rng, std::sqrt(2.0 / in)));
      up.bias = store_.add_parameter(name + ".bias", Tensor({width}));
      upsamplers_.push_back(up);
      layer_in = 2 * width;
    }
    for (int j = 0; j < kBlockDepths[static_cast<std::size_t>(b)]; ++j, ++idx) {
      const std::string name = "dec" + std::to_string(idx);
      decoder_.push_back({Conv2d(store_, name + ".conv", layer_in, width, 3, {1, 1, 1}, rng),
                          BatchNorm2d(store_, name + ".bn", width)});
      layer_in = width;
    }
    in = width;
  }
  head_ = Conv2d(store_, "head", in, 1, 1, {}, rng);
}

Tensor OccNet::apply(ConvBnRelu& layer, const Tensor& x, bool training) {
  return relu(layer.bn.forward(layer.conv.forward(x), training));
}

Tensor OccNet::forward(const Tensor& image, bool training) {
  require_image(image, 3, "OccNet");
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0) {
    throw ShapeError("OccNet input extent must be divisible by 16, got " + to_string(image.shape()));
  }
  ++forward_count_;
  const int blocks = static_cast<int>(kBlockDepths.size());
  std::vector<Tensor> skips;
  Tensor x = image;
  std::size_t idx = 0;
  for (int b = 0; b < blocks; ++b) {
    for (int j = 0; j < kBlockDepths[static_cast<std::size_t>(b)]; ++j) {
      x = apply(encoder_[idx++], x, training);
    }
    if (b < blocks - 1) {
      skips.push_back(x);
      x = max_pool2(x);
    }
  }
  x = relu(aspp_.forward(x));
  idx = 0;
  std::size_t up = 0;
  for (int b = blocks - 1; b >= 0; --b) {
    if (b < blocks - 1) {
      const UpConv& u = upsamplers_[up++];
      x = relu(conv2d_transposed(x, u.weight, u.bias, 2, 0));
      x = concat(x, skips[static_cast<std::size_t>(b)]);
    }
    for (int j = 0; j < kBlockDepths[static_cast<std::size_t>(b)]; ++j) {
      x = apply(decoder_[idx++], x, training);
    }
  }
  return sigmoid(head_.forward(x));
}

Generator::Generator(const GeneratorConfig& config, Rng& rng) : config_(config) {
  const int c = config.base_channels;
  const Activation phi = config.feature_activation;
  auto gated = [&](const std::string& name, int in, int out, int k) {
    return GatedConv(store_, name, GatedConvSpec{in, out, k, 1, k / 2, 1, phi}, rng);
  };
  const std::vector<int> plain(static_cast<std::size_t>(config.dense_layers), 1);

  stem_ = gated("stem", 4, c, 3);
  dense1_ = DenseBlock(store_, "db1", DenseBlockSpec{c, config.growth, plain, phi, true}, rng);
  transition1_ = gated("t1", dense1_.spec().out_channels(), 2 * c, 1);
  dense2_ = DenseBlock(store_, "db2", DenseBlockSpec{2 * c, config.growth, plain, phi, true}, rng);
  transition2_ = gated("t2", dense2_.spec().out_channels(), 4 * c, 1);
  for (int i = 0; i < config.dilated_blocks; ++i) {
    const std::string name = "ddb" + std::to_string(i);
    dilated_.emplace_back(store_, name,
                          DenseBlockSpec{4 * c, config.growth, config.dilation_rates, phi, true}, rng);
    dilated_transitions_.push_back(gated(name + ".t", dilated_.back().spec().out_channels(), 4 * c, 1));
  }
  attention_ = SelfAttention(store_, "attn", AttentionSpec{4 * c, std::max(1, c / 2)}, rng);
  decoder_.push_back(gated("dec0", 4 * c, 2 * c, 3));
  decoder_.push_back(gated("dec1", 2 * c, 2 * c, 3));
  decoder_.push_back(gated("dec2", 2 * c, c, 3));
  decoder_.push_back(gated("dec3", c, c, 3));
  output_ = GatedConv(store_, "out", GatedConvSpec{c, 3, 3, 1, 1, 1, Activation::tanh}, rng);
}

Tensor Generator::forward(const Tensor& image, const Tensor& mask) {
  require_image(image, 3, "generator image");
  require_image(mask, 1, "generator mask");
  if (image.dim(0) != mask.dim(0) || image.dim(2) != mask.dim(2) || image.dim(3) != mask.dim(3)) {
    throw ShapeError("generator image " + to_string(image.shape()) + " and mask " +
                     to_string(mask.shape()) + " disagree");
  }
  if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0) {
    throw ShapeError("generator input extent must be divisible by 4, got " + to_string(image.shape()));
  }
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const double m = mask.data()[i];
    if (m != 0.0 && m != 1.0) throw Error("generator mask must be binary");
  }
  ++forward_count_;
  Tensor x = stem_.forward(concat(image, mask));
  x = transition1_.forward(max_pool2(dense1_.forward(x)));
  x = transition2_.forward(max_pool2(dense2_.forward(x)));
  for (std::size_t i = 0; i < dilated_.size(); ++i) {
    x = dilated_transitions_[i].forward(dilated_[i].forward(x));
  }
  x = attention_.forward(x).output;
  x = decoder_[1].forward(decoder_[0].forward(upsample_nearest2(x)));
  x = decoder_[3].forward(decoder_[2].forward(upsample_nearest2(x)));
  return output_.forward(x);
}

std::vector<int> DiscriminatorConfig::strides() const {
  std::vector<int> s(channels.size(), 2);
  if (input_size < 256) {
    for (std::size_t i = s.size() >= 2 ? s.size() - 2 : 0; i < s.size(); ++i) s[i] = 1;
  }
  return s;
}

std::vector<int> DiscriminatorConfig::spatial_trace() const {
  std::vector<int> trace;
  int extent = input_size;
  const std::vector<int> s = strides();
  for (std::size_t i = 0; i < channels.size(); ++i) {
    extent = conv_output_extent(extent, kernel, ConvParams{s[i], padding, 1});
    if (extent < 1) {
      throw ShapeError("discriminator input " + std::to_string(input_size) +
                       " collapses to zero extent at layer " + std::to_string(i + 1));
    }
    trace.push_back(extent);
  }
  return trace;
}

Discriminator::Discriminator(const DiscriminatorConfig& config, Rng& rng) : config_(config) {
  const std::vector<int> trace = config.spatial_trace();
  const std::vector<int> strides = config.strides();
  int in = config.input_channels;
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    convs_.emplace_back(store_, "conv" + std::to_string(i), in, config.channels[i], config.kernel,
                        ConvParams{strides[i], config.padding, 1}, rng, config.power_iterations);
    in = config.channels[i];
  }
  const int features = in * trace.back() * trace.back();
  fc_ = SNLinear(store_, "fc", features, 1, rng, config.power_iterations);
}

Tensor Discriminator::forward(const Tensor& image, bool update_norm) {
  require_image(image, config_.input_channels, "discriminator");
  if (image.dim(2) != config_.input_size || image.dim(3) != config_.input_size) {
    throw ShapeError("discriminator configured for " + std::to_string(config_.input_size) +
                     " pixels, got " + to_string(image.shape()));
  }
  Tensor x = image;
  for (SNConv2d& conv : convs_) x = activation(conv.forward(x, update_norm), Activation::leaky_relu);
  const int n = x.dim(0);
  x = reshape(x, {n, static_cast<int>(x.size() / n)});
  return fc_.forward(x, update_norm);
}

std::vector<Shape> Discriminator::trace_shapes(const Tensor& image) {
  NoTape untracked;
  std::vector<Shape> shapes;
  Tensor x = image;
  for (SNConv2d& conv : convs_) {
    x = activation(conv.forward(x, false), Activation::leaky_relu);
    shapes.push_back(x.shape());
  }
  return shapes;
}

Tensor composite_output(const Tensor& raw, const Tensor& input, const Tensor& mask) {
  if (raw.shape() != input.shape()) {
    throw ShapeError("composite: raw " + to_string(raw.shape()) + " vs input " +
                     to_string(input.shape()));
  }
  if (mask.rank() != 4 || mask.dim(1) != 1 || mask.dim(0) != raw.dim(0) ||
      mask.dim(2) != raw.dim(2) || mask.dim(3) != raw.dim(3)) {
    throw ShapeError("composite: mask " + to_string(mask.shape()) + " does not fit " +
                     to_string(raw.shape()));
  }
  Tensor keep;
  {
    NoTape untracked;
    keep = expand_channels(mask, raw.dim(1));
  }
  // (1 - m) * x is formed directly; with m in {0, 1} it is exactly x or 0.
  Tensor visible(input.shape(), Vector(input.values().cwiseProduct(
                                    (1.0 - keep.values().array()).matrix())));
  return add(mul(raw, keep), visible);
}

}  // namespace occ
