#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "occ/ops.hpp"
#include "occ/rng.hpp"

namespace occ {

/// Ordered registry of a model's tensors.
///
/// Parameters are trainable and carry gradients; buffers (batch-norm running
/// statistics, spectral-norm vectors) are state that is saved with the model
/// but never touched by the optimizer.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
  };

  Tensor add_parameter(const std::string& name, Tensor init);
  Tensor add_buffer(const std::string& name, Tensor init);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> parameters() const;
  Eigen::Index parameter_count() const;
  Tensor find(const std::string& name) const;

  void zero_grad();
  // FNV-1a over the bit patterns of every parameter value.
  std::uint64_t parameter_hash() const;

 private:
  std::vector<Entry> entries_;
};

// He-normal conv weight O x C x k x k.
Tensor he_conv_weight(int out, int in, int k, Rng& rng);

struct Conv2d {
  Tensor weight;
  Tensor bias;
  ConvParams params;

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, ConvParams p,
         Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, params); }
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
};

struct GatedConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int dilation = 1;
  Activation feature_activation = Activation::elu;
};

/// phi(conv_f(x)) * sigmoid(conv_g(x)) with independent feature and gate filters.
class GatedConv {
 public:
  GatedConv() = default;
  GatedConv(ParamStore& store, const std::string& name, const GatedConvSpec& spec, Rng& rng);

  Tensor forward(const Tensor& x) const;
  // The gate sigma(conv_g(x)) alone.
  Tensor gate(const Tensor& x) const;

  const GatedConvSpec& spec() const { return spec_; }
  Tensor feature_weight, feature_bias, gate_weight, gate_bias;

 private:
  GatedConvSpec spec_;
  ConvParams params() const { return {spec_.stride, spec_.padding, spec_.dilation}; }
};

/// Power-iteration estimate of a weight's top singular value.
///
/// The left vector persists between calls (stored as a buffer); the weight is
/// viewed as an O x (numel / O) matrix.
class SpectralNorm {
 public:
  SpectralNorm() = default;
  SpectralNorm(ParamStore& store, const std::string& name, int rows, Rng& rng, int iterations = 1);
  // Standalone state not registered in any store.
  SpectralNorm(int rows, Rng& rng, int iterations);

  // W / sigma(W), sigma = u^T W v. When update is false the stored vector is
  // left untouched and the gradient is exact.
  Tensor apply(const Tensor& weight, bool update = true);

  double last_sigma() const { return last_sigma_; }
  int iterations() const { return iterations_; }
  void set_iterations(int n) { iterations_ = n; }
  const Tensor& u() const { return u_; }

 private:
  Tensor u_;
  int iterations_ = 1;
  double last_sigma_ = 0.0;
};

Tensor spectral_norm_apply(SpectralNorm& state, const Tensor& weight);

struct SNConv2d {
  Tensor weight;
  Tensor bias;
  ConvParams params;
  SpectralNorm norm;

  SNConv2d() = default;
  SNConv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, ConvParams p,
           Rng& rng, int power_iterations);
  Tensor forward(const Tensor& x, bool update_norm);
};

struct SNLinear {
  Tensor weight;
  Tensor bias;
  SpectralNorm norm;

  SNLinear() = default;
  SNLinear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
           int power_iterations);
  Tensor forward(const Tensor& x, bool update_norm);
};

/// Per-channel batch normalization over N, H, W.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& store, const std::string& name, int channels);

  // Training mode normalizes with batch statistics and updates the running averages.
  Tensor forward(const Tensor& x, bool training);

  Tensor gamma, beta, running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct DenseBlockSpec {
  int in_channels = 1;
  int growth = 8;
  // One entry per layer; 1 for a plain dense block.
  std::vector<int> dilations{1, 1, 1, 1};
  Activation activation = Activation::elu;
  bool gated = true;

  int num_layers() const { return static_cast<int>(dilations.size()); }
  int out_channels() const { return in_channels + num_layers() * growth; }
};

/// Each layer sees the channel concatenation of the block input and all
/// previous layer outputs. 3x3 kernels, padding equal to the dilation.
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(ParamStore& store, const std::string& name, const DenseBlockSpec& spec, Rng& rng);

  Tensor forward(const Tensor& x) const;
  const DenseBlockSpec& spec() const { return spec_; }

  std::vector<GatedConv> gated_layers;
  std::vector<Conv2d> plain_layers;

 private:
  DenseBlockSpec spec_;
};

struct ASPPSpec {
  int in_channels = 1;
  int out_channels = 1;
  std::vector<int> rates{2, 4, 6, 8};
};

/// Sum of parallel 3x3 atrous convolutions, padding = rate.
class ASPP {
 public:
  ASPP() = default;
  ASPP(ParamStore& store, const std::string& name, const ASPPSpec& spec, Rng& rng);

  Tensor forward(const Tensor& x) const;
  const ASPPSpec& spec() const { return spec_; }

  std::vector<Conv2d> branches;

 private:
  ASPPSpec spec_;
};

struct AttentionSpec {
  int channels = 1;
  int key_dim = 1;
};

struct AttentionResult {
  Tensor output;     // N x C x H x W
  Tensor attention;  // N x HW x HW, row-stochastic
};

/// Scaled dot-product self-attention over spatial positions with 1x1
/// query/key/value projections and a learned residual scale (starts at 0).
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParamStore& store, const std::string& name, const AttentionSpec& spec, Rng& rng);

  AttentionResult forward(const Tensor& x) const;
  const AttentionSpec& spec() const { return spec_; }

  Conv2d query, key, value;
  Tensor gamma;

 private:
  AttentionSpec spec_;
};

// Replicates an N x 1 x H x W map over C channels.
Tensor expand_channels(const Tensor& map, int channels);

}  // namespace occ
