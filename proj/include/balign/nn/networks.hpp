#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "balign/nn/ops.hpp"
#include "balign/nn/tensor.hpp"

namespace balign::nn {

enum class LayerKind { Conv3x3, BatchNorm, ReLU, ResidualBlock, GlobalAvgPool, Flatten, FullyConnected, Sigmoid };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int out_channels = 0;  // Conv3x3 / FullyConnected
  int stride = 1;        // Conv3x3; 2 = downsample
  bool zero_init = false;
};

/// Layer list plus the input shape [C, H, W]. `tap_end` is the number of
/// leading layers forming stage 0 (0 = no tap).
struct NetworkSpec {
  std::string name;
  std::vector<int> input_shape;
  std::vector<LayerSpec> layers;
  std::size_t tap_end = 0;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

class Network {
 public:
  Network() = default;
  /// Validates layer compatibility (std::invalid_argument) and initialises
  /// weights from `seed` (He-normal; zero where requested).
  Network(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }

  /// x: [N, C, H, W] matching the spec's input shape.
  Tensor forward(const Tensor& x, bool training);
  /// Runs layers [begin, end); input shape must match layer `begin`'s input.
  Tensor forward_range(const Tensor& x, std::size_t begin, std::size_t end, bool training);
  Tensor forward_stage0(const Tensor& x, bool training) { return forward_range(x, 0, spec_.tap_end, training); }
  Tensor forward_after_stage0(const Tensor& x, bool training) {
    return forward_range(x, spec_.tap_end, spec_.layers.size(), training);
  }

  /// Per-sample shape entering layer i ([C, H, W] or [D]); i == size gives the output.
  const std::vector<int>& shape_before(std::size_t i) const { return shapes_.at(i); }
  const std::vector<int>& output_shape() const { return shapes_.back(); }

  std::vector<NamedParam> parameters(const std::string& prefix = "");
  std::size_t parameter_count() const;

  /// Running batch-norm statistics, in layer order, for checkpointing.
  std::vector<BatchNormState*> batch_norm_states();

 private:
  struct Layer {
    LayerSpec spec;
    // conv: {w}; bn: {gamma, beta}; fc: {w, b};
    // residual: {w1, gamma1, beta1, w2, gamma2, beta2}
    std::vector<Tensor> params;
    BatchNormState bn, bn2;
  };
  Tensor apply(Layer& layer, const Tensor& x, bool training);

  NetworkSpec spec_;
  std::vector<Layer> layers_;
  std::vector<std::vector<int>> shapes_;
};

/// Miniature localisation network: channels {8, 16, 32} and a 128-wide hidden
/// FC for 32x32 inputs, zero-initialised final FC of `output_dim` values.
NetworkSpec locnet_spec(int output_dim, int input_channels = 1, int image_size = 32);
/// TPS LocNet: 2 * grid_size^2 offsets from the regular lattice.
Network build_locnet(int grid_size, int input_channels = 1, std::uint64_t seed = 0, int image_size = 32);

struct RecNetOptions {
  int embedding_dim = 64;
  int input_channels = 1;
  int image_size = 32;
  std::vector<int> channels{8, 16, 32, 64};
  bool residual = false;
  bool global_pool = false;
};

/// Stage 0 is a same-resolution conv block exposed as tap; later stages
/// downsample by 2 and the output layer is BN -> FC -> BN.
NetworkSpec recnet_spec(const RecNetOptions& options);
Network build_recnet(int embedding_dim, int input_channels = 1, std::uint64_t seed = 0, int image_size = 32);
Network build_recnet(const RecNetOptions& options, std::uint64_t seed);

}  // namespace balign::nn
