#include "balign/nn/networks.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace balign::nn {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::ResidualBlock: return "residual";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::Conv3x3, LayerKind::BatchNorm, LayerKind::ReLU, LayerKind::ResidualBlock,
                 LayerKind::GlobalAvgPool, LayerKind::Flatten, LayerKind::FullyConnected, LayerKind::Sigmoid})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

namespace {

Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor filled(Shape shape, double value) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.input_shape.size() != 3) throw std::invalid_argument(spec_.name + ": input shape must be [C, H, W]");
  if (spec_.tap_end > spec_.layers.size()) throw std::invalid_argument(spec_.name + ": tap beyond last layer");
  std::mt19937_64 rng(seed);
  std::vector<int> cur = spec_.input_shape;
  shapes_.push_back(cur);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& ls = spec_.layers[i];
    Layer layer{ls, {}, {}, {}};
    const std::string where = spec_.name + " layer " + std::to_string(i) + " (" + to_string(ls.kind) + ")";
    const bool spatial = cur.size() == 3;
    switch (ls.kind) {
      case LayerKind::Conv3x3: {
        if (!spatial || ls.out_channels <= 0 || ls.stride < 1) throw std::invalid_argument(where + ": bad config");
        const Shape ws{ls.out_channels, cur[0], 3, 3};
        layer.params.push_back(ls.zero_init ? filled(ws, 0.0) : he_normal(ws, cur[0] * 9, rng));
        cur = {ls.out_channels, (cur[1] - 1) / ls.stride + 1, (cur[2] - 1) / ls.stride + 1};
        break;
      }
      case LayerKind::BatchNorm:
        layer.params = {filled({cur[0]}, 1.0), filled({cur[0]}, 0.0)};
        layer.bn.running_mean.assign(cur[0], 0.0);
        layer.bn.running_var.assign(cur[0], 1.0);
        break;
      case LayerKind::ResidualBlock:
        if (!spatial) throw std::invalid_argument(where + ": needs a spatial input");
        for (int k = 0; k < 2; ++k) {
          layer.params.push_back(he_normal({cur[0], cur[0], 3, 3}, cur[0] * 9, rng));
          layer.params.push_back(filled({cur[0]}, 1.0));
          layer.params.push_back(filled({cur[0]}, 0.0));
        }
        for (auto* st : {&layer.bn, &layer.bn2}) {
          st->running_mean.assign(cur[0], 0.0);
          st->running_var.assign(cur[0], 1.0);
        }
        break;
      case LayerKind::ReLU:
      case LayerKind::Sigmoid:
        break;
      case LayerKind::GlobalAvgPool:
        if (!spatial) throw std::invalid_argument(where + ": needs a spatial input");
        cur = {cur[0]};
        break;
      case LayerKind::Flatten:
        if (spatial) cur = {cur[0] * cur[1] * cur[2]};
        break;
      case LayerKind::FullyConnected: {
        if (spatial) throw std::invalid_argument(where + ": flatten or pool before a fully-connected layer");
        if (ls.out_channels <= 0) throw std::invalid_argument(where + ": bad width");
        const Shape ws{ls.out_channels, cur[0]};
        layer.params.push_back(ls.zero_init ? filled(ws, 0.0) : he_normal(ws, cur[0], rng));
        layer.params.push_back(filled({ls.out_channels}, 0.0));
        cur = {ls.out_channels};
        break;
      }
    }
    layers_.push_back(std::move(layer));
    shapes_.push_back(cur);
  }
}

Tensor Network::apply(Layer& layer, const Tensor& x, bool training) {
  auto& p = layer.params;
  switch (layer.spec.kind) {
    case LayerKind::Conv3x3: return conv2d(x, p[0], layer.spec.stride, 1);
    case LayerKind::BatchNorm: return batch_norm(x, p[0], p[1], layer.bn, training);
    case LayerKind::ReLU: return relu(x);
    case LayerKind::Sigmoid: return sigmoid(x);
    case LayerKind::GlobalAvgPool: return global_avg_pool(x);
    case LayerKind::Flatten:
      if (x.rank() == 2) return x;
      return reshape(x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
    case LayerKind::FullyConnected: return linear(x, p[0], p[1]);
    case LayerKind::ResidualBlock: {
      Tensor h = relu(batch_norm(conv2d(x, p[0], 1, 1), p[1], p[2], layer.bn, training));
      h = batch_norm(conv2d(h, p[3], 1, 1), p[4], p[5], layer.bn2, training);
      return relu(add(x, h));
    }
  }
  throw std::logic_error("unreachable layer kind");
}

Tensor Network::forward_range(const Tensor& x, std::size_t begin, std::size_t end, bool training) {
  if (begin > end || end > layers_.size()) throw std::invalid_argument(spec_.name + ": bad layer range");
  const auto& expect = shapes_[begin];
  bool ok = x.rank() == expect.size() + 1;
  for (std::size_t i = 0; ok && i < expect.size(); ++i) ok = x.dim(i + 1) == expect[i];
  if (!ok)
    throw std::invalid_argument(spec_.name + ": input shape " + shape_str(x.shape()) + " does not match expected [N," +
                                shape_str(expect).substr(1));
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) h = apply(layers_[i], h, training);
  return h;
}

Tensor Network::forward(const Tensor& x, bool training) { return forward_range(x, 0, layers_.size(), training); }

std::vector<NamedParam> Network::parameters(const std::string& prefix) {
  static const char* const kBn[] = {"gamma", "beta"};
  static const char* const kFc[] = {"weight", "bias"};
  static const char* const kRes[] = {"conv1", "gamma1", "beta1", "conv2", "gamma2", "beta2"};
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    const std::string base = prefix + spec_.name + "." + std::to_string(i) + ".";
    for (std::size_t k = 0; k < l.params.size(); ++k) {
      std::string leaf = "weight";
      if (l.spec.kind == LayerKind::BatchNorm) leaf = kBn[k];
      if (l.spec.kind == LayerKind::FullyConnected) leaf = kFc[k];
      if (l.spec.kind == LayerKind::ResidualBlock) leaf = kRes[k];
      out.push_back({base + leaf, l.params[k]});
    }
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    for (const auto& t : l.params) n += t.numel();
  return n;
}

std::vector<BatchNormState*> Network::batch_norm_states() {
  std::vector<BatchNormState*> out;
  for (auto& l : layers_) {
    if (l.spec.kind == LayerKind::BatchNorm) out.push_back(&l.bn);
    if (l.spec.kind == LayerKind::ResidualBlock) {
      out.push_back(&l.bn);
      out.push_back(&l.bn2);
    }
  }
  return out;
}

NetworkSpec locnet_spec(int output_dim, int input_channels, int image_size) {
  NetworkSpec s;
  s.name = "locnet";
  s.input_shape = {input_channels, image_size, image_size};
  auto block = [&s](int ch, int stride) {
    s.layers.push_back({LayerKind::Conv3x3, ch, stride, false});
    s.layers.push_back({LayerKind::BatchNorm});
    s.layers.push_back({LayerKind::ReLU});
  };
  block(8, 1);
  block(16, 2);
  block(32, 2);
  s.layers.push_back({LayerKind::Flatten});
  s.layers.push_back({LayerKind::FullyConnected, 128});
  s.layers.push_back({LayerKind::ReLU});
  s.layers.push_back({LayerKind::FullyConnected, output_dim, 1, true});
  return s;
}

Network build_locnet(int grid_size, int input_channels, std::uint64_t seed, int image_size) {
  if (grid_size < 2) throw std::invalid_argument("build_locnet: grid_size must be >= 2");
  return Network(locnet_spec(2 * grid_size * grid_size, input_channels, image_size), seed);
}

NetworkSpec recnet_spec(const RecNetOptions& o) {
  if (o.embedding_dim < 2) throw std::invalid_argument("build_recnet: embedding_dim must be >= 2");
  if (o.channels.empty()) throw std::invalid_argument("build_recnet: need at least one stage");
  NetworkSpec s;
  s.name = "recnet";
  s.input_shape = {o.input_channels, o.image_size, o.image_size};
  for (std::size_t i = 0; i < o.channels.size(); ++i) {
    s.layers.push_back({LayerKind::Conv3x3, o.channels[i], i == 0 ? 1 : 2, false});
    s.layers.push_back({LayerKind::BatchNorm});
    s.layers.push_back({LayerKind::ReLU});
    if (o.residual && i > 0) s.layers.push_back({LayerKind::ResidualBlock});
    if (i == 0) s.tap_end = s.layers.size();
  }
  s.layers.push_back({LayerKind::BatchNorm});
  s.layers.push_back({o.global_pool ? LayerKind::GlobalAvgPool : LayerKind::Flatten});
  s.layers.push_back({LayerKind::FullyConnected, o.embedding_dim});
  s.layers.push_back({LayerKind::BatchNorm});
  return s;
}

Network build_recnet(int embedding_dim, int input_channels, std::uint64_t seed, int image_size) {
  RecNetOptions o;
  o.embedding_dim = embedding_dim;
  o.input_channels = input_channels;
  o.image_size = image_size;
  return build_recnet(o, seed);
}

Network build_recnet(const RecNetOptions& options, std::uint64_t seed) { return Network(recnet_spec(options), seed); }

}  // namespace balign::nn
