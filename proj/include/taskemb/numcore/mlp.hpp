#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taskemb/numcore/error.hpp"
#include "taskemb/numcore/math.hpp"
#include "taskemb/numcore/rng.hpp"

namespace taskemb {

enum class Activation { ReLU, Identity, Tanh, Softmax };

inline std::string_view to_string(Activation a) noexcept {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Softmax: return "softmax";
  }
  return "identity";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "softmax") return Activation::Softmax;
  throw ParseError("unknown activation '" + std::string(s) + "'");
}

/// Fully connected layer y = act(W x + b) with W stored row-major (out x in).
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> biases;
  Activation activation = Activation::Identity;

  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation act)
      : in(in_dim), out(out_dim), weights(in_dim * out_dim, 0.0), biases(out_dim, 0.0), activation(act) {}

  double& w(std::size_t row, std::size_t col) noexcept { return weights[row * in + col]; }
  double w(std::size_t row, std::size_t col) const noexcept { return weights[row * in + col]; }

  std::size_t parameter_count() const noexcept { return weights.size() + biases.size(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const noexcept { return layers.empty() ? 0 : layers.front().in; }
  std::size_t out_dim() const noexcept { return layers.empty() ? 0 : layers.back().out; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }

  /// Throws DimensionError if layers do not chain or entries are non-finite.
  void validate() const {
    if (layers.empty()) throw DimensionError("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.weights.size() != l.in * l.out || l.biases.size() != l.out)
        throw DimensionError("parameter arrays do not match declared " + std::to_string(l.in) + "x" +
                                 std::to_string(l.out),
                             i);
      if (i > 0 && layers[i - 1].out != l.in)
        throw DimensionError("input size " + std::to_string(l.in) + " does not match previous output " +
                                 std::to_string(layers[i - 1].out),
                             i);
      for (double v : l.weights)
        if (!std::isfinite(v)) throw DimensionError("non-finite weight", i);
      for (double v : l.biases)
        if (!std::isfinite(v)) throw DimensionError("non-finite bias", i);
    }
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Builds an MLP with Glorot-uniform weights and zero biases.
/// `sizes` = {in, hidden..., out}.
inline Mlp make_mlp(std::span<const std::size_t> sizes, Activation hidden, Activation output, Rng& rng) {
  if (sizes.size() < 2) throw DimensionError("an MLP needs at least input and output sizes");
  Mlp net;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    DenseLayer layer(sizes[i], sizes[i + 1], last ? output : hidden);
    const double limit = std::sqrt(6.0 / static_cast<double>(sizes[i] + sizes[i + 1]));
    for (double& w : layer.weights) w = rng.uniform(-limit, limit);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline Mlp make_mlp(std::initializer_list<std::size_t> sizes, Activation hidden, Activation output, Rng& rng) {
  return make_mlp(std::span<const std::size_t>(sizes.begin(), sizes.size()), hidden, output, rng);
}

/// Per-layer outputs of the last forward pass; values[0] is the input.
struct ForwardCache {
  std::vector<std::vector<double>> values;

  std::span<const double> output() const noexcept { return values.back(); }
};

namespace detail {

inline void apply_activation(Activation act, std::span<double> z) noexcept {
  switch (act) {
    case Activation::ReLU:
      for (double& v : z) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::Tanh:
      for (double& v : z) v = std::tanh(v);
      break;
    case Activation::Softmax:
      softmax_inplace(z);
      break;
    case Activation::Identity:
      break;
  }
}

}  // namespace detail

/// Runs the network, keeping every layer's output in `cache` for backward().
inline std::span<const double> mlp_forward(const Mlp& net, std::span<const double> input, ForwardCache& cache) {
  if (net.layers.empty()) throw DimensionError("network has no layers");
  if (input.size() != net.layers.front().in)
    throw DimensionError("input has length " + std::to_string(input.size()) + ", expected " +
                             std::to_string(net.layers.front().in),
                         0);
  cache.values.resize(net.layers.size() + 1);
  cache.values[0].assign(input.begin(), input.end());
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const DenseLayer& l = net.layers[li];
    const std::vector<double>& x = cache.values[li];
    if (x.size() != l.in)
      throw DimensionError("input has length " + std::to_string(x.size()) + ", expected " + std::to_string(l.in),
                           li);
    std::vector<double>& y = cache.values[li + 1];
    y.resize(l.out);
    const double* w = l.weights.data();
    for (std::size_t r = 0; r < l.out; ++r) {
      double s = l.biases[r];
      const double* row = w + r * l.in;
      for (std::size_t c = 0; c < l.in; ++c) s += row[c] * x[c];
      y[r] = s;
    }
    detail::apply_activation(l.activation, y);
  }
  return cache.values.back();
}

inline std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input) {
  ForwardCache cache;
  auto out = mlp_forward(net, input, cache);
  return {out.begin(), out.end()};
}

/// Gradients shaped like an Mlp's parameters.
struct MlpGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  MlpGradients() = default;
  explicit MlpGradients(const Mlp& net) { reset(net); }

  void reset(const Mlp& net) {
    weights.resize(net.layers.size());
    biases.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      weights[i].assign(net.layers[i].weights.size(), 0.0);
      biases[i].assign(net.layers[i].biases.size(), 0.0);
    }
  }

  void zero() {
    for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
  }

  void scale(double s) {
    for (auto& w : weights)
      for (double& v : w) v *= s;
    for (auto& b : biases)
      for (double& v : b) v *= s;
  }

  void add(const MlpGradients& o) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      for (std::size_t j = 0; j < weights[i].size(); ++j) weights[i][j] += o.weights[i][j];
      for (std::size_t j = 0; j < biases[i].size(); ++j) biases[i][j] += o.biases[i][j];
    }
  }

  bool all_finite() const {
    for (const auto& w : weights)
      for (double v : w)
        if (!std::isfinite(v)) return false;
    for (const auto& b : biases)
      for (double v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Scratch buffers for backward(), reusable across calls.
struct BackwardScratch {
  std::vector<double> delta;
  std::vector<double> next;
};

/// Reverse pass for the forward pass recorded in `cache`. Parameter
/// gradients are accumulated into `grads`; if `input_grad` is non-null it
/// receives dL/dinput.
inline void mlp_backward(const Mlp& net, const ForwardCache& cache, std::span<const double> output_gradient,
                         MlpGradients& grads, std::vector<double>* input_grad, BackwardScratch& scratch) {
  if (cache.values.size() != net.layers.size() + 1)
    throw DimensionError("forward cache does not belong to this network");
  if (output_gradient.size() != net.out_dim())
    throw DimensionError("output gradient has length " + std::to_string(output_gradient.size()) + ", expected " +
                             std::to_string(net.out_dim()),
                         net.layers.size() - 1);
  if (grads.weights.size() != net.layers.size()) grads.reset(net);
  scratch.delta.assign(output_gradient.begin(), output_gradient.end());
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& l = net.layers[li];
    const std::vector<double>& y = cache.values[li + 1];
    const std::vector<double>& x = cache.values[li];
    std::vector<double>& d = scratch.delta;
    switch (l.activation) {
      case Activation::ReLU:
        for (std::size_t r = 0; r < l.out; ++r)
          if (y[r] <= 0.0) d[r] = 0.0;
        break;
      case Activation::Tanh:
        for (std::size_t r = 0; r < l.out; ++r) d[r] *= 1.0 - y[r] * y[r];
        break;
      case Activation::Softmax: {
        double gp = 0.0;
        for (std::size_t r = 0; r < l.out; ++r) gp += d[r] * y[r];
        for (std::size_t r = 0; r < l.out; ++r) d[r] = y[r] * (d[r] - gp);
        break;
      }
      case Activation::Identity:
        break;
    }
    double* gw = grads.weights[li].data();
    double* gb = grads.biases[li].data();
    for (std::size_t r = 0; r < l.out; ++r) {
      const double dr = d[r];
      if (dr == 0.0) continue;
      gb[r] += dr;
      double* grow = gw + r * l.in;
      for (std::size_t c = 0; c < l.in; ++c) grow[c] += dr * x[c];
    }
    if (li == 0 && input_grad == nullptr) break;
    scratch.next.assign(l.in, 0.0);
    for (std::size_t r = 0; r < l.out; ++r) {
      const double dr = d[r];
      if (dr == 0.0) continue;
      const double* row = l.weights.data() + r * l.in;
      for (std::size_t c = 0; c < l.in; ++c) scratch.next[c] += dr * row[c];
    }
    std::swap(scratch.delta, scratch.next);
  }
  if (input_grad != nullptr) *input_grad = scratch.delta;
}

struct BackwardResult {
  MlpGradients params;
  std::vector<double> input;
};

inline BackwardResult mlp_backward(const Mlp& net, std::span<const double> input,
                                   std::span<const double> output_gradient) {
  ForwardCache cache;
  mlp_forward(net, input, cache);
  BackwardResult result;
  result.params.reset(net);
  BackwardScratch scratch;
  mlp_backward(net, cache, output_gradient, result.params, &result.input, scratch);
  return result;
}

/// Parameters in layer order: weights (row-major) then biases.
inline std::vector<double> flatten_parameters(const Mlp& net) {
  std::vector<double> flat;
  flat.reserve(net.parameter_count());
  for (const auto& l : net.layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.biases.begin(), l.biases.end());
  }
  return flat;
}

inline std::vector<double> flatten_gradients(const MlpGradients& g) {
  std::vector<double> flat;
  for (std::size_t i = 0; i < g.weights.size(); ++i) {
    flat.insert(flat.end(), g.weights[i].begin(), g.weights[i].end());
    flat.insert(flat.end(), g.biases[i].begin(), g.biases[i].end());
  }
  return flat;
}

inline void assign_parameters(Mlp& net, std::span<const double> flat) {
  if (flat.size() != net.parameter_count())
    throw DimensionError("flat parameter vector has " + std::to_string(flat.size()) + " entries, network needs " +
                         std::to_string(net.parameter_count()));
  std::size_t k = 0;
  for (auto& l : net.layers) {
    for (double& w : l.weights) w = flat[k++];
    for (double& b : l.biases) b = flat[k++];
  }
}

// ---------------------------------------------------------------------------
// Text weight format:
//   <layer count>
//   per layer: "<in> <out> <activation>" then `out` lines of `in + 1`
//   decimals (the weight row followed by the bias).
// Decimals use the shortest representation that round-trips exactly.

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const char* begin = s.data();
  if (!s.empty() && s.front() == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("cannot parse number '" + std::string(s) + "'");
  return v;
}

inline void write_mlp(std::ostream& os, const Mlp& net) {
  os << net.layers.size() << '\n';
  for (const auto& l : net.layers) {
    os << l.in << ' ' << l.out << ' ' << to_string(l.activation) << '\n';
    for (std::size_t r = 0; r < l.out; ++r) {
      for (std::size_t c = 0; c < l.in; ++c) os << format_double(l.w(r, c)) << ' ';
      os << format_double(l.biases[r]) << '\n';
    }
  }
}

inline Mlp read_mlp(std::istream& is) {
  std::size_t count = 0;
  if (!(is >> count) || count == 0) throw ParseError("weight file: missing or zero layer count");
  Mlp net;
  for (std::size_t li = 0; li < count; ++li) {
    std::size_t in = 0, out = 0;
    std::string act;
    if (!(is >> in >> out >> act)) throw ParseError("weight file: bad header for layer " + std::to_string(li));
    DenseLayer l(in, out, parse_activation(act));
    std::string tok;
    for (std::size_t r = 0; r < out; ++r) {
      for (std::size_t c = 0; c <= in; ++c) {
        if (!(is >> tok))
          throw ParseError("weight file: truncated layer " + std::to_string(li) + " row " + std::to_string(r));
        const double v = parse_double(tok);
        if (c < in)
          l.w(r, c) = v;
        else
          l.biases[r] = v;
      }
    }
    net.layers.push_back(std::move(l));
  }
  net.validate();
  return net;
}

}  // namespace taskemb
