#pragma once

// Dense, graph-convolution and graph-attention layers with hand-written
// forward and reverse-mode passes. No bias terms. Arithmetic is double.
//
// Neighborhoods are in-edges plus a self-loop of weight 1:
//   N(n) = { j : (j -> n) in edges } U { n },  dhat_n = 1 + sum of in-edge weights.

#include "infoplane/datasets.hpp"
#include "infoplane/matrix.hpp"
#include "infoplane/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace infoplane {

enum class LayerKind { kDense, kGcn, kGat };
enum class Activation { kRelu, kTanh, kSigmoid, kIdentity };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kGcn: return "gcn";
    case LayerKind::kGat: return "gat";
  }
  return "?";
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
  if (s == "dense" || s == "mlp") return LayerKind::kDense;
  if (s == "gcn") return LayerKind::kGcn;
  if (s == "gat") return LayerKind::kGat;
  throw std::invalid_argument("unknown layer kind: " + std::string(s));
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Activations

inline Matrix apply_activation(Activation kind, const Matrix& m) {
  switch (kind) {
    case Activation::kRelu: return m.cwiseMax(0.0);
    case Activation::kTanh: return m.array().tanh().matrix();
    case Activation::kSigmoid: return (1.0 / (1.0 + (-m.array()).exp())).matrix();
    case Activation::kIdentity: return m;
  }
  return m;
}

// Elementwise derivative at the pre-activation. relu'(0) is taken as 0.
inline Matrix activation_grad(Activation kind, const Matrix& pre) {
  switch (kind) {
    case Activation::kRelu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::kTanh: {
      const auto t = pre.array().tanh();
      return (1.0 - t * t).matrix();
    }
    case Activation::kSigmoid: {
      const auto s = 1.0 / (1.0 + (-pre.array()).exp());
      return (s * (1.0 - s)).matrix();
    }
    case Activation::kIdentity: return Matrix::Ones(pre.rows(), pre.cols());
  }
  return pre;
}

// ---------------------------------------------------------------------------
// Graph structure

// Incoming neighborhoods in CSR form, self-loop first in every row.
struct GraphStructure {
  std::int64_t num_nodes = 0;
  std::vector<std::int64_t> offsets;  // size N+1
  std::vector<std::int64_t> sources;  // j for each (j -> n) entry, grouped by n
  std::vector<double> weights;        // e_jn, 1 for self-loops
  std::vector<double> dhat;           // 1 + sum of in-edge weights
  std::vector<double> gcn_coeff;      // 1 / sqrt(dhat_j * dhat_n) per entry

  std::int64_t entries() const { return std::int64_t(sources.size()); }
};

inline GraphStructure build_graph(std::int64_t num_nodes, const std::vector<Edge>& edges,
                                  const std::vector<double>& edge_weights) {
  if (!edge_weights.empty() && edge_weights.size() != edges.size())
    throw std::invalid_argument("edge_weights length != edge count");
  GraphStructure g;
  g.num_nodes = num_nodes;
  std::vector<std::int64_t> in_count(std::size_t(num_nodes), 1);
  for (const auto& e : edges) {
    if (e.src < 0 || e.src >= num_nodes || e.dst < 0 || e.dst >= num_nodes)
      throw std::invalid_argument("edge endpoint out of range (" + std::to_string(e.src) + ", " +
                                  std::to_string(e.dst) + ")");
    ++in_count[std::size_t(e.dst)];
  }
  g.offsets.assign(std::size_t(num_nodes) + 1, 0);
  for (std::int64_t n = 0; n < num_nodes; ++n) g.offsets[std::size_t(n) + 1] = g.offsets[std::size_t(n)] + in_count[std::size_t(n)];
  g.sources.resize(std::size_t(g.offsets.back()));
  g.weights.resize(g.sources.size());
  std::vector<std::int64_t> fill(g.offsets.begin(), g.offsets.end() - 1);
  g.dhat.assign(std::size_t(num_nodes), 1.0);
  for (std::int64_t n = 0; n < num_nodes; ++n) {
    const auto k = std::size_t(fill[std::size_t(n)]++);
    g.sources[k] = n;
    g.weights[k] = 1.0;
  }
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& e = edges[i];
    const double w = edge_weights.empty() ? 1.0 : edge_weights[i];
    const auto k = std::size_t(fill[std::size_t(e.dst)]++);
    g.sources[k] = e.src;
    g.weights[k] = w;
    g.dhat[std::size_t(e.dst)] += w;
  }
  g.gcn_coeff.resize(g.sources.size());
  for (std::int64_t n = 0; n < num_nodes; ++n)
    for (auto k = g.offsets[std::size_t(n)]; k < g.offsets[std::size_t(n) + 1]; ++k)
      g.gcn_coeff[std::size_t(k)] =
          1.0 / std::sqrt(g.dhat[std::size_t(g.sources[std::size_t(k)])] * g.dhat[std::size_t(n)]);
  return g;
}

inline GraphStructure build_graph(const GraphDataset& ds) {
  return build_graph(ds.num_nodes(), ds.edges, ds.edge_weights);
}

// out_n = sum_{k in row n} coeff_k * h_{src_k}
inline Matrix aggregate(const GraphStructure& g, const std::vector<double>& coeff, const Matrix& h) {
  Matrix out = Matrix::Zero(h.rows(), h.cols());
  for (std::int64_t n = 0; n < g.num_nodes; ++n)
    for (auto k = g.offsets[std::size_t(n)]; k < g.offsets[std::size_t(n) + 1]; ++k)
      out.row(n) += coeff[std::size_t(k)] * h.row(g.sources[std::size_t(k)]);
  return out;
}

// Adjoint of aggregate: grad_h_j = sum over entries (j -> n) of coeff * grad_out_n.
inline Matrix aggregate_transpose(const GraphStructure& g, const std::vector<double>& coeff,
                                  const Matrix& grad_out) {
  Matrix out = Matrix::Zero(grad_out.rows(), grad_out.cols());
  for (std::int64_t n = 0; n < g.num_nodes; ++n)
    for (auto k = g.offsets[std::size_t(n)]; k < g.offsets[std::size_t(n) + 1]; ++k)
      out.row(g.sources[std::size_t(k)]) += coeff[std::size_t(k)] * grad_out.row(n);
  return out;
}

// ---------------------------------------------------------------------------
// Layers

inline constexpr double kGatLeakySlope = 0.2;

struct Layer {
  LayerKind kind = LayerKind::kDense;
  Matrix weight;  // d_in x d_out
  Vector att_src;  // GAT only, length d_out
  Vector att_dst;  // GAT only, length d_out

  Eigen::Index in_dim() const { return weight.rows(); }
  Eigen::Index out_dim() const { return weight.cols(); }
};

inline Matrix dense_forward(const Layer& layer, const Matrix& z) {
  if (z.cols() != layer.weight.rows()) require_shape(z, z.rows(), layer.weight.rows(), "dense_forward");
  return z * layer.weight;
}

inline Matrix gcn_forward(const Layer& layer, const Matrix& z, const GraphStructure& g) {
  if (z.cols() != layer.weight.rows() || z.rows() != g.num_nodes)
    require_shape(z, g.num_nodes, layer.weight.rows(), "gcn_forward");
  // (A Z) W == A (Z W); projecting first keeps the sparse pass narrow.
  return aggregate(g, g.gcn_coeff, z * layer.weight);
}

struct GatResult {
  Matrix out;
  Matrix projected;            // Z W
  std::vector<double> alpha;   // per CSR entry
  std::vector<double> scores;  // pre-leaky per CSR entry
};

inline GatResult gat_forward(const Layer& layer, const Matrix& z, const GraphStructure& g) {
  if (z.cols() != layer.weight.rows() || z.rows() != g.num_nodes)
    require_shape(z, g.num_nodes, layer.weight.rows(), "gat_forward");
  GatResult r;
  r.projected = z * layer.weight;
  const Vector s = r.projected * layer.att_src;
  const Vector t = r.projected * layer.att_dst;
  r.alpha.resize(std::size_t(g.entries()));
  r.scores.resize(std::size_t(g.entries()));
  for (std::int64_t n = 0; n < g.num_nodes; ++n) {
    const auto lo = g.offsets[std::size_t(n)], hi = g.offsets[std::size_t(n) + 1];
    double mx = -std::numeric_limits<double>::infinity();
    for (auto k = lo; k < hi; ++k) {
      const double u = s(g.sources[std::size_t(k)]) + t(n);
      r.scores[std::size_t(k)] = u;
      const double e = u > 0 ? u : kGatLeakySlope * u;
      r.alpha[std::size_t(k)] = e;
      mx = std::max(mx, e);
    }
    double sum = 0.0;
    for (auto k = lo; k < hi; ++k) sum += (r.alpha[std::size_t(k)] = std::exp(r.alpha[std::size_t(k)] - mx));
    for (auto k = lo; k < hi; ++k) r.alpha[std::size_t(k)] /= sum;
  }
  r.out = aggregate(g, r.alpha, r.projected);
  return r;
}

// ---------------------------------------------------------------------------
// Model

struct ModelSpec {
  LayerKind layer_kind = LayerKind::kDense;
  std::vector<std::int64_t> hidden_dims = {300, 200, 100};
  Activation activation = Activation::kRelu;
  std::int64_t output_dim = 0;
  std::uint64_t seed = 0;

  bool operator==(const ModelSpec&) const = default;
};

inline nlohmann::ordered_json spec_to_json(const ModelSpec& s) {
  nlohmann::ordered_json j;
  j["layer_kind"] = to_string(s.layer_kind);
  j["hidden_dims"] = s.hidden_dims;
  j["activation"] = to_string(s.activation);
  j["output_dim"] = s.output_dim;
  j["seed"] = s.seed;
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.layer_kind = parse_layer_kind(j.at("layer_kind").get<std::string>());
  s.hidden_dims = j.at("hidden_dims").get<std::vector<std::int64_t>>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  s.output_dim = j.value("output_dim", std::int64_t{0});
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

// Hidden layers 0..H-1 are followed by the activation; layer H maps to the
// logits and is followed by softmax in the loss, never by the activation.
struct Model {
  ModelSpec spec;
  std::vector<Layer> layers;

  std::size_t num_hidden() const { return layers.size() - 1; }
};

inline void glorot_fill(Matrix& m, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

inline Model init_model(const ModelSpec& spec, std::int64_t d_in) {
  if (spec.hidden_dims.empty()) throw std::invalid_argument("hidden_dims must be non-empty");
  if (d_in < 1) throw std::invalid_argument("d_in must be >= 1");
  if (spec.output_dim < 1) throw std::invalid_argument("output_dim must be >= 1");
  for (auto h : spec.hidden_dims)
    if (h < 1) throw std::invalid_argument("hidden widths must be >= 1");
  Model model;
  model.spec = spec;
  Rng rng(spec.seed);
  std::vector<std::int64_t> dims = {d_in};
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.output_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.kind = spec.layer_kind;
    layer.weight.resize(dims[l], dims[l + 1]);
    glorot_fill(layer.weight, dims[l], dims[l + 1], rng);
    if (layer.kind == LayerKind::kGat) {
      Matrix a(1, dims[l + 1]);
      glorot_fill(a, dims[l + 1], dims[l + 1], rng);
      layer.att_src = a.row(0).transpose();
      glorot_fill(a, dims[l + 1], dims[l + 1], rng);
      layer.att_dst = a.row(0).transpose();
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

struct ForwardCache {
  std::vector<Matrix> inputs;       // Z_l fed into layer l (inputs[0] = X)
  std::vector<Matrix> pre;          // layer outputs before activation
  std::vector<Matrix> post;         // hidden activations Z_{l+1}; post.back() = logits
  std::vector<std::vector<double>> alpha;  // GAT attention per layer (empty otherwise)
  std::vector<std::vector<double>> scores;
  std::vector<Matrix> projected;    // GAT Z W per layer

  const Matrix& logits() const { return post.back(); }
};

inline Matrix layer_forward(const Layer& layer, const Matrix& z, const GraphStructure& g, ForwardCache* cache) {
  switch (layer.kind) {
    case LayerKind::kDense: return dense_forward(layer, z);
    case LayerKind::kGcn: return gcn_forward(layer, z, g);
    case LayerKind::kGat: {
      auto r = gat_forward(layer, z, g);
      if (cache) {
        cache->alpha.back() = std::move(r.alpha);
        cache->scores.back() = std::move(r.scores);
        cache->projected.back() = std::move(r.projected);
      }
      return std::move(r.out);
    }
  }
  return {};
}

inline ForwardCache forward(const Model& model, const Matrix& x, const GraphStructure& g) {
  ForwardCache cache;
  Matrix z = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    cache.inputs.push_back(z);
    cache.alpha.emplace_back();
    cache.scores.emplace_back();
    cache.projected.emplace_back();
    Matrix pre = layer_forward(model.layers[l], z, g, &cache);
    const bool hidden = l + 1 < model.layers.size();
    z = hidden ? apply_activation(model.spec.activation, pre) : pre;
    cache.pre.push_back(std::move(pre));
    cache.post.push_back(z);
  }
  return cache;
}

// Per-layer parameter gradients, same shapes as the layer parameters.
struct LayerGrad {
  Matrix weight;
  Vector att_src;
  Vector att_dst;
};

using Gradients = std::vector<LayerGrad>;

// Reverse pass through one layer given the gradient w.r.t. its pre-activation
// output. Returns the gradient w.r.t. the layer input.
inline Matrix layer_backward(const Layer& layer, const ForwardCache& cache, std::size_t l,
                             const GraphStructure& g, const Matrix& grad_out, LayerGrad& grad) {
  const Matrix& z = cache.inputs[l];
  switch (layer.kind) {
    case LayerKind::kDense: {
      grad.weight = z.transpose() * grad_out;
      return grad_out * layer.weight.transpose();
    }
    case LayerKind::kGcn: {
      const Matrix gh = aggregate_transpose(g, g.gcn_coeff, grad_out);
      grad.weight = z.transpose() * gh;
      return gh * layer.weight.transpose();
    }
    case LayerKind::kGat: {
      const auto& alpha = cache.alpha[l];
      const auto& scores = cache.scores[l];
      const Matrix& h = cache.projected[l];
      if (alpha.size() != std::size_t(g.entries()) || h.rows() != g.num_nodes)
        throw std::invalid_argument("gat backward: stale cache");
      Matrix gh = aggregate_transpose(g, alpha, grad_out);
      Vector gs = Vector::Zero(g.num_nodes);
      Vector gt = Vector::Zero(g.num_nodes);
      std::vector<double> dalpha(alpha.size());
      for (std::int64_t n = 0; n < g.num_nodes; ++n) {
        const auto lo = g.offsets[std::size_t(n)], hi = g.offsets[std::size_t(n) + 1];
        double weighted = 0.0;
        for (auto k = lo; k < hi; ++k) {
          dalpha[std::size_t(k)] = grad_out.row(n).dot(h.row(g.sources[std::size_t(k)]));
          weighted += alpha[std::size_t(k)] * dalpha[std::size_t(k)];
        }
        for (auto k = lo; k < hi; ++k) {
          const double de = alpha[std::size_t(k)] * (dalpha[std::size_t(k)] - weighted);
          const double du = de * (scores[std::size_t(k)] > 0 ? 1.0 : kGatLeakySlope);
          gs(g.sources[std::size_t(k)]) += du;
          gt(n) += du;
        }
      }
      grad.att_src = h.transpose() * gs;
      grad.att_dst = h.transpose() * gt;
      gh += gs * layer.att_src.transpose() + gt * layer.att_dst.transpose();
      grad.weight = z.transpose() * gh;
      return gh * layer.weight.transpose();
    }
  }
  return {};
}

// Reverse-mode gradients of a scalar loss given d loss / d logits.
inline Gradients backward(const Model& model, const ForwardCache& cache, const GraphStructure& g,
                          const Matrix& logits_grad) {
  if (cache.pre.size() != model.layers.size())
    throw std::invalid_argument("backward: stale cache (layer count mismatch)");
  require_shape(logits_grad, cache.logits().rows(), cache.logits().cols(), "backward");
  Gradients grads(model.layers.size());
  Matrix g_out = logits_grad;
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    if (l + 1 < model.layers.size())
      g_out = g_out.cwiseProduct(activation_grad(model.spec.activation, cache.pre[l]));
    Matrix g_in = layer_backward(model.layers[l], cache, l, g, g_out, grads[l]);
    g_out = std::move(g_in);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d logits, zero outside the mask
};

// Mean cross-entropy over masked rows with max-shifted log-sum-exp.
inline LossResult softmax_xent(const Matrix& logits, const std::vector<std::int32_t>& labels, const Mask& mask) {
  if (std::int64_t(labels.size()) != logits.rows() || std::int64_t(mask.size()) != logits.rows())
    throw std::invalid_argument("softmax_xent: labels/mask length mismatch");
  const auto count = mask_count(mask);
  if (count == 0) throw std::invalid_argument("softmax_xent: empty mask");
  LossResult r;
  r.grad = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!mask[std::size_t(i)]) continue;
    const auto y = labels[std::size_t(i)];
    if (y < 0 || y >= logits.cols()) throw std::invalid_argument("softmax_xent: label out of range");
    const double mx = logits.row(i).maxCoeff();
    const auto e = (logits.row(i).array() - mx).exp();
    const double sum = e.sum();
    r.loss += std::log(sum) + mx - logits(i, y);
    r.grad.row(i) = e / sum;
    r.grad(i, y) -= 1.0;
  }
  r.loss /= double(count);
  r.grad /= double(count);
  return r;
}

}  // namespace infoplane
