#pragma once

// Full-batch training with per-epoch activation snapshots.

#include "infoplane/datasets.hpp"
#include "infoplane/models.hpp"
#include "infoplane/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace infoplane {

enum class Optimizer { kSgd, kAdam };

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  throw std::invalid_argument("unknown optimizer: " + std::string(s));
}

inline std::string to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adam"; }

struct TrainConfig {
  std::int64_t epochs = 100;
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  std::int64_t snapshot_every = 1;
};

struct EpochMetrics {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

struct TrainRecord {
  std::vector<EpochMetrics> epochs;
  bool operator==(const TrainRecord&) const = default;
};

inline void write_metrics_csv(std::ostream& out, const TrainRecord& rec, const std::string& arch = {}) {
  out.precision(17);
  for (const auto& m : rec.epochs) {
    if (!arch.empty()) out << arch << ',';
    out << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.val_acc << ',' << m.test_acc << '\n';
  }
}

inline constexpr const char* kMetricsCsvHeader = "epoch,train_loss,train_acc,val_acc,test_acc";

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fraction of masked nodes whose argmax logit equals the label. Ties go to
// the lowest class index. Returns NaN-free values in [0, 1].
inline double evaluate_accuracy(const Matrix& logits, const std::vector<std::int32_t>& labels, const Mask& mask) {
  const auto count = mask_count(mask);
  if (count == 0) throw std::invalid_argument("evaluate_accuracy: empty mask");
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!mask[std::size_t(i)]) continue;
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    correct += best == labels[std::size_t(i)];
  }
  return double(correct) / double(count);
}

inline double evaluate_accuracy(const Model& model, const GraphDataset& ds, const GraphStructure& g, const Mask& mask) {
  return evaluate_accuracy(forward(model, ds.features, g).logits(), ds.labels, mask);
}

// Per-tensor optimizer state, laid out like the model parameters.
class ParameterUpdater {
 public:
  ParameterUpdater(const Model& model, Optimizer kind, double lr) : kind_(kind), lr_(lr) {
    for (const auto& layer : model.layers) {
      LayerGrad z;
      z.weight = Matrix::Zero(layer.weight.rows(), layer.weight.cols());
      z.att_src = Vector::Zero(layer.att_src.size());
      z.att_dst = Vector::Zero(layer.att_dst.size());
      m_.push_back(z);
      v_.push_back(z);
    }
  }

  void step(Model& model, const Gradients& grads) {
    ++t_;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      auto& layer = model.layers[l];
      update(layer.weight, grads[l].weight, m_[l].weight, v_[l].weight);
      if (layer.kind == LayerKind::kGat) {
        update(layer.att_src, grads[l].att_src, m_[l].att_src, v_[l].att_src);
        update(layer.att_dst, grads[l].att_dst, m_[l].att_dst, v_[l].att_dst);
      }
    }
  }

 private:
  template <typename T>
  void update(T& param, const T& grad, T& m, T& v) {
    if (kind_ == Optimizer::kSgd) {
      param -= lr_ * grad;
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, double(t_));
    const double c2 = 1.0 - std::pow(b2, double(t_));
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }

  Optimizer kind_;
  double lr_;
  std::int64_t t_ = 0;
  Gradients m_, v_;
};

// Header for the trace of a model's hidden layers on a dataset.
inline TraceHeader make_trace_header(const Model& model, const GraphDataset& ds) {
  TraceHeader h;
  h.dataset_name = ds.name;
  for (std::size_t l = 0; l < model.num_hidden(); ++l) {
    h.layer_names.push_back(to_string(model.spec.layer_kind) + std::to_string(l + 1));
    h.layer_dims.push_back(std::uint32_t(model.layers[l].out_dim()));
  }
  h.num_classes = std::uint32_t(ds.num_classes);
  h.num_nodes = std::uint32_t(ds.num_nodes());
  h.activation_name = to_string(model.spec.activation);
  h.seed = std::int64_t(model.spec.seed);
  h.labels = ds.labels;
  return h;
}

// One parameter update per epoch on the training-mask loss. After the
// update, a forward pass over all nodes records every hidden layer's
// post-activation into `sink` on epochs 1, 1+k, 1+2k, ... (k = snapshot_every)
// and produces the epoch's accuracies. Epochs are numbered from 1.
inline TrainRecord train_full_batch(Model& model, const GraphDataset& ds, const TrainConfig& cfg,
                                    ActivationSink* sink = nullptr) {
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (cfg.snapshot_every < 1) throw std::invalid_argument("snapshot_every must be >= 1");
  if (model.layers.front().in_dim() != ds.feature_dim())
    throw std::invalid_argument("model input width " + std::to_string(model.layers.front().in_dim()) +
                                " != feature dim " + std::to_string(ds.feature_dim()));
  if (model.layers.back().out_dim() != ds.num_classes)
    throw std::invalid_argument("model output width != number of classes");

  const GraphStructure g = build_graph(ds);
  ParameterUpdater updater(model, cfg.optimizer, cfg.learning_rate);
  const bool has_val = mask_count(ds.val_mask) > 0;
  const bool has_test = mask_count(ds.test_mask) > 0;
  TrainRecord rec;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const ForwardCache cache = forward(model, ds.features, g);
    const LossResult loss = softmax_xent(cache.logits(), ds.labels, ds.train_mask);
    if (!std::isfinite(loss.loss)) throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
    updater.step(model, backward(model, cache, g, loss.grad));

    const ForwardCache after = forward(model, ds.features, g);
    if (sink && (epoch - 1) % cfg.snapshot_every == 0) {
      for (std::size_t l = 0; l < model.num_hidden(); ++l)
        sink->append_snapshot(std::uint32_t(epoch), std::uint16_t(l), after.post[l]);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss.loss;
    m.train_acc = evaluate_accuracy(after.logits(), ds.labels, ds.train_mask);
    m.val_acc = has_val ? evaluate_accuracy(after.logits(), ds.labels, ds.val_mask) : 0.0;
    m.test_acc = has_test ? evaluate_accuracy(after.logits(), ds.labels, ds.test_mask) : 0.0;
    rec.epochs.push_back(m);
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradientCheckEntry {
  std::string tensor;  // e.g. "layer0.weight"
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

// |a - n| / max(|a|, |n|, floor): relative error with an absolute floor so
// that parameters with (near) zero gradient do not divide by zero.
inline double gradient_rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares analytic gradients of the training-mask cross-entropy against
// central finite differences for every parameter.
inline GradientCheckReport gradient_check(const Model& model, const GraphDataset& ds, double step = 1e-5) {
  if (ds.num_nodes() > 32) throw std::invalid_argument("gradient_check: dataset too large (N > 32)");
  const GraphStructure g = build_graph(ds);
  const auto loss_of = [&](const Model& m) {
    return softmax_xent(forward(m, ds.features, g).logits(), ds.labels, ds.train_mask).loss;
  };
  const ForwardCache cache = forward(model, ds.features, g);
  const Gradients grads = backward(model, cache, g, softmax_xent(cache.logits(), ds.labels, ds.train_mask).grad);

  GradientCheckReport report;
  Model probe = model;
  auto check = [&](const std::string& name, auto member_param, auto member_grad) {
    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
      auto& p = member_param(probe.layers[l]);
      const auto& ga = member_grad(grads[l]);
      if (p.size() == 0) continue;
      GradientCheckEntry entry{"layer" + std::to_string(l) + "." + name, 0.0, 0};
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double orig = p.data()[i];
        p.data()[i] = orig + step;
        const double up = loss_of(probe);
        p.data()[i] = orig - step;
        const double down = loss_of(probe);
        p.data()[i] = orig;
        const double numeric = (up - down) / (2.0 * step);
        entry.max_rel_error = std::max(entry.max_rel_error, gradient_rel_error(ga.data()[i], numeric));
        ++entry.checked;
      }
      report.entries.push_back(entry);
    }
  };
  check("weight", [](Layer& l) -> Matrix& { return l.weight; }, [](const LayerGrad& g) -> const Matrix& { return g.weight; });
  check("att_src", [](Layer& l) -> Vector& { return l.att_src; }, [](const LayerGrad& g) -> const Vector& { return g.att_src; });
  check("att_dst", [](Layer& l) -> Vector& { return l.att_dst; }, [](const LayerGrad& g) -> const Vector& { return g.att_dst; });
  return report;
}

}  // namespace infoplane
