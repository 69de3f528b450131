#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vmfcoop/anchors.hpp"
#include "vmfcoop/error.hpp"
#include "vmfcoop/losses.hpp"
#include "vmfcoop/random.hpp"

namespace vmfcoop {

enum class PromptInit {
  /// Every prompt starts at the global vocabulary direction plus a small
  /// seeded perturbation, the analogue of a shared generic context.
  Context,
  /// Prompts start on their unified anchors.
  Anchors,
};

struct TrainConfig {
  double lr0 = 0.003;
  std::size_t batch_size = 4;
  std::size_t total_steps = 12800;
  LossWeights weights;
  double tau0 = 1.0;
  double tau_max = 10.0;
  std::uint64_t seed = 0;
  double tau_cls = 0.01;
  /// Constant of the concentration estimator when a pipeline builds anchors.
  double eps = kFieldEps;
  PromptInit init = PromptInit::Context;
  double init_noise = 0.02;
  /// Global gradient-norm cap; unset means no clipping.
  std::optional<double> grad_clip;

  TempSchedule temperature() const { return {tau0, tau_max, total_steps}; }
};

inline void validate(const TrainConfig& cfg) {
  require(cfg.lr0 > 0.0 && std::isfinite(cfg.lr0), ErrorKind::InvalidSpec, "lr0 must be > 0");
  require(cfg.batch_size >= 1, ErrorKind::InvalidSpec, "batch_size must be >= 1");
  require(cfg.total_steps >= 1, ErrorKind::InvalidSpec, "total_steps must be >= 1");
  require(cfg.tau0 > 0.0 && cfg.tau_max > 0.0 && std::isfinite(cfg.tau0) && std::isfinite(cfg.tau_max),
          ErrorKind::InvalidSpec, "tau0 and tau_max must be finite and > 0");
  require(cfg.tau_cls > 0.0 && std::isfinite(cfg.tau_cls), ErrorKind::InvalidSpec, "tau_cls must be > 0");
  require(cfg.weights.lambda_anc >= 0.0 && cfg.weights.lambda_sc >= 0.0 && std::isfinite(cfg.weights.lambda_anc) &&
              std::isfinite(cfg.weights.lambda_sc),
          ErrorKind::InvalidSpec, "loss weights must be finite and >= 0");
  require(cfg.weights.eps_sce > 0.0, ErrorKind::InvalidSpec, "eps_sce must be > 0");
  require(cfg.eps >= 0.0, ErrorKind::InvalidSpec, "eps must be >= 0");
  require(cfg.init_noise >= 0.0, ErrorKind::InvalidSpec, "init_noise must be >= 0");
  require(!cfg.grad_clip || *cfg.grad_clip > 0.0, ErrorKind::InvalidSpec, "grad_clip must be > 0");
}

/// Cosine learning-rate decay from lr0 at t = 0 to zero at t = T.
inline double lr_at(const TrainConfig& cfg, std::size_t t) {
  require(cfg.total_steps >= 1, ErrorKind::InvalidSpec, "total_steps must be >= 1");
  require(t <= cfg.total_steps, ErrorKind::OutOfRange,
          "step " + std::to_string(t) + " is past T = " + std::to_string(cfg.total_steps));
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(cfg.total_steps);
  return 0.5 * cfg.lr0 * (1.0 + std::cos(phase));
}

inline PromptState initial_state(const AnchorSet& anchors, const TrainConfig& cfg) {
  PromptState state = PromptState::at_anchors(anchors);
  if (cfg.init == PromptInit::Context) {
    Rng rng(substream_seed(cfg.seed, "init"));
    for (std::size_t i = 0; i < state.classes(); ++i) {
      auto p = state.prompts.row(i);
      for (std::size_t j = 0; j < p.size(); ++j) p[j] = anchors.clip_field.mu[j] + cfg.init_noise * rng.normal();
    }
  }
  return state;
}

/// argmax with the lowest index winning ties.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

struct TrainRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double tau = 0.0;
  LossValue loss;
  double batch_accuracy = 0.0;
};

struct TrainReport {
  std::vector<TrainRecord> records;
  PromptState final_state;
};

namespace detail {

inline void sgd_step(PromptState& state, Gradients& g, double lr, const std::optional<double>& clip) {
  double scale = lr;
  if (clip) {
    double sq = g.log_alpha * g.log_alpha;
    for (double v : g.prompts.data()) sq += v * v;
    for (double v : g.offsets.data()) sq += v * v;
    const double n = std::sqrt(sq);
    if (n > *clip) scale = lr * (*clip / n);
  }
  auto p = state.prompts.data();
  auto gp = g.prompts.data();
  for (std::size_t k = 0; k < p.size(); ++k) p[k] -= scale * gp[k];
  auto o = state.offsets.data();
  auto go = g.offsets.data();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] -= scale * go[k];
  state.log_alpha -= scale * g.log_alpha;
}

inline bool finite_gradients(const Gradients& g) {
  return std::isfinite(g.loss.total) && std::isfinite(g.log_alpha) && all_finite(g.prompts.data()) &&
         all_finite(g.offsets.data());
}

}  // namespace detail

/// Plain SGD over shuffled epochs of the labeled set. Deterministic for a
/// fixed config and seed.
inline TrainReport train(const EmbeddingMatrix& images, std::span<const int> labels, const AnchorSet& anchors,
                         const TrainConfig& cfg, std::optional<PromptState> init = std::nullopt) {
  validate(cfg);
  require(images.normalized(), ErrorKind::InvalidSpec, "training images must be normalized");
  require(images.dims() == anchors.dims(), ErrorKind::InvalidSpec, "images and anchors differ in dims");
  require(labels.size() == images.rows(), ErrorKind::InvalidSpec,
          std::to_string(labels.size()) + " labels for " + std::to_string(images.rows()) + " images");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < anchors.classes(), ErrorKind::InvalidSpec,
            "label " + std::to_string(y) + " has no anchor");

  TrainReport report{{}, init ? std::move(*init) : initial_state(anchors, cfg)};
  PromptState& state = report.final_state;
  detail::check_state(state, anchors);
  report.records.reserve(cfg.total_steps);

  const TempSchedule sched = cfg.temperature();
  Rng shuffle_rng(substream_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(images.rows());
  std::size_t cursor = order.size();
  std::vector<std::size_t> batch_idx;
  std::vector<int> batch_labels;

  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    if (cursor >= order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      shuffle_rng.shuffle(std::span<std::size_t>(order));
      cursor = 0;
    }
    const std::size_t end = std::min(order.size(), cursor + cfg.batch_size);
    batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor), order.begin() + static_cast<std::ptrdiff_t>(end));
    cursor = end;
    batch_labels.clear();
    for (std::size_t i : batch_idx) batch_labels.push_back(labels[i]);
    const EmbeddingMatrix batch = images.select(batch_idx);

    const double lr = lr_at(cfg, t);
    const double tau = tau_at(sched, t);
    Gradients g = total_gradients(state, anchors, batch, batch_labels, cfg.weights, tau, cfg.tau_cls);
    if (!detail::finite_gradients(g)) fail(ErrorKind::NonFiniteLoss, "non-finite loss or gradient at step " + std::to_string(t));

    const Matrix logits = class_logits(batch, state.prompts, cfg.tau_cls);
    std::size_t hits = 0;
    for (std::size_t b = 0; b < batch_idx.size(); ++b)
      if (static_cast<int>(argmax(logits.row(b))) == batch_labels[b]) ++hits;

    report.records.push_back({t, lr, tau, g.loss, static_cast<double>(hits) / static_cast<double>(batch_idx.size())});
    detail::sgd_step(state, g, lr, cfg.grad_clip);
  }
  return report;
}

/// Batch-free run: only the anchor and contrastive terms drive the update.
inline TrainReport train_without_images(const AnchorSet& anchors, const TrainConfig& cfg, PromptState init) {
  validate(cfg);
  detail::check_state(init, anchors);
  TrainReport report{{}, std::move(init)};
  PromptState& state = report.final_state;
  const TempSchedule sched = cfg.temperature();
  for (std::size_t t = 0; t < cfg.total_steps; ++t) {
    const double lr = lr_at(cfg, t);
    const double tau = tau_at(sched, t);
    Gradients g = total_gradients(state, anchors, nullptr, {}, cfg.weights, tau, cfg.tau_cls);
    if (!detail::finite_gradients(g)) fail(ErrorKind::NonFiniteLoss, "non-finite loss or gradient at step " + std::to_string(t));
    report.records.push_back({t, lr, tau, g.loss, 0.0});
    detail::sgd_step(state, g, lr, cfg.grad_clip);
  }
  return report;
}

}  // namespace vmfcoop
