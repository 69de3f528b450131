#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vmfcoop/anchors.hpp"
#include "vmfcoop/error.hpp"
#include "vmfcoop/manifold.hpp"

namespace vmfcoop {

/// Trainable parameters: one free prompt row per class, one offset row per
/// class and the global offset scale, stored as log(alpha) so alpha > 0.
struct PromptState {
  Matrix prompts;
  Matrix offsets;
  double log_alpha = 0.0;

  std::size_t classes() const noexcept { return prompts.rows(); }
  std::size_t dims() const noexcept { return prompts.cols(); }
  double alpha() const { return std::exp(log_alpha); }

  /// Prompts on the anchors, zero offsets, alpha = 1.
  static PromptState at_anchors(const AnchorSet& anchors) {
    return {anchors.anchors.values(), Matrix(anchors.classes(), anchors.dims()), 0.0};
  }

  bool operator==(const PromptState&) const = default;
};

enum class ClassificationLoss {
  Symmetric,     // forward CE plus the reverse term on the one-hot target
  CrossEntropy,  // plain softmax CE, the baseline of the ablation table
};

struct LossWeights {
  double lambda_anc = 10.0;
  double lambda_sc = 1.0;
  double eps_sce = kFieldEps;
  ClassificationLoss classification = ClassificationLoss::Symmetric;
};

/// Cosine annealing of the contrastive temperature from tau0 (t = 0) to
/// tau_max (t = T).
struct TempSchedule {
  double tau0 = 1.0;
  double tau_max = 10.0;
  std::size_t total_steps = 1;
};

inline double tau_at(const TempSchedule& sched, std::size_t t) {
  require(sched.total_steps >= 1, ErrorKind::InvalidSpec, "temperature schedule needs T >= 1");
  require(t <= sched.total_steps, ErrorKind::OutOfRange,
          "step " + std::to_string(t) + " is past T = " + std::to_string(sched.total_steps));
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(sched.total_steps);
  return sched.tau_max + 0.5 * (sched.tau0 - sched.tau_max) * (1.0 + std::cos(phase));
}

namespace detail {

inline void check_state(const PromptState& state, const AnchorSet& anchors) {
  require(state.prompts.rows() == anchors.classes() && state.offsets.rows() == anchors.classes(), ErrorKind::DimMismatch,
          "prompt state has " + std::to_string(state.prompts.rows()) + " classes, anchors have " +
              std::to_string(anchors.classes()));
  require(state.prompts.cols() == anchors.dims() && state.offsets.cols() == anchors.dims(), ErrorKind::DimMismatch,
          "prompt state and anchors differ in dims");
}

/// Row-normalized prompts together with the pre-normalization norms.
struct UnitPrompts {
  Matrix unit;
  std::vector<double> norms;
};

inline UnitPrompts unit_prompts(const Matrix& prompts) {
  UnitPrompts out{prompts, std::vector<double>(prompts.rows())};
  for (std::size_t i = 0; i < prompts.rows(); ++i) {
    auto r = out.unit.row(i);
    const double n = norm(r);
    require(n >= kDegenerateNorm, ErrorKind::DegeneratePrompt, "prompt row " + std::to_string(i) + " has zero norm");
    out.norms[i] = n;
    for (double& x : r) x /= n;
  }
  return out;
}

struct Targets {
  Matrix unit;                // u~^d
  std::vector<double> norms;  // |u + alpha delta|
};

inline Targets targets(const AnchorSet& anchors, const PromptState& state) {
  const double alpha = state.alpha();
  Targets out{Matrix(anchors.classes(), anchors.dims()), std::vector<double>(anchors.classes())};
  for (std::size_t i = 0; i < anchors.classes(); ++i) {
    auto u = anchors.anchors.row(i);
    auto delta = state.offsets.row(i);
    auto r = out.unit.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = u[j] + alpha * delta[j];
    const double n = norm(r);
    require(n >= kDegenerateNorm, ErrorKind::DegenerateTarget,
            "offset cancels anchor " + std::to_string(i) + " exactly");
    out.norms[i] = n;
    for (double& x : r) x /= n;
  }
  return out;
}

/// Pulls a gradient w.r.t. x/|x| back to x: (I - x~ x~^T) g / |x|, in place.
inline void project_tangent(std::span<double> g, std::span<const double> unit, double n) {
  const double radial = dot(unit, g);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = (g[j] - radial * unit[j]) / n;
}

inline double log_sum_exp(std::span<const double> row) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return m + std::log(s);
}

inline void check_labels(const Matrix& logits, std::span<const int> labels) {
  require(labels.size() == logits.rows(), ErrorKind::DimMismatch,
          std::to_string(labels.size()) + " labels for " + std::to_string(logits.rows()) + " logit rows");
  for (std::size_t b = 0; b < labels.size(); ++b)
    require(labels[b] >= 0 && static_cast<std::size_t>(labels[b]) < logits.cols(), ErrorKind::LabelOutOfRange,
            "label " + std::to_string(labels[b]) + " at row " + std::to_string(b) + " outside [0, " +
                std::to_string(logits.cols()) + ")");
}

}  // namespace detail

/// u~^d_i = (u_i + alpha delta_i) / |u_i + alpha delta_i|.
inline EmbeddingMatrix dynamic_targets(const AnchorSet& anchors, const PromptState& state) {
  detail::check_state(state, anchors);
  return EmbeddingMatrix(detail::targets(anchors, state).unit, true);
}

/// Mean squared chord distance between normalized prompts and their dynamic
/// targets; in [0, 4].
inline double anchor_loss(const PromptState& state, const AnchorSet& anchors) {
  detail::check_state(state, anchors);
  const auto p = detail::unit_prompts(state.prompts);
  const auto t = detail::targets(anchors, state);
  double total = 0.0;
  for (std::size_t i = 0; i < state.classes(); ++i) {
    auto a = p.unit.row(i);
    auto b = t.unit.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) sq += (a[j] - b[j]) * (a[j] - b[j]);
    total += sq;
  }
  return total / static_cast<double>(state.classes());
}

/// Row-wise softmax CE of S = tau * P~ U^T against the diagonal.
inline double spherical_contrastive_loss(const PromptState& state, const AnchorSet& anchors, double tau) {
  detail::check_state(state, anchors);
  require(tau > 0.0 && std::isfinite(tau), ErrorKind::OutOfRange, "contrastive temperature must be > 0");
  const auto p = detail::unit_prompts(state.prompts);
  const std::size_t c = state.classes();
  std::vector<double> s(c);
  double total = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) s[j] = tau * dot(p.unit.row(i), anchors.anchors.row(j));
    total += detail::log_sum_exp(s) - s[i];
  }
  return total / static_cast<double>(c);
}

/// logits(b, c) = cos(image_b, P~_c) / tau_cls.
inline Matrix class_logits(const EmbeddingMatrix& images, const Matrix& prompts, double tau_cls) {
  require(images.dims() == prompts.cols(), ErrorKind::DimMismatch, "images and prompts differ in dims");
  require(tau_cls > 0.0 && std::isfinite(tau_cls), ErrorKind::OutOfRange, "classification temperature must be > 0");
  const auto p = detail::unit_prompts(prompts);
  Matrix out(images.rows(), prompts.rows());
  for (std::size_t b = 0; b < images.rows(); ++b)
    for (std::size_t c = 0; c < prompts.rows(); ++c) out(b, c) = dot(images.row(b), p.unit.row(c)) / tau_cls;
  return out;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (std::size_t b = 0; b < p.rows(); ++b) {
    auto r = p.row(b);
    const double lse = detail::log_sum_exp(r);
    for (double& v : r) v = std::exp(v - lse);
  }
  return p;
}

/// -(1/B) sum_b [log p_{b,y_b} + sum_c p_{b,c} log(q_{b,c} + eps)], q one-hot.
/// Bounded below by -log(1 + eps), approached by confident correct rows.
inline double symmetric_ce_loss(const Matrix& logits, std::span<const int> labels, double eps = kFieldEps) {
  require(eps > 0.0, ErrorKind::OutOfRange, "eps must be > 0");
  detail::check_labels(logits, labels);
  if (logits.rows() == 0) return 0.0;
  const double log_hit = std::log1p(eps);
  const double log_miss = std::log(eps);
  double total = 0.0;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto r = logits.row(b);
    const double lse = detail::log_sum_exp(r);
    const auto y = static_cast<std::size_t>(labels[b]);
    double reverse = 0.0;
    for (std::size_t c = 0; c < r.size(); ++c) reverse += std::exp(r[c] - lse) * (c == y ? log_hit : log_miss);
    total += (r[y] - lse) + reverse;
  }
  return -total / static_cast<double>(logits.rows());
}

inline double cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  detail::check_labels(logits, labels);
  if (logits.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto r = logits.row(b);
    total += detail::log_sum_exp(r) - r[static_cast<std::size_t>(labels[b])];
  }
  return total / static_cast<double>(logits.rows());
}

struct LossParts {
  double anchor = 0.0;
  double contrastive = 0.0;
  double classification = 0.0;
};

struct LossValue {
  double total = 0.0;
  LossParts parts;
};

inline double classification_loss(const Matrix& logits, std::span<const int> labels, const LossWeights& w) {
  return w.classification == ClassificationLoss::Symmetric ? symmetric_ce_loss(logits, labels, w.eps_sce)
                                                           : cross_entropy_loss(logits, labels);
}

/// lambda_anc * L_anc + lambda_sc * L_sc + L_cls, with the parts kept for logging.
inline LossValue total_loss(const PromptState& state, const AnchorSet& anchors, const Matrix& logits,
                            std::span<const int> labels, const LossWeights& w, double tau) {
  LossValue v;
  v.parts.anchor = anchor_loss(state, anchors);
  v.parts.contrastive = spherical_contrastive_loss(state, anchors, tau);
  v.parts.classification = classification_loss(logits, labels, w);
  v.total = w.lambda_anc * v.parts.anchor + w.lambda_sc * v.parts.contrastive + v.parts.classification;
  return v;
}

inline LossValue total_loss(const PromptState& state, const AnchorSet& anchors, const EmbeddingMatrix& images,
                            std::span<const int> labels, const LossWeights& w, double tau, double tau_cls) {
  return total_loss(state, anchors, class_logits(images, state.prompts, tau_cls), labels, w, tau);
}

/// Loss over an empty image batch: only the anchor and contrastive terms.
inline LossValue total_loss(const PromptState& state, const AnchorSet& anchors, const LossWeights& w, double tau) {
  return total_loss(state, anchors, Matrix(0, anchors.classes()), {}, w, tau);
}

struct Gradients {
  Matrix prompts;
  Matrix offsets;
  double log_alpha = 0.0;
  LossValue loss;
};

/// Analytic gradients of total_loss w.r.t. prompts, offsets and log(alpha).
/// `images` may be null for a batch-free (anchor/contrastive only) step.
inline Gradients total_gradients(const PromptState& state, const AnchorSet& anchors, const EmbeddingMatrix* images,
                                 std::span<const int> labels, const LossWeights& w, double tau, double tau_cls) {
  detail::check_state(state, anchors);
  require(tau > 0.0 && std::isfinite(tau), ErrorKind::OutOfRange, "contrastive temperature must be > 0");
  require(tau_cls > 0.0 && std::isfinite(tau_cls), ErrorKind::OutOfRange, "classification temperature must be > 0");
  const std::size_t c = state.classes();
  const std::size_t d = state.dims();
  const auto p = detail::unit_prompts(state.prompts);
  const auto t = detail::targets(anchors, state);
  const double alpha = state.alpha();

  Gradients g{Matrix(c, d), Matrix(c, d), 0.0, {}};
  // Gradient w.r.t. the normalized prompts, accumulated per term then pulled back.
  Matrix g_unit(c, d);
  const double inv_c = 1.0 / static_cast<double>(c);

  // Anchor term.
  {
    double total = 0.0;
    std::vector<double> g_target(d);
    for (std::size_t i = 0; i < c; ++i) {
      auto a = p.unit.row(i);
      auto b = t.unit.row(i);
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += (a[j] - b[j]) * (a[j] - b[j]);
      total += sq;
      if (w.lambda_anc == 0.0) continue;
      const double k = 2.0 * inv_c * w.lambda_anc;
      auto gu = g_unit.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        gu[j] += k * (a[j] - b[j]);
        g_target[j] = -k * (a[j] - b[j]);
      }
      detail::project_tangent(g_target, b, t.norms[i]);
      auto gd = g.offsets.row(i);
      for (std::size_t j = 0; j < d; ++j) gd[j] = alpha * g_target[j];
      g.log_alpha += alpha * dot(state.offsets.row(i), g_target);
    }
    g.loss.parts.anchor = total * inv_c;
  }

  // Contrastive term against the fixed anchors.
  {
    double total = 0.0;
    std::vector<double> s(c);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) s[j] = tau * dot(p.unit.row(i), anchors.anchors.row(j));
      const double lse = detail::log_sum_exp(s);
      total += lse - s[i];
      if (w.lambda_sc == 0.0) continue;
      auto gu = g_unit.row(i);
      for (std::size_t j = 0; j < c; ++j) {
        const double ds = w.lambda_sc * inv_c * (std::exp(s[j] - lse) - (i == j ? 1.0 : 0.0));
        auto u = anchors.anchors.row(j);
        for (std::size_t k = 0; k < d; ++k) gu[k] += tau * ds * u[k];
      }
    }
    g.loss.parts.contrastive = total * inv_c;
  }

  // Classification term on the image batch.
  if (images != nullptr && images->rows() > 0) {
    require(images->dims() == d, ErrorKind::DimMismatch, "images and prompts differ in dims");
    Matrix logits(images->rows(), c);
    for (std::size_t b = 0; b < images->rows(); ++b)
      for (std::size_t k = 0; k < c; ++k) logits(b, k) = dot(images->row(b), p.unit.row(k)) / tau_cls;
    g.loss.parts.classification = classification_loss(logits, labels, w);
    const double inv_b = 1.0 / static_cast<double>(images->rows());
    const double log_hit = std::log1p(w.eps_sce);
    const double log_miss = std::log(w.eps_sce);
    std::vector<double> dz(c);
    for (std::size_t b = 0; b < images->rows(); ++b) {
      auto r = logits.row(b);
      const double lse = detail::log_sum_exp(r);
      const auto y = static_cast<std::size_t>(labels[b]);
      double mean_log_q = 0.0;
      if (w.classification == ClassificationLoss::Symmetric)
        for (std::size_t k = 0; k < c; ++k) mean_log_q += std::exp(r[k] - lse) * (k == y ? log_hit : log_miss);
      for (std::size_t k = 0; k < c; ++k) {
        const double pk = std::exp(r[k] - lse);
        dz[k] = pk - (k == y ? 1.0 : 0.0);
        if (w.classification == ClassificationLoss::Symmetric)
          dz[k] -= pk * ((k == y ? log_hit : log_miss) - mean_log_q);
      }
      auto v = images->row(b);
      for (std::size_t k = 0; k < c; ++k) {
        const double scale = dz[k] * inv_b / tau_cls;
        auto gu = g_unit.row(k);
        for (std::size_t j = 0; j < d; ++j) gu[j] += scale * v[j];
      }
    }
  }

  for (std::size_t i = 0; i < c; ++i) {
    auto gp = g.prompts.row(i);
    auto gu = g_unit.row(i);
    std::copy(gu.begin(), gu.end(), gp.begin());
    detail::project_tangent(gp, p.unit.row(i), p.norms[i]);
  }
  g.loss.total =
      w.lambda_anc * g.loss.parts.anchor + w.lambda_sc * g.loss.parts.contrastive + g.loss.parts.classification;
  return g;
}

inline Gradients total_gradients(const PromptState& state, const AnchorSet& anchors, const EmbeddingMatrix& images,
                                 std::span<const int> labels, const LossWeights& w, double tau, double tau_cls) {
  return total_gradients(state, anchors, &images, labels, w, tau, tau_cls);
}

}  // namespace vmfcoop
