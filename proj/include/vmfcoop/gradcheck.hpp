#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vmfcoop/anchors.hpp"
#include "vmfcoop/losses.hpp"
#include "vmfcoop/random.hpp"
#include "vmfcoop/vmf.hpp"

namespace vmfcoop {

/// Random problem instance for derivative checks.
struct GradInstance {
  AnchorSet anchors;
  PromptState state;
  EmbeddingMatrix images;
  std::vector<int> labels;
  double tau = 1.0;
  double tau_cls = 0.01;
  LossWeights weights;
};

inline EmbeddingMatrix random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = m.row(i);
    for (double& v : r) v = rng.normal();
  }
  return normalize_rows(m).matrix;
}

inline GradInstance random_grad_instance(std::size_t d, std::size_t c, std::size_t b, std::uint64_t seed) {
  Rng rng(seed);
  const EmbeddingMatrix anchor_rows = random_unit_rows(c, d, rng);
  std::vector<VmfParams> fields;
  for (std::size_t i = 0; i < c; ++i) {
    auto r = anchor_rows.row(i);
    fields.emplace_back(UnitVector({r.begin(), r.end()}), 1.0);
  }
  const EmbeddingMatrix clip_row = random_unit_rows(1, d, rng);
  AnchorSet anchors{VmfParams(UnitVector({clip_row.row(0).begin(), clip_row.row(0).end()}), 1.0), fields, anchor_rows};

  PromptState state{Matrix(c, d), Matrix(c, d), rng.uniform() * 2.0 - 1.0};
  for (double& v : state.prompts.data()) v = rng.normal();
  for (double& v : state.offsets.data()) v = 0.3 * rng.normal();

  std::vector<int> labels(b);
  for (int& y : labels) y = static_cast<int>(rng.index(c));
  GradInstance inst{std::move(anchors), std::move(state), random_unit_rows(b, d, rng), std::move(labels), 1.0, 0.01, LossWeights{}};
  inst.tau = 1.0 + 9.0 * rng.uniform();
  // Log-uniform over [0.01, 0.2].
  inst.tau_cls = 0.01 * std::exp(rng.uniform() * std::log(20.0));
  inst.weights.lambda_anc = 0.5 + 4.5 * rng.uniform();
  inst.weights.lambda_sc = 0.5 + 4.5 * rng.uniform();
  return inst;
}

enum class LossTerm { Anchor, Contrastive, Symmetric, Total };

inline constexpr std::array<LossTerm, 4> kLossTerms{LossTerm::Anchor, LossTerm::Contrastive, LossTerm::Symmetric,
                                                   LossTerm::Total};

inline const char* to_string(LossTerm t) {
  switch (t) {
    case LossTerm::Anchor: return "anchor";
    case LossTerm::Contrastive: return "contrastive";
    case LossTerm::Symmetric: return "symmetric_ce";
    case LossTerm::Total: return "total";
  }
  return "?";
}

/// Relative error |a - f| / max(|a|, |f|, floor). The floor keeps
/// coordinates whose true derivative is ~0 from dividing noise by noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct TermCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

namespace detail {

inline LossWeights weights_for(LossTerm term, const LossWeights& base) {
  LossWeights w = base;
  w.classification = ClassificationLoss::Symmetric;
  switch (term) {
    case LossTerm::Anchor: w.lambda_anc = 1.0; w.lambda_sc = 0.0; break;
    case LossTerm::Contrastive: w.lambda_anc = 0.0; w.lambda_sc = 1.0; break;
    case LossTerm::Symmetric: w.lambda_anc = 0.0; w.lambda_sc = 0.0; break;
    case LossTerm::Total: break;
  }
  return w;
}

inline bool uses_images(LossTerm term) { return term == LossTerm::Symmetric || term == LossTerm::Total; }

}  // namespace detail

/// Central differences of the loss value functions against total_gradients
/// for one term, over every prompt, offset and log(alpha) coordinate.
inline TermCheck check_term(const GradInstance& inst, LossTerm term, double h = 1e-5) {
  const LossWeights w = detail::weights_for(term, inst.weights);
  const bool with_images = detail::uses_images(term);
  const auto value = [&](const PromptState& s) {
    return with_images ? total_loss(s, inst.anchors, inst.images, inst.labels, w, inst.tau, inst.tau_cls).total
                       : total_loss(s, inst.anchors, w, inst.tau).total;
  };
  const Gradients g = with_images
                          ? total_gradients(inst.state, inst.anchors, &inst.images, inst.labels, w, inst.tau, inst.tau_cls)
                          : total_gradients(inst.state, inst.anchors, nullptr, {}, w, inst.tau, inst.tau_cls);

  TermCheck out;
  PromptState probe = inst.state;
  const auto check = [&](double& coord, double analytic) {
    const double saved = coord;
    coord = saved + h;
    const double up = value(probe);
    coord = saved - h;
    const double down = value(probe);
    coord = saved;
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic, (up - down) / (2.0 * h)));
    ++out.coordinates;
  };
  for (std::size_t k = 0; k < probe.prompts.data().size(); ++k) check(probe.prompts.data()[k], g.prompts.data()[k]);
  for (std::size_t k = 0; k < probe.offsets.data().size(); ++k) check(probe.offsets.data()[k], g.offsets.data()[k]);
  check(probe.log_alpha, g.log_alpha);
  return out;
}

struct GradcheckOptions {
  std::size_t dims = 16;
  std::size_t classes = 5;
  std::size_t batch = 8;
  std::size_t instances = 10;
  /// Draw each instance's d, C, B uniformly up to the values above.
  bool random_sizes = false;
  std::uint64_t seed = 1;
  double h = 1e-5;
  double tolerance = 1e-4;
};

struct GradcheckReport {
  std::array<TermCheck, 4> terms{};  // indexed like kLossTerms
  std::size_t instances = 0;
  bool passed = true;
};

inline GradcheckReport gradcheck(const GradcheckOptions& opt) {
  require(opt.dims >= 2 && opt.classes >= 2 && opt.batch >= 1 && opt.instances >= 1, ErrorKind::InvalidSpec,
          "gradcheck needs d >= 2, classes >= 2, batch >= 1, instances >= 1");
  GradcheckReport rep;
  Rng size_rng(substream_seed(opt.seed, "gradcheck-sizes"));
  for (std::size_t n = 0; n < opt.instances; ++n) {
    std::size_t d = opt.dims, c = opt.classes, b = opt.batch;
    if (opt.random_sizes) {
      d = 2 + size_rng.index(opt.dims - 1);
      c = 2 + size_rng.index(opt.classes - 1);
      b = 1 + size_rng.index(opt.batch);
    }
    const GradInstance inst = random_grad_instance(d, c, b, substream_seed(opt.seed, "gradcheck", n));
    for (std::size_t t = 0; t < kLossTerms.size(); ++t) {
      const TermCheck tc = check_term(inst, kLossTerms[t], opt.h);
      rep.terms[t].max_rel_error = std::max(rep.terms[t].max_rel_error, tc.max_rel_error);
      rep.terms[t].coordinates += tc.coordinates;
    }
    ++rep.instances;
  }
  for (const TermCheck& tc : rep.terms)
    if (!(tc.max_rel_error <= opt.tolerance)) rep.passed = false;
  return rep;
}

}  // namespace vmfcoop
