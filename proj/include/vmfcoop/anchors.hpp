#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vmfcoop/error.hpp"
#include "vmfcoop/manifold.hpp"
#include "vmfcoop/vmf.hpp"

namespace vmfcoop {

/// Global vocabulary field, per-class prompt fields and their fused anchors.
struct AnchorSet {
  VmfParams clip_field;
  std::vector<VmfParams> class_fields;
  EmbeddingMatrix anchors;  // C x d, unit rows

  std::size_t classes() const noexcept { return anchors.rows(); }
  std::size_t dims() const noexcept { return anchors.dims(); }

  /// Restriction to a subset of classes, in the given order.
  AnchorSet subset(std::span<const std::size_t> class_ids) const {
    std::vector<VmfParams> fields;
    fields.reserve(class_ids.size());
    for (std::size_t c : class_ids) {
      require(c < classes(), ErrorKind::InvalidSpec, "class index " + std::to_string(c) + " out of range");
      fields.push_back(class_fields[c]);
    }
    return {clip_field, std::move(fields), anchors.select(class_ids)};
  }
};

/// Vocabulary field. A single row is accepted and lands on the R = 1 branch.
inline VmfFit build_clip_field(const EmbeddingMatrix& vocab, double eps = kFieldEps) {
  return estimate_vmf(vocab, eps);
}

inline std::vector<VmfFit> build_class_fields(const std::vector<EmbeddingMatrix>& prompts_per_class,
                                              double eps = kFieldEps) {
  require(!prompts_per_class.empty(), ErrorKind::InvalidSpec, "no prompt classes given");
  const std::size_t d = prompts_per_class.front().dims();
  std::vector<VmfFit> fits;
  fits.reserve(prompts_per_class.size());
  for (std::size_t c = 0; c < prompts_per_class.size(); ++c) {
    require(prompts_per_class[c].dims() == d, ErrorKind::DimMismatch,
            "class " + std::to_string(c) + " prompts have d=" + std::to_string(prompts_per_class[c].dims()) +
                ", expected " + std::to_string(d));
    try {
      fits.push_back(estimate_vmf(prompts_per_class[c], eps));
    } catch (const Error& e) {
      fail(e.kind(), "class " + std::to_string(c) + ": " + e.message());
    }
  }
  return fits;
}

struct FusionOptions {
  /// Applied to every kappa before fusion when set; unset leaves them as estimated.
  std::optional<double> kappa_cap;
};

/// u_i = (kappa_C mu_C + kappa_i mu_i) / |kappa_C mu_C + kappa_i mu_i|.
inline AnchorSet fuse_anchors(const VmfParams& clip, const std::vector<VmfParams>& class_fields,
                              const FusionOptions& options = {}) {
  require(!class_fields.empty(), ErrorKind::InvalidSpec, "no class fields to fuse");
  const std::size_t d = clip.dims();
  const auto capped = [&](double kappa) { return options.kappa_cap ? std::min(kappa, *options.kappa_cap) : kappa; };
  const double kc = capped(clip.kappa);
  Matrix anchors(class_fields.size(), d);
  for (std::size_t i = 0; i < class_fields.size(); ++i) {
    const VmfParams& f = class_fields[i];
    require(f.dims() == d, ErrorKind::DimMismatch, "class field " + std::to_string(i) + " has wrong dims");
    const double ki = capped(f.kappa);
    auto u = anchors.row(i);
    for (std::size_t j = 0; j < d; ++j) u[j] = kc * clip.mu[j] + ki * f.mu[j];
    const double n = norm(u);
    // Scale-relative so huge kappas from the R = 1 branch cannot mask a cancellation.
    const double scale = kc + ki;
    require(n >= kDegenerateNorm * std::max(1.0, scale), ErrorKind::DegenerateFusion,
            "class " + std::to_string(i) + ": global and class fields cancel exactly");
    for (double& x : u) x /= n;
  }
  return {clip, class_fields, EmbeddingMatrix(std::move(anchors), true)};
}

inline AnchorSet build_anchor_set(const EmbeddingMatrix& vocab, const std::vector<EmbeddingMatrix>& prompts_per_class,
                                  double eps = kFieldEps, const FusionOptions& options = {}) {
  VmfFit clip = build_clip_field(vocab, eps);
  std::vector<VmfFit> fits = build_class_fields(prompts_per_class, eps);
  require(clip.params.dims() == fits.front().params.dims(), ErrorKind::DimMismatch,
          "vocabulary and prompt embeddings have different dims");
  std::vector<VmfParams> fields;
  fields.reserve(fits.size());
  for (auto& f : fits) fields.push_back(std::move(f.params));
  return fuse_anchors(clip.params, fields, options);
}

}  // namespace vmfcoop
