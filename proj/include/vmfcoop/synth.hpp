#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "vmfcoop/anchors.hpp"
#include "vmfcoop/classifier.hpp"
#include "vmfcoop/error.hpp"
#include "vmfcoop/manifold.hpp"
#include "vmfcoop/optimizer.hpp"
#include "vmfcoop/random.hpp"
#include "vmfcoop/vmf.hpp"

namespace vmfcoop {

/// Dials of a synthetic embedding world. Angles in degrees.
struct WorldSpec {
  std::size_t dims = 32;
  std::size_t classes = 5;
  double kappa_vocab = 5.0;
  double kappa_prompts = 100.0;
  double kappa_images = 25.0;
  double inter_class_angle = 60.0;
  /// Offset of each class prompt field from the true class direction.
  double llm_bias_angle = 0.0;
  /// Offset of each class image cluster from the true class direction.
  double modality_gap_angle = 0.0;
  std::size_t vocab_size = 2000;
  std::size_t prompts_per_class = 50;
  std::size_t images_per_class = 100;
  std::uint64_t seed = 0;
};

inline void validate(const WorldSpec& s) {
  require(s.dims >= 2, ErrorKind::InvalidSpec, "world needs d >= 2");
  require(s.classes >= 1, ErrorKind::InvalidSpec, "world needs at least one class");
  require(s.classes <= s.dims, ErrorKind::InvalidSpec,
          "orthonormal class frame needs d >= C (d=" + std::to_string(s.dims) + ", C=" + std::to_string(s.classes) + ")");
  for (double a : {s.inter_class_angle, s.llm_bias_angle, s.modality_gap_angle})
    require(a >= 0.0 && a <= 90.0, ErrorKind::InvalidSpec, "angles must lie in [0, 90] degrees");
  for (double k : {s.kappa_vocab, s.kappa_prompts, s.kappa_images})
    require(k >= 0.0 && std::isfinite(k), ErrorKind::InvalidSpec, "concentrations must be finite and >= 0");
  require(s.vocab_size >= 1 && s.prompts_per_class >= 1 && s.images_per_class >= 1, ErrorKind::InvalidSpec,
          "all counts must be >= 1");
}

struct World {
  EmbeddingMatrix vocab;
  std::vector<EmbeddingMatrix> prompts;  // one matrix per class
  LabeledSet images;                     // class-major order
  Matrix class_directions;               // C x d ground truth
  Matrix prompt_means;                   // C x d, class directions after the LLM bias
  Matrix image_means;                    // C x d, class directions after the modality gap
  UnitVector vocab_mean;
};

inline double degrees_to_radians(double deg) { return deg * std::numbers::pi / 180.0; }

inline double angle_degrees(std::span<const double> a, std::span<const double> b) {
  const double c = std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

/// Rotates unit `x` by `deg` toward a uniformly random orthogonal direction.
inline std::vector<double> rotate_randomly(std::span<const double> x, double deg, Rng& rng) {
  std::vector<double> t(x.size());
  double tn = 0.0;
  do {
    for (double& v : t) v = rng.normal();
    const double proj = dot(t, x);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] -= proj * x[j];
    tn = norm(t);
  } while (tn < 1e-8);
  const double a = degrees_to_radians(deg);
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = std::cos(a) * x[j] + std::sin(a) * t[j] / tn;
  const double n = norm(out);
  for (double& v : out) v /= n;
  return out;
}

/// `count` orthonormal rows via Gram-Schmidt on Gaussian draws.
inline Matrix random_orthonormal_frame(std::size_t count, std::size_t d, Rng& rng) {
  Matrix frame(count, d);
  for (std::size_t k = 0; k < count; ++k) {
    auto r = frame.row(k);
    for (;;) {
      for (double& v : r) v = rng.normal();
      for (std::size_t p = 0; p < k; ++p) {
        const double proj = dot(r, frame.row(p));
        auto q = frame.row(p);
        for (std::size_t j = 0; j < d; ++j) r[j] -= proj * q[j];
      }
      const double n = norm(r);
      if (n > 1e-6) {
        for (double& v : r) v /= n;
        break;
      }
    }
  }
  return frame;
}

/// Unit class directions e_c + beta * s (s = normalized sum of the frame),
/// with beta chosen so every pair meets at exactly `deg`.
inline Matrix class_directions(const Matrix& frame, double deg) {
  const std::size_t c = frame.rows();
  const std::size_t d = frame.cols();
  std::vector<double> s(d, 0.0);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t j = 0; j < d; ++j) s[j] += frame(k, j);
  const double sn = norm(s);
  for (double& v : s) v /= sn;

  Matrix out(c, d);
  const double gamma = std::cos(degrees_to_radians(deg));
  if (gamma >= 1.0 - 1e-12 || c == 1) {
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t j = 0; j < d; ++j) out(k, j) = c == 1 ? frame(0, j) : s[j];
    return out;
  }
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  const double beta = std::max(0.0, -inv_sqrt_c + std::sqrt(inv_sqrt_c * inv_sqrt_c + gamma / (1.0 - gamma)));
  for (std::size_t k = 0; k < c; ++k) {
    auto r = out.row(k);
    for (std::size_t j = 0; j < d; ++j) r[j] = frame(k, j) + beta * s[j];
    const double n = norm(r);
    for (double& v : r) v /= n;
  }
  return out;
}

inline World generate_world(const WorldSpec& spec) {
  validate(spec);
  const std::size_t d = spec.dims;
  const std::size_t c = spec.classes;
  Rng frame_rng(substream_seed(spec.seed, "frame"));
  const Matrix frame = random_orthonormal_frame(c, d, frame_rng);
  const Matrix truth = class_directions(frame, spec.inter_class_angle);

  std::vector<double> global(d, 0.0);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t j = 0; j < d; ++j) global[j] += truth(k, j);
  UnitVector vocab_mean = UnitVector::from_direction(global);

  Rng bias_rng(substream_seed(spec.seed, "llm-bias"));
  Rng gap_rng(substream_seed(spec.seed, "modality-gap"));
  Matrix prompt_means(c, d), image_means(c, d);
  for (std::size_t k = 0; k < c; ++k) {
    const auto pm = rotate_randomly(truth.row(k), spec.llm_bias_angle, bias_rng);
    const auto im = rotate_randomly(truth.row(k), spec.modality_gap_angle, gap_rng);
    std::copy(pm.begin(), pm.end(), prompt_means.row(k).begin());
    std::copy(im.begin(), im.end(), image_means.row(k).begin());
  }

  EmbeddingMatrix vocab =
      sample_vmf(VmfParams(vocab_mean, spec.kappa_vocab), spec.vocab_size, substream_seed(spec.seed, "vocab"));

  std::vector<EmbeddingMatrix> prompts;
  prompts.reserve(c);
  Matrix all_images(c * spec.images_per_class, d);
  std::vector<int> labels;
  labels.reserve(all_images.rows());
  for (std::size_t k = 0; k < c; ++k) {
    const auto pm = prompt_means.row(k);
    prompts.push_back(sample_vmf(VmfParams(UnitVector({pm.begin(), pm.end()}), spec.kappa_prompts),
                                 spec.prompts_per_class, substream_seed(spec.seed, "prompts", k)));
    const auto im = image_means.row(k);
    const EmbeddingMatrix imgs = sample_vmf(VmfParams(UnitVector({im.begin(), im.end()}), spec.kappa_images),
                                            spec.images_per_class, substream_seed(spec.seed, "images", k));
    for (std::size_t i = 0; i < spec.images_per_class; ++i) {
      auto src = imgs.row(i);
      std::copy(src.begin(), src.end(), all_images.row(k * spec.images_per_class + i).begin());
      labels.push_back(static_cast<int>(k));
    }
  }
  return {std::move(vocab),
          std::move(prompts),
          {EmbeddingMatrix(std::move(all_images), true), std::move(labels)},
          truth,
          std::move(prompt_means),
          std::move(image_means),
          std::move(vocab_mean)};
}

/// Anchors estimated from a world's vocabulary and prompt populations.
inline AnchorSet world_anchors(const World& world, double eps = kFieldEps) {
  return build_anchor_set(world.vocab, world.prompts, eps);
}

/// One row of the component ablation.
struct LossConfig {
  std::string name;
  bool symmetric = false;
  bool anchor = false;
  bool contrastive = false;
};

/// Rows in the order of the component ablation table.
inline std::vector<LossConfig> ablation_rows() {
  return {
      {"none", false, false, false},  {"anc", false, true, false},     {"anc+sc", false, true, true},
      {"sce", true, false, false},    {"sce+anc", true, true, false},  {"sce+anc+sc", true, true, true},
  };
}

/// Applies a row to a base config: inactive terms get zero weight, active
/// ones keep the base config's lambdas.
inline TrainConfig with_losses(const TrainConfig& base, const LossConfig& row) {
  TrainConfig cfg = base;
  cfg.weights.classification = row.symmetric ? ClassificationLoss::Symmetric : ClassificationLoss::CrossEntropy;
  cfg.weights.lambda_anc = row.anchor ? base.weights.lambda_anc : 0.0;
  cfg.weights.lambda_sc = row.contrastive ? base.weights.lambda_sc : 0.0;
  return cfg;
}

struct AblationOptions {
  std::vector<std::size_t> shots{1, 4, 16};
  std::size_t trials = 3;
  /// Independent worlds (seed, seed + 1, ...) averaged per cell.
  std::size_t replicates = 1;
  double eval_split_fraction = 0.5;
};

struct AblationTable {
  std::vector<std::size_t> shots;
  std::vector<LossConfig> rows;
  /// accuracy[row][shot]: mean over replicates and trials.
  std::vector<std::vector<double>> accuracy;
  /// Per-replicate means, [row][shot][replicate].
  std::vector<std::vector<std::vector<double>>> per_replicate;
};

/// Every row sees the same worlds, support sets and initializations.
inline AblationTable ablation_suite(const WorldSpec& spec, const TrainConfig& cfg, const AblationOptions& opt = {}) {
  require(!opt.shots.empty() && opt.replicates >= 1 && opt.trials >= 1, ErrorKind::InvalidSpec,
          "ablation needs shots, trials >= 1 and replicates >= 1");
  validate(cfg);
  AblationTable table{opt.shots, ablation_rows(), {}, {}};
  const std::size_t n_rows = table.rows.size();
  const std::size_t n_shots = opt.shots.size();
  table.per_replicate.assign(n_rows, std::vector<std::vector<double>>(n_shots, std::vector<double>(opt.replicates)));

  std::vector<World> worlds;
  std::vector<AnchorSet> anchors;
  for (std::size_t r = 0; r < opt.replicates; ++r) {
    WorldSpec ws = spec;
    ws.seed = spec.seed + r;
    worlds.push_back(generate_world(ws));
    anchors.push_back(world_anchors(worlds.back(), cfg.eps));
  }

  const std::size_t cells = n_rows * n_shots * opt.replicates;
  parallel_for(cells, [&](std::size_t cell) {
    const std::size_t r = cell % opt.replicates;
    const std::size_t k = (cell / opt.replicates) % n_shots;
    const std::size_t row = cell / (opt.replicates * n_shots);
    EpisodeSpec es{opt.shots[k], opt.eval_split_fraction, opt.trials, spec.seed + 1000 * r};
    const TrainConfig row_cfg = with_losses(cfg, table.rows[row]);
    // Trials run serially inside a cell; the cells already fill the pool.
    table.per_replicate[row][k][r] = run_episodes(worlds[r].images, anchors[r], es, row_cfg, 1).accuracy_mean;
  });

  table.accuracy.assign(n_rows, std::vector<double>(n_shots, 0.0));
  for (std::size_t row = 0; row < n_rows; ++row)
    for (std::size_t k = 0; k < n_shots; ++k) table.accuracy[row][k] = mean_of(table.per_replicate[row][k]);
  return table;
}

}  // namespace vmfcoop
