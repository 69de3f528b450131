#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vmfcoop/anchors.hpp"
#include "vmfcoop/error.hpp"
#include "vmfcoop/losses.hpp"
#include "vmfcoop/optimizer.hpp"
#include "vmfcoop/parallel.hpp"
#include "vmfcoop/random.hpp"

namespace vmfcoop {

struct LabeledSet {
  EmbeddingMatrix images;
  std::vector<int> labels;
};

struct Prediction {
  std::vector<int> labels;
  Matrix probabilities;  // B x C, rows sum to 1
};

/// Softmax over cos(image, prompt)/tau_cls; ties go to the lowest class index.
inline Prediction predict(const EmbeddingMatrix& images, const Matrix& prompts, double tau_cls) {
  require(images.normalized(), ErrorKind::InvalidSpec, "predict expects normalized images");
  const Matrix logits = class_logits(images, prompts, tau_cls);
  Prediction out{{}, softmax_rows(logits)};
  out.labels.reserve(images.rows());
  for (std::size_t b = 0; b < images.rows(); ++b) out.labels.push_back(static_cast<int>(argmax(logits.row(b))));
  return out;
}

inline Prediction predict(const EmbeddingMatrix& images, const PromptState& state, double tau_cls) {
  return predict(images, state.prompts, tau_cls);
}

struct EpisodeSpec {
  std::size_t shots = 16;
  double eval_split_fraction = 0.5;
  std::size_t trials = 3;
  std::uint64_t seed = 0;
};

struct EvalResult {
  double accuracy_mean = 0.0;
  /// Sample standard deviation over trials (0 for a single trial).
  double accuracy_std = 0.0;
  std::vector<double> trial_accuracies;
  std::vector<double> per_class_accuracy;
  /// confusion[true][predicted], summed over trials.
  std::vector<std::vector<std::size_t>> confusion;

  bool operator==(const EvalResult&) const = default;
};

inline std::size_t class_count(std::span<const int> labels) {
  int top = -1;
  for (int y : labels) {
    require(y >= 0, ErrorKind::InvalidSpec, "negative label");
    top = std::max(top, y);
  }
  return static_cast<std::size_t>(top + 1);
}

inline double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

/// Confusion counts for one prediction run; accuracy is trace / total.
inline std::vector<std::vector<std::size_t>> confusion_counts(std::span<const int> truth, std::span<const int> predicted,
                                                              std::size_t classes) {
  std::vector<std::vector<std::size_t>> m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++m.at(static_cast<std::size_t>(truth[i])).at(static_cast<std::size_t>(predicted[i]));
  return m;
}

inline double accuracy_of(const std::vector<std::vector<std::size_t>>& confusion) {
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < confusion.size(); ++i)
    for (std::size_t j = 0; j < confusion[i].size(); ++j) {
      total += confusion[i][j];
      if (i == j) hit += confusion[i][j];
    }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

/// Single-split evaluation.
inline EvalResult evaluate(const EmbeddingMatrix& images, std::span<const int> labels, const Matrix& prompts,
                           double tau_cls) {
  require(labels.size() == images.rows(), ErrorKind::InvalidSpec, "label count does not match image count");
  const std::size_t c = prompts.rows();
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < c, ErrorKind::LabelOutOfRange, "label " + std::to_string(y) + " has no prompt");
  const Prediction pred = predict(images, prompts, tau_cls);
  EvalResult r;
  r.confusion = confusion_counts(labels, pred.labels, c);
  r.accuracy_mean = accuracy_of(r.confusion);
  r.trial_accuracies = {r.accuracy_mean};
  r.per_class_accuracy.resize(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    const std::size_t n = std::accumulate(r.confusion[i].begin(), r.confusion[i].end(), std::size_t{0});
    r.per_class_accuracy[i] = n == 0 ? 0.0 : static_cast<double>(r.confusion[i][i]) / static_cast<double>(n);
  }
  return r;
}

/// Support / evaluation index sets of one trial.
struct EpisodeSplit {
  std::vector<std::size_t> support;
  std::vector<std::size_t> eval;
};

/// Per class: shuffle the members with the trial generator, take K for
/// support and the leading eval_split_fraction of the remainder for evaluation.
inline EpisodeSplit split_episode(std::span<const int> labels, std::span<const std::size_t> classes, std::size_t shots,
                                  double eval_fraction, Rng& rng) {
  require(eval_fraction > 0.0 && eval_fraction <= 1.0, ErrorKind::InvalidSpec, "eval_split_fraction must be in (0, 1]");
  EpisodeSplit split;
  for (std::size_t c : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (static_cast<std::size_t>(labels[i]) == c) members.push_back(i);
    require(members.size() >= shots + 1, ErrorKind::InsufficientSamples,
            "class " + std::to_string(c) + " has " + std::to_string(members.size()) + " samples, needs " +
                std::to_string(shots + 1) + " for K=" + std::to_string(shots));
    rng.shuffle(std::span<std::size_t>(members));
    split.support.insert(split.support.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(shots));
    const std::size_t rest = members.size() - shots;
    const auto n_eval = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(rest))));
    split.eval.insert(split.eval.end(), members.begin() + static_cast<std::ptrdiff_t>(shots),
                      members.begin() + static_cast<std::ptrdiff_t>(shots + std::min(n_eval, rest)));
  }
  std::set<std::size_t> seen(split.support.begin(), split.support.end());
  for (std::size_t i : split.eval)
    require(!seen.contains(i), ErrorKind::InvalidSpec, "support and evaluation sets overlap");
  return split;
}

inline std::vector<int> labels_at(std::span<const int> labels, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

inline void check_labeled(const LabeledSet& data) {
  require(data.labels.size() == data.images.rows(), ErrorKind::InvalidSpec, "label count does not match image count");
  require(data.images.normalized(), ErrorKind::InvalidSpec, "images must be normalized");
}

namespace detail {

inline EvalResult aggregate_trials(const std::vector<EvalResult>& per_trial, std::size_t c) {
  EvalResult out;
  out.confusion.assign(c, std::vector<std::size_t>(c, 0));
  for (const EvalResult& r : per_trial) {
    out.trial_accuracies.push_back(r.accuracy_mean);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) out.confusion[i][j] += r.confusion[i][j];
  }
  out.accuracy_mean = mean_of(out.trial_accuracies);
  out.accuracy_std = sample_std(out.trial_accuracies);
  out.per_class_accuracy.resize(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    const std::size_t n = std::accumulate(out.confusion[i].begin(), out.confusion[i].end(), std::size_t{0});
    out.per_class_accuracy[i] = n == 0 ? 0.0 : static_cast<double>(out.confusion[i][i]) / static_cast<double>(n);
  }
  return out;
}

}  // namespace detail

/// K-shot protocol: per trial, sample support sets (seed + trial), train,
/// evaluate on held-out samples; mean and std over trials.
inline EvalResult run_episodes(const LabeledSet& data, const AnchorSet& anchors, const EpisodeSpec& spec,
                               const TrainConfig& cfg, std::size_t threads = default_thread_count()) {
  check_labeled(data);
  require(spec.trials >= 1, ErrorKind::InvalidSpec, "trials must be >= 1");
  require(spec.shots >= 1, ErrorKind::InvalidSpec, "shots must be >= 1");
  const std::size_t c = anchors.classes();
  require(class_count(data.labels) <= c, ErrorKind::InvalidSpec, "labels reference classes without anchors");
  std::vector<std::size_t> all_classes(c);
  std::iota(all_classes.begin(), all_classes.end(), std::size_t{0});

  std::vector<EvalResult> per_trial(spec.trials);
  parallel_for(spec.trials, [&](std::size_t trial) {
    const std::uint64_t trial_seed = spec.seed + trial;
    Rng rng(substream_seed(trial_seed, "support"));
    const EpisodeSplit split = split_episode(data.labels, all_classes, spec.shots, spec.eval_split_fraction, rng);
    TrainConfig trial_cfg = cfg;
    trial_cfg.seed = trial_seed;
    const auto support_labels = labels_at(data.labels, split.support);
    const TrainReport rep = train(data.images.select(split.support), support_labels, anchors, trial_cfg);
    per_trial[trial] = evaluate(data.images.select(split.eval), labels_at(data.labels, split.eval),
                                rep.final_state.prompts, cfg.tau_cls);
  }, threads);

  return detail::aggregate_trials(per_trial, c);
}

/// Same splits as run_episodes, scored with the anchors as fixed prompts.
inline EvalResult run_zero_shot(const LabeledSet& data, const AnchorSet& anchors, const EpisodeSpec& spec,
                                double tau_cls) {
  check_labeled(data);
  require(spec.trials >= 1, ErrorKind::InvalidSpec, "trials must be >= 1");
  const std::size_t c = anchors.classes();
  require(class_count(data.labels) <= c, ErrorKind::InvalidSpec, "labels reference classes without anchors");
  std::vector<std::size_t> all_classes(c);
  std::iota(all_classes.begin(), all_classes.end(), std::size_t{0});
  std::vector<EvalResult> per_trial(spec.trials);
  for (std::size_t trial = 0; trial < spec.trials; ++trial) {
    Rng rng(substream_seed(spec.seed + trial, "support"));
    const EpisodeSplit split = split_episode(data.labels, all_classes, spec.shots, spec.eval_split_fraction, rng);
    per_trial[trial] = evaluate(data.images.select(split.eval), labels_at(data.labels, split.eval),
                                anchors.anchors.values(), tau_cls);
  }
  return detail::aggregate_trials(per_trial, c);
}

/// Default class split: even indices are base classes, odd ones novel.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> parity_split(std::size_t classes) {
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (std::size_t c = 0; c < classes; ++c) (c % 2 == 0 ? out.first : out.second).push_back(c);
  return out;
}

inline double harmonic_mean(double a, double b) { return a + b == 0.0 ? 0.0 : 2.0 * a * b / (a + b); }

struct BaseToNovelResult {
  double base_accuracy = 0.0;
  double novel_accuracy = 0.0;
  double harmonic_mean = 0.0;
};

/// Trains on base classes only; novel classes are scored with their unified
/// anchors as untouched prompts. Each side is classified among its own classes.
inline BaseToNovelResult base_to_novel(const LabeledSet& data, const AnchorSet& anchors,
                                       const std::vector<std::size_t>& base_classes,
                                       const std::vector<std::size_t>& novel_classes, const EpisodeSpec& spec,
                                       const TrainConfig& cfg, std::size_t threads = default_thread_count()) {
  check_labeled(data);
  require(!base_classes.empty() && !novel_classes.empty(), ErrorKind::InvalidSpec, "base and novel sets must be non-empty");
  std::set<std::size_t> base_set(base_classes.begin(), base_classes.end());
  for (std::size_t c : novel_classes)
    require(!base_set.contains(c), ErrorKind::InvalidSpec, "class " + std::to_string(c) + " is both base and novel");
  const AnchorSet base_anchors = anchors.subset(base_classes);
  const AnchorSet novel_anchors = anchors.subset(novel_classes);

  const auto remap = [](std::span<const std::size_t> classes, std::span<const int> labels) {
    std::vector<int> out;
    out.reserve(labels.size());
    for (int y : labels)
      out.push_back(static_cast<int>(std::find(classes.begin(), classes.end(), static_cast<std::size_t>(y)) - classes.begin()));
    return out;
  };

  std::vector<double> base_acc(spec.trials), novel_acc(spec.trials);
  parallel_for(spec.trials, [&](std::size_t trial) {
    const std::uint64_t trial_seed = spec.seed + trial;
    Rng rng(substream_seed(trial_seed, "support"));
    const EpisodeSplit base = split_episode(data.labels, base_classes, spec.shots, spec.eval_split_fraction, rng);
    const EpisodeSplit novel = split_episode(data.labels, novel_classes, 0, spec.eval_split_fraction, rng);
    TrainConfig trial_cfg = cfg;
    trial_cfg.seed = trial_seed;
    const TrainReport rep = train(data.images.select(base.support),
                                  remap(base_classes, labels_at(data.labels, base.support)), base_anchors, trial_cfg);
    base_acc[trial] = evaluate(data.images.select(base.eval), remap(base_classes, labels_at(data.labels, base.eval)),
                               rep.final_state.prompts, cfg.tau_cls)
                          .accuracy_mean;
    novel_acc[trial] = evaluate(data.images.select(novel.eval), remap(novel_classes, labels_at(data.labels, novel.eval)),
                                novel_anchors.anchors.values(), cfg.tau_cls)
                           .accuracy_mean;
  }, threads);
  BaseToNovelResult r;
  r.base_accuracy = mean_of(base_acc);
  r.novel_accuracy = mean_of(novel_acc);
  r.harmonic_mean = harmonic_mean(r.base_accuracy, r.novel_accuracy);
  return r;
}

}  // namespace vmfcoop
