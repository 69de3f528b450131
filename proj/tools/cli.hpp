#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vmfcoop/anchors.hpp"
#include "vmfcoop/classifier.hpp"
#include "vmfcoop/gradcheck.hpp"
#include "vmfcoop/io/embd.hpp"
#include "vmfcoop/io/json_io.hpp"
#include "vmfcoop/optimizer.hpp"
#include "vmfcoop/synth.hpp"
#include "vmfcoop/vmf.hpp"

namespace vmfcoop::cli {

namespace fs = std::filesystem;
using io::json;

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2, kNumerical = 3 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::BadMagic:
    case ErrorKind::BadVersion:
    case ErrorKind::CrcMismatch:
    case ErrorKind::TruncatedPayload:
    case ErrorKind::TrailingData:
      return kIo;
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::DegenerateTarget:
    case ErrorKind::DegeneratePrompt:
      return kNumerical;
    default:
      return kValidation;
  }
}

struct PromptFiles {
  std::vector<EmbeddingMatrix> matrices;
  std::vector<std::string> class_names;
};

/// Every *.embd in `dir` with a sidecar carrying "class_index"; ordered by it.
inline PromptFiles read_prompt_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::Io, dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".embd") files.push_back(entry.path());
  require(!files.empty(), ErrorKind::InvalidSpec, dir.string() + " has no .embd prompt files");

  std::map<std::size_t, std::pair<fs::path, std::string>> by_index;
  for (const fs::path& f : files) {
    const json meta = io::read_json(io::sidecar_path(f));
    require(meta.contains("class_index") && meta.at("class_index").is_number_unsigned(), ErrorKind::InvalidSpec,
            io::sidecar_path(f).string() + ": missing non-negative \"class_index\"");
    const auto idx = meta.at("class_index").get<std::size_t>();
    require(!by_index.contains(idx), ErrorKind::InvalidSpec, "class index " + std::to_string(idx) + " appears twice");
    by_index[idx] = {f, meta.value("class_name", "class_" + std::to_string(idx))};
  }
  PromptFiles out;
  std::size_t expect = 0;
  for (const auto& [idx, entry] : by_index) {
    require(idx == expect++, ErrorKind::InvalidSpec, "prompt class indices are not dense in [0, C)");
    EmbeddingMatrix m = io::read_embd(entry.first);
    require(m.normalized(), ErrorKind::InvalidSpec, entry.first.string() + ": prompt embeddings must be normalized");
    out.matrices.push_back(std::move(m));
    out.class_names.push_back(entry.second);
  }
  return out;
}

inline LabeledSet read_labeled(const fs::path& images, const fs::path& labels, std::vector<std::string>* names = nullptr) {
  EmbeddingMatrix m = io::read_embd(images);
  require(m.normalized(), ErrorKind::InvalidSpec, images.string() + ": images must be flagged normalized");
  io::LabelMeta meta = io::label_meta_from_json(io::read_json(labels), m.rows());
  if (names) *names = meta.class_names;
  return {std::move(m), std::move(meta.labels)};
}

inline int cmd_fit_vmf(const fs::path& input, double eps, const fs::path& out) {
  const EmbeddingMatrix m = io::read_embd(input);
  require(m.normalized(), ErrorKind::InvalidSpec, input.string() + ": rows must be flagged normalized");
  const VmfFit fit = estimate_vmf(m, eps);
  io::write_json(out, io::to_json(fit, m.rows(), eps));
  std::cerr << "fit-vmf: d=" << m.dims() << " n=" << m.rows() << " R=" << fit.resultant_length
            << " kappa=" << fit.params.kappa << "\n";
  return kOk;
}

inline int cmd_anchors(const fs::path& vocab_path, const fs::path& prompt_dir, double eps,
                       std::optional<double> kappa_cap, const fs::path& out) {
  const EmbeddingMatrix vocab = io::read_embd(vocab_path);
  require(vocab.normalized(), ErrorKind::InvalidSpec, vocab_path.string() + ": vocabulary must be normalized");
  const PromptFiles prompts = read_prompt_dir(prompt_dir);
  const VmfFit clip = build_clip_field(vocab, eps);
  const std::vector<VmfFit> fits = build_class_fields(prompts.matrices, eps);
  require(clip.params.dims() == fits.front().params.dims(), ErrorKind::DimMismatch,
          "vocabulary and prompts differ in dims");
  std::vector<VmfParams> fields;
  std::vector<double> class_r;
  for (const VmfFit& f : fits) {
    fields.push_back(f.params);
    class_r.push_back(f.resultant_length);
  }
  const AnchorSet anchors = fuse_anchors(clip.params, fields, FusionOptions{kappa_cap});
  io::write_anchor_set(anchors, out, prompts.class_names, clip.resultant_length, class_r, eps);
  std::cerr << "anchors: C=" << anchors.classes() << " d=" << anchors.dims() << " kappa_C=" << clip.params.kappa << "\n";
  return kOk;
}

inline int cmd_train(const fs::path& images, const fs::path& labels, const fs::path& anchors_path,
                     const fs::path& config, const fs::path& out_dir) {
  const LabeledSet data = read_labeled(images, labels);
  const AnchorSet anchors = io::read_anchor_set(anchors_path);
  const TrainConfig cfg = config.empty() ? TrainConfig{} : io::train_config_from_json(io::read_json(config));
  const TrainReport rep = train(data.images, data.labels, anchors, cfg);
  fs::create_directories(out_dir);
  io::write_json(out_dir / "config.json", io::to_json(cfg));
  io::write_text(out_dir / "report.jsonl", io::report_jsonl(rep));
  io::write_embd(normalize_rows(rep.final_state.prompts).matrix, out_dir / "prompts.embd");
  io::write_embd(rep.final_state.offsets, false, out_dir / "offsets.embd");
  io::write_json(out_dir / "state.json", {{"classes", rep.final_state.classes()},
                                          {"dims", rep.final_state.dims()},
                                          {"log_alpha", rep.final_state.log_alpha},
                                          {"alpha", rep.final_state.alpha()}});
  const TrainRecord& last = rep.records.back();
  std::cerr << "train: " << rep.records.size() << " steps, final loss " << last.loss.total << "\n";
  return kOk;
}

inline int cmd_eval(const fs::path& images, const fs::path& labels, const fs::path& prompts_path, double tau_cls,
                    const fs::path& out_dir) {
  const LabeledSet data = read_labeled(images, labels);
  const EmbeddingMatrix prompts = io::read_embd(prompts_path);
  const EvalResult r = evaluate(data.images, data.labels, prompts.values(), tau_cls);
  fs::create_directories(out_dir);
  io::write_json(out_dir / "eval.json", io::to_json(r));
  io::write_text(out_dir / "confusion.csv", io::confusion_csv(r));
  std::cerr << "eval: accuracy " << r.accuracy_mean << "\n";
  return kOk;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

/// Few-shot table: methods x shots, each cell mean and std over trials.
inline int cmd_episodes(const fs::path& spec_path, const fs::path& out) {
  const json spec = io::read_json(spec_path);
  io::ObjectReader r(spec, "episodes");
  std::vector<std::size_t> shots{1, 2, 4, 8, 16};
  EpisodeSpec es;
  std::vector<std::string> methods{"sce+anc+sc"};
  r.get("shots", shots);
  r.get("trials", es.trials);
  r.get("seed", es.seed);
  r.get("eval_split_fraction", es.eval_split_fraction);
  r.get("methods", methods);
  TrainConfig cfg;
  if (const json* c = r.child("config")) cfg = io::train_config_from_json(*c);

  const fs::path base = spec_path.parent_path();
  std::optional<World> world;
  std::optional<LabeledSet> loaded;
  std::optional<AnchorSet> anchors;
  if (const json* w = r.child("world")) {
    world = generate_world(io::world_spec_from_json(*w));
    anchors = world_anchors(*world, cfg.eps);
  }
  if (const json* d = r.child("data")) {
    require(!world, ErrorKind::InvalidSpec, "episodes: give either \"world\" or \"data\", not both");
    io::ObjectReader dr(*d, "episodes.data");
    std::string images, labels, anchor_file;
    dr.get("images", images);
    dr.get("labels", labels);
    dr.get("anchors", anchor_file);
    dr.finish();
    loaded = read_labeled(resolve(base, images), resolve(base, labels));
    anchors = io::read_anchor_set(resolve(base, anchor_file));
  }
  r.finish();
  require(anchors.has_value(), ErrorKind::InvalidSpec, "episodes: needs a \"world\" or a \"data\" block");
  require(!shots.empty() && !methods.empty(), ErrorKind::InvalidSpec, "episodes: shots and methods must be non-empty");
  const LabeledSet& data = world ? world->images : *loaded;

  std::vector<std::vector<EvalResult>> cells(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const std::string& name = methods[m];
    for (std::size_t k : shots) {
      EpisodeSpec cell = es;
      cell.shots = k;
      if (name == "zero-shot") {
        cells[m].push_back(run_zero_shot(data, *anchors, cell, cfg.tau_cls));
        continue;
      }
      const auto rows = ablation_rows();
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const LossConfig& lc) { return lc.name == name; });
      require(it != rows.end(), ErrorKind::InvalidSpec, "episodes: unknown method \"" + name + "\"");
      cells[m].push_back(run_episodes(data, *anchors, cell, with_losses(cfg, *it)));
    }
  }
  io::write_text(out, io::episodes_csv(methods, shots, cells));
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::fprintf(stderr, "%-12s", methods[m].c_str());
    for (const EvalResult& e : cells[m]) std::fprintf(stderr, "  %6.2f +- %5.2f", 100 * e.accuracy_mean, 100 * e.accuracy_std);
    std::fprintf(stderr, "\n");
  }
  return kOk;
}

inline int cmd_synth(const fs::path& world_path, const fs::path& out_dir) {
  const WorldSpec spec = io::world_spec_from_json(io::read_json(world_path));
  const World w = generate_world(spec);
  fs::create_directories(out_dir / "prompts");
  std::vector<std::string> names;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%03zu", c);
    names.emplace_back(name);
    const fs::path p = out_dir / "prompts" / (std::string(name) + ".embd");
    io::write_embd(w.prompts[c], p);
    io::write_json(io::sidecar_path(p), {{"class_index", c},
                                         {"class_name", name},
                                         {"provenance", {{"encoder", "synthetic"}, {"world_seed", spec.seed}}}});
  }
  io::write_embd(w.vocab, out_dir / "vocab.embd");
  io::write_json(io::sidecar_path(out_dir / "vocab.embd"), {{"provenance", {{"encoder", "synthetic"}}}});
  io::write_embd(w.images.images, out_dir / "images.embd");
  io::write_json(io::sidecar_path(out_dir / "images.embd"), io::to_json(io::LabelMeta{names, w.images.labels}));
  json truth = json::array();
  for (std::size_t c = 0; c < spec.classes; ++c) {
    truth.push_back({{"class_index", c},
                     {"llm_bias_deg", angle_degrees(w.class_directions.row(c), w.prompt_means.row(c))},
                     {"modality_gap_deg", angle_degrees(w.class_directions.row(c), w.image_means.row(c))}});
  }
  io::write_json(out_dir / "world.json", {{"spec", io::to_json(spec)}, {"classes", truth}});
  std::cerr << "synth: wrote " << spec.classes << " classes to " << out_dir.string() << "\n";
  return kOk;
}

inline std::vector<std::size_t> parse_shots(const std::string& text) {
  const auto rows = io::parse_csv(text);
  require(rows.size() == 1, ErrorKind::InvalidSpec, "--shots expects one comma-separated list");
  std::vector<std::size_t> out;
  for (const auto& cell : rows.front()) {
    try {
      out.push_back(std::stoul(cell));
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidSpec, "bad shot count \"" + cell + "\"");
    }
  }
  return out;
}

inline int cmd_ablate(const fs::path& world_path, const fs::path& config, const AblationOptions& opt, const fs::path& out) {
  const WorldSpec spec = io::world_spec_from_json(io::read_json(world_path));
  const TrainConfig cfg = config.empty() ? TrainConfig{} : io::train_config_from_json(io::read_json(config));
  const AblationTable t = ablation_suite(spec, cfg, opt);
  io::write_text(out, io::ablation_csv(t));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::fprintf(stderr, "%-12s", t.rows[r].name.c_str());
    for (double a : t.accuracy[r]) std::fprintf(stderr, "  %6.2f", 100 * a);
    std::fprintf(stderr, "\n");
  }
  return kOk;
}

inline int cmd_gradcheck(const GradcheckOptions& opt, const fs::path& out) {
  const GradcheckReport rep = gradcheck(opt);
  json terms = json::object();
  for (std::size_t t = 0; t < kLossTerms.size(); ++t) {
    terms[to_string(kLossTerms[t])] = {{"max_rel_error", rep.terms[t].max_rel_error},
                                       {"coordinates", rep.terms[t].coordinates}};
    std::fprintf(stderr, "gradcheck %-13s max rel err %.3e over %zu coordinates\n", to_string(kLossTerms[t]),
                 rep.terms[t].max_rel_error, rep.terms[t].coordinates);
  }
  if (!out.empty())
    io::write_json(out, {{"instances", rep.instances}, {"tolerance", opt.tolerance}, {"passed", rep.passed}, {"terms", terms}});
  std::fprintf(stderr, "gradcheck %s (tolerance %.1e)\n", rep.passed ? "passed" : "FAILED", opt.tolerance);
  return rep.passed ? kOk : kNumerical;
}

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Hyperspherical prompt optimization toolkit"};
  app.require_subcommand(1);

  std::string input, out, vocab, prompt_dir, images, labels, anchors, config, prompts, spec, world;
  double eps = kFieldEps;
  double tau_cls = 0.01;
  std::optional<double> kappa_cap;
  GradcheckOptions gc;
  AblationOptions ab;
  std::string shots_text = "1,4,16";

  auto* fit = app.add_subcommand("fit-vmf", "Estimate a vMF field from an EMBD file");
  fit->add_option("--input", input, "Normalized EMBD file")->required();
  fit->add_option("--eps", eps, "Estimator constant");
  fit->add_option("--out", out, "Output JSON")->required();

  auto* anc = app.add_subcommand("anchors", "Build unified anchors from vocabulary and per-class prompts");
  anc->add_option("--vocab", vocab, "Vocabulary EMBD")->required();
  anc->add_option("--prompts", prompt_dir, "Directory of per-class prompt EMBD files")->required();
  anc->add_option("--eps", eps, "Estimator constant");
  anc->add_option("--kappa-cap", kappa_cap, "Cap applied to every kappa before fusion");
  anc->add_option("--out", out, "Output anchors EMBD (sidecar written alongside)")->required();

  auto* tr = app.add_subcommand("train", "Train prompts on a labeled embedding set");
  tr->add_option("--images", images, "Normalized image EMBD")->required();
  tr->add_option("--labels", labels, "Label sidecar JSON")->required();
  tr->add_option("--anchors", anchors, "Anchors EMBD")->required();
  tr->add_option("--config", config, "Training config JSON");
  tr->add_option("--out", out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Classify a labeled set with trained prompts");
  ev->add_option("--images", images, "Normalized image EMBD")->required();
  ev->add_option("--labels", labels, "Label sidecar JSON")->required();
  ev->add_option("--prompts", prompts, "Prompt EMBD")->required();
  ev->add_option("--tau-cls", tau_cls, "Classification temperature");
  ev->add_option("--out", out, "Output directory")->required();

  auto* ep = app.add_subcommand("episodes", "K-shot table, mean and std over support draws");
  ep->add_option("--spec", spec, "Episode spec JSON")->required();
  ep->add_option("--out", out, "Output CSV")->required();

  auto* sy = app.add_subcommand("synth", "Generate a synthetic world as EMBD files");
  sy->add_option("--world", world, "World spec JSON")->required();
  sy->add_option("--out", out, "Output directory")->required();

  auto* abl = app.add_subcommand("ablate", "Loss-component ablation on a synthetic world");
  abl->add_option("--world", world, "World spec JSON")->required();
  abl->add_option("--config", config, "Training config JSON");
  abl->add_option("--shots", shots_text, "Comma-separated shot counts");
  abl->add_option("--trials", ab.trials, "Support draws per cell");
  abl->add_option("--replicates", ab.replicates, "Worlds (seed, seed+1, ...) per cell");
  abl->add_option("--out", out, "Output CSV")->required();

  auto* gcs = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
  gcs->add_option("--d", gc.dims, "Embedding dimension (maximum with --random-sizes)");
  gcs->add_option("--classes", gc.classes, "Class count (maximum with --random-sizes)");
  gcs->add_option("--batch", gc.batch, "Image batch size (maximum with --random-sizes)");
  gcs->add_option("--instances", gc.instances, "Random instances");
  gcs->add_flag("--random-sizes", gc.random_sizes, "Draw d, C, B per instance");
  gcs->add_option("--seed", gc.seed, "Seed");
  gcs->add_option("--out", out, "Optional JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kValidation;
  }

  try {
    if (*fit) return cmd_fit_vmf(input, eps, out);
    if (*anc) return cmd_anchors(vocab, prompt_dir, eps, kappa_cap, out);
    if (*tr) return cmd_train(images, labels, anchors, config, out);
    if (*ev) return cmd_eval(images, labels, prompts, tau_cls, out);
    if (*ep) return cmd_episodes(spec, out);
    if (*sy) return cmd_synth(world, out);
    if (*abl) {
      ab.shots = parse_shots(shots_text);
      return cmd_ablate(world, config, ab, out);
    }
    if (*gcs) return cmd_gradcheck(gc, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kValidation;
}

}  // namespace vmfcoop::cli
