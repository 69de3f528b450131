#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "vmfcoop/anchors.hpp"
#include "vmfcoop/classifier.hpp"
#include "vmfcoop/error.hpp"
#include "vmfcoop/io/embd.hpp"
#include "vmfcoop/optimizer.hpp"
#include "vmfcoop/synth.hpp"
#include "vmfcoop/vmf.hpp"

namespace vmfcoop::io {

using json = nlohmann::json;

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidSpec, path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

/// Typed field access on a JSON object that rejects unknown keys, so a typo
/// in a config file fails loudly instead of silently using a default.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string context) : obj_(obj), context_(std::move(context)) {
    require(obj_.is_object(), ErrorKind::InvalidSpec, context_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return;
    try {
      const json& v = obj_.at(key);
      if constexpr (std::is_same_v<T, bool>) {
        require(v.is_boolean(), ErrorKind::InvalidSpec, context_ + "." + key + ": expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        require(v.is_number_integer() && (std::is_signed_v<T> || v.get<long long>() >= 0), ErrorKind::InvalidSpec,
                context_ + "." + key + ": expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        require(v.is_number(), ErrorKind::InvalidSpec, context_ + "." + key + ": expected a number");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      fail(ErrorKind::InvalidSpec, context_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : obj_.items())
      require(seen_.contains(key), ErrorKind::InvalidSpec, context_ + ": unknown key \"" + key + "\"");
  }

 private:
  const json& obj_;
  std::string context_;
  std::set<std::string> seen_;
};

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  ObjectReader r(j, "config");
  r.get("lr0", c.lr0);
  r.get("batch_size", c.batch_size);
  r.get("total_steps", c.total_steps);
  r.get("lambda_anc", c.weights.lambda_anc);
  r.get("lambda_sc", c.weights.lambda_sc);
  r.get("eps_sce", c.weights.eps_sce);
  std::string cls = c.weights.classification == ClassificationLoss::Symmetric ? "symmetric" : "cross_entropy";
  r.get("classification_loss", cls);
  require(cls == "symmetric" || cls == "cross_entropy", ErrorKind::InvalidSpec,
          "config.classification_loss must be \"symmetric\" or \"cross_entropy\"");
  c.weights.classification = cls == "symmetric" ? ClassificationLoss::Symmetric : ClassificationLoss::CrossEntropy;
  r.get("tau0", c.tau0);
  r.get("tau_max", c.tau_max);
  r.get("seed", c.seed);
  r.get("tau_cls", c.tau_cls);
  r.get("eps", c.eps);
  std::string init = c.init == PromptInit::Context ? "context" : "anchors";
  r.get("init", init);
  require(init == "context" || init == "anchors", ErrorKind::InvalidSpec, "config.init must be \"context\" or \"anchors\"");
  c.init = init == "context" ? PromptInit::Context : PromptInit::Anchors;
  r.get("init_noise", c.init_noise);
  r.get("grad_clip", c.grad_clip);
  r.finish();
  validate(c);
  return c;
}

inline json to_json(const TrainConfig& c) {
  return {
      {"lr0", c.lr0},
      {"batch_size", c.batch_size},
      {"total_steps", c.total_steps},
      {"lambda_anc", c.weights.lambda_anc},
      {"lambda_sc", c.weights.lambda_sc},
      {"eps_sce", c.weights.eps_sce},
      {"classification_loss", c.weights.classification == ClassificationLoss::Symmetric ? "symmetric" : "cross_entropy"},
      {"tau0", c.tau0},
      {"tau_max", c.tau_max},
      {"seed", c.seed},
      {"tau_cls", c.tau_cls},
      {"eps", c.eps},
      {"init", c.init == PromptInit::Context ? "context" : "anchors"},
      {"init_noise", c.init_noise},
      {"grad_clip", c.grad_clip ? json(*c.grad_clip) : json(nullptr)},
  };
}

inline WorldSpec world_spec_from_json(const json& j) {
  WorldSpec s;
  ObjectReader r(j, "world");
  r.get("dims", s.dims);
  r.get("classes", s.classes);
  r.get("kappa_vocab", s.kappa_vocab);
  r.get("kappa_prompts", s.kappa_prompts);
  r.get("kappa_images", s.kappa_images);
  r.get("inter_class_angle", s.inter_class_angle);
  r.get("llm_bias_angle", s.llm_bias_angle);
  r.get("modality_gap_angle", s.modality_gap_angle);
  r.get("vocab_size", s.vocab_size);
  r.get("prompts_per_class", s.prompts_per_class);
  r.get("images_per_class", s.images_per_class);
  r.get("seed", s.seed);
  r.finish();
  validate(s);
  return s;
}

inline json to_json(const WorldSpec& s) {
  return {
      {"dims", s.dims},
      {"classes", s.classes},
      {"kappa_vocab", s.kappa_vocab},
      {"kappa_prompts", s.kappa_prompts},
      {"kappa_images", s.kappa_images},
      {"inter_class_angle", s.inter_class_angle},
      {"llm_bias_angle", s.llm_bias_angle},
      {"modality_gap_angle", s.modality_gap_angle},
      {"vocab_size", s.vocab_size},
      {"prompts_per_class", s.prompts_per_class},
      {"images_per_class", s.images_per_class},
      {"seed", s.seed},
  };
}

inline json to_json(const VmfFit& fit, std::size_t n, double eps) {
  const auto mu = fit.params.mu.coords();
  return {
      {"mu", std::vector<double>(mu.begin(), mu.end())},
      {"kappa", fit.params.kappa},
      {"R", fit.resultant_length},
      {"d", fit.params.dims()},
      {"n", n},
      {"eps", eps},
  };
}

inline json to_json(const EvalResult& r) {
  return {
      {"accuracy_mean", r.accuracy_mean},
      {"accuracy_std", r.accuracy_std},
      {"trial_accuracies", r.trial_accuracies},
      {"per_class_accuracy", r.per_class_accuracy},
      {"confusion", r.confusion},
  };
}

inline EvalResult eval_result_from_json(const json& j) {
  EvalResult r;
  r.accuracy_mean = j.at("accuracy_mean").get<double>();
  r.accuracy_std = j.at("accuracy_std").get<double>();
  r.trial_accuracies = j.at("trial_accuracies").get<std::vector<double>>();
  r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
  r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
  return r;
}

inline std::string confusion_csv(const EvalResult& r) {
  std::string out = "true\\predicted";
  for (std::size_t j = 0; j < r.confusion.size(); ++j) out += "," + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    out += std::to_string(i);
    for (std::size_t v : r.confusion[i]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

inline json to_json(const TrainRecord& rec) {
  return {
      {"step", rec.step},
      {"lr", rec.lr},
      {"tau", rec.tau},
      {"loss", rec.loss.total},
      {"anchor", rec.loss.parts.anchor},
      {"contrastive", rec.loss.parts.contrastive},
      {"classification", rec.loss.parts.classification},
      {"batch_accuracy", rec.batch_accuracy},
  };
}

/// One JSON object per line, one line per step.
inline std::string report_jsonl(const TrainReport& rep) {
  std::string out;
  for (const TrainRecord& rec : rep.records) out += to_json(rec).dump() + "\n";
  return out;
}

/// Labeled-set sidecar: {"class_names": [...], "labels": [...], ...}.
struct LabelMeta {
  std::vector<std::string> class_names;
  std::vector<int> labels;
};

inline LabelMeta label_meta_from_json(const json& j, std::size_t rows) {
  require(j.is_object() && j.contains("labels"), ErrorKind::InvalidSpec, "label sidecar needs a \"labels\" array");
  LabelMeta m;
  try {
    m.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("class_names")) m.class_names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidSpec, std::string("label sidecar: ") + e.what());
  }
  require(m.labels.size() == rows, ErrorKind::InvalidSpec,
          "label sidecar has " + std::to_string(m.labels.size()) + " labels for " + std::to_string(rows) + " rows");
  const std::size_t c = class_count(m.labels);
  std::vector<bool> present(c, false);
  for (int y : m.labels) present[static_cast<std::size_t>(y)] = true;
  for (std::size_t k = 0; k < c; ++k)
    require(present[k], ErrorKind::InvalidSpec, "class indices are not dense: class " + std::to_string(k) + " is unused");
  require(m.class_names.empty() || m.class_names.size() >= c, ErrorKind::InvalidSpec, "fewer class names than classes");
  return m;
}

inline json to_json(const LabelMeta& m) { return {{"class_names", m.class_names}, {"labels", m.labels}}; }

inline json field_json(const VmfParams& p, std::optional<double> resultant) {
  const auto mu = p.mu.coords();
  json j = {{"mu", std::vector<double>(mu.begin(), mu.end())}, {"kappa", p.kappa}};
  j["R"] = resultant ? json(*resultant) : json(nullptr);
  return j;
}

inline VmfParams field_from_json(const json& j) {
  try {
    return VmfParams(UnitVector::from_direction(j.at("mu").get<std::vector<double>>()), j.at("kappa").get<double>());
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidSpec, std::string("field record: ") + e.what());
  }
}

/// Anchors EMBD plus its sidecar carrying the field parameters.
inline void write_anchor_set(const AnchorSet& a, const std::filesystem::path& path,
                             const std::vector<std::string>& class_names, std::optional<double> clip_r,
                             const std::vector<double>& class_r, double eps) {
  write_embd(a.anchors, path);
  json classes = json::array();
  for (std::size_t c = 0; c < a.classes(); ++c) {
    json f = field_json(a.class_fields[c], c < class_r.size() ? std::optional<double>(class_r[c]) : std::nullopt);
    f["class_index"] = c;
    if (c < class_names.size()) f["class_name"] = class_names[c];
    classes.push_back(std::move(f));
  }
  write_json(sidecar_path(path), {{"kind", "anchors"},
                                  {"class_names", class_names},
                                  {"eps", eps},
                                  {"clip_field", field_json(a.clip_field, clip_r)},
                                  {"class_fields", classes}});
}

inline AnchorSet read_anchor_set(const std::filesystem::path& path) {
  EmbeddingMatrix rows = read_embd(path);
  require(rows.normalized(), ErrorKind::InvalidSpec, path.string() + ": anchors must be flagged normalized");
  const json meta = read_json(sidecar_path(path));
  require(meta.contains("clip_field") && meta.contains("class_fields"), ErrorKind::InvalidSpec,
          sidecar_path(path).string() + ": missing field parameters");
  std::vector<VmfParams> fields;
  for (const json& f : meta.at("class_fields")) fields.push_back(field_from_json(f));
  require(fields.size() == rows.rows(), ErrorKind::InvalidSpec, "anchor sidecar lists a different class count");
  return {field_from_json(meta.at("clip_field")), std::move(fields), std::move(rows)};
}

/// Writes "method,k<K>_mean,k<K>_std,..." with full-precision fractions.
inline std::string episodes_csv(const std::vector<std::string>& methods, const std::vector<std::size_t>& shots,
                                const std::vector<std::vector<EvalResult>>& cells) {
  std::string out = "method";
  for (std::size_t k : shots) out += ",k" + std::to_string(k) + "_mean,k" + std::to_string(k) + "_std";
  out += "\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    out += methods[m];
    for (const EvalResult& r : cells[m]) out += "," + format_double(r.accuracy_mean) + "," + format_double(r.accuracy_std);
    out += "\n";
  }
  return out;
}

inline std::string ablation_csv(const AblationTable& t) {
  std::string out = "config,sce,anc,sc";
  for (std::size_t k : t.shots) out += ",k" + std::to_string(k);
  out += "\n";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const LossConfig& row = t.rows[r];
    out += row.name + "," + (row.symmetric ? "1" : "0") + "," + (row.anchor ? "1" : "0") + "," +
           (row.contrastive ? "1" : "0");
    for (double a : t.accuracy[r]) out += "," + format_double(a);
    out += "\n";
  }
  return out;
}

/// Minimal CSV reader for the files written above (no quoting needed).
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::vector<std::string> cells;
    std::size_t start = pos;
    for (std::size_t i = pos; i <= eol; ++i) {
      if (i == eol || text[i] == ',') {
        cells.emplace_back(text.substr(start, i - start));
        start = i + 1;
      }
    }
    rows.push_back(std::move(cells));
    pos = eol + 1;
  }
  return rows;
}

}  // namespace vmfcoop::io
