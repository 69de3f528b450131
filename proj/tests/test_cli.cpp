#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "test_util.hpp"

using namespace vmfcoop;
namespace fs = std::filesystem;
using io::json;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "vmfcoop");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const char* kWorld = R"({"dims": 16, "classes": 3, "images_per_class": 30, "prompts_per_class": 20,
                         "vocab_size": 200, "llm_bias_angle": 10, "seed": 5})";

fs::path make_world(const std::string& name) {
  const fs::path dir = test::scratch_dir(name);
  write_file(dir / "world.json", kWorld);
  EXPECT_EQ(run({"synth", "--world", (dir / "world.json").string(), "--out", (dir / "w").string()}), 0);
  return dir;
}

}  // namespace

TEST(Cli, FullPipeline) {
  const fs::path dir = make_world("cli_pipeline");
  const fs::path w = dir / "w";
  ASSERT_TRUE(fs::exists(w / "images.embd"));
  ASSERT_TRUE(fs::exists(w / "images.embd.json"));
  ASSERT_TRUE(fs::exists(w / "prompts" / "class_002.embd"));

  ASSERT_EQ(run({"fit-vmf", "--input", (w / "vocab.embd").string(), "--out", (dir / "vocab_fit.json").string()}), 0);
  const json fit = io::read_json(dir / "vocab_fit.json");
  EXPECT_EQ(fit.at("n"), 200);
  EXPECT_EQ(fit.at("d"), 16);
  EXPECT_GT(fit.at("kappa").get<double>(), 0.0);

  ASSERT_EQ(run({"anchors", "--vocab", (w / "vocab.embd").string(), "--prompts", (w / "prompts").string(), "--out",
                 (dir / "anchors.embd").string()}),
            0);
  const AnchorSet anchors = io::read_anchor_set(dir / "anchors.embd");
  EXPECT_EQ(anchors.classes(), 3u);

  write_file(dir / "config.json", R"({"total_steps": 60, "seed": 3})");
  ASSERT_EQ(run({"train", "--images", (w / "images.embd").string(), "--labels", (w / "images.embd.json").string(),
                 "--anchors", (dir / "anchors.embd").string(), "--config", (dir / "config.json").string(), "--out",
                 (dir / "run").string()}),
            0);
  for (const char* f : {"config.json", "report.jsonl", "prompts.embd", "offsets.embd", "state.json"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  std::istringstream lines(slurp(dir / "run" / "report.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const json rec = json::parse(line);
    EXPECT_EQ(rec.at("step"), n);
    ++n;
  }
  EXPECT_EQ(n, 60u);

  ASSERT_EQ(run({"eval", "--images", (w / "images.embd").string(), "--labels", (w / "images.embd.json").string(),
                 "--prompts", (dir / "run" / "prompts.embd").string(), "--out", (dir / "eval").string()}),
            0);
  const json ev = io::read_json(dir / "eval" / "eval.json");
  EXPECT_GT(ev.at("accuracy_mean").get<double>(), 0.5);
  EXPECT_TRUE(fs::exists(dir / "eval" / "confusion.csv"));
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  const fs::path dir = make_world("cli_repeat");
  const fs::path w = dir / "w";
  const std::string images = slurp(w / "images.embd");
  ASSERT_EQ(run({"synth", "--world", (dir / "world.json").string(), "--out", (dir / "w2").string()}), 0);
  EXPECT_EQ(slurp(dir / "w2" / "images.embd"), images);
  EXPECT_EQ(slurp(dir / "w2" / "vocab.embd"), slurp(w / "vocab.embd"));

  ASSERT_EQ(run({"anchors", "--vocab", (w / "vocab.embd").string(), "--prompts", (w / "prompts").string(), "--out",
                 (dir / "anchors.embd").string()}),
            0);
  write_file(dir / "config.json", R"({"total_steps": 40})");
  for (const char* out : {"a", "b"})
    ASSERT_EQ(run({"train", "--images", (w / "images.embd").string(), "--labels", (w / "images.embd.json").string(),
                   "--anchors", (dir / "anchors.embd").string(), "--config", (dir / "config.json").string(), "--out",
                   (dir / out).string()}),
              0);
  for (const char* f : {"report.jsonl", "prompts.embd", "offsets.embd", "state.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(Cli, EpisodesCsvDeterministic) {
  const fs::path dir = make_world("cli_episodes");
  write_file(dir / "spec.json", std::string(R"({"world": )") + kWorld +
                                    R"(, "shots": [1, 2], "trials": 3, "seed": 11,
                                       "methods": ["zero-shot", "sce+anc+sc"], "config": {"total_steps": 30}})");
  ASSERT_EQ(run({"episodes", "--spec", (dir / "spec.json").string(), "--out", (dir / "a.csv").string()}), 0);
  ASSERT_EQ(run({"episodes", "--spec", (dir / "spec.json").string(), "--out", (dir / "b.csv").string()}), 0);
  const std::string a = slurp(dir / "a.csv");
  EXPECT_EQ(a, slurp(dir / "b.csv"));
  const auto rows = io::parse_csv(a);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"method", "k1_mean", "k1_std", "k2_mean", "k2_std"}));
  EXPECT_EQ(rows[1][0], "zero-shot");
}

TEST(Cli, AblateWritesTable) {
  const fs::path dir = test::scratch_dir("cli_ablate");
  write_file(dir / "world.json", kWorld);
  write_file(dir / "config.json", R"({"total_steps": 20})");
  ASSERT_EQ(run({"ablate", "--world", (dir / "world.json").string(), "--config", (dir / "config.json").string(),
                 "--shots", "1,2", "--trials", "1", "--out", (dir / "ablation.csv").string()}),
            0);
  const auto rows = io::parse_csv(slurp(dir / "ablation.csv"));
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0].size(), 6u);
  for (const char* bad : {"", "1,x", "4\n16"})
    EXPECT_EQ(run({"ablate", "--world", (dir / "world.json").string(), "--shots", bad, "--out",
                   (dir / "bad.csv").string()}),
              1)
        << bad;
}

TEST(Cli, GradcheckDefaultsPass) {
  const fs::path dir = test::scratch_dir("cli_gradcheck");
  EXPECT_EQ(run({"gradcheck", "--out", (dir / "gc.json").string()}), 0);
  EXPECT_TRUE(fs::exists(dir / "gc.json"));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = test::scratch_dir("cli_exit");
  io::write_embd(EmbeddingMatrix::from_rows({{1, 0}, {-1, 0}}, true), dir / "antipodal.embd");
  EXPECT_EQ(run({"fit-vmf", "--input", (dir / "antipodal.embd").string(), "--out", (dir / "f.json").string()}), 1);
  EXPECT_FALSE(fs::exists(dir / "f.json"));
  EXPECT_EQ(run({"fit-vmf", "--input", (dir / "absent.embd").string(), "--out", (dir / "f.json").string()}), 2);
  write_file(dir / "junk.embd", "JUNKJUNKJUNKJUNKJUNKJUNKJUNK");
  EXPECT_EQ(run({"fit-vmf", "--input", (dir / "junk.embd").string(), "--out", (dir / "f.json").string()}), 2);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"train", "--images"}), 1);
  write_file(dir / "world.json", R"({"dims": 2, "classes": 3})");
  EXPECT_EQ(run({"synth", "--world", (dir / "world.json").string(), "--out", (dir / "w").string()}), 1);
}

TEST(Cli, DegenerateMeanMessage) {
  const fs::path dir = test::scratch_dir("cli_message");
  io::write_embd(EmbeddingMatrix::from_rows({{0, 1}, {0, -1}}, true), dir / "x.embd");
  testing::internal::CaptureStderr();
  const int code = run({"fit-vmf", "--input", (dir / "x.embd").string(), "--out", (dir / "f.json").string()});
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 1);
  EXPECT_NE(err.find("DegenerateMean"), std::string::npos) << err;
}
