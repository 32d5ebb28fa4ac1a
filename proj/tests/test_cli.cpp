#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* env = std::getenv("SDRGNN_CLI");
  if (!env) throw std::runtime_error("SDRGNN_CLI not set; run through ctest");
  return env;
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "sdrgnn-cli-test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args, std::string* output = nullptr) {
  const fs::path log = work_dir() / "last-output.txt";
  const std::string cmd = cli_path() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WEXITSTATUS(status);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kTinySynth = "convs=4,val=2,test=2,utts=6,classes=3,dims=4x4x4,speakers=2,signal=4";

}  // namespace

TEST(CliSynth, WritesSplitsAndManifest) {
  const fs::path dir = work_dir() / "synth-a";
  ASSERT_EQ(run("synth --synth " + kTinySynth + " --seed 5 --out " + dir.string()), 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
}

TEST(CliSynth, SameSeedProducesByteIdenticalFiles) {
  const fs::path a = work_dir() / "synth-b1";
  const fs::path b = work_dir() / "synth-b2";
  ASSERT_EQ(run("synth --synth " + kTinySynth + " --seed 9 --out " + a.string()), 0);
  ASSERT_EQ(run("synth --synth " + kTinySynth + " --seed 9 --out " + b.string()), 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
}

TEST(CliSynth, ZeroUtterancesIsConfigError) {
  EXPECT_EQ(run("synth --synth convs=2,utts=0 --out " + (work_dir() / "synth-bad").string()), 2);
}

TEST(CliTrain, TinyRunEmitsMetricsAndArtifacts) {
  const fs::path dir = work_dir() / "train-a";
  std::string out;
  ASSERT_EQ(run("train --synth " + kTinySynth +
                " --missing-rate 0.0 --epochs 3 --hidden 6 --window 1 --heads 2"
                " --seed 3 --out " + dir.string(), &out), 0)
      << out;
  EXPECT_NE(out.find("WAF1"), std::string::npos);
  for (const char* f : {"config.json", "masks.json", "record.csv", "checkpoint.bin",
                        "metrics.txt", "metrics.csv", "confusion.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const std::string metrics = read_file(dir / "metrics.csv");
  EXPECT_NE(metrics.find("waf1,"), std::string::npos);
}

TEST(CliTrain, RepeatsAggregateAcrossSeeds) {
  const fs::path dir = work_dir() / "train-rep";
  std::string out;
  ASSERT_EQ(run("train --synth " + kTinySynth +
                " --missing-rate 0.2 --epochs 2 --hidden 4 --window 1 --heads 2"
                " --seed 3 --repeats 3 --out " + dir.string(), &out), 0)
      << out;
  EXPECT_TRUE(fs::exists(dir / "aggregate.csv"));
  EXPECT_NE(out.find("aggregate over 3 seeds"), std::string::npos);
  for (int s = 3; s <= 5; ++s)
    EXPECT_TRUE(fs::exists(dir / ("seed-" + std::to_string(s)) / "metrics.csv"));
}

TEST(CliTrain, ExcessiveMissingRateIsDataError) {
  std::string out;
  EXPECT_EQ(run("train --synth " + kTinySynth + " --missing-rate 0.8 --epochs 1 --out " +
                (work_dir() / "train-bad").string(), &out), 3)
      << out;
  EXPECT_NE(out.find("(Mods-1)/Mods"), std::string::npos);
}

TEST(CliTrain, MissingDataSourceIsConfigError) {
  EXPECT_EQ(run("train --epochs 1 --out " + (work_dir() / "train-nosrc").string()), 2);
}

TEST(CliTrain, LowerBoundModeRuns) {
  const fs::path dir = work_dir() / "train-lb";
  std::string out;
  ASSERT_EQ(run("train --synth " + kTinySynth +
                " --missing-rate 0.3 --epochs 2 --hidden 4 --window 1 --heads 2"
                " --lower-bound --rec-scope masked --dropout 0.2 --loss-weight 0.3"
                " --seed 3 --out " + dir.string(), &out), 0)
      << out;
  EXPECT_TRUE(fs::exists(dir / "metrics.csv"));
  const std::string config = read_file(dir / "config.json");
  EXPECT_NE(config.find("\"rec_scope\": \"masked\""), std::string::npos);
  EXPECT_NE(config.find("\"lower_bound\": true"), std::string::npos);
}

TEST(CliSweep, GridWithAblationRows) {
  const fs::path dir = work_dir() / "sweep-a";
  std::string out;
  ASSERT_EQ(run("sweep --synth " + kTinySynth +
                " --sweep 0.0,0.7 --epochs 2 --hidden 4 --window 1 --heads 2"
                " --ablate sp --seed 3 --out " + dir.string(), &out), 0)
      << out;
  const std::string grid = read_file(dir / "sweep.csv");
  EXPECT_NE(grid.find("SDR-GNN"), std::string::npos);
  EXPECT_NE(grid.find("w/o Sp"), std::string::npos);
  EXPECT_NE(grid.find("average"), std::string::npos);
  std::istringstream lines(grid);
  std::string header;
  std::getline(lines, header);
  EXPECT_EQ(header, "method,0,0.7,average");
}

TEST(CliSweep, EmptyRateListIsConfigError) {
  EXPECT_EQ(run("sweep --synth " + kTinySynth + " --epochs 1 --out " +
                (work_dir() / "sweep-bad").string()), 2);
}

TEST(CliEval, CheckpointRoundTripAndClassMismatch) {
  const fs::path train_dir = work_dir() / "eval-train";
  ASSERT_EQ(run("train --synth " + kTinySynth +
                " --missing-rate 0.2 --epochs 2 --hidden 4 --window 1 --heads 2"
                " --seed 11 --out " + train_dir.string()), 0);

  const fs::path eval1 = work_dir() / "eval-1";
  const fs::path eval2 = work_dir() / "eval-2";
  const std::string eval_args = "eval --checkpoint " + (train_dir / "checkpoint.bin").string() +
                                " --synth " + kTinySynth + " --missing-rate 0.2 --seed 11 --out ";
  ASSERT_EQ(run(eval_args + eval1.string()), 0);
  ASSERT_EQ(run(eval_args + eval2.string()), 0);
  EXPECT_EQ(read_file(eval1 / "metrics.csv"), read_file(eval2 / "metrics.csv"));

  // Same checkpoint against a dataset with a different class count.
  std::string out;
  EXPECT_EQ(run("eval --checkpoint " + (train_dir / "checkpoint.bin").string() +
                " --synth convs=4,val=2,test=2,utts=6,classes=4,dims=4x4x4 --seed 11 --out " +
                (work_dir() / "eval-bad").string(), &out), 2)
      << out;
  EXPECT_NE(out.find("3"), std::string::npos);  // expected classes
  EXPECT_NE(out.find("4"), std::string::npos);  // found classes
}

TEST(CliExportGraph, WritesEdgeList) {
  const fs::path out_file = work_dir() / "graph.txt";
  ASSERT_EQ(run("export-graph --synth " + kTinySynth + " --window 2 --seed 4 --conv 0 --out " +
                out_file.string()), 0);
  const std::string text = read_file(out_file);
  EXPECT_NE(text.find("# edges"), std::string::npos);
  EXPECT_NE(text.find("# hyperedges"), std::string::npos);
}

TEST(CliGradcheck, PassesCleanAndFailsWhenCorrupted) {
  std::string out;
  EXPECT_EQ(run("gradcheck", &out), 0) << out;
  EXPECT_NE(out.find("gradient check passed"), std::string::npos);

  std::string corrupted;
  EXPECT_EQ(run("gradcheck --corrupt gate", &corrupted), 4) << corrupted;
  EXPECT_NE(corrupted.find("FAIL"), std::string::npos);
  EXPECT_NE(corrupted.find("gate"), std::string::npos);

  std::string strict;
  EXPECT_EQ(run("gradcheck --tolerance 1e-10", &strict), 4) << strict;
}
