// End-to-end checks of the command-line driver: every subcommand is exercised
// through a real process, and artifacts are compared byte-for-byte where
// determinism is promised.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pmx/io.hpp"
#include "pmx/mixer.hpp"
#include "pmx/reports.hpp"

using namespace pmx;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

const char* cli_path() { return PMX_CLI_PATH; }

CliResult run_cli(const std::string& args, const fs::path& workdir) {
  const fs::path log = workdir / "cli_output.log";
  const std::string cmd = "cd '" + workdir.string() + "' && '" + cli_path() +
                          "' " + args + " > '" + log.string() + "' 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  res.output = ss.str();
  return res;
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("pmx_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

// Drops the trailing comma-separated field of every row; used to compare
// crossval outputs whose final column is wall-clock time.
std::string strip_last_column(const std::string& csv) {
  std::string out;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    const auto cut = line.rfind(',');
    out += (cut == std::string::npos ? line : line.substr(0, cut)) + "\n";
  }
  return out;
}

// Small corpus + reduction shared by the training-related cases.
const std::string kGenFlags =
    "gen-synthetic --out corpus --bags 18 --classes 3 --domains 1 --n 12 "
    "--min-patches 16 --max-patches 24 --seed 11";
const std::string kTinyModel =
    "--blocks 1 --token-hidden 6 --channel-hidden 8 --domain-hidden 4";

void make_reduced(const fs::path& dir) {
  REQUIRE(run_cli(kGenFlags, dir).exit_code == 0);
  REQUIRE(run_cli("reduce --manifest corpus/manifest.tsv --k 3 --seed 1 --out red",
                  dir).exit_code == 0);
}

}  // namespace

TEST_CASE("gen-synthetic writes the requested corpus deterministically") {
  const fs::path dir = fresh_dir("gen");
  REQUIRE(run_cli(kGenFlags, dir).exit_code == 0);

  std::size_t bag_files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "corpus" / "bags")) {
    if (entry.path().extension() == ".pmb") ++bag_files;
  }
  CHECK(bag_files == 18);
  CHECK(fs::exists(dir / "corpus" / "ground_truth.tsv"));
  const std::string record = slurp(dir / "corpus" / "record.txt");
  CHECK(record.find("seed: 11") != std::string::npos);

  // Identical flags must give an identical corpus, hash and all.
  const fs::path dir2 = fresh_dir("gen2");
  REQUIRE(run_cli(kGenFlags, dir2).exit_code == 0);
  CHECK(hash_dataset(dir / "corpus" / "manifest.tsv") ==
        hash_dataset(dir2 / "corpus" / "manifest.tsv"));
  CHECK(slurp(dir / "corpus" / "manifest.tsv") ==
        slurp(dir2 / "corpus" / "manifest.tsv"));
}

TEST_CASE("missing required flags exit with code 2") {
  const fs::path dir = fresh_dir("usage");
  CHECK(run_cli("reduce --manifest x.tsv --out y", dir).exit_code == 2);
  CHECK(run_cli("train --out y", dir).exit_code == 2);
  CHECK(run_cli("definitely-not-a-command", dir).exit_code == 2);
  CHECK(run_cli("--help", dir).exit_code == 0);
}

TEST_CASE("reduce emits prototype tables plus a per-bag report") {
  const fs::path dir = fresh_dir("reduce");
  make_reduced(dir);

  LoadedDataset ds = load_dataset(dir / "red" / "manifest.tsv");
  REQUIRE(ds.is_prototype());
  REQUIRE(ds.prototypes.size() == 18);
  for (const auto& bag : ds.prototypes) {
    CHECK(bag.prototypes.rows() == 3);
    CHECK(bag.prototypes.cols() == 12);
  }
  const std::string report = slurp(dir / "red" / "report.csv");
  CHECK(count_lines(report) == 19);  // header + one row per bag
  CHECK(report.rfind("slide_id,instances,k,inertia,iterations,degenerate,note",
                     0) == 0);
}

TEST_CASE("train writes its artifacts and reruns byte-identically") {
  const fs::path dir = fresh_dir("train");
  make_reduced(dir);
  const std::string flags = "train --manifest red/manifest.tsv " + kTinyModel +
                            " --epochs 8 --lr 0.01";
  REQUIRE(run_cli(flags + " --seed 3 --out run_a", dir).exit_code == 0);
  REQUIRE(run_cli(flags + " --seed 3 --out run_b", dir).exit_code == 0);

  CHECK(slurp(dir / "run_a" / "checkpoint.pmx") ==
        slurp(dir / "run_b" / "checkpoint.pmx"));
  CHECK(slurp(dir / "run_a" / "losses.csv") == slurp(dir / "run_b" / "losses.csv"));
  CHECK(slurp(dir / "run_a" / "metrics.csv") ==
        slurp(dir / "run_b" / "metrics.csv"));
  CHECK(count_lines(slurp(dir / "run_a" / "losses.csv")) == 9);

  // A different seed must actually change the outcome.
  REQUIRE(run_cli(flags + " --seed 4 --out run_c", dir).exit_code == 0);
  CHECK(slurp(dir / "run_a" / "checkpoint.pmx") !=
        slurp(dir / "run_c" / "checkpoint.pmx"));
}

TEST_CASE("eval on the training set reproduces the training metrics") {
  const fs::path dir = fresh_dir("eval");
  make_reduced(dir);
  REQUIRE(run_cli("train --manifest red/manifest.tsv " + kTinyModel +
                      " --epochs 8 --lr 0.01 --seed 3 --out run",
                  dir).exit_code == 0);
  REQUIRE(run_cli("eval --checkpoint run/checkpoint.pmx "
                  "--manifest red/manifest.tsv --out ev",
                  dir).exit_code == 0);
  CHECK(slurp(dir / "ev" / "metrics.csv") == slurp(dir / "run" / "metrics.csv"));
}

TEST_CASE("crossval is deterministic and independent of the job count") {
  const fs::path dir = fresh_dir("crossval");
  make_reduced(dir);
  const std::string flags = "crossval --manifest red/manifest.tsv " + kTinyModel +
                            " --epochs 4 --lr 0.01 --folds 3 --repeats 2 --seed 5";
  REQUIRE(run_cli(flags + " --jobs 1 --out cv1", dir).exit_code == 0);
  REQUIRE(run_cli(flags + " --jobs 4 --out cv4", dir).exit_code == 0);

  const std::string csv1 = slurp(dir / "cv1" / "metrics.csv");
  CHECK(strip_last_column(csv1) ==
        strip_last_column(slurp(dir / "cv4" / "metrics.csv")));
  CHECK(count_lines(csv1) == 7);  // header + 3 folds x 2 repeats
}

TEST_CASE("profile output matches the closed-form parameter count") {
  const fs::path dir = fresh_dir("profile");
  make_reduced(dir);
  REQUIRE(run_cli("train --manifest red/manifest.tsv " + kTinyModel +
                      " --epochs 2 --seed 0 --profile --out run",
                  dir).exit_code == 0);

  MixerConfig cfg;
  cfg.tokens = 3;
  cfg.channels = 12;
  cfg.token_hidden = 6;
  cfg.channel_hidden = 8;
  cfg.blocks = 1;
  cfg.num_classes = 3;
  cfg.num_domains = 1;
  cfg.domain_hidden = 4;
  const std::string expect = "param_count: " + std::to_string(param_count(cfg));
  const std::string profile = slurp(dir / "run" / "profile.txt");
  CHECK(profile.find(expect) != std::string::npos);
  CHECK(profile.find("forward_flops") != std::string::npos);
  CHECK(profile.find("peak_resident_bytes") != std::string::npos);
}

TEST_CASE("config files supply defaults and explicit flags win") {
  const fs::path dir = fresh_dir("config");
  make_reduced(dir);
  {
    std::ofstream cfg(dir / "train.cfg");
    cfg << "# defaults for the tiny training run\n"
        << "manifest=red/manifest.tsv\n"
        << "blocks=1\ntoken-hidden=6\nchannel-hidden=8\ndomain-hidden=4\n"
        << "epochs=8\nlr=0.01\nseed=3\nout=run_cfg\n";
  }
  REQUIRE(run_cli("train --config train.cfg", dir).exit_code == 0);
  REQUIRE(run_cli("train --manifest red/manifest.tsv " + kTinyModel +
                      " --epochs 8 --lr 0.01 --seed 3 --out run_flag",
                  dir).exit_code == 0);
  CHECK(slurp(dir / "run_cfg" / "checkpoint.pmx") ==
        slurp(dir / "run_flag" / "checkpoint.pmx"));

  // Explicit --seed beats the file's seed=3.
  REQUIRE(run_cli("train --config train.cfg --seed 9 --out run_override", dir)
              .exit_code == 0);
  CHECK(slurp(dir / "run_override" / "checkpoint.pmx") !=
        slurp(dir / "run_cfg" / "checkpoint.pmx"));
  const std::string record = slurp(dir / "run_override" / "record.txt");
  CHECK(record.find("train.seed = 9") != std::string::npos);

  CHECK(run_cli("train --config nope.cfg", dir).exit_code == 2);
}

TEST_CASE("sweep-k reduces and scores every k in the list") {
  const fs::path dir = fresh_dir("sweep");
  REQUIRE(run_cli("gen-synthetic --out corpus --bags 12 --classes 2 --n 8 "
                  "--min-patches 18 --max-patches 24 --seed 2",
                  dir).exit_code == 0);
  REQUIRE(run_cli("sweep-k --manifest corpus/manifest.tsv --out sw " +
                      kTinyModel +
                      " --epochs 2 --folds 2 --jobs 4 --seed 1",
                  dir).exit_code == 0);

  const std::string csv = slurp(dir / "sw" / "sweep.csv");
  CHECK(count_lines(csv) == 10);  // header + default list 1,2,4,5,6,8,10,12,16
  CHECK(csv.find("\n1,") != std::string::npos);
  CHECK(csv.find("\n16,") != std::string::npos);
  CHECK(fs::exists(dir / "sw" / "k_16" / "manifest.tsv"));
}

TEST_CASE("failure modes map to the documented exit codes") {
  const fs::path dir = fresh_dir("failures");
  make_reduced(dir);

  // Missing input file: data error.
  CHECK(run_cli("eval --checkpoint nope.pmx --manifest red/manifest.tsv", dir)
            .exit_code == 3);
  // Raw embeddings where prototypes are required: data error.
  CHECK(run_cli("train --manifest corpus/manifest.tsv --out x " + kTinyModel,
                dir).exit_code == 3);
  // Invalid hyperparameter: usage error.
  CHECK(run_cli("train --manifest red/manifest.tsv --out x --dropout 1.5", dir)
            .exit_code == 2);

  // Checkpoint whose shape disagrees with the dataset: dimension error.
  REQUIRE(run_cli("reduce --manifest corpus/manifest.tsv --k 2 --seed 1 "
                  "--out red2",
                  dir).exit_code == 0);
  REQUIRE(run_cli("train --manifest red/manifest.tsv " + kTinyModel +
                      " --epochs 1 --seed 0 --out run",
                  dir).exit_code == 0);
  const CliResult mism = run_cli(
      "eval --checkpoint run/checkpoint.pmx --manifest red2/manifest.tsv", dir);
  CHECK(mism.exit_code == 2);
  CHECK(mism.output.find("checkpoint expects") != std::string::npos);

  // Corrupt checkpoint: format error.
  {
    std::ofstream bad(dir / "bad.pmx", std::ios::binary);
    bad << "NOTAMODEL";
  }
  CHECK(run_cli("eval --checkpoint bad.pmx --manifest red/manifest.tsv", dir)
            .exit_code == 3);
}
