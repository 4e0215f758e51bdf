#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "fspnet/config.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FSPNET_CLI_PATH) + " " + args +
                          " > cli_out.txt 2> cli_err.txt";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const char* kToyConfig =
    "image_h = 32\nimage_w = 32\nembed_dim = 8\nnum_heads = 2\n"
    "n_vertices = 4\ndecoder_width = 8\nseed = 7\nepochs = 2\n"
    "batch_size = 2\nlearning_rate = 0.001\n";

}  // namespace

TEST_CASE("schedule --dump prints the wiring table") {
  REQUIRE(run_cli("schedule --dump") == 0);
  const std::string out = slurp("cli_out.txt");
  CHECK(out.find("12 AIMs") != std::string::npos);
  CHECK(out.find("[6, 3, 2, 1]") != std::string::npos);
  CHECK(out.find("lateral P3") != std::string::npos);
}

TEST_CASE("bad flags exit with the config-error code") {
  CHECK(run_cli("schedule --bogus-flag") == 2);
  CHECK(run_cli("train --config nowhere.cfg") != 0);
}

TEST_CASE("gen rejects indivisible sizes with the config-error code") {
  TempDir dir("cli_gen_bad");
  CHECK(run_cli("gen --count 1 --size 50 --seed 1 --out " +
                (dir.path / "d").string()) == 2);
}

TEST_CASE("gen / train / predict / eval pipeline") {
  TempDir dir("cli_pipe");
  const std::string data_dir = (dir.path / "data").string();
  const std::string run_dir = (dir.path / "run").string();
  const std::string cfg_path = (dir.path / "toy.cfg").string();
  {
    std::ofstream cfg(cfg_path);
    cfg << kToyConfig;
  }

  REQUIRE(run_cli("gen --count 4 --size 32 --seed 7 --out " + data_dir) == 0);
  CHECK(fs::exists(fs::path(data_dir) / "image_0000.png"));
  CHECK(fs::exists(fs::path(data_dir) / "mask_0003.png"));

  REQUIRE(run_cli("train --config " + cfg_path + " --data " + data_dir +
                  " --out " + run_dir + " --quiet") == 0);
  const std::string ckpt = (fs::path(run_dir) / "checkpoint_final.ckpt").string();
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(fs::path(run_dir) / "loss_trace.csv"));

  const std::string pred_dir = (dir.path / "preds").string();
  REQUIRE(run_cli("predict --ckpt " + ckpt + " --images " + data_dir +
                  " --out " + pred_dir + " --dump-laterals") == 0);
  CHECK(fs::exists(fs::path(pred_dir) / "pred_image_0000.png"));
  CHECK(fs::exists(fs::path(pred_dir) / "pred_image_0000_p0.png"));
  CHECK(fs::exists(fs::path(pred_dir) / "pred_image_0000_p2.png"));

  // Predictions are byte-deterministic.
  const std::string pred_dir2 = (dir.path / "preds2").string();
  REQUIRE(run_cli("predict --ckpt " + ckpt + " --images " + data_dir +
                  " --out " + pred_dir2) == 0);
  std::ifstream a(fs::path(pred_dir) / "pred_image_0001.png", std::ios::binary);
  std::ifstream b(fs::path(pred_dir2) / "pred_image_0001.png", std::ios::binary);
  std::vector<char> ba((std::istreambuf_iterator<char>(a)), {});
  std::vector<char> bb((std::istreambuf_iterator<char>(b)), {});
  CHECK(ba == bb);

  const std::string report = (dir.path / "report.csv").string();
  REQUIRE(run_cli("eval --ckpt " + ckpt + " --data " + data_dir + " --report " +
                  report) == 0);
  CHECK(fs::exists(report));
  CHECK(fs::exists((dir.path / "report.json").string()));
  const std::string csv = slurp(report);
  CHECK(csv.find("AGGREGATE") != std::string::npos);
  CHECK(csv.find("image_0000") != std::string::npos);

  // Re-running eval reproduces the report byte for byte.
  const std::string report2 = (dir.path / "report2.csv").string();
  REQUIRE(run_cli("eval --ckpt " + ckpt + " --data " + data_dir + " --report " +
                  report2) == 0);
  CHECK(slurp(report2) == csv);
}

TEST_CASE("predict with mismatched image size exits with the data-error code") {
  TempDir dir("cli_mismatch");
  const std::string data32 = (dir.path / "d32").string();
  const std::string data64 = (dir.path / "d64").string();
  const std::string run_dir = (dir.path / "run").string();
  const std::string cfg_path = (dir.path / "toy.cfg").string();
  {
    std::ofstream cfg(cfg_path);
    cfg << kToyConfig;
  }
  REQUIRE(run_cli("gen --count 1 --size 32 --seed 3 --out " + data32) == 0);
  REQUIRE(run_cli("gen --count 1 --size 64 --seed 3 --out " + data64) == 0);
  REQUIRE(run_cli("train --config " + cfg_path + " --data " + data32 +
                  " --out " + run_dir + " --quiet") == 0);
  const std::string ckpt = (fs::path(run_dir) / "checkpoint_final.ckpt").string();
  CHECK(run_cli("predict --ckpt " + ckpt + " --images " + data64 + " --out " +
                (dir.path / "p").string()) == 3);
  CHECK(run_cli("eval --ckpt " + ckpt + " --data nowhere --report r.csv") == 3);
}
