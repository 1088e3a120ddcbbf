// Drives the installed `gks` binary end to end through a shell, checking
// exit codes, streams, and on-disk artifacts. The binary path arrives via
// the GKS_CLI_PATH compile definition.
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "gks/image.hpp"
#include "test_util.hpp"

#ifndef GKS_CLI_PATH
#error "GKS_CLI_PATH must point at the gks executable"
#endif

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out, err;
};

// Runs `gks <args>` with streams captured to files inside `dir`.
CliResult run_cli(const testutil::TempDir& dir, const std::string& args) {
  const std::string out_path = dir.file("cli_stdout.txt");
  const std::string err_path = dir.file("cli_stderr.txt");
  const std::string command = std::string("\"") + GKS_CLI_PATH + "\" " + args +
                              " >\"" + out_path + "\" 2>\"" + err_path + "\"";
  const int status = std::system(command.c_str());
  CliResult r;
  r.code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  r.out = testutil::read_bytes(out_path);
  r.err = testutil::read_bytes(err_path);
  return r;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::string current;
  for (char ch : text) {
    if (ch == '\n') {
      lines.push_back(current);
      current.clear();
    } else {
      current += ch;
    }
  }
  if (!current.empty()) lines.push_back(current);
  return lines;
}

// Writes the tiny shared experiment config pointing at pre-generated scenes.
std::string write_tiny_config(const testutil::TempDir& dir,
                              const std::string& src_dir,
                              const std::string& tgt_dir,
                              const std::string& out_dir) {
  const std::string cfg = dir.file("run.json");
  const std::string text = std::string("{\n") +
      "  \"source\": {\"img1\": \"" + src_dir + "/img1.pgm\"," +
      " \"img2\": \"" + src_dir + "/img2.pgm\"," +
      " \"ground_truth\": \"" + src_dir + "/ground_truth.pgm\"},\n" +
      "  \"target\": {\"img1\": \"" + tgt_dir + "/img1.pgm\"," +
      " \"img2\": \"" + tgt_dir + "/img2.pgm\"," +
      " \"ground_truth\": \"" + tgt_dir + "/ground_truth.pgm\"},\n" +
      "  \"model\": {\"patch_side\": 3, \"channels\": 4, \"graph_dim\": 4,\n" +
      "            \"graph_layers\": 1, \"hidden\": 6},\n" +
      "  \"train\": {\"epochs\": 1, \"batch_size\": 16, \"seed\": 11},\n" +
      "  \"sample_ratio\": 0.05,\n" +
      "  \"support_size\": 8,\n" +
      "  \"out_dir\": \"" + out_dir + "\"\n" +
      "}\n";
  testutil::write_text(cfg, text);
  return cfg;
}

// Generates a 32x32 synthetic pair under `name/` and returns that directory.
std::string gen_scene(const testutil::TempDir& dir, const std::string& name,
                      int seed) {
  const std::string out = dir.file(name);
  const CliResult r = run_cli(
      dir, "gen-synth --height 32 --width 32 --regions 3 --seed " +
               std::to_string(seed) + " --out \"" + out + "\"");
  REQUIRE(r.code == 0);
  return out;
}

}  // namespace

TEST_CASE("cli help and argument errors") {
  testutil::TempDir dir;

  const CliResult help = run_cli(dir, "--help");
  CHECK(help.code == 0);
  for (const char* name : {"gen-synth", "preclassify", "train", "predict",
                           "evaluate", "sweep", "ablate", "combine"}) {
    CAPTURE(name);
    CHECK(help.out.find(name) != std::string::npos);
  }

  CHECK(run_cli(dir, "").code != 0);            // a subcommand is required
  CHECK(run_cli(dir, "transmogrify").code != 0);
  const CliResult missing = run_cli(dir, "predict");
  CHECK(missing.code != 0);  // --checkpoint is required
  CHECK_FALSE(missing.err.empty());

  const CliResult bad_value = run_cli(dir, "gen-synth --looks 0");
  CHECK(bad_value.code == 1);
  CHECK(bad_value.err.find("error:") != std::string::npos);
}

TEST_CASE("cli gen-synth writes a deterministic scene") {
  testutil::TempDir dir;
  const std::string out_a = dir.file("a");
  const CliResult a = run_cli(
      dir, "gen-synth --height 32 --width 24 --regions 3 --seed 9 --out \"" +
               out_a + "\"");
  REQUIRE(a.code == 0);
  const std::vector<std::string> paths = lines_of(a.out);
  REQUIRE(paths.size() == 3);
  for (const std::string& p : paths) {
    CAPTURE(p);
    CHECK(fs::exists(p));
  }

  const gks::Image img1 = gks::load_image(paths[0]);
  CHECK(img1.height == 32);
  CHECK(img1.width == 24);
  const gks::ChangeMap gt = gks::load_map(paths[2]);
  CHECK(gt.height == 32);
  CHECK(gt.width == 24);

  // Same seed, second directory: byte-identical artifacts.
  const std::string out_b = dir.file("b");
  REQUIRE(run_cli(dir, "gen-synth --height 32 --width 24 --regions 3 "
                       "--seed 9 --out \"" +
                           out_b + "\"")
              .code == 0);
  CHECK(testutil::read_bytes(paths[0]) ==
        testutil::read_bytes(out_b + "/img1.pgm"));
  CHECK(testutil::read_bytes(paths[2]) ==
        testutil::read_bytes(out_b + "/ground_truth.pgm"));

  // A different seed produces a different scene.
  const std::string out_c = dir.file("c");
  REQUIRE(run_cli(dir, "gen-synth --height 32 --width 24 --regions 3 "
                       "--seed 10 --out \"" +
                           out_c + "\"")
              .code == 0);
  CHECK(testutil::read_bytes(paths[0]) !=
        testutil::read_bytes(out_c + "/img1.pgm"));
}

TEST_CASE("cli preclassify emits difference image, labels, and samples") {
  testutil::TempDir dir;
  const std::string scene = gen_scene(dir, "scene", 7);
  const std::string out = dir.file("pred");

  const CliResult r = run_cli(
      dir, "preclassify --img1 \"" + scene + "/img1.pgm\" --img2 \"" + scene +
               "/img2.pgm\" --ratio 0.05 --seed 7 --out \"" + out + "\"");
  REQUIRE(r.code == 0);
  const std::vector<std::string> paths = lines_of(r.out);
  REQUIRE(paths.size() == 3);
  CHECK(paths[0].find("di.pgm") != std::string::npos);
  CHECK(paths[1].find("preclass.pgm") != std::string::npos);
  CHECK(paths[2].find("samples.csv") != std::string::npos);
  for (const std::string& p : paths) CHECK(fs::exists(p));

  const gks::Image di = gks::load_image(paths[0]);
  CHECK(di.height == 32);
  CHECK(di.width == 32);

  const std::string csv = testutil::read_bytes(paths[2]);
  CHECK(csv.rfind("row,col,label\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') > 1);
}

TEST_CASE("cli train, predict, and evaluate agree end to end") {
  testutil::TempDir dir;
  const std::string src = gen_scene(dir, "src", 5);
  const std::string tgt = gen_scene(dir, "tgt", 6);
  const std::string run_dir = dir.file("run");
  const std::string cfg = write_tiny_config(dir, src, tgt, run_dir);

  const CliResult train =
      run_cli(dir, "train --config \"" + cfg + "\" --quiet");
  REQUIRE_MESSAGE(train.code == 0, train.err);
  const std::vector<std::string> outputs = lines_of(train.out);
  REQUIRE(outputs.size() >= 4);
  CHECK(outputs[0].find("checkpoint.bin") != std::string::npos);
  CHECK(outputs[1].find("change_map.pgm") != std::string::npos);
  CHECK(outputs[2].find("history.jsonl") != std::string::npos);
  CHECK(outputs[3].find("metrics.json") != std::string::npos);
  for (std::size_t i = 0; i < 4; ++i) CHECK(fs::exists(outputs[i]));
  // The metrics JSON echoes to stdout after the file list.
  CHECK(train.out.find("\"pcc\"") != std::string::npos);

  // Without --quiet the per-epoch history goes to stderr.
  const std::string run2 = dir.file("run2");
  const std::string cfg2 = write_tiny_config(dir, src, tgt, run2);
  const CliResult loud = run_cli(dir, "train --config \"" + cfg2 + "\"");
  REQUIRE(loud.code == 0);
  CHECK(loud.err.find("\"epoch\"") != std::string::npos);
  // Same configuration and seed: the training outputs are reproducible.
  CHECK(testutil::read_bytes(run_dir + "/checkpoint.bin") ==
        testutil::read_bytes(run2 + "/checkpoint.bin"));
  CHECK(testutil::read_bytes(run_dir + "/change_map.pgm") ==
        testutil::read_bytes(run2 + "/change_map.pgm"));
  CHECK(testutil::read_bytes(run_dir + "/metrics.json") ==
        testutil::read_bytes(run2 + "/metrics.json"));

  // predict from the stored checkpoint reproduces the training-time map.
  const std::string pred_dir = dir.file("pred");
  const CliResult predict = run_cli(
      dir, "predict --checkpoint \"" + run_dir + "/checkpoint.bin\"" +
               " --config \"" + cfg + "\" --out \"" + pred_dir + "\"");
  REQUIRE_MESSAGE(predict.code == 0, predict.err);
  const std::vector<std::string> pred_out = lines_of(predict.out);
  REQUIRE(pred_out.size() == 1);
  CHECK(testutil::read_bytes(pred_out[0]) ==
        testutil::read_bytes(run_dir + "/change_map.pgm"));

  // evaluate scores the stored map against truth and matches train's JSON.
  const std::string ev_dir = dir.file("ev");
  const CliResult ev = run_cli(
      dir, "evaluate --map \"" + run_dir + "/change_map.pgm\" --gt \"" + tgt +
               "/ground_truth.pgm\" --out \"" + ev_dir + "\"");
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  CHECK(ev.out.find("\"pcc\"") != std::string::npos);
  CHECK(ev.out == testutil::read_bytes(run_dir + "/metrics.json"));
  CHECK(fs::exists(ev_dir + "/metrics.json"));
  CHECK(testutil::read_bytes(ev_dir + "/metrics.json") ==
        testutil::read_bytes(run_dir + "/metrics.json"));

  // A mismatched map/truth extent is a clean failure.
  const std::string small = dir.file("small16");
  REQUIRE(run_cli(dir, "gen-synth --height 16 --width 16 --regions 2 "
                       "--seed 3 --out \"" +
                           small + "\"")
              .code == 0);
  const CliResult mismatch = run_cli(
      dir, "evaluate --map \"" + run_dir + "/change_map.pgm\" --gt \"" +
               small + "/ground_truth.pgm\"");
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("error:") != std::string::npos);
}

TEST_CASE("cli study runners write csv tables") {
  testutil::TempDir dir;
  const std::string src = gen_scene(dir, "src", 5);
  const std::string tgt = gen_scene(dir, "tgt", 6);

  const std::string sweep_dir = dir.file("sweep_out");
  const std::string cfg = write_tiny_config(dir, src, tgt, sweep_dir);

  const CliResult sweep = run_cli(
      dir, "sweep --axis n --values 1 --config \"" + cfg + "\"");
  REQUIRE_MESSAGE(sweep.code == 0, sweep.err);
  CHECK(sweep.out.rfind("n,pcc,kc,f1\n", 0) == 0);
  CHECK(fs::exists(sweep_dir + "/sweep_n.csv"));
  CHECK(testutil::read_bytes(sweep_dir + "/sweep_n.csv") == sweep.out);

  const CliResult bad_axis = run_cli(
      dir, "sweep --axis depth --config \"" + cfg + "\"");
  CHECK(bad_axis.code == 1);
  CHECK(bad_axis.err.find("error:") != std::string::npos);

  const std::string abl_dir = dir.file("abl_out");
  const std::string abl_cfg = write_tiny_config(dir, src, tgt, abl_dir);
  const CliResult ablate = run_cli(
      dir, "ablate --variants basic,full --seeds 1 --config \"" + abl_cfg +
               "\"");
  REQUIRE_MESSAGE(ablate.code == 0, ablate.err);
  CHECK(ablate.out.rfind("variant,seed,pcc\n", 0) == 0);
  CHECK(ablate.out.find("basic,mean,") != std::string::npos);
  CHECK(ablate.out.find("full,mean,") != std::string::npos);
  CHECK(fs::exists(abl_dir + "/ablation.csv"));
  CHECK(testutil::read_bytes(abl_dir + "/ablation.csv") == ablate.out);

  // combine reads the datasets array from the same config document.
  const std::string cmb_dir = dir.file("cmb_out");
  const std::string cmb_cfg = dir.file("combine.json");
  testutil::write_text(
      cmb_cfg,
      std::string("{\n") +
          "  \"datasets\": [\n" +
          "    {\"name\": \"alpha\", \"img1\": \"" + src + "/img1.pgm\"," +
          " \"img2\": \"" + src + "/img2.pgm\"," +
          " \"ground_truth\": \"" + src + "/ground_truth.pgm\"},\n" +
          "    {\"name\": \"beta\", \"img1\": \"" + tgt + "/img1.pgm\"," +
          " \"img2\": \"" + tgt + "/img2.pgm\"," +
          " \"ground_truth\": \"" + tgt + "/ground_truth.pgm\"}\n" +
          "  ],\n" +
          "  \"model\": {\"patch_side\": 3, \"channels\": 4, " +
          "\"graph_dim\": 4, \"graph_layers\": 1, \"hidden\": 6},\n" +
          "  \"train\": {\"epochs\": 1, \"batch_size\": 16, \"seed\": 11},\n" +
          "  \"sample_ratio\": 0.05,\n" +
          "  \"support_size\": 8,\n" +
          "  \"out_dir\": \"" + cmb_dir + "\"\n" +
          "}\n");
  const CliResult combine =
      run_cli(dir, "combine --seeds 1 --config \"" + cmb_cfg + "\"");
  REQUIRE_MESSAGE(combine.code == 0, combine.err);
  CHECK(combine.out.rfind("source\\target,alpha,beta\n", 0) == 0);
  CHECK(combine.out.find("---") != std::string::npos);
  CHECK(fs::exists(cmb_dir + "/combination.csv"));
}

TEST_CASE("cli rejects a broken config file") {
  testutil::TempDir dir;
  const std::string cfg = dir.file("bad.json");
  testutil::write_text(cfg, "{nope");
  const CliResult r = run_cli(dir, "train --config \"" + cfg + "\"");
  CHECK(r.code == 1);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(r.err.find("JSON") != std::string::npos);

  // train without any config is also a one-line failure.
  const CliResult none = run_cli(dir, "train");
  CHECK(none.code == 1);
  CHECK(none.err.find("error:") != std::string::npos);
}
