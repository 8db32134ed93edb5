#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fmv2/cli.hpp"
#include "fmv2/data.hpp"
#include "fmv2/model.hpp"

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = fmv2::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path scratch() {
  const auto d = std::filesystem::temp_directory_path() / "fmv2_cli_test";
  std::filesystem::create_directories(d);
  return d;
}

// Small model flags matching a 4-joint, 8-frame dataset.
std::vector<std::string> small_model() {
  return {"--joints",  "4", "--frames", "8",   "--embed-channels", "8", "--attn-dim", "8",
          "--ct-groups", "2", "--partition", "13", "--num-classes", "4"};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--help"}).code == 0);
  CHECK(run({"count-params", "--n-hfab", "x"}).code == 2);
  CHECK(run({"count-params", "--embed-channels", "35"}).code == 2);
  CHECK(run({"count-params", "--h", "3"}).code == 2);
  CHECK(run({"eval", "--checkpoint", (scratch() / "missing.ckpt").string()}).code == 2);
  CHECK(run({"inspect-dct", "--data", (scratch() / "missing.jsonl").string()}).code == 2);
}

TEST_CASE("count-params prints both counts and the ratio") {
  const auto r = run({"count-params"});
  CHECK(r.code == 0);
  CHECK(r.out.find("config=23008") != std::string::npos);
  CHECK(r.out.find("uniform_7fab_7sab_1tab=40180") != std::string::npos);
  CHECK(r.out.find("enumeration_matches=yes") != std::string::npos);
}

TEST_CASE("config file precedence: defaults, then file, then flags") {
  const auto cfg = scratch() / "knobs.cfg";
  std::ofstream(cfg) << "# comment\nn_hfab=1\nn_lfab = 1\n";
  const auto base = run({"count-params"});
  const auto file = run({"count-params", "--config", cfg.string()});
  const auto flag = run({"count-params", "--config", cfg.string(), "--n-hfab", "0", "--n-lfab", "0"});
  fmv2::model::ModelConfig a;
  a.n_hfab = a.n_lfab = 1;
  fmv2::model::ModelConfig b;
  b.n_hfab = b.n_lfab = 0;
  CHECK(file.out.find("config=" + std::to_string(fmv2::model::count_parameters(a))) != std::string::npos);
  CHECK(flag.out.find("config=" + std::to_string(fmv2::model::count_parameters(b))) != std::string::npos);
  CHECK(base.out != file.out);

  std::ofstream(cfg) << "colour=red\n";
  CHECK(run({"count-params", "--config", cfg.string()}).code == 2);
}

TEST_CASE("generate, train, eval, ensemble, inspect and dump end to end") {
  const auto dir = scratch();
  const auto data = (dir / "tiny.skl").string();
  REQUIRE(run({"generate-synth", "--classes", "4", "--per-class", "5", "--joints", "4", "--frames", "8",
               "--seed", "3", "--out", data})
              .code == 0);
  CHECK(fmv2::data::load_any(data).size() == 20);

  const auto ckpt = (dir / "tiny.ckpt").string();
  std::vector<std::string> train = {"train", "--data", data, "--out", ckpt, "--epochs", "2", "--batch-size", "4",
                                    "--base-lr", "0.01", "--metrics", (dir / "metrics.log").string()};
  for (const auto& s : small_model()) train.push_back(s);
  const auto t = run(train);
  REQUIRE(t.code == 0);
  CHECK(t.out.find("epoch=1 ") != std::string::npos);
  CHECK(t.out.find("best_test_acc=") != std::string::npos);
  CHECK(slurp(dir / "metrics.log").find("epoch=0 ") != std::string::npos);

  const auto scores = (dir / "scores.csv").string();
  const auto e = run({"eval", "--checkpoint", ckpt, "--data", data, "--scores-out", scores});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("samples=4") != std::string::npos);  // subject 4 of 5 per class

  const auto fused = run({"ensemble", "--scores", scores + "," + scores, "--weights", "1,2"});
  CHECK(fused.code == 0);
  CHECK(fused.out.find("accuracy=") != std::string::npos);
  CHECK(run({"ensemble", "--scores", scores, "--weights", "1,2"}).code != 0);

  const auto insp = run({"inspect-dct", "--data", data, "--index", "0", "--frames", "8"});
  CHECK(insp.code == 0);
  CHECK(insp.out.rfind("joint_index,low_band_energy,high_band_energy,ratio", 0) == 0);

  const auto out_dir = (dir / "maps").string();
  const auto d = run({"dump-attention", "--checkpoint", ckpt, "--data", data, "--indices", "0", "--out-dir", out_dir});
  CHECK(d.code == 0);
  CHECK(std::filesystem::exists(dir / "maps" / "sample0_tab0.csv"));
  CHECK(std::filesystem::exists(dir / "maps" / "sample0_hfab1.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradcheck subcommand on the tiny config") {
  const auto r = run({"gradcheck", "--samples", "10"});
  INFO(r.out << r.err);
  CHECK(r.code == 0);
}
