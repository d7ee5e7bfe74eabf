#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "latte/config.hpp"

using namespace latte;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code;
  std::string out;
};

CliResult run_cli(const std::string& args, const std::string& env = "") {
  const fs::path out_file = fs::temp_directory_path() / "latte_cli_out.txt";
  std::string cmd = env + " \"" + LATTE_CLI_PATH + "\" " + args + " > " +
                    out_file.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream f(out_file);
  std::stringstream ss;
  ss << f.rdbuf();
  r.out = ss.str();
  return r;
}

RunConfig tiny_config(const std::string& out_dir) {
  RunConfig c;
  c.model.variant = 1;
  c.model.layers = 2;
  c.model.hidden = 16;
  c.model.heads = 2;
  c.model.frames = 2;
  c.model.latent_h = c.model.latent_w = 8;
  c.model.latent_c = 4;
  c.model.num_classes = 4;
  c.diffusion.steps = 8;
  c.optim.lr = 1e-3;
  c.train.batch_size = 2;
  c.train.steps = 6;
  c.train.log_every = 1;
  c.train.ckpt_every = 3;
  c.train.seed = 11;
  c.train.out_dir = out_dir;
  c.data.height_px = 16;
  c.data.width_px = 16;
  c.data.channels_px = 1;
  c.data.codec_factor = 2;
  c.data.source_frames = 8;
  c.data.clip_interval = 3;
  return c;
}

std::string write_config(const RunConfig& c, const std::string& path) {
  std::ofstream f(path);
  f << run_config_json(c).dump(2);
  return path;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cmd_train: runs, logs the CSV schema, writes raw and EMA checkpoints") {
  fs::path ws = fresh_dir("latte_cli_train");
  RunConfig c = tiny_config((ws / "run").string());
  write_config(c, (ws / "cfg.json").string());
  CliResult r = run_cli("train --config " + (ws / "cfg.json").string());
  CHECK(r.exit_code == 0);
  const std::string csv = slurp(ws / "run" / "metrics.csv");
  CHECK(csv.rfind("step,l_simple,l_vlb,wall_ms\n", 0) == 0);
  CHECK(fs::exists(ws / "run" / "ckpt_step6" / "manifest.json"));
  CHECK(fs::exists(ws / "run" / "ckpt_step6_ema" / "manifest.json"));
  CHECK(fs::exists(ws / "run" / "ckpt_step3"));
  fs::remove_all(ws);
}

TEST_CASE("cmd_train: zero steps still writes a step-0 checkpoint") {
  fs::path ws = fresh_dir("latte_cli_train0");
  RunConfig c = tiny_config((ws / "run").string());
  c.train.steps = 0;
  write_config(c, (ws / "cfg.json").string());
  CliResult r = run_cli("train --config " + (ws / "cfg.json").string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(ws / "run" / "ckpt_step0" / "manifest.json"));
  fs::remove_all(ws);
}

TEST_CASE("cmd_train: exit code contract for bad configs and IO failures") {
  fs::path ws = fresh_dir("latte_cli_err");
  // invalid config: odd layer count for variant 1
  RunConfig c = tiny_config((ws / "run").string());
  json j = run_config_json(c);
  j["model"]["layers"] = 3;
  {
    std::ofstream f(ws / "bad.json");
    f << j.dump();
  }
  CHECK(run_cli("train --config " + (ws / "bad.json").string()).exit_code == 2);
  // unreadable config path
  CHECK(run_cli("train --config " + (ws / "missing.json").string()).exit_code == 4);
  fs::remove_all(ws);
}

TEST_CASE("cmd_train: exploding parameters abort with exit 3 and the step index") {
  fs::path ws = fresh_dir("latte_cli_nan");
  RunConfig c = tiny_config((ws / "run").string());
  c.optim.lr = 1e35;  // first update throws every activation out of f32 range
  c.train.steps = 4;
  write_config(c, (ws / "cfg.json").string());
  CliResult r = run_cli("train --config " + (ws / "cfg.json").string());
  CHECK(r.exit_code == 3);
  CHECK(r.out.find("step") != std::string::npos);
  fs::remove_all(ws);
}

TEST_CASE("cmd_train: resuming reproduces the uninterrupted loss trace in f64 mode") {
  fs::path ws = fresh_dir("latte_cli_resume");
  const std::string env = "LATTE_TEST_MODE=f64";

  RunConfig full = tiny_config((ws / "full").string());
  write_config(full, (ws / "full.json").string());
  CHECK(run_cli("train --config " + (ws / "full.json").string(), env).exit_code == 0);

  RunConfig part = tiny_config((ws / "part").string());
  part.train.steps = 3;
  write_config(part, (ws / "part_a.json").string());
  CHECK(run_cli("train --config " + (ws / "part_a.json").string(), env).exit_code == 0);
  part.train.steps = 6;
  write_config(part, (ws / "part_b.json").string());
  CliResult r = run_cli("train --config " + (ws / "part_b.json").string() + " --resume " +
                            (ws / "part" / "ckpt_step3").string(),
                        env);
  CHECK(r.exit_code == 0);

  // compare per-step loss columns, dropping wall-clock
  auto losses = [](const fs::path& p) {
    std::ifstream f(p);
    std::string line;
    std::getline(f, line);  // header
    std::vector<std::string> rows;
    while (std::getline(f, line)) {
      rows.push_back(line.substr(0, line.rfind(',')));
    }
    return rows;
  };
  auto full_rows = losses(ws / "full" / "metrics.csv");
  auto part_rows = losses(ws / "part" / "metrics.csv");
  REQUIRE(full_rows.size() == 6);
  REQUIRE(part_rows.size() == 6);
  for (size_t i = 0; i < 6; ++i) CHECK(full_rows[i] == part_rows[i]);

  // resuming against a different config fails loudly
  RunConfig other = tiny_config((ws / "part").string());
  other.train.steps = 6;
  other.optim.lr = 5e-4;
  write_config(other, (ws / "other.json").string());
  CHECK(run_cli("train --config " + (ws / "other.json").string() + " --resume " +
                    (ws / "part" / "ckpt_step3").string(),
                env)
            .exit_code == 2);
  fs::remove_all(ws);
}

TEST_CASE("cmd_sample: determinism, EMA preference, empty runs and errors") {
  fs::path ws = fresh_dir("latte_cli_sample");
  RunConfig c = tiny_config((ws / "run").string());
  c.train.steps = 2;
  write_config(c, (ws / "cfg.json").string());
  REQUIRE(run_cli("train --config " + (ws / "cfg.json").string()).exit_code == 0);
  const std::string ckpt = (ws / "run" / "ckpt_step2").string();

  CliResult r1 = run_cli("sample --ckpt " + ckpt + " --count 2 --seed 9 --out " +
                         (ws / "s1").string());
  CHECK(r1.exit_code == 0);
  CliResult r2 = run_cli("sample --ckpt " + ckpt + " --count 2 --seed 9 --out " +
                         (ws / "s2").string());
  CHECK(r2.exit_code == 0);
  // byte-identical sample files for the same seed
  for (const char* rel : {"sample_0/frame_0000.pgm", "sample_1/frame_0001.pgm"}) {
    CHECK(slurp(ws / "s1" / rel) == slurp(ws / "s2" / rel));
    CHECK(!slurp(ws / "s1" / rel).empty());
  }
  json rep = json::parse(slurp(ws / "s1" / "report.json"));
  CHECK(rep["clips"].size() == 2);

  // different seed changes the clips
  CliResult r3 = run_cli("sample --ckpt " + ckpt + " --count 1 --seed 10 --out " +
                         (ws / "s3").string());
  CHECK(r3.exit_code == 0);
  CHECK(slurp(ws / "s1" / "sample_0/frame_0000.pgm") !=
        slurp(ws / "s3" / "sample_0/frame_0000.pgm"));

  // zero clips: valid empty report
  CliResult r0 = run_cli("sample --ckpt " + ckpt + " --count 0 --out " + (ws / "s0").string());
  CHECK(r0.exit_code == 0);
  json rep0 = json::parse(slurp(ws / "s0" / "report.json"));
  CHECK(rep0["clips"].empty());

  // missing checkpoint
  CHECK(run_cli("sample --ckpt " + (ws / "nope").string() + " --count 1").exit_code == 4);
  fs::remove_all(ws);
}

TEST_CASE("cmd_analyze: text and json forms agree; variants 1 and 2 identical") {
  CliResult text = run_cli("analyze --paper-config xl --variants 1,2,3,4");
  CHECK(text.exit_code == 0);
  CliResult jsn = run_cli("analyze --paper-config xl --variants 1,2,3,4 --format json");
  CHECK(jsn.exit_code == 0);
  json report = json::parse(jsn.out);
  REQUIRE(report["variants"].size() == 4);
  const auto& v = report["variants"];
  CHECK(v[0]["params"] == v[1]["params"]);
  CHECK(v[0]["flops"] == v[1]["flops"]);
  // the text table carries the same numbers (params in millions, 6 decimals)
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v[2]["params"].get<double>() / 1e6);
  CHECK(text.out.find(buf) != std::string::npos);
  std::snprintf(buf, sizeof(buf), "%.6f", v[3]["flops_ratio"].get<double>());
  CHECK(text.out.find(buf) != std::string::npos);

  CHECK(run_cli("analyze --paper-config xl --variants 1,9").exit_code == 2);
  CHECK(run_cli("analyze --paper-config huge").exit_code == 2);
}

TEST_CASE("cmd_verify: filtering and the softmax mutation hook") {
  CliResult grad = run_cli("verify --filter grad");
  CHECK(grad.exit_code == 0);
  CHECK(grad.out.find("grad.ops") != std::string::npos);
  CHECK(grad.out.find("prop.softmax") == std::string::npos);  // filtered out

  CliResult mutated = run_cli("verify --filter softmax", "LATTE_MUTATION=softmax_sign");
  CHECK(mutated.exit_code == 1);
  CHECK(mutated.out.find("softmax") != std::string::npos);
  CHECK(mutated.out.find("FAIL") != std::string::npos);
}
