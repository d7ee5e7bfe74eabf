#include <doctest.h>

#include <filesystem>

#include "latte/checkpoint.hpp"
#include "latte/config.hpp"
#include "support.hpp"

using namespace latte;
using latte::test::bit_equal;
using latte::test::rand_tensor;

namespace fs = std::filesystem;

TEST_CASE("config parse -> serialize -> parse is the identity") {
  RunConfig base = desk_config();
  base.model.temporal_pos = TemporalPos::rope;
  base.optim.lr = 3.5e-4;
  base.data.hflip_p = 0.25;
  const std::string text = run_config_json(base).dump(2);
  RunConfig again = parse_run_config(text);
  CHECK(run_config_json(again) == run_config_json(base));
  CHECK(config_hash_hex(again) == config_hash_hex(base));
}

TEST_CASE("unknown keys are rejected at every level") {
  RunConfig base = desk_config();
  nlohmann::json j = run_config_json(base);
  j["mystery"] = 1;
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
  j.erase("mystery");
  j["model"]["hideen"] = 64;  // typo'd key
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
  j["model"].erase("hideen");
  j["optim"]["momentum"] = 0.9;
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
}

TEST_CASE("invalid values are rejected with ConfigError") {
  RunConfig base = desk_config();
  nlohmann::json j = run_config_json(base);
  j["model"]["cond_mode"] = "metadata";
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
  j["model"]["cond_mode"] = "s_adaln";
  j["model"]["heads"] = 5;  // hidden 64 not divisible
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
  j["model"]["heads"] = 4;
  j["data"]["codec_factor"] = 3;  // breaks latent consistency
  CHECK_THROWS_AS(parse_run_config(j.dump()), ConfigError);
  CHECK_THROWS_AS(parse_run_config("not json"), ConfigError);
}

TEST_CASE("config hash changes with any field") {
  RunConfig a = desk_config();
  RunConfig b = desk_config();
  b.train.seed = 8;
  CHECK(config_hash_hex(a) != config_hash_hex(b));
}

TEST_CASE("checkpoint save -> load reproduces every array bit-exactly") {
  Rng rng(7);
  std::vector<std::pair<std::string, Tensor>> arrays;
  // f32-representable values, as all persisted state is by construction
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({16});
  for (double& v : a.data()) v = quantize_f32(rng.normal());
  for (double& v : b.data()) v = quantize_f32(rng.normal());
  arrays.emplace_back("alpha.weight", a);
  arrays.emplace_back("beta.bias", b);

  const std::string dir = (fs::temp_directory_path() / "latte_ckpt_test").string();
  fs::remove_all(dir);
  nlohmann::json manifest;
  manifest["step"] = 17;
  manifest["ema"] = false;
  save_checkpoint(dir, manifest, arrays);

  CheckpointData ckpt = load_checkpoint(dir);
  CHECK(ckpt.manifest["step"] == 17);
  CHECK(ckpt.manifest["format"] == 1);
  REQUIRE(ckpt.arrays.count("alpha.weight") == 1);
  CHECK(bit_equal(ckpt.arrays.at("alpha.weight"), a));
  CHECK(bit_equal(ckpt.arrays.at("beta.bias"), b));

  // restore into same-shaped destinations
  Tensor a2 = Tensor::zeros({3, 4});
  Tensor b2 = Tensor::zeros({16});
  restore_arrays(ckpt, {{"alpha.weight", a2}, {"beta.bias", b2}});
  CHECK(bit_equal(a2, a));

  Tensor wrong = Tensor::zeros({4, 4});
  CHECK_THROWS_AS(restore_arrays(ckpt, {{"alpha.weight", wrong}}), IoError);
  CHECK_THROWS_AS(restore_arrays(ckpt, {{"missing.name", a2}}), IoError);
  fs::remove_all(dir);
}

TEST_CASE("loading a missing checkpoint reports an IO error") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/latte_ckpt"), IoError);
}
