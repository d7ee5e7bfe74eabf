#include "latte/config.hpp"

#include <fstream>

namespace latte {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) {
    try {
      obj.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

CondMode cond_mode_from(const std::string& s) {
  if (s == "s_adaln") return CondMode::s_adaln;
  if (s == "all_tokens") return CondMode::all_tokens;
  throw ConfigError("cond_mode must be 's_adaln' or 'all_tokens', got '" + s + "'");
}

TemporalPos temporal_pos_from(const std::string& s) {
  if (s == "absolute") return TemporalPos::absolute;
  if (s == "rope") return TemporalPos::rope;
  throw ConfigError("temporal_pos must be 'absolute' or 'rope', got '" + s + "'");
}

PatchMode patch_mode_from(const std::string& s) {
  if (s == "uniform") return PatchMode::uniform;
  if (s == "compression") return PatchMode::compression;
  throw ConfigError("patch_mode must be 'uniform' or 'compression', got '" + s + "'");
}

}  // namespace

std::string cond_mode_str(CondMode m) {
  return m == CondMode::s_adaln ? "s_adaln" : "all_tokens";
}
std::string temporal_pos_str(TemporalPos m) {
  return m == TemporalPos::absolute ? "absolute" : "rope";
}
std::string patch_mode_str(PatchMode m) {
  return m == PatchMode::uniform ? "uniform" : "compression";
}

void RunConfig::validate() const {
  model.validate();
  if (diffusion.steps < 1) throw ConfigError("diffusion.steps must be >= 1");
  if (diffusion.beta_start <= 0 || diffusion.beta_end >= 1 ||
      diffusion.beta_start > diffusion.beta_end) {
    throw ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  if (diffusion.vlb_weight < 0) throw ConfigError("vlb_weight must be >= 0");
  if (optim.lr <= 0 || optim.beta1 <= 0 || optim.beta1 >= 1 || optim.beta2 <= 0 ||
      optim.beta2 >= 1 || optim.weight_decay < 0) {
    throw ConfigError("bad optimizer settings");
  }
  if (optim.ema_decay <= 0 || optim.ema_decay >= 1) {
    throw ConfigError("ema_decay must be in (0,1)");
  }
  if (train.batch_size < 1 || train.steps < 0 || train.log_every < 1 || train.ckpt_every < 1) {
    throw ConfigError("bad train settings");
  }
  if (data.kind != "moving_squares" && data.kind != "clip_dir") {
    throw ConfigError("data.kind must be 'moving_squares' or 'clip_dir'");
  }
  if (data.height_px < 8 || data.width_px < 8) throw ConfigError("pixel extents must be >= 8");
  if (data.channels_px != 1 && data.channels_px != 3) {
    throw ConfigError("channels_px must be 1 or 3");
  }
  if (data.codec_factor < 1 || data.height_px % data.codec_factor != 0 ||
      data.width_px % data.codec_factor != 0) {
    throw ConfigError("pixel extents not divisible by codec_factor");
  }
  if (model.latent_h * data.codec_factor != data.height_px ||
      model.latent_w * data.codec_factor != data.width_px ||
      model.latent_c != data.channels_px * data.codec_factor * data.codec_factor) {
    throw ConfigError("model latent dims do not match data pixels through the codec");
  }
  if (data.clip_interval < 1) throw ConfigError("clip_interval must be >= 1");
  if (data.kind == "moving_squares" &&
      data.source_frames < 1 + (model.frames - 1) * data.clip_interval) {
    throw ConfigError("source_frames too short for frames x interval");
  }
  if (data.hflip_p < 0 || data.hflip_p > 1) throw ConfigError("hflip_p must be in [0,1]");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  reject_unknown(j, {"model", "diffusion", "optim", "train", "data"}, "config root");
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m,
                   {"variant", "layers", "hidden", "heads", "patch_h", "patch_w", "tube_stride",
                    "cond_mode", "temporal_pos", "patch_mode", "frames", "latent_h", "latent_w",
                    "latent_c", "num_classes", "extra_frames"},
                   "model");
    get_to(m, "variant", c.model.variant);
    get_to(m, "layers", c.model.layers);
    get_to(m, "hidden", c.model.hidden);
    get_to(m, "heads", c.model.heads);
    get_to(m, "patch_h", c.model.patch_h);
    get_to(m, "patch_w", c.model.patch_w);
    get_to(m, "tube_stride", c.model.tube_stride);
    get_to(m, "frames", c.model.frames);
    get_to(m, "latent_h", c.model.latent_h);
    get_to(m, "latent_w", c.model.latent_w);
    get_to(m, "latent_c", c.model.latent_c);
    get_to(m, "num_classes", c.model.num_classes);
    get_to(m, "extra_frames", c.model.extra_frames);
    std::string s;
    if (m.contains("cond_mode")) {
      m.at("cond_mode").get_to(s);
      c.model.cond_mode = cond_mode_from(s);
    }
    if (m.contains("temporal_pos")) {
      m.at("temporal_pos").get_to(s);
      c.model.temporal_pos = temporal_pos_from(s);
    }
    if (m.contains("patch_mode")) {
      m.at("patch_mode").get_to(s);
      c.model.patch_mode = patch_mode_from(s);
    }
  }
  if (j.contains("diffusion")) {
    const json& d = j["diffusion"];
    reject_unknown(d, {"steps", "beta_start", "beta_end", "vlb_weight"}, "diffusion");
    get_to(d, "steps", c.diffusion.steps);
    get_to(d, "beta_start", c.diffusion.beta_start);
    get_to(d, "beta_end", c.diffusion.beta_end);
    get_to(d, "vlb_weight", c.diffusion.vlb_weight);
  }
  if (j.contains("optim")) {
    const json& o = j["optim"];
    reject_unknown(o, {"lr", "beta1", "beta2", "weight_decay", "ema_decay"}, "optim");
    get_to(o, "lr", c.optim.lr);
    get_to(o, "beta1", c.optim.beta1);
    get_to(o, "beta2", c.optim.beta2);
    get_to(o, "weight_decay", c.optim.weight_decay);
    get_to(o, "ema_decay", c.optim.ema_decay);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, {"batch_size", "steps", "log_every", "ckpt_every", "seed", "out_dir"},
                   "train");
    get_to(t, "batch_size", c.train.batch_size);
    get_to(t, "steps", c.train.steps);
    get_to(t, "log_every", c.train.log_every);
    get_to(t, "ckpt_every", c.train.ckpt_every);
    get_to(t, "seed", c.train.seed);
    get_to(t, "out_dir", c.train.out_dir);
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown(d,
                   {"kind", "path", "height_px", "width_px", "channels_px", "codec_factor",
                    "source_frames", "clip_interval", "hflip_p"},
                   "data");
    get_to(d, "kind", c.data.kind);
    get_to(d, "path", c.data.path);
    get_to(d, "height_px", c.data.height_px);
    get_to(d, "width_px", c.data.width_px);
    get_to(d, "channels_px", c.data.channels_px);
    get_to(d, "codec_factor", c.data.codec_factor);
    get_to(d, "source_frames", c.data.source_frames);
    get_to(d, "clip_interval", c.data.clip_interval);
    get_to(d, "hflip_p", c.data.hflip_p);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

json run_config_json(const RunConfig& c) {
  json j;
  j["model"] = {{"variant", c.model.variant},
                {"layers", c.model.layers},
                {"hidden", c.model.hidden},
                {"heads", c.model.heads},
                {"patch_h", c.model.patch_h},
                {"patch_w", c.model.patch_w},
                {"tube_stride", c.model.tube_stride},
                {"cond_mode", cond_mode_str(c.model.cond_mode)},
                {"temporal_pos", temporal_pos_str(c.model.temporal_pos)},
                {"patch_mode", patch_mode_str(c.model.patch_mode)},
                {"frames", c.model.frames},
                {"latent_h", c.model.latent_h},
                {"latent_w", c.model.latent_w},
                {"latent_c", c.model.latent_c},
                {"num_classes", c.model.num_classes},
                {"extra_frames", c.model.extra_frames}};
  j["diffusion"] = {{"steps", c.diffusion.steps},
                    {"beta_start", c.diffusion.beta_start},
                    {"beta_end", c.diffusion.beta_end},
                    {"vlb_weight", c.diffusion.vlb_weight}};
  j["optim"] = {{"lr", c.optim.lr},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"weight_decay", c.optim.weight_decay},
                {"ema_decay", c.optim.ema_decay}};
  j["train"] = {{"batch_size", c.train.batch_size}, {"steps", c.train.steps},
                {"log_every", c.train.log_every},   {"ckpt_every", c.train.ckpt_every},
                {"seed", c.train.seed},             {"out_dir", c.train.out_dir}};
  j["data"] = {{"kind", c.data.kind},
               {"path", c.data.path},
               {"height_px", c.data.height_px},
               {"width_px", c.data.width_px},
               {"channels_px", c.data.channels_px},
               {"codec_factor", c.data.codec_factor},
               {"source_frames", c.data.source_frames},
               {"clip_interval", c.data.clip_interval},
               {"hflip_p", c.data.hflip_p}};
  return j;
}

namespace {
std::string fnv1a_hex(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}
}  // namespace

std::string config_hash_hex(const RunConfig& cfg) {
  return fnv1a_hex(run_config_json(cfg).dump());
}

std::string resume_hash_hex(const RunConfig& cfg) {
  json j = run_config_json(cfg);
  j["train"] = {{"batch_size", cfg.train.batch_size}, {"seed", cfg.train.seed}};
  return fnv1a_hex(j.dump());
}

RunConfig desk_config() {
  RunConfig c;
  c.model.variant = 1;
  c.model.layers = 4;
  c.model.hidden = 64;
  c.model.heads = 4;
  c.model.patch_h = c.model.patch_w = 2;
  c.model.frames = 4;
  c.model.latent_h = c.model.latent_w = 16;
  c.model.latent_c = 4;
  c.model.num_classes = 4;
  c.diffusion.steps = 100;
  c.diffusion.vlb_weight = 1e-3;
  c.optim.lr = 2e-3;
  // 0.9999 tracks far too slowly for a 500-step run; the EMA model would
  // still be mostly the random init at the end
  c.optim.ema_decay = 0.99;
  c.train.batch_size = 4;
  c.train.steps = 500;
  c.train.log_every = 10;
  c.train.ckpt_every = 250;
  c.train.seed = 7;
  c.data.kind = "moving_squares";
  c.data.height_px = 32;
  c.data.width_px = 32;
  c.data.channels_px = 1;
  c.data.codec_factor = 2;
  c.data.source_frames = 16;
  c.data.clip_interval = 1;
  // flipping reverses the horizontal motion classes on this dataset, which
  // makes class conditioning contradictory at desk scale
  c.data.hflip_p = 0.0;
  return c;
}

}  // namespace latte
