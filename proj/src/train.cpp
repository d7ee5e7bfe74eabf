#include "latte/train.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "latte/analysis.hpp"
#include "latte/checkpoint.hpp"
#include "latte/data.hpp"

namespace fs = std::filesystem;

namespace latte {

using nlohmann::json;

namespace {

constexpr uint64_t kStreamData = 0xDA7A;
constexpr uint64_t kStreamAug = 0xA062;
constexpr uint64_t kStreamPool = 0xF00D;
constexpr uint64_t kStreamTime = 0x7133;
constexpr uint64_t kStreamNoise = 0x0153;

struct Batch {
  Tensor z0;  // [B, F(+extra), H, W, C]
  std::vector<int> timesteps;
  std::vector<Conditioning> conds;
  int temporal_valid = -1;
};

Tensor encode_clip(const RunConfig& cfg, const VideoClip& clip) {
  return codec_encode(clip.pixels, cfg.data.codec_factor);
}

// imported source video, read once per process per path
const VideoClip& imported_source(const RunConfig& cfg) {
  static std::string cached_path;
  static VideoClip cached;
  if (cached_path != cfg.data.path) {
    cached.pixels = read_clip_dir(cfg.data.path);
    cached.label = -1;
    cached_path = cfg.data.path;
  }
  if (cached.pixels.dim(1) != cfg.data.height_px || cached.pixels.dim(2) != cfg.data.width_px ||
      cached.pixels.dim(3) != cfg.data.channels_px) {
    throw ConfigError("imported clip extents do not match the data config");
  }
  return cached;
}

VideoClip draw_clip(const RunConfig& cfg, uint64_t seed) {
  Rng aug_rng(mix_seed(seed, kStreamAug));
  if (cfg.data.kind == "clip_dir") {
    if (cfg.model.num_classes > 0) {
      throw ConfigError("clip_dir import carries no labels; set num_classes to 0");
    }
    VideoClip clip =
        clip_sample(imported_source(cfg), cfg.data.clip_interval, cfg.model.frames, aug_rng);
    return hflip_augment(clip, cfg.data.hflip_p, aug_rng);
  }
  const int classes = std::max(1, cfg.model.num_classes);
  VideoClip src = synth_moving_shapes(seed, cfg.data.source_frames, cfg.data.height_px,
                                      cfg.data.width_px, classes);
  VideoClip clip = clip_sample(src, cfg.data.clip_interval, cfg.model.frames, aug_rng);
  return hflip_augment(clip, cfg.data.hflip_p, aug_rng);
}

Batch make_batch(const RunConfig& cfg, const DiffusionSchedule& sched, int step) {
  const int B = cfg.train.batch_size;
  std::vector<Tensor> latents;
  std::vector<int> labels;
  for (int i = 0; i < B; ++i) {
    const uint64_t s = mix_seed(cfg.train.seed, kStreamData, static_cast<uint64_t>(step),
                                static_cast<uint64_t>(i));
    VideoClip clip = draw_clip(cfg, s);
    latents.push_back(encode_clip(cfg, clip));
    labels.push_back(cfg.model.num_classes > 0 ? clip.label : -1);
  }

  Batch b;
  const int extra = cfg.model.extra_frames;
  std::vector<Tensor> pool;
  if (extra > 0) {
    for (int j = 0; j < 4; ++j) {
      const uint64_t s = mix_seed(cfg.train.seed, kStreamPool, static_cast<uint64_t>(step),
                                  static_cast<uint64_t>(j));
      pool.push_back(encode_clip(cfg, draw_clip(cfg, s)));
    }
  }
  Rng joint_rng(mix_seed(cfg.train.seed, kStreamPool, static_cast<uint64_t>(step), 977));
  JointBatch jb = build_joint_batch(latents, labels, extra, pool, joint_rng);
  b.z0 = jb.latents;
  b.temporal_valid = extra > 0 ? jb.temporal_valid : -1;

  Rng t_rng(mix_seed(cfg.train.seed, kStreamTime, static_cast<uint64_t>(step)));
  for (int i = 0; i < B; ++i) {
    const int t = 1 + static_cast<int>(t_rng.below(sched.steps));
    b.timesteps.push_back(t);
    b.conds.push_back(Conditioning{t, labels[static_cast<size_t>(i)]});
  }
  return b;
}

void save_train_checkpoints(const RunConfig& cfg, const Model& model, const AdamW& opt,
                            const EmaState& ema, int step, TrainResult& result) {
  json manifest;
  manifest["config"] = run_config_json(cfg);
  manifest["config_hash"] = resume_hash_hex(cfg);
  manifest["step"] = step;
  manifest["ema"] = false;
  manifest["opt_steps"] = opt.steps_taken;

  auto params = model.named_params();
  std::vector<std::pair<std::string, Tensor>> arrays = params;
  for (const auto& [name, t] : model.named_buffers()) arrays.emplace_back(name, t);
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor mt = Tensor::from({static_cast<int64_t>(opt.m[p].size())}, opt.m[p]);
    Tensor vt = Tensor::from({static_cast<int64_t>(opt.v[p].size())}, opt.v[p]);
    arrays.emplace_back("opt.m." + params[p].first, mt);
    arrays.emplace_back("opt.v." + params[p].first, vt);
  }
  const std::string dir =
      (fs::path(cfg.train.out_dir) / ("ckpt_step" + std::to_string(step))).string();
  save_checkpoint(dir, manifest, arrays);
  result.ckpt_dir = dir;

  // EMA weights in a sibling directory
  Model shadow = model.clone();
  ema.write_to(shadow.named_params());
  json ema_manifest = manifest;
  ema_manifest["ema"] = true;
  ema_manifest.erase("opt_steps");
  std::vector<std::pair<std::string, Tensor>> ema_arrays = shadow.named_params();
  for (const auto& [name, t] : shadow.named_buffers()) ema_arrays.emplace_back(name, t);
  const std::string ema_dir = dir + "_ema";
  save_checkpoint(ema_dir, ema_manifest, ema_arrays);
  result.ema_ckpt_dir = ema_dir;
}

}  // namespace

TrainResult train_run(const RunConfig& cfg, const std::string& resume_from) {
  cfg.validate();
  fs::create_directories(cfg.train.out_dir);
  DiffusionSchedule sched =
      DiffusionSchedule::linear(cfg.diffusion.steps, cfg.diffusion.beta_start,
                                cfg.diffusion.beta_end);
  Model model = build_model(cfg.model, cfg.train.seed);
  auto params = model.named_params();

  AdamW opt;
  opt.lr = cfg.optim.lr;
  opt.beta1 = cfg.optim.beta1;
  opt.beta2 = cfg.optim.beta2;
  opt.weight_decay = cfg.optim.weight_decay;
  opt.init(params);

  int start_step = 0;
  EmaState ema = EmaState::init(params, cfg.optim.ema_decay);
  if (!resume_from.empty()) {
    CheckpointData ckpt = load_checkpoint(resume_from);
    const std::string have = ckpt.manifest.value("config_hash", "");
    if (have != resume_hash_hex(cfg)) {
      throw ConfigError("resume rejected: checkpoint config hash " + have +
                        " does not match this config " + resume_hash_hex(cfg));
    }
    if (ckpt.manifest.value("ema", false)) {
      throw ConfigError("resume needs a raw checkpoint, not an EMA one");
    }
    std::vector<std::pair<std::string, Tensor>> dst = params;
    for (const auto& [name, t] : model.named_buffers()) dst.emplace_back(name, t);
    restore_arrays(ckpt, dst);
    start_step = ckpt.manifest.value("step", 0);
    opt.steps_taken = ckpt.manifest.value("opt_steps", 0);
    for (size_t p = 0; p < params.size(); ++p) {
      auto itm = ckpt.arrays.find("opt.m." + params[p].first);
      auto itv = ckpt.arrays.find("opt.v." + params[p].first);
      if (itm == ckpt.arrays.end() || itv == ckpt.arrays.end()) {
        throw IoError("checkpoint lacks optimizer state for " + params[p].first);
      }
      opt.m[p].assign(itm->second.data().begin(), itm->second.data().end());
      opt.v[p].assign(itv->second.data().begin(), itv->second.data().end());
    }
    const std::string ema_dir = resume_from + "_ema";
    if (fs::exists(ema_dir)) {
      CheckpointData ec = load_checkpoint(ema_dir);
      for (size_t p = 0; p < params.size(); ++p) {
        auto it = ec.arrays.find(params[p].first);
        if (it == ec.arrays.end()) throw IoError("EMA checkpoint lacks " + params[p].first);
        ema.shadow[p].assign(it->second.data().begin(), it->second.data().end());
      }
    }
  }

  const std::string csv_path = (fs::path(cfg.train.out_dir) / "metrics.csv").string();
  const bool append = start_step > 0 && fs::exists(csv_path);
  std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path);
  if (!append) csv << "step,l_simple,l_vlb,wall_ms\n";

  TrainResult result;
  result.end_step = start_step;
  if (cfg.train.steps == start_step || cfg.train.steps == 0) {
    save_train_checkpoints(cfg, model, opt, ema, start_step, result);
    return result;
  }

  for (int step = start_step + 1; step <= cfg.train.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Batch batch = make_batch(cfg, sched, step);
    Tensor eps = Tensor::zeros(batch.z0.shape());
    {
      Rng noise_rng(mix_seed(cfg.train.seed, kStreamNoise, static_cast<uint64_t>(step)));
      for (double& v : eps.data()) v = noise_rng.normal();
      if (precision() == Precision::f32) {
        for (double& v : eps.data()) v = quantize_f32(v);
      }
    }

    for (auto& [name, p] : params) p.zero_grad();
    double ls_val = 0.0, lv_val = 0.0;
    try {
      Tape tape;
      Tensor z_t = q_sample(sched, batch.z0, batch.timesteps, eps);
      DenoiserOut out = denoiser_forward(model, z_t, batch.conds, batch.temporal_valid);
      Tensor ls = loss_simple(eps, out.eps);
      Tensor lv = loss_vlb(sched, batch.z0, z_t, batch.timesteps, out.eps, out.var_raw);
      Tensor loss = add(ls, scale(lv, cfg.diffusion.vlb_weight));
      tape.backward(loss);
      ls_val = ls.item();
      lv_val = lv.item();
    } catch (const NumericError& e) {
      throw NumericError(e.op, std::string(e.what()) + " at training step " +
                                   std::to_string(step));
    }
    opt.step(params);
    ema.update(params);

    result.l_simple.push_back(ls_val);
    result.l_vlb.push_back(lv_val);
    result.end_step = step;
    const auto t1 = std::chrono::steady_clock::now();
    const double wall_ms =
        std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count() / 1000.0;
    if (step % cfg.train.log_every == 0 || step == cfg.train.steps) {
      csv << step << "," << ls_val << "," << lv_val << "," << wall_ms << "\n";
      csv.flush();
    }
    if (step % cfg.train.ckpt_every == 0 || step == cfg.train.steps) {
      save_train_checkpoints(cfg, model, opt, ema, step, result);
    }
  }
  return result;
}

std::string resolve_sample_checkpoint(const std::string& ckpt_dir, bool prefer_ema) {
  if (!prefer_ema) return ckpt_dir;
  if (ckpt_dir.size() > 4 && ckpt_dir.substr(ckpt_dir.size() - 4) == "_ema") return ckpt_dir;
  const std::string sibling = ckpt_dir + "_ema";
  return fs::exists(sibling) ? sibling : ckpt_dir;
}

LoadedModel load_model_checkpoint(const std::string& ckpt_dir) {
  CheckpointData ckpt = load_checkpoint(ckpt_dir);
  if (!ckpt.manifest.contains("config")) throw IoError("checkpoint manifest lacks config");
  RunConfig cfg = parse_run_config(ckpt.manifest["config"].dump());
  Model model = build_model(cfg.model, 0);
  std::vector<std::pair<std::string, Tensor>> dst = model.named_params();
  for (const auto& [name, t] : model.named_buffers()) dst.emplace_back(name, t);
  restore_arrays(ckpt, dst);
  return LoadedModel{std::move(cfg), std::move(model)};
}

SampleResult sample_run(const std::string& ckpt_dir, int count, uint64_t seed,
                        const std::string& out_dir, bool prefer_ema) {
  if (count < 0) throw ConfigError("sample count must be >= 0");
  LoadedModel lm = load_model_checkpoint(resolve_sample_checkpoint(ckpt_dir, prefer_ema));
  const ModelConfig& mc = lm.cfg.model;
  DiffusionSchedule sched = DiffusionSchedule::linear(
      lm.cfg.diffusion.steps, lm.cfg.diffusion.beta_start, lm.cfg.diffusion.beta_end);
  fs::create_directories(out_dir);

  SampleResult result;
  json clips = json::array();
  for (int i = 0; i < count; ++i) {
    const int label = mc.num_classes > 0 ? i % mc.num_classes : -1;
    DenoiseFn fn = [&](const Tensor& z_t, int t) {
      Conditioning c{t, label};
      return denoiser_forward(lm.model, z_t, std::span<const Conditioning>(&c, 1));
    };
    Tensor latent = p_sample_loop(fn, sched, {1, mc.frames, mc.latent_h, mc.latent_w,
                                              mc.latent_c},
                                  mix_seed(seed, 0x5a11, static_cast<uint64_t>(i)));
    Tensor clip4 = reshape(latent, {mc.frames, mc.latent_h, mc.latent_w, mc.latent_c});
    Tensor pixels = codec_decode(clip4, lm.cfg.data.codec_factor);
    for (double& v : pixels.data()) v = std::clamp(v, -1.0, 1.0);
    const std::string clip_dir = (fs::path(out_dir) / ("sample_" + std::to_string(i))).string();
    write_clip_dir(clip_dir, pixels);
    const double coh = temporal_coherence(pixels);
    result.coherence.push_back(coh);
    clips.push_back({{"dir", "sample_" + std::to_string(i)}, {"temporal_coherence", coh}});
  }
  double mean = 0.0;
  for (double c : result.coherence) mean += c;
  result.mean_coherence = result.coherence.empty() ? 0.0 : mean / result.coherence.size();

  json report;
  report["clips"] = clips;
  report["mean_coherence"] = result.mean_coherence;
  report["count"] = count;
  result.report_path = (fs::path(out_dir) / "report.json").string();
  std::ofstream rf(result.report_path);
  if (!rf) throw IoError("cannot write " + result.report_path);
  rf << report.dump(2) << "\n";
  return result;
}

}  // namespace latte
