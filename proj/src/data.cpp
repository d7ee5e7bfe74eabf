#include "latte/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "latte/ops.hpp"

namespace fs = std::filesystem;

namespace latte {

VideoClip synth_moving_shapes(uint64_t seed, int frames, int height_px, int width_px,
                              int num_classes) {
  if (height_px < 8 || width_px < 8 || frames < 1) {
    throw ConfigError("synth_moving_shapes: extents must be >= 8 and frames >= 1");
  }
  if (num_classes < 1 || num_classes > 4) {
    throw ConfigError("synth_moving_shapes: classes must be in [1,4]");
  }
  Rng rng(mix_seed(seed, 0xC11F));
  const int label = static_cast<int>(rng.below(num_classes));
  static const int kDir[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};  // (dx, dy) per class
  const double speed = 1.0 + rng.uniform() * 1.5;
  const double vx = kDir[label][0] * speed;
  const double vy = kDir[label][1] * speed;
  const int side = std::max(2, height_px / 4 + static_cast<int>(rng.below(3)) - 1);
  double cx = rng.uniform() * width_px;
  double cy = rng.uniform() * height_px;

  VideoClip clip;
  clip.label = label;
  clip.pixels = Tensor::full({frames, height_px, width_px, 1}, -1.0);
  auto px = clip.pixels.data();
  for (int f = 0; f < frames; ++f) {
    const double ox = cx + vx * f;
    const double oy = cy + vy * f;
    for (int dy = 0; dy < side; ++dy) {
      const int y = (static_cast<int>(std::floor(oy)) + dy) % height_px;
      const int yy = y < 0 ? y + height_px : y;
      for (int dx = 0; dx < side; ++dx) {
        const int x = (static_cast<int>(std::floor(ox)) + dx) % width_px;
        const int xx = x < 0 ? x + width_px : x;
        px[(static_cast<int64_t>(f) * height_px + yy) * width_px + xx] = 1.0;
      }
    }
  }
  return clip;
}

VideoClip clip_sample(const VideoClip& video, int interval, int frames, Rng& rng) {
  if (interval < 1 || frames < 1) throw ConfigError("clip_sample: bad interval/frames");
  const int64_t len = video.pixels.dim(0);
  const int64_t span = 1 + static_cast<int64_t>(frames - 1) * interval;
  if (len < span) {
    throw ConfigError("clip_sample: source has " + std::to_string(len) + " frames, needs " +
                      std::to_string(span));
  }
  const int64_t i0 = rng.below(len - span + 1);
  const int64_t H = video.pixels.dim(1), W = video.pixels.dim(2), C = video.pixels.dim(3);
  VideoClip out;
  out.label = video.label;
  out.pixels = Tensor::zeros({frames, H, W, C});
  const int64_t stride = H * W * C;
  auto src = video.pixels.data();
  auto dst = out.pixels.data();
  for (int f = 0; f < frames; ++f) {
    const int64_t s = i0 + static_cast<int64_t>(f) * interval;
    std::copy(src.begin() + s * stride, src.begin() + (s + 1) * stride,
              dst.begin() + static_cast<int64_t>(f) * stride);
  }
  return out;
}

VideoClip hflip_augment(const VideoClip& clip, double p, Rng& rng) {
  if (rng.uniform() >= p) return clip;
  const int64_t F = clip.pixels.dim(0), H = clip.pixels.dim(1), W = clip.pixels.dim(2),
                C = clip.pixels.dim(3);
  VideoClip out;
  out.label = clip.label;
  out.pixels = Tensor::zeros(clip.pixels.shape());
  auto src = clip.pixels.data();
  auto dst = out.pixels.data();
  for (int64_t f = 0; f < F; ++f) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        for (int64_t c = 0; c < C; ++c) {
          dst[((f * H + y) * W + x) * C + c] = src[((f * H + y) * W + (W - 1 - x)) * C + c];
        }
      }
    }
  }
  return out;
}

Tensor codec_encode(const Tensor& pixels, int factor) {
  if (pixels.rank() != 4) throw ShapeError("codec_encode: expects [F, H, W, C]");
  const int64_t F = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2), C = pixels.dim(3);
  if (factor < 1 || H % factor != 0 || W % factor != 0) {
    throw ShapeError("codec_encode: extents not divisible by factor " + std::to_string(factor));
  }
  const int64_t h = H / factor, w = W / factor, c_out = C * factor * factor;
  Tensor out = Tensor::zeros({F, h, w, c_out});
  auto src = pixels.data();
  auto dst = out.data();
  for (int64_t f = 0; f < F; ++f) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        for (int64_t c = 0; c < C; ++c) {
          const int64_t cc = ((y % factor) * factor + (x % factor)) * C + c;
          dst[((f * h + y / factor) * w + x / factor) * c_out + cc] =
              src[((f * H + y) * W + x) * C + c];
        }
      }
    }
  }
  return out;
}

Tensor codec_decode(const Tensor& latents, int factor) {
  if (latents.rank() != 4) throw ShapeError("codec_decode: expects [F, h, w, C*f*f]");
  const int64_t F = latents.dim(0), h = latents.dim(1), w = latents.dim(2),
                c_in = latents.dim(3);
  if (factor < 1 || c_in % (static_cast<int64_t>(factor) * factor) != 0) {
    throw ShapeError("codec_decode: channels not divisible by factor^2");
  }
  const int64_t C = c_in / (static_cast<int64_t>(factor) * factor);
  const int64_t H = h * factor, W = w * factor;
  Tensor out = Tensor::zeros({F, H, W, C});
  auto src = latents.data();
  auto dst = out.data();
  for (int64_t f = 0; f < F; ++f) {
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        for (int64_t c = 0; c < C; ++c) {
          const int64_t cc = ((y % factor) * factor + (x % factor)) * C + c;
          dst[((f * H + y) * W + x) * C + c] =
              src[((f * h + y / factor) * w + x / factor) * c_in + cc];
        }
      }
    }
  }
  return out;
}

JointBatch build_joint_batch(const std::vector<Tensor>& clip_latents,
                             const std::vector<int>& labels, int extra_images,
                             const std::vector<Tensor>& frame_pool, Rng& rng) {
  if (clip_latents.empty()) throw ConfigError("build_joint_batch: empty batch");
  if (labels.size() != clip_latents.size()) {
    throw ConfigError("build_joint_batch: label count mismatch");
  }
  if (extra_images < 0) throw ConfigError("build_joint_batch: negative extra_images");
  if (extra_images > 0 && frame_pool.empty()) {
    throw ConfigError("build_joint_batch: extra frames requested but pool is empty");
  }
  const Shape& cs = clip_latents[0].shape();
  const int64_t F = cs[0], H = cs[1], W = cs[2], C = cs[3];
  const int64_t B = static_cast<int64_t>(clip_latents.size());
  JointBatch out;
  out.temporal_valid = static_cast<int>(F);
  out.labels = labels;
  out.latents = Tensor::zeros({B, F + extra_images, H, W, C});
  const int64_t frame_sz = H * W * C;
  auto dst = out.latents.data();
  for (int64_t b = 0; b < B; ++b) {
    const Tensor& clip = clip_latents[static_cast<size_t>(b)];
    if (clip.shape() != cs) throw ShapeError("build_joint_batch: clip shapes differ");
    std::copy(clip.data().begin(), clip.data().end(),
              dst.begin() + b * (F + extra_images) * frame_sz);
    for (int e = 0; e < extra_images; ++e) {
      // each appended frame is drawn independently: random clip, random frame
      const Tensor& src_clip = frame_pool[static_cast<size_t>(rng.below(
          static_cast<int64_t>(frame_pool.size())))];
      if (src_clip.dim(1) != H || src_clip.dim(2) != W || src_clip.dim(3) != C) {
        throw ShapeError("build_joint_batch: pool frame extents differ");
      }
      const int64_t fi = rng.below(src_clip.dim(0));
      auto src = src_clip.data();
      std::copy(src.begin() + fi * frame_sz, src.begin() + (fi + 1) * frame_sz,
                dst.begin() + (b * (F + extra_images) + F + e) * frame_sz);
    }
  }
  return out;
}

namespace {
uint8_t to_byte(double v) {
  const double x = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 255.0;
  return static_cast<uint8_t>(std::lround(x));
}
}  // namespace

void write_frame_pnm(const std::string& path, const Tensor& frame) {
  if (frame.rank() != 3) throw ShapeError("write_frame_pnm: expects [H, W, C]");
  const int64_t H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  if (C != 1 && C != 3) throw ShapeError("write_frame_pnm: channels must be 1 or 3");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
  auto d = frame.data();
  std::vector<uint8_t> row(static_cast<size_t>(W * C));
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t i = 0; i < W * C; ++i) row[static_cast<size_t>(i)] = to_byte(d[y * W * C + i]);
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("short write to " + path);
}

Tensor read_frame_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5" && magic != "P6") throw IoError(path + ": not a binary PGM/PPM file");
  int64_t W = 0, H = 0, maxval = 0;
  f >> W >> H >> maxval;
  f.get();  // single whitespace after the header
  if (W < 1 || H < 1 || maxval != 255) throw IoError(path + ": unsupported PNM header");
  const int64_t C = magic == "P5" ? 1 : 3;
  std::vector<uint8_t> buf(static_cast<size_t>(H * W * C));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError(path + ": truncated pixel data");
  Tensor out = Tensor::zeros({H, W, C});
  auto d = out.data();
  for (size_t i = 0; i < buf.size(); ++i) d[static_cast<int64_t>(i)] = buf[i] / 255.0 * 2.0 - 1.0;
  return out;
}

void write_clip_dir(const std::string& dir, const Tensor& clip) {
  if (clip.rank() != 4) throw ShapeError("write_clip_dir: expects [F, H, W, C]");
  fs::create_directories(dir);
  const int64_t F = clip.dim(0);
  for (int64_t f = 0; f < F; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.%s", static_cast<int>(f),
                  clip.dim(3) == 1 ? "pgm" : "ppm");
    Tensor fr = Tensor::zeros({clip.dim(1), clip.dim(2), clip.dim(3)});
    const int64_t sz = fr.numel();
    std::copy(clip.data().begin() + f * sz, clip.data().begin() + (f + 1) * sz,
              fr.data().begin());
    write_frame_pnm((fs::path(dir) / name).string(), fr);
  }
}

Tensor read_clip_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path().string());
  }
  if (files.empty()) throw IoError("no PGM/PPM frames in " + dir);
  std::sort(files.begin(), files.end());
  Tensor first = read_frame_pnm(files[0]);
  const int64_t F = static_cast<int64_t>(files.size());
  Tensor clip = Tensor::zeros({F, first.dim(0), first.dim(1), first.dim(2)});
  const int64_t sz = first.numel();
  std::copy(first.data().begin(), first.data().end(), clip.data().begin());
  for (int64_t f = 1; f < F; ++f) {
    Tensor fr = read_frame_pnm(files[static_cast<size_t>(f)]);
    if (fr.shape() != first.shape()) throw IoError("frame extents differ in " + dir);
    std::copy(fr.data().begin(), fr.data().end(), clip.data().begin() + f * sz);
  }
  return clip;
}

}  // namespace latte
