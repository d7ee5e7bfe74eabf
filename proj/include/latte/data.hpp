#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latte/rng.hpp"
#include "latte/tensor.hpp"

namespace latte {

// Pixel-space clip in [-1, 1], frames x height x width x channels.
struct VideoClip {
  Tensor pixels;   // [F, H, W, C]
  int label = -1;  // -1 = unlabeled
};

// A square translating with a constant per-class direction over a wrapping
// canvas. Classes are the four axis directions; speed, start position and
// size vary with the seed.
VideoClip synth_moving_shapes(uint64_t seed, int frames, int height_px, int width_px,
                              int num_classes);

// Frames at i0, i0+interval, ...; i0 drawn uniformly over the valid range.
VideoClip clip_sample(const VideoClip& video, int interval, int frames, Rng& rng);

// Whole-clip horizontal flip with probability p.
VideoClip hflip_augment(const VideoClip& clip, double p, Rng& rng);

// Exactly invertible space-to-depth codec standing in for a learned
// autoencoder: [F, Hpx, Wpx, C] <-> [F, Hpx/f, Wpx/f, C*f*f].
Tensor codec_encode(const Tensor& pixels, int factor = 8);
Tensor codec_decode(const Tensor& latents, int factor = 8);

// Latent video plus appended single frames for joint image-video training.
// Frames at positions >= temporal_valid never enter temporal attention.
struct JointBatch {
  Tensor latents;  // [B, F + extra, H, W, C]
  std::vector<int> labels;
  int temporal_valid = 0;
};

// Appends `extra_images` independently drawn frames (from `frame_pool`) after
// the video frames of each clip.
JointBatch build_joint_batch(const std::vector<Tensor>& clip_latents,
                             const std::vector<int>& labels, int extra_images,
                             const std::vector<Tensor>& frame_pool, Rng& rng);

// PGM (P5, grayscale) / PPM (P6, rgb) 8-bit frame files; values map linearly
// between [-1, 1] and [0, 255].
void write_frame_pnm(const std::string& path, const Tensor& frame);  // [H, W, C], C in {1,3}
Tensor read_frame_pnm(const std::string& path);
void write_clip_dir(const std::string& dir, const Tensor& clip);  // [F, H, W, C]
Tensor read_clip_dir(const std::string& dir);  // frames in lexicographic order

}  // namespace latte
