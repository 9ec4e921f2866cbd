#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xmdpt/nn.hpp"
#include "xmdpt/rng.hpp"
#include "xmdpt/tensor.hpp"

// Procedural stick-figure world: each identity has a colour/texture/geometry
// signature, each record pairs a source image (identity seen from some view)
// with a target pose map and the target image (identity in that pose).
// All rasters are quantised to 8-bit levels at creation so in-memory data
// matches PPM round trips exactly.

namespace xmdpt {

struct Image {
  int h = 0, w = 0;
  std::vector<float> px;  // h * w * 3, values in [0, 1]

  Image() = default;
  Image(int h_, int w_, float fill = 0.0f) : h(h_), w(w_), px(std::size_t(h_) * w_ * 3, fill) {}

  float& at(int y, int x, int c) { return px[(std::size_t(y) * w + x) * 3 + c]; }
  float at(int y, int x, int c) const { return px[(std::size_t(y) * w + x) * 3 + c]; }
};

void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

// Snaps every channel to the nearest 8-bit level.
void quantize8(Image& img);

template <typename T>
Tensor<T> image_to_tensor(const Image& img);  // [H, W, 3]
template <typename T>
Image tensor_to_image(const Tensor<T>& t);  // clamps to [0,1] and quantises

// Five joints: head, neck, pelvis, left foot, right foot. Segments run
// head-neck, neck-pelvis, pelvis-foot for each foot.
struct Joints {
  std::array<std::array<double, 2>, 5> p{};  // (x, y) in canvas coordinates
};

struct IdentityParams {
  double hue = 0.0;
  double sat = 0.8;
  double limb_scale = 1.0;
  double head_radius = 2.6;
  double texture_freq = 2.0;
  double texture_phase = 0.0;
  double texture_amp = 0.04;
};

struct ToyRecord {
  int identity = 0;
  int view = 0;
  int pose = 0;
  Joints joints;  // target pose, canonical frame
  bool is_train = true;
};

struct Corpus {
  int canvas = 32;
  int views = 4;
  int poses = 4;
  std::uint64_t seed = 0;
  std::vector<IdentityParams> identities;
  std::vector<ToyRecord> records;
  // Parallel to records.
  std::vector<Image> source_images, target_images, pose_maps;

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;
};

Image render_person(const IdentityParams& id, const Joints& joints, int canvas);
Image render_pose_map(const Joints& joints, int canvas);
// Recovers the joint list from the exact marker colours; throws if a marker
// pixel is missing.
Joints extract_joints(const Image& pose_map);

Joints view_transform(const Joints& joints, int view, int canvas);

// Deterministic: the same (counts, seed) yields byte-identical rasters.
// Identities are split 80/20 into train/test by identity index, so test
// identities are never seen in training.
Corpus generate_corpus(int n_identities, int n_views, int n_poses,
                       std::uint64_t seed);

// Patch autoencoder standing in for the latent codec: 32x32x3 image to an
// 8x8x2 latent and back. The decoder sees a 3x3 latent neighbourhood per
// cell to smooth patch seams.
struct ToyCodec {
  int canvas = 32, factor = 4, latent_channels = 2, hidden = 128;
  Linear<float> enc1, enc2, dec1, dec2;

  explicit ToyCodec(Rng& rng, int hidden_width = 128);

  Tensor<float> encode(const Image& img) const;    // [8, 8, 2], constant
  Image decode(const Tensor<float>& latent) const;

  // Differentiable paths used only while fitting the codec itself.
  Tensor<float> encode_t(const Tensor<float>& img) const;
  Tensor<float> decode_t(const Tensor<float>& latent) const;

  void fit(const std::vector<const Image*>& images, int steps, std::uint64_t seed,
           float lr);

  void collect(const std::string& prefix, ParamMap<float>& pm) const;
  void set_frozen();  // clears requires_grad on all weights

  int latent_grid() const { return canvas / factor; }
};

}  // namespace xmdpt
