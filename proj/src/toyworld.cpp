#include "xmdpt/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "xmdpt/diffusion.hpp"
#include "xmdpt/optim.hpp"

namespace xmdpt {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Marker colours for joints head, neck, pelvis, left foot, right foot.
constexpr std::array<std::array<float, 3>, 5> kMarkerColors = {{
    {1.0f, 0.0f, 0.0f},
    {0.0f, 1.0f, 0.0f},
    {0.0f, 0.0f, 1.0f},
    {1.0f, 1.0f, 0.0f},
    {1.0f, 0.0f, 1.0f},
}};

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = int(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double seg_dist(double px, double py, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  if (len2 < 1e-12) return std::hypot(px - x0, py - y0);
  double t = ((px - x0) * dx + (py - y0) * dy) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (x0 + t * dx), py - (y0 + t * dy));
}

struct Prim {
  double x0, y0, x1, y1, r;
  std::array<double, 3> color;
  bool textured;
};

}  // namespace

void quantize8(Image& img) {
  for (auto& v : img.px)
    v = float(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(img.px.size());
  for (std::size_t i = 0; i < img.px.size(); ++i)
    bytes[i] = (unsigned char)std::lround(std::clamp(img.px[i], 0.0f, 1.0f) * 255.0f);
  os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 ppm: " + path);
  auto next_int = [&] {
    int v;
    is >> std::ws;
    while (is.peek() == '#') is.ignore(1 << 16, '\n'), is >> std::ws;
    is >> v;
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw std::runtime_error("expected 8-bit ppm: " + path);
  is.ignore(1);  // single whitespace after maxval
  Image img(h, w);
  std::vector<unsigned char> bytes(img.px.size());
  is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!is) throw std::runtime_error("truncated ppm: " + path);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.px[i] = float(bytes[i]) / 255.0f;
  return img;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  std::vector<T> data(img.px.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = T(img.px[i]);
  return Tensor<T>::from({std::size_t(img.h), std::size_t(img.w), 3}, std::move(data));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(2) != 3)
    throw std::invalid_argument("tensor_to_image: expected [H, W, 3], got " +
                                shape_str(t.shape()));
  Image img(int(t.dim(0)), int(t.dim(1)));
  for (std::size_t i = 0; i < img.px.size(); ++i)
    img.px[i] = std::clamp(float(t[i]), 0.0f, 1.0f);
  quantize8(img);
  return img;
}

template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);
template Image tensor_to_image<float>(const Tensor<float>&);
template Image tensor_to_image<double>(const Tensor<double>&);

Image render_person(const IdentityParams& id, const Joints& j, int canvas) {
  const auto head = hsv_to_rgb(id.hue, id.sat * 0.55, 0.95);
  const auto torso = hsv_to_rgb(id.hue, id.sat, 0.82);
  const auto limb = hsv_to_rgb(id.hue + 0.09, id.sat * 0.9, 0.60);
  const double ls = id.limb_scale;

  const std::array<Prim, 5> prims = {{
      {j.p[2][0], j.p[2][1], j.p[3][0], j.p[3][1], 1.6 * ls, limb, true},
      {j.p[2][0], j.p[2][1], j.p[4][0], j.p[4][1], 1.6 * ls, limb, true},
      {j.p[0][0], j.p[0][1], j.p[1][0], j.p[1][1], 1.2 * ls, limb, true},
      {j.p[1][0], j.p[1][1], j.p[2][0], j.p[2][1], 2.4 * ls, torso, true},
      {j.p[0][0], j.p[0][1], j.p[0][0], j.p[0][1], id.head_radius * ls, head, false},
  }};

  Image img(canvas, canvas);
  for (int y = 0; y < canvas; ++y) {
    for (int x = 0; x < canvas; ++x) {
      double col[3] = {0.09, 0.09, 0.11};
      const double tex =
          1.0 + id.texture_amp *
                    std::sin(2.0 * kPi * id.texture_freq * double(x + y) / canvas +
                             id.texture_phase);
      for (const auto& pr : prims) {
        const double d = seg_dist(x, y, pr.x0, pr.y0, pr.x1, pr.y1);
        const double a = std::clamp(pr.r - d + 0.5, 0.0, 1.0);
        if (a <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          const double shade = pr.textured ? pr.color[c] * tex : pr.color[c];
          col[c] = (1.0 - a) * col[c] + a * shade;
        }
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = float(col[c]);
    }
  }
  quantize8(img);
  return img;
}

Image render_pose_map(const Joints& j, int canvas) {
  Image img(canvas, canvas);
  const std::array<std::array<int, 2>, 4> segs = {{{0, 1}, {1, 2}, {2, 3}, {2, 4}}};
  for (int y = 0; y < canvas; ++y) {
    for (int x = 0; x < canvas; ++x) {
      double v = 0.0;
      for (const auto& s : segs) {
        const double d = seg_dist(x, y, j.p[s[0]][0], j.p[s[0]][1], j.p[s[1]][0],
                                  j.p[s[1]][1]);
        v = std::max(v, std::clamp(0.7 - d + 0.5, 0.0, 1.0) * 0.35);
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = float(v);
    }
  }
  quantize8(img);
  // Markers go in last so nothing overpaints them; colours are exact 8-bit
  // values, which is what extract_joints matches on.
  for (int k = 0; k < 5; ++k) {
    const int mx = std::clamp(int(std::lround(j.p[k][0])), 0, canvas - 1);
    const int my = std::clamp(int(std::lround(j.p[k][1])), 0, canvas - 1);
    for (int c = 0; c < 3; ++c) img.at(my, mx, c) = kMarkerColors[k][c];
  }
  return img;
}

Joints extract_joints(const Image& pose_map) {
  Joints out;
  for (int k = 0; k < 5; ++k) {
    bool found = false;
    for (int y = 0; y < pose_map.h && !found; ++y)
      for (int x = 0; x < pose_map.w && !found; ++x) {
        if (pose_map.at(y, x, 0) == kMarkerColors[k][0] &&
            pose_map.at(y, x, 1) == kMarkerColors[k][1] &&
            pose_map.at(y, x, 2) == kMarkerColors[k][2]) {
          out.p[k] = {double(x), double(y)};
          found = true;
        }
      }
    if (!found)
      throw std::runtime_error("pose map is missing marker " + std::to_string(k));
  }
  return out;
}

Joints view_transform(const Joints& j, int view, int canvas) {
  static constexpr std::array<double, 4> kScales = {1.0, 1.0, 0.92, 1.08};
  const bool mirror = view % 2 == 1;
  const double s = kScales[view % 4];
  const double shift_x = (view % 4 == 3) ? -1.0 : 0.0 + 0.8 * double((view / 4) % 3);
  const double shift_y = (view % 4 == 2) ? 1.0 : 0.0;
  const double c = (canvas - 1) / 2.0;
  Joints out;
  for (int k = 0; k < 5; ++k) {
    double x = j.p[k][0], y = j.p[k][1];
    if (mirror) x = canvas - 1 - x;
    out.p[k][0] = std::clamp(c + s * (x - c) + shift_x, 1.0, canvas - 2.0);
    out.p[k][1] = std::clamp(c + s * (y - c) + shift_y, 1.0, canvas - 2.0);
  }
  return out;
}

namespace {

bool joints_pixel_distinct(const Joints& j) {
  for (int a = 0; a < 5; ++a)
    for (int b = a + 1; b < 5; ++b)
      if (std::lround(j.p[a][0]) == std::lround(j.p[b][0]) &&
          std::lround(j.p[a][1]) == std::lround(j.p[b][1]))
        return false;
  return true;
}

Joints make_pose(Rng& rng, double limb_scale, int canvas) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Joints j;
    const double cx = canvas / 2.0;
    const double hx = cx + rng.uniform(-4.0, 4.0);
    const double hy = 6.0 + rng.uniform(-1.5, 1.5);
    const double lean = rng.uniform(-2.5, 2.5);
    j.p[0] = {hx, hy};
    j.p[1] = {hx + 0.5 * lean, hy + 4.2 * limb_scale};
    j.p[2] = {j.p[1][0] + lean, j.p[1][1] + 6.8 * limb_scale};
    const double spread = rng.uniform(1.8, 4.2);
    j.p[3] = {j.p[2][0] - spread + rng.uniform(-0.7, 0.7),
              j.p[2][1] + 7.5 * limb_scale + rng.uniform(-1.0, 1.0)};
    j.p[4] = {j.p[2][0] + spread + rng.uniform(-0.7, 0.7),
              j.p[2][1] + 7.5 * limb_scale + rng.uniform(-1.0, 1.0)};
    for (auto& pt : j.p) {
      pt[0] = std::clamp(pt[0], 2.2, canvas - 2.2);
      pt[1] = std::clamp(pt[1], 2.2, canvas - 2.2);
    }
    if (joints_pixel_distinct(j)) return j;
  }
  throw std::runtime_error("could not draw a pose with distinct joint pixels");
}

IdentityParams make_identity(Rng& rng) {
  IdentityParams id;
  id.hue = rng.uniform();
  id.sat = rng.uniform(0.7, 0.95);
  id.limb_scale = rng.uniform(0.88, 1.08);
  id.head_radius = rng.uniform(2.3, 3.1);
  id.texture_freq = 1.0 + double(rng.next_below(3));
  id.texture_phase = rng.uniform(0.0, 2.0 * kPi);
  id.texture_amp = rng.uniform(0.03, 0.06);
  return id;
}

}  // namespace

std::vector<std::size_t> Corpus::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].is_train) out.push_back(i);
  return out;
}

std::vector<std::size_t> Corpus::test_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!records[i].is_train) out.push_back(i);
  return out;
}

Corpus generate_corpus(int n_identities, int n_views, int n_poses,
                       std::uint64_t seed) {
  if (n_identities < 2 || n_views < 1 || n_poses < 1)
    throw std::invalid_argument("corpus needs at least 2 identities and 1 view/pose");
  Corpus corpus;
  corpus.views = n_views;
  corpus.poses = n_poses;
  corpus.seed = seed;

  const int n_train_ids = std::max(1, int(std::llround(0.8 * n_identities)));

  std::vector<Joints> rest(n_identities);
  std::vector<std::vector<Joints>> poses(n_identities);
  for (int id = 0; id < n_identities; ++id) {
    Rng rng(Rng::mix(seed, 0x100000ull + std::uint64_t(id)));
    corpus.identities.push_back(make_identity(rng));
    rest[id] = make_pose(rng, corpus.identities[id].limb_scale, corpus.canvas);
    poses[id].reserve(n_poses);
    for (int p = 0; p < n_poses; ++p)
      poses[id].push_back(make_pose(rng, corpus.identities[id].limb_scale, corpus.canvas));
  }

  for (int id = 0; id < n_identities; ++id) {
    for (int v = 0; v < n_views; ++v) {
      const Joints src_joints = view_transform(rest[id], v, corpus.canvas);
      const Image src = render_person(corpus.identities[id], src_joints, corpus.canvas);
      for (int p = 0; p < n_poses; ++p) {
        ToyRecord rec;
        rec.identity = id;
        rec.view = v;
        rec.pose = p;
        rec.joints = poses[id][p];
        rec.is_train = id < n_train_ids;
        corpus.records.push_back(rec);
        corpus.source_images.push_back(src);
        corpus.target_images.push_back(
            render_person(corpus.identities[id], poses[id][p], corpus.canvas));
        corpus.pose_maps.push_back(render_pose_map(poses[id][p], corpus.canvas));
      }
    }
  }
  return corpus;
}

// --- ToyCodec ------------------------------------------------------------------

namespace {

// Neighbourhood gather indices: 9 entries per latent cell, out-of-bounds cells
// point at the all-zero padding row appended after the real rows.
std::vector<std::size_t> neighbourhood_indices(int grid) {
  std::vector<std::size_t> idx;
  idx.reserve(std::size_t(grid) * grid * 9);
  const std::size_t pad = std::size_t(grid) * grid;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = gy + dy, nx = gx + dx;
          idx.push_back(ny >= 0 && ny < grid && nx >= 0 && nx < grid
                            ? std::size_t(ny) * grid + nx
                            : pad);
        }
  return idx;
}

}  // namespace

ToyCodec::ToyCodec(Rng& rng, int hidden_width) : hidden(hidden_width) {
  const int patch_dim = factor * factor * 3;
  enc1 = Linear<float>(rng, patch_dim, hidden);
  enc2 = Linear<float>(rng, hidden, latent_channels);
  dec1 = Linear<float>(rng, 9 * latent_channels, hidden);
  dec2 = Linear<float>(rng, hidden, patch_dim);
}

Tensor<float> ToyCodec::encode_t(const Tensor<float>& img) const {
  auto tok = patchify(img, std::size_t(factor));
  auto lat = enc2.forward(gelu(enc1.forward(tok)));
  const std::size_t g = std::size_t(latent_grid());
  return reshape(lat, {g, g, std::size_t(latent_channels)});
}

Tensor<float> ToyCodec::decode_t(const Tensor<float>& latent) const {
  const std::size_t g = std::size_t(latent_grid());
  auto rows = reshape(latent, {g * g, std::size_t(latent_channels)});
  auto padded = concat_rows<float>(
      {rows, Tensor<float>::zeros({1, std::size_t(latent_channels)})});
  auto neigh = gather_rows(padded, neighbourhood_indices(latent_grid()));
  auto ctx = reshape(neigh, {g * g, std::size_t(9 * latent_channels)});
  auto tok = dec2.forward(gelu(dec1.forward(ctx)));
  return unpatchify(tok, std::size_t(canvas), std::size_t(canvas), 3,
                    std::size_t(factor));
}

Tensor<float> ToyCodec::encode(const Image& img) const {
  NoGrad<float> ng;
  return encode_t(image_to_tensor<float>(img));
}

Image ToyCodec::decode(const Tensor<float>& latent) const {
  NoGrad<float> ng;
  return tensor_to_image(decode_t(latent));
}

void ToyCodec::fit(const std::vector<const Image*>& images, int steps,
                   std::uint64_t seed, float lr) {
  if (images.empty()) throw std::invalid_argument("codec fit: no images");
  Rng rng(seed);
  std::vector<Tensor<float>> tensors;
  tensors.reserve(images.size());
  for (const Image* im : images) tensors.push_back(image_to_tensor<float>(*im));

  ParamMap<float> pm;
  collect("codec", pm);
  std::vector<Tensor<float>> params;
  for (auto& [name, t] : pm.items) params.push_back(t);
  Adam<float> opt(params, lr);

  const int batch = 4;
  for (int s = 0; s < steps; ++s) {
    Tape<float> tape;
    Tensor<float> loss;
    for (int b = 0; b < batch; ++b) {
      const auto& img = tensors[rng.next_below(tensors.size())];
      auto l = mse(decode_t(encode_t(img)), img);
      loss = b == 0 ? l : add(loss, l);
    }
    tape.backward(scale(loss, 1.0f / batch));
    opt.step();
  }
}

void ToyCodec::collect(const std::string& prefix, ParamMap<float>& pm) const {
  enc1.collect(prefix + ".enc1", pm);
  enc2.collect(prefix + ".enc2", pm);
  dec1.collect(prefix + ".dec1", pm);
  dec2.collect(prefix + ".dec2", pm);
}

void ToyCodec::set_frozen() {
  ParamMap<float> pm;
  collect("codec", pm);
  for (auto& [name, t] : pm.items) t.set_requires_grad(false);
}

}  // namespace xmdpt
