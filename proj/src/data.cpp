#include "ppmn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "ppmn/image_io.hpp"

namespace ppmn {

namespace fs = std::filesystem;

char camera_letter(Camera camera) { return camera == Camera::A ? 'A' : 'B'; }

std::size_t Identity::count(Camera camera) const {
  return static_cast<std::size_t>(
      std::count_if(images.begin(), images.end(), [&](const ImageRecord& r) { return r.camera == camera; }));
}

std::size_t IdentityDataset::image_count() const {
  std::size_t total = 0;
  for (const Identity& id : identities) total += id.images.size();
  return total;
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  return entries;
}

}  // namespace

IdentityDataset load_dataset(const fs::path& root, Extent2 input_size) {
  if (!fs::is_directory(root)) {
    throw DataError("dataset root " + root.string() + " is not a directory");
  }
  IdentityDataset dataset;
  dataset.source = root.string();
  dataset.image_size = input_size;
  for (const fs::path& id_dir : sorted_entries(root)) {
    if (!fs::is_directory(id_dir)) continue;
    Identity identity{id_dir.filename().string(), {}};
    for (const fs::path& cam_dir : sorted_entries(id_dir)) {
      if (!fs::is_directory(cam_dir)) continue;
      const std::string cam = cam_dir.filename().string();
      if (cam != "A" && cam != "B") {
        throw DataError("unknown camera id '" + cam + "' in " + id_dir.string() + " (expected A or B)");
      }
      for (const fs::path& file : sorted_entries(cam_dir)) {
        if (file.extension() != ".ppm") continue;
        const Rgb8Image raw = read_ppm(file);
        identity.images.push_back(ImageRecord{cam == "A" ? Camera::A : Camera::B,
                                              to_tensor(resize_bilinear(raw, input_size.h, input_size.w)),
                                              file.string()});
      }
    }
    if (identity.images.empty()) {
      throw DataError("identity directory " + id_dir.string() + " holds no images");
    }
    dataset.identities.push_back(std::move(identity));
  }
  return dataset;
}

void write_dataset(const IdentityDataset& dataset, const fs::path& root) {
  for (const Identity& identity : dataset.identities) {
    std::size_t counters[2] = {0, 0};
    for (const ImageRecord& record : identity.images) {
      const fs::path dir = root / identity.id / std::string(1, camera_letter(record.camera));
      fs::create_directories(dir);
      char name[32];
      std::snprintf(name, sizeof name, "%03zu.ppm", counters[record.camera == Camera::A ? 0 : 1]++);
      write_ppm(dir / name, to_rgb8(record.image));
    }
  }
}

std::pair<IdentityDataset, IdentityDataset> split_identities(const IdentityDataset& dataset, std::size_t n_train,
                                                             std::size_t n_test, std::uint64_t seed) {
  const std::size_t total = dataset.identities.size();
  if (n_train + n_test > total) {
    throw DataError("cannot split " + std::to_string(total) + " identities into " + std::to_string(n_train) +
                    " train + " + std::to_string(n_test) + " test");
  }
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  auto take = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> chosen(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(begin + count));
    std::sort(chosen.begin(), chosen.end());
    IdentityDataset part{dataset.source, dataset.image_size, {}};
    for (std::size_t i : chosen) part.identities.push_back(dataset.identities[i]);
    return part;
  };
  return {take(0, n_train), take(n_train, n_test)};
}

namespace {

std::vector<ImageRef> refs_for(const IdentityDataset& dataset, Camera camera) {
  std::vector<ImageRef> refs;
  for (std::size_t i = 0; i < dataset.identities.size(); ++i) {
    const auto& images = dataset.identities[i].images;
    for (std::size_t j = 0; j < images.size(); ++j) {
      if (images[j].camera == camera) refs.push_back({i, j});
    }
  }
  return refs;
}

}  // namespace

std::vector<PairSample> positive_pairs(const IdentityDataset& dataset) {
  std::vector<PairSample> pairs;
  for (std::size_t i = 0; i < dataset.identities.size(); ++i) {
    const auto& images = dataset.identities[i].images;
    for (std::size_t a = 0; a < images.size(); ++a) {
      if (images[a].camera != Camera::A) continue;
      for (std::size_t b = 0; b < images.size(); ++b) {
        if (images[b].camera == Camera::B) pairs.push_back({{i, a}, {i, b}, 1});
      }
    }
  }
  return pairs;
}

std::vector<PairSample> negative_pairs(const IdentityDataset& dataset) {
  const auto a_refs = refs_for(dataset, Camera::A);
  const auto b_refs = refs_for(dataset, Camera::B);
  std::vector<PairSample> pairs;
  for (const ImageRef& a : a_refs) {
    for (const ImageRef& b : b_refs) {
      if (a.identity != b.identity) pairs.push_back({a, b, 0});
    }
  }
  return pairs;
}

std::vector<PairSample> generate_pairs(const IdentityDataset& dataset, double negative_ratio, std::uint64_t seed) {
  if (dataset.identities.size() < 2) {
    throw DataError("pair generation needs at least 2 identities, got " + std::to_string(dataset.identities.size()));
  }
  if (negative_ratio < 0.0) {
    throw DataError("negative_ratio must be >= 0");
  }
  std::vector<PairSample> pairs = positive_pairs(dataset);
  if (pairs.empty()) {
    throw DataError("no cross-camera positive pairs available");
  }
  const auto a_refs = refs_for(dataset, Camera::A);
  const auto b_refs = refs_for(dataset, Camera::B);
  const auto wanted = static_cast<std::size_t>(std::llround(negative_ratio * static_cast<double>(pairs.size())));
  Rng rng(seed);
  // Joint rejection sampling is uniform over all negative pairs.
  for (std::size_t k = 0; k < wanted;) {
    const ImageRef a = a_refs[rng.index(a_refs.size())];
    const ImageRef b = b_refs[rng.index(b_refs.size())];
    if (a.identity == b.identity) continue;
    pairs.push_back({a, b, 0});
    ++k;
  }
  rng.shuffle(std::span<PairSample>(pairs));
  return pairs;
}

Tensor translate(const Tensor& image, Translation offset) {
  const Shape& s = image.shape();
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        const long sy = static_cast<long>(y) + offset.dy;
        if (sy < 0 || sy >= static_cast<long>(s.h)) continue;
        for (std::size_t x = 0; x < s.w; ++x) {
          const long sx = static_cast<long>(x) + offset.dx;
          if (sx < 0 || sx >= static_cast<long>(s.w)) continue;
          out.at(n, c, y, x) = image.at(n, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        }
      }
    }
  }
  return out;
}

Translation max_translation(Extent2 image_size) {
  return {static_cast<int>(std::lround(8.0 * static_cast<double>(image_size.h) / 160.0)),
          static_cast<int>(std::lround(4.0 * static_cast<double>(image_size.w) / 80.0))};
}

std::array<Translation, 5> draw_translations(Extent2 image_size, Rng& rng) {
  const Translation limit = max_translation(image_size);
  std::array<Translation, 5> offsets;
  for (Translation& t : offsets) {
    t.dy = static_cast<int>(rng.uniform_int(-limit.dy, limit.dy));
    t.dx = static_cast<int>(rng.uniform_int(-limit.dx, limit.dx));
  }
  return offsets;
}

std::array<Tensor, 5> augment_translations(const Tensor& image, const std::array<Translation, 5>& offsets) {
  std::array<Tensor, 5> out;
  for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = translate(image, offsets[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic identities

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kPalette[] = {
    {0.85, 0.10, 0.10}, {0.10, 0.70, 0.20}, {0.15, 0.25, 0.85}, {0.90, 0.85, 0.10}, {0.80, 0.15, 0.75},
    {0.10, 0.80, 0.80}, {0.95, 0.50, 0.05}, {0.92, 0.92, 0.92}, {0.08, 0.08, 0.08},
};
constexpr int kPaletteSize = static_cast<int>(std::size(kPalette));

constexpr Rgb kHeadTones[] = {{0.95, 0.80, 0.65}, {0.60, 0.40, 0.25}, {0.30, 0.20, 0.10}, {0.85, 0.70, 0.30}};
constexpr int kHeadToneCount = static_cast<int>(std::size(kHeadTones));

}  // namespace

std::vector<SynthAttributes> synth_attributes(std::size_t n_ids, std::uint64_t seed) {
  Rng rng(mix_seed({seed, 0xa77ULL}));
  std::set<SynthAttributes> seen;
  std::vector<SynthAttributes> out;
  while (out.size() < n_ids) {
    SynthAttributes a;
    a.torso_color = static_cast<int>(rng.index(kPaletteSize));
    a.legs_color = static_cast<int>(rng.index(kPaletteSize));
    a.head_color = static_cast<int>(rng.index(kHeadToneCount));
    a.bag_color = rng.uniform() < 0.5 ? -1 : static_cast<int>(rng.index(kPaletteSize));
    a.torso_width = static_cast<int>(rng.index(2));
    a.stripe = static_cast<int>(rng.index(2));
    if (seen.insert(a).second) out.push_back(a);
  }
  return out;
}

SynthLayout synth_layout(const SynthAttributes& attrs, std::size_t identity, Camera camera, std::size_t index,
                         std::uint64_t seed, Extent2 image_size) {
  Rng rng(mix_seed({seed, identity, camera == Camera::A ? 0u : 1u, index, 0x1a7ULL}));
  const double sx = static_cast<double>(image_size.w) / 80.0;
  const double sy = static_cast<double>(image_size.h) / 160.0;
  const double jitter = camera == Camera::A ? 4.0 : 12.0;
  SynthLayout layout;
  layout.center_x = 40.0 * sx + rng.uniform(-jitter, jitter) * sx;
  layout.top_y = 8.0 * sy + rng.uniform(-jitter, jitter) * sy * 0.5;
  layout.torso_half_width = (attrs.torso_width == 0 ? 11.0 : 16.0) * sx;
  layout.brightness = camera == Camera::A ? rng.uniform(0.95, 1.05) : rng.uniform(0.70, 0.85);
  if (attrs.bag_color >= 0) {
    layout.has_bag = true;
    const double width = 12.0 * sx;
    // Camera B sees the person mirrored, so the bag switches sides.
    if (camera == Camera::A) {
      layout.bag_x1 = layout.center_x - layout.torso_half_width;
      layout.bag_x0 = layout.bag_x1 - width;
    } else {
      layout.bag_x0 = layout.center_x + layout.torso_half_width;
      layout.bag_x1 = layout.bag_x0 + width;
    }
  }
  return layout;
}

namespace {

Tensor render_view(const SynthAttributes& attrs, std::size_t identity, Camera camera, std::size_t index,
                   std::uint64_t seed, Extent2 size) {
  const SynthLayout layout = synth_layout(attrs, identity, camera, index, seed, size);
  Rng noise(mix_seed({seed, identity, camera == Camera::A ? 0u : 1u, index, 0x9015eULL}));
  const double sy = static_cast<double>(size.h) / 160.0;
  const double sx = static_cast<double>(size.w) / 80.0;
  const Rgb background = camera == Camera::A ? Rgb{0.55, 0.55, 0.50} : Rgb{0.30, 0.35, 0.42};

  const double top = layout.top_y;
  const double cx = layout.center_x;
  const double head_r = 9.0 * std::min(sx, sy);
  const double head_cy = top + 11.0 * sy;
  const double torso_y0 = top + 22.0 * sy, torso_y1 = top + 72.0 * sy;
  const double stripe_y0 = top + 40.0 * sy, stripe_y1 = top + 48.0 * sy;
  const double legs_y1 = top + 140.0 * sy;
  const double legs_half = layout.torso_half_width * 0.8;
  const double leg_gap = 1.5 * sx;
  const double bag_y0 = top + 40.0 * sy, bag_y1 = top + 68.0 * sy;

  Tensor image(Shape{1, 3, size.h, size.w});
  for (std::size_t y = 0; y < size.h; ++y) {
    const double py = static_cast<double>(y) + 0.5;
    for (std::size_t x = 0; x < size.w; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      Rgb color = background;
      bool person = false;
      if ((px - cx) * (px - cx) + (py - head_cy) * (py - head_cy) <= head_r * head_r) {
        color = kHeadTones[attrs.head_color];
        person = true;
      } else if (py >= torso_y0 && py < torso_y1 && std::abs(px - cx) <= layout.torso_half_width) {
        color = kPalette[attrs.torso_color];
        if (attrs.stripe != 0 && py >= stripe_y0 && py < stripe_y1) {
          color = {1.0 - color.r, 1.0 - color.g, 1.0 - color.b};
        }
        person = true;
      } else if (py >= torso_y1 && py < legs_y1 && std::abs(px - cx) <= legs_half && std::abs(px - cx) >= leg_gap) {
        color = kPalette[attrs.legs_color];
        person = true;
      } else if (layout.has_bag && py >= bag_y0 && py < bag_y1 && px >= layout.bag_x0 && px < layout.bag_x1) {
        color = kPalette[attrs.bag_color];
        person = true;
      }
      const double gain = person ? layout.brightness : (camera == Camera::A ? 1.0 : 0.9);
      const double amp = person ? 0.03 : 0.05;
      const double channel[3] = {color.r, color.g, color.b};
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(channel[c] * gain + noise.uniform(-amp, amp), 0.0, 1.0);
        image.at(0, c, y, x) = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
      }
    }
  }
  return image;
}

}  // namespace

IdentityDataset synth_dataset(std::size_t n_ids, std::size_t per_camera, std::uint64_t seed, Extent2 image_size) {
  if (n_ids < 2) {
    throw DataError("synthetic dataset needs at least 2 identities");
  }
  if (per_camera == 0) {
    throw DataError("synthetic dataset needs at least 1 image per camera");
  }
  const auto attributes = synth_attributes(n_ids, seed);
  IdentityDataset dataset{"synthetic(seed=" + std::to_string(seed) + ")", image_size, {}};
  for (std::size_t i = 0; i < n_ids; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "id%04zu", i);
    Identity identity{id, {}};
    for (Camera camera : {Camera::A, Camera::B}) {
      for (std::size_t k = 0; k < per_camera; ++k) {
        char path[48];
        std::snprintf(path, sizeof path, "%s/%c/%03zu.ppm", id, camera_letter(camera), k);
        identity.images.push_back(
            ImageRecord{camera, render_view(attributes[i], i, camera, k, seed, image_size), path});
      }
    }
    dataset.identities.push_back(std::move(identity));
  }
  return dataset;
}

}  // namespace ppmn
