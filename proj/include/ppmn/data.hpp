#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ppmn/ops.hpp"
#include "ppmn/rng.hpp"
#include "ppmn/tensor.hpp"

namespace ppmn {

// Dataset contract violation: bad layout, too few identities, no pairs.
class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Camera { A, B };

char camera_letter(Camera camera);

struct ImageRecord {
  Camera camera = Camera::A;
  Tensor image;  // [1, 3, H, W], values in [0, 1]
  std::string path;
};

struct Identity {
  std::string id;
  std::vector<ImageRecord> images;

  std::size_t count(Camera camera) const;
};

struct IdentityDataset {
  std::string source;
  Extent2 image_size{160, 80};
  std::vector<Identity> identities;

  std::size_t image_count() const;
};

// Position of one image inside a dataset.
struct ImageRef {
  std::size_t identity = 0;
  std::size_t image = 0;
  friend auto operator<=>(const ImageRef&, const ImageRef&) = default;
};

// `a` is always the camera-A image, `b` the camera-B image.
struct PairSample {
  ImageRef a;
  ImageRef b;
  int label = 0;  // 1 iff both images show the same identity
  friend bool operator==(const PairSample&, const PairSample&) = default;
};

// Reads `<root>/<identity>/<camera A|B>/<name>.ppm`, resizing to `input_size`.
// Identities and files are visited in lexicographic order.
IdentityDataset load_dataset(const std::filesystem::path& root, Extent2 input_size);
// Writes the canonical layout read by load_dataset.
void write_dataset(const IdentityDataset& dataset, const std::filesystem::path& root);

// Seeded identity-level partition into disjoint train and test sets.
std::pair<IdentityDataset, IdentityDataset> split_identities(const IdentityDataset& dataset, std::size_t n_train,
                                                             std::size_t n_test, std::uint64_t seed);

// Every same-identity (camera A, camera B) pair.
std::vector<PairSample> positive_pairs(const IdentityDataset& dataset);
// Every different-identity (camera A, camera B) pair.
std::vector<PairSample> negative_pairs(const IdentityDataset& dataset);

// One epoch: all positives plus round(negative_ratio * |positives|)
// negatives drawn uniformly with replacement, shuffled.
std::vector<PairSample> generate_pairs(const IdentityDataset& dataset, double negative_ratio, std::uint64_t seed);

// Integer offset of the sampling window: out(y, x) = in(y + dy, x + dx),
// zero where the window leaves the image.
struct Translation {
  int dy = 0;
  int dx = 0;
  friend bool operator==(const Translation&, const Translation&) = default;
};

Tensor translate(const Tensor& image, Translation offset);

// Largest offsets for an image of this size: 8 rows x 4 columns at 160x80,
// scaled proportionally for other sizes.
Translation max_translation(Extent2 image_size);
std::array<Translation, 5> draw_translations(Extent2 image_size, Rng& rng);
std::array<Tensor, 5> augment_translations(const Tensor& image, const std::array<Translation, 5>& offsets);

// Desk-scale stand-in for a re-identification dataset. Each identity is a
// set of coloured parts (head, torso, legs, optional bag); camera B mirrors
// the person, shifts it by up to 12 px (at 160x80) and darkens it, so the
// bag changes sides between views. Pixel values are multiples of 1/255.
IdentityDataset synth_dataset(std::size_t n_ids, std::size_t per_camera, std::uint64_t seed,
                              Extent2 image_size = {160, 80});

// Identity attributes used by synth_dataset, exposed for collision checks.
struct SynthAttributes {
  int torso_color = 0;
  int legs_color = 0;
  int head_color = 0;
  int bag_color = -1;  // -1: no bag
  int torso_width = 0;
  int stripe = 0;
  friend auto operator<=>(const SynthAttributes&, const SynthAttributes&) = default;
};

std::vector<SynthAttributes> synth_attributes(std::size_t n_ids, std::uint64_t seed);

// Geometry of one rendered view, in pixels.
struct SynthLayout {
  double center_x = 0.0;  // person's vertical axis
  double top_y = 0.0;
  double torso_half_width = 0.0;
  bool has_bag = false;
  double bag_x0 = 0.0;  // bag spans columns [bag_x0, bag_x1)
  double bag_x1 = 0.0;
  double brightness = 1.0;
};

SynthLayout synth_layout(const SynthAttributes& attrs, std::size_t identity, Camera camera, std::size_t index,
                         std::uint64_t seed, Extent2 image_size);

}  // namespace ppmn
