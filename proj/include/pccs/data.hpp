#pragma once
// Synthetic dataset generation, on-disk dataset I/O, split management and
// the augmentation pipeline (with the inverse warp the teacher branch needs).
//
// Dataset directory:
//   images/<id>.png   8-bit grayscale
//   masks/<id>.png    8-bit, pixel value = class label
//   meta.csv          id,shape,classes
//   splits.csv        id,role   (role: labeled | unlabeled | val | test)

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pccs/geometry.hpp"

namespace pccs {

namespace fs = std::filesystem;

enum class ClassMode { Binary, ThreeClass };

ClassMode parse_class_mode(const std::string& s);
std::string to_string(ClassMode m);
int class_count(ClassMode m);

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

struct Sample {
  std::string id;
  std::string kind;  // "ellipse" or "star" for synthetic data
  GrayImage image;   // intensities in [0, 1]
  std::optional<SegMask> mask;
};

// 8-bit grayscale PNG.
std::vector<uint8_t> read_png8(const fs::path& path, int& height, int& width);
void write_png8(const fs::path& path, std::span<const uint8_t> pixels, int height, int width);
// Interleaved RGB, 3 bytes per pixel.
void write_png_rgb8(const fs::path& path, std::span<const uint8_t> pixels, int height, int width);

struct SyntheticOptions {
  int n = 200;
  ClassMode classes = ClassMode::Binary;
  uint64_t seed = 7;
  int size = 64;
  double labeled_fraction = 0.1;  // for the splits.csv written alongside
};

struct DatasetSummary {
  int samples = 0;
  int num_classes = 0;
  std::map<int32_t, int64_t> class_pixels;
  std::map<std::string, int> kinds;
};

// One synthetic sample, already quantized to 8 bits as it would be stored.
Sample synthesize_sample(int index, const SyntheticOptions& options);
DatasetSummary generate_synthetic(const fs::path& out, const SyntheticOptions& options);

struct Dataset {
  fs::path root;
  int num_classes = 0;
  std::vector<Sample> samples;

  const Sample& get(const std::string& id) const;
  std::vector<std::pair<std::string, std::string>> ids_with_kinds() const;
  std::map<std::string, std::size_t> index;
};

Dataset read_dataset(const fs::path& root);
void write_dataset_sample(const fs::path& root, const Sample& sample);

struct SplitManifest {
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;
  std::vector<std::string> val;
  std::vector<std::string> test;
  double labeled_fraction = 0.0;
  uint64_t seed = 0;

  bool operator==(const SplitManifest&) const = default;
};

// 70/10/20 train/val/test, labeled_fraction of train labeled; stratified by
// kind. Throws std::domain_error when the labeled set would be empty.
SplitManifest make_splits(const std::vector<std::pair<std::string, std::string>>& ids_with_kinds,
                          double labeled_fraction, uint64_t seed);
void write_splits_csv(const fs::path& path, const SplitManifest& splits);
SplitManifest read_splits_csv(const fs::path& path);

struct AugmentParams {
  int height = 0;
  int width = 0;
  bool hflip = false;
  bool vflip = false;
  bool crop = false;
  int crop_y = 0, crop_x = 0, crop_h = 0, crop_w = 0;
  bool noise = false;
  double sigma = 0.0;
  uint64_t noise_seed = 0;

  bool geometric() const { return hflip || vflip || crop; }
};

AugmentParams sample_augment_params(int height, int width, uint64_t seed);

struct Augmented {
  GrayImage image;
  std::optional<SegMask> mask;
  AugmentParams params;
};

// Image: crop+resize is bilinear; mask: nearest. Noise touches the image only.
Augmented apply_augment(const GrayImage& image, const SegMask* mask, const AugmentParams& params);
Augmented augment(const Sample& sample, uint64_t seed);

// Maps pixel-major values (channels per pixel) from the augmented frame back
// onto the original grid. Pixels outside the crop window get 0 and
// valid = 0. Bilinear resampling keeps probability vectors on the simplex.
std::vector<double> invert_augment(std::span<const double> values, int channels,
                                   const AugmentParams& params, std::vector<uint8_t>* valid);

// Zero mean, unit (population) variance. A constant image is only centred.
GrayImage normalize(const GrayImage& image);

}  // namespace pccs
