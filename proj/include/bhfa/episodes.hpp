#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bhfa/rng.hpp"
#include "bhfa/tensor.hpp"

namespace bhfa {

enum class Split { base, validation, test };

std::string split_name(Split s);

// Immutable labeled image collection for one split. Images share one
// (C,H,W) shape and are normalized to [0,1].
struct LabeledDataset {
  std::vector<Tensor> images;
  std::vector<int> labels;  // index into class_names
  std::vector<std::string> class_names;
  Split split = Split::base;

  int n_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<std::vector<int>> by_class() const;  // sample indices per class
  void validate() const;
};

struct EpisodeSpec {
  int ways = 5;
  int n_shot = 1;
  int n_query = 15;
  std::uint64_t seed = 0;

  void validate() const;
};

// One sampled task: class-major batches with local labels in [0, ways).
struct Episode {
  Tensor support;  // (ways*n_shot, C, H, W)
  std::vector<int> support_class;
  Tensor query;  // (ways*n_query, C, H, W)
  std::vector<int> query_class;
  std::vector<int> class_map;  // local way -> dataset class id
};

// ---- codecs ----

// Binary PPM (P6, 3 channels) or PGM (P5, 1 channel), 8-bit, divided by 255.
Tensor decode_pnm(const std::string& path);

Tensor resize_nearest(const Tensor& image, int side);

// Raw tensor container: magic "BHFT", u32 image count, then per image
// u32 C,H,W and little-endian f64 values.
void save_bhft(const std::string& path, const std::vector<Tensor>& images);
std::vector<Tensor> load_bhft(const std::string& path);

// ---- dataset construction ----

struct SplitAssignment {
  Split split = Split::base;
  int side = 32;
  // When the class lists below are all empty the 4:1:2 sample-ratio partition
  // applies per class in sorted file order (validation floor(n/7), test
  // floor(2n/7), remainder to the base split), and every class appears in
  // every split. Otherwise each split owns exactly the listed classes, and
  // the base and test lists must be disjoint.
  std::vector<std::string> base_classes, validation_classes, test_classes;

  bool ratio_mode() const {
    return base_classes.empty() && validation_classes.empty() && test_classes.empty();
  }
};

// Loads <path>/<class_name>/<file> trees (PPM/PGM/BHFT files) or a BHFT
// dataset directory written by save_bhft_dataset (manifest.json + one BHFT
// file). Images are nearest-neighbor resized to assign.side.
LabeledDataset load_image_directory(const std::string& path, const SplitAssignment& assign);

// Writes <dir>/dataset.bhft plus <dir>/manifest.json (class names and one
// label per image) in a layout load_image_directory understands.
void save_bhft_dataset(const std::string& dir, const LabeledDataset& ds);

// Synthetic classes: a fixed smooth template per class (quadrant-balanced
// signed bumps at seeded random positions, so coarse intensity statistics
// match across classes) plus per-sample Gaussian pixel noise, clipped to
// [0,1]. Templates are redrawn (bounded attempts) until the mean inter-class
// template L2 distance exceeds 5x the expected per-sample noise norm; if the
// bound is unattainable the most separated attempt is kept.
LabeledDataset synth_blobs(int n_classes, int per_class, int image_side, double noise_sigma,
                           std::uint64_t seed);

// Per-class 4:1:2 partition of an in-memory dataset (same rule as ratio-mode
// directory loading, applied in sample order).
LabeledDataset split_ratio(const LabeledDataset& ds, Split split);

// ---- episode sampling ----

// Chooses spec.ways classes uniformly among classes owning at least
// n_shot + n_query samples, then disjoint support/query samples per class.
// Deterministic per spec.seed.
Episode sample_episode(const LabeledDataset& ds, const EpisodeSpec& spec);

// ---- augmentation ----

// Deterministic kernel: optional horizontal flip, vertical flip, then
// quarter_turns in {0..3} counterclockwise quarter rotations.
Tensor augment_with(const Tensor& image, bool hflip, bool vflip, int quarter_turns);

// Each transform applied independently with probability 0.5; the rotation,
// when applied, is 90/180/270 degrees uniformly. Square images only.
Tensor augment(const Tensor& image, Rng& rng);

}  // namespace bhfa
