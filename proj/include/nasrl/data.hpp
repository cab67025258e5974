#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "nasrl/tensor.hpp"

namespace nasrl {

enum class SplitTag { train, val, test };

struct Dataset {
  Tensor images;  // [N,C,H,W]
  std::vector<int> labels;
  int class_count = 0;
  SplitTag split = SplitTag::train;

  std::size_t size() const noexcept { return labels.size(); }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather(const Dataset& data, std::span<const std::size_t> indices);

// Consecutive slices of `order`, the last one possibly short.
std::vector<Batch> make_batches(const Dataset& data, std::span<const std::size_t> order, int batch_size);

struct SyntheticSpec {
  int classes = 10;
  int per_class = 200;
  int size = 16;
  int channels = 3;
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;
};

// Class c is a fixed procedural pattern (oriented bars, checkerboard or
// rings, chosen by c mod 3 and parameterized by c / 3) with a class-dependent
// per-channel gain, plus i.i.d. Gaussian noise. Samples cycle through the
// classes. Each channel is normalized to zero mean and unit variance.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Zero mean, unit variance per channel over the whole set. Constant channels
// are only centred.
void normalize_per_channel(Tensor& images);

// IDX (big-endian) images (magic 0x00000803, N×rows×cols ubyte) and labels
// (magic 0x00000801, N ubyte). Pixels are scaled to [0,1] and, if requested,
// normalized. Throws FormatError naming the byte offset of the defect.
Dataset read_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 bool normalize = true);
Dataset decode_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                   bool normalize = true);

// Class-stratified split; round(fraction · class count) samples of every class
// go to the first set. Both sets keep the original sample order.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

}  // namespace nasrl
