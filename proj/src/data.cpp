#include "nasrl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

#include "nasrl/errors.hpp"
#include "nasrl/rng.hpp"

namespace nasrl {

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
  const int c = data.channels(), h = data.height(), w = data.width();
  const std::size_t plane = static_cast<std::size_t>(c) * h * w;
  Batch b{Tensor({static_cast<int>(indices.size()), c, h, w}), {}};
  b.labels.reserve(indices.size());
  auto src = data.images.data();
  auto dst = b.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t idx = indices[i];
    if (idx >= data.size()) throw IndexError("gather: sample index " + std::to_string(idx) + " out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx * plane), plane,
                dst.begin() + static_cast<std::ptrdiff_t>(i * plane));
    b.labels.push_back(data.labels[idx]);
  }
  return b;
}

std::vector<Batch> make_batches(const Dataset& data, std::span<const std::size_t> order, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(batch_size));
    out.push_back(gather(data, order.subspan(start, len)));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double class_pattern(int cls, int classes, int y, int x, int size) {
  const int family = cls % 3;
  const int variant = cls / 3;
  const int per_family = (classes + 2 - family) / 3;  // classes sharing this family
  const double cy = (size - 1) / 2.0, cx = (size - 1) / 2.0;
  switch (family) {
    case 0: {
      const double angle = std::numbers::pi * (variant + 0.5) / std::max(per_family, 1);
      const double u = (x - cx) * std::cos(angle) + (y - cy) * std::sin(angle);
      return std::sin(2.0 * std::numbers::pi * u / 4.0);
    }
    case 1: {
      const int cell = 1 + variant;
      return ((x / cell + y / cell) % 2 == 0) ? 1.0 : -1.0;
    }
    default: {
      const double r = std::hypot(x - cx, y - cy);
      return std::cos(2.0 * std::numbers::pi * r / (3.0 + 2.0 * variant));
    }
  }
}

double channel_gain(int cls, int classes, int channel) {
  return 1.0 + 0.5 * std::cos(2.0 * std::numbers::pi * (cls + 3.0 * channel) / classes);
}

}  // namespace

void normalize_per_channel(Tensor& images) {
  if (images.numel() == 0) return;
  const int n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  auto d = images.data();
  const double count = static_cast<double>(n) * hw;
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < hw; ++i) s += d[(static_cast<std::size_t>(b) * c + ch) * hw + i];
    const double mean = s / count;
    double v = 0.0;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < hw; ++i) {
        const double dv = d[(static_cast<std::size_t>(b) * c + ch) * hw + i] - mean;
        v += dv * dv;
      }
    const double sd = std::sqrt(v / count);
    const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < hw; ++i) {
        double& x = d[(static_cast<std::size_t>(b) * c + ch) * hw + i];
        x = (x - mean) * inv;
      }
  }
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic: classes must be >= 2");
  if (spec.size < 8) throw ConfigError("synthetic: size must be >= 8");
  if (spec.per_class < 1) throw ConfigError("synthetic: per_class must be >= 1");
  if (spec.channels < 1) throw ConfigError("synthetic: channels must be >= 1");
  if (spec.noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be >= 0");

  const int n = spec.classes * spec.per_class;
  const int s = spec.size;
  Dataset ds;
  ds.images = Tensor({n, spec.channels, s, s});
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.class_count = spec.classes;
  Rng rng(spec.seed);
  auto d = ds.images.data();
  std::size_t idx = 0;
  for (int i = 0; i < n; ++i) {
    const int cls = i % spec.classes;
    ds.labels[static_cast<std::size_t>(i)] = cls;
    for (int ch = 0; ch < spec.channels; ++ch) {
      const double gain = channel_gain(cls, spec.classes, ch);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          double v = gain * class_pattern(cls, spec.classes, y, x, s);
          if (spec.noise_sigma > 0.0) v += spec.noise_sigma * standard_normal(rng);
          d[idx++] = v;
        }
    }
  }
  normalize_per_channel(ds.images);
  return ds;
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (bytes.size() < offset + 4) throw FormatError(std::string("truncated IDX header (") + what + ")", bytes.size());
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset decode_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, bool normalize) {
  constexpr std::uint32_t kImageMagic = 0x00000803;
  constexpr std::uint32_t kLabelMagic = 0x00000801;
  if (const auto m = read_be32(images, 0, "images magic"); m != kImageMagic) {
    throw FormatError("images file: bad magic " + hex32(m) + ", expected 0x00000803", 0);
  }
  if (const auto m = read_be32(labels, 0, "labels magic"); m != kLabelMagic) {
    throw FormatError("labels file: bad magic " + hex32(m) + ", expected 0x00000801", 0);
  }
  const std::uint32_t n = read_be32(images, 4, "image count");
  const std::uint32_t rows = read_be32(images, 8, "rows");
  const std::uint32_t cols = read_be32(images, 12, "cols");
  const std::uint32_t nl = read_be32(labels, 4, "label count");
  if (n != nl) {
    throw FormatError("label count " + std::to_string(nl) + " does not match image count " + std::to_string(n), 4);
  }
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  const std::size_t need_images = 16 + static_cast<std::size_t>(n) * plane;
  if (images.size() < need_images) throw FormatError("images file truncated", images.size());
  if (labels.size() < 8 + static_cast<std::size_t>(n)) throw FormatError("labels file truncated", labels.size());

  Dataset ds;
  ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  auto d = ds.images.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = images[16 + i] / 255.0;
  ds.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = labels[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  if (normalize) normalize_per_channel(ds.images);
  return ds;
}

Dataset read_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 bool normalize) {
  const auto images = slurp(images_path);
  const auto labels = slurp(labels_path);
  return decode_idx(images, labels, normalize);
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split: fraction must lie in (0,1)");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(data.class_count, 0)));
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
  std::vector<std::size_t> first, second;
  for (auto& members : by_class) {
    nasrl::shuffle(members.begin(), members.end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    first.insert(first.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    second.insert(second.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  auto build = [&](const std::vector<std::size_t>& idx, SplitTag tag) {
    Batch b = gather(data, idx);
    return Dataset{b.images, std::move(b.labels), data.class_count, tag};
  };
  return {build(first, SplitTag::train), build(second, SplitTag::val)};
}

}  // namespace nasrl
