#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "filmens/rng.hpp"
#include "filmens/tensor.hpp"

namespace filmens {

template <typename S>
struct Dataset {
  Tensor<S> inputs;          // N x sample-shape
  std::vector<int> targets;  // N labels in [0, K)
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return targets.size(); }
  Shape sample_shape() const {
    Shape s(inputs.shape().begin() + 1, inputs.shape().end());
    return s;
  }

  void validate() const {
    if (targets.empty()) throw ValueError("Dataset '" + name + "' is empty");
    if (inputs.extent(0) != targets.size())
      throw ShapeError("Dataset '" + name + "': " + std::to_string(inputs.extent(0)) +
                       " inputs vs " + std::to_string(targets.size()) + " targets");
    for (std::size_t i = 0; i < targets.size(); ++i)
      if (targets[i] < 0 || targets[i] >= num_classes)
        throw ValueError("Dataset '" + name + "': label " + std::to_string(targets[i]) +
                         " out of range at index " + std::to_string(i));
  }
};

/// In-distribution / out-of-distribution dataset pair with matching input
/// shapes; the OOD targets are never used.
template <typename S>
struct OodPair {
  Dataset<S> in_distribution;
  Dataset<S> out_of_distribution;
};

// ---------------------------------------------------------------------------
// Synthetic blob generators
// ---------------------------------------------------------------------------

namespace detail {
template <typename S>
Dataset<S> gen_blobs_at(int num_classes, std::size_t n_per_class, std::size_t dim, double spread,
                        std::uint64_t seed, const std::vector<double>& mean_offset,
                        std::string name) {
  if (num_classes < 2) throw ValueError("gen_blobs: need at least 2 classes");
  if (dim < 2) throw ValueError("gen_blobs: need dim >= 2");
  if (n_per_class < 1) throw ValueError("gen_blobs: need n_per_class >= 1");
  RngStream rng(seed, streams::kData);
  const std::size_t n = static_cast<std::size_t>(num_classes) * n_per_class;
  Dataset<S> ds;
  ds.inputs = Tensor<S>({n, dim});
  ds.targets.resize(n);
  ds.num_classes = num_classes;
  ds.name = std::move(name);
  constexpr double kRadius = 3.0;
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / num_classes;
    std::vector<double> mean(dim, 0.0);
    mean[0] = kRadius * std::cos(angle);
    mean[1] = kRadius * std::sin(angle);
    for (std::size_t d = 0; d < dim && d < mean_offset.size(); ++d) mean[d] += mean_offset[d];
    for (std::size_t j = 0; j < n_per_class; ++j, ++row) {
      S* x = ds.inputs.data() + row * dim;
      for (std::size_t d = 0; d < dim; ++d)
        x[d] = static_cast<S>(mean[d] + spread * rng.normal());
      ds.targets[row] = c;
    }
  }
  return ds;
}
}  // namespace detail

/// K isotropic Gaussian blobs with class means on a circle of radius 3 in
/// the first two dimensions.  Pure function of the seed.
template <typename S>
Dataset<S> gen_blobs(int num_classes, std::size_t n_per_class, std::size_t dim, double spread,
                     std::uint64_t seed) {
  return detail::gen_blobs_at<S>(num_classes, n_per_class, dim, spread, seed, {}, "blobs");
}

/// gen_blobs with a spread large enough that the class densities overlap and
/// the Bayes error is strictly positive, so calibration is non-trivial.
template <typename S>
Dataset<S> gen_overlap_blobs(int num_classes, std::size_t n_per_class, std::size_t dim,
                             double spread = 1.5, std::uint64_t seed = 0) {
  auto ds = detail::gen_blobs_at<S>(num_classes, n_per_class, dim, spread, seed, {},
                                    "overlap_blobs");
  return ds;
}

/// In-distribution overlap blobs (K=4, dim=8) paired with the same generator
/// translated by `shift` along the third axis, which the in-distribution
/// means never occupy.  shift 0 yields a distributionally identical pair
/// drawn with a derived seed.
template <typename S>
OodPair<S> make_ood_pair(std::uint64_t seed, double shift = 6.0, std::size_t n_per_class = 500,
                         double spread = 1.5) {
  constexpr int kClasses = 4;
  constexpr std::size_t kDim = 8;
  OodPair<S> pair;
  pair.in_distribution =
      detail::gen_blobs_at<S>(kClasses, n_per_class, kDim, spread, seed, {}, "ood_in");
  std::vector<double> offset(kDim, 0.0);
  offset[2] = shift;
  pair.out_of_distribution = detail::gen_blobs_at<S>(kClasses, n_per_class, kDim, spread,
                                                     seed + 1000, offset, "ood_out");
  return pair;
}

/// Stratified split into (train, test); disjoint, union equals the input.
template <typename S>
std::pair<Dataset<S>, Dataset<S>> train_test_split(const Dataset<S>& ds, double test_fraction,
                                                   std::uint64_t seed) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw ValueError("train_test_split: test_fraction must be in (0,1)");
  ds.validate();
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.targets[i]].push_back(i);
  RngStream rng(seed, streams::kData);
  std::vector<std::size_t> train_idx, test_idx;
  for (int c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2)
      throw ValueError("train_test_split: class " + std::to_string(c) + " has " +
                       std::to_string(idx.size()) + " samples, cannot split");
    rng.shuffle(idx);
    const auto n_test = static_cast<std::size_t>(
        std::lround(test_fraction * static_cast<double>(idx.size())));
    const std::size_t nt = std::min(std::max<std::size_t>(n_test, 1), idx.size() - 1);
    test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + nt);
    train_idx.insert(train_idx.end(), idx.begin() + nt, idx.end());
  }
  const std::size_t sample = ds.inputs.size() / ds.size();
  auto take = [&](const std::vector<std::size_t>& which, const char* tag) {
    Dataset<S> out;
    Shape shape = ds.inputs.shape();
    shape[0] = which.size();
    out.inputs = Tensor<S>(shape);
    out.targets.reserve(which.size());
    out.num_classes = ds.num_classes;
    out.name = ds.name + "/" + tag;
    for (std::size_t i = 0; i < which.size(); ++i) {
      std::copy(ds.inputs.data() + which[i] * sample, ds.inputs.data() + (which[i] + 1) * sample,
                out.inputs.data() + i * sample);
      out.targets.push_back(ds.targets[which[i]]);
    }
    return out;
  };
  return {take(train_idx, "train"), take(test_idx, "test")};
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format
// ---------------------------------------------------------------------------

namespace cifar {
inline constexpr std::size_t kRecordBytes = 3073;  // 1 label byte + 3*32*32 pixels
inline constexpr std::size_t kImageBytes = 3072;
inline constexpr int kClasses = 10;
inline constexpr std::size_t kSide = 32;
}  // namespace cifar

/// Writes records in the CIFAR-10 binary layout: label byte followed by
/// 3072 pixel bytes (3 channel planes, row-major).  Used by tests and by the
/// synthetic image generator.
inline void write_cifar10_records(const std::string& path, const std::vector<std::uint8_t>& labels,
                                  const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != labels.size() * cifar::kImageBytes)
    throw ValueError("write_cifar10_records: pixel buffer does not match label count");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("write_cifar10_records: cannot open " + path);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    f.put(static_cast<char>(labels[i]));
    f.write(reinterpret_cast<const char*>(pixels.data() + i * cifar::kImageBytes),
            cifar::kImageBytes);
  }
}

namespace detail {
inline void read_cifar_file(const std::string& path, std::vector<std::uint8_t>& labels,
                            std::vector<std::uint8_t>& pixels) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("cifar10: cannot open " + path);
  const auto bytes = static_cast<std::size_t>(f.tellg());
  if (bytes == 0 || bytes % cifar::kRecordBytes != 0)
    throw FormatError("cifar10: " + path + " has " + std::to_string(bytes) +
                      " bytes, not a multiple of " + std::to_string(cifar::kRecordBytes));
  f.seekg(0);
  std::vector<std::uint8_t> buf(bytes);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!f) throw FormatError("cifar10: short read on " + path);
  const std::size_t n = bytes / cifar::kRecordBytes;
  const std::size_t base = labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = buf[i * cifar::kRecordBytes];
    if (label > 9)
      throw FormatError("cifar10: " + path + " record " + std::to_string(base + i) +
                        " has label byte " + std::to_string(label));
    labels.push_back(label);
    pixels.insert(pixels.end(), buf.begin() + i * cifar::kRecordBytes + 1,
                  buf.begin() + (i + 1) * cifar::kRecordBytes);
  }
}

template <typename S>
Dataset<S> cifar_to_dataset(const std::vector<std::uint8_t>& labels,
                            const std::vector<std::uint8_t>& pixels, std::string name) {
  Dataset<S> ds;
  const std::size_t n = labels.size();
  ds.inputs = Tensor<S>({n, 3, cifar::kSide, cifar::kSide});
  ds.targets.resize(n);
  ds.num_classes = cifar::kClasses;
  ds.name = std::move(name);
  for (std::size_t i = 0; i < n; ++i) {
    ds.targets[i] = labels[i];
    S* dst = ds.inputs.data() + i * cifar::kImageBytes;
    const std::uint8_t* src = pixels.data() + i * cifar::kImageBytes;
    for (std::size_t j = 0; j < cifar::kImageBytes; ++j)
      dst[j] = static_cast<S>(src[j]) / S(255);
  }
  return ds;
}

/// Standardizes both datasets in place with per-channel mean/std measured on
/// the first (training) dataset.
template <typename S>
void standardize_images(Dataset<S>& train, Dataset<S>& test) {
  const std::size_t ch = train.inputs.extent(1);
  const std::size_t plane = train.inputs.extent(2) * train.inputs.extent(3);
  std::vector<double> mean(ch, 0.0), var(ch, 0.0);
  const std::size_t n = train.size() * plane;
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const S* p = train.inputs.data() + (i * ch + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) mean[c] += static_cast<double>(p[j]);
    }
  for (std::size_t c = 0; c < ch; ++c) mean[c] /= static_cast<double>(n);
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const S* p = train.inputs.data() + (i * ch + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double d = static_cast<double>(p[j]) - mean[c];
        var[c] += d * d;
      }
    }
  for (auto& ds : {&train, &test})
    for (std::size_t i = 0; i < ds->size(); ++i)
      for (std::size_t c = 0; c < ch; ++c) {
        const double sd = std::sqrt(var[c] / static_cast<double>(n) + 1e-8);
        S* p = ds->inputs.data() + (i * ch + c) * plane;
        for (std::size_t j = 0; j < plane; ++j)
          p[j] = static_cast<S>((static_cast<double>(p[j]) - mean[c]) / sd);
      }
}

}  // namespace detail

/// Stratified subset: the first n/K samples of each class in dataset order
/// (remainders spread over the lowest class indices).
template <typename S>
Dataset<S> stratified_subset(const Dataset<S>& ds, std::size_t subset_size) {
  if (subset_size == 0 || subset_size > ds.size())
    throw ValueError("stratified subset: size " + std::to_string(subset_size) +
                     " out of range for " + std::to_string(ds.size()) + " samples");
  const auto k = static_cast<std::size_t>(ds.num_classes);
  std::vector<std::size_t> quota(k, subset_size / k);
  for (std::size_t c = 0; c < subset_size % k; ++c) quota[c]++;
  std::vector<std::size_t> keep;
  std::vector<std::size_t> seen(k, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<std::size_t>(ds.targets[i]);
    if (seen[c] < quota[c]) {
      keep.push_back(i);
      seen[c]++;
    }
  }
  for (std::size_t c = 0; c < k; ++c)
    if (seen[c] < quota[c])
      throw ValueError("stratified subset: class " + std::to_string(c) + " has only " +
                       std::to_string(seen[c]) + " of " + std::to_string(quota[c]) + " samples");
  Dataset<S> out;
  Shape shape = ds.inputs.shape();
  shape[0] = keep.size();
  out.inputs = Tensor<S>(shape);
  out.num_classes = ds.num_classes;
  out.name = ds.name + "/subset" + std::to_string(subset_size);
  const std::size_t sample = ds.inputs.size() / ds.size();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy(ds.inputs.data() + keep[i] * sample, ds.inputs.data() + (keep[i] + 1) * sample,
              out.inputs.data() + i * sample);
    out.targets.push_back(ds.targets[keep[i]]);
  }
  return out;
}

/// Loads the standard CIFAR-10 binary batches from a directory
/// (data_batch_1..5.bin for training, test_batch.bin for testing; missing
/// training batches beyond the first are tolerated).  Pixels are scaled to
/// [0,1] and standardized per channel with constants measured on the loaded
/// training subset.
template <typename S>
std::pair<Dataset<S>, Dataset<S>> load_cifar10_binary(
    const std::string& dir, std::optional<std::size_t> subset_size = std::nullopt,
    bool standardize = true) {
  namespace fs = std::filesystem;
  std::vector<std::uint8_t> train_labels, train_pixels, test_labels, test_pixels;
  bool any_train = false;
  for (int i = 1; i <= 5; ++i) {
    const std::string p = dir + "/data_batch_" + std::to_string(i) + ".bin";
    if (!fs::exists(p)) continue;
    detail::read_cifar_file(p, train_labels, train_pixels);
    any_train = true;
  }
  if (!any_train) throw FormatError("cifar10: no data_batch_*.bin found in " + dir);
  const std::string tp = dir + "/test_batch.bin";
  if (!fs::exists(tp)) throw FormatError("cifar10: missing test_batch.bin in " + dir);
  detail::read_cifar_file(tp, test_labels, test_pixels);

  auto train = detail::cifar_to_dataset<S>(train_labels, train_pixels, "cifar10/train");
  auto test = detail::cifar_to_dataset<S>(test_labels, test_pixels, "cifar10/test");
  if (subset_size) train = stratified_subset(train, *subset_size);
  if (standardize) detail::standardize_images(train, test);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Genome sequences
// ---------------------------------------------------------------------------

/// One-hot encodes a 41-nucleotide sequence over {A,C,G,T} to a channel-first
/// 4x41 tensor; column j carries a single 1 in the row of nucleotide j.
template <typename S>
Tensor<S> one_hot_sequence(const std::string& seq) {
  constexpr std::size_t kLen = 41;
  if (seq.size() != kLen)
    throw FormatError("one_hot_sequence: length " + std::to_string(seq.size()) + ", expected " +
                      std::to_string(kLen));
  Tensor<S> t({4, kLen});
  for (std::size_t j = 0; j < kLen; ++j) {
    std::size_t row;
    switch (seq[j]) {
      case 'A': row = 0; break;
      case 'C': row = 1; break;
      case 'G': row = 2; break;
      case 'T': row = 3; break;
      default:
        throw FormatError("one_hot_sequence: invalid character '" + std::string(1, seq[j]) +
                          "' at position " + std::to_string(j));
    }
    t.at(row, j) = S(1);
  }
  return t;
}

inline char decode_nucleotide(std::size_t row) {
  constexpr std::array<char, 4> kAlpha{'A', 'C', 'G', 'T'};
  return kAlpha.at(row);
}

/// Reads "SEQUENCE\tLABEL" lines (label 0 or 1) into a dataset of 4x41
/// one-hot tensors.
template <typename S>
Dataset<S> load_genome_text(const std::string& path,
                            std::optional<std::size_t> max_rows = std::nullopt) {
  std::ifstream f(path);
  if (!f) throw FormatError("genome: cannot open " + path);
  std::vector<std::string> seqs;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("genome: " + path + ":" + std::to_string(lineno) + ": missing tab");
    const std::string seq = line.substr(0, tab);
    const std::string lab = line.substr(tab + 1);
    if (lab != "0" && lab != "1")
      throw FormatError("genome: " + path + ":" + std::to_string(lineno) + ": label '" + lab +
                        "' is not 0 or 1");
    seqs.push_back(seq);
    labels.push_back(lab == "1" ? 1 : 0);
    if (max_rows && seqs.size() >= *max_rows) break;
  }
  if (seqs.empty()) throw FormatError("genome: " + path + " has no records");
  Dataset<S> ds;
  ds.inputs = Tensor<S>({seqs.size(), 4, 41});
  ds.targets = std::move(labels);
  ds.num_classes = 2;
  ds.name = "genome";
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Tensor<S> one;
    try {
      one = one_hot_sequence<S>(seqs[i]);
    } catch (const FormatError& e) {
      throw FormatError("genome: " + path + " record " + std::to_string(i) + ": " + e.what());
    }
    std::copy(one.data(), one.data() + one.size(), ds.inputs.data() + i * one.size());
  }
  return ds;
}

/// Synthetic 6mA-style task: random 41-mers where positives carry a planted
/// 6-mer motif at a random interior offset.  Balanced, seeded, learnable by
/// a kernel-10 convolution.
template <typename S>
Dataset<S> gen_genome_synthetic(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ValueError("gen_genome_synthetic: need n >= 2");
  static constexpr char kMotif[] = "TACGTA";
  constexpr std::size_t kMotifLen = 6;
  constexpr std::size_t kLen = 41;
  RngStream rng(seed, streams::kData);
  Dataset<S> ds;
  ds.inputs = Tensor<S>({n, 4, kLen});
  ds.targets.resize(n);
  ds.num_classes = 2;
  ds.name = "genome_synth";
  const char alpha[4] = {'A', 'C', 'G', 'T'};
  for (std::size_t i = 0; i < n; ++i) {
    std::string seq(kLen, 'A');
    for (auto& ch : seq) ch = alpha[rng.below(4)];
    const int label = static_cast<int>(i % 2);
    if (label == 1) {
      const auto pos = static_cast<std::size_t>(rng.below(kLen - kMotifLen + 1));
      for (std::size_t j = 0; j < kMotifLen; ++j) seq[pos + j] = kMotif[j];
    }
    ds.targets[i] = label;
    Tensor<S> one = one_hot_sequence<S>(seq);
    std::copy(one.data(), one.data() + one.size(), ds.inputs.data() + i * one.size());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Image augmentation and synthetic images
// ---------------------------------------------------------------------------

namespace detail {
inline std::size_t reflect_index(long i, long extent) {
  if (i < 0) i = -i;
  if (i >= extent) i = 2 * extent - 2 - i;
  return static_cast<std::size_t>(i);
}
}  // namespace detail

/// Reflect-pad by `pad`, crop back to the original size at a random offset,
/// then flip horizontally with probability hflip_prob.
template <typename S>
Tensor<S> augment_image(const Tensor<S>& x, std::size_t pad, double hflip_prob, RngStream& rng) {
  if (x.ndim() != 3)
    throw ShapeError("augment_image: need CxHxW input, got " + shape_str(x.shape()));
  const std::size_t ch = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (pad >= h || pad >= w)
    throw ValueError("augment_image: pad " + std::to_string(pad) + " too large for " +
                     shape_str(x.shape()));
  const bool flip = hflip_prob > 0.0 && rng.bernoulli(hflip_prob);
  std::size_t dy = 0, dx = 0;
  if (pad > 0) {
    dy = static_cast<std::size_t>(rng.below(2 * pad + 1));
    dx = static_cast<std::size_t>(rng.below(2 * pad + 1));
  }
  if (pad == 0 && !flip) return x;
  Tensor<S> out(x.shape());
  for (std::size_t c = 0; c < ch; ++c) {
    const S* src = x.data() + c * h * w;
    S* dst = out.data() + c * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t si =
          detail::reflect_index(static_cast<long>(i + dy) - static_cast<long>(pad),
                                static_cast<long>(h));
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t jj = flip ? (w - 1 - j) : j;
        const std::size_t sj =
            detail::reflect_index(static_cast<long>(jj + dx) - static_cast<long>(pad),
                                  static_cast<long>(w));
        dst[i * w + j] = src[si * w + sj];
      }
    }
  }
  return out;
}

/// Writes a seeded synthetic 10-class image corpus in the CIFAR-10 binary
/// layout (data_batch_1.bin + test_batch.bin) under `dir`.  Classes are
/// colored texture patterns perturbed by translation, brightness and pixel
/// noise; a stand-in used when the real corpus is not on disk.
inline void gen_synthetic_cifar10(const std::string& dir, std::size_t n_train, std::size_t n_test,
                                  std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  RngStream rng(seed, streams::kData);
  auto make_split = [&](std::size_t n, const std::string& file) {
    std::vector<std::uint8_t> labels(n), pixels(n * cifar::kImageBytes);
    for (std::size_t i = 0; i < n; ++i) {
      const int cls = static_cast<int>(i % cifar::kClasses);
      labels[i] = static_cast<std::uint8_t>(cls);
      const double fx = 0.25 + 0.11 * (cls % 5);
      const double fy = 0.18 + 0.13 * (cls % 4);
      const double phase = 0.9 * cls;
      const double ox = rng.uniform(-4.0, 4.0);
      const double oy = rng.uniform(-4.0, 4.0);
      const double brightness = rng.uniform(-0.12, 0.12);
      const double cx = 8.0 + 16.0 * ((cls * 7) % 3) / 2.0 + ox;
      const double cy = 8.0 + 16.0 * ((cls * 5) % 3) / 2.0 + oy;
      for (std::size_t c = 0; c < 3; ++c) {
        const double chan_gain = 0.55 + 0.45 * std::sin(1.7 * cls + 2.1 * c);
        for (std::size_t y = 0; y < cifar::kSide; ++y)
          for (std::size_t x = 0; x < cifar::kSide; ++x) {
            const double wave = std::sin(fx * (x + ox) + phase) * std::cos(fy * (y + oy) + phase);
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double blob = std::exp(-d2 / 40.0);
            double v = 0.5 + 0.22 * wave + 0.3 * chan_gain * blob + brightness +
                       0.14 * rng.normal();
            v = std::clamp(v, 0.0, 1.0);
            pixels[i * cifar::kImageBytes + (c * cifar::kSide + y) * cifar::kSide + x] =
                static_cast<std::uint8_t>(std::lround(v * 255.0));
          }
      }
    }
    write_cifar10_records(dir + "/" + file, labels, pixels);
  };
  make_split(n_train, "data_batch_1.bin");
  make_split(n_test, "test_batch.bin");
}

}  // namespace filmens
