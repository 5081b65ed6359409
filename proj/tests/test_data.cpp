#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "filmens/data.hpp"

using namespace filmens;

namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const char* name) {
  auto p = fs::temp_directory_path() / name;
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("gen_blobs: zero spread pins samples to class means, balanced, seeded") {
  auto ds = gen_blobs<float>(3, 100, 4, 0.0, 7);
  CHECK(ds.size() == 300);
  std::vector<int> counts(3, 0);
  for (int t : ds.targets) counts[t]++;
  CHECK(counts == std::vector<int>{100, 100, 100});

  // all samples of one class coincide (sigma = 0)
  for (std::size_t i = 1; i < 100; ++i)
    for (std::size_t d = 0; d < 4; ++d)
      CHECK(ds.inputs.at(i, d) == ds.inputs.at(std::size_t{0}, d));
  // class means sit on the radius-3 circle in the first two dims
  const double r = std::hypot(ds.inputs.at(std::size_t{0}, std::size_t{0}),
                              ds.inputs.at(std::size_t{0}, std::size_t{1}));
  CHECK(r == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(ds.inputs.at(std::size_t{0}, std::size_t{2}) == 0.0f);

  auto again = gen_blobs<float>(3, 100, 4, 0.0, 7);
  CHECK(ds.inputs.vec() == again.inputs.vec());

  auto overlap1 = gen_overlap_blobs<float>(4, 10, 2, 1.5, 9);
  auto overlap2 = gen_overlap_blobs<float>(4, 10, 2, 1.5, 9);
  CHECK(overlap1.inputs.vec() == overlap2.inputs.vec());

  CHECK_THROWS_AS(gen_blobs<float>(1, 10, 4, 1.0, 1), ValueError);
  CHECK_THROWS_AS(gen_blobs<float>(3, 10, 1, 1.0, 1), ValueError);
}

TEST_CASE("cifar loader round-trips a crafted fixture") {
  const auto dir = temp_dir("filmens_cifar_fixture");
  std::vector<std::uint8_t> labels{3, 7};
  std::vector<std::uint8_t> pixels(2 * cifar::kImageBytes);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<std::uint8_t>((i * 31 + 7) % 251);
  write_cifar10_records((dir / "data_batch_1.bin").string(), labels, pixels);
  write_cifar10_records((dir / "test_batch.bin").string(), {1},
                        std::vector<std::uint8_t>(cifar::kImageBytes, 128));

  auto [train, test] = load_cifar10_binary<float>(dir.string(), std::nullopt,
                                                  /*standardize=*/false);
  REQUIRE(train.size() == 2);
  CHECK(train.targets == std::vector<int>{3, 7});
  CHECK(test.targets == std::vector<int>{1});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    CHECK(train.inputs.vec()[i] == doctest::Approx(pixels[i] / 255.0f).epsilon(1e-7));
  fs::remove_all(dir);
}

TEST_CASE("cifar loader rejects malformed files") {
  const auto dir = temp_dir("filmens_cifar_bad");
  {
    std::ofstream f(dir / "data_batch_1.bin", std::ios::binary);
    std::vector<char> partial(3072, 1);  // one byte short of a record
    f.write(partial.data(), static_cast<std::streamsize>(partial.size()));
  }
  CHECK_THROWS_WITH_AS(load_cifar10_binary<float>(dir.string()),
                       doctest::Contains("multiple"), FormatError);

  {
    std::vector<std::uint8_t> labels{11};  // label byte out of range
    std::vector<std::uint8_t> pixels(cifar::kImageBytes, 0);
    std::ofstream f(dir / "data_batch_1.bin", std::ios::binary | std::ios::trunc);
    f.put(static_cast<char>(labels[0]));
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  }
  CHECK_THROWS_WITH_AS(load_cifar10_binary<float>(dir.string()),
                       doctest::Contains("record 0"), FormatError);
  CHECK_THROWS_AS(load_cifar10_binary<float>("/nonexistent_dir_filmens"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic image corpus loads with exact stratified subsets") {
  const auto dir = temp_dir("filmens_cifar_synth");
  gen_synthetic_cifar10(dir.string(), 100, 20, 5);
  auto [train, test] = load_cifar10_binary<float>(dir.string(), 40);
  CHECK(train.size() == 40);
  CHECK(test.size() == 20);
  std::vector<int> counts(10, 0);
  for (int t : train.targets) counts[t]++;
  for (int c : counts) CHECK(c == 4);  // 40 stratified over 10 classes
  // standardized: per-channel mean ~ 0 on the train subset
  const std::size_t plane = 32 * 32;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const float* p = train.inputs.data() + (i * 3 + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) mean += p[j];
    }
    mean /= static_cast<double>(train.size() * plane);
    CHECK(std::abs(mean) < 1e-4);
  }
  fs::remove_all(dir);
}

TEST_CASE("one-hot sequences") {
  const std::string all_a(41, 'A');
  auto t = one_hot_sequence<float>(all_a);
  for (std::size_t j = 0; j < 41; ++j) {
    CHECK(t.at(std::size_t{0}, j) == 1.0f);
    CHECK(t.at(std::size_t{1}, j) == 0.0f);
  }

  std::string seq = "ACGT" + std::string(37, 'A');
  auto u = one_hot_sequence<float>(seq);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t r = 0; r < 4; ++r)
      CHECK(u.at(r, j) == (r == j ? 1.0f : 0.0f));
  // every column sums to one
  for (std::size_t j = 0; j < 41; ++j) {
    float s = 0.f;
    for (std::size_t r = 0; r < 4; ++r) s += u.at(r, j);
    CHECK(s == 1.0f);
  }
  // decoding the argmax row recovers the sequence
  std::string decoded;
  for (std::size_t j = 0; j < 41; ++j)
    for (std::size_t r = 0; r < 4; ++r)
      if (u.at(r, j) == 1.0f) decoded += decode_nucleotide(r);
  CHECK(decoded == seq);

  CHECK_THROWS_WITH_AS(one_hot_sequence<float>("ACGT"), doctest::Contains("length"),
                       FormatError);
  std::string bad = all_a;
  bad[5] = 'N';
  CHECK_THROWS_WITH_AS(one_hot_sequence<float>(bad), doctest::Contains("position 5"),
                       FormatError);
}

TEST_CASE("genome text loader and synthetic task") {
  const auto dir = temp_dir("filmens_genome");
  const auto path = (dir / "seqs.txt").string();
  {
    std::ofstream f(path);
    f << std::string(41, 'A') << "\t1\n" << std::string(41, 'C') << "\t0\n";
  }
  auto ds = load_genome_text<float>(path);
  CHECK(ds.size() == 2);
  CHECK(ds.targets == std::vector<int>{1, 0});
  CHECK(ds.inputs.shape() == Shape{2, 4, 41});

  {
    std::ofstream f(path);
    f << std::string(41, 'A') << " 1\n";  // missing tab
  }
  CHECK_THROWS_WITH_AS(load_genome_text<float>(path), doctest::Contains("tab"), FormatError);
  {
    std::ofstream f(path);
    f << std::string(41, 'A') << "\t2\n";
  }
  CHECK_THROWS_WITH_AS(load_genome_text<float>(path), doctest::Contains("label"), FormatError);

  auto synth = gen_genome_synthetic<float>(100, 3);
  CHECK(synth.size() == 100);
  int pos = 0;
  for (int t : synth.targets) pos += t;
  CHECK(pos == 50);
  auto synth2 = gen_genome_synthetic<float>(100, 3);
  CHECK(synth.inputs.vec() == synth2.inputs.vec());
  fs::remove_all(dir);
}

TEST_CASE("augment_image identity, involution, and shape") {
  RngStream rng(70, 1);
  TensorF img({3, 8, 8});
  for (auto& v : img.vec()) v = static_cast<float>(rng.uniform(0.0, 1.0));

  RngStream r0(1, 4);
  auto same = augment_image(img, 0, 0.0, r0);
  CHECK(same.vec() == img.vec());

  // flip with probability 1 applied twice restores the image
  RngStream r1(2, 4), r2(3, 4);
  auto once = augment_image(img, 0, 1.0, r1);
  auto twice = augment_image(once, 0, 1.0, r2);
  CHECK(twice.vec() == img.vec());
  CHECK(once.vec() != img.vec());

  RngStream r3(4, 4);
  auto cropped = augment_image(img, 2, 0.5, r3);
  CHECK(cropped.shape() == img.shape());

  RngStream r4(5, 4), r5(5, 4);
  auto a = augment_image(img, 2, 0.5, r4);
  auto b = augment_image(img, 2, 0.5, r5);
  CHECK(a.vec() == b.vec());  // seeded determinism
}

TEST_CASE("ood pair shapes, determinism, and shift placement") {
  auto pair = make_ood_pair<float>(11);
  CHECK(pair.in_distribution.inputs.shape()[1] == 8);
  CHECK(pair.in_distribution.sample_shape() == pair.out_of_distribution.sample_shape());

  auto again = make_ood_pair<float>(11);
  CHECK(pair.in_distribution.inputs.vec() == again.in_distribution.inputs.vec());
  CHECK(pair.out_of_distribution.inputs.vec() == again.out_of_distribution.inputs.vec());

  // the far shift moves the third coordinate by ~6
  double mean_in = 0.0, mean_out = 0.0;
  const auto& in = pair.in_distribution;
  const auto& out = pair.out_of_distribution;
  for (std::size_t i = 0; i < in.size(); ++i) mean_in += in.inputs.at(i, std::size_t{2});
  for (std::size_t i = 0; i < out.size(); ++i) mean_out += out.inputs.at(i, std::size_t{2});
  mean_in /= static_cast<double>(in.size());
  mean_out /= static_cast<double>(out.size());
  CHECK(std::abs(mean_in) < 0.25);
  CHECK(mean_out == doctest::Approx(6.0).epsilon(0.05));

  // zero shift is distributionally identical but freshly drawn
  auto null_pair = make_ood_pair<float>(11, 0.0);
  CHECK(null_pair.in_distribution.inputs.vec() != null_pair.out_of_distribution.inputs.vec());
}

TEST_CASE("stratified split: counts, disjointness, coverage, determinism") {
  auto ds = gen_blobs<float>(3, 100, 4, 1.0, 13);
  auto [train, test] = train_test_split(ds, 0.3, 5);
  CHECK(train.size() == 210);
  CHECK(test.size() == 90);
  std::vector<int> tr_counts(3, 0), te_counts(3, 0);
  for (int t : train.targets) tr_counts[t]++;
  for (int t : test.targets) te_counts[t]++;
  CHECK(tr_counts == std::vector<int>{70, 70, 70});
  CHECK(te_counts == std::vector<int>{30, 30, 30});

  // disjoint and covering: fingerprint rows by their 4 coordinates
  auto key = [](const TensorF& t, std::size_t i) {
    return std::array<float, 4>{t.at(i, std::size_t{0}), t.at(i, std::size_t{1}),
                                t.at(i, std::size_t{2}), t.at(i, std::size_t{3})};
  };
  std::set<std::array<float, 4>> seen;
  for (std::size_t i = 0; i < train.size(); ++i) seen.insert(key(train.inputs, i));
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(seen.count(key(test.inputs, i)) == 0);
    seen.insert(key(test.inputs, i));
  }
  CHECK(seen.size() == 300);

  auto [train2, test2] = train_test_split(ds, 0.3, 5);
  CHECK(train2.inputs.vec() == train.inputs.vec());

  CHECK_THROWS_AS(train_test_split(ds, 0.0, 5), ValueError);
  auto tiny = gen_blobs<float>(2, 1, 4, 1.0, 1);
  CHECK_THROWS_WITH_AS(train_test_split(tiny, 0.5, 5), doctest::Contains("cannot split"),
                       ValueError);
}
