#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "filmens/model.hpp"
#include "filmens/train.hpp"

namespace filmens {

/// Flat key=value configuration with dotted section prefixes
/// (model.M=4, train.epochs=20).  '#' starts a comment; keys are unique.
/// Typed getters record which keys were consumed so that unknown keys can be
/// diagnosed with their line numbers.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_string(const std::string& text, const std::string& origin);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& def) const;
  std::int64_t get_int(const std::string& key, std::int64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& def) const;
  std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                          const std::vector<std::uint64_t>& def) const;
  std::vector<std::size_t> get_size_list(const std::string& key,
                                         const std::vector<std::size_t>& def) const;

  /// Keys never consumed by a getter, formatted as "origin:line: key".
  std::vector<std::string> unconsumed() const;
  /// Throws ConfigError when any key was never consumed.
  void reject_unknown() const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    mutable bool consumed = false;
  };
  std::string describe(const std::string& key) const;

  std::string origin_;
  std::map<std::string, Entry> entries_;
};

struct DatasetSpec {
  std::string kind = "overlap_blobs";
  std::string path;
  int classes = 4;
  std::size_t n_per_class = 750;
  std::size_t dim = 2;
  double spread = 1.5;
  std::uint64_t seed = 7;           // data generation seed, fixed across run seeds
  double test_fraction = 1.0 / 3.0;
  std::size_t subset = 0;           // cifar10: stratified train subset (0 = all)
  std::size_t test_subset = 0;      // 0 = all
  std::size_t n = 5000;             // synthetic corpora: train size
  std::size_t n_test = 2000;
  double shift = 6.0;               // ood: translation length
};

/// One experiment: dataset recipe, model recipe, training recipe, outputs,
/// and the seeds to repeat over.
struct RunConfig {
  std::string experiment = "run";
  DatasetSpec dataset;
  ModelConfig model;  // input_shape and num_classes are stamped from the dataset
  TrainConfig train;
  std::string out_dir = "runs";
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<double> sweep_gains = {0.01, 1.0, 4.0};
  std::vector<std::size_t> sweep_members = {2, 4, 8};
  bool sweep_baseline = false;

  void validate() const;
};

RunConfig parse_run_config(const KvConfig& kv);
RunConfig load_run_config(const std::string& path);

/// One terminal evaluation.  Column order is fixed; disagreement, mean_kl
/// and auroc are empty when not applicable.
struct ResultRow {
  std::string experiment;
  std::uint64_t seed = 0;
  std::size_t members = 1;
  double gain = 2.0;
  std::size_t epoch = 0;
  double accuracy = 0.0;
  double ece = 0.0;
  double sce = 0.0;
  double brier = 0.0;
  std::optional<double> disagreement;
  std::optional<double> mean_kl;
  std::optional<double> auroc;
  double wall_seconds = 0.0;
};

inline constexpr int kResultCsvVersion = 1;

std::string result_csv_header();
std::string to_csv(const ResultRow& row);
std::vector<ResultRow> parse_result_csv(const std::string& text);

/// Appends rows as they complete so a crashed sweep still leaves a usable
/// partial file.  The header is written when the file is created.
class CsvWriter {
 public:
  explicit CsvWriter(std::string path);
  void append(const ResultRow& row);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace filmens
