#pragma once

#include <optional>
#include <string>
#include <vector>

#include "filmens/config.hpp"
#include "filmens/data.hpp"
#include "filmens/metrics.hpp"
#include "filmens/model.hpp"

namespace filmens {

/// The materialized data of one experiment; ood holds the shifted inputs for
/// OOD runs.
struct DataBundle {
  Dataset<float> train;
  Dataset<float> test;
  std::optional<Dataset<float>> ood;
};

DataBundle build_data(const DatasetSpec& spec, const std::string& out_dir);

struct TrainedRun {
  ResultRow row;
  Model<float> model;
  PredictionSet<float> preds;
};

/// Builds, trains and evaluates one (seed, M, gain) cell of an experiment.
TrainedRun run_single(const RunConfig& run, const DataBundle& data, std::uint64_t seed,
                      std::size_t members, double gain);

std::string checkpoint_path(const RunConfig& run, std::uint64_t seed);

std::vector<ResultRow> cmd_train(const RunConfig& run);
std::vector<ResultRow> cmd_sweep_gain(const RunConfig& run);
std::vector<ResultRow> cmd_sweep_members(const RunConfig& run);
std::vector<ResultRow> cmd_ood(const RunConfig& run);
ResultRow cmd_eval(const RunConfig& run, const std::string& ckpt_path);
ResultRow cmd_diversity(const RunConfig& run, const std::string& ckpt_path);

}  // namespace filmens
