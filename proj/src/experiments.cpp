#include "filmens/experiments.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>

#include "filmens/checkpoint.hpp"
#include "filmens/train.hpp"

namespace filmens {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ResultRow make_row(const RunConfig& run, std::uint64_t seed, std::size_t members, double gain,
                   const MetricsReport& m, double wall) {
  ResultRow r;
  r.experiment = run.experiment;
  r.seed = seed;
  r.members = members;
  r.gain = gain;
  r.epoch = run.train.opt.epochs;
  r.accuracy = m.accuracy;
  r.ece = m.ece;
  r.sce = m.sce;
  r.brier = m.brier;
  r.disagreement = m.disagreement;
  r.mean_kl = m.mean_pairwise_kl;
  r.auroc = m.auroc;
  r.wall_seconds = wall;
  return r;
}

}  // namespace

DataBundle build_data(const DatasetSpec& spec, const std::string& out_dir) {
  DataBundle b;
  if (spec.kind == "blobs" || spec.kind == "overlap_blobs") {
    auto ds = spec.kind == "blobs"
                  ? gen_blobs<float>(spec.classes, spec.n_per_class, spec.dim, spec.spread,
                                     spec.seed)
                  : gen_overlap_blobs<float>(spec.classes, spec.n_per_class, spec.dim,
                                             spec.spread, spec.seed);
    auto [tr, te] = train_test_split(ds, spec.test_fraction, spec.seed + 1);
    b.train = std::move(tr);
    b.test = std::move(te);
  } else if (spec.kind == "cifar10" || spec.kind == "cifar10_synth") {
    std::string dir = spec.path;
    if (spec.kind == "cifar10_synth") {
      if (dir.empty()) dir = out_dir + "/cifar10_synth";
      if (!fs::exists(dir + "/data_batch_1.bin"))
        gen_synthetic_cifar10(dir, spec.n, spec.n_test, spec.seed);
    }
    if (dir.empty()) throw ConfigError("dataset.path required for dataset.kind=cifar10");
    auto [tr, te] = load_cifar10_binary<float>(
        dir, spec.subset ? std::optional<std::size_t>(spec.subset) : std::nullopt);
    if (spec.test_subset) te = stratified_subset(te, spec.test_subset);
    b.train = std::move(tr);
    b.test = std::move(te);
  } else if (spec.kind == "genome") {
    if (spec.path.empty()) throw ConfigError("dataset.path required for dataset.kind=genome");
    auto ds = load_genome_text<float>(spec.path,
                                      spec.n ? std::optional<std::size_t>(spec.n) : std::nullopt);
    auto [tr, te] = train_test_split(ds, spec.test_fraction, spec.seed + 1);
    b.train = std::move(tr);
    b.test = std::move(te);
  } else if (spec.kind == "genome_synth") {
    b.train = gen_genome_synthetic<float>(spec.n, spec.seed);
    b.test = gen_genome_synthetic<float>(spec.n_test, spec.seed + 1);
  } else if (spec.kind == "ood") {
    auto pair = make_ood_pair<float>(spec.seed, spec.shift, spec.n_per_class, spec.spread);
    auto [tr, te] = train_test_split(pair.in_distribution, spec.test_fraction, spec.seed + 1);
    b.train = std::move(tr);
    b.test = std::move(te);
    b.ood = std::move(pair.out_of_distribution);
  } else {
    throw ConfigError("unknown dataset.kind '" + spec.kind + "'");
  }
  b.train.validate();
  b.test.validate();
  return b;
}

TrainedRun run_single(const RunConfig& run, const DataBundle& data, std::uint64_t seed,
                      std::size_t members, double gain) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig mc = run.model;
  mc.input_shape = data.train.sample_shape();
  mc.num_classes = static_cast<std::size_t>(data.train.num_classes);
  mc.ensemble_size = members;
  mc.gain = gain;
  Model<float> model = build_model<float>(mc, seed);

  TrainConfig tc = run.train;
  tc.seed = seed;
  train(model, data.train, tc, tc.eval_every ? &data.test : nullptr);

  auto preds = evaluate(model, data.test);
  MetricsReport m = compute_metrics(preds);
  TrainedRun out{make_row(run, seed, members, gain, m, seconds_since(t0)), std::move(model),
                 std::move(preds)};
  return out;
}

std::string checkpoint_path(const RunConfig& run, std::uint64_t seed) {
  return run.out_dir + "/" + run.experiment + "_seed" + std::to_string(seed) + ".ckpt";
}

std::vector<ResultRow> cmd_train(const RunConfig& run) {
  fs::create_directories(run.out_dir);
  DataBundle data = build_data(run.dataset, run.out_dir);
  CsvWriter csv(run.out_dir + "/results.csv");
  std::vector<ResultRow> rows;
  for (std::uint64_t seed : run.seeds) {
    TrainedRun r = run_single(run, data, seed, run.model.ensemble_size, run.model.gain);
    save_checkpoint(r.model, checkpoint_path(run, seed), run.train.opt.epochs);
    csv.append(r.row);
    rows.push_back(r.row);
    std::cout << to_csv(r.row) << '\n';
  }
  return rows;
}

std::vector<ResultRow> cmd_sweep_gain(const RunConfig& run) {
  if (run.sweep_gains.empty()) throw ConfigError("sweep-gain: sweep.gains is empty");
  fs::create_directories(run.out_dir);
  DataBundle data = build_data(run.dataset, run.out_dir);
  CsvWriter csv(run.out_dir + "/results.csv");
  std::vector<ResultRow> rows;
  for (double gain : run.sweep_gains)
    for (std::uint64_t seed : run.seeds) {
      TrainedRun r = run_single(run, data, seed, run.model.ensemble_size, gain);
      csv.append(r.row);
      rows.push_back(r.row);
      std::cout << to_csv(r.row) << '\n';
    }
  return rows;
}

std::vector<ResultRow> cmd_sweep_members(const RunConfig& run) {
  if (run.sweep_members.empty()) throw ConfigError("sweep-members: sweep.members is empty");
  for (std::size_t m : run.sweep_members)
    if (m < 1) throw ConfigError("sweep-members: member counts must be >= 1");
  fs::create_directories(run.out_dir);
  DataBundle data = build_data(run.dataset, run.out_dir);
  CsvWriter csv(run.out_dir + "/results.csv");
  std::vector<ResultRow> rows;
  for (std::size_t members : run.sweep_members)
    for (std::uint64_t seed : run.seeds) {
      TrainedRun r = run_single(run, data, seed, members, run.model.gain);
      csv.append(r.row);
      rows.push_back(r.row);
      std::cout << to_csv(r.row) << '\n';
      if (run.sweep_baseline) {
        // explicit deep ensemble on the same cell: M independent models
        const auto t0 = std::chrono::steady_clock::now();
        ModelConfig mc = run.model;
        mc.input_shape = data.train.sample_shape();
        mc.num_classes = static_cast<std::size_t>(data.train.num_classes);
        mc.gain = run.model.gain;
        std::vector<std::uint64_t> member_seeds;
        for (std::size_t i = 0; i < members; ++i) member_seeds.push_back(seed * 1000 + i);
        auto models = build_deep_ensemble<float>(mc, members, member_seeds);
        for (std::size_t i = 0; i < models.size(); ++i) {
          TrainConfig tc = run.train;
          tc.seed = member_seeds[i];
          train(models[i], data.train, tc);
        }
        auto preds = evaluate_deep_ensemble(models, data.test);
        MetricsReport m = compute_metrics(preds);
        RunConfig tagged = run;
        tagged.experiment = run.experiment + "/deep_ensemble";
        ResultRow row =
            make_row(tagged, seed, members, run.model.gain, m, seconds_since(t0));
        csv.append(row);
        rows.push_back(row);
        std::cout << to_csv(row) << '\n';
      }
    }
  return rows;
}

std::vector<ResultRow> cmd_ood(const RunConfig& run) {
  fs::create_directories(run.out_dir);
  DataBundle data = build_data(run.dataset, run.out_dir);
  if (!data.ood)
    throw ConfigError("ood: dataset.kind '" + run.dataset.kind +
                      "' does not provide an out-of-distribution split (use dataset.kind=ood)");
  CsvWriter csv(run.out_dir + "/results.csv");
  std::vector<ResultRow> rows;
  const std::size_t m_full = run.model.ensemble_size;
  for (std::uint64_t seed : run.seeds)
    for (std::size_t members : {m_full, std::size_t{1}}) {
      if (members == m_full && m_full == 1 && !rows.empty()) continue;  // avoid duplicate M=1
      const auto t0 = std::chrono::steady_clock::now();
      TrainedRun r = run_single(run, data, seed, members, run.model.gain);
      auto ood_preds = evaluate(r.model, *data.ood);
      const auto scores_in = uncertainty_score(r.preds);
      const auto scores_out = uncertainty_score(ood_preds);
      r.row.auroc = auroc(scores_in, scores_out);
      r.row.wall_seconds = seconds_since(t0);
      csv.append(r.row);
      rows.push_back(r.row);
      std::cout << to_csv(r.row) << '\n';
    }
  return rows;
}

namespace {
ResultRow eval_checkpoint(const RunConfig& run, const std::string& ckpt_path,
                          bool require_ensemble) {
  const auto t0 = std::chrono::steady_clock::now();
  DataBundle data = build_data(run.dataset, run.out_dir);
  std::size_t trained_epochs = 0;
  Model<float> model = load_checkpoint<float>(ckpt_path, run.model.ensemble_size,
                                              &trained_epochs);
  if (require_ensemble && model.ensemble_size() < 2)
    throw ValueError("diversity: checkpoint holds a single-member model");
  if (model.config.input_shape != data.test.sample_shape())
    throw ShapeError("eval: checkpoint input shape " + shape_str(model.config.input_shape) +
                     " does not match dataset sample shape " +
                     shape_str(data.test.sample_shape()));
  auto preds = evaluate(model, data.test);
  MetricsReport m = compute_metrics(preds);
  std::cout << m.to_kv();
  ResultRow row = make_row(run, run.seeds.front(), model.ensemble_size(), model.config.gain, m,
                           seconds_since(t0));
  row.epoch = trained_epochs;
  fs::create_directories(run.out_dir);
  CsvWriter csv(run.out_dir + "/results.csv");
  csv.append(row);
  std::cout << to_csv(row) << '\n';
  return row;
}
}  // namespace

ResultRow cmd_eval(const RunConfig& run, const std::string& ckpt_path) {
  return eval_checkpoint(run, ckpt_path, false);
}

ResultRow cmd_diversity(const RunConfig& run, const std::string& ckpt_path) {
  return eval_checkpoint(run, ckpt_path, true);
}

}  // namespace filmens
