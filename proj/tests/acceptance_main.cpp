// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.  Heavier criteria train real (desk-scale) models; budget the full
// run at roughly an hour on two cores.
//
//   acceptance [--only N] [--list]
//
// FILMENS_CIFAR10_DIR selects a real CIFAR-10 binary directory for criterion
// 10; without it a seeded synthetic corpus in the same format is used.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "filmens/checkpoint.hpp"
#include "filmens/config.hpp"
#include "filmens/experiments.hpp"
#include "filmens/metrics.hpp"
#include "filmens/train.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace filmens;
using namespace filmens::testing;

namespace {

namespace fs = std::filesystem;

struct Check {
  int id;
  std::string name;
  std::function<bool(std::ostream&)> run;
};

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// The shared desk-scale trade-off task of criteria 3-5: overlapping blobs
// with informative first two dimensions and pure-noise remainder, and a
// narrow MLP so the per-channel FiLM spread stays large.
RunConfig blobs_task() {
  RunConfig run;
  run.experiment = "acceptance_blobs";
  run.dataset.kind = "overlap_blobs";
  run.dataset.classes = 4;
  run.dataset.n_per_class = 750;  // 3000 total -> 2000 train / 1000 test
  run.dataset.dim = 8;
  run.dataset.spread = 1.0;
  run.dataset.seed = 7;
  run.dataset.test_fraction = 1.0 / 3.0;
  run.model.kind = ModelKind::mlp;
  run.model.widths = {32, 32};
  run.model.gain = 2.0;
  run.train.opt.epochs = 40;
  run.train.opt.batch_size = 128;
  run.seeds = {1, 2, 3};
  return run;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

fs::path work_dir() {
  auto p = fs::temp_directory_path() / "filmens_acceptance";
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// AC-1: finite-difference gradient checks
// ---------------------------------------------------------------------------

bool ac1_gradients(std::ostream& log) {
  const double t0 = now_s();
  constexpr double kTol = 1e-4;
  constexpr int kInstances = 10;
  double worst = 0.0;
  auto note = [&](double e) { worst = std::max(worst, e); };

  RngStream rng(910, 1);
  auto weighted = [](const TensorD& y, Tape<double>* tape, std::uint64_t salt) {
    RngStream wrng(salt, 99);
    TensorD w(y.shape());
    for (auto& v : w.vec()) v = wrng.uniform(-1.0, 1.0);
    return sum(mul(y, w, tape), tape);
  };

  for (int i = 0; i < kInstances; ++i) {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    note(max_grad_error({a, b}, [&](auto& in, Tape<double>* t) {
      return weighted(add(in[0], in[1], t), t, 11 + i);
    }));
    note(max_grad_error({a, b}, [&](auto& in, Tape<double>* t) {
      return weighted(mul(in[0], in[1], t), t, 23 + i);
    }));
    note(max_grad_error({a}, [&](auto& in, Tape<double>* t) {
      return weighted(scale(in[0], -0.7, t), t, 31 + i);
    }));
    note(max_grad_error({a}, [](auto& in, Tape<double>* t) { return mean(in[0], t); }));
    note(max_grad_error({a}, [&](auto& in, Tape<double>* t) {
      return weighted(reshape(in[0], {2, 6}, t), t, 41 + i);
    }));

    auto m1 = random_tensor({3, 4}, rng);
    auto m2 = random_tensor({4, 2}, rng);
    note(max_grad_error({m1, m2}, [&](auto& in, Tape<double>* t) {
      return weighted(matmul(in[0], in[1], t), t, 51 + i);
    }));
    auto lx = random_tensor({5, 3}, rng);
    auto lw = random_tensor({4, 3}, rng);
    auto lb = random_tensor({4}, rng);
    note(max_grad_error({lx, lw, lb}, [&](auto& in, Tape<double>* t) {
      return weighted(linear(in[0], in[1], in[2], t), t, 61 + i);
    }));

    auto cx = random_tensor({2, 2, 5, 5}, rng);
    auto cw = random_tensor({3, 2, 3, 3}, rng);
    auto cb = random_tensor({3}, rng);
    const std::size_t stride = 1 + (i % 2), pad = (i % 3 == 0) ? 0 : 1;
    note(max_grad_error({cx, cw, cb}, [&](auto& in, Tape<double>* t) {
      return weighted(conv2d(in[0], in[1], in[2], stride, pad, t), t, 71 + i);
    }));
    auto dx = random_tensor({2, 3, 8}, rng);
    auto dw = random_tensor({4, 3, 3}, rng);
    auto db = random_tensor({4}, rng);
    note(max_grad_error({dx, dw, db}, [&](auto& in, Tape<double>* t) {
      return weighted(conv1d(in[0], in[1], in[2], stride, pad, t), t, 81 + i);
    }));

    auto rx = random_tensor({3, 4}, rng);
    for (auto& v : rx.vec())
      if (std::abs(v) < 1e-3) v = 0.2;
    note(max_grad_error({rx}, [&](auto& in, Tape<double>* t) {
      return weighted(relu(in[0], t), t, 91 + i);
    }));
    auto logits = random_tensor({4, 5}, rng, -3.0, 3.0);
    note(max_grad_error({logits}, [&](auto& in, Tape<double>* t) {
      return weighted(log_softmax(in[0], t), t, 101 + i);
    }));
    note(max_grad_error({rx}, [&](auto& in, Tape<double>* t) {
      RngStream mask(300 + i, 5);
      return weighted(dropout(in[0], 0.4, Mode::train, mask, t), t, 111 + i);
    }));
    auto targets = random_targets(4, 5, rng);
    note(max_grad_error({logits}, [&](auto& in, Tape<double>* t) {
      return cross_entropy(in[0], targets, t);
    }));

    TensorD px({2, 2, 4, 4});
    {
      std::vector<std::size_t> perm(px.size());
      for (std::size_t j = 0; j < perm.size(); ++j) perm[j] = j;
      rng.shuffle(perm);
      for (std::size_t j = 0; j < px.size(); ++j)
        px.vec()[j] = 0.05 * static_cast<double>(perm[j]);
    }
    note(max_grad_error({px}, [&](auto& in, Tape<double>* t) {
      return weighted(max_pool2d(in[0], 2, t), t, 121 + i);
    }));
    note(max_grad_error({px}, [&](auto& in, Tape<double>* t) {
      return weighted(global_avg_pool2d(in[0], t), t, 131 + i);
    }));

    const EnsembleLayout layout{2, 3};
    auto fx = random_tensor({6, 4, 2}, rng);
    auto fg = random_tensor({2, 4}, rng);
    auto fb = random_tensor({2, 4}, rng);
    note(max_grad_error({fx, fg, fb}, [&](auto& in, Tape<double>* t) {
      FiLMParams<double> p{in[1], in[2]};
      return weighted(film_apply(in[0], p, layout, t), t, 141 + i);
    }));
    note(max_grad_error({fx, fg, fb}, [&](auto& in, Tape<double>* t) {
      FiLMParams<double> p{in[1], in[2]};
      auto st = BatchNormState<double>::init(4);
      return weighted(film_batchnorm_forward(in[0], p, st, layout, Mode::train, t), t, 151 + i);
    }));
    note(max_grad_error({fx, fg, fb}, [&](auto& in, Tape<double>* t) {
      FiLMParams<double> p{in[1], in[2]};
      auto st = BatchNormState<double>::init(4);
      for (std::size_t c = 0; c < 4; ++c) {
        st.running_mean.data()[c] = 0.1 * static_cast<double>(c) - 0.15;
        st.running_var.data()[c] = 0.8 + 0.3 * static_cast<double>(c);
      }
      return weighted(film_batchnorm_forward(in[0], p, st, layout, Mode::eval, t), t, 161 + i);
    }));
    auto sx = random_tensor({2, 3}, rng);
    note(max_grad_error({sx}, [&](auto& in, Tape<double>* t) {
      return weighted(replicate_batch(in[0], 3, t), t, 171 + i);
    }));
    note(max_grad_error({fx}, [&](auto& in, Tape<double>* t) {
      auto parts = split_members(in[0], layout, t);
      TensorD acc = weighted(parts[0], t, 181 + i);
      for (std::size_t m = 1; m < parts.size(); ++m)
        acc = add(acc, weighted(parts[m], t, 181 + i + 7 * m), t);
      return acc;
    }));
  }

  const double dt = now_s() - t0;
  log << "max rel err " << worst << " over >=10 instances/op, " << dt << " s";
  return worst < kTol && dt < 120.0;
}

// ---------------------------------------------------------------------------
// AC-2: batched vs sequential member forward
// ---------------------------------------------------------------------------

bool ac2_parallel_sequential(std::ostream& log) {
  float worst = 0.0f;
  RngStream rng(920, 1);
  for (std::size_t members : {2, 4, 8}) {
    std::vector<ModelConfig> configs;
    {
      ModelConfig c;
      c.kind = ModelKind::mlp;
      c.input_shape = {8};
      c.num_classes = 4;
      c.ensemble_size = members;
      configs.push_back(c);
      c = {};
      c.kind = ModelKind::conv2d_small;
      c.input_shape = {3, 16, 16};
      c.num_classes = 5;
      c.ensemble_size = members;
      configs.push_back(c);
      c = {};
      c.kind = ModelKind::conv1d_genome;
      c.input_shape = {4, 41};
      c.num_classes = 2;
      c.ensemble_size = members;
      configs.push_back(c);
    }
    for (auto& cfg : configs) {
      auto model = build_model<float>(cfg, 31 + members);
      for (int rep = 0; rep < 20; ++rep) {
        Shape xs = cfg.input_shape;
        xs.insert(xs.begin(), 2);
        TensorF x(xs);
        for (auto& v : x.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        auto batched = model.member_forward(x, Mode::eval);
        for (std::size_t m = 0; m < members; ++m) {
          auto seq = model.single_member_forward(x, m, Mode::eval);
          for (std::size_t i = 0; i < seq.size(); ++i)
            worst = std::max(worst, std::abs(batched[m].vec()[i] - seq.vec()[i]));
        }
      }
    }
  }
  log << "max |batched - sequential| = " << worst << " over 3 builders x M in {2,4,8} x 20 inputs";
  return worst < 1e-6f;
}

// ---------------------------------------------------------------------------
// AC-3/4/5: trend criteria on the shared blobs task
// ---------------------------------------------------------------------------

bool ac3_gain_diversity(std::ostream& log) {
  const double t0 = now_s();
  RunConfig run = blobs_task();
  DataBundle data = build_data(run.dataset, work_dir().string());
  std::vector<double> mean_d;
  for (double rho : {0.01, 1.0, 4.0}) {
    std::vector<double> ds;
    for (auto seed : kSeeds) {
      auto r = run_single(run, data, seed, 4, rho);
      ds.push_back(*r.row.disagreement);
    }
    mean_d.push_back(mean(ds));
  }
  const double dt = now_s() - t0;
  log << "mean D: rho=0.01 -> " << mean_d[0] << ", rho=1 -> " << mean_d[1] << ", rho=4 -> "
      << mean_d[2] << "; " << dt << " s";
  return mean_d[0] < mean_d[1] && mean_d[1] < mean_d[2] && mean_d[0] < 0.01 && dt < 900.0;
}

bool ac4_member_diversity(std::ostream& log) {
  const double t0 = now_s();
  RunConfig run = blobs_task();
  DataBundle data = build_data(run.dataset, work_dir().string());
  std::vector<double> mean_d, mean_kl;
  for (std::size_t members : {2, 4, 8}) {
    std::vector<double> ds, kls;
    for (auto seed : kSeeds) {
      auto r = run_single(run, data, seed, members, 2.0);
      ds.push_back(*r.row.disagreement);
      kls.push_back(*r.row.mean_kl);
    }
    mean_d.push_back(mean(ds));
    mean_kl.push_back(mean(kls));
  }
  const double dt = now_s() - t0;
  log << "mean D by M: " << mean_d[0] << " / " << mean_d[1] << " / " << mean_d[2]
      << "; mean KL by M: " << mean_kl[0] << " / " << mean_kl[1] << " / " << mean_kl[2] << "; "
      << dt << " s";
  return mean_d[0] <= mean_d[1] && mean_d[1] <= mean_d[2] && mean_kl[0] <= mean_kl[1] &&
         mean_kl[1] <= mean_kl[2] && dt < 1200.0;
}

bool ac5_ensemble_benefit(std::ostream& log) {
  RunConfig run = blobs_task();
  DataBundle data = build_data(run.dataset, work_dir().string());
  std::vector<double> acc1, acc4, ece1, ece4;
  for (auto seed : kSeeds) {
    auto r4 = run_single(run, data, seed, 4, 2.0);
    auto r1 = run_single(run, data, seed, 1, 2.0);
    acc4.push_back(r4.row.accuracy);
    ece4.push_back(r4.row.ece);
    acc1.push_back(r1.row.accuracy);
    ece1.push_back(r1.row.ece);
  }
  log << "M=4 acc " << mean(acc4) << " ece " << mean(ece4) << " vs M=1 acc " << mean(acc1)
      << " ece " << mean(ece1);
  return mean(ece4) <= mean(ece1) && mean(acc4) >= mean(acc1) - 0.005;
}

// ---------------------------------------------------------------------------
// AC-6: metric oracle equivalence
// ---------------------------------------------------------------------------

bool ac6_metric_oracles(std::ostream& log) {
  RngStream rng(960, 1);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t members = 2 + rng.below(4);
    const std::size_t samples = 20 + rng.below(31);
    const std::size_t classes = 2 + rng.below(5);
    auto ps = random_prediction_set(members, samples, classes, rng);
    worst = std::max(worst, std::abs(ece(ps) - ece_oracle(ps, 15)));
    worst = std::max(worst, std::abs(sce(ps) - sce_oracle(ps, 15)));
    worst = std::max(worst, std::abs(brier(ps) - brier_oracle(ps)));
    worst = std::max(worst, std::abs(disagreement(ps) - disagreement_oracle(ps)));
    worst = std::max(worst, std::abs(pairwise_kl(ps) - pairwise_kl_oracle(ps)));
    std::vector<double> sin_(20), sout(20);
    for (auto& v : sin_) v = std::round(rng.uniform(0.0, 8.0));
    for (auto& v : sout) v = std::round(rng.uniform(1.0, 9.0));
    worst = std::max(worst, std::abs(auroc(sin_, sout) - auroc_oracle(sin_, sout)));
  }

  // hand-computed fixtures
  bool fixtures = true;
  {
    std::vector<std::vector<double>> rows(10, std::vector<double>{0.8, 0.2});
    PredictionSet<double> ps;
    ps.members = 1;
    ps.samples = 10;
    ps.classes = 2;
    for (auto& r : rows) {
      ps.ensemble_probs.push_back(r[0]);
      ps.ensemble_probs.push_back(r[1]);
    }
    ps.member_probs = ps.ensemble_probs;
    ps.targets.assign(10, 1);
    for (int i = 0; i < 6; ++i) ps.targets[i] = 0;
    fixtures &= std::abs(ece(ps) - 0.2) < 1e-12;

    PredictionSet<double> kl2;
    kl2.members = 2;
    kl2.samples = 1;
    kl2.classes = 2;
    kl2.targets = {0};
    kl2.member_probs = {0.5, 0.5, 0.25, 0.75};
    kl2.ensemble_probs = {0.375, 0.625};
    const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    fixtures &= std::abs(pairwise_kl(kl2) - expect) < 1e-12;
    fixtures &= std::abs(expect - 0.14384) < 1e-4;

    PredictionSet<double> dis;
    dis.members = 2;
    dis.samples = 4;
    dis.classes = 2;
    dis.targets = {0, 0, 0, 0};
    dis.member_probs = {.9, .1, .9, .1, .9, .1, .9, .1, .9, .1, .9, .1, .9, .1, .1, .9};
    dis.ensemble_probs.assign(8, 0.0);
    fixtures &= disagreement(dis) == 0.25;

    PredictionSet<double> br;
    br.members = 1;
    br.samples = 1;
    br.classes = 4;
    br.targets = {2};
    br.ensemble_probs = {0.25, 0.25, 0.25, 0.25};
    br.member_probs = br.ensemble_probs;
    fixtures &= std::abs(brier(br) - 0.75) < 1e-12;
    fixtures &= std::abs(uncertainty_score(br)[0] - std::log(4.0)) < 1e-12;

    fixtures &= auroc({1, 2, 3}, {4, 5, 6}) == 1.0;
    fixtures &= auroc({1, 2, 3}, {1, 2, 3}) == 0.5;
  }
  log << "max |metric - oracle| = " << worst << " over 100 random sets; fixtures "
      << (fixtures ? "ok" : "BAD");
  return worst < 1e-12 && fixtures;
}

// ---------------------------------------------------------------------------
// AC-7: parameter accounting
// ---------------------------------------------------------------------------

bool ac7_parameter_accounting(std::ostream& log) {
  bool ok = true;
  double conv_ratio = 0.0;
  for (std::size_t members : {1, 2, 16}) {
    ModelConfig mlp;
    mlp.kind = ModelKind::mlp;
    mlp.input_shape = {8};
    mlp.num_classes = 4;
    mlp.ensemble_size = members;
    auto m1 = build_model<float>(mlp, 1);

    ModelConfig conv;
    conv.kind = ModelKind::conv2d_small;
    conv.input_shape = {3, 32, 32};
    conv.num_classes = 10;
    conv.ensemble_size = members;
    auto m2 = build_model<float>(conv, 1);

    ModelConfig gen;
    gen.kind = ModelKind::conv1d_genome;
    gen.input_shape = {4, 41};
    gen.num_classes = 2;
    gen.ensemble_size = members;
    auto m3 = build_model<float>(gen, 1);

    for (auto* model : {&m1, &m3}) {
      std::size_t film_d = 0;
      for (std::size_t d : model->film_channel_counts()) film_d += d;
      ok &= count_parameters(*model).extra_vs_single == (members - 1) * 2 * film_d;
    }
    auto b2 = count_parameters(m2);
    ok &= b2.extra_vs_single == (members - 1) * 2 * (32 + 64 + 128);
    if (members == 16) conv_ratio = b2.overhead_ratio;
    ok &= count_parameters(m3).per_member_count == 2 * 5 * 256;
  }
  log << "exact budgets for 3 builders x M in {1,2,16}; conv2d_small M=16 overhead "
      << conv_ratio;
  return ok && conv_ratio < 0.05;
}

// ---------------------------------------------------------------------------
// AC-8: OOD protocol
// ---------------------------------------------------------------------------

bool ac8_ood(std::ostream& log) {
  RunConfig run;
  run.experiment = "acceptance_ood";
  run.dataset.kind = "ood";
  run.dataset.n_per_class = 500;
  run.dataset.spread = 1.5;
  run.dataset.seed = 7;
  run.dataset.test_fraction = 1.0 / 3.0;
  run.dataset.shift = 6.0;
  run.model.kind = ModelKind::mlp;
  run.model.widths = {32, 32};
  run.train.opt.epochs = 40;

  auto auroc_for = [&](const DataBundle& data, std::size_t members, std::uint64_t seed) {
    auto r = run_single(run, data, seed, members, 2.0);
    auto ood_preds = evaluate(r.model, *data.ood);
    return auroc(uncertainty_score(r.preds), uncertainty_score(ood_preds));
  };

  DataBundle far = build_data(run.dataset, work_dir().string());
  std::vector<double> a8, a1;
  for (auto seed : kSeeds) {
    a8.push_back(auroc_for(far, 8, seed));
    a1.push_back(auroc_for(far, 1, seed));
  }

  run.dataset.shift = 0.0;
  DataBundle null_pair = build_data(run.dataset, work_dir().string());
  std::vector<double> a0;
  for (auto seed : kSeeds) a0.push_back(auroc_for(null_pair, 8, seed));

  log << "far-shift AUROC M=8 " << mean(a8) << " vs M=1 " << mean(a1) << "; zero-shift "
      << mean(a0);
  return mean(a8) >= 0.70 && mean(a8) > mean(a1) && std::abs(mean(a0) - 0.5) <= 0.05;
}

// ---------------------------------------------------------------------------
// AC-9: determinism and persistence
// ---------------------------------------------------------------------------

std::string csv_without_wall(const std::string& path) {
  std::ifstream f(path);
  std::stringstream out;
  std::string line;
  while (std::getline(f, line)) {
    const auto cut = line.rfind(',');
    out << line.substr(0, cut) << '\n';
  }
  return out.str();
}

bool ac9_determinism(std::ostream& log) {
  RunConfig run = blobs_task();
  run.train.opt.epochs = 8;
  DataBundle data = build_data(run.dataset, work_dir().string());

  // library-level: identical final parameters, bitwise
  auto r1 = run_single(run, data, 1, 4, 2.0);
  auto r2 = run_single(run, data, 1, 4, 2.0);
  bool params_equal = true;
  auto p1 = r1.model.named_parameters();
  auto p2 = r2.model.named_parameters();
  for (std::size_t i = 0; i < p1.size(); ++i)
    params_equal &= p1[i].tensor.vec() == p2[i].tensor.vec();
  const bool rows_equal =
      to_csv(r1.row).substr(0, to_csv(r1.row).rfind(',')) ==
      to_csv(r2.row).substr(0, to_csv(r2.row).rfind(','));

  // checkpoint round trip: bitwise identical evaluation
  const auto ckpt = (work_dir() / "ac9.ckpt").string();
  save_checkpoint(r1.model, ckpt, run.train.opt.epochs);
  auto loaded = load_checkpoint<float>(ckpt);
  auto before = evaluate(r1.model, data.test);
  auto after = evaluate(loaded, data.test);
  const bool ckpt_equal =
      before.member_probs == after.member_probs && before.ensemble_probs == after.ensemble_probs;

  // CLI-level: identical CSV numerics (wall-clock column excluded)
  const fs::path cfg = work_dir() / "ac9.cfg";
  {
    std::ofstream f(cfg);
    f << "experiment = ac9\ndataset.kind = overlap_blobs\ndataset.classes = 4\n"
         "dataset.n_per_class = 750\ndataset.dim = 8\ndataset.spread = 1.0\n"
         "dataset.seed = 7\nmodel.kind = mlp\nmodel.widths = 32,32\nmodel.M = 4\n"
         "train.epochs = 8\nseeds = 1\n";
  }
  const fs::path out_a = work_dir() / "ac9_a", out_b = work_dir() / "ac9_b";
  std::ostringstream cmd_a, cmd_b;
  cmd_a << FILMENS_CLI_PATH << " train --config " << cfg << " --out " << out_a
        << " > /dev/null 2>&1";
  cmd_b << FILMENS_CLI_PATH << " train --config " << cfg << " --out " << out_b
        << " > /dev/null 2>&1";
  const bool cli_ok =
      std::system(cmd_a.str().c_str()) == 0 && std::system(cmd_b.str().c_str()) == 0;
  const bool cli_equal =
      cli_ok && csv_without_wall((out_a / "results.csv").string()) ==
                    csv_without_wall((out_b / "results.csv").string()) &&
      !csv_without_wall((out_a / "results.csv").string()).empty();

  log << "params bitwise " << (params_equal ? "ok" : "BAD") << ", rows "
      << (rows_equal ? "ok" : "BAD") << ", checkpoint " << (ckpt_equal ? "ok" : "BAD")
      << ", cli " << (cli_equal ? "ok" : "BAD");
  return params_equal && rows_equal && ckpt_equal && cli_equal;
}

// ---------------------------------------------------------------------------
// AC-10: desk-scale smoke runs
// ---------------------------------------------------------------------------

bool ac10_smoke(std::ostream& log) {
  const double t0 = now_s();

  // image smoke: real CIFAR-10 when provided, synthetic stand-in otherwise
  std::string dir;
  bool synthetic = false;
  if (const char* env = std::getenv("FILMENS_CIFAR10_DIR")) {
    dir = env;
  } else {
    synthetic = true;
    dir = (work_dir() / "cifar10_synth").string();
    if (!fs::exists(dir + "/data_batch_1.bin")) gen_synthetic_cifar10(dir, 6000, 2000, 5);
  }
  auto [train_ds, test_ds] = load_cifar10_binary<float>(dir, 4000);
  if (test_ds.size() > 2000) test_ds = stratified_subset(test_ds, 2000);

  ModelConfig mc;
  mc.kind = ModelKind::conv2d_small;
  mc.input_shape = {3, 32, 32};
  mc.num_classes = 10;
  mc.ensemble_size = 4;
  mc.gain = 2.0;
  auto model = build_model<float>(mc, 1);

  TrainConfig tc;
  tc.opt.epochs = 20;
  tc.opt.batch_size = 128;
  tc.seed = 1;
  tc.pad_crop = 4;
  tc.hflip = true;
  auto history = train(model, train_ds, tc);
  auto preds = evaluate(model, test_ds);
  const double acc = accuracy(preds);
  const double image_minutes = (now_s() - t0) / 60.0;

  // genome smoke: synthetic-labeled sequences, no divergence in 10 epochs
  const double t1 = now_s();
  auto genome = gen_genome_synthetic<float>(5000, 11);
  ModelConfig gc;
  gc.kind = ModelKind::conv1d_genome;
  gc.input_shape = {4, 41};
  gc.num_classes = 2;
  gc.ensemble_size = 4;
  gc.gain = 2.0;
  auto gmodel = build_model<float>(gc, 1);
  TrainConfig gt;
  gt.opt.epochs = 10;
  gt.opt.batch_size = 128;
  gt.opt.lr0 = 0.01;
  gt.seed = 1;
  auto ghist = train(gmodel, genome, gt);
  bool genome_ok = ghist.records.size() == 10;
  for (const auto& rec : ghist.records) genome_ok &= std::isfinite(rec.train_loss);
  genome_ok &= ghist.records.back().train_loss <= ghist.records.front().train_loss;
  const double genome_minutes = (now_s() - t1) / 60.0;

  log << (synthetic ? "synthetic" : "real") << " image corpus: acc " << acc << " in "
      << image_minutes << " min; genome: loss " << ghist.records.front().train_loss << " -> "
      << ghist.records.back().train_loss << " in " << genome_minutes << " min";
  return acc >= 0.55 && image_minutes < 45.0 && genome_ok && genome_minutes < 10.0;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  bool list = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
    else if (arg == "--list") list = true;
  }

  const std::vector<Check> checks{
      {1, "gradient correctness (central finite differences)", ac1_gradients},
      {2, "parallel/sequential member-forward oracle", ac2_parallel_sequential},
      {3, "gain-diversity trend and collapse regime", ac3_gain_diversity},
      {4, "member-count diversity trend", ac4_member_diversity},
      {5, "ensemble benefit over the single model", ac5_ensemble_benefit},
      {6, "metric oracle equivalence", ac6_metric_oracles},
      {7, "parameter accounting", ac7_parameter_accounting},
      {8, "OOD detection protocol", ac8_ood},
      {9, "determinism and persistence", ac9_determinism},
      {10, "desk-scale image and genome smoke", ac10_smoke},
  };

  if (list) {
    for (const auto& c : checks) std::cout << "AC-" << c.id << ": " << c.name << '\n';
    return 0;
  }

  int failures = 0;
  for (const auto& c : checks) {
    if (only && c.id != only) continue;
    std::ostringstream detail;
    bool ok = false;
    const double t0 = now_s();
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail << "exception: " << e.what();
    }
    const double dt = now_s() - t0;
    std::cout << "[AC-" << c.id << "] " << (ok ? "PASS" : "FAIL") << " (" << dt << " s) "
              << c.name << " -- " << detail.str() << std::endl;
    if (!ok) ++failures;
  }
  if (failures) std::cout << failures << " criteria FAILED" << std::endl;
  else std::cout << "all criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
