// filmens: train and evaluate FiLM ensembles, sweep members/gain, run the
// OOD protocol, and emit result CSVs for plotting.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "filmens/config.hpp"
#include "filmens/experiments.hpp"

namespace fs = std::filesystem;
using namespace filmens;

namespace {

struct CliOverrides {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  std::string gains;
  std::string members;
  std::string checkpoint;
  bool baseline = false;
  unsigned parallel = 1;
};

RunConfig load_with_overrides(const CliOverrides& cli) {
  RunConfig run = load_run_config(cli.config_path);
  if (const char* env_seed = std::getenv("FILMENS_SEED")) {
    KvConfig env = KvConfig::parse_string(std::string("seeds=") + env_seed, "FILMENS_SEED");
    run.seeds = env.get_u64_list("seeds", run.seeds);
  }
  auto apply = [&](const std::string& text) {
    return KvConfig::parse_string(text, "command line");
  };
  if (!cli.seeds.empty()) run.seeds = apply("v=" + cli.seeds).get_u64_list("v", {});
  if (!cli.gains.empty()) run.sweep_gains = apply("v=" + cli.gains).get_double_list("v", {});
  if (!cli.members.empty()) run.sweep_members = apply("v=" + cli.members).get_size_list("v", {});
  if (!cli.out_dir.empty()) run.out_dir = cli.out_dir;
  if (cli.baseline) run.sweep_baseline = true;
  run.validate();
  return run;
}

std::string self_path(const char* argv0) {
  std::error_code ec;
  auto p = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) return p.string();
  return argv0;
}

/// One independent (setting, seed) cell of a sweep, re-run as a child
/// process with its outputs in a private directory.
struct Cell {
  std::string extra_args;  // e.g. "--seeds 2 --gains 0.5"
  std::string out_dir;
};

int run_cells_parallel(const std::string& exe, const std::string& subcmd,
                       const CliOverrides& cli, const RunConfig& run,
                       const std::vector<Cell>& cells) {
  std::vector<int> status(cells.size(), 0);
  std::mutex next_mutex;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t mine;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= cells.size()) return;
        mine = next++;
      }
      std::ostringstream cmd;
      cmd << '"' << exe << "\" " << subcmd << " --config \"" << cli.config_path << "\" --out \""
          << cells[mine].out_dir << "\" " << cells[mine].extra_args << " > \""
          << cells[mine].out_dir << "/log.txt\" 2>&1";
      fs::create_directories(cells[mine].out_dir);
      status[mine] = std::system(cmd.str().c_str());
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = std::max(1u, cli.parallel);
  for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // merge in cell order so the result is identical to a sequential run
  fs::create_directories(run.out_dir);
  CsvWriter csv(run.out_dir + "/results.csv");
  int rc = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (status[i] != 0) {
      std::cerr << "cell " << i << " failed; log: " << cells[i].out_dir << "/log.txt\n";
      rc = 1;
      continue;
    }
    std::ifstream f(cells[i].out_dir + "/results.csv");
    std::stringstream ss;
    ss << f.rdbuf();
    for (const auto& row : parse_result_csv(ss.str())) {
      csv.append(row);
      std::cout << to_csv(row) << '\n';
    }
    for (const auto& entry : fs::directory_iterator(cells[i].out_dir))
      if (entry.path().extension() == ".ckpt")
        fs::rename(entry.path(), fs::path(run.out_dir) / entry.path().filename());
  }
  return rc;
}

int dispatch(const std::string& subcmd, const CliOverrides& cli, const char* argv0) {
  RunConfig run = load_with_overrides(cli);

  if (cli.parallel > 1 && subcmd != "eval" && subcmd != "diversity") {
    std::vector<Cell> cells;
    const std::string tmp_base = run.out_dir + "/cells";
    auto cell_dir = [&](std::size_t i) { return tmp_base + "/cell" + std::to_string(i); };
    if (subcmd == "train" || subcmd == "ood") {
      for (std::uint64_t s : run.seeds)
        cells.push_back({"--seeds " + std::to_string(s), cell_dir(cells.size())});
    } else if (subcmd == "sweep-gain") {
      for (double g : run.sweep_gains)
        for (std::uint64_t s : run.seeds) {
          std::ostringstream os;
          os << "--seeds " << s << " --gains " << g;
          cells.push_back({os.str(), cell_dir(cells.size())});
        }
    } else {  // sweep-members
      for (std::size_t m : run.sweep_members)
        for (std::uint64_t s : run.seeds) {
          std::ostringstream os;
          os << "--seeds " << s << " --members " << m;
          if (run.sweep_baseline) os << " --baseline";
          cells.push_back({os.str(), cell_dir(cells.size())});
        }
    }
    return run_cells_parallel(self_path(argv0), subcmd, cli, run, cells);
  }

  if (subcmd == "train") {
    cmd_train(run);
  } else if (subcmd == "sweep-gain") {
    cmd_sweep_gain(run);
  } else if (subcmd == "sweep-members") {
    cmd_sweep_members(run);
  } else if (subcmd == "ood") {
    cmd_ood(run);
  } else if (subcmd == "eval") {
    cmd_eval(run, cli.checkpoint);
  } else {  // diversity
    cmd_diversity(run, cli.checkpoint);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FiLM-Ensemble experiment runner"};
  app.require_subcommand(1);

  CliOverrides cli;
  auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
    sub->add_option("--config", cli.config_path, "experiment config file (key=value)")
        ->required();
    sub->add_option("--out", cli.out_dir, "output directory (overrides config)");
    sub->add_option("--seeds", cli.seeds, "comma-separated seeds (overrides config)");
    sub->add_option("--parallel", cli.parallel,
                    "run independent (setting, seed) cells as N concurrent processes");
    if (with_checkpoint)
      sub->add_option("--checkpoint", cli.checkpoint, "checkpoint file")->required();
  };

  add_common(app.add_subcommand("train", "train one configuration over the seed list"), false);
  auto* sg = app.add_subcommand("sweep-gain", "full train/eval per (gain, seed)");
  add_common(sg, false);
  sg->add_option("--gains", cli.gains, "comma-separated gains (overrides config)");
  auto* sm = app.add_subcommand("sweep-members", "full train/eval per (ensemble size, seed)");
  add_common(sm, false);
  sm->add_option("--members", cli.members, "comma-separated member counts (overrides config)");
  sm->add_flag("--baseline", cli.baseline, "also run the explicit deep-ensemble baseline");
  add_common(app.add_subcommand("ood", "train in-distribution, score OOD detection AUROC"),
             false);
  add_common(app.add_subcommand("eval", "evaluate a checkpoint, no training"), true);
  add_common(app.add_subcommand("diversity", "diversity metrics of an ensemble checkpoint"),
             true);

  CLI11_PARSE(app, argc, argv);

  try {
    return dispatch(app.get_subcommands().front()->get_name(), cli, argv[0]);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
