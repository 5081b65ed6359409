#include "filmens/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace filmens {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str(), path);
}

KvConfig KvConfig::parse_string(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  cfg.origin_ = origin;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.entries_.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.entries_[key] = Entry{value, lineno, false};
  }
  return cfg;
}

std::string KvConfig::describe(const std::string& key) const {
  const auto it = entries_.find(key);
  return origin_ + ":" + std::to_string(it->second.line) + ": field '" + key + "'";
}

bool KvConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KvConfig::get_str(const std::string& key, const std::string& def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  it->second.consumed = true;
  return it->second.value;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  it->second.consumed = true;
  const std::string& v = it->second.value;
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError(describe(key) + ": '" + v + "' is not an integer");
  return out;
}

double KvConfig::get_double(const std::string& key, double def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  it->second.consumed = true;
  const std::string& v = it->second.value;
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(describe(key) + ": '" + v + "' is not a number");
  }
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  it->second.consumed = true;
  const std::string& v = it->second.value;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(describe(key) + ": '" + v + "' is not a boolean");
}

std::vector<double> KvConfig::get_double_list(const std::string& key,
                                              const std::vector<double>& def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  it->second.consumed = true;
  std::vector<double> out;
  for (const auto& item : split_commas(it->second.value)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(describe(key) + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError(describe(key) + ": empty list");
  return out;
}

std::vector<std::uint64_t> KvConfig::get_u64_list(const std::string& key,
                                                  const std::vector<std::uint64_t>& def) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return def;
  it->second.consumed = true;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_commas(it->second.value)) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc{} || res.ptr != item.data() + item.size())
      throw ConfigError(describe(key) + ": '" + item + "' is not a non-negative integer");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(describe(key) + ": empty list");
  return out;
}

std::vector<std::size_t> KvConfig::get_size_list(const std::string& key,
                                                 const std::vector<std::size_t>& def) const {
  std::vector<std::uint64_t> def64(def.begin(), def.end());
  auto v = get_u64_list(key, def64);
  return {v.begin(), v.end()};
}

std::vector<std::string> KvConfig::unconsumed() const {
  std::vector<std::string> out;
  for (const auto& [key, entry] : entries_)
    if (!entry.consumed)
      out.push_back(origin_ + ":" + std::to_string(entry.line) + ": " + key);
  return out;
}

void KvConfig::reject_unknown() const {
  const auto bad = unconsumed();
  if (bad.empty()) return;
  std::string msg = "unknown config keys:";
  for (const auto& b : bad) msg += "\n  " + b;
  throw ConfigError(msg);
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("RunConfig: need at least one seed");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw ConfigError("RunConfig: seeds must be distinct");
  if (experiment.empty()) throw ConfigError("RunConfig: experiment name is empty");
  train.opt.validate();
}

RunConfig parse_run_config(const KvConfig& kv) {
  RunConfig run;
  run.experiment = kv.get_str("experiment", run.experiment);
  run.out_dir = kv.get_str("out", run.out_dir);
  run.seeds = kv.get_u64_list("seeds", run.seeds);

  auto& d = run.dataset;
  d.kind = kv.get_str("dataset.kind", d.kind);
  d.path = kv.get_str("dataset.path", d.path);
  d.classes = static_cast<int>(kv.get_int("dataset.classes", d.classes));
  d.n_per_class = static_cast<std::size_t>(kv.get_int("dataset.n_per_class",
                                                      static_cast<std::int64_t>(d.n_per_class)));
  d.dim = static_cast<std::size_t>(kv.get_int("dataset.dim", static_cast<std::int64_t>(d.dim)));
  d.spread = kv.get_double("dataset.spread", d.spread);
  d.seed = static_cast<std::uint64_t>(kv.get_int("dataset.seed",
                                                 static_cast<std::int64_t>(d.seed)));
  d.test_fraction = kv.get_double("dataset.test_fraction", d.test_fraction);
  d.subset = static_cast<std::size_t>(kv.get_int("dataset.subset",
                                                 static_cast<std::int64_t>(d.subset)));
  d.test_subset = static_cast<std::size_t>(
      kv.get_int("dataset.test_subset", static_cast<std::int64_t>(d.test_subset)));
  d.n = static_cast<std::size_t>(kv.get_int("dataset.n", static_cast<std::int64_t>(d.n)));
  d.n_test = static_cast<std::size_t>(kv.get_int("dataset.n_test",
                                                 static_cast<std::int64_t>(d.n_test)));
  d.shift = kv.get_double("dataset.shift", d.shift);

  auto& m = run.model;
  m.kind = parse_model_kind(kv.get_str("model.kind", to_string(m.kind)));
  m.ensemble_size = static_cast<std::size_t>(kv.get_int("model.M",
                                                        static_cast<std::int64_t>(m.ensemble_size)));
  m.gain = kv.get_double("model.gain", m.gain);
  m.dropout_rate = kv.get_double("model.dropout", m.dropout_rate);
  m.widths = kv.get_size_list("model.widths", m.widths);

  auto& t = run.train;
  t.opt.epochs = static_cast<std::size_t>(kv.get_int("train.epochs",
                                                     static_cast<std::int64_t>(t.opt.epochs)));
  t.opt.batch_size = static_cast<std::size_t>(
      kv.get_int("train.batch_size", static_cast<std::int64_t>(t.opt.batch_size)));
  t.opt.lr0 = kv.get_double("train.lr0", t.opt.lr0);
  t.opt.momentum = kv.get_double("train.momentum", t.opt.momentum);
  t.opt.weight_decay = kv.get_double("train.weight_decay", t.opt.weight_decay);
  t.eval_every = static_cast<std::size_t>(
      kv.get_int("train.eval_every", static_cast<std::int64_t>(t.eval_every)));
  t.pad_crop = static_cast<std::size_t>(kv.get_int("train.pad_crop",
                                                   static_cast<std::int64_t>(t.pad_crop)));
  t.hflip = kv.get_bool("train.hflip", t.hflip);

  run.sweep_gains = kv.get_double_list("sweep.gains", run.sweep_gains);
  run.sweep_members = kv.get_size_list("sweep.members", run.sweep_members);
  run.sweep_baseline = kv.get_bool("sweep.baseline", run.sweep_baseline);

  kv.reject_unknown();
  run.validate();
  return run;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(KvConfig::parse_file(path));
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : ""; }
}  // namespace

std::string result_csv_header() {
  return "experiment,seed,M,rho,epoch,accuracy,ece,sce,brier,disagreement,mean_kl,auroc,"
         "wall_seconds";
}

std::string to_csv(const ResultRow& r) {
  std::ostringstream os;
  os << r.experiment << ',' << r.seed << ',' << r.members << ',' << fmt_double(r.gain) << ','
     << r.epoch << ',' << fmt_double(r.accuracy) << ',' << fmt_double(r.ece) << ','
     << fmt_double(r.sce) << ',' << fmt_double(r.brier) << ',' << fmt_opt(r.disagreement) << ','
     << fmt_opt(r.mean_kl) << ',' << fmt_opt(r.auroc) << ',' << fmt_double(r.wall_seconds);
  return os.str();
}

std::vector<ResultRow> parse_result_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::vector<ResultRow> rows;
  bool first = true;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    if (first) {
      if (line != result_csv_header())
        throw FormatError("result CSV: unexpected header '" + line + "'");
      first = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    while (cells.size() < 13) cells.emplace_back();
    if (cells.size() != 13)
      throw FormatError("result CSV: expected 13 columns, got " + std::to_string(cells.size()));
    ResultRow r;
    r.experiment = cells[0];
    r.seed = std::stoull(cells[1]);
    r.members = std::stoull(cells[2]);
    r.gain = std::stod(cells[3]);
    r.epoch = std::stoull(cells[4]);
    r.accuracy = std::stod(cells[5]);
    r.ece = std::stod(cells[6]);
    r.sce = std::stod(cells[7]);
    r.brier = std::stod(cells[8]);
    if (!cells[9].empty()) r.disagreement = std::stod(cells[9]);
    if (!cells[10].empty()) r.mean_kl = std::stod(cells[10]);
    if (!cells[11].empty()) r.auroc = std::stod(cells[11]);
    r.wall_seconds = std::stod(cells[12]);
    rows.push_back(std::move(r));
  }
  return rows;
}

CsvWriter::CsvWriter(std::string path) : path_(std::move(path)) {
  std::ofstream f(path_, std::ios::trunc);
  if (!f) throw FormatError("CsvWriter: cannot open " + path_);
  f << result_csv_header() << '\n';
}

void CsvWriter::append(const ResultRow& row) {
  std::ofstream f(path_, std::ios::app);
  if (!f) throw FormatError("CsvWriter: cannot reopen " + path_);
  f << to_csv(row) << '\n';
}

}  // namespace filmens
