#include "convexvolt/datagen.hpp"

#include "convexvolt/error.hpp"
#include "convexvolt/network_io.hpp"
#include "convexvolt/parallel.hpp"
#include "convexvolt/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

namespace convexvolt {

void ScenarioConfig::validate() const
{
  if (n_samples < 1) throw InvalidArgument("n_samples must be >= 1");
  if (!(pf_min > 0.0 && pf_min <= pf_max && pf_max <= 1.0)) {
    throw InvalidArgument("power factor range must satisfy 0 < pf_min <= pf_max <= 1");
  }
  if (!(load_scale_min <= load_scale_max)) throw InvalidArgument("load_scale_min must be <= load_scale_max");
  if (!std::isfinite(v_ref) || v_ref <= 0.0) throw InvalidArgument("v_ref must be positive");
}

Eigen::VectorXd Sample::input() const
{
  Eigen::VectorXd x(p.size() + q.size());
  x << p, q;
  return x;
}

Eigen::MatrixXd Dataset::input_matrix() const
{
  const auto m = static_cast<Eigen::Index>(bus_count());
  Eigen::MatrixXd out(2 * m, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)).head(m) = samples[k].p;
    out.col(static_cast<Eigen::Index>(k)).tail(m) = samples[k].q;
  }
  return out;
}

Eigen::MatrixXd Dataset::target_matrix() const
{
  const auto m = static_cast<Eigen::Index>(bus_count());
  Eigen::MatrixXd out(m, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t k = 0; k < samples.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = samples[k].target;
  return out;
}

double reactive_from_pf(double p, double pf)
{
  if (!(pf > 0.0 && pf <= 1.0)) throw InvalidArgument("power factor must lie in (0, 1]");
  return p * std::sqrt(1.0 - pf * pf) / pf;
}

Dataset generate_dataset(const RadialNetwork& net, const ScenarioConfig& cfg, std::string network_id)
{
  cfg.validate();
  const auto m = static_cast<Eigen::Index>(net.load_bus_count());
  const Eigen::VectorXd base_p = net.base_load_p();
  const double v_ref = cfg.v_ref;

  std::vector<std::optional<Sample>> slots(cfg.n_samples);
  parallel_for(cfg.n_samples, [&](std::size_t k) {
    RandomStream rng(cfg.seed, kStreamSamples + k);
    Sample s;
    s.p.resize(m);
    s.q.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) s.p[j] = rng.uniform(cfg.load_scale_min, cfg.load_scale_max) * base_p[j];
    for (Eigen::Index j = 0; j < m; ++j) s.q[j] = reactive_from_pf(s.p[j], rng.uniform(cfg.pf_min, cfg.pf_max));
    try {
      const PowerFlowSolution sol = solve_distflow(net, s.p, s.q);
      if (!sol.converged) return;
      s.v_true = voltage_magnitudes(sol).tail(m);
    } catch (const DivergenceError&) {
      return;
    }
    s.target = (s.v_true.array() - v_ref).abs().matrix();
    slots[k] = std::move(s);
  });

  Dataset ds;
  ds.network_id = std::move(network_id);
  ds.config = cfg;
  for (auto& slot : slots) {
    if (slot) {
      ds.samples.push_back(std::move(*slot));
    } else {
      ++ds.skipped;
    }
  }
  if (ds.skipped * 10 > cfg.n_samples) {
    throw InvalidArgument(std::to_string(ds.skipped) + " of " + std::to_string(cfg.n_samples) +
                          " scenarios did not converge; check the load scale range");
  }
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed)
{
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidArgument("train_fraction must lie in (0, 1)");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) throw InvalidArgument("split would leave an empty partition");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  RandomStream rng(seed, kStreamSplit);
  rng.shuffle(idx);

  std::pair<Dataset, Dataset> out;
  for (Dataset* part : {&out.first, &out.second}) {
    part->network_id = ds.network_id;
    part->config = ds.config;
  }
  out.first.skipped = ds.skipped;
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? out.first : out.second).samples.push_back(ds.samples[idx[i]]);
  }
  return out;
}

namespace {

void put(std::ostringstream& out, double value)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  out << buf;
}

std::string expect_key(std::istringstream& in, const std::string& key)
{
  std::string word;
  if (!(in >> word) || word != key) throw ParseError("dataset: expected '" + key + "'");
  std::string value;
  if (!(in >> value)) throw ParseError("dataset: missing value for '" + key + "'");
  return value;
}

double parse_double(const std::string& s)
{
  char* end = nullptr;
  const double value = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ParseError("dataset: bad number '" + s + "'");
  return value;
}

std::uint64_t parse_u64(const std::string& s)
{
  try {
    std::size_t used = 0;
    const auto value = std::stoull(s, &used);
    if (used != s.size()) throw ParseError("dataset: bad integer '" + s + "'");
    return value;
  } catch (const std::logic_error&) {
    throw ParseError("dataset: bad integer '" + s + "'");
  }
}

}  // namespace

std::string format_dataset(const Dataset& ds)
{
  std::ostringstream out;
  const ScenarioConfig& c = ds.config;
  out << "convexvolt-dataset 1\n";
  out << "network_id " << ds.network_id << '\n';
  out << "config n_samples " << c.n_samples << " scale_min ";
  put(out, c.load_scale_min);
  out << " scale_max ";
  put(out, c.load_scale_max);
  out << " pf_min ";
  put(out, c.pf_min);
  out << " pf_max ";
  put(out, c.pf_max);
  out << " seed " << c.seed << " v_ref ";
  put(out, c.v_ref);
  out << '\n';
  out << "dims samples " << ds.size() << " buses " << ds.bus_count() << '\n';
  out << "skipped " << ds.skipped << '\n';
  out << "data p[1..m] q[1..m] target[1..m] v_true[1..m]\n";
  for (const Sample& s : ds.samples) {
    bool first = true;
    for (const Eigen::VectorXd* vec : {&s.p, &s.q, &s.target, &s.v_true}) {
      for (Eigen::Index j = 0; j < vec->size(); ++j) {
        if (!first) out << ' ';
        put(out, (*vec)[j]);
        first = false;
      }
    }
    out << '\n';
  }
  return out.str();
}

Dataset parse_dataset(const std::string& content)
{
  std::istringstream in(content);
  std::string line;
  auto next_line = [&]() -> std::istringstream {
    if (!std::getline(in, line)) throw ParseError("dataset: truncated header");
    return std::istringstream(line);
  };

  Dataset ds;
  {
    auto hdr = next_line();
    if (expect_key(hdr, "convexvolt-dataset") != "1") throw ParseError("dataset: unsupported version");
  }
  {
    auto hdr = next_line();
    ds.network_id = expect_key(hdr, "network_id");
  }
  {
    auto hdr = next_line();
    std::string word;
    hdr >> word;
    if (word != "config") throw ParseError("dataset: expected 'config'");
    ScenarioConfig& c = ds.config;
    c.n_samples = parse_u64(expect_key(hdr, "n_samples"));
    c.load_scale_min = parse_double(expect_key(hdr, "scale_min"));
    c.load_scale_max = parse_double(expect_key(hdr, "scale_max"));
    c.pf_min = parse_double(expect_key(hdr, "pf_min"));
    c.pf_max = parse_double(expect_key(hdr, "pf_max"));
    c.seed = parse_u64(expect_key(hdr, "seed"));
    c.v_ref = parse_double(expect_key(hdr, "v_ref"));
  }
  std::size_t n = 0;
  Eigen::Index m = 0;
  {
    auto hdr = next_line();
    std::string word;
    hdr >> word;
    if (word != "dims") throw ParseError("dataset: expected 'dims'");
    n = parse_u64(expect_key(hdr, "samples"));
    m = static_cast<Eigen::Index>(parse_u64(expect_key(hdr, "buses")));
  }
  {
    auto hdr = next_line();
    ds.skipped = parse_u64(expect_key(hdr, "skipped"));
  }
  {
    next_line();
    if (line.rfind("data", 0) != 0) throw ParseError("dataset: expected 'data'");
  }

  ds.samples.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto rec = next_line();
    Sample s;
    for (Eigen::VectorXd* vec : {&s.p, &s.q, &s.target, &s.v_true}) {
      vec->resize(m);
      for (Eigen::Index j = 0; j < m; ++j) {
        std::string tok;
        if (!(rec >> tok)) throw ParseError("dataset: record " + std::to_string(k) + " is short");
        (*vec)[j] = parse_double(tok);
      }
    }
    std::string extra;
    if (rec >> extra) throw ParseError("dataset: record " + std::to_string(k) + " is long");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) { write_file(path, format_dataset(ds)); }

Dataset load_dataset(const std::filesystem::path& path) { return parse_dataset(read_file(path)); }

}  // namespace convexvolt
