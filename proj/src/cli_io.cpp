#include "itevar/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "itevar/errors.hpp"
#include "itevar/serialization.hpp"

namespace itevar {

namespace fs = std::filesystem;

std::string fingerprint(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvError::CsvError(std::size_t line, std::size_t column, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

template <typename Int>
bool parse_int(const std::string& s, Int& out) {
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::string hash_values(const ObservedData& d) {
  std::string s;
  s.reserve(d.size() * 64);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.x.row(i)) s += format_double(v) + ",";
    s += format_double(d.a[i]) + "," + format_double(d.y[i]) + "\n";
  }
  return fingerprint(s);
}

ScenarioConfig scenario_defaults(ScenarioKind kind, std::size_t n, double rho, double kappa, bool strong,
                                 std::uint64_t seed) {
  if (kind == ScenarioKind::DependentNoise) return ScenarioConfig::dependent_noise(kappa, n, rho, seed);
  if (kind == ScenarioKind::ConfounderOnly) return ScenarioConfig::confounder_only(strong, n, rho, seed);
  auto c = ScenarioConfig::make(kind, n, rho, seed);
  c.kappa = kappa;  // validate() rejects a non-zero value
  c.strong = strong;
  return c;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

// ---- datasets --------------------------------------------------------------

std::string canonical_scenario(const ScenarioConfig& c) {
  std::ostringstream s;
  s << "scenario=" << to_string(c.kind) << " n=" << c.n << " rho=" << format_double(c.rho)
    << " kappa=" << format_double(c.kappa) << " strong=" << (c.strong ? 1 : 0)
    << " delta=" << format_double(c.delta) << " p_sex=" << format_double(c.p_sex)
    << " alpha=" << format_double(c.alpha0) << "," << format_double(c.alpha_sex) << ","
    << format_double(c.alpha_sbp) << " beta=" << format_double(c.beta0) << "," << format_double(c.beta_sex)
    << "," << format_double(c.beta_sbp) << " tau=" << format_double(c.tau0) << ","
    << format_double(c.tau_sex) << "," << format_double(c.tau_sbp) << " sigma0=" << format_double(c.sigma0)
    << " sigma1=" << format_double(c.sigma1) << " sigma1_effective=" << format_double(c.effective_sigma1())
    << " randomized_p=" << format_double(c.randomized_p) << " seed=" << c.seed;
  return s.str();
}

void write_dataset_csv(std::ostream& out, const SimulatedDataset& data, const ScenarioConfig& config, bool oracle) {
  const auto canon = canonical_scenario(config) + (oracle ? " oracle=1" : " oracle=0");
  out << "# fingerprint=" << fingerprint(canon) << " " << canon << "\n";
  out << "x_sex,x_sbp,x0,a,y" << (oracle ? ",y0,y1,ite" : "") << "\n";
  const auto& o = data.observed;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << format_double(o.x(i, kFeatureSex)) << ',' << format_double(o.x(i, kFeatureSbp)) << ','
        << format_double(o.x(i, kFeatureX0)) << ',' << format_double(o.a[i]) << ',' << format_double(o.y[i]);
    if (oracle)
      out << ',' << format_double(data.hidden.y0[i]) << ',' << format_double(data.hidden.y1[i]) << ','
          << format_double(data.hidden.ite[i]);
    out << '\n';
  }
}

ObservedData read_dataset_csv(std::istream& in) {
  static const char* const kRequired[] = {"x_sex", "x_sbp", "x0", "a", "y"};
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::size_t> index;
  std::size_t width = 0;
  std::vector<double> x, a, y;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, ',');
    if (index.empty()) {
      width = cells.size();
      for (const char* name : kRequired) {
        const auto it = std::find(cells.begin(), cells.end(), name);
        if (it == cells.end()) throw CsvError(line_no, 0, std::string("missing column '") + name + "'");
        index.push_back(static_cast<std::size_t>(it - cells.begin()));
      }
      continue;
    }
    if (cells.size() != width)
      throw CsvError(line_no, std::min(cells.size(), width) + 1,
                     "expected " + std::to_string(width) + " fields, found " + std::to_string(cells.size()));
    double v[5];
    for (std::size_t k = 0; k < 5; ++k) {
      if (!parse_double(cells[index[k]], v[k]) || !std::isfinite(v[k]))
        throw CsvError(line_no, index[k] + 1, "not a finite number: '" + cells[index[k]] + "'");
    }
    if (v[3] != 0.0 && v[3] != 1.0) throw CsvError(line_no, index[3] + 1, "treatment must be 0 or 1");
    x.insert(x.end(), {v[0], v[1], v[2]});
    a.push_back(v[3]);
    y.push_back(v[4]);
  }
  if (index.empty()) throw CsvError(line_no, 0, "no header line");
  if (y.empty()) throw CsvError(line_no, 0, "no data rows");
  ObservedData d;
  d.x = FeatureMatrix(y.size(), kNumFeatures, std::move(x));
  d.a = std::move(a);
  d.y = std::move(y);
  return d;
}

ObservedData read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_dataset_csv(in);
}

// ---- fits ------------------------------------------------------------------

void write_fit_csv(std::ostream& out, const ExtendedFit& fit, const std::string& fp) {
  out << "# fingerprint=" << fp << "\n";
  out << "i,tau_hat,theta0_hat,delta_hat,sigma1_sq_hat\n";
  auto cell = [](const std::vector<double>& v, std::size_t i) {
    return i < v.size() ? format_double(v[i]) : std::string("NA");
  };
  for (std::size_t i = 0; i < fit.size(); ++i)
    out << i << ',' << cell(fit.tau_hat, i) << ',' << cell(fit.theta0_hat, i) << ',' << cell(fit.delta_hat, i)
        << ',' << cell(fit.sigma1_sq_hat, i) << '\n';
}

void write_density_csv(std::ostream& out, const ITEDensity& density, const std::string& fp) {
  out << "# fingerprint=" << fp << " bandwidth=" << format_double(density.bandwidth) << "\n";
  out << "y,f_y,method\n";
  const auto method = to_string(density.method);
  for (std::size_t g = 0; g < density.grid.size(); ++g)
    out << format_double(density.grid[g]) << ',' << format_double(density.density[g]) << ',' << method << '\n';
}

// ---- experiment specs ------------------------------------------------------

namespace {

struct Entry {
  std::string value;
  std::size_t line;
};
using Section = std::map<std::string, Entry>;

class SectionReader {
 public:
  explicit SectionReader(const Section& s) : s_(s) {}

  bool has(const std::string& key) {
    used_.insert(key);
    return s_.count(key) > 0;
  }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(key, "line " + std::to_string(s_.at(key).line) + ": " + what);
  }
  double real(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    double v;
    if (!parse_double(s_.at(key).value, v) || !std::isfinite(v)) fail(key, "expected a number");
    return v;
  }
  template <typename Int>
  Int integer(const std::string& key, Int fallback) {
    if (!has(key)) return fallback;
    Int v;
    if (!parse_int(s_.at(key).value, v)) fail(key, "expected a non-negative integer");
    return v;
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = s_.at(key).value;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(key, "expected true or false");
  }
  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    return s_.at(key).value;
  }
  void reject_unknown() const {
    for (const auto& [key, e] : s_)
      if (!used_.count(key)) throw ConfigError(key, "line " + std::to_string(e.line) + ": unknown key");
  }
  std::size_t line_of(const std::string& key) const { return s_.at(key).line; }

 private:
  const Section& s_;
  std::set<std::string> used_;
};

ScenarioRun build_scenario(const Section& section, std::size_t header_line) {
  SectionReader r(section);
  ScenarioKind kind = ScenarioKind::Baseline;
  if (r.has("kind")) {
    try {
      kind = scenario_kind_from_string(r.text("kind", ""));
    } catch (const std::exception& e) {
      r.fail("kind", e.what());
    }
  }
  const auto n = r.integer<std::size_t>("n", 2000);
  const double rho = r.real("rho", 0.0);
  const double kappa = r.real("kappa", 0.0);
  const bool strong = r.boolean("strong", false);
  auto c = scenario_defaults(kind, n, rho, kappa, strong, 0);
  c.delta = r.real("delta", c.delta);
  c.p_sex = r.real("p_sex", c.p_sex);
  c.alpha0 = r.real("alpha0", c.alpha0);
  c.alpha_sex = r.real("alpha_sex", c.alpha_sex);
  c.alpha_sbp = r.real("alpha_sbp", c.alpha_sbp);
  c.beta0 = r.real("beta0", c.beta0);
  c.beta_sex = r.real("beta_sex", c.beta_sex);
  c.beta_sbp = r.real("beta_sbp", c.beta_sbp);
  c.tau0 = r.real("tau0", c.tau0);
  c.tau_sex = r.real("tau_sex", c.tau_sex);
  c.tau_sbp = r.real("tau_sbp", c.tau_sbp);
  c.sigma0 = r.real("sigma0", c.sigma0);
  c.sigma1 = r.real("sigma1", c.sigma1);
  c.randomized_p = r.real("randomized_p", c.randomized_p);
  std::ostringstream def;
  def << to_string(kind) << "_n" << n << (kind == ScenarioKind::DependentNoise ? "_kappa" : "_rho")
      << format_double(kind == ScenarioKind::DependentNoise ? kappa : rho) << (strong ? "_strong" : "");
  ScenarioRun run{r.text("id", def.str()), c};
  r.reject_unknown();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.field(), "scenario block at line " + std::to_string(header_line) + ": " + e.what());
  }
  return run;
}

}  // namespace

ExperimentSpec parse_experiment_spec(std::istream& in) {
  Section plan_section;
  std::vector<std::pair<Section, std::size_t>> scenario_sections;
  Section* current = &plan_section;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t == "[scenario]") {
      scenario_sections.emplace_back(Section{}, line_no);
      current = &scenario_sections.back().first;
      continue;
    }
    if (t.front() == '[') throw ConfigError(t, "line " + std::to_string(line_no) + ": unknown section");
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("syntax", "line " + std::to_string(line_no) + ": expected key = value");
    const auto key = trim(std::string_view(t).substr(0, eq));
    const auto value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("syntax", "line " + std::to_string(line_no) + ": empty key");
    if (!current->emplace(key, Entry{value, line_no}).second)
      throw ConfigError(key, "line " + std::to_string(line_no) + ": duplicate key");
  }

  ExperimentSpec spec;
  auto& p = spec.plan;
  SectionReader r(plan_section);
  if (!r.has("master_seed")) throw ConfigError("master_seed", "required (runs are never seeded from the clock)");
  p.master_seed = r.integer<std::uint64_t>("master_seed", 0);
  p.replications = r.integer<std::size_t>("replications", p.replications);
  p.settings.bootstrap_b = r.integer<std::size_t>("bootstrap_b", p.settings.bootstrap_b);
  if (r.has("estimators")) {
    p.settings.estimators.clear();
    for (const auto& name : split(r.text("estimators", ""), ',')) {
      Estimator e;
      try {
        e = estimator_from_string(name);
      } catch (const ConfigError& ex) {
        r.fail("estimators", ex.what());
      }
      if (std::find(p.settings.estimators.begin(), p.settings.estimators.end(), e) != p.settings.estimators.end())
        r.fail("estimators", "listed twice: " + name);
      p.settings.estimators.push_back(e);
    }
    if (p.settings.estimators.empty()) r.fail("estimators", "empty list");
  }
  auto& fp = p.settings.params;
  fp.num_trees = r.integer<std::size_t>("trees", 500);
  fp.subsample_fraction = r.real("subsample_fraction", fp.subsample_fraction);
  fp.honesty_fraction = r.real("honesty_fraction", fp.honesty_fraction);
  fp.mtry = r.integer<std::size_t>("mtry", fp.mtry);
  fp.min_node_size = r.integer<std::size_t>("min_node_size", fp.min_node_size);
  fp.max_depth = r.integer<std::size_t>("max_depth", fp.max_depth);
  fp.imbalance_alpha = r.real("imbalance_alpha", fp.imbalance_alpha);
  fp.stabilize_splits = r.boolean("stabilize_splits", fp.stabilize_splits);
  fp.poisson_mtry = r.boolean("poisson_mtry", fp.poisson_mtry);
  if (r.has("denominator")) {
    const auto d = r.text("denominator", "");
    if (d == to_string(Denominator::Squared)) p.settings.options.denominator = Denominator::Squared;
    else if (d == to_string(Denominator::PaperLiteral)) p.settings.options.denominator = Denominator::PaperLiteral;
    else r.fail("denominator", "expected squared or paper-literal");
  }
  p.settings.options.propensity_clamp = r.real("propensity_clamp", p.settings.options.propensity_clamp);
  p.densities = r.boolean("densities", p.densities);
  p.truth_mc_n = r.integer<std::size_t>("truth_mc_n", p.truth_mc_n);
  p.small_n_min_node_size = r.boolean("small_n_min_node_size", p.small_n_min_node_size);
  r.reject_unknown();
  try {
    fp.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.field(), std::string("plan: ") + e.what());
  }
  if (p.replications == 0) throw ConfigError("replications", "must be at least 1");

  std::set<std::string> ids;
  for (const auto& [section, header_line] : scenario_sections) {
    auto run = build_scenario(section, header_line);
    if (!ids.insert(run.id).second)
      throw ConfigError("id", "line " + std::to_string(header_line) + ": duplicate scenario id " + run.id);
    p.scenarios.push_back(std::move(run));
  }
  if (p.scenarios.empty()) throw ConfigError("scenario", "at least one [scenario] block is required");
  return spec;
}

ExperimentSpec parse_experiment_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_experiment_spec(in);
}

std::string canonical_spec(const ExperimentSpec& spec) {
  const auto& p = spec.plan;
  const auto& fp = p.settings.params;
  std::ostringstream s;
  s << "master_seed=" << p.master_seed << "\nreplications=" << p.replications
    << "\nbootstrap_b=" << p.settings.bootstrap_b << "\nestimators=";
  for (std::size_t k = 0; k < p.settings.estimators.size(); ++k)
    s << (k ? "," : "") << to_string(p.settings.estimators[k]);
  s << "\ntrees=" << fp.num_trees << "\nsubsample_fraction=" << format_double(fp.subsample_fraction)
    << "\nhonesty_fraction=" << format_double(fp.honesty_fraction) << "\nmtry=" << fp.mtry
    << "\nmin_node_size=" << fp.min_node_size << "\nmax_depth=" << fp.max_depth
    << "\nimbalance_alpha=" << format_double(fp.imbalance_alpha) << "\nstabilize_splits=" << fp.stabilize_splits
    << "\npoisson_mtry=" << fp.poisson_mtry << "\ndenominator=" << to_string(p.settings.options.denominator)
    << "\npropensity_clamp=" << format_double(p.settings.options.propensity_clamp)
    << "\ndensities=" << p.densities << "\ntruth_mc_n=" << p.truth_mc_n
    << "\nsmall_n_min_node_size=" << p.small_n_min_node_size << "\n";
  for (const auto& run : p.scenarios) s << "[" << run.id << "] " << canonical_scenario(run.config) << "\n";
  return s.str();
}

void write_experiment_results(const std::string& dir, const ExperimentOutcome& outcome, const ExperimentPlan& plan,
                              const std::string& fp) {
  fs::create_directories(dir);
  const std::string header = "# fingerprint=" + fp + "\n";
  auto ci = [](const std::optional<Interval>& c, bool hi) {
    return c ? format_double(hi ? c->hi : c->lo) : std::string("NA");
  };
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };

  auto reps = open_out(fs::path(dir) / "replications.csv");
  reps << header
       << "scenario,rho_or_kappa,n,replication,seed,estimator,ate,sd,pep,ci_ate_lo,ci_ate_hi,ci_sd_lo,ci_sd_hi,"
          "ci_pep_lo,ci_pep_hi,bootstrap_used\n";
  for (const auto& so : outcome.scenarios) {
    const auto& c = so.run.config;
    const double rk = c.kind == ScenarioKind::DependentNoise ? c.kappa : c.rho;
    for (const auto& rep : so.replications)
      for (const auto& e : rep.estimates)
        reps << so.run.id << ',' << format_double(rk) << ',' << c.n << ',' << rep.index << ',' << rep.seed << ','
             << to_string(e.estimator) << ',' << format_double(e.point.ate) << ',' << format_double(e.point.sd)
             << ',' << format_double(e.point.pep) << ',' << ci(e.ci_ate, false) << ',' << ci(e.ci_ate, true) << ','
             << ci(e.ci_sd, false) << ',' << ci(e.ci_sd, true) << ',' << ci(e.ci_pep, false) << ','
             << ci(e.ci_pep, true) << ',' << e.bootstrap_used << '\n';
  }

  auto agg = open_out(fs::path(dir) / "aggregate.csv");
  agg << header
      << "scenario,kind,rho_or_kappa,n,estimator,replications,bias_ate,bias_sd,bias_pep,mse_ate,mse_sd,mse_pep,"
         "cov_ate,cov_sd,cov_pep,mean_ate,mean_sd,mean_pep,true_ate,true_sd,true_pep\n";
  for (const auto& so : outcome.scenarios)
    for (const auto& row : so.aggregate)
      agg << row.scenario_id << ',' << to_string(row.kind) << ',' << format_double(row.rho_or_kappa) << ','
          << row.n << ',' << to_string(row.estimator) << ',' << row.replications << ','
          << format_double(row.ate.bias) << ',' << format_double(row.sd.bias) << ',' << format_double(row.pep.bias)
          << ',' << format_double(row.ate.mse) << ',' << format_double(row.sd.mse) << ','
          << format_double(row.pep.mse) << ',' << opt(row.ate.coverage) << ',' << opt(row.sd.coverage) << ','
          << opt(row.pep.coverage) << ',' << format_double(row.ate.mean) << ',' << format_double(row.sd.mean)
          << ',' << format_double(row.pep.mean) << ',' << format_double(so.truth.ate) << ','
          << format_double(so.truth.sd) << ',' << format_double(so.truth.pep) << '\n';

  if (!plan.densities) return;
  for (auto e : plan.settings.estimators) {
    auto dens = open_out(fs::path(dir) / ("density_" + to_string(e) + ".csv"));
    dens << header << "scenario,grid,mean,q025,q975\n";
    for (const auto& so : outcome.scenarios)
      for (const auto& [est, band] : so.bands) {
        if (est != e) continue;
        for (std::size_t g = 0; g < band.grid.size(); ++g)
          dens << so.run.id << ',' << format_double(band.grid[g]) << ',' << format_double(band.mean[g]) << ','
               << format_double(band.q025[g]) << ',' << format_double(band.q975[g]) << '\n';
      }
  }
}

// ---- commands --------------------------------------------------------------

int cmd_simulate(const SimulateOptions& opt, std::ostream& err) {
  ScenarioKind kind;
  try {
    kind = scenario_kind_from_string(opt.scenario);
  } catch (const std::exception& e) {
    err << "error: --scenario: " << e.what() << "\n";
    return kExitUsage;
  }
  if (opt.kappa && kind != ScenarioKind::DependentNoise) {
    err << "error: --kappa conflicts with --scenario " << opt.scenario << " (--kappa needs --scenario dependent)\n";
    return kExitUsage;
  }
  if (opt.strong && kind != ScenarioKind::ConfounderOnly) {
    err << "error: --strong conflicts with --scenario " << opt.scenario
        << " (--strong needs --scenario confounder)\n";
    return kExitUsage;
  }
  if (opt.out.empty()) {
    err << "error: --out is required\n";
    return kExitUsage;
  }
  const auto config = scenario_defaults(kind, opt.n, opt.rho, opt.kappa.value_or(0.0), opt.strong, opt.seed);
  try {
    config.validate();
  } catch (const ConfigError& e) {
    err << "error: --" << e.field() << ": " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    const auto data = generate_dataset(config);
    auto out = open_out(opt.out);
    write_dataset_csv(out, data, config, opt.oracle);
    if (!out) throw std::runtime_error("write failed: " + opt.out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_fit(const FitOptions& opt, std::ostream& err) {
  Estimator estimator;
  try {
    estimator = estimator_from_string(opt.estimator);
    if (estimator == Estimator::Oracle) throw ConfigError("estimator", "oracle needs hidden columns");
  } catch (const ConfigError& e) {
    err << "error: --estimator: " << e.what() << "\n";
    return kExitUsage;
  }
  if (opt.paper_literal_denominator && estimator == Estimator::CrfNoOrth) {
    err << "error: --paper-literal-denominator conflicts with --estimator crf_no_orth\n";
    return kExitUsage;
  }
  if (opt.input.empty() || opt.out.empty()) {
    err << "error: --input and --out are required\n";
    return kExitUsage;
  }
  ForestParams params;
  params.num_trees = opt.trees;
  params.seed = opt.seed;
  params.min_node_size = opt.min_node_size;
  params.num_threads = opt.threads;
  CausalOptions options;
  options.orthogonalize = estimator != Estimator::CrfNoOrth;
  options.denominator = opt.paper_literal_denominator ? Denominator::PaperLiteral : Denominator::Squared;
  try {
    params.validate();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  ObservedData data;
  try {
    data = read_dataset_csv(opt.input);
  } catch (const std::exception& e) {
    err << "error: " << opt.input << ": " << e.what() << "\n";
    return kExitFailure;
  }

  try {
    std::ostringstream canon;
    canon << "estimator=" << to_string(estimator) << " trees=" << params.num_trees << " seed=" << params.seed
          << " min_node_size=" << params.min_node_size << " denominator=" << to_string(options.denominator)
          << " n=" << data.size() << " data=" << hash_values(data);
    const auto fp = fingerprint(canon.str());

    const auto forest = fit_causal_forest(data, params, options);
    ExtendedFit fit;
    double sd = 0.0, pep = 0.0;
    ITEDensity density;
    if (estimator == Estimator::Extended) {
      fit = extend_causal_forest(forest);
      sd = population_sd(fit);
      pep = pep_gaussian(fit);
      density = ite_density(fit, DensityMethod::GaussianMixture);
    } else {
      fit.tau_hat = predict_cate_oob_all(forest);
      const auto ate = estimate_ate(forest, fit.tau_hat);
      fit.ate = ate.ate;
      fit.ate_se = ate.se;
      if (options.orthogonalize) {
        fit.theta0_hat.resize(fit.size());
        for (std::size_t i = 0; i < fit.size(); ++i)
          fit.theta0_hat[i] = forest.centered.m_hat_oob[i] - forest.centered.e_hat_oob[i] * fit.tau_hat[i];
      }
      sd = sd_cate_only(fit.tau_hat);
      pep = pep_cate_only(fit.tau_hat);
      density = kde_over_cates(fit.tau_hat);
    }
    const auto non_identified =
        std::count_if(fit.tau_hat.begin(), fit.tau_hat.end(), [](double t) { return !std::isfinite(t); });

    fs::create_directories(opt.out);
    {
      auto out = open_out(fs::path(opt.out) / "fit.csv");
      write_fit_csv(out, fit, fp);
    }
    {
      auto out = open_out(fs::path(opt.out) / "density.csv");
      write_density_csv(out, density, fp);
    }
    nlohmann::ordered_json summary = {
        {"fingerprint", fp},
        {"estimator", to_string(estimator)},
        {"denominator", to_string(options.denominator)},
        {"trees", params.num_trees},
        {"seed", params.seed},
        {"min_node_size", params.min_node_size},
        {"n", data.size()},
        {"ate", fit.ate},
        {"ate_se", fit.ate_se},
        {"sd", sd},
        {"pep", pep},
        {"non_identified_rows", non_identified},
    };
    {
      auto out = open_out(fs::path(opt.out) / "summary.json");
      out << summary.dump(2) << "\n";
    }
    if (!opt.save_forest.empty()) save_causal_forest(forest, opt.save_forest);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_experiment(const ExperimentOptions& opt, std::ostream& err) {
  if (opt.config.empty() || opt.out.empty()) {
    err << "error: --config and --out are required\n";
    return kExitUsage;
  }
  if (opt.workers < 0) {
    err << "error: --workers must be non-negative\n";
    return kExitUsage;
  }
  ExperimentSpec spec;
  try {
    spec = parse_experiment_spec_file(opt.config);
  } catch (const ConfigError& e) {
    err << "error: " << opt.config << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  spec.plan.workers = opt.workers;
  try {
    const auto fp = fingerprint(canonical_spec(spec));
    const auto outcome = run_experiment(spec.plan);
    write_experiment_results(opt.out, outcome, spec.plan, fp);
    if (!outcome.ok()) {
      err << "error: " << outcome.failures.size() << " replication(s) failed:\n";
      for (const auto& f : outcome.failures)
        err << "  scenario=" << f.scenario_id << " replication=" << f.index << " seed=" << f.seed << ": "
            << f.message << "\n";
      return kExitFailure;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace itevar
