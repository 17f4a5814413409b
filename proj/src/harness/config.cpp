#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fmlab/error.hpp"
#include "fmlab/harness.hpp"
#include "fmlab/wasserstein.hpp"

namespace fmlab {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  std::string rest;
  if (in.fail() || (in >> rest)) throw ParameterError("config: bad value for '" + key + "': " + text);
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_value<T>(key, item));
  return out;
}

class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string& key) const {
    if (!tree_) return std::nullopt;
    const auto it = tree_->find(key);
    if (it == tree_->not_found()) return std::nullopt;
    return trim(it->second.data());
  }
  template <typename T>
  T get(const std::string& key, T fallback) const {
    const auto r = raw(key);
    return r ? parse_value<T>(name_ + "." + key, *r) : fallback;
  }
  std::string str(const std::string& key, const std::string& fallback) const {
    return raw(key).value_or(fallback);
  }
  template <typename T>
  std::vector<T> list(const std::string& key, std::vector<T> fallback) const {
    const auto r = raw(key);
    return r ? parse_list<T>(name_ + "." + key, *r) : fallback;
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
};

Section section(const pt::ptree& root, const std::string& name) {
  const auto it = root.find(name);
  return Section(it == root.not_found() ? nullptr : &it->second, name);
}

FieldMode parse_mode(const std::string& s) {
  if (s == "trained") return FieldMode::Trained;
  if (s == "oracle") return FieldMode::Oracle;
  if (s == "kde") return FieldMode::Kde;
  throw ParameterError("config: unknown mode '" + s + "'");
}

std::string mode_name(FieldMode m) {
  switch (m) {
    case FieldMode::Trained: return "trained";
    case FieldMode::Oracle: return "oracle";
    case FieldMode::Kde: return "kde";
  }
  return "?";
}

StepMethod parse_method(const std::string& s) {
  if (s == "euler") return StepMethod::Euler;
  if (s == "rk4") return StepMethod::RK4;
  if (s == "rk45" || s == "adaptive") return StepMethod::AdaptiveRK45;
  throw ParameterError("config: unknown flow method '" + s + "'");
}

std::string method_name(StepMethod m) {
  switch (m) {
    case StepMethod::Euler: return "euler";
    case StepMethod::RK4: return "rk4";
    case StepMethod::AdaptiveRK45: return "rk45";
  }
  return "?";
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>)
      out += format_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
  pt::ptree root;
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;

  const Section ex = section(root, "experiment");
  cfg.name = ex.str("name", cfg.name);
  cfg.mode = parse_mode(ex.str("mode", "trained"));
  const std::string part = ex.str("partition", "dyadic");
  if (part != "dyadic" && part != "single") throw ParameterError("config: partition must be dyadic or single");
  cfg.partition = part == "dyadic" ? PartitionMode::Dyadic : PartitionMode::Single;
  const std::string t0m = ex.str("t0_mode", "fixed");
  if (t0m != "fixed" && t0m != "theory") throw ParameterError("config: t0_mode must be fixed or theory");
  cfg.t0_mode = t0m == "fixed" ? T0Mode::Fixed : T0Mode::Theory;
  cfg.t0 = ex.get("t0", cfg.t0);
  cfg.r0 = ex.get("r0", cfg.r0);
  cfg.delta = ex.get("delta", cfg.delta);
  cfg.caps.T0_min = ex.get("t0_min", cfg.caps.T0_min);
  cfg.caps.K_max = ex.get("k_max", cfg.caps.K_max);
  cfg.n_grid = ex.list<std::uint64_t>("n_grid", {});
  cfg.seeds = ex.list<std::uint64_t>("seeds", {1});
  cfg.parallel = ex.get("parallel", cfg.parallel);
  cfg.seed_offset = ex.get<std::uint64_t>("seed_offset", 0);

  const Section tg = section(root, "target");
  cfg.target.kind = parse_kind(tg.str("kind", kind_name(cfg.target.kind)));
  cfg.target.dim = tg.get("dim", cfg.target.dim);
  cfg.target.smoothness = tg.get("smoothness", cfg.target.smoothness);
  cfg.target.coefficients = tg.list<double>("coefficients", {});
  cfg.target.bases = tg.get("bases", cfg.target.bases);
  cfg.target.bumps = tg.get("bumps", cfg.target.bumps);
  cfg.target.amplitude = tg.get("amplitude", cfg.target.amplitude);
  cfg.target.generator_seed = tg.get("generator_seed", cfg.target.generator_seed);

  for (const auto& [key, child] : root) {
    if (key.rfind("schedule.", 0) != 0) continue;
    const Section sc(&child, key);
    const ScheduleFamily family = parse_family(sc.str("family", ""));
    Schedule s;
    switch (family) {
      case ScheduleFamily::Affine: s = Schedule::affine(); break;
      case ScheduleFamily::VariancePreserving: s = Schedule::variance_preserving(); break;
      case ScheduleFamily::PowerLaw:
        s = Schedule::power_law(sc.get("b0", 1.0), sc.get("kappa", 0.5), sc.get("btilde0", 1.0),
                                sc.get("kappatilde", 1.0));
        break;
    }
    cfg.schedules.push_back({key.substr(9), s});
  }

  const Section tr = section(root, "training");
  TrainConfig& t = cfg.model.train;
  t.steps = tr.get("steps", t.steps);
  t.batch = tr.get("batch", t.batch);
  t.lr = tr.get("lr", t.lr);
  t.beta1 = tr.get("beta1", t.beta1);
  t.beta2 = tr.get("beta2", t.beta2);
  t.trace_every = tr.get("trace_every", t.trace_every);
  t.normalize_output = tr.get("normalize_output", 1) != 0;
  cfg.model.hidden_layers = tr.get("hidden_layers", cfg.model.hidden_layers);
  cfg.model.width_c = tr.get("width_c", cfg.model.width_c);
  cfg.model.clamp_d = tr.get("clamp_d", cfg.model.clamp_d);

  const Section fl = section(root, "flow");
  cfg.flow.method = parse_method(fl.str("method", "rk4"));
  cfg.flow.steps = fl.get("steps", cfg.flow.steps);
  cfg.flow.tol = fl.get("tol", cfg.flow.tol);
  cfg.flow.start_refinement = fl.get("start_refinement", 40);
  const std::string spacing = fl.str("spacing", "log");
  if (spacing != "log" && spacing != "uniform") throw ParameterError("config: spacing must be log or uniform");
  cfg.flow.spacing = spacing == "log" ? StepSpacing::Logarithmic : StepSpacing::Uniform;

  const Section ev = section(root, "eval");
  cfg.eval.p = ev.list<double>("p", cfg.eval.p);
  cfg.eval.estimator = ev.str("estimator", cfg.eval.estimator);
  cfg.eval.n_gen = ev.get<Eigen::Index>("n_gen", cfg.eval.n_gen);
  cfg.eval.reference_size = ev.get<Eigen::Index>("reference_size", cfg.eval.reference_size);
  cfg.eval.n_eval = ev.get<Eigen::Index>("n_eval", cfg.eval.n_eval);
  cfg.eval.sinkhorn_eps = ev.get("sinkhorn_eps", cfg.eval.sinkhorn_eps);
  cfg.eval.sinkhorn_iter = ev.get("sinkhorn_iter", cfg.eval.sinkhorn_iter);

  cfg.output_dir = section(root, "output").str("dir", cfg.output_dir);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("config: cannot open " + path);
  return parse_config(in);
}

void write_config(const ExperimentConfig& cfg, std::ostream& out) {
  out << "[experiment]\n"
      << "name = " << cfg.name << "\n"
      << "mode = " << mode_name(cfg.mode) << "\n"
      << "partition = " << (cfg.partition == PartitionMode::Dyadic ? "dyadic" : "single") << "\n"
      << "t0_mode = " << (cfg.t0_mode == T0Mode::Fixed ? "fixed" : "theory") << "\n"
      << "t0 = " << format_double(cfg.t0) << "\n"
      << "r0 = " << format_double(cfg.r0) << "\n"
      << "delta = " << format_double(cfg.delta) << "\n"
      << "t0_min = " << format_double(cfg.caps.T0_min) << "\n"
      << "k_max = " << cfg.caps.K_max << "\n"
      << "n_grid = " << join(cfg.n_grid) << "\n"
      << "seeds = " << join(cfg.seeds) << "\n"
      << "parallel = " << cfg.parallel << "\n"
      << "seed_offset = " << cfg.seed_offset << "\n\n";
  out << "[target]\n"
      << "kind = " << kind_name(cfg.target.kind) << "\n"
      << "dim = " << cfg.target.dim << "\n"
      << "smoothness = " << format_double(cfg.target.smoothness) << "\n";
  if (!cfg.target.coefficients.empty()) out << "coefficients = " << join(cfg.target.coefficients) << "\n";
  out << "bases = " << cfg.target.bases << "\n"
      << "bumps = " << cfg.target.bumps << "\n"
      << "amplitude = " << format_double(cfg.target.amplitude) << "\n"
      << "generator_seed = " << cfg.target.generator_seed << "\n\n";
  for (const auto& s : cfg.schedules) {
    out << "[schedule." << s.name << "]\n"
        << "family = " << family_name(s.schedule.family) << "\n";
    if (s.schedule.family == ScheduleFamily::PowerLaw)
      out << "b0 = " << format_double(s.schedule.b0) << "\n"
          << "kappa = " << format_double(s.schedule.kappa) << "\n"
          << "btilde0 = " << format_double(s.schedule.btilde0) << "\n"
          << "kappatilde = " << format_double(s.schedule.kappatilde) << "\n";
    out << "\n";
  }
  const TrainConfig& t = cfg.model.train;
  out << "[training]\n"
      << "steps = " << t.steps << "\n"
      << "batch = " << t.batch << "\n"
      << "lr = " << format_double(t.lr) << "\n"
      << "beta1 = " << format_double(t.beta1) << "\n"
      << "beta2 = " << format_double(t.beta2) << "\n"
      << "trace_every = " << t.trace_every << "\n"
      << "normalize_output = " << (t.normalize_output ? 1 : 0) << "\n"
      << "hidden_layers = " << cfg.model.hidden_layers << "\n"
      << "width_c = " << format_double(cfg.model.width_c) << "\n"
      << "clamp_d = " << format_double(cfg.model.clamp_d) << "\n\n";
  out << "[flow]\n"
      << "method = " << method_name(cfg.flow.method) << "\n"
      << "steps = " << cfg.flow.steps << "\n"
      << "tol = " << format_double(cfg.flow.tol) << "\n"
      << "start_refinement = " << cfg.flow.start_refinement << "\n"
      << "spacing = " << (cfg.flow.spacing == StepSpacing::Logarithmic ? "log" : "uniform") << "\n\n";
  out << "[eval]\n"
      << "p = " << join(cfg.eval.p) << "\n"
      << "estimator = " << cfg.eval.estimator << "\n"
      << "n_gen = " << cfg.eval.n_gen << "\n"
      << "reference_size = " << cfg.eval.reference_size << "\n"
      << "n_eval = " << cfg.eval.n_eval << "\n"
      << "sinkhorn_eps = " << format_double(cfg.eval.sinkhorn_eps) << "\n"
      << "sinkhorn_iter = " << cfg.eval.sinkhorn_iter << "\n\n";
  out << "[output]\n"
      << "dir = " << cfg.output_dir << "\n";
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.n_grid.empty()) throw ParameterError("config: n_grid is empty");
  if (cfg.n_grid.size() < 3) throw ParameterError("config: n_grid needs >= 3 points for slope fitting");
  for (std::size_t i = 0; i < cfg.n_grid.size(); ++i) {
    if (cfg.n_grid[i] < 2) throw ParameterError("config: every n must be >= 2");
    if (i && cfg.n_grid[i] <= cfg.n_grid[i - 1]) throw ParameterError("config: n_grid must be strictly increasing");
  }
  if (cfg.seeds.empty()) throw ParameterError("config: seeds is empty");
  if (cfg.schedules.empty()) throw ParameterError("config: no [schedule.<name>] section");
  if (cfg.target.dim < 1) throw ParameterError("config: target dim must be >= 1");
  if (!(cfg.target.smoothness > 0.0)) throw ParameterError("config: smoothness must be positive");
  if (cfg.t0_mode == T0Mode::Fixed && !(cfg.t0 > 0.0 && cfg.t0 < 1.0))
    throw ParameterError("config: t0 must lie in (0, 1)");
  if (!(cfg.delta >= 0.0)) throw ParameterError("config: delta must be >= 0");
  if (cfg.r0 < 0.0) throw ParameterError("config: r0 must be >= 0");
  if (cfg.parallel < 1) throw ParameterError("config: parallel must be >= 1");
  if (cfg.eval.p.empty()) throw ParameterError("config: eval.p is empty");
  for (double p : cfg.eval.p)
    if (!(p >= 1.0)) throw ParameterError("config: every p must be >= 1");
  if (cfg.eval.estimator != "auto" && cfg.eval.estimator != "exact" && cfg.eval.estimator != "sinkhorn")
    throw ParameterError("config: estimator must be auto, exact or sinkhorn");
  if (cfg.eval.n_gen < 1 || cfg.eval.reference_size < 1 || cfg.eval.n_eval < 1)
    throw ParameterError("config: sample sizes must be >= 1");
  if (cfg.target.dim >= 2 && cfg.eval.estimator != "sinkhorn" && cfg.eval.n_eval > kExactSolverCap)
    throw ParameterError("config: n_eval exceeds the exact solver cap 4096");
  if (cfg.model.hidden_layers < 0 || cfg.model.width_c <= 0.0)
    throw ParameterError("config: bad network shape");
  if (cfg.model.train.steps < 0 || cfg.model.train.batch < 1) throw ParameterError("config: bad training steps");
  FlowConfig probe = cfg.flow;
  probe.t_end = 0.5;
  check_config(probe);
  for (const auto& s : cfg.schedules) check_parameters(s.schedule);
}

TargetDensity make_target(const TargetSpec& spec) {
  switch (spec.kind) {
    case TargetKind::Uniform: return make_uniform(spec.dim);
    case TargetKind::SplineMixture:
      if (!spec.coefficients.empty()) return make_spline_mixture(spec.dim, spec.coefficients, spec.smoothness);
      return make_spline_mixture_random(spec.dim, spec.bases, spec.generator_seed, spec.amplitude, spec.smoothness);
    case TargetKind::PerturbedUniform:
      if (!spec.coefficients.empty()) return make_perturbed_uniform(spec.dim, spec.coefficients, spec.smoothness);
      return make_perturbed_uniform_random(spec.dim, spec.bumps, spec.generator_seed, spec.smoothness);
  }
  throw ParameterError("make_target: unknown kind");
}

}  // namespace fmlab
