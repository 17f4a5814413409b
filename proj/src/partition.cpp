#include "fmlab/partition.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "fmlab/error.hpp"
#include "fmlab/rng.hpp"
#include "fmlab/theory.hpp"

namespace fmlab {

namespace {

std::vector<double> dyadic_knots(double T0) {
  const int K = std::max(1, static_cast<int>(std::ceil(std::log2(1.0 / T0) - 1e-12)));
  std::vector<double> knots;
  for (int j = 0; j < K; ++j) knots.push_back(std::ldexp(T0, j));
  knots.push_back(1.0);
  return knots;
}

}  // namespace

TimePartition build_partition(const PartitionParams& p) {
  if (p.n < 2) throw ParameterError("build_partition: n must be >= 2");
  if (!(p.s > 0.0)) throw ParameterError("build_partition: s must be positive");
  if (p.d < 1) throw ParameterError("build_partition: d must be >= 1");
  if (!(p.kappa >= 0.5)) throw ParameterError("build_partition: kappa must be >= 1/2");
  if (!(p.delta > 0.0 && p.delta < 1.0 / p.kappa) && !(p.delta == 0.0))
    throw ParameterError("build_partition: delta must lie in [0, 1/kappa)");
  if (p.caps.K_max < 1 || !(p.caps.T0_min > 0.0 && p.caps.T0_min < 1.0))
    throw ParameterError("build_partition: invalid caps");
  const double kt = p.kappatilde > 0.0 ? p.kappatilde : p.kappa;
  if (p.theory_faithful && p.r0 < r0_minimum(p.s, p.kappa, kt))
    throw ParameterError("build_partition: R0 below (s + 1) / min(kappa, kappatilde)");

  TimePartition part;
  part.N = std::max<std::uint64_t>(1, n_to_N(p.n, p.s, p.d));
  part.R0 = p.r0;
  part.kappa = p.kappa;
  part.delta = p.delta;
  part.d = p.d;
  const double N = static_cast<double>(part.N);

  double T0 = p.T0_fixed ? *p.T0_fixed : std::pow(N, -p.r0);
  if (!(T0 > 0.0) || T0 >= 1.0) {
    if (p.T0_fixed) throw ParameterError("build_partition: fixed T0 must lie in (0, 1)");
    T0 = 0.5;  // N = 1 or R0 = 0 leave no interval; keep one
  }
  if (T0 < p.caps.T0_min) {
    T0 = p.caps.T0_min;
    part.clipped = true;
  }
  if (std::ceil(std::log2(1.0 / T0) - 1e-12) > p.caps.K_max) {
    T0 = std::ldexp(1.0, -p.caps.K_max);
    part.k_capped = true;
  }
  part.T0 = T0;
  part.knots = dyadic_knots(T0);

  part.T_star = std::pow(N, -(1.0 / p.kappa - p.delta) / p.d);
  part.j_star = part.K();
  for (int j = 0; j <= part.K(); ++j)
    if (part.knots[static_cast<std::size_t>(j)] >= part.T_star) {
      part.j_star = j;
      break;
    }
  const double tj = part.knots[static_cast<std::size_t>(part.j_star)];
  part.j_star_off_grid = tj < part.T_star || tj > 3.0 * part.T_star;

  for (int j = 1; j <= part.K(); ++j) {
    if (j <= part.j_star) {
      part.basis_counts.push_back(part.N);
      continue;
    }
    const double prev = part.knots[static_cast<std::size_t>(j - 1)];
    const double raw = std::ceil(std::pow(prev, -p.d * p.kappa) * std::pow(N, p.delta * p.kappa) - 1e-9);
    part.basis_counts.push_back(std::min<std::uint64_t>(part.N, static_cast<std::uint64_t>(std::max(1.0, raw))));
  }
  return part;
}

TimePartition build_partition(std::uint64_t n, double s, int d, double kappa, double delta, double r0,
                              const PartitionCaps& caps) {
  PartitionParams p;
  p.n = n;
  p.s = s;
  p.d = d;
  p.kappa = kappa;
  p.delta = delta;
  p.r0 = r0;
  p.caps = caps;
  return build_partition(p);
}

TimePartition single_interval(double T0, std::uint64_t N) {
  if (!(T0 > 0.0 && T0 < 1.0)) throw ParameterError("single_interval: T0 must lie in (0, 1)");
  TimePartition part;
  part.T0 = T0;
  part.knots = {T0, 1.0};
  part.N = std::max<std::uint64_t>(N, 1);
  part.basis_counts = {part.N};
  part.j_star = 1;
  return part;
}

double t_star_balance(std::uint64_t n, double s, int d, double kappa, double delta) {
  check_context(RateContext{s, d, kappa, delta, n});
  return std::pow(static_cast<double>(n), -(1.0 / kappa - delta) / (2.0 * s + d));
}

std::vector<double> gronwall_factors(const TimePartition& partition, double c_tilde) {
  std::vector<double> out;
  for (int j = 1; j <= partition.K(); ++j)
    out.push_back(std::pow(partition.knots[static_cast<std::size_t>(j)] /
                               partition.knots[static_cast<std::size_t>(j - 1)],
                           c_tilde));
  return out;
}

std::string partition_json(const TimePartition& partition) {
  nlohmann::ordered_json j;
  j["T0"] = partition.T0;
  j["K"] = partition.K();
  j["knots"] = partition.knots;
  j["basis_counts"] = partition.basis_counts;
  j["j_star"] = partition.j_star;
  j["T_star"] = partition.T_star;
  j["N"] = partition.N;
  j["R0"] = partition.R0;
  j["kappa"] = partition.kappa;
  j["delta"] = partition.delta;
  j["d"] = partition.d;
  j["flags"] = {{"clipped", partition.clipped},
                {"k_capped", partition.k_capped},
                {"j_star_off_grid", partition.j_star_off_grid}};
  return j.dump(2);
}

PiecewiseVelocityField::PiecewiseVelocityField(std::vector<double> knots,
                                               std::vector<std::shared_ptr<const VelocityNet>> nets)
    : knots_(std::move(knots)), nets_(std::move(nets)) {
  if (knots_.size() < 2 || nets_.size() + 1 != knots_.size())
    throw ParameterError("piecewise field: need K + 1 knots for K nets");
  if (!std::is_sorted(knots_.begin(), knots_.end()) ||
      std::adjacent_find(knots_.begin(), knots_.end()) != knots_.end())
    throw ParameterError("piecewise field: knots must be strictly increasing");
}

int PiecewiseVelocityField::interval_of(double t) const {
  if (!(t >= knots_.front() && t <= knots_.back()))
    throw DomainError("piecewise field: t outside the partition");
  if (t == knots_.back()) return static_cast<int>(nets_.size());
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  return static_cast<int>(it - knots_.begin());
}

Eigen::MatrixXd PiecewiseVelocityField::operator()(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const {
  if (t.size() != x.cols()) throw DomainError("piecewise field: time vector size mismatch");
  Eigen::MatrixXd out(x.rows(), x.cols());
  std::vector<int> owner(static_cast<std::size_t>(x.cols()));
  bool same = true;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    owner[static_cast<std::size_t>(c)] = interval_of(t(c));
    same = same && owner[static_cast<std::size_t>(c)] == owner[0];
  }
  if (x.cols() == 0) return out;
  if (same) return forward(*nets_[static_cast<std::size_t>(owner[0] - 1)], x, t);
  for (std::size_t j = 1; j <= nets_.size(); ++j) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (owner[static_cast<std::size_t>(c)] == static_cast<int>(j)) cols.push_back(c);
    if (cols.empty()) continue;
    const Eigen::MatrixXd vals = forward(*nets_[j - 1], x(Eigen::all, cols), t(cols));
    out(Eigen::all, cols) = vals;
  }
  return out;
}

VelocityField PiecewiseVelocityField::field() const {
  auto self = std::make_shared<const PiecewiseVelocityField>(*this);
  return [self](const Eigen::MatrixXd& x, const Eigen::VectorXd& t) { return (*self)(x, t); };
}

PartitionedTraining train_partitioned(const Eigen::MatrixXd& data, const Schedule& schedule,
                                      const TimePartition& partition, const PartitionModelConfig& cfg,
                                      std::uint64_t seed, int parallel) {
  const int K = partition.K();
  if (K < 1 || partition.basis_counts.size() != static_cast<std::size_t>(K))
    throw ParameterError("train_partitioned: malformed partition");
  std::vector<std::shared_ptr<const VelocityNet>> nets(static_cast<std::size_t>(K));
  std::vector<TrainResult> results(static_cast<std::size_t>(K));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(K));
  std::atomic<int> next{1};

  auto worker = [&] {
    for (int j = next++; j <= K; j = next++) {
      const auto idx = static_cast<std::size_t>(j - 1);
      try {
        const std::uint64_t sub = substream_seed(seed, static_cast<std::uint64_t>(j));
        const int width = width_for_basis_count(static_cast<double>(partition.basis_counts[idx]), cfg.width_c);
        auto net = std::make_shared<VelocityNet>(make_velocity_net(
            static_cast<int>(data.rows()), std::vector<int>(static_cast<std::size_t>(cfg.hidden_layers), width),
            schedule, static_cast<std::uint64_t>(data.cols()), sub, cfg.clamp_d));
        TrainConfig tc = cfg.train;
        tc.seed = sub;
        tc.t0 = partition.T0;
        results[idx] = train(*net, data, schedule, partition.knots[idx], partition.knots[idx + 1], tc);
        nets[idx] = std::move(net);
      } catch (const std::exception& e) {
        try {
          throw NumericalError("interval " + std::to_string(j) + ": " + e.what());
        } catch (...) {
          errors[idx] = std::current_exception();
        }
      }
    }
  };
  const int threads = std::clamp(parallel, 1, K);
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  PartitionedTraining out;
  out.field = std::make_shared<const PiecewiseVelocityField>(partition.knots, nets);
  out.results = std::move(results);
  return out;
}

}  // namespace fmlab
