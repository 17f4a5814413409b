#include "fmlab/velocity_net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fmlab/error.hpp"
#include "fmlab/rng.hpp"

namespace fmlab {

VelocityNet make_velocity_net(int dim, const std::vector<int>& hidden, const Schedule& schedule,
                              std::uint64_t n_train, std::uint64_t seed, double clamp_d) {
  if (dim < 1) throw ParameterError("make_velocity_net: dim must be positive");
  VelocityNet net;
  net.dim = dim;
  net.schedule = schedule;
  net.n_train = n_train;
  net.clamp_d = clamp_d;
  Engine rng = make_engine(seed, 0x1417);
  std::normal_distribution<double> normal(0.0, 1.0);
  int in = input_width(dim);
  std::vector<int> widths = hidden;
  widths.push_back(dim);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const int out = widths[l];
    const bool last = l + 1 == widths.size();
    const double scale = std::sqrt((last ? 1.0 : 2.0) / in);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = scale * normal(rng);
    net.layers.push_back(std::move(layer));
    in = out;
  }
  return net;
}

int width_for_basis_count(double basis_count, double c) {
  return std::max(2, static_cast<int>(std::lround(c * std::sqrt(basis_count))));
}

Eigen::MatrixXd features(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
  Eigen::MatrixXd f(x.rows() + 2, x.cols());
  f.topRows(x.rows()) = x;
  f.row(x.rows()) = t.transpose();
  f.row(x.rows() + 1) = t.array().log().matrix().transpose();
  return f;
}

Eigen::VectorXd clamp_envelope(const VelocityNet& net, const Eigen::VectorXd& t) {
  const double root_log = std::sqrt(std::log(static_cast<double>(std::max<std::uint64_t>(net.n_train, 2))));
  Eigen::VectorXd env(t.size());
  for (Eigen::Index c = 0; c < t.size(); ++c) {
    const ScheduleValue s = eval(net.schedule, t(c));
    env(c) = net.clamp_d * (std::abs(s.dsigma) * root_log + std::abs(s.dm));
  }
  return env;
}

namespace {

// Forward pass keeping pre-activations (zs) and activations (as).
Eigen::MatrixXd run(const VelocityNet& net, const Eigen::MatrixXd& input,
                    std::vector<Eigen::MatrixXd>* zs, std::vector<Eigen::MatrixXd>* as) {
  Eigen::MatrixXd a = input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DenseLayer& layer = net.layers[l];
    Eigen::MatrixXd z = layer.weight * a;
    z.colwise() += layer.bias;
    if (as) as->push_back(a);
    if (l + 1 == net.layers.size()) {
      if (zs) zs->push_back(z);
      return z;
    }
    a = z.cwiseMax(0.0);
    if (zs) zs->push_back(std::move(z));
  }
  return a;
}

void check_shapes(const VelocityNet& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
  if (x.rows() != net.dim || t.size() != x.cols())
    throw DomainError("velocity net: input shape mismatch");
}

}  // namespace

Eigen::MatrixXd forward_unclamped(const VelocityNet& net, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& t) {
  check_shapes(net, x, t);
  return net.output_scale * run(net, features(x, t), nullptr, nullptr);
}

Eigen::MatrixXd forward(const VelocityNet& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
  Eigen::MatrixXd out = forward_unclamped(net, x, t);
  const Eigen::VectorXd env = clamp_envelope(net, t);
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    out.col(c) = out.col(c).cwiseMax(-env(c)).cwiseMin(env(c));
  return out;
}

VelocityField as_field(std::shared_ptr<const VelocityNet> net) {
  return [net](const Eigen::MatrixXd& x, const Eigen::VectorXd& t) { return forward(*net, x, t); };
}

double mse_gradient(const VelocityNet& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                    const Eigen::MatrixXd& v_target, NetGradient* grad) {
  check_shapes(net, x, t);
  const double batch = static_cast<double>(x.cols());
  std::vector<Eigen::MatrixXd> zs, as;
  const Eigen::MatrixXd raw = run(net, features(x, t), &zs, &as);
  const Eigen::MatrixXd out = net.output_scale * raw;
  const Eigen::VectorXd env = clamp_envelope(net, t);
  Eigen::MatrixXd clamped(out.rows(), out.cols());
  Eigen::MatrixXd delta(out.rows(), out.cols());
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double o = out(r, c);
      const bool inside = std::abs(o) <= env(c);
      clamped(r, c) = inside ? o : std::copysign(env(c), o);
      delta(r, c) = inside ? 2.0 * (o - v_target(r, c)) / batch * net.output_scale : 0.0;
    }
  const double loss = (clamped - v_target).squaredNorm() / batch;
  if (!grad) return loss;

  grad->layers.resize(net.layers.size());
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    grad->layers[l].weight = delta * as[l].transpose();
    grad->layers[l].bias = delta.rowwise().sum();
    if (l == 0) break;
    delta = (net.layers[l].weight.transpose() * delta).cwiseProduct(
        (zs[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return loss;
}

double mse(const VelocityNet& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
           const Eigen::MatrixXd& v_target) {
  return mse_gradient(net, x, t, v_target, nullptr);
}

Eigen::Index parameter_count(const VelocityNet& net) {
  Eigen::Index n = 0;
  for (const auto& l : net.layers) n += l.weight.size() + l.bias.size();
  return n;
}

Eigen::VectorXd get_parameters(const VelocityNet& net) {
  Eigen::VectorXd theta(parameter_count(net));
  Eigen::Index k = 0;
  for (const auto& l : net.layers) {
    theta.segment(k, l.weight.size()) = l.weight.reshaped();
    k += l.weight.size();
    theta.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return theta;
}

void set_parameters(VelocityNet& net, const Eigen::VectorXd& theta) {
  if (theta.size() != parameter_count(net)) throw ParameterError("set_parameters: size mismatch");
  Eigen::Index k = 0;
  for (auto& l : net.layers) {
    l.weight.reshaped() = theta.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = theta.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

Eigen::VectorXd flatten(const NetGradient& grad) {
  Eigen::Index n = 0;
  for (const auto& l : grad.layers) n += l.weight.size() + l.bias.size();
  Eigen::VectorXd g(n);
  Eigen::Index k = 0;
  for (const auto& l : grad.layers) {
    g.segment(k, l.weight.size()) = l.weight.reshaped();
    k += l.weight.size();
    g.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return g;
}

namespace {

struct Batch {
  Eigen::MatrixXd x;
  Eigen::VectorXd t;
  Eigen::MatrixXd v;
};

Batch draw_batch(Engine& rng, const Eigen::MatrixXd& data, const Schedule& schedule, double t_lo,
                 double t_hi, int size) {
  const Eigen::Index d = data.rows();
  Batch b{Eigen::MatrixXd(d, size), Eigen::VectorXd(size), Eigen::MatrixXd(d, size)};
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n = static_cast<std::uint64_t>(data.cols());
  for (int c = 0; c < size; ++c) {
    const auto i = static_cast<Eigen::Index>(rng() % n);
    const double t = t_lo + (t_hi - t_lo) * (c + uniform01(rng)) / size;
    const ScheduleValue s = eval(schedule, t);
    for (Eigen::Index r = 0; r < d; ++r) {
      const double eps = normal(rng);
      b.x(r, c) = s.sigma * eps + s.m * data(r, i);
      b.v(r, c) = s.dsigma * eps + s.dm * data(r, i);
    }
    b.t(c) = t;
  }
  return b;
}

}  // namespace

TrainResult train(VelocityNet& net, const Eigen::MatrixXd& data, const Schedule& schedule,
                  double t_lo, double t_hi, const TrainConfig& cfg) {
  if (!(t_lo >= cfg.t0) || !(t_lo > 0.0) || !(t_lo < t_hi) || t_hi > 1.0)
    throw DomainError("train: interval must lie within [T0, 1]");
  if (data.rows() != net.dim || data.cols() < 1) throw ParameterError("train: data shape mismatch");
  if (cfg.batch < 1 || cfg.steps < 0) throw ParameterError("train: bad batch or step count");

  Engine rng = make_engine(cfg.seed, 0x7a11);
  const Batch monitor = draw_batch(rng, data, schedule, t_lo, t_hi, std::max(cfg.batch, 1024));
  if (cfg.normalize_output && !net.output_scale_locked) {
    const double rms = std::sqrt(monitor.v.squaredNorm() / static_cast<double>(monitor.v.size()));
    net.output_scale = rms > 0.0 ? rms : 1.0;
    net.output_scale_locked = true;
  }

  TrainResult result;
  result.initial_loss = mse(net, monitor.x, monitor.t, monitor.v);
  result.trace.push_back(result.initial_loss);

  const Eigen::Index np = parameter_count(net);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(np), m2 = Eigen::VectorXd::Zero(np);
  Eigen::VectorXd theta = get_parameters(net);
  NetGradient grad;
  double b1t = 1.0, b2t = 1.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    const Batch b = draw_batch(rng, data, schedule, t_lo, t_hi, cfg.batch);
    const double loss = mse_gradient(net, b.x, b.t, b.v, &grad);
    if (!std::isfinite(loss))
      throw NumericalError("train: non-finite loss at step " + std::to_string(step));
    const Eigen::VectorXd g = flatten(grad);
    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseAbs2();
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    if (cfg.lr != 0.0) {
      const Eigen::VectorXd mhat = m1 / (1.0 - b1t);
      const Eigen::VectorXd vhat = m2 / (1.0 - b2t);
      theta.array() -= cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.adam_eps);
      set_parameters(net, theta);
    }
    if (cfg.trace_every > 0 && step % cfg.trace_every == 0) {
      const double monitored = mse(net, monitor.x, monitor.t, monitor.v);
      if (!std::isfinite(monitored))
        throw NumericalError("train: non-finite monitor loss at step " + std::to_string(step));
      result.trace.push_back(monitored);
    }
  }
  result.final_loss = mse(net, monitor.x, monitor.t, monitor.v);
  if (!std::isfinite(result.final_loss)) throw NumericalError("train: non-finite final loss");
  result.steps = cfg.steps;
  return result;
}

double spectral_norm(const Eigen::MatrixXd& a, int iterations) {
  if (a.size() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(a.cols()) / std::sqrt(static_cast<double>(a.cols()));
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd w = a.transpose() * (a * v);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    sigma = std::sqrt(norm);
  }
  return std::max(sigma, (a * v).norm());
}

double lipschitz_upper(const VelocityNet& net) {
  double bound = std::abs(net.output_scale);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Eigen::MatrixXd& w = net.layers[l].weight;
    bound *= l == 0 ? spectral_norm(w.leftCols(net.dim)) : spectral_norm(w);
  }
  return bound;
}

NetStats net_stats(const VelocityNet& net) {
  NetStats s;
  s.depth = static_cast<int>(net.layers.size());
  s.max_width = input_width(net.dim);
  for (const auto& l : net.layers) {
    s.max_width = std::max<int>(s.max_width, static_cast<int>(l.weight.rows()));
    s.parameters += l.weight.size() + l.bias.size();
    s.nonzero += (l.weight.array() != 0.0).count() + (l.bias.array() != 0.0).count();
    s.max_magnitude = std::max({s.max_magnitude, l.weight.cwiseAbs().maxCoeff(),
                                l.bias.size() ? l.bias.cwiseAbs().maxCoeff() : 0.0});
  }
  return s;
}

namespace {

constexpr char kMagic[8] = {'F', 'M', 'L', 'N', 'E', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw std::runtime_error("checkpoint: truncated stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const VelocityNet& net, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.cols()));
  }
  put<double>(out, net.clamp_d);
  put<double>(out, net.output_scale);
  put<std::uint64_t>(out, net.n_train);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.schedule.family));
  put<double>(out, net.schedule.b0);
  put<double>(out, net.schedule.kappa);
  put<double>(out, net.schedule.btilde0);
  put<double>(out, net.schedule.kappatilde);
  for (const auto& l : net.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) put<double>(out, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) put<double>(out, l.bias(r));
  }
}

VelocityNet load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  VelocityNet net;
  net.dim = static_cast<int>(get<std::uint32_t>(in));
  const auto count = get<std::uint32_t>(in);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t l = 0; l < count; ++l) {
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    shapes.emplace_back(rows, cols);
  }
  net.clamp_d = get<double>(in);
  net.output_scale = get<double>(in);
  net.output_scale_locked = true;
  net.n_train = get<std::uint64_t>(in);
  net.schedule.family = static_cast<ScheduleFamily>(get<std::uint32_t>(in));
  net.schedule.b0 = get<double>(in);
  net.schedule.kappa = get<double>(in);
  net.schedule.btilde0 = get<double>(in);
  net.schedule.kappatilde = get<double>(in);
  for (const auto& [rows, cols] : shapes) {
    DenseLayer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = get<double>(in);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = get<double>(in);
    net.layers.push_back(std::move(l));
  }
  return net;
}

void save_checkpoint(const VelocityNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  save_checkpoint(net, out);
}

VelocityNet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  return load_checkpoint(in);
}

}  // namespace fmlab
