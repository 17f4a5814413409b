#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmlab/cfm.hpp"
#include "fmlab/schedules.hpp"

namespace fmlab {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Rectifier network on the features (x, t, log t) with an output clamp
//   |phi_i(x, t)| <= D (|sigma'_t| sqrt(log n) + |m'_t|).
// Hidden layers use ReLU; the last layer is linear and its output is scaled by
// output_scale before clamping.
struct VelocityNet {
  int dim = 1;
  std::vector<DenseLayer> layers;
  double clamp_d = 5.0;
  double output_scale = 1.0;
  bool output_scale_locked = false;
  std::uint64_t n_train = 2;
  Schedule schedule = Schedule::affine();
};

// He-normal weights, zero biases. `hidden` may be empty (single linear layer).
VelocityNet make_velocity_net(int dim, const std::vector<int>& hidden, const Schedule& schedule,
                              std::uint64_t n_train, std::uint64_t seed, double clamp_d = 5.0);

// Width used for an interval with basis budget N': round(c sqrt(N')), at least 2.
int width_for_basis_count(double basis_count, double c = 8.0);

inline int input_width(int dim) { return dim + 2; }

Eigen::MatrixXd features(const Eigen::MatrixXd& x, const Eigen::VectorXd& t);

// Clamp envelope D (|sigma'_t| sqrt(log max(n, 2)) + |m'_t|) for every column.
Eigen::VectorXd clamp_envelope(const VelocityNet& net, const Eigen::VectorXd& t);

Eigen::MatrixXd forward(const VelocityNet& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& t);
Eigen::MatrixXd forward_unclamped(const VelocityNet& net, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& t);

VelocityField as_field(std::shared_ptr<const VelocityNet> net);

// Gradient with the same shape as net.layers.
struct NetGradient {
  std::vector<DenseLayer> layers;
};

// Mean over the batch of ||phi(x_c, t_c) - v_c||^2 and its exact gradient.
// Clamped coordinates contribute zero gradient.
double mse_gradient(const VelocityNet& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                    const Eigen::MatrixXd& v_target, NetGradient* grad);
double mse(const VelocityNet& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
           const Eigen::MatrixXd& v_target);

// Flat parameter views, layer by layer (weight column-major, then bias).
Eigen::Index parameter_count(const VelocityNet& net);
Eigen::VectorXd get_parameters(const VelocityNet& net);
void set_parameters(VelocityNet& net, const Eigen::VectorXd& theta);
Eigen::VectorXd flatten(const NetGradient& grad);

struct TrainConfig {
  int steps = 2000;
  int batch = 256;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int trace_every = 50;
  bool normalize_output = true;  // set output_scale to the teacher RMS on first use
  double t0 = 0.0;
};

struct TrainResult {
  std::vector<double> trace;  // loss on a fixed monitor batch every trace_every steps
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

// Adam on the flow-matching MSE over t ~ U[t_lo, t_hi] (stratified within each
// batch), x1 drawn uniformly from the columns of data. Deterministic in the
// seed. Throws NumericalError if the loss becomes non-finite.
TrainResult train(VelocityNet& net, const Eigen::MatrixXd& data, const Schedule& schedule,
                  double t_lo, double t_hi, const TrainConfig& cfg);

// Product of per-layer spectral norms (power iteration, 50 iterations) of the
// x-block of the first layer and all later layers, times output_scale.
double lipschitz_upper(const VelocityNet& net);
double spectral_norm(const Eigen::MatrixXd& a, int iterations = 50);

// Size proxies used by the covering-number calculator.
struct NetStats {
  int depth = 0;             // L
  int max_width = 0;         // ||W||_inf
  Eigen::Index parameters = 0;
  Eigen::Index nonzero = 0;  // S proxy
  double max_magnitude = 0;  // B proxy
};
NetStats net_stats(const VelocityNet& net);

// Little-endian binary checkpoint; layout documented in the README.
void save_checkpoint(const VelocityNet& net, std::ostream& out);
VelocityNet load_checkpoint(std::istream& in);
void save_checkpoint(const VelocityNet& net, const std::string& path);
VelocityNet load_checkpoint(const std::string& path);

}  // namespace fmlab
