#pragma once

// Small dense networks with hand-written reverse mode.
//
// StudentNet maps (x, t) to a MomentumParams bundle through a tanh MLP body
// and three affine heads laid out as row blocks of the final layer:
//
//   [ gating logits (K) | base velocities (K*D, or D shared) | log-gamma (K, or 1 shared) ]
//
// The log-gamma rows start with zero weights and bias equal to the geometric
// initialization, so an untrained net reproduces that initialization for any
// input. The anchor mode's log-gamma is pinned to zero and never reads its
// head row.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "arcflow/momentum.hpp"
#include "arcflow/rng.hpp"

namespace arcflow {

enum class GammaMode : std::uint8_t { frozen_one = 0, fixed = 1, learnable = 2 };

std::string_view to_string(GammaMode mode);
GammaMode parse_gamma_mode(std::string_view text);

/// Input features: [x, t, sin(pi f t), cos(pi f t) for f in {1, 2, 4, 8}].
inline constexpr std::size_t kFourierFeatures = 4;
std::size_t feature_count(std::size_t dim);
void make_features(std::span<const double> x, double t, std::span<double> out);

/// Dense MLP: tanh on hidden layers, identity on the output layer.
/// Parameters are one flat vector: for each layer, W (out x in, row-major) then b.
class Mlp {
public:
  struct Tape {
    std::vector<Vec> activations; // [input, hidden..., output]
    bool empty() const { return activations.empty(); }
  };

  Mlp() = default;
  explicit Mlp(std::vector<std::size_t> widths);

  const std::vector<std::size_t> &widths() const { return widths_; }
  std::size_t layers() const { return widths_.size() - 1; }
  std::size_t param_count() const { return params_.size(); }
  std::size_t input_size() const { return widths_.front(); }
  std::size_t output_size() const { return widths_.back(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + widths_[layer] * widths_[layer + 1];
  }

  /// Glorot-uniform weights, zero biases. Layers are filled in order, so nets
  /// sharing a body shape consume the generator identically for the body.
  void init_glorot(Rng &rng);

  Tape forward(std::span<const double> input) const;
  void forward_into(std::span<const double> input, std::span<double> out) const;

  /// Accumulates dLoss/dParams into `grad` given dLoss/dOutput.
  void backward(const Tape &tape, std::span<const double> d_output, std::span<double> grad) const;

private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  Vec params_;
};

struct NetShape {
  std::size_t dim = 2;
  std::size_t modes = 8;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  GammaMode gamma_mode = GammaMode::learnable;
  bool share_velocity = false;
  bool share_gamma = false;
  double gamma_lo = 0.4;
  double gamma_hi = 5.0;

  bool operator==(const NetShape &) const = default;
};

/// Gradient of a scalar loss with respect to the fields of MomentumParams.
struct MomentumGrad {
  Vec gating;      // K
  Vec velocities;  // K*D
  Vec log_gammas;  // K

  MomentumGrad() = default;
  MomentumGrad(std::size_t modes, std::size_t dim)
      : gating(modes, 0.0), velocities(modes * dim, 0.0), log_gammas(modes, 0.0) {}
};

/// Parameter groups for the optimizer.
enum class ParamGroup : std::uint8_t { body = 0, gamma_head = 1, frozen = 2 };

class StudentNet {
public:
  struct Tape {
    Mlp::Tape mlp;
    std::optional<MomentumParams> theta;
    bool empty() const { return mlp.empty() || !theta; }
  };

  StudentNet() = default;
  /// Random body and velocity head from `rng`; gating head zero; gamma head
  /// zero weights with the geometric initialization as bias.
  StudentNet(const NetShape &shape, Rng &rng);

  const NetShape &shape() const { return shape_; }
  const Mlp &mlp() const { return mlp_; }
  std::span<double> params() { return mlp_.params(); }
  std::span<const double> params() const { return mlp_.params(); }
  std::size_t param_count() const { return mlp_.param_count(); }
  std::span<const ParamGroup> groups() const { return groups_; }
  std::optional<std::size_t> anchor_index() const { return anchor_; }

  std::size_t velocity_outputs() const { return shape_.share_velocity ? 1 : shape_.modes; }
  std::size_t gamma_outputs() const { return shape_.share_gamma ? 1 : shape_.modes; }

  MomentumParams forward(std::span<const double> x, double t) const;
  Tape forward_tape(std::span<const double> x, double t) const;

  /// Accumulates dLoss/dParams into `grad`. An empty tape is a StateError.
  void backward(const Tape &tape, const MomentumGrad &upstream, std::span<double> grad) const;

  /// Rebuilds a net from a shape and raw parameters (checkpoint loading).
  static StudentNet from_params(const NetShape &shape, std::span<const double> params);

private:
  void build_layout();
  MomentumParams decode(std::span<const double> head) const;

  NetShape shape_;
  Mlp mlp_;
  std::vector<ParamGroup> groups_;
  Vec gamma_init_;
  std::optional<std::size_t> anchor_;
};

/// Plain velocity regressor (x, t) -> R^D used as a trained CFM teacher.
class VelocityNet {
public:
  VelocityNet() = default;
  VelocityNet(std::size_t dim, std::size_t hidden, std::size_t hidden_layers, Rng &rng);

  std::size_t dim() const { return dim_; }
  Mlp &mlp() { return mlp_; }
  const Mlp &mlp() const { return mlp_; }

  void forward_into(std::span<const double> x, double t, std::span<double> out) const;
  Vec forward(std::span<const double> x, double t) const;
  Mlp::Tape forward_tape(std::span<const double> x, double t) const;

private:
  std::size_t dim_ = 0;
  Mlp mlp_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double gamma_lr_scale = 0.1;
};

struct OptimState {
  Vec m;
  Vec v;
  std::uint64_t step = 0;

  OptimState() = default;
  explicit OptimState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// AdamW with bias correction. `groups` selects base_lr, gamma_lr_scale *
/// base_lr, or no update. Rejects non-finite gradients without touching
/// params or state.
void adam_step(std::span<double> params, std::span<const double> grads,
               std::span<const ParamGroup> groups, OptimState &state, double base_lr,
               const AdamConfig &config = {});
void adam_step(StudentNet &net, std::span<const double> grads, OptimState &state, double base_lr,
               const AdamConfig &config = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
};

/// Central-difference check of `analytic` against `loss` at random parameter
/// indices. Relative error is |a - n| / max(|a|, |n|, floor). Parameters are
/// restored before returning.
GradCheckResult grad_check(std::span<double> params,
                           const std::function<double(std::span<const double>)> &loss,
                           std::span<const double> analytic, std::size_t probes, Rng &rng,
                           double h = 1e-5, double floor = 1e-6);

/// Flat little-endian checkpoint: "ARCFLOW1", K, D, layer widths, head flags,
/// then the float64 parameter vector.
void save_checkpoint(const std::filesystem::path &path, const StudentNet &net);
StudentNet load_checkpoint(const std::filesystem::path &path);

} // namespace arcflow
