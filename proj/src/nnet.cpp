#include "arcflow/nnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "arcflow/error.hpp"

namespace arcflow {

std::string_view to_string(GammaMode mode) {
  switch (mode) {
  case GammaMode::frozen_one:
    return "frozen_one";
  case GammaMode::fixed:
    return "fixed";
  case GammaMode::learnable:
    return "learnable";
  }
  return "unknown";
}

GammaMode parse_gamma_mode(std::string_view text) {
  if (text == "frozen_one") {
    return GammaMode::frozen_one;
  }
  if (text == "fixed") {
    return GammaMode::fixed;
  }
  if (text == "learnable") {
    return GammaMode::learnable;
  }
  throw InvalidParameter("unknown gamma mode '" + std::string(text) + "'");
}

std::size_t feature_count(std::size_t dim) { return dim + 1 + 2 * kFourierFeatures; }

void make_features(std::span<const double> x, double t, std::span<double> out) {
  std::size_t i = 0;
  for (double v : x) {
    out[i++] = v;
  }
  out[i++] = t;
  double freq = 1.0;
  for (std::size_t f = 0; f < kFourierFeatures; ++f, freq *= 2.0) {
    // Half-period base so t = 0 and t = 1 get different features.
    const double phase = std::numbers::pi * freq * t;
    out[i++] = std::sin(phase);
    out[i++] = std::cos(phase);
  }
}

// ---------------------------------------------------------------- Mlp

Mlp::Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) {
    throw InvalidParameter("an MLP needs input and output widths");
  }
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(n);
    n += widths_[l] * widths_[l + 1] + widths_[l + 1];
  }
  params_.assign(n, 0.0);
}

void Mlp::init_glorot(Rng &rng) {
  for (std::size_t l = 0; l < layers(); ++l) {
    const double in = static_cast<double>(widths_[l]);
    const double out = static_cast<double>(widths_[l + 1]);
    std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / (in + out)),
                                                std::sqrt(6.0 / (in + out)));
    const std::size_t w0 = weight_offset(l);
    for (std::size_t i = 0; i < widths_[l] * widths_[l + 1]; ++i) {
      params_[w0 + i] = dist(rng);
    }
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(bias_offset(l)), widths_[l + 1], 0.0);
  }
}

Mlp::Tape Mlp::forward(std::span<const double> input) const {
  Tape tape;
  tape.activations.reserve(widths_.size());
  tape.activations.emplace_back(input.begin(), input.end());
  for (std::size_t l = 0; l < layers(); ++l) {
    const Vec &in = tape.activations.back();
    const std::size_t ni = widths_[l];
    const std::size_t no = widths_[l + 1];
    const double *w = params_.data() + weight_offset(l);
    const double *b = params_.data() + bias_offset(l);
    Vec out(no);
    const bool hidden = l + 1 < layers();
    for (std::size_t o = 0; o < no; ++o) {
      double acc = b[o];
      const double *row = w + o * ni;
      for (std::size_t i = 0; i < ni; ++i) {
        acc += row[i] * in[i];
      }
      out[o] = hidden ? std::tanh(acc) : acc;
    }
    tape.activations.push_back(std::move(out));
  }
  return tape;
}

void Mlp::forward_into(std::span<const double> input, std::span<double> out) const {
  const Tape tape = forward(input);
  std::copy(tape.activations.back().begin(), tape.activations.back().end(), out.begin());
}

void Mlp::backward(const Tape &tape, std::span<const double> d_output,
                   std::span<double> grad) const {
  if (tape.activations.size() != widths_.size()) {
    throw StateError("backward called without a matching forward pass");
  }
  Vec delta(d_output.begin(), d_output.end());
  for (std::size_t l = layers(); l-- > 0;) {
    const std::size_t ni = widths_[l];
    const std::size_t no = widths_[l + 1];
    const Vec &in = tape.activations[l];
    if (l + 1 < layers()) {
      // tanh' = 1 - y^2 on the stored post-activation.
      const Vec &y = tape.activations[l + 1];
      for (std::size_t o = 0; o < no; ++o) {
        delta[o] *= 1.0 - y[o] * y[o];
      }
    }
    const double *w = params_.data() + weight_offset(l);
    double *gw = grad.data() + weight_offset(l);
    double *gb = grad.data() + bias_offset(l);
    Vec prev(l > 0 ? ni : 0, 0.0);
    for (std::size_t o = 0; o < no; ++o) {
      const double d = delta[o];
      if (d == 0.0) {
        continue;
      }
      gb[o] += d;
      const double *row = w + o * ni;
      double *grow = gw + o * ni;
      for (std::size_t i = 0; i < ni; ++i) {
        grow[i] += d * in[i];
      }
      if (l > 0) {
        for (std::size_t i = 0; i < ni; ++i) {
          prev[i] += d * row[i];
        }
      }
    }
    delta = std::move(prev);
  }
}

// ---------------------------------------------------------------- StudentNet

void StudentNet::build_layout() {
  const NetShape &s = shape_;
  if (s.dim == 0 || s.modes == 0 || s.hidden == 0) {
    throw InvalidParameter("student net needs positive dim, modes and hidden width");
  }
  std::vector<std::size_t> widths{feature_count(s.dim)};
  for (std::size_t l = 0; l < s.hidden_layers; ++l) {
    widths.push_back(s.hidden);
  }
  widths.push_back(s.modes + velocity_outputs() * s.dim + gamma_outputs());
  mlp_ = Mlp(std::move(widths));

  if (s.share_gamma) {
    gamma_init_.assign(1, 0.0);
    anchor_ = std::nullopt;
  } else {
    const LogGammaInit init = init_log_gammas(s.modes, s.gamma_lo, s.gamma_hi);
    gamma_init_ = init.log_gammas;
    anchor_ = init.anchor_index;
  }
  if (s.gamma_mode == GammaMode::frozen_one) {
    std::fill(gamma_init_.begin(), gamma_init_.end(), 0.0);
  }

  groups_.assign(mlp_.param_count(), ParamGroup::body);
  const std::size_t last = mlp_.layers() - 1;
  const std::size_t ni = mlp_.widths()[last];
  const std::size_t first_gamma_row = s.modes + velocity_outputs() * s.dim;
  for (std::size_t g = 0; g < gamma_outputs(); ++g) {
    const std::size_t row = first_gamma_row + g;
    const bool pinned = anchor_ && *anchor_ == g;
    const ParamGroup group = s.gamma_mode == GammaMode::learnable && !pinned
                                 ? ParamGroup::gamma_head
                                 : ParamGroup::frozen;
    for (std::size_t i = 0; i < ni; ++i) {
      groups_[mlp_.weight_offset(last) + row * ni + i] = group;
    }
    groups_[mlp_.bias_offset(last) + row] = group;
  }
}

StudentNet::StudentNet(const NetShape &shape, Rng &rng) : shape_(shape) {
  build_layout();
  mlp_.init_glorot(rng);
  auto p = mlp_.params();
  const std::size_t last = mlp_.layers() - 1;
  const std::size_t ni = mlp_.widths()[last];
  // Gating rows: zero weights and bias, uniform gating at init.
  for (std::size_t row = 0; row < shape_.modes; ++row) {
    std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(mlp_.weight_offset(last) + row * ni), ni, 0.0);
    p[mlp_.bias_offset(last) + row] = 0.0;
  }
  const std::size_t first_gamma_row = shape_.modes + velocity_outputs() * shape_.dim;
  for (std::size_t g = 0; g < gamma_outputs(); ++g) {
    const std::size_t row = first_gamma_row + g;
    std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(mlp_.weight_offset(last) + row * ni), ni, 0.0);
    p[mlp_.bias_offset(last) + row] = gamma_init_[g];
  }
}

StudentNet StudentNet::from_params(const NetShape &shape, std::span<const double> params) {
  StudentNet net;
  net.shape_ = shape;
  net.build_layout();
  if (params.size() != net.param_count()) {
    throw FormatError("parameter count " + std::to_string(params.size()) +
                      " does not match the net shape (" + std::to_string(net.param_count()) + ")");
  }
  std::copy(params.begin(), params.end(), net.mlp_.params().begin());
  return net;
}

MomentumParams StudentNet::decode(std::span<const double> head) const {
  const std::size_t k = shape_.modes;
  const std::size_t d = shape_.dim;

  Vec gating(k);
  double max_logit = head[0];
  for (std::size_t i = 1; i < k; ++i) {
    max_logit = std::max(max_logit, head[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    gating[i] = std::exp(head[i] - max_logit);
    sum += gating[i];
  }
  for (double &g : gating) {
    g /= sum;
  }

  Vec velocities(k * d);
  const std::size_t v0 = k;
  for (std::size_t m = 0; m < k; ++m) {
    const std::size_t src = shape_.share_velocity ? 0 : m;
    for (std::size_t j = 0; j < d; ++j) {
      velocities[m * d + j] = head[v0 + src * d + j];
    }
  }

  Vec log_gammas(k);
  const std::size_t g0 = k + velocity_outputs() * d;
  for (std::size_t m = 0; m < k; ++m) {
    if (shape_.gamma_mode == GammaMode::frozen_one) {
      log_gammas[m] = 0.0;
    } else if (anchor_ && *anchor_ == m) {
      log_gammas[m] = 0.0;
    } else {
      log_gammas[m] = head[g0 + (shape_.share_gamma ? 0 : m)];
    }
  }
  for (double v : head) {
    if (!std::isfinite(v)) {
      throw NumericError("student net produced a non-finite output");
    }
  }
  return MomentumParams(std::move(gating), std::move(velocities), std::move(log_gammas), d,
                        shape_.gamma_mode == GammaMode::frozen_one ? std::optional<std::size_t>{0}
                                                                    : anchor_);
}

MomentumParams StudentNet::forward(std::span<const double> x, double t) const {
  return forward_tape(x, t).theta.value();
}

StudentNet::Tape StudentNet::forward_tape(std::span<const double> x, double t) const {
  if (x.size() != shape_.dim) {
    throw InvalidParameter("student input has the wrong dimension");
  }
  Vec features(feature_count(shape_.dim));
  make_features(x, t, features);
  Tape tape;
  tape.mlp = mlp_.forward(features);
  tape.theta = decode(tape.mlp.activations.back());
  return tape;
}

void StudentNet::backward(const Tape &tape, const MomentumGrad &upstream,
                          std::span<double> grad) const {
  if (tape.empty()) {
    throw StateError("backward called without a forward pass");
  }
  if (grad.size() != param_count()) {
    throw InvalidParameter("gradient buffer has the wrong size");
  }
  const MomentumParams &theta = *tape.theta;
  const std::size_t k = shape_.modes;
  const std::size_t d = shape_.dim;
  Vec d_head(mlp_.output_size(), 0.0);

  // Normalized exponential: dL/dz_i = pi_i (g_i - sum_j pi_j g_j).
  const auto pi = theta.gating();
  double mean_g = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mean_g += pi[i] * upstream.gating[i];
  }
  for (std::size_t i = 0; i < k; ++i) {
    d_head[i] = pi[i] * (upstream.gating[i] - mean_g);
  }

  const std::size_t v0 = k;
  for (std::size_t m = 0; m < k; ++m) {
    const std::size_t dst = shape_.share_velocity ? 0 : m;
    for (std::size_t j = 0; j < d; ++j) {
      d_head[v0 + dst * d + j] += upstream.velocities[m * d + j];
    }
  }

  if (shape_.gamma_mode != GammaMode::frozen_one) {
    const std::size_t g0 = k + velocity_outputs() * d;
    for (std::size_t m = 0; m < k; ++m) {
      if (anchor_ && *anchor_ == m) {
        continue;
      }
      d_head[g0 + (shape_.share_gamma ? 0 : m)] += upstream.log_gammas[m];
    }
  }

  mlp_.backward(tape.mlp, d_head, grad);
}

// ---------------------------------------------------------------- VelocityNet

VelocityNet::VelocityNet(std::size_t dim, std::size_t hidden, std::size_t hidden_layers, Rng &rng)
    : dim_(dim) {
  std::vector<std::size_t> widths{feature_count(dim)};
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    widths.push_back(hidden);
  }
  widths.push_back(dim);
  mlp_ = Mlp(std::move(widths));
  mlp_.init_glorot(rng);
}

Mlp::Tape VelocityNet::forward_tape(std::span<const double> x, double t) const {
  Vec features(feature_count(dim_));
  make_features(x, t, features);
  return mlp_.forward(features);
}

void VelocityNet::forward_into(std::span<const double> x, double t, std::span<double> out) const {
  const auto tape = forward_tape(x, t);
  std::copy(tape.activations.back().begin(), tape.activations.back().end(), out.begin());
}

Vec VelocityNet::forward(std::span<const double> x, double t) const {
  Vec out(dim_);
  forward_into(x, t, out);
  return out;
}

// ---------------------------------------------------------------- Adam

void adam_step(std::span<double> params, std::span<const double> grads,
               std::span<const ParamGroup> groups, OptimState &state, double base_lr,
               const AdamConfig &config) {
  const std::size_t n = params.size();
  if (grads.size() != n || groups.size() != n || state.m.size() != n || state.v.size() != n) {
    throw InvalidParameter("adam: parameter, gradient and state sizes differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam: rejected step, non-finite gradient at parameter " +
                         std::to_string(i));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const double lrs[3] = {base_lr, base_lr * config.gamma_lr_scale, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double lr = lrs[static_cast<std::size_t>(groups[i])];
    if (lr == 0.0) {
      continue;
    }
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + config.eps) + config.weight_decay * params[i]);
  }
}

void adam_step(StudentNet &net, std::span<const double> grads, OptimState &state, double base_lr,
               const AdamConfig &config) {
  adam_step(net.params(), grads, net.groups(), state, base_lr, config);
}

// ---------------------------------------------------------------- grad check

GradCheckResult grad_check(std::span<double> params,
                           const std::function<double(std::span<const double>)> &loss,
                           std::span<const double> analytic, std::size_t probes, Rng &rng,
                           double h, double floor) {
  if (analytic.size() != params.size()) {
    throw InvalidParameter("grad check: analytic gradient has the wrong size");
  }
  std::vector<std::size_t> idx(params.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
  }
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(probes, idx.size()));

  GradCheckResult result;
  for (std::size_t i : idx) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss(params);
    params[i] = saved - h;
    const double down = loss(params);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    const double rel = std::abs(numeric - analytic[i]) / denom;
    if (!(rel <= result.max_rel_error)) {
      result.max_rel_error = rel;
      result.worst_index = i;
    }
    ++result.probes;
  }
  return result;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'R', 'C', 'F', 'L', 'O', 'W', '1'};

void put_u64(std::ostream &out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) {
    bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  }
  out.write(reinterpret_cast<const char *>(bytes), 8);
}

void put_f64(std::ostream &out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream &in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char *>(bytes), 8)) {
    throw FormatError("checkpoint truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  return v;
}

double get_f64(std::istream &in) { return std::bit_cast<double>(get_u64(in)); }

} // namespace

void save_checkpoint(const std::filesystem::path &path, const StudentNet &net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("cannot open checkpoint for writing: " + path.string());
  }
  const NetShape &s = net.shape();
  out.write(kMagic, sizeof kMagic);
  put_u64(out, s.modes);
  put_u64(out, s.dim);
  const auto &widths = net.mlp().widths();
  put_u64(out, widths.size());
  for (std::size_t w : widths) {
    put_u64(out, w);
  }
  put_u64(out, static_cast<std::uint64_t>(s.gamma_mode));
  put_u64(out, s.share_velocity ? 1 : 0);
  put_u64(out, s.share_gamma ? 1 : 0);
  put_f64(out, s.gamma_lo);
  put_f64(out, s.gamma_hi);
  put_u64(out, net.param_count());
  for (double p : net.params()) {
    put_f64(out, p);
  }
  if (!out) {
    throw FormatError("failed writing checkpoint: " + path.string());
  }
}

StudentNet load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open checkpoint: " + path.string());
  }
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError("checkpoint header mismatch (bad magic): " + path.string());
  }
  NetShape s;
  s.modes = get_u64(in);
  s.dim = get_u64(in);
  const std::uint64_t n_widths = get_u64(in);
  if (n_widths < 3 || n_widths > 64) {
    throw FormatError("checkpoint header mismatch: implausible layer count");
  }
  std::vector<std::size_t> widths(n_widths);
  for (auto &w : widths) {
    w = get_u64(in);
  }
  const std::uint64_t mode = get_u64(in);
  if (mode > 2) {
    throw FormatError("checkpoint header mismatch: unknown gamma mode");
  }
  s.gamma_mode = static_cast<GammaMode>(mode);
  s.share_velocity = get_u64(in) != 0;
  s.share_gamma = get_u64(in) != 0;
  s.gamma_lo = get_f64(in);
  s.gamma_hi = get_f64(in);
  s.hidden = widths[1];
  s.hidden_layers = n_widths - 2;
  const std::uint64_t count = get_u64(in);
  if (count > (1ULL << 32)) {
    throw FormatError("checkpoint header mismatch: implausible parameter count");
  }
  Vec params(count);
  for (double &p : params) {
    p = get_f64(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint has trailing bytes");
  }
  StudentNet net = StudentNet::from_params(s, params);
  if (net.mlp().widths() != widths) {
    throw FormatError("checkpoint header mismatch: layer widths disagree with head flags");
  }
  return net;
}

} // namespace arcflow
