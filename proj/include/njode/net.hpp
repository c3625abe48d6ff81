#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "njode/tape.hpp"

namespace njode::nn {

// Per-row dropout keys. Row r of a batch draws its masks from
// (seed, row_keys[r], site, layer), so a sample's masks do not depend on
// which other samples share its batch.
struct DropoutContext {
  std::uint64_t seed = 0;
  std::span<const std::uint64_t> row_keys;
  std::uint64_t site = 0;
};

// Fully connected tanh network: tanh on every hidden layer, identity on the
// output layer, inverted dropout after each hidden nonlinearity.
class FeedForwardNet {
 public:
  FeedForwardNet() = default;
  FeedForwardNet(std::vector<int> widths, double dropout, bool residual, std::string name = "net");

  const std::vector<int>& widths() const { return widths_; }
  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  double dropout() const { return dropout_; }
  bool residual() const { return residual_; }
  const std::string& name() const { return name_; }
  std::size_t layer_count() const { return weights_.size(); }

  Parameter& weight(std::size_t layer) { return weights_[layer]; }
  const Parameter& weight(std::size_t layer) const { return weights_[layer]; }
  Parameter& bias(std::size_t layer) { return biases_[layer]; }
  const Parameter& bias(std::size_t layer) const { return biases_[layer]; }

  // Fixed order: W0, b0, W1, b1, ...
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  // Records the forward pass; dropout is active iff `dropout` is non-null.
  Var forward(Tape& tape, Var x, const DropoutContext* dropout = nullptr) const;

 private:
  std::vector<int> widths_;
  double dropout_ = 0.0;
  bool residual_ = false;
  std::string name_;
  std::vector<Parameter> weights_;  // in x out
  std::vector<Parameter> biases_;   // 1 x out
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
FeedForwardNet init_weights(const std::vector<int>& widths, std::uint64_t seed, double dropout = 0.1,
                            bool residual = false, const std::string& name = "net");

// Dropout mask for one layer, already scaled by 1/(1 - rate).
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, const DropoutContext& ctx, std::uint64_t layer);

struct NetMode {
  bool train = false;
  std::uint64_t seed = 0;

  static NetMode eval() { return {}; }
  static NetMode training(std::uint64_t seed) { return {true, seed}; }
};

struct NetForward {
  Tape tape;
  Var input;
  Var output;
  std::vector<double> y;
};

// Single-sample convenience wrappers around FeedForwardNet::forward.
NetForward net_forward(const FeedForwardNet& net, std::span<const double> x, NetMode mode);

struct NetGradients {
  // Same order as FeedForwardNet::parameters().
  std::vector<Matrix> params;
  std::vector<double> input;
};

NetGradients net_backward(NetForward& fwd, const FeedForwardNet& net, std::span<const double> upstream);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

// Adam with decoupled weight decay: p <- p - lr * wd * p, then the
// bias-corrected Adam update.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

  // Throws NumericError (and leaves everything untouched) on non-finite grads.
  void step(std::span<Parameter* const> params, std::span<const Matrix> grads);

 private:
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t steps_ = 0;
};

inline void adam_step(std::span<Parameter* const> params, std::span<const Matrix> grads, AdamState& state) {
  state.step(params, grads);
}

// Flat parameter table: header `name,row,col,value`, 17 significant digits.
std::string parameters_to_csv(std::span<const Parameter* const> params);
// Fills `params` (matched by name, shapes must agree) from a table.
void parameters_from_csv(std::string_view csv, std::span<Parameter* const> params);

}  // namespace njode::nn
