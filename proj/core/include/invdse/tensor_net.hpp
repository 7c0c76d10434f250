#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "invdse/seeds.hpp"
#include "invdse/tensor.hpp"

// Small dense networks with exact reverse-mode gradients. Batches are
// Eigen matrices with one sample per column.
namespace invdse::nn {

enum class Activation { relu, tanh, identity };
enum class LayerKind { dense, residual_block };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int in_width = 0;
  int out_width = 0;
  Activation activation = Activation::identity;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A residual block computes y = x + W2 act(W1 x + b1) + b2 at constant width.
struct NetSpec {
  int input_width = 0;
  int embed_width = 0;  // concatenated below the input when non-zero
  int output_width = 0;
  std::vector<LayerSpec> layers;

  /// dense(in+embed -> hidden, act), `blocks` residual blocks, dense(hidden -> out, identity).
  static NetSpec residual_mlp(int input, int output, int hidden, int blocks, Activation act, int embed = 0);

  /// Throws ShapeError when adjacent widths disagree.
  void check() const;
  std::size_t param_count() const;

  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

/// Flat parameter vector. Every mutation bumps the generation so stale tapes are detected.
class NetParams {
 public:
  NetParams() = default;
  explicit NetParams(const NetSpec& spec);  // zero-filled
  static NetParams init(const NetSpec& spec, Rng& rng);

  const Eigen::VectorXd& values() const { return values_; }
  /// Mutable access; invalidates existing tapes.
  Eigen::VectorXd& mutable_values() {
    ++generation_;
    return values_;
  }
  void assign(Eigen::VectorXd v);
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  std::uint64_t generation() const { return generation_; }
  std::uint64_t identity() const { return identity_; }

  /// Offset of layer `l`'s first weight in the flat vector.
  std::size_t offset(std::size_t layer) const { return offsets_.at(layer); }

 private:
  Eigen::VectorXd values_;
  std::vector<std::size_t> offsets_;
  std::uint64_t generation_ = 0;
  std::uint64_t identity_ = 0;
};

/// Activation record of one forward pass.
struct Tape {
  struct Layer {
    Eigen::MatrixXd input;
    Eigen::MatrixXd pre;     // pre-activation (dense) or inner pre-activation (residual)
    Eigen::MatrixXd hidden;  // act(pre) for residual blocks
  };
  std::vector<Layer> layers;
  Eigen::Index batch = 0;
  std::uint64_t params_identity = 0;
  std::uint64_t params_generation = 0;
  std::size_t param_count = 0;
};

struct ForwardResult {
  Eigen::MatrixXd output;
  Tape tape;
};

struct Gradients {
  Eigen::VectorXd params;
  Eigen::MatrixXd input;  // w.r.t. the first input_width rows only
};

ForwardResult forward(const NetParams& params, const NetSpec& spec, const Eigen::MatrixXd& input,
                      const Eigen::MatrixXd* embed = nullptr);

/// Forward pass that keeps no tape.
Eigen::MatrixXd infer(const NetParams& params, const NetSpec& spec, const Eigen::MatrixXd& input,
                      const Eigen::MatrixXd* embed = nullptr);

/// Single-tensor convenience: the tensor is flattened row-major into one column.
ForwardResult forward(const NetParams& params, const NetSpec& spec, const Tensor2D& input,
                      const std::optional<Eigen::VectorXd>& timestep_embed = std::nullopt);

/// Exact reverse pass. With `param_gradients` false only the input gradient is formed.
Gradients backward(const NetParams& params, const NetSpec& spec, const Tape& tape,
                   const Eigen::MatrixXd& output_gradient, bool param_gradients = true);

struct Loss {
  double value = 0.0;
  Eigen::MatrixXd gradient;
};

/// Mean squared error over all entries; gradient is 2 (prediction - target) / count.
Loss mse(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target);

struct TensorLoss {
  double value = 0.0;
  Tensor2D gradient;
};
TensorLoss mse(const Tensor2D& prediction, const Tensor2D& target);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg)
      : config(cfg), m(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))), v(m) {}
};

/// One bias-corrected adaptive-moment update. Throws DivergenceError on a non-finite gradient.
void optimizer_step(NetParams& params, const Eigen::VectorXd& gradient, AdamState& state);

/// Sinusoidal features sin(t w_k), cos(t w_k) with w_k = 10000^(-2k/dim).
Eigen::VectorXd timestep_embedding(int t, int dim);

/// Versioned JSON checkpoint of a network.
struct NetCheckpoint {
  NetSpec spec;
  NetParams params;
  std::uint64_t seed = 0;
};
void save_checkpoint(const std::filesystem::path& path, const NetCheckpoint& ckpt);
NetCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace invdse::nn
