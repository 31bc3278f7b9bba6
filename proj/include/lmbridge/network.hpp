#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lmb {

/// Shape of the score network: an "inverse U" of down-sizing layers
/// (widths `down_widths`), mirrored up-sizing layers with element-wise skip
/// connections from the equal-width down layers, and a linear output layer.
/// Down layers receive a FiLM-style scale/shift computed from an embedding.
struct NetworkArchitecture {
  Eigen::Index input_dim = 0;
  Eigen::Index output_dim = 0;
  std::vector<Eigen::Index> down_widths{256, 128, 64};
  Eigen::Index embed_dim = 32;

  bool operator==(const NetworkArchitecture&) const = default;
};

/// Feed-forward network with hand-written reverse-mode gradients.
/// Batches are column-major: column j is sample j.
class ScoreNetwork {
 public:
  struct Block {
    std::string name;
    Eigen::MatrixXd value;
  };

  /// Activations kept by forward() for backward().
  struct Tape {
    Eigen::MatrixXd input;
    Eigen::MatrixXd embedding;
    std::vector<Eigen::MatrixXd> pre;     // per hidden layer, before the nonlinearity
    std::vector<Eigen::MatrixXd> linear;  // down layers: affine output before scale/shift
    std::vector<Eigen::MatrixXd> scale;   // down layers: 1 + scale term
    std::vector<Eigen::MatrixXd> act;     // per hidden layer output (after skip for up layers)
  };

  ScoreNetwork() = default;
  /// Glorot-uniform hidden weights, small random conditioning weights and a
  /// zero output layer.
  ScoreNetwork(NetworkArchitecture arch, std::uint64_t seed);
  /// Restores a network from saved blocks; names and shapes must match `arch`.
  static ScoreNetwork from_blocks(NetworkArchitecture arch, std::vector<Block> blocks);

  const NetworkArchitecture& architecture() const { return arch_; }

  /// embedding: embed_dim x batch, or embed_dim x 1 to broadcast.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, const Eigen::MatrixXd& embedding) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, const Eigen::MatrixXd& embedding, Tape& tape) const;

  /// Accumulates dL/dparam into `grads` (same layout as blocks()) for upstream
  /// gradient dL/doutput.
  void backward(const Tape& tape, const Eigen::MatrixXd& grad_output, std::vector<Eigen::MatrixXd>& grads) const;

  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<Eigen::MatrixXd> zero_gradients() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Index of a named block; throws DomainError if absent.
  std::size_t block_index(const std::string& name) const;

 private:
  struct DownLayer {
    std::size_t weight, bias, scale_weight, scale_bias, shift_weight, shift_bias;
  };
  struct DenseLayer {
    std::size_t weight, bias;
  };

  void index_blocks();
  const Eigen::MatrixXd& p(std::size_t i) const { return blocks_[i].value; }

  NetworkArchitecture arch_;
  std::vector<Block> blocks_;
  std::vector<DownLayer> down_;
  std::vector<DenseLayer> up_;
  DenseLayer out_{};
};

/// Adam over a list of parameter blocks.
class Adam {
 public:
  Adam(const std::vector<ScoreNetwork::Block>& blocks, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8);

  void step(std::vector<ScoreNetwork::Block>& blocks, const std::vector<Eigen::MatrixXd>& grads);
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

}  // namespace lmb
