#include "lmbridge/network.hpp"

#include <cmath>
#include <random>

#include "lmbridge/error.hpp"

namespace lmb {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;

MatrixXd silu(const MatrixXd& x) {
  return x.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

MatrixXd silu_grad(const MatrixXd& x) {
  return x.unaryExpr([](double v) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return s * (1.0 + v * (1.0 - s));
  });
}

MatrixXd broadcast(const MatrixXd& m, Index cols) {
  return m.cols() == cols ? m : m.replicate(1, cols);
}

}  // namespace

ScoreNetwork::ScoreNetwork(NetworkArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  if (arch_.input_dim < 1 || arch_.output_dim < 1) throw DomainError("network needs positive input/output sizes");
  if (arch_.down_widths.empty()) throw DomainError("network needs at least one hidden layer");
  if (arch_.embed_dim < 2 || arch_.embed_dim % 2 != 0) throw DomainError("embedding dimension must be even and >= 2");
  for (Index w : arch_.down_widths)
    if (w < 1) throw DomainError("hidden widths must be positive");

  std::mt19937_64 rng(seed);
  auto glorot = [&](Index rows, Index cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    MatrixXd m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = u(rng);
    return m;
  };
  auto film = [&](Index rows) {
    std::normal_distribution<double> n(0.0, 0.05);
    MatrixXd m(rows, arch_.embed_dim);
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
    return m;
  };

  const std::size_t depth = arch_.down_widths.size();
  Index in = arch_.input_dim;
  for (std::size_t l = 0; l < depth; ++l) {
    const Index w = arch_.down_widths[l];
    const std::string pre = "down" + std::to_string(l);
    blocks_.push_back({pre + ".weight", glorot(w, in)});
    blocks_.push_back({pre + ".bias", MatrixXd::Zero(w, 1)});
    blocks_.push_back({pre + ".scale.weight", film(w)});
    blocks_.push_back({pre + ".scale.bias", MatrixXd::Zero(w, 1)});
    blocks_.push_back({pre + ".shift.weight", film(w)});
    blocks_.push_back({pre + ".shift.bias", MatrixXd::Zero(w, 1)});
    in = w;
  }
  for (std::size_t j = 0; j + 1 < depth; ++j) {
    const Index w = arch_.down_widths[depth - 2 - j];
    const std::string pre = "up" + std::to_string(j);
    blocks_.push_back({pre + ".weight", glorot(w, in)});
    blocks_.push_back({pre + ".bias", MatrixXd::Zero(w, 1)});
    in = w;
  }
  blocks_.push_back({"out.weight", MatrixXd::Zero(arch_.output_dim, in)});
  blocks_.push_back({"out.bias", MatrixXd::Zero(arch_.output_dim, 1)});
  index_blocks();
}

ScoreNetwork ScoreNetwork::from_blocks(NetworkArchitecture arch, std::vector<Block> blocks) {
  ScoreNetwork net(std::move(arch), 0);
  if (blocks.size() != net.blocks_.size()) throw DomainError("saved network has the wrong number of parameter blocks");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& expected = net.blocks_[i];
    if (blocks[i].name != expected.name || blocks[i].value.rows() != expected.value.rows() ||
        blocks[i].value.cols() != expected.value.cols())
      throw DomainError("saved parameter block '" + blocks[i].name + "' does not match the architecture");
    if (!blocks[i].value.allFinite()) throw DomainError("saved parameter block '" + blocks[i].name + "' is not finite");
  }
  net.blocks_ = std::move(blocks);
  return net;
}

void ScoreNetwork::index_blocks() {
  down_.clear();
  up_.clear();
  const std::size_t depth = arch_.down_widths.size();
  for (std::size_t l = 0; l < depth; ++l) {
    const std::string pre = "down" + std::to_string(l);
    down_.push_back({block_index(pre + ".weight"), block_index(pre + ".bias"), block_index(pre + ".scale.weight"),
                     block_index(pre + ".scale.bias"), block_index(pre + ".shift.weight"),
                     block_index(pre + ".shift.bias")});
  }
  for (std::size_t j = 0; j + 1 < depth; ++j) {
    const std::string pre = "up" + std::to_string(j);
    up_.push_back({block_index(pre + ".weight"), block_index(pre + ".bias")});
  }
  out_ = {block_index("out.weight"), block_index("out.bias")};
}

std::size_t ScoreNetwork::block_index(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return i;
  throw DomainError("network has no parameter block '" + name + "'");
}

MatrixXd ScoreNetwork::forward(const MatrixXd& input, const MatrixXd& embedding) const {
  Tape tape;
  return forward(input, embedding, tape);
}

MatrixXd ScoreNetwork::forward(const MatrixXd& input, const MatrixXd& embedding, Tape& tape) const {
  if (input.rows() != arch_.input_dim) throw DomainError("network input has the wrong dimension");
  if (embedding.rows() != arch_.embed_dim || (embedding.cols() != 1 && embedding.cols() != input.cols()))
    throw DomainError("network embedding has the wrong shape");
  const Index batch = input.cols();
  const std::size_t depth = down_.size();

  tape.input = input;
  tape.embedding = embedding;
  tape.pre.assign(depth + up_.size(), MatrixXd());
  tape.act.assign(depth + up_.size(), MatrixXd());
  tape.linear.assign(depth, MatrixXd());
  tape.scale.assign(depth, MatrixXd());

  const MatrixXd* in = &input;
  for (std::size_t l = 0; l < depth; ++l) {
    const DownLayer& layer = down_[l];
    tape.linear[l] = (p(layer.weight) * *in).colwise() + p(layer.bias).col(0);
    MatrixXd scale = (p(layer.scale_weight) * embedding).colwise() + p(layer.scale_bias).col(0);
    MatrixXd shift = (p(layer.shift_weight) * embedding).colwise() + p(layer.shift_bias).col(0);
    tape.scale[l] = broadcast(scale, batch).array() + 1.0;
    tape.pre[l] = tape.linear[l].cwiseProduct(tape.scale[l]) + broadcast(shift, batch);
    tape.act[l] = silu(tape.pre[l]);
    in = &tape.act[l];
  }
  for (std::size_t j = 0; j < up_.size(); ++j) {
    const std::size_t h = depth + j;
    tape.pre[h] = (p(up_[j].weight) * *in).colwise() + p(up_[j].bias).col(0);
    tape.act[h] = silu(tape.pre[h]) + tape.act[depth - 2 - j];
    in = &tape.act[h];
  }
  return (p(out_.weight) * *in).colwise() + p(out_.bias).col(0);
}

void ScoreNetwork::backward(const Tape& tape, const MatrixXd& grad_output, std::vector<MatrixXd>& grads) const {
  const std::size_t depth = down_.size();
  const std::size_t hidden = depth + up_.size();
  if (grads.size() != blocks_.size()) throw DomainError("gradient buffer does not match the network");

  const MatrixXd& last = tape.act[hidden - 1];
  grads[out_.weight].noalias() += grad_output * last.transpose();
  grads[out_.bias] += grad_output.rowwise().sum();

  std::vector<MatrixXd> dact(hidden);
  dact[hidden - 1] = p(out_.weight).transpose() * grad_output;

  for (std::size_t h = hidden; h-- > depth;) {
    const std::size_t j = h - depth;
    const std::size_t skip = depth - 2 - j;
    if (dact[skip].size() == 0) dact[skip] = dact[h];
    else dact[skip] += dact[h];
    const MatrixXd dpre = dact[h].cwiseProduct(silu_grad(tape.pre[h]));
    const MatrixXd& in = tape.act[h - 1];
    grads[up_[j].weight].noalias() += dpre * in.transpose();
    grads[up_[j].bias] += dpre.rowwise().sum();
    if (dact[h - 1].size() == 0) dact[h - 1] = p(up_[j].weight).transpose() * dpre;
    else dact[h - 1].noalias() += p(up_[j].weight).transpose() * dpre;
  }

  const bool shared_embedding = tape.embedding.cols() == 1;
  for (std::size_t l = depth; l-- > 0;) {
    const DownLayer& layer = down_[l];
    const MatrixXd dpre = dact[l].cwiseProduct(silu_grad(tape.pre[l]));
    const MatrixXd dlin = dpre.cwiseProduct(tape.scale[l]);
    const MatrixXd dscale = dpre.cwiseProduct(tape.linear[l]);
    if (shared_embedding) {
      const MatrixXd dscale_sum = dscale.rowwise().sum();
      const MatrixXd dshift_sum = dpre.rowwise().sum();
      grads[layer.scale_weight].noalias() += dscale_sum * tape.embedding.transpose();
      grads[layer.shift_weight].noalias() += dshift_sum * tape.embedding.transpose();
      grads[layer.scale_bias] += dscale_sum;
      grads[layer.shift_bias] += dshift_sum;
    } else {
      grads[layer.scale_weight].noalias() += dscale * tape.embedding.transpose();
      grads[layer.shift_weight].noalias() += dpre * tape.embedding.transpose();
      grads[layer.scale_bias] += dscale.rowwise().sum();
      grads[layer.shift_bias] += dpre.rowwise().sum();
    }
    const MatrixXd& in = l == 0 ? tape.input : tape.act[l - 1];
    grads[layer.weight].noalias() += dlin * in.transpose();
    grads[layer.bias] += dlin.rowwise().sum();
    if (l > 0) {
      if (dact[l - 1].size() == 0) dact[l - 1] = p(layer.weight).transpose() * dlin;
      else dact[l - 1].noalias() += p(layer.weight).transpose() * dlin;
    }
  }
}

std::vector<MatrixXd> ScoreNetwork::zero_gradients() const {
  std::vector<MatrixXd> grads;
  grads.reserve(blocks_.size());
  for (const auto& b : blocks_) grads.push_back(MatrixXd::Zero(b.value.rows(), b.value.cols()));
  return grads;
}

std::size_t ScoreNetwork::parameter_count() const {
  std::size_t count = 0;
  for (const auto& b : blocks_) count += static_cast<std::size_t>(b.value.size());
  return count;
}

bool ScoreNetwork::all_finite() const {
  for (const auto& b : blocks_)
    if (!b.value.allFinite()) return false;
  return true;
}

Adam::Adam(const std::vector<ScoreNetwork::Block>& blocks, double learning_rate, double beta1, double beta2,
           double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (const auto& b : blocks) {
    m_.push_back(MatrixXd::Zero(b.value.rows(), b.value.cols()));
    v_.push_back(MatrixXd::Zero(b.value.rows(), b.value.cols()));
  }
}

void Adam::step(std::vector<ScoreNetwork::Block>& blocks, const std::vector<MatrixXd>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
    blocks[i].value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

}  // namespace lmb
