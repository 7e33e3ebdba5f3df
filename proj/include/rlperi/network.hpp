#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rlperi/field.hpp"
#include "rlperi/rng.hpp"
#include "rlperi/test_state.hpp"

namespace rlperi {

enum class StateMode {
  counts3d,  // paired seen / not-seen count tensors
  pred2d,    // 8 x 9 matrix of current estimates (ablation)
};

const char* to_string(StateMode m);
StateMode state_mode_from_string(const std::string& s);

/// Vectorised reductions over a Map peel a number of leading scalars that
/// depends on the buffer address, so buffers the network reduces over are
/// kept at Eigen's maximum alignment to make results independent of where
/// the heap places them.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

struct NetworkConfig {
  StateMode state_mode = StateMode::counts3d;
  int lifted_channels = 64;  // c
  int spatial_groups = 8;    // groups of the 3x3 kernel
  int pointwise_groups = 4;  // groups of the 1x1 kernel
  std::vector<int> trunk = {512, 256};
  double dropout = 0.1;
  double layer_norm_eps = 1e-5;

  int spatial_group_channels() const { return lifted_channels / spatial_groups; }
  int pointwise_group_channels() const { return lifted_channels / pointwise_groups; }
  /// Length of the flattened state feature fed to the trunk.
  int feature_size() const;

  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct ParamSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  int fan_in = 0;  // 0 for layer-norm gain and shift
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Names, shapes and offsets of every parameter array inside the flat
/// parameter vector.
class ParamLayout {
 public:
  explicit ParamLayout(const NetworkConfig& cfg);

  const std::vector<ParamSpec>& specs() const { return specs_; }
  const ParamSpec& find(const std::string& name) const;
  std::size_t total() const { return total_; }

 private:
  std::size_t add(std::string name, int rows, int cols, int fan_in);

  std::vector<ParamSpec> specs_;
  std::size_t total_ = 0;
};

/// Branching dueling Q-network.
///
/// Each count tensor (seen, not seen) passes through its own feature stack:
/// a 1x1 lift from 41 stimulus channels to c channels, then a grouped 3x3
/// spatial convolution and a grouped 1x1 pointwise convolution applied side
/// by side to the lifted map. Their outputs are summed and rectified, and
/// the two stacks are flattened into one feature vector. A fully connected
/// trunk (linear, layer norm, ReLU, dropout per layer) feeds three heads:
/// the state value V, location advantages A_l (54) and stimulus advantages
/// A_v (41). Each branch is mean-centred:
///
///     Q_l = V + A_l - mean(A_l),   Q_v = V + A_v - mean(A_v)
///
/// All arrays are column-per-sample.
template <typename Scalar>
class QNetwork {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Input {
    int batch = 0;
    Matrix seen;      // 41 x (72 * batch), counts3d only
    Matrix not_seen;  // 41 x (72 * batch), counts3d only
    Matrix pred;      // 72 x batch, pred2d only
  };

  struct Output {
    Matrix value;     // 1 x B
    Matrix q_loc;     // 54 x B
    Matrix q_stim;    // 41 x B
  };

  /// Intermediate activations kept for backward.
  struct Cache {
    struct Path {
      Matrix input;  // 41 x 72B
      Matrix lifted; // c x 72B
      Matrix pre;    // c x 72B, spatial + pointwise before ReLU
    };
    struct Layer {
      Matrix input;
      Matrix normalized;
      Vector inv_std;  // per sample
      Matrix affine;   // post layer norm, pre ReLU
      Matrix mask;     // dropout keep mask scaled by 1/(1-p); empty when off
    };
    int batch = 0;
    Path paths[2];
    Matrix features;
    std::vector<Layer> layers;
    Matrix last_hidden;
  };

  explicit QNetwork(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }

  std::span<Scalar> parameters() { return params_; }
  std::span<const Scalar> parameters() const { return params_; }
  void set_parameters(std::span<const Scalar> values);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, unit
  /// layer-norm gains.
  void initialize(std::uint64_t seed);

  Input encode(std::span<const TestState* const> states) const;
  Input encode(const TestState& state) const;

  /// Inference pass: no dropout, nothing cached.
  Output forward(const Input& in) const;

  /// Training pass. Fills `cache` for backward; dropout is applied when
  /// `dropout_rng` is non-null and the configured rate is positive.
  Output forward(const Input& in, Cache& cache, Rng* dropout_rng) const;

  /// Accumulates dLoss/dtheta into `grad` (same length as parameters())
  /// given dLoss/dQ_l and dLoss/dQ_v.
  void backward(const Cache& cache, const Matrix& d_q_loc, const Matrix& d_q_stim,
                std::span<Scalar> grad) const;

  /// Throws NumericalError if any parameter is non-finite.
  void check_finite() const;

 private:
  using Map = Eigen::Map<Matrix>;
  using ConstMap = Eigen::Map<const Matrix>;

  ConstMap param(const ParamSpec& s) const;
  Map grad_view(std::span<Scalar> grad, const ParamSpec& s) const;

  void features_forward(int path, const Matrix& input, int batch, typename Cache::Path* cache,
                        Matrix& activated) const;

  NetworkConfig cfg_;
  ParamLayout layout_;
  AlignedVector<Scalar> params_;
  // Offsets into layout_.specs() of the per-path and per-layer parameters.
  struct PathIdx { std::size_t lift_w, lift_b, spatial_w, spatial_b, point_w, point_b; };
  struct LayerIdx { std::size_t w, b, gain, beta; };
  PathIdx path_idx_[2]{};
  std::vector<LayerIdx> layer_idx_;
  std::size_t value_w_ = 0, value_b_ = 0, loc_w_ = 0, loc_b_ = 0, stim_w_ = 0, stim_b_ = 0;
};

extern template class QNetwork<float>;
extern template class QNetwork<double>;

using PolicyNetwork = QNetwork<float>;

/// Location with the highest Q_l among `untested` (lowest index on ties) and
/// stimulus with the highest Q_v over all 41 values.
struct Action {
  int location = 0;
  int stimulus_db = 0;
  friend bool operator==(const Action&, const Action&) = default;
};

template <typename Scalar>
Action greedy_action(const QNetwork<Scalar>& net, const TestState& state);

/// Same selection rule applied to precomputed Q columns.
template <typename Scalar>
Action greedy_from_q(std::span<const Scalar> q_loc, std::span<const Scalar> q_stim,
                     std::span<const int> untested);

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(std::size_t size, double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  template <typename Scalar>
  void step(std::span<Scalar> params, std::span<const Scalar> grad);

  std::uint64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  AlignedVector<double> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace rlperi
