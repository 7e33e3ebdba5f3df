#include "rlperi/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rlperi/errors.hpp"

namespace rlperi {

namespace {

constexpr int kCells = kGridCells;
constexpr const char* kPathName[2] = {"seen", "not_seen"};

}  // namespace

const char* to_string(StateMode m) { return m == StateMode::counts3d ? "3d" : "2d"; }

StateMode state_mode_from_string(const std::string& s) {
  if (s == "3d") return StateMode::counts3d;
  if (s == "2d") return StateMode::pred2d;
  throw DomainError("unknown state mode '" + s + "' (expected 3d or 2d)");
}

int NetworkConfig::feature_size() const {
  return state_mode == StateMode::counts3d ? 2 * lifted_channels * kCells : kCells;
}

void NetworkConfig::validate() const {
  if (lifted_channels < 1 || spatial_groups < 1 || pointwise_groups < 1) {
    throw DomainError("channel and group counts must be positive");
  }
  if (lifted_channels % spatial_groups != 0 || lifted_channels % pointwise_groups != 0) {
    throw DomainError("lifted channels must divide evenly into both group counts");
  }
  if (trunk.empty()) throw DomainError("trunk needs at least one layer");
  for (int w : trunk) {
    if (w < 2) throw DomainError("trunk widths must be >= 2 for layer normalization");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw DomainError("dropout must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw DomainError("layer norm epsilon must be positive");
}

ParamLayout::ParamLayout(const NetworkConfig& cfg) {
  cfg.validate();
  const int c = cfg.lifted_channels;
  if (cfg.state_mode == StateMode::counts3d) {
    const int cl = cfg.spatial_group_channels();
    const int cv = cfg.pointwise_group_channels();
    for (const char* path : kPathName) {
      const std::string p = std::string(path) + ".";
      add(p + "lift.weight", c, kNumStimuli, kNumStimuli);
      add(p + "lift.bias", c, 1, kNumStimuli);
      add(p + "spatial.weight", c, cl * 9, cl * 9);
      add(p + "spatial.bias", c, 1, cl * 9);
      add(p + "pointwise.weight", c, cv, cv);
      add(p + "pointwise.bias", c, 1, cv);
    }
  }
  int in = cfg.feature_size();
  for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
    const std::string p = "trunk." + std::to_string(i) + ".";
    const int out = cfg.trunk[i];
    add(p + "weight", out, in, in);
    add(p + "bias", out, 1, in);
    add(p + "ln_gain", out, 1, 0);
    add(p + "ln_bias", out, 1, 0);
    in = out;
  }
  add("head.value.weight", 1, in, in);
  add("head.value.bias", 1, 1, in);
  add("head.location.weight", kNumLocations, in, in);
  add("head.location.bias", kNumLocations, 1, in);
  add("head.stimulus.weight", kNumStimuli, in, in);
  add("head.stimulus.bias", kNumStimuli, 1, in);
}

std::size_t ParamLayout::add(std::string name, int rows, int cols, int fan_in) {
  ParamSpec s{std::move(name), rows, cols, total_, fan_in};
  total_ += s.size();
  specs_.push_back(std::move(s));
  return specs_.size() - 1;
}

const ParamSpec& ParamLayout::find(const std::string& name) const {
  for (const auto& s : specs_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("no parameter named " + name);
}

template <typename Scalar>
QNetwork<Scalar>::QNetwork(NetworkConfig cfg) : cfg_(std::move(cfg)), layout_(cfg_), params_(layout_.total(), Scalar(0)) {
  auto idx = [&](const std::string& name) {
    const auto& specs = layout_.specs();
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (specs[i].name == name) return i;
    }
    throw std::logic_error("missing parameter " + name);
  };
  if (cfg_.state_mode == StateMode::counts3d) {
    for (int p = 0; p < 2; ++p) {
      const std::string n = std::string(kPathName[p]) + ".";
      path_idx_[p] = {idx(n + "lift.weight"),      idx(n + "lift.bias"),
                      idx(n + "spatial.weight"),   idx(n + "spatial.bias"),
                      idx(n + "pointwise.weight"), idx(n + "pointwise.bias")};
    }
  }
  for (std::size_t i = 0; i < cfg_.trunk.size(); ++i) {
    const std::string n = "trunk." + std::to_string(i) + ".";
    layer_idx_.push_back({idx(n + "weight"), idx(n + "bias"), idx(n + "ln_gain"), idx(n + "ln_bias")});
  }
  value_w_ = idx("head.value.weight");
  value_b_ = idx("head.value.bias");
  loc_w_ = idx("head.location.weight");
  loc_b_ = idx("head.location.bias");
  stim_w_ = idx("head.stimulus.weight");
  stim_b_ = idx("head.stimulus.bias");
}

template <typename Scalar>
void QNetwork<Scalar>::set_parameters(std::span<const Scalar> values) {
  if (values.size() != params_.size()) throw DomainError("parameter vector length mismatch");
  std::copy(values.begin(), values.end(), params_.begin());
}

template <typename Scalar>
void QNetwork<Scalar>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& s : layout_.specs()) {
    Scalar* p = params_.data() + s.offset;
    if (s.fan_in == 0) {
      const bool gain = s.name.ends_with("ln_gain");
      std::fill(p, p + s.size(), gain ? Scalar(1) : Scalar(0));
      continue;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    for (std::size_t i = 0; i < s.size(); ++i) p[i] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
  }
}

template <typename Scalar>
typename QNetwork<Scalar>::ConstMap QNetwork<Scalar>::param(const ParamSpec& s) const {
  return ConstMap(params_.data() + s.offset, s.rows, s.cols);
}

template <typename Scalar>
typename QNetwork<Scalar>::Map QNetwork<Scalar>::grad_view(std::span<Scalar> grad, const ParamSpec& s) const {
  return Map(grad.data() + s.offset, s.rows, s.cols);
}

template <typename Scalar>
typename QNetwork<Scalar>::Input QNetwork<Scalar>::encode(std::span<const TestState* const> states) const {
  Input in;
  in.batch = static_cast<int>(states.size());
  const int b_count = in.batch;
  if (cfg_.state_mode == StateMode::counts3d) {
    in.seen.resize(kNumStimuli, kCells * b_count);
    in.not_seen.resize(kNumStimuli, kCells * b_count);
    for (int b = 0; b < b_count; ++b) {
      const auto& seen = states[static_cast<std::size_t>(b)]->seen_counts();
      const auto& not_seen = states[static_cast<std::size_t>(b)]->not_seen_counts();
      for (int s = 0; s < kNumStimuli; ++s) {
        for (int f = 0; f < kCells; ++f) {
          const auto o = static_cast<std::size_t>(s * kCells + f);
          in.seen(s, b * kCells + f) = static_cast<Scalar>(seen[o]);
          in.not_seen(s, b * kCells + f) = static_cast<Scalar>(not_seen[o]);
        }
      }
    }
  } else {
    in.pred.resize(kCells, b_count);
    for (int b = 0; b < b_count; ++b) {
      const auto m = states[static_cast<std::size_t>(b)]->pred_matrix();
      for (int f = 0; f < kCells; ++f) in.pred(f, b) = static_cast<Scalar>(m[static_cast<std::size_t>(f)]);
    }
  }
  return in;
}

template <typename Scalar>
typename QNetwork<Scalar>::Input QNetwork<Scalar>::encode(const TestState& state) const {
  const TestState* p = &state;
  return encode(std::span<const TestState* const>(&p, 1));
}

namespace {

// Unfolds one channel group of a c x (72 B) map into (group * 9) x (72 B)
// columns for a zero-padded 3x3 convolution. Row index = channel * 9 + tap.
template <typename Matrix>
void im2col(const Matrix& map, int first_channel, int channels, int batch, Matrix& cols) {
  cols.setZero(channels * 9, kCells * batch);
  for (int ch = 0; ch < channels; ++ch) {
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const int row = ch * 9 + dy * 3 + dx;
        for (int b = 0; b < batch; ++b) {
          for (int r = 0; r < kGridRows; ++r) {
            const int sr = r + dy - 1;
            if (sr < 0 || sr >= kGridRows) continue;
            for (int c = 0; c < kGridCols; ++c) {
              const int sc = c + dx - 1;
              if (sc < 0 || sc >= kGridCols) continue;
              cols(row, b * kCells + r * kGridCols + c) = map(first_channel + ch, b * kCells + sr * kGridCols + sc);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds column gradients back into the map.
template <typename Matrix>
void col2im_add(const Matrix& cols, int first_channel, int channels, int batch, Matrix& map) {
  for (int ch = 0; ch < channels; ++ch) {
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const int row = ch * 9 + dy * 3 + dx;
        for (int b = 0; b < batch; ++b) {
          for (int r = 0; r < kGridRows; ++r) {
            const int sr = r + dy - 1;
            if (sr < 0 || sr >= kGridRows) continue;
            for (int c = 0; c < kGridCols; ++c) {
              const int sc = c + dx - 1;
              if (sc < 0 || sc >= kGridCols) continue;
              map(first_channel + ch, b * kCells + sr * kGridCols + sc) += cols(row, b * kCells + r * kGridCols + c);
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
void QNetwork<Scalar>::features_forward(int path, const Matrix& input, int batch, typename Cache::Path* cache,
                                        Matrix& activated) const {
  const auto& specs = layout_.specs();
  const auto& idx = path_idx_[path];
  const int c = cfg_.lifted_channels;
  const int cl = cfg_.spatial_group_channels();
  const int cv = cfg_.pointwise_group_channels();

  Matrix lifted = param(specs[idx.lift_w]) * input;
  lifted.colwise() += param(specs[idx.lift_b]).col(0);

  Matrix pre(c, kCells * batch);
  const auto spatial_w = param(specs[idx.spatial_w]);
  Matrix cols;
  for (int g = 0; g < cfg_.spatial_groups; ++g) {
    im2col(lifted, g * cl, cl, batch, cols);
    pre.middleRows(g * cl, cl).noalias() = spatial_w.middleRows(g * cl, cl) * cols;
  }
  const auto point_w = param(specs[idx.point_w]);
  for (int g = 0; g < cfg_.pointwise_groups; ++g) {
    pre.middleRows(g * cv, cv).noalias() += point_w.middleRows(g * cv, cv) * lifted.middleRows(g * cv, cv);
  }
  pre.colwise() += param(specs[idx.spatial_b]).col(0) + param(specs[idx.point_b]).col(0);

  activated = pre.cwiseMax(Scalar(0));
  if (cache) {
    cache->input = input;
    cache->lifted = std::move(lifted);
    cache->pre = std::move(pre);
  }
}

template <typename Scalar>
typename QNetwork<Scalar>::Output QNetwork<Scalar>::forward(const Input& in) const {
  Cache scratch;
  return forward(in, scratch, nullptr);
}

template <typename Scalar>
typename QNetwork<Scalar>::Output QNetwork<Scalar>::forward(const Input& in, Cache& cache, Rng* dropout_rng) const {
  const auto& specs = layout_.specs();
  const int batch = in.batch;
  if (batch < 1) throw DomainError("empty batch");
  cache.batch = batch;

  Matrix x;
  if (cfg_.state_mode == StateMode::counts3d) {
    if (in.seen.rows() != kNumStimuli || in.seen.cols() != kCells * batch || in.not_seen.rows() != kNumStimuli ||
        in.not_seen.cols() != kCells * batch) {
      throw DomainError("state input must be 2 x 41 x 8 x 9 per sample");
    }
    const int c = cfg_.lifted_channels;
    const int block = c * kCells;
    x.resize(2 * block, batch);
    Matrix act;
    for (int p = 0; p < 2; ++p) {
      features_forward(p, p == 0 ? in.seen : in.not_seen, batch, &cache.paths[p], act);
      // Column b of the feature matrix is the contiguous c x 72 block of sample b.
      for (int b = 0; b < batch; ++b) {
        x.col(b).segment(p * block, block) = Eigen::Map<const Vector>(act.data() + static_cast<std::ptrdiff_t>(b) * block, block);
      }
    }
  } else {
    if (in.pred.rows() != kCells || in.pred.cols() != batch) throw DomainError("2d state input must be 72 per sample");
    x = in.pred;
  }
  cache.features = x;

  const bool use_dropout = dropout_rng != nullptr && cfg_.dropout > 0.0;
  const Scalar keep = static_cast<Scalar>(1.0 - cfg_.dropout);
  const Scalar eps = static_cast<Scalar>(cfg_.layer_norm_eps);
  cache.layers.resize(cfg_.trunk.size());
  for (std::size_t i = 0; i < cfg_.trunk.size(); ++i) {
    auto& layer = cache.layers[i];
    const auto& li = layer_idx_[i];
    Matrix pre = param(specs[li.w]) * x;
    pre.colwise() += param(specs[li.b]).col(0);

    const Scalar width = static_cast<Scalar>(pre.rows());
    layer.inv_std.resize(batch);
    for (int b = 0; b < batch; ++b) {
      auto col = pre.col(b);
      const Scalar mu = col.sum() / width;
      col.array() -= mu;
      const Scalar var = col.squaredNorm() / width;
      layer.inv_std(b) = Scalar(1) / std::sqrt(var + eps);
      col *= layer.inv_std(b);
    }
    layer.normalized = std::move(pre);
    layer.affine = (layer.normalized.array().colwise() * param(specs[li.gain]).col(0).array()).matrix();
    layer.affine.colwise() += param(specs[li.beta]).col(0);

    layer.input = std::move(x);
    x = layer.affine.cwiseMax(Scalar(0));
    if (use_dropout) {
      layer.mask.resize(x.rows(), x.cols());
      for (Eigen::Index k = 0; k < layer.mask.size(); ++k) {
        layer.mask.data()[k] = dropout_rng->uniform() < cfg_.dropout ? Scalar(0) : Scalar(1) / keep;
      }
      x = x.cwiseProduct(layer.mask);
    } else {
      layer.mask.resize(0, 0);
    }
  }
  cache.last_hidden = x;

  Output out;
  out.value = param(specs[value_w_]) * x;
  out.value.colwise() += param(specs[value_b_]).col(0);
  Matrix adv_loc = param(specs[loc_w_]) * x;
  adv_loc.colwise() += param(specs[loc_b_]).col(0);
  Matrix adv_stim = param(specs[stim_w_]) * x;
  adv_stim.colwise() += param(specs[stim_b_]).col(0);

  out.q_loc.resize(kNumLocations, batch);
  out.q_stim.resize(kNumStimuli, batch);
  for (int b = 0; b < batch; ++b) {
    out.q_loc.col(b) = adv_loc.col(b).array() - adv_loc.col(b).mean() + out.value(0, b);
    out.q_stim.col(b) = adv_stim.col(b).array() - adv_stim.col(b).mean() + out.value(0, b);
  }
  return out;
}

template <typename Scalar>
void QNetwork<Scalar>::backward(const Cache& cache, const Matrix& d_q_loc, const Matrix& d_q_stim,
                                std::span<Scalar> grad) const {
  if (grad.size() != params_.size()) throw DomainError("gradient buffer length mismatch");
  const auto& specs = layout_.specs();
  const int batch = cache.batch;

  // Dueling aggregation.
  Matrix d_value = d_q_loc.colwise().sum() + d_q_stim.colwise().sum();
  Matrix d_adv_loc = d_q_loc;
  Matrix d_adv_stim = d_q_stim;
  for (int b = 0; b < batch; ++b) {
    d_adv_loc.col(b).array() -= d_q_loc.col(b).mean();
    d_adv_stim.col(b).array() -= d_q_stim.col(b).mean();
  }

  const Matrix& h = cache.last_hidden;
  grad_view(grad, specs[value_w_]).noalias() += d_value * h.transpose();
  grad_view(grad, specs[value_b_]) += d_value.rowwise().sum();
  grad_view(grad, specs[loc_w_]).noalias() += d_adv_loc * h.transpose();
  grad_view(grad, specs[loc_b_]) += d_adv_loc.rowwise().sum();
  grad_view(grad, specs[stim_w_]).noalias() += d_adv_stim * h.transpose();
  grad_view(grad, specs[stim_b_]) += d_adv_stim.rowwise().sum();

  Matrix dx = param(specs[value_w_]).transpose() * d_value;
  dx.noalias() += param(specs[loc_w_]).transpose() * d_adv_loc;
  dx.noalias() += param(specs[stim_w_]).transpose() * d_adv_stim;

  for (std::size_t ii = cfg_.trunk.size(); ii-- > 0;) {
    const auto& layer = cache.layers[ii];
    const auto& li = layer_idx_[ii];
    if (layer.mask.size() > 0) dx = dx.cwiseProduct(layer.mask);
    Matrix d_affine = (layer.affine.array() > Scalar(0)).select(dx, Scalar(0));

    grad_view(grad, specs[li.gain]) += (d_affine.cwiseProduct(layer.normalized)).rowwise().sum();
    grad_view(grad, specs[li.beta]) += d_affine.rowwise().sum();

    Matrix d_norm = (d_affine.array().colwise() * param(specs[li.gain]).col(0).array()).matrix();
    const Scalar width = static_cast<Scalar>(d_norm.rows());
    for (int b = 0; b < batch; ++b) {
      auto col = d_norm.col(b);
      const auto xhat = layer.normalized.col(b);
      const Scalar mean_d = col.sum() / width;
      const Scalar mean_dx = col.dot(xhat) / width;
      col = layer.inv_std(b) * (col.array() - mean_d - xhat.array() * mean_dx).matrix();
    }
    grad_view(grad, specs[li.w]).noalias() += d_norm * layer.input.transpose();
    grad_view(grad, specs[li.b]) += d_norm.rowwise().sum();
    if (ii > 0 || cfg_.state_mode == StateMode::counts3d) {
      dx = param(specs[li.w]).transpose() * d_norm;
    }
  }

  if (cfg_.state_mode != StateMode::counts3d) return;

  const int c = cfg_.lifted_channels;
  const int cl = cfg_.spatial_group_channels();
  const int cv = cfg_.pointwise_group_channels();
  const int block = c * kCells;
  for (int p = 0; p < 2; ++p) {
    const auto& pc = cache.paths[p];
    const auto& idx = path_idx_[p];

    Matrix d_pre(c, kCells * batch);
    for (int b = 0; b < batch; ++b) {
      Eigen::Map<Vector>(d_pre.data() + static_cast<std::ptrdiff_t>(b) * block, block) = dx.col(b).segment(p * block, block);
    }
    d_pre = (pc.pre.array() > Scalar(0)).select(d_pre, Scalar(0));

    grad_view(grad, specs[idx.spatial_b]) += d_pre.rowwise().sum();
    grad_view(grad, specs[idx.point_b]) += d_pre.rowwise().sum();

    Matrix d_lifted = Matrix::Zero(c, kCells * batch);
    auto gw_point = grad_view(grad, specs[idx.point_w]);
    const auto point_w = param(specs[idx.point_w]);
    for (int g = 0; g < cfg_.pointwise_groups; ++g) {
      gw_point.middleRows(g * cv, cv).noalias() += d_pre.middleRows(g * cv, cv) * pc.lifted.middleRows(g * cv, cv).transpose();
      d_lifted.middleRows(g * cv, cv).noalias() += point_w.middleRows(g * cv, cv).transpose() * d_pre.middleRows(g * cv, cv);
    }

    auto gw_spatial = grad_view(grad, specs[idx.spatial_w]);
    const auto spatial_w = param(specs[idx.spatial_w]);
    Matrix cols;
    Matrix d_cols;
    for (int g = 0; g < cfg_.spatial_groups; ++g) {
      im2col(pc.lifted, g * cl, cl, batch, cols);
      gw_spatial.middleRows(g * cl, cl).noalias() += d_pre.middleRows(g * cl, cl) * cols.transpose();
      d_cols.noalias() = spatial_w.middleRows(g * cl, cl).transpose() * d_pre.middleRows(g * cl, cl);
      col2im_add(d_cols, g * cl, cl, batch, d_lifted);
    }

    grad_view(grad, specs[idx.lift_w]).noalias() += d_lifted * pc.input.transpose();
    grad_view(grad, specs[idx.lift_b]) += d_lifted.rowwise().sum();
  }
}

template <typename Scalar>
void QNetwork<Scalar>::check_finite() const {
  for (const auto& s : layout_.specs()) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!std::isfinite(static_cast<double>(params_[s.offset + i]))) {
        throw NumericalError("non-finite value in parameter " + s.name);
      }
    }
  }
}

template class QNetwork<float>;
template class QNetwork<double>;

template <typename Scalar>
Action greedy_from_q(std::span<const Scalar> q_loc, std::span<const Scalar> q_stim, std::span<const int> untested) {
  if (untested.empty()) throw StateError("no untested locations left");
  Action a;
  a.location = untested.front();
  for (int l : untested) {
    if (q_loc[static_cast<std::size_t>(l)] > q_loc[static_cast<std::size_t>(a.location)]) a.location = l;
  }
  // untested is ascending in practice, but lowest index must win regardless.
  for (int l : untested) {
    if (q_loc[static_cast<std::size_t>(l)] == q_loc[static_cast<std::size_t>(a.location)] && l < a.location) a.location = l;
  }
  a.stimulus_db = 0;
  for (std::size_t v = 1; v < q_stim.size(); ++v) {
    if (q_stim[v] > q_stim[static_cast<std::size_t>(a.stimulus_db)]) a.stimulus_db = static_cast<int>(v);
  }
  return a;
}

template Action greedy_from_q<float>(std::span<const float>, std::span<const float>, std::span<const int>);
template Action greedy_from_q<double>(std::span<const double>, std::span<const double>, std::span<const int>);

template <typename Scalar>
Action greedy_action(const QNetwork<Scalar>& net, const TestState& state) {
  const auto untested = state.untested();
  if (untested.empty()) throw StateError("no untested locations left");
  const auto out = net.forward(net.encode(state));
  return greedy_from_q<Scalar>(std::span<const Scalar>(out.q_loc.data(), kNumLocations),
                               std::span<const Scalar>(out.q_stim.data(), kNumStimuli), untested);
}

template Action greedy_action<float>(const QNetwork<float>&, const TestState&);
template Action greedy_action<double>(const QNetwork<double>&, const TestState&);

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

template <typename Scalar>
void Adam::step(std::span<Scalar> params, std::span<const Scalar> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw DomainError("Adam size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double step = lr_ * std::sqrt(c2) / c1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params[i] = static_cast<Scalar>(static_cast<double>(params[i]) - step * m_[i] / (std::sqrt(v_[i]) + eps_ * std::sqrt(c2)));
  }
}

template void Adam::step<float>(std::span<float>, std::span<const float>);
template void Adam::step<double>(std::span<double>, std::span<const double>);

}  // namespace rlperi
