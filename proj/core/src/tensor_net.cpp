#include "invdse/tensor_net.hpp"

#include <atomic>
#include <cmath>

#include <fmt/format.h>

#include "json_io.hpp"

namespace invdse::nn {

namespace {

std::atomic<std::uint64_t> next_identity{1};

std::size_t layer_param_count(const LayerSpec& l) {
  auto in = static_cast<std::size_t>(l.in_width), out = static_cast<std::size_t>(l.out_width);
  if (l.kind == LayerKind::dense) return out * in + out;
  return 2 * (out * out + out);
}

void apply_activation(Activation a, Eigen::MatrixXd& m) {
  switch (a) {
    case Activation::relu: m = m.cwiseMax(0.0); break;
    case Activation::tanh: m = m.array().tanh().matrix(); break;
    case Activation::identity: break;
  }
}

// Multiplies `grad` in place by act'(pre).
void apply_activation_grad(Activation a, const Eigen::MatrixXd& pre, Eigen::MatrixXd& grad) {
  switch (a) {
    case Activation::relu: grad = (pre.array() > 0.0).select(grad, 0.0); break;
    case Activation::tanh: grad.array() *= 1.0 - pre.array().tanh().square(); break;
    case Activation::identity: break;
  }
}

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;

Eigen::MatrixXd stack_input(const NetSpec& spec, const Eigen::MatrixXd& input, const Eigen::MatrixXd* embed) {
  if (input.rows() != spec.input_width) {
    throw ShapeError(fmt::format("network expects input width {}, got {}", spec.input_width, input.rows()));
  }
  if (spec.embed_width == 0) {
    if (embed && embed->size() != 0) throw ShapeError("network takes no timestep embedding");
    return input;
  }
  if (!embed || embed->rows() != spec.embed_width || embed->cols() != input.cols()) {
    throw ShapeError(fmt::format("network expects a {}-row embedding per sample", spec.embed_width));
  }
  Eigen::MatrixXd x(spec.input_width + spec.embed_width, input.cols());
  x.topRows(spec.input_width) = input;
  x.bottomRows(spec.embed_width) = *embed;
  return x;
}

template <bool KeepTape>
Eigen::MatrixXd run_forward(const NetParams& params, const NetSpec& spec, const Eigen::MatrixXd& input,
                            const Eigen::MatrixXd* embed, Tape* tape) {
  if (params.size() != spec.param_count()) throw ShapeError("parameter vector does not match network spec");
  Eigen::MatrixXd x = stack_input(spec, input, embed);
  const double* base = params.values().data();
  if constexpr (KeepTape) {
    tape->layers.clear();
    tape->layers.reserve(spec.layers.size());
    tape->batch = input.cols();
    tape->params_identity = params.identity();
    tape->params_generation = params.generation();
    tape->param_count = params.size();
  }
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& ls = spec.layers[l];
    const double* p = base + params.offset(l);
    if (ls.kind == LayerKind::dense) {
      ConstMap w(p, ls.out_width, ls.in_width);
      ConstVec b(p + ls.out_width * ls.in_width, ls.out_width);
      Eigen::MatrixXd pre = w * x;
      pre.colwise() += b;
      Eigen::MatrixXd y = pre;
      apply_activation(ls.activation, y);
      if constexpr (KeepTape) tape->layers.push_back({std::move(x), std::move(pre), {}});
      x = std::move(y);
    } else {
      const int w_ = ls.out_width;
      ConstMap w1(p, w_, w_);
      ConstVec b1(p + w_ * w_, w_);
      ConstMap w2(p + w_ * w_ + w_, w_, w_);
      ConstVec b2(p + 2 * w_ * w_ + w_, w_);
      Eigen::MatrixXd pre = w1 * x;
      pre.colwise() += b1;
      Eigen::MatrixXd h = pre;
      apply_activation(ls.activation, h);
      Eigen::MatrixXd y = x + w2 * h;
      y.colwise() += b2;
      if constexpr (KeepTape) tape->layers.push_back({std::move(x), std::move(pre), std::move(h)});
      x = std::move(y);
    }
  }
  return x;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

NetSpec NetSpec::residual_mlp(int input, int output, int hidden, int blocks, Activation act, int embed) {
  NetSpec spec;
  spec.input_width = input;
  spec.embed_width = embed;
  spec.output_width = output;
  spec.layers.push_back({LayerKind::dense, input + embed, hidden, act});
  for (int b = 0; b < blocks; ++b) spec.layers.push_back({LayerKind::residual_block, hidden, hidden, act});
  spec.layers.push_back({LayerKind::dense, hidden, output, Activation::identity});
  spec.check();
  return spec;
}

void NetSpec::check() const {
  if (input_width <= 0 || output_width <= 0 || embed_width < 0) throw ShapeError("network widths must be positive");
  if (layers.empty()) throw ShapeError("network has no layers");
  int width = input_width + embed_width;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& ls = layers[l];
    if (ls.in_width != width) {
      throw ShapeError(fmt::format("layer {} expects width {}, previous layer produces {}", l, ls.in_width, width));
    }
    if (ls.out_width <= 0) throw ShapeError("layer widths must be positive");
    if (ls.kind == LayerKind::residual_block && ls.in_width != ls.out_width) {
      throw ShapeError(fmt::format("residual block {} must preserve width", l));
    }
    width = ls.out_width;
  }
  if (width != output_width) throw ShapeError("last layer width does not match output width");
}

std::size_t NetSpec::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += layer_param_count(l);
  return n;
}

NetParams::NetParams(const NetSpec& spec) : identity_(next_identity.fetch_add(1)) {
  spec.check();
  std::size_t off = 0;
  for (const auto& l : spec.layers) {
    offsets_.push_back(off);
    off += layer_param_count(l);
  }
  values_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(off));
}

NetParams NetParams::init(const NetSpec& spec, Rng& rng) {
  NetParams p(spec);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](double* w, std::size_t count, double sd) {
    for (std::size_t k = 0; k < count; ++k) w[k] = sd * normal(rng);
  };
  double* base = p.values_.data();
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& ls = spec.layers[l];
    double gain = ls.activation == Activation::relu ? 2.0 : 1.0;
    double* w = base + p.offsets_[l];
    auto in = static_cast<std::size_t>(ls.in_width), out = static_cast<std::size_t>(ls.out_width);
    if (ls.kind == LayerKind::dense) {
      fill(w, out * in, std::sqrt(gain / static_cast<double>(in)));
    } else {
      fill(w, out * out, std::sqrt(gain / static_cast<double>(out)));
      // Second projection starts small so each block begins close to the identity map.
      fill(w + out * out + out, out * out, 0.1 * std::sqrt(1.0 / static_cast<double>(out)));
    }
  }
  return p;
}

void NetParams::assign(Eigen::VectorXd v) {
  if (v.size() != values_.size()) throw ShapeError("parameter vector length mismatch");
  values_ = std::move(v);
  ++generation_;
}

ForwardResult forward(const NetParams& params, const NetSpec& spec, const Eigen::MatrixXd& input,
                      const Eigen::MatrixXd* embed) {
  ForwardResult r;
  r.output = run_forward<true>(params, spec, input, embed, &r.tape);
  return r;
}

Eigen::MatrixXd infer(const NetParams& params, const NetSpec& spec, const Eigen::MatrixXd& input,
                      const Eigen::MatrixXd* embed) {
  return run_forward<false>(params, spec, input, embed, nullptr);
}

ForwardResult forward(const NetParams& params, const NetSpec& spec, const Tensor2D& input,
                      const std::optional<Eigen::VectorXd>& timestep_embed) {
  Eigen::MatrixXd x = input.flat();
  if (timestep_embed) {
    Eigen::MatrixXd e = *timestep_embed;
    return forward(params, spec, x, &e);
  }
  return forward(params, spec, x, nullptr);
}

Gradients backward(const NetParams& params, const NetSpec& spec, const Tape& tape,
                   const Eigen::MatrixXd& output_gradient, bool param_gradients) {
  if (tape.params_identity != params.identity() || tape.params_generation != params.generation() ||
      tape.param_count != params.size() || tape.layers.size() != spec.layers.size()) {
    throw ShapeError("tape does not belong to these parameters (stale or mismatched)");
  }
  if (output_gradient.rows() != spec.output_width || output_gradient.cols() != tape.batch) {
    throw ShapeError("output gradient shape does not match the forward pass");
  }
  Gradients g;
  if (param_gradients) g.params = Eigen::VectorXd::Zero(params.values().size());
  const double* base = params.values().data();
  Eigen::MatrixXd grad = output_gradient;
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const auto& ls = spec.layers[li];
    const auto& rec = tape.layers[li];
    const double* p = base + params.offset(li);
    double* gp = param_gradients ? g.params.data() + params.offset(li) : nullptr;
    if (ls.kind == LayerKind::dense) {
      ConstMap w(p, ls.out_width, ls.in_width);
      apply_activation_grad(ls.activation, rec.pre, grad);
      if (gp) {
        Eigen::Map<Eigen::MatrixXd>(gp, ls.out_width, ls.in_width).noalias() = grad * rec.input.transpose();
        Eigen::Map<Eigen::VectorXd>(gp + ls.out_width * ls.in_width, ls.out_width) = grad.rowwise().sum();
      }
      grad = w.transpose() * grad;
    } else {
      const int w_ = ls.out_width;
      ConstMap w1(p, w_, w_);
      ConstMap w2(p + w_ * w_ + w_, w_, w_);
      if (gp) {
        Eigen::Map<Eigen::MatrixXd>(gp + w_ * w_ + w_, w_, w_).noalias() = grad * rec.hidden.transpose();
        Eigen::Map<Eigen::VectorXd>(gp + 2 * w_ * w_ + w_, w_) = grad.rowwise().sum();
      }
      Eigen::MatrixXd dh = w2.transpose() * grad;
      apply_activation_grad(ls.activation, rec.pre, dh);
      if (gp) {
        Eigen::Map<Eigen::MatrixXd>(gp, w_, w_).noalias() = dh * rec.input.transpose();
        Eigen::Map<Eigen::VectorXd>(gp + w_ * w_, w_) = dh.rowwise().sum();
      }
      grad.noalias() += w1.transpose() * dh;
    }
  }
  g.input = grad.topRows(spec.input_width);
  return g;
}

Loss mse(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw ShapeError("mse: prediction and target shapes differ");
  }
  if (prediction.size() == 0) throw ShapeError("mse: empty tensors");
  Loss l;
  Eigen::MatrixXd diff = prediction - target;
  auto count = static_cast<double>(diff.size());
  l.value = diff.squaredNorm() / count;
  l.gradient = (2.0 / count) * diff;
  return l;
}

TensorLoss mse(const Tensor2D& prediction, const Tensor2D& target) {
  if (!prediction.same_shape(target)) throw ShapeError("mse: prediction and target shapes differ");
  auto l = mse(Eigen::MatrixXd(prediction.flat()), Eigen::MatrixXd(target.flat()));
  return {l.value, Tensor2D::from_flat(prediction.rows, prediction.cols, l.gradient.col(0))};
}

void optimizer_step(NetParams& params, const Eigen::VectorXd& gradient, AdamState& state) {
  if (gradient.size() != params.values().size() || state.m.size() != gradient.size()) {
    throw ShapeError("optimizer: gradient, parameter and moment lengths differ");
  }
  if (!gradient.allFinite()) throw DivergenceError("optimizer: non-finite gradient", state.step);
  const auto& c = state.config;
  ++state.step;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * gradient;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * gradient.cwiseAbs2();
  double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto& p = params.mutable_values();
  p.array() -= c.learning_rate * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.epsilon);
}

Eigen::VectorXd timestep_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ShapeError("timestep embedding dimension must be even and positive");
  const int half = dim / 2;
  Eigen::VectorXd e(dim);
  for (int k = 0; k < half; ++k) {
    double freq = std::pow(10000.0, -static_cast<double>(k) / half);
    e[k] = std::sin(t * freq);
    e[half + k] = std::cos(t * freq);
  }
  return e;
}

void save_checkpoint(const std::filesystem::path& path, const NetCheckpoint& ckpt) {
  detail::json j;
  j["format"] = "invdse-net";
  j["version"] = 1;
  j["spec"] = detail::net_spec_to_json(ckpt.spec);
  j["param_count"] = ckpt.params.size();
  j["seed"] = ckpt.seed;
  j["params"] = detail::vector_to_json(ckpt.params.values());
  detail::write_json_file(path, j);
}

NetCheckpoint load_checkpoint(const std::filesystem::path& path) {
  auto j = detail::read_json_file(path);
  detail::require_format(j, "invdse-net", 1);
  NetCheckpoint c;
  c.spec = detail::net_spec_from_json(j.at("spec"));
  if (j.at("param_count").get<std::size_t>() != c.spec.param_count()) {
    throw ParseError("checkpoint header parameter count disagrees with its spec", 0);
  }
  c.params = detail::params_from_json(c.spec, j.at("params"));
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace invdse::nn
