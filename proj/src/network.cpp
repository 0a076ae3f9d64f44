#include "nfr/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "nfr/error.hpp"

namespace nfr {

double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::Sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::Softplus:
      // log(1 + e^x) without overflow for large x
      return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return 0.0;
}

double activate_slope(Activation kind, double x) {
  switch (kind) {
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Activation::Softplus:
      return 1.0 / (1.0 + std::exp(-x));
  }
  return 0.0;
}

double activate_slope(Activation kind, double x, double fx) {
  switch (kind) {
    case Activation::Tanh:
      return 1.0 - fx * fx;
    case Activation::Sigmoid:
      return fx * (1.0 - fx);
    case Activation::Softplus:
      return 1.0 / (1.0 + std::exp(-x));
  }
  return 0.0;
}

std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::Tanh:
      return "tanh";
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::Softplus:
      return "softplus";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "softplus") return Activation::Softplus;
  throw ValueError("unknown activation '" + std::string(name) + "'");
}

std::size_t Network::width(std::size_t layer) const {
  if (layer > depth()) throw DimensionError("layer index " + std::to_string(layer) + " exceeds depth");
  return layer == 0 ? input_dim() : weights[layer - 1].rows();
}

std::vector<std::size_t> Network::hidden_widths() const {
  std::vector<std::size_t> w;
  for (const auto& m : weights) w.push_back(m.rows());
  return w;
}

std::size_t Network::parameter_count() const {
  std::size_t n = top.size();
  for (const auto& w : weights) n += w.size();
  return n;
}

void Network::validate() const {
  if (weights.empty()) throw DimensionError("network has no hidden layers");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& w = weights[l];
    if (w.rows() == 0 || w.cols() == 0)
      throw DimensionError("layer " + std::to_string(l + 1) + " has an empty weight matrix");
    if (l > 0 && w.cols() != weights[l - 1].rows())
      throw DimensionError("layer " + std::to_string(l + 1) + " expects " + std::to_string(w.cols()) +
                           " inputs but layer " + std::to_string(l) + " has " +
                           std::to_string(weights[l - 1].rows()) + " units");
    for (double v : w.values())
      if (!std::isfinite(v)) throw ValueError("layer " + std::to_string(l + 1) + " has a non-finite weight");
  }
  if (top.rows() != weights.back().rows() || top.cols() == 0)
    throw DimensionError("top layer shape does not match the last hidden width");
  for (double v : top.values())
    if (!std::isfinite(v)) throw ValueError("top layer has a non-finite weight");
}

namespace {

// C(r, j) = sum_k A(r, k) * B(k, j), k ascending for every entry. Blocks of
// 4 rows by 16 columns stay in registers; the summation order of an entry does
// not depend on the block it falls in, so batch and single-row results agree
// bit for bit.
using Vec8 = double __attribute__((vector_size(64)));

inline Vec8 load8(const double* p) {
  Vec8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(double* p, Vec8 v) { std::memcpy(p, &v, sizeof v); }

void product(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t rows = a.rows(), n = a.cols(), m = b.cols();
  c = Matrix(rows, m);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  // A 16-column panel of b is copied to contiguous storage so the k loop
  // walks memory sequentially.
  std::vector<double> panel(n * 16);
  std::size_t j = 0;
  for (; j + 16 <= m; j += 16) {
    for (std::size_t k = 0; k < n; ++k) std::memcpy(panel.data() + k * 16, bp + k * m + j, 16 * sizeof(double));
    const double* pp = panel.data();
    std::size_t r = 0;
    for (; r + 4 <= rows; r += 4) {
      const double* a0 = ap + r * n;
      const double* a1 = a0 + n;
      const double* a2 = a1 + n;
      const double* a3 = a2 + n;
      Vec8 c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
      for (std::size_t k = 0; k < n; ++k) {
        const Vec8 w0 = load8(pp + k * 16), w1 = load8(pp + k * 16 + 8);
        const double s0 = a0[k], s1 = a1[k], s2 = a2[k], s3 = a3[k];
        c00 += s0 * w0, c01 += s0 * w1;
        c10 += s1 * w0, c11 += s1 * w1;
        c20 += s2 * w0, c21 += s2 * w1;
        c30 += s3 * w0, c31 += s3 * w1;
      }
      double* o = cp + r * m + j;
      store8(o, c00), store8(o + 8, c01);
      store8(o + m, c10), store8(o + m + 8, c11);
      store8(o + 2 * m, c20), store8(o + 2 * m + 8, c21);
      store8(o + 3 * m, c30), store8(o + 3 * m + 8, c31);
    }
    for (; r < rows; ++r) {
      const double* a0 = ap + r * n;
      Vec8 c0{}, c1{};
      for (std::size_t k = 0; k < n; ++k) {
        const double s0 = a0[k];
        c0 += s0 * load8(pp + k * 16), c1 += s0 * load8(pp + k * 16 + 8);
      }
      store8(cp + r * m + j, c0), store8(cp + r * m + j + 8, c1);
    }
  }
  for (; j < m; ++j)
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += ap[r * n + k] * bp[k * m + j];
      cp[r * m + j] = s;
    }
}

// out(b, j) = (sum_k in(b, k) * wt(k, j)) / n
void mean_field_layer(const Matrix& in, const Matrix& wt, Matrix& out) {
  product(in, wt, out);
  const double n = static_cast<double>(wt.rows());
  for (double& v : out.values()) v /= n;
}

void check_input(const Network& net, std::size_t cols) {
  if (cols != net.input_dim())
    throw DimensionError("layer 1 expects input of length " + std::to_string(net.input_dim()) + ", got " +
                         std::to_string(cols));
}

void check_trace(const Network& net, const ForwardTrace& trace) {
  const std::size_t depth = net.depth();
  if (trace.pre.size() != depth || trace.act.size() != depth + 1)
    throw DimensionError("trace depth does not match network");
  for (std::size_t l = 1; l <= depth; ++l)
    if (trace.pre[l - 1].cols() != net.width(l) || trace.act[l].cols() != net.width(l) ||
        trace.pre[l - 1].rows() != trace.batch())
      throw DimensionError("trace is stale at layer " + std::to_string(l));
  if (trace.act[0].cols() != net.input_dim() || trace.output.cols() != net.output_dim())
    throw DimensionError("trace is stale at the input or output");
}

// One reverse sweep from d_out (B x K). Writes d out / d g^(l) into deltas
// when requested and accumulates weight gradients into acc when non-null.
void reverse_sweep(const Network& net, const ForwardTrace& trace, const Matrix& d_out, Gradients* acc,
                   std::vector<Matrix>* deltas) {
  const std::size_t depth = net.depth(), batch = trace.batch(), k_out = net.output_dim();
  const std::size_t m_top = net.width(depth);
  const double inv_top = static_cast<double>(m_top);

  // top: out(b, c) = sum_j f(b, j) U(j, c) / m
  Matrix d_act(batch, m_top);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < m_top; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < k_out; ++c) s += net.top(j, c) * d_out(b, c);
      d_act(b, j) = s / inv_top;
    }
  if (acc != nullptr) {
    const Matrix& f = trace.act[depth];
    for (std::size_t j = 0; j < m_top; ++j)
      for (std::size_t c = 0; c < k_out; ++c) {
        double s = 0.0;
        for (std::size_t b = 0; b < batch; ++b) s += f(b, j) * d_out(b, c);
        acc->top(j, c) += s / inv_top;
      }
  }
  if (deltas != nullptr) deltas->assign(depth, Matrix());

  for (std::size_t l = depth; l >= 1; --l) {
    const Matrix& w = net.weights[l - 1];
    const Matrix& g = trace.pre[l - 1];
    const Matrix& f_out = trace.act[l];
    const std::size_t m_out = w.rows(), m_in = w.cols();
    const double n_in = static_cast<double>(m_in);

    Matrix delta(batch, m_out);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < m_out; ++j) delta(b, j) = d_act(b, j) * activate_slope(net.activation, g(b, j), f_out(b, j));

    if (acc != nullptr) {
      // dW(j, k) += (sum_b delta(b, j) f(b, k)) / m_in, b ascending
      Matrix step;
      product(delta.transposed(), trace.act[l - 1], step);
      auto dst = acc->weights[l - 1].values();
      auto src = step.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] / n_in;
    }
    if (l > 1) {
      // d f^(l-1)(b, k) = sum_j delta(b, j) W(j, k) / m_in, j ascending
      Matrix next;
      product(delta, w, next);
      for (double& v : next.values()) v /= n_in;
      d_act = std::move(next);
    }
    if (deltas != nullptr) (*deltas)[l - 1] = std::move(delta);
  }
}

}  // namespace

ForwardTrace forward_batch(const Network& net, const Matrix& inputs) {
  check_input(net, inputs.cols());
  const std::size_t depth = net.depth(), batch = inputs.rows();
  ForwardTrace trace;
  trace.pre.resize(depth);
  trace.act.resize(depth + 1);
  trace.act[0] = inputs;
  for (std::size_t l = 1; l <= depth; ++l) {
    const Matrix& w = net.weights[l - 1];
    if (w.cols() != trace.act[l - 1].cols())
      throw DimensionError("layer " + std::to_string(l) + " expects " + std::to_string(w.cols()) + " inputs, got " +
                           std::to_string(trace.act[l - 1].cols()));
    mean_field_layer(trace.act[l - 1], w.transposed(), trace.pre[l - 1]);
    Matrix f = trace.pre[l - 1];
    for (double& v : f.values()) v = activate(net.activation, v);
    trace.act[l] = std::move(f);
  }
  const Matrix& f = trace.act[depth];
  if (net.top.rows() != f.cols()) throw DimensionError("top layer does not match layer " + std::to_string(depth));
  const std::size_t m = f.cols(), k_out = net.output_dim();
  trace.output = Matrix(batch, k_out);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < k_out; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += net.top(j, c) * f(b, j);
      trace.output(b, c) = s / static_cast<double>(m);
    }
  return trace;
}

ForwardTrace forward(const Network& net, std::span<const double> x) {
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.row(0).begin());
  for (double v : x)
    if (!std::isfinite(v)) throw ValueError("input contains a non-finite value");
  return forward_batch(net, in);
}

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (const auto& w : net.weights) g.weights.emplace_back(w.rows(), w.cols());
  g.top = Matrix(net.top.rows(), net.top.cols());
  return g;
}

void Gradients::set_zero() {
  for (auto& w : weights) w.fill(0.0);
  top.fill(0.0);
}

void Gradients::add_scaled(const Gradients& other, double scale) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    auto dst = weights[l].values();
    auto src = other.weights[l].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  }
  auto dst = top.values();
  auto src = other.top.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

bool Gradients::all_finite() const {
  for (const auto& w : weights)
    for (double v : w.values())
      if (!std::isfinite(v)) return false;
  for (double v : top.values())
    if (!std::isfinite(v)) return false;
  return true;
}

void accumulate_gradients(const Network& net, const ForwardTrace& trace, const Matrix& d_out, Gradients& acc) {
  check_trace(net, trace);
  if (d_out.rows() != trace.batch() || d_out.cols() != net.output_dim())
    throw DimensionError("output gradient shape does not match the trace");
  reverse_sweep(net, trace, d_out, &acc, nullptr);
}

std::vector<Matrix> sensitivities(const Network& net, const ForwardTrace& trace, std::size_t component) {
  check_trace(net, trace);
  if (component >= net.output_dim()) throw DimensionError("output component out of range");
  Matrix unit(trace.batch(), net.output_dim());
  for (std::size_t b = 0; b < trace.batch(); ++b) unit(b, component) = 1.0;
  std::vector<Matrix> deltas;
  reverse_sweep(net, trace, unit, nullptr, &deltas);
  return deltas;
}

BackwardResult backward(const Network& net, const ForwardTrace& trace, std::span<const double> d_out) {
  check_trace(net, trace);
  if (trace.batch() != 1) throw DimensionError("backward expects a single-sample trace");
  if (d_out.size() != net.output_dim()) throw DimensionError("output gradient has the wrong length");
  BackwardResult result;
  result.grads = Gradients::zeros_like(net);
  Matrix seed(1, d_out.size());
  std::copy(d_out.begin(), d_out.end(), seed.row(0).begin());
  reverse_sweep(net, trace, seed, &result.grads, nullptr);

  const std::size_t depth = net.depth(), k_out = net.output_dim();
  for (std::size_t l = 1; l <= depth; ++l) result.sensitivity.emplace_back(net.width(l), k_out);
  for (std::size_t c = 0; c < k_out; ++c) {
    auto deltas = sensitivities(net, trace, c);
    for (std::size_t l = 1; l <= depth; ++l)
      for (std::size_t i = 0; i < net.width(l); ++i) result.sensitivity[l - 1](i, c) = deltas[l - 1](0, i);
  }
  return result;
}

LossValue loss_and_grad(std::span<const double> output, const Loss& loss) {
  LossValue r;
  r.d_out.assign(output.size(), 0.0);
  for (double v : output)
    if (!std::isfinite(v)) throw ValueError("loss input is not finite");
  if (loss.kind == LossKind::Squared) {
    if (loss.target.size() != output.size()) throw DimensionError("target length does not match output");
    for (std::size_t i = 0; i < output.size(); ++i) {
      if (!std::isfinite(loss.target[i])) throw ValueError("target is not finite");
      const double e = output[i] - loss.target[i];
      r.value += e * e;
      r.d_out[i] = 2.0 * e;
    }
    return r;
  }
  if (output.size() < 2) throw ValueError("logistic loss needs at least two outputs");
  if (loss.label >= output.size())
    throw ValueError("label " + std::to_string(loss.label) + " out of range for " + std::to_string(output.size()) +
                     " classes");
  const double top = *std::max_element(output.begin(), output.end());
  double z = 0.0;
  for (double v : output) z += std::exp(v - top);
  r.value = -output[loss.label] + top + std::log(z);
  for (std::size_t i = 0; i < output.size(); ++i) r.d_out[i] = std::exp(output[i] - top) / z;
  r.d_out[loss.label] -= 1.0;
  return r;
}

Network init_network(const InitSpec& spec, std::uint64_t seed) {
  if (spec.input_dim == 0 || spec.output_dim == 0 || spec.widths.empty())
    throw ValueError("network needs an input, an output and at least one hidden layer");
  if (!(spec.gain > 0.0) || !(spec.last_input_gain > 0.0)) throw ValueError("init gains must be positive");
  for (auto w : spec.widths)
    if (w == 0) throw ValueError("hidden widths must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Network net;
  net.activation = spec.activation;
  net.seed = seed;
  std::size_t fan_in = spec.input_dim;
  for (auto width : spec.widths) {
    Matrix w(width, fan_in);
    const double scale = spec.gain * std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.values()) v = scale * normal(rng);
    if (net.weights.empty())
      for (std::size_t r = 0; r < width; ++r) w(r, fan_in - 1) *= spec.last_input_gain;
    net.weights.push_back(std::move(w));
    fan_in = width;
  }
  net.top = Matrix(fan_in, spec.output_dim);
  const double scale = spec.gain * std::sqrt(static_cast<double>(fan_in));
  for (double& v : net.top.values()) v = scale * normal(rng);
  return net;
}

}  // namespace nfr
