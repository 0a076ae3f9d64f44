#include "nfr/regularizers.hpp"

#include <cmath>
#include <string>

#include "nfr/error.hpp"

namespace nfr {

namespace {

// a^e for a >= 0, with the exponents used by the presets special-cased.
double pow_nonneg(double a, double e) {
  if (e == 1.0) return a;
  if (e == 2.0) return a * a;
  if (e == 0.5) return std::sqrt(a);
  if (e == 4.0) {
    const double a2 = a * a;
    return a2 * a2;
  }
  return std::pow(a, e);
}

double row_norm(std::span<const double> row) {
  double s = 0.0;
  for (double v : row) s += v * v;
  return std::sqrt(s);
}

}  // namespace

RegularizerSpec RegularizerSpec::preset(std::string_view name, std::size_t depth, double penalty) {
  RegularizerSpec spec;
  if (name == "L12") {
    spec.o1 = 1.0, spec.o2 = 2.0, spec.o3 = 2.0;
  } else if (name == "L21") {
    spec.o1 = 2.0, spec.o2 = 1.0, spec.o3 = 2.0;
  } else if (name == "L_half_4") {
    spec.o1 = 0.5, spec.o2 = 4.0, spec.o3 = 2.0;
  } else {
    throw ValueError("unknown regularizer preset '" + std::string(name) + "'");
  }
  spec.lambda.assign(depth, penalty);
  spec.lambda_u = penalty;
  return spec;
}

void RegularizerSpec::validate(std::size_t depth) const {
  if (lambda.size() != depth)
    throw DimensionError("regularizer has " + std::to_string(lambda.size()) + " layer penalties for depth " +
                         std::to_string(depth));
  for (double l : lambda)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ValueError("layer penalties must be finite and non-negative");
  if (!(lambda_u >= 0.0) || !std::isfinite(lambda_u)) throw ValueError("top penalty must be finite and non-negative");
  if (!(o1 > 0.0) || !(o2 >= 1.0) || !(o3 >= 1.0))
    throw ValueError("regularizer exponents need o1 > 0, o2 >= 1, o3 >= 1");
}

RegularizerSpec RegularizerSpec::scaled(double factor) const {
  RegularizerSpec s = *this;
  for (double& l : s.lambda) l *= factor;
  s.lambda_u *= factor;
  return s;
}

double layer_reg(const Matrix& w, double o1, double o2) {
  const std::size_t m_out = w.rows(), m_in = w.cols();
  if (m_out == 0 || m_in == 0) return 0.0;
  std::vector<double> col(m_in, 0.0);
  for (std::size_t j = 0; j < m_out; ++j) {
    auto r = w.row(j);
    for (std::size_t k = 0; k < m_in; ++k) col[k] += pow_nonneg(std::abs(r[k]), o1);
  }
  double total = 0.0;
  for (double c : col) total += pow_nonneg(c / static_cast<double>(m_out), o2);
  return total / static_cast<double>(m_in);
}

double top_reg(const Matrix& u, double o3) {
  if (u.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < u.rows(); ++j) total += pow_nonneg(row_norm(u.row(j)), o3);
  return total / static_cast<double>(u.rows());
}

double total_reg(const Network& net, const RegularizerSpec& spec) {
  spec.validate(net.depth());
  double total = 0.0;
  for (std::size_t l = 0; l < net.depth(); ++l)
    if (spec.lambda[l] != 0.0) total += spec.lambda[l] * layer_reg(net.weights[l], spec.o1, spec.o2);
  if (spec.lambda_u != 0.0) total += spec.lambda_u * top_reg(net.top, spec.o3);
  return total;
}

void add_reg_grad(const Network& net, const RegularizerSpec& spec, double scale, Gradients& acc) {
  spec.validate(net.depth());
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const double lam = spec.lambda[l] * scale;
    if (lam == 0.0) continue;
    const Matrix& w = net.weights[l];
    const std::size_t m_out = w.rows(), m_in = w.cols();
    std::vector<double> col(m_in, 0.0);
    for (std::size_t j = 0; j < m_out; ++j) {
      auto r = w.row(j);
      for (std::size_t k = 0; k < m_in; ++k) col[k] += pow_nonneg(std::abs(r[k]), spec.o1);
    }
    // d/dw_jk = lam/(m_in m_out) * o2 c_k^(o2-1) * o1 |w|^(o1-1) sign(w)
    std::vector<double> outer(m_in);
    const double norm = lam / (static_cast<double>(m_in) * static_cast<double>(m_out));
    for (std::size_t k = 0; k < m_in; ++k)
      outer[k] = norm * spec.o2 * pow_nonneg(col[k] / static_cast<double>(m_out), spec.o2 - 1.0) * spec.o1;
    Matrix& dw = acc.weights[l];
    for (std::size_t j = 0; j < m_out; ++j) {
      auto r = w.row(j);
      auto d = dw.row(j);
      for (std::size_t k = 0; k < m_in; ++k) {
        const double v = r[k];
        if (v == 0.0) continue;
        const double mag = spec.o1 == 1.0 ? 1.0 : pow_nonneg(std::abs(v), spec.o1 - 1.0);
        d[k] += outer[k] * mag * (v > 0.0 ? 1.0 : -1.0);
      }
    }
  }
  const double lam_u = spec.lambda_u * scale;
  if (lam_u == 0.0) return;
  const std::size_t m = net.top.rows();
  for (std::size_t j = 0; j < m; ++j) {
    auto u = net.top.row(j);
    const double n = row_norm(u);
    if (n == 0.0) continue;
    const double coef = lam_u / static_cast<double>(m) * spec.o3 * (spec.o3 == 2.0 ? 1.0 : pow_nonneg(n, spec.o3 - 2.0));
    auto d = acc.top.row(j);
    for (std::size_t c = 0; c < u.size(); ++c) d[c] += coef * u[c];
  }
}

Gradients reg_grad(const Network& net, const RegularizerSpec& spec) {
  Gradients g = Gradients::zeros_like(net);
  add_reg_grad(net, spec, 1.0, g);
  return g;
}

namespace {

// Per-layer building blocks of the reweighted regularizer: for layer l with
// incoming weights p_in (ones for l = 1) and outgoing weights p_out,
//   A_k = (1/m_out) sum_j |w_jk|^o1 p_out_j,   S_k = A_k p_in_k^(-o1),
//   value = (1/m_in) sum_k S_k^o2 p_in_k.
struct LayerTerms {
  std::vector<double> s;
  double value = 0.0;
};

LayerTerms layer_terms(const Matrix& w, const std::vector<double>* p_in, const std::vector<double>& p_out,
                       double o1, double o2) {
  const std::size_t m_out = w.rows(), m_in = w.cols();
  LayerTerms t;
  t.s.assign(m_in, 0.0);
  for (std::size_t j = 0; j < m_out; ++j) {
    auto r = w.row(j);
    for (std::size_t k = 0; k < m_in; ++k) t.s[k] += pow_nonneg(std::abs(r[k]), o1) * p_out[j];
  }
  for (std::size_t k = 0; k < m_in; ++k) {
    t.s[k] /= static_cast<double>(m_out);
    const double pin = p_in ? (*p_in)[k] : 1.0;
    if (p_in) t.s[k] /= pow_nonneg(pin, o1);
    t.value += pow_nonneg(t.s[k], o2) * pin;
  }
  t.value /= static_cast<double>(m_in);
  return t;
}

}  // namespace

double weighted_reg(const Network& net, const RegularizerSpec& spec, const ImportanceWeights& p) {
  spec.validate(net.depth());
  p.check_positive(net);
  double total = 0.0;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    if (spec.lambda[l] == 0.0) continue;
    const auto* p_in = l == 0 ? nullptr : &p.layers[l - 1];
    total += spec.lambda[l] * layer_terms(net.weights[l], p_in, p.layers[l], spec.o1, spec.o2).value;
  }
  if (spec.lambda_u != 0.0) {
    const auto& pl = p.layers.back();
    const std::size_t m = net.top.rows();
    double t = 0.0;
    for (std::size_t j = 0; j < m; ++j) t += pow_nonneg(row_norm(net.top.row(j)) / pl[j], spec.o3) * pl[j];
    total += spec.lambda_u * t / static_cast<double>(m);
  }
  return total;
}

std::vector<std::vector<double>> weighted_reg_grad_p(const Network& net, const RegularizerSpec& spec,
                                                     const ImportanceWeights& p) {
  spec.validate(net.depth());
  p.check_positive(net);
  std::vector<std::vector<double>> grad;
  for (const auto& layer : p.layers) grad.emplace_back(layer.size(), 0.0);

  for (std::size_t l = 0; l < net.depth(); ++l) {
    const double lam = spec.lambda[l];
    if (lam == 0.0) continue;
    const Matrix& w = net.weights[l];
    const std::size_t m_out = w.rows(), m_in = w.cols();
    const auto* p_in = l == 0 ? nullptr : &p.layers[l - 1];
    const auto terms = layer_terms(w, p_in, p.layers[l], spec.o1, spec.o2);

    // outgoing side: d/dp_out_j = lam/(m_in m_out) sum_k o2 S_k^(o2-1) |w_jk|^o1 p_in_k^(1-o1)
    std::vector<double> coef(m_in);
    for (std::size_t k = 0; k < m_in; ++k) {
      const double pin = p_in ? (*p_in)[k] : 1.0;
      coef[k] = spec.o2 * pow_nonneg(terms.s[k], spec.o2 - 1.0) * pin / pow_nonneg(pin, spec.o1);
    }
    const double norm = lam / (static_cast<double>(m_in) * static_cast<double>(m_out));
    auto& g_out = grad[l];
    for (std::size_t j = 0; j < m_out; ++j) {
      auto r = w.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < m_in; ++k) s += coef[k] * pow_nonneg(std::abs(r[k]), spec.o1);
      g_out[j] += norm * s;
    }
    // incoming side: d/dp_in_k = lam/m_in (1 - o1 o2) S_k^o2
    if (p_in) {
      auto& g_in = grad[l - 1];
      for (std::size_t k = 0; k < m_in; ++k)
        g_in[k] += lam / static_cast<double>(m_in) * (1.0 - spec.o1 * spec.o2) * pow_nonneg(terms.s[k], spec.o2);
    }
  }
  if (spec.lambda_u != 0.0) {
    // d/dp_j of (lam_u/m) ||u_j||^o3 p_j^(1-o3)
    const auto& pl = p.layers.back();
    auto& g = grad.back();
    const std::size_t m = net.top.rows();
    for (std::size_t j = 0; j < m; ++j) {
      const double n = row_norm(net.top.row(j));
      g[j] += spec.lambda_u / static_cast<double>(m) * (1.0 - spec.o3) * pow_nonneg(n / pl[j], spec.o3);
    }
  }
  return grad;
}

}  // namespace nfr
