#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ijkit/core.hpp"
#include "ijkit/random.hpp"

namespace ijkit {

enum class ModelKind { mean, linear, logistic, poisson };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::mean: return "mean";
    case ModelKind::linear: return "linear";
    case ModelKind::logistic: return "logistic";
    case ModelKind::poisson: return "poisson";
  }
  return "unknown";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "mean") return ModelKind::mean;
  if (s == "linear") return ModelKind::linear;
  if (s == "logistic") return ModelKind::logistic;
  if (s == "poisson") return ModelKind::poisson;
  throw InputError("unknown model kind '" + std::string(s) + "'");
}

/// Rows are data points. When has_bias is set the models append a constant
/// 1 feature, so D = P + 1.
struct Dataset {
  Matrix features;  // N x P
  Vector response;  // N
  bool has_bias = true;

  std::size_t size() const { return static_cast<std::size_t>(response.size()); }
  std::size_t n_features() const { return static_cast<std::size_t>(features.cols()); }
};

/// Largest linear predictor accepted when drawing Poisson responses.
inline constexpr double kMaxPoissonLogRate = 30.0;

namespace detail {

inline double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double softplus(double eta) {
  return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta)));
}

}  // namespace detail

/// Generalized linear model estimating equation. g_n is the gradient of the
/// per-datum loss:
///   mean      f = (theta - y)^2 / 2           (features ignored, D = 1)
///   linear    f = (theta'x - y)^2 / 2
///   logistic  f = log(1 + e^eta) - y eta
///   poisson   f = e^eta - y eta + log(y!)
class GlmModel final : public EstimatingEquation {
 public:
  GlmModel(ModelKind kind, const Dataset& data) : kind_(kind), response_(data.response) {
    validate(kind, data);
    const auto n = static_cast<Eigen::Index>(data.size());
    if (kind == ModelKind::mean) {
      design_ = Matrix::Ones(1, n);
    } else {
      const auto p = static_cast<Eigen::Index>(data.n_features());
      design_.resize(p + (data.has_bias ? 1 : 0), n);
      design_.topRows(p) = data.features.transpose();
      if (data.has_bias) design_.row(p).setOnes();
    }
  }

  static void validate(ModelKind kind, const Dataset& data) {
    if (data.size() == 0) throw InputError("dataset is empty");
    if (static_cast<std::size_t>(data.features.rows()) != data.size() && kind != ModelKind::mean)
      throw InputError("features and response have different row counts");
    if (kind != ModelKind::mean && data.n_features() == 0 && !data.has_bias)
      throw InputError("model has no parameters (no features, no bias)");
    if (kind != ModelKind::mean && !all_finite(data.features))
      throw InputError("features contain non-finite values");
    for (Eigen::Index i = 0; i < data.response.size(); ++i) {
      const double y = data.response[i];
      if (!std::isfinite(y))
        throw InputError("response " + std::to_string(i) + " is not finite");
      if (kind == ModelKind::logistic && y != 0.0 && y != 1.0)
        throw InputError("logistic response " + std::to_string(i) + " is not 0 or 1");
      if (kind == ModelKind::poisson && (y < 0.0 || y != std::floor(y)))
        throw InputError("poisson response " + std::to_string(i) +
                         " is not a nonnegative integer");
    }
  }

  ModelKind kind() const { return kind_; }
  std::size_t n_points() const override { return static_cast<std::size_t>(response_.size()); }
  std::size_t dim() const override { return static_cast<std::size_t>(design_.rows()); }

  /// Column n is the (bias-augmented) feature vector of datum n.
  const Matrix& design() const { return design_; }
  const Vector& response() const { return response_; }

  double linear_predictor(std::size_t n, const Vector& theta) const {
    return design_.col(static_cast<Eigen::Index>(n)).dot(theta);
  }

  /// dloss/deta
  double residual(std::size_t n, const Vector& theta) const {
    const double y = response_[static_cast<Eigen::Index>(n)];
    const double eta = linear_predictor(n, theta);
    switch (kind_) {
      case ModelKind::mean:
      case ModelKind::linear: return eta - y;
      case ModelKind::logistic: return detail::sigmoid(eta) - y;
      case ModelKind::poisson: return std::exp(eta) - y;
    }
    return 0.0;
  }

  /// d^2 loss / deta^2
  double curvature(std::size_t n, const Vector& theta) const {
    switch (kind_) {
      case ModelKind::mean:
      case ModelKind::linear: return 1.0;
      case ModelKind::logistic: {
        const double s = detail::sigmoid(linear_predictor(n, theta));
        return s * (1.0 - s);
      }
      case ModelKind::poisson: return std::exp(linear_predictor(n, theta));
    }
    return 0.0;
  }

  double loss(std::size_t n, const Vector& theta) const {
    const double y = response_[static_cast<Eigen::Index>(n)];
    const double eta = linear_predictor(n, theta);
    switch (kind_) {
      case ModelKind::mean:
      case ModelKind::linear: return 0.5 * (eta - y) * (eta - y);
      case ModelKind::logistic: return detail::softplus(eta) - y * eta;
      case ModelKind::poisson: return std::exp(eta) - y * eta + std::lgamma(y + 1.0);
    }
    return 0.0;
  }

  void g(std::size_t n, const Vector& theta, Eigen::Ref<Vector> out) const override {
    out = residual(n, theta) * design_.col(static_cast<Eigen::Index>(n));
  }

  void h(std::size_t n, const Vector& theta, Eigen::Ref<Matrix> out) const override {
    const auto x = design_.col(static_cast<Eigen::Index>(n));
    out.noalias() = curvature(n, theta) * (x * x.transpose());
  }

  void h_apply(std::size_t n, const Vector& theta, const Vector& v,
               Eigen::Ref<Vector> out) const override {
    const auto x = design_.col(static_cast<Eigen::Index>(n));
    out = (curvature(n, theta) * x.dot(v)) * x;
  }

  void accumulate_g(std::size_t begin, std::size_t end, const Vector& theta, const double* w,
                    Eigen::Ref<Vector> out) const override {
    for (std::size_t n = begin; n < end; ++n) {
      if (w[n] == 0.0) continue;
      out.noalias() += (w[n] * residual(n, theta)) * design_.col(static_cast<Eigen::Index>(n));
    }
  }

  void accumulate_h(std::size_t begin, std::size_t end, const Vector& theta, const double* w,
                    Eigen::Ref<Matrix> out) const override {
    // Scaled design block times its transpose; both triangles are formed so
    // the result is exactly symmetric.
    const auto len = static_cast<Eigen::Index>(end - begin);
    if (len == 0) return;
    Matrix scaled = design_.middleCols(static_cast<Eigen::Index>(begin), len);
    for (Eigen::Index j = 0; j < len; ++j) {
      const std::size_t n = begin + static_cast<std::size_t>(j);
      scaled.col(j) *= w[n] * curvature(n, theta);
    }
    Matrix block(dim(), dim());
    block.noalias() = scaled * design_.middleCols(static_cast<Eigen::Index>(begin), len).transpose();
    block = 0.5 * (block + block.transpose()).eval();
    out += block;
  }

  void accumulate_h_apply(std::size_t begin, std::size_t end, const Vector& theta,
                          const double* w, const Vector& v,
                          Eigen::Ref<Vector> out) const override {
    for (std::size_t n = begin; n < end; ++n) {
      if (w[n] == 0.0) continue;
      const auto x = design_.col(static_cast<Eigen::Index>(n));
      out.noalias() += (w[n] * curvature(n, theta) * x.dot(v)) * x;
    }
  }

 private:
  ModelKind kind_;
  Matrix design_;  // D x N
  Vector response_;
};

inline std::shared_ptr<GlmModel> make_model(ModelKind kind, const Dataset& data) {
  return std::make_shared<GlmModel>(kind, data);
}

/// Mean per-datum loss over `indices`.
inline double held_out_loss(const GlmModel& model, const Parameter& theta,
                            const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw InputError("held_out_loss: empty index set");
  require_parameter(model, theta);
  double s = 0.0;
  for (std::size_t i : indices) {
    if (i >= model.n_points()) throw InputError("held_out_loss: index out of range");
    s += model.loss(i, theta);
  }
  return s / static_cast<double>(indices.size());
}

/// Mean loss over all data.
inline double train_loss(const GlmModel& model, const Parameter& theta) {
  double s = 0.0;
  for (std::size_t i = 0; i < model.n_points(); ++i) s += model.loss(i, theta);
  return s / static_cast<double>(model.n_points());
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Features are i.i.d. N(0, feature_scale^2). Responses:
///   mean      y = true_bias + noise_sd * z
///   linear    y = x'theta + bias + noise_sd * z
///   logistic  y ~ Bernoulli(sigmoid(x'theta + bias))
///   poisson   y ~ Poisson(exp(x'theta + bias))
struct SyntheticSpec {
  std::size_t n = 100;
  std::size_t p = 5;
  std::uint64_t seed = 0;
  Vector true_theta;  // length p; empty means zeros
  double true_bias = 0.0;
  ModelKind kind = ModelKind::logistic;
  double feature_scale = 1.0;
  double noise_sd = 1.0;
  bool has_bias = true;
};

/// Desk-scale preset: true coefficients all equal to 1/sqrt(p), so the
/// linear predictor has unit variance.
inline SyntheticSpec desk_preset(ModelKind kind, std::size_t n, std::size_t p,
                                 std::uint64_t seed) {
  SyntheticSpec s;
  s.kind = kind;
  s.n = n;
  s.p = p;
  s.seed = seed;
  s.true_theta = Vector::Constant(static_cast<Eigen::Index>(p), 1.0 / std::sqrt(double(p)));
  s.true_bias = kind == ModelKind::poisson ? 0.5 : 0.0;
  return s;
}

/// Desk preset with 100 features.
inline SyntheticSpec wide_preset(ModelKind kind, std::size_t n, std::uint64_t seed) {
  return desk_preset(kind, n, 100, seed);
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n < 1 || (spec.p < 1 && spec.kind != ModelKind::mean))
    throw InputError("generate_synthetic: need n >= 1 and p >= 1");
  Vector theta = spec.true_theta.size() == 0
                     ? Vector::Zero(static_cast<Eigen::Index>(spec.p))
                     : spec.true_theta;
  if (static_cast<std::size_t>(theta.size()) != spec.p)
    throw InputError("generate_synthetic: true_theta has wrong length");
  Rng rng(spec.seed);
  Dataset d;
  d.has_bias = spec.has_bias;
  const auto n = static_cast<Eigen::Index>(spec.n);
  const auto p = static_cast<Eigen::Index>(spec.p);
  d.features.resize(n, p);
  d.response.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) d.features(i, j) = spec.feature_scale * rng.normal();
    const double eta = d.features.row(i).dot(theta) + spec.true_bias;
    switch (spec.kind) {
      case ModelKind::mean: d.response[i] = spec.true_bias + spec.noise_sd * rng.normal(); break;
      case ModelKind::linear: d.response[i] = eta + spec.noise_sd * rng.normal(); break;
      case ModelKind::logistic: d.response[i] = rng.bernoulli(detail::sigmoid(eta)) ? 1.0 : 0.0; break;
      case ModelKind::poisson:
        if (eta > kMaxPoissonLogRate)
          throw InputError("generate_synthetic: Poisson rate exceeds exp(30) at row " +
                           std::to_string(i));
        d.response[i] = static_cast<double>(rng.poisson(std::exp(eta)));
        break;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// CSV: header x1,...,xP,y ; '.' decimal separator; shortest round-trip
// number formatting.

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw IoError("cannot format number");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw InputError("csv line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  return v;
}

inline void write_csv(std::ostream& os, const Dataset& d) {
  const auto p = static_cast<Eigen::Index>(d.n_features());
  for (Eigen::Index j = 0; j < p; ++j) os << 'x' << (j + 1) << ',';
  os << "y\n";
  for (Eigen::Index i = 0; i < d.response.size(); ++i) {
    for (Eigen::Index j = 0; j < p; ++j) os << format_double(d.features(i, j)) << ',';
    os << format_double(d.response[i]) << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_csv(os, d);
  if (!os) throw IoError("write to '" + path + "' failed");
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline Dataset read_csv(std::istream& is, bool has_bias = true) {
  std::string line;
  if (!std::getline(is, line)) throw InputError("csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  const auto header = split_csv_line(line);
  const std::size_t p = header.size() - 1;
  for (std::size_t j = 0; j < p; ++j)
    if (header[j] != "x" + std::to_string(j + 1))
      throw InputError("csv: header column " + std::to_string(j + 1) + " should be x" +
                       std::to_string(j + 1));
  if (header.back() != "y") throw InputError("csv: last header column should be y");

  std::vector<double> values;
  std::size_t rows = 0, lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != p + 1)
      throw InputError("csv line " + std::to_string(lineno) + ": expected " +
                       std::to_string(p + 1) + " columns");
    for (auto c : cells) values.push_back(parse_double(c, lineno));
    ++rows;
  }
  Dataset d;
  d.has_bias = has_bias;
  d.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(p));
  d.response.resize(static_cast<Eigen::Index>(rows));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < p; ++j)
      d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * (p + 1) + j];
    d.response[static_cast<Eigen::Index>(i)] = values[i * (p + 1) + p];
  }
  return d;
}

inline Dataset read_csv(const std::string& path, bool has_bias = true) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_csv(is, has_bias);
}

}  // namespace ijkit
