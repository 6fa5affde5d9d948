#include "satlab/models.hpp"

#include <cmath>
#include <string>

#include "satlab/error.hpp"
#include "satlab/rng.hpp"

namespace satlab {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double activate(Activation a, double z) {
  return a == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative expressed through the pre-activation.
double activate_slope(Activation a, double z) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  return z > 0.0 ? 1.0 : 0.0;
}

void check_input(const Extractor& e, const Vec& x) {
  if (static_cast<std::size_t>(x.size()) != e.input_dim())
    throw Error(ErrorKind::DimMismatch, "input has dimension " + std::to_string(x.size()) +
                                            ", extractor expects " +
                                            std::to_string(e.input_dim()));
}

std::size_t mlp_param_count(const MlpExtractor& m) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < m.layer_widths.size(); ++l)
    n += m.layer_widths[l + 1] * m.layer_widths[l] + m.layer_widths[l + 1];
  return n;
}

// Pre-activations per layer; activations[0] = x.
struct MlpPass {
  std::vector<Vec> pre;
  std::vector<Vec> post;
};

MlpPass mlp_forward(const MlpExtractor& m, const Vec& x) {
  MlpPass pass;
  pass.post.push_back(x);
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    Vec z = m.weights[l] * pass.post.back() + m.biases[l];
    Vec h = z.unaryExpr([&](double v) { return activate(m.activation, v); });
    pass.pre.push_back(std::move(z));
    pass.post.push_back(std::move(h));
  }
  return pass;
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }
std::string_view to_string(Loss l) { return l == Loss::Logistic ? "logistic" : "squared"; }

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw Error(ErrorKind::InvalidArgument, "unknown activation '" + std::string(name) + "'");
}

Loss parse_loss(std::string_view name) {
  if (name == "logistic") return Loss::Logistic;
  if (name == "squared") return Loss::Squared;
  throw Error(ErrorKind::UnknownLoss, "unknown loss '" + std::string(name) + "'");
}

MlpExtractor MlpExtractor::init(std::vector<std::size_t> widths, Activation act,
                                std::uint64_t seed) {
  if (widths.empty()) throw Error(ErrorKind::InvalidArgument, "mlp needs at least one width");
  for (auto w : widths)
    if (w == 0) throw Error(ErrorKind::InvalidArgument, "mlp widths must be positive");
  MlpExtractor m;
  m.layer_widths = std::move(widths);
  m.activation = act;
  for (std::size_t l = 0; l + 1 < m.layer_widths.size(); ++l) {
    const auto fan_in = m.layer_widths[l];
    const auto fan_out = m.layer_widths[l + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    SplitMix64 rng(derive_seed(seed, l));
    Mat w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-a, a);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Vec::Zero(static_cast<Eigen::Index>(fan_out)));
  }
  return m;
}

Extractor::Extractor(DictionaryExtractor e) : v_(std::move(e)) {
  if (std::get<DictionaryExtractor>(v_).gates.size() == 0)
    throw Error(ErrorKind::InvalidArgument, "dictionary needs at least one gate");
}

Extractor::Extractor(MlpExtractor e) : v_(std::move(e)) {
  const auto& m = std::get<MlpExtractor>(v_);
  if (m.layer_widths.empty() || m.weights.size() + 1 != m.layer_widths.size() ||
      m.biases.size() != m.weights.size())
    throw Error(ErrorKind::DimMismatch, "mlp layer list is inconsistent");
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    if (static_cast<std::size_t>(m.weights[l].rows()) != m.layer_widths[l + 1] ||
        static_cast<std::size_t>(m.weights[l].cols()) != m.layer_widths[l] ||
        static_cast<std::size_t>(m.biases[l].size()) != m.layer_widths[l + 1])
      throw Error(ErrorKind::DimMismatch, "mlp layer " + std::to_string(l) + " has wrong shape");
  }
}

Extractor::Extractor(ConcatExtractor e) : v_(make_concat(std::move(e.members))) {}

ConcatExtractor make_concat(std::vector<Extractor> members) {
  if (members.empty()) throw Error(ErrorKind::InvalidArgument, "concat needs at least one member");
  for (const auto& m : members)
    if (m.input_dim() != members.front().input_dim())
      throw Error(ErrorKind::DimMismatch, "concat members disagree on input dimension");
  return ConcatExtractor{std::move(members)};
}

std::size_t Extractor::input_dim() const {
  return std::visit(overloaded{
                        [](const DictionaryExtractor& d) { return std::size_t(d.gates.size()); },
                        [](const MlpExtractor& m) { return m.layer_widths.front(); },
                        [](const ConcatExtractor& c) { return c.members.front().input_dim(); },
                    },
                    v_);
}

std::size_t Extractor::output_dim() const {
  return std::visit(overloaded{
                        [](const DictionaryExtractor& d) { return std::size_t(d.gates.size()); },
                        [](const MlpExtractor& m) { return m.layer_widths.back(); },
                        [](const ConcatExtractor& c) {
                          std::size_t n = 0;
                          for (const auto& m : c.members) n += m.output_dim();
                          return n;
                        },
                    },
                    v_);
}

std::size_t Extractor::param_count() const {
  return std::visit(overloaded{
                        [](const DictionaryExtractor& d) { return std::size_t(d.gates.size()); },
                        [](const MlpExtractor& m) { return mlp_param_count(m); },
                        [](const ConcatExtractor& c) {
                          std::size_t n = 0;
                          for (const auto& m : c.members) n += m.param_count();
                          return n;
                        },
                    },
                    v_);
}

Vec Extractor::features(const Vec& x) const {
  check_input(*this, x);
  return std::visit(overloaded{
                        [&](const DictionaryExtractor& d) -> Vec { return d.gates.cwiseProduct(x); },
                        [&](const MlpExtractor& m) -> Vec {
                          Vec h = x;
                          for (std::size_t l = 0; l < m.weights.size(); ++l) {
                            h = (m.weights[l] * h + m.biases[l]).unaryExpr([&](double v) {
                              return activate(m.activation, v);
                            });
                          }
                          return h;
                        },
                        [&](const ConcatExtractor& c) -> Vec {
                          Vec out(static_cast<Eigen::Index>(output_dim()));
                          Eigen::Index off = 0;
                          for (const auto& m : c.members) {
                            Vec f = m.features(x);
                            out.segment(off, f.size()) = f;
                            off += f.size();
                          }
                          return out;
                        },
                    },
                    v_);
}

void Extractor::accumulate_param_grad(const Vec& x, const Vec& upstream,
                                      std::span<double> grad) const {
  check_input(*this, x);
  std::visit(overloaded{
                 [&](const DictionaryExtractor& d) {
                   for (Eigen::Index j = 0; j < d.gates.size(); ++j) grad[j] += upstream(j) * x(j);
                 },
                 [&](const MlpExtractor& m) {
                   const auto pass = mlp_forward(m, x);
                   // Offsets of each layer's block in the flat layout.
                   std::vector<std::size_t> off(m.weights.size());
                   std::size_t acc = 0;
                   for (std::size_t l = 0; l < m.weights.size(); ++l) {
                     off[l] = acc;
                     acc += m.weights[l].size() + m.biases[l].size();
                   }
                   Vec g = upstream;
                   for (std::size_t l = m.weights.size(); l-- > 0;) {
                     Vec delta = g.cwiseProduct(
                         pass.pre[l].unaryExpr([&](double z) { return activate_slope(m.activation, z); }));
                     const auto& in = pass.post[l];
                     const auto rows = m.weights[l].rows();
                     const auto cols = m.weights[l].cols();
                     double* w = grad.data() + off[l];
                     for (Eigen::Index r = 0; r < rows; ++r)
                       for (Eigen::Index c = 0; c < cols; ++c) w[r * cols + c] += delta(r) * in(c);
                     double* b = w + rows * cols;
                     for (Eigen::Index r = 0; r < rows; ++r) b[r] += delta(r);
                     g = m.weights[l].transpose() * delta;
                   }
                 },
                 [&](const ConcatExtractor& c) {
                   std::size_t poff = 0;
                   Eigen::Index foff = 0;
                   for (const auto& m : c.members) {
                     const auto od = static_cast<Eigen::Index>(m.output_dim());
                     const auto pc = m.param_count();
                     m.accumulate_param_grad(x, upstream.segment(foff, od), grad.subspan(poff, pc));
                     poff += pc;
                     foff += od;
                   }
                 },
             },
             v_);
}

void Extractor::write_params(std::span<double> out) const {
  std::visit(overloaded{
                 [&](const DictionaryExtractor& d) {
                   for (Eigen::Index j = 0; j < d.gates.size(); ++j) out[j] = d.gates(j);
                 },
                 [&](const MlpExtractor& m) {
                   std::size_t k = 0;
                   for (std::size_t l = 0; l < m.weights.size(); ++l) {
                     for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
                       for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c)
                         out[k++] = m.weights[l](r, c);
                     for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) out[k++] = m.biases[l](r);
                   }
                 },
                 [&](const ConcatExtractor& c) {
                   std::size_t off = 0;
                   for (const auto& m : c.members) {
                     m.write_params(out.subspan(off, m.param_count()));
                     off += m.param_count();
                   }
                 },
             },
             v_);
}

void Extractor::read_params(std::span<const double> in) {
  std::visit(overloaded{
                 [&](DictionaryExtractor& d) {
                   for (Eigen::Index j = 0; j < d.gates.size(); ++j) d.gates(j) = in[j];
                 },
                 [&](MlpExtractor& m) {
                   std::size_t k = 0;
                   for (std::size_t l = 0; l < m.weights.size(); ++l) {
                     for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
                       for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c)
                         m.weights[l](r, c) = in[k++];
                     for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) m.biases[l](r) = in[k++];
                   }
                 },
                 [&](ConcatExtractor& c) {
                   std::size_t off = 0;
                   for (auto& m : c.members) {
                     const auto pc = m.param_count();
                     m.read_params(in.subspan(off, pc));
                     off += pc;
                   }
                 },
             },
             v_);
}

void Extractor::write_gate_mask(std::span<char> out) const {
  std::visit(overloaded{
                 [&](const DictionaryExtractor& d) {
                   for (Eigen::Index j = 0; j < d.gates.size(); ++j) out[j] = 1;
                 },
                 [&](const MlpExtractor&) {},
                 [&](const ConcatExtractor& c) {
                   std::size_t off = 0;
                   for (const auto& m : c.members) {
                     m.write_gate_mask(out.subspan(off, m.param_count()));
                     off += m.param_count();
                   }
                 },
             },
             v_);
}

void Extractor::write_bias_mask(std::span<char> out) const {
  std::visit(overloaded{
                 [&](const DictionaryExtractor&) {},
                 [&](const MlpExtractor& m) {
                   std::size_t k = 0;
                   for (std::size_t l = 0; l < m.weights.size(); ++l) {
                     k += m.weights[l].size();
                     for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) out[k++] = 1;
                   }
                 },
                 [&](const ConcatExtractor& c) {
                   std::size_t off = 0;
                   for (const auto& m : c.members) {
                     m.write_bias_mask(out.subspan(off, m.param_count()));
                     off += m.param_count();
                   }
                 },
             },
             v_);
}

ComposedModel::ComposedModel(Extractor e, LinearHead h) : extractor(std::move(e)), head(std::move(h)) {
  if (static_cast<std::size_t>(head.gamma.size()) != extractor.output_dim())
    throw Error(ErrorKind::DimMismatch, "head has " + std::to_string(head.gamma.size()) +
                                            " weights for " +
                                            std::to_string(extractor.output_dim()) + " features");
}

Vec features(const Extractor& extractor, const Vec& x) { return extractor.features(x); }

double score(const ComposedModel& model, const Vec& x) {
  const Vec f = model.extractor.features(x);
  // Sequential sum keeps block-zero heads bit-identical to scoring a member alone.
  double s = 0.0;
  for (Eigen::Index j = 0; j < f.size(); ++j) s += model.head.gamma(j) * f(j);
  return s + model.head.bias;
}

int predict(const ComposedModel& model, const Vec& x) { return score(model, x) > 0.0 ? 1 : -1; }

double loss_value(Loss loss, double s, int y) {
  if (loss == Loss::Squared) {
    const double r = static_cast<double>(y) - s;
    return r * r;
  }
  const double m = static_cast<double>(y) * s;
  // log(1 + exp(-m)) without overflow
  return m > 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
}

double loss_slope(Loss loss, double s, int y) {
  if (loss == Loss::Squared) return -2.0 * (static_cast<double>(y) - s);
  const double m = static_cast<double>(y) * s;
  // -y * sigmoid(-m)
  const double sig = m > 0.0 ? std::exp(-m) / (1.0 + std::exp(-m)) : 1.0 / (1.0 + std::exp(m));
  return -static_cast<double>(y) * sig;
}

std::size_t param_count(const ComposedModel& model) {
  return model.extractor.param_count() + static_cast<std::size_t>(model.head.gamma.size()) + 1;
}

Vec flatten_params(const ComposedModel& model) {
  const auto pe = model.extractor.param_count();
  Vec v(static_cast<Eigen::Index>(param_count(model)));
  model.extractor.write_params(std::span<double>(v.data(), pe));
  const auto k = model.head.gamma.size();
  v.segment(static_cast<Eigen::Index>(pe), k) = model.head.gamma;
  v(v.size() - 1) = model.head.bias;
  return v;
}

ComposedModel unflatten_params(const ComposedModel& model, const Vec& v) {
  if (static_cast<std::size_t>(v.size()) != param_count(model))
    throw Error(ErrorKind::LengthMismatch, "parameter vector has length " +
                                               std::to_string(v.size()) + ", model needs " +
                                               std::to_string(param_count(model)));
  ComposedModel out = model;
  const auto pe = model.extractor.param_count();
  out.extractor.read_params(std::span<const double>(v.data(), pe));
  out.head.gamma = v.segment(static_cast<Eigen::Index>(pe), model.head.gamma.size());
  out.head.bias = v(v.size() - 1);
  return out;
}

Vec grad_score(const ComposedModel& model, const Vec& x) {
  const auto pe = model.extractor.param_count();
  Vec g = Vec::Zero(static_cast<Eigen::Index>(param_count(model)));
  model.extractor.accumulate_param_grad(x, model.head.gamma, std::span<double>(g.data(), pe));
  g.segment(static_cast<Eigen::Index>(pe), model.head.gamma.size()) = model.extractor.features(x);
  g(g.size() - 1) = 1.0;
  return g;
}

Vec grad_params(const ComposedModel& model, const Vec& x, int y, Loss loss) {
  return loss_slope(loss, score(model, x), y) * grad_score(model, x);
}

std::vector<char> gate_mask(const ComposedModel& model) {
  std::vector<char> m(param_count(model), 0);
  model.extractor.write_gate_mask(std::span<char>(m.data(), model.extractor.param_count()));
  return m;
}

std::vector<char> bias_mask(const ComposedModel& model) {
  std::vector<char> m(param_count(model), 0);
  model.extractor.write_bias_mask(std::span<char>(m.data(), model.extractor.param_count()));
  m.back() = 1;
  return m;
}

ComposedModel init_model(const ArchSpec& arch, std::uint64_t seed) {
  if (arch.kind == ArchSpec::Kind::Dictionary) {
    SplitMix64 rng(derive_seed(seed, 0));
    DictionaryExtractor d{Vec(static_cast<Eigen::Index>(arch.input_dim))};
    for (Eigen::Index j = 0; j < d.gates.size(); ++j)
      d.gates(j) = rng.uniform(arch.gate_init_lo, arch.gate_init_hi);
    const auto k = d.gates.size();
    return ComposedModel(Extractor(std::move(d)), LinearHead{Vec::Zero(k), 0.0});
  }
  std::vector<std::size_t> widths{arch.input_dim};
  widths.insert(widths.end(), arch.hidden.begin(), arch.hidden.end());
  auto m = MlpExtractor::init(std::move(widths), arch.activation, derive_seed(seed, 1));
  const auto k = static_cast<Eigen::Index>(m.layer_widths.back());
  return ComposedModel(Extractor(std::move(m)), LinearHead{Vec::Zero(k), 0.0});
}

}  // namespace satlab
