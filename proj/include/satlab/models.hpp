#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "satlab/mixtures.hpp"

namespace satlab {

enum class Activation { Relu, Tanh };
enum class Loss { Logistic, Squared };

std::string_view to_string(Activation a);
std::string_view to_string(Loss l);
Activation parse_activation(std::string_view name);  // InvalidArgument
Loss parse_loss(std::string_view name);              // UnknownLoss

struct LinearHead {
  Vec gamma;
  double bias = 0.0;
};

/// output_j(x) = gates_j * x_j. Input coordinates are the candidate features.
struct DictionaryExtractor {
  Vec gates;
};

/// Fully connected network; every layer (including the last) is followed by
/// the activation. layer_widths = {input, hidden..., representation}. A single
/// width gives the identity map with no parameters.
struct MlpExtractor {
  std::vector<std::size_t> layer_widths;
  std::vector<Mat> weights;  // weights[l] is layer_widths[l+1] x layer_widths[l]
  std::vector<Vec> biases;
  Activation activation = Activation::Tanh;

  /// Uniform(-a, a) with a = sqrt(6 / fan_in) (variance 2 / fan_in); zero biases.
  static MlpExtractor init(std::vector<std::size_t> widths, Activation act, std::uint64_t seed);
};

class Extractor;

struct ConcatExtractor {
  std::vector<Extractor> members;
};

/// Value-semantic sum type over the supported extractors.
class Extractor {
 public:
  using Variant = std::variant<DictionaryExtractor, MlpExtractor, ConcatExtractor>;

  Extractor(DictionaryExtractor e);  // NOLINT(google-explicit-constructor)
  Extractor(MlpExtractor e);         // NOLINT(google-explicit-constructor)
  Extractor(ConcatExtractor e);      // NOLINT(google-explicit-constructor)

  const Variant& variant() const noexcept { return v_; }
  Variant& variant() noexcept { return v_; }

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t param_count() const;

  /// Throws DimMismatch when x has the wrong length.
  Vec features(const Vec& x) const;

  /// grad += upstream^T * d features(x) / d params.
  void accumulate_param_grad(const Vec& x, const Vec& upstream, std::span<double> grad) const;

  void write_params(std::span<double> out) const;
  void read_params(std::span<const double> in);

  /// Per-parameter flags: gate parameters (L1 target) and biases (no decay).
  void write_gate_mask(std::span<char> out) const;
  void write_bias_mask(std::span<char> out) const;

 private:
  Variant v_;
};

/// Validates members (nonempty, common input dimension) and concatenates.
ConcatExtractor make_concat(std::vector<Extractor> members);

/// f(x) = gamma . features(x) + bias
struct ComposedModel {
  Extractor extractor;
  LinearHead head;

  ComposedModel(Extractor e, LinearHead h);
};

Vec features(const Extractor& extractor, const Vec& x);
double score(const ComposedModel& model, const Vec& x);
/// sign(score) with sign(0) = -1.
int predict(const ComposedModel& model, const Vec& x);

/// Pointwise loss value at score s and label y.
double loss_value(Loss loss, double s, int y);
/// d loss / d score.
double loss_slope(Loss loss, double s, int y);

/// Flat layout: [extractor params..., gamma..., bias]. Extractor blocks:
/// dictionary = gates; mlp = for each layer W (row-major) then b; concat =
/// members in order.
std::size_t param_count(const ComposedModel& model);
Vec flatten_params(const ComposedModel& model);
ComposedModel unflatten_params(const ComposedModel& model, const Vec& v);  // LengthMismatch

/// d score / d params in the flat layout.
Vec grad_score(const ComposedModel& model, const Vec& x);
/// d loss(score(x), y) / d params.
Vec grad_params(const ComposedModel& model, const Vec& x, int y, Loss loss);

std::vector<char> gate_mask(const ComposedModel& model);
std::vector<char> bias_mask(const ComposedModel& model);

struct ArchSpec {
  enum class Kind { Dictionary, Mlp };
  Kind kind = Kind::Dictionary;
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden;  // mlp only; last entry is the representation width
  Activation activation = Activation::Tanh;
  double gate_init_lo = 0.5;
  double gate_init_hi = 1.5;
};

/// Seeded initialization. Dictionary gates ~ U(gate_init_lo, gate_init_hi);
/// mlp per MlpExtractor::init. The head starts at zero.
ComposedModel init_model(const ArchSpec& arch, std::uint64_t seed);

}  // namespace satlab
