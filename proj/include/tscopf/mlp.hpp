#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tscopf::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OutputActivation : unsigned char { Linear = 0, TanhScaled = 1 };

/// Fully connected ReLU network. All weights and biases live in one flat
/// parameter vector; layer l stores its (out x in) weight block, column-major,
/// followed by its bias.
class Mlp {
 public:
  Mlp() = default;
  /// Linear output head.
  explicit Mlp(std::vector<int> layer_dims);
  /// tanh head rescaled coordinate-wise into [lo, hi].
  Mlp(std::vector<int> layer_dims, Vector lo, Vector hi);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void initialize(std::mt19937_64& rng);

  [[nodiscard]] const std::vector<int>& layer_dims() const { return dims_; }
  [[nodiscard]] int input_dim() const { return dims_.front(); }
  [[nodiscard]] int output_dim() const { return dims_.back(); }
  [[nodiscard]] std::size_t n_layers() const { return dims_.size() - 1; }
  [[nodiscard]] OutputActivation output_activation() const { return out_; }
  [[nodiscard]] const Vector& lower() const { return lo_; }
  [[nodiscard]] const Vector& upper() const { return hi_; }

  [[nodiscard]] Vector& params() { return params_; }
  [[nodiscard]] const Vector& params() const { return params_; }

  Eigen::Map<Matrix> weight(std::size_t l);
  [[nodiscard]] Eigen::Map<const Matrix> weight(std::size_t l) const;
  Eigen::Map<Vector> bias(std::size_t l);
  [[nodiscard]] Eigen::Map<const Vector> bias(std::size_t l) const;

  struct Cache {
    std::vector<Matrix> activations;  // activations[0] is the input batch
    std::vector<Matrix> pre;          // pre-activation per layer
  };

  struct Gradients {
    Vector params;
    Matrix input;
  };

  /// Batched forward pass; one sample per column.
  Matrix forward(const Matrix& input, Cache* cache = nullptr) const;
  Vector forward(const Vector& input) const;

  /// Reverse-mode gradients of sum(output .* output_gradient) with respect
  /// to every parameter and to the input batch.
  [[nodiscard]] Gradients backward(const Cache& cache, const Matrix& output_gradient) const;

  bool operator==(const Mlp& other) const;

 private:
  void layout();
  [[nodiscard]] std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }

  std::vector<int> dims_;
  std::vector<std::size_t> offsets_;
  Vector params_;
  OutputActivation out_ = OutputActivation::Linear;
  Vector lo_, hi_;
};

struct AdamState {
  Vector m, v;
  long t = 0;
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const Vector& params, double alpha);
};

/// Bias-corrected Adam update. Throws std::domain_error on a non-finite
/// gradient without touching the parameters.
void adam_step(AdamState& state, Vector& params, const Vector& grads);

struct Checkpoint {
  std::string meta;  // free-form JSON metadata
  std::vector<Mlp> nets;
  std::vector<AdamState> adam;
};

inline constexpr unsigned kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tscopf::nn
