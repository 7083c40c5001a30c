#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fairmix/corpus.hpp"
#include "fairmix/feature_store.hpp"

namespace fairmix {

// ---------------------------------------------------------------------------
// Loss heads

/// Plain cross-entropy over affine logits.
struct SoftmaxCE {};

/// Cross-entropy plus (lambda/2)*mean ||e - c_y||^2. Centers move by
/// center_update with rate alpha, not by gradient descent.
struct CenterLoss {
  double lambda = 0.003;
  double alpha = 0.5;
};

/// Multiplicative angular margin: target logit ||e|| * psi(theta_y) with
/// psi(theta) = (-1)^k cos(m*theta) - 2k on [k*pi/m, (k+1)*pi/m]. A positive
/// `blend` replaces psi by (blend*cos(theta) + psi) / (1 + blend), the
/// softened target used to keep small models from collapsing; 0 is the pure
/// margin.
struct SphereFace {
  int m = 4;
  double blend = 0.0;
};

/// Additive angular margin: logits s*cos(theta_j), target s*cos(theta_y + m).
struct ArcFace {
  double s = 16.0;
  double m = 0.5;
};

using LossHead = std::variant<SoftmaxCE, CenterLoss, SphereFace, ArcFace>;

/// Short label: "softmax", "center", "sphereface", "arcface".
std::string head_name(const LossHead& head);
/// Label plus parameters, e.g. "arcface:s=16,m=0.5"; parse_head round-trips it.
std::string head_spec(const LossHead& head);
/// "softmax", "center[:lambda=..,alpha=..]", "sphereface[:m=..]", "arcface[:s=..,m=..]".
LossHead parse_head(std::string_view spec);
/// Throws std::invalid_argument on out-of-range parameters.
void validate_head(const LossHead& head);
bool is_angular(const LossHead& head) noexcept;

/// Raised for zero-norm embeddings under angular heads and non-finite losses.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Model

/// MLP backbone: ReLU between hidden layers, linear embedding layer. The
/// classifier has one column per identity.
struct EmbeddingModel {
  std::vector<int> widths;  ///< input, hidden..., embedding
  std::vector<Eigen::MatrixXd> weights;  ///< layer l: widths[l+1] x widths[l]
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd classifier;       ///< D x N
  Eigen::VectorXd classifier_bias;  ///< N; unused by angular heads
  Eigen::MatrixXd centers;          ///< N x D; CenterLoss only
  LossHead head;
  std::uint64_t seed = 0;

  int input_dim() const { return widths.front(); }
  int embedding_dim() const { return widths.back(); }
  int num_identities() const { return static_cast<int>(classifier.cols()); }
  std::size_t parameter_count() const;
};

/// Scaled-uniform fan-in initialisation. Angular heads start with unit
/// classifier columns; centers start small and random.
EmbeddingModel init_model(const std::vector<int>& widths, int num_identities, const LossHead& head,
                          std::uint64_t seed);

/// Re-normalises classifier columns to unit length (angular heads).
void normalize_classifier(EmbeddingModel& model);

struct ForwardResult {
  Eigen::VectorXd embedding;
  Eigen::VectorXd logits;
};

/// Logits follow the head: affine for SoftmaxCE/CenterLoss, ||e||cos(theta_j)
/// for SphereFace and s*cos(theta_j) for ArcFace (no margin: that is
/// label-dependent and only enters the loss).
ForwardResult forward(const EmbeddingModel& model, std::span<const double> x);

/// Embeddings of a column batch (input_dim x B) -> (D x B).
Eigen::MatrixXd embed_batch(const EmbeddingModel& model, const Eigen::MatrixXd& inputs);

struct Batch {
  Eigen::MatrixXd inputs;   ///< input_dim x B
  std::vector<int> labels;  ///< size B
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd classifier;
  Eigen::VectorXd classifier_bias;
};

struct LossResult {
  double loss = 0.0;
  Gradients grads;
  Eigen::MatrixXd embeddings;  ///< D x B, reused by center_update
};

/// Mean loss over the batch and its exact gradient for every trainable
/// parameter (centers excluded).
LossResult loss_and_grad(const EmbeddingModel& model, const Batch& batch);

/// Loss only, same definition as loss_and_grad.
double loss_value(const EmbeddingModel& model, const Batch& batch);

/// c_j <- c_j - alpha * sum_{i:y_i=j}(c_j - e_i) / (1 + n_j). Throws
/// std::logic_error unless the model uses CenterLoss.
void center_update(EmbeddingModel& model, const Eigen::MatrixXd& embeddings,
                   std::span<const int> labels);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  LossHead head = ArcFace{};
  std::vector<int> hidden{64, 64};
  int embedding_dim = 32;

  void validate() const;
};

struct SgdState {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd classifier;
  Eigen::VectorXd classifier_bias;

  static SgdState zeros_like(const EmbeddingModel& model);
};

/// v <- momentum*v + g + weight_decay*theta; theta <- theta - lr*v; then
/// classifier columns are re-normalised for angular heads.
void sgd_step(EmbeddingModel& model, const Gradients& grads, SgdState& state,
              double learning_rate, double momentum, double weight_decay);

struct TrainLogRow {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
};

struct TrainResult {
  EmbeddingModel model;
  std::vector<TrainLogRow> log;
  /// Identity label -> subject id, in manifest order.
  std::vector<std::string> identities;
};

/// Deterministic for a given config and seed.
TrainResult train(const DatasetManifest& manifest, const FeatureStore& store, const TrainConfig& cfg);

/// Fraction of training images whose argmax logit is their identity.
double training_accuracy(const EmbeddingModel& model, const DatasetManifest& manifest,
                         const FeatureStore& store);

/// Rows align with `ids`; embeddings are not normalised.
Eigen::MatrixXd embed_all(const EmbeddingModel& model, const FeatureStore& store,
                          std::span<const std::string> ids);

void write_train_log(const std::filesystem::path& path, std::span<const TrainLogRow> log);

// ---------------------------------------------------------------------------
// Checkpoints: <path> holds a JSON header, <path>.bin the float32 weights.

void save_checkpoint(const std::filesystem::path& path, const EmbeddingModel& model);
EmbeddingModel load_checkpoint(const std::filesystem::path& path);

}  // namespace fairmix
