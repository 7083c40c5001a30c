#include "fairmix/embednet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "fairmix/rng.hpp"

namespace fairmix {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double parse_param(std::string_view text, std::string_view name) {
  try {
    std::size_t used = 0;
    const std::string s(text);
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad value for head parameter " + std::string(name) + ": '" +
                                std::string(text) + "'");
  }
}

struct Activations {
  std::vector<Eigen::MatrixXd> pre;  // pre[l] = W_l * act[l] + b_l
  std::vector<Eigen::MatrixXd> act;  // act[0] = inputs, act[l] = relu(pre[l-1])
};

Activations run_backbone(const EmbeddingModel& model, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != model.input_dim()) {
    throw std::invalid_argument(fmt::format("input has {} dims, model expects {}", inputs.rows(),
                                            model.input_dim()));
  }
  const std::size_t L = model.weights.size();
  Activations a;
  a.pre.resize(L);
  a.act.resize(L);
  a.act[0] = inputs;
  for (std::size_t l = 0; l < L; ++l) {
    a.pre[l] = (model.weights[l] * a.act[l]).colwise() + model.biases[l];
    if (l + 1 < L) a.act[l + 1] = a.pre[l].cwiseMax(0.0);
  }
  return a;
}

// Chebyshev polynomials T_m(c) and U_{m-1}(c): cos(m*theta) = T_m(cos theta),
// d/dc T_m = m * U_{m-1}.
std::pair<double, double> chebyshev(int m, double c) {
  double t_prev = 1.0, t = c;
  double u_prev = 1.0, u = 2.0 * c;  // U_0, U_1
  if (m == 0) return {1.0, 0.0};
  for (int k = 1; k < m; ++k) {
    const double t_next = 2.0 * c * t - t_prev;
    t_prev = t;
    t = t_next;
    if (k < m - 1) {
      const double u_next = 2.0 * c * u - u_prev;
      u_prev = u;
      u = u_next;
    }
  }
  const double u_m1 = (m == 1) ? 1.0 : u;
  return {t, u_m1};
}

/// psi(c) and dpsi/dc for the multiplicative margin.
std::pair<double, double> sphere_psi(int m, double c) {
  const double theta = std::acos(c);
  int k = static_cast<int>(std::floor(theta * m / std::numbers::pi));
  k = std::clamp(k, 0, m - 1);
  const auto [tm, um1] = chebyshev(m, c);
  const double sign = (k % 2 == 0) ? 1.0 : -1.0;
  return {sign * tm - 2.0 * k, sign * m * um1};
}

struct HeadOutput {
  double loss = 0.0;
  Eigen::MatrixXd dE;
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;
};

/// Column-wise softmax cross-entropy. Fills G with (softmax - onehot)/B.
double cross_entropy(const Eigen::MatrixXd& F, std::span<const int> labels, Eigen::MatrixXd& G) {
  const auto B = F.cols();
  G.resize(F.rows(), B);
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const double mx = F.col(i).maxCoeff();
    const Eigen::VectorXd ex = (F.col(i).array() - mx).exp().matrix();
    const double z = ex.sum();
    total += std::log(z) + mx - F(labels[static_cast<std::size_t>(i)], i);
    G.col(i) = ex / z;
    G(labels[static_cast<std::size_t>(i)], i) -= 1.0;
  }
  G /= static_cast<double>(B);
  return total / static_cast<double>(B);
}

HeadOutput head_loss(const EmbeddingModel& model, const Eigen::MatrixXd& E, std::span<const int> labels,
                     bool need_grad) {
  const auto B = E.cols();
  const auto N = model.classifier.cols();
  for (int y : labels) {
    if (y < 0 || y >= N) throw std::invalid_argument(fmt::format("label {} out of range [0,{})", y, N));
  }
  HeadOutput out;
  Eigen::MatrixXd G;

  if (!is_angular(model.head)) {
    const Eigen::MatrixXd F = (model.classifier.transpose() * E).colwise() + model.classifier_bias;
    out.loss = cross_entropy(F, labels, G);
    if (need_grad) {
      out.dW = E * G.transpose();
      out.db = G.rowwise().sum();
      out.dE = model.classifier * G;
    }
    if (const auto* c = std::get_if<CenterLoss>(&model.head)) {
      double sq = 0.0;
      Eigen::MatrixXd diff(E.rows(), B);
      for (Eigen::Index i = 0; i < B; ++i) {
        diff.col(i) = E.col(i) - model.centers.row(labels[static_cast<std::size_t>(i)]).transpose();
        sq += diff.col(i).squaredNorm();
      }
      out.loss += 0.5 * c->lambda * sq / static_cast<double>(B);
      if (need_grad) out.dE += (c->lambda / static_cast<double>(B)) * diff;
    }
    return out;
  }

  const Eigen::VectorXd wn = model.classifier.colwise().norm().transpose();
  if ((wn.array() <= 0.0).any()) throw NumericError("classifier column with zero norm");
  const Eigen::MatrixXd What = model.classifier.array().rowwise() / wn.transpose().array();
  const Eigen::VectorXd en = E.colwise().norm().transpose();
  for (Eigen::Index i = 0; i < B; ++i) {
    if (!(en(i) > 0.0)) {
      throw NumericError(fmt::format("zero-norm embedding for batch sample {} under angular head", i));
    }
  }
  const Eigen::MatrixXd Ehat = E.array().rowwise() / en.transpose().array();
  const Eigen::MatrixXd C = (What.transpose() * Ehat).cwiseMax(-1.0).cwiseMin(1.0);

  Eigen::MatrixXd F(N, B);
  Eigen::MatrixXd gval(N, B);   // g(c): margin-adjusted cosine
  Eigen::MatrixXd gprime(N, B); // dg/dc
  gval = C;
  gprime.setOnes();
  double scale_const = 1.0;
  bool norm_scaled = false;

  if (const auto* sph = std::get_if<SphereFace>(&model.head)) {
    norm_scaled = true;
    for (Eigen::Index i = 0; i < B; ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      const auto [psi, dpsi] = sphere_psi(sph->m, C(y, i));
      gval(y, i) = (sph->blend * C(y, i) + psi) / (1.0 + sph->blend);
      gprime(y, i) = (sph->blend + dpsi) / (1.0 + sph->blend);
    }
    F = gval.array().rowwise() * en.transpose().array();
  } else {
    const auto& arc = std::get<ArcFace>(model.head);
    scale_const = arc.s;
    const double cm = std::cos(arc.m), sm = std::sin(arc.m);
    for (Eigen::Index i = 0; i < B; ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      const double c = C(y, i);
      const double sin_t = std::sqrt(std::max(0.0, 1.0 - c * c));
      gval(y, i) = c * cm - sin_t * sm;
      if (need_grad && arc.m != 0.0) {
        if (sin_t < 1e-12) {
          throw NumericError(fmt::format("degenerate target angle (cos={}) for batch sample {}", c, i));
        }
        // d cos(theta + m) / d cos(theta) = sin(theta + m) / sin(theta)
        gprime(y, i) = cm + c * sm / sin_t;
      }
    }
    F = arc.s * gval;
  }

  out.loss = cross_entropy(F, labels, G);
  if (!need_grad) return out;

  Eigen::MatrixXd Dc(N, B);
  Eigen::VectorXd dn = Eigen::VectorXd::Zero(B);
  if (norm_scaled) {
    Dc = (G.array() * gprime.array()).rowwise() * en.transpose().array();
    dn = (G.array() * gval.array()).colwise().sum().transpose();
  } else {
    Dc = scale_const * (G.array() * gprime.array()).matrix();
  }
  const Eigen::MatrixXd dEhat = What * Dc;
  const Eigen::MatrixXd dWhat = Ehat * Dc.transpose();

  out.dE.resize(E.rows(), B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto e = Ehat.col(i);
    const auto g = dEhat.col(i);
    out.dE.col(i) = (g - e * e.dot(g)) / en(i) + dn(i) * e;
  }
  out.dW.resize(model.classifier.rows(), N);
  for (Eigen::Index j = 0; j < N; ++j) {
    const auto w = What.col(j);
    const auto g = dWhat.col(j);
    out.dW.col(j) = (g - w * w.dot(g)) / wn(j);
  }
  out.db = Eigen::VectorXd::Zero(N);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string head_name(const LossHead& head) {
  return std::visit(Overloaded{[](const SoftmaxCE&) { return std::string("softmax"); },
                               [](const CenterLoss&) { return std::string("center"); },
                               [](const SphereFace&) { return std::string("sphereface"); },
                               [](const ArcFace&) { return std::string("arcface"); }},
                    head);
}

std::string head_spec(const LossHead& head) {
  return std::visit(
      Overloaded{[](const SoftmaxCE&) { return std::string("softmax"); },
                 [](const CenterLoss& c) { return fmt::format("center:lambda={},alpha={}", c.lambda, c.alpha); },
                 [](const SphereFace& s) {
                   return s.blend == 0.0 ? fmt::format("sphereface:m={}", s.m)
                                         : fmt::format("sphereface:m={},blend={}", s.m, s.blend);
                 },
                 [](const ArcFace& a) { return fmt::format("arcface:s={},m={}", a.s, a.m); }},
      head);
}

LossHead parse_head(std::string_view spec) {
  const auto colon = spec.find(':');
  std::string name(spec.substr(0, colon));
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  LossHead head;
  if (name == "softmax" || name == "ce" || name == "vggface2" || name == "vgg") {
    head = SoftmaxCE{};
  } else if (name == "center" || name == "centerloss") {
    head = CenterLoss{};
  } else if (name == "sphereface" || name == "sphere") {
    head = SphereFace{};
  } else if (name == "arcface" || name == "arc") {
    head = ArcFace{};
  } else {
    throw std::invalid_argument("unknown loss head: " + std::string(spec));
  }
  if (colon != std::string_view::npos) {
    std::string_view rest = spec.substr(colon + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto kv = rest.substr(0, comma);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      const auto eq = kv.find('=');
      if (eq == std::string_view::npos) throw std::invalid_argument("head parameter needs key=value");
      const auto key = kv.substr(0, eq);
      const double v = parse_param(kv.substr(eq + 1), key);
      bool ok = std::visit(Overloaded{[&](SoftmaxCE&) { return false; },
                                      [&](CenterLoss& c) {
                                        if (key == "lambda") return c.lambda = v, true;
                                        if (key == "alpha") return c.alpha = v, true;
                                        return false;
                                      },
                                      [&](SphereFace& s) {
                                        if (key == "m") {
                                          if (v != std::floor(v)) throw std::invalid_argument("SphereFace m must be an integer");
                                          return s.m = static_cast<int>(v), true;
                                        }
                                        if (key == "blend") return s.blend = v, true;
                                        return false;
                                      },
                                      [&](ArcFace& a) {
                                        if (key == "s") return a.s = v, true;
                                        if (key == "m") return a.m = v, true;
                                        return false;
                                      }},
                           head);
      if (!ok) throw std::invalid_argument("unknown parameter '" + std::string(key) + "' for head " + name);
    }
  }
  validate_head(head);
  return head;
}

void validate_head(const LossHead& head) {
  std::visit(Overloaded{[](const SoftmaxCE&) {},
                        [](const CenterLoss& c) {
                          if (!(c.lambda > 0.0) || !(c.alpha > 0.0)) {
                            throw std::invalid_argument("CenterLoss needs lambda > 0 and alpha > 0");
                          }
                        },
                        [](const SphereFace& s) {
                          if (s.m < 1) throw std::invalid_argument("SphereFace margin must be an integer >= 1");
                          if (!(s.blend >= 0.0)) throw std::invalid_argument("SphereFace blend must be >= 0");
                        },
                        [](const ArcFace& a) {
                          if (!(a.s > 0.0)) throw std::invalid_argument("ArcFace scale must be > 0");
                          if (!(a.m >= 0.0 && a.m < std::numbers::pi)) {
                            throw std::invalid_argument("ArcFace margin must lie in [0, pi)");
                          }
                        }},
             head);
}

bool is_angular(const LossHead& head) noexcept {
  return std::holds_alternative<SphereFace>(head) || std::holds_alternative<ArcFace>(head);
}

std::size_t EmbeddingModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n + classifier.size() + classifier_bias.size() + centers.size();
}

EmbeddingModel init_model(const std::vector<int>& widths, int num_identities, const LossHead& head,
                          std::uint64_t seed) {
  if (widths.size() < 2) throw std::invalid_argument("model needs at least input and embedding widths");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("layer widths must be positive");
  }
  if (num_identities < 1) throw std::invalid_argument("model needs at least one identity");
  validate_head(head);

  EmbeddingModel m;
  m.widths = widths;
  m.head = head;
  m.seed = seed;
  Rng rng = make_rng(derive_seed(seed, "init"));
  auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, double a) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = a * (2.0 * uniform01(rng) - 1.0);
    }
    return out;
  };
  const std::size_t L = widths.size() - 1;
  for (std::size_t l = 0; l < L; ++l) {
    const double fan_in = widths[l];
    const double gain = (l + 1 < L) ? 6.0 : 3.0;  // ReLU layers vs linear embedding
    m.weights.push_back(uniform(widths[l + 1], widths[l], std::sqrt(gain / fan_in)));
    m.biases.push_back(Eigen::VectorXd::Zero(widths[l + 1]));
  }
  const int D = widths.back();
  m.classifier = uniform(D, num_identities, std::sqrt(3.0 / D));
  m.classifier_bias = Eigen::VectorXd::Zero(num_identities);
  if (std::holds_alternative<CenterLoss>(head)) {
    m.centers = uniform(num_identities, D, 0.1);
  }
  normalize_classifier(m);
  return m;
}

void normalize_classifier(EmbeddingModel& model) {
  if (!is_angular(model.head)) return;
  constexpr double kTol = 4 * std::numeric_limits<double>::epsilon();
  for (Eigen::Index j = 0; j < model.classifier.cols(); ++j) {
    const double n = model.classifier.col(j).norm();
    if (!(n > 0.0)) throw NumericError(fmt::format("classifier column {} collapsed to zero", j));
    if (std::abs(n - 1.0) > kTol) model.classifier.col(j) /= n;
  }
}

ForwardResult forward(const EmbeddingModel& model, std::span<const double> x) {
  const Eigen::Map<const Eigen::VectorXd> xin(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::MatrixXd E = embed_batch(model, xin);
  ForwardResult r;
  r.embedding = E.col(0);
  if (!is_angular(model.head)) {
    r.logits = model.classifier.transpose() * r.embedding + model.classifier_bias;
    return r;
  }
  const double n = r.embedding.norm();
  if (!(n > 0.0)) throw NumericError("zero-norm embedding under angular head");
  const Eigen::VectorXd wn = model.classifier.colwise().norm().transpose();
  const Eigen::VectorXd cosines =
      (model.classifier.transpose() * (r.embedding / n)).array() / wn.array();
  if (const auto* arc = std::get_if<ArcFace>(&model.head)) {
    r.logits = arc->s * cosines;
  } else {
    r.logits = n * cosines;
  }
  return r;
}

Eigen::MatrixXd embed_batch(const EmbeddingModel& model, const Eigen::MatrixXd& inputs) {
  auto a = run_backbone(model, inputs);
  return std::move(a.pre.back());
}

LossResult loss_and_grad(const EmbeddingModel& model, const Batch& batch) {
  if (static_cast<std::size_t>(batch.inputs.cols()) != batch.labels.size() || batch.labels.empty()) {
    throw std::invalid_argument("batch inputs and labels disagree in size");
  }
  const auto acts = run_backbone(model, batch.inputs);
  const Eigen::MatrixXd& E = acts.pre.back();
  auto head = head_loss(model, E, batch.labels, true);

  LossResult r;
  r.loss = head.loss;
  r.embeddings = E;
  const std::size_t L = model.weights.size();
  r.grads.weights.resize(L);
  r.grads.biases.resize(L);
  Eigen::MatrixXd dpre = std::move(head.dE);
  for (std::size_t l = L; l-- > 0;) {
    r.grads.weights[l] = dpre * acts.act[l].transpose();
    r.grads.biases[l] = dpre.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd dact = model.weights[l].transpose() * dpre;
    dpre = (acts.pre[l - 1].array() > 0.0).select(dact, 0.0);
  }
  r.grads.classifier = std::move(head.dW);
  r.grads.classifier_bias = std::move(head.db);
  return r;
}

double loss_value(const EmbeddingModel& model, const Batch& batch) {
  const Eigen::MatrixXd E = embed_batch(model, batch.inputs);
  return head_loss(model, E, batch.labels, false).loss;
}

void center_update(EmbeddingModel& model, const Eigen::MatrixXd& embeddings, std::span<const int> labels) {
  const auto* c = std::get_if<CenterLoss>(&model.head);
  if (!c) throw std::logic_error("center_update requires the CenterLoss head");
  if (static_cast<std::size_t>(embeddings.cols()) != labels.size()) {
    throw std::invalid_argument("center_update: embeddings and labels disagree in size");
  }
  const auto N = model.centers.rows();
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(N, model.centers.cols());
  Eigen::VectorXd count = Eigen::VectorXd::Zero(N);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int j = labels[i];
    delta.row(j) += model.centers.row(j) - embeddings.col(static_cast<Eigen::Index>(i)).transpose();
    count(j) += 1.0;
  }
  for (Eigen::Index j = 0; j < N; ++j) {
    if (count(j) > 0.0) model.centers.row(j) -= c->alpha * delta.row(j) / (1.0 + count(j));
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be >= 0");
  if (embedding_dim < 1) throw std::invalid_argument("train: embedding dim must be >= 1");
  validate_head(head);
}

SgdState SgdState::zeros_like(const EmbeddingModel& model) {
  SgdState s;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    s.weights.push_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
    s.biases.push_back(Eigen::VectorXd::Zero(model.biases[l].size()));
  }
  s.classifier = Eigen::MatrixXd::Zero(model.classifier.rows(), model.classifier.cols());
  s.classifier_bias = Eigen::VectorXd::Zero(model.classifier_bias.size());
  return s;
}

void sgd_step(EmbeddingModel& model, const Gradients& grads, SgdState& state, double learning_rate,
              double momentum, double weight_decay) {
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    state.weights[l] = momentum * state.weights[l] + grads.weights[l] + weight_decay * model.weights[l];
    model.weights[l] -= learning_rate * state.weights[l];
    state.biases[l] = momentum * state.biases[l] + grads.biases[l];
    model.biases[l] -= learning_rate * state.biases[l];
  }
  state.classifier = momentum * state.classifier + grads.classifier + weight_decay * model.classifier;
  model.classifier -= learning_rate * state.classifier;
  if (!is_angular(model.head)) {
    state.classifier_bias = momentum * state.classifier_bias + grads.classifier_bias;
    model.classifier_bias -= learning_rate * state.classifier_bias;
  }
  normalize_classifier(model);
}

namespace {

struct Samples {
  Eigen::MatrixXd inputs;  // input_dim x S
  std::vector<int> labels;
  std::vector<const std::string*> ids;
};

Samples gather(const DatasetManifest& manifest, const FeatureStore& store) {
  Samples s;
  s.inputs.resize(static_cast<Eigen::Index>(store.dims()), static_cast<Eigen::Index>(manifest.image_count()));
  Eigen::Index col = 0;
  for (std::size_t label = 0; label < manifest.entries.size(); ++label) {
    for (const auto& id : manifest.entries[label].image_ids) {
      if (!store.contains(id)) throw std::runtime_error("manifest image " + id + " missing from feature store");
      const auto row = store.at(id);
      for (std::size_t d = 0; d < row.size(); ++d) s.inputs(static_cast<Eigen::Index>(d), col) = row[d];
      s.labels.push_back(static_cast<int>(label));
      s.ids.push_back(&id);
      ++col;
    }
  }
  return s;
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const FeatureStore& store, const TrainConfig& cfg) {
  cfg.validate();
  if (manifest.entries.empty()) throw std::invalid_argument("train: manifest has no subjects");
  const Samples samples = gather(manifest, store);
  const auto S = samples.labels.size();
  if (S == 0) throw std::invalid_argument("train: manifest has no images");

  std::vector<int> widths{static_cast<int>(store.dims())};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(cfg.embedding_dim);

  TrainResult result;
  result.model = init_model(widths, static_cast<int>(manifest.entries.size()), cfg.head, cfg.seed);
  for (const auto& e : manifest.entries) result.identities.push_back(e.subject_id);
  SgdState state = SgdState::zeros_like(result.model);

  Rng shuffle_rng = make_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(S);
  long step = 0;
  Batch batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < S; ++i) order[i] = i;
    for (std::size_t i = S; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    for (std::size_t start = 0; start < S; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(S, start + static_cast<std::size_t>(cfg.batch_size));
      const auto B = static_cast<Eigen::Index>(end - start);
      batch.inputs.resize(samples.inputs.rows(), B);
      batch.labels.resize(static_cast<std::size_t>(B));
      for (Eigen::Index k = 0; k < B; ++k) {
        const auto idx = order[start + static_cast<std::size_t>(k)];
        batch.inputs.col(k) = samples.inputs.col(static_cast<Eigen::Index>(idx));
        batch.labels[static_cast<std::size_t>(k)] = samples.labels[idx];
      }
      LossResult lr;
      try {
        lr = loss_and_grad(result.model, batch);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("step {} (epoch {}): {}", step, epoch, e.what()));
      }
      if (!std::isfinite(lr.loss)) {
        std::string ids;
        for (std::size_t k = start; k < std::min(end, start + 8); ++k) {
          ids += (ids.empty() ? "" : ",") + *samples.ids[order[k]];
        }
        throw NumericError(fmt::format("non-finite loss at step {} (epoch {}), batch images [{}{}]", step,
                                       epoch, ids, end - start > 8 ? ",..." : ""));
      }
      sgd_step(result.model, lr.grads, state, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
      if (std::holds_alternative<CenterLoss>(cfg.head)) {
        center_update(result.model, lr.embeddings, batch.labels);
      }
      result.log.push_back({step, epoch, lr.loss});
      ++step;
    }
  }
  return result;
}

double training_accuracy(const EmbeddingModel& model, const DatasetManifest& manifest,
                         const FeatureStore& store) {
  const Samples s = gather(manifest, store);
  if (s.labels.empty()) return 0.0;
  const Eigen::MatrixXd E = embed_batch(model, s.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    const Eigen::VectorXd e = E.col(static_cast<Eigen::Index>(i));
    Eigen::VectorXd scores;
    if (is_angular(model.head)) {
      const Eigen::VectorXd wn = model.classifier.colwise().norm().transpose();
      scores = (model.classifier.transpose() * e).array() / wn.array();
    } else {
      scores = model.classifier.transpose() * e + model.classifier_bias;
    }
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    if (best == s.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(s.labels.size());
}

Eigen::MatrixXd embed_all(const EmbeddingModel& model, const FeatureStore& store,
                          std::span<const std::string> ids) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), model.embedding_dim());
  constexpr std::size_t kChunk = 256;
  Eigen::MatrixXd in;
  for (std::size_t start = 0; start < ids.size(); start += kChunk) {
    const std::size_t end = std::min(ids.size(), start + kChunk);
    in.resize(model.input_dim(), static_cast<Eigen::Index>(end - start));
    for (std::size_t k = start; k < end; ++k) {
      const auto row = store.at(ids[k]);
      if (row.size() != static_cast<std::size_t>(model.input_dim())) {
        throw std::invalid_argument("feature dimension does not match model input");
      }
      for (std::size_t d = 0; d < row.size(); ++d) {
        in(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k - start)) = row[d];
      }
    }
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        embed_batch(model, in).transpose();
  }
  return out;
}

void write_train_log(const std::filesystem::path& path, std::span<const TrainLogRow> log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,epoch,loss\n";
  for (const auto& r : log) out << fmt::format("{},{},{:.9g}\n", r.step, r.epoch, r.loss);
}

}  // namespace fairmix
