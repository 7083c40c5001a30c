#include <doctest.h>

#include <cmath>

#include "fairmix/embednet.hpp"
#include "fairmix/synth.hpp"
#include "gen.hpp"
#include "gradcheck.hpp"

using namespace fairmix;

namespace {

EmbeddingModel small_model(const LossHead& head, std::uint64_t seed, std::vector<int> widths = {6, 5, 4},
                           int identities = 3) {
  return init_model(widths, identities, head, seed);
}

// Straight-line forward pass: ReLU hidden layers, linear last layer.
Eigen::VectorXd oracle_embedding(const EmbeddingModel& m, const Eigen::VectorXd& x) {
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    Eigen::VectorXd z = m.weights[l] * a + m.biases[l];
    if (l + 1 < m.weights.size())
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = z(i) > 0 ? z(i) : 0.0;
    a = z;
  }
  return a;
}

Eigen::VectorXd oracle_logits(const EmbeddingModel& m, const Eigen::VectorXd& x) {
  const Eigen::VectorXd e = oracle_embedding(m, x);
  Eigen::VectorXd out(m.num_identities());
  for (int j = 0; j < m.num_identities(); ++j) {
    const Eigen::VectorXd w = m.classifier.col(j);
    if (std::holds_alternative<SphereFace>(m.head)) {
      out(j) = w.dot(e) / w.norm();
    } else if (const auto* a = std::get_if<ArcFace>(&m.head)) {
      out(j) = a->s * w.dot(e) / (w.norm() * e.norm());
    } else {
      out(j) = w.dot(e) + m.classifier_bias(j);
    }
  }
  return out;
}

double oracle_normalized_softmax_loss(const EmbeddingModel& m, const Batch& b, double s) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < b.inputs.cols(); ++i) {
    const Eigen::VectorXd e = oracle_embedding(m, b.inputs.col(i));
    Eigen::VectorXd z(m.num_identities());
    for (int j = 0; j < m.num_identities(); ++j)
      z(j) = s * m.classifier.col(j).dot(e) / (m.classifier.col(j).norm() * e.norm());
    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z.array() - mx).exp().sum());
    total += lse - z(b.labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(b.inputs.cols());
}

Batch random_batch(int input_dim, int n, int identities, testgen::Gen& g) {
  Batch b;
  b.inputs = g.matrix(input_dim, n);
  for (int i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(g.integer(0, identities - 1)));
  return b;
}

bool same_params(const EmbeddingModel& a, const EmbeddingModel& b) {
  for (std::size_t l = 0; l < a.weights.size(); ++l)
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  return a.classifier == b.classifier && a.classifier_bias == b.classifier_bias && a.centers == b.centers;
}

}  // namespace

TEST_CASE("zero-weight model gives zero logits") {
  auto m = small_model(SoftmaxCE{}, 1);
  for (auto& w : m.weights) w.setZero();
  for (auto& b : m.biases) b.setZero();
  m.classifier.setZero();
  m.classifier_bias.setZero();
  const std::vector<double> x{1, -2, 3, 0.5, 0, 4};
  CHECK(forward(m, x).logits.isZero(0.0));
}

TEST_CASE("single identity layer passes the input through") {
  auto m = init_model({3, 3}, 2, SoftmaxCE{}, 1);
  m.weights[0].setIdentity();
  m.biases[0].setZero();
  const std::vector<double> x{1, 0, 0};
  const auto r = forward(m, x);
  CHECK(r.embedding.isApprox(Eigen::Vector3d(1, 0, 0)));
}

TEST_CASE("forward logits match a straight-line oracle for every head") {
  testgen::Gen g(5);
  const std::vector<LossHead> heads{SoftmaxCE{}, CenterLoss{}, SphereFace{}, ArcFace{}};
  for (const auto& head : heads) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto m = small_model(head, seed, {7, 6, 5, 4}, 5);
      const Eigen::VectorXd x = g.matrix(7, 1).col(0);
      const auto r = forward(m, std::span<const double>(x.data(), 7));
      if (r.embedding.norm() == 0.0) continue;
      CHECK((r.embedding - oracle_embedding(m, x)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((r.logits - oracle_logits(m, x)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("forward rejects a wrong input size") {
  const auto m = small_model(SoftmaxCE{}, 1);
  const std::vector<double> x{1, 2, 3};
  CHECK_THROWS_AS(forward(m, x), std::invalid_argument);
}

TEST_CASE("two identities with uniform logits cost ln 2") {
  auto m = init_model({2, 2}, 2, SoftmaxCE{}, 1);
  m.classifier.setZero();
  m.classifier_bias.setZero();
  Batch b;
  b.inputs = Eigen::MatrixXd::Ones(2, 1);
  b.labels = {1};
  CHECK(loss_value(m, b) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(loss_and_grad(m, b).loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("margin-free unit-scale ArcFace is normalised softmax cross-entropy") {
  testgen::Gen g(9);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = small_model(ArcFace{1.0, 0.0}, seed, {5, 6, 3}, 4);
    const auto b = random_batch(5, 6, 4, g);
    if (embed_batch(m, b.inputs).colwise().norm().minCoeff() < 1e-6) continue;
    const double oracle = oracle_normalized_softmax_loss(m, b, 1.0);
    CHECK(loss_value(m, b) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(loss_and_grad(m, b).loss == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("gradients match central differences on a 3-identity, 4-dim instance") {
  const std::vector<LossHead> heads{SoftmaxCE{}, CenterLoss{0.5, 0.5}, SphereFace{4, 0.0}, SphereFace{2, 3.0},
                                    ArcFace{16.0, 0.5}};
  for (const auto& head : heads) {
    INFO(head_spec(head));
    testgen::Gen g(17);
    for (;;) {
      auto m = small_model(head, g.next(), {5, 6, 4}, 3);
      if (m.centers.size() > 0) m.centers = g.matrix(3, 4, 0.5);
      const auto b = random_batch(5, 6, 3, g);
      if (embed_batch(m, b.inputs).colwise().norm().minCoeff() < 1e-3) continue;
      const auto r = testgen::finite_difference_check(m, b, 1e-4);
      INFO("worst at " << r.worst_where << ": " << r.worst_relative);
      CHECK(r.ok());
      CHECK(r.compared == m.parameter_count() - static_cast<std::size_t>(m.centers.size()));
      break;
    }
  }
}

TEST_CASE("gradient property over random instances and seeds") {
  for (int kind = 0; kind < 4; ++kind) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto inst = testgen::random_instance(kind, seed);
      const auto r = testgen::finite_difference_check(inst.model, inst.batch, 1e-4);
      INFO(head_spec(inst.model.head) << " seed " << seed << " worst at " << r.worst_where << ": "
                                      << r.worst_relative << " abs " << r.worst_absolute);
      CHECK(r.ok());
    }
  }
}

TEST_CASE("angular logits depend on classifier columns only through their direction") {
  testgen::Gen g(3);
  for (const LossHead& head : {LossHead{SphereFace{}}, LossHead{ArcFace{}}}) {
    auto m = small_model(head, 4, {5, 6, 3}, 4);
    const auto b = random_batch(5, 5, 4, g);
    const double before = loss_value(m, b);
    const Eigen::VectorXd x = b.inputs.col(0);
    const auto logits = forward(m, std::span<const double>(x.data(), 5)).logits;
    m.classifier.col(2) *= 3.0;
    m.classifier.col(0) *= 0.25;
    CHECK(loss_value(m, b) == doctest::Approx(before).epsilon(1e-12));
    CHECK((forward(m, std::span<const double>(x.data(), 5)).logits - logits).cwiseAbs().maxCoeff() < 1e-12);
    normalize_classifier(m);
    CHECK(m.classifier.colwise().norm().maxCoeff() == doctest::Approx(1.0));
    CHECK(m.classifier.colwise().norm().minCoeff() == doctest::Approx(1.0));
  }
}

TEST_CASE("zero-norm embeddings are reported under angular heads") {
  auto m = small_model(ArcFace{}, 2);
  for (auto& w : m.weights) w.setZero();
  for (auto& b : m.biases) b.setZero();
  Batch b;
  b.inputs = Eigen::MatrixXd::Ones(6, 2);
  b.labels = {0, 1};
  CHECK_THROWS_AS(loss_and_grad(m, b), NumericError);
  CHECK_THROWS_AS(loss_value(m, b), NumericError);
  m.head = SphereFace{};
  CHECK_THROWS_AS(loss_and_grad(m, b), NumericError);
}

TEST_CASE("labels outside the classifier are rejected") {
  const auto m = small_model(SoftmaxCE{}, 2);
  Batch b;
  b.inputs = Eigen::MatrixXd::Ones(6, 1);
  b.labels = {3};
  CHECK_THROWS_AS(loss_and_grad(m, b), std::invalid_argument);
}

TEST_CASE("an SGD step with learning rate 0 leaves the model unchanged") {
  testgen::Gen g(8);
  for (const LossHead& head : {LossHead{SoftmaxCE{}}, LossHead{CenterLoss{}}, LossHead{SphereFace{}},
                               LossHead{ArcFace{}}}) {
    auto m = small_model(head, 6);
    const auto before = m;
    auto state = SgdState::zeros_like(m);
    const auto b = random_batch(6, 4, 3, g);
    const auto lg = loss_and_grad(m, b);
    sgd_step(m, lg.grads, state, 0.0, 0.9, 5e-4);
    CHECK(same_params(m, before));
  }
}

TEST_CASE("an SGD step moves against the gradient") {
  testgen::Gen g(12);
  auto m = small_model(SoftmaxCE{}, 6);
  auto state = SgdState::zeros_like(m);
  const auto b = random_batch(6, 8, 3, g);
  const double before = loss_value(m, b);
  sgd_step(m, loss_and_grad(m, b).grads, state, 1e-3, 0.0, 0.0);
  CHECK(loss_value(m, b) < before);
}

TEST_CASE("center update examples") {
  auto m = init_model({2, 2}, 3, CenterLoss{0.1, 1.0}, 1);
  m.centers << 1, 1, 2, 2, 3, 3;
  const auto original = m.centers;

  SUBCASE("one sample with alpha 1 moves the center halfway") {
    Eigen::MatrixXd e(2, 1);
    e << 5, -1;
    const std::vector<int> labels{1};
    center_update(m, e, labels);
    CHECK(m.centers.row(1).isApprox(Eigen::RowVector2d(2 - (2 - 5) / 2.0, 2 - (2 + 1) / 2.0)));
    CHECK(m.centers.row(0) == original.row(0));
    CHECK(m.centers.row(2) == original.row(2));
  }
  SUBCASE("two samples match the hand computation") {
    std::get<CenterLoss>(m.head).alpha = 0.5;
    Eigen::MatrixXd e(2, 2);
    e << 4, 0, 1, 7;
    const std::vector<int> labels{0, 0};
    center_update(m, e, labels);
    // delta = ((1-4) + (1-0), (1-1) + (1-7)) / 3 = (-2/3, -2)
    CHECK(m.centers(0, 0) == doctest::Approx(1 - 0.5 * (-2.0 / 3.0)));
    CHECK(m.centers(0, 1) == doctest::Approx(1 - 0.5 * (-2.0)));
  }
  SUBCASE("alpha 0 leaves the centers unchanged") {
    std::get<CenterLoss>(m.head).alpha = 0.0;
    Eigen::MatrixXd e = Eigen::MatrixXd::Random(2, 3);
    const std::vector<int> labels{0, 1, 2};
    center_update(m, e, labels);
    CHECK(m.centers == original);
  }
  SUBCASE("samples equal to their center leave it unchanged") {
    Eigen::MatrixXd e(2, 2);
    e << 3, 3, 3, 3;
    const std::vector<int> labels{2, 2};
    center_update(m, e, labels);
    CHECK(m.centers == original);
  }
  SUBCASE("non-center heads reject center updates") {
    auto other = init_model({2, 2}, 3, ArcFace{}, 1);
    const std::vector<int> labels{0};
    CHECK_THROWS_AS(center_update(other, Eigen::MatrixXd::Ones(2, 1), labels), std::logic_error);
  }
}

TEST_CASE("heads parse, print and validate") {
  CHECK(head_name(parse_head("arcface")) == "arcface");
  CHECK(head_name(parse_head("vggface2")) == "softmax");
  CHECK(head_name(parse_head("centerloss")) == "center");
  const auto a = std::get<ArcFace>(parse_head("arcface:s=30,m=0.35"));
  CHECK(a.s == 30.0);
  CHECK(a.m == 0.35);
  for (const char* spec : {"softmax", "center:lambda=0.01,alpha=0.3", "sphereface:m=3,blend=2", "arcface:s=8,m=0.2"})
    CHECK(head_spec(parse_head(head_spec(parse_head(spec)))) == head_spec(parse_head(spec)));
  CHECK_THROWS_AS(parse_head("sphereface:m=0"), std::invalid_argument);
  CHECK_THROWS_AS(parse_head("sphereface:m=1.5"), std::invalid_argument);
  CHECK_THROWS_AS(parse_head("arcface:m=3.2"), std::invalid_argument);
  CHECK_THROWS_AS(parse_head("arcface:s=0"), std::invalid_argument);
  CHECK_THROWS_AS(parse_head("center:lambda=-1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_head("triplet"), std::invalid_argument);
  CHECK_THROWS_AS(parse_head("arcface:q=1"), std::invalid_argument);
  CHECK(is_angular(ArcFace{}));
  CHECK_FALSE(is_angular(CenterLoss{}));
}

namespace {

struct TinyCorpus {
  SynthCorpus corpus;
  DatasetManifest manifest;
};

TinyCorpus separable_corpus() {
  SynthConfig sc;
  sc.dims = 16;
  sc.subjects_per_race = 10;
  sc.images_per_subject = 8;
  sc.sigma_between = 3.0;
  sc.sigma_within = 0.1;
  sc.seed = 21;
  TinyCorpus t{synth_corpus(sc), {}};
  const auto pool = build_subject_pool(t.corpus.catalog, 10, 8);
  t.manifest = single_race_manifest(pool, Race::Asian, 10, 3);
  return t;
}

}  // namespace

TEST_CASE("training separates well-separated identities for every head") {
  const auto t = separable_corpus();
  for (const LossHead& head : {LossHead{SoftmaxCE{}}, LossHead{CenterLoss{}}, LossHead{SphereFace{4, 20.0}},
                               LossHead{ArcFace{}}}) {
    TrainConfig cfg;
    cfg.head = head;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.hidden = {32};
    cfg.embedding_dim = 16;
    const auto r = train(t.manifest, t.corpus.features, cfg);
    INFO(head_spec(head));
    CHECK(r.model.num_identities() == 10);
    CHECK(training_accuracy(r.model, t.manifest, t.corpus.features) >= 0.95);
    for (const auto& row : r.log) CHECK(std::isfinite(row.loss));
    CHECK(r.log.size() == static_cast<std::size_t>(30 * 5));
  }
}

TEST_CASE("training is bit-for-bit deterministic") {
  const auto t = separable_corpus();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 7;
  const auto a = train(t.manifest, t.corpus.features, cfg);
  const auto b = train(t.manifest, t.corpus.features, cfg);
  CHECK(same_params(a.model, b.model));
  cfg.seed = 2;
  CHECK_FALSE(same_params(a.model, train(t.manifest, t.corpus.features, cfg).model));
}

TEST_CASE("train config preconditions") {
  const auto t = separable_corpus();
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(t.manifest, t.corpus.features, cfg), std::invalid_argument);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(t.manifest, t.corpus.features, cfg), std::invalid_argument);
}

TEST_CASE("embed_all matches per-image forward passes") {
  const auto t = separable_corpus();
  const auto m = init_model({16, 8, 4}, 10, ArcFace{}, 3);
  CHECK(embed_all(m, t.corpus.features, {}).rows() == 0);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 100; ++i) ids.push_back(t.corpus.catalog[i * 3].image_id);
  const auto table = embed_all(m, t.corpus.features, ids);
  REQUIRE(table.rows() == 100);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto f = t.corpus.features.at(ids[i]);
    std::vector<double> x(f.begin(), f.end());
    CHECK((table.row(static_cast<Eigen::Index>(i)).transpose() - forward(m, x).embedding).cwiseAbs().maxCoeff() <
          1e-12);
  }
  const std::vector<std::string> missing{"nope"};
  CHECK_THROWS(embed_all(m, t.corpus.features, missing));
}

TEST_CASE("checkpoints round-trip through float32") {
  const auto dir = testgen::scratch_dir("checkpoint");
  auto m = init_model({6, 5, 4}, 3, CenterLoss{0.01, 0.4}, 77);
  m.centers.setRandom();
  save_checkpoint(dir / "m.json", m);
  const auto back = load_checkpoint(dir / "m.json");
  CHECK(back.widths == m.widths);
  CHECK(head_spec(back.head) == head_spec(m.head));
  CHECK(back.seed == m.seed);
  for (std::size_t l = 0; l < m.weights.size(); ++l)
    CHECK(back.weights[l] == m.weights[l].cast<float>().cast<double>());
  CHECK(back.classifier == m.classifier.cast<float>().cast<double>());
  CHECK(back.centers == m.centers.cast<float>().cast<double>());

  save_checkpoint(dir / "again.json", back);
  CHECK(testgen::slurp(dir / "again.json.bin") == testgen::slurp(dir / "m.json.bin"));

  auto blob = testgen::slurp(dir / "m.json.bin");
  testgen::spit(dir / "m.json.bin", blob.substr(0, blob.size() - 4));
  CHECK_THROWS(load_checkpoint(dir / "m.json"));
  testgen::spit(dir / "m.json.bin", blob + "xxxx");
  CHECK_THROWS(load_checkpoint(dir / "m.json"));
}

TEST_CASE("training log is written as step, epoch, loss") {
  const auto dir = testgen::scratch_dir("trainlog");
  const std::vector<TrainLogRow> log{{1, 0, 2.5}, {2, 1, 1.25}};
  write_train_log(dir / "log.csv", log);
  const auto text = testgen::slurp(dir / "log.csv");
  CHECK(text.rfind("step,epoch,loss\n", 0) == 0);
  CHECK(testgen::count_occurrences(text, "\n") == 3);
}
