#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "abe/errors.hpp"
#include "abe/model.hpp"
#include "abe/random.hpp"
#include "test_util.hpp"

using namespace abe;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("abe_test_model_" + name);
}

bool params_bitwise_equal(const Model& a, const Model& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i].name != b.params()[i].name || !(a.params()[i].value == b.params()[i].value)) return false;
  }
  return true;
}

double accuracy(const Model& m, const Dataset& d) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < d.size(); ++i) ok += m.predict(d.inputs[i]) == d.labels[i];
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

}  // namespace

TEST_CASE("build") {
  SUBCASE("deterministic in the seed") {
    auto a = build_model(ModelKind::Linear, {2}, 1, 7);
    auto b = build_model(ModelKind::Linear, {2}, 1, 7);
    CHECK(params_bitwise_equal(a, b));
    auto c = build_model(ModelKind::Linear, {2}, 1, 8);
    CHECK_FALSE(params_bitwise_equal(a, c));
  }
  SUBCASE("MLP parameter count") {
    auto m = build_model(ModelKind::MLP, {64}, 10, 1, {32});
    CHECK(m.param_count() == 64 * 32 + 32 + 32 * 10 + 10);
    CHECK(m.param_count() == 2410);
  }
  SUBCASE("TinyCNN on zeros gives finite logits") {
    auto m = build_model(ModelKind::TinyCNN, {8, 8, 1}, 4, 3);
    Tensor out = m.logits(Tensor({8, 8, 1}, 0.0));
    CHECK(out.shape() == Shape{4});
    CHECK(out.all_finite());
  }
  SUBCASE("Glorot bounds") {
    auto m = build_model(ModelKind::MLP, {10}, 3, 9, {6});
    const double s = std::sqrt(6.0 / 16.0);
    CHECK(max_abs(m.param("layer0.weight")) <= s);
    CHECK(max_abs(m.param("layer0.bias")) == 0.0);
  }
  SUBCASE("incompatible shapes") {
    CHECK_THROWS_AS(build_model(ModelKind::TinyCNN, {6, 6, 1}, 4, 0), UsageError);
    CHECK_THROWS_AS(build_model(ModelKind::TinyCNN, {64}, 4, 0), UsageError);
    CHECK_THROWS_AS(build_model(ModelKind::MLP, {4}, 2, 0), UsageError);
  }
  SUBCASE("forward rejects wrong input size") {
    auto m = build_model(ModelKind::Linear, {3}, 2, 0);
    CHECK_THROWS_AS(m.logits(Tensor::vector({1, 2})), ShapeError);
  }
}

TEST_CASE("model gradients match finite differences") {
  Rng rng = make_rng(17);
  auto m = build_model(ModelKind::TinyCNN, {8, 8, 1}, 4, 21);
  const Tensor x = uniform_tensor({8, 8, 1}, 0, 1, rng);
  std::function<Var(Tape&, Var)> f = [&](Tape& t, Var v) { return index(m.forward(t, v), 2); };
  const Tensor ad = testing::autodiff_gradient(f, x);
  const Tensor fd = testing::numeric_gradient([&](const Tensor& p) { return testing::eval_scalar(f, p); }, x);
  CHECK(testing::max_relative_error(ad, fd) < 1e-5);
}

TEST_CASE("training") {
  SUBCASE("logistic regression separates blobs") {
    Dataset d = make_blobs(200, 1);
    // Closed-form separator x1 + x2 = 0 classifies the blobs.
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.size(); ++i) ok += ((d.inputs[i][0] + d.inputs[i][1]) > 0) == (d.labels[i] == 1);
    REQUIRE(static_cast<double>(ok) / d.size() >= 0.95);

    auto m = build_model(ModelKind::LogisticRegression, {2}, 2, 3);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 4;
    auto r = train(m, d, cfg);
    CHECK(accuracy(r.model, d) >= 0.95);
    CHECK(r.curve.back().loss < r.curve.front().loss);
    CHECK(r.curve.size() == cfg.epochs + 1);

    SUBCASE("reproducible") {
      auto r2 = train(m, d, cfg);
      CHECK(params_bitwise_equal(r.model, r2.model));
    }
    SUBCASE("gradient norm decreases over the last 10 epochs (3-epoch moving average)") {
      const auto& c = r.curve;
      std::vector<double> smooth;
      for (std::size_t e = c.size() - 12; e < c.size(); ++e) {
        smooth.push_back((c[e - 2].grad_norm + c[e - 1].grad_norm + c[e].grad_norm) / 3.0);
      }
      for (std::size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] <= smooth[i - 1] * (1.0 + 1e-9));
    }
  }
  SUBCASE("constant labels") {
    Dataset d = make_blobs(40, 2);
    for (auto& l : d.labels) l = 1;
    auto m = build_model(ModelKind::MLP, {2}, 3, 5, {8});
    TrainConfig cfg;
    cfg.epochs = 10;
    auto r = train(m, d, cfg);
    for (const auto& x : d.inputs) CHECK(r.model.predict(x) == 1);
  }
  SUBCASE("TinyCNN learns bars and crosses") {
    Dataset d = make_bars_crosses(400, 7);
    // Nearest-template oracle classifies the noisy patterns perfectly.
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      double best = 1e300;
      std::size_t best_label = 0;
      for (std::size_t label = 0; label < 4; ++label)
        for (std::size_t r = 0; r < 8; ++r)
          for (std::size_t c = 0; c < 8; ++c) {
            if ((label == 0 && (r > 6 || c > 0)) || (label == 1 && (c > 6 || r > 0)) ||
                (label == 3 && (r > 0 || c > 0)) || (label == 2 && (r < 2 || r > 5 || c < 2 || c > 5)))
              continue;
            const Tensor t = bars_crosses_template(label, r, c);
            const double dist = dot(t - d.inputs[i], t - d.inputs[i]);
            if (dist < best) {
              best = dist;
              best_label = label;
            }
          }
      ok += best_label == d.labels[i];
    }
    REQUIRE(ok == d.size());

    auto m = build_model(ModelKind::TinyCNN, {8, 8, 1}, 4, 11);
    TrainConfig cfg;
    cfg.epochs = 25;
    cfg.learning_rate = 0.05;
    auto r = train(m, d, cfg);
    CHECK(accuracy(r.model, d) >= 0.9);
    Dataset held_out = make_bars_crosses(200, 99);
    CHECK(accuracy(r.model, held_out) >= 0.9);
  }
  SUBCASE("errors") {
    Dataset empty;
    empty.meta.num_classes = 2;
    auto m = build_model(ModelKind::LogisticRegression, {2}, 2, 0);
    CHECK_THROWS_AS(train(m, empty, TrainConfig{}), DataError);
    Dataset d = make_blobs(10, 0);
    d.labels[3] = 5;
    CHECK_THROWS_AS(train(m, d, TrainConfig{}), DataError);
    TrainConfig bad;
    bad.learning_rate = 0;
    CHECK_THROWS_AS(train(m, make_blobs(10, 0), bad), UsageError);
  }
  SUBCASE("divergence names the epoch") {
    Dataset d = make_blobs(20, 0);
    for (auto& x : d.inputs) x = scaled(x, 1e150);
    auto m = build_model(ModelKind::LogisticRegression, {2}, 2, 0);
    TrainConfig cfg;
    cfg.learning_rate = 1e150;
    try {
      train(m, d, cfg);
      FAIL("expected divergence");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }
}

TEST_CASE("weight files") {
  auto m = build_model(ModelKind::TinyCNN, {8, 8, 1}, 4, 5);
  const auto path = temp_path("weights.abew");
  save_weights(m, path);

  SUBCASE("round trip is bitwise") {
    auto back = load_weights(path);
    CHECK(back.kind() == m.kind());
    CHECK(back.hyper() == m.hyper());
    CHECK(params_bitwise_equal(m, back));
    auto mlp = build_model(ModelKind::MLP, {5}, 3, 2, {4, 3}, Activation::Sigmoid);
    save_weights(mlp, path);
    auto mlp_back = load_weights(path);
    CHECK(mlp_back.hyper() == mlp.hyper());
    CHECK(params_bitwise_equal(mlp, mlp_back));
  }
  SUBCASE("corrupted payload fails the checksum") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    const auto size = static_cast<long>(f.tellg());
    f.seekp(size - 20);
    char c;
    f.seekg(size - 20);
    f.get(c);
    f.seekp(size - 20);
    f.put(static_cast<char>(c ^ 0x5A));
    f.close();
    try {
      load_weights(path);
      FAIL("expected checksum error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }
  SUBCASE("wrong magic and version") {
    {
      std::ofstream f(path, std::ios::binary);
      f << "GARBAGE-NOT-WEIGHTS";
    }
    try {
      load_weights(path);
      FAIL("expected format error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
    {
      std::ofstream f(path, std::ios::binary);
      f << "ABEW2xxxxxxxxxxxx";
    }
    try {
      load_weights(path);
      FAIL("expected version error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }
  SUBCASE("truncated") {
    std::filesystem::resize_file(path, 30);
    CHECK_THROWS_AS(load_weights(path), DataError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("equivalent pairs") {
  Rng rng = make_rng(33);
  auto probe_diff = [&](const Model& a, const Model& b) {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Tensor x = uniform_tensor(a.hyper().input_shape, -1, 1, rng);
      worst = std::max(worst, max_abs_diff(a.logits(x), b.logits(x)));
    }
    return worst;
  };
  SUBCASE("permuted MLP hidden units") {
    auto m = build_model(ModelKind::MLP, {6}, 3, 1, {10});
    auto [a, b] = make_equivalent_pair(m, 4);
    CHECK_FALSE(params_bitwise_equal(a, b));
    CHECK(probe_diff(a, b) < 1e-12);
  }
  SUBCASE("linear model versus factored identity MLP") {
    auto m = build_model(ModelKind::Linear, {5}, 2, 1);
    m.param("dense.bias") = Tensor::vector({0.3, -0.2});
    auto [a, b] = make_equivalent_pair(m, 4);
    CHECK(b.kind() == ModelKind::MLP);
    CHECK(b.hyper().activation == Activation::Identity);
    CHECK(probe_diff(a, b) < 1e-10);
  }
  SUBCASE("unsupported kinds") {
    CHECK_THROWS_AS(make_equivalent_pair(build_model(ModelKind::TinyCNN, {8, 8, 1}, 2, 0)), UsageError);
    CHECK_THROWS_AS(make_equivalent_pair(build_model(ModelKind::MLP, {3}, 2, 0, {4, 4})), UsageError);
  }
}

TEST_CASE("loss curve csv") {
  const auto path = temp_path("curve.csv");
  write_loss_curve_csv(path, {{0, 1.5, 0.25, 0}, {1, 0.5, 0.75, 0}});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,loss,accuracy");
  CHECK(row == "0,1.5,0.25");
  std::filesystem::remove(path);
}
