#include <cmath>
#include <numbers>

#include "doctest.h"
#include "../helpers.hpp"
#include "permweld/error.hpp"
#include "permweld/train.hpp"

using namespace permweld;

TEST_SUITE("train") {
  TEST_CASE("config json round trip and unknown keys") {
    TrainConfig c;
    c.optimizer = OptimizerKind::adam;
    c.learning_rate = 0.003;
    c.epochs = 7;
    c.seed = 42;
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS_AS(train_config_from_json({{"lr", 0.1}}), ConfigError);
    CHECK_THROWS_AS(train_config_from_json({{"optimizer", "rmsprop"}}), ConfigError);
    TrainConfig bad;
    bad.learning_rate = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("cosine schedule") {
    TrainConfig c;
    c.learning_rate = 0.2;
    CHECK(scheduled_rate(c, 0, 100) == doctest::Approx(0.2));
    CHECK(scheduled_rate(c, 50, 100) == doctest::Approx(0.1));
    CHECK(scheduled_rate(c, 100, 100) == doctest::Approx(0.0));
    c.cosine_decay = false;
    CHECK(scheduled_rate(c, 70, 100) == doctest::Approx(0.2));
  }

  TEST_CASE("momentum SGD update") {
    TrainConfig c;
    c.momentum = 0.5;
    c.weight_decay = 0.1;
    const MlpSpec spec = testing::spec_of({1, 1});
    MlpParams p = zero_params(spec);
    p.layers[0].weight(0, 0) = 1.0f;
    GradBundle g = zero_grad(spec);
    g.layers[0].weight(0, 0) = 2.0f;
    Optimizer opt(c, spec);
    opt.step(p, g, 0.1);  // v = 2 + 0.1 = 2.1, w = 1 - 0.21
    CHECK(p.layers[0].weight(0, 0) == doctest::Approx(0.79));
    opt.step(p, g, 0.1);  // v = 0.5 * 2.1 + 2 + 0.079 = 3.129
    CHECK(p.layers[0].weight(0, 0) == doctest::Approx(0.79 - 0.3129));
  }

  TEST_CASE("adam first step moves by the learning rate") {
    TrainConfig c;
    c.optimizer = OptimizerKind::adam;
    c.weight_decay = 0;
    const MlpSpec spec = testing::spec_of({1, 1});
    MlpParams p = zero_params(spec);
    GradBundle g = zero_grad(spec);
    g.layers[0].weight(0, 0) = -3.0f;
    g.layers[0].bias[0] = 0.5f;
    Optimizer opt(c, spec);
    opt.step(p, g, 0.01);
    CHECK(p.layers[0].weight(0, 0) == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(p.layers[0].bias[0] == doctest::Approx(-0.01).epsilon(1e-4));
  }

  TEST_CASE("training is deterministic and learns separable blobs") {
    const Dataset d = gen_blobs(3, 60, 5, 0.15, 4);
    TrainConfig c;
    c.learning_rate = 0.1;
    c.epochs = 15;
    c.batch_size = 16;
    c.seed = 5;
    const MlpSpec spec = testing::spec_of({5, 16, 3});
    std::size_t calls = 0;
    const TrainResult r1 = train(d, spec, c, [&](const EpochStats&) { ++calls; });
    const TrainResult r2 = train(d, spec, c);
    CHECK(calls == 15);
    CHECK(r1.checkpoint.params == r2.checkpoint.params);
    CHECK(r1.history.size() == 15);
    CHECK(r1.history.back().loss < r1.history.front().loss);
    CHECK(evaluate(r1.checkpoint.params, d).accuracy > 0.9);
    CHECK(r1.checkpoint.metadata["dataset"] == d.name);
    c.seed = 6;
    CHECK_FALSE(train(d, spec, c).checkpoint.params == r1.checkpoint.params);
  }

  TEST_CASE("diverging training raises a numeric error") {
    const Dataset d = gen_blobs(3, 20, 5, 0.15, 4);
    TrainConfig c;
    c.learning_rate = 1e30;
    c.epochs = 3;
    CHECK_THROWS_AS(train(d, testing::spec_of({5, 8, 3}), c), NumericError);
  }

  TEST_CASE("mixed evaluation is the alpha-weighted combination") {
    const MlpParams p = init_params(testing::spec_of({4, 6, 3}), 2);
    const Dataset a = testing::random_dataset(13, 4, 3, 1), b = testing::random_dataset(29, 4, 3, 2);
    for (const double alpha : {0.0, 0.3, 0.5, 1.0}) {
      const LossAccuracy m = evaluate(p, mix(testing::share(a), testing::share(b), alpha));
      const LossAccuracy la = evaluate(p, a), lb = evaluate(p, b);
      CHECK(std::abs(m.loss - ((1 - alpha) * la.loss + alpha * lb.loss)) <= 1e-12);
      CHECK(std::abs(m.accuracy - ((1 - alpha) * la.accuracy + alpha * lb.accuracy)) <= 1e-12);
    }
  }

  TEST_CASE("ensemble of a model with itself equals the model") {
    const MlpParams p = init_params(testing::spec_of({4, 6, 3}), 2);
    const Dataset d = testing::random_dataset(50, 4, 3, 8);
    CHECK(ensemble_accuracy(p, p, d) == doctest::Approx(evaluate(p, d).accuracy));
  }

  TEST_CASE("checkpoint round trip and corruption") {
    testing::TempDir dir("ckpt");
    Checkpoint ck;
    ck.spec = testing::spec_of({3, 4, 2}, false);
    ck.params = init_params(ck.spec, 3);
    ck.metadata = {{"note", "x"}, {"n", 3}};
    save_checkpoint(ck, dir / "m.pmck");
    const Checkpoint back = load_checkpoint(dir / "m.pmck");
    CHECK(back.spec == ck.spec);
    CHECK(back.params == ck.params);
    CHECK(back.metadata == ck.metadata);

    const std::string bytes = testing::read_bytes(dir / "m.pmck");
    CHECK(bytes.substr(0, 4) == "PMCK");
    testing::write_bytes(dir / "magic.pmck", "XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.pmck"), FormatError);
    testing::write_bytes(dir / "short.pmck", bytes.substr(0, 30));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.pmck"), IoError);
    testing::write_bytes(dir / "long.pmck", bytes + "z");
    CHECK_THROWS_AS(load_checkpoint(dir / "long.pmck"), FormatError);
    CHECK(file_digest(dir / "m.pmck") == sha256_hex(bytes));
  }

  TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}
