#include "support.hpp"

#include <algorithm>

#include "gbe/lid.hpp"

using namespace gbe;
using testing::tensor;

namespace {

ModelConfig config(int groups, int d_w) {
  ModelConfig cfg;
  cfg.groups = groups;
  cfg.embed_dim = d_w;
  return cfg;
}

void set_identity(const Linear<double>& l) {
  auto& w = l.weight.mutable_value();
  w.fill(0.0);
  for (int i = 0; i < std::min(w.dim(0), w.dim(1)); ++i) w.at({i, i}) = 1.0;
}

void zero(const Linear<double>& l) {
  l.weight.mutable_value().fill(0.0);
  if (l.bias) l.bias.mutable_value().fill(0.0);
}

}  // namespace

TEST_CASE("split groups examples") {
  std::mt19937_64 rng(1);
  auto f = constant(testing::random_tensor<double>({128, 2, 2}, rng));
  auto one = split_groups(f, 1, 128);
  REQUIRE(one.size() == 1);
  CHECK(one[0].value() == f.value());
  auto eight = split_groups(f, 8, 16);
  REQUIRE(eight.size() == 8);
  for (const auto& g : eight) CHECK(g.shape() == Shape{16, 2, 2});
  CHECK(concat_channels(eight).value() == f.value());
  CHECK_THROWS_AS(split_groups(f, 7, 16), ConfigError);
  CHECK_THROWS_AS(split_groups(f, 0, 16), ConfigError);
}

TEST_CASE("split then concat round trip on random maps") {
  std::mt19937_64 rng(2);
  for (int n : {1, 2, 3, 5})
    for (int d : {1, 4}) {
      auto f = constant(testing::random_tensor<double>({n * d, 3, 2}, rng));
      CHECK(concat_channels(split_groups(f, n, d)).value() == f.value());
    }
}

TEST_CASE("identity embedding tokenizes to the transposed flatten") {
  auto cfg = config(1, 2);
  Rng rng(3);
  Lid<double> lid(cfg, rng);
  const auto& w = lid.set(0);
  set_identity(w.embed);
  auto g = constant(tensor<double>({2, 1, 3}, {1, 2, 3, 4, 5, 6}));
  auto t = lid.tokenize(g);
  CHECK(t.value() == tensor<double>({3, 2}, {1, 4, 2, 5, 3, 6}));
  auto single = lid.tokenize(constant(tensor<double>({2, 1, 1}, {7, 8})));
  CHECK(single.shape() == Shape{1, 2});
}

TEST_CASE("token count equals spatial size") {
  std::mt19937_64 rng(4);
  for (int h : {1, 2, 5})
    for (int w : {1, 3}) {
      auto cfg = config(1, 4);
      Rng prng(5);
      Lid<double> lid(cfg, prng);
      auto t = lid.tokenize(constant(testing::random_tensor<double>({4, h, w}, rng)));
      CHECK(t.dim(0) == h * w);
      CHECK(t.dim(1) == 4);
    }
}

TEST_CASE("zero value projection makes attention a pure residual") {
  auto cfg = config(1, 4);
  Rng rng(6);
  Lid<double> lid(cfg, rng);
  zero(lid.set(0).wv);
  std::mt19937_64 data(7);
  auto t = constant(testing::random_tensor<double>({6, 4}, data));
  CHECK(lid.attention_enhance(t).out.value() == t.value());
}

TEST_CASE("single token attends to itself") {
  auto cfg = config(1, 3);
  Rng rng(8);
  Lid<double> lid(cfg, rng);
  std::mt19937_64 data(9);
  auto t = constant(testing::random_tensor<double>({1, 3}, data));
  auto r = lid.attention_enhance(t);
  CHECK(r.attention.value()[0] == doctest::Approx(1.0));
  auto v = lid.set(0).wv(t);
  for (int j = 0; j < 3; ++j) CHECK(r.out.value()[j] == doctest::Approx(t.value()[j] + v.value()[j]));
}

TEST_CASE("attention rows are probability distributions") {
  std::mt19937_64 data(10);
  for (bool scaled : {true, false}) {
    auto cfg = config(1, 4);
    cfg.attention_scale = scaled;
    Rng rng(11);
    Lid<double> lid(cfg, rng);
    for (int trial = 0; trial < 10; ++trial) {
      auto t = constant(testing::random_tensor<double>({9, 4}, data, 3.0));
      const auto a = lid.attention_enhance(t).attention.value();
      REQUIRE(a.shape() == Shape{9, 9});
      for (int i = 0; i < 9; ++i) {
        double total = 0;
        for (int j = 0; j < 9; ++j) {
          CHECK(a.at({i, j}) >= 0);
          total += a.at({i, j});
        }
        CHECK(std::abs(total - 1) < 1e-6);
      }
    }
  }
}

TEST_CASE("feed forward with zero weights is the identity") {
  auto cfg = config(1, 4);
  Rng rng(12);
  Lid<double> lid(cfg, rng);
  const auto& w = lid.set(0);
  zero(w.ffn1);
  zero(w.ffn2);
  std::mt19937_64 data(13);
  auto x = constant(testing::random_tensor<double>({5, 4}, data));
  CHECK(lid.feed_forward_refine(x).value() == x.value());
}

TEST_CASE("feed forward preserves shape and matches finite differences") {
  auto cfg = config(1, 3);
  Rng rng(14);
  Lid<double> lid(cfg, rng);
  std::mt19937_64 data(15);
  for (int rows : {1, 4, 7}) {
    auto x = constant(testing::random_tensor<double>({rows, 3}, data));
    CHECK(lid.feed_forward_refine(x).shape() == x.shape());
  }
  auto x = parameter(testing::random_tensor<double>({4, 3}, data));
  auto proj = testing::random_tensor<double>({4, 3}, data);
  ParamList<double> params{{"x", x}};
  lid.collect(params);
  GradcheckOptions opts;
  opts.step = 1e-6;
  opts.max_coords = 0;
  opts.skip_kinks = true;
  for (const auto& c : check_gradients<double>(params, [&] { return sum(mul(lid.feed_forward_refine(x), constant(proj))); }, opts)) {
    INFO(c.name);
    CHECK(c.rel_error < 1e-3);
  }
}

TEST_CASE("pooling over tokens is a per-dimension max") {
  CHECK(column_max(constant(tensor<double>({2, 2}, {1, 5, 3, 2}))).value() == tensor<double>({2}, {3, 5}));
  CHECK(column_max(constant(tensor<double>({1, 3}, {4, -1, 2}))).value() == tensor<double>({3}, {4, -1, 2}));
  std::mt19937_64 data(16);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = testing::random_tensor<double>({6, 4}, data);
    auto pooled = column_max(constant(x)).value();
    for (int j = 0; j < 4; ++j) {
      double best = x.at({0, j});
      for (int i = 1; i < 6; ++i) best = std::max(best, x.at({i, j}));
      CHECK(pooled[static_cast<std::size_t>(j)] == best);
    }
  }
}

TEST_CASE("local semantics is n x d_w and groups do not leak") {
  auto cfg = config(3, 4);
  Rng rng(17);
  Lid<double> lid(cfg, rng);
  std::mt19937_64 data(18);
  std::vector<Var<double>> groups;
  for (int m = 0; m < 3; ++m) groups.push_back(constant(testing::random_tensor<double>({4, 3, 3}, data)));
  const auto base = lid.local_semantics(groups).value();
  CHECK(base.shape() == Shape{3, 4});
  auto zeroed = groups;
  zeroed[1] = constant(Tensor<double>({4, 3, 3}));
  const auto after = lid.local_semantics(zeroed).value();
  for (int j = 0; j < 4; ++j) {
    CHECK(after.at({0, j}) == base.at({0, j}));
    CHECK(after.at({2, j}) == base.at({2, j}));
    CHECK(after.at({1, j}) == 0.0);
  }
}

TEST_CASE("token permutation permutes attention output and leaves pooled vectors unchanged") {
  auto cfg = config(1, 4);
  Rng rng(19);
  Lid<double> lid(cfg, rng);
  std::mt19937_64 data(20);
  auto t = testing::random_tensor<double>({6, 4}, data);
  std::vector<int> perm{3, 0, 5, 1, 4, 2};
  Tensor<double> tp({6, 4});
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) tp.at({i, j}) = t.at({perm[static_cast<std::size_t>(i)], j});
  const auto out = lid.attention_enhance(constant(t)).out.value();
  const auto outp = lid.attention_enhance(constant(tp)).out.value();
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) CHECK(std::abs(outp.at({i, j}) - out.at({perm[static_cast<std::size_t>(i)], j})) < 1e-9);

  Tensor<double> map({4, 2, 3}), mapp({4, 2, 3});
  for (int c = 0; c < 4; ++c)
    for (int p = 0; p < 6; ++p) {
      map[static_cast<std::size_t>(c * 6 + p)] = t.at({p, c});
      mapp[static_cast<std::size_t>(c * 6 + p)] = tp.at({p, c});
    }
  const auto a = lid.enhance_group(constant(map), 0).value(), b = lid.enhance_group(constant(mapp), 0).value();
  for (int j = 0; j < 4; ++j) CHECK(std::abs(a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]) < 1e-9);
}

TEST_CASE("per-group weights are independent sets") {
  auto cfg = config(3, 2);
  cfg.per_group_weights = true;
  Rng rng(21);
  Lid<double> lid(cfg, rng);
  ParamList<double> params;
  lid.collect(params);
  CHECK(params.size() == 3 * 9);
  CHECK(&lid.set(0) != &lid.set(1));
}
