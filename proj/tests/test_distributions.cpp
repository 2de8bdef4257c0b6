#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gblab/distributions.hpp"
#include "gblab/rng.hpp"

using gblab::Rng;
using gblab::Tensor;
namespace ad = gblab::ad;
namespace dist = gblab::dist;
using D = double;
using Var = ad::Var<D>;
using Tape = ad::Tape<D>;

namespace {

dist::DiagGaussVar<D> leaf_gauss(Tape& tape, Tensor<D> mean, Tensor<D> log_var,
                                 bool requires_grad = true) {
  return {tape.leaf(std::move(mean), requires_grad),
          tape.leaf(std::move(log_var), requires_grad)};
}

}  // namespace

TEST_CASE("sample_reparam returns mean + exp(log_var / 2) * noise") {
  Tape tape;
  SUBCASE("zero mean, zero noise") {
    auto d = leaf_gauss(tape, Tensor<D>::zeros({1, 1}), Tensor<D>::zeros({1, 1}));
    Var z = dist::sample_reparam(d, tape.constant(Tensor<D>::zeros({1, 1})));
    CHECK(z.value()[0] == 0.0);
  }
  SUBCASE("unit std shifts by the noise") {
    auto d = leaf_gauss(tape, Tensor<D>::full({1, 1}, 3.0), Tensor<D>::zeros({1, 1}));
    Var z = dist::sample_reparam(d, tape.constant(Tensor<D>::full({1, 1}, 1.0)));
    CHECK(z.value()[0] == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("hand-evaluated sigma") {
    auto d = leaf_gauss(tape, Tensor<D>::full({1, 1}, 1.0),
                        Tensor<D>::full({1, 1}, std::log(4.0)));
    Var z = dist::sample_reparam(d, tape.constant(Tensor<D>::full({1, 1}, 0.5)));
    CHECK(z.value()[0] == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("noise of zero returns the mean exactly") {
    Rng rng(3);
    Tensor<D> mean = Tensor<D>::randn({4, 8}, rng);
    auto d = leaf_gauss(tape, mean.clone(), Tensor<D>::randn({4, 8}, rng));
    Var z = dist::sample_reparam(d, tape.constant(Tensor<D>::zeros({4, 8})));
    for (int64_t i = 0; i < mean.numel(); ++i) CHECK(z.value()[i] == mean[i]);
  }
  SUBCASE("shape mismatch is rejected") {
    auto d = leaf_gauss(tape, Tensor<D>::zeros({2, 3}), Tensor<D>::zeros({2, 3}));
    CHECK_THROWS_AS(dist::sample_reparam(d, tape.constant(Tensor<D>::zeros({2, 4}))),
                    gblab::InvalidArgument);
  }
}

TEST_CASE("kl_diag_gauss closed form") {
  Tape tape;
  SUBCASE("identical distributions give exactly zero") {
    Rng rng(5);
    Tensor<D> mean = Tensor<D>::randn({3, 8}, rng);
    Tensor<D> lv = Tensor<D>::randn({3, 8}, rng);
    auto q = leaf_gauss(tape, mean.clone(), lv.clone());
    auto p = leaf_gauss(tape, mean.clone(), lv.clone());
    Var kl = dist::kl_diag_gauss(q, p);
    for (int64_t i = 0; i < 3; ++i) CHECK(std::abs(kl.value()[i]) <= 1e-12);
  }
  SUBCASE("standard prior, scalar latent: mu^2 / 2") {
    const double mu = 1.7;
    auto q = leaf_gauss(tape, Tensor<D>::full({1, 1}, mu), Tensor<D>::zeros({1, 1}));
    auto p = leaf_gauss(tape, Tensor<D>::zeros({1, 1}), Tensor<D>::zeros({1, 1}));
    CHECK(dist::kl_diag_gauss(q, p).value()[0] ==
          doctest::Approx(mu * mu / 2.0).epsilon(1e-12));
  }
  SUBCASE("non-negative on 1000 random pairs") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
      auto q = leaf_gauss(tape, Tensor<D>::randn({1, 4}, rng),
                          Tensor<D>::randn({1, 4}, rng), false);
      auto p = leaf_gauss(tape, Tensor<D>::randn({1, 4}, rng),
                          Tensor<D>::randn({1, 4}, rng), false);
      CHECK(dist::kl_diag_gauss(q, p).value()[0] >= 0.0);
    }
  }
  SUBCASE("matches a Monte-Carlo estimate on a random 8-dim pair") {
    Rng rng(11);
    Tensor<D> mq = Tensor<D>::randn({1, 8}, rng);
    Tensor<D> lq = Tensor<D>::rand_uniform({1, 8}, rng, -1.0, 1.0);
    Tensor<D> mp = Tensor<D>::randn({1, 8}, rng);
    Tensor<D> lp = Tensor<D>::rand_uniform({1, 8}, rng, -1.0, 1.0);
    auto q = leaf_gauss(tape, mq.clone(), lq.clone(), false);
    auto p = leaf_gauss(tape, mp.clone(), lp.clone(), false);
    const double analytic = dist::kl_diag_gauss(q, p).value()[0];

    // MC estimate of E_q[log q(z) - log p(z)].
    const int n = 1000000;
    double sum = 0.0, sum_sq = 0.0;
    for (int it = 0; it < n; ++it) {
      double diff = 0.0;
      for (int64_t d = 0; d < 8; ++d) {
        const double sq = std::exp(0.5 * lq[d]), sp = std::exp(0.5 * lp[d]);
        const double z = mq[d] + sq * rng.normal();
        const double dq = (z - mq[d]) / sq, dp = (z - mp[d]) / sp;
        diff += -0.5 * dq * dq - 0.5 * lq[d] + 0.5 * dp * dp + 0.5 * lp[d];
      }
      sum += diff;
      sum_sq += diff * diff;
    }
    const double mc = sum / n;
    const double se = std::sqrt((sum_sq / n - mc * mc) / n);
    CHECK(std::abs(analytic - mc) <= 3.0 * se);
  }
  SUBCASE("shape mismatch is rejected") {
    auto q = leaf_gauss(tape, Tensor<D>::zeros({2, 3}), Tensor<D>::zeros({2, 3}));
    auto p = leaf_gauss(tape, Tensor<D>::zeros({2, 4}), Tensor<D>::zeros({2, 4}));
    CHECK_THROWS_AS(dist::kl_diag_gauss(q, p), gblab::InvalidArgument);
  }
}

TEST_CASE("gauss_log_prob evaluates the normal density") {
  Tape tape;
  SUBCASE("peak of the unit gaussian") {
    Var lp = dist::gauss_log_prob(tape.constant(Tensor<D>::full({1}, 0.3)),
                                  tape.constant(Tensor<D>::full({1}, 0.3)), 1.0);
    CHECK(lp.value()[0] == doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-12));
  }
  SUBCASE("one sigma away costs exactly one half") {
    const double sigma = 0.7;
    Var peak = dist::gauss_log_prob(tape.constant(Tensor<D>::full({1}, 0.0)),
                                    tape.constant(Tensor<D>::full({1}, 0.0)), sigma);
    Var off = dist::gauss_log_prob(tape.constant(Tensor<D>::full({1}, sigma)),
                                   tape.constant(Tensor<D>::full({1}, 0.0)), sigma);
    CHECK(peak.value()[0] - off.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("scalar hand computation") {
    const double x = 0.3, mean = 0.1, sigma = 0.7;
    Var lp = dist::gauss_log_prob(tape.constant(Tensor<D>::full({1}, x)),
                                  tape.constant(Tensor<D>::full({1}, mean)), sigma);
    const double want =
        -0.5 * std::log(2 * M_PI * sigma * sigma) - (x - mean) * (x - mean) / (2 * sigma * sigma);
    CHECK(lp.value()[0] == doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("non-positive sigma is rejected") {
    CHECK_THROWS_AS(dist::gauss_log_prob(tape.constant(Tensor<D>::zeros({1})),
                                         tape.constant(Tensor<D>::zeros({1})), 0.0),
                    gblab::InvalidArgument);
  }
}

TEST_CASE("distribution gradients match finite differences") {
  Rng rng(13);
  Tensor<D> mq = Tensor<D>::randn({1, 8}, rng);
  Tensor<D> lq = Tensor<D>::rand_uniform({1, 8}, rng, -1.0, 1.0);
  Tensor<D> mp = Tensor<D>::randn({1, 8}, rng);
  Tensor<D> lp = Tensor<D>::rand_uniform({1, 8}, rng, -1.0, 1.0);
  const double h = 1e-4, tol = 1e-4;

  // f builds the loss on the given tape, runs backward, returns the value.
  auto fd_check = [&](std::vector<Tensor<D>> inputs,
                      const std::function<double(Tape&, std::vector<Var>&)>& f) {
    Tape main;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(main.leaf(t.clone(), true));
    f(main, vars);
    auto eval = [&f](std::vector<Tensor<D>>& ins) {
      Tape tp;
      std::vector<Var> vs;
      for (auto& t : ins) vs.push_back(tp.leaf(t.clone(), true));
      return f(tp, vs);
    };
    for (size_t vi = 0; vi < inputs.size(); ++vi) {
      for (int64_t j = 0; j < inputs[vi].numel(); ++j) {
        const double orig = inputs[vi][j];
        inputs[vi][j] = orig + h;
        const double up = eval(inputs);
        inputs[vi][j] = orig - h;
        const double dn = eval(inputs);
        inputs[vi][j] = orig;
        const double numeric = (up - dn) / (2 * h);
        const double got = main.grad_buffer(vars[vi])[j];
        const double scale = std::max({1.0, std::abs(numeric), std::abs(got)});
        INFO("input ", vi, " element ", j);
        CHECK(std::abs(numeric - got) <= tol * scale);
      }
    }
  };

  SUBCASE("kl_diag_gauss") {
    std::vector<Tensor<D>> inputs = {mq, lq, mp, lp};
    fd_check(inputs, [](Tape& tp, std::vector<Var>& v) {
      dist::DiagGaussVar<D> q{v[0], v[1]}, p{v[2], v[3]};
      Var loss = dist::kl_diag_gauss(q, p);
      tp.backward(loss);
      return loss.value()[0];
    });
  }
  SUBCASE("gauss_log_prob") {
    std::vector<Tensor<D>> inputs = {mq, mp};
    fd_check(inputs, [](Tape& tp, std::vector<Var>& v) {
      Var loss = ad::reduce_sum_all(dist::gauss_log_prob(v[0], v[1], 0.7));
      tp.backward(loss);
      return loss.value()[0];
    });
  }
  SUBCASE("sample_reparam") {
    std::vector<Tensor<D>> inputs = {mq, lq};
    Rng nrng(17);
    Tensor<D> noise = Tensor<D>::randn({1, 8}, nrng);
    fd_check(inputs, [noise](Tape& tp, std::vector<Var>& v) {
      dist::DiagGaussVar<D> d{v[0], v[1]};
      Var z = dist::sample_reparam(d, tp.constant(noise.clone()));
      Var loss = ad::reduce_sum_all(ad::mul(z, z));
      tp.backward(loss);
      return loss.value()[0];
    });
  }
}
