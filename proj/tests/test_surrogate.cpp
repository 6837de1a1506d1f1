#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "grpg/surrogate.hpp"
#include "grpg/synthetic.hpp"

using namespace grpg;

namespace {

SurrogateConfig small_cfg() {
  SurrogateConfig cfg;
  cfg.latent_c = 4;
  cfg.latent_h = 16;
  cfg.latent_w = 16;
  cfg.grid = 8;
  cfg.window = 4;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.embed_d = 32;
  return cfg;
}

Tensor tokens_for(const SurrogateConfig& cfg, uint64_t seed) {
  MockTextEncoder enc(4, cfg.embed_d);
  RandomStream rng(seed);
  const auto& cs = concept_vocabulary();
  const auto& as = attribute_vocabulary();
  return enc.embed({{cs[rng.uniform_int(0, 15)], as[rng.uniform_int(0, 7)]}}, seed);
}

}  // namespace

TEST_CASE("svd_u: full rank reconstructs the input") {
  RandomStream rng(1);
  Tensor z = Tensor::randn({4, 8, 6}, rng);
  Tensor rec = svd_u(z, 6);
  CHECK(linf_diff(rec, z) < 1e-9);
}

TEST_CASE("svd_u: rank-1 matrix is reconstructed exactly at r=1") {
  RandomStream rng(2);
  Tensor u = Tensor::randn({8}, rng);
  Tensor v = Tensor::randn({5}, rng);
  Tensor z({1, 8, 5});
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 5; ++j) z.at3(0, i, j) = u[i] * v[j];
  Tensor rec = svd_u(z, 1);
  CHECK(linf_diff(rec, z) < 1e-10);
}

TEST_CASE("svd_u: Eckart-Young error matches the discarded spectrum") {
  RandomStream rng(3);
  Tensor z = Tensor::randn({1, 8, 8}, rng);
  auto sigma = svd_singular_values(z);
  Tensor rec = svd_u(z, 2);
  double err2 = 0.0;
  for (size_t i = 0; i < z.numel(); ++i) err2 += (z[i] - rec[i]) * (z[i] - rec[i]);
  double expected2 = 0.0;
  for (size_t i = 2; i < sigma.size(); ++i) expected2 += sigma[i] * sigma[i];
  CHECK(std::sqrt(err2) == doctest::Approx(std::sqrt(expected2)).epsilon(1e-8));
}

TEST_CASE("svd_u: deterministic sign convention and validation") {
  RandomStream rng(4);
  Tensor z = Tensor::randn({4, 8, 8}, rng);
  Tensor a = svd_u(z, 3);
  Tensor b = svd_u(z, 3);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.numel() * sizeof(double)) == 0);
  CHECK_THROWS_AS(svd_u(z, 0), std::runtime_error);
  CHECK_THROWS_AS(svd_u(z, 9), std::runtime_error);
  Tensor g = z;
  g.requires_grad = true;
  CHECK_THROWS_AS(svd_u(g, 2), std::runtime_error);
}

TEST_CASE("ada_group_norm: zero maps reduce to plain group norm") {
  SurrogateConfig cfg = small_cfg();
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  for (const char* name : {"sur.ada.ws", "sur.ada.wt"})
    for (double& v : net.params.get(name).data) v = 0.0;

  RandomStream rng(5);
  Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);
  Tape tape;
  auto pv = bind_params(tape, net.params);
  Tensor e_row = token_average(tokens_for(cfg, 6));
  e_row.shape = {1, cfg.embed_d};
  Var out = ada_group_norm(tape, net, pv, make_const(tape, z), make_const(tape, e_row));

  int per = cfg.latent_c / cfg.groups;
  size_t hw = static_cast<size_t>(cfg.latent_h) * cfg.latent_w;
  for (int g = 0; g < cfg.groups; ++g) {
    double mean = 0.0, var = 0.0;
    size_t n = per * hw;
    for (size_t i = 0; i < n; ++i) mean += out.val()[g * n + i];
    mean /= n;
    for (size_t i = 0; i < n; ++i) {
      double d = out.val()[g * n + i] - mean;
      var += d * d;
    }
    var /= n;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("ada_group_norm: two prompts differ only by a per-group affine") {
  SurrogateConfig cfg = small_cfg();
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  RandomStream rng(7);
  Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);
  auto run = [&](uint64_t seed) {
    Tape tape;
    auto pv = bind_params(tape, net.params);
    Tensor e_row = token_average(tokens_for(cfg, seed));
    e_row.shape = {1, cfg.embed_d};
    return ada_group_norm(tape, net, pv, make_const(tape, z), make_const(tape, e_row)).val();
  };
  Tensor a = run(100);
  Tensor b = run(200);
  CHECK(linf_diff(a, b) > 1e-6);  // prompts actually differ
  int per = cfg.latent_c / cfg.groups;
  size_t hw = static_cast<size_t>(cfg.latent_h) * cfg.latent_w;
  for (int g = 0; g < cfg.groups; ++g) {
    size_t n = per * hw, base = g * n;
    // least-squares fit b = s*a + t within the group
    double sa = 0, sb = 0, saa = 0, sab = 0;
    for (size_t i = 0; i < n; ++i) {
      sa += a[base + i];
      sb += b[base + i];
      saa += a[base + i] * a[base + i];
      sab += a[base + i] * b[base + i];
    }
    double det = n * saa - sa * sa;
    double s = (n * sab - sa * sb) / det;
    double t = (sb - s * sa) / n;
    for (size_t i = 0; i < n; ++i)
      CHECK(std::abs(b[base + i] - (s * a[base + i] + t)) < 1e-9);
  }
}

TEST_CASE("ada_group_norm: swapping two pixels commutes with the modulation") {
  SurrogateConfig cfg = small_cfg();
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  RandomStream rng(8);
  Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);
  Tensor e_row = token_average(tokens_for(cfg, 9));
  e_row.shape = {1, cfg.embed_d};
  auto run = [&](const Tensor& input) {
    Tape tape;
    auto pv = bind_params(tape, net.params);
    return ada_group_norm(tape, net, pv, make_const(tape, input), make_const(tape, e_row)).val();
  };
  Tensor out = run(z);
  Tensor swapped = z;
  std::swap(swapped.at3(1, 2, 3), swapped.at3(1, 10, 12));  // same channel
  Tensor out_swapped = run(swapped);
  Tensor expected = out;
  std::swap(expected.at3(1, 2, 3), expected.at3(1, 10, 12));
  // tolerance covers the summation-order change inside the group statistics
  CHECK(linf_diff(out_swapped, expected) < 1e-12);
}

TEST_CASE("stage_forward: identity hook is bitwise identical to no hook") {
  SurrogateConfig cfg = small_cfg();
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  RandomStream rng(10);
  Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);

  auto run = [&](const StageHook& hook) {
    Tape tape;
    auto pv = bind_params(tape, net.params);
    return stage_forward(tape, net, pv, make_const(tape, z), hook).out.val();
  };
  Tensor plain = run(nullptr);
  Tensor ident = run([](Tape&, Var f) { return f; });
  CHECK(std::memcmp(plain.data.data(), ident.data.data(), plain.numel() * sizeof(double)) == 0);

  Tensor plus_zero = run([](Tape& t, Var f) {
    return add(f, make_const(t, Tensor::zeros(f.val().shape)));
  });
  for (size_t i = 0; i < plain.numel(); ++i) CHECK(plain[i] == plus_zero[i]);

  Tensor shifted = run([](Tape& t, Var f) { return add_scalar(f, 10.0); });
  CHECK(linf_diff(plain, shifted) > 0.0);

  CHECK_THROWS_AS(run([](Tape& t, Var f) {
                    return make_const(t, Tensor::zeros({1, 1}));
                  }),
                  std::runtime_error);
}

TEST_CASE("npnet: closed gate and zero beta reduce to the SVD residual") {
  SurrogateConfig cfg = small_cfg();
  cfg.alpha0 = 0.0;  // 2*sigmoid(0) - 1 = 0
  cfg.beta0 = 0.0;
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  RandomStream rng(11);
  Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);
  Tape tape;
  auto pv = bind_params(tape, net.params);
  auto fwd = npnet_forward(tape, net, pv, z, tokens_for(cfg, 12));
  CHECK(linf_diff(fwd.z_g.val(), svd_u(z, cfg.svd_rank)) < 1e-12);
}

TEST_CASE("npnet: frozen net is deterministic; identity hook changes nothing") {
  SurrogateConfig cfg = small_cfg();
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  RandomStream rng(13);
  Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);
  Tensor e = tokens_for(cfg, 14);
  auto run = [&](const StageHook& hook) {
    Tape tape;
    auto pv = bind_params(tape, net.params);
    auto fwd = npnet_forward(tape, net, pv, z, e, hook);
    return std::make_pair(fwd.z_g.val(), fwd.z_swin.val());
  };
  auto [g1, s1] = run(nullptr);
  auto [g2, s2] = run(nullptr);
  CHECK(std::memcmp(g1.data.data(), g2.data.data(), g1.numel() * sizeof(double)) == 0);
  auto [g3, s3] = run([](Tape&, Var f) { return f; });
  for (size_t i = 0; i < g1.numel(); ++i) {
    CHECK(g3[i] == g1[i]);
    CHECK(s3[i] == g1[i]);  // identity hook: z_swin equals z_g exactly
  }
}

TEST_CASE("npnet: output variance stays within the sanity envelope over 100 seeds") {
  SurrogateConfig cfg;  // desk-scale defaults
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  RandomStream rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);
    Tensor e = tokens_for(cfg, 10000 + trial);
    Tape tape;
    auto pv = bind_params(tape, net.params);
    auto fwd = npnet_forward(tape, net, pv, z, e);
    double vin = tensor_std(z);
    double vout = tensor_std(fwd.z_g.val());
    double ratio = (vout * vout) / (vin * vin);
    INFO("trial ", trial, " variance ratio ", ratio);
    CHECK(ratio >= 0.25);
    CHECK(ratio <= 4.0);
    CHECK(fwd.tau == doctest::Approx(vout));
  }
}

TEST_CASE("npnet: ada path sees only the global embedding") {
  SurrogateConfig cfg = small_cfg();
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  RandomStream rng(21);
  Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);
  Tensor e_g = tokens_for(cfg, 22);
  Tensor e_row = token_average(e_g);
  e_row.shape = {1, cfg.embed_d};
  // two runs with the same e_g produce bitwise-equal Ada outputs, whatever
  // else (sub-prompts, hooks) might change elsewhere in the pipeline
  auto run_ada = [&] {
    Tape tape;
    auto pv = bind_params(tape, net.params);
    return ada_group_norm(tape, net, pv, make_const(tape, z), make_const(tape, e_row)).val();
  };
  Tensor a = run_ada();
  Tensor b = run_ada();
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.numel() * sizeof(double)) == 0);
}

TEST_CASE("unfrozen surrogate layers pass the finite-difference suite") {
  SurrogateConfig cfg = small_cfg();
  cfg.latent_h = cfg.latent_w = 8;
  cfg.grid = 4;
  cfg.window = 2;
  SurrogateNPNet net = SurrogateNPNet::build(cfg);
  RandomStream rng(31);
  Tensor z = Tensor::randn({cfg.latent_c, cfg.latent_h, cfg.latent_w}, rng);
  Tensor e = tokens_for(cfg, 32);

  for (const std::string name :
       {"sur.stage2.attn.wqkv", "sur.stage2.mlp.w1", "sur.out.w", "sur.ada.ws"}) {
    auto build_loss = [&](Tape& tape, std::map<std::string, Var>& pv) {
      auto fwd = npnet_forward(tape, net, pv, z, e);
      return sum_squares(fwd.z_g);
    };
    Tape tape;
    auto pv = bind_params(tape, net.params, [&](const std::string& n) { return n == name; });
    Var loss = build_loss(tape, pv);
    tape.backward(loss.id);
    Tensor analytic = tape.grad(pv.at(name).id);

    ParamSet& ps = net.params;
    Tensor original = ps.get(name);
    auto f = [&](const Tensor& probe) {
      ps.get(name) = probe;
      Tape t2;
      auto pv2 = bind_params(t2, ps);
      double v = build_loss(t2, pv2).val()[0];
      return v;
    };
    // probe a fixed subset of coordinates to keep the suite quick
    Tensor fd = finite_difference_grad(f, original, 1e-5);
    ps.get(name) = original;
    int checked = 0;
    for (size_t i = 0; i < fd.numel() && checked < 24; i += std::max<size_t>(1, fd.numel() / 24)) {
      INFO("param ", name, " coord ", i);
      CHECK(std::abs(analytic[i] - fd[i]) <=
            1e-4 * std::max({1.0, std::abs(analytic[i]), std::abs(fd[i])}));
      ++checked;
    }
  }
}
