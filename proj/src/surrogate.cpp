#include "grpg/surrogate.hpp"

#include <algorithm>
#include <cmath>

#include "grpg/synthetic.hpp"

namespace grpg {

namespace {

// One-sided Jacobi SVD of A (m x n, m >= n): returns U (m x n), sigma (n),
// V (n x n) with A = U diag(sigma) V^T. Deterministic sweep order.
void jacobi_svd(const Tensor& a_in, Tensor& u, std::vector<double>& sigma, Tensor& v) {
  int m = a_in.rows(), n = a_in.cols();
  Tensor a = a_in;
  v = Tensor({n, n});
  for (int i = 0; i < n; ++i) v.at2(i, i) = 1.0;

  const double tol = 1e-14;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < m; ++i) {
          double x = a.at2(i, p), y = a.at2(i, q);
          app += x * x;
          aqq += y * y;
          apq += x * y;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
        off = std::max(off, std::abs(apq) / std::sqrt(app * aqq + 1e-300));
        double zeta = (aqq - app) / (2.0 * apq);
        double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = cs * t;
        for (int i = 0; i < m; ++i) {
          double x = a.at2(i, p), y = a.at2(i, q);
          a.at2(i, p) = cs * x - sn * y;
          a.at2(i, q) = sn * x + cs * y;
        }
        for (int i = 0; i < n; ++i) {
          double x = v.at2(i, p), y = v.at2(i, q);
          v.at2(i, p) = cs * x - sn * y;
          v.at2(i, q) = sn * x + cs * y;
        }
      }
    if (off < 1e-13) break;
    if (sweep == 59 && off > 1e-9) fail("svd_u: Jacobi iteration did not converge");
  }

  sigma.assign(n, 0.0);
  u = Tensor({m, n});
  std::vector<int> order(n);
  std::vector<double> norms(n);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += a.at2(i, j) * a.at2(i, j);
    norms[j] = std::sqrt(s);
    order[j] = j;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return norms[x] > norms[y]; });
  Tensor vs({n, n});
  for (int j = 0; j < n; ++j) {
    int src = order[j];
    sigma[j] = norms[src];
    for (int i = 0; i < m; ++i)
      u.at2(i, j) = norms[src] > 0.0 ? a.at2(i, src) / norms[src] : 0.0;
    for (int i = 0; i < n; ++i) vs.at2(i, j) = v.at2(i, src);
  }
  v = vs;
  // sign convention: largest-magnitude entry of each left vector positive
  for (int j = 0; j < n; ++j) {
    int arg = 0;
    for (int i = 1; i < m; ++i)
      if (std::abs(u.at2(i, j)) > std::abs(u.at2(arg, j))) arg = i;
    if (u.at2(arg, j) < 0.0)
      for (int i = 0; i < m; ++i) {
        u.at2(i, j) = -u.at2(i, j);
        if (i < n) v.at2(i, j) = -v.at2(i, j);
      }
  }
}

Tensor matricize(const Tensor& z) {
  if (z.ndim() != 3) fail("svd_u: tensor is not C x H x W: " + z.shape_str());
  Tensor m = z;
  m.shape = {z.shape[0] * z.shape[1], z.shape[2]};
  return m;
}

}  // namespace

Tensor svd_u(const Tensor& z, int rank) {
  if (z.requires_grad) fail("svd_u: input must not require gradients");
  Tensor a = matricize(z);
  int m = a.rows(), n = a.cols();
  if (m < n) fail("svd_u: matricization must have rows >= cols, got " + a.shape_str());
  if (rank < 1 || rank > n)
    fail("svd_u: rank " + std::to_string(rank) + " outside [1," + std::to_string(n) + "]");
  Tensor u;
  Tensor v;
  std::vector<double> sigma;
  jacobi_svd(a, u, sigma, v);
  Tensor out({m, n});
  for (int r = 0; r < rank; ++r) {
    double s = sigma[r];
    if (s == 0.0) continue;
    for (int i = 0; i < m; ++i) {
      double us = u.at2(i, r) * s;
      if (us == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at2(i, j) += us * v.at2(j, r);
    }
  }
  out.shape = z.shape;
  return out;
}

std::vector<double> svd_singular_values(const Tensor& z) {
  Tensor a = matricize(z);
  Tensor u;
  Tensor v;
  std::vector<double> sigma;
  jacobi_svd(a, u, sigma, v);
  return sigma;
}

SurrogateNPNet SurrogateNPNet::build(const SurrogateConfig& cfg) {
  if (cfg.latent_h != cfg.latent_w) fail("surrogate: latent canvas must be square");
  if (cfg.latent_h % cfg.grid != 0)
    fail("surrogate: latent edge " + std::to_string(cfg.latent_h) +
         " not divisible by token grid " + std::to_string(cfg.grid));
  if (cfg.grid % cfg.window != 0)
    fail("surrogate: grid " + std::to_string(cfg.grid) + " not divisible by window " +
         std::to_string(cfg.window));
  if (cfg.width % cfg.heads != 0) fail("surrogate: width not divisible by heads");
  if (cfg.latent_c % cfg.groups != 0) fail("surrogate: channels not divisible by groups");

  SurrogateNPNet net;
  net.cfg = cfg;
  int p = cfg.latent_h / cfg.grid;
  int n_tok = cfg.grid * cfg.grid;
  int pf = cfg.latent_c * p * p;  // patch feature width

  // patchify / unpatchify index tables (both bijections on C*H*W)
  net.patchify_idx.resize(static_cast<size_t>(n_tok) * pf);
  for (int gy = 0; gy < cfg.grid; ++gy)
    for (int gx = 0; gx < cfg.grid; ++gx) {
      int tok = gy * cfg.grid + gx;
      for (int c = 0; c < cfg.latent_c; ++c)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px) {
            size_t feat = (static_cast<size_t>(c) * p + py) * p + px;
            size_t src = (static_cast<size_t>(c) * cfg.latent_h + gy * p + py) * cfg.latent_w +
                         gx * p + px;
            net.patchify_idx[static_cast<size_t>(tok) * pf + feat] = src;
          }
    }
  net.unpatchify_idx.resize(net.patchify_idx.size());
  for (size_t i = 0; i < net.patchify_idx.size(); ++i)
    net.unpatchify_idx[net.patchify_idx[i]] = i;

  // window layout over the token grid plus the inverse row permutation
  int wins = cfg.grid / cfg.window;
  std::vector<int> perm;
  for (int wy = 0; wy < wins; ++wy)
    for (int wx = 0; wx < wins; ++wx) {
      std::vector<int> rows;
      for (int y = 0; y < cfg.window; ++y)
        for (int x = 0; x < cfg.window; ++x)
          rows.push_back((wy * cfg.window + y) * cfg.grid + wx * cfg.window + x);
      perm.insert(perm.end(), rows.begin(), rows.end());
      net.window_rows.push_back(std::move(rows));
    }
  net.window_unperm.assign(n_tok, 0);
  for (int i = 0; i < n_tok; ++i) net.window_unperm[perm[i]] = i;

  RandomStream rng(cfg.seed);
  auto randn = [&](std::vector<int> shape, double stddev) {
    return Tensor::randn(std::move(shape), rng, stddev);
  };
  int cs = cfg.width;
  net.params.add("sur.embed.w", randn({pf, cs}, 1.0 / std::sqrt(pf)));
  net.params.add("sur.embed.b", randn({cs}, 0.02));
  for (int s = 1; s <= 2; ++s) {
    std::string pre = "sur.stage" + std::to_string(s) + ".";
    net.params.add(pre + "ln1.g", Tensor::full({cs}, 1.0));
    net.params.add(pre + "ln1.b", Tensor::zeros({cs}));
    net.params.add(pre + "attn.wqkv", randn({cs, 3 * cs}, 1.0 / std::sqrt(cs)));
    net.params.add(pre + "attn.bqkv", Tensor::zeros({3 * cs}));
    net.params.add(pre + "attn.wproj", randn({cs, cs}, 0.5 / std::sqrt(cs)));
    net.params.add(pre + "attn.bproj", Tensor::zeros({cs}));
    net.params.add(pre + "ln2.g", Tensor::full({cs}, 1.0));
    net.params.add(pre + "ln2.b", Tensor::zeros({cs}));
    net.params.add(pre + "mlp.w1", randn({cs, 2 * cs}, 1.0 / std::sqrt(cs)));
    net.params.add(pre + "mlp.b1", Tensor::zeros({2 * cs}));
    net.params.add(pre + "mlp.w2", randn({2 * cs, cs}, 0.5 / std::sqrt(2 * cs)));
    net.params.add(pre + "mlp.b2", Tensor::zeros({cs}));
  }
  net.params.add("sur.out.w", randn({cs, pf}, 0.5 / std::sqrt(cs)));
  net.params.add("sur.out.b", Tensor::zeros({pf}));
  net.params.add("sur.ada.ws", randn({cfg.embed_d, cfg.groups}, 0.2 / std::sqrt(cfg.embed_d)));
  net.params.add("sur.ada.bs", Tensor::zeros({cfg.groups}));
  net.params.add("sur.ada.wt", randn({cfg.embed_d, cfg.groups}, 0.2 / std::sqrt(cfg.embed_d)));
  net.params.add("sur.ada.bt", Tensor::zeros({cfg.groups}));
  net.params.add("sur.alpha0", Tensor::scalar(cfg.alpha0));
  net.params.add("sur.beta0", Tensor::scalar(cfg.beta0));
  return net;
}

std::map<std::string, Var> bind_params(
    Tape& tape, const ParamSet& params,
    const std::function<bool(const std::string&)>& trainable) {
  std::map<std::string, Var> out;
  for (const auto& name : params.names()) {
    Tensor t = params.get(name);
    t.requires_grad = trainable ? trainable(name) : false;
    out[name] = make_leaf(tape, t);
  }
  return out;
}

Var ada_group_norm(Tape& tape, const SurrogateNPNet& net, std::map<std::string, Var>& pv,
                   Var z, Var e_bar_g_row) {
  const SurrogateConfig& cfg = net.cfg;
  Var gn = group_norm(z, cfg.groups, cfg.eps);
  Var s_row = linear(e_bar_g_row, pv.at("sur.ada.ws"), pv.at("sur.ada.bs"));  // 1 x groups
  Var t_row = linear(e_bar_g_row, pv.at("sur.ada.wt"), pv.at("sur.ada.bt"));
  // expand per-group values to per-channel vectors
  int per = cfg.latent_c / cfg.groups;
  std::vector<size_t> expand(cfg.latent_c);
  for (int c = 0; c < cfg.latent_c; ++c) expand[c] = static_cast<size_t>(c / per);
  Var s_ch = gather_flat(s_row, expand, {cfg.latent_c});
  Var t_ch = gather_flat(t_row, expand, {cfg.latent_c});
  Var scaled = scale_channels(gn, add_scalar(s_ch, 1.0));
  return shift_channels(scaled, t_ch);
}

namespace {

Var attention_block(Tape& tape, const SurrogateNPNet& net, std::map<std::string, Var>& pv,
                    const std::string& pre, Var x) {
  const SurrogateConfig& cfg = net.cfg;
  int cs = cfg.width;
  int dh = cs / cfg.heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Var h = layer_norm_rows(x, pv.at(pre + "ln1.g"), pv.at(pre + "ln1.b"), cfg.eps);
  Var windows_out{};
  bool first = true;
  for (const auto& rows : net.window_rows) {
    Var wtok = gather_rows(h, rows);
    Var qkv = linear(wtok, pv.at(pre + "attn.wqkv"), pv.at(pre + "attn.bqkv"));
    Var heads_out{};
    bool first_head = true;
    for (int head = 0; head < cfg.heads; ++head) {
      Var q = slice_cols(qkv, head * dh, (head + 1) * dh);
      Var k = slice_cols(qkv, cs + head * dh, cs + (head + 1) * dh);
      Var v = slice_cols(qkv, 2 * cs + head * dh, 2 * cs + (head + 1) * dh);
      Var scores = scale(matmul(q, transpose2d(k)), inv_sqrt_dh);
      Var ctx = matmul(softmax_rows(scores), v);
      heads_out = first_head ? ctx : concat_cols(heads_out, ctx);
      first_head = false;
    }
    Var proj = linear(heads_out, pv.at(pre + "attn.wproj"), pv.at(pre + "attn.bproj"));
    windows_out = first ? proj : concat_rows(windows_out, proj);
    first = false;
  }
  Var attn = gather_rows(windows_out, net.window_unperm);
  x = add(x, attn);

  Var h2 = layer_norm_rows(x, pv.at(pre + "ln2.g"), pv.at(pre + "ln2.b"), cfg.eps);
  Var m = linear(silu(linear(h2, pv.at(pre + "mlp.w1"), pv.at(pre + "mlp.b1"))),
                 pv.at(pre + "mlp.w2"), pv.at(pre + "mlp.b2"));
  return add(x, m);
}

}  // namespace

StagePathOut stage_forward(Tape& tape, const SurrogateNPNet& net,
                           std::map<std::string, Var>& pv, Var z_in, const StageHook& hook) {
  const SurrogateConfig& cfg = net.cfg;
  int n_tok = net.tokens();
  int pf = cfg.latent_c * net.patch() * net.patch();

  Var patches = gather_flat(z_in, net.patchify_idx, {n_tok, pf});
  Var tokens = linear(patches, pv.at("sur.embed.w"), pv.at("sur.embed.b"));
  Var f = attention_block(tape, net, pv, "sur.stage1.", tokens);
  StagePathOut out;
  out.features = f;
  Var f2 = f;
  if (hook) {
    f2 = hook(tape, f);
    if (f2.val().shape != f.val().shape)
      fail("stage_forward: hook returned shape " + f2.val().shape_str() + ", expected " +
           f.val().shape_str());
  }
  Var g = attention_block(tape, net, pv, "sur.stage2.", f2);
  Var proj = linear(g, pv.at("sur.out.w"), pv.at("sur.out.b"));
  out.out = gather_flat(proj, net.unpatchify_idx, {cfg.latent_c, cfg.latent_h, cfg.latent_w});
  return out;
}

SurrogateForward npnet_forward(Tape& tape, const SurrogateNPNet& net,
                               std::map<std::string, Var>& pv, const Tensor& z_t,
                               const Tensor& e_g_tokens, const StageHook& hook) {
  const SurrogateConfig& cfg = net.cfg;
  Tensor e_bar = token_average(e_g_tokens);
  Tensor e_row = e_bar;
  e_row.shape = {1, cfg.embed_d};

  Var z = make_const(tape, z_t);
  Var e_g = make_const(tape, e_row);
  Var svd_part = make_const(tape, svd_u(z_t, cfg.svd_rank));
  Var ada = ada_group_norm(tape, net, pv, z, e_g);
  Var gate = add_scalar(scale(sigmoid(pv.at("sur.alpha0")), 2.0), -1.0);
  Var gated_ada = mul_scalar_var(ada, gate);
  Var swin_in = add(z, ada);

  // shared pre-hook computation, stage 2 evaluated per path
  const SurrogateConfig& c = cfg;
  int n_tok = net.tokens();
  int pf = c.latent_c * net.patch() * net.patch();
  Var patches = gather_flat(swin_in, net.patchify_idx, {n_tok, pf});
  Var tokens = linear(patches, pv.at("sur.embed.w"), pv.at("sur.embed.b"));
  Var f = attention_block(tape, net, pv, "sur.stage1.", tokens);

  auto finish = [&](Var inter) {
    Var g = attention_block(tape, net, pv, "sur.stage2.", inter);
    Var proj = linear(g, pv.at("sur.out.w"), pv.at("sur.out.b"));
    Var latent = gather_flat(proj, net.unpatchify_idx, {c.latent_c, c.latent_h, c.latent_w});
    Var swin_scaled = mul_scalar_var(latent, pv.at("sur.beta0"));
    return add(add(svd_part, gated_ada), swin_scaled);
  };

  SurrogateForward out;
  out.features = f;
  out.z_g = finish(f);
  if (hook) {
    Var hooked = hook(tape, f);
    if (hooked.val().shape != f.val().shape)
      fail("npnet_forward: hook returned shape " + hooked.val().shape_str() + ", expected " +
           f.val().shape_str());
    out.z_swin = finish(hooked);
  } else {
    out.z_swin = out.z_g;
  }
  out.tau = tensor_std(out.z_g.val());
  return out;
}

}  // namespace grpg
