#include "bicr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "bicr/bict.hpp"
#include "bicr/losses.hpp"

namespace bicr {

double GradCheckResult::worst() const {
  double w = 0.0;
  for (const auto& [name, err] : components) w = std::max(w, err);
  return w;
}

bool GradCheckResult::pass(double tol) const {
  return std::all_of(components.begin(), components.end(),
                     [tol](const auto& c) { return c.second < tol; });
}

namespace {

// Small shapes keep the probing fast; the structure (4 cascaded blocks,
// both directions, every loss term) matches the full configuration.
constexpr int kC = 8;    // feature width
constexpr int kC0 = 5;   // bottleneck
constexpr int kP = 4;    // prototypes
constexpr int kB = 8;    // batch
constexpr int kK = 3;    // old identity count

double weighted_sum(const Matrix& m, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m.data()[i] * w.data()[i];
  return s;
}

std::vector<int> grouped_ids() { return {0, 0, 1, 1, 2, 2, 3, 3}; }

double check_matmul(Rng& rng) {
  Parameter a(Matrix::randn(3, 4, rng), "a");
  Parameter b(Matrix::randn(4, 2, rng), "b");
  const Matrix w = Matrix::randn(3, 2, rng);

  a.grad = matmul_nt(w, b.value);   // dA = W B^T
  b.grad = matmul_tn(a.value, w);   // dB = A^T W
  auto f = [&]() { return weighted_sum(matmul(a.value, b.value), w); };
  return finite_diff_check(f, {&a, &b});
}

double check_batchnorm(Rng& rng) {
  BatchNorm bn(kC, "bn");
  // Random affine parameters make the check non-trivial.
  bn.gamma.value = Matrix::randn(1, kC, rng);
  bn.beta.value = Matrix::randn(1, kC, rng);
  Parameter x(Matrix::randn(kB, kC, rng), "x");
  const Matrix w = Matrix::randn(kB, kC, rng);

  bn.gamma.zero_grad();
  bn.beta.zero_grad();
  bn.forward(x.value);
  x.grad = bn.backward(w);
  auto f = [&]() { return weighted_sum(bn.forward(x.value), w); };
  return finite_diff_check(f, {&x, &bn.gamma, &bn.beta});
}

double check_prelu(Rng& rng) {
  PReLU act(kC, "act");
  act.slope.value = Matrix::randn(1, kC, rng);
  Parameter x(Matrix::randn(kB, kC, rng), "x");
  const Matrix w = Matrix::randn(kB, kC, rng);

  act.slope.zero_grad();
  act.forward(x.value);
  x.grad = act.backward(w);
  auto f = [&]() { return weighted_sum(act.apply(x.value), w); };
  return finite_diff_check(f, {&x, &act.slope});
}

double check_softmax_l2norm(Rng& rng) {
  Parameter x(Matrix::randn(kB, kC, rng), "x");
  const Matrix w = Matrix::randn(kB, kC, rng);

  L2NormalizeRows norm;
  SoftmaxRows softmax;
  softmax.forward(norm.forward(x.value));
  x.grad = norm.backward(softmax.backward(w));
  auto f = [&]() { return weighted_sum(SoftmaxRows::apply(L2NormalizeRows::apply(x.value)), w); };
  return finite_diff_check(f, {&x});
}

double check_kcm(Rng& rng) {
  BiCTConfig cfg{kC, kP, kC0, 1, -1.0};
  BiCTBlock block(cfg, rng, "block");
  const Matrix z = L2NormalizeRows::apply(Matrix::randn(kB, kC, rng));
  const Matrix w = Matrix::randn(kB, kC, rng);

  std::vector<Parameter*> params = block.parameters();
  zero_grads(params);
  block.kcm_forward(z);
  block.kcm_backward(w);
  auto f = [&]() { return weighted_sum(block.kcm_forward(z), w); };
  return finite_diff_check(f, params);
}

double check_fmm(Rng& rng) {
  BiCTConfig cfg{kC, kP, kC0, 1, -1.0};
  BiCTBlock block(cfg, rng, "block");
  const Matrix z = L2NormalizeRows::apply(Matrix::randn(kB, kC, rng));
  const Matrix w = Matrix::randn(kB, kC, rng);

  std::vector<Parameter*> params = block.parameters();
  zero_grads(params);
  block.fmm_forward(z);
  block.fmm_backward(w);
  auto f = [&]() { return weighted_sum(block.fmm_forward(z), w); };
  return finite_diff_check(f, params);
}

double check_block(Rng& rng) {
  BiCTConfig cfg{kC, kP, kC0, 1, -1.0};
  BiCTBlock block(cfg, rng, "block");
  const Matrix z = Matrix::randn(kB, kC, rng);
  const Matrix w = Matrix::randn(kB, kC, rng);

  std::vector<Parameter*> params = block.parameters();
  zero_grads(params);
  block.forward(z);
  block.backward(w);
  auto f = [&]() { return weighted_sum(block.forward(z), w); };
  return finite_diff_check(f, params);
}

double check_alignment(Rng& rng) {
  const Matrix z_new = Matrix::randn(kB, kC, rng);
  Parameter z_trans(Matrix::randn(kB, kC, rng), "z_trans");

  AlignmentLoss loss;
  loss.forward(z_new, z_trans.value);
  z_trans.grad = loss.backward_trans(1.0);
  auto f = [&]() { return alignment_loss(z_new, z_trans.value); };
  return finite_diff_check(f, {&z_trans});
}

double check_relation(Rng& rng) {
  const auto ids = grouped_ids();
  const Matrix z_src = Matrix::randn(kB, kC, rng);
  Parameter z_trans(Matrix::randn(kB, kC, rng), "z_trans");
  const MaskedAffinity masked_src = mask_normalize(affinity(z_src), ids);

  AffinityOp aff;
  MaskNormalizeOp mask;
  RelationLoss rel;
  rel.forward(masked_src, mask.forward(aff.forward(z_trans.value), ids));
  z_trans.grad = aff.backward(mask.backward(rel.backward_new(1.0)));
  auto f = [&]() {
    return relation_loss(masked_src, mask_normalize(affinity(z_trans.value), ids));
  };
  return finite_diff_check(f, {&z_trans});
}

double check_anti_forget(Rng& rng) {
  Affine psi(kC, kK, rng, "psi");
  const Matrix z_old = Matrix::randn(kB, kC, rng);
  Parameter z_trans(Matrix::randn(kB, kC, rng), "z_trans");
  DomainStatistics stats;
  stats.mean.resize(kC);
  stats.std.resize(kC);
  for (int j = 0; j < kC; ++j) {
    stats.mean[j] = rng.normal();
    stats.std[j] = 0.5 + rng.uniform();
  }

  AntiForgetPath path;
  path.forward(psi, z_old, z_trans.value, stats);
  z_trans.grad = path.backward_trans(1.0);
  auto f = [&]() {
    auto [q, q_hat] = anti_forget_logits(psi, z_old, z_trans.value, stats);
    return anti_forget_loss(q, q_hat);
  };
  return finite_diff_check(f, {&z_trans});
}

double check_direction(Rng& rng) {
  const Matrix z_old = Matrix::randn(kB, kC, rng);
  const Matrix z_new = Matrix::randn(kB, kC, rng);
  Parameter z_trans(Matrix::randn(kB, kC, rng), "z_trans");

  DirectionConsistencyLoss loss;
  loss.forward(z_trans.value, z_old, z_new);
  z_trans.grad = loss.backward_trans(1.0);
  auto f = [&]() { return direction_consistency_loss(z_trans.value, z_old, z_new); };
  return finite_diff_check(f, {&z_trans});
}

// Full objective through all cascaded blocks of both transfer networks.
double check_stack(Rng& rng, const LossWeights& weights, bool inject_bug) {
  BiCTConfig cfg{kC, kP, kC0, 4, -1.0};
  Rng rng_fwd = rng.split(1);
  Rng rng_bwd = rng.split(2);
  BiCTNetwork theta_fwd(cfg, TransferDirection::Forward, 1, 2, rng_fwd);
  BiCTNetwork theta_bwd(cfg, TransferDirection::Backward, 2, 1, rng_bwd);

  TransferBatch batch;
  batch.z_old = Matrix::randn(kB, kC, rng);
  batch.z_new = Matrix::randn(kB, kC, rng);
  batch.ids = grouped_ids();

  Affine psi_old(kC, kK, rng, "psi_old");
  Affine psi_new(kC, kK, rng, "psi_new");
  FrozenHeads heads;
  heads.psi_old = &psi_old;
  heads.psi_new = &psi_new;
  heads.stats_old = compute_statistics(batch.z_old);
  heads.stats_new = compute_statistics(batch.z_new);

  std::vector<Parameter*> params = theta_fwd.parameters();
  for (auto* p : theta_bwd.parameters()) params.push_back(p);

  TransferObjective objective(weights);
  zero_grads(params);
  objective.evaluate(theta_fwd, theta_bwd, batch, heads, true);
  if (inject_bug) params.front()->grad.data()[0] += 1.0;

  auto f = [&]() { return objective.evaluate(theta_fwd, theta_bwd, batch, heads, false); };
  return finite_diff_check(f, params);
}

}  // namespace

GradCheckResult run_gradient_checks(const std::string& component, int seeds,
                                    std::uint64_t base_seed, bool inject_bug) {
  const LossWeights defaults{};
  const std::vector<std::pair<std::string, std::function<double(Rng&)>>> all = {
      {"matmul", check_matmul},
      {"batchnorm", check_batchnorm},
      {"prelu", check_prelu},
      {"softmax_l2norm", check_softmax_l2norm},
      {"kcm", check_kcm},
      {"fmm", check_fmm},
      {"block", check_block},
      {"alignment", check_alignment},
      {"relation", check_relation},
      {"anti_forget", check_anti_forget},
      {"direction", check_direction},
      {"bcd", [&](Rng& r) { return check_stack(r, LossWeights{defaults.mu1, defaults.mu2, 0, 0},
                                               false); }},
      {"bad", [&](Rng& r) { return check_stack(r, LossWeights{0, 0, defaults.mu3, defaults.mu4},
                                               false); }},
      {"total", [&](Rng& r) { return check_stack(r, defaults, inject_bug); }},
  };

  const std::vector<std::pair<std::string, std::vector<std::string>>> groups = {
      {"all", {}},
      {"kernels", {"matmul", "batchnorm", "prelu", "softmax_l2norm"}},
      {"bict", {"kcm", "fmm", "block"}},
      {"losses", {"alignment", "relation", "anti_forget", "direction"}},
  };

  std::vector<std::string> selected;
  if (component == "all") {
    for (const auto& [name, fn] : all) selected.push_back(name);
  } else {
    for (const auto& [gname, members] : groups) {
      if (gname == component) selected = members;
    }
    if (selected.empty()) {
      const bool known = std::any_of(all.begin(), all.end(),
                                     [&](const auto& c) { return c.first == component; });
      if (!known) throw ConfigError("unknown gradcheck component '" + component + "'");
      selected.push_back(component);
    }
  }
  if (seeds < 1) throw ConfigError("gradcheck needs >= 1 seed");

  GradCheckResult result;
  for (const auto& name : selected) {
    const auto& fn = std::find_if(all.begin(), all.end(),
                                  [&](const auto& c) { return c.first == name; })
                         ->second;
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(base_seed + static_cast<std::uint64_t>(s) * 7919u);
      worst = std::max(worst, fn(rng));
    }
    result.components.emplace_back(name, worst);
  }
  return result;
}

}  // namespace bicr
