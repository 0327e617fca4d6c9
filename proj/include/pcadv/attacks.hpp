#pragma once

// Adversarial perturbation attacks on point-cloud classifiers.
//
// The objective combines a margin loss on the victim's logits for the
// perturbed cloud with the same loss on the logits of its auto-encoder
// reconstruction:
//
//   L(d) = (1 - gamma) * f_t'(F(x + d)) + gamma * f_t''(F(G(x + d)))
//   f_t(z) = max(max_{i != t} z_i - z_t + kappa, 0)
//
// gamma = 0 is the plain (baseline) attack. Hard-constraint attacks minimise
// L with Adam and project onto the l_inf or l_2 ball after every step; the
// soft-constraint attack minimises L + lambda * D(x, x + d) and searches
// lambda over several rounds.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcadv/diffnet/adam.hpp"
#include "pcadv/diffnet/autoencoder.hpp"
#include "pcadv/diffnet/classifier.hpp"
#include "pcadv/geometry.hpp"

namespace pcadv {

enum class AttackMode { untargeted, targeted };
enum class ConstraintKind { hard_linf, hard_l2, soft };
enum class SoftDistance { l2, chamfer, emd };

inline std::string_view constraint_name(ConstraintKind c) {
  switch (c) {
    case ConstraintKind::hard_linf: return "linf";
    case ConstraintKind::hard_l2: return "l2";
    case ConstraintKind::soft: return "soft";
  }
  return "unknown";
}

inline ConstraintKind parse_constraint(std::string_view s) {
  if (s == "linf") return ConstraintKind::hard_linf;
  if (s == "l2") return ConstraintKind::hard_l2;
  if (s == "soft") return ConstraintKind::soft;
  throw InvalidArgument("unknown constraint '" + std::string(s) + "' (expected linf|l2|soft)");
}

inline SoftDistance parse_soft_distance(std::string_view s) {
  if (s == "l2") return SoftDistance::l2;
  if (s == "chamfer") return SoftDistance::chamfer;
  if (s == "emd") return SoftDistance::emd;
  throw InvalidArgument("unknown soft distance '" + std::string(s) + "' (expected l2|chamfer|emd)");
}

inline AttackMode parse_attack_mode(std::string_view s) {
  if (s == "untargeted") return AttackMode::untargeted;
  if (s == "targeted") return AttackMode::targeted;
  throw InvalidArgument("unknown attack mode '" + std::string(s) + "'");
}

struct AttackConfig {
  AttackMode mode = AttackMode::untargeted;
  std::uint32_t target = 0;  // t' (targeted mode only)
  ConstraintKind constraint = ConstraintKind::hard_linf;
  double eps = 0.18;  // hard budget
  // Soft constraint: initial lambda, distance and number of lambda-search rounds.
  double lambda = 10.0;
  SoftDistance distance = SoftDistance::l2;
  std::size_t search_rounds = 5;
  double gamma = 0.25;
  double kappa = 30.0;
  double lr = 0.01;
  std::size_t iterations = 200;
  std::size_t restarts = 2;
  std::uint64_t seed = 0;

  bool uses_ae() const { return gamma > 0.0; }

  void validate() const {
    if (!(eps >= 0.0)) throw InvalidArgument("attack: eps must be non-negative");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("attack: gamma must lie in [0, 1]");
    if (!(kappa >= 0.0)) throw InvalidArgument("attack: kappa must be non-negative");
    if (!(lambda >= 0.0)) throw InvalidArgument("attack: lambda must be non-negative");
    if (iterations < 1) throw InvalidArgument("attack: iterations must be >= 1");
    if (restarts < 1) throw InvalidArgument("attack: restarts must be >= 1");
    if (constraint == ConstraintKind::soft && search_rounds < 1)
      throw InvalidArgument("attack: soft attack needs at least one lambda round");
  }
};

/// Preset: the default transferable attack (gamma = 0.25).
inline AttackConfig advpc_preset(double eps_linf = 0.18) {
  AttackConfig c;
  c.eps = eps_linf;
  return c;
}

/// Preset: the plain hard-budget baseline (gamma = 0).
inline AttackConfig baseline_preset(double eps_linf = 0.18) {
  AttackConfig c;
  c.eps = eps_linf;
  c.gamma = 0.0;
  return c;
}

/// Preset: Chamfer-regularised soft baseline (kappa = 15).
inline AttackConfig chamfer_soft_preset() {
  AttackConfig c;
  c.constraint = ConstraintKind::soft;
  c.distance = SoftDistance::chamfer;
  c.kappa = 15.0;
  c.gamma = 0.0;
  return c;
}

struct OutcomeNorms {
  double linf = 0;
  double l2 = 0;
  double chamfer_directed = 0;
  double chamfer_symmetric = 0;
  std::optional<double> emd;  // only when N <= kExactEmdCap
};

struct AttackOutcome {
  Perturbation delta = Perturbation::zeros(0);
  bool success_victim = false;
  bool success_ae = false;  // evaluated only when an AE was supplied
  std::size_t predicted_label = 0;
  std::uint32_t target = 0;  // t' of the returned perturbation
  std::optional<std::size_t> iterations_to_first_success;
  OutcomeNorms norms;
  double lambda = 0;  // soft attack: lambda of the round that produced `delta`
};

// ---------------------------------------------------------------------------
// Losses

/// Margin loss with optional gradient w.r.t. the logits (accumulated, scaled).
template <typename T>
T margin_loss_impl(std::span<const T> z, std::size_t target, T kappa, T* dz = nullptr, T scale = T(1)) {
  std::size_t other = target == 0 ? 1 : 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i != target && z[i] > z[other]) other = i;
  const T v = z[other] - z[target] + kappa;
  if (!(v > T(0))) return T(0);
  if (dz) {
    dz[other] += scale;
    dz[target] -= scale;
  }
  return v;
}

/// max(max_{i != t'} z_i - z_t' + kappa, 0).
inline double margin_loss(std::span<const float> z, std::size_t t_prime, double kappa) {
  if (z.size() < 2) throw InvalidArgument("margin_loss: need at least 2 logits");
  if (t_prime >= z.size()) throw InvalidArgument("margin_loss: target label out of range");
  if (!(kappa >= 0)) throw InvalidArgument("margin_loss: kappa must be non-negative");
  std::vector<double> zd(z.begin(), z.end());
  return margin_loss_impl<double>(zd, t_prime, kappa);
}

/// argmax over labels other than `true_label`; ties go to the lowest index.
template <typename T>
std::size_t select_untargeted_target(std::span<const T> z, std::size_t true_label) {
  if (z.size() < 2) throw InvalidArgument("select_untargeted_target: need at least 2 classes");
  std::size_t best = true_label == 0 ? 1 : 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i != true_label && z[i] > z[best]) best = i;
  return best;
}

/// Success predicate on logits.
template <typename T>
bool attack_succeeds(std::span<const T> z, AttackMode mode, std::size_t true_label, std::size_t target) {
  const std::size_t pred = argmax<T>(z);
  return mode == AttackMode::untargeted ? pred != true_label : pred == target;
}

/// Victim (and optional AE) unpacked into scalar type T.
template <typename T>
struct AttackNets {
  ClassifierNet<T> victim;
  std::optional<AENet<T>> ae;

  AttackNets(const ClassifierModel& f, const AEModel* g) : victim(f) {
    if (g) ae.emplace(*g);
  }
};

template <typename T>
struct ObjectiveEval {
  T loss = T(0);
  std::vector<T> grad;       // dL/d(x + d), 3N; empty unless requested
  std::vector<T> logits;     // F(x + d)
  std::vector<T> ae_logits;  // F(G(x + d)); empty when the AE branch is skipped
  std::size_t target = 0;
  std::size_t ae_target = 0;
};

/// Evaluates the combined objective at x' = x + d (interleaved buffer).
/// The AE branch is skipped entirely when gamma == 0; the victim branch
/// gradient is skipped when gamma == 1.
template <typename T>
ObjectiveEval<T> advpc_objective(const AttackNets<T>& nets, std::span<const T> xp, const AttackConfig& cfg,
                                 std::size_t true_label, bool want_grad) {
  ObjectiveEval<T> r;
  const T kappa = static_cast<T>(cfg.kappa);
  const T w_victim = static_cast<T>(1.0 - cfg.gamma);
  const T w_ae = static_cast<T>(cfg.gamma);
  const std::size_t k = nets.victim.k_classes();

  ClassifierTape<T> tape;
  r.logits = nets.victim.forward(xp, &tape);
  r.target = cfg.mode == AttackMode::targeted ? cfg.target : select_untargeted_target<T>(r.logits, true_label);
  std::vector<T> dz(k, T(0));
  const T f1 = margin_loss_impl<T>(r.logits, r.target, kappa, dz.data());
  r.loss = w_victim * f1;
  if (want_grad) {
    r.grad.assign(xp.size(), T(0));
    if (cfg.gamma < 1.0) {
      for (auto& v : dz) v *= w_victim;
      nets.victim.backward(tape, dz, r.grad.data(), nullptr);
    }
  }

  if (cfg.uses_ae()) {
    if (!nets.ae) throw ConfigError("attack: gamma > 0 requires an auto-encoder");
    AETape<T> ae_tape;
    const auto recon = nets.ae->forward(xp, &ae_tape);
    ClassifierTape<T> tape2;
    r.ae_logits = nets.victim.forward(recon, &tape2);
    r.ae_target = cfg.mode == AttackMode::targeted ? cfg.target : select_untargeted_target<T>(r.ae_logits, true_label);
    std::vector<T> dz2(k, T(0));
    const T f2 = margin_loss_impl<T>(r.ae_logits, r.ae_target, kappa, dz2.data(), w_ae);
    r.loss += w_ae * f2;
    if (want_grad && f2 > T(0)) {
      std::vector<T> drecon(recon.size());
      nets.victim.backward(tape2, dz2, drecon.data(), nullptr);
      std::vector<T> dx(xp.size());
      nets.ae->backward(ae_tape, drecon, dx.data(), nullptr);
      for (std::size_t i = 0; i < dx.size(); ++i) r.grad[i] += dx[i];
    }
  }
  return r;
}

struct LossAndGrad {
  double loss;
  Perturbation grad;
};

/// Combined objective and its gradient w.r.t. the perturbation.
inline LossAndGrad advpc_loss(const ClassifierModel& f, const AEModel* g, const PointCloud& x, const Perturbation& d,
                              const AttackConfig& cfg, std::size_t true_label) {
  cfg.validate();
  if (cfg.uses_ae() && !g) throw ConfigError("attack: gamma > 0 requires an auto-encoder");
  const AttackNets<float> nets(f, cfg.uses_ae() ? g : nullptr);
  const auto xp = to_buffer(perturb(x, d));
  const auto r = advpc_objective<float>(nets, xp, cfg, true_label, true);
  std::vector<Point> gp(d.size());
  for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = {r.grad[3 * i], r.grad[3 * i + 1], r.grad[3 * i + 2]};
  return {static_cast<double>(r.loss), Perturbation(std::move(gp))};
}

// ---------------------------------------------------------------------------
// Optimisation loops

namespace detail {

inline OutcomeNorms compute_norms(const PointCloud& x, const Perturbation& d) {
  OutcomeNorms n;
  n.linf = norm_linf(d);
  n.l2 = norm_l2(d);
  const PointCloud xp = perturb(x, d);
  n.chamfer_directed = chamfer(x, xp, ChamferMode::directed);
  n.chamfer_symmetric = chamfer(x, xp, ChamferMode::symmetric);
  if (x.size() <= kExactEmdCap) n.emd = emd(x, xp);
  return n;
}

inline std::vector<float> add_buffers(std::span<const float> x, std::span<const float> d) {
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + d[i];
  return out;
}

/// Initial perturbation of a restart: zero for restart 0, otherwise uniform
/// in +-half_width.
inline Perturbation initial_delta(std::size_t n, std::size_t restart, double half_width, std::uint64_t seed) {
  Perturbation d = Perturbation::zeros(n);
  if (restart == 0 || half_width <= 0) return d;
  Rng rng(SeedHasher(seed).add("restart").add(std::uint64_t{restart}).value());
  for (auto& c : d.coords()) c = static_cast<float>(rng.uniform(-half_width, half_width));
  return d;
}

/// Evaluates the objective, tagging numeric failures with restart and iteration.
template <typename T>
ObjectiveEval<T> annotated_objective(const AttackNets<T>& nets, std::span<const T> xp, const AttackConfig& cfg,
                                     std::size_t true_label, bool want_grad, std::size_t restart, std::size_t iter) {
  try {
    return advpc_objective<T>(nets, xp, cfg, true_label, want_grad);
  } catch (const NumericFailure& e) {
    throw NumericFailure(e.layer(), std::string(e.what()) + " (restart " + std::to_string(restart) + ", iteration " +
                                        std::to_string(iter) + ")");
  }
}

inline void check_finite_grad(const std::vector<float>& g, std::size_t restart, std::size_t iter) {
  for (float v : g)
    if (!std::isfinite(v))
      throw NumericFailure("attack", "non-finite attack gradient at restart " + std::to_string(restart) +
                                         ", iteration " + std::to_string(iter));
}

/// Ranks candidate perturbations: victim success first, then (when the AE
/// branch is active) success after the AE as well, then the smaller
/// constraint value; later iterates win exact ties.
struct Candidate {
  bool victim = false;
  bool ae = false;
  double measure = std::numeric_limits<double>::infinity();  // norm or distance for successes, loss otherwise
  bool valid = false;

  bool better_than(const Candidate& o) const {
    if (!o.valid) return true;
    if (victim != o.victim) return victim;
    if (victim && ae != o.ae) return ae;
    return measure <= o.measure;
  }
};

inline AttackOutcome finalize(const ClassifierNet<float>& victim, const AENet<float>* ae, const PointCloud& x,
                              Perturbation best, std::size_t true_label, const AttackConfig& cfg,
                              std::optional<std::size_t> first_success, std::uint32_t target) {
  AttackOutcome out;
  const auto xp = perturb(x, best);
  const auto z = victim.forward(to_buffer(xp));
  out.predicted_label = argmax<float>(z);
  const std::size_t t = cfg.mode == AttackMode::targeted ? cfg.target : target;
  out.success_victim = attack_succeeds<float>(z, cfg.mode, true_label, t);
  if (ae) {
    const auto recon = ae->forward(to_buffer(xp));
    const auto z2 = victim.forward(recon);
    out.success_ae = attack_succeeds<float>(z2, cfg.mode, true_label, t);
  }
  out.target = static_cast<std::uint32_t>(cfg.mode == AttackMode::targeted ? cfg.target
                                                                           : select_untargeted_target<float>(z, true_label));
  out.iterations_to_first_success = first_success;
  out.norms = compute_norms(x, best);
  out.delta = std::move(best);
  return out;
}

inline void check_attack_inputs(const ClassifierModel& f, const AEModel* g, const PointCloud& x,
                                std::size_t true_label, const AttackConfig& cfg) {
  cfg.validate();
  if (true_label >= f.k_classes) throw InvalidArgument("attack: true label out of range");
  if (cfg.mode == AttackMode::targeted) {
    if (cfg.target >= f.k_classes) throw InvalidArgument("attack: target label out of range");
    if (cfg.target == true_label) throw InvalidArgument("attack: target label equals the true label");
  }
  if (cfg.uses_ae() && !g) throw ConfigError("attack: gamma > 0 requires an auto-encoder");
  if (g && g->n_points != x.size()) throw InvalidInput("attack: auto-encoder point count does not match the cloud");
}

}  // namespace detail

/// Hard-budget projected Adam attack. Runs `restarts` independent restarts
/// of `iterations` steps each and returns the best perturbation found; its
/// constraint norm never exceeds eps.
inline AttackOutcome pgd_attack(const ClassifierModel& f, const AEModel* g, const PointCloud& x,
                                std::size_t true_label, const AttackConfig& cfg) {
  detail::check_attack_inputs(f, g, x, true_label, cfg);
  if (cfg.constraint == ConstraintKind::soft) throw InvalidArgument("pgd_attack needs a hard constraint");
  const bool linf = cfg.constraint == ConstraintKind::hard_linf;
  const AttackNets<float> nets(f, cfg.uses_ae() ? g : nullptr);
  const auto xbuf = to_buffer(x);
  const std::size_t n = x.size();
  const AdamConfig adam_cfg{cfg.lr};
  auto project = [&](Perturbation d) { return linf ? project_linf(std::move(d), cfg.eps) : project_l2(std::move(d), cfg.eps); };
  auto constraint_norm = [&](const Perturbation& d) { return linf ? norm_linf(d) : norm_l2(d); };

  Perturbation best = Perturbation::zeros(n);
  detail::Candidate best_rank;
  std::uint32_t best_target = 0;
  std::optional<std::size_t> first_success;

  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Perturbation d = project(detail::initial_delta(n, r, std::min(cfg.eps, 0.05) / 2, cfg.seed));
    AdamMoments moments(3 * n);
    for (std::size_t it = 0; it <= cfg.iterations; ++it) {
      const bool last = it == cfg.iterations;
      const auto eval =
          detail::annotated_objective<float>(nets, detail::add_buffers(xbuf, d.coords()), cfg, true_label, !last, r, it);
      if (it > 0) {  // d is the iterate produced by step `it`
        detail::Candidate c;
        c.valid = true;
        c.victim = attack_succeeds<float>(eval.logits, cfg.mode, true_label, eval.target);
        c.ae = cfg.uses_ae() && attack_succeeds<float>(eval.ae_logits, cfg.mode, true_label, eval.ae_target);
        c.measure = c.victim ? constraint_norm(d) : static_cast<double>(eval.loss);
        if (c.victim && !first_success) first_success = r * cfg.iterations + it;
        if (c.better_than(best_rank)) {
          best_rank = c;
          best = d;
          best_target = static_cast<std::uint32_t>(eval.target);
        }
      }
      if (last) break;
      detail::check_finite_grad(eval.grad, r, it);
      adam_step(moments, d.coords(), eval.grad, adam_cfg);
      d = project(std::move(d));
    }
  }
  const AENet<float>* ae_eval = nets.ae ? &*nets.ae : nullptr;
  std::optional<AENet<float>> outcome_ae;
  if (!ae_eval && g) ae_eval = &outcome_ae.emplace(*g);
  return detail::finalize(nets.victim, ae_eval, x, std::move(best), true_label, cfg, first_success, best_target);
}

namespace detail {

/// Soft-constraint distance D(x, x + d) and its gradient w.r.t. d.
class SoftDistanceTerm {
 public:
  SoftDistanceTerm(const PointCloud& x, SoftDistance kind) : x_(x), xbuf_(to_buffer(x)), kind_(kind) {}

  double value_and_grad(const Perturbation& d, std::span<const float> xp, std::size_t iter, float* grad,
                        float weight) {
    switch (kind_) {
      case SoftDistance::l2: {
        const double n = norm_l2(d);
        if (grad && n > 0)
          for (std::size_t i = 0; i < xp.size(); ++i) grad[i] += weight * static_cast<float>(d.coords()[i] / n);
        return n;
      }
      case SoftDistance::chamfer: {
        std::vector<float> g(xp.size(), 0.0f);
        const double v = chamfer_directed_with_grad(xbuf_, xp, nullptr, g.data());
        if (grad)
          for (std::size_t i = 0; i < g.size(); ++i) grad[i] += weight * g[i];
        return v;
      }
      case SoftDistance::emd: {
        if (iter % 10 == 0 || match_.empty()) rematch(xp);
        double sum = 0;
        const std::size_t n = xp.size() / 3;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = match_[i];
          const double dx = xp[3 * i] - xbuf_[3 * j], dy = xp[3 * i + 1] - xbuf_[3 * j + 1],
                       dz = xp[3 * i + 2] - xbuf_[3 * j + 2];
          const double len = std::sqrt(dx * dx + dy * dy + dz * dz);
          sum += len;
          if (grad && len > 0) {
            grad[3 * i] += weight * static_cast<float>(dx / len);
            grad[3 * i + 1] += weight * static_cast<float>(dy / len);
            grad[3 * i + 2] += weight * static_cast<float>(dz / len);
          }
        }
        return sum;
      }
    }
    return 0;
  }

  /// Distance used to rank successful perturbations (fresh matching for EMD).
  double measure(const Perturbation& d, std::span<const float> xp) {
    if (kind_ == SoftDistance::emd) {
      rematch(xp);
      return value_and_grad(d, xp, 1, nullptr, 0.0f);
    }
    return value_and_grad(d, xp, 0, nullptr, 0.0f);
  }

 private:
  // Exact assignment from perturbed points to clean points. The exact-EMD
  // cap guards the public emd() entry point only.
  void rematch(std::span<const float> xp) {
    const std::size_t n = xp.size() / 3;
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double dx = xp[3 * i] - xbuf_[3 * j], dy = xp[3 * i + 1] - xbuf_[3 * j + 1],
                     dz = xp[3 * i + 2] - xbuf_[3 * j + 2];
        cost[i * n + j] = std::sqrt(dx * dx + dy * dy + dz * dz);
      }
    match_ = solve_assignment(cost, n);
  }

  const PointCloud& x_;
  std::vector<float> xbuf_;
  SoftDistance kind_;
  std::vector<std::size_t> match_;
};

}  // namespace detail

inline constexpr double kLambdaMin = 1e-2;
inline constexpr double kLambdaMax = 1e6;

/// Soft-constraint attack: minimises L(d) + lambda * D(x, x + d) with Adam
/// for `search_rounds` rounds, raising lambda after a successful round and
/// lowering it after a failed one (x10 / /10 until bracketed, then bisection).
/// Returns the successful perturbation with the smallest D, or the final
/// iterate of the last round when nothing succeeded.
inline AttackOutcome soft_attack(const ClassifierModel& f, const AEModel* g, const PointCloud& x,
                                 std::size_t true_label, const AttackConfig& cfg) {
  detail::check_attack_inputs(f, g, x, true_label, cfg);
  if (cfg.constraint != ConstraintKind::soft) throw InvalidArgument("soft_attack needs a soft constraint");
  const AttackNets<float> nets(f, cfg.uses_ae() ? g : nullptr);
  const auto xbuf = to_buffer(x);
  const std::size_t n = x.size();
  const AdamConfig adam_cfg{cfg.lr};
  detail::SoftDistanceTerm dist(x, cfg.distance);

  Perturbation best = Perturbation::zeros(n);
  detail::Candidate best_rank;
  std::uint32_t best_target = 0;
  double best_lambda = cfg.lambda;
  std::optional<std::size_t> first_success;
  std::optional<double> lambda_ok, lambda_fail;
  double lambda = cfg.lambda;
  std::size_t global_iter = 0;

  for (std::size_t round = 0; round < cfg.search_rounds; ++round) {
    bool round_success = false;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      Perturbation d = detail::initial_delta(n, r, 0.01, SeedHasher(cfg.seed).add(std::uint64_t{round}).value());
      AdamMoments moments(3 * n);
      for (std::size_t it = 0; it <= cfg.iterations; ++it) {
        const bool last = it == cfg.iterations;
        const auto xp = detail::add_buffers(xbuf, d.coords());
        auto eval = detail::annotated_objective<float>(nets, xp, cfg, true_label, !last, r, it);
        if (it > 0) {
          ++global_iter;
          detail::Candidate c;
          c.valid = true;
          c.victim = attack_succeeds<float>(eval.logits, cfg.mode, true_label, eval.target);
          c.ae = cfg.uses_ae() && attack_succeeds<float>(eval.ae_logits, cfg.mode, true_label, eval.ae_target);
          c.measure = c.victim ? dist.measure(d, xp) : static_cast<double>(eval.loss);
          if (c.victim) {
            round_success = true;
            if (!first_success) first_success = global_iter;
          }
          if (c.better_than(best_rank)) {
            best_rank = c;
            best = d;
            best_target = static_cast<std::uint32_t>(eval.target);
            best_lambda = lambda;
          }
        }
        if (last) break;
        if (lambda > 0)
          dist.value_and_grad(d, xp, it, eval.grad.data(), static_cast<float>(lambda));
        detail::check_finite_grad(eval.grad, r, it);
        adam_step(moments, d.coords(), eval.grad, adam_cfg);
      }
      if (!best_rank.victim && round + 1 == cfg.search_rounds && r + 1 == cfg.restarts) {
        best = d;  // best effort: final iterate
        best_lambda = lambda;
      }
    }
    if (round_success) {
      lambda_ok = lambda_ok ? std::max(*lambda_ok, lambda) : lambda;
      lambda = lambda_fail ? (lambda + *lambda_fail) / 2 : std::min(lambda * 10, kLambdaMax);
    } else {
      lambda_fail = lambda_fail ? std::min(*lambda_fail, lambda) : lambda;
      lambda = lambda_ok ? (*lambda_ok + lambda) / 2 : std::max(lambda / 10, kLambdaMin);
    }
  }
  const AENet<float>* ae_eval = nets.ae ? &*nets.ae : nullptr;
  std::optional<AENet<float>> outcome_ae;
  if (!ae_eval && g) ae_eval = &outcome_ae.emplace(*g);
  auto out = detail::finalize(nets.victim, ae_eval, x, std::move(best), true_label, cfg, first_success, best_target);
  out.lambda = best_lambda;
  return out;
}

/// Dispatches on the constraint kind.
inline AttackOutcome run_attack(const ClassifierModel& f, const AEModel* g, const PointCloud& x,
                                std::size_t true_label, const AttackConfig& cfg) {
  return cfg.constraint == ConstraintKind::soft ? soft_attack(f, g, x, true_label, cfg)
                                                : pgd_attack(f, g, x, true_label, cfg);
}

/// Applies the success predicate of `mode` to F_eval(x + delta).
inline bool evaluate_attack(const ClassifierNet<float>& f_eval, const PointCloud& x, const AttackOutcome& outcome,
                            std::size_t true_label, AttackMode mode) {
  const auto z = f_eval.forward(to_buffer(perturb(x, outcome.delta)));
  return attack_succeeds<float>(z, mode, true_label, outcome.target);
}

inline bool evaluate_attack(const ClassifierModel& f_eval, const PointCloud& x, const AttackOutcome& outcome,
                            std::size_t true_label, AttackMode mode) {
  return evaluate_attack(ClassifierNet<float>(f_eval), x, outcome, true_label, mode);
}

}  // namespace pcadv
