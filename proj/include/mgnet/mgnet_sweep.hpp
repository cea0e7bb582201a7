#pragma once

// Level sweeps shared by every MgNet instantiation. V is any value type with
// operator+ and operator- (Tensor for plain evaluation, ad::Var on a tape);
// the level maps themselves are supplied as callbacks.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mgnet/types.hpp"

namespace mgnet {

enum class SmoothingVariant { SingleStep, MultiStep, ChebyshevSemi };

/// Level maps for a down-sweep. Levels are 0-based here (level 0 is the
/// finest); smoothing steps i run from 1 to nu[l].
template <class V>
struct LevelOps {
  std::function<V(const V& f1)> initial_feature;              // u^{1,0}
  std::function<V(int l, const V& u)> data_feature;           // A^l
  std::function<V(int l, int i, const V& r)> extract;         // B^{l,i}
  std::function<V(int l, const V& r)> restrict_data;          // R to level l+1
  std::function<V(int l, const V& u)> interpolate;            // Pi to level l+1
  /// MultiStep: sum_j alpha^{l,i}_j terms[j] over j = 0..i-1.
  /// ChebyshevSemi (i >= 2): omega^{l,i} terms[0] + (1 - omega^{l,i}) terms[1].
  std::function<V(int l, int i, const std::vector<V>& terms)> combine;
  /// False when the last level only feeds the head (nu_J = 0 with pooling),
  /// in which case f^J is never formed.
  bool coarsest_data = true;
};

template <class V>
struct MgNetTrace {
  std::vector<std::vector<V>> u;  // u[l][i], i = 0..nu_l
  std::vector<V> f;               // f^l (empty V for a skipped f^J)

  const V& final_feature() const { return u.back().back(); }
};

namespace detail {

inline std::string level_prefix(int l) { return "level " + std::to_string(l + 1) + ": "; }

template <class Fn>
auto at_level(int l, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ContractViolation& e) {
    throw ContractViolation(level_prefix(l) + e.what());
  }
}

}  // namespace detail

/// One smoothing step u^{l,i} from the history u^{l,0..i-1}. `residuals`
/// caches f^l - A^l(u^{l,j}) and is extended with the newest entry.
template <class V>
V smooth_step(const V& f, std::vector<V>& history, std::vector<V>& residuals, int l, int i,
              SmoothingVariant variant, const LevelOps<V>& ops) {
  while (residuals.size() < history.size()) {
    residuals.push_back(f - ops.data_feature(l, history[residuals.size()]));
  }
  switch (variant) {
    case SmoothingVariant::SingleStep:
      return history[i - 1] + ops.extract(l, i, residuals[i - 1]);
    case SmoothingVariant::MultiStep: {
      std::vector<V> candidates;
      candidates.reserve(i);
      for (int j = 0; j < i; ++j) candidates.push_back(history[j] + ops.extract(l, i, residuals[j]));
      return ops.combine(l, i, candidates);
    }
    case SmoothingVariant::ChebyshevSemi: {
      V candidate = history[i - 1] + ops.extract(l, i, residuals[i - 1]);
      if (i == 1) return candidate;
      return ops.combine(l, i, {candidate, history[i - 2]});
    }
  }
  throw ContractViolation("smooth_step: unknown variant");
}

/// Fine-to-coarse sweep: nested smoothing on each level, then
/// u^{l+1,0} = Pi u^l and f^{l+1} = R(f^l - A^l u^l) + A^{l+1} u^{l+1,0}.
template <class V>
MgNetTrace<V> run_mgnet(const V& f1, std::span<const int> nu, SmoothingVariant variant,
                        const LevelOps<V>& ops) {
  const int levels = static_cast<int>(nu.size());
  require(levels >= 1, "run_mgnet: need at least one level");
  MgNetTrace<V> trace;
  trace.u.resize(levels);
  trace.f.resize(levels);
  trace.f[0] = f1;
  trace.u[0].push_back(ops.initial_feature(f1));
  for (int l = 0; l < levels; ++l) {
    std::vector<V>& history = trace.u[l];
    const bool has_data = l + 1 < levels || ops.coarsest_data;
    if (has_data) {
      std::vector<V> residuals;
      for (int i = 1; i <= nu[l]; ++i) {
        history.push_back(detail::at_level(
            l, [&] { return smooth_step(trace.f[l], history, residuals, l, i, variant, ops); }));
      }
    } else {
      require(nu[l] == 0, detail::level_prefix(l) + "smoothing needs f^J");
    }
    if (l + 1 == levels) break;
    const V& u = history.back();
    V next_u = detail::at_level(l, [&] { return ops.interpolate(l, u); });
    if (l + 2 < levels || ops.coarsest_data) {
      trace.f[l + 1] = detail::at_level(l, [&] {
        return ops.restrict_data(l, trace.f[l] - ops.data_feature(l, u)) +
               ops.data_feature(l + 1, next_u);
      });
    }
    trace.u[l + 1].push_back(std::move(next_u));
  }
  return trace;
}

/// Extra maps for the coarse-to-fine half of a V-cycle.
template <class V>
struct UpOps {
  std::function<V(int l, const V& coarse)> prolong;         // level l+1 -> level l
  std::function<V(int l, int i, const V& r)> extract_up;    // B'^{l,i}
};

/// Down-sweep, then u^l <- ubar^l + P(u^{l+1} - ubar^{l+1,0}) followed by
/// nu_up[l] single-step smoothings, from level J-1 up to level 1. nu_up[J-1]
/// is not used: the coarsest level is not revisited.
template <class V>
V run_v_mgnet(const V& f1, std::span<const int> nu, std::span<const int> nu_up,
              SmoothingVariant variant, const LevelOps<V>& ops, const UpOps<V>& up,
              MgNetTrace<V>* down = nullptr) {
  const int levels = static_cast<int>(nu.size());
  require(static_cast<int>(nu_up.size()) == levels, "run_v_mgnet: nu_up needs one entry per level");
  MgNetTrace<V> trace = run_mgnet(f1, nu, variant, ops);
  V u = trace.u[levels - 1].back();
  for (int l = levels - 2; l >= 0; --l) {
    u = detail::at_level(l, [&] {
      V v = trace.u[l].back() + up.prolong(l, u - trace.u[l + 1].front());
      for (int i = 1; i <= nu_up[l]; ++i) {
        v = v + up.extract_up(l, i, trace.f[l] - ops.data_feature(l, v));
      }
      return v;
    });
  }
  if (down != nullptr) *down = std::move(trace);
  return u;
}

}  // namespace mgnet
