#include "cmrl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cmrl::objectives {

std::string to_string(RewardScheme s) {
  switch (s) {
    case RewardScheme::kSeparate: return "separate";
    case RewardScheme::kShared: return "shared";
    case RewardScheme::kZeroUntilExploit: return "zero_until_exploit";
    case RewardScheme::kMaxUntilExploit: return "max_until_exploit";
    case RewardScheme::kStDevUntilExploit: return "stdev_until_exploit";
    case RewardScheme::kMaxPlusStDevUntilExploit: return "max_plus_stdev_until_exploit";
  }
  return "?";
}

RewardScheme reward_scheme_from_string(const std::string& s) {
  for (auto k : {RewardScheme::kSeparate, RewardScheme::kShared, RewardScheme::kZeroUntilExploit,
                 RewardScheme::kMaxUntilExploit, RewardScheme::kStDevUntilExploit,
                 RewardScheme::kMaxPlusStDevUntilExploit}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown reward scheme: " + s);
}

std::string to_string(Granularity g) {
  return g == Granularity::kPerStep ? "per_step" : "per_episode";
}

Granularity granularity_from_string(const std::string& s) {
  if (s == "per_step") return Granularity::kPerStep;
  if (s == "per_episode") return Granularity::kPerEpisode;
  throw std::invalid_argument("unknown reward granularity: " + s);
}

std::vector<double> apply_reward_scheme(RewardScheme scheme, envs::Phase phase,
                                        std::span<const double> env_rewards) {
  if (env_rewards.empty()) throw std::invalid_argument("apply_reward_scheme: empty reward vector");
  std::vector<double> out(env_rewards.begin(), env_rewards.end());
  if (phase == envs::Phase::kExploit) return out;
  const double n = static_cast<double>(env_rewards.size());
  const double sum = std::accumulate(env_rewards.begin(), env_rewards.end(), 0.0);
  const double max = *std::max_element(env_rewards.begin(), env_rewards.end());
  // Deviations are taken relative to the first reward so equal rewards give
  // exactly zero.
  auto stdev = [&] {
    const double shift = env_rewards.front();
    double mean = 0.0;
    for (double r : env_rewards) mean += r - shift;
    mean /= n;
    double sq = 0.0;
    for (double r : env_rewards) sq += (r - shift - mean) * (r - shift - mean);
    return std::sqrt(sq / n);
  };
  switch (scheme) {
    case RewardScheme::kSeparate: break;
    case RewardScheme::kShared: std::fill(out.begin(), out.end(), sum); break;
    case RewardScheme::kZeroUntilExploit: std::fill(out.begin(), out.end(), 0.0); break;
    case RewardScheme::kMaxUntilExploit: std::fill(out.begin(), out.end(), max); break;
    case RewardScheme::kStDevUntilExploit: std::fill(out.begin(), out.end(), stdev()); break;
    case RewardScheme::kMaxPlusStDevUntilExploit:
      std::fill(out.begin(), out.end(), max + stdev());
      break;
  }
  return out;
}

TrainingRewards shape_rewards(const envs::MetaEpisodeBatch& batch, RewardScheme scheme,
                              Granularity granularity) {
  const auto ub = static_cast<std::size_t>(batch.batch_size);
  TrainingRewards out;
  out.explore.resize(batch.explore.size());
  for (std::size_t s = 0; s < batch.explore.size(); ++s) {
    out.explore[s].assign(batch.explore[s].steps.size(), std::vector<double>(ub, 0.0));
  }
  for (const auto& step : batch.exploit.steps) {
    std::vector<double> r(ub, 0.0);
    for (std::size_t b = 0; b < ub; ++b) {
      if (step.acting[b]) r[b] = step.env_reward[b];
    }
    out.exploit.push_back(std::move(r));
  }
  if (batch.explore.empty()) return out;

  // A "slot" is one rollout's explore sub-episode: a stream for concurrent
  // agents, a (stream, sub-episode) pair for sequential ones.
  struct Slot {
    std::size_t stream;
    std::size_t last_step;
    double total;
  };
  std::vector<double> rewards;
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (stream, step)

  if (granularity == Granularity::kPerStep) {
    const std::size_t steps = batch.explore[0].steps.size();
    for (const auto& st : batch.explore) {
      if (st.steps.size() != steps) throw std::invalid_argument("explore streams are not aligned");
    }
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t b = 0; b < ub; ++b) {
        rewards.clear();
        where.clear();
        for (std::size_t s = 0; s < batch.explore.size(); ++s) {
          const auto& rec = batch.explore[s].steps[t];
          if (!rec.acting[b]) continue;
          rewards.push_back(rec.env_reward[b]);
          where.emplace_back(s, t);
        }
        if (rewards.empty()) continue;
        const auto shaped = apply_reward_scheme(scheme, envs::Phase::kExplore, rewards);
        for (std::size_t i = 0; i < where.size(); ++i) {
          out.explore[where[i].first][where[i].second][b] = shaped[i];
        }
      }
    }
    return out;
  }

  for (std::size_t b = 0; b < ub; ++b) {
    std::vector<Slot> slots;
    for (std::size_t s = 0; s < batch.explore.size(); ++s) {
      const auto& steps = batch.explore[s].steps;
      int current = -1;
      for (std::size_t t = 0; t < steps.size(); ++t) {
        if (!steps[t].acting[b]) continue;
        const bool opens = batch.concurrent ? current < 0 : steps[t].sub_episode != current;
        if (opens) {
          slots.push_back({s, t, 0.0});
          current = steps[t].sub_episode;
        }
        slots.back().last_step = t;
        slots.back().total += steps[t].env_reward[b];
      }
    }
    if (slots.empty()) continue;
    if (batch.concurrent) {
      rewards.clear();
      for (const auto& sl : slots) rewards.push_back(sl.total);
      const auto shaped = apply_reward_scheme(scheme, envs::Phase::kExplore, rewards);
      for (std::size_t i = 0; i < slots.size(); ++i) {
        out.explore[slots[i].stream][slots[i].last_step][b] = shaped[i];
      }
    } else {
      // Sequential sub-episodes happen one after another; nothing to share.
      for (const auto& sl : slots) {
        const double one[] = {sl.total};
        out.explore[sl.stream][sl.last_step][b] =
            apply_reward_scheme(scheme, envs::Phase::kExplore, one)[0];
      }
    }
  }
  return out;
}

std::vector<int> sample_derangement(int k, Rng& rng) {
  if (k < 2) throw std::invalid_argument("no derangement of " + std::to_string(k) + " elements");
  std::vector<int> p(static_cast<std::size_t>(k));
  for (;;) {
    std::iota(p.begin(), p.end(), 0);
    for (int i = k - 1; i > 0; --i) {
      std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(uniform_int(rng, i + 1))]);
    }
    bool fixed = false;
    for (int i = 0; i < k; ++i) fixed = fixed || p[static_cast<std::size_t>(i)] == i;
    if (!fixed) return p;
  }
}

std::string to_string(DivergenceKind k) { return k == DivergenceKind::kSymKL ? "sym_kl" : "js"; }

DivergenceKind divergence_kind_from_string(const std::string& s) {
  if (s == "sym_kl") return DivergenceKind::kSymKL;
  if (s == "js") return DivergenceKind::kJS;
  throw std::invalid_argument("unknown divergence: " + s);
}

namespace {

void check_lengths(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("divergence between distributions of length " +
                                std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
}

double xlogy_ratio(double x, double y) { return x > 0.0 ? x * std::log(x / y) : 0.0; }

}  // namespace

double sym_kl(std::span<const double> p, std::span<const double> q) {
  check_lengths(p, q);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += xlogy_ratio(p[i], q[i]) + xlogy_ratio(q[i], p[i]);
  return d;
}

double js(std::span<const double> p, std::span<const double> q) {
  check_lengths(p, q);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    d += 0.5 * xlogy_ratio(p[i], m) + 0.5 * xlogy_ratio(q[i], m);
  }
  return d;
}

NodeId divergence_rows(Graph& g, DivergenceKind kind, NodeId p, const Tensor& q) {
  if (g.value(p).shape() != q.shape()) {
    throw ad::ShapeError("divergence: p " + ad::shape_str(g.value(p).shape()) + " vs q " +
                         ad::shape_str(q.shape()));
  }
  Tensor log_q = q;
  for (double& v : log_q.data()) v = std::log(v);
  const NodeId qc = g.constant(q);
  const NodeId log_qc = g.constant(std::move(log_q));
  const NodeId log_p = g.log(p);
  if (kind == DivergenceKind::kSymKL) {
    return g.sum(g.mul(g.sub(p, qc), g.sub(log_p, log_qc)), 1);
  }
  const NodeId log_m = g.log(g.scale(g.add(p, qc), 0.5));
  const NodeId terms = g.add(g.mul(p, g.sub(log_p, log_m)), g.mul(qc, g.sub(log_qc, log_m)));
  return g.scale(g.sum(terms, 1), 0.5);
}

NodeId divergence_loss(Graph& g, const envs::MetaEpisodeBatch& batch, const agents::Network& net,
                       const DivergenceSpec& spec, Rng& rng) {
  if (spec.lambda < 0.0) throw std::invalid_argument("divergence lambda must be >= 0");
  if (spec.derangements < 1) throw std::invalid_argument("derangement count must be >= 1");
  const int k_streams = static_cast<int>(batch.explore.size());
  if (!batch.concurrent || k_streams < 2) return -1;
  const int rows = batch.batch_size;
  std::vector<NodeId> terms;
  for (int d = 0; d < spec.derangements; ++d) {
    const auto perm = sample_derangement(k_streams, rng);
    std::vector<std::vector<Tensor>> streams(static_cast<std::size_t>(k_streams));
    for (int k = 0; k < k_streams; ++k) {
      for (const auto& rec : batch.explore[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])].steps) {
        streams[static_cast<std::size_t>(k)].push_back(rec.input);
      }
    }
    const auto replayed = agents::replay_explore(g, net, streams);
    for (int k = 0; k < k_streams; ++k) {
      const auto& src = batch.explore[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
      for (std::size_t t = 0; t < src.steps.size(); ++t) {
        const auto& rec = src.steps[t];
        Tensor mask = Tensor::matrix(rows, 1);
        bool any = false;
        for (int b = 0; b < rows; ++b) {
          if (rec.acting[static_cast<std::size_t>(b)]) {
            mask.at(b, 0) = 1.0;
            any = true;
          }
        }
        if (!any) continue;
        const NodeId row = divergence_rows(g, spec.kind, replayed[static_cast<std::size_t>(k)][t], rec.probs);
        terms.push_back(g.sum(g.mul(row, g.constant(std::move(mask)))));
      }
    }
  }
  if (terms.empty()) return g.constant(Tensor::scalar(0.0));
  const NodeId total = terms.size() == 1 ? terms[0] : g.sum(g.concat(terms, 0));
  return g.scale(total, 1.0 / static_cast<double>(rows));
}

}  // namespace cmrl::objectives
