#include "nudge/recommender.hpp"

#include <algorithm>

namespace nudge {

UserItemProfile build_user_profile(const EventIndex& index, const std::string& user,
                                   UnixSeconds from, UnixSeconds to) {
  UserItemProfile profile;
  for (std::size_t i : index.user_events_in(user, EventKind::order, from, to)) {
    std::set<std::string> skus;
    for (const auto& line : index.events()[i].order().lines) skus.insert(line.sku);
    for (const auto& sku : skus) {
      profile.counts[sku] += 1;
      profile.total_count += 1;
    }
  }
  if (!profile.counts.empty())
    profile.mean_count =
        static_cast<double>(profile.total_count) / static_cast<double>(profile.counts.size());
  return profile;
}

std::vector<CandidatePair> build_candidates(const EventIndex& index,
                                            const std::optional<std::set<std::string>>& stock,
                                            UnixSeconds as_of, int top_k, int lookback_days) {
  const auto& events = index.events();
  const UnixSeconds from = as_of - static_cast<UnixSeconds>(lookback_days) * kSecondsPerDay;

  struct PairStats {
    std::int64_t orders = 0;
    double revenue = 0.0;
  };
  std::map<std::pair<std::string, std::string>, PairStats> pairs;

  auto lo = std::lower_bound(events.begin(), events.end(), from,
                             [](const EventRecord& e, UnixSeconds t) { return e.ts < t; });
  auto hi = std::lower_bound(lo, events.end(), as_of,
                             [](const EventRecord& e, UnixSeconds t) { return e.ts < t; });
  for (auto it = lo; it != hi; ++it) {
    if (it->kind != EventKind::order) continue;
    // Per-sku revenue within this order (skus may repeat across lines).
    std::map<std::string, double> sku_revenue;
    for (const auto& line : it->order().lines)
      sku_revenue[line.sku] += static_cast<double>(line.qty) * line.price;
    if (sku_revenue.size() < 2) continue;
    for (auto a = sku_revenue.begin(); a != sku_revenue.end(); ++a) {
      for (auto b = std::next(a); b != sku_revenue.end(); ++b) {
        auto& stats = pairs[{a->first, b->first}];
        stats.orders += 1;
        stats.revenue += a->second + b->second;
      }
    }
  }

  std::vector<CandidatePair> ranked;
  ranked.reserve(pairs.size());
  for (const auto& [key, stats] : pairs)
    ranked.push_back({key.first, key.second, stats.orders, stats.revenue, 0});
  std::sort(ranked.begin(), ranked.end(), [](const CandidatePair& x, const CandidatePair& y) {
    if (x.pair_revenue != y.pair_revenue) return x.pair_revenue > y.pair_revenue;
    if (x.co_purchase_orders != y.co_purchase_orders)
      return x.co_purchase_orders > y.co_purchase_orders;
    return std::tie(x.sku_a, x.sku_b) < std::tie(y.sku_a, y.sku_b);
  });
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i].rank = static_cast<int>(i + 1);

  // Truncate to the top_k highest-revenue pairs first, then keep in-stock ones.
  if (top_k >= 0 && ranked.size() > static_cast<std::size_t>(top_k))
    ranked.resize(static_cast<std::size_t>(top_k));
  if (stock) {
    std::erase_if(ranked, [&](const CandidatePair& p) {
      return !stock->count(p.sku_a) || !stock->count(p.sku_b);
    });
  }
  return ranked;
}

Recommendation recommend_pair(const UserItemProfile& profile,
                              const std::vector<CandidatePair>& candidates) {
  const double mean = profile.mean_count;
  const double total = static_cast<double>(profile.total_count);

  std::optional<Recommendation> best_never;
  std::optional<Recommendation> best_infrequent;
  double best_discrepancy = -1.0;

  for (const auto& c : candidates) {
    const std::string* anchor = nullptr;
    const std::string* target = nullptr;
    std::int64_t ca = profile.count(c.sku_a);
    std::int64_t cb = profile.count(c.sku_b);
    // "Frequent" requires count >= user mean and an actual purchase history.
    bool a_freq = ca > 0 && static_cast<double>(ca) >= mean;
    bool b_freq = cb > 0 && static_cast<double>(cb) >= mean;
    if (a_freq && static_cast<double>(cb) < mean) {
      anchor = &c.sku_a;
      target = &c.sku_b;
    } else if (b_freq && static_cast<double>(ca) < mean) {
      anchor = &c.sku_b;
      target = &c.sku_a;
    } else {
      continue;
    }

    std::int64_t target_count = profile.count(*target);
    if (target_count == 0) {
      if (!best_never || c.rank < best_never->candidate_rank)
        best_never = Recommendation{*anchor, *target, RecommendReason::never_purchased, c.rank};
    } else if (!best_never) {
      double disc =
          (static_cast<double>(profile.count(*anchor)) - static_cast<double>(target_count)) /
          total;
      if (disc > best_discrepancy ||
          (disc == best_discrepancy && best_infrequent && c.rank < best_infrequent->candidate_rank)) {
        best_discrepancy = disc;
        best_infrequent = Recommendation{*anchor, *target, RecommendReason::infrequent, c.rank};
      }
    }
  }

  if (best_never) return *best_never;
  if (best_infrequent) return *best_infrequent;
  throw NoEligiblePair("no candidate pair contains an item the user buys frequently");
}

}  // namespace nudge
