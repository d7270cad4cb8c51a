#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nudge/features.hpp"

namespace nudge {

struct NoEligiblePair : Error {
  using Error::Error;
};

// Unordered co-purchase pair; sku_a < sku_b lexicographically.
struct CandidatePair {
  std::string sku_a;
  std::string sku_b;
  std::int64_t co_purchase_orders = 0;
  double pair_revenue = 0.0;  // revenue of the two skus' lines in qualifying orders
  int rank = 0;               // 1-based position after the revenue sort
};

struct UserItemProfile {
  std::map<std::string, std::int64_t> counts;  // orders containing the sku
  std::int64_t total_count = 0;                // sum of counts
  double mean_count = 0.0;                     // over purchased skus only

  std::int64_t count(const std::string& sku) const {
    auto it = counts.find(sku);
    return it == counts.end() ? 0 : it->second;
  }
};

UserItemProfile build_user_profile(const EventIndex& index, const std::string& user,
                                   UnixSeconds from, UnixSeconds to);

// Candidate construction: co-purchase pairs over lookback_days before as_of,
// sorted by pair revenue (ties: co-purchase count, then lexicographic),
// truncated to top_k and THEN stock-filtered, in that order. ranks refer to
// the pre-truncation sort, so the returned list can have gaps.
// stock == nullopt disables the stock filter.
std::vector<CandidatePair> build_candidates(const EventIndex& index,
                                            const std::optional<std::set<std::string>>& stock,
                                            UnixSeconds as_of, int top_k = 100,
                                            int lookback_days = 90);

enum class RecommendReason { never_purchased, infrequent };

struct Recommendation {
  std::string anchor_sku;  // frequent for the user
  std::string target_sku;  // never / infrequently purchased
  RecommendReason reason = RecommendReason::never_purchased;
  int candidate_rank = 0;
};

// Picks the pair with one frequent sku (count >= user mean, and > 0) and one
// infrequent sku (count < mean). Never-purchased targets first (by rank),
// else the largest relative-frequency discrepancy (ties by rank).
Recommendation recommend_pair(const UserItemProfile& profile,
                              const std::vector<CandidatePair>& candidates);

}  // namespace nudge
