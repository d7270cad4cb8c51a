#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nudge/events.hpp"

namespace nudge {

struct PharmacyProfile {
  std::string pharmacy_id;
  std::vector<std::string> user_ids;  // 1..3 users, 1-2 dominant
  std::string region;
  double order_rate = 1.0;        // weekly Poisson mean for the pharmacy
  double spend_scale = 50.0;      // lognormal median per order line
  double responsiveness = 0.0;    // probability of acting on a pending nudge
  double engagement = 3.0;        // mean logins per user per week
  std::vector<double> affinity;   // per-sku propensity, sums to 1
};

struct SimConfig {
  int n_pharmacies = 100;
  int catalog_size = 40;
  int weeks = 12;                  // history horizon for the simulate command
  double uplift_effect = 1.0;      // multiplicative weekly uplift on response
  double responder_fraction = 0.0;
  std::uint64_t seed = 1;
  int block_size = 8;              // co-purchase block width in the catalog
  double spend_sigma = 0.6;        // lognormal sigma of line prices
  double mean_extra_lines = 1.0;   // order lines = 1 + Poisson(mean_extra_lines)
  std::string language = "bahasa";
  std::int64_t start_day = 19604;  // 2023-09-04, a Monday (local calendar day)
  int utc_offset_hours = 7;

  void validate() const;
  UnixSeconds week_start(int week_index) const;  // UTC instant of local midnight
};

struct Population {
  SimConfig config;
  std::vector<PharmacyProfile> pharmacies;
};

// A nudge sent this week that the simulated user may act on.
struct PendingNudge {
  std::string user_id;
  std::string pharmacy_id;
  std::string decision_id;
  std::string anchor_sku;
  std::string target_sku;
  UnixSeconds sent_ts = 0;
};

std::string sku_name(int sku_index);

// Deterministic per seed. Responder status is correlated with engagement so
// the context carries signal the bandit can pick up.
Population generate_population(const SimConfig& config);

// One week of logins and orders for every pharmacy, covering
// [week_start, week_start + 7d). A pending nudge whose responsiveness fires
// emits nudge_opened, scales the pharmacy's week expenditure by the uplift
// and injects one order line of the target sku. Events come back sorted.
std::vector<EventRecord> step_week(const Population& population,
                                   std::span<const PendingNudge> pending, UnixSeconds week_start,
                                   int week_index);

// History for the simulate command: weeks 0..config.weeks-1, no nudges.
std::vector<EventRecord> simulate_history(const Population& population);

void save_population(const Population& population, const std::string& path);
Population load_population(const std::string& path);

}  // namespace nudge
