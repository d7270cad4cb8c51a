#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nudge/bandit.hpp"
#include "nudge/events.hpp"
#include "nudge/features.hpp"
#include "nudge/recommender.hpp"
#include "nudge/simulator.hpp"

namespace nudge {

struct WindowNotElapsed : Error {
  using Error::Error;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::int64_t start_day = 19688;  // local date; first decision on/after it
  int duration_weeks = 8;
  int decision_weekday = 0;  // Monday
  int decision_hour = 6;     // local time
  int utc_offset_hours = 7;  // Indonesia
  double pure_control_fraction = 0.30;
  EligibilityCriteria eligibility;
  ContextSpec context;
  int reward_window_days = 6;
  int nudge_expiry_days = 7;
  int top_k_pairs = 100;
  int co_purchase_lookback_days = 90;
  std::uint64_t seed = 0;
  std::optional<std::set<std::string>> stock;  // nullopt = everything in stock
  std::set<std::string> exclude_users;         // e.g. participants of a prior experiment

  void validate() const;
  // Decision instants are weekly, week is 1-based.
  UnixSeconds decision_instant(int week) const;
  UnixSeconds experiment_end() const { return decision_instant(duration_weeks + 1); }
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
// Reads the config file; resolves stock_file / exclude_users_file relative
// to the config's directory.
ExperimentConfig load_experiment_config(const std::string& path);

enum class Group { pure_control, adaptive };
enum class Reaction { opened, closed, ignored, not_applicable };

const char* to_string(Group g);
const char* to_string(Reaction r);
std::optional<Group> group_from_string(const std::string& s);
std::optional<Reaction> reaction_from_string(const std::string& s);

struct DecisionRecord {
  std::string decision_id;
  int week = 0;
  std::string user_id;
  std::string pharmacy_id;
  Group group = Group::adaptive;
  std::optional<Arm> arm;           // adaptive users only
  double treat_probability = 0.5;   // analytic estimate at assignment time
  std::vector<double> context;
  std::optional<Recommendation> pair;  // present iff a nudge was sent
  bool sent = false;
  std::optional<double> reward;     // pharmacy expenditure over the window
  Reaction reaction = Reaction::not_applicable;
};

nlohmann::json decision_to_json(const DecisionRecord& r);
DecisionRecord decision_from_json(const nlohmann::json& j);
void save_decisions(const std::vector<DecisionRecord>& records, const std::string& path);
std::vector<DecisionRecord> load_decisions(const std::string& path);

struct CohortSplit {
  std::set<std::string> pure_control;
  std::set<std::string> adaptive;
};

// Keyed-hash split: pure control iff fnv1a64(seed "|" user) mod 1e6 falls
// below fraction * 1e6. Stable across runs and cohort orderings.
CohortSplit split_pure_control(const std::set<std::string>& cohort, double fraction,
                               std::uint64_t seed);

struct ExperimentState {
  ExperimentConfig config;
  std::set<std::string> cohort;
  std::set<std::string> pure_control;
  std::set<std::string> adaptive;
  FeatureStats stats;           // z-score statistics frozen at experiment start
  BanditState bandit;
  int completed_weeks = 0;

  std::vector<std::string> feature_names() const { return config.context.context_names(); }
};

nlohmann::json experiment_state_to_json(const ExperimentState& state);
ExperimentState experiment_state_from_json(const nlohmann::json& j);
void save_bandit_state(const ExperimentState& state, const std::string& path);
ExperimentState load_bandit_state(const std::string& path);

// Initializes cohort, split, frozen stats and fresh posteriors as of the
// first decision instant.
ExperimentState init_experiment(const ExperimentConfig& config,
                                const std::vector<EventRecord>& events);

struct DecisionPointResult {
  std::vector<DecisionRecord> records;
  std::vector<EventRecord> nudge_events;
  std::vector<PendingNudge> pending;
  int skipped_no_pair = 0;
};

// Assigns every cohort user for one week against the frozen posterior
// snapshot in `state`. Treat users with no eligible pair are recorded as
// assigned-but-unsent. Stage errors are rethrown with user attribution.
DecisionPointResult run_decision_point(const ExperimentState& state, const EventIndex& index,
                                       int week);

// Fills rewards (pharmacy expenditure in (t, t + window]) and reactions
// (earliest opened/closed within the expiry window, else ignored) for the
// given records. Throws WindowNotElapsed when log_until precedes any
// record's window end.
void collect_rewards(const EventIndex& index, std::vector<DecisionRecord>& records,
                     const ExperimentConfig& config, UnixSeconds log_until);

// Emits nudge_expired for sent nudges at least expiry_days old with no
// lifecycle event; idempotent.
std::vector<EventRecord> expire_nudges(const std::vector<EventRecord>& events, UnixSeconds as_of,
                                       int expiry_days);

struct RunOptions {
  int stop_after_week = 0;      // 0 = run to completion
  std::string checkpoint_path;  // empty = no checkpointing
  bool resume = true;
  bool verbose = false;
};

struct RunResult {
  ExperimentState state;
  std::vector<DecisionRecord> decisions;
  std::vector<EventRecord> events;  // warmup + nudge lifecycle + simulated weeks
  std::vector<double> weekly_treat_fraction;
  int skipped_no_pair = 0;
};

// Full lifecycle: weekly decision point -> advance time (co-simulation via
// `population`, or replay of the static log) -> collect rewards -> posterior
// update per arm -> expiry sweep. Fully reproducible from the seeds.
RunResult run_experiment(const ExperimentConfig& config, std::vector<EventRecord> events,
                         const Population* population, const RunOptions& options = {});

}  // namespace nudge
