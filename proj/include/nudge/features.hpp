#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nudge/events.hpp"

namespace nudge {

struct EmptyLog : Error {
  using Error::Error;
};

struct UnknownCategory : Error {
  using Error::Error;
};

struct EligibilityCriteria {
  int max_users_per_pharmacy = 2;
  // "connected on average at least every week in the last two months":
  // >= floor(login_window_days / 7) distinct login days in the window.
  int login_window_days = 60;
  int require_login_within_days = 40;
  double top_spender_quantile = 0.80;
  std::string language;  // empty disables the language filter

  void validate() const;
};

enum class Extractor {
  region_one_hot,           // latest region seen on login events
  days_since_last_nudge,    // min(days / 28, 1), 1.0 when never nudged
  days_with_orders,         // distinct UTC days with pharmacy orders in window
  expenditure,              // pharmacy expenditure in window
  avg_days_between_logins,  // mean gap between the user's logins in window
  days_since_first_login,   // account age in days, 0 for brand-new users
  nudges_opened,            // user's nudge_opened count in window
  app_time,                 // sum of login session seconds in window
  login_count,              // user's logins in window
};

enum class Normalization { zscore, minmax_cap, none };

const std::string& to_string(Extractor e);
std::optional<Extractor> extractor_from_string(const std::string& s);
const std::string& to_string(Normalization n);
std::optional<Normalization> normalization_from_string(const std::string& s);

struct FeatureDescriptor {
  std::string name;
  Extractor extractor = Extractor::login_count;
  int window_days = 0;  // ignored by unwindowed extractors
  Normalization normalization = Normalization::none;
  std::vector<std::string> one_hot_categories;  // region_one_hot only; may contain "other"
};

struct ContextSpec {
  std::vector<FeatureDescriptor> features;

  void validate() const;
  std::size_t expanded_dim() const;                // feature slots, intercept excluded
  std::vector<std::string> slot_names() const;     // expanded, intercept excluded
  std::vector<std::string> context_names() const;  // "intercept" + slot_names()
};

// Cohort statistics frozen at experiment start; aligned to expanded slots.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // 1.0 where the cohort was constant
  std::vector<double> min;
  std::vector<double> max;
};

struct ContextVector {
  UnixSeconds as_of = 0;
  std::string user_id;
  std::vector<double> values;  // leading 1.0 intercept, then expanded features
};

// Per-user / per-pharmacy lookup over a timestamp-sorted event list. Indices
// refer into the backing vector, which must outlive the index.
class EventIndex {
 public:
  explicit EventIndex(const std::vector<EventRecord>& events);

  const std::vector<EventRecord>& events() const { return *events_; }

  // Event indices of this kind in [from, to), in timestamp order.
  std::vector<std::size_t> user_events_in(const std::string& user, EventKind kind,
                                          UnixSeconds from, UnixSeconds to) const;
  std::vector<std::size_t> pharmacy_orders_in(const std::string& pharmacy, UnixSeconds from,
                                              UnixSeconds to) const;

  std::optional<std::size_t> last_user_event_before(const std::string& user, EventKind kind,
                                                    UnixSeconds to) const;
  std::optional<std::size_t> first_user_event(const std::string& user, EventKind kind) const;

  // Latest pharmacy association strictly before `to`.
  std::optional<std::string> pharmacy_of(const std::string& user, UnixSeconds to) const;
  // Latest login-carried region / language strictly before `to`.
  std::optional<std::string> region_of(const std::string& user, UnixSeconds to) const;
  std::optional<std::string> language_of(const std::string& user, UnixSeconds to) const;

  // Users with any event strictly before `to`, sorted.
  std::vector<std::string> users_before(UnixSeconds to) const;

  double pharmacy_expenditure_in(const std::string& pharmacy, UnixSeconds from,
                                 UnixSeconds to) const;

 private:
  struct PerUser {
    std::vector<std::size_t> by_kind[6];
    std::vector<std::size_t> all;
  };
  const std::vector<EventRecord>* events_;
  std::map<std::string, PerUser> users_;
  std::map<std::string, std::vector<std::size_t>> pharmacy_orders_;
};

// Exactly the users meeting every criterion on data strictly before as_of.
// Spender exclusion: user is out iff the fraction of candidate pharmacies
// with strictly smaller window spend is >= top_spender_quantile.
std::set<std::string> eligible_cohort(const EventIndex& index, const EligibilityCriteria& criteria,
                                      UnixSeconds as_of);
std::set<std::string> eligible_cohort(const std::vector<EventRecord>& events,
                                      const EligibilityCriteria& criteria, UnixSeconds as_of);

// Raw (un-normalized) expanded feature values for one user.
std::vector<double> raw_features(const EventIndex& index, const std::string& user,
                                 const ContextSpec& spec, UnixSeconds as_of);

FeatureStats freeze_feature_stats(const EventIndex& index, const std::set<std::string>& cohort,
                                  const ContextSpec& spec, UnixSeconds as_of);

// Normalized context with leading intercept. stats == nullptr skips zscore /
// minmax_cap scaling (used while freezing).
ContextVector build_context(const EventIndex& index, const std::string& user,
                            const ContextSpec& spec, UnixSeconds as_of,
                            const FeatureStats* stats);

}  // namespace nudge
