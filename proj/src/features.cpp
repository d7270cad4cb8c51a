#include "nudge/features.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace nudge {

void EligibilityCriteria::validate() const {
  if (top_spender_quantile < 0.0 || top_spender_quantile > 1.0)
    throw Error("top_spender_quantile must lie in [0,1]");
  if (login_window_days <= 0 || require_login_within_days <= 0 || max_users_per_pharmacy <= 0)
    throw Error("eligibility day windows and user caps must be positive");
}

namespace {
const std::string kExtractorNames[] = {
    "region_one_hot", "days_since_last_nudge", "days_with_orders",
    "expenditure",    "avg_days_between_logins", "days_since_first_login",
    "nudges_opened",  "app_time",              "login_count"};
const std::string kNormNames[] = {"zscore", "minmax_cap", "none"};

constexpr double kNudgeRecencyCapDays = 28.0;
constexpr double kZScoreClip = 5.0;
}  // namespace

const std::string& to_string(Extractor e) { return kExtractorNames[static_cast<size_t>(e)]; }

std::optional<Extractor> extractor_from_string(const std::string& s) {
  for (size_t i = 0; i < std::size(kExtractorNames); ++i)
    if (s == kExtractorNames[i]) return static_cast<Extractor>(i);
  return std::nullopt;
}

const std::string& to_string(Normalization n) { return kNormNames[static_cast<size_t>(n)]; }

std::optional<Normalization> normalization_from_string(const std::string& s) {
  for (size_t i = 0; i < std::size(kNormNames); ++i)
    if (s == kNormNames[i]) return static_cast<Normalization>(i);
  return std::nullopt;
}

void ContextSpec::validate() const {
  std::unordered_set<std::string> names;
  for (const auto& f : features) {
    if (f.name.empty()) throw Error("context feature name must be non-empty");
    if (!names.insert(f.name).second) throw Error("duplicate context feature name: " + f.name);
    if (f.extractor == Extractor::region_one_hot) {
      if (f.one_hot_categories.empty())
        throw Error("region_one_hot feature '" + f.name + "' needs one-hot categories");
    } else if (!f.one_hot_categories.empty()) {
      throw Error("feature '" + f.name + "' does not take one-hot categories");
    }
    bool windowed = f.extractor == Extractor::days_with_orders ||
                    f.extractor == Extractor::expenditure ||
                    f.extractor == Extractor::avg_days_between_logins ||
                    f.extractor == Extractor::nudges_opened || f.extractor == Extractor::app_time ||
                    f.extractor == Extractor::login_count;
    if (windowed && f.window_days <= 0)
      throw Error("feature '" + f.name + "' needs a positive window_days");
  }
}

std::size_t ContextSpec::expanded_dim() const {
  std::size_t d = 0;
  for (const auto& f : features)
    d += f.extractor == Extractor::region_one_hot ? f.one_hot_categories.size() : 1;
  return d;
}

std::vector<std::string> ContextSpec::slot_names() const {
  std::vector<std::string> names;
  for (const auto& f : features) {
    if (f.extractor == Extractor::region_one_hot) {
      for (const auto& cat : f.one_hot_categories) names.push_back(f.name + "=" + cat);
    } else {
      names.push_back(f.name);
    }
  }
  return names;
}

std::vector<std::string> ContextSpec::context_names() const {
  std::vector<std::string> names = {"intercept"};
  auto slots = slot_names();
  names.insert(names.end(), slots.begin(), slots.end());
  return names;
}

// ---------------------------------------------------------------------------
// EventIndex

EventIndex::EventIndex(const std::vector<EventRecord>& events) : events_(&events) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    auto& u = users_[e.user_id];
    u.by_kind[static_cast<size_t>(e.kind)].push_back(i);
    u.all.push_back(i);
    if (e.kind == EventKind::order) pharmacy_orders_[e.pharmacy_id].push_back(i);
  }
}

namespace {

// [from, to) slice of a ts-ordered index vector.
template <typename Events>
std::pair<std::size_t, std::size_t> ts_range(const Events& events,
                                             const std::vector<std::size_t>& idx, UnixSeconds from,
                                             UnixSeconds to) {
  auto lo = std::lower_bound(idx.begin(), idx.end(), from,
                             [&](std::size_t i, UnixSeconds t) { return events[i].ts < t; });
  auto hi = std::lower_bound(lo, idx.end(), to,
                             [&](std::size_t i, UnixSeconds t) { return events[i].ts < t; });
  return {static_cast<std::size_t>(lo - idx.begin()), static_cast<std::size_t>(hi - idx.begin())};
}

}  // namespace

std::vector<std::size_t> EventIndex::user_events_in(const std::string& user, EventKind kind,
                                                    UnixSeconds from, UnixSeconds to) const {
  auto it = users_.find(user);
  if (it == users_.end()) return {};
  const auto& idx = it->second.by_kind[static_cast<size_t>(kind)];
  auto [lo, hi] = ts_range(*events_, idx, from, to);
  return {idx.begin() + static_cast<std::ptrdiff_t>(lo),
          idx.begin() + static_cast<std::ptrdiff_t>(hi)};
}

std::vector<std::size_t> EventIndex::pharmacy_orders_in(const std::string& pharmacy,
                                                        UnixSeconds from, UnixSeconds to) const {
  auto it = pharmacy_orders_.find(pharmacy);
  if (it == pharmacy_orders_.end()) return {};
  auto [lo, hi] = ts_range(*events_, it->second, from, to);
  return {it->second.begin() + static_cast<std::ptrdiff_t>(lo),
          it->second.begin() + static_cast<std::ptrdiff_t>(hi)};
}

std::optional<std::size_t> EventIndex::last_user_event_before(const std::string& user,
                                                              EventKind kind,
                                                              UnixSeconds to) const {
  auto it = users_.find(user);
  if (it == users_.end()) return std::nullopt;
  const auto& idx = it->second.by_kind[static_cast<size_t>(kind)];
  auto [lo, hi] = ts_range(*events_, idx, std::numeric_limits<UnixSeconds>::min(), to);
  (void)lo;
  if (hi == 0) return std::nullopt;
  return idx[hi - 1];
}

std::optional<std::size_t> EventIndex::first_user_event(const std::string& user,
                                                        EventKind kind) const {
  auto it = users_.find(user);
  if (it == users_.end()) return std::nullopt;
  const auto& idx = it->second.by_kind[static_cast<size_t>(kind)];
  if (idx.empty()) return std::nullopt;
  return idx.front();
}

std::optional<std::string> EventIndex::pharmacy_of(const std::string& user, UnixSeconds to) const {
  auto it = users_.find(user);
  if (it == users_.end()) return std::nullopt;
  const auto& idx = it->second.all;
  auto [lo, hi] = ts_range(*events_, idx, std::numeric_limits<UnixSeconds>::min(), to);
  (void)lo;
  if (hi == 0) return std::nullopt;
  return (*events_)[idx[hi - 1]].pharmacy_id;
}

std::optional<std::string> EventIndex::region_of(const std::string& user, UnixSeconds to) const {
  auto it = users_.find(user);
  if (it == users_.end()) return std::nullopt;
  const auto& idx = it->second.by_kind[static_cast<size_t>(EventKind::login)];
  auto [lo, hi] = ts_range(*events_, idx, std::numeric_limits<UnixSeconds>::min(), to);
  (void)lo;
  for (std::size_t i = hi; i > 0; --i) {
    const auto& lp = (*events_)[idx[i - 1]].login();
    if (lp.region) return lp.region;
  }
  return std::nullopt;
}

std::optional<std::string> EventIndex::language_of(const std::string& user, UnixSeconds to) const {
  auto it = users_.find(user);
  if (it == users_.end()) return std::nullopt;
  const auto& idx = it->second.by_kind[static_cast<size_t>(EventKind::login)];
  auto [lo, hi] = ts_range(*events_, idx, std::numeric_limits<UnixSeconds>::min(), to);
  (void)lo;
  for (std::size_t i = hi; i > 0; --i) {
    const auto& lp = (*events_)[idx[i - 1]].login();
    if (lp.lang) return lp.lang;
  }
  return std::nullopt;
}

std::vector<std::string> EventIndex::users_before(UnixSeconds to) const {
  std::vector<std::string> out;
  for (const auto& [user, per] : users_) {
    if (!per.all.empty() && (*events_)[per.all.front()].ts < to) out.push_back(user);
  }
  return out;
}

double EventIndex::pharmacy_expenditure_in(const std::string& pharmacy, UnixSeconds from,
                                           UnixSeconds to) const {
  double total = 0.0;
  for (std::size_t i : pharmacy_orders_in(pharmacy, from, to))
    total += (*events_)[i].order().expenditure();
  return total;
}

// ---------------------------------------------------------------------------
// Eligibility

std::set<std::string> eligible_cohort(const EventIndex& index, const EligibilityCriteria& criteria,
                                      UnixSeconds as_of) {
  criteria.validate();
  auto candidates = index.users_before(as_of);
  if (candidates.empty()) throw EmptyLog("no events before the eligibility cutoff");

  // Pharmacy headcount by latest association.
  std::map<std::string, int> pharmacy_users;
  std::map<std::string, std::string> user_pharmacy;
  for (const auto& user : candidates) {
    auto ph = index.pharmacy_of(user, as_of);
    if (!ph) continue;
    user_pharmacy[user] = *ph;
    pharmacy_users[*ph] += 1;
  }

  const UnixSeconds login_window_start = as_of - criteria.login_window_days * kSecondsPerDay;
  const UnixSeconds recent_start = as_of - criteria.require_login_within_days * kSecondsPerDay;
  const int required_login_days = criteria.login_window_days / 7;

  std::set<std::string> passed;
  for (const auto& user : candidates) {
    auto ph_it = user_pharmacy.find(user);
    if (ph_it == user_pharmacy.end()) continue;
    if (pharmacy_users[ph_it->second] > criteria.max_users_per_pharmacy) continue;

    auto logins = index.user_events_in(user, EventKind::login, login_window_start, as_of);
    std::unordered_set<std::int64_t> days;
    for (std::size_t i : logins) days.insert(index.events()[i].ts / kSecondsPerDay);
    if (static_cast<int>(days.size()) < required_login_days) continue;

    if (index.user_events_in(user, EventKind::login, recent_start, as_of).empty()) continue;

    if (!criteria.language.empty()) {
      auto lang = index.language_of(user, as_of);
      if (!lang || *lang != criteria.language) continue;
    }
    passed.insert(user);
  }

  if (criteria.top_spender_quantile >= 1.0 || passed.empty()) return passed;

  // Spender exclusion over the pharmacies of users that passed everything else.
  std::map<std::string, double> pharmacy_spend;
  for (const auto& user : passed)
    pharmacy_spend.emplace(user_pharmacy[user], 0.0);
  for (auto& [ph, spend] : pharmacy_spend)
    spend = index.pharmacy_expenditure_in(ph, login_window_start, as_of);

  std::vector<double> spends;
  spends.reserve(pharmacy_spend.size());
  for (const auto& [ph, spend] : pharmacy_spend) spends.push_back(spend);
  std::sort(spends.begin(), spends.end());
  const double n = static_cast<double>(spends.size());

  std::set<std::string> cohort;
  for (const auto& user : passed) {
    double spend = pharmacy_spend[user_pharmacy[user]];
    auto strictly_below = static_cast<double>(
        std::lower_bound(spends.begin(), spends.end(), spend) - spends.begin());
    if (strictly_below / n >= criteria.top_spender_quantile) continue;
    cohort.insert(user);
  }
  return cohort;
}

std::set<std::string> eligible_cohort(const std::vector<EventRecord>& events,
                                      const EligibilityCriteria& criteria, UnixSeconds as_of) {
  EventIndex index(events);
  return eligible_cohort(index, criteria, as_of);
}

// ---------------------------------------------------------------------------
// Context features

namespace {

double extract_scalar(const EventIndex& index, const std::string& user,
                      const FeatureDescriptor& f, UnixSeconds as_of) {
  const auto& events = index.events();
  const UnixSeconds from = as_of - static_cast<UnixSeconds>(f.window_days) * kSecondsPerDay;
  switch (f.extractor) {
    case Extractor::days_since_last_nudge: {
      auto last = index.last_user_event_before(user, EventKind::nudge_sent, as_of);
      if (!last) return 1.0;
      double days = static_cast<double>(as_of - events[*last].ts) / kSecondsPerDay;
      return std::min(days / kNudgeRecencyCapDays, 1.0);
    }
    case Extractor::days_with_orders: {
      auto ph = index.pharmacy_of(user, as_of);
      if (!ph) return 0.0;
      std::unordered_set<std::int64_t> days;
      for (std::size_t i : index.pharmacy_orders_in(*ph, from, as_of))
        days.insert(events[i].ts / kSecondsPerDay);
      return static_cast<double>(days.size());
    }
    case Extractor::expenditure: {
      auto ph = index.pharmacy_of(user, as_of);
      return ph ? index.pharmacy_expenditure_in(*ph, from, as_of) : 0.0;
    }
    case Extractor::avg_days_between_logins: {
      auto logins = index.user_events_in(user, EventKind::login, from, as_of);
      if (logins.size() < 2) return static_cast<double>(f.window_days);
      double span = static_cast<double>(events[logins.back()].ts - events[logins.front()].ts);
      return span / kSecondsPerDay / static_cast<double>(logins.size() - 1);
    }
    case Extractor::days_since_first_login: {
      auto first = index.first_user_event(user, EventKind::login);
      if (!first || events[*first].ts >= as_of) return 0.0;
      return static_cast<double>(as_of - events[*first].ts) / kSecondsPerDay;
    }
    case Extractor::nudges_opened:
      return static_cast<double>(
          index.user_events_in(user, EventKind::nudge_opened, from, as_of).size());
    case Extractor::app_time: {
      double total = 0.0;
      for (std::size_t i : index.user_events_in(user, EventKind::login, from, as_of))
        total += events[i].login().session_secs.value_or(0.0);
      return total;
    }
    case Extractor::login_count:
      return static_cast<double>(
          index.user_events_in(user, EventKind::login, from, as_of).size());
    case Extractor::region_one_hot:
      break;  // handled by the caller
  }
  throw Error("extract_scalar: unreachable extractor");
}

}  // namespace

std::vector<double> raw_features(const EventIndex& index, const std::string& user,
                                 const ContextSpec& spec, UnixSeconds as_of) {
  std::vector<double> values;
  values.reserve(spec.expanded_dim());
  for (const auto& f : spec.features) {
    if (f.extractor == Extractor::region_one_hot) {
      std::size_t base = values.size();
      values.resize(base + f.one_hot_categories.size(), 0.0);
      auto region = index.region_of(user, as_of);
      if (region) {
        auto it = std::find(f.one_hot_categories.begin(), f.one_hot_categories.end(), *region);
        if (it == f.one_hot_categories.end())
          it = std::find(f.one_hot_categories.begin(), f.one_hot_categories.end(), "other");
        if (it == f.one_hot_categories.end())
          throw UnknownCategory("region '" + *region + "' not in one-hot list for feature '" +
                                f.name + "' and no 'other' slot");
        values[base + static_cast<std::size_t>(it - f.one_hot_categories.begin())] = 1.0;
      }
      // No region on record leaves the block all-zero.
    } else {
      values.push_back(extract_scalar(index, user, f, as_of));
    }
  }
  return values;
}

FeatureStats freeze_feature_stats(const EventIndex& index, const std::set<std::string>& cohort,
                                  const ContextSpec& spec, UnixSeconds as_of) {
  spec.validate();
  const std::size_t d = spec.expanded_dim();
  FeatureStats stats;
  stats.mean.assign(d, 0.0);
  stats.stddev.assign(d, 1.0);
  stats.min.assign(d, 0.0);
  stats.max.assign(d, 0.0);
  if (cohort.empty()) return stats;

  std::vector<std::vector<double>> rows;
  rows.reserve(cohort.size());
  for (const auto& user : cohort) rows.push_back(raw_features(index, user, spec, as_of));

  const double n = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0, mn = rows[0][j], mx = rows[0][j];
    for (const auto& row : rows) {
      sum += row[j];
      mn = std::min(mn, row[j]);
      mx = std::max(mx, row[j]);
    }
    double mean = sum / n;
    double ss = 0.0;
    for (const auto& row : rows) ss += (row[j] - mean) * (row[j] - mean);
    double sd = rows.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    stats.mean[j] = mean;
    stats.stddev[j] = sd > 0.0 ? sd : 1.0;
    stats.min[j] = mn;
    stats.max[j] = mx;
  }
  return stats;
}

ContextVector build_context(const EventIndex& index, const std::string& user,
                            const ContextSpec& spec, UnixSeconds as_of,
                            const FeatureStats* stats) {
  spec.validate();
  auto raw = raw_features(index, user, spec, as_of);

  ContextVector ctx;
  ctx.as_of = as_of;
  ctx.user_id = user;
  ctx.values.reserve(raw.size() + 1);
  ctx.values.push_back(1.0);

  std::size_t slot = 0;
  for (const auto& f : spec.features) {
    std::size_t width = f.extractor == Extractor::region_one_hot ? f.one_hot_categories.size() : 1;
    for (std::size_t k = 0; k < width; ++k, ++slot) {
      double v = raw[slot];
      if (stats) {
        switch (f.normalization) {
          case Normalization::zscore:
            v = (v - stats->mean[slot]) / stats->stddev[slot];
            v = std::clamp(v, -kZScoreClip, kZScoreClip);
            break;
          case Normalization::minmax_cap: {
            double span = stats->max[slot] - stats->min[slot];
            v = span > 0.0 ? (v - stats->min[slot]) / span : 0.0;
            v = std::clamp(v, 0.0, 1.0);
            break;
          }
          case Normalization::none:
            break;
        }
      }
      if (!std::isfinite(v)) throw Error("non-finite context value for feature " + f.name);
      ctx.values.push_back(v);
    }
  }
  return ctx;
}

}  // namespace nudge
