#include "nudge/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nudge/hash.hpp"

namespace nudge {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (name.empty()) throw Error("experiment config: name must be non-empty");
  if (duration_weeks < 1) throw Error("experiment config: duration_weeks must be >= 1");
  if (decision_weekday < 0 || decision_weekday > 6)
    throw Error("experiment config: decision_weekday out of range");
  if (decision_hour < 0 || decision_hour > 23)
    throw Error("experiment config: decision_hour out of range");
  if (pure_control_fraction < 0.0 || pure_control_fraction > 1.0)
    throw Error("experiment config: pure_control_fraction must lie in [0,1]");
  if (reward_window_days < 1 || reward_window_days >= 7)
    throw Error("experiment config: reward_window_days must lie in [1,6] so rewards "
                "resolve before the next decision point");
  if (nudge_expiry_days < 1) throw Error("experiment config: nudge_expiry_days must be >= 1");
  if (top_k_pairs < 1) throw Error("experiment config: top_k_pairs must be >= 1");
  if (co_purchase_lookback_days < 1)
    throw Error("experiment config: co_purchase_lookback_days must be >= 1");
  eligibility.validate();
  context.validate();
}

UnixSeconds ExperimentConfig::decision_instant(int week) const {
  std::int64_t day = start_day;
  while (weekday_of_day(day) != decision_weekday) ++day;
  day += static_cast<std::int64_t>(week - 1) * 7;
  return day * kSecondsPerDay + static_cast<UnixSeconds>(decision_hour) * kSecondsPerHour -
         static_cast<UnixSeconds>(utc_offset_hours) * kSecondsPerHour;
}

namespace {

json criteria_to_json(const EligibilityCriteria& c) {
  return json{{"max_users_per_pharmacy", c.max_users_per_pharmacy},
              {"login_window_days", c.login_window_days},
              {"require_login_within_days", c.require_login_within_days},
              {"top_spender_quantile", c.top_spender_quantile},
              {"language", c.language}};
}

EligibilityCriteria criteria_from_json(const json& j) {
  EligibilityCriteria c;
  c.max_users_per_pharmacy = j.value("max_users_per_pharmacy", c.max_users_per_pharmacy);
  c.login_window_days = j.value("login_window_days", c.login_window_days);
  c.require_login_within_days = j.value("require_login_within_days", c.require_login_within_days);
  c.top_spender_quantile = j.value("top_spender_quantile", c.top_spender_quantile);
  c.language = j.value("language", c.language);
  return c;
}

json context_spec_to_json(const ContextSpec& spec) {
  json arr = json::array();
  for (const auto& f : spec.features) {
    json fj{{"name", f.name},
            {"extractor", to_string(f.extractor)},
            {"normalization", to_string(f.normalization)}};
    if (f.window_days > 0) fj["window_days"] = f.window_days;
    if (!f.one_hot_categories.empty()) fj["one_hot"] = f.one_hot_categories;
    arr.push_back(std::move(fj));
  }
  return arr;
}

ContextSpec context_spec_from_json(const json& arr) {
  ContextSpec spec;
  for (const auto& fj : arr) {
    FeatureDescriptor f;
    f.name = fj.at("name").get<std::string>();
    auto ex = extractor_from_string(fj.at("extractor").get<std::string>());
    if (!ex) throw Error("unknown context extractor: " + fj.at("extractor").get<std::string>());
    f.extractor = *ex;
    if (fj.contains("normalization")) {
      auto nm = normalization_from_string(fj["normalization"].get<std::string>());
      if (!nm) throw Error("unknown normalization: " + fj["normalization"].get<std::string>());
      f.normalization = *nm;
    }
    f.window_days = fj.value("window_days", 0);
    if (fj.contains("one_hot")) f.one_hot_categories = fj["one_hot"].get<std::vector<std::string>>();
    spec.features.push_back(std::move(f));
  }
  spec.validate();
  return spec;
}

}  // namespace

json experiment_config_to_json(const ExperimentConfig& c) {
  json j{{"name", c.name},
         {"start_date", format_date(c.start_day)},
         {"duration_weeks", c.duration_weeks},
         {"decision_weekday", weekday_name(c.decision_weekday)},
         {"decision_hour", c.decision_hour},
         {"utc_offset_hours", c.utc_offset_hours},
         {"pure_control_fraction", c.pure_control_fraction},
         {"reward_window_days", c.reward_window_days},
         {"nudge_expiry_days", c.nudge_expiry_days},
         {"top_k_pairs", c.top_k_pairs},
         {"co_purchase_lookback_days", c.co_purchase_lookback_days},
         {"seed", c.seed},
         {"eligibility", criteria_to_json(c.eligibility)},
         {"context", context_spec_to_json(c.context)}};
  if (c.stock) j["stock"] = std::vector<std::string>(c.stock->begin(), c.stock->end());
  if (!c.exclude_users.empty())
    j["exclude_users"] = std::vector<std::string>(c.exclude_users.begin(), c.exclude_users.end());
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  c.name = j.value("name", c.name);
  if (j.contains("start_date")) {
    auto day = parse_date(j["start_date"].get<std::string>());
    if (!day) throw Error("experiment config: start_date must be YYYY-MM-DD");
    c.start_day = *day;
  }
  c.duration_weeks = j.value("duration_weeks", c.duration_weeks);
  if (j.contains("decision_weekday")) {
    auto wd = parse_weekday(j["decision_weekday"].get<std::string>());
    if (!wd) throw Error("experiment config: unknown decision_weekday");
    c.decision_weekday = *wd;
  }
  c.decision_hour = j.value("decision_hour", c.decision_hour);
  c.utc_offset_hours = j.value("utc_offset_hours", c.utc_offset_hours);
  c.pure_control_fraction = j.value("pure_control_fraction", c.pure_control_fraction);
  c.reward_window_days = j.value("reward_window_days", c.reward_window_days);
  c.nudge_expiry_days = j.value("nudge_expiry_days", c.nudge_expiry_days);
  c.top_k_pairs = j.value("top_k_pairs", c.top_k_pairs);
  c.co_purchase_lookback_days = j.value("co_purchase_lookback_days", c.co_purchase_lookback_days);
  c.seed = j.value("seed", c.seed);
  if (j.contains("eligibility")) c.eligibility = criteria_from_json(j["eligibility"]);
  if (j.contains("context")) c.context = context_spec_from_json(j["context"]);
  if (j.contains("stock")) {
    auto v = j["stock"].get<std::vector<std::string>>();
    c.stock = std::set<std::string>(v.begin(), v.end());
  }
  if (j.contains("exclude_users")) {
    auto v = j["exclude_users"].get<std::vector<std::string>>();
    c.exclude_users = std::set<std::string>(v.begin(), v.end());
  }
  c.validate();
  return c;
}

namespace {

std::set<std::string> read_line_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open list file: " + path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open experiment config: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error("experiment config is not valid JSON: " + path);
  ExperimentConfig c = experiment_config_from_json(j);
  auto dir = std::filesystem::path(path).parent_path();
  if (j.contains("stock_file"))
    c.stock = read_line_file((dir / j["stock_file"].get<std::string>()).string());
  if (j.contains("exclude_users_file")) {
    auto extra = read_line_file((dir / j["exclude_users_file"].get<std::string>()).string());
    c.exclude_users.insert(extra.begin(), extra.end());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Decision records

const char* to_string(Group g) { return g == Group::pure_control ? "pure_control" : "adaptive"; }

const char* to_string(Reaction r) {
  switch (r) {
    case Reaction::opened: return "opened";
    case Reaction::closed: return "closed";
    case Reaction::ignored: return "ignored";
    default: return "not_applicable";
  }
}

std::optional<Group> group_from_string(const std::string& s) {
  if (s == "pure_control") return Group::pure_control;
  if (s == "adaptive") return Group::adaptive;
  return std::nullopt;
}

std::optional<Reaction> reaction_from_string(const std::string& s) {
  for (Reaction r : {Reaction::opened, Reaction::closed, Reaction::ignored,
                     Reaction::not_applicable}) {
    if (s == to_string(r)) return r;
  }
  return std::nullopt;
}

json decision_to_json(const DecisionRecord& r) {
  json j{{"decision", r.decision_id}, {"week", r.week},
         {"user", r.user_id},         {"pharmacy", r.pharmacy_id},
         {"group", to_string(r.group)}, {"p_treat", r.treat_probability},
         {"context", r.context},      {"sent", r.sent},
         {"reaction", to_string(r.reaction)}};
  if (r.arm) j["arm"] = to_string(*r.arm);
  if (r.pair) {
    j["anchor"] = r.pair->anchor_sku;
    j["target"] = r.pair->target_sku;
    j["reason"] = r.pair->reason == RecommendReason::never_purchased ? "never_purchased"
                                                                     : "infrequent";
    j["rank"] = r.pair->candidate_rank;
  }
  if (r.reward) j["reward"] = *r.reward;
  return j;
}

DecisionRecord decision_from_json(const json& j) {
  DecisionRecord r;
  r.decision_id = j.at("decision").get<std::string>();
  r.week = j.at("week").get<int>();
  r.user_id = j.at("user").get<std::string>();
  r.pharmacy_id = j.at("pharmacy").get<std::string>();
  auto g = group_from_string(j.at("group").get<std::string>());
  if (!g) throw Error("decision record: unknown group");
  r.group = *g;
  r.treat_probability = j.at("p_treat").get<double>();
  r.context = j.at("context").get<std::vector<double>>();
  r.sent = j.at("sent").get<bool>();
  auto re = reaction_from_string(j.at("reaction").get<std::string>());
  if (!re) throw Error("decision record: unknown reaction");
  r.reaction = *re;
  if (j.contains("arm")) {
    std::string arm = j["arm"].get<std::string>();
    if (arm == "treat")
      r.arm = Arm::treat;
    else if (arm == "control")
      r.arm = Arm::control;
    else
      throw Error("decision record: unknown arm");
  }
  if (j.contains("anchor")) {
    Recommendation rec;
    rec.anchor_sku = j["anchor"].get<std::string>();
    rec.target_sku = j.at("target").get<std::string>();
    rec.reason = j.value("reason", "infrequent") == "never_purchased"
                     ? RecommendReason::never_purchased
                     : RecommendReason::infrequent;
    rec.candidate_rank = j.value("rank", 0);
    r.pair = std::move(rec);
  }
  if (j.contains("reward")) r.reward = j["reward"].get<double>();
  return r;
}

void save_decisions(const std::vector<DecisionRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write decisions file: " + path);
  for (const auto& r : records) out << decision_to_json(r).dump() << '\n';
}

std::vector<DecisionRecord> load_decisions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open decisions file: " + path);
  std::vector<DecisionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw MalformedLine(line_no, "unparseable decision record");
    out.push_back(decision_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

CohortSplit split_pure_control(const std::set<std::string>& cohort, double fraction,
                               std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw Error("split fraction must lie in [0,1]");
  const std::uint64_t threshold =
      static_cast<std::uint64_t>(std::llround(fraction * 1e6));
  CohortSplit split;
  for (const auto& user : cohort) {
    std::uint64_t h = fnv1a64(std::to_string(seed) + "|" + user);
    if (h % 1000000ull < threshold)
      split.pure_control.insert(user);
    else
      split.adaptive.insert(user);
  }
  return split;
}

// ---------------------------------------------------------------------------
// State serialization

namespace {

json posterior_to_json(const ArmPosterior& p) {
  json mean = json::array();
  for (Eigen::Index i = 0; i < p.mean.size(); ++i) mean.push_back(p.mean[i]);
  json precision = json::array();
  for (Eigen::Index i = 0; i < p.precision.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < p.precision.cols(); ++j) row.push_back(p.precision(i, j));
    precision.push_back(std::move(row));
  }
  return json{{"mean", std::move(mean)},
              {"precision", std::move(precision)},
              {"a", p.a},
              {"b", p.b},
              {"n_obs", p.n_obs}};
}

ArmPosterior posterior_from_json(const json& j) {
  ArmPosterior p;
  auto mean = j.at("mean").get<std::vector<double>>();
  p.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  const auto& rows = j.at("precision");
  p.precision.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto row = rows[i].get<std::vector<double>>();
    for (std::size_t k = 0; k < row.size(); ++k)
      p.precision(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
  }
  p.a = j.at("a").get<double>();
  p.b = j.at("b").get<double>();
  p.n_obs = j.at("n_obs").get<std::int64_t>();
  p.validate();
  return p;
}

json stats_to_json(const FeatureStats& s) {
  return json{{"mean", s.mean}, {"stddev", s.stddev}, {"min", s.min}, {"max", s.max}};
}

FeatureStats stats_from_json(const json& j) {
  FeatureStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  s.min = j.at("min").get<std::vector<double>>();
  s.max = j.at("max").get<std::vector<double>>();
  return s;
}

}  // namespace

json experiment_state_to_json(const ExperimentState& state) {
  return json{{"config", experiment_config_to_json(state.config)},
              {"cohort", std::vector<std::string>(state.cohort.begin(), state.cohort.end())},
              {"pure_control",
               std::vector<std::string>(state.pure_control.begin(), state.pure_control.end())},
              {"adaptive",
               std::vector<std::string>(state.adaptive.begin(), state.adaptive.end())},
              {"stats", stats_to_json(state.stats)},
              {"prior",
               {{"mean", state.bandit.prior.mean},
                {"precision", state.bandit.prior.precision},
                {"shape", state.bandit.prior.shape},
                {"rate", state.bandit.prior.rate}}},
              {"arms",
               {{"control", posterior_to_json(state.bandit.control)},
                {"treat", posterior_to_json(state.bandit.treat)}}},
              {"feature_names", state.feature_names()},
              {"completed_weeks", state.completed_weeks}};
}

ExperimentState experiment_state_from_json(const json& j) {
  ExperimentState state;
  state.config = experiment_config_from_json(j.at("config"));
  auto as_set = [](const json& arr) {
    auto v = arr.get<std::vector<std::string>>();
    return std::set<std::string>(v.begin(), v.end());
  };
  state.cohort = as_set(j.at("cohort"));
  state.pure_control = as_set(j.at("pure_control"));
  state.adaptive = as_set(j.at("adaptive"));
  state.stats = stats_from_json(j.at("stats"));
  const auto& pr = j.at("prior");
  state.bandit.prior = NigPrior{pr.at("mean").get<double>(), pr.at("precision").get<double>(),
                                pr.at("shape").get<double>(), pr.at("rate").get<double>()};
  state.bandit.control = posterior_from_json(j.at("arms").at("control"));
  state.bandit.treat = posterior_from_json(j.at("arms").at("treat"));
  state.completed_weeks = j.at("completed_weeks").get<int>();
  return state;
}

void save_bandit_state(const ExperimentState& state, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write bandit state: " + path);
  out << experiment_state_to_json(state).dump(2) << '\n';
}

ExperimentState load_bandit_state(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open bandit state: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error("bandit state is not valid JSON: " + path);
  return experiment_state_from_json(j);
}

// ---------------------------------------------------------------------------
// Lifecycle

ExperimentState init_experiment(const ExperimentConfig& config,
                                const std::vector<EventRecord>& events) {
  config.validate();
  const UnixSeconds t0 = config.decision_instant(1);
  EventIndex index(events);
  auto cohort = eligible_cohort(index, config.eligibility, t0);
  for (const auto& u : config.exclude_users) cohort.erase(u);

  ExperimentState state;
  state.config = config;
  state.cohort = cohort;
  auto split = split_pure_control(cohort, config.pure_control_fraction, config.seed);
  state.pure_control = std::move(split.pure_control);
  state.adaptive = std::move(split.adaptive);
  state.stats = freeze_feature_stats(index, cohort, config.context, t0);
  state.bandit = BanditState::fresh(config.context.expanded_dim() + 1);
  return state;
}

namespace {

std::string make_decision_id(const ExperimentConfig& config, int week, const std::string& user) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "-w%02d-", week);
  return config.name + buf + user;
}

}  // namespace

DecisionPointResult run_decision_point(const ExperimentState& state, const EventIndex& index,
                                       int week) {
  const ExperimentConfig& config = state.config;
  if (week < 1 || week > config.duration_weeks)
    throw Error("run_decision_point: week out of range");
  const UnixSeconds t = config.decision_instant(week);

  auto candidates = build_candidates(index, config.stock, t, config.top_k_pairs,
                                     config.co_purchase_lookback_days);

  bool analytic_ok = state.bandit.treat.a > 1.0 && state.bandit.control.a > 1.0;

  DecisionPointResult out;
  for (const auto& user : state.cohort) {
    try {
      DecisionRecord rec;
      rec.decision_id = make_decision_id(config, week, user);
      rec.week = week;
      rec.user_id = user;
      rec.pharmacy_id = index.pharmacy_of(user, t).value_or("");
      rec.group = state.pure_control.count(user) ? Group::pure_control : Group::adaptive;

      ContextVector ctx = build_context(index, user, config.context, t, &state.stats);
      rec.context = ctx.values;
      rec.treat_probability =
          analytic_ok ? arm_probability_analytic(state.bandit, rec.context) : 0.5;

      if (rec.group == Group::adaptive) {
        Rng rng = Rng::stream(config.seed, "assign|" + std::to_string(week) + "|" + user);
        rec.arm = thompson_assign(state.bandit, rec.context, rng).arm;
        if (*rec.arm == Arm::treat) {
          UserItemProfile profile = build_user_profile(
              index, user, t - config.co_purchase_lookback_days * kSecondsPerDay, t);
          try {
            Recommendation rec_pair = recommend_pair(profile, candidates);
            rec.pair = rec_pair;
            rec.sent = true;

            EventRecord nudge;
            nudge.ts = t;
            nudge.user_id = user;
            nudge.pharmacy_id = rec.pharmacy_id;
            nudge.kind = EventKind::nudge_sent;
            nudge.payload =
                NudgePayload{rec.decision_id, rec_pair.anchor_sku, rec_pair.target_sku};
            out.nudge_events.push_back(std::move(nudge));
            out.pending.push_back(PendingNudge{user, rec.pharmacy_id, rec.decision_id,
                                               rec_pair.anchor_sku, rec_pair.target_sku, t});
          } catch (const NoEligiblePair&) {
            out.skipped_no_pair += 1;  // treat-assigned but unsent
          }
        }
      }
      out.records.push_back(std::move(rec));
    } catch (const Error& e) {
      throw Error("user " + user + ": " + e.what());
    }
  }
  return out;
}

void collect_rewards(const EventIndex& index, std::vector<DecisionRecord>& records,
                     const ExperimentConfig& config, UnixSeconds log_until) {
  const UnixSeconds window = static_cast<UnixSeconds>(config.reward_window_days) * kSecondsPerDay;
  const UnixSeconds expiry = static_cast<UnixSeconds>(config.nudge_expiry_days) * kSecondsPerDay;
  for (auto& rec : records) {
    const UnixSeconds t = config.decision_instant(rec.week);
    if (log_until < t + window)
      throw WindowNotElapsed("reward window for week " + std::to_string(rec.week) +
                             " closes after the log ends");
    // decision_time < ts <= decision_time + window
    rec.reward = index.pharmacy_expenditure_in(rec.pharmacy_id, t + 1, t + window + 1);

    if (!rec.sent) {
      rec.reaction = Reaction::not_applicable;
      continue;
    }
    rec.reaction = Reaction::ignored;
    UnixSeconds best_ts = std::numeric_limits<UnixSeconds>::max();
    for (EventKind kind : {EventKind::nudge_opened, EventKind::nudge_closed}) {
      for (std::size_t i : index.user_events_in(rec.user_id, kind, t, t + expiry + 1)) {
        const auto& e = index.events()[i];
        if (e.nudge().decision_id != rec.decision_id || e.ts >= best_ts) continue;
        best_ts = e.ts;
        rec.reaction = kind == EventKind::nudge_opened ? Reaction::opened : Reaction::closed;
      }
    }
  }
}

std::vector<EventRecord> expire_nudges(const std::vector<EventRecord>& events, UnixSeconds as_of,
                                       int expiry_days) {
  const UnixSeconds expiry = static_cast<UnixSeconds>(expiry_days) * kSecondsPerDay;
  std::set<std::string> touched;
  for (const auto& e : events) {
    if (e.kind == EventKind::nudge_opened || e.kind == EventKind::nudge_closed ||
        e.kind == EventKind::nudge_expired)
      touched.insert(e.nudge().decision_id);
  }
  std::vector<EventRecord> expired;
  for (const auto& e : events) {
    if (e.kind != EventKind::nudge_sent) continue;
    if (e.ts + expiry > as_of) continue;  // not yet expiry_days old
    if (touched.count(e.nudge().decision_id)) continue;
    EventRecord x = e;
    x.kind = EventKind::nudge_expired;
    x.ts = e.ts + expiry;
    expired.push_back(std::move(x));
  }
  return expired;
}

// ---------------------------------------------------------------------------
// Full run with checkpointing

namespace {

void merge_events(std::vector<EventRecord>& base, std::vector<EventRecord> extra) {
  base.insert(base.end(), std::make_move_iterator(extra.begin()),
              std::make_move_iterator(extra.end()));
  std::stable_sort(base.begin(), base.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.ts < b.ts; });
}

std::string config_fingerprint(const ExperimentConfig& config) {
  return sha256_hex(experiment_config_to_json(config).dump());
}

void save_checkpoint(const RunResult& rr, const std::string& path) {
  json j;
  j["fingerprint"] = config_fingerprint(rr.state.config);
  j["state"] = experiment_state_to_json(rr.state);
  json decs = json::array();
  for (const auto& d : rr.decisions) decs.push_back(decision_to_json(d));
  j["decisions"] = std::move(decs);
  j["events_jsonl"] = write_event_log_string(rr.events);
  j["weekly_treat_fraction"] = rr.weekly_treat_fraction;
  j["skipped_no_pair"] = rr.skipped_no_pair;
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + tmp);
    out << j.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

bool load_checkpoint(const ExperimentConfig& config, const std::string& path, RunResult& rr) {
  std::ifstream in(path);
  if (!in) return false;
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return false;
  if (j.value("fingerprint", "") != config_fingerprint(config)) return false;
  rr.state = experiment_state_from_json(j.at("state"));
  rr.decisions.clear();
  for (const auto& dj : j.at("decisions")) rr.decisions.push_back(decision_from_json(dj));
  rr.events = parse_event_log_string(j.at("events_jsonl").get<std::string>());
  rr.weekly_treat_fraction = j.at("weekly_treat_fraction").get<std::vector<double>>();
  rr.skipped_no_pair = j.value("skipped_no_pair", 0);
  return true;
}

// Winsorize at the pooled 99th percentile (linear interpolation), then
// rescale to thousands of currency units for the Gaussian likelihood.
std::vector<double> bandit_rewards(const std::vector<const DecisionRecord*>& included) {
  std::vector<double> raw;
  raw.reserve(included.size());
  for (const auto* r : included) raw.push_back(r->reward.value_or(0.0));
  std::vector<double> sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  double cap = std::numeric_limits<double>::infinity();
  if (!sorted.empty()) {
    double h = 0.99 * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(h);
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    cap = sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  }
  for (auto& v : raw) v = std::min(v, cap) / 1000.0;
  return raw;
}

void apply_posterior_updates(BanditState& bandit, const std::vector<DecisionRecord>& records) {
  std::vector<const DecisionRecord*> included;
  for (const auto& r : records) {
    if (r.group != Group::adaptive || !r.arm) continue;
    if (*r.arm == Arm::treat && !r.sent) continue;  // assigned but unsent
    included.push_back(&r);
  }
  if (included.empty()) return;
  std::vector<double> rewards = bandit_rewards(included);

  for (Arm arm : {Arm::control, Arm::treat}) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < included.size(); ++i)
      if (*included[i]->arm == arm) rows.push_back(static_cast<Eigen::Index>(i));
    if (rows.empty()) continue;
    Eigen::MatrixXd X(rows.size(), static_cast<Eigen::Index>(bandit.dim()));
    Eigen::VectorXd y(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& ctx = included[static_cast<std::size_t>(rows[k])]->context;
      X.row(static_cast<Eigen::Index>(k)) =
          Eigen::Map<const Eigen::RowVectorXd>(ctx.data(), static_cast<Eigen::Index>(ctx.size()));
      y[static_cast<Eigen::Index>(k)] = rewards[static_cast<std::size_t>(rows[k])];
    }
    bandit.arm(arm) = posterior_update(bandit.arm(arm), X, y);
  }
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, std::vector<EventRecord> events,
                         const Population* population, const RunOptions& options) {
  config.validate();
  RunResult rr;
  bool resumed = false;
  if (options.resume && !options.checkpoint_path.empty() &&
      load_checkpoint(config, options.checkpoint_path, rr)) {
    resumed = true;
    if (options.verbose)
      std::cerr << "resuming " << config.name << " after week " << rr.state.completed_weeks
                << "\n";
  }
  if (!resumed) {
    std::stable_sort(events.begin(), events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.ts < b.ts; });
    rr.state = init_experiment(config, events);
    rr.events = std::move(events);
  }

  UnixSeconds replay_until = 0;
  if (!population) {
    for (const auto& e : rr.events) replay_until = std::max(replay_until, e.ts);
  }
  const int sim_week_offset = population ? population->config.weeks : 0;

  for (int week = rr.state.completed_weeks + 1; week <= config.duration_weeks; ++week) {
    try {
      const UnixSeconds t = config.decision_instant(week);
      DecisionPointResult dp;
      {
        EventIndex index(rr.events);
        dp = run_decision_point(rr.state, index, week);
      }
      merge_events(rr.events, std::move(dp.nudge_events));
      if (population) {
        merge_events(rr.events,
                     step_week(*population, dp.pending, t, sim_week_offset + week - 1));
      }
      {
        EventIndex index(rr.events);
        UnixSeconds log_until = population ? t + kSecondsPerWeek : replay_until;
        collect_rewards(index, dp.records, config, log_until);
      }
      apply_posterior_updates(rr.state.bandit, dp.records);
      merge_events(rr.events,
                   expire_nudges(rr.events, t + kSecondsPerWeek, config.nudge_expiry_days));

      int treat = 0, adaptive = 0;
      for (const auto& r : dp.records) {
        if (r.group != Group::adaptive) continue;
        ++adaptive;
        if (r.arm && *r.arm == Arm::treat) ++treat;
      }
      rr.weekly_treat_fraction.push_back(
          adaptive > 0 ? static_cast<double>(treat) / static_cast<double>(adaptive) : 0.0);
      rr.skipped_no_pair += dp.skipped_no_pair;
      rr.decisions.insert(rr.decisions.end(), std::make_move_iterator(dp.records.begin()),
                          std::make_move_iterator(dp.records.end()));
      rr.state.completed_weeks = week;

      if (options.verbose)
        std::cerr << config.name << " week " << week << ": treat fraction "
                  << rr.weekly_treat_fraction.back() << ", skipped " << dp.skipped_no_pair
                  << "\n";
      if (!options.checkpoint_path.empty()) save_checkpoint(rr, options.checkpoint_path);
      if (options.stop_after_week == week) break;
    } catch (const WindowNotElapsed&) {
      throw;
    } catch (const Error& e) {
      throw Error("week " + std::to_string(week) + ": " + e.what());
    }
  }
  return rr;
}

}  // namespace nudge
