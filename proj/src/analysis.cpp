#include "nudge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nudge {

using nlohmann::json;

SeriesMatrix expenditure_series(const std::vector<DecisionRecord>& decisions,
                                const EventIndex& index, const ExperimentConfig& config,
                                SeriesMode mode) {
  SeriesMatrix m;
  m.t0 = config.decision_instant(1);
  m.days = config.duration_weeks * 7;

  std::map<std::string, std::pair<std::string, Group>> seen;  // user -> pharmacy, group
  for (const auto& d : decisions) seen.emplace(d.user_id, std::make_pair(d.pharmacy_id, d.group));
  for (const auto& [user, info] : seen) {
    m.users.push_back(user);
    m.pharmacies.push_back(info.first);
    m.group.push_back(info.second);
  }

  m.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.users.size()), m.days);
  for (std::size_t u = 0; u < m.users.size(); ++u) {
    for (std::size_t i :
         index.pharmacy_orders_in(m.pharmacies[u], m.t0, m.t0 + m.days * kSecondsPerDay)) {
      const auto& e = index.events()[i];
      auto day = static_cast<Eigen::Index>((e.ts - m.t0) / kSecondsPerDay);
      m.values(static_cast<Eigen::Index>(u), day) += e.order().expenditure();
    }
  }
  if (mode == SeriesMode::accumulated) {
    for (Eigen::Index u = 0; u < m.values.rows(); ++u)
      for (Eigen::Index d = 1; d < m.values.cols(); ++d) m.values(u, d) += m.values(u, d - 1);
  }
  return m;
}

EvolutionSeries evolution_tests(const SeriesMatrix& series, double alpha,
                                const std::vector<bool>* keep) {
  EvolutionSeries out;
  int significant = 0, tested = 0, run = 0;
  for (int d = 0; d < series.days; ++d) {
    std::vector<double> adaptive, control;
    for (std::size_t u = 0; u < series.users.size(); ++u) {
      if (keep && !(*keep)[u]) continue;
      double v = series.values(static_cast<Eigen::Index>(u), d);
      (series.group[u] == Group::adaptive ? adaptive : control).push_back(v);
    }
    TestResult r;
    r.day = d;
    try {
      r = welch_ttest(adaptive, control, alpha);
      r.day = d;
      ++tested;
      if (r.significant) {
        ++significant;
        ++run;
        out.longest_significant_run = std::max(out.longest_significant_run, run);
      } else {
        run = 0;
      }
    } catch (const DegenerateSample&) {
      r.degenerate = true;
      r.alpha = alpha;
      run = 0;
    }
    out.tests.push_back(std::move(r));
  }
  out.significant_fraction =
      tested > 0 ? static_cast<double>(significant) / static_cast<double>(tested) : 0.0;
  return out;
}

AllocationSeries bandit_allocation_series(const std::vector<DecisionRecord>& decisions) {
  std::map<int, std::pair<int, int>> weekly;  // week -> {treat, adaptive}
  for (const auto& d : decisions) {
    if (d.group != Group::adaptive) continue;
    auto& [treat, total] = weekly[d.week];
    ++total;
    if (d.arm && *d.arm == Arm::treat) ++treat;
  }
  AllocationSeries out;
  for (const auto& [week, counts] : weekly) {
    double f = counts.second > 0
                   ? static_cast<double>(counts.first) / static_cast<double>(counts.second)
                   : 0.0;
    out.weekly_treat_fraction.push_back(f);
    if (f > 0.5) ++out.majority_nudged_weeks;
  }
  return out;
}

ReactionBreakdown reaction_breakdown(const std::vector<DecisionRecord>& decisions) {
  ReactionBreakdown out;
  for (const auto& d : decisions) {
    if (!d.sent) continue;
    ++out.sent;
    switch (d.reaction) {
      case Reaction::opened: out.opened += 1.0; break;
      case Reaction::closed: out.closed += 1.0; break;
      case Reaction::ignored: out.ignored += 1.0; break;
      case Reaction::not_applicable: break;
    }
  }
  if (out.sent > 0) {
    out.opened /= static_cast<double>(out.sent);
    out.closed /= static_cast<double>(out.sent);
    out.ignored /= static_cast<double>(out.sent);
  }
  return out;
}

SuccessResult recommendation_success(const std::vector<DecisionRecord>& decisions,
                                     const EventIndex& index, UnixSeconds horizon) {
  SuccessResult out;
  for (const auto& d : decisions) {
    if (!d.sent || !d.pair) continue;
    ++out.sent;
    UnixSeconds sent_ts = 0;
    // The nudge_sent timestamp is the week's decision instant; find it from
    // the log to stay robust to schedule details.
    bool success = false;
    for (std::size_t i :
         index.user_events_in(d.user_id, EventKind::nudge_sent,
                              std::numeric_limits<UnixSeconds>::min(), horizon)) {
      if (index.events()[i].nudge().decision_id == d.decision_id) {
        sent_ts = index.events()[i].ts;
        break;
      }
    }
    for (std::size_t i : index.pharmacy_orders_in(d.pharmacy_id, sent_ts + 1, horizon)) {
      for (const auto& line : index.events()[i].order().lines) {
        if (line.sku == d.pair->target_sku) {
          success = true;
          break;
        }
      }
      if (success) break;
    }
    if (success) ++out.succeeded;
    out.flags.push_back({d.decision_id, success});
  }
  out.fraction = out.sent > 0
                     ? static_cast<double>(out.succeeded) / static_cast<double>(out.sent)
                     : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Full report assembly

namespace {

// Weekly-scaled pharmacy expenditure over the 60 days before the experiment.
std::map<std::string, double> baseline_spend(const std::vector<DecisionRecord>& decisions,
                                             const EventIndex& index,
                                             const ExperimentConfig& config) {
  const UnixSeconds t0 = config.decision_instant(1);
  std::map<std::string, double> out;
  for (const auto& d : decisions) {
    if (out.count(d.user_id)) continue;
    double spend =
        index.pharmacy_expenditure_in(d.pharmacy_id, t0 - 60 * kSecondsPerDay, t0);
    out[d.user_id] = spend / (60.0 / 7.0);
  }
  return out;
}

std::vector<std::string> tercile_labels(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::string> labels(values.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    std::size_t t = order.size() ? rank * 3 / order.size() : 0;
    labels[order[rank]] = "t" + std::to_string(t + 1);
  }
  return labels;
}

TtestSummary summarize_ttests(const EvolutionSeries& accumulated) {
  TtestSummary s;
  s.significant_day_fraction = accumulated.significant_fraction;
  double max_d = 0.0, max_p = 0.0, sum_d = 0.0, sum_p = 0.0;
  int n = 0;
  for (const auto& t : accumulated.tests) {
    if (t.degenerate || !t.significant) continue;
    ++n;
    max_d = std::max(max_d, std::fabs(t.cohen_d));
    max_p = std::max(max_p, t.power);
    sum_d += std::fabs(t.cohen_d);
    sum_p += t.power;
  }
  if (n > 0) {
    s.largest_effect = max_d;
    s.largest_power = max_p;
    s.average_effect = sum_d / n;
    s.average_power = sum_p / n;
  }
  return s;
}

}  // namespace

AnalysisReport analyze(const ExperimentState& state,
                       const std::vector<DecisionRecord>& decisions,
                       const std::vector<EventRecord>& events, const AnalysisOptions& options) {
  const ExperimentConfig& config = state.config;
  EventIndex index(events);

  AnalysisReport rep;
  rep.experiment = config.name;
  rep.alpha = options.alpha;
  rep.duration_weeks = config.duration_weeks;
  rep.days = config.duration_weeks * 7;
  rep.n_cohort = static_cast<int>(state.cohort.size());
  rep.n_adaptive = static_cast<int>(state.adaptive.size());
  rep.n_pure_control = static_cast<int>(state.pure_control.size());

  SeriesMatrix daily = expenditure_series(decisions, index, config, SeriesMode::daily);
  SeriesMatrix accumulated = daily;
  for (Eigen::Index u = 0; u < accumulated.values.rows(); ++u)
    for (Eigen::Index d = 1; d < accumulated.values.cols(); ++d)
      accumulated.values(u, d) += accumulated.values(u, d - 1);

  rep.daily = evolution_tests(daily, options.alpha);
  rep.accumulated = evolution_tests(accumulated, options.alpha);
  rep.ttest_summary = summarize_ttests(rep.accumulated);

  auto baselines = baseline_spend(decisions, index, config);

  // Strata.
  for (const auto& kind : options.strata) {
    std::vector<std::string> labels(daily.users.size());
    if (kind == "region") {
      for (std::size_t u = 0; u < daily.users.size(); ++u)
        labels[u] = index.region_of(daily.users[u], daily.t0).value_or("unknown");
    } else if (kind == "baseline_tercile") {
      std::vector<double> vals(daily.users.size());
      for (std::size_t u = 0; u < daily.users.size(); ++u) vals[u] = baselines[daily.users[u]];
      labels = tercile_labels(vals);
    } else if (kind == "frequency_tercile") {
      std::vector<double> vals(daily.users.size());
      for (std::size_t u = 0; u < daily.users.size(); ++u) {
        std::set<std::int64_t> days;
        for (std::size_t i : index.pharmacy_orders_in(
                 daily.pharmacies[u], daily.t0 - 90 * kSecondsPerDay, daily.t0))
          days.insert(index.events()[i].ts / kSecondsPerDay);
        vals[u] = static_cast<double>(days.size());
      }
      labels = tercile_labels(vals);
    } else {
      throw Error("unknown stratum kind: " + kind);
    }

    std::set<std::string> distinct(labels.begin(), labels.end());
    for (const auto& value : distinct) {
      StratumSeries ss;
      ss.label = kind + "=" + value;
      std::vector<bool> keep(daily.users.size());
      for (std::size_t u = 0; u < keep.size(); ++u) {
        keep[u] = labels[u] == value;
        if (!keep[u]) continue;
        (daily.group[u] == Group::adaptive ? ss.n_adaptive : ss.n_pure_control) += 1;
      }
      if (ss.n_adaptive < 2 || ss.n_pure_control < 2) continue;
      ss.accumulated = evolution_tests(accumulated, options.alpha, &keep);
      rep.stratified.push_back(std::move(ss));
    }
  }

  // Logit on the binarized accumulated outcome.
  rep.logit.alpha = options.alpha;
  rep.logit.terms = {"intercept", "adaptive_arm", "baseline_expenditure"};
  try {
    Eigen::MatrixXd X(daily.users.size(), 3);
    Eigen::VectorXd y(daily.users.size());
    for (std::size_t u = 0; u < daily.users.size(); ++u) {
      auto i = static_cast<Eigen::Index>(u);
      X(i, 0) = 1.0;
      X(i, 1) = daily.group[u] == Group::adaptive ? 1.0 : 0.0;
      X(i, 2) = baselines[daily.users[u]];
      y[i] = accumulated.values(i, accumulated.values.cols() - 1) > 0.0 ? 1.0 : 0.0;
    }
    LogitFit fit = fit_logit(X, y);
    double zcrit = normal_quantile(1.0 - options.alpha / 2.0);
    for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
      rep.logit.beta.push_back(fit.beta[j]);
      rep.logit.se.push_back(fit.se[j]);
      double z = fit.se[j] > 0.0 ? fit.beta[j] / fit.se[j] : 0.0;
      rep.logit.z.push_back(z);
      rep.logit.significant.push_back(std::fabs(z) > zcrit);
    }
    rep.logit.ok = true;
  } catch (const Error& e) {
    rep.logit.error = e.what();
  }

  // LMM on the longitudinal weekly rewards.
  try {
    std::map<std::string, int> user_index;
    for (const auto& d : decisions)
      user_index.emplace(d.user_id, static_cast<int>(user_index.size()));
    Eigen::MatrixXd X(decisions.size(), 4);
    Eigen::VectorXd y(decisions.size());
    std::vector<int> groups(decisions.size());
    for (std::size_t k = 0; k < decisions.size(); ++k) {
      const auto& d = decisions[k];
      auto i = static_cast<Eigen::Index>(k);
      X(i, 0) = 1.0;
      X(i, 1) = d.group == Group::adaptive ? 1.0 : 0.0;
      X(i, 2) = d.sent ? 1.0 : 0.0;
      X(i, 3) = baselines[d.user_id];
      y[i] = d.reward.value_or(0.0);
      groups[k] = user_index[d.user_id];
    }
    rep.lmm = fit_lmm(X, y, groups,
                      {"intercept", "adaptive_arm", "nudged_that_week", "baseline_expenditure"},
                      options.alpha);
    rep.lmm_ok = true;
  } catch (const Error& e) {
    rep.lmm_error = e.what();
  }

  rep.allocation = bandit_allocation_series(decisions);

  // Latest context per adaptive participant feeds sensitivity and t-SNE.
  std::map<std::string, const DecisionRecord*> latest;
  for (const auto& d : decisions) {
    if (d.group != Group::adaptive) continue;
    auto [it, inserted] = latest.emplace(d.user_id, &d);
    if (!inserted && d.week > it->second->week) it->second = &d;
  }
  std::vector<std::string> ctx_users;
  std::vector<std::vector<double>> contexts;
  for (const auto& [user, rec] : latest) {
    ctx_users.push_back(user);
    contexts.push_back(rec->context);
  }

  try {
    rep.sensitivity = sensitivity(state.bandit, contexts);
    rep.sensitivity.names = state.feature_names();
    rep.sensitivity_ok = true;
  } catch (const Error& e) {
    rep.sensitivity_error = e.what();
  }

  if (options.run_tsne && contexts.size() >= 5) {
    Eigen::MatrixXd M(contexts.size(), contexts.front().size());
    for (std::size_t u = 0; u < contexts.size(); ++u)
      M.row(static_cast<Eigen::Index>(u)) = Eigen::Map<const Eigen::RowVectorXd>(
          contexts[u].data(), static_cast<Eigen::Index>(contexts[u].size()));
    TsneOptions topt;
    topt.perplexity = options.tsne_perplexity;
    topt.iterations = options.tsne_iterations;
    topt.seed = options.tsne_seed;
    TsneResult tr = tsne_embed(M, topt);

    EmbeddingResult emb;
    emb.users = ctx_users;
    emb.coords = std::move(tr.embedding);
    emb.kl_initial = tr.kl_initial;
    emb.kl_final = tr.kl_final;
    emb.perplexity_max_error = tr.perplexity_max_error;
    for (std::size_t u = 0; u < contexts.size(); ++u) {
      double p = arm_probability_analytic(state.bandit, contexts[u]);
      emb.best_arm.push_back(p > 0.5 ? 1 : 0);
      emb.prob_gap.push_back(std::fabs(2.0 * p - 1.0));
    }
    rep.embedding = std::move(emb);
  }

  rep.reactions = reaction_breakdown(decisions);
  rep.success = recommendation_success(decisions, index, config.experiment_end());
  return rep;
}

// ---------------------------------------------------------------------------
// Writers

namespace {

json test_to_json(const TestResult& t) {
  return json{{"day", t.day},       {"t", t.t},
              {"df", t.df},         {"p", t.p},
              {"cohen_d", t.cohen_d}, {"power", t.power},
              {"mean_diff", t.mean_diff}, {"ci_lo", t.ci_lo},
              {"ci_hi", t.ci_hi},   {"significant", t.significant},
              {"degenerate", t.degenerate}};
}

json evolution_to_json(const EvolutionSeries& s) {
  json tests = json::array();
  for (const auto& t : s.tests) tests.push_back(test_to_json(t));
  return json{{"tests", std::move(tests)},
              {"significant_fraction", s.significant_fraction},
              {"longest_significant_run", s.longest_significant_run}};
}

}  // namespace

void write_report_json(const AnalysisReport& rep, const std::string& path) {
  json j;
  j["experiment"] = rep.experiment;
  j["alpha"] = rep.alpha;
  j["duration_weeks"] = rep.duration_weeks;
  j["days"] = rep.days;
  j["cohort"] = {{"total", rep.n_cohort},
                 {"adaptive", rep.n_adaptive},
                 {"pure_control", rep.n_pure_control}};
  j["daily"] = evolution_to_json(rep.daily);
  j["accumulated"] = evolution_to_json(rep.accumulated);
  json summary{{"significant_day_fraction", rep.ttest_summary.significant_day_fraction}};
  if (rep.ttest_summary.largest_effect) {
    summary["largest_effect"] = *rep.ttest_summary.largest_effect;
    summary["largest_power"] = *rep.ttest_summary.largest_power;
    summary["average_effect"] = *rep.ttest_summary.average_effect;
    summary["average_power"] = *rep.ttest_summary.average_power;
  }
  j["ttest_summary"] = std::move(summary);

  json strat = json::array();
  for (const auto& s : rep.stratified) {
    strat.push_back(json{{"label", s.label},
                         {"n_adaptive", s.n_adaptive},
                         {"n_pure_control", s.n_pure_control},
                         {"accumulated", evolution_to_json(s.accumulated)}});
  }
  j["stratified"] = std::move(strat);

  json logit{{"ok", rep.logit.ok}, {"alpha", rep.logit.alpha}};
  if (rep.logit.ok) {
    json terms = json::array();
    for (std::size_t k = 0; k < rep.logit.terms.size(); ++k) {
      terms.push_back(json{{"term", rep.logit.terms[k]},
                           {"estimate", rep.logit.beta[k]},
                           {"se", rep.logit.se[k]},
                           {"z", rep.logit.z[k]},
                           {"significant", static_cast<bool>(rep.logit.significant[k])}});
    }
    logit["coefficients"] = std::move(terms);
  } else {
    logit["error"] = rep.logit.error;
  }
  j["logit"] = std::move(logit);

  json lmm{{"ok", rep.lmm_ok}};
  if (rep.lmm_ok) {
    json terms = json::array();
    for (std::size_t k = 0; k < rep.lmm.terms.size(); ++k) {
      terms.push_back(json{{"term", rep.lmm.terms[k]},
                           {"estimate", rep.lmm.beta[static_cast<Eigen::Index>(k)]},
                           {"se", rep.lmm.se[static_cast<Eigen::Index>(k)]},
                           {"significant", static_cast<bool>(rep.lmm.significant[k])}});
    }
    lmm["coefficients"] = std::move(terms);
    lmm["var_user"] = rep.lmm.var_user;
    lmm["var_resid"] = rep.lmm.var_resid;
    lmm["gamma"] = rep.lmm.gamma;
    lmm["reml"] = rep.lmm.reml;
    lmm["converged"] = rep.lmm.converged;
  } else {
    lmm["error"] = rep.lmm_error;
  }
  j["lmm"] = std::move(lmm);

  j["bandit"] = {{"weekly_treat_fraction", rep.allocation.weekly_treat_fraction},
                 {"majority_nudged_weeks", rep.allocation.majority_nudged_weeks}};

  json sens{{"ok", rep.sensitivity_ok}};
  if (rep.sensitivity_ok) {
    json feats = json::array();
    for (std::size_t k = 0; k < rep.sensitivity.value.size(); ++k) {
      feats.push_back(json{
          {"feature",
           k < rep.sensitivity.names.size() ? rep.sensitivity.names[k] : std::to_string(k)},
          {"value", rep.sensitivity.value[k]},
          {"raw_mean", rep.sensitivity.raw_mean[k]},
          {"raw_std", rep.sensitivity.raw_std[k]},
          {"threshold", rep.sensitivity.threshold[k]}});
    }
    sens["features"] = std::move(feats);
  } else {
    sens["error"] = rep.sensitivity_error;
  }
  j["sensitivity"] = std::move(sens);

  if (rep.embedding) {
    const auto& e = *rep.embedding;
    json pts = json::array();
    for (std::size_t k = 0; k < e.users.size(); ++k) {
      pts.push_back(json{{"user", e.users[k]},
                         {"x", e.coords(static_cast<Eigen::Index>(k), 0)},
                         {"y", e.coords(static_cast<Eigen::Index>(k), 1)},
                         {"best_arm", e.best_arm[k] ? "treat" : "control"},
                         {"prob_gap", e.prob_gap[k]}});
    }
    j["embedding"] = {{"points", std::move(pts)},
                      {"kl_initial", e.kl_initial},
                      {"kl_final", e.kl_final},
                      {"perplexity_max_error", e.perplexity_max_error}};
  }

  j["reactions"] = {{"opened", rep.reactions.opened},
                    {"closed", rep.reactions.closed},
                    {"ignored", rep.reactions.ignored},
                    {"sent", rep.reactions.sent}};
  json flags = json::array();
  for (const auto& f : rep.success.flags)
    flags.push_back(json{{"decision", f.decision_id}, {"success", f.success}});
  j["success"] = {{"fraction", rep.success.fraction},
                  {"sent", rep.success.sent},
                  {"succeeded", rep.success.succeeded},
                  {"flags", std::move(flags)}};

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write report: " + path);
  out << j.dump(2) << '\n';
}

namespace {

void write_evolution_csv(const EvolutionSeries& s, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write csv: " + path);
  out << "day,t,df,p,cohen_d,power,mean_diff,ci_lo,ci_hi,significant,degenerate\n";
  for (const auto& t : s.tests) {
    out << t.day << ',' << t.t << ',' << t.df << ',' << t.p << ',' << t.cohen_d << ',' << t.power
        << ',' << t.mean_diff << ',' << t.ci_lo << ',' << t.ci_hi << ',' << (t.significant ? 1 : 0)
        << ',' << (t.degenerate ? 1 : 0) << '\n';
  }
}

}  // namespace

void write_report_csvs(const AnalysisReport& rep, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_evolution_csv(rep.daily, (fs::path(out_dir) / "ttest_daily.csv").string());
  write_evolution_csv(rep.accumulated, (fs::path(out_dir) / "ttest_accumulated.csv").string());

  {
    std::ofstream out(fs::path(out_dir) / "lmm.csv", std::ios::trunc);
    out << "term,estimate,se,significant\n";
    if (rep.lmm_ok) {
      for (std::size_t k = 0; k < rep.lmm.terms.size(); ++k) {
        out << rep.lmm.terms[k] << ',' << rep.lmm.beta[static_cast<Eigen::Index>(k)] << ','
            << rep.lmm.se[static_cast<Eigen::Index>(k)] << ','
            << (rep.lmm.significant[k] ? 1 : 0) << '\n';
      }
      out << "var_user," << rep.lmm.var_user << ",,\n";
      out << "var_resid," << rep.lmm.var_resid << ",,\n";
    }
  }
  {
    std::ofstream out(fs::path(out_dir) / "sensitivity.csv", std::ios::trunc);
    out << "feature,value,raw_mean,raw_std,threshold\n";
    if (rep.sensitivity_ok) {
      for (std::size_t k = 0; k < rep.sensitivity.value.size(); ++k) {
        out << (k < rep.sensitivity.names.size() ? rep.sensitivity.names[k] : std::to_string(k))
            << ',' << rep.sensitivity.value[k] << ',' << rep.sensitivity.raw_mean[k] << ','
            << rep.sensitivity.raw_std[k] << ',' << rep.sensitivity.threshold[k] << '\n';
      }
    }
  }
  {
    std::ofstream out(fs::path(out_dir) / "embedding.csv", std::ios::trunc);
    out << "user,x,y,best_arm,prob_gap\n";
    if (rep.embedding) {
      const auto& e = *rep.embedding;
      for (std::size_t k = 0; k < e.users.size(); ++k) {
        out << e.users[k] << ',' << e.coords(static_cast<Eigen::Index>(k), 0) << ','
            << e.coords(static_cast<Eigen::Index>(k), 1) << ','
            << (e.best_arm[k] ? "treat" : "control") << ',' << e.prob_gap[k] << '\n';
      }
    }
  }
}

void write_accumulated_svg(const AnalysisReport& rep, const std::string& path) {
  const auto& tests = rep.accumulated.tests;
  if (tests.empty()) throw Error("write_accumulated_svg: no accumulated tests");
  const double width = 880, height = 420, ml = 70, mr = 20, mt = 20, mb = 45;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double ymin = 0.0, ymax = 0.0;
  for (const auto& t : tests) {
    if (t.degenerate) continue;
    ymin = std::min(ymin, t.ci_lo);
    ymax = std::max(ymax, t.ci_hi);
  }
  if (ymax <= ymin) ymax = ymin + 1.0;
  double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  auto xs = [&](double day) {
    return ml + pw * day / std::max<double>(1.0, static_cast<double>(tests.size() - 1));
  };
  auto ys = [&](double v) { return mt + ph * (1.0 - (v - ymin) / (ymax - ymin)); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  // CI band.
  svg << "<polygon fill=\"#7aa6d8\" fill-opacity=\"0.35\" stroke=\"none\" points=\"";
  for (const auto& t : tests) svg << xs(t.day) << ',' << ys(t.ci_hi) << ' ';
  for (auto it = tests.rbegin(); it != tests.rend(); ++it)
    svg << xs(it->day) << ',' << ys(it->ci_lo) << ' ';
  svg << "\"/>\n";

  // Zero line, axes.
  svg << "<line x1=\"" << ml << "\" y1=\"" << ys(0.0) << "\" x2=\"" << ml + pw << "\" y2=\""
      << ys(0.0) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"#444\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"#444\"/>\n";
  // Experiment period boundaries.
  svg << "<line x1=\"" << xs(0) << "\" y1=\"" << mt << "\" x2=\"" << xs(0) << "\" y2=\""
      << mt + ph << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  svg << "<line x1=\"" << xs(tests.size() - 1) << "\" y1=\"" << mt << "\" x2=\""
      << xs(tests.size() - 1) << "\" y2=\"" << mt + ph
      << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";

  // Mean difference.
  svg << "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"2\" points=\"";
  for (const auto& t : tests) svg << xs(t.day) << ',' << ys(t.mean_diff) << ' ';
  svg << "\"/>\n";

  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-size=\"13\">day since experiment start</text>\n";
  svg << "<text x=\"16\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " << mt + ph / 2
      << ")\">accumulated expenditure difference</text>\n";
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write svg: " + path);
  out << svg.str();
}

std::string report_markdown(const AnalysisReport& rep) {
  std::ostringstream md;
  auto pct = [](double v) {
    std::ostringstream s;
    s.precision(1);
    s << std::fixed << 100.0 * v << "%";
    return s.str();
  };
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(2);
    s << std::fixed << v;
    return s.str();
  };
  md << "# Impact report: " << rep.experiment << "\n\n";
  md << "Cohort: " << rep.n_cohort << " users (" << rep.n_adaptive << " adaptive, "
     << rep.n_pure_control << " pure control), " << rep.duration_weeks << " weeks, alpha = "
     << rep.alpha << "\n\n";
  md << "| Metric | Value |\n|---|---|\n";
  md << "| T-test: days with significant effect | "
     << pct(rep.ttest_summary.significant_day_fraction) << " |\n";
  md << "| T-test: largest effect | "
     << (rep.ttest_summary.largest_effect ? num(*rep.ttest_summary.largest_effect) : "-")
     << " |\n";
  md << "| T-test: largest statistical power | "
     << (rep.ttest_summary.largest_power ? num(*rep.ttest_summary.largest_power) : "-") << " |\n";
  md << "| T-test: average effect | "
     << (rep.ttest_summary.average_effect ? num(*rep.ttest_summary.average_effect) : "-")
     << " |\n";
  md << "| T-test: average statistical power | "
     << (rep.ttest_summary.average_power ? num(*rep.ttest_summary.average_power) : "-") << " |\n";
  if (rep.lmm_ok) {
    for (std::size_t k = 0; k < rep.lmm.terms.size(); ++k) {
      if (rep.lmm.terms[k] == "intercept") continue;
      md << "| LMM: " << rep.lmm.terms[k] << " | "
         << (rep.lmm.significant[k] ? num(rep.lmm.beta[static_cast<Eigen::Index>(k)]) : "-")
         << " |\n";
    }
  }
  double avg_treat = 0.0;
  for (double f : rep.allocation.weekly_treat_fraction) avg_treat += f;
  if (!rep.allocation.weekly_treat_fraction.empty())
    avg_treat /= static_cast<double>(rep.allocation.weekly_treat_fraction.size());
  md << "| Bandit: assigned to nudge | " << pct(avg_treat) << " |\n";
  md << "| Bandit: majority assigned to nudge | " << rep.allocation.majority_nudged_weeks << "/"
     << rep.allocation.weekly_treat_fraction.size() << " |\n";
  md << "| Successful recommendations | " << pct(rep.success.fraction) << " |\n";
  md << "| Reactions (opened / closed / ignored) | " << pct(rep.reactions.opened) << " / "
     << pct(rep.reactions.closed) << " / " << pct(rep.reactions.ignored) << " |\n";
  if (rep.logit.ok) {
    md << "\n## Logit (any purchase over the experiment)\n\n";
    md << "| Term | Estimate | SE | Significant |\n|---|---|---|---|\n";
    for (std::size_t k = 0; k < rep.logit.terms.size(); ++k) {
      md << "| " << rep.logit.terms[k] << " | " << num(rep.logit.beta[k]) << " | "
         << num(rep.logit.se[k]) << " | " << (rep.logit.significant[k] ? "yes" : "no") << " |\n";
    }
  }
  if (rep.sensitivity_ok) {
    md << "\n## Sensitivity (soft-thresholded dP(treat)/dx)\n\n";
    md << "| Feature | Value | Raw mean |\n|---|---|---|\n";
    for (std::size_t k = 0; k < rep.sensitivity.value.size(); ++k) {
      md << "| "
         << (k < rep.sensitivity.names.size() ? rep.sensitivity.names[k] : std::to_string(k))
         << " | " << rep.sensitivity.value[k] << " | " << rep.sensitivity.raw_mean[k] << " |\n";
    }
  }
  return md.str();
}

}  // namespace nudge
