#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nudge/bandit.hpp"
#include "nudge/orchestrator.hpp"
#include "nudge/stats.hpp"
#include "nudge/tsne.hpp"

namespace nudge {

enum class SeriesMode { daily, accumulated };

// Per-user per-day pharmacy expenditure over the experiment span. Day d
// covers [t0 + d*86400, t0 + (d+1)*86400) with t0 the first decision instant.
struct SeriesMatrix {
  UnixSeconds t0 = 0;
  int days = 0;
  std::vector<std::string> users;
  std::vector<std::string> pharmacies;
  std::vector<Group> group;
  Eigen::MatrixXd values;  // users x days
};

SeriesMatrix expenditure_series(const std::vector<DecisionRecord>& decisions,
                                const EventIndex& index, const ExperimentConfig& config,
                                SeriesMode mode);

struct EvolutionSeries {
  std::vector<TestResult> tests;  // one per day; degenerate days are flagged
  double significant_fraction = 0.0;
  int longest_significant_run = 0;
};

// Welch test per day, adaptive vs pure control. `keep` (optional) restricts
// both groups to a stratum.
EvolutionSeries evolution_tests(const SeriesMatrix& series, double alpha,
                                const std::vector<bool>* keep = nullptr);

struct AllocationSeries {
  std::vector<double> weekly_treat_fraction;  // adaptive group only
  int majority_nudged_weeks = 0;              // weeks with fraction > 0.5
};

AllocationSeries bandit_allocation_series(const std::vector<DecisionRecord>& decisions);

struct ReactionBreakdown {
  double opened = 0.0;
  double closed = 0.0;
  double ignored = 0.0;
  std::int64_t sent = 0;
};

ReactionBreakdown reaction_breakdown(const std::vector<DecisionRecord>& decisions);

struct SuccessFlag {
  std::string decision_id;
  bool success = false;
};

struct SuccessResult {
  double fraction = 0.0;
  std::int64_t sent = 0;
  std::int64_t succeeded = 0;
  std::vector<SuccessFlag> flags;
};

// A sent nudge succeeds when its target sku is bought by the user's pharmacy
// strictly after the send and before `horizon`.
SuccessResult recommendation_success(const std::vector<DecisionRecord>& decisions,
                                     const EventIndex& index, UnixSeconds horizon);

struct EmbeddingResult {
  std::vector<std::string> users;
  Eigen::MatrixXd coords;  // n x 2
  std::vector<int> best_arm;       // 1 = treat
  std::vector<double> prob_gap;    // |2p - 1|, best minus second-best arm
  double kl_initial = 0.0;
  double kl_final = 0.0;
  double perplexity_max_error = 0.0;
};

struct LogitSummary {
  std::vector<std::string> terms;
  std::vector<double> beta;
  std::vector<double> se;
  std::vector<double> z;
  std::vector<bool> significant;
  double alpha = 0.10;
  bool ok = false;
  std::string error;
};

struct StratumSeries {
  std::string label;  // e.g. "region=Jakarta"
  EvolutionSeries accumulated;
  int n_adaptive = 0;
  int n_pure_control = 0;
};

struct TtestSummary {
  double significant_day_fraction = 0.0;
  std::optional<double> largest_effect;  // over significant days only
  std::optional<double> largest_power;
  std::optional<double> average_effect;
  std::optional<double> average_power;
};

struct AnalysisOptions {
  double alpha = 0.10;
  bool run_tsne = true;
  std::vector<std::string> strata;  // of {"region","baseline_tercile","frequency_tercile"}
  double tsne_perplexity = 30.0;
  int tsne_iterations = 1000;
  std::uint64_t tsne_seed = 0;
};

struct AnalysisReport {
  std::string experiment;
  double alpha = 0.10;
  int duration_weeks = 0;
  int days = 0;
  int n_cohort = 0;
  int n_adaptive = 0;
  int n_pure_control = 0;

  EvolutionSeries daily;
  EvolutionSeries accumulated;
  TtestSummary ttest_summary;  // over the accumulated series
  std::vector<StratumSeries> stratified;

  LogitSummary logit;
  LmmFit lmm;
  bool lmm_ok = false;
  std::string lmm_error;

  AllocationSeries allocation;
  SensitivityReport sensitivity;
  bool sensitivity_ok = false;
  std::string sensitivity_error;
  std::optional<EmbeddingResult> embedding;

  ReactionBreakdown reactions;
  SuccessResult success;
};

AnalysisReport analyze(const ExperimentState& state,
                       const std::vector<DecisionRecord>& decisions,
                       const std::vector<EventRecord>& events, const AnalysisOptions& options);

void write_report_json(const AnalysisReport& report, const std::string& path);
// ttest_daily.csv, ttest_accumulated.csv, lmm.csv, sensitivity.csv, embedding.csv
void write_report_csvs(const AnalysisReport& report, const std::string& out_dir);
// Accumulated mean-difference line with the shaded (1-alpha) CI band.
void write_accumulated_svg(const AnalysisReport& report, const std::string& path);
std::string report_markdown(const AnalysisReport& report);

}  // namespace nudge
