#ifndef ROBUSTLEAK_EXPERIMENT_HPP
#define ROBUSTLEAK_EXPERIMENT_HPP

#include <optional>
#include <stdexcept>
#include <string>

#include "robustleak/data.hpp"
#include "robustleak/minfer.hpp"
#include "robustleak/train.hpp"

namespace robustleak {

// Raised for any problem with the experiment configuration itself; the CLI
// maps it to exit code 2 (runtime failures exit 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  enum class Source { kSynthetic, kCsv, kIdx };
  Source source = Source::kSynthetic;
  // synthetic
  int classes = 10;
  int per_class = 120;
  int dim = 32;
  double spread = 0.06;
  std::uint64_t seed = 0;
  // csv / idx
  std::string path;
  std::string images, labels;
};

struct SplitSpec {
  int train = 600, test = 200, shadow_train = 200, shadow_test = 200;
  bool stratified = true;
  std::uint64_t seed = 0;
};

struct AuditSpec {
  std::vector<StrategyKind> strategies = {StrategyKind::kBenign, StrategyKind::kAdversarial,
                                          StrategyKind::kVerified};
  double epsilon = 0.0;                // attack / verification budget at audit time
  std::optional<AttackConfig> attack;  // unset: 20 steps of epsilon/8, at-input, final
  double temperature = 1.0;
};

struct SweepSpec {
  std::vector<double> attack_epsilons;
  std::vector<double> temperatures;
  std::vector<double> capacity_scales;
  std::vector<double> train_epsilons;
  std::vector<double> ratios;
};

struct HistogramSpec {
  int bins = 20;
  HistogramPartition partition = HistogramPartition::kNone;
  std::optional<double> epsilon;  // partition budget; default: audit epsilon
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  SplitSpec split;
  TrainConfig model;  // constraint box is filled in from the dataset at run time
  AuditSpec audit;
  SweepSpec sweeps;
  std::vector<std::vector<std::int64_t>> sensitivity_groups;  // empty: defaults
  HistogramSpec histogram;
  std::vector<std::uint64_t> seeds = {1};
  std::string output;
};

// Strict parse of the "robustleak/1" JSON schema; unknown keys anywhere are a
// ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// The model under audit trains on train + shadow_train, so the shadow
// members used for threshold fitting are really members.
struct PreparedData {
  LabeledDataset full;
  Split split;
  LabeledDataset model_train;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

// cfg.model with the constraint box taken from the data and the given seed.
TrainConfig make_train_config(const ExperimentConfig& cfg, const PreparedData& d,
                              std::uint64_t seed);

// Audit-time attack with eval defaults resolved (20 steps of epsilon/8).
AttackConfig resolve_audit_attack(const AuditSpec& audit);

// Evaluates the accuracy table and every requested strategy for one model.
// verified_applicable marks whether the verified strategy means anything for
// this model (it is reported "N.A." otherwise).
MembershipReport run_audit(const Model& m, bool verified_applicable, const PreparedData& d,
                           const AuditSpec& audit, RngStream& rng);

struct AuditArtifacts {
  Model model;
  TrainLog log;
  MembershipReport report;
};

// Train cfg.model on the prepared data under `seed`, then run_audit.
AuditArtifacts train_and_audit(const PreparedData& d, const ExperimentConfig& cfg,
                               std::uint64_t seed);

// ---- sweeps ----

struct EpsCurvePoint {
  double epsilon = 0.0;
  double shadow_accuracy = 0.0;
  double oracle_accuracy = 0.0;
};

// Adversarial-strategy audit across attack budgets, thresholds refit per
// budget. The entry at 0 coincides with the benign strategy exactly.
std::vector<EpsCurvePoint> sweep_attack_epsilon(const Model& m, const PreparedData& d,
                                                const std::vector<double>& grid,
                                                const AuditSpec& audit, RngStream& rng);

struct TempCurvePoint {
  double temperature = 0.0;
  double oracle_refit = 0.0;  // tau refit on the evaluation confidences at this T
  double shadow_refit = 0.0;  // tau refit on the shadow confidences at this T
  double fixed_tau = 0.0;     // tau fit on the shadow split at T=1 and reused
};

struct TempCurve {
  StrategyKind kind = StrategyKind::kBenign;
  std::vector<TempCurvePoint> points;
};

std::vector<TempCurve> sweep_temperature(const Model& m, bool verified_applicable,
                                         const PreparedData& d, const std::vector<double>& grid,
                                         const AuditSpec& audit, RngStream& rng);

struct CapacityRow {
  double scale = 0.0;
  std::vector<int> hidden;
  double adv_train_accuracy = 0.0;
  double benign_shadow_accuracy = 0.0;
  double benign_oracle_accuracy = 0.0;
};

// One model per scale, hidden widths multiplied by the scale.
std::vector<CapacityRow> sweep_capacity(const PreparedData& d, const ExperimentConfig& cfg,
                                        std::uint64_t seed);

struct BudgetRow {
  double epsilon = 0.0;
  MembershipReport report;
};

// One model per training budget, each audited at its own budget.
std::vector<BudgetRow> sweep_budget(const PreparedData& d, const ExperimentConfig& cfg,
                                    std::uint64_t seed);

struct RatioRow {
  double ratio = 0.0;
  MembershipReport report;
};

// Mixed-ratio models across the grid (method must be pgd-adv).
std::vector<RatioRow> sweep_ratio(const PreparedData& d, const ExperimentConfig& cfg,
                                  std::uint64_t seed);

// ---- sensitivity ----

struct SensitivityPoint {
  std::int64_t id = -1;
  int label = 0;
  double confidence_full = 0.0;
  double confidence_retrained = 0.0;
  double sensitivity = 0.0;  // |difference|
};

// `count` groups, each holding one train-set point per class.
std::vector<std::vector<std::int64_t>> default_sensitivity_groups(const PreparedData& d,
                                                                  int count);

// Retrains without each group (same seed) and measures how far each excluded
// point's confidence under the audited attack moves; at audit ε = 0 this is
// the plain prediction confidence. Results sorted ascending by sensitivity.
std::vector<SensitivityPoint> sensitivity_analysis(const PreparedData& d,
                                                   const ExperimentConfig& cfg,
                                                   const std::vector<std::vector<std::int64_t>>& groups,
                                                   std::uint64_t seed);

// ---- CLI entry ----

// Runs one subcommand (audit, sweep-eps, sweep-temp, sweep-capacity,
// sweep-budget, sweep-ratio, sensitivity, histogram) over every seed, writing
// reports and CSVs into out_dir.
void run_command(const std::string& command, const ExperimentConfig& cfg,
                 const std::string& out_dir);

std::string strategy_name(StrategyKind kind);

}  // namespace robustleak

#endif
