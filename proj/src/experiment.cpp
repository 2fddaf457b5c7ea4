#include "robustleak/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "robustleak/losses.hpp"
#include "robustleak/verify.hpp"

namespace robustleak {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---- config parsing ----

const json& expect_object(const json& v, const std::string& where) {
  if (!v.is_object()) throw ConfigError(where + ": expected an object");
  return v;
}

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

bool has(const json& o, const char* key) { return o.find(key) != o.end(); }

std::string require_string(const json& o, const std::string& where, const char* key) {
  auto it = o.find(key);
  if (it == o.end()) throw ConfigError(where + ": missing required key '" + key + "'");
  if (!it->is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return it->get<std::string>();
}

double get_double(const json& o, const std::string& where, const char* key, double dflt) {
  auto it = o.find(key);
  if (it == o.end()) return dflt;
  if (!it->is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return it->get<double>();
}

int get_int(const json& o, const std::string& where, const char* key, int dflt) {
  auto it = o.find(key);
  if (it == o.end()) return dflt;
  if (!it->is_number_integer())
    throw ConfigError(where + "." + key + ": expected an integer");
  return static_cast<int>(it->get<std::int64_t>());
}

bool get_bool(const json& o, const std::string& where, const char* key, bool dflt) {
  auto it = o.find(key);
  if (it == o.end()) return dflt;
  if (!it->is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
  return it->get<bool>();
}

std::uint64_t parse_seed_value(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ConfigError(where + ": expected a non-negative integer");
  return static_cast<std::uint64_t>(v.get<std::int64_t>());
}

std::vector<double> number_array(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty())
    throw ConfigError(where + ": expected a non-empty array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const json& e : v) {
    if (!e.is_number()) throw ConfigError(where + ": expected numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

TrainMethod parse_method(const std::string& s, const std::string& where) {
  if (s == "natural") return TrainMethod::kNatural;
  if (s == "pgd-adv") return TrainMethod::kPgdAdv;
  if (s == "dist-adv") return TrainMethod::kDistAdv;
  if (s == "diff-adv") return TrainMethod::kDiffAdv;
  if (s == "ibp-verified") return TrainMethod::kIbpVerified;
  throw ConfigError(where + ": unknown method '" + s + "'");
}

const char* method_name(TrainMethod m) {
  switch (m) {
    case TrainMethod::kNatural: return "natural";
    case TrainMethod::kPgdAdv: return "pgd-adv";
    case TrainMethod::kDistAdv: return "dist-adv";
    case TrainMethod::kDiffAdv: return "diff-adv";
    case TrainMethod::kIbpVerified: return "ibp-verified";
  }
  return "natural";
}

VerifiedLoss parse_verified_loss(const std::string& s, const std::string& where) {
  if (s == "cross-entropy") return VerifiedLoss::kCrossEntropy;
  if (s == "softplus-margin") return VerifiedLoss::kSoftplusMargin;
  throw ConfigError(where + ": unknown verified loss '" + s + "'");
}

const char* verified_loss_name(VerifiedLoss l) {
  return l == VerifiedLoss::kCrossEntropy ? "cross-entropy" : "softplus-margin";
}

StrategyKind parse_strategy(const std::string& s, const std::string& where) {
  if (s == "benign") return StrategyKind::kBenign;
  if (s == "adversarial") return StrategyKind::kAdversarial;
  if (s == "verified") return StrategyKind::kVerified;
  throw ConfigError(where + ": unknown strategy '" + s + "'");
}

AttackInit parse_init(const std::string& s, const std::string& where) {
  if (s == "at-input") return AttackInit::kAtInput;
  if (s == "random-in-ball") return AttackInit::kRandomInBall;
  throw ConfigError(where + ": unknown init '" + s + "'");
}

AttackIterate parse_iterate(const std::string& s, const std::string& where) {
  if (s == "final") return AttackIterate::kFinal;
  if (s == "best-loss") return AttackIterate::kBestLoss;
  throw ConfigError(where + ": unknown iterate '" + s + "'");
}

HistogramPartition parse_partition(const std::string& s, const std::string& where) {
  if (s == "none") return HistogramPartition::kNone;
  if (s == "secure-insecure") return HistogramPartition::kSecureInsecure;
  throw ConfigError(where + ": unknown partition '" + s + "'");
}

AttackConfig parse_attack(const json& o, const std::string& where) {
  expect_object(o, where);
  check_keys(o, where, {"steps", "step_size", "init", "iterate", "gamma"});
  AttackConfig a;
  a.steps = get_int(o, where, "steps", a.steps);
  if (a.steps < 0) throw ConfigError(where + ".steps: must be >= 0");
  a.step_size = get_double(o, where, "step_size", a.step_size);
  if (a.step_size < 0.0) throw ConfigError(where + ".step_size: must be >= 0");
  if (has(o, "init")) a.init = parse_init(require_string(o, where, "init"), where + ".init");
  if (has(o, "iterate"))
    a.iterate = parse_iterate(require_string(o, where, "iterate"), where + ".iterate");
  a.gamma = get_double(o, where, "gamma", a.gamma);
  if (a.gamma < 0.0) throw ConfigError(where + ".gamma: must be >= 0");
  return a;
}

DatasetSpec parse_dataset(const json& o) {
  expect_object(o, "dataset");
  const std::string type = require_string(o, "dataset", "type");
  DatasetSpec ds;
  if (type == "synthetic") {
    ds.source = DatasetSpec::Source::kSynthetic;
    check_keys(o, "dataset", {"type", "classes", "per_class", "dim", "spread", "seed"});
    ds.classes = get_int(o, "dataset", "classes", ds.classes);
    if (ds.classes < 2) throw ConfigError("dataset.classes: must be >= 2");
    ds.per_class = get_int(o, "dataset", "per_class", ds.per_class);
    if (ds.per_class < 1) throw ConfigError("dataset.per_class: must be >= 1");
    ds.dim = get_int(o, "dataset", "dim", ds.dim);
    if (ds.dim < 2) throw ConfigError("dataset.dim: must be >= 2");
    ds.spread = get_double(o, "dataset", "spread", ds.spread);
    if (!(ds.spread > 0.0)) throw ConfigError("dataset.spread: must be > 0");
    if (has(o, "seed")) ds.seed = parse_seed_value(o.at("seed"), "dataset.seed");
  } else if (type == "csv") {
    ds.source = DatasetSpec::Source::kCsv;
    check_keys(o, "dataset", {"type", "path"});
    ds.path = require_string(o, "dataset", "path");
  } else if (type == "idx") {
    ds.source = DatasetSpec::Source::kIdx;
    check_keys(o, "dataset", {"type", "images", "labels"});
    ds.images = require_string(o, "dataset", "images");
    ds.labels = require_string(o, "dataset", "labels");
  } else {
    throw ConfigError("dataset.type: unknown type '" + type + "'");
  }
  return ds;
}

SplitSpec parse_split(const json& o) {
  expect_object(o, "split");
  check_keys(o, "split", {"train", "test", "shadow_train", "shadow_test", "stratified", "seed"});
  SplitSpec sp;
  sp.train = get_int(o, "split", "train", sp.train);
  sp.test = get_int(o, "split", "test", sp.test);
  sp.shadow_train = get_int(o, "split", "shadow_train", sp.shadow_train);
  sp.shadow_test = get_int(o, "split", "shadow_test", sp.shadow_test);
  if (sp.train < 1 || sp.test < 1 || sp.shadow_train < 1 || sp.shadow_test < 1)
    throw ConfigError("split: every part needs at least one example");
  sp.stratified = get_bool(o, "split", "stratified", sp.stratified);
  if (has(o, "seed")) sp.seed = parse_seed_value(o.at("seed"), "split.seed");
  return sp;
}

TrainConfig parse_model(const json& o) {
  const std::string where = "model";
  expect_object(o, where);
  check_keys(o, where,
             {"method", "hidden", "epochs", "batch_size", "learning_rate", "momentum", "alpha",
              "epsilon", "adv_train_ratio", "da_weight", "verified_loss", "attack"});
  TrainConfig tc;
  tc.method = parse_method(require_string(o, where, "method"), "model.method");
  if (has(o, "hidden")) {
    const json& h = o.at("hidden");
    if (!h.is_array() || h.empty())
      throw ConfigError("model.hidden: expected a non-empty array of widths");
    tc.hidden.clear();
    for (const json& v : h) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 1)
        throw ConfigError("model.hidden: widths must be positive integers");
      tc.hidden.push_back(static_cast<int>(v.get<std::int64_t>()));
    }
  }
  tc.epochs = get_int(o, where, "epochs", tc.epochs);
  if (tc.epochs < 0) throw ConfigError("model.epochs: must be >= 0");
  tc.batch_size = get_int(o, where, "batch_size", tc.batch_size);
  if (tc.batch_size < 1) throw ConfigError("model.batch_size: must be >= 1");
  tc.learning_rate = get_double(o, where, "learning_rate", tc.learning_rate);
  if (!(tc.learning_rate > 0.0)) throw ConfigError("model.learning_rate: must be > 0");
  tc.momentum = get_double(o, where, "momentum", tc.momentum);
  if (tc.momentum < 0.0 || tc.momentum >= 1.0)
    throw ConfigError("model.momentum: must be in [0, 1)");
  tc.alpha = get_double(o, where, "alpha", tc.alpha);
  if (tc.alpha < 0.0 || tc.alpha > 1.0) throw ConfigError("model.alpha: must be in [0, 1]");
  tc.constraint.epsilon = get_double(o, where, "epsilon", 0.0);
  if (tc.constraint.epsilon < 0.0) throw ConfigError("model.epsilon: must be >= 0");
  tc.adv_train_ratio = get_double(o, where, "adv_train_ratio", tc.adv_train_ratio);
  if (tc.adv_train_ratio < 0.0 || tc.adv_train_ratio > 1.0)
    throw ConfigError("model.adv_train_ratio: must be in [0, 1]");
  const bool attacked = tc.method == TrainMethod::kPgdAdv || tc.method == TrainMethod::kDistAdv ||
                        tc.method == TrainMethod::kDiffAdv;
  if (tc.adv_train_ratio != 1.0 && !attacked)
    throw ConfigError("model.adv_train_ratio: applies to attacked methods only");
  tc.da_weight = get_double(o, where, "da_weight", tc.da_weight);
  if (tc.da_weight < 0.0) throw ConfigError("model.da_weight: must be >= 0");
  if (tc.da_weight > 0.0 && tc.method != TrainMethod::kPgdAdv &&
      tc.method != TrainMethod::kDistAdv)
    throw ConfigError("model.da_weight: applies to pgd-adv and dist-adv only");
  if (has(o, "verified_loss"))
    tc.verified_loss =
        parse_verified_loss(require_string(o, where, "verified_loss"), "model.verified_loss");
  if (has(o, "attack")) tc.attack = parse_attack(o.at("attack"), "model.attack");
  return tc;
}

AuditSpec parse_audit(const json& o, double model_epsilon) {
  expect_object(o, "audit");
  check_keys(o, "audit", {"strategies", "epsilon", "attack", "temperature"});
  AuditSpec a;
  a.epsilon = model_epsilon;
  if (has(o, "strategies")) {
    const json& s = o.at("strategies");
    if (!s.is_array()) throw ConfigError("audit.strategies: expected an array");
    a.strategies.clear();
    for (const json& v : s) {
      if (!v.is_string()) throw ConfigError("audit.strategies: expected strategy names");
      const StrategyKind k = parse_strategy(v.get<std::string>(), "audit.strategies");
      for (StrategyKind seen : a.strategies)
        if (seen == k)
          throw ConfigError("audit.strategies: duplicate '" + v.get<std::string>() + "'");
      a.strategies.push_back(k);
    }
  }
  a.epsilon = get_double(o, "audit", "epsilon", a.epsilon);
  if (a.epsilon < 0.0) throw ConfigError("audit.epsilon: must be >= 0");
  if (has(o, "attack")) a.attack = parse_attack(o.at("attack"), "audit.attack");
  a.temperature = get_double(o, "audit", "temperature", a.temperature);
  if (!(a.temperature > 0.0)) throw ConfigError("audit.temperature: must be > 0");
  return a;
}

SweepSpec parse_sweeps(const json& o) {
  expect_object(o, "sweeps");
  check_keys(o, "sweeps",
             {"attack_epsilons", "temperatures", "capacity_scales", "train_epsilons", "ratios"});
  SweepSpec sw;
  if (has(o, "attack_epsilons")) {
    sw.attack_epsilons = number_array(o.at("attack_epsilons"), "sweeps.attack_epsilons");
    for (std::size_t i = 0; i < sw.attack_epsilons.size(); ++i) {
      if (sw.attack_epsilons[i] < 0.0)
        throw ConfigError("sweeps.attack_epsilons: budgets must be >= 0");
      if (i > 0 && sw.attack_epsilons[i] < sw.attack_epsilons[i - 1])
        throw ConfigError("sweeps.attack_epsilons: must be sorted ascending");
    }
  }
  if (has(o, "temperatures")) {
    sw.temperatures = number_array(o.at("temperatures"), "sweeps.temperatures");
    for (double t : sw.temperatures)
      if (!(t > 0.0)) throw ConfigError("sweeps.temperatures: must be > 0");
  }
  if (has(o, "capacity_scales")) {
    sw.capacity_scales = number_array(o.at("capacity_scales"), "sweeps.capacity_scales");
    for (double s : sw.capacity_scales)
      if (!(s >= 1.0)) throw ConfigError("sweeps.capacity_scales: must be >= 1");
  }
  if (has(o, "train_epsilons")) {
    sw.train_epsilons = number_array(o.at("train_epsilons"), "sweeps.train_epsilons");
    for (double e : sw.train_epsilons)
      if (e < 0.0) throw ConfigError("sweeps.train_epsilons: budgets must be >= 0");
  }
  if (has(o, "ratios")) {
    sw.ratios = number_array(o.at("ratios"), "sweeps.ratios");
    for (double r : sw.ratios)
      if (r < 0.0 || r > 1.0) throw ConfigError("sweeps.ratios: must be in [0, 1]");
  }
  return sw;
}

std::vector<std::vector<std::int64_t>> parse_sensitivity(const json& o) {
  expect_object(o, "sensitivity");
  check_keys(o, "sensitivity", {"groups"});
  std::vector<std::vector<std::int64_t>> groups;
  if (!has(o, "groups")) return groups;
  const json& g = o.at("groups");
  if (!g.is_array() || g.empty())
    throw ConfigError("sensitivity.groups: expected a non-empty array of id lists");
  std::set<std::int64_t> seen;
  for (const json& grp : g) {
    if (!grp.is_array() || grp.empty())
      throw ConfigError("sensitivity.groups: each group needs at least one id");
    std::vector<std::int64_t> ids;
    for (const json& v : grp) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw ConfigError("sensitivity.groups: ids must be non-negative integers");
      const std::int64_t id = v.get<std::int64_t>();
      if (!seen.insert(id).second)
        throw ConfigError("sensitivity.groups: id " + std::to_string(id) +
                          " appears more than once");
      ids.push_back(id);
    }
    groups.push_back(std::move(ids));
  }
  return groups;
}

HistogramSpec parse_histogram(const json& o) {
  expect_object(o, "histogram");
  check_keys(o, "histogram", {"bins", "partition", "epsilon"});
  HistogramSpec h;
  h.bins = get_int(o, "histogram", "bins", h.bins);
  if (h.bins < 1) throw ConfigError("histogram.bins: must be >= 1");
  if (has(o, "partition"))
    h.partition =
        parse_partition(require_string(o, "histogram", "partition"), "histogram.partition");
  if (has(o, "epsilon")) {
    const double eps = get_double(o, "histogram", "epsilon", 0.0);
    if (eps < 0.0) throw ConfigError("histogram.epsilon: must be >= 0");
    h.epsilon = eps;
  }
  return h;
}

std::vector<std::uint64_t> parse_seeds(const json& v) {
  if (!v.is_array() || v.empty())
    throw ConfigError("seeds: expected a non-empty array of integers");
  std::vector<std::uint64_t> out;
  for (const json& e : v) out.push_back(parse_seed_value(e, "seeds"));
  return out;
}

// ---- confidence collection ----

// Every consumer of strategy confidences derives its stream from the same
// (strategy, split-part) tag, so the same quantity computed by an audit and
// by a sweep sees identical randomness.
std::uint64_t conf_tag(StrategyKind kind, int part) {
  return 100 + static_cast<std::uint64_t>(kind) * 4 + static_cast<std::uint64_t>(part);
}

void check_labels(const std::vector<Example>& set, int k, const char* which) {
  for (const Example& z : set)
    if (z.y < 0 || z.y >= k)
      throw std::invalid_argument(std::string("audit: label out of range in ") + which);
}

std::vector<Vec> strategy_logit_rows(const Model& m, StrategyKind kind,
                                     const PerturbationConstraint& c, const AttackConfig& atk,
                                     const std::vector<Example>& set, RngStream rng) {
  std::vector<Vec> out;
  out.reserve(set.size());
  for (const Example& z : set) {
    switch (kind) {
      case StrategyKind::kBenign:
        out.push_back(logits(m, z.x));
        break;
      case StrategyKind::kAdversarial:
        out.push_back(logits(m, pgd_untargeted(m, z, c, atk, rng)));
        break;
      case StrategyKind::kVerified:
        out.push_back(worst_case_logits(ibp_bounds(m, z.x, c), z.y));
        break;
    }
  }
  return out;
}

struct StrategyLogits {
  std::vector<Vec> train, test, shadow_train, shadow_test;
};

StrategyLogits collect_strategy_logits(const Model& m, StrategyKind kind,
                                       const PerturbationConstraint& c, const AttackConfig& atk,
                                       const PreparedData& d, const RngStream& rng) {
  const int k = m.num_classes();
  check_labels(d.split.train.examples, k, "train");
  check_labels(d.split.test.examples, k, "test");
  check_labels(d.split.shadow_train.examples, k, "shadow_train");
  check_labels(d.split.shadow_test.examples, k, "shadow_test");
  StrategyLogits sl;
  sl.train = strategy_logit_rows(m, kind, c, atk, d.split.train.examples, rng.child(conf_tag(kind, 0)));
  sl.test = strategy_logit_rows(m, kind, c, atk, d.split.test.examples, rng.child(conf_tag(kind, 1)));
  sl.shadow_train =
      strategy_logit_rows(m, kind, c, atk, d.split.shadow_train.examples, rng.child(conf_tag(kind, 2)));
  sl.shadow_test =
      strategy_logit_rows(m, kind, c, atk, d.split.shadow_test.examples, rng.child(conf_tag(kind, 3)));
  return sl;
}

std::vector<double> confidences_from(const std::vector<Vec>& rows,
                                     const std::vector<Example>& set, double temperature) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out[i] = temperature_scale(rows[i], temperature)[set[i].y];
  return out;
}

ConfidenceSummary summarize(const std::vector<double>& v) {
  ConfidenceSummary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

ModeResult mode_from(const ThresholdChoice& fit, const std::vector<double>& ev_m,
                     const std::vector<double>& ev_n) {
  ModeResult r;
  r.tau = fit.tau;
  r.gap = fit.gap;
  r.accuracy = inference_accuracy_from_confidences(ev_m, ev_n, fit.tau);
  r.advantage = inference_advantage(r.accuracy);
  return r;
}

PerturbationConstraint audit_constraint(const PreparedData& d, double epsilon) {
  PerturbationConstraint c;
  c.epsilon = epsilon;
  c.box_low = d.full.box_low;
  c.box_high = d.full.box_high;
  return c;
}

// ---- file emission ----

std::string sanitize_name(const std::string& name) {
  std::string out;
  for (char ch : name) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                    (ch >= '0' && ch <= '9') || ch == '-' || ch == '_' || ch == '.';
    out.push_back(ok ? ch : '-');
  }
  return out.empty() ? std::string("experiment") : out;
}

std::ofstream open_text(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  return out;
}

void write_json_file(const fs::path& p, const ordered_json& j) {
  std::ofstream out = open_text(p);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

ordered_json summary_json(const ConfidenceSummary& s) {
  ordered_json j;
  j["mean"] = s.mean;
  j["min"] = s.min;
  j["max"] = s.max;
  return j;
}

ordered_json mode_json(const ModeResult& r) {
  ordered_json j;
  j["tau"] = r.tau;
  j["gap"] = r.gap;
  j["accuracy"] = r.accuracy;
  j["advantage"] = r.advantage;
  return j;
}

ordered_json strategy_json(const StrategyReport& sr) {
  ordered_json j;
  j["kind"] = strategy_name(sr.kind);
  j["applicable"] = sr.applicable;
  if (!sr.applicable) {
    j["note"] = "N.A.";
    return j;
  }
  j["member_confidence"] = summary_json(sr.member);
  j["nonmember_confidence"] = summary_json(sr.nonmember);
  j["shadow"] = mode_json(sr.shadow);
  j["oracle"] = mode_json(sr.oracle);
  return j;
}

ordered_json report_json(const MembershipReport& rep) {
  ordered_json acc;
  acc["train"] = rep.accuracy.train;
  acc["test"] = rep.accuracy.test;
  acc["adv_train"] = rep.accuracy.adv_train;
  acc["adv_test"] = rep.accuracy.adv_test;
  if (rep.accuracy.has_verified) {
    acc["verified_train"] = rep.accuracy.verified_train;
    acc["verified_test"] = rep.accuracy.verified_test;
  } else {
    acc["verified_train"] = nullptr;
    acc["verified_test"] = nullptr;
  }
  ordered_json j;
  j["accuracy"] = acc;
  ordered_json fit;
  fit["members"] = rep.fit_members;
  fit["nonmembers"] = rep.fit_nonmembers;
  j["fit"] = fit;
  ordered_json arr = ordered_json::array();
  for (const StrategyReport& sr : rep.strategies) arr.push_back(strategy_json(sr));
  j["strategies"] = arr;
  return j;
}

ordered_json dataset_json(const PreparedData& d) {
  ordered_json j;
  j["examples"] = d.full.size();
  j["feature_dim"] = d.full.feature_dim;
  j["num_classes"] = d.full.num_classes;
  ordered_json sp;
  sp["train"] = d.split.train.size();
  sp["test"] = d.split.test.size();
  sp["shadow_train"] = d.split.shadow_train.size();
  sp["shadow_test"] = d.split.shadow_test.size();
  j["split"] = sp;
  return j;
}

ordered_json model_json(const TrainConfig& tc) {
  ordered_json j;
  j["method"] = method_name(tc.method);
  j["hidden"] = tc.hidden;
  j["epochs"] = tc.epochs;
  j["batch_size"] = tc.batch_size;
  j["learning_rate"] = tc.learning_rate;
  j["momentum"] = tc.momentum;
  j["alpha"] = tc.alpha;
  j["epsilon"] = tc.constraint.epsilon;
  j["adv_train_ratio"] = tc.adv_train_ratio;
  j["da_weight"] = tc.da_weight;
  j["verified_loss"] = verified_loss_name(tc.verified_loss);
  return j;
}

ordered_json audit_json(const AuditSpec& a) {
  ordered_json j;
  ordered_json names = ordered_json::array();
  for (StrategyKind k : a.strategies) names.push_back(strategy_name(k));
  j["strategies"] = names;
  j["epsilon"] = a.epsilon;
  j["temperature"] = a.temperature;
  return j;
}

ordered_json report_file_json(const ExperimentConfig& cfg, std::uint64_t seed,
                              const PreparedData& d, const MembershipReport& rep) {
  ordered_json j;
  j["schema"] = "robustleak-report/1";
  j["name"] = cfg.name;
  j["seed"] = seed;
  j["dataset"] = dataset_json(d);
  j["model"] = model_json(cfg.model);
  j["audit"] = audit_json(cfg.audit);
  j["report"] = report_json(rep);
  return j;
}

void append_strategy_columns(std::ostream& out, const MembershipReport& rep) {
  for (const StrategyReport& sr : rep.strategies) {
    if (!sr.applicable) {
      out << ",NA,NA";
      continue;
    }
    out << "," << format_double(sr.shadow.accuracy) << "," << format_double(sr.oracle.accuracy);
  }
}

void write_report_table_csv(const fs::path& p, const std::string& key_name,
                            const std::vector<double>& keys,
                            const std::vector<const MembershipReport*>& reps) {
  std::ofstream out = open_text(p);
  out << key_name << ",train_accuracy,test_accuracy,adv_train_accuracy,adv_test_accuracy"
      << ",verified_train_accuracy,verified_test_accuracy";
  if (!reps.empty())
    for (const StrategyReport& sr : reps.front()->strategies)
      out << "," << strategy_name(sr.kind) << "_shadow_accuracy,"
          << strategy_name(sr.kind) << "_oracle_accuracy";
  out << "\n";
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const MembershipReport& rep = *reps[i];
    out << format_double(keys[i]) << "," << format_double(rep.accuracy.train) << ","
        << format_double(rep.accuracy.test) << "," << format_double(rep.accuracy.adv_train)
        << "," << format_double(rep.accuracy.adv_test);
    if (rep.accuracy.has_verified)
      out << "," << format_double(rep.accuracy.verified_train) << ","
          << format_double(rep.accuracy.verified_test);
    else
      out << ",NA,NA";
    append_strategy_columns(out, rep);
    out << "\n";
  }
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

void write_eps_curve_csv(const fs::path& p, const std::vector<EpsCurvePoint>& curve) {
  std::ofstream out = open_text(p);
  out << "epsilon,shadow_accuracy,oracle_accuracy\n";
  for (const EpsCurvePoint& pt : curve)
    out << format_double(pt.epsilon) << "," << format_double(pt.shadow_accuracy) << ","
        << format_double(pt.oracle_accuracy) << "\n";
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

void write_temp_curves_csv(const fs::path& p, const std::vector<double>& grid,
                           const std::vector<TempCurve>& curves) {
  std::ofstream out = open_text(p);
  out << "temperature";
  for (const TempCurve& c : curves)
    out << "," << strategy_name(c.kind) << "_oracle_refit," << strategy_name(c.kind)
        << "_shadow_refit," << strategy_name(c.kind) << "_fixed_tau";
  out << "\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out << format_double(grid[i]);
    for (const TempCurve& c : curves) {
      const TempCurvePoint& pt = c.points[i];
      out << "," << format_double(pt.oracle_refit) << "," << format_double(pt.shadow_refit)
          << "," << format_double(pt.fixed_tau);
    }
    out << "\n";
  }
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

void write_capacity_csv(const fs::path& p, const std::vector<CapacityRow>& rows) {
  std::ofstream out = open_text(p);
  out << "scale,hidden,adv_train_accuracy,benign_shadow_accuracy,benign_oracle_accuracy\n";
  for (const CapacityRow& r : rows) {
    out << format_double(r.scale) << ",";
    for (std::size_t i = 0; i < r.hidden.size(); ++i) {
      if (i) out << "x";
      out << r.hidden[i];
    }
    out << "," << format_double(r.adv_train_accuracy) << ","
        << format_double(r.benign_shadow_accuracy) << ","
        << format_double(r.benign_oracle_accuracy) << "\n";
  }
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

void write_sensitivity_csv(const fs::path& p, const std::vector<SensitivityPoint>& pts) {
  std::ofstream out = open_text(p);
  out << "id,label,confidence_full,confidence_retrained,sensitivity\n";
  for (const SensitivityPoint& pt : pts)
    out << pt.id << "," << pt.label << "," << format_double(pt.confidence_full) << ","
        << format_double(pt.confidence_retrained) << "," << format_double(pt.sensitivity)
        << "\n";
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

void write_histogram_csv(const fs::path& p, const std::vector<HistogramRow>& rows,
                         bool partitioned) {
  std::ofstream out = open_text(p);
  out << "bucket_low,bucket_high,count";
  if (partitioned) out << ",secure_count,insecure_count";
  out << "\n";
  for (const HistogramRow& r : rows) {
    out << format_double(r.low) << "," << format_double(r.high) << "," << r.count;
    if (partitioned) out << "," << r.secure_count << "," << r.insecure_count;
    out << "\n";
  }
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

}  // namespace

std::string strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kBenign: return "benign";
    case StrategyKind::kAdversarial: return "adversarial";
    case StrategyKind::kVerified: return "verified";
  }
  return "benign";
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  expect_object(root, "config");
  check_keys(root, "config",
             {"schema", "name", "dataset", "split", "model", "audit", "sweeps", "sensitivity",
              "histogram", "seeds", "output"});
  const std::string schema = require_string(root, "config", "schema");
  if (schema != "robustleak/1")
    throw ConfigError("config.schema: expected \"robustleak/1\", got \"" + schema + "\"");
  ExperimentConfig cfg;
  if (has(root, "name")) {
    cfg.name = require_string(root, "config", "name");
    if (cfg.name.empty()) throw ConfigError("config.name: must not be empty");
  }
  if (!has(root, "dataset")) throw ConfigError("config: missing required key 'dataset'");
  cfg.dataset = parse_dataset(root.at("dataset"));
  if (has(root, "split")) cfg.split = parse_split(root.at("split"));
  if (!has(root, "model")) throw ConfigError("config: missing required key 'model'");
  cfg.model = parse_model(root.at("model"));
  if (has(root, "audit"))
    cfg.audit = parse_audit(root.at("audit"), cfg.model.constraint.epsilon);
  else
    cfg.audit.epsilon = cfg.model.constraint.epsilon;
  if (has(root, "sweeps")) cfg.sweeps = parse_sweeps(root.at("sweeps"));
  if (has(root, "sensitivity")) cfg.sensitivity_groups = parse_sensitivity(root.at("sensitivity"));
  if (has(root, "histogram")) cfg.histogram = parse_histogram(root.at("histogram"));
  if (has(root, "seeds")) cfg.seeds = parse_seeds(root.at("seeds"));
  if (has(root, "output")) cfg.output = require_string(root, "config", "output");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData d;
  switch (cfg.dataset.source) {
    case DatasetSpec::Source::kSynthetic:
      d.full = gen_synthetic(cfg.dataset.classes, cfg.dataset.per_class, cfg.dataset.dim,
                             cfg.dataset.spread, cfg.dataset.seed);
      break;
    case DatasetSpec::Source::kCsv:
      d.full = load_csv(cfg.dataset.path);
      break;
    case DatasetSpec::Source::kIdx:
      d.full = load_idx(cfg.dataset.images, cfg.dataset.labels);
      break;
  }
  try {
    d.split = make_split(d.full, cfg.split.train, cfg.split.test, cfg.split.shadow_train,
                         cfg.split.shadow_test, cfg.split.seed, cfg.split.stratified);
  } catch (const std::invalid_argument& e) {
    // Split sizes come straight from the config, so a bad request is a
    // config problem, not a runtime failure.
    throw ConfigError(std::string("split: ") + e.what());
  }
  d.model_train = concat(d.split.train, d.split.shadow_train);
  return d;
}

TrainConfig make_train_config(const ExperimentConfig& cfg, const PreparedData& d,
                              std::uint64_t seed) {
  TrainConfig tc = cfg.model;
  tc.constraint.box_low = d.full.box_low;
  tc.constraint.box_high = d.full.box_high;
  tc.seed = seed;
  return tc;
}

AttackConfig resolve_audit_attack(const AuditSpec& audit) {
  if (audit.attack) return *audit.attack;
  AttackConfig a;
  a.steps = 20;
  a.step_size = audit.epsilon / 8.0;
  if (audit.epsilon == 0.0) {
    a.steps = 0;
    a.step_size = 0.0;
  }
  return a;
}

MembershipReport run_audit(const Model& m, bool verified_applicable, const PreparedData& d,
                           const AuditSpec& audit, RngStream& rng) {
  if (audit.epsilon < 0.0) throw std::invalid_argument("audit: epsilon must be >= 0");
  if (!(audit.temperature > 0.0))
    throw std::invalid_argument("audit: temperature must be > 0");
  if (d.split.train.size() == 0 || d.split.test.size() == 0 ||
      d.split.shadow_train.size() == 0 || d.split.shadow_test.size() == 0)
    throw std::invalid_argument("audit: every split part must be non-empty");
  const AttackConfig atk = resolve_audit_attack(audit);
  const PerturbationConstraint c = audit_constraint(d, audit.epsilon);

  MembershipReport rep;
  rep.accuracy.train = accuracy(m, d.split.train);
  rep.accuracy.test = accuracy(m, d.split.test);
  {
    RngStream r = rng.child(90);
    rep.accuracy.adv_train = adv_accuracy(m, d.split.train, c, atk, r);
  }
  {
    RngStream r = rng.child(91);
    rep.accuracy.adv_test = adv_accuracy(m, d.split.test, c, atk, r);
  }
  if (verified_applicable) {
    rep.accuracy.has_verified = true;
    rep.accuracy.verified_train = verified_accuracy(m, d.split.train.examples, c);
    rep.accuracy.verified_test = verified_accuracy(m, d.split.test.examples, c);
  }
  rep.fit_members = static_cast<int>(d.split.shadow_train.size());
  rep.fit_nonmembers = static_cast<int>(d.split.shadow_test.size());

  for (StrategyKind kind : audit.strategies) {
    StrategyReport sr;
    sr.kind = kind;
    if (kind == StrategyKind::kVerified && !verified_applicable) {
      sr.applicable = false;
      rep.strategies.push_back(sr);
      continue;
    }
    const StrategyLogits sl = collect_strategy_logits(m, kind, c, atk, d, rng);
    const std::vector<double> ev_m =
        confidences_from(sl.train, d.split.train.examples, audit.temperature);
    const std::vector<double> ev_n =
        confidences_from(sl.test, d.split.test.examples, audit.temperature);
    const std::vector<double> sh_m =
        confidences_from(sl.shadow_train, d.split.shadow_train.examples, audit.temperature);
    const std::vector<double> sh_n =
        confidences_from(sl.shadow_test, d.split.shadow_test.examples, audit.temperature);
    sr.member = summarize(ev_m);
    sr.nonmember = summarize(ev_n);
    sr.shadow = mode_from(select_threshold(sh_m, sh_n), ev_m, ev_n);
    sr.oracle = mode_from(select_threshold(ev_m, ev_n), ev_m, ev_n);
    rep.strategies.push_back(sr);
  }
  return rep;
}

AuditArtifacts train_and_audit(const PreparedData& d, const ExperimentConfig& cfg,
                               std::uint64_t seed) {
  const TrainConfig tc = make_train_config(cfg, d, seed);
  AuditArtifacts art;
  art.model = train(d.model_train, tc, &art.log);
  RngStream audit_rng = RngStream(seed).child(5);
  art.report = run_audit(art.model, cfg.model.method == TrainMethod::kIbpVerified, d, cfg.audit,
                         audit_rng);
  return art;
}

std::vector<EpsCurvePoint> sweep_attack_epsilon(const Model& m, const PreparedData& d,
                                                const std::vector<double>& grid,
                                                const AuditSpec& audit, RngStream& rng) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty epsilon grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0) throw std::invalid_argument("sweep: budgets must be >= 0");
    if (i > 0 && grid[i] < grid[i - 1])
      throw std::invalid_argument("sweep: epsilon grid must be sorted ascending");
  }
  std::vector<EpsCurvePoint> out;
  out.reserve(grid.size());
  for (double eps : grid) {
    AuditSpec a = audit;
    a.epsilon = eps;
    const AttackConfig atk = resolve_audit_attack(a);
    const PerturbationConstraint c = audit_constraint(d, eps);
    const StrategyLogits sl =
        collect_strategy_logits(m, StrategyKind::kAdversarial, c, atk, d, rng);
    const std::vector<double> ev_m =
        confidences_from(sl.train, d.split.train.examples, audit.temperature);
    const std::vector<double> ev_n =
        confidences_from(sl.test, d.split.test.examples, audit.temperature);
    const std::vector<double> sh_m =
        confidences_from(sl.shadow_train, d.split.shadow_train.examples, audit.temperature);
    const std::vector<double> sh_n =
        confidences_from(sl.shadow_test, d.split.shadow_test.examples, audit.temperature);
    EpsCurvePoint pt;
    pt.epsilon = eps;
    pt.shadow_accuracy =
        inference_accuracy_from_confidences(ev_m, ev_n, select_threshold(sh_m, sh_n).tau);
    pt.oracle_accuracy =
        inference_accuracy_from_confidences(ev_m, ev_n, select_threshold(ev_m, ev_n).tau);
    out.push_back(pt);
  }
  return out;
}

std::vector<TempCurve> sweep_temperature(const Model& m, bool verified_applicable,
                                         const PreparedData& d, const std::vector<double>& grid,
                                         const AuditSpec& audit, RngStream& rng) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty temperature grid");
  for (double t : grid)
    if (!(t > 0.0)) throw std::invalid_argument("sweep: temperatures must be > 0");
  const AttackConfig atk = resolve_audit_attack(audit);
  const PerturbationConstraint c = audit_constraint(d, audit.epsilon);
  std::vector<TempCurve> curves;
  for (StrategyKind kind : audit.strategies) {
    if (kind == StrategyKind::kVerified && !verified_applicable) continue;
    const StrategyLogits sl = collect_strategy_logits(m, kind, c, atk, d, rng);
    // The scaled confidence is monotone in the logits for every T, so the
    // attack runs once and only the readout changes across the grid.
    const double tau_fixed =
        select_threshold(confidences_from(sl.shadow_train, d.split.shadow_train.examples, 1.0),
                         confidences_from(sl.shadow_test, d.split.shadow_test.examples, 1.0))
            .tau;
    TempCurve curve;
    curve.kind = kind;
    for (double t : grid) {
      const std::vector<double> ev_m = confidences_from(sl.train, d.split.train.examples, t);
      const std::vector<double> ev_n = confidences_from(sl.test, d.split.test.examples, t);
      const std::vector<double> sh_m =
          confidences_from(sl.shadow_train, d.split.shadow_train.examples, t);
      const std::vector<double> sh_n =
          confidences_from(sl.shadow_test, d.split.shadow_test.examples, t);
      TempCurvePoint pt;
      pt.temperature = t;
      pt.oracle_refit =
          inference_accuracy_from_confidences(ev_m, ev_n, select_threshold(ev_m, ev_n).tau);
      pt.shadow_refit =
          inference_accuracy_from_confidences(ev_m, ev_n, select_threshold(sh_m, sh_n).tau);
      pt.fixed_tau = inference_accuracy_from_confidences(ev_m, ev_n, tau_fixed);
      curve.points.push_back(pt);
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::vector<CapacityRow> sweep_capacity(const PreparedData& d, const ExperimentConfig& cfg,
                                        std::uint64_t seed) {
  const std::vector<double>& scales = cfg.sweeps.capacity_scales;
  if (scales.empty()) throw std::invalid_argument("sweep: empty capacity grid");
  for (double s : scales)
    if (!(s >= 1.0)) throw std::invalid_argument("sweep: capacity scales must be >= 1");
  std::vector<CapacityRow> rows;
  rows.reserve(scales.size());
  for (double scale : scales) {
    TrainConfig tc = make_train_config(cfg, d, seed);
    for (int& h : tc.hidden) h = static_cast<int>(std::llround(h * scale));
    const Model m = train(d.model_train, tc);
    CapacityRow row;
    row.scale = scale;
    row.hidden = tc.hidden;
    AuditSpec a = cfg.audit;
    a.epsilon = tc.constraint.epsilon;  // robustness is measured at the training budget
    const AttackConfig atk = resolve_audit_attack(a);
    const PerturbationConstraint c = audit_constraint(d, tc.constraint.epsilon);
    {
      RngStream r = RngStream(seed).child(90);
      row.adv_train_accuracy = adv_accuracy(m, d.split.train, c, atk, r);
    }
    const RngStream root(seed);
    const StrategyLogits sl = collect_strategy_logits(m, StrategyKind::kBenign, c, atk, d, root);
    const std::vector<double> ev_m =
        confidences_from(sl.train, d.split.train.examples, cfg.audit.temperature);
    const std::vector<double> ev_n =
        confidences_from(sl.test, d.split.test.examples, cfg.audit.temperature);
    const std::vector<double> sh_m =
        confidences_from(sl.shadow_train, d.split.shadow_train.examples, cfg.audit.temperature);
    const std::vector<double> sh_n =
        confidences_from(sl.shadow_test, d.split.shadow_test.examples, cfg.audit.temperature);
    row.benign_shadow_accuracy =
        inference_accuracy_from_confidences(ev_m, ev_n, select_threshold(sh_m, sh_n).tau);
    row.benign_oracle_accuracy =
        inference_accuracy_from_confidences(ev_m, ev_n, select_threshold(ev_m, ev_n).tau);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<BudgetRow> sweep_budget(const PreparedData& d, const ExperimentConfig& cfg,
                                    std::uint64_t seed) {
  const std::vector<double>& grid = cfg.sweeps.train_epsilons;
  if (grid.empty()) throw std::invalid_argument("sweep: empty budget grid");
  for (double e : grid)
    if (e < 0.0) throw std::invalid_argument("sweep: budgets must be >= 0");
  std::vector<BudgetRow> rows;
  rows.reserve(grid.size());
  for (double eps : grid) {
    TrainConfig tc = make_train_config(cfg, d, seed);
    tc.constraint.epsilon = eps;
    const Model m = train(d.model_train, tc);
    AuditSpec a = cfg.audit;
    a.epsilon = eps;  // each model is audited at its own budget
    RngStream rng = RngStream(seed).child(5);
    BudgetRow row;
    row.epsilon = eps;
    row.report = run_audit(m, cfg.model.method == TrainMethod::kIbpVerified, d, a, rng);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<RatioRow> sweep_ratio(const PreparedData& d, const ExperimentConfig& cfg,
                                  std::uint64_t seed) {
  const std::vector<double>& grid = cfg.sweeps.ratios;
  if (grid.empty()) throw std::invalid_argument("sweep: empty ratio grid");
  for (double r : grid)
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("sweep: ratios must be in [0, 1]");
  if (cfg.model.method != TrainMethod::kPgdAdv)
    throw std::invalid_argument("sweep: the ratio sweep needs method pgd-adv");
  std::vector<RatioRow> rows;
  rows.reserve(grid.size());
  for (double ratio : grid) {
    TrainConfig tc = make_train_config(cfg, d, seed);
    tc.adv_train_ratio = ratio;
    const Model m = train(d.model_train, tc);
    RngStream rng = RngStream(seed).child(5);
    RatioRow row;
    row.ratio = ratio;
    row.report = run_audit(m, false, d, cfg.audit, rng);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::vector<std::int64_t>> default_sensitivity_groups(const PreparedData& d,
                                                                  int count) {
  if (count < 1) throw std::invalid_argument("sensitivity: count must be >= 1");
  std::vector<std::vector<std::int64_t>> per_class(d.full.num_classes);
  for (const Example& z : d.split.train.examples) {
    if (z.y < 0 || z.y >= d.full.num_classes)
      throw std::invalid_argument("sensitivity: label out of range");
    per_class[z.y].push_back(z.id);
  }
  for (int c = 0; c < d.full.num_classes; ++c)
    if (static_cast<int>(per_class[c].size()) < count)
      throw std::invalid_argument("sensitivity: class " + std::to_string(c) +
                                  " has fewer than " + std::to_string(count) +
                                  " train examples");
  std::vector<std::vector<std::int64_t>> groups(count);
  for (int g = 0; g < count; ++g) {
    groups[g].reserve(per_class.size());
    for (const std::vector<std::int64_t>& ids : per_class) groups[g].push_back(ids[g]);
  }
  return groups;
}

std::vector<SensitivityPoint> sensitivity_analysis(
    const PreparedData& d, const ExperimentConfig& cfg,
    const std::vector<std::vector<std::int64_t>>& groups, std::uint64_t seed) {
  if (groups.empty()) throw std::invalid_argument("sensitivity: no groups");
  std::unordered_map<std::int64_t, const Example*> by_id;
  for (const Example& z : d.split.train.examples) by_id[z.id] = &z;
  std::set<std::int64_t> seen;
  for (const std::vector<std::int64_t>& g : groups) {
    if (g.empty()) throw std::invalid_argument("sensitivity: empty group");
    for (std::int64_t id : g) {
      if (by_id.find(id) == by_id.end())
        throw std::invalid_argument("sensitivity: id " + std::to_string(id) +
                                    " is not in the train split");
      if (!seen.insert(id).second)
        throw std::invalid_argument("sensitivity: id " + std::to_string(id) +
                                    " appears in more than one group");
    }
  }
  const TrainConfig tc = make_train_config(cfg, d, seed);
  const Model base = train(d.model_train, tc);
  // Confidence is read under the audit's threat model: at the audited attack
  // point when audit ε > 0, and at the input itself when audit ε = 0.
  ThresholdStrategy probe;
  probe.kind = StrategyKind::kAdversarial;
  probe.attack = resolve_audit_attack(cfg.audit);
  probe.constraint = audit_constraint(d, cfg.audit.epsilon);
  RngStream rng = RngStream(seed).child(6);
  std::vector<SensitivityPoint> pts;
  for (const std::vector<std::int64_t>& g : groups) {
    const LabeledDataset reduced = without_ids(d.model_train, g);
    const Model retrained = train(reduced, tc);
    for (std::int64_t id : g) {
      const Example& z = *by_id.at(id);
      SensitivityPoint pt;
      pt.id = id;
      pt.label = z.y;
      pt.confidence_full = strategy_confidence(base, z, probe, rng);
      pt.confidence_retrained = strategy_confidence(retrained, z, probe, rng);
      pt.sensitivity = std::abs(pt.confidence_full - pt.confidence_retrained);
      pts.push_back(pt);
    }
  }
  std::sort(pts.begin(), pts.end(), [](const SensitivityPoint& a, const SensitivityPoint& b) {
    if (a.sensitivity != b.sensitivity) return a.sensitivity < b.sensitivity;
    return a.id < b.id;
  });
  return pts;
}

void run_command(const std::string& command, const ExperimentConfig& cfg,
                 const std::string& out_dir) {
  static const char* kCommands[] = {"audit",        "sweep-eps",   "sweep-temp",
                                    "sweep-capacity", "sweep-budget", "sweep-ratio",
                                    "sensitivity",  "histogram"};
  bool known = false;
  for (const char* c : kCommands) known = known || command == c;
  if (!known) throw std::invalid_argument("unknown command '" + command + "'");

  // Anything a subcommand needs from the config is checked before data prep
  // or training starts.
  if (command == "sweep-eps" && cfg.sweeps.attack_epsilons.empty())
    throw ConfigError("sweep-eps needs a non-empty sweeps.attack_epsilons list");
  if (command == "sweep-temp" && cfg.sweeps.temperatures.empty())
    throw ConfigError("sweep-temp needs a non-empty sweeps.temperatures list");
  if (command == "sweep-capacity" && cfg.sweeps.capacity_scales.empty())
    throw ConfigError("sweep-capacity needs a non-empty sweeps.capacity_scales list");
  if (command == "sweep-budget" && cfg.sweeps.train_epsilons.empty())
    throw ConfigError("sweep-budget needs a non-empty sweeps.train_epsilons list");
  if (command == "sweep-ratio") {
    if (cfg.sweeps.ratios.empty())
      throw ConfigError("sweep-ratio needs a non-empty sweeps.ratios list");
    if (cfg.model.method != TrainMethod::kPgdAdv)
      throw ConfigError("sweep-ratio needs model.method \"pgd-adv\"");
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "'");
  const fs::path dir(out_dir);

  const PreparedData d = prepare_data(cfg);
  const std::string base = sanitize_name(cfg.name);
  const bool verified_applicable = cfg.model.method == TrainMethod::kIbpVerified;

  for (std::uint64_t seed : cfg.seeds) {
    const std::string tag = base + "_seed" + std::to_string(seed);
    if (command == "audit") {
      const AuditArtifacts art = train_and_audit(d, cfg, seed);
      write_json_file(dir / ("report_" + tag + ".json"),
                      report_file_json(cfg, seed, d, art.report));
      save_model(art.model, (dir / ("model_" + tag + ".json")).string());
      write_metrics_csv(art.log, (dir / ("train_metrics_" + tag + ".csv")).string());
    } else if (command == "sweep-eps") {
      const TrainConfig tc = make_train_config(cfg, d, seed);
      const Model m = train(d.model_train, tc);
      RngStream rng = RngStream(seed).child(5);
      const std::vector<EpsCurvePoint> curve =
          sweep_attack_epsilon(m, d, cfg.sweeps.attack_epsilons, cfg.audit, rng);
      write_eps_curve_csv(dir / ("sweep_eps_" + tag + ".csv"), curve);
    } else if (command == "sweep-temp") {
      const TrainConfig tc = make_train_config(cfg, d, seed);
      const Model m = train(d.model_train, tc);
      RngStream rng = RngStream(seed).child(5);
      const std::vector<TempCurve> curves =
          sweep_temperature(m, verified_applicable, d, cfg.sweeps.temperatures, cfg.audit, rng);
      write_temp_curves_csv(dir / ("sweep_temp_" + tag + ".csv"), cfg.sweeps.temperatures,
                            curves);
    } else if (command == "sweep-capacity") {
      const std::vector<CapacityRow> rows = sweep_capacity(d, cfg, seed);
      write_capacity_csv(dir / ("sweep_capacity_" + tag + ".csv"), rows);
    } else if (command == "sweep-budget") {
      const std::vector<BudgetRow> rows = sweep_budget(d, cfg, seed);
      std::vector<double> keys;
      std::vector<const MembershipReport*> reps;
      ordered_json jrows = ordered_json::array();
      for (const BudgetRow& r : rows) {
        keys.push_back(r.epsilon);
        reps.push_back(&r.report);
        ordered_json jr;
        jr["epsilon"] = r.epsilon;
        jr["report"] = report_json(r.report);
        jrows.push_back(jr);
      }
      write_report_table_csv(dir / ("sweep_budget_" + tag + ".csv"), "epsilon", keys, reps);
      ordered_json j;
      j["schema"] = "robustleak-budget/1";
      j["name"] = cfg.name;
      j["seed"] = seed;
      j["rows"] = jrows;
      write_json_file(dir / ("sweep_budget_" + tag + ".json"), j);
    } else if (command == "sweep-ratio") {
      const std::vector<RatioRow> rows = sweep_ratio(d, cfg, seed);
      std::vector<double> keys;
      std::vector<const MembershipReport*> reps;
      ordered_json jrows = ordered_json::array();
      for (const RatioRow& r : rows) {
        keys.push_back(r.ratio);
        reps.push_back(&r.report);
        ordered_json jr;
        jr["ratio"] = r.ratio;
        jr["report"] = report_json(r.report);
        jrows.push_back(jr);
      }
      write_report_table_csv(dir / ("sweep_ratio_" + tag + ".csv"), "ratio", keys, reps);
      ordered_json j;
      j["schema"] = "robustleak-ratio/1";
      j["name"] = cfg.name;
      j["seed"] = seed;
      j["rows"] = jrows;
      write_json_file(dir / ("sweep_ratio_" + tag + ".json"), j);
    } else if (command == "sensitivity") {
      const std::vector<std::vector<std::int64_t>> groups =
          cfg.sensitivity_groups.empty() ? default_sensitivity_groups(d, 3)
                                         : cfg.sensitivity_groups;
      const std::vector<SensitivityPoint> pts = sensitivity_analysis(d, cfg, groups, seed);
      write_sensitivity_csv(dir / ("sensitivity_" + tag + ".csv"), pts);
    } else {  // histogram
      const TrainConfig tc = make_train_config(cfg, d, seed);
      const Model m = train(d.model_train, tc);
      AuditSpec a = cfg.audit;
      a.epsilon = cfg.histogram.epsilon.value_or(cfg.audit.epsilon);
      const AttackConfig atk = resolve_audit_attack(a);
      const PerturbationConstraint c = audit_constraint(d, a.epsilon);
      const bool partitioned = cfg.histogram.partition == HistogramPartition::kSecureInsecure;
      {
        RngStream r = RngStream(seed).child(7);
        const std::vector<HistogramRow> rows = loss_histogram(
            m, d.split.train.examples, cfg.histogram.bins, cfg.histogram.partition, c, atk, r);
        write_histogram_csv(dir / ("histogram_train_" + tag + ".csv"), rows, partitioned);
      }
      {
        RngStream r = RngStream(seed).child(8);
        const std::vector<HistogramRow> rows = loss_histogram(
            m, d.split.test.examples, cfg.histogram.bins, cfg.histogram.partition, c, atk, r);
        write_histogram_csv(dir / ("histogram_test_" + tag + ".csv"), rows, partitioned);
      }
    }
  }
}

}  // namespace robustleak
